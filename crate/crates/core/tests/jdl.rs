use std::path::PathBuf;

use gridgate_core::jdl::*;
use proptest::prelude::*;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/jdl")
}

fn fixtures(prefix: &str) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "jdl"))
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with(prefix))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn well_formed() -> Vec<(String, Vec<u8>)> {
    fixtures("").into_iter().filter(|(n, _)| !n.starts_with("malformed")).collect()
}

#[test]
fn corpus_round_trips() {
    let corpus = well_formed();
    assert!(corpus.len() >= 6);
    for (name, bytes) in corpus {
        let jd = parse_jdl_bytes(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        let text = serialize_jdl(&jd);
        let again = parse_jdl(&text).unwrap_or_else(|e| panic!("{name} reserialized: {e}\n{text}"));
        assert_eq!(again, jd, "{name}");
        assert_eq!(serialize_jdl(&again), text, "{name}");
        assert_eq!(text.lines().count(), jd.len(), "{name}: one statement per line");
        let errors: Vec<_> = validate_jdl(&jd).into_iter().filter(JdlIssue::is_error).collect();
        assert!(errors.is_empty(), "{name}: {errors:?}");
    }
}

#[test]
fn malformed_corpus_reports_positions() {
    let expected = [
        ("malformed_bareword.jdl", 1, 14),
        ("malformed_bracket.jdl", 3, 1),
        ("malformed_mixed_list.jdl", 2, 22),
        ("malformed_semicolon.jdl", 2, 1),
        ("malformed_unterminated.jdl", 1, 24),
    ];
    let corpus = fixtures("malformed");
    assert_eq!(corpus.len(), expected.len());
    for ((name, bytes), (want_name, line, column)) in corpus.iter().zip(expected) {
        assert_eq!(name, want_name);
        match parse_jdl_bytes(bytes) {
            Err(JdlError::Syntax { line: l, column: c, .. }) => {
                assert_eq!((l, c), (line, column), "{name}")
            }
            other => panic!("{name}: expected a syntax error, got {other:?}"),
        }
    }
}

#[test]
fn sandbox_fixture_contents() {
    let jd = parse_jdl_bytes(&std::fs::read(fixture_dir().join("sandbox.jdl")).unwrap()).unwrap();
    assert_eq!(jd.executable(), Some("analyse.sh"));
    assert_eq!(jd.str_attr("Arguments"), Some("--input data.csv --mode \"fast\""));
    assert_eq!(jd.string_list("InputSandbox"), ["analyse.sh", "data.csv"]);
    assert_eq!(jd.string_list("OutputSandbox").len(), 4);
    assert!(matches!(jd.get("Requirements"), Some(JdlValue::Expr(e)) if e.ends_with("> 720")));
    assert_eq!(jd.get("RetryCount").and_then(JdlValue::as_integer), Some(3));
}

#[test]
fn escapes_fixture_contents() {
    let jd = parse_jdl_bytes(&std::fs::read(fixture_dir().join("escapes.jdl")).unwrap()).unwrap();
    assert_eq!(jd.str_attr("Arguments"), Some(r#"-c "echo \"quoted\" \\ done""#));
    assert_eq!(jd.str_attr("StdOutput"), Some("résultat.txt"));
    assert_eq!(jd.get("Enabled"), Some(&JdlValue::Bool(true)));
    let issues = validate_jdl(&jd);
    assert_eq!(issues.len(), 1);
    assert_eq!(issues[0].code, IssueCode::UnknownAttribute);
}

/// Hand-written expectations: the string attributes that change per member.
/// Everything not listed must come through unchanged.
fn check_against_expectation(stem: &str) {
    let jd = parse_jdl_bytes(&std::fs::read(fixture_dir().join(format!("{stem}.jdl"))).unwrap()).unwrap();
    let expected: Vec<serde_json::Map<String, serde_json::Value>> = serde_json::from_slice(
        &std::fs::read(fixture_dir().join(format!("{stem}.expected.json"))).unwrap(),
    )
    .unwrap();
    let members = expand_parametric(&jd).unwrap();
    assert_eq!(members.len(), expected.len(), "{stem}");
    for (member, want) in members.iter().zip(&expected) {
        let names: Vec<_> = member.iter().map(|(n, _)| n.to_string()).collect();
        let original: Vec<_> = jd.iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, original, "{stem}: attribute set and order preserved");
        for (name, value) in member.iter() {
            match want.get(name) {
                Some(serde_json::Value::String(s)) => assert_eq!(value, &JdlValue::Str(s.clone()), "{stem} {name}"),
                Some(serde_json::Value::Array(items)) => {
                    let list = items.iter().map(|i| JdlValue::Str(i.as_str().unwrap().into())).collect();
                    assert_eq!(value, &JdlValue::List(list), "{stem} {name}");
                }
                Some(other) => panic!("unsupported expectation {other}"),
                None => assert_eq!(Some(value), jd.get(name), "{stem} {name} must be unchanged"),
            }
        }
        assert!(!serialize_jdl(member).contains(PARAM_TOKEN), "{stem}");
    }
}

#[test]
fn expansion_matches_hand_expansion() {
    let stems: Vec<_> = fixtures("parametric")
        .into_iter()
        .map(|(n, _)| n.trim_end_matches(".jdl").to_string())
        .collect();
    assert_eq!(stems.len(), 4);
    for stem in stems {
        check_against_expectation(&stem);
    }
}

#[test]
fn non_parametric_expands_to_itself() {
    let jd = parse_jdl_bytes(&std::fs::read(fixture_dir().join("sandbox.jdl")).unwrap()).unwrap();
    assert_eq!(expand_parametric(&jd).unwrap(), vec![jd]);
}

#[test]
fn quote_round_trip() {
    let jd = JobDescriptor::new().with("Arguments", JdlValue::Str("say \"hi\"\\".into()));
    let text = serialize_jdl(&jd);
    assert_eq!(text, "Arguments = \"say \\\"hi\\\"\\\\\";\n");
    assert_eq!(parse_jdl(&text).unwrap(), jd);
}

fn scalar() -> impl Strategy<Value = JdlValue> {
    prop_oneof![
        "\\PC{0,20}".prop_map(JdlValue::Str),
        "[\t\n\r\"\\\\a-z]{0,10}".prop_map(JdlValue::Str),
        any::<f64>().prop_filter("finite", |n| n.is_finite()).prop_map(JdlValue::Num),
        (-1_000_000i64..1_000_000).prop_map(|n| JdlValue::Num(n as f64)),
        any::<bool>().prop_map(JdlValue::Bool),
    ]
}

fn value() -> impl Strategy<Value = JdlValue> {
    prop_oneof![
        3 => scalar(),
        1 => proptest::collection::vec("\\PC{0,8}", 0..4)
            .prop_map(|v| JdlValue::List(v.into_iter().map(JdlValue::Str).collect())),
        1 => proptest::collection::vec(-100i64..100, 1..4)
            .prop_map(|v| JdlValue::List(v.into_iter().map(|n| JdlValue::Num(n as f64)).collect())),
        1 => proptest::collection::vec(any::<bool>(), 1..3)
            .prop_map(|v| JdlValue::List(v.into_iter().map(JdlValue::Bool).collect())),
    ]
}

fn name() -> impl Strategy<Value = String> {
    prop_oneof![
        proptest::sample::select(KNOWN_ATTRIBUTES.to_vec()).prop_map(str::to_string),
        "[A-Za-z_][A-Za-z0-9_]{0,12}",
    ]
    .prop_filter("expression attributes are generated separately", |n| {
        !EXPRESSION_ATTRIBUTES.iter().any(|e| e.eq_ignore_ascii_case(n))
    })
}

fn descriptor() -> impl Strategy<Value = JobDescriptor> {
    let expr = "[A-Za-z0-9_.><=&|()!+ -]{0,30}"
        .prop_map(|s| s.trim().to_string())
        .prop_filter("non-empty", |s| !s.is_empty());
    (
        proptest::collection::vec((name(), value()), 0..10),
        proptest::option::of(expr),
    )
        .prop_map(|(attrs, requirements)| {
            let mut jd = JobDescriptor::new();
            for (n, v) in attrs {
                jd.set(&n, v);
            }
            if let Some(r) = requirements {
                jd.set("Requirements", JdlValue::Expr(r));
            }
            jd
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, ..ProptestConfig::default() })]

    #[test]
    fn serialize_then_parse_is_identity(jd in descriptor()) {
        let text = serialize_jdl(&jd);
        let back = parse_jdl(&text).unwrap();
        prop_assert_eq!(&back, &jd);
        prop_assert_eq!(serialize_jdl(&back), text);
    }

    #[test]
    fn expansion_count_and_shape(
        n in 1i64..20,
        start in -50i64..50,
        step in prop_oneof![-5i64..0, 1i64..6],
        args in "[a-z _]{0,10}",
    ) {
        let jd = JobDescriptor::new()
            .with("Executable", JdlValue::Str("x".into()))
            .with("Arguments", JdlValue::Str(format!("{args}{PARAM_TOKEN}")))
            .with("Parameters", JdlValue::Num(n as f64))
            .with("ParameterStart", JdlValue::Num(start as f64))
            .with("ParameterStep", JdlValue::Num(step as f64));
        let members = expand_parametric(&jd).unwrap();
        prop_assert_eq!(members.len() as i64, n);
        for (i, m) in members.iter().enumerate() {
            prop_assert_eq!(m.len(), jd.len());
            let want = format!("{args}{}", start + i as i64 * step);
            prop_assert_eq!(m.str_attr("Arguments"), Some(want.as_str()));
        }
    }

    #[test]
    fn parser_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = parse_jdl_bytes(&bytes);
    }

    #[test]
    fn parser_is_total_on_jdl_shaped_text(text in "[\\[\\]{}=;,\"\\\\#/ \nA-Za-z0-9._-]{0,120}") {
        let _ = parse_jdl(&text);
    }
}
