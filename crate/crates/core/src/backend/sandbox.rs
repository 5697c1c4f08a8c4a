//! Sandbox archives: deterministic gzip-compressed tar.
//!
//! Entries are sorted by path and carry mtime 0, mode 0644, and uid/gid 0,
//! so equal file sets always produce identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Component, Path};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use tar::{Archive, Builder, EntryType, Header};
use thiserror::Error;

/// Ceiling on the decompressed size of one archive.
pub const MAX_SANDBOX_BYTES: u64 = 512 * 1024 * 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SandboxError {
    #[error("path escapes the sandbox: {0:?}")]
    PathTraversal(String),
    #[error("malformed archive: {0}")]
    MalformedArchive(String),
    #[error("duplicate path {0:?}")]
    DuplicatePath(String),
    #[error("sandbox i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for SandboxError {
    fn from(e: std::io::Error) -> Self {
        SandboxError::Io(e.to_string())
    }
}

/// A relative path with no `..`, `.`, empty, or root components.
pub fn check_relative_path(path: &str) -> Result<(), SandboxError> {
    let bad = || SandboxError::PathTraversal(path.to_string());
    if path.is_empty() || path.starts_with('/') || path.contains('\0') {
        return Err(bad());
    }
    for part in path.split('/') {
        if part.is_empty() || part == "." || part == ".." {
            return Err(bad());
        }
    }
    // also catch platform-specific forms such as drive prefixes
    if Path::new(path).components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(bad());
    }
    Ok(())
}

pub type SandboxFile = (String, Vec<u8>);

pub fn compress_sandbox(files: &[SandboxFile]) -> Result<Vec<u8>, SandboxError> {
    let mut sorted: BTreeMap<&str, &[u8]> = BTreeMap::new();
    for (path, data) in files {
        check_relative_path(path)?;
        if sorted.insert(path.as_str(), data.as_slice()).is_some() {
            return Err(SandboxError::DuplicatePath(path.clone()));
        }
    }

    let gz = GzEncoder::new(Vec::new(), Compression::default());
    let mut builder = Builder::new(gz);
    builder.mode(tar::HeaderMode::Deterministic);
    for (path, data) in sorted {
        let mut header = Header::new_gnu();
        header.set_entry_type(EntryType::Regular);
        header.set_size(data.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_uid(0);
        header.set_gid(0);
        builder.append_data(&mut header, path, data)?;
    }
    let gz = builder.into_inner()?;
    Ok(gz.finish()?)
}

pub fn decompress_sandbox(archive: &[u8]) -> Result<Vec<SandboxFile>, SandboxError> {
    let malformed = |e: std::io::Error| SandboxError::MalformedArchive(e.to_string());
    let mut tar = Archive::new(GzDecoder::new(archive));
    let mut files: Vec<SandboxFile> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut total: u64 = 0;

    for entry in tar.entries().map_err(malformed)? {
        let mut entry = entry.map_err(malformed)?;
        let raw = entry.path_bytes().into_owned();
        let path = String::from_utf8(raw)
            .map_err(|_| SandboxError::MalformedArchive("entry name is not UTF-8".into()))?;
        // `tar -C dir .` writes "./name"; accept that one harmless prefix
        let mut path = path.as_str();
        while let Some(rest) = path.strip_prefix("./") {
            path = rest;
        }
        let path = path.to_string();
        let kind = entry.header().entry_type();
        if kind.is_dir() {
            let trimmed = path.trim_end_matches('/');
            if !trimmed.is_empty() && trimmed != "." {
                check_relative_path(trimmed)?;
            }
            continue;
        }
        check_relative_path(&path)?;
        if kind.is_symlink() || kind.is_hard_link() {
            return Err(SandboxError::PathTraversal(path));
        }
        if !matches!(kind, EntryType::Regular | EntryType::Continuous) {
            return Err(SandboxError::MalformedArchive(format!("unsupported entry type for {path:?}")));
        }
        total = total.saturating_add(entry.size());
        if total > MAX_SANDBOX_BYTES {
            return Err(SandboxError::MalformedArchive("archive exceeds size limit".into()));
        }
        let mut data = Vec::with_capacity(entry.size() as usize);
        entry.read_to_end(&mut data).map_err(malformed)?;
        if !seen.insert(path.clone()) {
            return Err(SandboxError::DuplicatePath(path));
        }
        files.push((path, data));
    }
    // A truncated gzip stream can still yield complete tar entries; insist on
    // reaching the end of the compressed data.
    let mut rest = tar.into_inner();
    std::io::copy(&mut rest, &mut std::io::sink()).map_err(malformed)?;
    Ok(files)
}

/// Writes the files under `root`, creating directories as needed.
pub fn unpack_into(root: &Path, files: &[SandboxFile]) -> Result<(), SandboxError> {
    for (path, data) in files {
        check_relative_path(path)?;
        let target = root.join(path);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::fs::File::create(&target)?;
        f.write_all(data)?;
    }
    Ok(())
}

/// Every regular file below `root`, as sandbox-relative paths. Symbolic
/// links are skipped, never followed.
pub fn collect_dir(root: &Path) -> Result<Vec<SandboxFile>, SandboxError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let entry = entry?;
            let kind = entry.file_type()?;
            let path = entry.path();
            if kind.is_symlink() {
                continue;
            }
            if kind.is_dir() {
                stack.push(path);
            } else if kind.is_file() {
                let rel = path
                    .strip_prefix(root)
                    .expect("walk stays under root")
                    .to_str()
                    .ok_or_else(|| SandboxError::MalformedArchive(format!("non UTF-8 file name {path:?}")))?
                    .to_string();
                out.push((rel, std::fs::read(&path)?));
            }
        }
    }
    out.sort();
    Ok(out)
}
