//! Job status vocabulary and the transition matrix.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobStatus {
    Submitted,
    Ready,
    Running,
    DoneOk,
    DoneFailed,
    Aborted,
    Cancelled,
    Cleared,
}

impl JobStatus {
    pub const ALL: [JobStatus; 8] = [
        JobStatus::Submitted,
        JobStatus::Ready,
        JobStatus::Running,
        JobStatus::DoneOk,
        JobStatus::DoneFailed,
        JobStatus::Aborted,
        JobStatus::Cancelled,
        JobStatus::Cleared,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Submitted => "SUBMITTED",
            JobStatus::Ready => "READY",
            JobStatus::Running => "RUNNING",
            JobStatus::DoneOk => "DONE_OK",
            JobStatus::DoneFailed => "DONE_FAILED",
            JobStatus::Aborted => "ABORTED",
            JobStatus::Cancelled => "CANCELLED",
            JobStatus::Cleared => "CLEARED",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.as_str().eq_ignore_ascii_case(s))
    }

    /// Still queued or executing.
    pub fn is_active(self) -> bool {
        matches!(self, JobStatus::Submitted | JobStatus::Ready | JobStatus::Running)
    }

    /// Finished one way or another, and not yet cleared.
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            JobStatus::DoneOk | JobStatus::DoneFailed | JobStatus::Aborted | JobStatus::Cancelled
        )
    }

    /// Ran to completion; the only states with output.
    pub fn is_done(self) -> bool {
        matches!(self, JobStatus::DoneOk | JobStatus::DoneFailed)
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn can_transition(from: JobStatus, to: JobStatus) -> bool {
    use JobStatus::*;
    match (from, to) {
        (Submitted, Ready) | (Ready, Running) | (Running, DoneOk) | (Running, DoneFailed) => true,
        (f, Aborted | Cancelled) => f.is_active(),
        (f, Cleared) => f.is_terminal(),
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusChange {
    pub status: JobStatus,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HistoryError {
    #[error("history is empty")]
    Empty,
    #[error("history starts at {0}, not SUBMITTED")]
    BadStart(JobStatus),
    #[error("illegal transition {from} -> {to} at entry {index}")]
    IllegalTransition {
        from: JobStatus,
        to: JobStatus,
        index: usize,
    },
    #[error("timestamps go backwards at entry {0}")]
    TimeReversal(usize),
}

/// Checks a whole history against the transition matrix.
pub fn check_history(history: &[StatusChange]) -> Result<(), HistoryError> {
    let first = history.first().ok_or(HistoryError::Empty)?;
    if first.status != JobStatus::Submitted {
        return Err(HistoryError::BadStart(first.status));
    }
    for (i, pair) in history.windows(2).enumerate() {
        if !can_transition(pair[0].status, pair[1].status) {
            return Err(HistoryError::IllegalTransition {
                from: pair[0].status,
                to: pair[1].status,
                index: i + 1,
            });
        }
        if pair[1].at < pair[0].at {
            return Err(HistoryError::TimeReversal(i + 1));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use JobStatus::*;

    #[test]
    fn matrix() {
        let legal: Vec<(JobStatus, JobStatus)> = JobStatus::ALL
            .iter()
            .flat_map(|&a| JobStatus::ALL.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| can_transition(a, b))
            .collect();
        let expected = [
            (Submitted, Ready),
            (Submitted, Aborted),
            (Submitted, Cancelled),
            (Ready, Running),
            (Ready, Aborted),
            (Ready, Cancelled),
            (Running, DoneOk),
            (Running, DoneFailed),
            (Running, Aborted),
            (Running, Cancelled),
            (DoneOk, Cleared),
            (DoneFailed, Cleared),
            (Aborted, Cleared),
            (Cancelled, Cleared),
        ];
        assert_eq!(legal, expected);
    }

    #[test]
    fn history_checks() {
        let t = Utc::now();
        let h = |s: &[JobStatus]| s.iter().map(|&status| StatusChange { status, at: t }).collect::<Vec<_>>();
        assert!(check_history(&h(&[Submitted, Ready, Running, DoneOk, Cleared])).is_ok());
        assert!(check_history(&h(&[Submitted, Cancelled, Cleared])).is_ok());
        assert_eq!(
            check_history(&h(&[Submitted, Running])),
            Err(HistoryError::IllegalTransition { from: Submitted, to: Running, index: 1 })
        );
        assert_eq!(check_history(&h(&[Ready])), Err(HistoryError::BadStart(Ready)));
        assert_eq!(check_history(&[]), Err(HistoryError::Empty));
        assert!(check_history(&h(&[Submitted, Cancelled, Cancelled])).is_err());
    }

    #[test]
    fn names_round_trip() {
        for s in JobStatus::ALL {
            assert_eq!(JobStatus::parse(s.as_str()), Some(s));
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
    }
}
