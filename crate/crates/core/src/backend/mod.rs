//! The simulated grid back end: VO membership, the workload manager, sandbox
//! archives, and a MyProxy-style credential store.

pub mod clock;
pub mod myproxy;
pub mod sandbox;
pub mod status;
pub mod voms;
pub mod wms;

pub use clock::{Clock, ManualClock, SystemClock};
pub use myproxy::{MyProxyError, MyProxyLink, MyProxySim, Retrieved};
pub use sandbox::{
    check_relative_path, collect_dir, compress_sandbox, decompress_sandbox, unpack_into, SandboxError,
    SandboxFile, MAX_SANDBOX_BYTES,
};
pub use status::{can_transition, check_history, HistoryError, JobStatus, StatusChange};
pub use voms::{AttributeAssertion, VoRegistry, Voms, VomsError, ASSERTION_VALIDITY};
pub use wms::{
    JobEventSink, JobSnapshot, RenewalRegistration, SubmitOutcome, SubmitRequest, Timetable, TimetableEntry, Wms,
    WmsConfig, WmsError, WmsMode,
};
