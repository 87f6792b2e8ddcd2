//! Std-side tooling around `dimt-core`: corpus files, checkpoints,
//! experiment specs, the training/evaluation pipelines and charts.

pub mod checkpoint;
pub mod io;
pub mod plot;
pub mod runner;
pub mod spec;

/// Invalid command-line usage; maps to exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NON_FINITE: i32 = 3;

/// Exit code for an error raised anywhere in the pipeline.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(dimt_core::Error::NonFinite(_)) = cause.downcast_ref::<dimt_core::Error>() {
            return EXIT_NON_FINITE;
        }
    }
    EXIT_DATA
}
