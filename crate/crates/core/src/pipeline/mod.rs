//! Clip ingestion, the colorize / train / eval drivers and run configuration.

pub mod clip;
pub mod colorize;
pub mod config;
pub mod eval;
pub mod train;

pub use clip::{load_clip, Clip};
pub use colorize::{Colorizer, FrameResult, Sources};
pub use config::RunConfig;
pub use eval::evaluate_dirs;
pub use train::{train, Trainer};

/// Environment variable capping worker threads; `1` forces single-threaded
/// execution.
pub const THREADS_ENV: &str = "BISTREAM_THREADS";

/// Worker cap from `BISTREAM_THREADS`, if set to a positive integer.
pub fn thread_limit() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Size the global worker pool from `BISTREAM_THREADS`. Call once, before any
/// parallel work.
pub fn configure_threads() -> crate::Result<()> {
    if let Some(n) = thread_limit() {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| crate::Error::Config(format!("{THREADS_ENV}: {e}")))?;
    }
    Ok(())
}
