//! Worker-pool construction. Parallel sections always reduce in a fixed
//! order, so results are identical for any thread count.

use crate::error::{Error, Result};

/// Build a pool with the requested number of workers (>= 1).
pub fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Data(format!("thread pool: {e}")))
}

/// Worker count from the ACDMSR_THREADS environment variable, default 1.
pub fn threads_from_env() -> usize {
    std::env::var("ACDMSR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}
