//! Thread-pool executor and wall clock for the core round loop.

use std::time::Instant;

use grasspca_core::federation::{Clock, Executor};
use rayon::prelude::*;

use crate::error::CliError;

/// Runs the per-client jobs of a round on a dedicated rayon pool. Results are
/// collected in index order, so the schedule never reaches the output.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `threads = 0` uses one thread per available core.
    pub fn new(threads: usize) -> Result<Self, CliError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| {
                CliError::io(
                    std::path::Path::new("<thread pool>"),
                    std::io::Error::other(e.to_string()),
                )
            })?;
        Ok(RayonExecutor { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for RayonExecutor {
    fn map<T: Send, F: Fn(usize) -> T + Sync + Send>(&self, n: usize, f: F) -> Vec<T> {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

/// Seconds since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
