//! Parallel trace batches.
//!
//! Trace `i` of a batch is seeded from `(master, stream, i)` alone, and
//! results are always handed back in trace-index order, so every reduction
//! is independent of the worker count.

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use thiserror::Error;

use crate::model::{Model, ParamVector};
use crate::monitor::{CompiledProperty, Monitor};
use crate::rng::trace_seed;
use crate::scalar::Real;
use crate::simulate::{simulate_with, SimError, TraceSummary, DEFAULT_MAX_STEPS};

/// Environment variable read when no worker count is given.
pub const WORKERS_ENV: &str = "CESMC_WORKERS";

/// Traces materialised at once by [`Runner::fold`].
pub const CHUNK: usize = 1 << 14;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{WORKERS_ENV}={0:?} is not a positive integer")]
    BadWorkerEnv(String),
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub struct Runner {
    pool: ThreadPool,
    max_steps: usize,
}

impl Runner {
    /// `workers = None` reads [`WORKERS_ENV`], falling back to the number of
    /// available cores.
    pub fn new(workers: Option<usize>, max_steps: usize) -> Result<Self, RunnerError> {
        let workers = match workers {
            Some(w) => w.max(1),
            None => match std::env::var(WORKERS_ENV) {
                Ok(v) => match v.trim().parse::<usize>() {
                    Ok(w) if w >= 1 => w,
                    _ => return Err(RunnerError::BadWorkerEnv(v)),
                },
                Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
            },
        };
        let pool = ThreadPoolBuilder::new().num_threads(workers).build()?;
        Ok(Runner { pool, max_steps })
    }

    pub fn with_workers(workers: usize) -> Result<Self, RunnerError> {
        Self::new(Some(workers), DEFAULT_MAX_STEPS)
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// Simulates traces `start..start + n` of `stream`.
    #[allow(clippy::too_many_arguments)]
    pub fn run_range<T: Real>(
        &self,
        model: &Model,
        lambda: &ParamVector<T>,
        property: &CompiledProperty,
        master_seed: u64,
        stream: u64,
        start: usize,
        n: usize,
    ) -> Result<Vec<TraceSummary<T>>, SimError> {
        let max_steps = self.max_steps;
        self.pool.install(|| {
            (start..start + n)
                .into_par_iter()
                .map_init(
                    || Monitor::new(property),
                    |monitor, i| {
                        simulate_with(monitor, model, lambda, trace_seed(master_seed, stream, i as u64), max_steps)
                    },
                )
                .collect()
        })
    }

    /// Simulates `n` traces of `stream`.
    pub fn run<T: Real>(
        &self,
        model: &Model,
        lambda: &ParamVector<T>,
        property: &CompiledProperty,
        master_seed: u64,
        stream: u64,
        n: usize,
    ) -> Result<Vec<TraceSummary<T>>, SimError> {
        self.run_range(model, lambda, property, master_seed, stream, 0, n)
    }

    /// Feeds `n` traces to `visit` in index order without holding more than
    /// [`CHUNK`] of them in memory.
    #[allow(clippy::too_many_arguments)]
    pub fn fold<T: Real>(
        &self,
        model: &Model,
        lambda: &ParamVector<T>,
        property: &CompiledProperty,
        master_seed: u64,
        stream: u64,
        n: usize,
        mut visit: impl FnMut(&TraceSummary<T>),
    ) -> Result<(), SimError> {
        let mut start = 0;
        while start < n {
            let len = CHUNK.min(n - start);
            for s in &self.run_range(model, lambda, property, master_seed, stream, start, len)? {
                visit(s);
            }
            start += len;
        }
        Ok(())
    }
}
