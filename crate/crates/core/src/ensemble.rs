//! Replicate-parallel execution with order-independent results.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Seed of replicate `index`.
pub fn replicate_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}

/// Runs `job(seed)` for `replicates` consecutive seeds starting at
/// `base_seed` and returns the results in replicate order. `workers = None`
/// uses the ambient rayon pool.
pub fn run_replicates<T, F>(replicates: usize, base_seed: u64, workers: Option<usize>, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let work = || -> Result<Vec<T>> {
        (0..replicates)
            .into_par_iter()
            .map(|i| job(replicate_seed(base_seed, i)))
            .collect()
    };
    match workers {
        None => work(),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
    }
}
