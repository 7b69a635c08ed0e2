//! Replicate-level execution: deterministic per-task RNG streams and an
//! order-preserving map that runs on rayon when the `parallel` feature is on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// RNG used everywhere in the crate.
pub type TaskRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `Parallel` only when the crate was built with rayon support.
    pub fn effective(self) -> Execution {
        if cfg!(feature = "parallel") {
            self
        } else {
            Execution::Sequential
        }
    }
}

/// Purpose tags so that different consumers of the same user seed never share
/// a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Data = 0x5eed_da7a,
    Gibbs = 0x61bb_5000,
    Bootstrap = 0xb007_57a9,
    Sbc = 0x5bc0_0000,
    Chains = 0xc4a1_0000,
}

/// Independent stream for task `index` of a seeded job. Streams are a pure
/// function of `(seed, domain, index)`, so results do not depend on which
/// worker runs which task.
pub fn task_rng(seed: u64, domain: Domain, index: u64) -> TaskRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (domain as u64).rotate_left(17));
    rng.set_stream(index);
    rng
}

/// Derive a child seed from a parent seed and an index, for APIs that take a
/// plain `u64` seed (e.g. one Gibbs run per simulation replicate).
pub fn child_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    use rand::RngCore;
    task_rng(seed, domain, index).next_u64()
}

/// `(0..n).map(f)` with results in index order, spread over the rayon pool
/// when `exec` is parallel.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec.effective() {
        Execution::Sequential => (0..n).map(f).collect(),
        Execution::Parallel => par_map(n, f),
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Size the global worker pool used by parallel execution. Only the first
/// call takes effect; without the `parallel` feature this does nothing.
pub fn init_thread_pool(threads: usize) -> crate::Result<()> {
    if threads == 0 {
        return Err(crate::Error::invalid("thread count must be positive"));
    }
    #[cfg(feature = "parallel")]
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::warn!("worker pool already configured: {e}");
    }
    Ok(())
}

/// Neumaier-compensated sum; replicate aggregates go through this so that the
/// result does not depend on accumulation order beyond rounding of the inputs.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn compensated_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    compensated_sum(values.iter().copied()) / values.len() as f64
}
