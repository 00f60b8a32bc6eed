//! Replica ensembles. Replica `i` always uses stream `i` of the ensemble seed,
//! and results come back in replica order whether or not they ran in parallel.

use crate::error::Result;

/// Runs `f(0), .., f(n - 1)` and returns the results in index order.
pub fn run_replicas<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// As [`run_replicas`], failing with the error of the lowest failing replica.
pub fn try_run_replicas<T, F>(n: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    run_replicas(n, f).into_iter().collect()
}
