//! Data-parallel helpers with a sequential fallback.
//!
//! `threads == 1` always runs on the calling thread. Any other value uses
//! rayon when the `parallel` feature is on (`0` = rayon's default pool size).
//! Results are collected in index order, so both paths return identical data.

/// Evaluates `f(0..n)` and collects results in order.
pub fn map_range<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads != 1 {
            use rayon::prelude::*;
            let run = || (0..n).into_par_iter().map(&f).collect();
            if threads == 0 {
                return run();
            }
            match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                Ok(pool) => return pool.install(run),
                Err(e) => log::warn!("falling back to sequential processing: {e}"),
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    (0..n).map(f).collect()
}

/// Whether `threads` would actually run in parallel in this build.
pub fn is_parallel(threads: usize) -> bool {
    cfg!(feature = "parallel") && threads != 1
}
