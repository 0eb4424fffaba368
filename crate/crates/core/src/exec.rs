//! Execution strategy. Data-parallel loops in the library go through
//! `par_map_indexed`, which uses rayon when the `parallel` feature is on and
//! degrades to a plain loop otherwise. Outputs are ordered by index either
//! way, so the two builds produce bit-identical results.

/// Maps `f` over `0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn par_map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    seq_map_indexed(n, f)
}

/// Sequential reference path, available in every build. Benches and
/// equivalence tests compare this against `par_map_indexed`.
pub fn seq_map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Caps the rayon worker pool. Call once, early; later calls are ignored by
/// rayon and by the no-op fallback. `0` keeps the default (one per core).
pub fn configure_threads(n: usize) {
    #[cfg(feature = "parallel")]
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

/// True when this build runs loops through rayon.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
