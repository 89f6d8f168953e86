//! Data-parallel map helpers. With the `parallel` feature (default) the
//! `map_*` functions fan out over rayon; without it they are the sequential
//! loops below. The `*_seq` variants are always sequential and always
//! compiled, so benches can compare the two and tests can assert the
//! parallel path is bit-identical to the sequential one.
//!
//! Results always come back in input order. Any reduction over them must be
//! done by the caller as a sequential fold, which is what keeps the whole
//! pipeline deterministic under any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, results in index order.
#[cfg(feature = "parallel")]
pub fn map_range<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Sequential twin of [`map_range`], present in every build.
pub fn map_range_seq<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Map `f` over a slice, results in input order.
#[cfg(feature = "parallel")]
pub fn map_slice<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Sequential twin of [`map_slice`], present in every build.
pub fn map_slice_seq<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}
