//! Data-parallel kernels with sequential twins.
//!
//! The planner's hot loops (table construction, Bellman sweeps, sup-norm
//! reductions) are embarrassingly parallel across state indices. Each kernel
//! here exists in a `_seq` and a `_par` variant with identical signatures
//! and bit-identical outputs; the unsuffixed name dispatches on
//! [`ExecMode::Auto`], which resolves to the parallel variant when the
//! `parallel` feature is enabled and the sequential one otherwise.
//!
//! Bit-identity holds because every kernel writes disjoint output slots
//! from a pure per-index function, and the only reduction is `max`, which
//! is associative and exact in floating point.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Kernel execution strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Parallel when the `parallel` feature is on, sequential otherwise.
    #[default]
    Auto,
    Seq,
    /// Forced parallel; falls back to sequential without the feature.
    Par,
}

impl ExecMode {
    fn parallel(self) -> bool {
        match self {
            ExecMode::Seq => false,
            ExecMode::Par => true,
            ExecMode::Auto => cfg!(feature = "parallel"),
        }
    }
}

/// `(0..n).map(f)` collected in index order.
pub fn map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if mode.parallel() {
        map_indexed_par(n, f)
    } else {
        map_indexed_seq(n, f)
    }
}

pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_indexed_par<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed_par<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(n, f)
}

/// Fills two same-length output slices from a per-index pair function.
///
/// This is the Bellman-sweep shape: one pass writes the swept values and
/// the greedy policy without allocating.
pub fn fill_pair<A, B, F>(mode: ExecMode, a: &mut [A], b: &mut [B], f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize) -> (A, B) + Sync + Send,
{
    assert_eq!(a.len(), b.len(), "paired outputs must have equal length");
    if mode.parallel() {
        fill_pair_par(a, b, f)
    } else {
        fill_pair_seq(a, b, f)
    }
}

pub fn fill_pair_seq<A, B, F>(a: &mut [A], b: &mut [B], f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize) -> (A, B) + Sync + Send,
{
    for (i, (x, y)) in a.iter_mut().zip(b.iter_mut()).enumerate() {
        let (va, vb) = f(i);
        *x = va;
        *y = vb;
    }
}

#[cfg(feature = "parallel")]
pub fn fill_pair_par<A, B, F>(a: &mut [A], b: &mut [B], f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize) -> (A, B) + Sync + Send,
{
    a.par_iter_mut()
        .zip_eq(b.par_iter_mut())
        .enumerate()
        .for_each(|(i, (x, y))| {
            let (va, vb) = f(i);
            *x = va;
            *y = vb;
        });
}

#[cfg(not(feature = "parallel"))]
pub fn fill_pair_par<A, B, F>(a: &mut [A], b: &mut [B], f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize) -> (A, B) + Sync + Send,
{
    fill_pair_seq(a, b, f);
}

/// Sup-norm distance `max_i |a[i] − b[i]|`.
pub fn sup_abs_diff(mode: ExecMode, a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "sup-norm inputs must have equal length");
    if mode.parallel() {
        sup_abs_diff_par(a, b)
    } else {
        sup_abs_diff_seq(a, b)
    }
}

pub fn sup_abs_diff_seq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(feature = "parallel")]
pub fn sup_abs_diff_par(a: &[f64], b: &[f64]) -> f64 {
    a.par_iter()
        .zip_eq(b.par_iter())
        .map(|(x, y)| (x - y).abs())
        .reduce(|| 0.0, f64::max)
}

#[cfg(not(feature = "parallel"))]
pub fn sup_abs_diff_par(a: &[f64], b: &[f64]) -> f64 {
    sup_abs_diff_seq(a, b)
}
