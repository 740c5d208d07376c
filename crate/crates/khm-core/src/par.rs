//! Thin layer over rayon so the crate also builds without threads (wasm).
//!
//! Reductions default to fixed order: partial results are collected by index
//! and summed left to right, which makes sums bit-reproducible for a given
//! input regardless of thread count.

use std::sync::atomic::{AtomicBool, Ordering};

static DETERMINISTIC: AtomicBool = AtomicBool::new(true);

pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::Relaxed);
}

pub fn deterministic() -> bool {
    DETERMINISTIC.load(Ordering::Relaxed)
}

/// Evaluate `f` on `0..n`, results in index order.
pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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

/// Sum of `K`-component partials over `0..n`.
pub fn sum<const K: usize, F>(n: usize, f: F) -> [f64; K]
where
    F: Fn(usize) -> [f64; K] + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !deterministic() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).reduce(
            || [0.0; K],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    }
    let parts = map(n, f);
    let mut acc = [0.0; K];
    for p in parts {
        for (x, y) in acc.iter_mut().zip(p) {
            *x += y;
        }
    }
    acc
}

pub fn sum_scalar<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    sum::<1, _>(n, |i| [f(i)])[0]
}
