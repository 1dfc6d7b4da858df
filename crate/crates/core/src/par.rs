//! Reductions with a fixed summation order.
//!
//! Each row's partial result is computed in parallel and the partials are then
//! folded sequentially, so the floating-point result is the same for any pool
//! size.

use rayon::prelude::*;

pub(crate) fn ordered_sum<F>(n_rows: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let partials: Vec<f64> = (0..n_rows).into_par_iter().map(f).collect();
    partials.iter().sum()
}

/// Sum of `f(a_i, b_i)` over two equally sized slices, chunked by `row_len`.
pub(crate) fn ordered_zip_sum<F>(a: &[f64], b: &[f64], row_len: usize, f: F) -> f64
where
    F: Fn(f64, f64) -> f64 + Sync + Send,
{
    debug_assert_eq!(a.len(), b.len());
    let row_len = row_len.max(1);
    let partials: Vec<f64> = a
        .par_chunks(row_len)
        .zip(b.par_chunks(row_len))
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| f(x, y)).sum())
        .collect();
    partials.iter().sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64], row_len: usize) -> f64 {
    ordered_zip_sum(a, b, row_len, |x, y| x * y)
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64], row_len: usize) -> f64 {
    ordered_zip_sum(a, b, row_len, |x, y| (x - y) * (x - y))
}

pub(crate) fn norm_sq(a: &[f64], row_len: usize) -> f64 {
    ordered_zip_sum(a, a, row_len, |x, _| x * x)
}
