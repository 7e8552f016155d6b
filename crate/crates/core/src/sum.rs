//! Compensated summation with a reduction order that does not depend on the
//! thread count.

use rayon::prelude::*;

/// Chunk length of [`par_sum`]; partial sums are combined in chunk order.
pub const CHUNK: usize = 4096;

/// Neumaier's improved Kahan summation.
pub fn neumaier(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sum of `f(i)` for `i in 0..n`, parallel over fixed chunks.
pub fn par_sum(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let partial: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| neumaier((c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f)))
        .collect();
    neumaier(partial)
}
