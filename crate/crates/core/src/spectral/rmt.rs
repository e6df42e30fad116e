//! Random-matrix samples used to calibrate the gap-ratio statistic.

use faer::Mat;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// Real symmetric matrix from the Gaussian orthogonal ensemble,
/// `(G + G^T) / 2` with i.i.d. standard normal `G`.
pub fn goe_matrix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat<f64> {
    let g = Mat::from_fn(n, n, |_, _| -> f64 { StandardNormal.sample(rng) });
    Mat::from_fn(n, n, |i, j| 0.5 * (g[(i, j)] + g[(j, i)]))
}

/// `n` levels with i.i.d. unit-mean exponential spacings.
pub fn poisson_levels<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut e = 0.0;
    (0..n)
        .map(|_| {
            let s: f64 = Exp1.sample(rng);
            e += s;
            e
        })
        .collect()
}
