//! Poisson negative log-likelihood of an RD volume given observed counts.

use ndarray::{Array3, ArrayView3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{convolve3d, correlate3d, Kernel};

/// `L(x) = Σ [Λ − Y log max(Λ, ε)]` with `Λ = g ∗ x + b`, dropping the
/// `log Y!` constant.
pub fn neg_log_likelihood(x: ArrayView3<f64>, counts: ArrayView3<u32>, kernel: &Kernel, b: f64, eps: f64) -> Result<f64> {
    let model = PoissonModel::new(counts, kernel, b, eps)?;
    let flux = model.flux(x)?;
    Ok(model.nll(&flux))
}

/// `∇L(x) = g̃ ∗ (1 − Y / max(Λ, ε))`, where `g̃` is the flipped kernel.
pub fn nll_gradient(x: ArrayView3<f64>, counts: ArrayView3<u32>, kernel: &Kernel, b: f64, eps: f64) -> Result<Array3<f64>> {
    let model = PoissonModel::new(counts, kernel, b, eps)?;
    let flux = model.flux(x)?;
    model.gradient(&flux)
}

/// Counts and forward operator shared across objective evaluations.
pub(crate) struct PoissonModel<'k> {
    y: Vec<f64>,
    dim: (usize, usize, usize),
    kernel: &'k Kernel,
    b: f64,
    eps: f64,
}

impl<'k> PoissonModel<'k> {
    pub(crate) fn new(counts: ArrayView3<u32>, kernel: &'k Kernel, b: f64, eps: f64) -> Result<Self> {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::param("background", format!("must be finite and >= 0, got {b}")));
        }
        if !(eps > 0.0) {
            return Err(Error::param("epsilon_floor", format!("must be positive, got {eps}")));
        }
        Ok(Self {
            y: counts.as_standard_layout().iter().map(|&c| f64::from(c)).collect(),
            dim: counts.dim(),
            kernel,
            b,
            eps,
        })
    }

    pub(crate) fn row_len(&self) -> usize {
        self.dim.1 * self.dim.2
    }

    fn check(&self, x: &ArrayView3<f64>) -> Result<()> {
        if x.dim() != self.dim {
            let (a, b) = (self.dim, x.dim());
            return Err(Error::ShapeMismatch {
                expected: vec![a.0, a.1, a.2],
                found: vec![b.0, b.1, b.2],
            });
        }
        Ok(())
    }

    /// Expected counts `Λ = g ∗ x + b`.
    pub(crate) fn flux(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        self.check(&x)?;
        convolve3d(self.kernel, x, self.b)
    }

    pub(crate) fn nll(&self, flux: &Array3<f64>) -> f64 {
        let lam = flux.as_slice().expect("standard layout");
        let eps = self.eps;
        crate::par::ordered_zip_sum(lam, &self.y, self.row_len(), |l, y| {
            if y == 0.0 {
                l
            } else {
                l - y * l.max(eps).ln()
            }
        })
    }

    pub(crate) fn gradient(&self, flux: &Array3<f64>) -> Result<Array3<f64>> {
        let lam = flux.as_slice().expect("standard layout");
        let eps = self.eps;
        let ratio: Vec<f64> = lam
            .par_iter()
            .zip(self.y.par_iter())
            .map(|(&l, &y)| 1.0 - y / l.max(eps))
            .collect();
        let ratio = Array3::from_shape_vec(self.dim, ratio).expect("shape");
        correlate3d(self.kernel, ratio.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(rng: &mut ChaCha8Rng) -> Kernel {
        Kernel::new(
            Array2::from_shape_fn((3, 3), |_| rng.random::<f64>() + 0.1),
            Array1::from_shape_fn(5, |_| rng.random::<f64>() + 0.1),
        )
        .unwrap()
    }

    #[test]
    fn matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_kernel(&mut rng);
        let x = Array3::from_shape_fn((4, 4, 8), |_| rng.random::<f64>());
        let y = Array3::from_shape_fn((4, 4, 8), |_| rng.random_range(0..4u32));
        let lam = convolve3d(&k, x.view(), 0.3).unwrap();
        let mut direct = 0.0;
        for (l, &c) in lam.iter().zip(y.iter()) {
            direct += l - c as f64 * l.ln();
        }
        let got = neg_log_likelihood(x.view(), y.view(), &k, 0.3, 1e-10).unwrap();
        assert!((got - direct).abs() < 1e-10 * direct.abs());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-4;
        for _ in 0..20 {
            let k = random_kernel(&mut rng);
            let x = Array3::from_shape_fn((5, 5, 16), |_| rng.random::<f64>() + 0.05);
            let y = Array3::from_shape_fn((5, 5, 16), |_| rng.random_range(0..6u32));
            let b = 0.1;
            let g = nll_gradient(x.view(), y.view(), &k, b, 1e-10).unwrap();
            for _ in 0..8 {
                let idx = (rng.random_range(0..5), rng.random_range(0..5), rng.random_range(0..16));
                let mut xp = x.clone();
                xp[idx] += h;
                let mut xm = x.clone();
                xm[idx] -= h;
                let fp = neg_log_likelihood(xp.view(), y.view(), &k, b, 1e-10).unwrap();
                let fm = neg_log_likelihood(xm.view(), y.view(), &k, b, 1e-10).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let rel = (fd - g[idx]).abs() / g[idx].abs().max(1e-3);
                assert!(rel < 1e-5, "fd {fd} vs analytic {}", g[idx]);
            }
        }
    }

    #[test]
    fn gradient_vanishes_when_flux_equals_counts() {
        let y = Array3::from_shape_fn((3, 3, 4), |(i, j, k)| (1 + i + j + k) as u32);
        let x = y.mapv(f64::from);
        let g = nll_gradient(x.view(), y.view(), &Kernel::delta(), 0.0, 1e-10).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn zero_counts_give_unit_gradient_in_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = random_kernel(&mut rng);
        let x = Array3::from_shape_fn((6, 6, 12), |_| rng.random::<f64>());
        let g = nll_gradient(x.view(), Array3::zeros((6, 6, 12)).view(), &k, 0.1, 1e-10).unwrap();
        for i in 1..5 {
            for j in 1..5 {
                for t in 2..10 {
                    assert!((g[[i, j, t]] - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        let r = neg_log_likelihood(
            Array3::zeros((2, 2, 3)).view(),
            Array3::zeros((2, 2, 4)).view(),
            &Kernel::delta(),
            0.1,
            1e-10,
        );
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }
}
