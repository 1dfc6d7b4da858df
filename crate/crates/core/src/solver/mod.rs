//! TV-regularized Poisson deconvolution of a histogram cube.
//!
//! Minimizes `Φ(x) = L(x) + β · TV(x)` over `x ≥ 0`, where `L` is the Poisson
//! negative log-likelihood of the observed counts under `Λ = g ∗ x + b`.
//! Each iteration takes a proximal gradient step
//!
//! ```text
//! x⁺ = prox_{(β/α) TV + ι₊}(x − ∇L(x) / α)
//! ```
//!
//! with `α` seeded by the Barzilai-Borwein curvature estimate and increased
//! until the sufficient-decrease test
//! `Φ(x⁺) ≤ Φ(x) − σ (α/2) ‖x⁺ − x‖²` holds.

mod extract;
mod likelihood;
mod tv;

pub use extract::extract_depth_reflectivity;
pub use likelihood::{neg_log_likelihood, nll_gradient};
pub use tv::{prox_tv_nonneg, prox_tv_nonneg_with, tv_penalty, tv_penalty_with, TvProx};

use ndarray::{Array3, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{correlate3d, HistogramCube, Kernel};
use crate::par;
use crate::volume::{BinTiming, RdVolume};
use likelihood::PoissonModel;

/// Step-size increases allowed within one iteration before giving up.
pub const MAX_BACKTRACKS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// TV weight.
    pub beta: f64,
    pub max_iters: usize,
    /// Stop once `‖x⁺ − x‖ / ‖x‖` falls below this.
    pub rel_tol: f64,
    /// Curvature `α` used for the first step.
    pub step_init: f64,
    /// Clamp for the Barzilai-Borwein estimate of `α`.
    pub step_bounds: [f64; 2],
    /// Factor applied to `α` on each rejected step.
    pub backtrack_eta: f64,
    /// Sufficient-decrease constant.
    pub accept_sigma: f64,
    /// Dual iterations per TV prox.
    pub tv_inner_iters: usize,
    /// Floor on `Λ` inside logs and ratios.
    pub epsilon_floor: f64,
    /// Penalize differences along the time axis too.
    pub temporal_tv: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            max_iters: 200,
            rel_tol: 1e-4,
            step_init: 1.0,
            step_bounds: [1e-30, 1e30],
            backtrack_eta: 2.0,
            accept_sigma: 0.1,
            tv_inner_iters: 20,
            epsilon_floor: 1e-10,
            temporal_tv: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::param("beta", format!("must be finite and >= 0, got {}", self.beta)));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::param("rel_tol", "must be >= 0"));
        }
        let [lo, hi] = self.step_bounds;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::param("step_bounds", format!("need 0 < min <= max, got [{lo}, {hi}]")));
        }
        if !(self.step_init > 0.0 && self.step_init.is_finite()) {
            return Err(Error::param("step_init", "must be positive"));
        }
        if !(self.backtrack_eta > 1.0) {
            return Err(Error::param("backtrack_eta", "must exceed 1"));
        }
        if !(self.accept_sigma > 0.0 && self.accept_sigma < 1.0) {
            return Err(Error::param("accept_sigma", "must lie in (0, 1)"));
        }
        if !(self.epsilon_floor > 0.0) {
            return Err(Error::param("epsilon_floor", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// `Φ` at the initial point followed by `Φ` after each accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_rel_change: f64,
    /// Rejected steps summed over all iterations.
    pub backtracks: usize,
}

/// Default starting point: the back-projection `g̃ ∗ max(Y − b, 0)`.
pub fn backprojection(counts: ArrayView3<u32>, kernel: &Kernel, b: f64) -> Result<Array3<f64>> {
    let excess = counts.mapv(|c| (f64::from(c) - b).max(0.0));
    correlate3d(kernel, excess.view())
}

/// Reconstructs the RD volume of `cube` with kernel `kernel` and per-bin
/// background `b`. `init` defaults to [`backprojection`].
pub fn spiral_solve(
    cube: &HistogramCube,
    kernel: &Kernel,
    b: f64,
    config: &SolverConfig,
    init: Option<ArrayView3<f64>>,
) -> Result<(RdVolume, SolveReport)> {
    let timing = BinTiming::new(cube.config.bin_width, cube.config.t0)?;
    solve_counts(cube.counts.view(), kernel, b, config, init, timing)
}

/// As [`spiral_solve`], on bare counts.
pub fn solve_counts(
    counts: ArrayView3<u32>,
    kernel: &Kernel,
    b: f64,
    config: &SolverConfig,
    init: Option<ArrayView3<f64>>,
    timing: BinTiming,
) -> Result<(RdVolume, SolveReport)> {
    config.validate()?;
    let model = PoissonModel::new(counts, kernel, b, config.epsilon_floor)?;
    let mut x = match init {
        Some(v) => {
            if v.dim() != counts.dim() {
                let (a, c) = (counts.dim(), v.dim());
                return Err(Error::ShapeMismatch {
                    expected: vec![a.0, a.1, a.2],
                    found: vec![c.0, c.1, c.2],
                });
            }
            v.mapv(|a| if a.is_finite() { a.max(0.0) } else { 0.0 })
        }
        None => backprojection(counts, kernel, b)?,
    };
    let row = model.row_len();
    let tv = |z: &Array3<f64>| tv_penalty_with(z.view(), config.temporal_tv);

    let mut flux = model.flux(x.view())?;
    let mut phi = model.nll(&flux) + config.beta * tv(&x);
    let mut grad = model.gradient(&flux)?;
    let mut report = SolveReport {
        objective_trace: vec![phi],
        iterations: 0,
        converged: false,
        final_rel_change: f64::INFINITY,
        backtracks: 0,
    };
    let [lo, hi] = config.step_bounds;
    let mut alpha = config.step_init.clamp(lo, hi);
    let mut previous: Option<(Array3<f64>, Array3<f64>)> = None;
    let mut prox = TvProx::new(config.temporal_tv);

    'outer: for iter in 1..=config.max_iters {
        report.iterations = iter;
        if let Some((dx, dg)) = previous.take() {
            let (dx, dg) = (dx.as_slice().unwrap(), dg.as_slice().unwrap());
            let bb = par::dot(dx, dg, row) / par::norm_sq(dx, row);
            if bb.is_finite() && bb > 0.0 {
                alpha = bb.clamp(lo, hi);
            }
        }
        let x_norm = par::norm_sq(x.as_slice().unwrap(), row).sqrt().max(config.epsilon_floor);
        let mut rejected = 0;
        let (cand, cand_flux, cand_phi, dist) = loop {
            let mut z = grad.clone();
            Zip::from(&mut z).and(&x).par_for_each(|zv, &xv| *zv = xv - *zv / alpha);
            let cand = prox.apply(z.view(), config.beta / alpha, config.tv_inner_iters);
            let dist2 = par::dist_sq(cand.as_slice().unwrap(), x.as_slice().unwrap(), row);
            let rel = dist2.sqrt() / x_norm;
            if dist2 == 0.0 {
                report.final_rel_change = 0.0;
                report.converged = true;
                break 'outer;
            }
            let cand_flux = model.flux(cand.view())?;
            let cand_phi = model.nll(&cand_flux) + config.beta * tv(&cand);
            if cand_phi <= phi - config.accept_sigma * alpha / 2.0 * dist2 {
                break (cand, cand_flux, cand_phi, rel);
            }
            if rel < config.rel_tol {
                // no admissible step larger than the tolerance remains
                report.final_rel_change = rel;
                report.converged = true;
                break 'outer;
            }
            rejected += 1;
            report.backtracks += 1;
            if rejected > MAX_BACKTRACKS || !cand_phi.is_finite() && alpha >= hi {
                return Err(Error::Diverged {
                    iteration: iter,
                    backtracks: rejected,
                    objective: cand_phi,
                    step: alpha,
                });
            }
            alpha = (alpha * config.backtrack_eta).min(hi);
        };

        let cand_grad = model.gradient(&cand_flux)?;
        previous = Some((&cand - &x, &cand_grad - &grad));
        x = cand;
        flux = cand_flux;
        grad = cand_grad;
        phi = cand_phi;
        report.objective_trace.push(phi);
        report.final_rel_change = dist;
        if dist < config.rel_tol {
            report.converged = true;
            break;
        }
    }
    drop(flux);
    Ok((RdVolume::new(x, timing)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{make_kernel, ScanConfig};
    use ndarray::{s, Array1, Array2};

    fn timing() -> BinTiming {
        BinTiming::new(1e-9, 0.0).unwrap()
    }

    #[test]
    fn defaults_validate() {
        SolverConfig::default().validate().unwrap();
        let bad = SolverConfig {
            step_bounds: [2.0, 1.0],
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_accepts_partial_toml_style_json() {
        let c: SolverConfig = serde_json::from_str(r#"{"beta": 0.5, "max_iters": 10}"#).unwrap();
        assert_eq!(c.beta, 0.5);
        assert_eq!(c.rel_tol, 1e-4);
        assert!(serde_json::from_str::<SolverConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn delta_kernel_recovers_counts_minus_background() {
        let y = Array3::from_shape_fn((4, 4, 6), |(i, j, k)| (2 + i + 2 * j + k % 3) as u32);
        let b = 0.5;
        let cfg = SolverConfig {
            beta: 0.0,
            max_iters: 500,
            rel_tol: 1e-10,
            ..SolverConfig::default()
        };
        let (rd, report) = solve_counts(y.view(), &Kernel::delta(), b, &cfg, None, timing()).unwrap();
        for (v, &c) in rd.data().iter().zip(y.iter()) {
            assert!((v - (c as f64 - b)).abs() < 1e-6, "{v} vs {c}");
        }
        assert!(report.converged);
    }

    #[test]
    fn exact_solution_is_a_fixed_point() {
        let y = Array3::from_shape_fn((3, 3, 5), |(i, j, k)| (1 + i + j + k) as u32);
        let b = 0.25;
        let start = y.mapv(|c| c as f64 - b);
        let cfg = SolverConfig {
            beta: 0.0,
            ..SolverConfig::default()
        };
        let (rd, report) = solve_counts(y.view(), &Kernel::delta(), b, &cfg, Some(start.view()), timing()).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 2);
        let err = (&rd.into_data() - &start).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-9);
    }

    #[test]
    fn objective_trace_never_increases() {
        let cfg = ScanConfig {
            bin_width: 0.8e-9,
            n_bins: 40,
            sbr_window: 32e-9,
            ..ScanConfig::default().with_n(1)
        };
        let kernel = make_kernel(&cfg).unwrap();
        let y = Array3::from_shape_fn((10, 10, 40), |(i, j, k)| ((i * 7 + j * 3 + k * 5) % 4) as u32);
        let solver = SolverConfig {
            beta: 0.2,
            max_iters: 30,
            ..SolverConfig::default()
        };
        let (_, report) = solve_counts(y.view(), &kernel, 0.1, &solver, None, timing()).unwrap();
        for pair in report.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
    }

    #[test]
    fn blurred_spike_concentrates_near_truth() {
        let kernel = Kernel::new(Array2::from_elem((1, 1), 1.0), Array1::from(vec![0.25, 0.5, 0.25])).unwrap();
        let mut truth = Array3::zeros((1, 1, 21));
        truth[[0, 0, 10]] = 100.0;
        let lam = crate::forward::convolve3d(&kernel, truth.view(), 0.0).unwrap();
        let y = lam.mapv(|v| v.round() as u32);
        let cfg = SolverConfig {
            beta: 0.0,
            max_iters: 2000,
            rel_tol: 1e-9,
            ..SolverConfig::default()
        };
        let (rd, _) = solve_counts(y.view(), &kernel, 0.0, &cfg, None, timing()).unwrap();
        let x = rd.into_data();
        let near: f64 = x.slice(s![0, 0, 9..=11]).sum();
        assert!(near >= 0.99 * x.sum());
        let maps = extract_depth_reflectivity(&RdVolume::new(x, timing()).unwrap(), 1);
        assert_eq!(maps.depth[[0, 0]], timing().bin_depth(10));
    }

    #[test]
    fn rejects_mismatched_init() {
        let y = Array3::<u32>::zeros((2, 2, 3));
        let init = Array3::<f64>::zeros((2, 2, 4));
        let r = solve_counts(y.view(), &Kernel::delta(), 0.1, &SolverConfig::default(), Some(init.view()), timing());
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }
}
