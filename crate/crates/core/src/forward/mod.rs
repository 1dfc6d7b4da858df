//! Forward model: kernel construction, discrete convolution, flux calibration
//! and Poisson sampling of photon-count histograms.
//!
//! The continuous flux at scan angle θ is
//!
//! ```text
//! F(t; θ) = ∫_FoV g_xy(θ − θ') r(θ') g_t(t − 2 d(θ') / c) dθ' + b
//! ```
//!
//! Only its discrete form is used here: with the scene written as an RD volume,
//! the expected counts are `Λ = (g_xy ⊗ g_t) ∗ RD + b` and the observed cube is
//! `Y ~ Poisson(Λ)`. Each fine-grid pixel is one scan position, so with
//! inter-pixel spacing `1/(2n)` of the field of view the spatial kernel has a
//! FWHM of `2n` pixels and a `(2n+1) × (2n+1)` support.

mod convolve;
mod sampling;

pub use convolve::{convolve3d, correlate3d};
pub use sampling::{calibrate_flux, coarsen, sample_poisson, signal_flux, simulate, Calibration, HistogramCube};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3; // 2·sqrt(2·ln 2)

/// Diffraction-limited angular resolution `2.44 λ / D` of a circular aperture,
/// in radians.
pub fn rayleigh_resolution(wavelength: f64, aperture: f64) -> Result<f64> {
    if !(wavelength > 0.0 && wavelength.is_finite()) {
        return Err(Error::param("wavelength", format!("must be positive, got {wavelength}")));
    }
    if !(aperture > 0.0 && aperture.is_finite()) {
        return Err(Error::param("aperture", format!("must be positive, got {aperture}")));
    }
    Ok(2.44 * wavelength / aperture)
}

/// Acquisition parameters of a sub-pixel scan.
///
/// `fov_fwhm_pixels` is derived from `n` when absent from serialized input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScanConfigRepr")]
pub struct ScanConfig {
    /// Sub-pixel half-width: scan spacing is `1/(2n)` of the field of view.
    pub n: usize,
    /// Spatial kernel FWHM in fine-grid pixels, normally `2n`.
    pub fov_fwhm_pixels: f64,
    /// FWHM of the system timing jitter, seconds.
    pub jitter_fwhm: f64,
    /// Histogram bin width, seconds.
    pub bin_width: f64,
    pub n_bins: usize,
    /// Laser repetition period, seconds.
    pub rep_period: f64,
    /// Time window over which the signal-to-background ratio is defined, seconds.
    pub sbr_window: f64,
    /// Time origin of bin 0, seconds.
    pub t0: f64,
}

#[derive(Deserialize)]
#[serde(default)]
struct ScanConfigRepr {
    n: usize,
    fov_fwhm_pixels: Option<f64>,
    jitter_fwhm: f64,
    bin_width: f64,
    n_bins: usize,
    rep_period: f64,
    sbr_window: f64,
    t0: f64,
}

impl Default for ScanConfigRepr {
    fn default() -> Self {
        let d = ScanConfig::default();
        Self {
            n: d.n,
            fov_fwhm_pixels: None,
            jitter_fwhm: d.jitter_fwhm,
            bin_width: d.bin_width,
            n_bins: d.n_bins,
            rep_period: d.rep_period,
            sbr_window: d.sbr_window,
            t0: d.t0,
        }
    }
}

impl From<ScanConfigRepr> for ScanConfig {
    fn from(r: ScanConfigRepr) -> Self {
        ScanConfig {
            n: r.n,
            fov_fwhm_pixels: r.fov_fwhm_pixels.unwrap_or(2.0 * r.n as f64),
            jitter_fwhm: r.jitter_fwhm,
            bin_width: r.bin_width,
            n_bins: r.n_bins,
            rep_period: r.rep_period,
            sbr_window: r.sbr_window,
            t0: r.t0,
        }
    }
}

impl Default for ScanConfig {
    /// 1/8-FoV spacing, 1 ns jitter, 0.4 ns bins over a 100 ns window, 100 kHz
    /// repetition rate.
    fn default() -> Self {
        Self {
            n: 4,
            fov_fwhm_pixels: 8.0,
            jitter_fwhm: 1e-9,
            bin_width: 0.4e-9,
            n_bins: 250,
            rep_period: 10e-6,
            sbr_window: 100e-9,
            t0: 0.0,
        }
    }
}

impl ScanConfig {
    /// Sets `n` and the matching `fov_fwhm_pixels = 2n`.
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self.fov_fwhm_pixels = 2.0 * n as f64;
        self
    }

    pub fn with_bins(mut self, bin_width: f64, n_bins: usize) -> Self {
        self.bin_width = bin_width;
        self.n_bins = n_bins;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::param("n", "must be at least 1"));
        }
        if !(self.fov_fwhm_pixels > 0.0 && self.fov_fwhm_pixels.is_finite()) {
            return Err(Error::param("fov_fwhm_pixels", "must be positive"));
        }
        if !(self.jitter_fwhm >= 0.0 && self.jitter_fwhm.is_finite()) {
            return Err(Error::param("jitter_fwhm", "must be >= 0"));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::param("bin_width", "must be positive"));
        }
        if self.n_bins == 0 {
            return Err(Error::param("n_bins", "must be at least 1"));
        }
        let span = self.n_bins as f64 * self.bin_width;
        if span > self.rep_period * (1.0 + 1e-12) {
            return Err(Error::param(
                "n_bins",
                format!("histogram span {span:e} s exceeds repetition period {:e} s", self.rep_period),
            ));
        }
        if !(self.sbr_window > 0.0) || self.sbr_window > span * (1.0 + 1e-12) {
            return Err(Error::param(
                "sbr_window",
                format!("must lie in (0, {span:e}] s, got {:e}", self.sbr_window),
            ));
        }
        if !self.t0.is_finite() {
            return Err(Error::param("t0", "must be finite"));
        }
        Ok(())
    }

    /// Number of bins in the SBR window, `round(sbr_window / bin_width)`.
    pub fn sbr_window_bins(&self) -> usize {
        ((self.sbr_window / self.bin_width).round() as usize).max(1)
    }

    pub fn timing(&self) -> crate::volume::BinTiming {
        crate::volume::BinTiming {
            bin_width: self.bin_width,
            t0: self.t0,
        }
    }
}

/// Separable spatiotemporal response `g = g_xy ⊗ g_t`, each factor summing
/// to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    spatial: Array2<f64>,
    temporal: Array1<f64>,
    /// `(along rows, along columns)` when `spatial` is an outer product.
    factors: Option<(Array1<f64>, Array1<f64>)>,
}

impl Kernel {
    /// Builds a kernel from arbitrary non-negative taps, normalizing each part
    /// to unit sum. The spatial grid must be square with odd side, the temporal
    /// taps odd in length.
    pub fn new(spatial: Array2<f64>, temporal: Array1<f64>) -> Result<Self> {
        let (r, c) = spatial.dim();
        if r != c || r % 2 == 0 {
            return Err(Error::param("spatial kernel", format!("must be square with odd side, got {r}x{c}")));
        }
        if temporal.len() % 2 == 0 {
            return Err(Error::param("temporal kernel", format!("length must be odd, got {}", temporal.len())));
        }
        let spatial = normalized(spatial, "spatial kernel")?;
        let temporal = normalized(temporal, "temporal kernel")?;
        let factors = rank_one_factors(spatial.view());
        Ok(Self {
            spatial,
            temporal,
            factors,
        })
    }

    /// Identity kernel: 1×1 spatial, length-1 temporal.
    pub fn delta() -> Self {
        Self::from_factors(Array1::ones(1), Array1::ones(1), Array1::ones(1))
    }

    fn from_factors(rows: Array1<f64>, cols: Array1<f64>, temporal: Array1<f64>) -> Self {
        let spatial = outer(rows.view(), cols.view());
        Self {
            spatial,
            temporal,
            factors: Some((rows, cols)),
        }
    }

    pub fn spatial(&self) -> ArrayView2<'_, f64> {
        self.spatial.view()
    }

    pub fn temporal(&self) -> ArrayView1<'_, f64> {
        self.temporal.view()
    }

    /// Half-width `n` of the spatial support (side `2n + 1`).
    pub fn n(&self) -> usize {
        self.spatial.nrows() / 2
    }

    pub fn temporal_half_len(&self) -> usize {
        self.temporal.len() / 2
    }

    /// `[spatial side, spatial side, temporal length]`.
    pub fn shape(&self) -> [usize; 3] {
        [self.spatial.nrows(), self.spatial.ncols(), self.temporal.len()]
    }

    pub(crate) fn separable_factors(&self) -> Option<(ArrayView1<'_, f64>, ArrayView1<'_, f64>)> {
        self.factors.as_ref().map(|(r, c)| (r.view(), c.view()))
    }

    /// The kernel reversed along all three axes.
    pub fn flipped(&self) -> Self {
        let rev1 = |a: &Array1<f64>| a.iter().rev().cloned().collect::<Array1<f64>>();
        let mut spatial = self.spatial.clone();
        spatial.invert_axis(ndarray::Axis(0));
        spatial.invert_axis(ndarray::Axis(1));
        Self {
            spatial: spatial.as_standard_layout().into_owned(),
            temporal: rev1(&self.temporal),
            factors: self.factors.as_ref().map(|(r, c)| (rev1(r), rev1(c))),
        }
    }
}

fn normalized<D: ndarray::Dimension>(a: ndarray::Array<f64, D>, what: &'static str) -> Result<ndarray::Array<f64, D>> {
    if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::param(what, "taps must be finite and non-negative"));
    }
    let sum: f64 = a.iter().sum();
    if sum <= 0.0 {
        return Err(Error::param(what, "taps must have positive sum"));
    }
    Ok(a / sum)
}

fn outer(rows: ArrayView1<f64>, cols: ArrayView1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| rows[i] * cols[j])
}

fn rank_one_factors(spatial: ArrayView2<f64>) -> Option<(Array1<f64>, Array1<f64>)> {
    // for a unit-sum outer product, the row and column marginals are the factors
    let rows = spatial.sum_axis(ndarray::Axis(1));
    let cols = spatial.sum_axis(ndarray::Axis(0));
    let max = spatial.iter().cloned().fold(0.0, f64::max);
    let fits = spatial
        .indexed_iter()
        .all(|((i, j), &v)| (v - rows[i] * cols[j]).abs() <= 1e-14 * max);
    fits.then_some((rows, cols))
}

/// Unit-sum Gaussian samples at integer offsets `-half..=half`.
fn sampled_gaussian(sigma: f64, half: usize) -> Array1<f64> {
    let h = half as i64;
    let g: Array1<f64> = (-h..=h)
        .map(|x| {
            let x = x as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s = g.sum();
    g / s
}

/// Gaussian spatial kernel with FWHM `fov_fwhm_pixels` truncated to
/// `(2n+1) × (2n+1)`, and Gaussian temporal kernel with FWHM
/// `jitter_fwhm / bin_width` bins truncated at ±3σ.
pub fn make_kernel(config: &ScanConfig) -> Result<Kernel> {
    if config.n < 1 {
        return Err(Error::param("n", "must be at least 1"));
    }
    if !(config.fov_fwhm_pixels > 0.0) {
        return Err(Error::param("fov_fwhm_pixels", "must be positive"));
    }
    if !(config.bin_width > 0.0) || !(config.jitter_fwhm >= 0.0) {
        return Err(Error::param("jitter_fwhm", "need bin_width > 0 and jitter_fwhm >= 0"));
    }
    let spatial_sigma = config.fov_fwhm_pixels / FWHM_PER_SIGMA;
    let factor = sampled_gaussian(spatial_sigma, config.n);

    let temporal_sigma = config.jitter_fwhm / config.bin_width / FWHM_PER_SIGMA;
    let temporal = if temporal_sigma > 0.0 {
        sampled_gaussian(temporal_sigma, (3.0 * temporal_sigma).ceil() as usize)
    } else {
        Array1::ones(1)
    };
    Ok(Kernel::from_factors(factor.clone(), factor, temporal))
}
