use ndarray::{s, Array3, ArrayView3, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{convolve3d, make_kernel, Kernel, ScanConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::scene::{scene_to_rd, Scene};

/// Photon-count histograms `Y`, one per scan position, with the acquisition
/// metadata needed to reconstruct from them.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramCube {
    /// `height × width × n_bins` counts in `(i, j, k)` order.
    pub counts: Array3<u32>,
    pub config: ScanConfig,
    /// Expected background counts per bin, uniform in space and time.
    pub background_per_bin: f64,
    pub rng_seed: u64,
    /// Flux scale applied to the unit-reflectivity signal.
    pub scale: f64,
    /// Spacing between stored scan positions in fine-grid pixels (1 unless
    /// coarsened).
    pub scan_step: usize,
}

impl HistogramCube {
    pub fn new(counts: Array3<u32>, config: ScanConfig, background_per_bin: f64, rng_seed: u64) -> Self {
        Self {
            counts,
            config,
            background_per_bin,
            rng_seed,
            scale: 1.0,
            scan_step: 1,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        let (h, w, t) = self.counts.dim();
        [h, w, t]
    }

    pub fn counts_f64(&self) -> Array3<f64> {
        self.counts.mapv(f64::from)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Multiplier on the signal flux.
    pub scale: f64,
    /// Expected background counts per bin.
    pub background_per_bin: f64,
}

/// Chooses the signal scale so the pixel-mean of summed signal equals `ppp`,
/// and the per-bin background `b = ppp / (sbr · w)` where `w` is the number of
/// bins in the SBR window. An infinite `sbr` gives `b = 0`.
pub fn calibrate_flux(signal: ArrayView3<f64>, ppp: f64, sbr: f64, config: &ScanConfig) -> Result<Calibration> {
    if !(ppp > 0.0 && ppp.is_finite()) {
        return Err(Error::param("ppp", format!("must be positive, got {ppp}")));
    }
    if !(sbr > 0.0) {
        return Err(Error::param("sbr", format!("must be positive, got {sbr}")));
    }
    let (h, w, t) = signal.dim();
    if h * w == 0 {
        return Err(Error::ZeroSignal);
    }
    let signal = signal.as_standard_layout();
    let data = signal.as_slice().expect("standard layout");
    let total = par::ordered_sum(h, |i| data[i * w * t..(i + 1) * w * t].iter().sum());
    if !(total > 0.0) {
        return Err(Error::ZeroSignal);
    }
    let mean_per_pixel = total / (h * w) as f64;
    Ok(Calibration {
        scale: ppp / mean_per_pixel,
        background_per_bin: ppp / (sbr * config.sbr_window_bins() as f64),
    })
}

/// Unit-scale signal flux `g ∗ RD` for a scene.
pub fn signal_flux(scene: &Scene, config: &ScanConfig, kernel: &Kernel) -> Result<Array3<f64>> {
    let rd = scene_to_rd(scene, config.bin_width, config.n_bins, config.t0)?;
    convolve3d(kernel, rd.data(), 0.0)
}

/// Independent Poisson draw per voxel. Voxel `(i, j, k)` uses a ChaCha8 stream
/// keyed by `(seed, i, j, k)`, so the cube does not depend on evaluation order.
pub fn sample_poisson(mean: ArrayView3<f64>, seed: u64) -> Result<Array3<u32>> {
    if let Some(bad) = mean.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
        return Err(Error::param("mean counts", format!("must be finite and >= 0, found {bad}")));
    }
    let mut out = Array3::<u32>::zeros(mean.dim());
    Zip::indexed(&mut out).and(&mean).par_for_each(|(i, j, k), o, &lambda| {
        if lambda > 0.0 {
            let mut rng = ChaCha8Rng::from_seed(voxel_key(seed, i, j, k));
            let draw: f64 = Poisson::new(lambda).expect("positive finite rate").sample(&mut rng);
            *o = draw.min(u32::MAX as f64) as u32;
        }
    });
    Ok(out)
}

fn voxel_key(seed: u64, i: usize, j: usize, k: usize) -> [u8; 32] {
    let mut key = [0u8; 32];
    for (chunk, v) in key.chunks_exact_mut(8).zip([seed, i as u64, j as u64, k as u64]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    key
}

/// Full acquisition: scene → RD volume → `g ∗ RD` → calibration → Poisson
/// counts. The fine scene grid is the scan grid.
pub fn simulate(scene: &Scene, config: &ScanConfig, ppp: f64, sbr: f64, seed: u64) -> Result<HistogramCube> {
    config.validate()?;
    let max_depth = crate::time_to_depth(config.rep_period);
    if let Some(d) = scene.depth().iter().find(|&&d| d >= max_depth) {
        return Err(Error::param(
            "depth",
            format!("{d} m is beyond the unambiguous range {max_depth} m"),
        ));
    }
    let kernel = make_kernel(config)?;
    let signal = signal_flux(scene, config, &kernel)?;
    let cal = calibrate_flux(signal.view(), ppp, sbr, config)?;
    let mut mean = signal;
    mean.par_mapv_inplace(|v| cal.scale * v + cal.background_per_bin);
    let counts = sample_poisson(mean.view(), seed)?;
    Ok(HistogramCube {
        counts,
        config: config.clone(),
        background_per_bin: cal.background_per_bin,
        rng_seed: seed,
        scale: cal.scale,
        scan_step: 1,
    })
}

/// Keeps every `factor`-th scan position in both directions, starting at
/// `(0, 0)`: a conventional scan with spacing `factor` fine pixels.
pub fn coarsen(cube: &HistogramCube, factor: usize) -> Result<HistogramCube> {
    let [h, w, _] = cube.shape();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::IndivisibleFactor {
            factor,
            height: h,
            width: w,
        });
    }
    let f = factor as isize;
    Ok(HistogramCube {
        counts: cube.counts.slice(s![..;f, ..;f, ..]).to_owned(),
        scan_step: cube.scan_step * factor,
        ..cube.clone()
    })
}
