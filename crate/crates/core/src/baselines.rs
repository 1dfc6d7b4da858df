//! Per-pixel reconstruction without spatial coupling.
//!
//! [`log_matched_filter`] is the maximum-likelihood depth estimate for a single
//! return in uniform background: it correlates the histogram with
//! `log(g_t + b')` and takes the best shift. [`reconstruct_no_scan`] applies it
//! to a conventionally scanned subset of the cube and upsamples the result.

use ndarray::{Array2, ArrayView1, ArrayView3, Axis, Zip};

use crate::error::{Error, Result};
use crate::forward::{coarsen, make_kernel, HistogramCube};
use crate::maps::DepthMaps;
use crate::volume::BinTiming;

/// Smallest relative background used inside the log template.
const MIN_RELATIVE_BACKGROUND: f64 = 1e-12;

/// Log-matched-filter depth and background-corrected reflectivity per pixel.
///
/// `temporal` is the instrument response over bins (odd length, centered).
/// The template for shift `k` is `log(g_t[m − k] + b')` with
/// `b' = b / â`, where `â = max(Σ y − b·T, 1)` is the pixel's estimated
/// signal count. Reflectivity is the count within the response support
/// around the selected bin minus the expected background there, floored at
/// zero. Pixels without counts are invalid.
pub fn log_matched_filter(counts: ArrayView3<u32>, temporal: ArrayView1<f64>, b: f64, timing: BinTiming) -> Result<DepthMaps> {
    if temporal.len() % 2 == 0 || temporal.is_empty() {
        return Err(Error::param("temporal kernel", "length must be odd"));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::param("background", format!("must be finite and >= 0, got {b}")));
    }
    let (h, w, t) = counts.dim();
    let half = temporal.len() / 2;
    let g = temporal.to_vec();
    let mut depth = Array2::zeros((h, w));
    let mut reflectivity = Array2::zeros((h, w));
    let mut valid = Array2::from_elem((h, w), false);
    Zip::from(&mut depth)
        .and(&mut reflectivity)
        .and(&mut valid)
        .and(counts.lanes(Axis(2)))
        .par_for_each(|d, r, ok, lane| {
            *d = timing.bin_depth(0);
            let total: u64 = lane.iter().map(|&c| u64::from(c)).sum();
            if total == 0 {
                return;
            }
            let signal = (total as f64 - b * t as f64).max(1.0);
            let rel_bg = (b / signal).max(MIN_RELATIVE_BACKGROUND);
            // score relative to a flat template, so bins outside the support
            // contribute nothing
            let weights: Vec<f64> = g.iter().map(|&v| (v + rel_bg).ln() - rel_bg.ln()).collect();
            let mut score = vec![0.0; t];
            for (m, &c) in lane.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                for (tap, &wt) in weights.iter().enumerate() {
                    // template for shift k has its center tap at bin k
                    if let Some(k) = (m + half).checked_sub(tap).filter(|&k| k < t) {
                        score[k] += f64::from(c) * wt;
                    }
                }
            }
            let (mut best, mut top) = (0, f64::NEG_INFINITY);
            for (k, &s) in score.iter().enumerate() {
                if s > top {
                    top = s;
                    best = k;
                }
            }
            let lo = best.saturating_sub(half);
            let hi = (best + half).min(t - 1);
            let in_window: u64 = lane.slice(ndarray::s![lo..=hi]).iter().map(|&c| u64::from(c)).sum();
            *r = (in_window as f64 - b * (hi - lo + 1) as f64).max(0.0);
            *d = timing.bin_depth(best);
            *ok = true;
        });
    Ok(DepthMaps {
        depth,
        reflectivity,
        valid,
    })
}

/// Background per bin per pixel from the data alone: the median of the
/// spatially summed histogram over bins away from its strongest peak,
/// divided by the pixel count.
pub fn estimate_background(counts: ArrayView3<u32>, exclude_half: usize) -> f64 {
    let (h, w, t) = counts.dim();
    if h * w == 0 || t == 0 {
        return 0.0;
    }
    let mut totals = vec![0u64; t];
    for lane in counts.lanes(Axis(2)) {
        for (acc, &c) in totals.iter_mut().zip(lane) {
            *acc += u64::from(c);
        }
    }
    let peak = totals
        .iter()
        .enumerate()
        .fold((0, 0u64), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
        .0;
    let mut rest: Vec<u64> = totals
        .iter()
        .enumerate()
        .filter(|(k, _)| k.abs_diff(peak) > exclude_half)
        .map(|(_, &v)| v)
        .collect();
    if rest.is_empty() {
        rest = totals;
    }
    rest.sort_unstable();
    let n = rest.len();
    let median = if n % 2 == 1 {
        rest[n / 2] as f64
    } else {
        (rest[n / 2 - 1] + rest[n / 2]) as f64 / 2.0
    };
    median / (h * w) as f64
}

/// Bins excluded on each side of the global peak when estimating background.
pub fn background_exclusion(temporal_half: usize) -> usize {
    (3 * temporal_half).max(5)
}

/// Log-matched filter on every scan position of `cube`. Reflectivity is
/// reported in the units of the scene (counts divided by the cube's flux
/// scale). `background` defaults to [`estimate_background`].
pub fn pixelwise_ml(cube: &HistogramCube, background: Option<f64>) -> Result<DepthMaps> {
    let kernel = make_kernel(&cube.config)?;
    let b = match background {
        Some(b) => b,
        None => estimate_background(cube.counts.view(), background_exclusion(kernel.temporal_half_len())),
    };
    let timing = BinTiming::new(cube.config.bin_width, cube.config.t0)?;
    let mut maps = log_matched_filter(cube.counts.view(), kernel.temporal(), b, timing)?;
    maps.reflectivity.mapv_inplace(|r| r / cube.scale);
    Ok(maps)
}

/// Conventional scan at `factor`-pixel spacing: keep every `factor`-th scan
/// position, run [`pixelwise_ml`], and upsample by nearest neighbor back to
/// the cube's grid.
pub fn reconstruct_no_scan(cube: &HistogramCube, factor: usize, background: Option<f64>) -> Result<DepthMaps> {
    let coarse = coarsen(cube, factor)?;
    Ok(pixelwise_ml(&coarse, background)?.upsample_nearest(factor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{sample_poisson, ScanConfig};
    use ndarray::{Array1, Array3};

    fn timing() -> BinTiming {
        BinTiming::new(0.8e-9, 0.0).unwrap()
    }

    fn gaussian(len: usize, sigma: f64) -> Array1<f64> {
        let half = (len / 2) as f64;
        let g = Array1::from_shape_fn(len, |i| (-(i as f64 - half).powi(2) / (2.0 * sigma * sigma)).exp());
        let s = g.sum();
        g / s
    }

    #[test]
    fn finds_noiseless_peak() {
        let g = gaussian(7, 1.0);
        let mut y = Array3::zeros((1, 1, 125));
        for (c, &v) in g.iter().enumerate() {
            y[[0, 0, 37 + c]] = (100.0 * v).round() as u32;
        }
        let maps = log_matched_filter(y.view(), g.view(), 0.0, timing()).unwrap();
        assert_eq!(maps.depth[[0, 0]], timing().bin_depth(40));
        assert!(maps.valid[[0, 0]]);
        assert_eq!(maps.reflectivity[[0, 0]], y.sum() as f64);
    }

    #[test]
    fn empty_pixel_is_invalid() {
        let y = Array3::zeros((2, 1, 30));
        let maps = log_matched_filter(y.view(), gaussian(3, 0.7).view(), 0.1, timing()).unwrap();
        assert!(maps.valid.iter().all(|v| !v));
        assert!(maps.depth.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn background_estimate_ignores_signal_peak() {
        let b = 0.05;
        let mut mean = Array3::from_elem((30, 30, 125), b);
        for i in 0..30 {
            for j in 0..30 {
                mean[[i, j, 60]] += 3.0;
                mean[[i, j, 61]] += 1.0;
            }
        }
        let y = sample_poisson(mean.view(), 3).unwrap();
        let est = estimate_background(y.view(), 5);
        assert!((est - b).abs() < 0.01, "{est}");
        let zero = estimate_background(Array3::<u32>::zeros((4, 4, 20)).view(), 3);
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn beats_raw_argmax_under_background() {
        let sigma = 10.0;
        let g = gaussian(61, sigma);
        let truth = 100usize;
        let trials = 1000;
        let b = 0.04;
        let mut mean = Array3::from_elem((trials, 1, 250), b);
        for i in 0..trials {
            for (c, &v) in g.iter().enumerate() {
                mean[[i, 0, truth - 30 + c]] += 50.0 * v;
            }
        }
        let y = sample_poisson(mean.view(), 21).unwrap();
        let maps = log_matched_filter(y.view(), g.view(), b, timing()).unwrap();
        let bin = timing().bin_depth_width();
        let (mut lm_sq, mut raw_sq) = (0.0, 0.0);
        for i in 0..trials {
            let k_lm = (maps.depth[[i, 0]] / bin).round();
            lm_sq += (k_lm - truth as f64).powi(2);
            let lane = y.slice(ndarray::s![i, 0, ..]);
            let k_raw = lane
                .iter()
                .enumerate()
                .fold((0, 0), |best, (k, &c)| if c > best.1 { (k, c) } else { best })
                .0;
            raw_sq += (k_raw as f64 - truth as f64).powi(2);
        }
        assert!(lm_sq <= raw_sq, "lm {lm_sq} raw {raw_sq}");
    }

    #[test]
    fn noiseless_score_peaks_at_true_bin() {
        let g = gaussian(9, 1.5);
        for truth in [4usize, 20, 35] {
            let mut y = Array3::zeros((1, 1, 40));
            for (c, &v) in g.iter().enumerate() {
                y[[0, 0, truth + c - 4]] = (1000.0 * v).round() as u32;
            }
            let maps = log_matched_filter(y.view(), g.view(), 0.01, timing()).unwrap();
            assert_eq!(maps.depth[[0, 0]], timing().bin_depth(truth));
        }
    }

    #[test]
    fn factor_one_matches_pixelwise() {
        let cfg = ScanConfig {
            bin_width: 0.8e-9,
            n_bins: 60,
            sbr_window: 48e-9,
            ..ScanConfig::default().with_n(1)
        };
        let mean = Array3::from_shape_fn((6, 6, 60), |(i, j, k)| 0.05 + if k == 10 + i + j { 3.0 } else { 0.0 });
        let cube = HistogramCube::new(sample_poisson(mean.view(), 4).unwrap(), cfg, 0.05, 4);
        assert_eq!(reconstruct_no_scan(&cube, 1, None).unwrap(), pixelwise_ml(&cube, None).unwrap());
    }

    #[test]
    fn permuting_pixels_permutes_output() {
        let g = gaussian(5, 1.0);
        let mean = Array3::from_shape_fn((3, 4, 50), |(i, j, k)| {
            0.05 + if k == 10 + 3 * i + j { 4.0 } else { 0.0 }
        });
        let y = sample_poisson(mean.view(), 1).unwrap();
        let maps = log_matched_filter(y.view(), g.view(), 0.05, timing()).unwrap();
        let mut swapped = y.clone();
        for k in 0..50 {
            swapped[[0, 0, k]] = y[[2, 3, k]];
            swapped[[2, 3, k]] = y[[0, 0, k]];
        }
        let maps2 = log_matched_filter(swapped.view(), g.view(), 0.05, timing()).unwrap();
        assert_eq!(maps.depth[[0, 0]], maps2.depth[[2, 3]]);
        assert_eq!(maps.depth[[2, 3]], maps2.depth[[0, 0]]);
        assert_eq!(maps.depth[[1, 1]], maps2.depth[[1, 1]]);
    }

    #[test]
    fn no_scan_output_is_blockwise_constant() {
        let cfg = ScanConfig {
            bin_width: 0.8e-9,
            n_bins: 60,
            sbr_window: 48e-9,
            ..ScanConfig::default().with_n(2)
        };
        let mean = Array3::from_shape_fn((16, 16, 60), |(i, _, k)| 0.02 + if k == 20 + i / 4 { 5.0 } else { 0.0 });
        let cube = HistogramCube::new(sample_poisson(mean.view(), 2).unwrap(), cfg, 0.02, 2);
        let maps = reconstruct_no_scan(&cube, 4, Some(0.02)).unwrap();
        assert_eq!(maps.dim(), (16, 16));
        for ((i, j), &d) in maps.depth.indexed_iter() {
            assert_eq!(d, maps.depth[[i / 4 * 4, j / 4 * 4]]);
        }
    }
}
