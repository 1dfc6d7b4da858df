use ndarray::{ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::ChartLayout;

/// Minimum bar contrast for a group to count as resolved.
pub const RESOLVED_CONTRAST: f64 = 0.2;

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            expected: vec![a.0, a.1],
            found: vec![b.0, b.1],
        });
    }
    Ok(())
}

/// Root mean square of `estimate − truth` over pixels where `mask` holds.
pub fn rmse(estimate: ArrayView2<f64>, truth: ArrayView2<f64>, mask: ArrayView2<bool>) -> Result<f64> {
    check_dims(truth.dim(), estimate.dim())?;
    check_dims(truth.dim(), mask.dim())?;
    let (mut sum, mut n) = (0.0, 0usize);
    Zip::from(&estimate).and(&truth).and(&mask).for_each(|&e, &t, &m| {
        if m {
            sum += (e - t) * (e - t);
            n += 1;
        }
    });
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((sum / n as f64).sqrt())
}

/// Depth RMSE in meters and in time bins of `bin_width` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthError {
    pub meters: f64,
    pub bins: f64,
}

pub fn depth_rmse(estimate: ArrayView2<f64>, truth: ArrayView2<f64>, mask: ArrayView2<bool>, bin_width: f64) -> Result<DepthError> {
    let meters = rmse(estimate, truth, mask)?;
    Ok(DepthError {
        meters,
        bins: meters / crate::time_to_depth(bin_width),
    })
}

/// Michelson-style contrast `(bar − space) / (bar + space)` of mean
/// reflectivity per group, clamped to `[0, 1]`.
pub fn bar_contrast(reflectivity: ArrayView2<f64>, layout: &ChartLayout) -> Result<Vec<f64>> {
    check_dims((layout.height, layout.width), reflectivity.dim())?;
    let mean = |rects: &[crate::scene::Rect]| {
        let (mut sum, mut n) = (0.0, 0usize);
        for r in rects {
            for (i, j) in r.pixels() {
                sum += reflectivity[[i, j]];
                n += 1;
            }
        }
        sum / n as f64
    };
    let mut out = Vec::with_capacity(layout.groups.len());
    for g in &layout.groups {
        let b = g.bounds();
        if b.top + b.height > layout.height || b.left + b.width > layout.width {
            return Err(Error::param("chart layout", format!("group {g:?} exceeds the chart")));
        }
        let (bar, space) = (mean(&g.bars()), mean(&g.spaces()));
        let c = if bar + space > 0.0 {
            ((bar - space) / (bar + space)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(c);
    }
    Ok(out)
}

pub fn resolved_groups(contrasts: &[f64]) -> usize {
    contrasts.iter().filter(|&&c| c >= RESOLVED_CONTRAST).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{convolve3d, make_kernel, ScanConfig};
    use crate::scene::make_resolution_chart;
    use ndarray::{Array2, Array3};

    #[test]
    fn rmse_examples() {
        let truth = Array2::zeros((2, 2));
        let est = Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 3.0, 4.0]).unwrap();
        let all = Array2::from_elem((2, 2), true);
        assert_eq!(rmse(est.view(), truth.view(), all.view()).unwrap(), 2.5);
        assert_eq!(rmse(truth.view(), truth.view(), all.view()).unwrap(), 0.0);
        let shifted = &truth + 0.7;
        assert!((rmse(shifted.view(), truth.view(), all.view()).unwrap() - 0.7).abs() < 1e-15);
        let none = Array2::from_elem((2, 2), false);
        assert!(matches!(rmse(est.view(), truth.view(), none.view()), Err(Error::EmptyMask)));
        assert!(rmse(est.view(), Array2::zeros((2, 3)).view(), all.view()).is_err());
    }

    #[test]
    fn rmse_in_bins() {
        let truth = Array2::zeros((1, 1));
        let est = Array2::from_elem((1, 1), crate::time_to_depth(2e-9));
        let e = depth_rmse(est.view(), truth.view(), Array2::from_elem((1, 1), true).view(), 1e-9).unwrap();
        assert!((e.bins - 2.0).abs() < 1e-12);
    }

    #[test]
    fn binary_chart_and_gray_map() {
        let chart = make_resolution_chart();
        let layout = ChartLayout::resolution_chart();
        assert!(bar_contrast(chart.reflectivity(), &layout).unwrap().iter().all(|&c| c == 1.0));
        let gray = Array2::from_elem((120, 128), 0.4);
        assert!(bar_contrast(gray.view(), &layout).unwrap().iter().all(|&c| c < 1e-12));
        assert!(bar_contrast(Array2::zeros((10, 10)).view(), &layout).is_err());
    }

    /// Direct 2D "same" convolution with zero padding.
    fn blur(img: &Array2<f64>, k: ArrayView2<f64>) -> Array2<f64> {
        let (h, w) = img.dim();
        let half = (k.nrows() / 2) as isize;
        Array2::from_shape_fn((h, w), |(i, j)| {
            let mut acc = 0.0;
            for a in -half..=half {
                for b in -half..=half {
                    let (si, sj) = (i as isize - a, j as isize - b);
                    if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                        acc += k[[(a + half) as usize, (b + half) as usize]] * img[[si as usize, sj as usize]];
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn blur_oracle_matches_forward_model_contrast() {
        let chart = make_resolution_chart();
        let layout = ChartLayout::resolution_chart();
        let kernel = make_kernel(&ScanConfig::default().with_n(2)).unwrap();
        let direct = blur(&chart.reflectivity().to_owned(), kernel.spatial());
        let oracle = bar_contrast(direct.view(), &layout).unwrap();
        assert!(oracle[0] >= RESOLVED_CONTRAST);
        assert!(oracle[5] < RESOLVED_CONTRAST);

        let vol = chart.reflectivity().to_owned().into_shape_with_order((120, 128, 1)).unwrap();
        let spatial_only = crate::forward::Kernel::new(kernel.spatial().to_owned(), ndarray::arr1(&[1.0])).unwrap();
        let fast: Array3<f64> = convolve3d(&spatial_only, vol.view(), 0.0).unwrap();
        let fast = fast.into_shape_with_order((120, 128)).unwrap();
        let got = bar_contrast(fast.view(), &layout).unwrap();
        for (a, b) in got.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn counts_resolved_groups() {
        assert_eq!(resolved_groups(&[1.0, 0.2, 0.19999, 0.0]), 2);
    }
}
