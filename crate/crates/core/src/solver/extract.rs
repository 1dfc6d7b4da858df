use ndarray::{Array2, Zip};

use crate::maps::DepthMaps;
use crate::volume::RdVolume;

/// Per-pixel depth at the argmax bin and reflectivity as the mass within
/// `window_half` bins of it.
///
/// Ties go to the earliest bin. A pixel whose lane is all zero is marked
/// invalid, with zero reflectivity and the depth of bin 0.
pub fn extract_depth_reflectivity(rd: &RdVolume, window_half: usize) -> DepthMaps {
    let [h, w, _] = rd.shape();
    let timing = rd.timing();
    let mut depth = Array2::zeros((h, w));
    let mut reflectivity = Array2::zeros((h, w));
    let mut valid = Array2::from_elem((h, w), false);
    Zip::from(&mut depth)
        .and(&mut reflectivity)
        .and(&mut valid)
        .and(rd.data().lanes(ndarray::Axis(2)))
        .par_for_each(|d, r, ok, lane| {
            let (mut best, mut peak) = (0usize, f64::NEG_INFINITY);
            for (k, &v) in lane.iter().enumerate() {
                if v > peak {
                    peak = v;
                    best = k;
                }
            }
            if peak > 0.0 {
                let lo = best.saturating_sub(window_half);
                let hi = (best + window_half).min(lane.len() - 1);
                *r = lane.slice(ndarray::s![lo..=hi]).sum();
                *d = timing.bin_depth(best);
                *ok = true;
            } else {
                *d = timing.bin_depth(0);
            }
        });
    DepthMaps {
        depth,
        reflectivity,
        valid,
    }
}
