//! Map rendering to 8-bit PNG.

use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use image::{Rgb, RgbImage};
use ndarray::Array2;
use photonsr::maps::read_map;

/// Color for pixels without an estimate.
pub const INVALID_COLOR: [u8; 3] = [255, 0, 255];

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Colormap {
    Gray,
    Viridis,
}

// Viridis sampled at nine evenly spaced points.
const VIRIDIS: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 122.0],
    [59.0, 81.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 144.0, 141.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

impl Colormap {
    /// Color of `t ∈ [0, 1]`.
    pub fn color(self, t: f64) -> [u8; 3] {
        let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
        match self {
            Colormap::Gray => {
                let v = (t * 255.0).round() as u8;
                [v, v, v]
            }
            Colormap::Viridis => {
                let x = t * (VIRIDIS.len() - 1) as f64;
                let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
                let f = x - i as f64;
                let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
                [0, 1, 2].map(|c| (a[c] + f * (b[c] - a[c])).round() as u8)
            }
        }
    }
}

/// Colors `values`; the range defaults to the extent of valid pixels and a
/// degenerate range renders every valid pixel at the low end.
pub fn colorize(values: &Array2<f64>, valid: &Array2<bool>, map: Colormap, range: Option<(f64, f64)>) -> RgbImage {
    let (h, w) = values.dim();
    let (lo, hi) = range.unwrap_or_else(|| {
        values
            .iter()
            .zip(valid)
            .filter(|(_, &ok)| ok)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)))
    });
    let span = hi - lo;
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let idx = [y as usize, x as usize];
        if !valid[idx] {
            return Rgb(INVALID_COLOR);
        }
        let t = if span > 0.0 { (values[idx] - lo) / span } else { 0.0 };
        Rgb(map.color(t))
    })
}

pub fn run(map_path: &Path, out: &Path, map: Colormap, range: Option<(f64, f64)>) -> Result<()> {
    let (values, valid, meta) = read_map(map_path)?;
    let img = colorize(&values, &valid, map, range);
    img.save_with_format(out, image::ImageFormat::Png)
        .with_context(|| format!("writing {}", out.display()))?;
    println!("rendered {:?} map {}x{} to {}", meta.kind, meta.width, meta.height, out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(Colormap::Gray.color(0.0), [0, 0, 0]);
        assert_eq!(Colormap::Gray.color(1.0), [255, 255, 255]);
        assert_eq!(Colormap::Viridis.color(0.0), [68, 1, 84]);
        assert_eq!(Colormap::Viridis.color(1.0), [253, 231, 37]);
        assert_eq!(Colormap::Viridis.color(f64::NAN), [68, 1, 84]);
    }

    #[test]
    fn constant_map_is_uniform_and_invalid_is_marked() {
        let values = Array2::from_elem((3, 4), 2.5);
        let mut valid = Array2::from_elem((3, 4), true);
        valid[[1, 2]] = false;
        let img = colorize(&values, &valid, Colormap::Viridis, None);
        assert_eq!(img.get_pixel(2, 1).0, INVALID_COLOR);
        let first = img.get_pixel(0, 0).0;
        assert!(img.enumerate_pixels().filter(|(x, y, _)| (*x, *y) != (2, 1)).all(|(_, _, p)| p.0 == first));
    }
}
