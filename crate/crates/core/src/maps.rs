//! Depth and reflectivity maps, and their 16-bit graymap export.
//!
//! An exported map is a `P5` graymap with `maxval = 65535` plus a JSON file of
//! the same stem. Sample 0 marks an invalid pixel; valid values are mapped
//! linearly from `[min, max]` onto `1..=65535`.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::binfmt::{read_json_file, sidecar_path, write_json_file};
use crate::error::{Error, Result};
use crate::netpbm::{self, Graymap, RasterImage};

/// Per-pixel depth (meters) and reflectivity estimates.
///
/// Pixels without a usable return have `valid = false`, zero reflectivity and
/// the depth of bin 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMaps {
    pub depth: Array2<f64>,
    pub reflectivity: Array2<f64>,
    pub valid: Array2<bool>,
}

impl DepthMaps {
    pub fn dim(&self) -> (usize, usize) {
        self.depth.dim()
    }

    /// Nearest-neighbor upsampling: every pixel becomes a `factor × factor`
    /// block.
    pub fn upsample_nearest(&self, factor: usize) -> DepthMaps {
        let (h, w) = self.dim();
        let up = |a: &Array2<f64>| Array2::from_shape_fn((h * factor, w * factor), |(i, j)| a[[i / factor, j / factor]]);
        DepthMaps {
            depth: up(&self.depth),
            reflectivity: up(&self.reflectivity),
            valid: Array2::from_shape_fn((h * factor, w * factor), |(i, j)| self.valid[[i / factor, j / factor]]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Depth,
    Reflectivity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub kind: MapKind,
    pub units: String,
    pub height: usize,
    pub width: usize,
    pub min: f64,
    pub max: f64,
    pub invalid_value: u16,
}

const LEVELS: f64 = 65534.0;

/// Quantizes `values` where `valid` holds and writes `path` plus its JSON
/// sidecar.
pub fn write_map(path: &Path, values: ArrayView2<f64>, valid: ArrayView2<bool>, kind: MapKind) -> Result<MapMeta> {
    if values.dim() != valid.dim() {
        let (a, b) = (values.dim(), valid.dim());
        return Err(Error::ShapeMismatch {
            expected: vec![a.0, a.1],
            found: vec![b.0, b.1],
        });
    }
    let (h, w) = values.dim();
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    Zip::from(&values).and(&valid).for_each(|&v, &ok| {
        if ok {
            min = min.min(v);
            max = max.max(v);
        }
    });
    if !min.is_finite() {
        min = 0.0;
        max = 0.0;
    }
    let span = max - min;
    let mut samples = Vec::with_capacity(h * w);
    Zip::from(&values).and(&valid).for_each(|&v, &ok| {
        let s = if !ok {
            0
        } else if span > 0.0 {
            1 + ((v - min) / span * LEVELS).round() as u16
        } else {
            1
        };
        samples.push(s);
    });
    netpbm::write_pgm(
        path,
        &Graymap {
            width: w,
            height: h,
            maxval: u16::MAX,
            samples,
        },
    )?;
    let meta = MapMeta {
        kind,
        units: match kind {
            MapKind::Depth => "m".into(),
            MapKind::Reflectivity => "relative".into(),
        },
        height: h,
        width: w,
        min,
        max,
        invalid_value: 0,
    };
    write_json_file(&sidecar_path(path), &meta)?;
    Ok(meta)
}

/// Reads a map written by [`write_map`], returning dequantized values and the
/// validity mask.
pub fn read_map(path: &Path) -> Result<(Array2<f64>, Array2<bool>, MapMeta)> {
    let meta: MapMeta = read_json_file(&sidecar_path(path))?;
    let RasterImage::Gray(g) = netpbm::read_image(path)? else {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            reason: "maps are 16-bit graymaps".into(),
        });
    };
    if (g.height, g.width) != (meta.height, meta.width) {
        return Err(Error::malformed(path, "graymap size disagrees with sidecar"));
    }
    let span = meta.max - meta.min;
    let values = g
        .samples
        .iter()
        .map(|&s| {
            if s == meta.invalid_value {
                0.0
            } else {
                meta.min + (s - 1) as f64 / LEVELS * span
            }
        })
        .collect();
    let valid = g.samples.iter().map(|&s| s != meta.invalid_value).collect();
    let shape = (g.height, g.width);
    Ok((
        Array2::from_shape_vec(shape, values).expect("sized"),
        Array2::from_shape_vec(shape, valid).expect("sized"),
        meta,
    ))
}

/// Writes `depth.pgm` and `reflectivity.pgm` (with sidecars) into `dir`.
pub fn write_maps(dir: &Path, prefix: &str, maps: &DepthMaps) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_map(
        &dir.join(format!("{prefix}depth.pgm")),
        maps.depth.view(),
        maps.valid.view(),
        MapKind::Depth,
    )?;
    write_map(
        &dir.join(format!("{prefix}reflectivity.pgm")),
        maps.reflectivity.view(),
        maps.valid.view(),
        MapKind::Reflectivity,
    )?;
    Ok(())
}
