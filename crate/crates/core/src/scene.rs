//! Ground-truth scenes and their RD-volume representation.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::netpbm::{self, FloatMap, Graymap, RasterImage};
use crate::volume::{BinTiming, RdVolume};

/// Per-pixel reflectivity (unitless, `≥ 0`) and depth (meters) on the fine grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    reflectivity: Array2<f64>,
    depth: Array2<f64>,
}

impl Scene {
    pub fn new(reflectivity: Array2<f64>, depth: Array2<f64>) -> Result<Self> {
        if reflectivity.dim() != depth.dim() {
            let (a, b) = (reflectivity.dim(), depth.dim());
            return Err(Error::ShapeMismatch {
                expected: vec![a.0, a.1],
                found: vec![b.0, b.1],
            });
        }
        if reflectivity.is_empty() {
            return Err(Error::param("scene", "must have at least one pixel"));
        }
        if let Some(r) = reflectivity.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::param("reflectivity", format!("must be finite and >= 0, found {r}")));
        }
        if let Some(d) = depth.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::param("depth", format!("must be finite and >= 0, found {d}")));
        }
        Ok(Self { reflectivity, depth })
    }

    pub fn height(&self) -> usize {
        self.reflectivity.nrows()
    }

    pub fn width(&self) -> usize {
        self.reflectivity.ncols()
    }

    pub fn reflectivity(&self) -> ArrayView2<'_, f64> {
        self.reflectivity.view()
    }

    pub fn depth(&self) -> ArrayView2<'_, f64> {
        self.depth.view()
    }

    /// Pixels that carry a return (`reflectivity > 0`).
    pub fn foreground_mask(&self) -> Array2<bool> {
        self.reflectivity.mapv(|r| r > 0.0)
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Scene> {
        if height == 0 || width == 0 || top + height > self.height() || left + width > self.width() {
            return Err(Error::param(
                "crop",
                format!(
                    "window {height}x{width} at ({top}, {left}) exceeds scene {}x{}",
                    self.height(),
                    self.width()
                ),
            ));
        }
        let win = s![top..top + height, left..left + width];
        Scene::new(
            self.reflectivity.slice(win).to_owned(),
            self.depth.slice(win).to_owned(),
        )
    }

    /// Hex SHA-256 over the dimensions and the little-endian bytes of both grids.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.height() as u64).to_le_bytes());
        h.update((self.width() as u64).to_le_bytes());
        for v in self.reflectivity.iter().chain(self.depth.iter()) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.top..self.top + self.height)
            .flat_map(move |i| (self.left..self.left + self.width).map(move |j| (i, j)))
    }
}

/// One square bar group: three vertical bars separated by two spaces, all
/// `feature` pixels wide and `5 · feature` pixels tall.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarGroup {
    pub top: usize,
    pub left: usize,
    pub feature: usize,
}

impl BarGroup {
    fn stripe(&self, idx: usize) -> Rect {
        Rect {
            top: self.top,
            left: self.left + idx * self.feature,
            height: 5 * self.feature,
            width: self.feature,
        }
    }

    pub fn bars(&self) -> [Rect; 3] {
        [self.stripe(0), self.stripe(2), self.stripe(4)]
    }

    pub fn spaces(&self) -> [Rect; 2] {
        [self.stripe(1), self.stripe(3)]
    }

    pub fn bounds(&self) -> Rect {
        Rect {
            top: self.top,
            left: self.left,
            height: 5 * self.feature,
            width: 5 * self.feature,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartLayout {
    pub height: usize,
    pub width: usize,
    /// Ordered from the widest features to the narrowest.
    pub groups: Vec<BarGroup>,
}

pub const CHART_HEIGHT: usize = 120;
pub const CHART_WIDTH: usize = 128;

impl ChartLayout {
    /// The 120×128 resolution chart: feature widths 6, 5, 4 along the top row
    /// and 3, 2, 1 along the bottom row. Groups sit 16 px apart horizontally and
    /// 25 px apart vertically, so a 9×9 footprint never straddles two groups.
    pub fn resolution_chart() -> Self {
        let g = |top, left, feature| BarGroup { top, left, feature };
        ChartLayout {
            height: CHART_HEIGHT,
            width: CHART_WIDTH,
            groups: vec![
                g(20, 10, 6),
                g(20, 56, 5),
                g(20, 97, 4),
                g(75, 10, 3),
                g(75, 41, 2),
                g(75, 67, 1),
            ],
        }
    }
}

/// Foreground/background depths and background reflectivity for the chart.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChartParams {
    pub foreground_depth: f64,
    pub background_depth: f64,
    pub background_reflectivity: f64,
}

impl Default for ChartParams {
    /// 6 m bars over a 7.5 m backdrop: 10 ns apart, i.e. 25 bins at 0.4 ns.
    fn default() -> Self {
        Self {
            foreground_depth: 6.0,
            background_depth: 7.5,
            background_reflectivity: 0.0,
        }
    }
}

pub fn make_resolution_chart() -> Scene {
    make_resolution_chart_with(&ChartParams::default()).expect("default chart parameters are valid")
}

pub fn make_resolution_chart_with(params: &ChartParams) -> Result<Scene> {
    let layout = ChartLayout::resolution_chart();
    let shape = (layout.height, layout.width);
    let mut reflectivity = Array2::from_elem(shape, params.background_reflectivity);
    let mut depth = Array2::from_elem(shape, params.background_depth);
    for group in &layout.groups {
        for bar in group.bars() {
            for (i, j) in bar.pixels() {
                reflectivity[[i, j]] = 1.0;
                depth[[i, j]] = params.foreground_depth;
            }
        }
    }
    Scene::new(reflectivity, depth)
}

/// How raw depth-image values become meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DepthMapping {
    /// Normalized pixel values in `[0, 1]` map linearly onto `[d_min, d_max]`.
    /// Graymaps normalize by `maxval`, float maps by their own value range.
    Affine { d_min: f64, d_max: f64 },
    /// Float-map values are already meters.
    Metric,
}

/// Loads a scene from a reflectivity image and a depth image.
///
/// Reflectivity graymaps are divided by `maxval`; float reflectivity maps are
/// divided by their maximum when it exceeds 1.
pub fn load_scene(reflectivity_path: &Path, depth_path: &Path, mapping: DepthMapping) -> Result<Scene> {
    let refl_img = netpbm::read_image(reflectivity_path)?;
    let depth_img = netpbm::read_image(depth_path)?;
    if refl_img.dims() != depth_img.dims() {
        let (a, b) = (refl_img.dims(), depth_img.dims());
        return Err(Error::ShapeMismatch {
            expected: vec![a.0, a.1],
            found: vec![b.0, b.1],
        });
    }
    let (h, w) = refl_img.dims();
    let reflectivity = match refl_img {
        RasterImage::Gray(g) => {
            let m = g.maxval as f64;
            g.samples.iter().map(|&v| v as f64 / m).collect::<Vec<_>>()
        }
        RasterImage::Float(f) => {
            let vals = checked_floats(&f, reflectivity_path, "reflectivity")?;
            let max = vals.iter().cloned().fold(0.0, f64::max);
            let norm = if max > 1.0 { max } else { 1.0 };
            vals.into_iter().map(|v| v / norm).collect()
        }
    };
    let depth = match (depth_img, mapping) {
        (RasterImage::Gray(g), DepthMapping::Affine { d_min, d_max }) => {
            check_range(d_min, d_max)?;
            let m = g.maxval as f64;
            g.samples
                .iter()
                .map(|&v| d_min + (v as f64 / m) * (d_max - d_min))
                .collect::<Vec<_>>()
        }
        (RasterImage::Gray(_), DepthMapping::Metric) => {
            return Err(Error::UnsupportedFormat {
                path: depth_path.into(),
                reason: "graymap depth needs an affine [d_min, d_max] mapping".into(),
            })
        }
        (RasterImage::Float(f), DepthMapping::Affine { d_min, d_max }) => {
            check_range(d_min, d_max)?;
            let vals = checked_floats(&f, depth_path, "depth")?;
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            vals.into_iter()
                .map(|v| {
                    let u = if span > 0.0 { (v - lo) / span } else { 0.0 };
                    d_min + u * (d_max - d_min)
                })
                .collect()
        }
        (RasterImage::Float(f), DepthMapping::Metric) => checked_floats(&f, depth_path, "depth")?,
    };
    Scene::new(
        Array2::from_shape_vec((h, w), reflectivity).expect("dimensions checked"),
        Array2::from_shape_vec((h, w), depth).expect("dimensions checked"),
    )
}

fn check_range(d_min: f64, d_max: f64) -> Result<()> {
    if !(d_min.is_finite() && d_max.is_finite() && 0.0 <= d_min && d_min <= d_max) {
        return Err(Error::param(
            "depth range",
            format!("need 0 <= d_min <= d_max, got [{d_min}, {d_max}]"),
        ));
    }
    Ok(())
}

fn checked_floats(f: &FloatMap, path: &Path, what: &str) -> Result<Vec<f64>> {
    f.data
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                Err(Error::malformed(path, format!("non-finite {what} value")))
            } else if v < 0.0 {
                Err(Error::malformed(path, format!("negative {what} value {v}")))
            } else {
                Ok(v as f64)
            }
        })
        .collect()
}

/// Places each pixel's reflectivity at its depth bin,
/// `k = round((2·depth/c − t0) / bin_width)` with halves rounding up.
pub fn scene_to_rd(scene: &Scene, bin_width: f64, n_bins: usize, t0: f64) -> Result<RdVolume> {
    let timing = BinTiming::new(bin_width, t0)?;
    if n_bins == 0 {
        return Err(Error::param("n_bins", "must be at least 1"));
    }
    let (h, w) = (scene.height(), scene.width());
    let mut data = Array3::zeros((h, w, n_bins));
    for ((i, j), &d) in scene.depth.indexed_iter() {
        let pos = (crate::depth_to_time(d) - t0) / bin_width;
        let k = (pos + 0.5).floor();
        if !(pos >= 0.0 && k < n_bins as f64) {
            return Err(Error::DepthOutOfWindow {
                row: i,
                col: j,
                depth: d,
                bin: pos,
                n_bins,
            });
        }
        data[[i, j, k as usize]] = scene.reflectivity[[i, j]];
    }
    RdVolume::new(data, timing)
}

/// Sidecar metadata of a scene directory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub bin_width: f64,
    pub t0: f64,
    pub d_min: f64,
    pub d_max: f64,
}

pub const REFLECTIVITY_FILE: &str = "reflectivity.pgm";
pub const DEPTH_FILE: &str = "depth.pfm";
pub const META_FILE: &str = "meta.json";

/// Writes `{reflectivity.pgm, depth.pfm, meta.json}` into `dir`, creating it.
///
/// Reflectivity is quantized to 16 bits, depth stored as f32 meters.
pub fn save_scene_dir(dir: &Path, scene: &Scene, meta: &SceneMeta) -> Result<()> {
    if let Some(r) = scene.reflectivity.iter().find(|&&r| r > 1.0) {
        return Err(Error::param("reflectivity", format!("must be <= 1 to store as graymap, found {r}")));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let refl = Graymap {
        width: scene.width(),
        height: scene.height(),
        maxval: u16::MAX,
        samples: scene
            .reflectivity
            .iter()
            .map(|&r| (r * u16::MAX as f64).round() as u16)
            .collect(),
    };
    let depth = FloatMap {
        width: scene.width(),
        height: scene.height(),
        data: scene.depth.iter().map(|&d| d as f32).collect(),
    };
    netpbm::write_pgm(&dir.join(REFLECTIVITY_FILE), &refl)?;
    netpbm::write_pfm(&dir.join(DEPTH_FILE), &depth)?;
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_vec_pretty(meta).map_err(|e| Error::Json {
        path: meta_path.clone(),
        source: e,
    })?;
    netpbm::write_bytes(&meta_path, &json)
}

pub fn load_scene_dir(dir: &Path) -> Result<(Scene, SceneMeta)> {
    let meta_path = dir.join(META_FILE);
    let bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SceneMeta = serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: meta_path,
        source: e,
    })?;
    let scene = load_scene(&dir.join(REFLECTIVITY_FILE), &dir.join(DEPTH_FILE), DepthMapping::Metric)?;
    Ok((scene, meta))
}

impl SceneMeta {
    /// Metadata with the depth range taken from the scene itself.
    pub fn for_scene(scene: &Scene, bin_width: f64, t0: f64) -> Self {
        let d_min = scene.depth.iter().cloned().fold(f64::INFINITY, f64::min);
        let d_max = scene.depth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self {
            bin_width,
            t0,
            d_min,
            d_max,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SPEED_OF_LIGHT;

    #[test]
    fn chart_dimensions_and_feature_widths() {
        let chart = make_resolution_chart();
        assert_eq!((chart.height(), chart.width()), (120, 128));
        let layout = ChartLayout::resolution_chart();
        let widths: Vec<_> = layout.groups.iter().map(|g| g.feature).collect();
        assert_eq!(widths, vec![6, 5, 4, 3, 2, 1]);
    }

    #[test]
    fn chart_groups_fit_and_do_not_overlap() {
        let layout = ChartLayout::resolution_chart();
        for (a, ga) in layout.groups.iter().enumerate() {
            let ba = ga.bounds();
            assert!(ba.top + ba.height <= layout.height && ba.left + ba.width <= layout.width);
            for gb in &layout.groups[a + 1..] {
                let bb = gb.bounds();
                let disjoint = ba.left + ba.width <= bb.left
                    || bb.left + bb.width <= ba.left
                    || ba.top + ba.height <= bb.top
                    || bb.top + bb.height <= ba.top;
                assert!(disjoint, "{ga:?} overlaps {gb:?}");
            }
        }
    }

    #[test]
    fn bar_pixel_count_matches_independent_painting() {
        // Repaint from literal coordinates: (top, left, feature) per group,
        // bars at stripe offsets 0, 2, 4.
        let literal = [(20, 10, 6), (20, 56, 5), (20, 97, 4), (75, 10, 3), (75, 41, 2), (75, 67, 1)];
        let mut painted = vec![vec![false; 128]; 120];
        for (top, left, w) in literal {
            for stripe in [0usize, 2, 4] {
                for row in painted.iter_mut().skip(top).take(5 * w) {
                    for px in row.iter_mut().skip(left + stripe * w).take(w) {
                        *px = true;
                    }
                }
            }
        }
        let oracle = painted.iter().flatten().filter(|&&p| p).count();
        assert_eq!(oracle, 1365);
        let chart = make_resolution_chart();
        assert_eq!(chart.reflectivity().iter().filter(|&&r| r > 0.0).count(), oracle);
    }

    #[test]
    fn chart_is_deterministic_and_depths_separated() {
        assert_eq!(make_resolution_chart(), make_resolution_chart());
        let p = ChartParams::default();
        let sep_bins = (crate::depth_to_time(p.background_depth) - crate::depth_to_time(p.foreground_depth)) / 0.4e-9;
        assert!(sep_bins >= 10.0);
    }

    #[test]
    fn scene_rejects_mismatch_and_negative_reflectivity() {
        assert!(Scene::new(Array2::zeros((2, 2)), Array2::zeros((2, 3))).is_err());
        assert!(Scene::new(Array2::from_elem((1, 1), -0.1), Array2::zeros((1, 1))).is_err());
    }

    #[test]
    fn depth_zero_lands_in_bin_zero() {
        let scene = Scene::new(Array2::ones((1, 1)), Array2::zeros((1, 1))).unwrap();
        let rd = scene_to_rd(&scene, 100e-12, 16, 0.0).unwrap();
        assert_eq!(rd.data()[[0, 0, 0]], 1.0);
    }

    #[test]
    fn one_nanosecond_is_bin_ten_at_100ps() {
        let d = 0.5e-9 * SPEED_OF_LIGHT;
        let scene = Scene::new(Array2::ones((1, 1)), Array2::from_elem((1, 1), d)).unwrap();
        let rd = scene_to_rd(&scene, 100e-12, 32, 0.0).unwrap();
        assert_eq!(rd.data()[[0, 0, 10]], 1.0);
        assert_eq!(rd.data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn rounding_is_half_up() {
        // 2.5 bins rounds to 3
        let d = crate::time_to_depth(2.5 * 1e-9);
        let scene = Scene::new(Array2::ones((1, 1)), Array2::from_elem((1, 1), d)).unwrap();
        let rd = scene_to_rd(&scene, 1e-9, 8, 0.0).unwrap();
        assert_eq!(rd.data()[[0, 0, 3]], 1.0);
    }

    #[test]
    fn out_of_window_names_pixel() {
        let mut depth = Array2::zeros((2, 3));
        depth[[1, 2]] = 100.0;
        let scene = Scene::new(Array2::ones((2, 3)), depth).unwrap();
        match scene_to_rd(&scene, 1e-9, 10, 0.0) {
            Err(Error::DepthOutOfWindow { row: 1, col: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        // before t0 is out of window too
        let scene = Scene::new(Array2::ones((1, 1)), Array2::zeros((1, 1))).unwrap();
        assert!(scene_to_rd(&scene, 1e-9, 10, 1e-9).is_err());
    }

    #[test]
    fn zero_reflectivity_pixels_have_no_nonzero() {
        let chart = make_resolution_chart();
        let rd = scene_to_rd(&chart, 0.4e-9, 250, 0.0).unwrap();
        for ((i, j), &r) in chart.reflectivity().indexed_iter() {
            let nz = (0..250).filter(|&k| rd.data()[[i, j, k]] != 0.0).count();
            assert_eq!(nz, usize::from(r > 0.0));
        }
    }

    #[test]
    fn crop_checks_bounds() {
        let chart = make_resolution_chart();
        let c = chart.crop(20, 10, 30, 30).unwrap();
        assert_eq!(c.reflectivity()[[0, 0]], 1.0);
        assert!(chart.crop(100, 0, 30, 10).is_err());
    }
}
