//! Simulation sweeps: for every `(ppp, seed)` cell, simulate a cube from the
//! scene, reconstruct it with each method, and score the maps against the
//! ground truth.
//!
//! Output layout under the chosen directory:
//!
//! ```text
//! scene/                     ground truth (reflectivity.pgm, depth.pfm, meta.json)
//! ppp{P}_seed{S}/cube.sph    simulated counts (+ cube.json)
//! ppp{P}_seed{S}/{method}_depth.pgm, {method}_reflectivity.pgm (+ .json)
//! ppp{P}_seed{S}/deconv3d_report.json
//! results.csv                one row per method × ppp × seed, sorted
//! manifest.json              effective spec and content hashes
//! ```
//!
//! All of it is a pure function of the spec. Wall-clock timings are returned
//! separately and only written on request (see [`write_timings`]).

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{bar_contrast, depth_rmse, resolved_groups};
use crate::binfmt::{write_cube, write_json_file};
use crate::error::{Error, Result};
use crate::forward::{simulate, ScanConfig};
use crate::maps::{read_map, write_maps, DepthMaps};
use crate::reconstruct::{reconstruct, Method, ReconstructOptions};
use crate::scene::{
    load_scene, load_scene_dir, make_resolution_chart_with, save_scene_dir, ChartLayout, ChartParams, DepthMapping,
    Rect, Scene, SceneMeta,
};
use crate::solver::SolverConfig;

/// Where the ground-truth scene comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSource {
    /// The built-in 120×128 resolution chart.
    Chart(ChartParams),
    /// A reflectivity image and a depth image.
    Files {
        reflectivity: PathBuf,
        depth: PathBuf,
        mapping: DepthMapping,
        #[serde(default)]
        crop: Option<Rect>,
    },
    /// A directory written by `save_scene_dir`.
    Dir {
        path: PathBuf,
        #[serde(default)]
        crop: Option<Rect>,
    },
}

impl SceneSource {
    pub fn load(&self) -> Result<Scene> {
        let (scene, crop) = match self {
            SceneSource::Chart(p) => (make_resolution_chart_with(p)?, None),
            SceneSource::Files {
                reflectivity,
                depth,
                mapping,
                crop,
            } => (load_scene(reflectivity, depth, *mapping)?, *crop),
            SceneSource::Dir { path, crop } => (load_scene_dir(path)?.0, *crop),
        };
        match crop {
            Some(r) => scene.crop(r.top, r.left, r.height, r.width),
            None => Ok(scene),
        }
    }

    /// Chart geometry when the scene is the resolution chart.
    pub fn chart_layout(&self) -> Option<ChartLayout> {
        matches!(self, SceneSource::Chart(_)).then(ChartLayout::resolution_chart)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            SceneSource::Chart(_) => {}
            SceneSource::Files {
                reflectivity, depth, ..
            } => {
                fix(reflectivity);
                fix(depth);
            }
            SceneSource::Dir { path, .. } => fix(path),
        }
    }
}

/// Maps produced elsewhere, scored against the same ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalMaps {
    pub name: String,
    /// Depth map in the 16-bit map format.
    pub depth: PathBuf,
    #[serde(default)]
    pub reflectivity: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub scene: SceneSource,
    #[serde(default)]
    pub scan: ScanConfig,
    pub ppp: Vec<f64>,
    pub sbr: f64,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub external: Vec<ExternalMaps>,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Scan spacing of the no-scan baseline, defaults to `2n`.
    #[serde(default)]
    pub noscan_factor: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_name() -> String {
    "experiment".into()
}

impl ExperimentSpec {
    /// Parses TOML; relative paths are taken relative to `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| Error::param("experiment spec", e.to_string()))?;
        spec.scene.resolve(base_dir);
        for ext in &mut spec.external {
            if ext.depth.is_relative() {
                ext.depth = base_dir.join(&ext.depth);
            }
            if let Some(r) = ext.reflectivity.as_mut().filter(|r| r.is_relative()) {
                *r = base_dir.join(&*r);
            }
        }
        if let Some(out) = spec.output_dir.as_mut().filter(|o| o.is_relative()) {
            *out = base_dir.join(&*out);
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ppp.is_empty() {
            return Err(Error::param("ppp", "at least one value is required"));
        }
        if let Some(p) = self.ppp.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::param("ppp", format!("values must be positive, got {p}")));
        }
        if !(self.sbr > 0.0) {
            return Err(Error::param("sbr", format!("must be positive, got {}", self.sbr)));
        }
        if self.seeds.is_empty() {
            return Err(Error::param("seeds", "at least one seed is required"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("seeds", "seeds must be distinct"));
        }
        if self.methods.is_empty() {
            return Err(Error::param("methods", "at least one method is required"));
        }
        let mut methods = self.methods.clone();
        methods.sort_unstable();
        if methods.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("methods", "methods must be distinct"));
        }
        self.scan.validate()?;
        self.solver.validate()
    }

    fn options(&self) -> ReconstructOptions {
        ReconstructOptions {
            solver: self.solver.clone(),
            background: None,
            noscan_factor: self.noscan_factor,
        }
    }
}

/// One line of `results.csv`. Cells that failed carry `status = "error: …"`
/// and empty metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: String,
    pub ppp: Option<f64>,
    pub sbr: f64,
    pub seed: Option<u64>,
    pub status: String,
    pub rmse_m: Option<f64>,
    pub rmse_bins: Option<f64>,
    /// Fraction of scored pixels with a valid estimate.
    pub valid_fraction: Option<f64>,
    /// Per-group bar contrast, `;`-separated, widest group first.
    pub contrasts: String,
    pub resolved_groups: Option<usize>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub final_objective: Option<f64>,
}

impl ResultRow {
    fn new(method: &str, ppp: Option<f64>, sbr: f64, seed: Option<u64>) -> Self {
        Self {
            method: method.into(),
            ppp,
            sbr,
            seed,
            status: "ok".into(),
            rmse_m: None,
            rmse_bins: None,
            valid_fraction: None,
            contrasts: String::new(),
            resolved_groups: None,
            iterations: None,
            converged: None,
            final_objective: None,
        }
    }

    fn failed(mut self, err: &Error) -> Self {
        self.status = format!("error: {err}");
        self
    }

    /// Parsed per-group contrasts.
    pub fn contrast_values(&self) -> Vec<f64> {
        self.contrasts
            .split(';')
            .filter(|s| !s.is_empty())
            .filter_map(|s| s.parse().ok())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub method: String,
    pub ppp: Option<f64>,
    pub seed: Option<u64>,
    pub simulate_s: f64,
    pub reconstruct_s: f64,
}

#[derive(Clone, Debug, Serialize)]
struct Manifest<'a> {
    generator: String,
    spec: &'a ExperimentSpec,
    spec_sha256: String,
    scene_sha256: String,
    scene_height: usize,
    scene_width: usize,
    columns: Vec<&'static str>,
    cells: Vec<String>,
    rows: usize,
}

pub const RESULT_COLUMNS: [&str; 13] = [
    "method",
    "ppp",
    "sbr",
    "seed",
    "status",
    "rmse_m",
    "rmse_bins",
    "valid_fraction",
    "contrasts",
    "resolved_groups",
    "iterations",
    "converged",
    "final_objective",
];

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub timings: Vec<TimingRow>,
    pub output_dir: PathBuf,
}

impl ExperimentOutcome {
    /// Rows of one method, in `(ppp, seed)` order.
    pub fn rows_for(&self, method: &str) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }
}

fn cell_name(ppp: f64, seed: u64) -> String {
    format!("ppp{ppp}_seed{seed}")
}

struct Truth<'a> {
    scene: &'a Scene,
    mask: Array2<bool>,
    layout: Option<ChartLayout>,
    bin_width: f64,
}

fn score(row: &mut ResultRow, maps: &DepthMaps, truth: &Truth) -> Result<()> {
    let err = depth_rmse(maps.depth.view(), truth.scene.depth(), truth.mask.view(), truth.bin_width)?;
    row.rmse_m = Some(err.meters);
    row.rmse_bins = Some(err.bins);
    let (mut scored, mut valid) = (0usize, 0usize);
    Zip::from(&truth.mask).and(&maps.valid).for_each(|&m, &v| {
        if m {
            scored += 1;
            valid += usize::from(v);
        }
    });
    row.valid_fraction = Some(valid as f64 / scored as f64);
    if let Some(layout) = &truth.layout {
        let c = bar_contrast(maps.reflectivity.view(), layout)?;
        row.contrasts = c.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(";");
        row.resolved_groups = Some(resolved_groups(&c));
    }
    Ok(())
}

/// Runs the sweep into `out_dir` (or the spec's `output_dir`).
pub fn run_experiment(spec: &ExperimentSpec, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| spec.output_dir.clone())
        .ok_or_else(|| Error::param("output_dir", "no output directory given"))?;
    let scene = spec.scene.load()?;
    let truth = Truth {
        scene: &scene,
        mask: scene.foreground_mask(),
        layout: spec.scene.chart_layout(),
        bin_width: spec.scan.bin_width,
    };
    if let Some(layout) = &truth.layout {
        if (layout.height, layout.width) != (scene.height(), scene.width()) {
            return Err(Error::param("scene", "chart layout does not match the scene size"));
        }
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    save_scene_dir(
        &out_dir.join("scene"),
        &scene,
        &SceneMeta::for_scene(&scene, spec.scan.bin_width, spec.scan.t0),
    )?;

    let mut methods = spec.methods.clone();
    methods.sort_unstable();
    let opts = spec.options();
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut cells = Vec::new();
    for &ppp in &spec.ppp {
        for &seed in &spec.seeds {
            let name = cell_name(ppp, seed);
            let dir = out_dir.join(&name);
            cells.push(name);
            let start = Instant::now();
            let cube = simulate(&scene, &spec.scan, ppp, spec.sbr, seed).and_then(|cube| {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_cube(&dir.join("cube.sph"), &cube, serde_json::json!({ "ppp": ppp, "sbr": spec.sbr }))?;
                Ok(cube)
            });
            let simulate_s = start.elapsed().as_secs_f64();
            for &method in &methods {
                let mut row = ResultRow::new(method.name(), Some(ppp), spec.sbr, Some(seed));
                let start = Instant::now();
                let outcome = cube.as_ref().map_err(clone_err).and_then(|cube| {
                    let rec = reconstruct(cube, method, &opts)?;
                    write_maps(&dir, &format!("{method}_"), &rec.maps)?;
                    if let Some(report) = &rec.report {
                        write_json_file(&dir.join(format!("{method}_report.json")), report)?;
                        row.iterations = Some(report.iterations);
                        row.converged = Some(report.converged);
                        row.final_objective = report.objective_trace.last().copied();
                    }
                    score(&mut row, &rec.maps, &truth)
                });
                if let Err(e) = outcome {
                    row = row.failed(&e);
                }
                timings.push(TimingRow {
                    method: method.name().into(),
                    ppp: Some(ppp),
                    seed: Some(seed),
                    simulate_s,
                    reconstruct_s: start.elapsed().as_secs_f64(),
                });
                rows.push(row);
            }
        }
    }
    for ext in &spec.external {
        let mut row = ResultRow::new(&ext.name, None, spec.sbr, None);
        let outcome = (|| {
            let (depth, valid, _) = read_map(&ext.depth)?;
            let reflectivity = match &ext.reflectivity {
                Some(p) => read_map(p)?.0,
                None => Array2::zeros(depth.dim()),
            };
            let maps = DepthMaps {
                depth,
                reflectivity,
                valid,
            };
            score(&mut row, &maps, &truth)
        })();
        if let Err(e) = outcome {
            row = row.failed(&e);
        }
        rows.push(row);
    }

    let order = |r: &ResultRow| (r.ppp.map(f64::to_bits), r.seed, r.method.clone());
    rows.sort_by_key(order);
    timings.sort_by_key(|t| (t.ppp.map(f64::to_bits), t.seed, t.method.clone()));

    write_csv(&out_dir.join("results.csv"), &rows)?;
    let spec_json = serde_json::to_vec(spec).map_err(|e| Error::Json {
        path: out_dir.join("manifest.json"),
        source: e,
    })?;
    let manifest = Manifest {
        generator: format!("photonsr {}", env!("CARGO_PKG_VERSION")),
        spec,
        spec_sha256: hex::encode(Sha256::digest(&spec_json)),
        scene_sha256: scene.content_hash(),
        scene_height: scene.height(),
        scene_width: scene.width(),
        columns: RESULT_COLUMNS.to_vec(),
        cells,
        rows: rows.len(),
    };
    write_json_file(&out_dir.join("manifest.json"), &manifest)?;
    Ok(ExperimentOutcome {
        rows,
        timings,
        output_dir: out_dir,
    })
}

pub fn write_timings(path: &Path, rows: &[TimingRow]) -> Result<()> {
    write_csv(path, rows)
}

/// Errors are not `Clone`; per-method rows only need the message.
fn clone_err(e: &Error) -> Error {
    Error::param("simulation", e.to_string())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::malformed(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::malformed(path, e.to_string()))?;
    crate::netpbm::write_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"
name = "tiny"
ppp = [5.0]
sbr = 1.0
seeds = [1]
methods = ["ml"]

[scene]
kind = "chart"

[scan]
n = 1
bin_width = 0.8e-9
n_bins = 125
"#;

    #[test]
    fn parses_minimal_spec_with_defaults() {
        let spec = ExperimentSpec::from_toml_str(SPEC, Path::new("/base")).unwrap();
        assert_eq!(spec.scan.fov_fwhm_pixels, 2.0);
        assert_eq!(spec.solver, SolverConfig::default());
        assert!(matches!(spec.scene, SceneSource::Chart(p) if p == ChartParams::default()));
        spec.validate().unwrap();
    }

    #[test]
    fn resolves_relative_paths() {
        let text = SPEC.replace(
            "kind = \"chart\"",
            "kind = \"dir\"\npath = \"scenes/a\"\ncrop = { top = 0, left = 0, height = 8, width = 8 }",
        );
        let spec = ExperimentSpec::from_toml_str(&text, Path::new("/base")).unwrap();
        let SceneSource::Dir { path, crop } = spec.scene else { panic!() };
        assert_eq!(path, Path::new("/base/scenes/a"));
        assert_eq!(crop.unwrap().height, 8);
    }

    #[test]
    fn validation_rejects_bad_grids() {
        let spec = ExperimentSpec::from_toml_str(SPEC, Path::new(".")).unwrap();
        let empty = ExperimentSpec {
            methods: vec![],
            ..spec.clone()
        };
        assert!(empty.validate().is_err());
        let dup = ExperimentSpec {
            seeds: vec![3, 3],
            ..spec.clone()
        };
        assert!(dup.validate().is_err());
        let neg = ExperimentSpec {
            ppp: vec![1.0, 0.0],
            ..spec
        };
        assert!(neg.validate().is_err());
        assert!(ExperimentSpec::from_toml_str("ppp = [1.0]\nbogus = 1", Path::new(".")).is_err());
    }
}
