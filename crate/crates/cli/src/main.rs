//! `photonsr`: simulate sub-pixel scanned single-photon LiDAR data,
//! reconstruct depth and reflectivity, render maps, and run sweeps.
//!
//! Exit status is 0 on success, 1 when a command fails at runtime and 2 for
//! usage errors.

mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use photonsr::binfmt::{read_cube, write_cube, write_volume};
use photonsr::eval::experiment::RESULT_COLUMNS;
use photonsr::eval::{run_experiment, write_timings, ExperimentSpec};
use photonsr::forward::{make_kernel, simulate};
use photonsr::maps::write_maps;
use photonsr::reconstruct::{reconstruct, Method, ReconstructOptions};
use photonsr::scene::{
    load_scene, load_scene_dir, make_resolution_chart_with, save_scene_dir, ChartParams, DepthMapping, SceneMeta,
};
use photonsr::ScanConfig;

#[derive(Parser)]
#[command(name = "photonsr", version, about = "Sub-pixel scanned single-photon LiDAR simulation and reconstruction")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a ground-truth scene directory.
    #[command(subcommand)]
    MakeScene(SceneKind),
    /// Simulate a photon-count cube from a scene directory.
    Simulate(SimulateArgs),
    /// Reconstruct depth and reflectivity maps from a cube.
    Reconstruct(ReconstructArgs),
    /// Render a map to an 8-bit PNG.
    Render(RenderArgs),
    /// Run a sweep described by a TOML spec.
    Experiment(ExperimentArgs),
}

#[derive(Subcommand)]
enum SceneKind {
    /// The 120×128 resolution chart.
    Chart {
        #[arg(short, long)]
        output: PathBuf,
        /// Depth of the bars, meters.
        #[arg(long, default_value_t = ChartParams::default().foreground_depth)]
        fg_depth: f64,
        /// Depth of the backdrop, meters.
        #[arg(long, default_value_t = ChartParams::default().background_depth)]
        bg_depth: f64,
        #[arg(long, default_value_t = ChartParams::default().background_reflectivity)]
        bg_reflectivity: f64,
    },
    /// A scene from a reflectivity image and a depth image (PGM or PFM).
    FromFiles {
        #[arg(long)]
        reflectivity: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        /// Depth image values are meters (float maps only).
        #[arg(long, conflicts_with_all = ["d_min", "d_max"])]
        metric: bool,
        /// Depth for the smallest normalized value, meters.
        #[arg(long, requires = "d_max", required_unless_present = "metric")]
        d_min: Option<f64>,
        #[arg(long, requires = "d_min", required_unless_present = "metric")]
        d_max: Option<f64>,
        /// Crop window `top,left,height,width`.
        #[arg(long, value_parser = parse_crop)]
        crop: Option<[usize; 4]>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene directory written by `make-scene`.
    #[arg(long)]
    scene: PathBuf,
    /// Output cube (`.sph`); a `.json` sidecar is written next to it.
    #[arg(short, long)]
    output: PathBuf,
    /// TOML file with a `[scan]` table and optional `ppp`, `sbr`, `seed`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sub-pixel half-width; spacing is 1/(2n) of the field of view.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    ppp: Option<f64>,
    #[arg(long)]
    sbr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of time bins.
    #[arg(long)]
    bins: Option<usize>,
    /// Bin width, seconds.
    #[arg(long)]
    bin_width: Option<f64>,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Cube written by `simulate` (`.sph` with its `.json` sidecar).
    #[arg(long)]
    cube: PathBuf,
    /// `deconv3d`, `ml` (alias `lm`) or `noscan`.
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Output directory for maps and metadata.
    #[arg(short, long)]
    output: PathBuf,
    /// TOML file with `background`, `noscan_factor` and a `[solver]` table.
    #[arg(long)]
    config: Option<PathBuf>,
    /// TV weight.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Stop once the relative change of the iterate drops below this.
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Dual iterations per TV proximal step.
    #[arg(long)]
    tv_inner_iters: Option<usize>,
    /// Also penalize differences along the time axis.
    #[arg(long)]
    temporal_tv: bool,
    /// Background counts per bin (defaults to the cube's calibrated value).
    #[arg(long)]
    background: Option<f64>,
    /// Scan spacing for the no-scan baseline (defaults to 2n).
    #[arg(long)]
    noscan_factor: Option<usize>,
    /// Also write the reconstructed volume (`volume.spr`).
    #[arg(long)]
    save_volume: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// Map written by `reconstruct` (`depth.pgm` or `reflectivity.pgm`).
    #[arg(long)]
    map: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = render::Colormap::Viridis)]
    colormap: render::Colormap,
    /// Value range `min,max` mapped onto the colormap; defaults to the range
    /// of valid pixels.
    #[arg(long, value_parser = parse_range)]
    depth_range: Option<(f64, f64)>,
}

#[derive(Args)]
struct ExperimentArgs {
    spec: PathBuf,
    /// Output directory (overrides `output_dir` in the spec).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write wall-clock timings to `timings.csv`.
    #[arg(long)]
    timings: bool,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|_| "expected one of deconv3d, ml, noscan".to_string())
}

fn parse_crop(s: &str) -> std::result::Result<[usize; 4], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad integer `{p}`")))
        .collect::<std::result::Result<_, _>>()?;
    parts.try_into().map_err(|_| "expected top,left,height,width".to_string())
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected min,max")?;
    let (a, b): (f64, f64) = (
        a.trim().parse().map_err(|_| format!("bad number `{a}`"))?,
        b.trim().parse().map_err(|_| format!("bad number `{b}`"))?,
    );
    if !(a.is_finite() && b.is_finite() && a <= b) {
        return Err("need finite min <= max".into());
    }
    Ok((a, b))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::MakeScene(kind) => make_scene(kind),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Reconstruct(args) => cmd_reconstruct(args),
        Command::Render(args) => render::run(&args.map, &args.output, args.colormap, args.depth_range),
        Command::Experiment(args) => cmd_experiment(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn make_scene(kind: SceneKind) -> Result<()> {
    let (scene, output) = match kind {
        SceneKind::Chart {
            output,
            fg_depth,
            bg_depth,
            bg_reflectivity,
        } => {
            let params = ChartParams {
                foreground_depth: fg_depth,
                background_depth: bg_depth,
                background_reflectivity: bg_reflectivity,
            };
            (make_resolution_chart_with(&params)?, output)
        }
        SceneKind::FromFiles {
            reflectivity,
            depth,
            metric,
            d_min,
            d_max,
            crop,
            output,
        } => {
            let mapping = match (metric, d_min, d_max) {
                (true, _, _) => DepthMapping::Metric,
                (false, Some(d_min), Some(d_max)) => DepthMapping::Affine { d_min, d_max },
                _ => bail!("give either --metric or both --d-min and --d-max"),
            };
            let mut scene = load_scene(&reflectivity, &depth, mapping)?;
            if let Some([top, left, h, w]) = crop {
                scene = scene.crop(top, left, h, w)?;
            }
            (scene, output)
        }
    };
    let defaults = ScanConfig::default();
    save_scene_dir(&output, &scene, &SceneMeta::for_scene(&scene, defaults.bin_width, defaults.t0))?;
    println!("wrote {}x{} scene to {}", scene.height(), scene.width(), output.display());
    Ok(())
}

/// Contents of `simulate --config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateFile {
    scan: Option<ScanConfig>,
    ppp: Option<f64>,
    sbr: Option<f64>,
    seed: Option<u64>,
}

/// Settings a cube was produced with, echoed into its sidecar.
#[derive(Debug, Serialize)]
struct SimulateSettings {
    scene_sha256: String,
    ppp: f64,
    sbr: f64,
    seed: u64,
    scan: ScanConfig,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let file: SimulateFile = match &args.config {
        Some(p) => read_toml(p)?,
        None => SimulateFile::default(),
    };
    let mut scan = file.scan.unwrap_or_default();
    if let Some(n) = args.n {
        scan = scan.with_n(n);
    }
    if let Some(b) = args.bins {
        scan.n_bins = b;
    }
    if let Some(w) = args.bin_width {
        scan.bin_width = w;
    }
    let settings = SimulateSettings {
        scene_sha256: String::new(),
        ppp: args.ppp.or(file.ppp).unwrap_or(10.0),
        sbr: args.sbr.or(file.sbr).unwrap_or(0.2),
        seed: args.seed.or(file.seed).unwrap_or(0),
        scan,
    };
    let (scene, _) = load_scene_dir(&args.scene)?;
    let cube = simulate(&scene, &settings.scan, settings.ppp, settings.sbr, settings.seed)?;
    let settings = SimulateSettings {
        scene_sha256: scene.content_hash(),
        ..settings
    };
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_cube(&args.output, &cube, serde_json::to_value(&settings)?)?;
    let k = make_kernel(&settings.scan)?.shape();
    println!(
        "wrote {}x{}x{} cube to {} (kernel {}x{}x{}, b = {:.6} per bin)",
        cube.shape()[0],
        cube.shape()[1],
        cube.shape()[2],
        args.output.display(),
        k[0],
        k[1],
        k[2],
        cube.background_per_bin
    );
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReconstructFile {
    background: Option<f64>,
    noscan_factor: Option<usize>,
    solver: Option<toml::Table>,
}

#[derive(Debug, Serialize)]
struct ReconstructRecord<'a> {
    method: Method,
    cube_sha256: String,
    background_per_bin: f64,
    options: &'a ReconstructOptions,
    valid_pixels: usize,
}

fn reconstruct_options(args: &ReconstructArgs) -> Result<ReconstructOptions> {
    let file: ReconstructFile = match &args.config {
        Some(p) => read_toml(p)?,
        None => ReconstructFile::default(),
    };
    let mut opts = ReconstructOptions {
        background: file.background,
        noscan_factor: file.noscan_factor,
        ..ReconstructOptions::default()
    };
    if let Some(table) = file.solver {
        opts.solver = table.try_into().context("parsing [solver]")?;
    }
    let s = &mut opts.solver;
    if let Some(v) = args.beta {
        s.beta = v;
    }
    if let Some(v) = args.max_iters {
        s.max_iters = v;
    }
    if let Some(v) = args.rel_tol {
        s.rel_tol = v;
    }
    if let Some(v) = args.tv_inner_iters {
        s.tv_inner_iters = v;
    }
    if args.temporal_tv {
        s.temporal_tv = true;
    }
    if args.background.is_some() {
        opts.background = args.background;
    }
    if args.noscan_factor.is_some() {
        opts.noscan_factor = args.noscan_factor;
    }
    opts.solver.validate()?;
    Ok(opts)
}

fn cmd_reconstruct(args: ReconstructArgs) -> Result<()> {
    let opts = reconstruct_options(&args)?;
    let cube_bytes = fs::read(&args.cube).with_context(|| format!("reading {}", args.cube.display()))?;
    let cube = read_cube(&args.cube)?;
    let rec = reconstruct(&cube, args.method, &opts)?;

    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    write_maps(&args.output, "", &rec.maps)?;
    let record = ReconstructRecord {
        method: args.method,
        cube_sha256: sha256_hex(&cube_bytes),
        background_per_bin: rec.background,
        options: &opts,
        valid_pixels: rec.maps.valid.iter().filter(|&&v| v).count(),
    };
    write_json(&args.output.join("reconstruction.json"), &record)?;
    if let Some(report) = &rec.report {
        write_json(&args.output.join("solve_report.json"), report)?;
    }
    if args.save_volume {
        if let Some(volume) = &rec.volume {
            write_volume(&args.output.join("volume.spr"), volume, serde_json::to_value(&record)?)?;
        }
    }
    match &rec.report {
        Some(r) => println!(
            "{}: {} iterations, converged = {}, objective {:.6e}",
            args.method,
            r.iterations,
            r.converged,
            r.objective_trace.last().copied().unwrap_or(f64::NAN)
        ),
        None => println!("{}: {} valid pixels", args.method, record.valid_pixels),
    }
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    let tmp = path.with_extension("json.partial");
    fs::write(&tmp, &bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    if let Some(out) = args.output {
        spec.output_dir = Some(out);
    }
    spec.validate()?;
    let outcome = run_experiment(&spec, None)?;
    if args.timings {
        write_timings(&outcome.output_dir.join("timings.csv"), &outcome.timings)?;
    }
    println!("{}", RESULT_COLUMNS[..6].join("\t"));
    for r in &outcome.rows {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
        println!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.method,
            r.ppp.map(|p| p.to_string()).unwrap_or_default(),
            r.sbr,
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            r.status,
            opt(r.rmse_m)
        );
    }
    println!("results in {}", outcome.output_dir.join("results.csv").display());
    Ok(())
}
