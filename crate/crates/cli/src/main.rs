//! `echo-polar`: simulate FMCW echoes, run the FFT/CFAR chain, project
//! polar grids into a camera, exercise the fusion kernel, and evaluate
//! detections.
//!
//! Exit codes: 0 success, 2 input error, 3 contract violation. All commands
//! are deterministic for fixed inputs and seeds; rerunning produces
//! byte-identical outputs. `ECHO_POLAR_THREADS` caps internal parallelism.

use clap::{Args, Parser, Subcommand};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use echo_polar_core::attention::{
    fuse_image_columns, fuse_radar_rows, AttentionParams, ColumnMode, FusionConfig, QueryTensor,
};
use echo_polar_core::boxes::{Box3D, Detection};
use echo_polar_core::cfar::{ca_cfar, points_from_peaks, rd_power, CfarConfig, RadarPoint};
use echo_polar_core::container;
use echo_polar_core::error::Error;
use echo_polar_core::geometry::{
    column_condition, column_drift_bound, column_of_query, CalibrationSet, PolarGrid,
};
use echo_polar_core::metrics::{
    average_precision, bev_iou, let_iou, matched_pairs, nuscenes_errors, radial_point_metrics,
    recall_at, ApReport, EvalConfig, Frame, Protocol, RadialPointReport, RecallReport,
    TranslationScaleOrientation,
};
use echo_polar_core::sim::{synthesize_adc, RadarConfig, SceneSpec};
use echo_polar_core::spectrum::{
    angle_fft, compress_to_ra, ddm_demultiplex, doppler_fft, range_fft, Spectrum, Stage,
    WindowKind, WindowSpec,
};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "echo-polar", version, about = "FMCW radar signal chain and polar BEV fusion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an ADC cube from a scene description.
    Simulate(SimulateArgs),
    /// Run the FFT chain up to a stage and write the spectrum.
    Fft(FftArgs),
    /// CFAR-detect peaks on an RD spectrum and emit radar points as CSV.
    Cfar(CfarArgs),
    /// Full chain: range/Doppler FFTs, DDM demux, RA map and CFAR points.
    Chain(ChainArgs),
    /// Project polar grid pillars into the camera and report columns.
    Project(ProjectArgs),
    /// Seeded end-to-end fusion forward pass with checksums.
    FuseDemo(FuseDemoArgs),
    /// Evaluate detections against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene JSON: {"targets": [...], "config": {...}}.
    #[arg(long)]
    scene: PathBuf,
    /// Override the config's noise seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FftArgs {
    /// ADC cube produced by `simulate`.
    #[arg(long)]
    input: PathBuf,
    /// Radar config JSON (bare config or a scene file).
    #[arg(long)]
    config: PathBuf,
    /// Target stage: rt, rd, read, or ra.
    #[arg(long)]
    stage: String,
    /// Window for the fast-time and slow-time FFTs.
    #[arg(long, default_value = "hann")]
    window: String,
    /// Azimuth bins for the angle FFT (read/ra stages).
    #[arg(long, default_value_t = 64)]
    n_azimuth: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CfarArgs {
    /// RD spectrum produced by `fft --stage rd`.
    #[arg(long)]
    input: PathBuf,
    /// Radar config JSON (bare config or a scene file).
    #[arg(long)]
    config: PathBuf,
    /// Guard cells per side: range,doppler.
    #[arg(long, default_value = "2,2")]
    guard: String,
    /// Training cells per side: range,doppler.
    #[arg(long, default_value = "4,4")]
    train: String,
    /// Threshold factor α.
    #[arg(long)]
    alpha: f64,
    /// Local-maximum radius for peak reduction.
    #[arg(long, default_value_t = 4)]
    min_sep: usize,
    #[arg(long, default_value_t = 64)]
    n_azimuth: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ChainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated subset of rt,rd,ra,points.
    #[arg(long, default_value = "rt,rd,ra,points")]
    stages: String,
    #[arg(long, default_value = "hann")]
    window: String,
    #[arg(long, default_value_t = 64)]
    n_azimuth: usize,
    #[arg(long, default_value = "2,2")]
    guard: String,
    #[arg(long, default_value = "4,4")]
    train: String,
    #[arg(long, default_value_t = 8.0)]
    alpha: f64,
    #[arg(long, default_value_t = 4)]
    min_sep: usize,
    #[arg(long)]
    outdir: PathBuf,
}

#[derive(Args)]
struct ProjectArgs {
    /// Calibration JSON: {"fx","fy","u0","v0","R","T"}.
    #[arg(long)]
    calib: PathBuf,
    /// Grid extents: range_bins,azimuth_bins.
    #[arg(long)]
    grid: String,
    /// Range span in meters: min,max.
    #[arg(long, default_value = "1,65")]
    range_span: String,
    /// Azimuth span in radians: min,max.
    #[arg(long, default_value = "-0.9,0.9")]
    azimuth_span: String,
    /// Reference pillar height for column lookup.
    #[arg(long, default_value_t = 0.0)]
    z_ref: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseDemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid extents: range_bins,azimuth_bins.
    #[arg(long, default_value = "32,32")]
    grid: String,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Synthetic image feature extents: height,width.
    #[arg(long, default_value = "24,48")]
    image: String,
    /// Chirp count of the synthetic radar feature map.
    #[arg(long, default_value_t = 16)]
    chirps: usize,
    #[arg(long)]
    calib: PathBuf,
    /// Zero the synthetic features to demonstrate the residual identity.
    #[arg(long)]
    zero_features: bool,
    /// Tolerance on the squared column-condition residuals before falling
    /// back to per-query projection.
    #[arg(long, default_value_t = 1e-2)]
    condition_tol: f64,
    /// Also serialize the attention parameters as named tensor records.
    #[arg(long)]
    params_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions, JSON lines: {"frame",score,x,y,z,l,w,h,yaw}.
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth, JSON lines: {"frame",x,y,z,l,w,h,yaw}.
    #[arg(long)]
    gt: PathBuf,
    /// waymo_ap, radial, or nuscenes.
    #[arg(long)]
    protocol: String,
    #[arg(long, default_value_t = 0.7)]
    iou: f64,
    /// LET tolerance as a fraction of ground-truth range.
    #[arg(long = "let", default_value_t = 0.1)]
    let_tolerance: f64,
    /// Range buckets, e.g. 0-50,50-100.
    #[arg(long, default_value = "0-50,50-100")]
    buckets: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("ECHO_POLAR_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fft(a) => cmd_fft(a),
        Command::Cfar(a) => cmd_cfar(a),
        Command::Chain(a) => cmd_chain(a),
        Command::Project(a) => cmd_project(a),
        Command::FuseDemo(a) => cmd_fuse_demo(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

// -------------------------------------------------------------------
// parsing helpers

fn read_json_file(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn json_diag<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, Error> {
    serde_json::from_str(text).map_err(|e| {
        Error::Input(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
    })
}

fn load_scene(path: &Path) -> Result<SceneSpec, Error> {
    json_diag(path, &read_json_file(path)?)
}

/// Accepts a bare RadarConfig object or a full scene file.
fn load_config(path: &Path) -> Result<RadarConfig, Error> {
    let text = read_json_file(path)?;
    if let Ok(spec) = serde_json::from_str::<SceneSpec>(&text) {
        return Ok(spec.config);
    }
    json_diag(path, &text)
}

fn load_calib(path: &Path) -> Result<CalibrationSet, Error> {
    CalibrationSet::from_json(&read_json_file(path)?)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn parse_pair<T: std::str::FromStr>(s: &str, what: &str) -> Result<(T, T), Error> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Input(format!("{what}: expected `a,b`, got `{s}`")));
    }
    let a = parts[0].trim().parse::<T>();
    let b = parts[1].trim().parse::<T>();
    match (a, b) {
        (Ok(a), Ok(b)) => Ok((a, b)),
        _ => Err(Error::Input(format!("{what}: cannot parse `{s}`"))),
    }
}

fn parse_buckets(s: &str) -> Result<Vec<(f64, f64)>, Error> {
    s.split(',')
        .map(|b| {
            let parts: Vec<&str> = b.split('-').collect();
            if parts.len() != 2 {
                return Err(Error::Input(format!("bucket `{b}`: expected `lo-hi`")));
            }
            match (parts[0].trim().parse::<f64>(), parts[1].trim().parse::<f64>()) {
                (Ok(lo), Ok(hi)) if hi > lo => Ok((lo, hi)),
                _ => Err(Error::Input(format!("bucket `{b}`: cannot parse"))),
            }
        })
        .collect()
}

fn parse_window(s: &str) -> Result<WindowSpec, Error> {
    Ok(WindowSpec { kind: s.parse::<WindowKind>()? })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

// -------------------------------------------------------------------
// simulate / fft / cfar / chain

fn cmd_simulate(a: SimulateArgs) -> Result<(), Error> {
    let mut spec = load_scene(&a.scene)?;
    if let Some(seed) = a.seed {
        spec.config.rng_seed = seed;
    }
    let cube = synthesize_adc(&spec.scene(), &spec.config)?;
    container::write_adc_cube(&a.out, &cube)?;
    println!(
        "wrote {} ({} rx × {} chirps × {} samples)",
        a.out.display(),
        spec.config.n_rx,
        spec.config.n_chirps,
        spec.config.n_samples
    );
    Ok(())
}

struct ChainProducts {
    rt: Spectrum,
    rd: Spectrum,
}

fn run_front_end(
    input: &Path,
    config: &RadarConfig,
    window: &WindowSpec,
) -> Result<ChainProducts, Error> {
    let cube = container::read_adc_cube(input, config)?;
    let rt = range_fft(&cube, window)?;
    let rd = doppler_fft(&rt, window)?;
    let rd = ddm_demultiplex(&rd, config.n_tx)?;
    Ok(ChainProducts { rt, rd })
}

fn cmd_fft(a: FftArgs) -> Result<(), Error> {
    let config = load_config(&a.config)?;
    let window = parse_window(&a.window)?;
    let stage: Stage = a.stage.parse()?;
    let products = run_front_end(&a.input, &config, &window)?;
    let spectrum = match stage {
        Stage::Rt => products.rt,
        Stage::Rd => products.rd,
        Stage::Read => angle_fft(&products.rd, a.n_azimuth)?,
        Stage::Ra => compress_to_ra(&angle_fft(&products.rd, a.n_azimuth)?)?,
    };
    container::write_spectrum(&a.out, &spectrum)?;
    println!("wrote {} (stage {:?})", a.out.display(), spectrum.stage());
    Ok(())
}

fn points_csv(points: &[RadarPoint]) -> String {
    let mut text = format!("# echo-polar {TOOL_VERSION}\n");
    text.push_str("x,y,z,speed,intensity\n");
    for p in points {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            p.x, p.y, p.z, p.radial_speed, p.intensity
        ));
    }
    text
}

fn cmd_cfar(a: CfarArgs) -> Result<(), Error> {
    let config = load_config(&a.config)?;
    let guard = parse_pair::<usize>(&a.guard, "--guard")?;
    let train = parse_pair::<usize>(&a.train, "--train")?;
    let rd = container::read_spectrum(&a.input)?;
    let cfar = CfarConfig {
        guard,
        train,
        threshold_factor: a.alpha,
        min_peak_separation: a.min_sep,
    };
    let power = rd_power(&rd)?;
    let peaks = ca_cfar(&power, &cfar)?;
    let points = points_from_peaks(&rd, &peaks, &config, a.n_azimuth)?;
    fs::write(&a.out, points_csv(&points))?;
    println!("wrote {} ({} points)", a.out.display(), points.len());
    Ok(())
}

fn cmd_chain(a: ChainArgs) -> Result<(), Error> {
    let config = load_config(&a.config)?;
    let window = parse_window(&a.window)?;
    let stages: Vec<&str> = a.stages.split(',').map(|s| s.trim()).collect();
    for s in &stages {
        if !["rt", "rd", "ra", "points"].contains(s) {
            return Err(Error::Input(format!("unknown chain stage `{s}`")));
        }
    }
    fs::create_dir_all(&a.outdir)?;
    let products = run_front_end(&a.input, &config, &window)?;

    if stages.contains(&"rt") {
        container::write_spectrum(&a.outdir.join("rt.bin"), &products.rt)?;
    }
    if stages.contains(&"rd") {
        container::write_spectrum(&a.outdir.join("rd.bin"), &products.rd)?;
    }
    if stages.contains(&"ra") {
        let ra = compress_to_ra(&angle_fft(&products.rd, a.n_azimuth)?)?;
        container::write_spectrum(&a.outdir.join("ra.bin"), &ra)?;
    }
    if stages.contains(&"points") {
        let cfar = CfarConfig {
            guard: parse_pair::<usize>(&a.guard, "--guard")?,
            train: parse_pair::<usize>(&a.train, "--train")?,
            threshold_factor: a.alpha,
            min_peak_separation: a.min_sep,
        };
        let power = rd_power(&products.rd)?;
        let peaks = ca_cfar(&power, &cfar)?;
        let points = points_from_peaks(&products.rd, &peaks, &config, a.n_azimuth)?;
        fs::write(a.outdir.join("points.csv"), points_csv(&points))?;
    }
    println!("wrote stages [{}] to {}", stages.join(","), a.outdir.display());
    Ok(())
}

// -------------------------------------------------------------------
// project

#[derive(Serialize)]
struct ColumnEntry {
    azimuth_rad: f64,
    column: Option<f64>,
}

#[derive(Serialize)]
struct ProjectReport {
    tool_version: String,
    condition_residuals: (f64, f64),
    z_ref: f64,
    n_range: usize,
    n_azimuth: usize,
    visible_azimuths: usize,
    columns: Vec<ColumnEntry>,
    /// Largest per-query column deviation from the per-azimuth column.
    max_range_column_spread: f64,
}

fn cmd_project(a: ProjectArgs) -> Result<(), Error> {
    let calib = load_calib(&a.calib)?;
    let (n_range, n_azimuth) = parse_pair::<usize>(&a.grid, "--grid")?;
    let range_span = parse_pair::<f64>(&a.range_span, "--range-span")?;
    let azimuth_span = parse_pair::<f64>(&a.azimuth_span, "--azimuth-span")?;
    let grid = PolarGrid {
        n_range,
        n_azimuth,
        channels: 1,
        range_span,
        azimuth_span,
        level: 0,
    };
    grid.validate()?;

    let r_mid = 0.5 * (range_span.0 + range_span.1);
    let mut columns = Vec::with_capacity(n_azimuth);
    let mut visible = 0usize;
    let mut max_spread = 0.0_f64;
    for j in 0..n_azimuth {
        let phi = grid.azimuth_center(j);
        let col = column_of_query(r_mid, phi, a.z_ref, &calib);
        if let Some(c) = col {
            visible += 1;
            for i in 0..n_range {
                if let Some(cq) = column_of_query(grid.range_center(i), phi, a.z_ref, &calib) {
                    max_spread = max_spread.max((cq - c).abs());
                }
            }
        }
        columns.push(ColumnEntry { azimuth_rad: phi, column: col });
    }

    let report = ProjectReport {
        tool_version: TOOL_VERSION.into(),
        condition_residuals: column_condition(calib.rotation()),
        z_ref: a.z_ref,
        n_range,
        n_azimuth,
        visible_azimuths: visible,
        columns,
        max_range_column_spread: max_spread,
    };
    write_json(&a.out, &report)?;
    println!(
        "wrote {} ({} of {} azimuths visible)",
        a.out.display(),
        visible,
        n_azimuth
    );
    Ok(())
}

// -------------------------------------------------------------------
// fuse-demo

fn fnv1a64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn tensor_checksum(values: &Array3<f64>) -> String {
    let bytes = values.iter().flat_map(|v| v.to_le_bytes());
    format!("{:016x}", fnv1a64(bytes))
}

#[derive(Serialize)]
struct DriftStats {
    probes: usize,
    max_drift: f64,
    mean_drift: f64,
    bound_satisfied: bool,
}

#[derive(Serialize)]
struct FuseReport {
    tool_version: String,
    seed: u64,
    grid: (usize, usize, usize),
    column_mode: String,
    condition_residuals: (f64, f64),
    warnings: Vec<String>,
    checksum_initial: String,
    checksum_image_fused: String,
    checksum_radar_fused: String,
    residual_identity_on_zero_features: bool,
    softmax_rows_sum_to_one: bool,
    column_drift: DriftStats,
}

fn cmd_fuse_demo(a: FuseDemoArgs) -> Result<(), Error> {
    let calib = load_calib(&a.calib)?;
    let (n_range, n_azimuth) = parse_pair::<usize>(&a.grid, "--grid")?;
    let (height, width) = parse_pair::<usize>(&a.image, "--image")?;
    let grid = PolarGrid {
        n_range,
        n_azimuth,
        channels: a.channels,
        range_span: (1.0, 65.0),
        azimuth_span: (-0.9, 0.9),
        level: 0,
    };
    grid.validate()?;

    let (c1_sq, c3_sq) = column_condition(calib.rotation());
    let mut warnings = Vec::new();
    let column_mode = if c1_sq.max(c3_sq) <= a.condition_tol {
        ColumnMode::PerAzimuth
    } else {
        warnings.push(format!(
            "calibration fails the column condition (residuals {c1_sq:.3e}, {c3_sq:.3e} \
             > {:.1e}); falling back to per-query projection",
            a.condition_tol
        ));
        ColumnMode::PerQuery
    };
    let fusion = FusionConfig { z_ref: 0.0, column_mode };

    let queries = QueryTensor::seeded(grid.clone(), a.seed)?;
    let mut feature_rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(1));
    let mut synth = |shape: (usize, usize, usize)| -> Array3<f64> {
        if a.zero_features {
            Array3::zeros(shape)
        } else {
            Array3::from_shape_fn(shape, |_| feature_rng.random_range(-1.0..1.0))
        }
    };
    let image_features = synth((height, width, a.channels));
    let radar_features = synth((n_range, a.chirps, a.channels));

    let params = AttentionParams::seeded(a.channels, a.heads, a.seed.wrapping_add(2))?;
    if let Some(path) = &a.params_out {
        container::write_tensors(path, &params.named_tensors())?;
    }

    let q_hat = fuse_image_columns(&queries, &image_features, &calib, &params, &fusion)?;
    let q_tilde = fuse_radar_rows(&q_hat, &radar_features, &params)?;

    // invariant probes
    let zero_q = QueryTensor::seeded(grid.clone(), a.seed)?;
    let zero_hat = fuse_image_columns(
        &zero_q,
        &Array3::zeros((height, width, a.channels)),
        &calib,
        &params,
        &fusion,
    )?;
    let zero_tilde =
        fuse_radar_rows(&zero_hat, &Array3::zeros((n_range, a.chirps, a.channels)), &params)?;
    let residual_ok = zero_tilde.values() == zero_q.values();

    let softmax_ok = {
        use echo_polar_core::attention::cross_attention_forward;
        let probe_q = ndarray::Array2::from_shape_fn((4, a.channels), |(i, j)| {
            ((i * a.channels + j) as f64 * 0.17).sin()
        });
        let probe_kv = ndarray::Array2::from_shape_fn((6, a.channels), |(i, j)| {
            ((i * a.channels + j) as f64 * 0.11).cos()
        });
        let (_, cache) = cross_attention_forward(&probe_q, &probe_kv, &probe_kv, &params)?;
        cache
            .attention_weights()
            .iter()
            .all(|w| w.rows().into_iter().all(|row| (row.sum() - 1.0).abs() < 1e-12))
    };

    // column drift of the calibration over pillar heights z ∈ [-2, 2]
    let mut probes = 0usize;
    let mut max_drift = 0.0_f64;
    let mut sum_drift = 0.0_f64;
    let mut bound_ok = true;
    for i in 0..n_range {
        let r = grid.range_center(i);
        if r < 10.0 {
            continue;
        }
        for j in 0..n_azimuth {
            let phi = grid.azimuth_center(j);
            let Some(base) = column_of_query(r, phi, 0.0, &calib) else { continue };
            for z in [-2.0, -1.0, 1.0, 2.0] {
                let Some(shifted) = column_of_query(r, phi, z, &calib) else { continue };
                let drift = (shifted - base).abs();
                probes += 1;
                sum_drift += drift;
                max_drift = max_drift.max(drift);
                if let Some(bound) = column_drift_bound(r, phi, z, &calib) {
                    if drift > bound {
                        bound_ok = false;
                    }
                }
            }
        }
    }

    let report = FuseReport {
        tool_version: TOOL_VERSION.into(),
        seed: a.seed,
        grid: (n_range, n_azimuth, a.channels),
        column_mode: format!("{column_mode:?}"),
        condition_residuals: (c1_sq, c3_sq),
        warnings,
        checksum_initial: tensor_checksum(queries.values()),
        checksum_image_fused: tensor_checksum(q_hat.values()),
        checksum_radar_fused: tensor_checksum(q_tilde.values()),
        residual_identity_on_zero_features: residual_ok,
        softmax_rows_sum_to_one: softmax_ok,
        column_drift: DriftStats {
            probes,
            max_drift,
            mean_drift: if probes > 0 { sum_drift / probes as f64 } else { 0.0 },
            bound_satisfied: bound_ok,
        },
    };
    write_json(&a.out, &report)?;
    println!("initial     {}", report.checksum_initial);
    println!("image-fused {}", report.checksum_image_fused);
    println!("radar-fused {}", report.checksum_radar_fused);
    println!("wrote {}", a.out.display());
    Ok(())
}

// -------------------------------------------------------------------
// eval

#[derive(serde::Deserialize)]
struct DetectionRecord {
    #[serde(default)]
    frame: u64,
    score: Option<f64>,
    x: f64,
    y: f64,
    z: f64,
    l: f64,
    w: f64,
    h: f64,
    yaw: f64,
}

fn load_frames(pred_path: &Path, gt_path: &Path) -> Result<Vec<Frame>, Error> {
    use std::collections::BTreeMap;
    let parse_lines = |path: &Path, need_score: bool| -> Result<Vec<(u64, Option<f64>, Box3D)>, Error> {
        let text = read_json_file(path)?;
        let mut out = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: DetectionRecord = serde_json::from_str(line).map_err(|e| {
                Error::Input(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            if need_score && rec.score.is_none() {
                return Err(Error::Input(format!(
                    "{}:{}: prediction is missing `score`",
                    path.display(),
                    lineno + 1
                )));
            }
            let bbox = Box3D::new([rec.x, rec.y, rec.z], [rec.l, rec.w, rec.h], rec.yaw)
                .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            out.push((rec.frame, rec.score, bbox));
        }
        Ok(out)
    };

    let preds = parse_lines(pred_path, true)?;
    let gts = parse_lines(gt_path, false)?;
    let mut frames: BTreeMap<u64, Frame> = BTreeMap::new();
    for (frame, score, bbox) in preds {
        frames
            .entry(frame)
            .or_default()
            .predictions
            .push(Detection { score: score.unwrap(), bbox });
    }
    for (frame, _, bbox) in gts {
        frames.entry(frame).or_default().ground_truths.push(bbox);
    }
    Ok(frames.into_values().collect())
}

#[derive(Serialize)]
struct EvalReport {
    tool_version: String,
    protocol: String,
    iou_threshold: f64,
    let_tolerance: f64,
    buckets: Vec<(f64, f64)>,
    frames: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    bev_ap: Option<ApReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    let_bev_ap: Option<ApReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    recall: Option<RecallReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    point_metrics: Option<RadialPointReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    matched: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    errors: Option<TranslationScaleOrientation>,
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let protocol = match a.protocol.as_str() {
        "waymo_ap" => Protocol::WaymoAp,
        "radial" => Protocol::RadialPoint,
        "nuscenes" => Protocol::NuscenesErrors,
        other => return Err(Error::Input(format!("unknown protocol `{other}`"))),
    };
    let buckets = parse_buckets(&a.buckets)?;
    let config = EvalConfig {
        iou_threshold: a.iou,
        let_tolerance: a.let_tolerance,
        range_buckets: buckets.clone(),
        protocol,
    };
    config.validate()?;
    let frames = load_frames(&a.pred, &a.gt)?;

    let mut report = EvalReport {
        tool_version: TOOL_VERSION.into(),
        protocol: a.protocol.clone(),
        iou_threshold: a.iou,
        let_tolerance: a.let_tolerance,
        buckets: buckets.clone(),
        frames: frames.len(),
        bev_ap: None,
        let_bev_ap: None,
        recall: None,
        point_metrics: None,
        matched: None,
        errors: None,
    };
    match protocol {
        Protocol::WaymoAp => {
            report.bev_ap = Some(average_precision(&frames, bev_iou, a.iou, &buckets));
            let tol = a.let_tolerance;
            report.let_bev_ap = Some(average_precision(
                &frames,
                |p: &Box3D, g: &Box3D| let_iou(p, g, tol, (0.0, 0.0)),
                a.iou,
                &buckets,
            ));
            report.recall = Some(recall_at(&frames, bev_iou, a.iou, &buckets));
        }
        Protocol::RadialPoint => {
            report.point_metrics = Some(radial_point_metrics(&frames));
        }
        Protocol::NuscenesErrors => {
            let pairs = matched_pairs(&frames, bev_iou, a.iou);
            report.matched = Some(pairs.len());
            report.errors = nuscenes_errors(&pairs);
        }
    }
    write_json(&a.out, &report)?;
    println!("wrote {} ({} frames)", a.out.display(), frames.len());
    Ok(())
}
