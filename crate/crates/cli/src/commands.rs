//! Command implementations: thin IO and formatting around the library
//! drivers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use lanemap::config::{ConfigError, RunConfig};
use lanemap::eval::{MetricsReport, TypedPolyline};
use lanemap::io::{self, StreamError, StreamKind};
use lanemap::runner;
use lanemap::sim::{self, NoiseSpec, ScenarioSpec};
use lanemap::FrameInput;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, scenario spec or flag values (exit 2).
    Config(String),
    /// Filesystem / IO failures (exit 3).
    Io(String),
    /// Malformed or inconsistent data records (exit 4).
    Data(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<StreamError> for CliError {
    fn from(e: StreamError) -> Self {
        match e {
            StreamError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))
}

fn create_writer(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

/// Loads the config file (if any) and applies --window / --set overrides.
fn load_config(
    path: Option<&Path>,
    sets: &[String],
    window: Option<&str>,
) -> Result<RunConfig, CliError> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(spec) = window {
        let parts: Vec<f64> = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Config(format!("bad --window value: {spec}")))?;
        if parts.len() != 4 {
            return Err(CliError::Config(
                "--window expects lat_min,lat_max,lon_min,lon_max".into(),
            ));
        }
        config.set("window.lateral", &format!("[{},{}]", parts[0], parts[1]))?;
        config.set("window.longitudinal", &format!("[{},{}]", parts[2], parts[3]))?;
    }
    for entry in sets {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {entry}")))?;
        config.set(key.trim(), value.trim())?;
    }
    config.validate()?;
    Ok(config)
}

fn read_frame_stream(path: &Path) -> Result<Vec<FrameInput>, CliError> {
    Ok(io::read_frames(open_reader(path)?)?)
}

fn read_gt_map(path: &Path) -> Result<Vec<TypedPolyline>, CliError> {
    Ok(io::read_gt(open_reader(path)?)?)
}

// ── simulate ──────────────────────────────────────────────────────────────

/// Scenario file: generation spec plus noise model and frame budget.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimFile {
    scenario: ScenarioSpec,
    noise: NoiseSpec,
    /// Cap on emitted frames; the trajectory length is the natural limit.
    frames: Option<usize>,
}



pub fn simulate(spec_path: &Path, output: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", spec_path.display())))?;
    let mut file: SimFile =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("scenario spec: {e}")))?;
    if let Some(seed) = seed {
        file.scenario.seed = seed;
    }
    let scenario =
        sim::build_scenario(&file.scenario).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(output)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", output.display())))?;

    let frames: Vec<FrameInput> = scenario
        .trajectory
        .iter()
        .take(file.frames.unwrap_or(usize::MAX))
        .enumerate()
        .map(|(i, (t, pose))| {
            sim::render_frame(
                &scenario.gt,
                pose,
                *t,
                &file.noise,
                sim::frame_seed(file.scenario.seed, i as u64),
            )
        })
        .collect();

    let frames_path = output.join("frames.jsonl");
    let gt_path = output.join("gt.jsonl");
    io::write_frames(create_writer(&frames_path)?, &frames)?;
    io::write_gt(create_writer(&gt_path)?, &scenario.gt)?;
    println!(
        "wrote {} frames to {} and {} groundtruth lines to {}",
        frames.len(),
        frames_path.display(),
        scenario.gt.len(),
        gt_path.display()
    );
    Ok(())
}

// ── run ───────────────────────────────────────────────────────────────────

pub fn run(
    input: &Path,
    config_path: Option<&Path>,
    output: &Path,
    sets: &[String],
    window: Option<&str>,
    dump_config: Option<&Path>,
) -> Result<(), CliError> {
    let config = load_config(config_path, sets, window)?;
    if let Some(path) = dump_config {
        std::fs::write(path, config.to_json_pretty())
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    }
    let frames = read_frame_stream(input)?;
    let outcome = runner::run_stream(&frames, &config);

    let mut writer = create_writer(output)?;
    if let Some(world_from_ref) = outcome.world_from_ref {
        let header = io::SnapshotHeader {
            world_from_ref: io::pose_to_array(&world_from_ref),
            config: config.clone(),
        };
        io::write_snapshot_header(&mut writer, &header)?;
        for snapshot in &outcome.snapshots {
            io::write_snapshot_record(&mut writer, &io::SnapshotRecord::from_snapshot(snapshot))?;
        }
    }
    writer.flush()?;
    println!(
        "processed {} frames ({} rejected), wrote {}",
        outcome.snapshots.len(),
        outcome.rejected.len(),
        output.display()
    );
    if !outcome.rejected.is_empty() {
        for (index, err) in &outcome.rejected {
            log::error!("frame {index}: {err}");
        }
        return Err(CliError::Data(format!(
            "{} frame(s) rejected during the run",
            outcome.rejected.len()
        )));
    }
    Ok(())
}

// ── eval ──────────────────────────────────────────────────────────────────

fn print_metrics_table(report: &MetricsReport) {
    let fmt_pct = |v: Option<f64>| v.map_or("    -".to_string(), |x| format!("{x:5.2}"));
    let fmt_m = |v: Option<f64>| v.map_or("    -".to_string(), |x| format!("{x:.3}"));
    println!(
        "{:<9} {:>5} {:>5} {:>5} {:>9} {:>9} {:>9} {:>8}",
        "type", "tp", "fp", "fn", "prec[%]", "rec[%]", "f1[%]", "acd[m]"
    );
    for (name, m) in [
        ("laneline", &report.laneline),
        ("roadedge", &report.roadedge),
        ("stopline", &report.stopline),
        ("total", &report.total),
    ] {
        println!(
            "{:<9} {:>5} {:>5} {:>5} {:>9} {:>9} {:>9} {:>8}",
            name,
            m.tp,
            m.fp,
            m.fn_,
            fmt_pct(m.precision_pct),
            fmt_pct(m.recall_pct),
            fmt_pct(m.f1_pct),
            fmt_m(m.acd_m)
        );
    }
}

pub fn eval(
    input: &Path,
    gt: &Path,
    config_path: Option<&Path>,
    output: Option<&Path>,
    per_frame_path: Option<&Path>,
    sets: &[String],
    window: Option<&str>,
) -> Result<(), CliError> {
    let gt_lines = read_gt_map(gt)?;
    let first_line = {
        let mut reader = open_reader(input)?;
        let mut line = String::new();
        reader.read_line(&mut line)?;
        line
    };
    let kind = io::detect_stream_kind(first_line.trim()).ok_or_else(|| {
        CliError::Data(format!("{}: neither a frame nor a snapshot stream", input.display()))
    })?;

    let outcome = match kind {
        StreamKind::Snapshots => {
            let (header, records) = io::read_snapshots(open_reader(input)?)?;
            // The run's own window defines the comparison region unless
            // overridden on the command line.
            let mut config = header.config.clone();
            if config_path.is_some() || !sets.is_empty() || window.is_some() {
                let cli_cfg = load_config(config_path, sets, window)?;
                config.eval = cli_cfg.eval;
                config.window = cli_cfg.window;
            }
            let world_from_ref = io::pose_from_array(&header.world_from_ref);
            runner::eval_snapshots(
                &records,
                &world_from_ref,
                &gt_lines,
                &runner::eval_region(&config),
                &config.eval,
            )
        }
        StreamKind::Frames => {
            let config = load_config(config_path, sets, window)?;
            let frames = read_frame_stream(input)?;
            runner::eval_raw_frames(&frames, &gt_lines, &runner::eval_region(&config), &config.eval)
        }
    };

    print_metrics_table(&outcome.summary);
    if let Some(path) = output {
        let file = io::MetricsFile { frames: outcome.per_frame.len(), summary: outcome.summary };
        let mut w = create_writer(path)?;
        serde_json::to_writer_pretty(&mut w, &file)
            .map_err(|e| CliError::Io(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    if let Some(path) = per_frame_path {
        let mut w = create_writer(path)?;
        for record in &outcome.per_frame {
            serde_json::to_writer(&mut w, record).map_err(|e| CliError::Io(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

// ── profile ───────────────────────────────────────────────────────────────

pub fn profile(
    input: &Path,
    config_path: Option<&Path>,
    sets: &[String],
    window: Option<&str>,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let config = load_config(config_path, sets, window)?;
    let frames = read_frame_stream(input)?;
    let report = runner::profile_stream(&frames, &config);
    println!(
        "{} frames, {:.1} detections/frame on average",
        report.frames, report.mean_detections
    );
    println!("{:<11} {:>10} {:>10} {:>10}", "stage", "mean[ms]", "p50[ms]", "p99[ms]");
    for stage in report.stages.iter().chain(std::iter::once(&report.total)) {
        println!(
            "{:<11} {:>10.2} {:>10.2} {:>10.2}",
            stage.stage, stage.mean_ms, stage.p50_ms, stage.p99_ms
        );
    }
    if let Some(path) = output {
        let mut w = create_writer(path)?;
        serde_json::to_writer_pretty(&mut w, &report).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}

// ── ablate ────────────────────────────────────────────────────────────────

pub fn ablate(
    input: &Path,
    gt: &Path,
    config_path: Option<&Path>,
    vary: &[String],
    sets: &[String],
    window: Option<&str>,
    output: Option<&Path>,
) -> Result<(), CliError> {
    if vary.is_empty() {
        return Err(CliError::Config("ablate needs at least one --vary key=v1,v2".into()));
    }
    let config = load_config(config_path, sets, window)?;
    let frames = read_frame_stream(input)?;
    let gt_lines = read_gt_map(gt)?;
    let grid: Vec<(String, Vec<String>)> = vary
        .iter()
        .map(|axis| {
            let (key, values) = axis
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--vary expects key=v1,v2: {axis}")))?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
            if values.is_empty() {
                return Err(CliError::Config(format!("--vary axis {key} has no values")));
            }
            Ok((key.trim().to_string(), values))
        })
        .collect::<Result<_, CliError>>()?;

    let rows = runner::ablate(&frames, &gt_lines, &config, &grid)?;
    let label = |row: &runner::AblateRow| {
        row.overrides
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let width = rows.iter().map(|r| label(r).len()).max().unwrap_or(8).max(8);
    println!(
        "{:<width$} {:>9} {:>9} {:>9} {:>8}",
        "overrides", "prec[%]", "rec[%]", "f1[%]", "acd[m]"
    );
    for row in &rows {
        let m = &row.summary.total;
        let pct = |v: Option<f64>| v.map_or("    -".to_string(), |x| format!("{x:.2}"));
        println!(
            "{:<width$} {:>9} {:>9} {:>9} {:>8}",
            label(row),
            pct(m.precision_pct),
            pct(m.recall_pct),
            pct(m.f1_pct),
            m.acd_m.map_or("    -".to_string(), |x| format!("{x:.3}"))
        );
    }
    if let Some(path) = output {
        let mut w = create_writer(path)?;
        serde_json::to_writer_pretty(&mut w, &rows).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}
