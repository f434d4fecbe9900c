//! High-level drivers shared by the CLI and the acceptance suite: run a
//! frame stream through the fusion engine, evaluate snapshots or raw frames
//! against groundtruth within the output window, profile per-stage runtime,
//! and sweep parameters for ablation tables.

use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, RunConfig};
use crate::detection::{FrameInput, Pose};
use crate::eval::{self, MatchConfig, MatchCounts, MetricsReport, TypedPolyline};
use crate::geom::{clip_polyline, Aabb};
use crate::io::{FrameMetricsRecord, SnapshotRecord};
use crate::local::{FrameError, LocalMap, MapSnapshot, MapWindow, StageTimings};

/// Result of running a full stream through the fusion engine.
pub struct RunOutcome {
    pub snapshots: Vec<MapSnapshot>,
    /// Reference-to-world transform (first accepted frame's pose).
    pub world_from_ref: Option<Pose>,
    /// Frames rejected (ordering or pose validation).
    pub rejected: Vec<(usize, FrameError)>,
}

pub fn run_stream(frames: &[FrameInput], config: &RunConfig) -> RunOutcome {
    let mut map = LocalMap::new(config.clone());
    let mut snapshots = Vec::with_capacity(frames.len());
    let mut rejected = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        match map.process_frame(frame) {
            Ok(snapshot) => snapshots.push(snapshot),
            Err(e) => {
                log::error!("frame {i} rejected: {e}");
                rejected.push((i, e));
            }
        }
    }
    RunOutcome { snapshots, world_from_ref: map.world_from_ref().copied(), rejected }
}

// ── Windowed evaluation ───────────────────────────────────────────────────

/// Comparison region for map evaluation: the output window shrunk by half a
/// voxel. The map cannot represent geometry below voxel resolution, so a
/// groundtruth line lying exactly on the window edge would otherwise be
/// demanded from a map that legitimately quantized it out.
pub fn eval_region(config: &RunConfig) -> MapWindow {
    MapWindow::new(config.window.lateral, config.window.longitudinal)
        .shrunk(config.voxel_size / 2.0)
}

/// Shortest clipped piece still scored (meters). Sub-meter fragments appear
/// transiently while a line crosses the window boundary and carry fewer
/// samples than the map's voxel resolution can represent.
const MIN_EVAL_PIECE_LEN: f64 = 1.0;

/// Clips typed lines (given in some source frame) to the body-frame window,
/// dropping fragments shorter than `MIN_EVAL_PIECE_LEN`.
fn clip_to_window(
    lines: &[TypedPolyline],
    body_from_source: &Pose,
    window: &MapWindow,
) -> Vec<TypedPolyline> {
    let bbox = Aabb::from_ranges(window.lateral, window.longitudinal);
    let mut out = Vec::new();
    for line in lines {
        let body: Vec<_> = line.points.iter().map(|p| body_from_source.apply(p)).collect();
        for piece in clip_polyline(&body, &bbox) {
            if crate::geom::arclength(&piece) >= MIN_EVAL_PIECE_LEN {
                out.push(TypedPolyline { marking_type: line.marking_type, points: piece });
            }
        }
    }
    out
}

pub struct EvalOutcome {
    pub summary: MetricsReport,
    pub counts: [MatchCounts; 3],
    pub per_frame: Vec<FrameMetricsRecord>,
}

fn accumulate(
    frames: impl Iterator<Item = (u64, f64, Vec<TypedPolyline>, Vec<TypedPolyline>)>,
    cfg: &MatchConfig,
) -> EvalOutcome {
    let mut totals = [MatchCounts::default(); 3];
    let mut per_frame = Vec::new();
    for (frame, t, predicted, groundtruth) in frames {
        let counts = eval::score_counts(&predicted, &groundtruth, cfg);
        for (total, c) in totals.iter_mut().zip(counts.iter()) {
            total.add(c);
        }
        per_frame.push(FrameMetricsRecord {
            frame,
            t,
            metrics: MetricsReport::from_counts(&counts),
        });
    }
    EvalOutcome { summary: MetricsReport::from_counts(&totals), counts: totals, per_frame }
}

/// Scores fused snapshots against a world-frame groundtruth map. Both sides
/// are clipped to the output window around each frame's pose, in the body
/// frame, so the comparison region matches what the map is expected to
/// cover.
pub fn eval_snapshots(
    records: &[SnapshotRecord],
    world_from_ref: &Pose,
    gt_world: &[TypedPolyline],
    window: &MapWindow,
    cfg: &MatchConfig,
) -> EvalOutcome {
    let ref_from_world = world_from_ref.inverse();
    accumulate(
        records.iter().map(|rec| {
            let pose_world = rec.pose();
            let pose_in_ref = ref_from_world.compose(&pose_world);
            let body_from_ref = pose_in_ref.inverse();
            let body_from_world = pose_world.inverse();
            let predicted = clip_to_window(&rec.instance_lines(), &body_from_ref, window);
            let groundtruth = clip_to_window(gt_world, &body_from_world, window);
            (rec.frame, rec.t, predicted, groundtruth)
        }),
        cfg,
    )
}

/// Scores raw per-frame detections (body frame, unfiltered) against the
/// groundtruth with the same metric code and window.
pub fn eval_raw_frames(
    frames: &[FrameInput],
    gt_world: &[TypedPolyline],
    window: &MapWindow,
    cfg: &MatchConfig,
) -> EvalOutcome {
    accumulate(
        frames.iter().enumerate().map(|(i, frame)| {
            let predicted_lines: Vec<TypedPolyline> = frame
                .detections
                .iter()
                .map(|d| TypedPolyline { marking_type: d.marking_type, points: d.points.clone() })
                .collect();
            let predicted = clip_to_window(&predicted_lines, &Pose::identity(), window);
            let groundtruth = clip_to_window(gt_world, &frame.pose.inverse(), window);
            (i as u64, frame.timestamp, predicted, groundtruth)
        }),
        cfg,
    )
}

// ── Profiling ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageProfile {
    pub stage: String,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileReport {
    pub frames: usize,
    pub mean_detections: f64,
    pub stages: Vec<StageProfile>,
    pub total: StageProfile,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn stage_profile(name: &str, mut values: Vec<f64>) -> StageProfile {
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    values.sort_by(f64::total_cmp);
    StageProfile {
        stage: name.to_string(),
        mean_ms: mean,
        p50_ms: percentile(&values, 0.50),
        p99_ms: percentile(&values, 0.99),
    }
}

/// Runs the stream and aggregates the per-stage timing distribution.
pub fn profile_stream(frames: &[FrameInput], config: &RunConfig) -> ProfileReport {
    let outcome = run_stream(frames, config);
    let timings: Vec<StageTimings> =
        outcome.snapshots.iter().map(|s| s.stats.timings).collect();
    let mean_detections = frames.iter().map(|f| f.detections.len()).sum::<usize>() as f64
        / frames.len().max(1) as f64;
    let stages = StageTimings::STAGE_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| stage_profile(name, timings.iter().map(|t| t.stage_values()[i]).collect()))
        .collect();
    let total = stage_profile("total", timings.iter().map(|t| t.total_ms).collect());
    ProfileReport { frames: timings.len(), mean_detections, stages, total }
}

// ── Ablation sweeps ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateRow {
    pub overrides: Vec<(String, String)>,
    pub summary: MetricsReport,
}

/// Cross-product sweep over config overrides; each combination reruns the
/// fusion and evaluation end to end.
pub fn ablate(
    frames: &[FrameInput],
    gt_world: &[TypedPolyline],
    base: &RunConfig,
    grid: &[(String, Vec<String>)],
) -> Result<Vec<AblateRow>, ConfigError> {
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in grid {
        let mut next = Vec::with_capacity(combos.len() * values.len());
        for combo in &combos {
            for value in values {
                let mut c = combo.clone();
                c.push((key.clone(), value.clone()));
                next.push(c);
            }
        }
        combos = next;
    }

    let mut rows = Vec::with_capacity(combos.len());
    for overrides in combos {
        let mut config = base.clone();
        for (key, value) in &overrides {
            config.set(key, value)?;
        }
        let outcome = run_stream(frames, &config);
        let window = eval_region(&config);
        let records: Vec<SnapshotRecord> =
            outcome.snapshots.iter().map(SnapshotRecord::from_snapshot).collect();
        let world_from_ref = outcome.world_from_ref.unwrap_or_else(Pose::identity);
        let eval =
            eval_snapshots(&records, &world_from_ref, gt_world, &window, &config.eval);
        rows.push(AblateRow { overrides, summary: eval.summary });
    }
    Ok(rows)
}
