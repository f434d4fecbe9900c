//! Line-delimited stream formats: frame inputs, groundtruth maps, snapshot
//! streams and metrics reports. One JSON record per line, human-inspectable
//! and diff-friendly; malformed records are reported with their line number.

use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::detection::{FrameInput, MarkingType, Pose, RawDetection};
use crate::eval::{MetricsReport, TypedPolyline};
use crate::geom::Point;
use crate::local::{MapSnapshot, SnapshotStats};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid record: {message}")]
    Validation { line: usize, message: String },
}

/// Minimum spacing between consecutive polyline points (meters).
pub const MIN_POINT_SPACING: f64 = 1.0e-6;

// ── Pose packing ──────────────────────────────────────────────────────────

/// Row-major 3x3 rotation followed by the translation.
pub fn pose_to_array(pose: &Pose) -> [f64; 12] {
    let r = &pose.rotation;
    let t = &pose.translation;
    [
        r[(0, 0)], r[(0, 1)], r[(0, 2)],
        r[(1, 0)], r[(1, 1)], r[(1, 2)],
        r[(2, 0)], r[(2, 1)], r[(2, 2)],
        t.x, t.y, t.z,
    ]
}

pub fn pose_from_array(v: &[f64; 12]) -> Pose {
    Pose::new(
        Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]),
        Vector3::new(v[9], v[10], v[11]),
    )
}

fn point_to_array(p: &Point) -> [f64; 3] {
    [p.x, p.y, p.z]
}

fn point_from_array(v: &[f64; 3]) -> Point {
    Point::new(v[0], v[1], v[2])
}

// ── Frame streams ─────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    #[serde(rename = "type")]
    marking_type: MarkingType,
    confidence: f64,
    points: Vec<[f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRecord {
    t: f64,
    pose: [f64; 12],
    detections: Vec<DetectionRecord>,
}

pub fn write_frames<W: Write>(mut w: W, frames: &[FrameInput]) -> Result<(), StreamError> {
    for frame in frames {
        let record = FrameRecord {
            t: frame.timestamp,
            pose: pose_to_array(&frame.pose),
            detections: frame
                .detections
                .iter()
                .map(|d| DetectionRecord {
                    marking_type: d.marking_type,
                    confidence: d.confidence,
                    points: d.points.iter().map(point_to_array).collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &record).map_err(io_err)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses and validates a frame stream. Detections collapsing to fewer than
/// two distinct points are skipped with a warning instead of failing the
/// stream; bad poses and confidences are hard errors with line numbers.
pub fn read_frames<R: BufRead>(r: R) -> Result<Vec<FrameInput>, StreamError> {
    let mut frames = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = serde_json::from_str(&line)
            .map_err(|e| StreamError::Parse { line: line_no, message: e.to_string() })?;
        if !record.t.is_finite() {
            return Err(StreamError::Validation {
                line: line_no,
                message: "timestamp must be finite".into(),
            });
        }
        let pose = pose_from_array(&record.pose);
        if !pose.is_valid(1.0e-6) {
            return Err(StreamError::Validation {
                line: line_no,
                message: "pose rotation is not orthonormal (tolerance 1e-6)".into(),
            });
        }
        let mut detections = Vec::with_capacity(record.detections.len());
        for (di, d) in record.detections.into_iter().enumerate() {
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(StreamError::Validation {
                    line: line_no,
                    message: format!("detection {di}: confidence {} outside [0,1]", d.confidence),
                });
            }
            let points = sanitize_points(d.points.iter().map(point_from_array));
            if points.len() < 2 {
                log::warn!("line {line_no}: detection {di} has fewer than 2 distinct points, skipping");
                continue;
            }
            detections.push(RawDetection::new(points, d.confidence, d.marking_type));
        }
        frames.push(FrameInput { timestamp: record.t, pose, detections });
    }
    Ok(frames)
}

/// Drops consecutive points closer than `MIN_POINT_SPACING`.
fn sanitize_points(points: impl Iterator<Item = Point>) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::new();
    for p in points {
        if out.last().is_none_or(|last| (last - p).norm() > MIN_POINT_SPACING) {
            out.push(p);
        }
    }
    out
}

// ── Groundtruth maps ──────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct GtRecord {
    #[serde(rename = "type")]
    marking_type: MarkingType,
    points: Vec<[f64; 3]>,
}

pub fn write_gt<W: Write>(mut w: W, lines: &[TypedPolyline]) -> Result<(), StreamError> {
    for line in lines {
        let record = GtRecord {
            marking_type: line.marking_type,
            points: line.points.iter().map(point_to_array).collect(),
        };
        serde_json::to_writer(&mut w, &record).map_err(io_err)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_gt<R: BufRead>(r: R) -> Result<Vec<TypedPolyline>, StreamError> {
    let mut lines = Vec::new();
    for (idx, text) in r.lines().enumerate() {
        let line_no = idx + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let record: GtRecord = serde_json::from_str(&text)
            .map_err(|e| StreamError::Parse { line: line_no, message: e.to_string() })?;
        let points = sanitize_points(record.points.iter().map(point_from_array));
        if points.len() < 2 {
            return Err(StreamError::Validation {
                line: line_no,
                message: "groundtruth line needs at least 2 distinct points".into(),
            });
        }
        lines.push(TypedPolyline { marking_type: record.marking_type, points });
    }
    Ok(lines)
}

// ── Snapshot streams ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotHeader {
    /// Reference-to-world transform of this run (the first frame's pose).
    pub world_from_ref: [f64; 12],
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: u32,
    #[serde(rename = "type")]
    pub marking_type: MarkingType,
    pub points: Vec<[f64; 3]>,
    pub voxels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryRecord {
    pub id: u32,
    #[serde(rename = "type")]
    pub kind: MarkingType,
    pub source: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaneRecord {
    pub id: u32,
    pub left: u32,
    pub right: u32,
    pub range: [f64; 2],
    pub centerline: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkageRecord {
    pub predecessor: u32,
    pub successor: u32,
    pub cue: crate::layout::LinkageCue,
}

/// One frame of the snapshot stream. Stage timings are intentionally not
/// serialized so repeated runs produce byte-identical files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub frame: u64,
    pub t: f64,
    pub pose: [f64; 12],
    pub instances: Vec<InstanceRecord>,
    pub boundaries: Vec<BoundaryRecord>,
    pub lanes: Vec<LaneRecord>,
    pub linkages: Vec<LinkageRecord>,
    pub stats: SnapshotStats,
}

impl SnapshotRecord {
    pub fn from_snapshot(s: &MapSnapshot) -> Self {
        Self {
            frame: s.frame_index,
            t: s.timestamp,
            pose: pose_to_array(&s.pose),
            instances: s
                .instances
                .iter()
                .map(|i| InstanceRecord {
                    id: i.id,
                    marking_type: i.marking_type,
                    points: i.polyline.iter().map(point_to_array).collect(),
                    voxels: i.voxel_count,
                })
                .collect(),
            boundaries: s
                .layout
                .boundaries
                .iter()
                .map(|b| BoundaryRecord { id: b.id, kind: b.boundary_kind, source: b.source.clone() })
                .collect(),
            lanes: s
                .layout
                .lanes
                .iter()
                .map(|l| LaneRecord {
                    id: l.id,
                    left: l.left_boundary,
                    right: l.right_boundary,
                    range: l.valid_range,
                    centerline: l.centerline.iter().map(point_to_array).collect(),
                })
                .collect(),
            linkages: s
                .layout
                .linkages
                .iter()
                .map(|l| LinkageRecord {
                    predecessor: l.predecessor,
                    successor: l.successor,
                    cue: l.cue,
                })
                .collect(),
            stats: SnapshotStats { timings: Default::default(), ..s.stats },
        }
    }

    pub fn pose(&self) -> Pose {
        pose_from_array(&self.pose)
    }

    /// Instance polylines as typed lines for evaluation, reference frame.
    pub fn instance_lines(&self) -> Vec<TypedPolyline> {
        self.instances
            .iter()
            .map(|i| TypedPolyline {
                marking_type: i.marking_type,
                points: i.points.iter().map(point_from_array).collect(),
            })
            .collect()
    }
}

pub fn write_snapshot_header<W: Write>(mut w: W, header: &SnapshotHeader) -> Result<(), StreamError> {
    serde_json::to_writer(&mut w, header).map_err(io_err)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_snapshot_record<W: Write>(mut w: W, record: &SnapshotRecord) -> Result<(), StreamError> {
    serde_json::to_writer(&mut w, record).map_err(io_err)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_snapshots<R: BufRead>(
    r: R,
) -> Result<(SnapshotHeader, Vec<SnapshotRecord>), StreamError> {
    let mut lines = r.lines().enumerate();
    let header = loop {
        let Some((idx, line)) = lines.next() else {
            return Err(StreamError::Validation {
                line: 0,
                message: "empty snapshot stream (missing header)".into(),
            });
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        break serde_json::from_str::<SnapshotHeader>(&line)
            .map_err(|e| StreamError::Parse { line: idx + 1, message: e.to_string() })?;
    };
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SnapshotRecord = serde_json::from_str(&line)
            .map_err(|e| StreamError::Parse { line: idx + 1, message: e.to_string() })?;
        records.push(record);
    }
    Ok((header, records))
}

/// Peeks at the first record to tell frame streams from snapshot streams.
pub fn detect_stream_kind(first_line: &str) -> Option<StreamKind> {
    let value: serde_json::Value = serde_json::from_str(first_line).ok()?;
    let obj = value.as_object()?;
    if obj.contains_key("detections") {
        Some(StreamKind::Frames)
    } else if obj.contains_key("world_from_ref") {
        Some(StreamKind::Snapshots)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Frames,
    Snapshots,
}

// ── Metrics files ─────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsFile {
    pub frames: usize,
    pub summary: MetricsReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameMetricsRecord {
    pub frame: u64,
    pub t: f64,
    pub metrics: MetricsReport,
}

fn io_err(e: serde_json::Error) -> StreamError {
    StreamError::Io(e.into())
}
