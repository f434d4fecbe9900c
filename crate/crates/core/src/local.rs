//! Per-frame orchestration: preprocessing, voxel fusion, instance update,
//! layout generation and the vehicle-centered map window.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::detection::{self, FrameInput, MarkingType, Pose};
use crate::geom::{Aabb, Point};
use crate::instance::InstanceMap;
use crate::layout::{self, InstancePolyline, RoadLayout};
use crate::voxel::SemanticVoxelMap;

/// Vehicle-centered output window, body frame.
#[derive(Debug, Clone, Copy)]
pub struct MapWindow {
    pub lateral: [f64; 2],
    pub longitudinal: [f64; 2],
}

impl MapWindow {
    pub fn new(lateral: [f64; 2], longitudinal: [f64; 2]) -> Self {
        assert!(lateral[0] < lateral[1] && longitudinal[0] < longitudinal[1]);
        Self { lateral, longitudinal }
    }

    /// Window shrunk by `by` on every side (clamped to stay nonempty).
    pub fn shrunk(&self, by: f64) -> MapWindow {
        let shrink = |r: [f64; 2]| {
            let by = by.min((r[1] - r[0]) / 2.0 - 1.0e-9);
            [r[0] + by, r[1] - by]
        };
        MapWindow { lateral: shrink(self.lateral), longitudinal: shrink(self.longitudinal) }
    }

    /// Body-frame containment: x forward, y lateral.
    #[inline]
    pub fn contains_body(&self, p: &Point) -> bool {
        p.x >= self.longitudinal[0]
            && p.x <= self.longitudinal[1]
            && p.y >= self.lateral[0]
            && p.y <= self.lateral[1]
    }

    /// Conservative reference-frame AABB of the rotated body window.
    pub fn to_reference_aabb(&self, pose_in_ref: &Pose) -> Aabb {
        let corners = [
            Point::new(self.longitudinal[0], self.lateral[0], 0.0),
            Point::new(self.longitudinal[0], self.lateral[1], 0.0),
            Point::new(self.longitudinal[1], self.lateral[0], 0.0),
            Point::new(self.longitudinal[1], self.lateral[1], 0.0),
        ];
        let mut bb = Aabb::enclosing(corners.iter().map(|c| pose_in_ref.apply(c)))
            .expect("four corners");
        bb.min.z = -1.0e6;
        bb.max.z = 1.0e6;
        bb
    }
}

/// Wall time per pipeline stage, milliseconds.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub filter_ms: f64,
    pub transform_ms: f64,
    pub integrate_ms: f64,
    pub reliable_ms: f64,
    pub cluster_ms: f64,
    pub layout_ms: f64,
    pub snapshot_ms: f64,
    pub evict_ms: f64,
    pub total_ms: f64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.filter_ms
            + self.transform_ms
            + self.integrate_ms
            + self.reliable_ms
            + self.cluster_ms
            + self.layout_ms
            + self.snapshot_ms
            + self.evict_ms
    }

    pub const STAGE_NAMES: [&'static str; 8] = [
        "filter", "transform", "integrate", "reliable", "cluster", "layout", "snapshot", "evict",
    ];

    pub fn stage_values(&self) -> [f64; 8] {
        [
            self.filter_ms,
            self.transform_ms,
            self.integrate_ms,
            self.reliable_ms,
            self.cluster_ms,
            self.layout_ms,
            self.snapshot_ms,
            self.evict_ms,
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SnapshotStats {
    /// Observed voxels currently allocated.
    pub voxels: usize,
    /// Voxels that crossed the reliability threshold this frame.
    pub new_reliable: usize,
    /// Cumulative reliable voxels this run.
    pub reliable_total: usize,
    pub instances: usize,
    pub detections_in: usize,
    pub detections_kept: usize,
    pub evicted_voxels: usize,
    #[serde(skip)]
    pub timings: StageTimings,
}

/// One instance's vectorized output.
#[derive(Debug, Clone)]
pub struct InstanceSummary {
    pub id: u32,
    pub marking_type: MarkingType,
    pub polyline: Vec<Point>,
    pub voxel_count: usize,
}

/// Immutable per-frame output; geometry is expressed in the reference frame.
#[derive(Debug, Clone)]
pub struct MapSnapshot {
    pub frame_index: u64,
    pub timestamp: f64,
    /// Input pose as given (body to world).
    pub pose: Pose,
    /// Body to reference-frame transform used for fusion.
    pub pose_in_ref: Pose,
    pub instances: Vec<InstanceSummary>,
    pub layout: RoadLayout,
    pub stats: SnapshotStats,
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("out-of-order timestamp: {current} after {previous}")]
    OutOfOrder { previous: f64, current: f64 },
    #[error("invalid pose at t={timestamp}: rotation not orthonormal")]
    InvalidPose { timestamp: f64 },
}

/// The per-frame fusion engine. Single writer; snapshots are detached values.
#[derive(Debug)]
pub struct LocalMap {
    config: RunConfig,
    window: MapWindow,
    voxels: SemanticVoxelMap,
    instances: InstanceMap,
    /// First frame's pose: the reference frame is its body frame.
    world_from_ref: Option<Pose>,
    last_timestamp: Option<f64>,
    frame_index: u64,
    reliable_total: usize,
}

impl LocalMap {
    pub fn new(config: RunConfig) -> Self {
        config.validate().expect("validated config");
        let window = MapWindow::new(config.window.lateral, config.window.longitudinal);
        let voxels = SemanticVoxelMap::new(config.voxel_size);
        Self {
            config,
            window,
            voxels,
            instances: InstanceMap::new(),
            world_from_ref: None,
            last_timestamp: None,
            frame_index: 0,
            reliable_total: 0,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Reference-to-world transform, fixed by the first processed frame.
    pub fn world_from_ref(&self) -> Option<&Pose> {
        self.world_from_ref.as_ref()
    }

    pub fn voxel_map(&self) -> &SemanticVoxelMap {
        &self.voxels
    }

    pub fn instance_map(&self) -> &InstanceMap {
        &self.instances
    }

    pub fn process_frame(&mut self, frame: &FrameInput) -> Result<MapSnapshot, FrameError> {
        let total_start = Instant::now();
        if let Some(prev) = self.last_timestamp {
            if frame.timestamp <= prev {
                return Err(FrameError::OutOfOrder { previous: prev, current: frame.timestamp });
            }
        }
        if !frame.pose.is_valid(1.0e-6) {
            return Err(FrameError::InvalidPose { timestamp: frame.timestamp });
        }
        self.last_timestamp = Some(frame.timestamp);
        let world_from_ref = *self.world_from_ref.get_or_insert(frame.pose);
        let pose_in_ref = world_from_ref.inverse().compose(&frame.pose);
        let ref_to_body = pose_in_ref.inverse();
        let window = self.window;
        let in_window = |p: &Point| window.contains_body(&ref_to_body.apply(p));
        let mut timings = StageTimings::default();

        // Detection preprocessing.
        let stage = Instant::now();
        let filtered = if self.config.preprocess {
            detection::filter_detections(
                &frame.detections,
                self.config.min_confidence,
                self.config.max_turn_angle(),
            )
        } else {
            frame.detections.clone()
        };
        timings.filter_ms = ms_since(stage);

        let stage = Instant::now();
        let transformed = detection::transform_to_reference(&filtered, &pose_in_ref);
        timings.transform_ms = ms_since(stage);

        // Voxel fusion and co-observation bookkeeping.
        let stage = Instant::now();
        let mut touched = Vec::new();
        for det in &transformed {
            let keys = self.voxels.integrate_detection(det);
            self.voxels.update_co_observation(&keys);
            touched.extend(keys);
        }
        timings.integrate_ms = ms_since(stage);

        // Reliable voxel extraction, gated to the output window so the latch
        // only fires once the voxel is inside it.
        let stage = Instant::now();
        let new_reliable =
            self.voxels
                .extract_new_reliable(&touched, self.config.reliability_min_count, in_window);
        self.reliable_total += new_reliable.len();
        timings.reliable_ms = ms_since(stage);

        // Incremental clustering and polyline refits.
        let stage = Instant::now();
        self.instances.prune_members(in_window, &self.config.fit);
        self.instances.refresh_member_counts(&self.voxels);
        self.instances.update_instances(
            &new_reliable,
            self.voxels.co_observation(),
            &self.config.clustering,
            &self.config.fit,
        );
        timings.cluster_ms = ms_since(stage);

        // Road layout over the current instance snapshot.
        let stage = Instant::now();
        let layout_inputs: Vec<InstancePolyline> = self
            .instances
            .iter()
            .filter(|i| i.polyline.len() >= 2)
            .map(|i| InstancePolyline {
                id: i.id,
                marking_type: i.marking_type,
                points: i.polyline.clone(),
            })
            .collect();
        let forward = pose_in_ref.forward();
        let layout = layout::build_road_layout(&layout_inputs, &self.config.layout, &forward);
        timings.layout_ms = ms_since(stage);

        // Snapshot assembly (pre-eviction geometry).
        let stage = Instant::now();
        let instances: Vec<InstanceSummary> = self
            .instances
            .iter()
            .filter(|i| i.polyline.len() >= 2)
            .map(|i| InstanceSummary {
                id: i.id,
                marking_type: i.marking_type,
                polyline: i.polyline.clone(),
                voxel_count: i.voxel_count(),
            })
            .collect();
        let mut stats = SnapshotStats {
            voxels: self.voxels.observed_voxels(),
            new_reliable: new_reliable.len(),
            reliable_total: self.reliable_total,
            instances: instances.len(),
            detections_in: frame.detections.len(),
            detections_kept: filtered.len(),
            evicted_voxels: 0,
            timings: StageTimings::default(),
        };
        timings.snapshot_ms = ms_since(stage);

        // Clear map memory outside the window, padded so evidence beyond the
        // output range keeps accumulating until the window reaches it.
        let stage = Instant::now();
        let mut keep = self.window.to_reference_aabb(&pose_in_ref);
        let margin = self.config.evict_margin;
        keep.min.x -= margin;
        keep.min.y -= margin;
        keep.max.x += margin;
        keep.max.y += margin;
        stats.evicted_voxels = self.voxels.evict_outside(&keep);
        timings.evict_ms = ms_since(stage);

        timings.total_ms = ms_since(total_start);
        stats.timings = timings;
        let snapshot = MapSnapshot {
            frame_index: self.frame_index,
            timestamp: frame.timestamp,
            pose: frame.pose,
            pose_in_ref,
            instances,
            layout,
            stats,
        };
        self.frame_index += 1;
        Ok(snapshot)
    }
}

#[inline]
fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1.0e3
}
