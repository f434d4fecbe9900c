//! Synthetic scenario generation: groundtruth road layouts, a constant-speed
//! trajectory on the road centerline, and per-frame noisy polyline
//! detections, so the whole pipeline is verifiable without a detection
//! network.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{FrameInput, MarkingType, Pose, RawDetection};
use crate::eval::TypedPolyline;
use crate::geom::{clip_polyline, Aabb, Point};

pub const FRAME_RATE_HZ: f64 = 10.0;

/// Weave wavelength along the path (meters).
const WEAVE_PERIOD: f64 = 45.0;

/// Length of the boundary transition ramp in merge/split layouts. Long
/// enough that rendered polylines stay well below the zigzag filter angle.
const TRANSITION_LEN: f64 = 12.0;

/// Groundtruth vertex spacing (meters). Coarse enough that point jitter
/// cannot fold a rendered polyline into a zigzag.
const GT_VERTEX_SPACING: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    Straight,
    Curve,
    Merge,
    Split,
    Intersection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: LayoutKind,
    /// Lanes on the wide side (downstream of a split, upstream of a merge).
    pub lane_count: u32,
    pub lane_width: f64,
    /// Road length along the travel direction (meters).
    pub length: f64,
    /// Signed centerline curvature (1/m), curves only; positive bends left.
    pub curvature: f64,
    pub speed_mps: f64,
    /// Road surface height below the body origin (meters). Ego frames sit at
    /// sensor height, so the ground plane is offset and generally not
    /// aligned with voxel boundaries.
    pub ground_z: f64,
    /// In-lane weave amplitude (meters). Zero rides the centerline exactly;
    /// a realistic value (~0.15) keeps the fusion lattice, which is anchored
    /// to the first pose, from aligning with the painted lines.
    pub lateral_weave: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: LayoutKind::Straight,
            lane_count: 2,
            lane_width: 3.5,
            length: 200.0,
            curvature: 0.0,
            speed_mps: 5.0,
            ground_z: -0.33,
            lateral_weave: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Probability a detection is dropped per frame.
    pub dropout: f64,
    /// Isotropic in-plane point jitter sigma (meters).
    pub jitter_sigma: f64,
    /// Vertical jitter sigma; zero keeps the map planar.
    pub jitter_sigma_z: f64,
    /// Fraction of frames gaining one random zigzag false detection.
    pub outlier_rate: f64,
    /// Confidences are drawn uniformly from this range.
    pub confidence_range: [f64; 2],
    /// Detection range in the body frame, slightly larger than the output
    /// window.
    pub detection_lateral: [f64; 2],
    pub detection_longitudinal: [f64; 2],
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            dropout: 0.0,
            jitter_sigma: 0.0,
            jitter_sigma_z: 0.0,
            outlier_rate: 0.0,
            confidence_range: [1.0, 1.0],
            detection_lateral: [-18.0, 18.0],
            detection_longitudinal: [-10.0, 40.0],
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unsupported scenario: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub gt: Vec<TypedPolyline>,
    /// (timestamp, pose) at the frame rate; poses follow the road
    /// centerline at constant speed.
    pub trajectory: Vec<(f64, Pose)>,
    /// Groundtruth lane count metadata (wide side).
    pub lanes: u32,
}

fn gt_line(marking_type: MarkingType, points: Vec<Point>) -> TypedPolyline {
    TypedPolyline { marking_type, points }
}

/// x positions every `GT_VERTEX_SPACING` from 0 to `length`, inclusive.
fn stations(from: f64, to: f64) -> Vec<f64> {
    let n = ((to - from) / GT_VERTEX_SPACING).ceil().max(1.0) as usize;
    (0..=n).map(|i| from + (to - from) * i as f64 / n as f64).collect()
}

/// Smooth 0..1 ramp (cosine ease) over [x0, x0 + TRANSITION_LEN].
fn ramp(x: f64, x0: f64) -> f64 {
    let r = ((x - x0) / TRANSITION_LEN).clamp(0.0, 1.0);
    0.5 * (1.0 - (std::f64::consts::PI * r).cos())
}

// Negated comparisons are deliberate: `!(x > 0.0)` also rejects NaN.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn build_scenario(spec: &ScenarioSpec) -> Result<Scenario, ScenarioError> {
    if spec.lane_count == 0 {
        return Err(ScenarioError::Unsupported("lane_count must be >= 1".into()));
    }
    if !(spec.lane_width > 0.0) || !(spec.length > 10.0) || !(spec.speed_mps > 0.0) {
        return Err(ScenarioError::Unsupported(
            "lane_width, speed and length must be positive (length > 10 m)".into(),
        ));
    }
    match spec.kind {
        LayoutKind::Straight => Ok(straight(spec)),
        LayoutKind::Curve => curve(spec),
        LayoutKind::Split | LayoutKind::Merge => fork(spec),
        LayoutKind::Intersection => Ok(intersection(spec)),
    }
}

/// Lateral weave offset and the heading correction it induces at arclength s.
fn weave(spec: &ScenarioSpec, s: f64) -> (f64, f64) {
    if spec.lateral_weave == 0.0 {
        return (0.0, 0.0);
    }
    let k = std::f64::consts::TAU / WEAVE_PERIOD;
    let offset = spec.lateral_weave * (k * s).sin();
    let heading = (spec.lateral_weave * k * (k * s).cos()).atan();
    (offset, heading)
}

fn straight_trajectory(spec: &ScenarioSpec) -> Vec<(f64, Pose)> {
    let frames = (spec.length / spec.speed_mps * FRAME_RATE_HZ).floor() as usize;
    (0..=frames)
        .map(|i| {
            let t = i as f64 / FRAME_RATE_HZ;
            let s = spec.speed_mps * t;
            let (offset, heading) = weave(spec, s);
            (t, Pose::from_yaw(heading, Vector3::new(s, offset, 0.0)))
        })
        .collect()
}

fn straight(spec: &ScenarioSpec) -> Scenario {
    let n = spec.lane_count;
    let half = n as f64 * spec.lane_width / 2.0;
    let mut gt = Vec::new();
    for j in 0..=n {
        let y = half - j as f64 * spec.lane_width;
        let kind = if j == 0 || j == n { MarkingType::Roadedge } else { MarkingType::Laneline };
        gt.push(gt_line(
            kind,
            stations(0.0, spec.length).iter().map(|&x| Point::new(x, y, spec.ground_z)).collect(),
        ));
    }
    Scenario { gt, trajectory: straight_trajectory(spec), lanes: n }
}

fn curve(spec: &ScenarioSpec) -> Result<Scenario, ScenarioError> {
    if spec.curvature == 0.0 {
        return Err(ScenarioError::Unsupported("curve requires nonzero curvature".into()));
    }
    let radius = 1.0 / spec.curvature;
    let half = spec.lane_count as f64 * spec.lane_width / 2.0;
    if radius.abs() <= half + 1.0 {
        return Err(ScenarioError::Unsupported(format!(
            "curvature {} too tight for road half-width {half}",
            spec.curvature
        )));
    }
    let n = spec.lane_count;
    let at = |s: f64, lateral: f64| -> Point {
        let theta = s / radius;
        Point::new(
            (radius - lateral) * theta.sin(),
            radius - (radius - lateral) * theta.cos(),
            spec.ground_z,
        )
    };
    let mut gt = Vec::new();
    for j in 0..=n {
        let y = half - j as f64 * spec.lane_width;
        let kind = if j == 0 || j == n { MarkingType::Roadedge } else { MarkingType::Laneline };
        gt.push(gt_line(kind, stations(0.0, spec.length).iter().map(|&s| at(s, y)).collect()));
    }
    let frames = (spec.length / spec.speed_mps * FRAME_RATE_HZ).floor() as usize;
    let trajectory = (0..=frames)
        .map(|i| {
            let t = i as f64 / FRAME_RATE_HZ;
            let s = spec.speed_mps * t;
            let (offset, heading) = weave(spec, s);
            let p = at(s, offset);
            (t, Pose::from_yaw(s / radius + heading, Vector3::new(p.x, p.y, 0.0)))
        })
        .collect();
    Ok(Scenario { gt, trajectory, lanes: n })
}

/// Split (1 lane widening into `lane_count`) or merge (time-mirrored). The
/// fork is left-anchored: extra lanes are added on the left while the right
/// edge runs straight, and the interior lanelines exist only on the wide
/// side of the fork.
fn fork(spec: &ScenarioSpec) -> Result<Scenario, ScenarioError> {
    let n = spec.lane_count;
    if n < 2 {
        return Err(ScenarioError::Unsupported("split/merge needs lane_count >= 2".into()));
    }
    if spec.length < 3.0 * TRANSITION_LEN {
        return Err(ScenarioError::Unsupported(format!(
            "split/merge needs length > {:.0} m",
            3.0 * TRANSITION_LEN
        )));
    }
    let w = spec.lane_width;
    let narrow_left = w / 2.0;
    let wide_left = n as f64 * w - w / 2.0;
    // Fork starts at 45% of the road so the single-lane side is the longer
    // one seen first when splitting.
    let xs = 0.45 * spec.length;
    let mirror = spec.kind == LayoutKind::Merge;
    let flip = |x: f64| if mirror { spec.length - x } else { x };

    let mut gt = Vec::new();
    // Left roadedge follows the widening ramp; the right one runs straight.
    let mut left: Vec<Point> = stations(0.0, spec.length)
        .iter()
        .map(|&x| {
            let y = narrow_left + (wide_left - narrow_left) * ramp(x, xs);
            Point::new(flip(x), y, spec.ground_z)
        })
        .collect();
    let mut right: Vec<Point> = stations(0.0, spec.length)
        .iter()
        .map(|&x| Point::new(flip(x), -w / 2.0, spec.ground_z))
        .collect();
    if mirror {
        left.reverse();
        right.reverse();
    }
    gt.push(gt_line(MarkingType::Roadedge, left));
    gt.push(gt_line(MarkingType::Roadedge, right));
    // Interior lanelines on the wide side only.
    for j in 1..n {
        let y = j as f64 * w - w / 2.0;
        let mut pts: Vec<Point> = stations(xs + TRANSITION_LEN, spec.length)
            .iter()
            .map(|&x| Point::new(flip(x), y, spec.ground_z))
            .collect();
        if mirror {
            pts.reverse();
        }
        gt.push(gt_line(MarkingType::Laneline, pts));
    }
    Ok(Scenario { gt, trajectory: straight_trajectory(spec), lanes: n })
}

fn intersection(spec: &ScenarioSpec) -> Scenario {
    let n = spec.lane_count;
    let w = spec.lane_width;
    let half = n as f64 * w / 2.0;
    let cross_x = spec.length / 2.0;
    let box_half = half + 1.0;
    let b_extent = 30.0_f64.min(spec.length / 4.0);
    let mut gt = Vec::new();

    // Road A along x, broken at the crossing box.
    for j in 0..=n {
        let y = half - j as f64 * w;
        let kind = if j == 0 || j == n { MarkingType::Roadedge } else { MarkingType::Laneline };
        for (lo, hi) in [(0.0, cross_x - box_half), (cross_x + box_half, spec.length)] {
            gt.push(gt_line(
                kind,
                stations(lo, hi).iter().map(|&x| Point::new(x, y, spec.ground_z)).collect(),
            ));
        }
    }
    // Road B along y, broken the same way.
    for j in 0..=n {
        let x = cross_x + half - j as f64 * w;
        let kind = if j == 0 || j == n { MarkingType::Roadedge } else { MarkingType::Laneline };
        for (lo, hi) in [(-b_extent, -box_half), (box_half, b_extent)] {
            gt.push(gt_line(
                kind,
                stations(lo, hi).iter().map(|&y| Point::new(x, y, spec.ground_z)).collect(),
            ));
        }
    }
    // Stop bars on every approach, inset so the paint does not overlap the
    // crossing road's edge lines.
    let bar = 0.5;
    let inset = 0.3;
    for side in [-1.0, 1.0] {
        let x = cross_x + side * (box_half + bar);
        gt.push(gt_line(
            MarkingType::Stopline,
            vec![
                Point::new(x, -half + inset, spec.ground_z),
                Point::new(x, half - inset, spec.ground_z),
            ],
        ));
        let y = side * (box_half + bar);
        gt.push(gt_line(
            MarkingType::Stopline,
            vec![
                Point::new(cross_x - half + inset, y, spec.ground_z),
                Point::new(cross_x + half - inset, y, spec.ground_z),
            ],
        ));
    }
    Scenario { gt, trajectory: straight_trajectory(spec), lanes: n }
}

/// Stable per-frame seed derived from the scenario seed.
pub fn frame_seed(scenario_seed: u64, frame_index: u64) -> u64 {
    let mut h = scenario_seed ^ frame_index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h
}

/// Renders one noisy frame: groundtruth clipped to the body-frame detection
/// range, independent per-detection dropout, in-plane point jitter, drawn
/// confidences, and an optional injected zigzag outlier.
pub fn render_frame(
    gt: &[TypedPolyline],
    pose: &Pose,
    timestamp: f64,
    noise: &NoiseSpec,
    seed: u64,
) -> FrameInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let body_from_world = pose.inverse();
    let range = Aabb::from_ranges(noise.detection_lateral, noise.detection_longitudinal);
    let mut detections = Vec::new();
    for line in gt {
        let body_pts: Vec<Point> = line.points.iter().map(|p| body_from_world.apply(p)).collect();
        for piece in clip_polyline(&body_pts, &range) {
            if noise.dropout > 0.0 && rng.gen::<f64>() < noise.dropout {
                continue;
            }
            let mut points = piece;
            if noise.jitter_sigma > 0.0 || noise.jitter_sigma_z > 0.0 {
                let xy = Normal::new(0.0, noise.jitter_sigma.max(1.0e-12)).unwrap();
                let z = Normal::new(0.0, noise.jitter_sigma_z.max(1.0e-12)).unwrap();
                for p in &mut points {
                    p.x += xy.sample(&mut rng);
                    p.y += xy.sample(&mut rng);
                    if noise.jitter_sigma_z > 0.0 {
                        p.z += z.sample(&mut rng);
                    }
                }
            }
            let [lo, hi] = noise.confidence_range;
            let confidence = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            detections.push(RawDetection::new(points, confidence, line.marking_type));
        }
    }
    if noise.outlier_rate > 0.0 && rng.gen::<f64>() < noise.outlier_rate {
        detections.push(random_zigzag(&mut rng, noise));
    }
    FrameInput { timestamp, pose: *pose, detections }
}

/// A short polyline folding back on itself: guaranteed to trip the zigzag
/// filter.
fn random_zigzag(rng: &mut ChaCha8Rng, noise: &NoiseSpec) -> RawDetection {
    let x0 = rng.gen_range(noise.detection_longitudinal[0]..noise.detection_longitudinal[1] - 5.0);
    let y0 = rng.gen_range(noise.detection_lateral[0] + 2.0..noise.detection_lateral[1] - 2.0);
    let mut points = Vec::with_capacity(5);
    for i in 0..5 {
        let fold = if i % 2 == 0 { 0.0 } else { 1.5 };
        points.push(Point::new(x0 + i as f64 * 1.0, y0 + fold, 0.0));
    }
    let kind = MarkingType::ALL[rng.gen_range(0..3usize)];
    let [lo, hi] = noise.confidence_range;
    let confidence = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    RawDetection::new(points, confidence, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_two_lane_counts() {
        let spec = ScenarioSpec { length: 200.0, ..Default::default() };
        let s = build_scenario(&spec).unwrap();
        let lanelines = s.gt.iter().filter(|l| l.marking_type == MarkingType::Laneline).count();
        let roadedges = s.gt.iter().filter(|l| l.marking_type == MarkingType::Roadedge).count();
        assert_eq!(lanelines, 1);
        assert_eq!(roadedges, 2);
        assert_eq!(s.lanes, 2);
    }

    #[test]
    fn split_adds_a_boundary_downstream() {
        let spec = ScenarioSpec { kind: LayoutKind::Split, length: 200.0, ..Default::default() };
        let s = build_scenario(&spec).unwrap();
        let crossing = |x: f64| {
            s.gt.iter()
                .filter(|l| {
                    let xs: Vec<f64> = l.points.iter().map(|p| p.x).collect();
                    let (lo, hi) =
                        xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                            (a.min(v), b.max(v))
                        });
                    lo <= x && x <= hi
                })
                .count()
        };
        assert_eq!(crossing(10.0), 2, "upstream: two roadedges only");
        assert_eq!(crossing(190.0), 3, "downstream: +1 laneline");
    }

    #[test]
    fn trajectory_rides_the_centerline() {
        let spec = ScenarioSpec { kind: LayoutKind::Curve, curvature: 0.01, ..Default::default() };
        let s = build_scenario(&spec).unwrap();
        let radius = 100.0;
        for (_, pose) in &s.trajectory {
            let p = pose.translation;
            // Distance from the arc center (0, R) must equal R.
            let d = ((p.x).powi(2) + (p.y - radius).powi(2)).sqrt();
            assert!((d - radius).abs() < 1e-9);
        }
        let straight = build_scenario(&ScenarioSpec::default()).unwrap();
        for (_, pose) in &straight.trajectory {
            assert!(pose.translation.y.abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = ScenarioSpec { kind: LayoutKind::Curve, ..Default::default() };
        assert!(build_scenario(&spec).is_err()); // zero curvature
        spec.curvature = 0.5; // 2 m radius, tighter than the road half width
        assert!(build_scenario(&spec).is_err());
        let spec = ScenarioSpec { kind: LayoutKind::Split, lane_count: 1, ..Default::default() };
        assert!(build_scenario(&spec).is_err());
    }

    #[test]
    fn noiseless_render_equals_clipped_gt() {
        let spec = ScenarioSpec::default();
        let s = build_scenario(&spec).unwrap();
        let noise = NoiseSpec::default();
        let (t, pose) = s.trajectory[20];
        let frame = render_frame(&s.gt, &pose, t, &noise, 7);
        assert!(!frame.detections.is_empty());
        let range = Aabb::from_ranges(noise.detection_lateral, noise.detection_longitudinal);
        let body = pose.inverse();
        let mut expected = Vec::new();
        for line in &s.gt {
            let pts: Vec<Point> = line.points.iter().map(|p| body.apply(p)).collect();
            for piece in clip_polyline(&pts, &range) {
                expected.push((line.marking_type, piece));
            }
        }
        assert_eq!(frame.detections.len(), expected.len());
        for (det, (kind, pts)) in frame.detections.iter().zip(expected.iter()) {
            assert_eq!(det.marking_type, *kind);
            assert_eq!(det.confidence, 1.0);
            assert_eq!(det.points.len(), pts.len());
            for (a, b) in det.points.iter().zip(pts.iter()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn full_dropout_empties_frames() {
        let s = build_scenario(&ScenarioSpec::default()).unwrap();
        let noise = NoiseSpec { dropout: 1.0, ..Default::default() };
        let (t, pose) = s.trajectory[5];
        let frame = render_frame(&s.gt, &pose, t, &noise, 3);
        assert!(frame.detections.is_empty());
    }

    #[test]
    fn dropout_rate_is_calibrated() {
        // Monte Carlo frequency check over many rendered frames.
        let s = build_scenario(&ScenarioSpec::default()).unwrap();
        let noise = NoiseSpec { dropout: 0.3, ..Default::default() };
        let (t, pose) = s.trajectory[10];
        let baseline = render_frame(&s.gt, &pose, t, &NoiseSpec::default(), 0).detections.len();
        let mut kept = 0usize;
        let trials = 10_000usize;
        for i in 0..trials {
            kept += render_frame(&s.gt, &pose, t, &noise, frame_seed(9, i as u64))
                .detections
                .len();
        }
        let rate = 1.0 - kept as f64 / (trials * baseline) as f64;
        assert!((rate - 0.3).abs() < 0.02, "empirical dropout {rate}");
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = build_scenario(&ScenarioSpec {
            kind: LayoutKind::Split,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let noise = NoiseSpec {
            dropout: 0.3,
            jitter_sigma: 0.15,
            outlier_rate: 0.05,
            confidence_range: [0.4, 1.0],
            ..Default::default()
        };
        let (t, pose) = s.trajectory[30];
        let a = render_frame(&s.gt, &pose, t, &noise, frame_seed(5, 30));
        let b = render_frame(&s.gt, &pose, t, &noise, frame_seed(5, 30));
        assert_eq!(a.detections.len(), b.detections.len());
        for (x, y) in a.detections.iter().zip(b.detections.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn injected_outliers_are_zigzags() {
        let noise = NoiseSpec { outlier_rate: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = random_zigzag(&mut rng, &noise);
        let worst = crate::detection::max_turn_angle(&z.points);
        assert!(worst > 45.0_f64.to_radians(), "outlier must trip the zigzag filter");
    }
}
