//! Per-frame detection input: domain types, reliability filtering and the
//! body-to-reference transform.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::Point;

/// Road marking classes carried by every detection and voxel counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkingType {
    Laneline,
    Roadedge,
    Stopline,
}

impl MarkingType {
    pub const ALL: [MarkingType; 3] =
        [MarkingType::Laneline, MarkingType::Roadedge, MarkingType::Stopline];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MarkingType::Laneline => "laneline",
            MarkingType::Roadedge => "roadedge",
            MarkingType::Stopline => "stopline",
        }
    }
}

impl std::fmt::Display for MarkingType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One detected road marking: ordered 3D points with a confidence and type.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDetection {
    pub points: Vec<Point>,
    pub confidence: f64,
    pub marking_type: MarkingType,
}

impl RawDetection {
    pub fn new(points: Vec<Point>, confidence: f64, marking_type: MarkingType) -> Self {
        Self { points, confidence, marking_type }
    }
}

/// Rigid body-to-reference transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Pose with the given yaw (radians about +z) and position.
    pub fn from_yaw(yaw: f64, position: Vector3<f64>) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self { rotation, translation: position }
    }

    #[inline]
    pub fn apply(&self, p: &Point) -> Point {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// self ∘ other: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Checks orthonormality and a +1 determinant within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let gram = self.rotation.transpose() * self.rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        ortho_err <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Forward axis of the body frame expressed in the target frame.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.column(0).into_owned()
    }
}

/// One timestamped bundle of pose and raw detections.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub timestamp: f64,
    pub pose: Pose,
    pub detections: Vec<RawDetection>,
}

/// Largest turn angle (radians) between consecutive segment directions.
/// Zero for polylines without interior vertices.
pub fn max_turn_angle(points: &[Point]) -> f64 {
    let mut worst = 0.0_f64;
    for w in points.windows(3) {
        let a = w[1] - w[0];
        let b = w[2] - w[1];
        worst = worst.max(crate::geom::angle_between(&a, &b));
    }
    worst
}

/// Keeps exactly the detections with `confidence >= min_confidence` whose
/// interior turn angles never exceed `max_turn` (radians). Order preserved;
/// detections are never mutated.
pub fn filter_detections(
    detections: &[RawDetection],
    min_confidence: f64,
    max_turn: f64,
) -> Vec<RawDetection> {
    debug_assert!(max_turn > 0.0 && max_turn < std::f64::consts::PI);
    detections
        .iter()
        .filter(|d| d.confidence >= min_confidence && max_turn_angle(&d.points) <= max_turn)
        .cloned()
        .collect()
}

/// Transforms every point by `pose`; confidences and types are untouched.
pub fn transform_to_reference(detections: &[RawDetection], pose: &Pose) -> Vec<RawDetection> {
    detections
        .iter()
        .map(|d| RawDetection {
            points: d.points.iter().map(|p| pose.apply(p)).collect(),
            confidence: d.confidence,
            marking_type: d.marking_type,
        })
        .collect()
}
