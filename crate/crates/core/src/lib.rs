//! Online temporal fusion of per-frame 3D road-marking detections into a
//! consistent vectorized local map.
//!
//! The pipeline takes timestamped bundles of vehicle pose + polyline
//! detections (lanelines, roadedges, stoplines) and maintains, frame by
//! frame:
//!
//! 1. **Preprocessing** – confidence and zigzag rejection, body-to-reference
//!    transform ([`detection`]).
//! 2. **Semantic voxel map** – a hashing-based sparse voxel map accumulating
//!    per-type detection counters plus a co-observation pair table
//!    ([`voxel`]).
//! 3. **Instance map** – incremental clustering of reliable voxels into
//!    road-marking instances with PCA-based polyline models ([`instance`],
//!    [`polyline_fit`]).
//! 4. **Road layout** – lane boundaries, road sections, lanes and lane
//!    linkages derived from the instances ([`layout`]).
//!
//! [`local::LocalMap`] orchestrates the per-frame update and enforces the
//! vehicle-centered map window. [`sim`] generates synthetic scenarios and
//! noisy detection streams, and [`eval`] scores maps against groundtruth
//! with instance-level (precision/recall/F1) and point-level (average
//! Chamfer distance) metrics. [`runner`] ties streams, configs and reports
//! together for the CLI.

pub mod config;
pub mod detection;
pub mod eval;
pub mod geom;
pub mod instance;
pub mod io;
pub mod layout;
pub mod local;
pub mod polyline_fit;
pub mod runner;
pub mod sim;
pub mod voxel;

mod hashing;

pub use config::RunConfig;
pub use detection::{FrameInput, MarkingType, Pose, RawDetection};
pub use local::{LocalMap, MapSnapshot, MapWindow};
