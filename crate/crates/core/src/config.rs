//! Run configuration: every pipeline tunable with its default, JSON
//! (de)serialization with unknown-key rejection, validation, and dotted-path
//! overrides for CLI `--set` flags and ablation sweeps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::MatchConfig;
use crate::instance::ClusteringParams;
use crate::layout::LayoutParams;
use crate::polyline_fit::PolylineFitParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown config key: {0}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {value}")]
    BadValue { key: String, value: String },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    /// Lateral half-space of the output map in the body frame [min, max].
    pub lateral: [f64; 2],
    /// Longitudinal range of the output map in the body frame [min, max].
    pub longitudinal: [f64; 2],
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { lateral: [-15.0, 15.0], longitudinal: [-5.0, 30.0] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Voxel edge length (meters).
    pub voxel_size: f64,
    /// Detections below this confidence are rejected.
    pub min_confidence: f64,
    /// Maximum interior turn angle before a polyline counts as zigzag
    /// (degrees).
    pub max_turn_angle_deg: f64,
    /// Master switch for the detection filters (confidence + zigzag).
    pub preprocess: bool,
    /// A voxel becomes reliable when its dominant counter exceeds this.
    pub reliability_min_count: u32,
    /// Padding around the output window inside which voxel counters keep
    /// accumulating (meters). Detections typically reach farther than the
    /// output window; evidence gathered there must survive until the window
    /// arrives, or nothing is reliable by the time it enters the output.
    pub evict_margin: f64,
    pub clustering: ClusteringParams,
    pub fit: PolylineFitParams,
    pub window: WindowConfig,
    pub layout: LayoutParams,
    pub eval: MatchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.2,
            min_confidence: 0.3,
            max_turn_angle_deg: 45.0,
            preprocess: true,
            reliability_min_count: 10,
            evict_margin: 10.0,
            clustering: ClusteringParams::default(),
            fit: PolylineFitParams::default(),
            window: WindowConfig::default(),
            layout: LayoutParams::default(),
            eval: MatchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn max_turn_angle(&self) -> f64 {
        self.max_turn_angle_deg.to_radians()
    }

    /// Applies a `path=value` override, e.g. `reliability_min_count=3` or
    /// `layout.min_lane_length=4.0`. The value is parsed as JSON.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let mut node = &mut tree;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
            node = obj.get_mut(*part).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
            if i == parts.len() - 1 {
                let parsed: serde_json::Value = serde_json::from_str(value)
                    .map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })?;
                *node = parsed;
            }
        }
        let updated: RunConfig = serde_json::from_value(tree)
            .map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    // Negated comparisons are deliberate: `!(x > 0.0)` also rejects NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if !(self.voxel_size > 0.0) {
            return fail(format!("voxel_size must be positive, got {}", self.voxel_size));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return fail(format!("min_confidence must be in [0,1], got {}", self.min_confidence));
        }
        if !(self.max_turn_angle_deg > 0.0 && self.max_turn_angle_deg < 180.0) {
            return fail(format!(
                "max_turn_angle_deg must be in (0,180), got {}",
                self.max_turn_angle_deg
            ));
        }
        let c = &self.clustering;
        if !(c.min_pair_prob > 0.0 && c.min_pair_prob <= 1.0) {
            return fail(format!("clustering.min_pair_prob must be in (0,1], got {}", c.min_pair_prob));
        }
        if c.min_shared_count < 1 {
            return fail("clustering.min_shared_count must be >= 1".into());
        }
        if !(c.min_shared_ratio > 0.0 && c.min_shared_ratio <= 1.0) {
            return fail(format!(
                "clustering.min_shared_ratio must be in (0,1], got {}",
                c.min_shared_ratio
            ));
        }
        let f = &self.fit;
        if !(f.eigen_ratio_threshold > 0.0 && f.eigen_ratio_threshold < 1.0) {
            return fail(format!(
                "fit.eigen_ratio_threshold must be in (0,1), got {}",
                f.eigen_ratio_threshold
            ));
        }
        if !(f.segment_len_primary > 0.0) || !(f.segment_len_quadrant > 0.0) {
            return fail("fit segment lengths must be positive".into());
        }
        if f.segment_len_quadrant > f.segment_len_primary {
            return fail("fit.segment_len_quadrant must not exceed segment_len_primary".into());
        }
        if self.evict_margin < 0.0 {
            return fail(format!("evict_margin must be nonnegative, got {}", self.evict_margin));
        }
        if self.window.lateral[0] >= self.window.lateral[1]
            || self.window.longitudinal[0] >= self.window.longitudinal[1]
        {
            return fail("window ranges must satisfy min < max".into());
        }
        let l = &self.layout;
        if !(l.width_interval[0] > 0.0 && l.width_interval[0] < l.width_interval[1]) {
            return fail(format!("layout.width_interval invalid: {:?}", l.width_interval));
        }
        if l.width_variation_max < 0.0 || l.endpoint_dist_max < 0.0 || l.linkage_gap_max < 0.0 {
            return fail("layout distances must be nonnegative".into());
        }
        if !(l.min_lane_length > 0.0) || !(l.sample_step > 0.0) {
            return fail("layout.min_lane_length and sample_step must be positive".into());
        }
        for (name, v) in [
            ("endpoint_angle_max_deg", l.endpoint_angle_max_deg),
            ("section_angle_max_deg", l.section_angle_max_deg),
            ("linkage_angle_max_deg", l.linkage_angle_max_deg),
        ] {
            if !(v > 0.0 && v < 180.0) {
                return fail(format!("layout.{name} must be in (0,180), got {v}"));
            }
        }
        let e = &self.eval;
        if !(e.sample_interval > 0.0 && e.match_radius > 0.0) {
            return fail("eval.sample_interval and match_radius must be positive".into());
        }
        if !(e.tp_fraction > 0.0 && e.tp_fraction <= 1.0) {
            return fail(format!("eval.tp_fraction must be in (0,1], got {}", e.tp_fraction));
        }
        Ok(())
    }
}
