//! Instance-level (precision/recall/F1) and point-level (average Chamfer
//! distance) map metrics.
//!
//! Both the predicted and groundtruth polylines are resampled at a fixed
//! interval. A prediction matches a groundtruth line when enough of its
//! samples land within the match radius of that line's samples; groundtruth
//! lines are claimed greedily in descending match-fraction order, one
//! prediction each.

use serde::{Deserialize, Serialize};

use crate::detection::MarkingType;
use crate::geom::{self, Point};
use crate::hashing::Map;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchConfig {
    /// Resampling interval along both line sets (meters).
    pub sample_interval: f64,
    /// A sample matches when its nearest groundtruth sample is closer than
    /// this (meters).
    pub match_radius: f64,
    /// A prediction is a true positive when its matched samples exceed this
    /// fraction of the groundtruth line's sample count (strict).
    pub tp_fraction: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { sample_interval: 0.1, match_radius: 0.5, tp_fraction: 0.75 }
    }
}

/// A typed polyline, the unit both metrics operate on.
#[derive(Debug, Clone)]
pub struct TypedPolyline {
    pub marking_type: MarkingType,
    pub points: Vec<Point>,
}

/// Raw match counts for one marking type; Chamfer distances are kept as a
/// sum so counts can be accumulated across frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub cd_sum: f64,
}

impl MatchCounts {
    pub fn add(&mut self, other: &MatchCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.cd_sum += other.cd_sum;
    }

    pub fn precision(&self) -> Option<f64> {
        let denom = self.tp + self.fp;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let denom = self.tp + self.fn_;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }

    pub fn f1(&self) -> Option<f64> {
        match (self.precision(), self.recall()) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        }
    }

    pub fn acd(&self) -> Option<f64> {
        (self.tp > 0).then(|| self.cd_sum / self.tp as f64)
    }
}

/// Derived metrics of one line class (or the total row). Percent values;
/// `null` marks undefined metrics (empty denominators).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision_pct: Option<f64>,
    pub recall_pct: Option<f64>,
    pub f1_pct: Option<f64>,
    pub acd_m: Option<f64>,
}

impl From<&MatchCounts> for TypeMetrics {
    fn from(c: &MatchCounts) -> Self {
        Self {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision_pct: c.precision().map(|v| v * 100.0),
            recall_pct: c.recall().map(|v| v * 100.0),
            f1_pct: c.f1().map(|v| v * 100.0),
            acd_m: c.acd(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub laneline: TypeMetrics,
    pub roadedge: TypeMetrics,
    pub stopline: TypeMetrics,
    pub total: TypeMetrics,
}

impl MetricsReport {
    pub fn from_counts(counts: &[MatchCounts; 3]) -> Self {
        let mut total = MatchCounts::default();
        for c in counts {
            total.add(c);
        }
        Self {
            laneline: (&counts[0]).into(),
            roadedge: (&counts[1]).into(),
            stopline: (&counts[2]).into(),
            total: (&total).into(),
        }
    }

    pub fn of_type(&self, t: MarkingType) -> &TypeMetrics {
        match t {
            MarkingType::Laneline => &self.laneline,
            MarkingType::Roadedge => &self.roadedge,
            MarkingType::Stopline => &self.stopline,
        }
    }
}

/// Samples a polyline at arclengths 0, d, 2d, ... plus the final endpoint.
pub fn sample_polyline(points: &[Point], interval: f64) -> Vec<Point> {
    debug_assert!(interval > 0.0);
    if points.len() < 2 {
        return points.to_vec();
    }
    let len = geom::arclength(points);
    let n = (len / interval).floor() as usize;
    let mut out: Vec<Point> =
        (0..=n).map(|i| geom::point_at_arclength(points, i as f64 * interval)).collect();
    let last = *points.last().unwrap();
    if (out.last().unwrap() - last).norm() > 1.0e-9 {
        out.push(last);
    }
    out
}

/// Uniform hash grid over sample points for nearest-sample queries.
struct SampleGrid {
    cell: f64,
    cells: Map<(i32, i32), Vec<usize>>,
    points: Vec<Point>,
}

impl SampleGrid {
    fn build(points: Vec<Point>, cell: f64) -> Self {
        let mut cells: Map<(i32, i32), Vec<usize>> = Map::default();
        for (i, p) in points.iter().enumerate() {
            let key = ((p.x / cell).floor() as i32, (p.y / cell).floor() as i32);
            cells.entry(key).or_default().push(i);
        }
        Self { cell, cells, points }
    }

    /// Distance to the nearest sample if within one grid ring, else the
    /// exact nearest via full scan (rare).
    fn nearest_dist(&self, p: &Point) -> f64 {
        let cx = (p.x / self.cell).floor() as i32;
        let cy = (p.y / self.cell).floor() as i32;
        let mut best = f64::INFINITY;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy)) {
                    for &i in bucket {
                        best = best.min((self.points[i] - p).norm());
                    }
                }
            }
        }
        if best.is_infinite() {
            for q in &self.points {
                best = best.min((q - p).norm());
            }
        }
        best
    }
}

/// Per-type match counts between predicted and groundtruth line sets.
pub fn score_counts(
    predicted: &[TypedPolyline],
    groundtruth: &[TypedPolyline],
    cfg: &MatchConfig,
) -> [MatchCounts; 3] {
    let mut out = [MatchCounts::default(); 3];
    for t in MarkingType::ALL {
        out[t.index()] = score_one_type(
            predicted.iter().filter(|l| l.marking_type == t),
            groundtruth.iter().filter(|l| l.marking_type == t),
            cfg,
        );
    }
    out
}

/// Full report for one prediction/groundtruth pair.
pub fn match_and_score(
    predicted: &[TypedPolyline],
    groundtruth: &[TypedPolyline],
    cfg: &MatchConfig,
) -> MetricsReport {
    MetricsReport::from_counts(&score_counts(predicted, groundtruth, cfg))
}

fn score_one_type<'a>(
    predicted: impl Iterator<Item = &'a TypedPolyline>,
    groundtruth: impl Iterator<Item = &'a TypedPolyline>,
    cfg: &MatchConfig,
) -> MatchCounts {
    let pred_samples: Vec<Vec<Point>> = predicted
        .filter(|l| l.points.len() >= 2)
        .map(|l| sample_polyline(&l.points, cfg.sample_interval))
        .collect();
    let gt_grids: Vec<(usize, SampleGrid)> = groundtruth
        .filter(|l| l.points.len() >= 2)
        .map(|l| {
            let samples = sample_polyline(&l.points, cfg.sample_interval);
            (samples.len(), SampleGrid::build(samples, cfg.match_radius.max(1.0e-6)))
        })
        .collect();

    // Match fraction and Chamfer distance for every (prediction, gt) pair.
    struct Candidate {
        pred: usize,
        gt: usize,
        fraction: f64,
        cd: f64,
    }
    let mut candidates = Vec::new();
    for (pi, samples) in pred_samples.iter().enumerate() {
        for (gi, (gt_len, grid)) in gt_grids.iter().enumerate() {
            let mut matched = 0usize;
            let mut dist_sum = 0.0;
            for p in samples {
                let d = grid.nearest_dist(p);
                if d < cfg.match_radius {
                    matched += 1;
                    dist_sum += d;
                }
            }
            let fraction = matched as f64 / *gt_len as f64;
            if fraction > cfg.tp_fraction {
                candidates.push(Candidate {
                    pred: pi,
                    gt: gi,
                    fraction,
                    cd: dist_sum / matched as f64,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.fraction
            .total_cmp(&a.fraction)
            .then_with(|| a.pred.cmp(&b.pred))
            .then_with(|| a.gt.cmp(&b.gt))
    });

    let mut pred_claimed = vec![false; pred_samples.len()];
    let mut gt_claimed = vec![false; gt_grids.len()];
    let mut counts = MatchCounts::default();
    for c in candidates {
        if pred_claimed[c.pred] || gt_claimed[c.gt] {
            continue;
        }
        pred_claimed[c.pred] = true;
        gt_claimed[c.gt] = true;
        counts.tp += 1;
        counts.cd_sum += c.cd;
    }
    counts.fp = pred_claimed.iter().filter(|&&v| !v).count() as u64;
    counts.fn_ = gt_claimed.iter().filter(|&&v| !v).count() as u64;
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn lane(points: &[[f64; 2]]) -> TypedPolyline {
        TypedPolyline {
            marking_type: MarkingType::Laneline,
            points: points.iter().map(|p| Point::new(p[0], p[1], 0.0)).collect(),
        }
    }

    #[test]
    fn one_meter_segment_yields_eleven_samples() {
        let pts = [Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0)];
        assert_eq!(sample_polyline(&pts, 0.1).len(), 11);
    }

    #[test]
    fn short_polyline_keeps_its_endpoints() {
        let pts = [Point::new(0.0, 0.0, 0.0), Point::new(0.05, 0.0, 0.0)];
        let s = sample_polyline(&pts, 0.1);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0], pts[0]);
        assert_eq!(s[1], pts[1]);
    }

    #[test]
    fn sampled_path_reconstructs_arclength() {
        // Arclength oracle: the polyline through the samples must be as long
        // as the source, within one interval.
        let pts = [
            Point::new(0.0, 0.0, 0.0),
            Point::new(2.0, 1.0, 0.0),
            Point::new(3.5, -0.5, 0.0),
        ];
        let interval = 0.1;
        let s = sample_polyline(&pts, interval);
        let resampled_len = geom::arclength(&s);
        let true_len = geom::arclength(&pts);
        assert!((true_len - resampled_len).abs() <= interval, "{true_len} vs {resampled_len}");
    }

    #[test]
    fn identical_sets_score_perfect() {
        let cfg = MatchConfig::default();
        let lines = vec![lane(&[[0.0, 0.0], [20.0, 0.0]]), lane(&[[0.0, 3.5], [20.0, 3.5]])];
        let report = match_and_score(&lines, &lines, &cfg);
        assert_eq!(report.total.tp, 2);
        assert_eq!(report.total.precision_pct, Some(100.0));
        assert_eq!(report.total.recall_pct, Some(100.0));
        assert_eq!(report.total.f1_pct, Some(100.0));
        assert_eq!(report.total.acd_m, Some(0.0));
    }

    #[test]
    fn lateral_offset_beyond_radius_is_a_miss() {
        let cfg = MatchConfig::default();
        let gt = vec![lane(&[[0.0, 0.0], [20.0, 0.0]])];
        let pred = vec![lane(&[[0.0, 0.6], [20.0, 0.6]])];
        let report = match_and_score(&pred, &gt, &cfg);
        assert_eq!(report.total.tp, 0);
        assert_eq!(report.total.fp, 1);
        assert_eq!(report.total.fn_, 1);
        assert_eq!(report.total.precision_pct, Some(0.0));
    }

    #[test]
    fn empty_gt_gives_zero_precision_and_undefined_recall() {
        let cfg = MatchConfig::default();
        let pred = vec![lane(&[[0.0, 0.0], [5.0, 0.0]])];
        let report = match_and_score(&pred, &[], &cfg);
        assert_eq!(report.total.precision_pct, Some(0.0));
        assert_eq!(report.total.recall_pct, None);
        // Both empty: everything undefined.
        let empty = match_and_score(&[], &[], &cfg);
        assert_eq!(empty.total.precision_pct, None);
        assert_eq!(empty.total.recall_pct, None);
        assert_eq!(empty.total.f1_pct, None);
        assert_eq!(empty.total.acd_m, None);
    }

    /// Exhaustive one-to-one assignment oracle maximizing TP count.
    fn oracle_max_tp(qualify: &[Vec<bool>]) -> usize {
        fn rec(qualify: &[Vec<bool>], pred: usize, used: &mut Vec<bool>) -> usize {
            if pred == qualify.len() {
                return 0;
            }
            // Skip this prediction.
            let mut best = rec(qualify, pred + 1, used);
            for gt in 0..used.len() {
                if qualify[pred][gt] && !used[gt] {
                    used[gt] = true;
                    best = best.max(1 + rec(qualify, pred + 1, used));
                    used[gt] = false;
                }
            }
            best
        }
        let gt_count = qualify.first().map_or(0, Vec::len);
        rec(qualify, 0, &mut vec![false; gt_count])
    }

    /// Independent per-line Chamfer oracle: direct nested loops over freshly
    /// sampled points.
    fn oracle_cd(pred: &TypedPolyline, gt: &TypedPolyline, cfg: &MatchConfig) -> Option<f64> {
        let ps = sample_polyline(&pred.points, cfg.sample_interval);
        let gs = sample_polyline(&gt.points, cfg.sample_interval);
        let mut sum = 0.0;
        let mut n = 0usize;
        for p in &ps {
            let d = gs.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min);
            if d < cfg.match_radius {
                sum += d;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    fn qualification(pred: &[TypedPolyline], gt: &[TypedPolyline], cfg: &MatchConfig) -> Vec<Vec<bool>> {
        pred.iter()
            .map(|p| {
                let ps = sample_polyline(&p.points, cfg.sample_interval);
                gt.iter()
                    .map(|g| {
                        let gs = sample_polyline(&g.points, cfg.sample_interval);
                        let matched = ps
                            .iter()
                            .filter(|s| {
                                gs.iter().map(|q| (*s - q).norm()).fold(f64::INFINITY, f64::min)
                                    < cfg.match_radius
                            })
                            .count();
                        matched as f64 / gs.len() as f64 > cfg.tp_fraction
                    })
                    .collect()
            })
            .collect()
    }

    /// Well-separated random cases: greedy matching must equal the
    /// exhaustive-assignment oracle, and CDs must match the dense oracle.
    #[test]
    fn randomized_cases_match_assignment_oracle() {
        let cfg = MatchConfig::default();
        let mut state = 2024u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as f64 / (1u64 << 31) as f64
        };
        for _case in 0..40 {
            let n_gt = 1 + (next() * 5.0) as usize;
            let gt: Vec<TypedPolyline> = (0..n_gt)
                .map(|i| {
                    let y = i as f64 * 3.0;
                    lane(&[[0.0, y], [10.0 + next() * 10.0, y]])
                })
                .collect();
            let mut pred = Vec::new();
            for g in &gt {
                if next() < 0.75 {
                    let dy = (next() - 0.5) * 0.6;
                    let pts: Vec<[f64; 2]> =
                        g.points.iter().map(|p| [p.x, p.y + dy]).collect();
                    pred.push(lane(&pts));
                }
            }
            if next() < 0.4 {
                pred.push(lane(&[[0.0, 100.0], [8.0, 100.0]])); // stray FP
            }
            let report = match_and_score(&pred, &gt, &cfg);
            let oracle_tp = oracle_max_tp(&qualification(&pred, &gt, &cfg));
            assert_eq!(report.total.tp as usize, oracle_tp);
            assert_eq!(report.total.fp as usize, pred.len() - oracle_tp);
            assert_eq!(report.total.fn_ as usize, gt.len() - oracle_tp);
        }
    }

    #[test]
    fn chamfer_matches_dense_oracle() {
        let cfg = MatchConfig::default();
        let gt = vec![lane(&[[0.0, 0.0], [15.0, 0.4]])];
        let pred = vec![lane(&[[0.1, 0.2], [15.0, 0.1]])];
        let report = match_and_score(&pred, &gt, &cfg);
        let oracle = oracle_cd(&pred[0], &gt[0], &cfg).unwrap();
        assert!((report.total.acd_m.unwrap() - oracle).abs() < 1.0e-6);
        assert!(report.total.acd_m.unwrap() <= cfg.match_radius);
    }

    #[test]
    fn metrics_invariant_under_rigid_transform() {
        let cfg = MatchConfig::default();
        let gt = vec![lane(&[[0.0, 0.0], [18.0, 1.0]]), lane(&[[0.0, 3.3], [18.0, 4.0]])];
        let pred = vec![lane(&[[0.2, 0.1], [17.0, 1.2]])];
        let base = match_and_score(&pred, &gt, &cfg);

        let yaw = 0.7_f64;
        let rot = Matrix3::new(
            yaw.cos(), -yaw.sin(), 0.0,
            yaw.sin(), yaw.cos(), 0.0,
            0.0, 0.0, 1.0,
        );
        let shift = Point::new(42.0, -17.0, 3.0);
        let map = |lines: &[TypedPolyline]| -> Vec<TypedPolyline> {
            lines
                .iter()
                .map(|l| TypedPolyline {
                    marking_type: l.marking_type,
                    points: l.points.iter().map(|p| rot * p + shift).collect(),
                })
                .collect()
        };
        let moved = match_and_score(&map(&pred), &map(&gt), &cfg);
        assert_eq!(moved.total.tp, base.total.tp);
        assert_eq!(moved.total.fp, base.total.fp);
        assert_eq!(moved.total.fn_, base.total.fn_);
        let (a, b) = (base.total.acd_m.unwrap(), moved.total.acd_m.unwrap());
        assert!((a - b).abs() < 1.0e-9);
    }

    #[test]
    fn removing_a_false_positive_never_hurts_precision() {
        let cfg = MatchConfig::default();
        let gt = vec![lane(&[[0.0, 0.0], [20.0, 0.0]])];
        let with_fp =
            vec![lane(&[[0.0, 0.05], [20.0, 0.05]]), lane(&[[0.0, 50.0], [20.0, 50.0]])];
        let without = vec![with_fp[0].clone()];
        let p1 = match_and_score(&with_fp, &gt, &cfg).total.precision_pct.unwrap();
        let p2 = match_and_score(&without, &gt, &cfg).total.precision_pct.unwrap();
        assert!(p2 >= p1);
    }
}
