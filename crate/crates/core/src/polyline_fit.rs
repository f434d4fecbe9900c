//! Polyline model estimation from voxel centers.
//!
//! The centers are split into groups that are each well approximated by a
//! straight line: either consecutive intervals along the first principal
//! component, or, when the second component is significant, per-quadrant
//! grouping in the PC1/PC2 plane with a shorter segment length. A total
//! least-squares line is fitted per group and the lines are connected into
//! one continuous polyline.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolylineFitParams {
    /// Quadrant split kicks in when lambda2/lambda1 reaches this ratio.
    pub eigen_ratio_threshold: f64,
    /// Group length along PC1 in the elongated case (meters).
    pub segment_len_primary: f64,
    /// Group length inside quadrants (meters); at most the primary length.
    pub segment_len_quadrant: f64,
}

impl Default for PolylineFitParams {
    fn default() -> Self {
        Self {
            eigen_ratio_threshold: 0.1,
            segment_len_primary: 5.0,
            segment_len_quadrant: 2.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    /// All centers coincide; no direction can be estimated.
    #[error("degenerate voxel set: all centers coincident")]
    Degenerate,
}

/// Principal components of a point set, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Point,
    pub eigenvalues: [f64; 3],
    pub components: [Vector3<f64>; 3],
}

/// PCA of the 3D covariance of `points` (population normalization).
/// Component signs are canonicalized so the largest-magnitude coefficient is
/// positive.
pub fn pca(points: &[Point]) -> Pca {
    let n = points.len().max(1) as f64;
    let mean = points.iter().sum::<Point>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut eigenvalues = [0.0; 3];
    let mut components = [Vector3::zeros(); 3];
    for (slot, &idx) in order.iter().enumerate() {
        eigenvalues[slot] = eig.eigenvalues[idx].max(0.0);
        components[slot] = canonical_sign(eig.eigenvectors.column(idx).into_owned());
    }
    Pca { mean, eigenvalues, components }
}

fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    let mut dominant = 0;
    for i in 1..3 {
        if v[i].abs() > v[dominant].abs() {
            dominant = i;
        }
    }
    if v[dominant] < 0.0 {
        -v
    } else {
        v
    }
}

/// Fits an ordered polyline through the voxel centers.
///
/// Returns [`FitError::Degenerate`] when the centers coincide; the caller is
/// expected to keep its previous polyline in that case.
pub fn estimate_polyline(centers: &[Point], params: &PolylineFitParams) -> Result<Vec<Point>, FitError> {
    if centers.len() < 2 {
        return Err(FitError::Degenerate);
    }
    let p = pca(centers);
    if p.eigenvalues[0] <= 1.0e-12 {
        return Err(FitError::Degenerate);
    }
    if p.eigenvalues[1] / p.eigenvalues[0] < params.eigen_ratio_threshold {
        let idx: Vec<usize> = (0..centers.len()).collect();
        Ok(fit_along_axis(centers, &idx, &p.components[0], params.segment_len_primary))
    } else {
        Ok(fit_quadrants(centers, &p, params))
    }
}

/// Elongated case: group by PC1-interval, fit a line per group, connect at
/// the midpoints of adjacent group boundaries.
fn fit_along_axis(centers: &[Point], subset: &[usize], axis: &Vector3<f64>, seg_len: f64) -> Vec<Point> {
    debug_assert!(!subset.is_empty());
    let proj: Vec<f64> = subset.iter().map(|&i| centers[i].dot(axis)).collect();
    let (s_min, s_max) = proj.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
        (lo.min(s), hi.max(s))
    });
    let span = s_max - s_min;
    let n_groups = if span <= 0.0 { 1 } else { (span / seg_len).ceil() as usize };
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_groups.max(1)];
    for (k, &i) in subset.iter().enumerate() {
        let g = if span <= 0.0 {
            0
        } else {
            (((proj[k] - s_min) / seg_len).floor() as usize).min(n_groups - 1)
        };
        groups[g].push(i);
    }
    groups.retain(|g| !g.is_empty());
    merge_undersized_groups(&mut groups);

    let fitted: Vec<GroupLine> = groups.iter().map(|g| GroupLine::fit(centers, g, axis)).collect();
    if fitted.len() == 1 {
        let g = &fitted[0];
        return dedup_polyline(vec![g.eval(g.lo), g.eval(g.hi)]);
    }
    let mut out = Vec::with_capacity(fitted.len() + 1);
    out.push(fitted[0].eval(fitted[0].lo));
    for w in fitted.windows(2) {
        let boundary = 0.5 * (w[0].hi + w[1].lo);
        out.push(0.5 * (w[0].eval(boundary) + w[1].eval(boundary)));
    }
    out.push(fitted[fitted.len() - 1].eval(fitted[fitted.len() - 1].hi));
    dedup_polyline(out)
}

/// Moves single-point groups into their predecessor (or successor for the
/// first group) so every fitted group has at least two points. Keeps the
/// polyline vertex count bounded by the voxel count.
fn merge_undersized_groups(groups: &mut Vec<Vec<usize>>) {
    let mut i = 0;
    while i < groups.len() {
        if groups[i].len() < 2 && groups.len() > 1 {
            let moved = std::mem::take(&mut groups[i]);
            if i > 0 {
                groups[i - 1].extend(moved);
            } else {
                groups[i + 1].splice(0..0, moved);
            }
            groups.remove(i);
        } else {
            i += 1;
        }
    }
}

/// Total-least-squares line of one group: centroid plus the group's first
/// principal component, oriented along the grouping axis.
struct GroupLine {
    centroid: Point,
    direction: Vector3<f64>,
    axis: Vector3<f64>,
    /// Extent of the member projections on the grouping axis.
    lo: f64,
    hi: f64,
}

impl GroupLine {
    fn fit(centers: &[Point], members: &[usize], axis: &Vector3<f64>) -> Self {
        let pts: Vec<Point> = members.iter().map(|&i| centers[i]).collect();
        let p = pca(&pts);
        let mut direction = p.components[0];
        if p.eigenvalues[0] <= 1.0e-12 {
            direction = *axis; // coincident members: degrade to the axis
        }
        if direction.dot(axis) < 0.0 {
            direction = -direction;
        }
        let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| {
            let s = q.dot(axis);
            (lo.min(s), hi.max(s))
        });
        Self { centroid: p.mean, direction, axis: *axis, lo, hi }
    }

    /// Point on the line whose axis-coordinate equals `s`. Falls back to the
    /// centroid when the line runs nearly perpendicular to the axis.
    fn eval(&self, s: f64) -> Point {
        let along = self.direction.dot(&self.axis);
        if along.abs() < 0.2 {
            return self.centroid;
        }
        self.centroid + self.direction * ((s - self.centroid.dot(&self.axis)) / along)
    }
}

/// Significant-PC2 case: split about the mean into the four PC1/PC2
/// quadrants, fit each quadrant like the elongated case with the shorter
/// segment length, and concatenate the quadrant polylines in angular order.
fn fit_quadrants(centers: &[Point], p: &Pca, params: &PolylineFitParams) -> Vec<Point> {
    let mut quadrants: [Vec<usize>; 4] = Default::default();
    let mut angle_sums = [(0.0_f64, 0usize); 4];
    for (i, c) in centers.iter().enumerate() {
        let d = c - p.mean;
        let s1 = d.dot(&p.components[0]);
        let s2 = d.dot(&p.components[1]);
        let q = match (s1 >= 0.0, s2 >= 0.0) {
            (true, true) => 0,
            (false, true) => 1,
            (false, false) => 2,
            (true, false) => 3,
        };
        quadrants[q].push(i);
        angle_sums[q].0 += s2.atan2(s1);
        angle_sums[q].1 += 1;
    }

    // Pieces ordered by mean angle; the cyclic order is cut at the largest
    // angular gap so the walk follows the shape instead of jumping across it.
    let mut order: Vec<(f64, usize)> = angle_sums
        .iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(q, (sum, n))| (sum / *n as f64, q))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let start = if order.len() > 1 {
        let mut largest_gap = (f64::NEG_INFINITY, 0);
        for i in 0..order.len() {
            let next = (i + 1) % order.len();
            let mut gap = order[next].0 - order[i].0;
            if gap < 0.0 {
                gap += std::f64::consts::TAU;
            }
            if gap > largest_gap.0 {
                largest_gap = (gap, next);
            }
        }
        largest_gap.1
    } else {
        0
    };

    let mut pieces: Vec<Vec<Point>> = Vec::new();
    for k in 0..order.len() {
        let q = order[(start + k) % order.len()].1;
        let members = &quadrants[q];
        if members.len() == 1 {
            pieces.push(vec![centers[members[0]]]);
            continue;
        }
        let pts: Vec<Point> = members.iter().map(|&i| centers[i]).collect();
        let local = pca(&pts);
        let axis =
            if local.eigenvalues[0] > 1.0e-12 { local.components[0] } else { p.components[0] };
        pieces.push(fit_along_axis(centers, members, &axis, params.segment_len_quadrant));
    }
    chain_pieces(pieces)
}

/// Joins piece polylines end-to-start, flipping each so its entry point is
/// nearest the current chain end.
fn chain_pieces(pieces: Vec<Vec<Point>>) -> Vec<Point> {
    let mut pieces = pieces.into_iter().filter(|p| !p.is_empty());
    let Some(mut first) = pieces.next() else { return Vec::new() };
    let rest: Vec<Vec<Point>> = pieces.collect();
    if let Some(second) = rest.first() {
        // Orient the first piece so its tail faces the next piece.
        let tail_d = nearest_terminal_dist(first.last().unwrap(), second);
        let head_d = nearest_terminal_dist(&first[0], second);
        if head_d < tail_d {
            first.reverse();
        }
    }
    let mut chain = first;
    for mut piece in rest {
        let end = *chain.last().unwrap();
        if (piece.last().unwrap() - end).norm() < (piece[0] - end).norm() {
            piece.reverse();
        }
        chain.extend(piece);
    }
    dedup_polyline(chain)
}

fn nearest_terminal_dist(p: &Point, piece: &[Point]) -> f64 {
    (piece[0] - p).norm().min((piece.last().unwrap() - p).norm())
}

fn dedup_polyline(points: Vec<Point>) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(points.len());
    for p in points {
        if out.last().is_none_or(|last| (last - p).norm() > 1.0e-9) {
            out.push(p);
        }
    }
    out
}
