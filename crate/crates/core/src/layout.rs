//! Road layout generation: marking instances are merged into continuous lane
//! boundaries, boundaries are grouped into road sections, lanes are formed
//! from left/right boundary pairs, and successor linkages are derived from
//! shared boundaries or endpoint alignment.

use serde::{Deserialize, Serialize};

use crate::detection::MarkingType;
use crate::geom::{self, Point};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutParams {
    /// Maximum endpoint gap for chaining two instances into one boundary.
    pub endpoint_dist_max: f64,
    /// Maximum endpoint direction difference for chaining (degrees).
    pub endpoint_angle_max_deg: f64,
    /// Maximum mean-direction difference between boundaries of one section
    /// (degrees).
    pub section_angle_max_deg: f64,
    /// Acceptable lane width interval (meters).
    pub width_interval: [f64; 2],
    /// Maximum width spread within one lane's valid range.
    pub width_variation_max: f64,
    /// Minimum lane length (meters).
    pub min_lane_length: f64,
    /// Maximum longitudinal gap for a successor linkage.
    pub linkage_gap_max: f64,
    /// Maximum heading difference for an endpoint-alignment linkage (degrees).
    pub linkage_angle_max_deg: f64,
    /// Boundary sampling step for overlap and width tests (meters).
    pub sample_step: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            endpoint_dist_max: 3.0,
            endpoint_angle_max_deg: 30.0,
            section_angle_max_deg: 45.0,
            width_interval: [2.5, 4.5],
            width_variation_max: 0.8,
            min_lane_length: 5.0,
            linkage_gap_max: 3.0,
            linkage_angle_max_deg: 30.0,
            sample_step: 0.5,
        }
    }
}

impl LayoutParams {
    fn endpoint_angle_max(&self) -> f64 {
        self.endpoint_angle_max_deg.to_radians()
    }
    fn section_angle_max(&self) -> f64 {
        self.section_angle_max_deg.to_radians()
    }
    fn linkage_angle_max(&self) -> f64 {
        self.linkage_angle_max_deg.to_radians()
    }
}

/// Tolerated range overlap when testing longitudinal adjacency of lanes on a
/// shared boundary.
const LINKAGE_OVERLAP_TOL: f64 = 1.0;

/// Maximum lateral offset between an ending centerline and its successor's
/// start for the endpoint-alignment cue (meters). Below typical lane
/// spacing, so adjacent lanes never read as succession.
const LINKAGE_LATERAL_TOL: f64 = 1.5;

/// Layout input: one instance's identity and fitted polyline.
#[derive(Debug, Clone)]
pub struct InstancePolyline {
    pub id: u32,
    pub marking_type: MarkingType,
    pub points: Vec<Point>,
}

/// A continuous chain of merged laneline or roadedge instances.
#[derive(Debug, Clone)]
pub struct LaneBoundary {
    pub id: u32,
    pub source: Vec<u32>,
    pub boundary_kind: MarkingType,
    pub polyline: Vec<Point>,
}

/// One connected component of similarly-directed, mutually overlapping
/// boundaries, sorted left to right.
#[derive(Debug, Clone)]
pub struct RoadSection {
    pub id: u32,
    pub boundaries: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: u32,
    pub left_boundary: u32,
    pub right_boundary: u32,
    /// Interval on the left boundary's arclength (meters).
    pub valid_range: [f64; 2],
    pub centerline: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkageCue {
    SharedBoundary,
    GeometricAlignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaneLinkage {
    pub predecessor: u32,
    pub successor: u32,
    pub cue: LinkageCue,
}

#[derive(Debug, Clone, Default)]
pub struct RoadLayout {
    pub boundaries: Vec<LaneBoundary>,
    pub sections: Vec<RoadSection>,
    pub lanes: Vec<Lane>,
    pub linkages: Vec<LaneLinkage>,
}

/// Full per-frame layout pass. `forward_hint` disambiguates the travel
/// direction of each section (the vehicle's forward axis in the reference
/// frame is the natural choice).
pub fn build_road_layout(
    instances: &[InstancePolyline],
    params: &LayoutParams,
    forward_hint: &Point,
) -> RoadLayout {
    let boundaries = build_lane_boundaries(instances, params);
    let sections_raw = group_road_sections(&boundaries, params);
    let mut layout = RoadLayout { boundaries, ..Default::default() };
    let mut next_lane = 0u32;
    for (sid, members) in sections_raw.into_iter().enumerate() {
        let (sorted, axis) =
            sort_boundaries_left_to_right(&members, &layout.boundaries, forward_hint);
        let lanes = generate_lanes(&sorted, &layout.boundaries, &axis, params, &mut next_lane);
        layout.lanes.extend(lanes);
        layout.sections.push(RoadSection { id: sid as u32, boundaries: sorted });
    }
    layout.linkages = generate_linkages(&layout.lanes, &layout.boundaries, params);
    layout
}

// ── Lane boundary generation ──────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Terminal {
    Head, // first point
    Tail, // last point
}

fn terminal_point(poly: &[Point], t: Terminal) -> Point {
    match t {
        Terminal::Head => poly[0],
        Terminal::Tail => *poly.last().unwrap(),
    }
}

/// Tangent leaving the polyline when traversal exits through the terminal.
fn outgoing_tangent(poly: &[Point], t: Terminal) -> Point {
    match t {
        Terminal::Tail => poly[poly.len() - 1] - poly[poly.len() - 2],
        Terminal::Head => poly[0] - poly[1],
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        if self.0[x] != x {
            let root = self.find(self.0[x]);
            self.0[x] = root;
        }
        self.0[x]
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Greedy transitive chaining: two same-type instances merge when some
/// endpoint pair is within `endpoint_dist_max` and the traversal tangents
/// across the junction differ by at most `endpoint_angle_max`. Each instance
/// ends up in exactly one boundary.
pub fn build_lane_boundaries(
    instances: &[InstancePolyline],
    params: &LayoutParams,
) -> Vec<LaneBoundary> {
    let nodes: Vec<&InstancePolyline> = instances
        .iter()
        .filter(|i| i.points.len() >= 2 && i.marking_type != MarkingType::Stopline)
        .collect();

    // Candidate junctions, ordered by gap then instance ids so the result is
    // independent of input permutation.
    struct Junction {
        dist: f64,
        a: usize,
        b: usize,
        ta: Terminal,
        tb: Terminal,
    }
    let mut candidates = Vec::new();
    let max_angle = params.endpoint_angle_max();
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            if nodes[i].marking_type != nodes[j].marking_type {
                continue;
            }
            for ta in [Terminal::Head, Terminal::Tail] {
                for tb in [Terminal::Head, Terminal::Tail] {
                    let pa = terminal_point(&nodes[i].points, ta);
                    let pb = terminal_point(&nodes[j].points, tb);
                    let dist = (pa - pb).norm();
                    if dist > params.endpoint_dist_max {
                        continue;
                    }
                    // Exit i through ta, enter j through tb.
                    let out = outgoing_tangent(&nodes[i].points, ta);
                    let inward = -outgoing_tangent(&nodes[j].points, tb);
                    if geom::angle_between(&out, &inward) > max_angle {
                        continue;
                    }
                    candidates.push(Junction { dist, a: i, b: j, ta, tb });
                }
            }
        }
    }
    candidates.sort_by(|x, y| {
        x.dist
            .total_cmp(&y.dist)
            .then_with(|| nodes[x.a].id.cmp(&nodes[y.a].id))
            .then_with(|| nodes[x.b].id.cmp(&nodes[y.b].id))
            .then_with(|| (x.ta as u8, x.tb as u8).cmp(&(y.ta as u8, y.tb as u8)))
    });

    // Accept junctions greedily while terminals are free and no cycle forms.
    let mut uf = UnionFind::new(nodes.len());
    let mut links: Vec<[Option<(usize, Terminal)>; 2]> = vec![[None, None]; nodes.len()];
    let slot = |t: Terminal| t as usize;
    for j in candidates {
        if links[j.a][slot(j.ta)].is_some() || links[j.b][slot(j.tb)].is_some() {
            continue;
        }
        if !uf.union(j.a, j.b) {
            continue;
        }
        links[j.a][slot(j.ta)] = Some((j.b, j.tb));
        links[j.b][slot(j.tb)] = Some((j.a, j.ta));
    }

    // Walk each chain from a free terminal, orienting every polyline so the
    // chain reads head-to-tail.
    let mut visited = vec![false; nodes.len()];
    let mut chains: Vec<(u32, Vec<Point>, Vec<u32>, MarkingType)> = Vec::new();
    let mut starts: Vec<usize> = (0..nodes.len()).collect();
    starts.sort_by_key(|&n| nodes[n].id);
    for start in starts {
        if visited[start] {
            continue;
        }
        // Find a chain end reachable from `start`: a node with a free
        // terminal. Cycles are impossible by construction.
        let mut end = start;
        let mut entry: Option<Terminal> = None;
        let mut guard = 0;
        loop {
            let free = [Terminal::Head, Terminal::Tail]
                .into_iter()
                .find(|&t| links[end][slot(t)].is_none() && entry != Some(t));
            match free {
                Some(t) => {
                    entry = Some(t);
                    break;
                }
                None => {
                    let t = if entry == Some(Terminal::Head) { Terminal::Tail } else { Terminal::Head };
                    let (next, via) = links[end][slot(t)].expect("chain link");
                    end = next;
                    entry = Some(via);
                    guard += 1;
                    assert!(guard <= nodes.len(), "cycle in boundary chaining");
                }
            }
        }

        let mut points: Vec<Point> = Vec::new();
        let mut source = Vec::new();
        let mut node = end;
        let mut enter = entry.unwrap();
        loop {
            visited[node] = true;
            source.push(nodes[node].id);
            let mut poly = nodes[node].points.clone();
            if enter == Terminal::Tail {
                poly.reverse();
            }
            for p in poly {
                if points.last().is_none_or(|last: &Point| (last - p).norm() > 1.0e-9) {
                    points.push(p);
                }
            }
            let exit = if enter == Terminal::Head { Terminal::Tail } else { Terminal::Head };
            match links[node][slot(exit)] {
                Some((next, via)) => {
                    node = next;
                    enter = via;
                }
                None => break,
            }
        }
        let min_id = *source.iter().min().unwrap();
        chains.push((min_id, points, source, nodes[node].marking_type));
    }

    chains.sort_by_key(|c| c.0);
    chains
        .into_iter()
        .enumerate()
        .map(|(id, (_, polyline, source, kind))| LaneBoundary {
            id: id as u32,
            source,
            boundary_kind: kind,
            polyline,
        })
        .collect()
}

// ── Road section grouping ─────────────────────────────────────────────────

fn chord_dir(poly: &[Point]) -> Point {
    let d = poly.last().unwrap() - poly[0];
    let n = d.norm();
    if n > 0.0 {
        d / n
    } else {
        Point::new(1.0, 0.0, 0.0)
    }
}

fn sample_polyline_points(poly: &[Point], step: f64) -> Vec<Point> {
    let len = geom::arclength(poly);
    let n = (len / step).floor() as usize;
    let mut out: Vec<Point> = (0..=n).map(|i| geom::point_at_arclength(poly, i as f64 * step)).collect();
    let last = *poly.last().unwrap();
    if (out.last().unwrap() - last).norm() > 1.0e-9 {
        out.push(last);
    }
    out
}

/// True when at least one sample of `a` projects orthogonally onto some
/// segment of `b`.
fn projects_onto(a_samples: &[Point], b_poly: &[Point]) -> bool {
    a_samples.iter().any(|p| {
        b_poly.windows(2).any(|w| {
            let seg = w[1] - w[0];
            let len2 = seg.norm_squared();
            if len2 == 0.0 {
                return false;
            }
            let t = (p - w[0]).dot(&seg) / len2;
            (0.0..=1.0).contains(&t)
        })
    })
}

/// Connected components (by depth-first search) of the boundary graph whose
/// edges join similarly-directed, mutually overlapping boundaries.
pub fn group_road_sections(boundaries: &[LaneBoundary], params: &LayoutParams) -> Vec<Vec<u32>> {
    let n = boundaries.len();
    let samples: Vec<Vec<Point>> =
        boundaries.iter().map(|b| sample_polyline_points(&b.polyline, params.sample_step)).collect();
    let dirs: Vec<Point> = boundaries.iter().map(|b| chord_dir(&b.polyline)).collect();
    let max_angle = params.section_angle_max();

    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if geom::line_angle_between(&dirs[i], &dirs[j]) > max_angle {
                continue;
            }
            if projects_onto(&samples[i], &boundaries[j].polyline)
                && projects_onto(&samples[j], &boundaries[i].polyline)
            {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }

    let mut seen = vec![false; n];
    let mut components = Vec::new();
    for root in 0..n {
        if seen[root] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(v) = stack.pop() {
            comp.push(boundaries[v].id);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        comp.sort();
        components.push(comp);
    }
    components
}

// ── Left-to-right sorting ─────────────────────────────────────────────────

fn boundary_by_id(boundaries: &[LaneBoundary], id: u32) -> &LaneBoundary {
    boundaries.iter().find(|b| b.id == id).expect("boundary id")
}

/// Orders the section's boundaries by signed lateral offset of their
/// midpoints relative to the section's mean direction axis (ties by id).
/// Returns the order and the axis, oriented along `forward_hint`.
pub fn sort_boundaries_left_to_right(
    members: &[u32],
    boundaries: &[LaneBoundary],
    forward_hint: &Point,
) -> (Vec<u32>, Point) {
    assert!(!members.is_empty());
    let polys: Vec<&LaneBoundary> = members.iter().map(|&id| boundary_by_id(boundaries, id)).collect();
    let anchor = if forward_hint.norm() > 0.0 { *forward_hint } else { chord_dir(&polys[0].polyline) };
    let mut axis = Point::zeros();
    for b in &polys {
        let d = chord_dir(&b.polyline);
        axis += if d.dot(&anchor) < 0.0 { -d } else { d };
    }
    if axis.norm() < 1.0e-9 {
        axis = anchor;
    }
    axis.z = 0.0;
    axis = axis.normalize();
    let n_right = Point::new(axis.y, -axis.x, 0.0);

    let midpoints: Vec<Point> = polys
        .iter()
        .map(|b| geom::point_at_arclength(&b.polyline, geom::arclength(&b.polyline) / 2.0))
        .collect();
    let centroid = midpoints.iter().sum::<Point>() / midpoints.len() as f64;
    let mut order: Vec<(f64, u32)> = midpoints
        .iter()
        .zip(polys.iter())
        .map(|(m, b)| ((m - centroid).dot(&n_right), b.id))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    (order.into_iter().map(|(_, id)| id).collect(), axis)
}

// ── Lane generation ───────────────────────────────────────────────────────

struct WidthSample {
    arc_right: f64,
    point: Point,
    dist: f64,
    arc_left: f64,
    valid: bool,
}

fn width_samples(left: &LaneBoundary, right: &LaneBoundary, params: &LayoutParams) -> Vec<WidthSample> {
    let pts = sample_polyline_points(&right.polyline, params.sample_step);
    let mut arc = 0.0;
    let mut prev: Option<Point> = None;
    pts.into_iter()
        .map(|p| {
            if let Some(q) = prev {
                arc += (p - q).norm();
            }
            prev = Some(p);
            let (dist, arc_left, interior) = geom::closest_on_polyline(&left.polyline, &p);
            let valid =
                interior && dist >= params.width_interval[0] && dist <= params.width_interval[1];
            WidthSample { arc_right: arc, point: p, dist, arc_left, valid }
        })
        .collect()
}

/// Longest contiguous sample run that stays valid and whose width spread is
/// at most `width_variation_max`. Returns sample index range [lo, hi].
fn longest_valid_run(samples: &[WidthSample], params: &LayoutParams) -> Option<(usize, usize)> {
    use std::collections::VecDeque;
    let mut best: Option<(usize, usize)> = None;
    let mut lo = 0usize;
    let mut min_q: VecDeque<usize> = VecDeque::new();
    let mut max_q: VecDeque<usize> = VecDeque::new();
    for hi in 0..samples.len() {
        if !samples[hi].valid {
            lo = hi + 1;
            min_q.clear();
            max_q.clear();
            continue;
        }
        while min_q.back().is_some_and(|&i| samples[i].dist >= samples[hi].dist) {
            min_q.pop_back();
        }
        min_q.push_back(hi);
        while max_q.back().is_some_and(|&i| samples[i].dist <= samples[hi].dist) {
            max_q.pop_back();
        }
        max_q.push_back(hi);
        while samples[*max_q.front().unwrap()].dist - samples[*min_q.front().unwrap()].dist
            > params.width_variation_max
        {
            while min_q.front().is_some_and(|&i| i <= lo) {
                min_q.pop_front();
            }
            while max_q.front().is_some_and(|&i| i <= lo) {
                max_q.pop_front();
            }
            lo += 1;
        }
        let len = samples[hi].arc_right - samples[lo].arc_right;
        if best.is_none_or(|(bl, bh)| {
            len > samples[bh].arc_right - samples[bl].arc_right
        }) {
            best = Some((lo, hi));
        }
    }
    best
}

/// Forms lanes within one sorted section from adjacent and skip boundary
/// pairs. A skip-pair lane is suppressed wherever an adjacent-pair lane with
/// the same left boundary covers the same range.
pub fn generate_lanes(
    sorted: &[u32],
    boundaries: &[LaneBoundary],
    axis: &Point,
    params: &LayoutParams,
    next_id: &mut u32,
) -> Vec<Lane> {
    let mut lanes: Vec<Lane> = Vec::new();
    for gap in [1usize, 2] {
        for k in 0..sorted.len().saturating_sub(gap) {
            let left_id = sorted[k];
            let right_id = sorted[k + gap];
            let left = boundary_by_id(boundaries, left_id);
            let right = boundary_by_id(boundaries, right_id);
            let samples = width_samples(left, right, params);
            let Some(run) = longest_valid_run(&samples, params) else { continue };
            let run_len = samples[run.1].arc_right - samples[run.0].arc_right;
            if run_len < params.min_lane_length {
                continue;
            }
            let candidate = build_lane(&samples, run, left, right, axis, params);
            if gap == 1 {
                let mut lane = candidate;
                lane.id = *next_id;
                *next_id += 1;
                lanes.push(lane);
            } else {
                // Subtract ranges already covered by adjacent-pair lanes on
                // the same left boundary.
                let covered: Vec<[f64; 2]> = lanes
                    .iter()
                    .filter(|l| l.left_boundary == left_id)
                    .map(|l| l.valid_range)
                    .collect();
                for sub in subtract_ranges(candidate.valid_range, &covered) {
                    if sub[1] - sub[0] < params.min_lane_length {
                        continue;
                    }
                    let indices: Vec<usize> = (run.0..=run.1)
                        .filter(|&i| samples[i].arc_left >= sub[0] && samples[i].arc_left <= sub[1])
                        .collect();
                    if indices.len() < 2 {
                        continue;
                    }
                    let sub_run = (indices[0], *indices.last().unwrap());
                    if samples[sub_run.1].arc_right - samples[sub_run.0].arc_right
                        < params.min_lane_length
                    {
                        continue;
                    }
                    let mut lane = build_lane(&samples, sub_run, left, right, axis, params);
                    lane.id = *next_id;
                    *next_id += 1;
                    lanes.push(lane);
                }
            }
        }
    }
    lanes.sort_by_key(|l| l.id);
    lanes
}

fn build_lane(
    samples: &[WidthSample],
    run: (usize, usize),
    left: &LaneBoundary,
    right: &LaneBoundary,
    axis: &Point,
    _params: &LayoutParams,
) -> Lane {
    let slice = &samples[run.0..=run.1];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut centerline: Vec<Point> = Vec::with_capacity(slice.len());
    for s in slice {
        lo = lo.min(s.arc_left);
        hi = hi.max(s.arc_left);
        let foot = geom::point_at_arclength(&left.polyline, s.arc_left);
        centerline.push(0.5 * (s.point + foot));
    }
    // Orient the centerline along the section's travel axis.
    if centerline.len() >= 2 {
        let d = centerline.last().unwrap() - centerline[0];
        if d.dot(axis) < 0.0 {
            centerline.reverse();
        }
    }
    Lane {
        id: 0,
        left_boundary: left.id,
        right_boundary: right.id,
        valid_range: [lo, hi],
        centerline,
    }
}

/// Subtracts closed ranges from `base`, returning the leftover intervals.
fn subtract_ranges(base: [f64; 2], cuts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pieces = vec![base];
    for cut in cuts {
        let mut next = Vec::new();
        for piece in pieces {
            if cut[1] <= piece[0] || cut[0] >= piece[1] {
                next.push(piece);
                continue;
            }
            if cut[0] > piece[0] {
                next.push([piece[0], cut[0]]);
            }
            if cut[1] < piece[1] {
                next.push([cut[1], piece[1]]);
            }
        }
        pieces = next;
    }
    pieces
}

// ── Lane linkage generation ───────────────────────────────────────────────

/// Extent of a lane's centerline projected onto a boundary's arclength,
/// signed along the centerline's own travel direction.
fn extent_on_boundary(lane: &Lane, boundary: &LaneBoundary) -> Option<(f64, f64)> {
    if lane.centerline.len() < 2 {
        return None;
    }
    let (_, s_start, _) = geom::closest_on_polyline(&boundary.polyline, &lane.centerline[0]);
    let (_, s_end, _) =
        geom::closest_on_polyline(&boundary.polyline, lane.centerline.last().unwrap());
    // Flip to travel order when the boundary runs the other way.
    if s_end >= s_start {
        Some((s_start, s_end))
    } else {
        Some((-s_start, -s_end))
    }
}

fn heading(points: &[Point], at_end: bool) -> Point {
    if at_end {
        points[points.len() - 1] - points[points.len() - 2]
    } else {
        points[1] - points[0]
    }
}

/// Successor linkages between lanes: either the two lanes share a left or a
/// right boundary and are longitudinally adjacent on it, or one lane's
/// centerline end aligns with the other's start.
pub fn generate_linkages(
    lanes: &[Lane],
    boundaries: &[LaneBoundary],
    params: &LayoutParams,
) -> Vec<LaneLinkage> {
    let mut out: Vec<LaneLinkage> = Vec::new();
    let push = |l: LaneLinkage, out: &mut Vec<LaneLinkage>| {
        if !out.iter().any(|e| e.predecessor == l.predecessor && e.successor == l.successor) {
            out.push(l);
        }
    };
    for a in lanes {
        for b in lanes {
            if a.id == b.id || a.centerline.len() < 2 || b.centerline.len() < 2 {
                continue;
            }
            // (a) Shared boundary with the successor starting where the
            // predecessor ends. Forks hand a boundary from one side to the
            // other, so any left/right combination counts as shared; lateral
            // neighbors are rejected by the range-adjacency test below.
            let mut shared_ids = [a.left_boundary, a.right_boundary];
            shared_ids.sort();
            let mut linked = false;
            for sid in shared_ids {
                if sid != b.left_boundary && sid != b.right_boundary {
                    continue;
                }
                let boundary = boundary_by_id(boundaries, sid);
                if let (Some((_, a_end)), Some((b_start, b_end))) =
                    (extent_on_boundary(a, boundary), extent_on_boundary(b, boundary))
                {
                    let gap = b_start - a_end;
                    if gap <= params.linkage_gap_max
                        && gap >= -LINKAGE_OVERLAP_TOL
                        && b_end > a_end
                    {
                        push(
                            LaneLinkage {
                                predecessor: a.id,
                                successor: b.id,
                                cue: LinkageCue::SharedBoundary,
                            },
                            &mut out,
                        );
                        linked = true;
                        break;
                    }
                }
            }
            if linked {
                continue;
            }
            // (b) Endpoint alignment of the centerlines. The successor must
            // start ahead of the predecessor's end and roughly in line with
            // it; a plain distance test would link laterally adjacent lanes
            // once the gap tolerance exceeds the lane spacing.
            let end = a.centerline.last().unwrap();
            let start = &b.centerline[0];
            let exit_heading = heading(&a.centerline, true).normalize();
            let delta = start - end;
            let longitudinal = delta.dot(&exit_heading);
            let lateral = (delta - exit_heading * longitudinal).norm();
            if longitudinal >= -LINKAGE_OVERLAP_TOL
                && longitudinal <= params.linkage_gap_max
                && lateral <= LINKAGE_LATERAL_TOL
                && (end - start).norm() <= params.linkage_gap_max.max(LINKAGE_LATERAL_TOL)
                && geom::angle_between(&heading(&a.centerline, true), &heading(&b.centerline, false))
                    <= params.linkage_angle_max()
            {
                push(
                    LaneLinkage {
                        predecessor: a.id,
                        successor: b.id,
                        cue: LinkageCue::GeometricAlignment,
                    },
                    &mut out,
                );
            }
        }
    }
    out
}
