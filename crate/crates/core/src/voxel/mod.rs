//! Hashing-based sparse semantic voxel map.
//!
//! Detections are rasterized into per-voxel, per-type counters; a sparse
//! co-observation table counts how often two voxels appeared in the same
//! detection. Voxels whose dominant counter crosses the reliability
//! threshold are surfaced exactly once (latched) for instance clustering.

mod key;
mod table;

pub use key::{VoxelKey, BLOCK_DIM, VOXELS_PER_BLOCK};
pub use table::{Block, BlockTable, VoxelCell};

use serde::{Deserialize, Serialize};

use crate::detection::{MarkingType, RawDetection};
use crate::geom::{Aabb, Point};
use crate::hashing::{Map, Set};

/// A voxel admitted into clustering: dominant type and its counter at
/// emission time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliableVoxel {
    pub key: VoxelKey,
    pub center: Point,
    pub best_type: MarkingType,
    pub best_count: u32,
}

/// Sparse symmetric pair-count table, stored once per unordered pair.
#[derive(Debug, Default)]
pub struct CoObservationTable {
    pairs: Map<u128, u32>,
}

#[inline]
fn pair_key(a: u64, b: u64) -> u128 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    ((lo as u128) << 64) | hi as u128
}

impl CoObservationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of detections in which both voxels appeared; absent pairs are 0.
    #[inline]
    pub fn count(&self, a: &VoxelKey, b: &VoxelKey) -> u32 {
        if a == b {
            return 0;
        }
        self.pairs.get(&pair_key(a.packed(), b.packed())).copied().unwrap_or(0)
    }

    /// Increments every unordered pair of the detection's voxel set by one.
    /// Diagonal pairs are excluded.
    pub fn record(&mut self, voxels: &[VoxelKey]) {
        let packed: Vec<u64> = voxels.iter().map(|k| k.packed()).collect();
        for i in 0..packed.len() {
            for j in (i + 1)..packed.len() {
                *self.pairs.entry(pair_key(packed[i], packed[j])).or_insert(0) += 1;
            }
        }
    }

    /// Removes every pair that references a voxel in one of the given blocks.
    fn purge_blocks(&mut self, removed: &Set<[i32; 3]>) {
        if removed.is_empty() {
            return;
        }
        self.pairs.retain(|&k, _| {
            let a = VoxelKey::from_packed((k >> 64) as u64);
            let b = VoxelKey::from_packed(k as u64);
            !removed.contains(&a.block) && !removed.contains(&b.block)
        });
    }

    /// Unordered pairs currently stored, for test oracles.
    pub fn iter_pairs(&self) -> impl Iterator<Item = (VoxelKey, VoxelKey, u32)> + '_ {
        self.pairs.iter().map(|(&k, &c)| {
            (VoxelKey::from_packed((k >> 64) as u64), VoxelKey::from_packed(k as u64), c)
        })
    }
}

/// Flat debug-dump record for snapshot tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelRecord {
    pub block: [i32; 3],
    pub intra: u16,
    pub center: [f64; 3],
    pub counts: [u32; 3],
}

#[derive(Debug)]
pub struct SemanticVoxelMap {
    voxel_size: f64,
    table: BlockTable,
    co_obs: CoObservationTable,
    /// Cells with at least one detection, maintained incrementally.
    observed: usize,
}

impl SemanticVoxelMap {
    pub fn new(voxel_size: f64) -> Self {
        assert!(voxel_size > 0.0);
        Self { voxel_size, table: BlockTable::new(), co_obs: CoObservationTable::new(), observed: 0 }
    }

    /// Map whose block table is pinned to a fixed bucket count; results must
    /// not differ from the default configuration.
    pub fn with_forced_bucket_count(voxel_size: f64, buckets: usize) -> Self {
        Self {
            voxel_size,
            table: BlockTable::with_forced_bucket_count(buckets),
            co_obs: CoObservationTable::new(),
            observed: 0,
        }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn co_observation(&self) -> &CoObservationTable {
        &self.co_obs
    }

    pub fn block_count(&self) -> usize {
        self.table.len()
    }

    /// Voxels with at least one detection.
    pub fn observed_voxels(&self) -> usize {
        self.observed
    }

    pub fn cell(&self, key: &VoxelKey) -> Option<&VoxelCell> {
        self.table.get(key.block).map(|b| &b.cells[key.intra as usize])
    }

    /// Current dominant counter of a voxel, 0 if absent.
    pub fn best_count(&self, key: &VoxelKey) -> u32 {
        self.cell(key).map(|c| c.best().1).unwrap_or(0)
    }

    /// Rasterizes one filtered, reference-frame detection into the map.
    ///
    /// The polyline is sampled at steps of at most half a voxel per segment
    /// (endpoints included), the overlapped voxels are deduplicated, and each
    /// one has its counter for the detection's type incremented by exactly
    /// one. New voxels are allocated lazily. Returns the overlapped voxels in
    /// first-touch order.
    pub fn integrate_detection(&mut self, marking: &RawDetection) -> Vec<VoxelKey> {
        let mut keys = Vec::new();
        let mut seen: Set<u64> = Set::default();
        let step_max = self.voxel_size / 2.0;
        let pts = &marking.points;
        if pts.is_empty() {
            return keys;
        }
        let mut visit = |p: &Point, map: &mut Self, keys: &mut Vec<VoxelKey>| {
            let key = VoxelKey::of_point(p, map.voxel_size);
            if seen.insert(key.packed()) {
                keys.push(key);
            }
        };
        visit(&pts[0], self, &mut keys);
        for w in pts.windows(2) {
            let seg = w[1] - w[0];
            let len = seg.norm();
            let steps = (len / step_max).ceil().max(1.0) as usize;
            for i in 1..=steps {
                let p = w[0] + seg * (i as f64 / steps as f64);
                visit(&p, self, &mut keys);
            }
        }
        let type_idx = marking.marking_type.index();
        for key in &keys {
            let (block, _) = self.table.get_or_insert(key.block);
            let cell = &mut block.cells[key.intra as usize];
            if cell.total() == 0 {
                self.observed += 1;
            }
            cell.counts[type_idx] += 1;
        }
        keys
    }

    /// Records the detection's voxel set in the co-observation table.
    pub fn update_co_observation(&mut self, voxels: &[VoxelKey]) {
        self.co_obs.record(voxels);
    }

    /// Returns the touched voxels whose dominant counter crossed the
    /// reliability threshold (strict) for the first time, restricted to
    /// centers accepted by `accept`. Emission latches per voxel: a voxel is
    /// surfaced at most once per run unless its block was evicted.
    pub fn extract_new_reliable(
        &mut self,
        touched: &[VoxelKey],
        reliability_min_count: u32,
        mut accept: impl FnMut(&Point) -> bool,
    ) -> Vec<ReliableVoxel> {
        let mut out = Vec::new();
        for key in touched {
            let Some(block) = self.table.get_mut(key.block) else { continue };
            let cell = &mut block.cells[key.intra as usize];
            if cell.emitted {
                continue;
            }
            let (best_idx, best_count) = cell.best();
            if best_count <= reliability_min_count {
                continue;
            }
            let center = key.center(self.voxel_size);
            if !accept(&center) {
                continue;
            }
            cell.emitted = true;
            out.push(ReliableVoxel {
                key: *key,
                center,
                best_type: MarkingType::ALL[best_idx],
                best_count,
            });
        }
        out
    }

    /// Removes all blocks fully outside the box and purges co-observation
    /// entries referencing them. Returns the number of observed voxels
    /// removed.
    pub fn evict_outside(&mut self, keep: &Aabb) -> usize {
        let size = self.voxel_size;
        let block_extent = BLOCK_DIM as f64 * size;
        let removed = self.table.retain(|block| {
            let min = Point::new(
                block.coords[0] as f64 * block_extent,
                block.coords[1] as f64 * block_extent,
                block.coords[2] as f64 * block_extent,
            );
            let bb = Aabb::new(min, min + Point::new(block_extent, block_extent, block_extent));
            keep.intersects(&bb)
        });
        if removed.is_empty() {
            return 0;
        }
        let mut removed_blocks: Set<[i32; 3]> = Set::default();
        let mut removed_observed = 0;
        for block in &removed {
            removed_blocks.insert(block.coords);
            removed_observed += block.cells.iter().filter(|c| c.total() > 0).count();
        }
        self.observed -= removed_observed;
        self.co_obs.purge_blocks(&removed_blocks);
        removed_observed
    }

    /// Flat record stream sorted by block then intra index.
    pub fn dump(&self) -> Vec<VoxelRecord> {
        let mut out = Vec::new();
        for block in self.table.iter() {
            for (intra, cell) in block.cells.iter().enumerate() {
                if cell.total() == 0 {
                    continue;
                }
                let key = VoxelKey::new(block.coords, intra as u16);
                let c = key.center(self.voxel_size);
                out.push(VoxelRecord {
                    block: block.coords,
                    intra: intra as u16,
                    center: [c.x, c.y, c.z],
                    counts: cell.counts,
                });
            }
        }
        out.sort_by_key(|r| (r.block, r.intra));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::MarkingType;

    fn laneline(points: &[[f64; 3]]) -> RawDetection {
        RawDetection::new(
            points.iter().map(|p| Point::new(p[0], p[1], p[2])).collect(),
            1.0,
            MarkingType::Laneline,
        )
    }

    /// Brute-force rasterization oracle: dense sampling at 1/100 voxel.
    fn dense_voxel_oracle(points: &[Point], size: f64) -> Vec<VoxelKey> {
        let mut seen = std::collections::BTreeSet::new();
        for w in points.windows(2) {
            let seg = w[1] - w[0];
            let len = seg.norm();
            let steps = (len / (size / 100.0)).ceil().max(1.0) as usize;
            for i in 0..=steps {
                let p = w[0] + seg * (i as f64 / steps as f64);
                seen.insert(VoxelKey::of_point(&p, size));
            }
        }
        seen.into_iter().collect()
    }

    #[test]
    fn axis_segment_voxels_match_dense_oracle() {
        // A 1 m segment spans the x-index interval [0, 1.0/0.2]. The
        // endpoint lands exactly on a cell boundary, and 1.0/0.2 rounds to
        // 5.0 in f64, so under half-open cells the oracle reports indices
        // 0..=5 (the trailing voxel is touched at a single boundary point).
        let size = 0.2;
        assert_eq!(1.0_f64 / 0.2, 5.0);
        let det = laneline(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let oracle = dense_voxel_oracle(&det.points, size);
        let expect: Vec<VoxelKey> =
            (0..=5).map(|x| VoxelKey::from_global([x, 0, 0])).collect();
        assert_eq!(oracle, expect);

        let mut map = SemanticVoxelMap::new(size);
        let mut keys = map.integrate_detection(&det);
        keys.sort();
        assert_eq!(keys, expect);
        for k in &keys {
            assert_eq!(map.cell(k).unwrap().counts, [1, 0, 0]);
        }
        // An interior-ending segment covers exactly ceil(0.9/0.2) voxels.
        let mut map = SemanticVoxelMap::new(size);
        let keys = map.integrate_detection(&laneline(&[[0.0, 0.0, 0.0], [0.9, 0.0, 0.0]]));
        assert_eq!(keys.len(), 5);
    }

    #[test]
    fn both_points_in_one_voxel() {
        let mut map = SemanticVoxelMap::new(0.2);
        let keys = map.integrate_detection(&laneline(&[[0.01, 0.0, 0.0], [0.05, 0.0, 0.0]]));
        assert_eq!(keys.len(), 1);
        assert_eq!(map.cell(&keys[0]).unwrap().counts[0], 1);
    }

    #[test]
    fn counters_are_monotone_per_detection() {
        let mut map = SemanticVoxelMap::new(0.2);
        let det = laneline(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let k1 = map.integrate_detection(&det);
        let k2 = map.integrate_detection(&det);
        assert_eq!(k1, k2);
        for k in &k1 {
            assert_eq!(map.cell(k).unwrap().counts[0], 2);
        }
    }

    #[test]
    fn sampled_voxels_are_adjacent() {
        // Step <= size/2 cannot skip past a voxel: consecutive touched voxels
        // differ by at most 1 per axis.
        let mut map = SemanticVoxelMap::new(0.2);
        let keys = map.integrate_detection(&laneline(&[
            [0.03, -0.4, 0.0],
            [3.7, 1.9, 0.1],
            [5.1, -2.0, 0.0],
        ]));
        for w in keys.windows(2) {
            let a = w[0].global();
            let b = w[1].global();
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() <= 1, "{a:?} -> {b:?}");
            }
        }
        // Everything we touched genuinely overlaps the polyline.
        let oracle = dense_voxel_oracle(
            &[Point::new(0.03, -0.4, 0.0), Point::new(3.7, 1.9, 0.1), Point::new(5.1, -2.0, 0.0)],
            0.2,
        );
        for k in &keys {
            assert!(oracle.contains(k), "voxel {k:?} not in dense oracle");
        }
    }

    #[test]
    fn co_observation_pairs_of_three() {
        let mut t = CoObservationTable::new();
        let keys: Vec<VoxelKey> = (0..3).map(|i| VoxelKey::from_global([i, 0, 0])).collect();
        t.record(&keys);
        assert_eq!(t.len(), 3); // C(3,2)
        assert_eq!(t.count(&keys[0], &keys[1]), 1);
        assert_eq!(t.count(&keys[1], &keys[0]), 1); // symmetric
        assert_eq!(t.count(&keys[0], &keys[0]), 0); // diagonal excluded
    }

    #[test]
    fn shared_pair_counts_twice() {
        let mut t = CoObservationTable::new();
        let a = VoxelKey::from_global([0, 0, 0]);
        let b = VoxelKey::from_global([1, 0, 0]);
        let c = VoxelKey::from_global([2, 0, 0]);
        let d = VoxelKey::from_global([3, 0, 0]);
        t.record(&[a, b, c]);
        t.record(&[a, b, d]);
        assert_eq!(t.count(&a, &b), 2);
        assert_eq!(t.count(&a, &c), 1);
        assert_eq!(t.count(&c, &d), 0);
    }

    #[test]
    fn random_stream_matches_pair_count_oracle() {
        // Offline oracle: recompute all pair counts from the detection log.
        let mut map = SemanticVoxelMap::new(0.2);
        let mut log: Vec<Vec<VoxelKey>> = Vec::new();
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) * 8.0 - 4.0
        };
        for _ in 0..40 {
            let det = laneline(&[[next(), next(), 0.0], [next(), next(), 0.0]]);
            let keys = map.integrate_detection(&det);
            map.update_co_observation(&keys);
            log.push(keys);
        }
        let mut oracle: std::collections::BTreeMap<(VoxelKey, VoxelKey), u32> = Default::default();
        for keys in &log {
            for i in 0..keys.len() {
                for j in (i + 1)..keys.len() {
                    let (a, b) =
                        if keys[i] <= keys[j] { (keys[i], keys[j]) } else { (keys[j], keys[i]) };
                    *oracle.entry((a, b)).or_insert(0) += 1;
                }
            }
        }
        assert_eq!(map.co_observation().len(), oracle.len());
        for ((a, b), count) in &oracle {
            assert_eq!(map.co_observation().count(a, b), *count);
        }
        // Counter conservation: each voxel's total equals the number of
        // detections whose voxel set contained it.
        let mut totals: std::collections::BTreeMap<VoxelKey, u32> = Default::default();
        for keys in &log {
            for k in keys {
                *totals.entry(*k).or_insert(0) += 1;
            }
        }
        for (k, expect) in &totals {
            assert_eq!(map.cell(k).unwrap().total(), *expect);
        }
        // Pair counts never exceed either endpoint's total.
        for (a, b, c) in map.co_observation().iter_pairs() {
            let ta = map.cell(&a).unwrap().total();
            let tb = map.cell(&b).unwrap().total();
            assert!(c <= ta.min(tb), "pair {c} totals {ta} {tb}");
        }
    }

    #[test]
    fn reliability_threshold_is_strict() {
        let mut map = SemanticVoxelMap::new(0.2);
        let det = laneline(&[[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]]);
        let mut emitted = Vec::new();
        for _ in 0..12 {
            let keys = map.integrate_detection(&det);
            emitted.push(map.extract_new_reliable(&keys, 10, |_| true).len());
        }
        // Counts 1..=10 emit nothing; count 11 > 10 emits once; latched after.
        assert_eq!(&emitted[..10], &[0; 10]);
        assert_eq!(emitted[10], 1);
        assert_eq!(emitted[11], 0);
    }

    #[test]
    fn zero_threshold_emits_on_first_observation() {
        let mut map = SemanticVoxelMap::new(0.2);
        let keys = map.integrate_detection(&laneline(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]));
        let reliable = map.extract_new_reliable(&keys, 0, |_| true);
        assert_eq!(reliable.len(), keys.len());
    }

    #[test]
    fn best_type_is_argmax_with_fixed_tiebreak() {
        let mut map = SemanticVoxelMap::new(0.2);
        let pts = [[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]];
        let mut det_edge = laneline(&pts);
        det_edge.marking_type = MarkingType::Roadedge;
        let mut keys = Vec::new();
        for _ in 0..12 {
            keys = map.integrate_detection(&laneline(&pts));
        }
        for _ in 0..5 {
            map.integrate_detection(&det_edge);
        }
        let reliable = map.extract_new_reliable(&keys, 10, |_| true);
        assert_eq!(reliable.len(), 1);
        assert_eq!(reliable[0].best_type, MarkingType::Laneline);
        assert_eq!(reliable[0].best_count, 12);

        // Tie at equal counts resolves laneline < roadedge < stopline.
        let cell = VoxelCell { counts: [4, 4, 4], emitted: false };
        assert_eq!(cell.best(), (0, 4));
    }

    #[test]
    fn eviction_boxes() {
        let mut map = SemanticVoxelMap::new(0.2);
        for x in 0..40 {
            let det = laneline(&[[x as f64, 0.0, 0.0], [x as f64 + 0.9, 0.0, 0.0]]);
            let keys = map.integrate_detection(&det);
            map.update_co_observation(&keys);
        }
        let everything = Aabb::new(Point::new(-1e3, -1e3, -1e3), Point::new(1e3, 1e3, 1e3));
        assert_eq!(map.evict_outside(&everything), 0);

        let observed_before = map.observed_voxels();
        assert!(observed_before > 0);
        let nothing = Aabb::new(Point::new(500.0, 500.0, 500.0), Point::new(501.0, 501.0, 501.0));
        let removed = map.evict_outside(&nothing);
        assert_eq!(removed, observed_before);
        assert_eq!(map.observed_voxels(), 0);
        assert!(map.co_observation().is_empty());
    }

    #[test]
    fn eviction_purges_pairs_without_dangling_references() {
        let mut map = SemanticVoxelMap::new(0.2);
        let keys_a = map.integrate_detection(&laneline(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]));
        map.update_co_observation(&keys_a);
        let keys_b = map.integrate_detection(&laneline(&[[30.0, 0.0, 0.0], [32.0, 0.0, 0.0]]));
        map.update_co_observation(&keys_b);

        // Keep only the far cluster.
        let keep = Aabb::new(Point::new(25.0, -5.0, -5.0), Point::new(40.0, 5.0, 5.0));
        let removed = map.evict_outside(&keep);
        assert_eq!(removed, keys_a.len());
        for k in &keys_a {
            assert!(map.cell(k).is_none());
        }
        // Exhaustive scan: every surviving pair references live voxels.
        for (a, b, _) in map.co_observation().iter_pairs() {
            assert!(map.cell(&a).is_some());
            assert!(map.cell(&b).is_some());
        }
        // Evicted voxels lost their latch: they can be observed and emitted again.
        let keys = map.integrate_detection(&laneline(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]));
        let reliable = map.extract_new_reliable(&keys, 0, |_| true);
        assert_eq!(reliable.len(), keys.len());
    }

    #[test]
    fn forced_single_bucket_matches_default_map() {
        let mut normal = SemanticVoxelMap::new(0.2);
        let mut collide = SemanticVoxelMap::with_forced_bucket_count(0.2, 1);
        let mut state = 3u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) * 30.0 - 15.0
        };
        for i in 0..30 {
            let mut det = laneline(&[[next(), next(), 0.0], [next(), next(), 0.0]]);
            if i % 3 == 0 {
                det.marking_type = MarkingType::Stopline;
            }
            let ka = normal.integrate_detection(&det);
            let kb = collide.integrate_detection(&det);
            assert_eq!(ka, kb);
            normal.update_co_observation(&ka);
            collide.update_co_observation(&kb);
        }
        assert_eq!(normal.dump(), collide.dump());
    }

    #[test]
    fn window_gate_defers_emission_without_latching() {
        let mut map = SemanticVoxelMap::new(0.2);
        let det = laneline(&[[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]]);
        let keys = map.integrate_detection(&det);
        // Rejected by the acceptance predicate: no latch.
        assert!(map.extract_new_reliable(&keys, 0, |_| false).is_empty());
        // Accepted later without another observation.
        assert_eq!(map.extract_new_reliable(&keys, 0, |_| true).len(), 1);
    }
}
