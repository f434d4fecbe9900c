//! Incremental clustering of reliable voxels into road-marking instances.
//!
//! Membership is decided from co-observation evidence alone: a candidate
//! voxel joins an instance when enough of its members were frequently seen
//! in the same detections as the candidate. No geometric thresholds are
//! involved. Each instance carries a fitted polyline model, re-estimated
//! only when the instance changed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::detection::MarkingType;
use crate::geom::Point;
use crate::polyline_fit::{estimate_polyline, FitError, PolylineFitParams};
use crate::voxel::{CoObservationTable, ReliableVoxel, SemanticVoxelMap, VoxelKey};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringParams {
    /// Minimum same-instance probability for a member to count as a match.
    pub min_pair_prob: f64,
    /// Accept when more than this many members match...
    pub min_shared_count: u32,
    /// ...or when the matching fraction of members exceeds this ratio.
    pub min_shared_ratio: f64,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        Self { min_pair_prob: 0.6, min_shared_count: 3, min_shared_ratio: 0.7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceVoxel {
    pub key: VoxelKey,
    pub center: Point,
    pub best_count: u32,
}

/// A clustered road marking: member voxels plus the fitted polyline.
#[derive(Debug, Clone)]
pub struct MarkingInstance {
    pub id: u32,
    pub marking_type: MarkingType,
    pub voxels: Vec<InstanceVoxel>,
    pub polyline: Vec<Point>,
}

impl MarkingInstance {
    fn new(id: u32, seed: &ReliableVoxel) -> Self {
        Self {
            id,
            marking_type: seed.best_type,
            voxels: vec![InstanceVoxel {
                key: seed.key,
                center: seed.center,
                best_count: seed.best_count,
            }],
            polyline: Vec::new(),
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }
}

/// Same-instance probability of a member/candidate voxel pair: the
/// co-observation count normalized by the smaller of the two detection
/// counts.
#[inline]
fn pair_probability(co_count: u32, member_count: u32, candidate_count: u32) -> f64 {
    debug_assert!(member_count > 0 && candidate_count > 0);
    let co = co_count as f64;
    (co / member_count as f64).max(co / candidate_count as f64)
}

/// Number and fraction of instance members whose pair probability with the
/// candidate exceeds the threshold.
pub fn membership_score(
    candidate: &ReliableVoxel,
    instance: &MarkingInstance,
    table: &CoObservationTable,
    min_pair_prob: f64,
) -> (u32, f64) {
    debug_assert_eq!(candidate.best_type, instance.marking_type);
    let mut matching = 0u32;
    for member in &instance.voxels {
        let co = table.count(&member.key, &candidate.key);
        if co == 0 {
            continue;
        }
        if pair_probability(co, member.best_count, candidate.best_count) > min_pair_prob {
            matching += 1;
        }
    }
    (matching, matching as f64 / instance.voxels.len() as f64)
}

#[derive(Debug, Default)]
pub struct InstanceMap {
    instances: BTreeMap<u32, MarkingInstance>,
    next_id: u32,
}

impl InstanceMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&MarkingInstance> {
        self.instances.get(&id)
    }

    /// Instances in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &MarkingInstance> {
        self.instances.values()
    }

    pub fn of_type(&self, t: MarkingType) -> impl Iterator<Item = &MarkingInstance> {
        self.instances.values().filter(move |i| i.marking_type == t)
    }

    /// Best qualifying same-type instance for the candidate, if any.
    /// Qualifying means the matching-member count exceeds `min_shared_count`
    /// or the matching fraction exceeds `min_shared_ratio`; among qualifying
    /// instances the highest count wins, ties broken by lower id.
    fn best_match(
        &self,
        candidate: &ReliableVoxel,
        table: &CoObservationTable,
        params: &ClusteringParams,
    ) -> Option<u32> {
        let mut best: Option<(u32, u32)> = None; // (matching count, id)
        for instance in self.instances.values() {
            if instance.marking_type != candidate.best_type {
                continue;
            }
            let (h, ratio) = membership_score(candidate, instance, table, params.min_pair_prob);
            if h > params.min_shared_count || ratio > params.min_shared_ratio {
                let better = match best {
                    None => true,
                    Some((bh, bid)) => h > bh || (h == bh && instance.id < bid),
                };
                if better {
                    best = Some((h, instance.id));
                }
            }
        }
        best.map(|(_, id)| id)
    }

    fn push_member(&mut self, id: u32, candidate: &ReliableVoxel) {
        self.instances.get_mut(&id).unwrap().voxels.push(InstanceVoxel {
            key: candidate.key,
            center: candidate.center,
            best_count: candidate.best_count,
        });
    }

    fn create(&mut self, candidate: &ReliableVoxel) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        self.instances.insert(id, MarkingInstance::new(id, candidate));
        id
    }

    /// Adds the candidate to the best qualifying same-type instance, or
    /// creates a fresh one. Returns the instance id.
    pub fn assign_or_create(
        &mut self,
        candidate: &ReliableVoxel,
        table: &CoObservationTable,
        params: &ClusteringParams,
    ) -> u32 {
        match self.best_match(candidate, table, params) {
            Some(id) => {
                self.push_member(id, candidate);
                id
            }
            None => self.create(candidate),
        }
    }

    /// Re-reads every member's current dominant count from the voxel map, so
    /// pair probabilities stay normalized by up-to-date counts. Members whose
    /// voxel vanished keep their last value (their pairs were purged anyway).
    pub fn refresh_member_counts(&mut self, map: &SemanticVoxelMap) {
        for instance in self.instances.values_mut() {
            for member in &mut instance.voxels {
                let current = map.best_count(&member.key);
                if current > 0 {
                    member.best_count = current;
                }
            }
        }
    }

    /// Assigns every new reliable voxel and refits the polylines of the
    /// instances that gained voxels. Returns the dirty instance ids.
    ///
    /// Assignment runs in two passes over the batch: candidates that qualify
    /// nowhere are retried after the rest of the batch has been absorbed, and
    /// only then seed new instances. When a line first crosses the
    /// reliability threshold its instances are only a few voxels strong, and
    /// immediate creation would shatter the batch into sibling fragments.
    pub fn update_instances(
        &mut self,
        new_reliable: &[ReliableVoxel],
        table: &CoObservationTable,
        params: &ClusteringParams,
        fit: &PolylineFitParams,
    ) -> BTreeSet<u32> {
        let mut dirty = BTreeSet::new();
        let mut deferred = Vec::new();
        for candidate in new_reliable {
            match self.best_match(candidate, table, params) {
                Some(id) => {
                    self.push_member(id, candidate);
                    dirty.insert(id);
                }
                None => deferred.push(candidate),
            }
        }
        for candidate in deferred {
            dirty.insert(self.assign_or_create(candidate, table, params));
        }
        for &id in &dirty {
            self.refit(id, fit);
        }
        dirty
    }

    fn refit(&mut self, id: u32, fit: &PolylineFitParams) {
        let instance = self.instances.get_mut(&id).expect("dirty id must exist");
        if instance.voxels.len() < 2 {
            return;
        }
        let centers: Vec<Point> = instance.voxels.iter().map(|v| v.center).collect();
        match estimate_polyline(&centers, fit) {
            Ok(polyline) => instance.polyline = polyline,
            Err(FitError::Degenerate) => {
                // Keep the previous polyline.
                log::warn!("instance {id}: degenerate polyline fit, keeping previous model");
            }
        }
    }

    /// Drops member voxels rejected by `keep`, removes emptied instances and
    /// refits the survivors that changed. Instances left with fewer than two
    /// voxels lose their polyline.
    pub fn prune_members(&mut self, mut keep: impl FnMut(&Point) -> bool, fit: &PolylineFitParams) {
        let mut changed = Vec::new();
        self.instances.retain(|&id, instance| {
            let before = instance.voxels.len();
            instance.voxels.retain(|v| keep(&v.center));
            if instance.voxels.is_empty() {
                return false;
            }
            if instance.voxels.len() != before {
                changed.push(id);
            }
            true
        });
        for id in changed {
            let instance = self.instances.get_mut(&id).unwrap();
            if instance.voxels.len() < 2 {
                instance.polyline.clear();
            } else {
                self.refit(id, fit);
            }
        }
    }
}
