//! Chained hash table mapping block coordinates to dense 8^3 voxel arrays.
//!
//! Buckets store indices into a block arena; collisions chain within the
//! bucket. The bucket count doubles when the load factor reaches 1, giving
//! amortized O(1) insert/lookup. A forced bucket count (all collisions) is
//! supported so tests can prove results never depend on hash quality.

use crate::hashing::hash_coords;

use super::key::VOXELS_PER_BLOCK;

/// Per-voxel payload: one detection counter per marking type plus the
/// reliability latch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VoxelCell {
    pub counts: [u32; 3],
    pub emitted: bool,
}

impl VoxelCell {
    #[inline]
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Largest counter and its type index; ties go to the lowest index
    /// (laneline < roadedge < stopline).
    #[inline]
    pub fn best(&self) -> (usize, u32) {
        let mut best = (0, self.counts[0]);
        for (i, &c) in self.counts.iter().enumerate().skip(1) {
            if c > best.1 {
                best = (i, c);
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub coords: [i32; 3],
    pub cells: Box<[VoxelCell; VOXELS_PER_BLOCK]>,
}

impl Block {
    fn new(coords: [i32; 3]) -> Self {
        Self { coords, cells: Box::new([VoxelCell::default(); VOXELS_PER_BLOCK]) }
    }
}

#[derive(Debug)]
pub struct BlockTable {
    buckets: Vec<Vec<u32>>,
    blocks: Vec<Block>,
    forced_buckets: Option<usize>,
}

const INITIAL_BUCKETS: usize = 256;

impl BlockTable {
    pub fn new() -> Self {
        Self { buckets: vec![Vec::new(); INITIAL_BUCKETS], blocks: Vec::new(), forced_buckets: None }
    }

    /// Table with a fixed bucket count that never grows. `count = 1` forces
    /// every block into one chain.
    pub fn with_forced_bucket_count(count: usize) -> Self {
        assert!(count >= 1);
        Self { buckets: vec![Vec::new(); count], blocks: Vec::new(), forced_buckets: Some(count) }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    #[inline]
    fn bucket_of(&self, coords: [i32; 3]) -> usize {
        let h = hash_coords(coords);
        match self.forced_buckets {
            Some(n) => (h % n as u64) as usize,
            // Power-of-two bucket count: mask the high-quality mixed bits.
            None => (h & (self.buckets.len() as u64 - 1)) as usize,
        }
    }

    pub fn get(&self, coords: [i32; 3]) -> Option<&Block> {
        let bucket = &self.buckets[self.bucket_of(coords)];
        bucket.iter().map(|&i| &self.blocks[i as usize]).find(|b| b.coords == coords)
    }

    pub fn get_mut(&mut self, coords: [i32; 3]) -> Option<&mut Block> {
        let b = self.bucket_of(coords);
        let idx = self.buckets[b].iter().find(|&&i| self.blocks[i as usize].coords == coords)?;
        Some(&mut self.blocks[*idx as usize])
    }

    /// Looks the block up, allocating it lazily. Returns (block, was_new).
    pub fn get_or_insert(&mut self, coords: [i32; 3]) -> (&mut Block, bool) {
        let b = self.bucket_of(coords);
        if let Some(&idx) = self.buckets[b].iter().find(|&&i| self.blocks[i as usize].coords == coords)
        {
            return (&mut self.blocks[idx as usize], false);
        }
        if self.forced_buckets.is_none() && self.blocks.len() + 1 > self.buckets.len() {
            self.grow();
        }
        let idx = self.blocks.len() as u32;
        self.blocks.push(Block::new(coords));
        let b = self.bucket_of(coords);
        self.buckets[b].push(idx);
        (&mut self.blocks[idx as usize], true)
    }

    fn grow(&mut self) {
        let new_len = self.buckets.len() * 2;
        self.buckets = vec![Vec::new(); new_len];
        for (idx, block) in self.blocks.iter().enumerate() {
            let b = self.bucket_of(block.coords);
            self.buckets[b].push(idx as u32);
        }
    }

    /// Drops every block for which `keep` is false, compacting the arena and
    /// rebuilding the buckets. Returns the removed blocks.
    pub fn retain(&mut self, keep: impl Fn(&Block) -> bool) -> Vec<Block> {
        let mut removed = Vec::new();
        let mut kept = Vec::with_capacity(self.blocks.len());
        for block in self.blocks.drain(..) {
            if keep(&block) {
                kept.push(block);
            } else {
                removed.push(block);
            }
        }
        self.blocks = kept;
        for bucket in &mut self.buckets {
            bucket.clear();
        }
        for idx in 0..self.blocks.len() {
            let b = self.bucket_of(self.blocks[idx].coords);
            self.buckets[b].push(idx as u32);
        }
        removed
    }

    pub fn iter(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter()
    }
}

impl Default for BlockTable {
    fn default() -> Self {
        Self::new()
    }
}
