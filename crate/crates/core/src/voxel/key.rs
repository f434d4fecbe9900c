//! Voxel addressing: blocks of 8x8x8 voxels indexed by integer block
//! coordinates, with an intra-block index `ix + 8*iy + 64*iz`.

use serde::{Deserialize, Serialize};

use crate::geom::Point;

pub const BLOCK_DIM: i32 = 8;
pub const VOXELS_PER_BLOCK: usize = 512;

/// Supported global voxel coordinate range per axis (for pair-key packing).
const PACK_LIMIT: i32 = 1 << 20;

/// Unique voxel identity: owning block plus the index inside its 8^3 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelKey {
    pub block: [i32; 3],
    pub intra: u16,
}

impl VoxelKey {
    pub fn new(block: [i32; 3], intra: u16) -> Self {
        debug_assert!((intra as usize) < VOXELS_PER_BLOCK);
        Self { block, intra }
    }

    /// Key of the voxel whose half-open cube [k*s, (k+1)*s)^3 contains `p`,
    /// with floor semantics for negative coordinates.
    pub fn of_point(p: &Point, voxel_size: f64) -> Self {
        debug_assert!(voxel_size > 0.0);
        let g = [
            (p.x / voxel_size).floor() as i32,
            (p.y / voxel_size).floor() as i32,
            (p.z / voxel_size).floor() as i32,
        ];
        Self::from_global(g)
    }

    /// From global integer voxel coordinates.
    pub fn from_global(g: [i32; 3]) -> Self {
        let block = [g[0].div_euclid(BLOCK_DIM), g[1].div_euclid(BLOCK_DIM), g[2].div_euclid(BLOCK_DIM)];
        let off = [g[0].rem_euclid(BLOCK_DIM), g[1].rem_euclid(BLOCK_DIM), g[2].rem_euclid(BLOCK_DIM)];
        Self { block, intra: (off[0] + BLOCK_DIM * off[1] + BLOCK_DIM * BLOCK_DIM * off[2]) as u16 }
    }

    /// Global integer voxel coordinates.
    pub fn global(&self) -> [i32; 3] {
        let off = self.offsets();
        [
            self.block[0] * BLOCK_DIM + off[0],
            self.block[1] * BLOCK_DIM + off[1],
            self.block[2] * BLOCK_DIM + off[2],
        ]
    }

    /// Per-axis offsets inside the block, each in [0, 8).
    pub fn offsets(&self) -> [i32; 3] {
        let i = self.intra as i32;
        [i % BLOCK_DIM, (i / BLOCK_DIM) % BLOCK_DIM, i / (BLOCK_DIM * BLOCK_DIM)]
    }

    /// Voxel center in the reference frame.
    pub fn center(&self, voxel_size: f64) -> Point {
        let g = self.global();
        Point::new(
            (g[0] as f64 + 0.5) * voxel_size,
            (g[1] as f64 + 0.5) * voxel_size,
            (g[2] as f64 + 0.5) * voxel_size,
        )
    }

    /// Packs the global coordinates into 63 bits (21 bits per axis).
    /// The map supports roughly +-200 km of extent at a 0.2 m voxel size.
    pub fn packed(&self) -> u64 {
        let g = self.global();
        assert!(
            g.iter().all(|&c| c > -PACK_LIMIT && c < PACK_LIMIT),
            "voxel coordinate {:?} outside supported map extent",
            g
        );
        let enc = |c: i32| (c + PACK_LIMIT) as u64;
        enc(g[0]) | (enc(g[1]) << 21) | (enc(g[2]) << 42)
    }

    pub fn from_packed(v: u64) -> Self {
        let dec = |bits: u64| (bits & ((1 << 21) - 1)) as i32 - PACK_LIMIT;
        Self::from_global([dec(v), dec(v >> 21), dec(v >> 42)])
    }
}
