//! Block-sparse truncated signed distance volume.
//!
//! Voxel `g` (integer 3-vector) samples the world point `g · voxel_size`.
//! Voxels live in 8³ blocks allocated around observed surfaces; blocks are
//! updated independently, so integration fans out across blocks.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{project_cv, RgbdFrame};
use crate::exec::ExecMode;
use crate::{Error, Result};

pub const BLOCK: i32 = 8;
const BLOCK_VOXELS: usize = (BLOCK * BLOCK * BLOCK) as usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsdfConfig {
    pub voxel_size: f64,
    /// Truncation distance in voxels.
    pub truncation_voxels: f64,
    /// Depth beyond this is not integrated (meters).
    pub max_depth: f64,
}

impl Default for TsdfConfig {
    fn default() -> Self {
        TsdfConfig { voxel_size: 0.02, truncation_voxels: 4.0, max_depth: 8.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Voxel {
    pub sdf: f32,
    pub weight: f32,
    /// Running average of RGB in `[0,255]`.
    pub color: [f32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub voxels: Vec<Voxel>,
}

impl Block {
    fn empty() -> Block {
        Block { voxels: vec![Voxel::default(); BLOCK_VOXELS] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub voxel_size: f64,
    pub truncation: f64,
    pub max_depth: f64,
    pub blocks: BTreeMap<[i32; 3], Block>,
}

#[inline]
fn split(g: [i32; 3]) -> ([i32; 3], usize) {
    let b = g.map(|v| v.div_euclid(BLOCK));
    let l = g.map(|v| v.rem_euclid(BLOCK) as usize);
    (b, (l[2] * BLOCK as usize + l[1]) * BLOCK as usize + l[0])
}

impl TsdfVolume {
    pub fn new(config: &TsdfConfig) -> TsdfVolume {
        TsdfVolume {
            voxel_size: config.voxel_size,
            truncation: config.voxel_size * config.truncation_voxels,
            max_depth: config.max_depth,
            blocks: BTreeMap::new(),
        }
    }

    /// Volume sampling an analytic signed distance function (unit weight,
    /// values clamped to the truncation band) over the box `[lo, hi]`.
    pub fn from_sdf(config: &TsdfConfig, lo: Vector3<f64>, hi: Vector3<f64>, f: impl Fn(&Point3<f64>) -> f64) -> TsdfVolume {
        let mut vol = TsdfVolume::new(config);
        let a = lo.map(|v| (v / vol.voxel_size).floor() as i32);
        let b = hi.map(|v| (v / vol.voxel_size).ceil() as i32);
        for z in a.z..=b.z {
            for y in a.y..=b.y {
                for x in a.x..=b.x {
                    let g = [x, y, z];
                    let d = f(&vol.position(g)).clamp(-vol.truncation, vol.truncation);
                    let (bk, i) = split(g);
                    let v = &mut vol.blocks.entry(bk).or_insert_with(Block::empty).voxels[i];
                    *v = Voxel { sdf: d as f32, weight: 1.0, color: [200.0; 3] };
                }
            }
        }
        vol
    }

    pub fn position(&self, g: [i32; 3]) -> Point3<f64> {
        Point3::new(g[0] as f64, g[1] as f64, g[2] as f64) * self.voxel_size
    }

    pub fn voxel(&self, g: [i32; 3]) -> Option<&Voxel> {
        let (b, i) = split(g);
        self.blocks.get(&b).map(|blk| &blk.voxels[i])
    }

    /// Every voxel with positive weight, in block order.
    pub fn observed(&self) -> impl Iterator<Item = ([i32; 3], &Voxel)> {
        self.blocks.iter().flat_map(|(b, blk)| {
            blk.voxels.iter().enumerate().filter(|(_, v)| v.weight > 0.0).map(move |(i, v)| {
                let i = i as i32;
                ([b[0] * BLOCK + i % BLOCK, b[1] * BLOCK + (i / BLOCK) % BLOCK, b[2] * BLOCK + i / (BLOCK * BLOCK)], v)
            })
        })
    }

    /// Fuse one frame seen from `pose` (`world_from_camera`).
    pub fn integrate(&mut self, frame: &RgbdFrame, pose: &Isometry3<f64>, mode: ExecMode) {
        let (w, h) = (frame.width(), frame.height());
        let block_size = self.voxel_size * BLOCK as f64;
        let mut touched = BTreeSet::new();
        for y in 0..h {
            for x in 0..w {
                let Some(p) = frame.point(x, y) else { continue };
                if p.z > self.max_depth {
                    continue;
                }
                let p = pose * p;
                let lo = p.coords.map(|v| ((v - self.truncation) / block_size).floor() as i32);
                let hi = p.coords.map(|v| ((v + self.truncation) / block_size).floor() as i32);
                for bz in lo.z..=hi.z {
                    for by in lo.y..=hi.y {
                        for bx in lo.x..=hi.x {
                            touched.insert([bx, by, bz]);
                        }
                    }
                }
            }
        }
        for k in &touched {
            self.blocks.entry(*k).or_insert_with(Block::empty);
        }
        let mut work: Vec<(&[i32; 3], &mut Block)> = self.blocks.iter_mut().filter(|(k, _)| touched.contains(*k)).collect();
        let cam_from_world = pose.inverse();
        let (vs, trunc, max_depth) = (self.voxel_size, self.truncation, self.max_depth);
        mode.for_each_mut(&mut work, |_, (key, block)| {
            for (i, vox) in block.voxels.iter_mut().enumerate() {
                let i = i as i32;
                let g = [key[0] * BLOCK + i % BLOCK, key[1] * BLOCK + (i / BLOCK) % BLOCK, key[2] * BLOCK + i / (BLOCK * BLOCK)];
                let c = cam_from_world * (Point3::new(g[0] as f64, g[1] as f64, g[2] as f64) * vs);
                let Some((u, v)) = project_cv(&frame.intrinsics, &c) else { continue };
                let (px, py) = (u.round(), v.round());
                if px < 0.0 || py < 0.0 || px >= w as f64 || py >= h as f64 {
                    continue;
                }
                let (px, py) = (px as usize, py as usize);
                let Some(d) = frame.depth_m(px, py) else { continue };
                if d > max_depth {
                    continue;
                }
                let sdf = d - c.z;
                if sdf < -trunc {
                    continue;
                }
                let s = sdf.min(trunc) as f32;
                let nw = vox.weight + 1.0;
                vox.sdf = (vox.sdf * vox.weight + s) / nw;
                if let Some(col) = &frame.color {
                    let j = (py * w + px) * 3;
                    for k in 0..3 {
                        vox.color[k] = (vox.color[k] * vox.weight + col[j + k] as f32) / nw;
                    }
                }
                vox.weight = nw;
            }
        });
    }
}

/// Fuse every frame at its pose into a fresh volume.
pub fn integrate_tsdf(frames: &[RgbdFrame], poses: &[Isometry3<f64>], config: &TsdfConfig, mode: ExecMode) -> Result<TsdfVolume> {
    if frames.len() != poses.len() {
        return Err(Error::Contract(format!("{} frames but {} poses", frames.len(), poses.len())));
    }
    if let Some(f) = frames.windows(2).find(|w| w[0].intrinsics != w[1].intrinsics) {
        return Err(Error::Contract(format!("frame {} has different intrinsics", f[1].index)));
    }
    let mut vol = TsdfVolume::new(config);
    for (f, p) in frames.iter().zip(poses) {
        vol.integrate(f, p, mode);
    }
    Ok(vol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Intrinsics;

    fn wall(depth_mm: u16) -> RgbdFrame {
        let k = Intrinsics { width: 64, height: 48, fx: 50.0, fy: 50.0, cx: 31.5, cy: 23.5 };
        RgbdFrame::new(k, &vec![128; 64 * 48 * 3], vec![depth_mm; 64 * 48], 1000.0, 0).unwrap()
    }

    #[test]
    fn wall_zero_crossing_at_depth() {
        let f = wall(2000);
        let vol = integrate_tsdf(&[f], &[Isometry3::identity()], &TsdfConfig::default(), ExecMode::Sequential).unwrap();
        // Along the optical axis the sign flips between 2.00 - voxel and 2.00 + voxel.
        let mut crossing = None;
        for z in 80..120 {
            let (a, b) = (vol.voxel([0, 0, z]), vol.voxel([0, 0, z + 1]));
            if let (Some(a), Some(b)) = (a, b) {
                if a.weight > 0.0 && b.weight > 0.0 && a.sdf > 0.0 && b.sdf <= 0.0 {
                    crossing = Some(z as f64 * 0.02 + 0.02 * a.sdf as f64 / (a.sdf - b.sdf) as f64);
                }
            }
        }
        let c = crossing.expect("zero crossing");
        assert!((c - 2.0).abs() <= 0.02, "{c}");
        for (_, v) in vol.observed() {
            assert!(v.sdf.abs() as f64 <= vol.truncation + 1e-6);
        }
    }

    #[test]
    fn double_integration_keeps_values() {
        let f = wall(1500);
        let once = integrate_tsdf(std::slice::from_ref(&f), &[Isometry3::identity()], &TsdfConfig::default(), ExecMode::Sequential).unwrap();
        let twice = integrate_tsdf(&[f.clone(), f], &[Isometry3::identity(); 2], &TsdfConfig::default(), ExecMode::Parallel).unwrap();
        assert_eq!(once.blocks.len(), twice.blocks.len());
        for ((ga, a), (gb, b)) in once.observed().zip(twice.observed()) {
            assert_eq!(ga, gb);
            assert_eq!(a.sdf, b.sdf);
            assert_eq!(b.weight, 2.0 * a.weight);
        }
    }

    #[test]
    fn voxel_indexing_handles_negatives() {
        for g in [[-1, -8, -9], [0, 7, 8], [-17, 3, 15]] {
            let (b, i) = split(g);
            let i = i as i32;
            assert_eq!([b[0] * BLOCK + i % BLOCK, b[1] * BLOCK + (i / BLOCK) % BLOCK, b[2] * BLOCK + i / (BLOCK * BLOCK)], g);
        }
    }
}
