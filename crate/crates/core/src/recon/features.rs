//! Sparse rough alignment: Harris corners, normalized patch descriptors,
//! mutual matching and 3-point rigid RANSAC on the back-projected matches.

use nalgebra::{Isometry3, Point3};
use serde::{Deserialize, Serialize};

use super::RgbdFrame;
use crate::augment::Rng;
use crate::geom::rigid_fit;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureParams {
    pub max_corners: usize,
    /// Half side of the descriptor patch.
    pub patch_radius: usize,
    /// Minimum normalized cross-correlation of an accepted match.
    pub min_score: f32,
    pub ransac_iterations: usize,
    /// Inlier gate on 3D distance (meters).
    pub inlier_distance: f64,
    pub seed: u64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams { max_corners: 400, patch_radius: 4, min_score: 0.8, ransac_iterations: 500, inlier_distance: 0.03, seed: 0 }
    }
}

/// Rigid estimate mapping the second frame into the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub pose: Isometry3<f64>,
    pub inliers: usize,
    pub matches: usize,
}

struct Keypoint {
    point: Point3<f64>,
    desc: Vec<f32>,
}

fn harris(img: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut ix = vec![0f32; w * h];
    let mut iy = vec![0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dx: isize, dy: isize| img[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            ix[y * w + x] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            iy[y * w + x] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        }
    }
    let mut r = vec![0f32; w * h];
    for y in 2..h - 2 {
        for x in 2..w - 2 {
            let (mut a, mut b, mut c) = (0f32, 0f32, 0f32);
            for dy in -2isize..=2 {
                for dx in -2isize..=2 {
                    let i = (y as isize + dy) as usize * w + (x as isize + dx) as usize;
                    a += ix[i] * ix[i];
                    b += ix[i] * iy[i];
                    c += iy[i] * iy[i];
                }
            }
            r[y * w + x] = a * c - b * b - 0.04 * (a + c) * (a + c);
        }
    }
    r
}

fn keypoints(frame: &RgbdFrame, p: &FeatureParams) -> Vec<Keypoint> {
    let (w, h) = (frame.width(), frame.height());
    let m = p.patch_radius + 2;
    if w <= 2 * m || h <= 2 * m {
        return vec![];
    }
    let resp = harris(&frame.intensity, w, h);
    let max = resp.iter().cloned().fold(0f32, f32::max);
    if max <= 0.0 {
        return vec![];
    }
    let mut cand: Vec<(f32, usize, usize)> = Vec::new();
    for y in m..h - m {
        for x in m..w - m {
            let v = resp[y * w + x];
            if v < 1e-3 * max {
                continue;
            }
            let is_max = (-2isize..=2).all(|dy| {
                (-2isize..=2).all(|dx| {
                    let j = (y as isize + dy) as usize * w + (x as isize + dx) as usize;
                    (dx == 0 && dy == 0) || resp[j] < v || (resp[j] == v && j > y * w + x)
                })
            });
            if is_max {
                cand.push((v, x, y));
            }
        }
    }
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    let r = p.patch_radius as isize;
    cand.into_iter()
        .filter_map(|(_, x, y)| {
            let point = frame.point(x, y)?;
            let mut desc = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
            for dy in -r..=r {
                for dx in -r..=r {
                    desc.push(frame.intensity[(y as isize + dy) as usize * w + (x as isize + dx) as usize]);
                }
            }
            let mean = desc.iter().sum::<f32>() / desc.len() as f32;
            desc.iter_mut().for_each(|d| *d -= mean);
            let norm = desc.iter().map(|d| d * d).sum::<f32>().sqrt();
            if norm < 1e-3 {
                return None;
            }
            desc.iter_mut().for_each(|d| *d /= norm);
            Some(Keypoint { point, desc })
        })
        .take(p.max_corners)
        .collect()
}

fn best_match(k: &Keypoint, set: &[Keypoint]) -> Option<(usize, f32)> {
    set.iter()
        .enumerate()
        .map(|(i, o)| (i, k.desc.iter().zip(&o.desc).map(|(a, b)| a * b).sum::<f32>()))
        .fold(None, |best: Option<(usize, f32)>, c| match best {
            Some(b) if b.1 >= c.1 => Some(b),
            _ => Some(c),
        })
}

/// Estimate the rigid motion mapping points of `b` into `a` from sparse
/// feature matches.
pub fn rough_align(a: &RgbdFrame, b: &RgbdFrame, params: &FeatureParams) -> Result<Alignment> {
    for f in [a, b] {
        if f.valid_depth_count() < 100 {
            return Err(Error::Contract(format!("frame {} has fewer than 100 valid depth pixels", f.index)));
        }
    }
    let ka = keypoints(a, params);
    let kb = keypoints(b, params);
    let mut pairs: Vec<(Point3<f64>, Point3<f64>)> = Vec::new();
    for (i, k) in kb.iter().enumerate() {
        let Some((j, score)) = best_match(k, &ka) else { continue };
        if score < params.min_score {
            continue;
        }
        if best_match(&ka[j], &kb).map(|m| m.0) == Some(i) {
            pairs.push((k.point, ka[j].point));
        }
    }
    let matches = pairs.len();
    if matches < 3 {
        return Err(Error::AlignmentFailed(format!("only {matches} feature matches")));
    }
    let gate2 = params.inlier_distance * params.inlier_distance;
    let count = |t: &Isometry3<f64>| pairs.iter().filter(|(s, d)| (t * s - d).norm_squared() <= gate2).count();
    let mut rng = Rng::new(params.seed);
    let mut best: Option<(usize, Isometry3<f64>)> = None;
    for _ in 0..params.ransac_iterations {
        let i = rng.index(matches);
        let j = rng.index(matches);
        let k = rng.index(matches);
        if i == j || j == k || i == k {
            continue;
        }
        let src = [pairs[i].0, pairs[j].0, pairs[k].0];
        let dst = [pairs[i].1, pairs[j].1, pairs[k].1];
        let Some(t) = rigid_fit(&src, &dst) else { continue };
        let n = count(&t);
        if best.as_ref().is_none_or(|b| n > b.0) {
            best = Some((n, t));
        }
        if n == matches {
            break;
        }
    }
    let (_, t) = best.ok_or_else(|| Error::AlignmentFailed("no non-degenerate sample".into()))?;
    let (src, dst): (Vec<_>, Vec<_>) = pairs.iter().filter(|(s, d)| (t * s - d).norm_squared() <= gate2).cloned().unzip();
    if src.len() < 3 {
        return Err(Error::AlignmentFailed(format!("only {} inliers", src.len())));
    }
    let pose = rigid_fit(&src, &dst).unwrap_or(t);
    Ok(Alignment { pose, inliers: count(&pose), matches })
}
