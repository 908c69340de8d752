//! Point-to-plane ICP: projective association between depth frames, and
//! nearest-neighbor association between point sets.

use nalgebra::{Isometry3, Matrix6, Point3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::grid::PointGrid;
use super::{backproject, project_cv, RgbdFrame};
use crate::geom::se3_exp;
use crate::raster::Intrinsics;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryParams {
    /// Pixel strides of the pyramid levels, coarse to fine.
    pub strides: Vec<usize>,
    pub iterations: Vec<usize>,
    /// Correspondence distance gate per level (meters).
    pub max_distance: Vec<f64>,
    /// Fitness counts correspondences closer than twice this.
    pub voxel_size: f64,
    /// Below this fitness tracking is considered lost.
    pub fitness_floor: f64,
    /// Depth beyond this is ignored (meters).
    pub max_depth: f64,
}

impl Default for OdometryParams {
    fn default() -> Self {
        OdometryParams {
            strides: vec![4, 2, 1],
            iterations: vec![20, 12, 8],
            max_distance: vec![0.15, 0.07, 0.04],
            voxel_size: 0.02,
            fitness_floor: 0.3,
            max_depth: 8.0,
        }
    }
}

/// Result of an alignment: `pose` maps source coordinates into target
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Odometry {
    pub pose: Isometry3<f64>,
    /// Fraction of source points with a correspondence within the fitness
    /// gate.
    pub fitness: f64,
    /// RMS point-to-plane distance over those correspondences.
    pub rmse: f64,
    /// Σ JᵀJ over the inlier correspondences.
    pub information: Matrix6<f64>,
    pub inliers: usize,
}

/// Vertex and normal maps of one frame at a pyramid stride.
pub(crate) struct Level {
    pub w: usize,
    pub h: usize,
    pub k: Intrinsics,
    pub points: Vec<Option<Point3<f64>>>,
    pub normals: Vec<Option<Vector3<f64>>>,
}

impl Level {
    pub(crate) fn new(frame: &RgbdFrame, stride: usize, max_depth: f64) -> Level {
        let (fw, fh) = (frame.width(), frame.height());
        let (w, h) = (fw.div_ceil(stride), fh.div_ceil(stride));
        let s = stride as f64;
        let fk = frame.intrinsics;
        let k = Intrinsics {
            width: w as u32,
            height: h as u32,
            fx: fk.fx / s,
            fy: fk.fy / s,
            cx: (fk.cx + 0.5) / s - 0.5,
            cy: (fk.cy + 0.5) / s - 0.5,
        };
        // Sample the pixel whose center coincides with the coarse center.
        let off = (stride - 1) / 2;
        let mut points = vec![None; w * h];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (x * stride + off, y * stride + off);
                if sx < fw && sy < fh {
                    if let Some(z) = frame.depth_m(sx, sy).filter(|z| *z <= max_depth) {
                        let fxp = (sx as f64 + 0.5) / s - 0.5;
                        let fyp = (sy as f64 + 0.5) / s - 0.5;
                        points[y * w + x] = Some(backproject(&k, fxp, fyp, z));
                    }
                }
            }
        }
        let normals = normal_map(&points, w, h, 0.05 * s);
        Level { w, h, k, points, normals }
    }
}

/// Normals from central differences of the vertex map, oriented toward the
/// camera; missing where a neighbor is missing or the depth jumps.
fn normal_map(points: &[Option<Point3<f64>>], w: usize, h: usize, jump: f64) -> Vec<Option<Vector3<f64>>> {
    let mut out = vec![None; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let (Some(c), Some(l), Some(r), Some(u), Some(d)) = (points[i], points[i - 1], points[i + 1], points[i - w], points[i + w]) else {
                continue;
            };
            let gate = jump * c.z;
            if [l, r, u, d].iter().any(|p| (p.z - c.z).abs() > gate) {
                continue;
            }
            let n = (r - l).cross(&(d - u));
            if let Some(mut n) = n.try_normalize(1e-12) {
                if n.dot(&c.coords) > 0.0 {
                    n = -n;
                }
                out[i] = Some(n);
            }
        }
    }
    out
}

/// Accumulates the point-to-plane normal equations.
#[derive(Default)]
struct Normal {
    h: Matrix6<f64>,
    g: Vector6<f64>,
    sq: f64,
    n: usize,
}

impl Normal {
    #[inline]
    fn add(&mut self, q: &Point3<f64>, p: &Point3<f64>, n: &Vector3<f64>) {
        let r = n.dot(&(q - p));
        let c = q.coords.cross(n);
        let j = Vector6::new(n.x, n.y, n.z, c.x, c.y, c.z);
        self.h += j * j.transpose();
        self.g += j * r;
        self.sq += r * r;
        self.n += 1;
    }

    /// Left-multiplied update `exp(δ)`, or `None` if the system is
    /// degenerate.
    fn step(&self) -> Option<Vector6<f64>> {
        if self.n < 6 {
            return None;
        }
        let damped = self.h + Matrix6::identity() * (1e-9 * self.h.trace().max(1e-12));
        damped.cholesky().map(|c| -c.solve(&self.g))
    }
}

/// Refine `init` (mapping `b` into `a`) by multi-scale projective
/// point-to-plane ICP.
pub fn rgbd_odometry(a: &RgbdFrame, b: &RgbdFrame, init: &Isometry3<f64>, params: &OdometryParams) -> Result<Odometry> {
    let levels: Vec<(Level, Level)> = params
        .strides
        .iter()
        .map(|&s| (Level::new(a, s, params.max_depth), Level::new(b, s, params.max_depth)))
        .collect();
    let refs: Vec<(&Level, &Level)> = levels.iter().map(|(a, b)| (a, b)).collect();
    odometry_levels(&refs, init, params)
}

/// ICP over prebuilt pyramids, coarse to fine.
pub(crate) fn odometry_levels(levels: &[(&Level, &Level)], init: &Isometry3<f64>, params: &OdometryParams) -> Result<Odometry> {
    let mut pose = *init;
    for (li, (la, lb)) in levels.iter().enumerate() {
        let iters = params.iterations.get(li).copied().unwrap_or(10);
        let gate = params.max_distance.get(li).copied().unwrap_or(0.05);
        for _ in 0..iters {
            let mut ne = Normal::default();
            associate(la, lb, &pose, gate, |q, p, n| ne.add(q, p, n));
            let Some(delta) = ne.step() else { break };
            pose = se3_exp(&delta) * pose;
            if delta.norm() < 1e-7 {
                break;
            }
        }
    }
    let (la, lb) = levels.last().ok_or_else(|| Error::Contract("no pyramid levels".into()))?;
    let gate = 2.0 * params.voxel_size;
    let mut ne = Normal::default();
    associate(la, lb, &pose, gate, |q, p, n| ne.add(q, p, n));
    let total = lb.points.iter().filter(|p| p.is_some()).count();
    let fitness = if total == 0 { 0.0 } else { ne.n as f64 / total as f64 };
    let rmse = if ne.n == 0 { 0.0 } else { (ne.sq / ne.n as f64).sqrt() };
    let odo = Odometry { pose, fitness, rmse, information: ne.h, inliers: ne.n };
    if fitness < params.fitness_floor {
        return Err(Error::TrackingLost(format!("fitness {fitness:.3} below {:.3}", params.fitness_floor)));
    }
    Ok(odo)
}

/// Visit `(T·p_b, p_a, n_a)` for every source point whose projection lands
/// on a target point within `gate`.
fn associate(la: &Level, lb: &Level, pose: &Isometry3<f64>, gate: f64, mut f: impl FnMut(&Point3<f64>, &Point3<f64>, &Vector3<f64>)) {
    let g2 = gate * gate;
    for (i, pb) in lb.points.iter().enumerate() {
        let Some(pb) = pb else { continue };
        if lb.normals[i].is_none() {
            continue;
        }
        let q = pose * pb;
        let Some((u, v)) = project_cv(&la.k, &q) else { continue };
        let (x, y) = (u.round(), v.round());
        if x < 0.0 || y < 0.0 || x >= la.w as f64 || y >= la.h as f64 {
            continue;
        }
        let j = y as usize * la.w + x as usize;
        let (Some(pa), Some(na)) = (la.points[j], la.normals[j]) else { continue };
        if (q - pa).norm_squared() > g2 {
            continue;
        }
        let nb = pose.rotation * lb.normals[i].expect("checked");
        if nb.dot(&na) < 0.5 {
            continue;
        }
        f(&q, &pa, &na);
    }
}

/// Points with normals, for registration of meshes or clouds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSet {
    pub points: Vec<Point3<f64>>,
    pub normals: Vec<Vector3<f64>>,
}

impl PointSet {
    pub fn from_mesh(mesh: &crate::formats::Mesh) -> PointSet {
        PointSet {
            points: mesh.vertices.iter().map(|v| Point3::new(v[0] as f64, v[1] as f64, v[2] as f64)).collect(),
            normals: mesh.normals.iter().map(|n| Vector3::new(n[0] as f64, n[1] as f64, n[2] as f64)).collect(),
        }
    }

    /// Keep the first point in every `voxel`-sized cell.
    pub fn downsample(&self, voxel: f64) -> PointSet {
        let mut seen = std::collections::HashSet::new();
        let mut out = PointSet::default();
        for (p, n) in self.points.iter().zip(&self.normals) {
            let k = [(p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64];
            if seen.insert(k) {
                out.points.push(*p);
                out.normals.push(*n);
            }
        }
        out
    }

    pub fn transformed(&self, t: &Isometry3<f64>) -> PointSet {
        PointSet { points: self.points.iter().map(|p| t * p).collect(), normals: self.normals.iter().map(|n| t.rotation * n).collect() }
    }

    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.points.first()?.coords;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| (lo.inf(&p.coords), hi.sup(&p.coords))))
    }
}

/// Point-to-plane ICP from `source` onto `target` with nearest-neighbor
/// association inside `max_distance`. Fitness is the inlier fraction of
/// source points.
pub fn icp_point_sets(source: &PointSet, target: &PointSet, init: &Isometry3<f64>, max_distance: f64, iterations: usize) -> Odometry {
    let grid = PointGrid::new(&target.points, max_distance);
    let mut pose = *init;
    let pass = |pose: &Isometry3<f64>| {
        let mut ne = Normal::default();
        for (p, n) in source.points.iter().zip(&source.normals) {
            let q = pose * p;
            if let Some((j, _)) = grid.nearest(&target.points, &q, max_distance) {
                let nt = target.normals[j];
                if (pose.rotation * n).dot(&nt) < 0.3 {
                    continue;
                }
                ne.add(&q, &target.points[j], &nt);
            }
        }
        ne
    };
    for _ in 0..iterations {
        let Some(delta) = pass(&pose).step() else { break };
        pose = se3_exp(&delta) * pose;
        if delta.norm() < 1e-7 {
            break;
        }
    }
    let ne = pass(&pose);
    let fitness = if source.points.is_empty() { 0.0 } else { ne.n as f64 / source.points.len() as f64 };
    let rmse = if ne.n == 0 { 0.0 } else { (ne.sq / ne.n as f64).sqrt() };
    Odometry { pose, fitness, rmse, information: ne.h, inliers: ne.n }
}
