//! RGB-D scene reconstruction.
//!
//! Frames are aligned pairwise (feature RANSAC for a rough guess, then
//! point-to-plane ICP), grouped into fragments with locally optimized pose
//! graphs, registered against each other, globally optimized, and fused into
//! a TSDF from which a mesh is extracted.
//!
//! Camera coordinates follow the vision convention: x right, y down, z
//! forward. Poses are `world_from_camera`; relative poses between frames `a`
//! and `b` are `a_from_b`.

mod features;
mod fragments;
mod grid;
mod mesh;
mod odometry;
mod posegraph;
mod tsdf;

use std::path::Path;

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

pub use features::{rough_align, Alignment, FeatureParams};
pub use fragments::{build_fragments, reconstruct, register_fragments, Fragment, ReconConfig, ReconOutput, ReconReport};
pub use mesh::extract_mesh;
pub use odometry::{icp_point_sets, rgbd_odometry, Odometry, OdometryParams, PointSet};
pub use posegraph::{optimize_posegraph, EdgeKind, OptimizeParams, OptimizeReport, PoseEdge, PoseGraph};
pub use tsdf::{integrate_tsdf, TsdfConfig, TsdfVolume, Voxel};

use crate::raster::Intrinsics;
use crate::{Error, Result};

/// Millimeter depth units (the default raw format).
pub const DEPTH_SCALE_MM: f64 = 1000.0;
/// TUM benchmark depth units.
pub const DEPTH_SCALE_TUM: f64 = 5000.0;

/// One color + depth frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    /// Row-major intensity in `[0,1]`.
    pub intensity: Vec<f32>,
    /// Optional RGB8 used to color the fused mesh.
    pub color: Option<Vec<u8>>,
    /// Raw depth; 0 marks a missing measurement.
    pub depth: Vec<u16>,
    /// Depth units per meter.
    pub depth_scale: f64,
    pub intrinsics: Intrinsics,
    pub index: usize,
}

impl RgbdFrame {
    pub fn new(intrinsics: Intrinsics, color: &[u8], depth: Vec<u16>, depth_scale: f64, index: usize) -> Result<RgbdFrame> {
        let n = intrinsics.width as usize * intrinsics.height as usize;
        if color.len() != n * 3 || depth.len() != n {
            return Err(Error::Structural(format!(
                "frame {index}: expected {n} pixels, got {} color bytes and {} depth values",
                color.len(),
                depth.len()
            )));
        }
        let intensity = crate::flow::GrayImage::from_rgb8(intrinsics.width as usize, intrinsics.height as usize, color).data;
        let frame = RgbdFrame { intensity, color: Some(color.to_vec()), depth, depth_scale, intrinsics, index };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        let n = k.width as usize * k.height as usize;
        if !(k.fx > 0.0 && k.fy > 0.0) || k.width == 0 || k.height == 0 {
            return Err(Error::Validation("intrinsics must be positive".into()));
        }
        if self.intensity.len() != n || self.depth.len() != n || self.color.as_ref().is_some_and(|c| c.len() != 3 * n) {
            return Err(Error::Structural(format!("frame {}: plane sizes differ from {}x{}", self.index, k.width, k.height)));
        }
        if self.depth_scale.is_nan() || self.depth_scale <= 0.0 {
            return Err(Error::Validation("depth scale must be positive".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width as usize
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height as usize
    }

    /// Depth in meters at a pixel, `None` where missing.
    #[inline]
    pub fn depth_m(&self, x: usize, y: usize) -> Option<f64> {
        let d = self.depth[y * self.width() + x];
        (d > 0).then(|| d as f64 / self.depth_scale)
    }

    /// Camera-space point at a pixel.
    #[inline]
    pub fn point(&self, x: usize, y: usize) -> Option<Point3<f64>> {
        self.depth_m(x, y).map(|z| backproject(&self.intrinsics, x as f64, y as f64, z))
    }

    pub fn valid_depth_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0).count()
    }

    /// All valid points in camera space.
    pub fn points(&self) -> Vec<Point3<f64>> {
        let (w, h) = (self.width(), self.height());
        (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter_map(|(x, y)| self.point(x, y)).collect()
    }
}

#[inline]
pub fn backproject(k: &Intrinsics, x: f64, y: f64, z: f64) -> Point3<f64> {
    Point3::new((x - k.cx) * z / k.fx, (y - k.cy) * z / k.fy, z)
}

/// Pixel coordinates of a camera-space point (`None` behind the camera).
#[inline]
pub fn project_cv(k: &Intrinsics, p: &Point3<f64>) -> Option<(f64, f64)> {
    (p.z > 1e-9).then(|| (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Converts a renderer camera pose (looking down −Z, y up) to the vision
/// convention used here.
pub fn gl_to_cv_pose(world_from_gl: &Isometry3<f64>) -> Isometry3<f64> {
    let flip = nalgebra::UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
    world_from_gl * Isometry3::from_parts(Default::default(), flip)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IntrinsicsFile {
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(default)]
    depth_scale: Option<f64>,
}

/// Write frames as `intrinsics.json`, `color/NNNNNN.png` and
/// `depth/NNNNNN.raw` (u16 little-endian).
pub fn write_rgbd_dir(dir: &Path, frames: &[RgbdFrame]) -> Result<()> {
    let first = frames.first().ok_or_else(|| Error::Contract("no frames to write".into()))?;
    for sub in ["color", "depth"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(Error::io_at(dir.join(sub)))?;
    }
    let k = first.intrinsics;
    let meta = IntrinsicsFile {
        width: k.width,
        height: k.height,
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        depth_scale: Some(first.depth_scale),
    };
    let path = dir.join("intrinsics.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(Error::io_at(&path))?;
    for (i, f) in frames.iter().enumerate() {
        let rgb = match &f.color {
            Some(c) => c.clone(),
            None => f.intensity.iter().flat_map(|v| [(v * 255.0).round() as u8; 3]).collect(),
        };
        crate::formats::write_png_rgb(&dir.join("color").join(format!("{i:06}.png")), k.width, k.height, &rgb)?;
        let raw: Vec<u8> = f.depth.iter().flat_map(|d| d.to_le_bytes()).collect();
        let p = dir.join("depth").join(format!("{i:06}.raw"));
        std::fs::write(&p, raw).map_err(Error::io_at(&p))?;
    }
    Ok(())
}

/// Load a frame directory written by [`write_rgbd_dir`]. Depth files may be
/// `.raw` (u16 LE) or 16-bit `.png`. With `tum_depth`, depth units are
/// 1/5000 m regardless of the intrinsics file.
pub fn load_rgbd_dir(dir: &Path, tum_depth: bool) -> Result<Vec<RgbdFrame>> {
    let path = dir.join("intrinsics.json");
    let bytes = std::fs::read(&path).map_err(Error::io_at(&path))?;
    let meta: IntrinsicsFile = serde_json::from_slice(&bytes)?;
    let k = Intrinsics { width: meta.width, height: meta.height, fx: meta.fx, fy: meta.fy, cx: meta.cx, cy: meta.cy };
    let scale = if tum_depth { DEPTH_SCALE_TUM } else { meta.depth_scale.unwrap_or(DEPTH_SCALE_MM) };
    let list = |sub: &str| -> Result<Vec<std::path::PathBuf>> {
        let d = dir.join(sub);
        let mut v: Vec<_> = std::fs::read_dir(&d)
            .map_err(Error::io_at(&d))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        v.sort();
        Ok(v)
    };
    let colors = list("color")?;
    let depths = list("depth")?;
    if colors.is_empty() {
        return Err(Error::Validation(format!("{} contains no frames", dir.display())));
    }
    if colors.len() != depths.len() {
        return Err(Error::Structural(format!("{} color images but {} depth maps", colors.len(), depths.len())));
    }
    let n = k.width as usize * k.height as usize;
    colors
        .iter()
        .zip(&depths)
        .enumerate()
        .map(|(i, (c, d))| {
            let tex = crate::formats::read_png_rgb(c)?;
            if tex.width != k.width || tex.height != k.height {
                return Err(Error::Structural(format!("{} is {}x{}, intrinsics say {}x{}", c.display(), tex.width, tex.height, k.width, k.height)));
            }
            let depth = if d.extension().is_some_and(|e| e == "png") {
                image::open(d)?.to_luma16().into_raw()
            } else {
                let raw = std::fs::read(d).map_err(Error::io_at(d))?;
                if raw.len() != n * 2 {
                    return Err(Error::Structural(format!("{} holds {} bytes, expected {}", d.display(), raw.len(), n * 2)));
                }
                raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect()
            };
            RgbdFrame::new(k, &tex.pixels, depth, scale, i)
        })
        .collect()
}

/// Root-mean-square position error after the best rigid alignment of the
/// estimated trajectory onto the reference.
pub fn absolute_trajectory_error(estimated: &[Isometry3<f64>], reference: &[Isometry3<f64>]) -> Result<f64> {
    if estimated.len() != reference.len() || estimated.is_empty() {
        return Err(Error::Contract("trajectories must be non-empty and of equal length".into()));
    }
    let src: Vec<Point3<f64>> = estimated.iter().map(|p| Point3::from(p.translation.vector)).collect();
    let dst: Vec<Point3<f64>> = reference.iter().map(|p| Point3::from(p.translation.vector)).collect();
    // Fewer than three (or collinear) positions: align by the first pose.
    let align = geom_align(&src, &dst).unwrap_or_else(|| reference[0] * estimated[0].inverse());
    let sq: f64 = src.iter().zip(&dst).map(|(s, d)| (align * s - d).norm_squared()).sum();
    Ok((sq / src.len() as f64).sqrt())
}

fn geom_align(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Option<Isometry3<f64>> {
    crate::geom::rigid_fit(src, dst)
}

/// Trajectory file: one row of 12 numbers per frame, the top three rows of
/// `world_from_camera` in row-major order.
pub fn format_trajectory(poses: &[Isometry3<f64>]) -> String {
    let mut s = String::new();
    for p in poses {
        let m = p.to_homogeneous();
        let row: Vec<String> = (0..3).flat_map(|r| (0..4).map(move |c| (r, c))).map(|(r, c)| format!("{:.9}", m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_trajectory(text: &str) -> Result<Vec<Isometry3<f64>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() }))
                .collect::<Result<_>>()?;
            if v.len() != 12 {
                return Err(Error::Parse { line: i + 1, msg: format!("expected 12 numbers, got {}", v.len()) });
            }
            let r = nalgebra::Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
            let rot = nalgebra::UnitQuaternion::from_matrix(&r);
            Ok(Isometry3::from_parts(Vector3::new(v[3], v[7], v[11]).into(), rot))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::se3_exp;

    fn intr() -> Intrinsics {
        Intrinsics { width: 4, height: 3, fx: 3.0, fy: 3.0, cx: 1.5, cy: 1.0 }
    }

    #[test]
    fn backprojection_round_trip() {
        let k = intr();
        let p = backproject(&k, 2.0, 0.5, 1.7);
        let (x, y) = project_cv(&k, &p).unwrap();
        assert!((x - 2.0).abs() < 1e-12 && (y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rgbd_dir_round_trip_and_tum_scale() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<RgbdFrame> = (0..3)
            .map(|i| {
                let color: Vec<u8> = (0..36).map(|v| (v * 7 + i) as u8).collect();
                RgbdFrame::new(intr(), &color, (0..12).map(|v| v * 100 + i as u16).collect(), DEPTH_SCALE_MM, i).unwrap()
            })
            .collect();
        write_rgbd_dir(dir.path(), &frames).unwrap();
        assert_eq!(load_rgbd_dir(dir.path(), false).unwrap(), frames);
        let tum = load_rgbd_dir(dir.path(), true).unwrap();
        assert_eq!(tum[0].depth_m(1, 0), Some(100.0 / 5000.0));
    }

    #[test]
    fn empty_dir_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("color")).unwrap();
        std::fs::create_dir_all(dir.path().join("depth")).unwrap();
        std::fs::write(dir.path().join("intrinsics.json"), br#"{"width":4,"height":3,"fx":3,"fy":3,"cx":1.5,"cy":1}"#).unwrap();
        assert!(matches!(load_rgbd_dir(dir.path(), false), Err(Error::Validation(_))));
    }

    #[test]
    fn ate_ignores_gauge() {
        let gt: Vec<Isometry3<f64>> = (0..20)
            .map(|i| se3_exp(&nalgebra::Vector6::new(i as f64 * 0.1, (i as f64 * 0.3).sin(), 0.02 * i as f64, 0.0, 0.05 * i as f64, 0.0)))
            .collect();
        let g = se3_exp(&nalgebra::Vector6::new(1.0, -2.0, 0.5, 0.3, -0.2, 0.9));
        let moved: Vec<_> = gt.iter().map(|p| g * p).collect();
        assert!(absolute_trajectory_error(&moved, &gt).unwrap() < 1e-9);
    }

    #[test]
    fn trajectory_text_round_trip() {
        let poses = vec![se3_exp(&nalgebra::Vector6::new(0.1, 0.2, 0.3, 0.4, -0.5, 0.6)), Isometry3::identity()];
        let back = parse_trajectory(&format_trajectory(&poses)).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            assert!((a.to_homogeneous() - b.to_homogeneous()).abs().max() < 1e-8);
        }
        assert!(parse_trajectory("1 2 3").is_err());
    }
}
