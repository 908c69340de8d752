//! Geometry, image and dataset file formats.
//!
//! Convention for every imported asset: Y is up, units are meters, triangles
//! wind counter-clockwise when seen from the side their normal points to.

mod clip;
mod flowfile;
mod glb;
mod manifest;
mod motion;
mod obj;
mod ply;
mod png;

pub use clip::{read_clip, read_clip_header, write_clip, ActionLabel, ClipContainer, ClipHeader, CLIP_MAGIC};
pub use flowfile::{read_flow, write_flow, FLOW_MAGIC};
pub use glb::{parse_glb, GlbScene, GlbWarning};
pub use manifest::{
    Manifest, ManifestEntry, ManifestError, ManifestStats, Method, Stream, StreamWeights, Subset,
    WeightTable,
};
pub use motion::{parse_motion_take, write_motion_take, MotionTake};
pub use obj::{parse_mtl_map_kd, parse_obj};
pub use ply::{parse_ply, write_ply};
pub use png::{export_png_frames, read_png_rgb, write_png_rgb};

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Indexed triangle mesh.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<[f32; 3]>,
    pub normals: Vec<[f32; 3]>,
    pub uvs: Option<Vec<[f32; 2]>>,
    /// Per-vertex colors (reconstructed scenes carry these instead of textures).
    pub colors: Option<Vec<[u8; 3]>>,
    pub triangles: Vec<[u32; 3]>,
    pub texture_id: Option<String>,
}

impl Mesh {
    /// Mesh with area-weighted vertex normals computed from the triangles.
    pub fn from_triangles(vertices: Vec<[f32; 3]>, triangles: Vec<[u32; 3]>) -> Mesh {
        let mut mesh = Mesh {
            vertices,
            triangles,
            ..Default::default()
        };
        mesh.compute_normals();
        mesh
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Recompute per-vertex normals as the area-weighted sum of incident face
    /// normals. Vertices with no incident area get +Y.
    pub fn compute_normals(&mut self) {
        let mut acc = vec![Vector3::<f64>::zeros(); self.vertices.len()];
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| to_v3(self.vertices[i as usize]));
            // Cross product length is twice the area, so this is area-weighted.
            let n = (b - a).cross(&(c - a));
            for &i in t {
                acc[i as usize] += n;
            }
        }
        self.normals = acc
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 1e-20 {
                    let n = n / len;
                    [n.x as f32, n.y as f32, n.z as f32]
                } else {
                    [0.0, 1.0, 0.0]
                }
            })
            .collect();
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.normals.len() != n {
            return Err(Error::Structural(format!(
                "{} normals for {} vertices",
                self.normals.len(),
                n
            )));
        }
        if let Some(uvs) = &self.uvs {
            if uvs.len() != n {
                return Err(Error::Structural("uv count differs from vertex count".into()));
            }
        }
        if let Some(colors) = &self.colors {
            if colors.len() != n {
                return Err(Error::Structural("color count differs from vertex count".into()));
            }
        }
        for (k, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&i| i as usize >= n) {
                return Err(Error::Structural(format!("triangle {k} indexes past {n} vertices")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::Structural(format!("triangle {k} repeats an index")));
            }
        }
        for (k, nrm) in self.normals.iter().enumerate() {
            let len = (nrm[0] as f64).hypot(nrm[1] as f64).hypot(nrm[2] as f64);
            if (len - 1.0).abs() > 1e-4 {
                return Err(Error::Structural(format!("normal {k} has length {len}")));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounds, `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let mut it = self.vertices.iter().map(|v| to_v3(*v));
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| (lo.inf(&p), hi.sup(&p))))
    }

    /// Copy with positions mapped by an affine transform and normals by its
    /// inverse transpose.
    pub fn transformed(&self, m: &Matrix4<f64>) -> Mesh {
        let lin: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let nmat = lin.try_inverse().map(|i| i.transpose()).unwrap_or(lin);
        let mut out = self.clone();
        for v in &mut out.vertices {
            let p = m.transform_point(&Point3::from(to_v3(*v)));
            *v = [p.x as f32, p.y as f32, p.z as f32];
        }
        for n in &mut out.normals {
            let t = (nmat * to_v3(*n)).normalize();
            *n = [t.x as f32, t.y as f32, t.z as f32];
        }
        out
    }

    /// Axis-aligned unit cube `[0,1]³`: 8 shared vertices, 12 outward triangles.
    pub fn unit_cube() -> Mesh {
        let vertices = (0..8u32)
            .map(|i| [(i & 1) as f32, ((i >> 1) & 1) as f32, ((i >> 2) & 1) as f32])
            .collect();
        let triangles = vec![
            [0, 2, 3], [0, 3, 1], // z = 0
            [4, 5, 7], [4, 7, 6], // z = 1
            [0, 1, 5], [0, 5, 4], // y = 0
            [2, 6, 7], [2, 7, 3], // y = 1
            [0, 4, 6], [0, 6, 2], // x = 0
            [1, 3, 7], [1, 7, 5], // x = 1
        ];
        Mesh::from_triangles(vertices, triangles)
    }

    /// Concatenate meshes; uvs and colors survive only if every part has them.
    pub fn merge(parts: &[Mesh]) -> Mesh {
        let mut out = Mesh::default();
        let all_uv = parts.iter().all(|p| p.uvs.is_some());
        let all_col = parts.iter().all(|p| p.colors.is_some());
        let mut uvs = Vec::new();
        let mut cols = Vec::new();
        for p in parts {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&p.vertices);
            out.normals.extend_from_slice(&p.normals);
            out.triangles
                .extend(p.triangles.iter().map(|t| t.map(|i| i + base)));
            if let (true, Some(u)) = (all_uv, &p.uvs) {
                uvs.extend_from_slice(u);
            }
            if let (true, Some(c)) = (all_col, &p.colors) {
                cols.extend_from_slice(c);
            }
        }
        if all_uv && !parts.is_empty() {
            out.uvs = Some(uvs);
        }
        if all_col && !parts.is_empty() {
            out.colors = Some(cols);
        }
        out
    }
}

pub(crate) fn to_v3(v: [f32; 3]) -> Vector3<f64> {
    Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)
}

/// Row-major RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Texture {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Texture {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Texture> {
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(Error::Structural(format!(
                "{}x{} texture needs {} bytes, got {}",
                width,
                height,
                width as usize * height as usize * 3,
                pixels.len()
            )));
        }
        Ok(Texture { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Texture {
        let pixels = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Texture { width, height, pixels }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Bilinear lookup with clamp-to-edge; `v = 0` is the top row. Returns
    /// linear values in `[0,1]`.
    pub fn sample(&self, u: f64, v: f64) -> [f32; 3] {
        let x = (u * self.width as f64 - 0.5).clamp(0.0, (self.width - 1) as f64);
        let y = (v * self.height as f64 - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as u32, y.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0f32; 3];
        for k in 0..3 {
            let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
            let bot = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
            out[k] = ((top * (1.0 - fy) + bot * fy) / 255.0) as f32;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_is_valid_and_outward() {
        let cube = Mesh::unit_cube();
        cube.validate().unwrap();
        assert_eq!(cube.vertices.len(), 8);
        assert_eq!(cube.triangles.len(), 12);
        let center = Vector3::new(0.5, 0.5, 0.5);
        for t in &cube.triangles {
            let [a, b, c] = t.map(|i| to_v3(cube.vertices[i as usize]));
            let n = (b - a).cross(&(c - a));
            assert!(n.dot(&(a - center)) > 0.0, "inward triangle {t:?}");
        }
    }

    #[test]
    fn texture_size_checked() {
        assert!(Texture::new(2, 2, vec![0; 12]).is_ok());
        assert!(matches!(Texture::new(2, 2, vec![0; 11]), Err(Error::Structural(_))));
    }

    #[test]
    fn bilinear_sampling_clamps() {
        let t = Texture::new(2, 1, vec![0, 0, 0, 255, 255, 255]).unwrap();
        assert_eq!(t.sample(0.0, 0.5), [0.0; 3]);
        assert_eq!(t.sample(1.0, 0.5), [1.0; 3]);
        let mid = t.sample(0.5, 0.5);
        assert!((mid[0] - 0.5).abs() < 1e-6);
    }
}
