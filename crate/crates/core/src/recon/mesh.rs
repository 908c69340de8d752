//! Isosurface extraction from a TSDF volume.
//!
//! Each cell between eight observed voxels is split into six tetrahedra
//! around its main diagonal. Neighboring cells split shared faces along the
//! same diagonal, so the surface has no cracks and needs no case table.
//! Vertices on a cell edge are shared between all cells touching that edge.

use std::collections::HashMap;

use nalgebra::Vector3;
#[cfg(test)]
use nalgebra::Point3;

use super::tsdf::{TsdfVolume, Voxel};
use crate::formats::Mesh;

const TETS: [[usize; 4]; 6] = [[0, 1, 3, 7], [0, 3, 2, 7], [0, 2, 6, 7], [0, 6, 4, 7], [0, 4, 5, 7], [0, 5, 1, 7]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum VertexKey {
    Corner([i32; 3]),
    Edge([i32; 3], [i32; 3]),
}

struct Builder {
    index: HashMap<VertexKey, u32>,
    vertices: Vec<[f32; 3]>,
    colors: Vec<[u8; 3]>,
    triangles: Vec<[u32; 3]>,
}

impl Builder {
    fn vertex(&mut self, vol: &TsdfVolume, a: ([i32; 3], &Voxel), b: ([i32; 3], &Voxel)) -> u32 {
        let t = a.1.sdf as f64 / (a.1.sdf as f64 - b.1.sdf as f64);
        let key = if t <= 0.0 {
            VertexKey::Corner(a.0)
        } else if t >= 1.0 {
            VertexKey::Corner(b.0)
        } else if a.0 < b.0 {
            VertexKey::Edge(a.0, b.0)
        } else {
            VertexKey::Edge(b.0, a.0)
        };
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let t = t.clamp(0.0, 1.0);
        let p = vol.position(a.0).coords * (1.0 - t) + vol.position(b.0).coords * t;
        let c: [u8; 3] = std::array::from_fn(|k| (a.1.color[k] as f64 * (1.0 - t) + b.1.color[k] as f64 * t).round().clamp(0.0, 255.0) as u8);
        let i = self.vertices.len() as u32;
        self.vertices.push([p.x as f32, p.y as f32, p.z as f32]);
        self.colors.push(c);
        self.index.insert(key, i);
        i
    }

    /// Add a triangle facing from `inside` toward `outside`.
    fn triangle(&mut self, tri: [u32; 3], inside: &Vector3<f64>, outside: &Vector3<f64>) {
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return;
        }
        let p = tri.map(|i| {
            let v = self.vertices[i as usize];
            Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)
        });
        let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
        if n.dot(&(outside - inside)) < 0.0 {
            self.triangles.push([tri[0], tri[2], tri[1]]);
        } else {
            self.triangles.push(tri);
        }
    }
}

/// Extract the zero level set of the observed part of the volume. An
/// empty volume yields an empty mesh.
pub fn extract_mesh(volume: &TsdfVolume) -> Mesh {
    let mut b = Builder { index: HashMap::new(), vertices: vec![], colors: vec![], triangles: vec![] };
    let cells: Vec<[i32; 3]> = volume.observed().map(|(g, _)| g).collect();
    for g in cells {
        let mut corners: [([i32; 3], Voxel); 8] = [([0; 3], Voxel::default()); 8];
        let mut complete = true;
        for (k, c) in corners.iter_mut().enumerate() {
            let gk = [g[0] + (k & 1) as i32, g[1] + ((k >> 1) & 1) as i32, g[2] + ((k >> 2) & 1) as i32];
            match volume.voxel(gk) {
                Some(v) if v.weight > 0.0 => *c = (gk, *v),
                _ => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            continue;
        }
        let neg = corners.iter().filter(|c| c.1.sdf < 0.0).count();
        if neg == 0 || neg == 8 {
            continue;
        }
        for tet in TETS {
            let (ins, outs): (Vec<usize>, Vec<usize>) = tet.iter().partition(|&&k| corners[k].1.sdf < 0.0);
            if ins.is_empty() || outs.is_empty() {
                continue;
            }
            let centroid = |ks: &[usize]| ks.iter().map(|&k| volume.position(corners[k].0).coords).sum::<Vector3<f64>>() / ks.len() as f64;
            let (ci, co) = (centroid(&ins), centroid(&outs));
            let v = |b: &mut Builder, i: usize, o: usize| b.vertex(volume, (corners[i].0, &corners[i].1), (corners[o].0, &corners[o].1));
            match (ins.len(), outs.len()) {
                (1, 3) => {
                    let t = [v(&mut b, ins[0], outs[0]), v(&mut b, ins[0], outs[1]), v(&mut b, ins[0], outs[2])];
                    b.triangle(t, &ci, &co);
                }
                (3, 1) => {
                    let t = [v(&mut b, ins[0], outs[0]), v(&mut b, ins[1], outs[0]), v(&mut b, ins[2], outs[0])];
                    b.triangle(t, &ci, &co);
                }
                _ => {
                    let (a, bb, c, d) = (ins[0], ins[1], outs[0], outs[1]);
                    let ac = v(&mut b, a, c);
                    let ad = v(&mut b, a, d);
                    let bd = v(&mut b, bb, d);
                    let bc = v(&mut b, bb, c);
                    b.triangle([ac, ad, bd], &ci, &co);
                    b.triangle([ac, bd, bc], &ci, &co);
                }
            }
        }
    }
    let mut mesh = Mesh::from_triangles(b.vertices, b.triangles);
    mesh.colors = Some(b.colors);
    mesh
}

#[cfg(test)]
fn euler_characteristic(mesh: &Mesh) -> i64 {
    let mut edges = std::collections::HashSet::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    mesh.vertices.len() as i64 - edges.len() as i64 + mesh.triangles.len() as i64
}

#[cfg(test)]
fn to_point(v: &[f32; 3]) -> Point3<f64> {
    Point3::new(v[0] as f64, v[1] as f64, v[2] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::TsdfConfig;

    #[test]
    fn sphere_is_closed_and_round() {
        let cfg = TsdfConfig::default();
        let vol = TsdfVolume::from_sdf(&cfg, Vector3::repeat(-0.7), Vector3::repeat(0.7), |p| p.coords.norm() - 0.5);
        let mesh = extract_mesh(&vol);
        mesh.validate().unwrap();
        assert!(mesh.vertices.len() > 1000);
        for v in &mesh.vertices {
            let r = to_point(v).coords.norm();
            assert!((r - 0.5).abs() <= cfg.voxel_size, "{r}");
        }
        assert_eq!(euler_characteristic(&mesh), 2);
        // Normals point outward.
        for (v, n) in mesh.vertices.iter().zip(&mesh.normals) {
            let p = to_point(v).coords;
            assert!(p.dot(&Vector3::new(n[0] as f64, n[1] as f64, n[2] as f64)) > 0.0);
        }
    }

    #[test]
    fn plane_normals_parallel() {
        let cfg = TsdfConfig::default();
        let n = Vector3::new(0.2, 1.0, -0.3).normalize();
        let vol = TsdfVolume::from_sdf(&cfg, Vector3::repeat(-0.5), Vector3::repeat(0.5), |p| p.coords.dot(&n) - 0.05);
        let mesh = extract_mesh(&vol);
        assert!(!mesh.triangles.is_empty());
        for t in &mesh.triangles {
            let p = t.map(|i| to_point(&mesh.vertices[i as usize]).coords);
            let Some(tn) = (p[1] - p[0]).cross(&(p[2] - p[0])).try_normalize(1e-12) else { continue };
            assert!(tn.dot(&n) > 2f64.to_radians().cos(), "{}", tn.dot(&n));
        }
    }

    #[test]
    fn empty_volume_empty_mesh() {
        let vol = TsdfVolume::new(&TsdfConfig::default());
        assert!(extract_mesh(&vol).vertices.is_empty());
    }
}
