//! Procedural stand-ins for licensed assets: a furnished living room, six
//! placeholder wall backgrounds, and a rendered RGB-D orbit through the room
//! with ground-truth poses.
//!
//! The room spans x, z ∈ [-4, 4] and y ∈ [0, 2.8] (meters, Y up). Furniture
//! sits in the back half (z < -1) so a camera orbiting the body anchor at
//! the framing distance never has furniture between it and the body.

use std::sync::Arc;

use nalgebra::{Isometry3, Point3, Vector3};

use crate::augment::{Environment, BACKGROUND_COUNT};
use crate::exec::ExecMode;
use crate::formats::{ActionLabel, Mesh, Texture};
use crate::raster::{render_clip, render_depth_sequence, RenderConfig};
use crate::recon::{gl_to_cv_pose, RgbdFrame};
use crate::scene::{Camera, Light, LightKind, NodeRole, SceneGraph, SceneNode};
use crate::Result;

pub const ROOM_HALF: f64 = 4.0;
pub const ROOM_HEIGHT: f64 = 2.8;

/// Where the body stands: on the floor at z = -0.8, facing +Z.
pub fn room_anchor() -> Isometry3<f64> {
    Isometry3::translation(0.0, 0.0, -0.8)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hash of a lattice point to `[0, 1)`.
fn lattice(x: i64, y: i64, seed: u64) -> f64 {
    let h = splitmix(seed ^ splitmix((x as u64).wrapping_mul(0x1000_0000_01b3) ^ (y as u64).rotate_left(32)));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Smooth value noise in `[0, 1)`.
fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (i, j) = (x0 as i64, y0 as i64);
    let top = lattice(i, j, seed) * (1.0 - sx) + lattice(i + 1, j, seed) * sx;
    let bot = lattice(i, j + 1, seed) * (1.0 - sx) + lattice(i + 1, j + 1, seed) * sx;
    top * (1.0 - sy) + bot * sy
}

fn fractal(x: f64, y: f64, seed: u64) -> f64 {
    (0..4).map(|o| value_noise(x * (1 << o) as f64, y * (1 << o) as f64, seed + o) / (1 << o) as f64).sum::<f64>() / 1.875
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    std::array::from_fn(|k| a[k] * (1.0 - t) + b[k] * t)
}

/// Procedural surface patterns. Coordinates passed to [`Pattern::color`]
/// are in meters on the surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    Bricks { base: [f64; 3] },
    Planks { base: [f64; 3] },
    Tiles { a: [f64; 3], b: [f64; 3], size: f64 },
    Stripes { a: [f64; 3], b: [f64; 3], width: f64 },
    Fabric { base: [f64; 3] },
    Sky,
    Foliage,
    Skyline,
}

impl Pattern {
    pub fn color(&self, x: f64, y: f64, seed: u64) -> [f64; 3] {
        let grain = fractal(x * 12.0, y * 12.0, seed);
        match *self {
            Pattern::Bricks { base } => {
                let (bw, bh) = (0.25, 0.085);
                let row = (y / bh).floor();
                let shift = if row as i64 % 2 == 0 { 0.0 } else { bw / 2.0 };
                let col = ((x + shift) / bw).floor();
                let (fx, fy) = ((x + shift) / bw - col, y / bh - row);
                if fx < 0.06 || fy < 0.12 {
                    return [0.78, 0.76, 0.72];
                }
                let tint = 0.75 + 0.35 * lattice(col as i64, row as i64, seed);
                base.map(|c| c * tint * (0.9 + 0.2 * grain))
            }
            Pattern::Planks { base } => {
                let pw = 0.18;
                let plank = (x / pw).floor();
                let len = 1.2 + lattice(plank as i64, 7, seed);
                let seg = ((y + lattice(plank as i64, 3, seed) * len) / len).floor();
                let fx = x / pw - plank;
                if fx < 0.04 {
                    return base.map(|c| c * 0.35);
                }
                let streak = value_noise(x * 40.0, y * 3.0, seed ^ 0x51);
                let tint = 0.8 + 0.3 * lattice(plank as i64, seg as i64, seed);
                base.map(|c| c * tint * (0.85 + 0.3 * streak))
            }
            Pattern::Tiles { a, b, size } => {
                let (i, j) = ((x / size).floor() as i64, (y / size).floor() as i64);
                let (fx, fy) = (x / size - i as f64, y / size - j as f64);
                if fx < 0.05 || fy < 0.05 {
                    return [0.3, 0.3, 0.3];
                }
                let c = if (i + j).rem_euclid(2) == 0 { a } else { b };
                c.map(|v| v * (0.92 + 0.16 * grain))
            }
            Pattern::Stripes { a, b, width } => {
                let k = (x / width).floor() as i64;
                let base = if k.rem_euclid(2) == 0 { a } else { b };
                // Small motifs give trackable corners on otherwise flat stripes.
                let (cx, cy) = ((x / width).fract(), (y / 0.3).fract());
                let dot = (cx - 0.5).abs() < 0.2 && (cy - 0.5).abs() < 0.12;
                let c = if dot { mix(base, [0.25, 0.2, 0.2], 0.6) } else { base };
                c.map(|v| v * (0.94 + 0.12 * grain))
            }
            Pattern::Fabric { base } => {
                let weave = ((x * 60.0).sin() * (y * 60.0).sin()).abs();
                let blotch = fractal(x * 3.0, y * 3.0, seed ^ 0xfa);
                base.map(|c| c * (0.7 + 0.2 * weave + 0.3 * blotch))
            }
            Pattern::Sky => {
                let t = (y / 3.0).clamp(0.0, 1.0);
                let sky = mix([0.85, 0.9, 0.98], [0.35, 0.55, 0.9], t);
                let cloud = (fractal(x * 0.8, y * 2.0, seed) - 0.45).max(0.0) * 2.5;
                let ridge = 0.8 + 0.5 * fractal(x * 0.7, 0.0, seed ^ 0x99);
                if 3.0 - y < ridge {
                    return mix([0.2, 0.4, 0.18], [0.35, 0.3, 0.2], grain);
                }
                mix(sky, [1.0; 3], cloud.min(1.0))
            }
            Pattern::Foliage => {
                let leaf = fractal(x * 4.0, y * 4.0, seed);
                let dark = value_noise(x * 25.0, y * 25.0, seed ^ 0x1e);
                mix([0.08, 0.25, 0.06], [0.45, 0.65, 0.2], leaf).map(|c| c * (0.7 + 0.5 * dark))
            }
            Pattern::Skyline => {
                let bw = 0.45;
                let b = (x / bw).floor() as i64;
                let top = 1.0 + 1.6 * lattice(b, 0, seed);
                let yy = 3.0 - y;
                if yy > top {
                    return mix([0.95, 0.75, 0.55], [0.45, 0.55, 0.85], ((yy - top) / 1.0).min(1.0));
                }
                let (wx, wy) = ((x / 0.09).fract(), (yy / 0.12).fract());
                let lit = lattice((x / 0.09) as i64, (yy / 0.12) as i64, seed ^ 0x77) > 0.55;
                if wx > 0.3 && wy > 0.35 && lit {
                    [0.95, 0.85, 0.5]
                } else {
                    let shade = 0.25 + 0.25 * lattice(b, 1, seed);
                    [shade, shade, shade * 1.1]
                }
            }
        }
    }
}

/// Paint a `w_m × h_m` meter surface at `ppm` texels per meter. Texel row 0
/// is the top edge; pattern `y` is measured upward from the bottom edge.
pub fn paint(pattern: Pattern, w_m: f64, h_m: f64, ppm: f64, seed: u64) -> Texture {
    let w = ((w_m * ppm).round() as u32).max(2);
    let h = ((h_m * ppm).round() as u32).max(2);
    let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
    for row in 0..h {
        for col in 0..w {
            let x = (col as f64 + 0.5) / ppm;
            let y = h_m - (row as f64 + 0.5) / ppm;
            let c = pattern.color(x, y, seed);
            pixels.extend(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    Texture { width: w, height: h, pixels }
}

/// Six 256×256 placeholder backgrounds: three indoor, three outdoor.
pub fn placeholder_backgrounds() -> Vec<Arc<Texture>> {
    let patterns = [
        Pattern::Bricks { base: [0.62, 0.3, 0.22] },
        Pattern::Stripes { a: [0.85, 0.8, 0.65], b: [0.7, 0.72, 0.6], width: 0.2 },
        Pattern::Tiles { a: [0.9, 0.9, 0.88], b: [0.35, 0.45, 0.55], size: 0.3 },
        Pattern::Sky,
        Pattern::Foliage,
        Pattern::Skyline,
    ];
    debug_assert_eq!(patterns.len(), BACKGROUND_COUNT);
    patterns.iter().enumerate().map(|(i, p)| Arc::new(paint(*p, 3.0, 3.0, 256.0 / 3.0, 100 + i as u64))).collect()
}

/// Axis-aligned box with outward faces; each face maps the full texture.
pub fn textured_box(lo: [f64; 3], hi: [f64; 3]) -> Mesh {
    let (lo, hi) = (lo.map(|v| v as f32), hi.map(|v| v as f32));
    let mut verts = Vec::with_capacity(24);
    let mut uvs = Vec::with_capacity(24);
    let mut tris = Vec::with_capacity(12);
    // Each face: axis, side, and the (u, v) axes chosen so u × v = outward.
    let faces: [(usize, bool, usize, usize); 6] =
        [(0, true, 2, 1), (0, false, 2, 1), (1, true, 0, 2), (1, false, 0, 2), (2, true, 0, 1), (2, false, 0, 1)];
    for (axis, positive, ua, va) in faces {
        let base = verts.len() as u32;
        let fixed = if positive { hi[axis] } else { lo[axis] };
        for (su, sv) in [(0, 0), (1, 0), (1, 1), (0, 1)] {
            let mut p = [0f32; 3];
            p[axis] = fixed;
            p[ua] = if su == 0 { lo[ua] } else { hi[ua] };
            p[va] = if sv == 0 { lo[va] } else { hi[va] };
            verts.push(p);
            uvs.push([su as f32, 1.0 - sv as f32]);
        }
        let mut quad = [[base, base + 1, base + 2], [base, base + 2, base + 3]];
        // Flip so the winding normal points outward.
        let e = |i: u32| Vector3::from(verts[i as usize].map(|v| v as f64));
        let n = (e(base + 1) - e(base)).cross(&(e(base + 2) - e(base)));
        if (n[axis] > 0.0) != positive {
            for t in &mut quad {
                t.swap(1, 2);
            }
        }
        tris.extend(quad);
    }
    let mut m = Mesh::from_triangles(verts, tris);
    m.uvs = Some(uvs);
    m
}

fn node(name: &str, mesh: Mesh, texture: Texture) -> SceneNode {
    let mut n = SceneNode::new(name, Arc::new(mesh), NodeRole::Environment);
    n.texture = Some(Arc::new(texture));
    n.albedo = [1.0; 3];
    n
}

fn piece(name: &str, lo: [f64; 3], hi: [f64; 3], pattern: Pattern, seed: u64) -> SceneNode {
    let size = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let (w, h) = (size[0].max(size[2]), size[1].max(size[2]));
    node(name, textured_box(lo, hi), paint(pattern, w, h, 64.0, seed))
}

/// Quad spanning `corners` (counter-clockwise seen from the side it faces).
fn panel(corners: [[f64; 3]; 4]) -> Mesh {
    let mut m = Mesh::from_triangles(corners.map(|c| c.map(|v| v as f32)).to_vec(), vec![[0, 1, 2], [0, 2, 3]]);
    m.uvs = Some(vec![[0.0, 1.0], [1.0, 1.0], [1.0, 0.0], [0.0, 0.0]]);
    m
}

/// The furnished living room and its body anchor.
///
/// Walls and ceiling are `colorable`; the floor and furniture keep their
/// textures under background recoloring.
pub fn living_room() -> Environment {
    let (s, t) = (ROOM_HALF, ROOM_HEIGHT);
    let wall_paper = Pattern::Stripes { a: [0.86, 0.82, 0.7], b: [0.76, 0.74, 0.62], width: 0.22 };
    let mut nodes = Vec::new();
    let walls = [
        ("wall_back", [[-s, 0.0, -s], [s, 0.0, -s], [s, t, -s], [-s, t, -s]], wall_paper, 1),
        ("wall_front", [[s, 0.0, s], [-s, 0.0, s], [-s, t, s], [s, t, s]], wall_paper, 2),
        ("wall_left", [[-s, 0.0, s], [-s, 0.0, -s], [-s, t, -s], [-s, t, s]], Pattern::Bricks { base: [0.6, 0.32, 0.24] }, 3),
        ("wall_right", [[s, 0.0, -s], [s, 0.0, s], [s, t, s], [s, t, -s]], wall_paper, 4),
    ];
    for (name, corners, pattern, seed) in walls {
        let mut n = node(name, panel(corners), paint(pattern, 2.0 * s, t, 64.0, seed));
        n.colorable = true;
        nodes.push(n);
    }
    nodes.push(node(
        "floor",
        panel([[-s, 0.0, s], [s, 0.0, s], [s, 0.0, -s], [-s, 0.0, -s]]),
        paint(Pattern::Planks { base: [0.55, 0.38, 0.22] }, 2.0 * s, 2.0 * s, 64.0, 5),
    ));
    let mut ceiling = node(
        "ceiling",
        panel([[-s, t, -s], [s, t, -s], [s, t, s], [-s, t, s]]),
        paint(Pattern::Tiles { a: [0.93, 0.93, 0.9], b: [0.88, 0.88, 0.86], size: 0.6 }, 2.0 * s, 2.0 * s, 32.0, 6),
    );
    ceiling.colorable = true;
    nodes.push(ceiling);

    let fabric = Pattern::Fabric { base: [0.3, 0.42, 0.6] };
    let wood = Pattern::Planks { base: [0.42, 0.27, 0.16] };
    let pale = Pattern::Planks { base: [0.78, 0.7, 0.55] };
    let furniture = [
        ("sofa_seat", [-1.2, 0.0, -4.0], [1.2, 0.45, -3.1], fabric, 10),
        ("sofa_back", [-1.2, 0.45, -4.0], [1.2, 0.95, -3.75], fabric, 11),
        ("sofa_arm_l", [-1.45, 0.0, -4.0], [-1.2, 0.65, -3.1], fabric, 12),
        ("sofa_arm_r", [1.2, 0.0, -4.0], [1.45, 0.65, -3.1], fabric, 13),
        ("table_top", [-0.6, 0.4, -2.6], [0.6, 0.45, -2.0], wood, 14),
        ("table_leg_a", [-0.55, 0.0, -2.55], [-0.48, 0.4, -2.48], wood, 15),
        ("table_leg_b", [0.48, 0.0, -2.55], [0.55, 0.4, -2.48], wood, 16),
        ("table_leg_c", [-0.55, 0.0, -2.12], [-0.48, 0.4, -2.05], wood, 17),
        ("table_leg_d", [0.48, 0.0, -2.12], [0.55, 0.4, -2.05], wood, 18),
        ("shelf", [2.2, 0.0, -4.0], [3.4, 1.9, -3.6], pale, 19),
        ("books_low", [2.3, 0.6, -3.62], [3.3, 0.9, -3.55], Pattern::Stripes { a: [0.7, 0.15, 0.1], b: [0.15, 0.3, 0.6], width: 0.05 }, 20),
        ("books_high", [2.3, 1.2, -3.62], [3.1, 1.5, -3.55], Pattern::Stripes { a: [0.2, 0.5, 0.2], b: [0.85, 0.75, 0.3], width: 0.06 }, 21),
        ("cabinet", [-4.0, 0.0, -3.4], [-3.45, 0.8, -1.8], wood, 22),
        ("tv", [-3.95, 0.95, -3.1], [-3.85, 1.55, -2.1], Pattern::Tiles { a: [0.08, 0.08, 0.1], b: [0.12, 0.12, 0.15], size: 0.25 }, 23),
        ("lamp_base", [-2.4, 0.0, -3.8], [-2.1, 0.08, -3.5], wood, 24),
        ("lamp_pole", [-2.28, 0.08, -3.68], [-2.22, 1.5, -3.62], wood, 25),
        ("lamp_shade", [-2.45, 1.5, -3.85], [-2.05, 1.8, -3.45], Pattern::Fabric { base: [0.95, 0.85, 0.6] }, 26),
        ("picture", [-0.7, 1.3, -4.0], [0.7, 2.1, -3.97], Pattern::Sky, 27),
        ("rug", [-1.3, 0.0, -3.0], [1.3, 0.01, -1.5], Pattern::Tiles { a: [0.6, 0.2, 0.2], b: [0.8, 0.7, 0.5], size: 0.2 }, 28),
        ("side_table", [2.6, 0.0, -2.4], [3.2, 0.55, -1.8], pale, 29),
        ("plant_pot", [3.3, 0.0, -1.6], [3.7, 0.4, -1.2], Pattern::Bricks { base: [0.7, 0.4, 0.25] }, 30),
        ("plant", [3.25, 0.4, -1.65], [3.75, 1.3, -1.15], Pattern::Foliage, 31),
    ];
    for (name, lo, hi, pattern, seed) in furniture {
        nodes.push(piece(name, lo, hi, pattern, seed));
    }
    Environment { nodes, anchor: room_anchor() }
}

/// All environment geometry merged into one world-space mesh.
pub fn world_mesh(nodes: &[SceneNode]) -> Mesh {
    let parts: Vec<Mesh> = nodes.iter().map(|n| n.mesh.transformed(&n.transform)).collect();
    let mut m = Mesh::merge(&parts);
    m.uvs = None;
    m
}

/// A rendered RGB-D sequence with ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticRgbd {
    pub frames: Vec<RgbdFrame>,
    /// `world_from_camera` in the computer-vision camera convention.
    pub poses: Vec<Isometry3<f64>>,
    pub mesh: Mesh,
}

/// Camera path of the orbit: an arc of radius 2 m around (0, ·, -1) sweeping
/// 50° while looking at the furnished back half of the room, with a gentle
/// height bob.
pub fn orbit_cameras(frames: usize, vfov_deg: f64) -> Vec<Camera> {
    (0..frames)
        .map(|k| {
            let t = if frames > 1 { k as f64 / (frames - 1) as f64 } else { 0.0 };
            let phi = (-25.0 + 50.0 * t).to_radians();
            let eye = Point3::new(2.0 * phi.sin(), 1.4 + 0.1 * (std::f64::consts::TAU * t).sin(), -1.0 + 2.0 * phi.cos());
            let target = Point3::new(0.4 * phi.sin(), 0.8, -3.0);
            Camera::look_at(eye, target, vfov_deg.to_radians(), 1.0, 0.1, 20.0)
        })
        .collect()
}

fn room_lighting() -> (Vec<Light>, [f32; 3]) {
    let sun = Light {
        kind: LightKind::Directional { direction: Vector3::new(0.3, -1.0, -0.4).normalize() },
        intensity: 0.55,
        color: [1.0; 3],
    };
    (vec![sun], [0.45; 3])
}

/// Render `count` frames of the orbit through the living room at
/// `resolution`² pixels (60° vertical field of view).
pub fn synthetic_orbit(count: usize, resolution: u32, mode: ExecMode) -> Result<SyntheticRgbd> {
    let env = living_room();
    let (lights, ambient) = room_lighting();
    let cameras = orbit_cameras(count, 60.0);
    let scenes: Vec<SceneGraph> = cameras
        .iter()
        .map(|c| SceneGraph { nodes: env.nodes.clone(), camera: c.clone(), lights: lights.clone(), ambient })
        .collect();
    let config = RenderConfig { resolution, ..RenderConfig::default() };
    let clip = render_clip(&scenes, ActionLabel::Walking, "fixture:orbit", &config, mode)?;
    let depth = render_depth_sequence(&scenes, &config, mode)?;
    let frames = clip
        .frames
        .iter()
        .zip(depth.frames)
        .enumerate()
        .map(|(i, (rgb, d))| RgbdFrame::new(depth.intrinsics, rgb, d, 1000.0, i))
        .collect::<Result<Vec<_>>>()?;
    let poses = cameras.iter().map(|c| gl_to_cv_pose(&c.pose)).collect();
    Ok(SyntheticRgbd { frames, poses, mesh: world_mesh(&env.nodes) })
}
