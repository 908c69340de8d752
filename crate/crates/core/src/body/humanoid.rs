//! Low-poly procedural humanoid and hand-authored motion takes.
//!
//! The body faces +Z with Y up, feet resting on `y = 0`, and is exactly
//! [`Humanoid::HEIGHT`] meters tall in the rest pose. "Left" is +X.

use std::f64::consts::{PI, TAU};

use nalgebra::{UnitQuaternion, Vector3};

use super::{Joint, PoseFrame, SkeletonRig, SkinnedBody};
use crate::formats::{ActionLabel, Mesh, MotionTake};

/// Joint names, parents and raw rest positions before height normalization.
const JOINTS: [(&str, Option<usize>, [f64; 3]); 21] = [
    ("pelvis", None, [0.0, 0.95, 0.0]),
    ("spine", Some(0), [0.0, 1.08, 0.0]),
    ("chest", Some(1), [0.0, 1.25, 0.0]),
    ("neck", Some(2), [0.0, 1.45, 0.0]),
    ("head", Some(3), [0.0, 1.53, 0.0]),
    ("l_clavicle", Some(2), [0.04, 1.40, 0.0]),
    ("l_shoulder", Some(5), [0.19, 1.40, 0.0]),
    ("l_elbow", Some(6), [0.19, 1.12, 0.0]),
    ("l_wrist", Some(7), [0.19, 0.87, 0.0]),
    ("r_clavicle", Some(2), [-0.04, 1.40, 0.0]),
    ("r_shoulder", Some(9), [-0.19, 1.40, 0.0]),
    ("r_elbow", Some(10), [-0.19, 1.12, 0.0]),
    ("r_wrist", Some(11), [-0.19, 0.87, 0.0]),
    ("l_hip", Some(0), [0.09, 0.92, 0.0]),
    ("l_knee", Some(13), [0.09, 0.50, 0.0]),
    ("l_ankle", Some(14), [0.09, 0.08, 0.0]),
    ("l_foot", Some(15), [0.09, 0.035, 0.10]),
    ("r_hip", Some(0), [-0.09, 0.92, 0.0]),
    ("r_knee", Some(17), [-0.09, 0.50, 0.0]),
    ("r_ankle", Some(18), [-0.09, 0.08, 0.0]),
    ("r_foot", Some(19), [-0.09, 0.035, 0.10]),
];

/// Joints moved by the hand-waving take (both arm chains).
pub const ARM_JOINTS: [&str; 8] = [
    "l_clavicle", "l_shoulder", "l_elbow", "l_wrist", "r_clavicle", "r_shoulder", "r_elbow", "r_wrist",
];

enum End {
    Joint(usize),
    Tip([f64; 3]),
}

/// Tube segments: (owner joint, end, start radius, end radius, depth scale).
const fn seg(owner: usize, end: usize, r0: f64, r1: f64, depth: f64) -> (usize, End, f64, f64, f64) {
    (owner, End::Joint(end), r0, r1, depth)
}

fn segments() -> Vec<(usize, End, f64, f64, f64)> {
    vec![
        seg(0, 1, 0.15, 0.14, 0.7),
        seg(1, 2, 0.14, 0.16, 0.65),
        seg(2, 3, 0.17, 0.08, 0.6),
        seg(3, 4, 0.05, 0.05, 1.0),
        seg(5, 6, 0.05, 0.05, 1.0),
        seg(6, 7, 0.05, 0.04, 1.0),
        seg(7, 8, 0.04, 0.03, 1.0),
        (8, End::Tip([0.19, 0.72, 0.0]), 0.035, 0.02, 0.6),
        seg(9, 10, 0.05, 0.05, 1.0),
        seg(10, 11, 0.05, 0.04, 1.0),
        seg(11, 12, 0.04, 0.03, 1.0),
        (12, End::Tip([-0.19, 0.72, 0.0]), 0.035, 0.02, 0.6),
        seg(13, 14, 0.075, 0.055, 1.0),
        seg(14, 15, 0.05, 0.04, 1.0),
        seg(15, 16, 0.04, 0.035, 1.0),
        (16, End::Tip([0.09, 0.035, 0.22]), 0.035, 0.03, 1.0),
        seg(17, 18, 0.075, 0.055, 1.0),
        seg(18, 19, 0.05, 0.04, 1.0),
        seg(19, 20, 0.04, 0.035, 1.0),
        (20, End::Tip([-0.09, 0.035, 0.22]), 0.035, 0.03, 1.0),
    ]
}

const RINGS: usize = 8;
const SIDES: usize = 12;
const BLEND: f64 = 0.25;

/// The procedural body plus indices of notable vertices.
#[derive(Debug, Clone)]
pub struct Humanoid {
    pub body: SkinnedBody,
    /// Tip of the nose: the most +Z vertex of the head, an asymmetric marker.
    pub nose_vertex: usize,
}

impl Humanoid {
    pub const HEIGHT: f64 = 1.7;

    pub fn build() -> Humanoid {
        let mut b = Builder::default();
        for (owner, end, r0, r1, depth) in segments() {
            let from = Vector3::from(JOINTS[owner].2);
            let (to, child) = match end {
                End::Joint(c) => (Vector3::from(JOINTS[c].2), Some(c)),
                End::Tip(p) => (Vector3::from(p), None),
            };
            b.tube(owner, JOINTS[owner].1, child, from, to, r0, r1, depth);
        }
        b.sphere(4, Some(3), Vector3::new(0.0, 1.63, 0.0), 0.11);
        let nose = b.nose(4, Vector3::new(0.0, 1.62, 0.105), Vector3::new(0.0, 1.605, 0.15));

        let mut mesh = Mesh::from_triangles(b.vertices, b.triangles);
        let (lo, hi) = mesh.bounds().expect("non-empty body");
        let scale = Self::HEIGHT / (hi.y - lo.y);
        let shift = -lo.y;
        let place = |p: Vector3<f64>| Vector3::new(p.x * scale, (p.y + shift) * scale, p.z * scale);
        for v in &mut mesh.vertices {
            let p = place(Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64));
            *v = [p.x as f32, p.y as f32, p.z as f32];
        }
        mesh.compute_normals();

        let world: Vec<Vector3<f64>> = JOINTS.iter().map(|j| place(Vector3::from(j.2))).collect();
        let joints = JOINTS
            .iter()
            .enumerate()
            .map(|(i, (name, parent, _))| Joint {
                name: name.to_string(),
                parent: *parent,
                rest_rotation: UnitQuaternion::identity(),
                rest_translation: match parent {
                    Some(p) => world[i] - world[*p],
                    None => world[i],
                },
            })
            .collect();
        Humanoid {
            body: SkinnedBody { rig: SkeletonRig { joints }, template: mesh, weights: b.weights },
            nose_vertex: nose,
        }
    }
}

#[derive(Default)]
struct Builder {
    vertices: Vec<[f32; 3]>,
    triangles: Vec<[u32; 3]>,
    weights: Vec<Vec<(usize, f64)>>,
}

impl Builder {
    fn push(&mut self, p: Vector3<f64>, w: Vec<(usize, f64)>) -> u32 {
        self.vertices.push([p.x as f32, p.y as f32, p.z as f32]);
        self.weights.push(w);
        (self.vertices.len() - 1) as u32
    }

    fn blend(owner: usize, parent: Option<usize>, child: Option<usize>, t: f64) -> Vec<(usize, f64)> {
        let partner = if t < BLEND {
            parent.map(|p| (p, 0.5 * (1.0 - t / BLEND)))
        } else if t > 1.0 - BLEND {
            child.map(|c| (c, 0.5 * (t - (1.0 - BLEND)) / BLEND))
        } else {
            None
        };
        match partner {
            Some((j, w)) if w > 0.0 => vec![(owner, 1.0 - w), (j, w)],
            _ => vec![(owner, 1.0)],
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn tube(
        &mut self,
        owner: usize,
        parent: Option<usize>,
        child: Option<usize>,
        from: Vector3<f64>,
        to: Vector3<f64>,
        r0: f64,
        r1: f64,
        depth: f64,
    ) {
        let axis = (to - from).normalize();
        let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
        let side = axis.cross(&helper).normalize();
        let up = side.cross(&axis);
        // Keep the flattened direction along world Z for the torso.
        let (e1, e2) = if side.z.abs() > up.z.abs() { (up, side) } else { (side, up) };
        let base = self.vertices.len() as u32;
        for r in 0..RINGS {
            let t = r as f64 / (RINGS - 1) as f64;
            let c = from + (to - from) * t;
            let rad = r0 + (r1 - r0) * t;
            for s in 0..SIDES {
                let a = TAU * s as f64 / SIDES as f64;
                let p = c + e1 * (rad * a.cos()) + e2 * (rad * depth * a.sin());
                self.push(p, Self::blend(owner, parent, child, t));
            }
        }
        let cap0 = self.push(from, Self::blend(owner, parent, child, 0.0));
        let cap1 = self.push(to, Self::blend(owner, parent, child, 1.0));
        let at = |r: usize, s: usize| base + (r * SIDES + s % SIDES) as u32;
        let flip = e1.cross(&e2).dot(&axis) < 0.0;
        let mut tri = |a: u32, b: u32, c: u32| {
            self.triangles.push(if flip { [a, c, b] } else { [a, b, c] });
        };
        for r in 0..RINGS - 1 {
            for s in 0..SIDES {
                tri(at(r, s), at(r, s + 1), at(r + 1, s + 1));
                tri(at(r, s), at(r + 1, s + 1), at(r + 1, s));
            }
        }
        for s in 0..SIDES {
            tri(cap0, at(0, s + 1), at(0, s));
            tri(cap1, at(RINGS - 1, s), at(RINGS - 1, s + 1));
        }
    }

    fn sphere(&mut self, owner: usize, parent: Option<usize>, center: Vector3<f64>, radius: f64) {
        const LAT: usize = 10;
        const LON: usize = 14;
        let w = |y: f64| {
            // Blend the bottom of the head into the neck.
            if y < center.y - 0.6 * radius {
                vec![(owner, 0.7), (parent.unwrap_or(owner), 0.3)]
            } else {
                vec![(owner, 1.0)]
            }
        };
        let top = self.push(center + Vector3::y() * radius, w(center.y + radius));
        let base = self.vertices.len() as u32;
        for i in 1..LAT {
            let phi = PI * i as f64 / LAT as f64;
            for j in 0..LON {
                let th = TAU * j as f64 / LON as f64;
                let p = center + Vector3::new(phi.sin() * th.sin(), phi.cos(), phi.sin() * th.cos()) * radius;
                self.push(p, w(p.y));
            }
        }
        let bottom = self.push(center - Vector3::y() * radius, w(center.y - radius));
        let at = |i: usize, j: usize| base + ((i - 1) * LON + j % LON) as u32;
        for j in 0..LON {
            self.triangles.push([top, at(1, j), at(1, j + 1)]);
            self.triangles.push([bottom, at(LAT - 1, j + 1), at(LAT - 1, j)]);
        }
        for i in 1..LAT - 1 {
            for j in 0..LON {
                self.triangles.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
                self.triangles.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
            }
        }
    }

    /// Small four-sided pyramid; returns the tip vertex.
    fn nose(&mut self, owner: usize, base: Vector3<f64>, tip: Vector3<f64>) -> usize {
        let r = 0.018;
        let ring: Vec<u32> = (0..4)
            .map(|k| {
                let a = TAU * k as f64 / 4.0;
                self.push(base + Vector3::new(r * a.cos(), r * a.sin(), 0.0), vec![(owner, 1.0)])
            })
            .collect();
        let t = self.push(tip, vec![(owner, 1.0)]);
        for k in 0..4 {
            self.triangles.push([ring[k], ring[(k + 1) % 4], t]);
        }
        t as usize
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Hand-authored take for one action class at 25 fps.
///
/// `variation` in `[0,1)` perturbs amplitude and tempo so different
/// subjects move differently; 0 gives the canonical motion.
pub fn procedural_take(rig: &SkeletonRig, label: ActionLabel, frames: usize, variation: f64, subject: &str) -> MotionTake {
    let fps = 25.0;
    let idx = |n: &str| rig.index_of(n).unwrap_or_else(|| panic!("rig has no joint {n}"));
    let amp = 0.85 + 0.3 * variation;
    let tempo = 0.9 + 0.2 * variation;
    let frames_out = (0..frames)
        .map(|f| {
            let t = f as f64 / fps;
            let mut pose = PoseFrame::identity(rig.len());
            let mut set = |n: &str, aa: [f64; 3]| pose.joint_rotations[idx(n)] = aa;
            match label {
                ActionLabel::HandWaving => {
                    let raise = smoothstep(t / 0.5);
                    let wave = (TAU * 2.0 * tempo * t).sin() * raise;
                    set("r_clavicle", [0.0, 0.0, -0.15 * raise]);
                    set("r_shoulder", [0.0, 0.0, -2.3 * raise]);
                    set("r_elbow", [0.0, 0.0, (-0.5 + 0.45 * amp * wave) * raise]);
                    set("r_wrist", [0.0, 0.0, 0.2 * wave]);
                    // The idle arm sways very slightly.
                    set("l_shoulder", [0.0, 0.0, 0.05 * raise]);
                }
                ActionLabel::Walking => {
                    let ramp = smoothstep(t / 0.3);
                    let ph = TAU * tempo * t;
                    let s = ph.sin() * ramp * amp;
                    let k = |x: f64| (x.max(0.0)) * ramp * amp;
                    set("l_hip", [-0.45 * s, 0.0, 0.0]);
                    set("r_hip", [0.45 * s, 0.0, 0.0]);
                    set("l_knee", [0.9 * k(-ph.sin() + 0.2), 0.0, 0.0]);
                    set("r_knee", [0.9 * k(ph.sin() + 0.2), 0.0, 0.0]);
                    set("l_shoulder", [0.35 * s, 0.0, 0.05]);
                    set("r_shoulder", [-0.35 * s, 0.0, -0.05]);
                    set("l_elbow", [-0.3 * ramp, 0.0, 0.0]);
                    set("r_elbow", [-0.3 * ramp, 0.0, 0.0]);
                    set("spine", [0.0, 0.08 * s, 0.0]);
                }
                ActionLabel::SittingDown => {
                    let d = smoothstep(t * tempo / 1.4);
                    set("l_hip", [-1.45 * d * amp.min(1.0), 0.0, 0.05 * d]);
                    set("r_hip", [-1.45 * d * amp.min(1.0), 0.0, -0.05 * d]);
                    set("l_knee", [1.5 * d, 0.0, 0.0]);
                    set("r_knee", [1.5 * d, 0.0, 0.0]);
                    set("l_ankle", [-0.1 * d, 0.0, 0.0]);
                    set("r_ankle", [-0.1 * d, 0.0, 0.0]);
                    set("spine", [0.25 * d * (1.0 - d) * 4.0 * 0.5, 0.0, 0.0]);
                    set("chest", [0.1 * d, 0.0, 0.0]);
                    set("l_shoulder", [-0.3 * d, 0.0, 0.1 * d]);
                    set("r_shoulder", [-0.3 * d, 0.0, -0.1 * d]);
                    set("l_elbow", [-0.6 * d, 0.0, 0.0]);
                    set("r_elbow", [-0.6 * d, 0.0, 0.0]);
                }
            }
            pose
        })
        .collect();
    MotionTake {
        subject_id: subject.to_string(),
        label,
        fps,
        joint_names: rig.joints.iter().map(|j| j.name.clone()).collect(),
        frames: frames_out,
    }
}

/// Default clip length for procedural takes: two seconds at 25 fps.
pub const DEFAULT_TAKE_FRAMES: usize = 50;

/// The procedural body with one canonical take per action class
/// (walking, sitting down, hand waving), each two seconds long.
pub fn make_procedural_humanoid() -> (SkinnedBody, [MotionTake; 3]) {
    let h = Humanoid::build();
    let takes = ActionLabel::ALL.map(|l| procedural_take(&h.body.rig, l, DEFAULT_TAKE_FRAMES, 0.0, "procedural"));
    (h.body, takes)
}
