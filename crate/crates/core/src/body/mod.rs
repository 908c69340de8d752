//! Kinematic rig, forward kinematics and linear blend skinning.

mod humanoid;

pub use humanoid::{make_procedural_humanoid, procedural_take, Humanoid, ARM_JOINTS, DEFAULT_TAKE_FRAMES};

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::formats::{to_v3, Mesh};
use crate::geom::{axis_angle_of, rot_from_axis_angle};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// `None` for the root.
    pub parent: Option<usize>,
    pub rest_rotation: UnitQuaternion<f64>,
    /// Offset from the parent joint in the parent's frame (meters).
    pub rest_translation: Vector3<f64>,
}

/// Joints in topological order: every parent precedes its children.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonRig {
    pub joints: Vec<Joint>,
}

impl SkeletonRig {
    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let roots = self.joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 {
            return Err(Error::Validation(format!("rig must have exactly one root, found {roots}")));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(Error::Validation(format!(
                        "joint {i} ({}) has parent {p}; parents must come first",
                        j.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// World transforms of the rest pose.
    pub fn rest_world(&self) -> Vec<Isometry3<f64>> {
        let mut out: Vec<Isometry3<f64>> = Vec::with_capacity(self.len());
        for j in &self.joints {
            let local = Isometry3::from_parts(Translation3::from(j.rest_translation), j.rest_rotation);
            out.push(match j.parent {
                Some(p) => out[p] * local,
                None => local,
            });
        }
        out
    }
}

/// Per-joint axis-angle rotations (radians) plus a root translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub joint_rotations: Vec<[f64; 3]>,
    pub root_translation: [f64; 3],
}

impl PoseFrame {
    pub fn identity(joints: usize) -> PoseFrame {
        PoseFrame { joint_rotations: vec![[0.0; 3]; joints], root_translation: [0.0; 3] }
    }
}

/// `world(j) = world(parent(j)) · rest_local(j) · rot(pose_j)`; the root's
/// parent is the translation `pose.root_translation`.
pub fn forward_kinematics(rig: &SkeletonRig, pose: &PoseFrame) -> Result<Vec<Isometry3<f64>>> {
    if pose.joint_rotations.len() != rig.len() {
        return Err(Error::Contract(format!(
            "pose has {} rotations for {} joints",
            pose.joint_rotations.len(),
            rig.len()
        )));
    }
    let root = Isometry3::translation(pose.root_translation[0], pose.root_translation[1], pose.root_translation[2]);
    let mut out: Vec<Isometry3<f64>> = Vec::with_capacity(rig.len());
    for (j, aa) in rig.joints.iter().zip(&pose.joint_rotations) {
        let local = Isometry3::from_parts(
            Translation3::from(j.rest_translation),
            j.rest_rotation * rot_from_axis_angle(aa),
        );
        out.push(match j.parent {
            Some(p) => out[p] * local,
            None => root * local,
        });
    }
    Ok(out)
}

/// Rig, rest-pose template mesh and sparse skinning weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinnedBody {
    pub rig: SkeletonRig,
    pub template: Mesh,
    /// Per vertex: up to four `(joint, weight)` pairs summing to one.
    pub weights: Vec<Vec<(usize, f64)>>,
}

pub const MAX_INFLUENCES: usize = 4;

impl SkinnedBody {
    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        self.template.validate()?;
        if self.weights.len() != self.template.vertices.len() {
            return Err(Error::Validation(format!(
                "{} weight rows for {} vertices",
                self.weights.len(),
                self.template.vertices.len()
            )));
        }
        for (v, w) in self.weights.iter().enumerate() {
            if w.is_empty() || w.len() > MAX_INFLUENCES {
                return Err(Error::Validation(format!("vertex {v} has {} influences", w.len())));
            }
            if let Some((j, _)) = w.iter().find(|(j, _)| *j >= self.rig.len()) {
                return Err(Error::Validation(format!("vertex {v} references joint {j}")));
            }
            let sum: f64 = w.iter().map(|(_, x)| x).sum();
            if (sum - 1.0).abs() > 1e-6 || w.iter().any(|(_, x)| *x < 0.0) {
                return Err(Error::Validation(format!("vertex {v} weights sum to {sum}")));
            }
        }
        Ok(())
    }
}

/// Skin the template: `v' = Σ w_k · T_k · T_rest,k⁻¹ · v`. Normals are blended
/// with the rotation parts and renormalized. Vertices whose influencing
/// joints are all at rest are copied bit-exactly.
pub fn lbs_pose(body: &SkinnedBody, pose: &PoseFrame) -> Result<Mesh> {
    let world = forward_kinematics(&body.rig, pose)?;
    let rest = body.rig.rest_world();
    let at_rest = joints_at_rest(&body.rig, pose);
    let skin: Vec<Isometry3<f64>> = world.iter().zip(&rest).map(|(w, r)| w * r.inverse()).collect();

    let mut out = body.template.clone();
    for (i, w) in body.weights.iter().enumerate() {
        if w.iter().all(|(j, _)| at_rest[*j]) {
            continue;
        }
        let p = Point3::from(to_v3(body.template.vertices[i]));
        let n = to_v3(body.template.normals[i]);
        let mut pos = Vector3::zeros();
        let mut nrm = Vector3::zeros();
        for &(j, wt) in w {
            pos += (skin[j] * p).coords * wt;
            nrm += (skin[j].rotation * n) * wt;
        }
        out.vertices[i] = [pos.x as f32, pos.y as f32, pos.z as f32];
        let len = nrm.norm();
        if len > 1e-12 {
            let nrm = nrm / len;
            out.normals[i] = [nrm.x as f32, nrm.y as f32, nrm.z as f32];
        }
    }
    Ok(out)
}

/// Joints whose world transform equals the rest transform by construction:
/// zero rotation on the joint and every ancestor, and zero root translation.
fn joints_at_rest(rig: &SkeletonRig, pose: &PoseFrame) -> Vec<bool> {
    let root_still = pose.root_translation == [0.0; 3];
    let mut out = Vec::with_capacity(rig.len());
    for (j, aa) in rig.joints.iter().zip(&pose.joint_rotations) {
        let own = *aa == [0.0; 3];
        out.push(own && j.parent.map_or(root_still, |p| out[p]));
    }
    out
}

/// Vertical extent `max_y − min_y`.
pub fn body_height(mesh: &Mesh) -> Result<f64> {
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| Error::Contract("height of an empty mesh".into()))?;
    Ok(hi.y - lo.y)
}

// Rig JSON companion file.

#[derive(Serialize, Deserialize)]
struct RawJoint {
    name: String,
    parent: i64,
    rest_rotation: [f64; 3],
    rest_translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct RawBody {
    joints: Vec<RawJoint>,
    template: Mesh,
    weights: Vec<Vec<(usize, f64)>>,
}

/// Serialize a body as rig JSON: joints (`parent = -1` for the root,
/// axis-angle rest rotations), the template mesh and per-vertex weights.
pub fn write_rig_json(body: &SkinnedBody) -> Result<Vec<u8>> {
    let raw = RawBody {
        joints: body
            .rig
            .joints
            .iter()
            .map(|j| RawJoint {
                name: j.name.clone(),
                parent: j.parent.map_or(-1, |p| p as i64),
                rest_rotation: axis_angle_of(&j.rest_rotation),
                rest_translation: [j.rest_translation.x, j.rest_translation.y, j.rest_translation.z],
            })
            .collect(),
        template: body.template.clone(),
        weights: body.weights.clone(),
    };
    Ok(serde_json::to_vec(&raw)?)
}

pub fn parse_rig_json(bytes: &[u8]) -> Result<SkinnedBody> {
    let raw: RawBody = serde_json::from_slice(bytes)?;
    let joints = raw
        .joints
        .into_iter()
        .map(|j| {
            Ok(Joint {
                parent: match j.parent {
                    -1 => None,
                    p if p >= 0 => Some(p as usize),
                    p => return Err(Error::Validation(format!("joint {} has parent {p}", j.name))),
                },
                name: j.name,
                rest_rotation: rot_from_axis_angle(&j.rest_rotation),
                rest_translation: Vector3::from(j.rest_translation),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let body = SkinnedBody { rig: SkeletonRig { joints }, template: raw.template, weights: raw.weights };
    body.validate()?;
    Ok(body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;

    fn chain() -> SkeletonRig {
        let j = |name: &str, parent, t: [f64; 3]| Joint {
            name: name.into(),
            parent,
            rest_rotation: UnitQuaternion::identity(),
            rest_translation: Vector3::from(t),
        };
        SkeletonRig {
            joints: vec![j("a", None, [0.0, 0.0, 0.0]), j("b", Some(0), [1.0, 0.0, 0.0]), j("c", Some(1), [1.0, 0.0, 0.0])],
        }
    }

    #[test]
    fn bent_chain_matches_hand_product() {
        // Middle joint bent 90° about z.
        let rig = chain();
        let mut pose = PoseFrame::identity(3);
        pose.joint_rotations[1] = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let world = forward_kinematics(&rig, &pose).unwrap();
        // Hand-multiplied: T(0) · [T(1,0,0)·Rz(90°)] · T(1,0,0)
        let t1 = Matrix4::new(1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let rz = Matrix4::new(0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let leaf = t1 * rz * t1;
        assert!((world[2].to_homogeneous() - leaf).norm() < 1e-12);
        let tip = world[2].translation.vector;
        assert!((tip - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn identity_pose_is_rest() {
        let rig = chain();
        let world = forward_kinematics(&rig, &PoseFrame::identity(3)).unwrap();
        assert_eq!(world, rig.rest_world());
    }

    #[test]
    fn pose_length_mismatch() {
        assert!(matches!(forward_kinematics(&chain(), &PoseFrame::identity(2)), Err(Error::Contract(_))));
    }

    #[test]
    fn rig_validation() {
        let mut rig = chain();
        rig.joints[1].parent = Some(2);
        assert!(rig.validate().is_err());
        let mut rig = chain();
        rig.joints[1].parent = None;
        assert!(rig.validate().is_err());
    }

    #[test]
    fn height_of_cubes() {
        let cube = Mesh::unit_cube();
        assert_eq!(body_height(&cube).unwrap(), 1.0);
        let tall = cube.transformed(&Matrix4::new_nonuniform_scaling(&Vector3::new(1.0, 1.8, 1.0)));
        assert!((body_height(&tall).unwrap() - 1.8).abs() < 1e-6);
        assert!(body_height(&Mesh::default()).is_err());
    }
}
