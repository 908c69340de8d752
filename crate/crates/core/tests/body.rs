use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use synthact::body::{
    body_height, forward_kinematics, lbs_pose, make_procedural_humanoid, Joint, PoseFrame, SkeletonRig, ARM_JOINTS,
};

/// Rodrigues' formula written out by hand.
fn rodrigues(aa: [f64; 3]) -> Matrix3<f64> {
    let v = Vector3::from(aa);
    let t = v.norm();
    if t < 1e-15 {
        return Matrix3::identity();
    }
    let k = v / t;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * t.sin() + kx * kx * (1.0 - t.cos())
}

fn homogeneous(r: Matrix3<f64>, t: [f64; 3]) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m[(0, 3)] = t[0];
    m[(1, 3)] = t[1];
    m[(2, 3)] = t[2];
    m
}

fn rot3() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1.5f64..1.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn fk_matches_matrix_chain(rest_t in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 5),
                               rest_r in prop::collection::vec(rot3(), 5),
                               pose_r in prop::collection::vec(rot3(), 5),
                               root in prop::array::uniform3(-2.0f64..2.0)) {
        let rig = SkeletonRig {
            joints: (0..5usize)
                .map(|i| Joint {
                    name: format!("j{i}"),
                    parent: i.checked_sub(1),
                    rest_rotation: UnitQuaternion::from_scaled_axis(Vector3::from(rest_r[i])),
                    rest_translation: Vector3::from(rest_t[i]),
                })
                .collect(),
        };
        let pose = PoseFrame { joint_rotations: pose_r.clone(), root_translation: root };
        let world = forward_kinematics(&rig, &pose).unwrap();
        let mut acc = homogeneous(Matrix3::identity(), root);
        for i in 0..5 {
            acc *= homogeneous(rodrigues(rest_r[i]) * rodrigues(pose_r[i]), rest_t[i]);
            prop_assert!((world[i].to_homogeneous() - acc).abs().max() < 1e-9);
        }
    }

    #[test]
    fn rigid_equivariance(aa in rot3(), t in prop::array::uniform3(-1.0f64..1.0), joints in prop::collection::vec(prop::array::uniform3(-0.5f64..0.5), 20)) {
        let (body, _) = make_procedural_humanoid();
        let mut pose = PoseFrame::identity(body.rig.len());
        for (r, j) in pose.joint_rotations.iter_mut().skip(1).zip(&joints) {
            *r = *j;
        }
        let still = lbs_pose(&body, &pose).unwrap();
        pose.joint_rotations[0] = aa;
        pose.root_translation = t;
        let moved = lbs_pose(&body, &pose).unwrap();
        let root = &body.rig.joints[0];
        let rest = homogeneous(root.rest_rotation.to_rotation_matrix().into_inner(), root.rest_translation.into());
        let g = homogeneous(Matrix3::identity(), t) * rest * homogeneous(rodrigues(aa), [0.0; 3]) * rest.try_inverse().unwrap();
        for (a, b) in moved.vertices.iter().zip(&still.vertices) {
            let p = g.transform_point(&Point3::new(b[0] as f64, b[1] as f64, b[2] as f64));
            prop_assert!((p - Point3::new(a[0] as f64, a[1] as f64, a[2] as f64)).norm() < 1e-5);
        }
    }

    #[test]
    fn equal_joint_transforms_move_rigidly(aa in rot3(), t in prop::array::uniform3(-1.0f64..1.0)) {
        // Only the root moves, so every joint carries the same skinning
        // transform and each vertex must follow it whatever its weights.
        let (body, _) = make_procedural_humanoid();
        let mut pose = PoseFrame::identity(body.rig.len());
        pose.joint_rotations[0] = aa;
        pose.root_translation = t;
        let moved = lbs_pose(&body, &pose).unwrap();
        let world = forward_kinematics(&body.rig, &pose).unwrap();
        let skin = world[0] * body.rig.rest_world()[0].inverse();
        for (a, b) in moved.vertices.iter().zip(&body.template.vertices) {
            let p = skin * Point3::new(b[0] as f64, b[1] as f64, b[2] as f64);
            prop_assert!((p - Point3::new(a[0] as f64, a[1] as f64, a[2] as f64)).norm() < 1e-5);
        }
    }
}

#[test]
fn fully_weighted_forearm_follows_its_joint() {
    let (body, _) = make_procedural_humanoid();
    let elbow = body.rig.index_of("l_elbow").unwrap();
    let shoulder = body.rig.index_of("l_shoulder").unwrap();
    let mut pose = PoseFrame::identity(body.rig.len());
    pose.joint_rotations[elbow] = [0.0, 0.0, 1.2];
    pose.joint_rotations[shoulder] = [0.3, -0.2, 0.1];
    let posed = lbs_pose(&body, &pose).unwrap();

    // Brute-force world transforms: walk each joint's parent chain.
    let world = |j: usize| -> Isometry3<f64> {
        let mut chain = vec![j];
        while let Some(p) = body.rig.joints[*chain.last().unwrap()].parent {
            chain.push(p);
        }
        chain.iter().rev().fold(Isometry3::identity(), |acc, &k| {
            let jt = &body.rig.joints[k];
            let r = UnitQuaternion::from_scaled_axis(Vector3::from(pose.joint_rotations[k]));
            acc * Isometry3::from_parts(Translation3::from(jt.rest_translation), jt.rest_rotation * r)
        })
    };
    let rest = body.rig.rest_world();
    let skin = world(elbow) * rest[elbow].inverse();
    let mut checked = 0;
    for (i, w) in body.weights.iter().enumerate() {
        if w.len() == 1 && w[0].0 == elbow {
            let v = body.template.vertices[i];
            let p = skin * Point3::new(v[0] as f64, v[1] as f64, v[2] as f64);
            let q = posed.vertices[i];
            assert!((p - Point3::new(q[0] as f64, q[1] as f64, q[2] as f64)).norm() < 1e-6);
            checked += 1;
        }
    }
    assert!(checked > 10, "{checked}");
}

#[test]
fn height_matches_vertex_scan() {
    let (body, takes) = make_procedural_humanoid();
    for take in &takes {
        for f in take.frames.iter().step_by(17) {
            let m = lbs_pose(&body, f).unwrap();
            let ys = m.vertices.iter().map(|v| v[1] as f64);
            let scan = ys.clone().fold(f64::MIN, f64::max) - ys.fold(f64::MAX, f64::min);
            assert!((body_height(&m).unwrap() - scan).abs() < 1e-9);
        }
    }
    let rest = body_height(&body.template).unwrap();
    assert!((rest - 1.7).abs() < 1e-3, "{rest}");
}

#[test]
fn waving_moves_only_arms() {
    let (body, takes) = make_procedural_humanoid();
    let wave = takes.iter().find(|t| t.label == synthact::formats::ActionLabel::HandWaving).unwrap();
    let arms: Vec<usize> = ARM_JOINTS.iter().map(|n| body.rig.index_of(n).unwrap()).collect();
    let mut arm_motion = 0.0f64;
    for f in &wave.frames {
        for (j, r) in f.joint_rotations.iter().enumerate() {
            if arms.contains(&j) {
                arm_motion = arm_motion.max(r.iter().map(|x| x.abs()).fold(0.0, f64::max));
            } else {
                assert_eq!(*r, [0.0; 3], "joint {}", body.rig.joints[j].name);
            }
        }
    }
    assert!(arm_motion > 0.3);
}
