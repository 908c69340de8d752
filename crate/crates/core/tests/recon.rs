mod common;

use std::time::Instant;

use common::{distance_to_mesh, p3};
use nalgebra::Point3;
use synthact::exec::ExecMode;
use synthact::fixtures::synthetic_orbit;
use synthact::geom::rigid_fit;
use synthact::recon::{absolute_trajectory_error, reconstruct, ReconConfig};

#[test]
fn orbit_round_trip() {
    let start = Instant::now();
    let data = synthetic_orbit(100, 224, ExecMode::Parallel).unwrap();
    let rendered = start.elapsed();
    let out = reconstruct(&data.frames, &ReconConfig::default(), ExecMode::Parallel).unwrap();
    let ate = absolute_trajectory_error(&out.trajectory, &data.poses).unwrap();
    let est: Vec<Point3<f64>> = out.trajectory.iter().map(|p| Point3::from(p.translation.vector)).collect();
    let gt: Vec<Point3<f64>> = data.poses.iter().map(|p| Point3::from(p.translation.vector)).collect();
    let align = rigid_fit(&est, &gt).unwrap();
    let step = (out.mesh.vertices.len() / 3000).max(1);
    let d: Vec<f64> = out.mesh.vertices.iter().step_by(step).map(|v| distance_to_mesh(&(align * p3(*v)), &data.mesh)).collect();
    let rms = (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt();
    eprintln!("render {rendered:?} total {:?} ate {ate:.4} rms {rms:.4} report {:?}", start.elapsed(), out.report);
    assert!(ate < 0.02, "ATE {ate}");
    assert!(rms < 0.04, "mesh RMS {rms}");
}

#[test]
fn tsdf_is_order_independent() {
    use synthact::recon::{integrate_tsdf, TsdfConfig};
    let data = synthetic_orbit(12, 96, ExecMode::Parallel).unwrap();
    let cfg = TsdfConfig::default();
    let forward = integrate_tsdf(&data.frames, &data.poses, &cfg, ExecMode::Parallel).unwrap();
    let order = [7usize, 2, 11, 0, 5, 9, 1, 10, 3, 8, 6, 4];
    let frames: Vec<_> = order.iter().map(|&i| data.frames[i].clone()).collect();
    let poses: Vec<_> = order.iter().map(|&i| data.poses[i]).collect();
    let shuffled = integrate_tsdf(&frames, &poses, &cfg, ExecMode::Sequential).unwrap();
    assert_eq!(forward.blocks.len(), shuffled.blocks.len());
    let mut worst = 0.0f32;
    for (g, v) in forward.observed() {
        let u = shuffled.voxel(g).unwrap();
        assert_eq!(u.weight, v.weight);
        worst = worst.max((u.sdf - v.sdf).abs());
    }
    assert!(worst < 1e-6, "{worst}");
}
