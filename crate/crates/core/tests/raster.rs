mod common;

use std::sync::Arc;

use common::ray_mesh;
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use synthact::augment::Rng;
use synthact::exec::ExecMode;
use synthact::fixtures::{living_room, orbit_cameras, world_mesh};
use synthact::formats::Mesh;
use synthact::raster::{rasterize_frame, render_depth_sequence, RenderConfig};
use synthact::scene::{Camera, Light, LightKind, NodeRole, SceneGraph, SceneNode};

fn flat(v: [[f32; 3]; 3], rgb: [f32; 3]) -> SceneNode {
    let mut n = SceneNode::new("t", Arc::new(Mesh::from_triangles(v.to_vec(), vec![[0, 1, 2]])), NodeRole::Environment);
    n.color_override = Some(rgb);
    n
}

fn ccw(mut v: [[f32; 3]; 3]) -> [[f32; 3]; 3] {
    let area = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
    if area < 0.0 {
        v.swap(1, 2);
    }
    v
}

fn tri(z: std::ops::Range<f32>) -> impl Strategy<Value = [[f32; 3]; 3]> {
    prop::array::uniform3((-1.5f32..1.5, -1.5f32..1.5, z)).prop_map(|a| ccw(a.map(|(x, y, z)| [x, y, z])))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn nearer_fragment_wins(near in tri(0.2..1.5), far in tri(-1.5..-0.2), near_first in any::<bool>()) {
        let camera = Camera::look_at(Point3::new(0.0, 0.0, 5.0), Point3::origin(), 0.8, 1.0, 0.1, 50.0);
        let cfg = RenderConfig { resolution: 48, shadow_resolution: 64, ..Default::default() };
        let render = |nodes: Vec<SceneNode>| rasterize_frame(&SceneGraph { nodes, camera: camera.clone(), lights: vec![], ambient: [1.0; 3] }, &cfg);
        let (n, f) = (flat(near, [1.0, 0.0, 0.0]), flat(far, [0.0, 1.0, 0.0]));
        let (a, b) = (render(vec![n.clone()]), render(vec![f.clone()]));
        let both = render(if near_first { vec![n, f] } else { vec![f, n] });
        for y in 0..48 {
            for x in 0..48 {
                let expect = if a.pixel(x, y) != [0; 3] { [255, 0, 0] } else if b.pixel(x, y) != [0; 3] { [0, 255, 0] } else { [0; 3] };
                prop_assert_eq!(both.pixel(x, y), expect);
            }
        }
    }
}

fn room_scene(camera: Camera) -> SceneGraph {
    let sun = Light { kind: LightKind::Directional { direction: Vector3::new(0.3, -1.0, -0.4).normalize() }, intensity: 0.8, color: [1.0; 3] };
    SceneGraph { nodes: living_room().nodes, camera, lights: vec![sun], ambient: [0.4; 3] }
}

#[test]
fn room_depth_matches_ray_casting() {
    let cfg = RenderConfig::default();
    let cams = orbit_cameras(3, 60.0);
    let mesh = world_mesh(&living_room().nodes);
    let mut rng = Rng::new(2);
    let mut worst = 0.0f64;
    for cam in &cams {
        let depth = render_depth_sequence(&[room_scene(cam.clone())], &cfg, ExecMode::Parallel).unwrap();
        let (w, h) = (cfg.resolution as usize, cfg.resolution as usize);
        let tan = (cam.vfov / 2.0).tan();
        for _ in 0..34 {
            let (x, y) = (rng.index(w), rng.index(h));
            let nx = ((x as f64 + 0.5) / w as f64 * 2.0 - 1.0) * tan * cam.aspect;
            let ny = (1.0 - (y as f64 + 0.5) / h as f64 * 2.0) * tan;
            let dir = (cam.pose.rotation * Vector3::new(nx, ny, -1.0)).normalize();
            let t = ray_mesh(&cam.position(), &dir, &mesh).expect("closed room");
            let expect_mm = t * dir.dot(&cam.forward()) * 1000.0;
            let got = depth.frames[0][y * w + x] as f64;
            worst = worst.max((got - expect_mm).abs());
        }
    }
    assert!(worst <= 5.0, "worst depth error {worst} mm");
}

#[test]
fn rendering_is_pure_and_clamped() {
    let cam = orbit_cameras(1, 60.0).remove(0);
    let mut s = room_scene(cam);
    s.lights.push(Light { kind: LightKind::Point { position: Point3::new(0.0, 2.5, -1.0) }, intensity: 3.0, color: [1.0; 3] });
    let cfg = RenderConfig::default();
    let a = rasterize_frame(&s, &cfg);
    let b = rasterize_frame(&s, &cfg);
    assert_eq!(a, b);
    assert!(a.depth.iter().all(|d| !d.is_nan()));
    // Over-bright lighting saturates instead of wrapping.
    assert!(a.color.iter().filter(|&&c| c == 255).count() > 1000);
    let frames = vec![s.clone(); 6];
    let seq = synthact::raster::render_clip(&frames, synthact::formats::ActionLabel::Walking, "{}", &cfg, ExecMode::Sequential).unwrap();
    let par = synthact::raster::render_clip(&frames, synthact::formats::ActionLabel::Walking, "{}", &cfg, ExecMode::Parallel).unwrap();
    assert_eq!(seq, par);
}
