//! Sampling and realization of the five augmentation strategies.
//!
//! Every random value comes from [`Rng`], a ChaCha8 stream seeded per clip,
//! so a spec and everything rendered from it are reproducible from the seed
//! on any platform.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{Isometry3, Translation3, Vector3};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::body::{body_height, lbs_pose, SkinnedBody};
use crate::exec::ExecMode;
use crate::formats::{ActionLabel, Mesh, Method, MotionTake, Texture};
use crate::scene::{
    build_room_scene, build_wall_scene, orbit_camera_and_light, set_background_color, Placement, SceneConfig, SceneGraph,
    SceneNode, PALETTE,
};
use crate::{Error, Result};

pub const THETA_RANGE: (f64, f64) = (-90.0, 90.0);
pub const SCALE_RANGE: (f64, f64) = (0.7, 1.3);
pub const X_RANGE: (f64, f64) = (-0.5, 0.5);
pub const Y_RANGE: (f64, f64) = (-0.1, 0.1);
/// Number of wall backgrounds.
pub const BACKGROUND_COUNT: usize = 6;

/// Seeded random stream.
///
/// ChaCha8 keyed by the 64-bit seed (`rand_core`'s `seed_from_u64`
/// expansion). Uniform floats take the top 53 bits of a `u64`; bounded
/// integers use the high word of a 128-bit product.
#[derive(Debug, Clone)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let unit = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        lo + (hi - lo) * unit
    }

    /// Uniform in `0..n`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

/// Stable per-clip seed: the first 8 bytes (LE) of
/// SHA-256(master seed LE ‖ subject ‖ 0 ‖ action ‖ 0 ‖ method ‖ 0 ‖ k LE).
pub fn clip_seed(master: u64, subject: &str, action: ActionLabel, method: Method, k: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for part in [subject, action.as_str(), method.as_str()] {
        h.update(part.as_bytes());
        h.update([0]);
    }
    h.update((k as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Sampled parameters of one method. Angles are in degrees; `x`, `y` and
/// their endpoint variants are fractions of the body height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method")]
pub enum AugmentParams {
    #[serde(rename = "BG+R")]
    BgRotate { theta: f64, background_index: usize },
    #[serde(rename = "BG+R2T")]
    BgRescaleTranslate { background_index: usize, s: f64, x: f64, y: f64 },
    #[serde(rename = "3D+R")]
    RoomRotate { theta: f64, color_name: String },
    #[serde(rename = "3D+M")]
    RoomMotion { x1: f64, x2: f64, y1: f64, y2: f64, theta1: f64, theta2: f64 },
    #[serde(rename = "R3D+R")]
    ReconRotate { theta: f64, scene_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub seed: u64,
    #[serde(flatten)]
    pub params: AugmentParams,
}

impl AugmentSpec {
    pub fn method(&self) -> Method {
        match self.params {
            AugmentParams::BgRotate { .. } => Method::BgRotate,
            AugmentParams::BgRescaleTranslate { .. } => Method::BgRescaleTranslate,
            AugmentParams::RoomRotate { .. } => Method::RoomRotate,
            AugmentParams::RoomMotion { .. } => Method::RoomMotion,
            AugmentParams::ReconRotate { .. } => Method::ReconRotate,
        }
    }

    /// Check every field against its sampling range.
    pub fn validate(&self) -> Result<()> {
        let within = |name: &str, v: f64, (lo, hi): (f64, f64)| {
            if v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} = {v} outside [{lo}, {hi}]")))
            }
        };
        let bg = |i: usize| {
            if i < BACKGROUND_COUNT {
                Ok(())
            } else {
                Err(Error::Validation(format!("background index {i} out of range")))
            }
        };
        match &self.params {
            AugmentParams::BgRotate { theta, background_index } => {
                within("theta", *theta, THETA_RANGE)?;
                bg(*background_index)
            }
            AugmentParams::BgRescaleTranslate { background_index, s, x, y } => {
                within("s", *s, SCALE_RANGE)?;
                within("x", *x, X_RANGE)?;
                within("y", *y, Y_RANGE)?;
                bg(*background_index)
            }
            AugmentParams::RoomRotate { theta, color_name } => {
                within("theta", *theta, THETA_RANGE)?;
                crate::scene::palette_color(color_name).map(|_| ())
            }
            AugmentParams::RoomMotion { x1, x2, y1, y2, theta1, theta2 } => {
                within("x1", *x1, X_RANGE)?;
                within("x2", *x2, X_RANGE)?;
                within("y1", *y1, Y_RANGE)?;
                within("y2", *y2, Y_RANGE)?;
                within("theta1", *theta1, THETA_RANGE)?;
                within("theta2", *theta2, THETA_RANGE)
            }
            AugmentParams::ReconRotate { theta, .. } => within("theta", *theta, THETA_RANGE),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }
}

/// What a sampler may choose from beyond the fixed numeric ranges.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSpace {
    /// Identifiers of reconstructed scenes available to R3D+R.
    pub recon_scenes: Vec<String>,
}

/// Draw a spec for `method` from a fresh stream seeded with `seed`.
pub fn sample_spec(method: Method, seed: u64, space: &SampleSpace) -> Result<AugmentSpec> {
    let mut rng = Rng::new(seed);
    let params = sample_params(method, &mut rng, space)?;
    Ok(AugmentSpec { seed, params })
}

/// Draw parameters from an existing stream. Draw order is fixed per method.
pub fn sample_params(method: Method, rng: &mut Rng, space: &SampleSpace) -> Result<AugmentParams> {
    let u = |rng: &mut Rng, (lo, hi): (f64, f64)| rng.uniform(lo, hi);
    Ok(match method {
        Method::BgRotate => AugmentParams::BgRotate { theta: u(rng, THETA_RANGE), background_index: rng.index(BACKGROUND_COUNT) },
        Method::BgRescaleTranslate => AugmentParams::BgRescaleTranslate {
            background_index: rng.index(BACKGROUND_COUNT),
            s: u(rng, SCALE_RANGE),
            x: u(rng, X_RANGE),
            y: u(rng, Y_RANGE),
        },
        Method::RoomRotate => AugmentParams::RoomRotate {
            theta: u(rng, THETA_RANGE),
            color_name: PALETTE[rng.index(PALETTE.len())].0.to_string(),
        },
        Method::RoomMotion => AugmentParams::RoomMotion {
            x1: u(rng, X_RANGE),
            x2: u(rng, X_RANGE),
            y1: u(rng, Y_RANGE),
            y2: u(rng, Y_RANGE),
            theta1: u(rng, THETA_RANGE),
            theta2: u(rng, THETA_RANGE),
        },
        Method::ReconRotate => {
            if space.recon_scenes.is_empty() {
                return Err(Error::Config("R3D+R needs at least one reconstructed scene".into()));
            }
            let theta = u(rng, THETA_RANGE);
            let scene_id = space.recon_scenes[rng.index(space.recon_scenes.len())].clone();
            AugmentParams::ReconRotate { theta, scene_id }
        }
    })
}

/// Body translation `(h·x, h·y)` followed by scale `s` about the body origin.
pub fn body_placement(spec: &AugmentSpec, h: f64) -> Result<Placement> {
    match spec.params {
        AugmentParams::BgRescaleTranslate { s, x, y, .. } => {
            if h.is_nan() || h <= 0.0 {
                return Err(Error::Contract(format!("body height must be positive, got {h}")));
            }
            Ok(Placement { dx: h * x, dy: h * y, scale: s })
        }
        _ => Err(Error::Contract(format!("body placement is only defined for BG+R2T, not {}", spec.method().as_str()))),
    }
}

/// Camera state for one 3D+M frame: where the body sits relative to the
/// image center (meters) and the orbit angle (degrees).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub offset: [f64; 2],
    pub angle: f64,
}

/// Linear camera track from `(x₁h, y₁h, θ₁)` at the first frame to
/// `(x₂h, y₂h, θ₂)` at the last.
pub fn camera_track(spec: &AugmentSpec, frame_index: usize, frame_count: usize, h: f64) -> Result<TrackPoint> {
    let AugmentParams::RoomMotion { x1, x2, y1, y2, theta1, theta2 } = spec.params else {
        return Err(Error::Contract(format!("camera track is only defined for 3D+M, not {}", spec.method().as_str())));
    };
    if frame_count < 2 {
        return Err(Error::Contract(format!("camera track needs at least 2 frames, got {frame_count}")));
    }
    if frame_index >= frame_count {
        return Err(Error::Contract(format!("frame {frame_index} outside track of {frame_count}")));
    }
    let t = frame_index as f64 / (frame_count - 1) as f64;
    let lerp = |a: f64, b: f64| (1.0 - t) * a + t * b;
    Ok(TrackPoint { offset: [lerp(x1, x2) * h, lerp(y1, y2) * h], angle: lerp(theta1, theta2) })
}

/// Environment meshes plus where the body stands in them.
#[derive(Debug, Clone)]
pub struct Environment {
    pub nodes: Vec<SceneNode>,
    pub anchor: Isometry3<f64>,
}

/// Everything `realize` may draw on.
#[derive(Debug, Clone)]
pub struct AssetBundle {
    pub body: SkinnedBody,
    pub backgrounds: Vec<Arc<Texture>>,
    pub room: Option<Environment>,
    pub recon_scenes: BTreeMap<String, Environment>,
    pub scene: SceneConfig,
}

impl AssetBundle {
    pub fn sample_space(&self) -> SampleSpace {
        SampleSpace { recon_scenes: self.recon_scenes.keys().cloned().collect() }
    }
}

/// Posed body meshes at `fps`, taking the nearest take frame for each
/// output time.
pub fn posed_meshes(body: &SkinnedBody, take: &MotionTake, fps: u32, mode: ExecMode) -> Result<Vec<Arc<Mesh>>> {
    take.validate()?;
    let count = ((take.duration_secs() * fps as f64).round() as usize).max(1);
    let idx: Vec<usize> = (0..count)
        .map(|k| ((k as f64 * take.fps / fps as f64).round() as usize).min(take.frames.len() - 1))
        .collect();
    mode.map(&idx, |&i| lbs_pose(body, &take.frames[i]).map(Arc::new)).into_iter().collect()
}

/// A realized clip: one scene per frame and the body height used.
#[derive(Debug, Clone)]
pub struct Realization {
    pub scenes: Vec<SceneGraph>,
    pub body_height: f64,
}

/// Build the per-frame scenes for `spec`.
pub fn realize(spec: &AugmentSpec, assets: &AssetBundle, take: &MotionTake, fps: u32, mode: ExecMode) -> Result<Realization> {
    spec.validate()?;
    let meshes = posed_meshes(&assets.body, take, fps, mode)?;
    let h = body_height(&meshes[0])?;
    let cfg = &assets.scene;
    let background = |i: usize| {
        assets
            .backgrounds
            .get(i)
            .cloned()
            .ok_or_else(|| Error::MissingAsset(format!("background image #{i} ({} loaded)", assets.backgrounds.len())))
    };
    let room = || assets.room.as_ref().ok_or_else(|| Error::MissingAsset("room environment".into()));
    let n = meshes.len();
    let scenes: Vec<Result<SceneGraph>> = match &spec.params {
        AugmentParams::BgRotate { theta, background_index } => {
            let bg = background(*background_index)?;
            mode.map(&meshes, |m| build_wall_scene(Some(bg.clone()), m.clone(), *theta, Placement::default(), h, cfg))
        }
        AugmentParams::BgRescaleTranslate { background_index, .. } => {
            let bg = background(*background_index)?;
            let placement = body_placement(spec, h)?;
            mode.map(&meshes, |m| build_wall_scene(Some(bg.clone()), m.clone(), 0.0, placement, h, cfg))
        }
        AugmentParams::RoomRotate { theta, color_name } => {
            let env = room()?;
            mode.map(&meshes, |m| {
                let s = build_room_scene(&env.nodes, m.clone(), &env.anchor, h, cfg);
                Ok(orbit_camera_and_light(&set_background_color(&s, color_name)?, *theta))
            })
        }
        AugmentParams::RoomMotion { .. } => {
            let env = room()?;
            let frames: Vec<(usize, &Arc<Mesh>)> = meshes.iter().enumerate().collect();
            mode.map(&frames, |&(i, m)| {
                let s = build_room_scene(&env.nodes, m.clone(), &env.anchor, h, cfg);
                let track = camera_track(spec, i, n.max(2), h)?;
                Ok(displace_rig(&orbit_camera_and_light(&s, track.angle), track.offset))
            })
        }
        AugmentParams::ReconRotate { theta, scene_id } => {
            let env = assets
                .recon_scenes
                .get(scene_id)
                .ok_or_else(|| Error::MissingAsset(format!("reconstructed scene `{scene_id}`")))?;
            mode.map(&meshes, |m| Ok(orbit_camera_and_light(&build_room_scene(&env.nodes, m.clone(), &env.anchor, h, cfg), *theta)))
        }
    };
    Ok(Realization { scenes: scenes.into_iter().collect::<Result<_>>()?, body_height: h })
}

/// Move camera and lights so the body appears `offset` meters right of and
/// above the image center: the rig moves the opposite way along the camera's
/// horizontal axis and the world vertical.
pub fn displace_rig(scene: &SceneGraph, offset: [f64; 2]) -> SceneGraph {
    let right = scene.camera.right();
    let right = Vector3::new(right.x, 0.0, right.z).try_normalize(1e-12).unwrap_or(Vector3::x());
    let shift = -(right * offset[0] + Vector3::y() * offset[1]);
    let mut out = scene.clone();
    out.move_rig(&Isometry3::from_parts(Translation3::from(shift), Default::default()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> SampleSpace {
        SampleSpace { recon_scenes: vec!["a".into(), "b".into()] }
    }

    #[test]
    fn same_seed_same_spec() {
        for m in Method::ALL {
            assert_eq!(sample_spec(m, 42, &space()).unwrap(), sample_spec(m, 42, &space()).unwrap());
        }
        assert_ne!(sample_spec(Method::BgRotate, 1, &space()).unwrap(), sample_spec(Method::BgRotate, 2, &space()).unwrap());
    }

    #[test]
    fn specs_in_range() {
        for seed in 0..2000 {
            for m in Method::ALL {
                let s = sample_spec(m, seed, &space()).unwrap();
                s.validate().unwrap();
                assert_eq!(s.method(), m);
            }
        }
    }

    #[test]
    fn recon_without_scenes_is_config_error() {
        assert!(matches!(sample_spec(Method::ReconRotate, 0, &SampleSpace::default()), Err(Error::Config(_))));
    }

    #[test]
    fn spec_json_round_trip() {
        for m in Method::ALL {
            let s = sample_spec(m, 9, &space()).unwrap();
            let back: AugmentSpec = serde_json::from_str(&s.to_json()).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn placement_formula() {
        let spec = |s, x, y| AugmentSpec { seed: 0, params: AugmentParams::BgRescaleTranslate { background_index: 0, s, x, y } };
        assert_eq!(body_placement(&spec(1.0, 0.0, 0.0), 1.7).unwrap(), Placement::default());
        let p = body_placement(&spec(1.1, 0.5, 0.1), 1.7).unwrap();
        assert!((p.dx - 0.85).abs() < 1e-12 && (p.dy - 0.17).abs() < 1e-12 && p.scale == 1.1);
        assert_eq!(body_placement(&spec(1.0, -0.5, 0.0), 2.0).unwrap().dx, -1.0);
        let other = AugmentSpec { seed: 0, params: AugmentParams::BgRotate { theta: 0.0, background_index: 0 } };
        assert!(matches!(body_placement(&other, 1.7), Err(Error::Contract(_))));
    }

    #[test]
    fn track_endpoints_and_midpoint() {
        let spec = AugmentSpec {
            seed: 0,
            params: AugmentParams::RoomMotion { x1: 0.3, x2: -0.2, y1: 0.05, y2: -0.07, theta1: -40.0, theta2: 65.0 },
        };
        let h = 1.7;
        let a = camera_track(&spec, 0, 51, h).unwrap();
        assert_eq!(a.offset, [0.3 * h, 0.05 * h]);
        assert_eq!(a.angle, -40.0);
        let b = camera_track(&spec, 50, 51, h).unwrap();
        assert_eq!(b.offset, [-0.2 * h, -0.07 * h]);
        assert_eq!(b.angle, 65.0);
        let m = camera_track(&spec, 25, 51, h).unwrap();
        assert!((m.angle - (a.angle + b.angle) / 2.0).abs() < 1e-9);
        assert!((m.offset[0] - (a.offset[0] + b.offset[0]) / 2.0).abs() < 1e-9);
        assert!(camera_track(&spec, 0, 1, h).is_err());
        assert!(camera_track(&spec, 51, 51, h).is_err());
    }

    #[test]
    fn bounded_index_is_uniform_enough() {
        let mut rng = Rng::new(5);
        let mut counts = [0usize; 6];
        for _ in 0..60_000 {
            counts[rng.index(6)] += 1;
        }
        assert!(counts.iter().all(|&c| (9_500..10_500).contains(&c)), "{counts:?}");
    }

    #[test]
    fn clip_seeds_differ_by_every_component() {
        let base = clip_seed(1, "s01", ActionLabel::Walking, Method::BgRotate, 0);
        assert_eq!(base, clip_seed(1, "s01", ActionLabel::Walking, Method::BgRotate, 0));
        assert_ne!(base, clip_seed(2, "s01", ActionLabel::Walking, Method::BgRotate, 0));
        assert_ne!(base, clip_seed(1, "s02", ActionLabel::Walking, Method::BgRotate, 0));
        assert_ne!(base, clip_seed(1, "s01", ActionLabel::HandWaving, Method::BgRotate, 0));
        assert_ne!(base, clip_seed(1, "s01", ActionLabel::Walking, Method::RoomMotion, 0));
        assert_ne!(base, clip_seed(1, "s01", ActionLabel::Walking, Method::BgRotate, 1));
    }
}
