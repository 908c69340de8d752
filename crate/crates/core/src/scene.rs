//! Scene graph assembly: textured wall scenes, room scenes, camera orbits and
//! background recoloring.

use std::sync::Arc;

use nalgebra::{Isometry3, Matrix4, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::formats::{Mesh, Texture};
use crate::geom::yaw;
use crate::{Error, Result};

/// Perspective camera. `pose` maps camera coordinates to world; the camera
/// looks down its local -Z with +Y up.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub vfov: f64,
    pub aspect: f64,
    pub near: f64,
    pub far: f64,
    pub pose: Isometry3<f64>,
}

impl Camera {
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>, vfov: f64, aspect: f64, near: f64, far: f64) -> Camera {
        // face_towards points +Z at the target; the camera looks down -Z.
        let rot = UnitQuaternion::face_towards(&(eye - target), &Vector3::y());
        Camera { vfov, aspect, near, far, pose: Isometry3::from_parts(Translation3::from(eye.coords), rot) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vfov > 0.0 && self.vfov < std::f64::consts::PI) {
            return Err(Error::Validation(format!("vertical fov {} out of (0, π)", self.vfov)));
        }
        if !(self.near > 0.0 && self.near < self.far) || self.aspect <= 0.0 {
            return Err(Error::Validation("need 0 < near < far and positive aspect".into()));
        }
        Ok(())
    }

    /// World → camera.
    pub fn view(&self) -> Isometry3<f64> {
        self.pose.inverse()
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }

    pub fn right(&self) -> Vector3<f64> {
        self.pose.rotation * Vector3::x()
    }

    pub fn up(&self) -> Vector3<f64> {
        self.pose.rotation * Vector3::y()
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.pose.rotation * -Vector3::z()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LightKind {
    /// Direction the light travels (unit length).
    Directional { direction: Vector3<f64> },
    /// Unattenuated point light.
    Point { position: Point3<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Light {
    pub kind: LightKind,
    pub intensity: f64,
    pub color: [f32; 3],
}

impl Light {
    fn transformed(&self, iso: &Isometry3<f64>) -> Light {
        let kind = match &self.kind {
            LightKind::Directional { direction } => LightKind::Directional { direction: iso.rotation * direction },
            LightKind::Point { position } => LightKind::Point { position: iso * position },
        };
        Light { kind, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Body,
    Wall,
    Environment,
}

#[derive(Debug, Clone)]
pub struct SceneNode {
    pub name: String,
    pub mesh: Arc<Mesh>,
    pub texture: Option<Arc<Texture>>,
    /// Object → world affine transform.
    pub transform: Matrix4<f64>,
    /// Base color used when there is no texture or vertex color.
    pub albedo: [f32; 3],
    /// Flat color replacing texture and vertex colors.
    pub color_override: Option<[f32; 3]>,
    pub role: NodeRole,
    /// Whether `set_background_color` may recolor this node.
    pub colorable: bool,
    /// Whether the node is drawn into the shadow map.
    pub casts_shadow: bool,
}

impl SceneNode {
    pub fn new(name: &str, mesh: Arc<Mesh>, role: NodeRole) -> SceneNode {
        SceneNode {
            name: name.to_string(),
            mesh,
            texture: None,
            transform: Matrix4::identity(),
            albedo: [0.8, 0.8, 0.8],
            color_override: None,
            role,
            colorable: false,
            casts_shadow: role == NodeRole::Body,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneGraph {
    pub nodes: Vec<SceneNode>,
    pub camera: Camera,
    pub lights: Vec<Light>,
    pub ambient: [f32; 3],
}

impl SceneGraph {
    pub fn body_index(&self) -> Option<usize> {
        self.nodes.iter().position(|n| n.role == NodeRole::Body)
    }

    /// Origin of the body node in world space (the orbit pivot).
    pub fn body_origin(&self) -> Point3<f64> {
        self.body_index()
            .map(|i| {
                let m = &self.nodes[i].transform;
                Point3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)])
            })
            .unwrap_or_else(Point3::origin)
    }

    /// Model-view matrix (object → camera) of a node.
    pub fn model_view(&self, node: usize) -> Matrix4<f64> {
        self.camera.view().to_homogeneous() * self.nodes[node].transform
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        for n in &self.nodes {
            if n.transform.fixed_view::<3, 3>(0, 0).determinant().abs() < 1e-12 {
                return Err(Error::Validation(format!("node {} has a singular transform", n.name)));
            }
        }
        for l in &self.lights {
            if let LightKind::Directional { direction } = &l.kind {
                if (direction.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::Validation("directional light direction must be unit".into()));
                }
            }
            if l.intensity < 0.0 {
                return Err(Error::Validation("light intensity must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// Rotate one node by `deg` degrees about the vertical axis through `pivot`.
    pub fn rotate_node_about_vertical(&mut self, node: usize, deg: f64, pivot: Point3<f64>) {
        let m = about_vertical(deg, pivot).to_homogeneous();
        self.nodes[node].transform = m * self.nodes[node].transform;
    }

    /// Apply a rigid motion to the camera and every light.
    pub fn move_rig(&mut self, motion: &Isometry3<f64>) {
        self.camera.pose = motion * self.camera.pose;
        self.lights = self.lights.iter().map(|l| l.transformed(motion)).collect();
    }
}

fn about_vertical(deg: f64, pivot: Point3<f64>) -> Isometry3<f64> {
    let p = Translation3::from(pivot.coords);
    Isometry3::from(p) * Isometry3::from_parts(Translation3::identity(), yaw(deg)) * Isometry3::from(p.inverse())
}

/// Camera, lighting and wall defaults for composed scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub vfov_deg: f64,
    pub near: f64,
    pub far: f64,
    /// Fraction of the image height the reference body spans.
    pub frame_fill: f64,
    pub ambient: f32,
    pub key_light_intensity: f64,
    /// Key-light travel direction in camera coordinates.
    pub key_light_direction: [f64; 3],
    /// Extra unattenuated point light above the body in room scenes.
    pub room_point_light: f64,
    /// Distance of the background wall behind the body origin.
    pub wall_distance: f64,
    pub body_albedo: [f32; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            vfov_deg: 45.0,
            near: 0.1,
            far: 50.0,
            frame_fill: 0.75,
            ambient: 0.25,
            key_light_intensity: 0.75,
            key_light_direction: [0.35, -0.55, -1.0],
            room_point_light: 0.15,
            wall_distance: 1.5,
            body_albedo: [0.86, 0.70, 0.58],
        }
    }
}

impl SceneConfig {
    /// Camera distance at which a body of `height` fills `frame_fill` of the
    /// image height.
    pub fn framing_distance(&self, height: f64) -> f64 {
        height / (2.0 * self.frame_fill * (self.vfov_deg.to_radians() / 2.0).tan())
    }

    /// Camera in the rig frame (body origin at 0, facing +Z) framing a body
    /// of `height`, mapped into the world by `rig`.
    pub fn framed_camera(&self, height: f64, rig: &Isometry3<f64>) -> Camera {
        let d = self.framing_distance(height);
        let target = Point3::new(0.0, height / 2.0, 0.0);
        let eye = Point3::new(0.0, height / 2.0, d);
        let mut cam = Camera::look_at(eye, target, self.vfov_deg.to_radians(), 1.0, self.near, self.far);
        cam.pose = rig * cam.pose;
        cam
    }

    fn key_light(&self, camera: &Camera) -> Light {
        let d = Vector3::from(self.key_light_direction).normalize();
        Light {
            kind: LightKind::Directional { direction: camera.pose.rotation * d },
            intensity: self.key_light_intensity,
            color: [1.0; 3],
        }
    }
}

/// Placement of the body on the wall scene: translation (meters) and scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Placement { dx: 0.0, dy: 0.0, scale: 1.0 }
    }
}

impl Placement {
    /// `T(dx, dy, 0) · S(scale)`: the body is scaled about its own origin and
    /// its origin moved by `(dx, dy)`.
    pub fn matrix(&self) -> Matrix4<f64> {
        Matrix4::new_translation(&Vector3::new(self.dx, self.dy, 0.0)) * Matrix4::new_scaling(self.scale)
    }
}

/// Body in front of a textured wall.
///
/// The body is rotated by `theta_deg` about its vertical axis, then placed.
/// The camera frames a body of `reference_height` centered in the image and
/// stays fixed regardless of placement.
pub fn build_wall_scene(
    background: Option<Arc<Texture>>,
    body_mesh: Arc<Mesh>,
    theta_deg: f64,
    placement: Placement,
    reference_height: f64,
    config: &SceneConfig,
) -> Result<SceneGraph> {
    let background = background.ok_or_else(|| Error::Contract("wall scene needs a background texture".into()))?;
    if !(-90.0..=90.0).contains(&theta_deg) {
        return Err(Error::Contract(format!("rotation {theta_deg}° outside [-90°, 90°]")));
    }
    let camera = config.framed_camera(reference_height, &Isometry3::identity());
    let mut body = SceneNode::new("body", body_mesh, NodeRole::Body);
    body.transform = placement.matrix() * yaw(theta_deg).to_homogeneous();
    body.albedo = config.body_albedo;

    // Keep the wall strictly behind the deepest body point.
    let min_z = body.mesh.transformed(&body.transform).bounds().map_or(0.0, |(lo, _)| lo.z);
    let wall_z = (-config.wall_distance).min(min_z - 0.25);
    let depth = camera.position().z - wall_z;
    let half_h = (config.vfov_deg.to_radians() / 2.0).tan() * depth * 1.15;
    let half_w = half_h * camera.aspect;
    let cy = camera.position().y;
    let mut wall = SceneNode::new("wall", Arc::new(textured_quad(half_w, half_h)), NodeRole::Wall);
    wall.transform = Matrix4::new_translation(&Vector3::new(0.0, cy, wall_z));
    wall.texture = Some(background);
    wall.albedo = [1.0; 3];
    wall.colorable = true;

    let lights = vec![config.key_light(&camera)];
    Ok(SceneGraph { nodes: vec![wall, body], camera, lights, ambient: [config.ambient; 3] })
}

/// Quad in the XY plane centered at the origin, facing +Z, uv (0,0) top-left.
pub fn textured_quad(half_w: f64, half_h: f64) -> Mesh {
    let (w, h) = (half_w as f32, half_h as f32);
    let mut m = Mesh::from_triangles(
        vec![[-w, -h, 0.0], [w, -h, 0.0], [w, h, 0.0], [-w, h, 0.0]],
        vec![[0, 1, 2], [0, 2, 3]],
    );
    m.uvs = Some(vec![[0.0, 1.0], [1.0, 1.0], [1.0, 0.0], [0.0, 0.0]]);
    m
}

/// Body inserted into an environment at `anchor`; environment nodes are
/// kept as given. An anchor outside the environment bounds only warns.
pub fn build_room_scene(
    environment: &[SceneNode],
    body_mesh: Arc<Mesh>,
    anchor: &Isometry3<f64>,
    reference_height: f64,
    config: &SceneConfig,
) -> SceneGraph {
    if !anchor_inside(environment, anchor) {
        log::warn!("body anchor {:?} lies outside the environment bounds", anchor.translation.vector);
    }
    let camera = config.framed_camera(reference_height, anchor);
    let mut body = SceneNode::new("body", body_mesh, NodeRole::Body);
    body.transform = anchor.to_homogeneous();
    body.albedo = config.body_albedo;
    let mut nodes = environment.to_vec();
    nodes.push(body);
    let mut lights = vec![config.key_light(&camera)];
    if config.room_point_light > 0.0 {
        lights.push(Light {
            kind: LightKind::Point { position: anchor * Point3::new(0.0, reference_height * 1.4, 0.6) },
            intensity: config.room_point_light,
            color: [1.0; 3],
        });
    }
    SceneGraph { nodes, camera, lights, ambient: [config.ambient; 3] }
}

/// Whether the anchor origin lies inside the union bounding box of the
/// environment nodes (in world space).
pub fn anchor_inside(environment: &[SceneNode], anchor: &Isometry3<f64>) -> bool {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for n in environment {
        if let Some((a, b)) = n.mesh.transformed(&n.transform).bounds() {
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        }
    }
    let p = anchor.translation.vector;
    (0..3).all(|k| p[k] >= lo[k] - 1e-6 && p[k] <= hi[k] + 1e-6)
}

/// Rotate the camera and lights rigidly about the body's vertical axis by
/// `theta_deg`; the body itself is untouched.
pub fn orbit_camera_and_light(scene: &SceneGraph, theta_deg: f64) -> SceneGraph {
    let mut out = scene.clone();
    if theta_deg != 0.0 {
        out.move_rig(&about_vertical(theta_deg, scene.body_origin()));
    }
    out
}

/// The background palette: twelve distinct names, linear RGB.
pub const PALETTE: [(&str, [f32; 3]); 12] = [
    ("pink", [1.0, 0.75, 0.8]),
    ("purple", [0.5, 0.0, 0.5]),
    ("cyan", [0.0, 1.0, 1.0]),
    ("red", [1.0, 0.0, 0.0]),
    ("green", [0.0, 0.5, 0.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("brown", [0.55, 0.35, 0.17]),
    ("blue", [0.0, 0.0, 1.0]),
    ("offwhite", [0.96, 0.94, 0.88]),
    ("white", [1.0, 1.0, 1.0]),
    ("orange", [1.0, 0.65, 0.0]),
    ("grey", [0.5, 0.5, 0.5]),
];

pub fn palette_color(name: &str) -> Result<[f32; 3]> {
    PALETTE
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| *c)
        .ok_or_else(|| Error::Validation(format!("unknown background color `{name}`")))
}

/// Flat color override on every node marked colorable.
pub fn set_background_color(scene: &SceneGraph, color: &str) -> Result<SceneGraph> {
    let rgb = palette_color(color)?;
    let mut out = scene.clone();
    for n in out.nodes.iter_mut().filter(|n| n.colorable) {
        n.color_override = Some(rgb);
    }
    Ok(out)
}
