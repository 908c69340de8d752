//! Deterministic software rasterizer.
//!
//! Triangles are clipped against the near plane, snapped to a 1/256-pixel
//! grid and filled with edge functions under the top-left rule, so coverage
//! does not depend on evaluation order or platform. Attributes are
//! interpolated perspective-correctly. Shading is Lambertian with ambient
//! light; the first directional light is shadowed through a shadow map
//! rendered from the shadow-casting nodes.

use nalgebra::{Isometry3, Matrix3, Point3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::exec::ExecMode;
use crate::formats::{to_v3, ActionLabel, ClipContainer, Mesh, Texture};
use crate::scene::{Camera, LightKind, SceneGraph, SceneNode};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Square output size in pixels.
    pub resolution: u32,
    pub fps: u32,
    /// Render at 2× and box-filter down.
    pub supersample: bool,
    /// Shadow map side (power of two).
    pub shadow_resolution: u32,
    /// Color of pixels no triangle covers.
    pub clear_color: [u8; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { resolution: 224, fps: 25, supersample: false, shadow_resolution: 1024, clear_color: [0, 0, 0] }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.fps == 0 {
            return Err(Error::Config("resolution and fps must be positive".into()));
        }
        if !self.shadow_resolution.is_power_of_two() {
            return Err(Error::Config(format!("shadow resolution {} is not a power of two", self.shadow_resolution)));
        }
        Ok(())
    }
}

/// Color plus view-space depth (meters along the view axis, `+inf` where
/// nothing was drawn).
#[derive(Debug, Clone, PartialEq)]
pub struct Framebuffer {
    pub width: u32,
    pub height: u32,
    pub color: Vec<u8>,
    pub depth: Vec<f32>,
}

impl Framebuffer {
    pub fn new(width: u32, height: u32, clear: [u8; 3]) -> Framebuffer {
        let n = width as usize * height as usize;
        Framebuffer {
            width,
            height,
            color: clear.iter().copied().cycle().take(n * 3).collect(),
            depth: vec![f32::INFINITY; n],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y * self.width + x) as usize * 3;
        [self.color[i], self.color[i + 1], self.color[i + 2]]
    }

    pub fn depth_at(&self, x: u32, y: u32) -> f32 {
        self.depth[(y * self.width + x) as usize]
    }

    fn downsample2(&self) -> Framebuffer {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = Framebuffer::new(w, h, [0; 3]);
        for y in 0..h {
            for x in 0..w {
                let taps = [(2 * x, 2 * y), (2 * x + 1, 2 * y), (2 * x, 2 * y + 1), (2 * x + 1, 2 * y + 1)];
                let o = (y * w + x) as usize;
                for c in 0..3 {
                    let s: u32 = taps.iter().map(|&(a, b)| self.pixel(a, b)[c] as u32).sum();
                    out.color[o * 3 + c] = ((s + 2) / 4) as u8;
                }
                out.depth[o] = taps.iter().map(|&(a, b)| self.depth_at(a, b)).fold(f32::INFINITY, f32::min);
            }
        }
        out
    }
}

/// Pinhole intrinsics in pixel-index coordinates (pixel centers at integers).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn from_camera(camera: &Camera, width: u32, height: u32) -> Intrinsics {
        let t = (camera.vfov / 2.0).tan();
        Intrinsics {
            width,
            height,
            fx: width as f64 / (2.0 * camera.aspect * t),
            fy: height as f64 / (2.0 * t),
            cx: width as f64 / 2.0 - 0.5,
            cy: height as f64 / 2.0 - 0.5,
        }
    }
}

/// Depth maps in millimeters (0 = no surface) with their intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSequence {
    pub intrinsics: Intrinsics,
    pub frames: Vec<Vec<u16>>,
}

/// Project a world point: continuous pixel coordinates with (0,0) at the
/// top-left image corner, and view depth (distance along the view axis).
pub fn project(camera: &Camera, point: &Point3<f64>, width: u32, height: u32) -> (f64, f64, f64) {
    let p = camera.view() * point;
    let f = 1.0 / (camera.vfov / 2.0).tan();
    let w = -p.z;
    let nx = f / camera.aspect * p.x / w;
    let ny = f * p.y / w;
    ((nx + 1.0) * 0.5 * width as f64, (1.0 - ny) * 0.5 * height as f64, w)
}

/// Inverse of [`project`].
pub fn unproject(camera: &Camera, px: f64, py: f64, depth: f64, width: u32, height: u32) -> Point3<f64> {
    let f = 1.0 / (camera.vfov / 2.0).tan();
    let nx = px / width as f64 * 2.0 - 1.0;
    let ny = 1.0 - py / height as f64 * 2.0;
    let p = Point3::new(nx * camera.aspect / f * depth, ny / f * depth, -depth);
    camera.pose * p
}

/// Per-vertex data after transformation, carried through clipping.
#[derive(Debug, Clone, Copy)]
struct ClipVertex {
    view: Vector3<f64>,
    world: Vector3<f64>,
    normal: Vector3<f64>,
    uv: Vector2<f64>,
    color: Vector3<f64>,
}

impl ClipVertex {
    fn lerp(&self, o: &ClipVertex, t: f64) -> ClipVertex {
        ClipVertex {
            view: self.view.lerp(&o.view, t),
            world: self.world.lerp(&o.world, t),
            normal: self.normal.lerp(&o.normal, t),
            uv: self.uv.lerp(&o.uv, t),
            color: self.color.lerp(&o.color, t),
        }
    }
}

/// Keep the part of a triangle with `z <= -near`.
fn clip_near(tri: [ClipVertex; 3], near: f64) -> Vec<ClipVertex> {
    let inside = |v: &ClipVertex| v.view.z <= -near;
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let (a, b) = (&tri[i], &tri[(i + 1) % 3]);
        match (inside(a), inside(b)) {
            (true, true) => out.push(*b),
            (true, false) | (false, true) => {
                let t = (-near - a.view.z) / (b.view.z - a.view.z);
                out.push(a.lerp(b, t));
                if inside(b) {
                    out.push(*b);
                }
            }
            (false, false) => {}
        }
    }
    out
}

const SUBPIXEL: f64 = 256.0;

fn snap(x: f64) -> f64 {
    (x * SUBPIXEL).round() / SUBPIXEL
}

/// Screen-space triangle ready for scan conversion.
struct ScreenTri {
    p: [Vector2<f64>; 3],
    inv_w: [f64; 3],
}

/// Visit covered pixel centers of a snapped triangle under the top-left
/// rule, calling `f(x, y, [b0, b1, b2])` with screen-space barycentrics.
fn scan(tri: &ScreenTri, width: u32, height: u32, mut f: impl FnMut(u32, u32, [f64; 3])) {
    let [a, b, c] = tri.p;
    let edge = |p: &Vector2<f64>, q: &Vector2<f64>, x: f64, y: f64| (q.x - p.x) * (y - p.y) - (q.y - p.y) * (x - p.x);
    let area = edge(&a, &b, c.x, c.y);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    let sign = area.signum();
    // An edge owns the pixels exactly on it when the interior lies to its
    // right (left edge) or below it (top edge).
    let owns = |p: &Vector2<f64>, q: &Vector2<f64>| {
        let nx = -(q.y - p.y) * sign;
        let ny = (q.x - p.x) * sign;
        nx > 0.0 || (nx == 0.0 && ny > 0.0)
    };
    let edges = [(b, c), (c, a), (a, b)];
    let own = edges.map(|(p, q)| owns(&p, &q));
    let min_x = a.x.min(b.x).min(c.x).floor().max(0.0) as i64;
    let max_x = (a.x.max(b.x).max(c.x).ceil() as i64).min(width as i64 - 1);
    let min_y = a.y.min(b.y).min(c.y).floor().max(0.0) as i64;
    let max_y = (a.y.max(b.y).max(c.y).ceil() as i64).min(height as i64 - 1);
    for y in min_y..=max_y {
        let py = y as f64 + 0.5;
        for x in min_x..=max_x {
            let px = x as f64 + 0.5;
            let mut w = [0.0; 3];
            let mut inside = true;
            for k in 0..3 {
                let (p, q) = edges[k];
                let e = edge(&p, &q, px, py) * sign;
                if e < 0.0 || (e == 0.0 && !own[k]) {
                    inside = false;
                    break;
                }
                w[k] = e;
            }
            if inside {
                let s = area.abs();
                f(x as u32, y as u32, [w[0] / s, w[1] / s, w[2] / s]);
            }
        }
    }
}

/// Orthographic depth map seen from a directional light.
struct ShadowMap {
    size: u32,
    /// World → light space (light travels along -Z).
    view: Isometry3<f64>,
    min: Vector2<f64>,
    texel: f64,
    depth: Vec<f32>,
}

impl ShadowMap {
    fn build(scene: &SceneGraph, direction: &Vector3<f64>, size: u32) -> Option<ShadowMap> {
        let casters: Vec<&SceneNode> = scene.nodes.iter().filter(|n| n.casts_shadow).collect();
        if casters.is_empty() {
            return None;
        }
        let up = if direction.y.abs() > 0.99 { Vector3::z() } else { Vector3::y() };
        let rot = UnitQuaternion::face_towards(&-direction, &up);
        let view = Isometry3::from_parts(Default::default(), rot).inverse();
        let mut lo = Vector2::repeat(f64::INFINITY);
        let mut hi = Vector2::repeat(f64::NEG_INFINITY);
        let light_verts: Vec<Vec<Vector3<f64>>> = casters
            .iter()
            .map(|n| {
                n.mesh
                    .vertices
                    .iter()
                    .map(|v| {
                        let w = n.transform.transform_point(&Point3::from(to_v3(*v)));
                        let l = (view * w).coords;
                        lo = lo.inf(&l.xy());
                        hi = hi.sup(&l.xy());
                        l
                    })
                    .collect()
            })
            .collect();
        let extent = (hi - lo).max() * 1.02 + 1e-6;
        let texel = extent / size as f64;
        let min = (lo + hi) / 2.0 - Vector2::repeat(extent / 2.0);
        let mut map = ShadowMap { size, view, min, texel, depth: vec![f32::INFINITY; (size * size) as usize] };
        for (node, verts) in casters.iter().zip(&light_verts) {
            for t in &node.mesh.triangles {
                let pts = t.map(|i| verts[i as usize]);
                let tri = ScreenTri {
                    p: pts.map(|p| Vector2::new(snap((p.x - min.x) / texel), snap((min.y + extent - p.y) / texel))),
                    inv_w: [1.0; 3],
                };
                let d = pts.map(|p| -p.z);
                scan(&tri, size, size, |x, y, b| {
                    let z = (b[0] * d[0] + b[1] * d[1] + b[2] * d[2]) as f32;
                    let i = (y * size + x) as usize;
                    if z < map.depth[i] {
                        map.depth[i] = z;
                    }
                });
            }
        }
        Some(map)
    }

    /// Whether a world point is lit (not behind a caster).
    fn lit(&self, world: &Vector3<f64>, n_dot_l: f64) -> bool {
        let l = self.view * Point3::from(*world);
        let extent = self.texel * self.size as f64;
        let u = (l.x - self.min.x) / self.texel;
        let v = (self.min.y + extent - l.y) / self.texel;
        if u < 0.0 || v < 0.0 || u >= self.size as f64 || v >= self.size as f64 {
            return true;
        }
        let stored = self.depth[(v as u32 * self.size + u as u32) as usize];
        if !stored.is_finite() {
            return true;
        }
        // Slope-scaled bias.
        let tan = (1.0 - n_dot_l * n_dot_l).max(0.0).sqrt() / n_dot_l.max(0.05);
        let bias = self.texel * (1.5 + 2.0 * tan.min(10.0));
        -l.z - bias <= stored as f64
    }
}

struct NodeShading<'a> {
    texture: Option<&'a Texture>,
    albedo: [f32; 3],
    color_override: Option<[f32; 3]>,
    has_uv: bool,
    has_color: bool,
}

/// Render one frame at the configured resolution.
pub fn rasterize_frame(scene: &SceneGraph, config: &RenderConfig) -> Framebuffer {
    if config.supersample {
        let big = render_at(scene, config, config.resolution * 2);
        return big.downsample2();
    }
    render_at(scene, config, config.resolution)
}

fn render_at(scene: &SceneGraph, config: &RenderConfig, size: u32) -> Framebuffer {
    let (width, height) = (size, (size as f64 / scene.camera.aspect).round() as u32);
    let mut fb = Framebuffer::new(width, height, config.clear_color);
    let cam = &scene.camera;
    let view = cam.view();
    let eye = cam.position().coords;
    let f = 1.0 / (cam.vfov / 2.0).tan();

    let shadow_light = scene.lights.iter().position(|l| matches!(l.kind, LightKind::Directional { .. }));
    let shadow = shadow_light.and_then(|i| match &scene.lights[i].kind {
        LightKind::Directional { direction } => ShadowMap::build(scene, direction, config.shadow_resolution),
        LightKind::Point { .. } => None,
    });

    for node in &scene.nodes {
        let mesh: &Mesh = &node.mesh;
        let model = node.transform;
        let lin: Matrix3<f64> = model.fixed_view::<3, 3>(0, 0).into_owned();
        let nmat = lin.try_inverse().map(|m| m.transpose()).unwrap_or(lin);
        let shading = NodeShading {
            texture: node.texture.as_deref(),
            albedo: node.albedo,
            color_override: node.color_override,
            has_uv: mesh.uvs.is_some(),
            has_color: mesh.colors.is_some(),
        };
        let verts: Vec<ClipVertex> = (0..mesh.vertices.len())
            .map(|i| {
                let world = model.transform_point(&Point3::from(to_v3(mesh.vertices[i])));
                let n = mesh.normals.get(i).map_or(Vector3::y(), |n| nmat * to_v3(*n));
                ClipVertex {
                    view: (view * world).coords,
                    world: world.coords,
                    normal: n,
                    uv: mesh.uvs.as_ref().map_or(Vector2::zeros(), |u| Vector2::new(u[i][0] as f64, u[i][1] as f64)),
                    color: mesh.colors.as_ref().map_or(Vector3::zeros(), |c| {
                        Vector3::new(c[i][0] as f64, c[i][1] as f64, c[i][2] as f64) / 255.0
                    }),
                }
            })
            .collect();

        for t in &mesh.triangles {
            let tri = t.map(|i| verts[i as usize]);
            if tri.iter().all(|v| -v.view.z > cam.far) {
                continue;
            }
            let poly = clip_near(tri, cam.near);
            for k in 1..poly.len().saturating_sub(1) {
                let pv = [poly[0], poly[k], poly[k + 1]];
                let screen = pv.map(|v| {
                    let w = -v.view.z;
                    let sx = (f / cam.aspect * v.view.x / w + 1.0) * 0.5 * width as f64;
                    let sy = (1.0 - f * v.view.y / w) * 0.5 * height as f64;
                    Vector2::new(snap(sx), snap(sy))
                });
                let st = ScreenTri { p: screen, inv_w: pv.map(|v| 1.0 / -v.view.z) };
                scan(&st, width, height, |x, y, b| {
                    let pb = [b[0] * st.inv_w[0], b[1] * st.inv_w[1], b[2] * st.inv_w[2]];
                    let inv = pb[0] + pb[1] + pb[2];
                    let depth = 1.0 / inv;
                    let idx = (y * width + x) as usize;
                    if !(depth >= cam.near && depth <= cam.far) || depth as f32 >= fb.depth[idx] {
                        return;
                    }
                    let wgt = [pb[0] / inv, pb[1] / inv, pb[2] / inv];
                    let interp = |g: &dyn Fn(&ClipVertex) -> Vector3<f64>| g(&pv[0]) * wgt[0] + g(&pv[1]) * wgt[1] + g(&pv[2]) * wgt[2];
                    let world = interp(&|v| v.world);
                    let mut n = interp(&|v| v.normal);
                    let len = n.norm();
                    n = if len > 1e-12 { n / len } else { Vector3::y() };
                    if n.dot(&(eye - world)) < 0.0 {
                        n = -n;
                    }
                    let albedo = if let Some(c) = shading.color_override {
                        Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64)
                    } else if let (Some(tex), true) = (shading.texture, shading.has_uv) {
                        let uv = pv[0].uv * wgt[0] + pv[1].uv * wgt[1] + pv[2].uv * wgt[2];
                        let s = tex.sample(uv.x, uv.y);
                        Vector3::new(s[0] as f64, s[1] as f64, s[2] as f64)
                    } else if shading.has_color {
                        interp(&|v| v.color)
                    } else {
                        let c = shading.albedo;
                        Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64)
                    };
                    let mut light = Vector3::new(scene.ambient[0] as f64, scene.ambient[1] as f64, scene.ambient[2] as f64);
                    for (li, l) in scene.lights.iter().enumerate() {
                        let dir = match &l.kind {
                            LightKind::Directional { direction } => -direction,
                            LightKind::Point { position } => (position.coords - world).normalize(),
                        };
                        let ndl = n.dot(&dir);
                        if ndl <= 0.0 {
                            continue;
                        }
                        if Some(li) == shadow_light {
                            if let Some(sm) = &shadow {
                                if !sm.lit(&world, ndl) {
                                    continue;
                                }
                            }
                        }
                        let c = Vector3::new(l.color[0] as f64, l.color[1] as f64, l.color[2] as f64);
                        light += c * (ndl * l.intensity);
                    }
                    let rgb = albedo.component_mul(&light);
                    fb.depth[idx] = depth as f32;
                    for c in 0..3 {
                        fb.color[idx * 3 + c] = (rgb[c].clamp(0.0, 1.0) * 255.0).round() as u8;
                    }
                });
            }
        }
    }
    fb
}

/// Render every scene into a clip at the configured fps.
pub fn render_clip(
    scenes: &[SceneGraph],
    label: ActionLabel,
    provenance: &str,
    config: &RenderConfig,
    mode: ExecMode,
) -> Result<ClipContainer> {
    if scenes.is_empty() {
        return Err(Error::Contract("cannot render an empty scene sequence".into()));
    }
    config.validate()?;
    let frames = mode.map(scenes, |s| rasterize_frame(s, config));
    let (width, height) = (frames[0].width, frames[0].height);
    if frames.iter().any(|f| f.width != width || f.height != height) {
        return Err(Error::Contract("scenes produce different frame sizes".into()));
    }
    Ok(ClipContainer {
        width,
        height,
        fps: config.fps,
        label,
        provenance: provenance.to_string(),
        frames: frames.into_iter().map(|f| f.color).collect(),
    })
}

/// View depth in millimeters; 0 where nothing was drawn.
pub fn depth_to_mm(fb: &Framebuffer) -> Vec<u16> {
    fb.depth
        .iter()
        .map(|&d| if d.is_finite() { (d as f64 * 1000.0).round().clamp(1.0, 65535.0) as u16 } else { 0 })
        .collect()
}

/// Render depth maps (u16 millimeters) for a scene sequence.
pub fn render_depth_sequence(scenes: &[SceneGraph], config: &RenderConfig, mode: ExecMode) -> Result<DepthSequence> {
    let first = scenes.first().ok_or_else(|| Error::Contract("empty scene sequence".into()))?;
    if let Some(s) = scenes.iter().find(|s| s.camera.far >= 65.535) {
        return Err(Error::Config(format!("far plane {} m overflows u16 millimeters", s.camera.far)));
    }
    let cfg = RenderConfig { supersample: false, ..config.clone() };
    let frames = mode.map(scenes, |s| depth_to_mm(&rasterize_frame(s, &cfg)));
    let height = (cfg.resolution as f64 / first.camera.aspect).round() as u32;
    Ok(DepthSequence { intrinsics: Intrinsics::from_camera(&first.camera, cfg.resolution, height), frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Light, NodeRole};
    use std::sync::Arc;

    fn camera() -> Camera {
        Camera::look_at(Point3::new(0.0, 0.0, 5.0), Point3::origin(), 45f64.to_radians(), 1.0, 0.1, 50.0)
    }

    fn quad_at(z: f32, half: f32) -> Mesh {
        Mesh::from_triangles(
            vec![[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
    }

    fn scene(nodes: Vec<SceneNode>, lights: Vec<Light>, ambient: f32) -> SceneGraph {
        SceneGraph { nodes, camera: camera(), lights, ambient: [ambient; 3] }
    }

    #[test]
    fn axis_projects_to_center() {
        let (x, y, d) = project(&camera(), &Point3::new(0.0, 0.0, 2.0), 224, 224);
        assert!((x - 112.0).abs() < 1e-9 && (y - 112.0).abs() < 1e-9);
        assert!((d - 3.0).abs() < 1e-12);
    }

    #[test]
    fn top_edge_projects_to_row_zero() {
        let d = 4.0;
        let top = Point3::new(0.0, d * (22.5f64).to_radians().tan(), 5.0 - d);
        let (_, y, _) = project(&camera(), &top, 224, 224);
        assert!(y.abs() < 0.5);
    }

    #[test]
    fn facing_quad_under_perpendicular_light_is_white() {
        let mut node = SceneNode::new("q", Arc::new(quad_at(0.0, 1.0)), NodeRole::Environment);
        node.albedo = [1.0; 3];
        let light = Light { kind: LightKind::Directional { direction: -Vector3::z() }, intensity: 1.0, color: [1.0; 3] };
        let fb = rasterize_frame(&scene(vec![node], vec![light], 0.0), &RenderConfig::default());
        assert_eq!(fb.pixel(112, 112), [255, 255, 255]);
        assert_eq!(fb.pixel(0, 0), [0, 0, 0]);
        assert!(fb.depth_at(0, 0).is_infinite());
    }

    #[test]
    fn near_triangle_wins() {
        let mut near = SceneNode::new("near", Arc::new(quad_at(1.0, 0.5)), NodeRole::Environment);
        near.color_override = Some([1.0, 0.0, 0.0]);
        let mut far = SceneNode::new("far", Arc::new(quad_at(-1.0, 0.5)), NodeRole::Environment);
        far.color_override = Some([0.0, 0.0, 1.0]);
        for nodes in [vec![near.clone(), far.clone()], vec![far, near]] {
            let fb = rasterize_frame(&scene(nodes, vec![], 1.0), &RenderConfig::default());
            assert_eq!(fb.pixel(112, 112), [255, 0, 0]);
        }
    }

    #[test]
    fn shared_edge_covers_each_pixel_once() {
        // Two triangles sharing a diagonal: every pixel of the quad is hit
        // exactly once under the top-left rule.
        let m = quad_at(0.0, 1.0);
        let mut hits = vec![0u8; 224 * 224];
        for t in &m.triangles {
            let p = t.map(|i| {
                let (x, y, _) = project(&camera(), &Point3::from(to_v3(m.vertices[i as usize])), 224, 224);
                Vector2::new(snap(x), snap(y))
            });
            scan(&ScreenTri { p, inv_w: [1.0; 3] }, 224, 224, |x, y, _| hits[(y * 224 + x) as usize] += 1);
        }
        assert!(hits.iter().all(|&h| h <= 1));
        assert!(hits.iter().filter(|&&h| h == 1).count() > 1000);
    }

    #[test]
    fn unproject_inverts_project() {
        let cam = Camera::look_at(Point3::new(1.0, 2.0, 3.0), Point3::new(0.0, 0.5, 0.0), 0.9, 1.0, 0.1, 50.0);
        for k in 0..50 {
            let f = k as f64;
            let p = Point3::new((f * 0.37).sin(), 0.5 + (f * 0.11).cos(), (f * 0.73).sin() * 0.5);
            let (x, y, d) = project(&cam, &p, 224, 224);
            let back = unproject(&cam, x, y, d, 224, 224);
            assert!((back - p).norm() < 1e-4);
        }
    }

    #[test]
    fn depth_of_wall_at_two_meters() {
        let mut s = scene(vec![SceneNode::new("w", Arc::new(quad_at(3.0, 5.0)), NodeRole::Environment)], vec![], 1.0);
        s.camera.far = 20.0;
        let d = render_depth_sequence(&[s.clone()], &RenderConfig::default(), ExecMode::Sequential).unwrap();
        let center = d.frames[0][112 * 224 + 112] as i32;
        assert!((center - 2000).abs() <= 1);
        s.nodes.clear();
        let d = render_depth_sequence(&[s.clone()], &RenderConfig::default(), ExecMode::Sequential).unwrap();
        assert!(d.frames[0].iter().all(|&v| v == 0));
        s.camera.far = 70.0;
        assert!(matches!(render_depth_sequence(&[s], &RenderConfig::default(), ExecMode::Sequential), Err(Error::Config(_))));
    }

    #[test]
    fn clip_rendering_contract() {
        assert!(render_clip(&[], ActionLabel::Walking, "", &RenderConfig::default(), ExecMode::Sequential).is_err());
        let s = scene(vec![SceneNode::new("q", Arc::new(quad_at(0.0, 1.0)), NodeRole::Environment)], vec![], 0.5);
        let scenes = vec![s; 50];
        let clip = render_clip(&scenes, ActionLabel::Walking, "{}", &RenderConfig::default(), ExecMode::Parallel).unwrap();
        assert_eq!(clip.frames.len(), 50);
        assert_eq!(clip.fps, 25);
        assert_eq!(clip.frames.len() as f64 / clip.fps as f64, 2.0);
        assert!(clip.frames.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn supersampling_keeps_size() {
        let mut node = SceneNode::new("q", Arc::new(quad_at(0.0, 1.0)), NodeRole::Environment);
        node.albedo = [1.0; 3];
        let s = scene(vec![node], vec![], 0.5);
        let fb = rasterize_frame(&s, &RenderConfig { supersample: true, ..Default::default() });
        assert_eq!((fb.width, fb.height), (224, 224));
        assert_eq!(fb.pixel(112, 112), [128, 128, 128]);
    }
}
