use std::collections::HashMap;

use nalgebra::{Matrix4, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::Deserialize;

use super::{Mesh, Texture};
use crate::{Error, Result};

const GLB_MAGIC: &[u8; 4] = b"glTF";
const CHUNK_JSON: u32 = 0x4E4F_534A;
const CHUNK_BIN: u32 = 0x004E_4942;

/// Decoded contents of a binary glTF container.
#[derive(Debug, Clone, Default)]
pub struct GlbScene {
    /// One mesh per triangle primitive, in (mesh, primitive) order.
    pub meshes: Vec<Mesh>,
    pub textures: Vec<Texture>,
    /// Flattened node hierarchy: (index into `meshes`, world transform).
    pub node_transforms: Vec<(usize, Matrix4<f64>)>,
    pub warnings: Vec<GlbWarning>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GlbWarning {
    IgnoredExtension(String),
    IgnoredAnimations,
    IgnoredSkins,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct Document {
    #[serde(default)]
    buffers: Vec<BufferDef>,
    #[serde(default)]
    buffer_views: Vec<BufferView>,
    #[serde(default)]
    accessors: Vec<Accessor>,
    #[serde(default)]
    meshes: Vec<MeshDef>,
    #[serde(default)]
    nodes: Vec<Node>,
    #[serde(default)]
    scenes: Vec<SceneDef>,
    scene: Option<usize>,
    #[serde(default)]
    images: Vec<ImageDef>,
    #[serde(default)]
    textures: Vec<TextureDef>,
    #[serde(default)]
    materials: Vec<Material>,
    #[serde(default)]
    extensions_used: Vec<String>,
    #[serde(default)]
    animations: Vec<serde_json::Value>,
    #[serde(default)]
    skins: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct BufferDef {
    byte_length: usize,
    uri: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct BufferView {
    buffer: usize,
    #[serde(default)]
    byte_offset: usize,
    byte_length: usize,
    byte_stride: Option<usize>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct Accessor {
    buffer_view: Option<usize>,
    #[serde(default)]
    byte_offset: usize,
    component_type: u32,
    count: usize,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    normalized: bool,
}

#[derive(Deserialize)]
struct MeshDef {
    primitives: Vec<Primitive>,
}

#[derive(Deserialize)]
struct Primitive {
    attributes: HashMap<String, usize>,
    indices: Option<usize>,
    mode: Option<u32>,
    material: Option<usize>,
}

#[derive(Deserialize, Default)]
struct Node {
    mesh: Option<usize>,
    #[serde(default)]
    children: Vec<usize>,
    matrix: Option<[f64; 16]>,
    translation: Option<[f64; 3]>,
    rotation: Option<[f64; 4]>,
    scale: Option<[f64; 3]>,
}

#[derive(Deserialize)]
struct SceneDef {
    #[serde(default)]
    nodes: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct ImageDef {
    buffer_view: Option<usize>,
}

#[derive(Deserialize)]
struct TextureDef {
    source: Option<usize>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct Material {
    pbr_metallic_roughness: Option<Pbr>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct Pbr {
    base_color_texture: Option<TexRef>,
}

#[derive(Deserialize)]
struct TexRef {
    index: usize,
}

fn component_name(ct: u32) -> &'static str {
    match ct {
        5120 => "BYTE",
        5121 => "UNSIGNED_BYTE",
        5122 => "SHORT",
        5123 => "UNSIGNED_SHORT",
        5125 => "UNSIGNED_INT",
        5126 => "FLOAT",
        _ => "UNKNOWN",
    }
}

fn component_size(ct: u32) -> Option<usize> {
    match ct {
        5120 | 5121 => Some(1),
        5122 | 5123 => Some(2),
        5125 | 5126 => Some(4),
        _ => None,
    }
}

fn type_width(kind: &str) -> Option<usize> {
    match kind {
        "SCALAR" => Some(1),
        "VEC2" => Some(2),
        "VEC3" => Some(3),
        "VEC4" => Some(4),
        "MAT4" => Some(16),
        _ => None,
    }
}

struct Reader<'a> {
    doc: &'a Document,
    bin: &'a [u8],
}

impl Reader<'_> {
    fn view_bytes(&self, view_idx: usize) -> Result<(&[u8], Option<usize>)> {
        let view = self
            .doc
            .buffer_views
            .get(view_idx)
            .ok_or_else(|| Error::Structural(format!("bufferView {view_idx} does not exist")))?;
        if view.buffer != 0 {
            return Err(Error::Unsupported(format!("external buffer {}", view.buffer)));
        }
        let end = view.byte_offset.checked_add(view.byte_length);
        match end {
            Some(end) if end <= self.bin.len() => Ok((&self.bin[view.byte_offset..end], view.byte_stride)),
            _ => Err(Error::Structural(format!(
                "bufferView {view_idx} [{}, +{}) exceeds {}-byte binary chunk",
                view.byte_offset,
                view.byte_length,
                self.bin.len()
            ))),
        }
    }

    /// Read an accessor as f64 rows, validating bounds and component type.
    fn read(&self, idx: usize, semantic: &str, allowed: &[u32], width: usize) -> Result<Vec<Vec<f64>>> {
        let acc = self
            .doc
            .accessors
            .get(idx)
            .ok_or_else(|| Error::Structural(format!("accessor {idx} does not exist")))?;
        if !allowed.contains(&acc.component_type) {
            return Err(Error::Unsupported(format!(
                "componentType {} ({}) for {semantic}",
                acc.component_type,
                component_name(acc.component_type)
            )));
        }
        let comps = type_width(&acc.kind)
            .filter(|&w| w == width)
            .ok_or_else(|| Error::Unsupported(format!("accessor type {} for {semantic}", acc.kind)))?;
        let csize = component_size(acc.component_type).expect("allowed types have sizes");
        let view_idx = acc
            .buffer_view
            .ok_or_else(|| Error::Unsupported(format!("sparse or empty accessor for {semantic}")))?;
        let (bytes, stride) = self.view_bytes(view_idx)?;
        let elem = comps * csize;
        let stride = stride.unwrap_or(elem);
        if acc.count > 0 {
            let last = acc.byte_offset + (acc.count - 1) * stride + elem;
            if last > bytes.len() {
                return Err(Error::Structural(format!(
                    "accessor {idx} ({semantic}) reads {last} bytes from a {}-byte view",
                    bytes.len()
                )));
            }
        }
        let mut rows = Vec::with_capacity(acc.count);
        for i in 0..acc.count {
            let base = acc.byte_offset + i * stride;
            let row = (0..comps)
                .map(|c| {
                    let o = base + c * csize;
                    let b = &bytes[o..o + csize];
                    let v = match acc.component_type {
                        5121 => b[0] as f64,
                        5123 => u16::from_le_bytes([b[0], b[1]]) as f64,
                        5125 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                        5126 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                        _ => unreachable!("filtered above"),
                    };
                    if acc.normalized {
                        match acc.component_type {
                            5121 => v / 255.0,
                            5123 => v / 65535.0,
                            _ => v,
                        }
                    } else {
                        v
                    }
                })
                .collect();
            rows.push(row);
        }
        Ok(rows)
    }
}

/// Parse a GLB (binary glTF 2.0) container.
///
/// Supports triangle primitives with POSITION / NORMAL / TEXCOORD_0, indexed
/// or not, embedded PNG/JPEG images and the node TRS/matrix hierarchy.
/// Animations, skins and extensions are skipped with a warning.
pub fn parse_glb(bytes: &[u8]) -> Result<GlbScene> {
    if bytes.len() < 12 || &bytes[0..4] != GLB_MAGIC {
        return Err(Error::Format("missing glTF magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u32_at(4);
    if version != 2 {
        return Err(Error::Format(format!("unsupported glTF container version {version}")));
    }
    let total = u32_at(8) as usize;
    if total > bytes.len() {
        return Err(Error::Format(format!("header declares {total} bytes, have {}", bytes.len())));
    }

    let mut json: Option<&[u8]> = None;
    let mut bin: &[u8] = &[];
    let mut off = 12;
    while off + 8 <= total {
        let len = u32_at(off) as usize;
        let kind = u32_at(off + 4);
        let start = off + 8;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= total)
            .ok_or_else(|| Error::Format("chunk runs past end of container".into()))?;
        match kind {
            CHUNK_JSON if json.is_none() => json = Some(&bytes[start..end]),
            CHUNK_BIN if bin.is_empty() => bin = &bytes[start..end],
            _ => {}
        }
        off = end;
    }
    let json = json.ok_or_else(|| Error::Format("no JSON chunk".into()))?;
    let doc: Document = serde_json::from_slice(json)
        .map_err(|e| Error::Format(format!("invalid glTF JSON: {e}")))?;

    let mut scene = GlbScene::default();
    for ext in &doc.extensions_used {
        log::warn!("ignoring glTF extension {ext}");
        scene.warnings.push(GlbWarning::IgnoredExtension(ext.clone()));
    }
    if !doc.animations.is_empty() {
        scene.warnings.push(GlbWarning::IgnoredAnimations);
    }
    if !doc.skins.is_empty() {
        scene.warnings.push(GlbWarning::IgnoredSkins);
    }
    if let Some(b) = doc.buffers.first() {
        if b.uri.is_some() {
            return Err(Error::Unsupported("buffer with external uri".into()));
        }
        if b.byte_length > bin.len() {
            return Err(Error::Structural(format!(
                "buffer declares {} bytes, binary chunk has {}",
                b.byte_length,
                bin.len()
            )));
        }
    }
    let reader = Reader { doc: &doc, bin };

    for (i, img) in doc.images.iter().enumerate() {
        let view = img
            .buffer_view
            .ok_or_else(|| Error::Unsupported(format!("image {i} without bufferView")))?;
        let (data, _) = reader.view_bytes(view)?;
        let rgb = image::load_from_memory(data)?.to_rgb8();
        scene
            .textures
            .push(Texture::new(rgb.width(), rgb.height(), rgb.into_raw())?);
    }

    let mut first_prim = Vec::with_capacity(doc.meshes.len());
    for (mi, m) in doc.meshes.iter().enumerate() {
        first_prim.push(scene.meshes.len());
        for (pi, prim) in m.primitives.iter().enumerate() {
            let mode = prim.mode.unwrap_or(4);
            if mode != 4 {
                return Err(Error::Unsupported(format!("primitive mode {mode} in mesh {mi}/{pi}")));
            }
            scene.meshes.push(read_primitive(&reader, prim, &doc)?);
        }
    }

    let roots: Vec<usize> = match doc.scene.and_then(|s| doc.scenes.get(s)).or(doc.scenes.first()) {
        Some(s) => s.nodes.clone(),
        None => {
            let mut is_child = vec![false; doc.nodes.len()];
            doc.nodes.iter().flat_map(|n| &n.children).for_each(|&c| {
                if c < is_child.len() {
                    is_child[c] = true
                }
            });
            (0..doc.nodes.len()).filter(|&i| !is_child[i]).collect()
        }
    };
    let mut stack: Vec<(usize, Matrix4<f64>, usize)> =
        roots.iter().rev().map(|&r| (r, Matrix4::identity(), 0)).collect();
    while let Some((idx, parent, depth)) = stack.pop() {
        let node = doc
            .nodes
            .get(idx)
            .ok_or_else(|| Error::Structural(format!("node {idx} does not exist")))?;
        if depth > doc.nodes.len() {
            return Err(Error::Structural("cycle in node hierarchy".into()));
        }
        let world = parent * local_matrix(node);
        if let Some(m) = node.mesh {
            let mesh = doc
                .meshes
                .get(m)
                .ok_or_else(|| Error::Structural(format!("node {idx} references missing mesh {m}")))?;
            for p in 0..mesh.primitives.len() {
                scene.node_transforms.push((first_prim[m] + p, world));
            }
        }
        for &c in node.children.iter().rev() {
            stack.push((c, world, depth + 1));
        }
    }
    Ok(scene)
}

fn read_primitive(reader: &Reader, prim: &Primitive, doc: &Document) -> Result<Mesh> {
    let pos_idx = *prim
        .attributes
        .get("POSITION")
        .ok_or_else(|| Error::Structural("primitive without POSITION".into()))?;
    let vertices: Vec<[f32; 3]> = reader
        .read(pos_idx, "POSITION", &[5126], 3)?
        .into_iter()
        .map(|r| [r[0] as f32, r[1] as f32, r[2] as f32])
        .collect();
    let n = vertices.len();
    let triangles: Vec<[u32; 3]> = match prim.indices {
        Some(i) => {
            let idx: Vec<u32> = reader
                .read(i, "indices", &[5121, 5123, 5125], 1)?
                .into_iter()
                .map(|r| r[0] as u32)
                .collect();
            if !idx.len().is_multiple_of(3) {
                return Err(Error::Structural(format!("{} indices is not a multiple of 3", idx.len())));
            }
            if let Some(bad) = idx.iter().find(|&&i| i as usize >= n) {
                return Err(Error::Structural(format!("index {bad} >= vertex count {n}")));
            }
            idx.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
        }
        None => (0..n as u32 / 3).map(|t| [3 * t, 3 * t + 1, 3 * t + 2]).collect(),
    };
    let triangles = triangles
        .into_iter()
        .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
        .collect();
    let mut mesh = Mesh::from_triangles(vertices, triangles);
    if let Some(&ni) = prim.attributes.get("NORMAL") {
        let normals = reader.read(ni, "NORMAL", &[5126], 3)?;
        if normals.len() != n {
            return Err(Error::Structural("NORMAL count differs from POSITION count".into()));
        }
        for (dst, r) in mesh.normals.iter_mut().zip(normals) {
            let v = Vector3::new(r[0], r[1], r[2]);
            if v.norm() > 1e-12 {
                let v = v.normalize();
                *dst = [v.x as f32, v.y as f32, v.z as f32];
            }
        }
    }
    if let Some(&ti) = prim.attributes.get("TEXCOORD_0") {
        let uvs = reader.read(ti, "TEXCOORD_0", &[5121, 5123, 5126], 2)?;
        if uvs.len() != n {
            return Err(Error::Structural("TEXCOORD_0 count differs from POSITION count".into()));
        }
        mesh.uvs = Some(uvs.into_iter().map(|r| [r[0] as f32, r[1] as f32]).collect());
    }
    mesh.texture_id = prim
        .material
        .and_then(|m| doc.materials.get(m))
        .and_then(|m| m.pbr_metallic_roughness.as_ref())
        .and_then(|p| p.base_color_texture.as_ref())
        .and_then(|t| doc.textures.get(t.index))
        .and_then(|t| t.source)
        .map(|s| s.to_string());
    Ok(mesh)
}

fn local_matrix(node: &Node) -> Matrix4<f64> {
    if let Some(m) = node.matrix {
        return Matrix4::from_column_slice(&m);
    }
    let t = node.translation.unwrap_or([0.0; 3]);
    let r = node.rotation.unwrap_or([0.0, 0.0, 0.0, 1.0]);
    let s = node.scale.unwrap_or([1.0; 3]);
    let rot = UnitQuaternion::from_quaternion(Quaternion::new(r[3], r[0], r[1], r[2]));
    Translation3::new(t[0], t[1], t[2]).to_homogeneous()
        * rot.to_homogeneous()
        * Matrix4::new_nonuniform_scaling(&Vector3::new(s[0], s[1], s[2]))
}
