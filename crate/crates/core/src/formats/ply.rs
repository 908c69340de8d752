use std::fmt::Write as _;

use super::Mesh;
use crate::{Error, Result};

/// Serialize as binary little-endian PLY: float xyz + normals, optional uchar
/// colors, and `uchar int` triangle lists.
pub fn write_ply(mesh: &Mesh) -> Vec<u8> {
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\ncomment synthact\n");
    let _ = writeln!(header, "element vertex {}", mesh.vertices.len());
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        let _ = writeln!(header, "property float {p}");
    }
    if mesh.colors.is_some() {
        for p in ["red", "green", "blue"] {
            let _ = writeln!(header, "property uchar {p}");
        }
    }
    let _ = writeln!(header, "element face {}", mesh.triangles.len());
    header.push_str("property list uchar int vertex_indices\nend_header\n");

    let mut out = header.into_bytes();
    out.reserve(mesh.vertices.len() * 27 + mesh.triangles.len() * 13);
    for (i, v) in mesh.vertices.iter().enumerate() {
        let n = mesh.normals.get(i).copied().unwrap_or([0.0, 1.0, 0.0]);
        for f in v.iter().chain(n.iter()) {
            out.extend_from_slice(&f.to_le_bytes());
        }
        if let Some(c) = &mesh.colors {
            out.extend_from_slice(&c[i]);
        }
    }
    for t in &mesh.triangles {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// A property value read from the body. Floats are kept as read so binary
/// round trips stay bit-exact.
#[derive(Debug, Clone, Copy)]
enum Value {
    Int(i64),
    F32(f32),
    F64(f64),
}

impl Value {
    fn as_f32(self) -> f32 {
        match self {
            Value::Int(i) => i as f32,
            Value::F32(f) => f,
            Value::F64(f) => f as f32,
        }
    }
    fn as_i64(self) -> i64 {
        match self {
            Value::Int(i) => i,
            Value::F32(f) => f as i64,
            Value::F64(f) => f as i64,
        }
    }
}

trait Source {
    fn scalar(&mut self, ty: Scalar) -> Result<Value>;
}

struct Binary<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Source for Binary<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<Value> {
        let n = ty.size();
        let b = self
            .data
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Structural("PLY body shorter than declared element counts".into()))?;
        self.pos += n;
        Ok(match ty {
            Scalar::I8 => Value::Int(b[0] as i8 as i64),
            Scalar::U8 => Value::Int(b[0] as i64),
            Scalar::I16 => Value::Int(i16::from_le_bytes([b[0], b[1]]) as i64),
            Scalar::U16 => Value::Int(u16::from_le_bytes([b[0], b[1]]) as i64),
            Scalar::I32 => Value::Int(i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as i64),
            Scalar::U32 => Value::Int(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as i64),
            Scalar::F32 => Value::F32(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F64 => Value::F64(f64::from_le_bytes(b.try_into().expect("8 bytes"))),
        })
    }
}

struct Ascii<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl Source for Ascii<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<Value> {
        let tok = self
            .tokens
            .next()
            .ok_or_else(|| Error::Structural("PLY body shorter than declared element counts".into()))?;
        let bad = || Error::Parse { line: 0, msg: format!("bad PLY value `{tok}`") };
        Ok(match ty {
            Scalar::F32 => Value::F32(tok.parse().map_err(|_| bad())?),
            Scalar::F64 => Value::F64(tok.parse().map_err(|_| bad())?),
            _ => Value::Int(tok.parse().map_err(|_| bad())?),
        })
    }
}

/// Parse an ASCII or binary little-endian PLY with `vertex` (and optionally
/// `face`) elements. Polygons are fan-triangulated; other elements skipped.
pub fn parse_ply(bytes: &[u8]) -> Result<Mesh> {
    let (elements, binary, body_start) = parse_header(bytes)?;
    let body = &bytes[body_start..];
    let mut mesh = match binary {
        true => read_body(&elements, &mut Binary { data: body, pos: 0 })?,
        false => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::Parse { line: 0, msg: "ASCII PLY body is not UTF-8".into() })?;
            let mut src = Ascii { tokens: text.split_ascii_whitespace() };
            let mesh = read_body(&elements, &mut src)?;
            if src.tokens.next().is_some() {
                return Err(Error::Structural("PLY body has more values than declared".into()));
            }
            mesh
        }
    };
    if mesh.normals.len() != mesh.vertices.len() {
        mesh.compute_normals();
    }
    Ok(mesh)
}

fn parse_header(bytes: &[u8]) -> Result<(Vec<Element>, bool, usize)> {
    let marker = b"end_header";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Format("PLY header has no end_header".into()))?;
    let mut body_start = end + marker.len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Format("PLY header is not ASCII".into()))?;
    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::Format("missing `ply` magic".into())),
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, l) in lines {
        let line = i + 1;
        let f: Vec<&str> = l.split_whitespace().collect();
        let perr = |msg: &str| Error::Parse { line, msg: msg.to_string() };
        match f.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                binary = Some(match f.get(1).copied() {
                    Some("ascii") => false,
                    Some("binary_little_endian") => true,
                    Some(other) => return Err(Error::Unsupported(format!("PLY format {other}"))),
                    None => return Err(perr("format line without a format")),
                });
            }
            Some("element") => {
                let (Some(name), Some(count)) = (f.get(1), f.get(2).and_then(|c| c.parse().ok())) else {
                    return Err(perr("malformed element line"));
                };
                elements.push(Element { name: name.to_string(), count, props: vec![] });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| perr("property before any element"))?;
                let prop = if f.get(1) == Some(&"list") {
                    let (Some(c), Some(t), Some(n)) = (
                        f.get(2).and_then(|s| Scalar::parse(s)),
                        f.get(3).and_then(|s| Scalar::parse(s)),
                        f.get(4),
                    ) else {
                        return Err(perr("malformed list property"));
                    };
                    Property::List(n.to_string(), c, t)
                } else {
                    let (Some(t), Some(n)) = (f.get(1).and_then(|s| Scalar::parse(s)), f.get(2)) else {
                        return Err(perr("malformed property"));
                    };
                    Property::Scalar(n.to_string(), t)
                };
                el.props.push(prop);
            }
            Some(other) => return Err(perr(&format!("unknown header keyword `{other}`"))),
        }
    }
    let binary = binary.ok_or_else(|| Error::Format("PLY header has no format line".into()))?;
    let vertex = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::Parse { line: 0, msg: "PLY has no vertex element".into() })?;
    for axis in ["x", "y", "z"] {
        if !vertex.props.iter().any(|p| matches!(p, Property::Scalar(n, _) if n == axis)) {
            return Err(Error::Parse { line: 0, msg: format!("vertex element lacks property {axis}") });
        }
    }
    if let Some(face) = elements.iter().find(|e| e.name == "face") {
        if !face
            .props
            .iter()
            .any(|p| matches!(p, Property::List(n, _, _) if n == "vertex_indices" || n == "vertex_index"))
        {
            return Err(Error::Parse { line: 0, msg: "face element lacks vertex_indices".into() });
        }
    }
    Ok((elements, binary, body_start))
}

fn read_body(elements: &[Element], src: &mut dyn Source) -> Result<Mesh> {
    let mut mesh = Mesh::default();
    let mut normals = Vec::new();
    let mut colors = Vec::new();
    let mut polys: Vec<Vec<i64>> = Vec::new();
    for el in elements {
        for _ in 0..el.count {
            let mut pos = [0f32; 3];
            let mut nrm = [f32::NAN; 3];
            let mut col = [None::<u8>; 3];
            for prop in &el.props {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = src.scalar(*ty)?;
                        if el.name == "vertex" {
                            match name.as_str() {
                                "x" => pos[0] = v.as_f32(),
                                "y" => pos[1] = v.as_f32(),
                                "z" => pos[2] = v.as_f32(),
                                "nx" => nrm[0] = v.as_f32(),
                                "ny" => nrm[1] = v.as_f32(),
                                "nz" => nrm[2] = v.as_f32(),
                                "red" => col[0] = Some(v.as_i64().clamp(0, 255) as u8),
                                "green" => col[1] = Some(v.as_i64().clamp(0, 255) as u8),
                                "blue" => col[2] = Some(v.as_i64().clamp(0, 255) as u8),
                                _ => {}
                            }
                        }
                    }
                    Property::List(name, count_ty, item_ty) => {
                        let n = src.scalar(*count_ty)?.as_i64();
                        if n < 0 {
                            return Err(Error::Structural("negative list length".into()));
                        }
                        let items = (0..n).map(|_| src.scalar(*item_ty).map(Value::as_i64)).collect::<Result<Vec<_>>>()?;
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            polys.push(items);
                        }
                    }
                }
            }
            if el.name == "vertex" {
                mesh.vertices.push(pos);
                if nrm.iter().all(|c| !c.is_nan()) {
                    normals.push(nrm);
                }
                if let [Some(r), Some(g), Some(b)] = col {
                    colors.push([r, g, b]);
                }
            }
        }
    }
    let n = mesh.vertices.len();
    for poly in polys {
        if let Some(bad) = poly.iter().find(|&&i| i < 0 || i as usize >= n) {
            return Err(Error::Structural(format!("face index {bad} out of range for {n} vertices")));
        }
        for k in 1..poly.len().saturating_sub(1) {
            let t = [poly[0] as u32, poly[k] as u32, poly[k + 1] as u32];
            if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                mesh.triangles.push(t);
            }
        }
    }
    if normals.len() == n {
        mesh.normals = normals;
    }
    if n > 0 && colors.len() == n {
        mesh.colors = Some(colors);
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_round_trip() {
        let cube = Mesh::unit_cube();
        let back = parse_ply(&write_ply(&cube)).unwrap();
        assert_eq!(back.vertices, cube.vertices);
        assert_eq!(back.normals, cube.normals);
        assert_eq!(back.triangles, cube.triangles);
    }

    #[test]
    fn empty_mesh() {
        let bytes = write_ply(&Mesh::default());
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("element vertex 0"));
        assert!(text.contains("element face 0"));
        let back = parse_ply(&bytes).unwrap();
        assert!(back.vertices.is_empty() && back.triangles.is_empty());
    }

    #[test]
    fn ascii_with_quads() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\n\
element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let m = parse_ply(src).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        assert_eq!(m.normals[0], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn missing_coordinate_is_parse_error() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n";
        assert!(matches!(parse_ply(src), Err(Error::Parse { .. })));
    }

    #[test]
    fn count_mismatch_is_structural() {
        let src = b"ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n";
        assert!(matches!(parse_ply(src), Err(Error::Structural(_))));
        let mut bin = write_ply(&Mesh::unit_cube());
        bin.truncate(bin.len() - 5);
        assert!(matches!(parse_ply(&bin), Err(Error::Structural(_))));
    }

    #[test]
    fn colors_survive() {
        let mut m = Mesh::unit_cube();
        m.colors = Some((0..8).map(|i| [i * 30, 255 - i, 7]).collect());
        assert_eq!(parse_ply(&write_ply(&m)).unwrap().colors, m.colors);
    }
}
