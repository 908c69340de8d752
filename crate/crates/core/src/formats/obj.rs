use std::collections::HashMap;

use super::{to_v3, Mesh};
use crate::{Error, Result};

/// Corner of a face as 0-based (position, uv, normal) indices.
type Corner = (usize, Option<usize>, Option<usize>);

/// Parse an ASCII Wavefront OBJ.
///
/// Faces are fan-triangulated and indices rebased to 0. Vertices keep their
/// `v` record order; a vertex is duplicated only when faces reference it with
/// conflicting uv/normal indices. Missing normals are computed (area-weighted
/// face normals). Texture coordinates outside `[0,1]` wrap around. The first
/// `usemtl` name becomes the mesh's `texture_id`.
pub fn parse_obj(bytes: &[u8]) -> Result<Mesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        msg: "input is not UTF-8".into(),
    })?;

    let mut positions: Vec<[f32; 3]> = Vec::new();
    let mut uvs: Vec<[f32; 2]> = Vec::new();
    let mut normals: Vec<[f32; 3]> = Vec::new();
    let mut faces: Vec<(usize, Vec<Corner>)> = Vec::new();
    let mut material = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut fields = content.split_whitespace();
        let Some(tag) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        let floats = |n: usize| -> Result<Vec<f32>> {
            if rest.len() < n {
                return Err(Error::Parse {
                    line,
                    msg: format!("`{tag}` needs {n} numbers, found {}", rest.len()),
                });
            }
            rest.iter()
                .take(n)
                .map(|s| {
                    s.parse::<f32>()
                        .ok()
                        .filter(|f| f.is_finite())
                        .ok_or_else(|| Error::Parse { line, msg: format!("bad number `{s}`") })
                })
                .collect()
        };
        match tag {
            "v" => {
                let f = floats(3)?;
                positions.push([f[0], f[1], f[2]]);
            }
            "vt" => {
                let f = floats(2)?;
                uvs.push([wrap_unit(f[0]), wrap_unit(f[1])]);
            }
            "vn" => {
                let f = floats(3)?;
                let n = to_v3([f[0], f[1], f[2]]);
                let len = n.norm();
                if len < 1e-12 {
                    return Err(Error::Parse { line, msg: "zero-length normal".into() });
                }
                let n = n / len;
                normals.push([n.x as f32, n.y as f32, n.z as f32]);
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(Error::Parse { line, msg: "face needs at least 3 corners".into() });
                }
                let corners = rest
                    .iter()
                    .map(|c| parse_corner(c, line, positions.len(), uvs.len(), normals.len()))
                    .collect::<Result<Vec<_>>>()?;
                faces.push((line, corners));
            }
            "usemtl" if material.is_none() => material = rest.first().map(|s| s.to_string()),
            // Grouping, smoothing, material libraries and polylines carry no geometry we use.
            _ => {}
        }
    }

    // Resolve corners to output vertices, keeping `v` order where possible.
    let mut out_pos = positions.clone();
    let mut slot: Vec<Option<(Option<usize>, Option<usize>)>> = vec![None; positions.len()];
    let mut extra: HashMap<Corner, usize> = HashMap::new();
    let mut attr_of: Vec<(Option<usize>, Option<usize>)> = vec![(None, None); positions.len()];
    let mut triangles = Vec::new();

    for (line, corners) in &faces {
        let mut ids = Vec::with_capacity(corners.len());
        for &(p, t, n) in corners {
            if p >= positions.len() || t.is_some_and(|t| t >= uvs.len()) || n.is_some_and(|n| n >= normals.len()) {
                return Err(Error::Structural(format!("face index out of range on line {line}")));
            }
            let id = match slot[p] {
                None => {
                    slot[p] = Some((t, n));
                    attr_of[p] = (t, n);
                    p
                }
                Some(attrs) if attrs == (t, n) => p,
                Some(_) => *extra.entry((p, t, n)).or_insert_with(|| {
                    out_pos.push(positions[p]);
                    attr_of.push((t, n));
                    out_pos.len() - 1
                }),
            };
            ids.push(id as u32);
        }
        for k in 1..ids.len() - 1 {
            let tri = [ids[0], ids[k], ids[k + 1]];
            if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                triangles.push(tri);
            }
        }
    }

    let mut mesh = Mesh::from_triangles(out_pos, triangles);
    let any_uv = attr_of.iter().any(|a| a.0.is_some());
    if any_uv {
        mesh.uvs = Some(attr_of.iter().map(|a| a.0.map_or([0.0, 0.0], |t| uvs[t])).collect());
    }
    // Explicit normals override computed ones where given.
    for (i, a) in attr_of.iter().enumerate() {
        if let Some(n) = a.1 {
            mesh.normals[i] = normals[n];
        }
    }
    mesh.texture_id = material;
    Ok(mesh)
}

fn wrap_unit(x: f32) -> f32 {
    if (0.0..=1.0).contains(&x) {
        x
    } else {
        x.rem_euclid(1.0)
    }
}

fn parse_corner(s: &str, line: usize, np: usize, nt: usize, nn: usize) -> Result<Corner> {
    let mut parts = s.split('/');
    let bad = || Error::Parse { line, msg: format!("bad face corner `{s}`") };
    let resolve = |field: Option<&str>, count: usize| -> Result<Option<usize>> {
        match field {
            None | Some("") => Ok(None),
            Some(f) => {
                let i: i64 = f.parse().map_err(|_| bad())?;
                let idx = match i {
                    0 => return Err(Error::Structural(format!("index 0 on line {line}"))),
                    i if i > 0 => i - 1,
                    i => count as i64 + i,
                };
                if idx < 0 {
                    return Err(Error::Structural(format!("relative index {i} out of range on line {line}")));
                }
                Ok(Some(idx as usize))
            }
        }
    };
    let p = resolve(parts.next(), np)?.ok_or_else(bad)?;
    let t = resolve(parts.next(), nt)?;
    let n = resolve(parts.next(), nn)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok((p, t, n))
}

/// Extract the diffuse texture path (`map_Kd`) from an MTL file, if any.
/// Everything else in the material library is ignored.
pub fn parse_mtl_map_kd(bytes: &[u8]) -> Option<String> {
    String::from_utf8_lossy(bytes).lines().find_map(|l| {
        let l = l.trim();
        l.strip_prefix("map_Kd")
            .map(|rest| rest.split_whitespace().last().unwrap_or("").to_string())
            .filter(|s| !s.is_empty())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triangle() {
        let m = parse_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
        for n in &m.normals {
            assert_eq!(*n, [0.0, 0.0, 1.0]);
        }
        m.validate().unwrap();
    }

    #[test]
    fn quad_fans() {
        let m = parse_obj(b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn negative_indices_and_explicit_normals() {
        let m = parse_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 2\nf -3//1 -2//1 -1//1\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
        assert_eq!(m.normals[0], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn conflicting_uvs_split_vertices() {
        let src = b"v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvt 1 1\nvt 0.5 0.5\n\
f 1/1 2/2 3/3\nf 2/5 4/4 3/3\n";
        let m = parse_obj(src).unwrap();
        assert_eq!(m.vertices.len(), 5);
        assert_eq!(m.triangles[1], [4, 3, 2]);
        assert_eq!(m.uvs.as_ref().unwrap()[4], [0.5, 0.5]);
    }

    #[test]
    fn malformed_number_reports_line() {
        let err = parse_obj(b"v 0 0 0\nv 1 zero 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn out_of_range_face_is_structural() {
        let err = parse_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n").unwrap_err();
        assert!(matches!(err, Error::Structural(_)), "{err}");
    }

    #[test]
    fn uv_wraps() {
        let m = parse_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 1.25 -0.25\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n").unwrap();
        assert_eq!(m.uvs.unwrap()[0], [0.25, 0.75]);
    }

    #[test]
    fn map_kd() {
        assert_eq!(
            parse_mtl_map_kd(b"newmtl wall\nKd 1 1 1\nmap_Kd -bm 1 textures/wall.png\n").as_deref(),
            Some("textures/wall.png")
        );
        assert_eq!(parse_mtl_map_kd(b"newmtl x\n"), None);
    }
}
