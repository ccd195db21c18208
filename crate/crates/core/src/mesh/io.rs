//! ASCII OBJ / PLY reading and writing, mesh sequences and mask files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use super::{check_faces, check_vertices, MaskLabel, Mesh, VertexMask};
use crate::error::{Error, Result};
use crate::geom::Vec3;

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

/// Loads an ASCII OBJ or PLY triangle mesh, preserving vertex order.
pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let ext = extension(path);
    if ext != "obj" && ext != "ply" {
        return Err(Error::UnsupportedFormat(format!(
            "{}: expected .obj or .ply",
            path.display()
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if ext == "ply" && !bytes.starts_with(b"ply") {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: "missing 'ply' header".into(),
        });
    }
    let text = match String::from_utf8(bytes) {
        Ok(t) => t,
        Err(_) if ext == "ply" => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: binary PLY is not supported",
                path.display()
            )))
        }
        Err(_) => {
            return Err(Error::Parse {
                path: path.into(),
                line: 0,
                message: "file is not valid UTF-8 text".into(),
            })
        }
    };
    if ext == "obj" {
        parse_obj(&text, path)
    } else {
        parse_ply(&text, path)
    }
}

fn finish(
    path: &Path,
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    vertex_lines: &[usize],
    face_lines: &[usize],
) -> Result<Mesh> {
    if let Err(message) = check_vertices(&vertices) {
        let idx: usize = message
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        return Err(Error::InvalidMesh {
            line: vertex_lines.get(idx).copied(),
            message,
        });
    }
    if let Err(d) = check_faces(&vertices, &faces) {
        return Err(Error::InvalidMesh {
            line: face_lines.get(d.face).copied(),
            message: format!("{}: {}", path.display(), d.message),
        });
    }
    Ok(Mesh::new_unchecked(vertices, faces))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, path: &Path, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("invalid number '{tok}'")))
}

/// Parses OBJ text. Only `v` and `f` records are interpreted.
pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vertex_lines = Vec::new();
    let mut face_lines = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let coords: Vec<&str> = toks.collect();
                if coords.len() < 3 {
                    return Err(parse_err(path, line, "vertex needs 3 coordinates"));
                }
                vertices.push([
                    parse_f64(coords[0], path, line)?,
                    parse_f64(coords[1], path, line)?,
                    parse_f64(coords[2], path, line)?,
                ]);
                vertex_lines.push(line);
            }
            Some("f") => {
                let idx: Vec<&str> = toks.collect();
                if idx.len() != 3 {
                    return Err(parse_err(
                        path,
                        line,
                        format!("non-triangle face with {} vertices", idx.len()),
                    ));
                }
                let mut face = [0usize; 3];
                for (slot, tok) in face.iter_mut().zip(&idx) {
                    let first = tok.split('/').next().unwrap_or("");
                    let k: i64 = first
                        .parse()
                        .map_err(|_| parse_err(path, line, format!("invalid index '{tok}'")))?;
                    let resolved = if k > 0 {
                        k - 1
                    } else if k < 0 {
                        vertices.len() as i64 + k
                    } else {
                        return Err(parse_err(path, line, "OBJ indices are 1-based; found 0"));
                    };
                    if resolved < 0 {
                        return Err(parse_err(path, line, format!("index {k} out of range")));
                    }
                    *slot = resolved as usize;
                }
                faces.push(face);
                face_lines.push(line);
            }
            _ => {}
        }
    }
    finish(path, vertices, faces, &vertex_lines, &face_lines)
}

#[derive(Debug)]
enum PlyProp {
    Scalar(String),
    List,
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProp>,
}

/// Parses ASCII PLY text with a `vertex` element (x, y, z) and a `face`
/// element carrying a 3-index list.
pub fn parse_ply(text: &str, path: &Path) -> Result<Mesh> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' header")),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (line, raw) in lines.by_ref() {
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(Error::UnsupportedFormat(format!(
                        "{}: binary PLY is not supported",
                        path.display()
                    )));
                }
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(parse_err(path, line, "malformed element line"));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| parse_err(path, line, "invalid element count"))?;
                elements.push(PlyElement {
                    name: toks[1].to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, line, "property before element"))?;
                let prop = if toks.get(1) == Some(&"list") {
                    if toks.len() != 5 {
                        return Err(parse_err(path, line, "malformed list property"));
                    }
                    PlyProp::List
                } else {
                    if toks.len() != 3 {
                        return Err(parse_err(path, line, "malformed property"));
                    }
                    PlyProp::Scalar(toks[2].to_string())
                };
                el.props.push(prop);
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => {
                return Err(parse_err(path, line, format!("unknown header keyword '{other}'")))
            }
        }
    }
    if !header_done {
        return Err(parse_err(path, 0, "missing end_header"));
    }

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vertex_lines = Vec::new();
    let mut face_lines = Vec::new();

    let mut data = lines.filter(|(_, l)| !l.trim().is_empty());
    for el in &elements {
        let xyz = if el.name == "vertex" {
            let find = |n: &str| {
                el.props
                    .iter()
                    .position(|p| matches!(p, PlyProp::Scalar(s) if s == n))
            };
            match (find("x"), find("y"), find("z")) {
                (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                _ => return Err(parse_err(path, 0, "vertex element lacks x/y/z")),
            }
        } else {
            None
        };
        let face_list = if el.name == "face" {
            Some(
                el.props
                    .iter()
                    .position(|p| matches!(p, PlyProp::List))
                    .ok_or_else(|| parse_err(path, 0, "face element lacks an index list"))?,
            )
        } else {
            None
        };

        for _ in 0..el.count {
            let (line, raw) = data
                .next()
                .ok_or_else(|| parse_err(path, 0, format!("unexpected end of {} data", el.name)))?;
            let toks: Vec<&str> = raw.split_whitespace().collect();
            // Walk properties to find each one's token span.
            let mut pos = 0;
            let mut spans = Vec::with_capacity(el.props.len());
            for p in &el.props {
                match p {
                    PlyProp::Scalar(_) => {
                        spans.push((pos, 1));
                        pos += 1;
                    }
                    PlyProp::List => {
                        let n: usize = toks
                            .get(pos)
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| parse_err(path, line, "invalid list length"))?;
                        spans.push((pos + 1, n));
                        pos += 1 + n;
                    }
                }
            }
            if toks.len() < pos {
                return Err(parse_err(path, line, "too few values on line"));
            }
            if let Some([x, y, z]) = xyz {
                vertices.push([
                    parse_f64(toks[spans[x].0], path, line)?,
                    parse_f64(toks[spans[y].0], path, line)?,
                    parse_f64(toks[spans[z].0], path, line)?,
                ]);
                vertex_lines.push(line);
            }
            if let Some(li) = face_list {
                let (start, n) = spans[li];
                if n != 3 {
                    return Err(parse_err(
                        path,
                        line,
                        format!("non-triangle face with {n} vertices"),
                    ));
                }
                let mut face = [0usize; 3];
                for (k, slot) in face.iter_mut().enumerate() {
                    *slot = toks[start + k]
                        .parse()
                        .map_err(|_| parse_err(path, line, "invalid face index"))?;
                }
                faces.push(face);
                face_lines.push(line);
            }
        }
    }
    finish(path, vertices, faces, &vertex_lines, &face_lines)
}

/// OBJ text for the given positions and faces. `{:?}` formatting of `f64`
/// is the shortest representation that parses back to the same bits.
pub fn write_obj(vertices: &[Vec3], faces: &[[usize; 3]]) -> String {
    let mut s = String::with_capacity(vertices.len() * 48 + faces.len() * 24);
    for v in vertices {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for f in faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn write_ply(vertices: &[Vec3], faces: &[[usize; 3]]) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        vertices.len(),
        faces.len()
    );
    for v in vertices {
        let _ = writeln!(s, "{:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for f in faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

/// Writes OBJ or PLY depending on the extension.
pub fn save_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    let text = match extension(path).as_str() {
        "obj" => write_obj(mesh.vertices(), mesh.faces()),
        "ply" => write_ply(mesh.vertices(), mesh.faces()),
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: expected .obj or .ply",
                path.display()
            )))
        }
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `frame_0000.obj`, `frame_0001.obj`, … for a T×V×3 sequence.
pub fn save_sequence(frames: &Array3<f64>, faces: &[[usize; 3]], dir: &Path) -> Result<Vec<PathBuf>> {
    let (t, v, _) = frames.dim();
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(t);
    for j in 0..t {
        let verts: Vec<Vec3> = (0..v)
            .map(|k| [frames[[j, k, 0]], frames[[j, k, 1]], frames[[j, k, 2]]])
            .collect();
        let path = dir.join(format!("frame_{j:04}.obj"));
        fs::write(&path, write_obj(&verts, faces)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads every `frame_*.obj` in `dir` (sorted by name). All frames must
/// share one face list, which is returned alongside the T×V×3 positions.
pub fn load_sequence(dir: &Path) -> Result<(Array3<f64>, Vec<[usize; 3]>)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".obj"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptySequence);
    }
    let first = load_mesh(&paths[0])?;
    let v = first.num_vertices();
    let mut out = Array3::zeros((paths.len(), v, 3));
    for (j, p) in paths.iter().enumerate() {
        let m = if j == 0 { first.clone() } else { load_mesh(p)? };
        if m.num_vertices() != v {
            return Err(Error::VertexCountMismatch {
                context: p.display().to_string(),
                expected: v,
                found: m.num_vertices(),
            });
        }
        if m.faces() != first.faces() {
            return Err(Error::InvalidMesh {
                line: None,
                message: format!("{}: face list differs from first frame", p.display()),
            });
        }
        for (k, x) in m.vertices().iter().enumerate() {
            for c in 0..3 {
                out[[j, k, c]] = x[c];
            }
        }
    }
    Ok((out, first.faces().to_vec()))
}

/// Mask file: one vertex index per line; blank lines and `#` comments skipped.
pub fn load_mask(path: &Path, label: MaskLabel, num_vertices: usize) -> Result<VertexMask> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut idx = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let t = raw.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        idx.push(
            t.parse()
                .map_err(|_| parse_err(path, i + 1, format!("invalid vertex index '{t}'")))?,
        );
    }
    VertexMask::new(idx, label, num_vertices)
}

pub fn save_mask(mask: &VertexMask, path: &Path) -> Result<()> {
    let mut s = String::new();
    for i in mask.indices() {
        let _ = writeln!(s, "{i}");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    fn p() -> &'static Path {
        Path::new("test.obj")
    }

    #[test]
    fn minimal_obj() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", p()).unwrap();
        assert_eq!((m.num_vertices(), m.num_faces()), (3, 1));
    }

    #[test]
    fn obj_slash_and_negative_indices() {
        let m = parse_obj(
            "# c\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1/1 2//2 -1\n",
            p(),
        )
        .unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn obj_degenerate_face_reports_line() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 2\n", p()).unwrap_err();
        match err {
            Error::InvalidMesh { line, message } => {
                assert_eq!(line, Some(4));
                assert!(message.contains("degenerate"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn obj_quad_and_garbage_are_parse_errors() {
        let e = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 4 3\n", p()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 5, .. }));
        let e = parse_obj("v 0 x 0\n", p()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", p()).unwrap_err();
        assert!(matches!(e, Error::InvalidMesh { line: Some(4), .. }));
    }

    #[test]
    fn ply_icosahedron_area() {
        let ico = shapes::icosahedron(1.0);
        let text = write_ply(ico.vertices(), ico.faces());
        let m = parse_ply(&text, Path::new("ico.ply")).unwrap();
        assert_eq!((m.num_vertices(), m.num_faces()), (12, 20));
        // 20 equilateral triangles, edge a = 4/sqrt(10 + 2 sqrt 5)
        let a2 = 16.0 / (10.0 + 2.0 * 5f64.sqrt());
        let expected = 20.0 * 3f64.sqrt() / 4.0 * a2;
        assert!((m.total_area() - expected).abs() < 1e-12);
        assert!((m.total_area() - 9.574541383273937).abs() < 1e-9);
    }

    #[test]
    fn ply_with_extra_properties_and_elements() {
        let text = "ply\nformat ascii 1.0\ncomment hi\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nproperty int flags\nelement edge 1\nproperty int a\nproperty int b\nend_header\n0 0 0 255\n1 0 0 255\n0 1 0 255\n3 0 1 2 7\n0 1\n";
        let m = parse_ply(text, Path::new("x.ply")).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
        assert_eq!(m.vertices()[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn binary_ply_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(
            parse_ply(text, Path::new("b.ply")),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn round_trip_obj_and_ply() {
        let dir = tempfile::tempdir().unwrap();
        let ico = shapes::icosphere(2, 0.0731);
        for name in ["a.obj", "a.ply"] {
            let path = dir.path().join(name);
            save_mesh(&ico, &path).unwrap();
            let back = load_mesh(&path).unwrap();
            assert_eq!(back.faces(), ico.faces());
            assert_eq!(back.vertices(), ico.vertices(), "bitwise vertex round trip");
        }
    }

    #[test]
    fn sequence_naming_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let ico = shapes::icosahedron(1.0);
        let pos = ico.positions();
        let frames = Array3::from_shape_fn((3, 12, 3), |(j, k, c)| pos[[k, c]] + j as f64 * 0.01);
        let files = save_sequence(&frames, ico.faces(), dir.path()).unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["frame_0000.obj", "frame_0001.obj", "frame_0002.obj"]);
        let (back, faces) = load_sequence(dir.path()).unwrap();
        assert_eq!(back, frames);
        assert_eq!(faces, ico.faces());

        let empty = Array3::<f64>::zeros((0, 12, 3));
        let e = save_sequence(&empty, ico.faces(), dir.path()).unwrap_err();
        assert_eq!(e.to_string(), "empty sequence");
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lip.txt");
        let m = VertexMask::new(vec![5, 1, 3], MaskLabel::Lip, 10).unwrap();
        save_mask(&m, &path).unwrap();
        assert_eq!(load_mask(&path, MaskLabel::Lip, 10).unwrap(), m);
        assert!(load_mask(&path, MaskLabel::Lip, 4).is_err());
    }
}
