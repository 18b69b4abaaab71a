//! Point-cloud and mesh file formats: PLY (ASCII and little-endian binary),
//! PCD (ASCII), and OBJ meshes.
//!
//! ASCII floats are written with 17 significant digits so coordinates
//! round-trip exactly. Files do not carry a frame label; clouds read back in
//! the world frame unless the caller relabels them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::Error;
use crate::geom::{Frame, Mesh, Point3, PointCloud, Triangle};
use crate::Result;

/// Writes an ASCII PLY; normals are included when the cloud has them, and
/// `origins` (one tag per point) adds a `uchar origin` property.
pub fn write_ply_cloud(path: &Path, cloud: &PointCloud, origins: Option<&[u8]>) -> Result<()> {
    if let Some(o) = origins {
        if o.len() != cloud.len() {
            return Err(Error::validation("origins", "length mismatch with cloud"));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    if cloud.normals().is_some() {
        writeln!(w, "property double nx")?;
        writeln!(w, "property double ny")?;
        writeln!(w, "property double nz")?;
    }
    if origins.is_some() {
        writeln!(w, "property uchar origin")?;
    }
    writeln!(w, "end_header")?;
    for i in 0..cloud.len() {
        let p = cloud.points()[i];
        write!(w, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z)?;
        if let Some(ns) = cloud.normals() {
            let n = ns[i];
            write!(w, " {:.16e} {:.16e} {:.16e}", n.x, n.y, n.z)?;
        }
        if let Some(o) = origins {
            write!(w, " {}", o[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// ASCII PLY of bare points with per-point RGB, for visualization exports.
pub fn write_ply_points_colored(path: &Path, points: &[Point3], colors: &[[u8; 3]]) -> Result<()> {
    if points.len() != colors.len() {
        return Err(Error::validation("colors", "length mismatch with points"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    writeln!(w, "property uchar red")?;
    writeln!(w, "property uchar green")?;
    writeln!(w, "property uchar blue")?;
    writeln!(w, "end_header")?;
    for (p, c) in points.iter().zip(colors) {
        writeln!(
            w,
            "{:.16e} {:.16e} {:.16e} {} {} {}",
            p.x, p.y, p.z, c[0], c[1], c[2]
        )?;
    }
    Ok(())
}

/// Binary little-endian PLY with double-precision coordinates.
pub fn write_ply_cloud_binary(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    if cloud.normals().is_some() {
        writeln!(w, "property double nx")?;
        writeln!(w, "property double ny")?;
        writeln!(w, "property double nz")?;
    }
    writeln!(w, "end_header")?;
    for i in 0..cloud.len() {
        let p = cloud.points()[i];
        w.write_all(&p.x.to_le_bytes())?;
        w.write_all(&p.y.to_le_bytes())?;
        w.write_all(&p.z.to_le_bytes())?;
        if let Some(ns) = cloud.normals() {
            let n = ns[i];
            w.write_all(&n.x.to_le_bytes())?;
            w.write_all(&n.y.to_le_bytes())?;
            w.write_all(&n.z.to_le_bytes())?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone)]
struct PlyProperty {
    name: String,
    kind: String,
    is_list: bool,
    list_index_kind: String,
}

#[derive(Debug, Clone)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

struct PlyHeader {
    format: PlyFormat,
    elements: Vec<PlyElement>,
}

fn scalar_size(kind: &str) -> Result<usize> {
    Ok(match kind {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "int32" | "uint32" | "float" | "float32" => 4,
        "double" | "float64" => 8,
        other => {
            return Err(Error::parse("ply", format!("unknown property type `{other}`")));
        }
    })
}

fn parse_ply_header<R: BufRead>(r: &mut R, path: &str) -> Result<PlyHeader> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(Error::parse(path, "missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::parse(path, "unexpected end of header"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first() {
            Some(&"comment") | None => continue,
            Some(&"format") => {
                format = Some(match toks.get(1) {
                    Some(&"ascii") => PlyFormat::Ascii,
                    Some(&"binary_little_endian") => PlyFormat::BinaryLe,
                    other => {
                        return Err(Error::parse(path, format!("unsupported format {other:?}")));
                    }
                });
            }
            Some(&"element") => {
                let name = toks
                    .get(1)
                    .ok_or_else(|| Error::parse(path, "element without name"))?;
                let count: usize = toks
                    .get(2)
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(path, "element without count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some(&"property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, "property before element"))?;
                if toks.get(1) == Some(&"list") {
                    elem.properties.push(PlyProperty {
                        name: toks.get(4).unwrap_or(&"").to_string(),
                        kind: toks.get(3).unwrap_or(&"").to_string(),
                        is_list: true,
                        list_index_kind: toks.get(2).unwrap_or(&"").to_string(),
                    });
                } else {
                    elem.properties.push(PlyProperty {
                        name: toks.get(2).unwrap_or(&"").to_string(),
                        kind: toks.get(1).unwrap_or(&"").to_string(),
                        is_list: false,
                        list_index_kind: String::new(),
                    });
                }
            }
            Some(&"end_header") => break,
            Some(other) => {
                return Err(Error::parse(path, format!("unexpected header line `{other}`")));
            }
        }
    }
    Ok(PlyHeader {
        format: format.ok_or_else(|| Error::parse(path, "missing format line"))?,
        elements,
    })
}

fn read_binary_scalar<R: Read>(r: &mut R, kind: &str) -> Result<f64> {
    let mut buf = [0u8; 8];
    let size = scalar_size(kind)?;
    r.read_exact(&mut buf[..size])?;
    Ok(match kind {
        "char" | "int8" => i8::from_le_bytes([buf[0]]) as f64,
        "uchar" | "uint8" => buf[0] as f64,
        "short" | "int16" => i16::from_le_bytes([buf[0], buf[1]]) as f64,
        "ushort" | "uint16" => u16::from_le_bytes([buf[0], buf[1]]) as f64,
        "int" | "int32" => i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
        "uint" | "uint32" => u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
        "float" | "float32" => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
        "double" | "float64" => f64::from_le_bytes(buf),
        _ => unreachable!("size check rejects unknown kinds"),
    })
}

struct PlyData {
    /// Per element: rows of scalar values (lists flattened, list lengths in
    /// `list_lens`).
    rows: Vec<Vec<Vec<f64>>>,
}

fn read_ply_data(path: &Path) -> Result<(PlyHeader, PlyData)> {
    let path_str = path.display().to_string();
    let mut r = BufReader::new(File::open(path)?);
    let header = parse_ply_header(&mut r, &path_str)?;
    let mut rows = Vec::new();
    match header.format {
        PlyFormat::Ascii => {
            let mut tokens: Vec<f64> = Vec::new();
            let mut lines = String::new();
            r.read_to_string(&mut lines)?;
            let mut iter = lines.split_whitespace();
            let mut next = |what: &str| -> Result<f64> {
                iter.next()
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| Error::parse(&path_str, format!("expected {what}")))
            };
            for elem in &header.elements {
                let mut elem_rows = Vec::with_capacity(elem.count);
                for _ in 0..elem.count {
                    tokens.clear();
                    for prop in &elem.properties {
                        if prop.is_list {
                            let n = next("list length")? as usize;
                            tokens.push(n as f64);
                            for _ in 0..n {
                                tokens.push(next(&prop.name)?);
                            }
                        } else {
                            tokens.push(next(&prop.name)?);
                        }
                    }
                    elem_rows.push(tokens.clone());
                }
                rows.push(elem_rows);
            }
        }
        PlyFormat::BinaryLe => {
            for elem in &header.elements {
                let mut elem_rows = Vec::with_capacity(elem.count);
                for _ in 0..elem.count {
                    let mut row = Vec::new();
                    for prop in &elem.properties {
                        if prop.is_list {
                            let n = read_binary_scalar(&mut r, &prop.list_index_kind)? as usize;
                            row.push(n as f64);
                            for _ in 0..n {
                                row.push(read_binary_scalar(&mut r, &prop.kind)?);
                            }
                        } else {
                            row.push(read_binary_scalar(&mut r, &prop.kind)?);
                        }
                    }
                    elem_rows.push(row);
                }
                rows.push(elem_rows);
            }
        }
    }
    Ok((header, PlyData { rows }))
}

/// Positions of the scalar values of `names` within a flattened row.
fn scalar_offsets(elem: &PlyElement, names: &[&str]) -> Vec<Option<usize>> {
    // flattened rows store list lengths inline, so offsets are only valid for
    // elements without list properties before the scalars we want; vertex
    // elements in practice are all scalars
    let mut offsets = vec![None; names.len()];
    for (pos, prop) in elem.properties.iter().enumerate() {
        if prop.is_list {
            break;
        }
        if let Some(i) = names.iter().position(|n| *n == prop.name) {
            offsets[i] = Some(pos);
        }
    }
    offsets
}

/// Reads a point cloud from an ASCII or binary little-endian PLY.
pub fn read_ply_cloud(path: &Path) -> Result<PointCloud> {
    let path_str = path.display().to_string();
    let (header, data) = read_ply_data(path)?;
    let vi = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(&path_str, "no vertex element"))?;
    let elem = &header.elements[vi];
    let offs = scalar_offsets(elem, &["x", "y", "z", "nx", "ny", "nz"]);
    let (Some(ox), Some(oy), Some(oz)) = (offs[0], offs[1], offs[2]) else {
        return Err(Error::parse(&path_str, "vertex element lacks x/y/z"));
    };
    let has_normals = offs[3].is_some() && offs[4].is_some() && offs[5].is_some();
    let mut points = Vec::with_capacity(elem.count);
    let mut normals = Vec::new();
    for row in &data.rows[vi] {
        points.push(Point3::new(row[ox], row[oy], row[oz]));
        if has_normals {
            normals.push(Vector3::new(
                row[offs[3].unwrap()],
                row[offs[4].unwrap()],
                row[offs[5].unwrap()],
            ));
        }
    }
    if has_normals {
        PointCloud::with_normals(points, normals, Frame::World)
    } else {
        Ok(PointCloud::new(points, Frame::World))
    }
}

/// Reads a triangle mesh from PLY (faces fan-triangulated).
pub fn read_ply_mesh(path: &Path) -> Result<Mesh> {
    let path_str = path.display().to_string();
    let (header, data) = read_ply_data(path)?;
    let vi = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(&path_str, "no vertex element"))?;
    let fi = header
        .elements
        .iter()
        .position(|e| e.name == "face")
        .ok_or_else(|| Error::parse(&path_str, "no face element"))?;
    let elem = &header.elements[vi];
    let offs = scalar_offsets(elem, &["x", "y", "z"]);
    let (Some(ox), Some(oy), Some(oz)) = (offs[0], offs[1], offs[2]) else {
        return Err(Error::parse(&path_str, "vertex element lacks x/y/z"));
    };
    let vertices: Vec<Point3> = data.rows[vi]
        .iter()
        .map(|row| Point3::new(row[ox], row[oy], row[oz]))
        .collect();
    let mut triangles = Vec::new();
    for row in &data.rows[fi] {
        let n = row[0] as usize;
        if n < 3 || row.len() < 1 + n {
            return Err(Error::parse(&path_str, "malformed face list"));
        }
        let idx: Vec<usize> = row[1..1 + n].iter().map(|&v| v as usize).collect();
        for k in 1..n - 1 {
            let get = |i: usize| -> Result<Point3> {
                vertices
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::parse(&path_str, format!("face index {i} out of range")))
            };
            triangles.push(Triangle::new(get(idx[0])?, get(idx[k])?, get(idx[k + 1])?));
        }
    }
    if triangles.is_empty() {
        return Err(Error::parse(&path_str, "mesh has no faces"));
    }
    Ok(Mesh::new(triangles))
}

/// Writes an ASCII PCD (x y z, double precision).
pub fn write_pcd(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "VERSION 0.7")?;
    writeln!(w, "FIELDS x y z")?;
    writeln!(w, "SIZE 8 8 8")?;
    writeln!(w, "TYPE F F F")?;
    writeln!(w, "COUNT 1 1 1")?;
    writeln!(w, "WIDTH {}", cloud.len())?;
    writeln!(w, "HEIGHT 1")?;
    writeln!(w, "VIEWPOINT 0 0 0 1 0 0 0")?;
    writeln!(w, "POINTS {}", cloud.len())?;
    writeln!(w, "DATA ascii")?;
    for p in cloud.points() {
        writeln!(w, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z)?;
    }
    Ok(())
}

/// Reads an ASCII PCD with at least x y z fields.
pub fn read_pcd(path: &Path) -> Result<PointCloud> {
    let path_str = path.display().to_string();
    let r = BufReader::new(File::open(path)?);
    let mut fields: Vec<String> = Vec::new();
    let mut count = 0usize;
    let mut in_data = false;
    let mut points = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_data {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "FIELDS" => fields = toks[1..].iter().map(|s| s.to_string()).collect(),
                "POINTS" => {
                    count = toks
                        .get(1)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::parse(&path_str, "bad POINTS"))?;
                }
                "DATA" => {
                    if toks.get(1) != Some(&"ascii") {
                        return Err(Error::parse(&path_str, "only DATA ascii is supported"));
                    }
                    in_data = true;
                }
                _ => continue,
            }
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(&path_str, e.to_string()))?;
        let ix = fields.iter().position(|f| f == "x");
        let iy = fields.iter().position(|f| f == "y");
        let iz = fields.iter().position(|f| f == "z");
        let (Some(ix), Some(iy), Some(iz)) = (ix, iy, iz) else {
            return Err(Error::parse(&path_str, "FIELDS lacks x y z"));
        };
        points.push(Point3::new(vals[ix], vals[iy], vals[iz]));
    }
    if points.len() != count {
        return Err(Error::parse(
            &path_str,
            format!("POINTS says {count}, found {}", points.len()),
        ));
    }
    Ok(PointCloud::new(points, Frame::World))
}

/// Reads an OBJ mesh (v / f lines, faces fan-triangulated).
pub fn read_obj_mesh(path: &Path) -> Result<Mesh> {
    let path_str = path.display().to_string();
    let r = BufReader::new(File::open(path)?);
    let mut vertices: Vec<Point3> = Vec::new();
    let mut triangles = Vec::new();
    for line in r.lines() {
        let line = line?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first() {
            Some(&"v") => {
                if toks.len() < 4 {
                    return Err(Error::parse(&path_str, "short vertex line"));
                }
                let parse = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|e| Error::parse(&path_str, e.to_string()))
                };
                vertices.push(Point3::new(parse(toks[1])?, parse(toks[2])?, parse(toks[3])?));
            }
            Some(&"f") => {
                let mut idx = Vec::new();
                for tok in &toks[1..] {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| Error::parse(&path_str, format!("bad face index `{tok}`")))?;
                    if i < 1 || i as usize > vertices.len() {
                        return Err(Error::parse(&path_str, format!("face index {i} out of range")));
                    }
                    idx.push((i - 1) as usize);
                }
                if idx.len() < 3 {
                    return Err(Error::parse(&path_str, "face with fewer than 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push(Triangle::new(
                        vertices[idx[0]],
                        vertices[idx[k]],
                        vertices[idx[k + 1]],
                    ));
                }
            }
            _ => continue,
        }
    }
    if triangles.is_empty() {
        return Err(Error::parse(&path_str, "mesh has no faces"));
    }
    Ok(Mesh::new(triangles))
}

/// Writes an OBJ mesh (one triangle per face).
pub fn write_obj_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for tri in mesh.triangles() {
        for p in [tri.a, tri.b, tri.c] {
            writeln!(w, "v {:.16e} {:.16e} {:.16e}", p.x, p.y, p.z)?;
        }
    }
    for i in 0..mesh.triangles().len() {
        writeln!(w, "f {} {} {}", 3 * i + 1, 3 * i + 2, 3 * i + 3)?;
    }
    Ok(())
}

/// Loads a mesh by file extension (`.obj` or `.ply`).
pub fn load_mesh(path: &Path) -> Result<Mesh> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => read_obj_mesh(path),
        Some("ply") => read_ply_mesh(path),
        other => Err(Error::parse(
            path.display().to_string(),
            format!("unsupported mesh extension {other:?}"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect(),
            Frame::World,
        )
    }

    #[test]
    fn ply_ascii_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let cloud = random_cloud(100, 1);
        write_ply_cloud(&path, &cloud, None).unwrap();
        let back = read_ply_cloud(&path).unwrap();
        assert_eq!(cloud.points(), back.points());
    }

    #[test]
    fn ply_binary_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let cloud = random_cloud(64, 2);
        write_ply_cloud_binary(&path, &cloud).unwrap();
        let back = read_ply_cloud(&path).unwrap();
        assert_eq!(cloud.points(), back.points());
    }

    #[test]
    fn ply_with_origin_tags_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let cloud = random_cloud(10, 3);
        let origins = vec![0u8; 5].into_iter().chain(vec![1u8; 5]).collect::<Vec<_>>();
        write_ply_cloud(&path, &cloud, Some(&origins)).unwrap();
        let back = read_ply_cloud(&path).unwrap();
        assert_eq!(cloud.points(), back.points());
    }

    #[test]
    fn pcd_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pcd");
        let cloud = random_cloud(50, 4);
        write_pcd(&path, &cloud).unwrap();
        let back = read_pcd(&path).unwrap();
        assert_eq!(cloud.points(), back.points());
    }

    #[test]
    fn ply_mesh_reads_faces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 2\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2\n3 0 2 3\n",
        )
        .unwrap();
        let mesh = read_ply_mesh(&path).unwrap();
        assert_eq!(mesh.triangles().len(), 2);
        assert!((mesh.surface_area() - 1.0).abs() < 1e-12);
        // the generic loader dispatches on the extension
        let same = load_mesh(&path).unwrap();
        assert_eq!(same.triangles().len(), 2);
    }

    #[test]
    fn obj_roundtrip_preserves_triangles() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        let mesh = Mesh::new(vec![
            Triangle::new(
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ),
            Triangle::new(
                Point3::new(0.0, 0.0, 1.0),
                Point3::new(1.0, 0.0, 1.0),
                Point3::new(0.0, 1.0, 1.0),
            ),
        ]);
        write_obj_mesh(&path, &mesh).unwrap();
        let back = read_obj_mesh(&path).unwrap();
        assert_eq!(back.triangles().len(), 2);
        assert_eq!(back.triangles()[1].c, Point3::new(0.0, 1.0, 1.0));
    }
}
