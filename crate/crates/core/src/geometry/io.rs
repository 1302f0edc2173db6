//! PLY, OBJ and XYZ readers/writers plus area-uniform mesh surface sampling.

use std::fs;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PointCloud, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Ply,
    Obj,
    Xyz,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(Format::Ply),
            "obj" => Some(Format::Obj),
            "xyz" | "txt" | "pts" => Some(Format::Xyz),
            _ => None,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ply" => Ok(Format::Ply),
            "obj" => Ok(Format::Obj),
            "xyz" => Ok(Format::Xyz),
            other => Err(Error::InvalidConfig(format!("unknown format {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Draw this many area-uniform surface samples instead of returning the
    /// raw vertices (meshes only).
    pub sample: Option<usize>,
    pub seed: u64,
}

/// Polygon mesh as read from OBJ.
#[derive(Debug, Clone, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<Vec<usize>>,
}

pub fn load_pointcloud(path: &Path, format: Format, options: &LoadOptions) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Ply => parse_ply(&bytes),
        Format::Xyz => parse_xyz(&String::from_utf8_lossy(&bytes)),
        Format::Obj => {
            let mesh = parse_obj(&String::from_utf8_lossy(&bytes))?;
            match options.sample {
                Some(n) => sample_surface(&mesh, n, options.seed),
                None => PointCloud::new(mesh.vertices),
            }
        }
    }
}

pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut columns = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::MalformedFile(format!("line {}: {e}", lineno + 1)))?;
        if values.len() != 3 && values.len() != 6 {
            return Err(Error::MalformedFile(format!(
                "line {}: expected 3 or 6 columns, got {}",
                lineno + 1,
                values.len()
            )));
        }
        if *columns.get_or_insert(values.len()) != values.len() {
            return Err(Error::MalformedFile(format!(
                "line {}: inconsistent column count",
                lineno + 1
            )));
        }
        points.push(Vec3::new(values[0], values[1], values[2]));
        if values.len() == 6 {
            normals.push(Vec3::new(values[3], values[4], values[5]));
        }
    }
    finish_cloud(points, normals)
}

fn finish_cloud(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<PointCloud> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut cloud = PointCloud::new(points)?;
    if !normals.is_empty() && normals.iter().all(|n| n.norm() > 1e-12) {
        cloud.set_normals(normals.iter().map(|n| n.normalize()).collect())?;
    }
    Ok(cloud)
}

pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut mesh = Mesh::default();
    for (lineno, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::MalformedFile(format!("line {}: {e}", lineno + 1)))?;
                if coords.len() != 3 {
                    return Err(Error::MalformedFile(format!(
                        "line {}: vertex needs 3 coordinates",
                        lineno + 1
                    )));
                }
                mesh.vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut face = Vec::new();
                for t in tokens {
                    let head = t.split('/').next().unwrap_or("");
                    let idx: i64 = head.parse().map_err(|_| {
                        Error::MalformedFile(format!("line {}: bad face index {t}", lineno + 1))
                    })?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else {
                        mesh.vertices.len() as i64 + idx
                    };
                    if resolved < 0 {
                        return Err(Error::MalformedFile(format!(
                            "line {}: face index {idx} out of range",
                            lineno + 1
                        )));
                    }
                    face.push(resolved as usize);
                }
                if face.len() >= 3 {
                    mesh.faces.push(face);
                }
            }
            _ => {}
        }
    }
    if mesh.vertices.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if let Some(bad) = mesh
        .faces
        .iter()
        .flatten()
        .find(|&&i| i >= mesh.vertices.len())
    {
        return Err(Error::MalformedFile(format!("face index {} out of range", bad + 1)));
    }
    Ok(mesh)
}

/// Area-uniform samples on the mesh surface with per-face normals.
/// Polygons are fan-triangulated.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::BadCount(0));
    }
    let mut tris = Vec::new();
    let mut cumulative = Vec::new();
    let mut total = 0.0;
    for face in &mesh.faces {
        for w in 1..face.len() - 1 {
            let (a, b, c) = (
                mesh.vertices[face[0]],
                mesh.vertices[face[w]],
                mesh.vertices[face[w + 1]],
            );
            let cross = (b - a).cross(&(c - a));
            let area = 0.5 * cross.norm();
            if area > 0.0 {
                total += area;
                tris.push((a, b, c, cross / cross.norm()));
                cumulative.push(total);
            }
        }
    }
    if tris.is_empty() {
        return Err(Error::MalformedFile("mesh has no faces with area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.gen::<f64>() * total;
        let i = cumulative.partition_point(|&c| c < t).min(tris.len() - 1);
        let (a, b, c, normal) = tris[i];
        let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(a + (b - a) * u + (c - a) * v);
        normals.push(normal);
    }
    PointCloud::with_normals(points, normals)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::MalformedFile(format!("unknown PLY type {other}"))),
        })
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn read_binary<R: Read>(r: &mut R, ty: Scalar, big: bool) -> std::io::Result<f64> {
    macro_rules! rd {
        ($le:ident, $be:ident) => {
            if big {
                r.$be::<BigEndian>()? as f64
            } else {
                r.$le::<LittleEndian>()? as f64
            }
        };
    }
    Ok(match ty {
        Scalar::I8 => r.read_i8()? as f64,
        Scalar::U8 => r.read_u8()? as f64,
        Scalar::I16 => rd!(read_i16, read_i16),
        Scalar::U16 => rd!(read_u16, read_u16),
        Scalar::I32 => rd!(read_i32, read_i32),
        Scalar::U32 => rd!(read_u32, read_u32),
        Scalar::F32 => rd!(read_f32, read_f32),
        Scalar::F64 => rd!(read_f64, read_f64),
    })
}

pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let malformed = |m: &str| Error::MalformedFile(m.to_string());
    let header_end = find_subslice(bytes, b"end_header")
        .ok_or_else(|| malformed("missing end_header"))?;
    let mut body_start = header_end + b"end_header".len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| malformed("header is not utf-8"))?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(malformed("missing ply magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", ..] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", ..] => encoding = Some(Encoding::BinaryLe),
            ["format", "binary_big_endian", ..] => encoding = Some(Encoding::BinaryBe),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| malformed("bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, _name] => elements
                .last_mut()
                .ok_or_else(|| malformed("property before element"))?
                .properties
                .push(Property::List {
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| malformed("property before element"))?
                .properties
                .push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty)?,
                }),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(Error::MalformedFile(format!("unexpected header line {line:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| malformed("missing format line"))?;
    let body = &bytes[body_start..];
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut ascii_tokens = match encoding {
        Encoding::Ascii => Some(
            std::str::from_utf8(body)
                .map_err(|_| malformed("ascii body is not utf-8"))?
                .split_whitespace(),
        ),
        _ => None,
    };
    let mut cursor = Cursor::new(body);
    let big = encoding == Encoding::BinaryBe;
    let mut next_value = |ty: Scalar| -> Result<f64> {
        match ascii_tokens.as_mut() {
            Some(tokens) => tokens
                .next()
                .ok_or_else(|| malformed("truncated ascii body"))?
                .parse::<f64>()
                .map_err(|e| Error::MalformedFile(e.to_string())),
            None => read_binary(&mut cursor, ty, big).map_err(|_| malformed("truncated binary body")),
        }
    };
    for element in &elements {
        let is_vertex = element.name == "vertex";
        let slot = |name: &str| match name {
            "x" => Some(0),
            "y" => Some(1),
            "z" => Some(2),
            "nx" => Some(3),
            "ny" => Some(4),
            "nz" => Some(5),
            _ => None,
        };
        let has_xyz = (0..3).all(|s| {
            element
                .properties
                .iter()
                .any(|p| matches!(p, Property::Scalar { name, .. } if slot(name) == Some(s)))
        });
        let has_normals = (3..6).all(|s| {
            element
                .properties
                .iter()
                .any(|p| matches!(p, Property::Scalar { name, .. } if slot(name) == Some(s)))
        });
        if is_vertex && !has_xyz {
            return Err(malformed("vertex element lacks x/y/z"));
        }
        for _ in 0..element.count {
            let mut row = [0.0f64; 6];
            for prop in &element.properties {
                match prop {
                    Property::Scalar { name, ty } => {
                        let v = next_value(*ty)?;
                        if let Some(s) = slot(name) {
                            row[s] = v;
                        }
                    }
                    Property::List { count, item } => {
                        let len = next_value(*count)?;
                        if len < 0.0 {
                            return Err(malformed("negative list length"));
                        }
                        for _ in 0..len as usize {
                            next_value(*item)?;
                        }
                    }
                }
            }
            if is_vertex {
                points.push(Vec3::new(row[0], row[1], row[2]));
                if has_normals {
                    normals.push(Vec3::new(row[3], row[4], row[5]));
                }
            }
        }
        if is_vertex {
            // remaining elements (faces etc.) are not needed
            break;
        }
    }
    finish_cloud(points, normals)
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

/// Write x/y/z (float32), nx/ny/nz when the cloud carries normals, and
/// red/green/blue (uchar) when colors are given.
pub fn write_ply(
    path: &Path,
    cloud: &PointCloud,
    colors: Option<&[[u8; 3]]>,
    encoding: PlyEncoding,
) -> Result<()> {
    let bytes = encode_ply(cloud, colors, encoding)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_ply(
    cloud: &PointCloud,
    colors: Option<&[[u8; 3]]>,
    encoding: PlyEncoding,
) -> Result<Vec<u8>> {
    if let Some(c) = colors {
        if c.len() != cloud.len() {
            return Err(Error::CountMismatch(format!(
                "{} colors for {} points",
                c.len(),
                cloud.len()
            )));
        }
    }
    let mut out = BufWriter::new(Vec::new());
    let io = |e: std::io::Error| Error::MalformedFile(e.to_string());
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    write!(out, "ply\nformat {format} 1.0\nelement vertex {}\n", cloud.len()).map_err(io)?;
    out.write_all(b"property float x\nproperty float y\nproperty float z\n")
        .map_err(io)?;
    let normals = cloud.normals();
    if normals.is_some() {
        out.write_all(b"property float nx\nproperty float ny\nproperty float nz\n")
            .map_err(io)?;
    }
    if colors.is_some() {
        out.write_all(b"property uchar red\nproperty uchar green\nproperty uchar blue\n")
            .map_err(io)?;
    }
    out.write_all(b"end_header\n").map_err(io)?;
    for (i, p) in cloud.points().iter().enumerate() {
        let mut floats = vec![p.x as f32, p.y as f32, p.z as f32];
        if let Some(n) = normals {
            floats.extend([n[i].x as f32, n[i].y as f32, n[i].z as f32]);
        }
        match encoding {
            PlyEncoding::Ascii => {
                let mut fields: Vec<String> = floats.iter().map(|f| format!("{f}")).collect();
                if let Some(c) = colors {
                    fields.extend(c[i].iter().map(|b| b.to_string()));
                }
                writeln!(out, "{}", fields.join(" ")).map_err(io)?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for f in floats {
                    out.write_f32::<LittleEndian>(f).map_err(io)?;
                }
                if let Some(c) = colors {
                    out.write_all(&c[i]).map_err(io)?;
                }
            }
        }
    }
    out.into_inner().map_err(|e| io(e.into_error()))
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut text = String::new();
    for (i, p) in cloud.points().iter().enumerate() {
        text.push_str(&format!("{} {} {}", p.x, p.y, p.z));
        if let Some(n) = cloud.normals() {
            text.push_str(&format!(" {} {} {}", n[i].x, n[i].y, n[i].z));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
