//! PLY writing (binary little-endian) and reading (any encoding, via `ply-rs`).

use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use ply_rs::ply::{DefaultElement, Property};

use crate::mesh::TriangleMesh;
use crate::{Error, Result, Vec3};

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "PLY",
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Vertices as three `float`, faces as `uchar` count plus three `int`.
pub fn write_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    )?;
    for v in &mesh.vertices {
        for c in v.iter() {
            out.write_f32::<LittleEndian>(*c as f32)?;
        }
    }
    for f in &mesh.faces {
        out.write_u8(3)?;
        for &i in f {
            out.write_i32::<LittleEndian>(i as i32)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes a vertex-only PLY whose properties are all `double`.
pub fn write_vertex_table(path: &Path, properties: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        rows.len()
    )?;
    for p in properties {
        writeln!(out, "property double {p}")?;
    }
    writeln!(out, "end_header")?;
    for row in rows {
        debug_assert_eq!(row.len(), properties.len());
        for v in row {
            out.write_f64::<LittleEndian>(*v)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn load(path: &Path) -> Result<ply_rs::ply::Ply<DefaultElement>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let parser = ply_rs::parser::Parser::<DefaultElement>::new();
    parser.read_ply(&mut f).map_err(|e| format_err(path, e.to_string()))
}

fn scalar(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        _ => return None,
    })
}

fn index_list(p: &Property) -> Option<Vec<u32>> {
    Some(match p {
        Property::ListChar(v) => v.iter().map(|&i| i as u32).collect(),
        Property::ListUChar(v) => v.iter().map(|&i| i as u32).collect(),
        Property::ListShort(v) => v.iter().map(|&i| i as u32).collect(),
        Property::ListUShort(v) => v.iter().map(|&i| i as u32).collect(),
        Property::ListInt(v) => v.iter().map(|&i| i as u32).collect(),
        Property::ListUInt(v) => v.clone(),
        _ => return None,
    })
}

/// Reads the named `vertex` properties as `f64` rows.
pub fn read_vertex_table(path: &Path, properties: &[&str]) -> Result<Vec<Vec<f64>>> {
    let ply = load(path)?;
    let vertices = ply
        .payload
        .get("vertex")
        .ok_or_else(|| format_err(path, "no vertex element"))?;
    vertices
        .iter()
        .map(|v| {
            properties
                .iter()
                .map(|name| {
                    v.get(*name)
                        .and_then(scalar)
                        .ok_or_else(|| format_err(path, format!("missing scalar property `{name}`")))
                })
                .collect()
        })
        .collect()
}

/// Reads vertices and faces; polygons with more than three corners are fanned.
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let ply = load(path)?;
    let mut mesh = TriangleMesh::default();
    let vertices = ply
        .payload
        .get("vertex")
        .ok_or_else(|| format_err(path, "no vertex element"))?;
    for v in vertices {
        let coord = |name: &str| {
            v.get(name)
                .and_then(scalar)
                .ok_or_else(|| format_err(path, format!("vertex lacks `{name}`")))
        };
        mesh.vertices.push(Vec3::new(coord("x")?, coord("y")?, coord("z")?));
    }
    if let Some(faces) = ply.payload.get("face") {
        for f in faces {
            let list = f
                .get("vertex_indices")
                .or_else(|| f.get("vertex_index"))
                .and_then(index_list)
                .ok_or_else(|| format_err(path, "face lacks a vertex index list"))?;
            if list.iter().any(|&i| i as usize >= mesh.vertices.len()) {
                return Err(format_err(path, "face index out of range"));
            }
            for k in 1..list.len().saturating_sub(1) {
                mesh.faces.push([list[0], list[k], list[k + 1]]);
            }
        }
    }
    Ok(mesh)
}
