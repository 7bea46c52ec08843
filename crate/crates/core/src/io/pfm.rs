//! Portable float map: little-endian `f32`, scanlines stored bottom-up.

use std::io::{BufReader, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};

use crate::{DepthMap, Error, Map, NormalMap, Result, Vec3};

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "PFM",
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn write_depth(path: &Path, map: &DepthMap) -> Result<()> {
    write_raw(path, map.width, map.height, 1, |x, y, _| *map.get(x, y))
}

pub fn write_normals(path: &Path, map: &NormalMap) -> Result<()> {
    write_raw(path, map.width, map.height, 3, |x, y, c| map.get(x, y)[c])
}

fn write_raw(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    value: impl Fn(usize, usize, usize) -> f64,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let tag = if channels == 3 { "PF" } else { "Pf" };
    write!(out, "{tag}\n{width} {height}\n-1.0\n")?;
    for y in (0..height).rev() {
        for x in 0..width {
            for c in 0..channels {
                out.write_f32::<LittleEndian>(value(x, y, c) as f32)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Raw channels of a PFM file: (width, height, channels, top-down data).
fn read_raw(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let next_token = |reader: &mut BufReader<std::fs::File>| -> Result<String> {
        let mut token = String::new();
        loop {
            let mut byte = [0u8; 1];
            if reader.read(&mut byte)? == 0 {
                break;
            }
            let ch = byte[0] as char;
            if ch.is_ascii_whitespace() {
                if token.is_empty() {
                    continue;
                }
                break;
            }
            token.push(ch);
        }
        Ok(token)
    };
    let tag = next_token(&mut reader)?;
    let channels = match tag.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(format_err(path, format!("bad magic `{other}`"))),
    };
    let parse = |s: String, what: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| format_err(path, format!("bad {what} `{s}`")))
    };
    let width = parse(next_token(&mut reader)?, "width")? as usize;
    let height = parse(next_token(&mut reader)?, "height")? as usize;
    let scale = parse(next_token(&mut reader)?, "scale")?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let n = width * height * channels;
    if bytes.len() < n * 4 {
        return Err(format_err(
            path,
            format!("expected {} bytes of data, found {}", n * 4, bytes.len()),
        ));
    }
    let mut data = vec![0f32; n];
    for (y, row) in bytes[..n * 4].chunks_exact(width * channels * 4).enumerate() {
        let dst_row = height - 1 - y;
        for (i, chunk) in row.chunks_exact(4).enumerate() {
            data[dst_row * width * channels + i] = if scale < 0.0 {
                LittleEndian::read_f32(chunk)
            } else {
                BigEndian::read_f32(chunk)
            };
        }
    }
    Ok((width, height, channels, data))
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let (w, h, c, data) = read_raw(path)?;
    if c != 1 {
        return Err(format_err(path, "expected a single-channel map"));
    }
    Map::from_vec(w, h, data.into_iter().map(f64::from).collect())
}

pub fn read_normals(path: &Path) -> Result<NormalMap> {
    let (w, h, c, data) = read_raw(path)?;
    if c != 3 {
        return Err(format_err(path, "expected a three-channel map"));
    }
    let normals = data
        .chunks_exact(3)
        .map(|v| Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64))
        .collect();
    Map::from_vec(w, h, normals)
}
