//! COLMAP text-format reconstruction directories.
//!
//! Layout: `cameras.txt`, `images.txt`, `points3D.txt`, `images/<name>`, and
//! optionally `normals/<stem>.pfm|png` priors plus `gt/depth/<stem>.pfm`,
//! `gt/normal/<stem>.pfm` and `gt/mesh.ply`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Dataset, View};
use crate::io::{pfm, ply, png};
use crate::{Camera, Error, Result, Vec3};

struct Intrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(std::fs::read_to_string(path)?)
}

fn malformed(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::MalformedLine {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse<T: std::str::FromStr>(file: &Path, line: usize, token: Option<&str>, what: &str) -> Result<T> {
    let token = token.ok_or_else(|| malformed(file, line, format!("missing {what}")))?;
    token
        .parse()
        .map_err(|_| malformed(file, line, format!("cannot parse {what} from `{token}`")))
}

fn parse_finite(file: &Path, line: usize, token: Option<&str>, what: &str) -> Result<f64> {
    let v: f64 = parse(file, line, token, what)?;
    if !v.is_finite() {
        return Err(malformed(file, line, format!("{what} is not finite")));
    }
    Ok(v)
}

fn parse_cameras(path: &Path) -> Result<HashMap<u32, Intrinsics>> {
    let text = read_text(path)?;
    let mut cameras = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        let id: u32 = parse(path, line_no, tok.next(), "camera id")?;
        let model = tok
            .next()
            .ok_or_else(|| malformed(path, line_no, "missing camera model"))?;
        let width: usize = parse(path, line_no, tok.next(), "width")?;
        let height: usize = parse(path, line_no, tok.next(), "height")?;
        let params: Vec<f64> = tok
            .map(|t| {
                t.parse()
                    .map_err(|_| malformed(path, line_no, format!("bad parameter `{t}`")))
            })
            .collect::<Result<_>>()?;
        let (fx, fy, cx, cy) = match model {
            "PINHOLE" if params.len() == 4 => (params[0], params[1], params[2], params[3]),
            "SIMPLE_PINHOLE" if params.len() == 3 => (params[0], params[0], params[1], params[2]),
            "PINHOLE" | "SIMPLE_PINHOLE" => {
                return Err(malformed(
                    path,
                    line_no,
                    format!("{model} with {} parameters", params.len()),
                ))
            }
            other => return Err(Error::UnsupportedCameraModel(other.to_string())),
        };
        cameras.insert(
            id,
            Intrinsics {
                fx,
                fy,
                cx,
                cy,
                width,
                height,
            },
        );
    }
    Ok(cameras)
}

struct ImageEntry {
    qvec: [f64; 4],
    tvec: Vec3,
    camera_id: u32,
    name: String,
    line: usize,
}

fn parse_images(path: &Path) -> Result<Vec<ImageEntry>> {
    let text = read_text(path)?;
    let mut entries = Vec::new();
    let mut expect_points = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.starts_with('#') {
            continue;
        }
        if expect_points {
            // the 2D observation line may be empty
            expect_points = false;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let _id: u32 = parse(path, line_no, tok.next(), "image id")?;
        let mut q = [0.0; 4];
        for (k, v) in q.iter_mut().enumerate() {
            *v = parse_finite(path, line_no, tok.next(), &format!("quaternion component {k}"))?;
        }
        let tx = parse_finite(path, line_no, tok.next(), "tx")?;
        let ty = parse_finite(path, line_no, tok.next(), "ty")?;
        let tz = parse_finite(path, line_no, tok.next(), "tz")?;
        let camera_id = parse(path, line_no, tok.next(), "camera id")?;
        let name = tok
            .next()
            .ok_or_else(|| malformed(path, line_no, "missing image name"))?
            .to_string();
        entries.push(ImageEntry {
            qvec: q,
            tvec: Vec3::new(tx, ty, tz),
            camera_id,
            name,
            line: line_no,
        });
        expect_points = true;
    }
    Ok(entries)
}

fn parse_points(path: &Path) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let text = read_text(path)?;
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        let _id: u64 = parse(path, line_no, tok.next(), "point id")?;
        let x = parse_finite(path, line_no, tok.next(), "x")?;
        let y = parse_finite(path, line_no, tok.next(), "y")?;
        let z = parse_finite(path, line_no, tok.next(), "z")?;
        let r: f64 = parse(path, line_no, tok.next(), "red")?;
        let g: f64 = parse(path, line_no, tok.next(), "green")?;
        let b: f64 = parse(path, line_no, tok.next(), "blue")?;
        points.push(Vec3::new(x, y, z));
        colors.push(Vec3::new(r, g, b) / 255.0);
    }
    Ok((points, colors))
}

fn optional(path: PathBuf) -> Option<PathBuf> {
    path.exists().then_some(path)
}

pub fn load_colmap(dir: &Path) -> Result<Dataset> {
    let cameras_path = dir.join("cameras.txt");
    let images_path = dir.join("images.txt");
    let cameras = parse_cameras(&cameras_path)?;
    let entries = parse_images(&images_path)?;
    let (points, point_colors) = parse_points(&dir.join("points3D.txt"))?;

    let mut views = Vec::with_capacity(entries.len());
    for e in entries {
        let k = cameras
            .get(&e.camera_id)
            .ok_or_else(|| malformed(&images_path, e.line, format!("unknown camera id {}", e.camera_id)))?;
        let camera = Camera::from_quaternion(k.fx, k.fy, k.cx, k.cy, k.width, k.height, e.qvec, e.tvec)?;
        let image_path = dir.join("images").join(&e.name);
        let image = png::read_rgb(&image_path)?;
        if image.width != k.width || image.height != k.height {
            return Err(Error::ShapeMismatch(format!(
                "{} is {}x{} but its camera is {}x{}",
                image_path.display(),
                image.width,
                image.height,
                k.width,
                k.height
            )));
        }
        let mut view = View {
            name: e.name,
            image,
            camera,
            prior_normal: None,
            gt_depth: None,
            gt_normal: None,
        };
        let stem = view.stem().to_string();
        view.prior_normal = if let Some(p) = optional(dir.join("normals").join(format!("{stem}.pfm"))) {
            Some(pfm::read_normals(&p)?)
        } else if let Some(p) = optional(dir.join("normals").join(format!("{stem}.png"))) {
            Some(png::read_normals(&p)?)
        } else {
            None
        };
        if let Some(p) = optional(dir.join("gt").join("depth").join(format!("{stem}.pfm"))) {
            view.gt_depth = Some(pfm::read_depth(&p)?);
        }
        if let Some(p) = optional(dir.join("gt").join("normal").join(format!("{stem}.pfm"))) {
            view.gt_normal = Some(pfm::read_normals(&p)?);
        }
        for (what, map_dims) in [
            ("prior normal", view.prior_normal.as_ref().map(|m| (m.width, m.height))),
            (
                "ground-truth depth",
                view.gt_depth.as_ref().map(|m| (m.width, m.height)),
            ),
            (
                "ground-truth normal",
                view.gt_normal.as_ref().map(|m| (m.width, m.height)),
            ),
        ] {
            if let Some((w, h)) = map_dims {
                if (w, h) != (k.width, k.height) {
                    return Err(Error::ShapeMismatch(format!("{what} of {stem} is {w}x{h}")));
                }
            }
        }
        views.push(view);
    }
    let gt_mesh = match optional(dir.join("gt").join("mesh.ply")) {
        Some(p) => Some(ply::read_mesh(&p)?),
        None => None,
    };
    Ok(Dataset {
        views,
        points,
        point_colors,
        gt_mesh,
    })
}

/// Writes the dataset in the layout read by [`load_colmap`]. Every view gets
/// its own PINHOLE camera; priors and ground truth are written when present.
pub fn save_colmap(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut cameras = String::from(
        "# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n",
    );
    let mut images = String::from("# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
    for (i, v) in dataset.views.iter().enumerate() {
        let c = &v.camera;
        let id = i + 1;
        writeln!(
            cameras,
            "{id} PINHOLE {} {} {} {} {} {}",
            c.width, c.height, c.fx, c.fy, c.cx, c.cy
        )
        .unwrap();
        let q = c.quaternion();
        let t = c.translation;
        writeln!(
            images,
            "{id} {} {} {} {} {} {} {} {id} {}\n",
            q[0], q[1], q[2], q[3], t.x, t.y, t.z, v.name
        )
        .unwrap();
        png::write_rgb(&dir.join("images").join(&v.name), &v.image)?;
        let stem = v.stem();
        if let Some(n) = &v.prior_normal {
            std::fs::create_dir_all(dir.join("normals"))?;
            pfm::write_normals(&dir.join("normals").join(format!("{stem}.pfm")), n)?;
        }
        if let Some(d) = &v.gt_depth {
            std::fs::create_dir_all(dir.join("gt").join("depth"))?;
            pfm::write_depth(&dir.join("gt").join("depth").join(format!("{stem}.pfm")), d)?;
        }
        if let Some(n) = &v.gt_normal {
            std::fs::create_dir_all(dir.join("gt").join("normal"))?;
            pfm::write_normals(&dir.join("gt").join("normal").join(format!("{stem}.pfm")), n)?;
        }
    }
    let mut points = String::from(
        "# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]\n",
    );
    for (i, (p, c)) in dataset.points.iter().zip(&dataset.point_colors).enumerate() {
        let rgb = c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        writeln!(
            points,
            "{} {} {} {} {} {} {} 0",
            i + 1,
            p.x,
            p.y,
            p.z,
            rgb.x,
            rgb.y,
            rgb.z
        )
        .unwrap();
    }
    std::fs::write(dir.join("cameras.txt"), cameras)?;
    std::fs::write(dir.join("images.txt"), images)?;
    std::fs::write(dir.join("points3D.txt"), points)?;
    if let Some(mesh) = &dataset.gt_mesh {
        std::fs::create_dir_all(dir.join("gt"))?;
        ply::write_mesh(&dir.join("gt").join("mesh.ply"), mesh)?;
    }
    Ok(())
}
