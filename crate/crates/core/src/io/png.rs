use std::path::Path;

use crate::patchmatch::{Label, ReliabilityMask};
use crate::{Error, Map, NormalMap, Result, RgbImage, Vec3};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let c = img.get(x as usize, y as usize);
        *px = image::Rgb([to_u8(c.x), to_u8(c.y), to_u8(c.z)]);
    }
    buf.save(path)?;
    Ok(())
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Map::from_fn(w as usize, h as usize, |x, y| {
        let p = img.get_pixel(x as u32, y as u32).0;
        Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0
    }))
}

/// Normal maps stored as colors with `c = (n + 1) / 2`; black marks undefined.
pub fn write_normals(path: &Path, normals: &NormalMap) -> Result<()> {
    let colors = normals.map(|n| {
        if n.norm_squared() > 0.0 {
            (n.add_scalar(1.0)) * 0.5
        } else {
            Vec3::zeros()
        }
    });
    write_rgb(path, &colors)
}

pub fn read_normals(path: &Path) -> Result<NormalMap> {
    let colors = read_rgb(path)?;
    Ok(colors.map(|c| {
        if c.norm_squared() == 0.0 {
            return Vec3::zeros();
        }
        let n = c * 2.0 - Vec3::repeat(1.0);
        let len = n.norm();
        if len > 1e-6 {
            n / len
        } else {
            Vec3::zeros()
        }
    }))
}

/// 255 Reliable, 128 Unreliable, 0 Invalid.
pub fn write_mask(path: &Path, mask: &ReliabilityMask) -> Result<()> {
    let mut buf = image::GrayImage::new(mask.labels.width as u32, mask.labels.height as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        px.0 = [match mask.labels.get(x as usize, y as usize) {
            Label::Reliable => 255,
            Label::Unreliable => 128,
            Label::Invalid => 0,
        }];
    }
    buf.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Map::from_fn(9, 8, |x, y| Vec3::new(x as f64 / 8.0, y as f64 / 7.0, 0.5));
        write_rgb(&path, &img).unwrap();
        let back = read_rgb(&path).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).amax() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn normal_png_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.png");
        let n = Vec3::new(0.3, -0.2, -1.0).normalize();
        let map = Map::filled(8, 8, n);
        write_normals(&path, &map).unwrap();
        let back = read_normals(&path).unwrap();
        assert!(back.get(3, 3).dot(&n) > 0.9999);
    }
}
