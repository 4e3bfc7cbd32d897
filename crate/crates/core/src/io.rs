//! Light field directories of numbered 8-bit views, plus debug image dumps.

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{io_err, Error, Result};
use crate::lightfield::{Image, LightField3D};
use crate::plane::Plane;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads any PNG/PPM file as a 3-channel image with values in [0, 1].
pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut planes = vec![Plane::zeros(h, w); 3];
    for (x, y, px) in img.enumerate_pixels() {
        for (ch, plane) in planes.iter_mut().enumerate() {
            plane.set(y as usize, x as usize, f64::from(px[ch]) / 255.0);
        }
    }
    Image::new(planes)
}

/// Writes an image as 8-bit RGB (1-channel images are replicated).
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let ch = |c: usize| img.plane(c.min(img.channels() - 1));
    let out: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
        let (r, c) = (y as usize, x as usize);
        Rgb([to_u8(ch(0).get(r, c)), to_u8(ch(1).get(r, c)), to_u8(ch(2).get(r, c))])
    });
    out.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Writes a plane as grayscale, linearly mapping `[lo, hi]` to `[0, 255]`.
pub fn save_plane_png(path: &Path, plane: &Plane, lo: f64, hi: f64) -> Result<()> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let out: GrayImage = ImageBuffer::from_fn(plane.width() as u32, plane.height() as u32, |x, y| {
        Luma([to_u8((plane.get(y as usize, x as usize) - lo) / span)])
    });
    out.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn view_index(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !matches!(ext.as_str(), "png" | "ppm") {
        return None;
    }
    stem.strip_prefix("view_")?.parse().ok()
}

/// Lists `view_NNNN.{png,ppm}` files of a directory sorted by index.
pub fn list_views(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| view_index(&p).map(|i| (i, p)))
        .collect();
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Loads every numbered view of a directory.
pub fn load_light_field(dir: &Path) -> Result<LightField3D> {
    let paths = list_views(dir)?;
    if paths.is_empty() {
        return Err(Error::Data { path: dir.to_path_buf(), reason: "no view_NNNN images found".into() });
    }
    let views = paths.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
    LightField3D::new(views).map_err(|e| Error::Data { path: dir.to_path_buf(), reason: e.to_string() })
}

/// Writes `view_0000.png`, `view_0001.png`, … into `dir` (created if missing).
pub fn save_light_field(dir: &Path, lf: &LightField3D) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, view) in lf.views().iter().enumerate() {
        save_image(&dir.join(format!("view_{i:04}.png")), view)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_quantized_views() {
        let dir = tempfile::tempdir().unwrap();
        let views = (0..3)
            .map(|i| {
                Image::new(
                    (0..3)
                        .map(|ch| Plane::from_fn(4, 6, |r, c| ((i * 13 + ch * 5 + r * 3 + c) % 256) as f64 / 255.0))
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let lf = LightField3D::new(views).unwrap();
        save_light_field(dir.path(), &lf).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let back = load_light_field(dir.path()).unwrap();
        assert_eq!(back, lf);
    }

    #[test]
    fn empty_dir_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_light_field(dir.path()), Err(Error::Data { .. })));
    }
}
