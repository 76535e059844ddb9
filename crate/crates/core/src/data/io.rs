//! PNG dataset layout: `root/rgb/*.png` (8-bit RGB), `root/depth/*.png`
//! (16-bit gray, millimeters) and `root/label/*.png` (8-bit class ids),
//! matched by file stem.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{Dataset, Image, LabelMap, Sample};
use crate::{Error, Result};

const MM_PER_M: f32 = 1000.0;

fn image_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| image_err(path, e.to_string()))
}

pub fn load_rgb(path: &Path) -> Result<Image> {
    let img = match open(path)? {
        DynamicImage::ImageRgb8(b) => b,
        other => return Err(image_err(path, format!("expected 8-bit RGB, found {:?}", other.color()))),
    };
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Image::from_vec(h as usize, w as usize, 3, data)
}

/// Depth in meters.
pub fn load_depth(path: &Path) -> Result<Image> {
    let img = match open(path)? {
        DynamicImage::ImageLuma16(b) => b,
        other => return Err(image_err(path, format!("expected 16-bit gray depth, found {:?}", other.color()))),
    };
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32 / MM_PER_M).collect();
    Image::from_vec(h as usize, w as usize, 1, data)
}

pub fn load_label(path: &Path) -> Result<LabelMap> {
    let img = match open(path)? {
        DynamicImage::ImageLuma8(b) => b,
        other => return Err(image_err(path, format!("expected 8-bit gray labels, found {:?}", other.color()))),
    };
    let (w, h) = img.dimensions();
    LabelMap::from_vec(h as usize, w as usize, 1, img.into_raw())
}

fn save_buffer<P, C>(path: &Path, buf: ImageBuffer<P, C>) -> Result<()>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))
}

/// Values in [0, 1] are quantized to 8 bits.
pub fn save_rgb(path: &Path, img: &Image) -> Result<()> {
    let raw = img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = ImageBuffer::<Rgb<u8>, Vec<u8>>::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| image_err(path, "rgb raster size mismatch"))?;
    save_buffer(path, buf)
}

/// Meters are stored as whole millimeters.
pub fn save_depth(path: &Path, img: &Image) -> Result<()> {
    let raw = img
        .data
        .iter()
        .map(|&v| (v * MM_PER_M).round().clamp(0.0, u16::MAX as f32) as u16)
        .collect();
    let buf = ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| image_err(path, "depth raster size mismatch"))?;
    save_buffer(path, buf)
}

pub fn save_label(path: &Path, labels: &LabelMap) -> Result<()> {
    let buf = ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(labels.width as u32, labels.height as u32, labels.data.clone())
        .ok_or_else(|| image_err(path, "label raster size mismatch"))?;
    save_buffer(path, buf)
}

/// Fixed palette: class 0 black, others spread over the hue circle.
pub fn class_palette(class: u8) -> [u8; 3] {
    if class == 0 {
        return [0, 0, 0];
    }
    // Golden-ratio hue stepping keeps neighboring ids distinguishable.
    let hue = (class as f32 * 0.618_034).fract();
    let rgb = super::augment::hsv_to_rgb([hue, 0.75, 0.95]);
    rgb.map(|v| (v * 255.0).round() as u8)
}

pub fn save_label_color(path: &Path, labels: &LabelMap) -> Result<()> {
    let raw = labels.data.iter().flat_map(|&l| class_palette(l)).collect();
    let buf = ImageBuffer::<Rgb<u8>, Vec<u8>>::from_raw(labels.width as u32, labels.height as u32, raw)
        .ok_or_else(|| image_err(path, "label raster size mismatch"))?;
    save_buffer(path, buf)
}

fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let mut stems = BTreeSet::new();
    if !dir.is_dir() {
        return Ok(stems);
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if let (true, Some(stem)) = (is_png, path.file_stem().and_then(|s| s.to_str())) {
            stems.insert(stem.to_string());
        }
    }
    Ok(stems)
}

fn subdir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let [rgb, depth, label] = ["rgb", "depth", "label"].map(|d| png_stems(&subdir(root, d)));
    let (rgb, depth, label) = (rgb?, depth?, label?);
    if rgb.is_empty() && depth.is_empty() && label.is_empty() {
        return Err(Error::NoSamples(root.to_path_buf()));
    }
    let all: BTreeSet<&String> = rgb.iter().chain(&depth).chain(&label).collect();
    let unmatched: Vec<String> = all
        .iter()
        .filter(|s| !(rgb.contains(**s) && depth.contains(**s) && label.contains(**s)))
        .map(|s| s.to_string())
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::UnmatchedStems(unmatched.join(", ")));
    }
    let mut ds = Dataset::default();
    for stem in rgb {
        let file = format!("{stem}.png");
        let sample = Sample::new(
            load_rgb(&subdir(root, "rgb").join(&file))?,
            load_depth(&subdir(root, "depth").join(&file))?,
            load_label(&subdir(root, "label").join(&file))?,
        )
        .map_err(|e| image_err(&root.join(&file), e.to_string()))?;
        ds.names.push(stem);
        ds.samples.push(sample);
    }
    Ok(ds)
}

pub fn save_dataset(root: &Path, ds: &Dataset) -> Result<()> {
    for d in ["rgb", "depth", "label"] {
        std::fs::create_dir_all(subdir(root, d))?;
    }
    for (name, s) in ds.names.iter().zip(&ds.samples) {
        let file = format!("{name}.png");
        save_rgb(&subdir(root, "rgb").join(&file), &s.rgb)?;
        save_depth(&subdir(root, "depth").join(&file), &s.depth)?;
        save_label(&subdir(root, "label").join(&file), &s.label)?;
    }
    Ok(())
}
