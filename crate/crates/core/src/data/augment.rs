//! Geometric and photometric augmentation plus per-modality normalization.
//!
//! One scale, crop offset and flip decision are drawn per sample and applied
//! to rgb, depth and label alike (bilinear for the continuous rasters,
//! nearest for labels). Color jitter touches rgb only.

use rand::Rng;

use super::{Dataset, Image, Raster, Sample};
use crate::{Error, Result};

pub const IGNORE_LABEL: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub scale_min: f64,
    pub scale_max: f64,
    /// Output (height, width) after cropping.
    pub crop: (usize, usize),
    pub hflip_prob: f64,
    /// Hue shift range as a fraction of the hue circle, ±.
    pub hue_jitter: f64,
    pub sat_range: (f64, f64),
    pub val_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale_min: 0.8,
            scale_max: 1.4,
            crop: (64, 64),
            hflip_prob: 0.5,
            hue_jitter: 0.05,
            sat_range: (0.8, 1.2),
            val_range: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::config(format!(
                "scale range [{}, {}] must be positive and ordered",
                self.scale_min, self.scale_max
            )));
        }
        let (ch, cw) = self.crop;
        if ch == 0 || cw == 0 || ch % 32 != 0 || cw % 32 != 0 {
            return Err(Error::config(format!("crop {ch}x{cw} must be a positive multiple of 32")));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::config("hflip_prob must lie in [0, 1]"));
        }
        if self.sat_range.0 > self.sat_range.1 || self.val_range.0 > self.val_range.1 || self.hue_jitter < 0.0 {
            return Err(Error::config("color jitter ranges must be ordered and non-negative"));
        }
        Ok(())
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    /// Fractional crop position in [0, 1] along each axis of the slack.
    pub crop_frac: (f64, f64),
    pub flip: bool,
    pub hue_shift: f64,
    pub sat_factor: f64,
    pub val_factor: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            crop_frac: (0.0, 0.0),
            flip: false,
            hue_shift: 0.0,
            sat_factor: 1.0,
            val_factor: 1.0,
        }
    }

    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let range = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        Self {
            scale: range(rng, cfg.scale_min, cfg.scale_max),
            crop_frac: (rng.gen::<f64>(), rng.gen::<f64>()),
            flip: rng.gen::<f64>() < cfg.hflip_prob,
            hue_shift: range(rng, -cfg.hue_jitter, cfg.hue_jitter),
            sat_factor: range(rng, cfg.sat_range.0, cfg.sat_range.1),
            val_factor: range(rng, cfg.val_range.0, cfg.val_range.1),
        }
    }
}

/// Per-channel normalization statistics for both modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub rgb_mean: [f64; 3],
    pub rgb_std: [f64; 3],
    pub depth_mean: f64,
    pub depth_std: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            rgb_mean: [0.5; 3],
            rgb_std: [0.25; 3],
            depth_mean: 0.0,
            depth_std: 1.0,
        }
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-6))
}

impl NormStats {
    /// Statistics of every rgb channel and of depth over the whole dataset.
    pub fn from_dataset(ds: &Dataset) -> Self {
        let mut s = Self::default();
        for c in 0..3 {
            let it = ds.samples.iter().flat_map(move |smp| smp.rgb.data.iter().skip(c).step_by(3).map(|&v| v as f64));
            (s.rgb_mean[c], s.rgb_std[c]) = mean_std(it);
        }
        s.set_depth_from(ds);
        s
    }

    /// Keeps rgb stats, computes depth stats from `ds`.
    pub fn with_depth_from(mut self, ds: &Dataset) -> Self {
        self.set_depth_from(ds);
        self
    }

    fn set_depth_from(&mut self, ds: &Dataset) {
        let it = ds.samples.iter().flat_map(|smp| smp.depth.data.iter().map(|&v| v as f64));
        (self.depth_mean, self.depth_std) = mean_std(it);
    }
}

pub fn normalize(s: &Sample, stats: &NormStats) -> Sample {
    let mut out = s.clone();
    for (i, v) in out.rgb.data.iter_mut().enumerate() {
        let c = i % 3;
        *v = ((*v as f64 - stats.rgb_mean[c]) / stats.rgb_std[c]) as f32;
    }
    for v in &mut out.depth.data {
        *v = ((*v as f64 - stats.depth_mean) / stats.depth_std) as f32;
    }
    out
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Image {
    if img.height == height && img.width == width {
        return img.clone();
    }
    let sy = img.height as f64 / height as f64;
    let sx = img.width as f64 / width as f64;
    let mut out = Image::filled(height, width, img.channels, 0.0);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let wx = fx - x0 as f64;
            for c in 0..img.channels {
                let top = img.at(y0, x0, c) as f64 * (1.0 - wx) + img.at(y0, x1, c) as f64 * wx;
                let bot = img.at(y1, x0, c) as f64 * (1.0 - wx) + img.at(y1, x1, c) as f64 * wx;
                out.set(y, x, c, (top * (1.0 - wy) + bot * wy) as f32);
            }
        }
    }
    out
}

/// Nearest-neighbor resize; never invents values.
pub fn resize_nearest<P: Copy + Default>(img: &Raster<P>, height: usize, width: usize) -> Raster<P> {
    if img.height == height && img.width == width {
        return img.clone();
    }
    let mut out = Raster::filled(height, width, img.channels, P::default());
    for y in 0..height {
        let sy = (((y as f64 + 0.5) * img.height as f64 / height as f64) as usize).min(img.height - 1);
        for x in 0..width {
            let sx = (((x as f64 + 0.5) * img.width as f64 / width as f64) as usize).min(img.width - 1);
            for c in 0..img.channels {
                out.set(y, x, c, img.at(sy, sx, c));
            }
        }
    }
    out
}

/// Crops a `height × width` window starting at (`top`, `left`), which may be
/// negative or overhang. Out-of-range pixels take `fill`, or replicate the
/// nearest edge pixel when `fill` is `None`.
fn crop<P: Copy + Default>(img: &Raster<P>, top: isize, left: isize, height: usize, width: usize, fill: Option<P>) -> Raster<P> {
    let mut out = Raster::filled(height, width, img.channels, P::default());
    for y in 0..height {
        let sy = top + y as isize;
        for x in 0..width {
            let sx = left + x as isize;
            let inside = sy >= 0 && sx >= 0 && (sy as usize) < img.height && (sx as usize) < img.width;
            for c in 0..img.channels {
                let v = match (inside, fill) {
                    (true, _) => img.at(sy as usize, sx as usize, c),
                    (false, Some(f)) => f,
                    (false, None) => {
                        let cy = sy.clamp(0, img.height as isize - 1) as usize;
                        let cx = sx.clamp(0, img.width as isize - 1) as usize;
                        img.at(cy, cx, c)
                    }
                };
                out.set(y, x, c, v);
            }
        }
    }
    out
}

pub fn hflip<P: Copy + Default>(img: &Raster<P>) -> Raster<P> {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                out.set(y, img.width - 1 - x, c, img.at(y, x, c));
            }
        }
    }
    out
}

/// Hexcone model, all components in [0, 1]; hue is a fraction of the circle.
pub fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

pub fn jitter_hsv(img: &Image, hue_shift: f64, sat_factor: f64, val_factor: f64) -> Image {
    let mut out = img.clone();
    for px in out.data.chunks_mut(3) {
        let [h, s, v] = rgb_to_hsv([px[0], px[1], px[2]]);
        let hsv = [
            (h as f64 + hue_shift).rem_euclid(1.0) as f32,
            (s as f64 * sat_factor).clamp(0.0, 1.0) as f32,
            (v as f64 * val_factor).clamp(0.0, 1.0) as f32,
        ];
        px.copy_from_slice(&hsv_to_rgb(hsv));
    }
    out
}

/// Scale, crop/pad, flip and color jitter with explicit parameters. The
/// result is not normalized.
pub fn apply_augment(s: &Sample, p: &AugmentParams, crop_size: (usize, usize)) -> Result<Sample> {
    let (ch, cw) = crop_size;
    if ch == 0 || cw == 0 || !(p.scale > 0.0) {
        return Err(Error::config(format!("degenerate crop {ch}x{cw} at scale {}", p.scale)));
    }
    let sh = ((s.height() as f64 * p.scale).round() as usize).max(1);
    let sw = ((s.width() as f64 * p.scale).round() as usize).max(1);
    let rgb = resize_bilinear(&s.rgb, sh, sw);
    let mut depth = resize_bilinear(&s.depth, sh, sw);
    if p.scale != 1.0 {
        // Zooming in behaves like stepping closer to the scene.
        let inv = (1.0 / p.scale) as f32;
        depth.data.iter_mut().for_each(|d| *d *= inv);
    }
    let label = resize_nearest(&s.label, sh, sw);

    let offset = |slack: isize, frac: f64| -> isize {
        if slack >= 0 {
            (slack as f64 * frac).round() as isize
        } else {
            // Center when the scaled image is smaller than the crop.
            slack / 2
        }
    };
    let top = offset(sh as isize - ch as isize, p.crop_frac.0);
    let left = offset(sw as isize - cw as isize, p.crop_frac.1);
    let mut rgb = crop(&rgb, top, left, ch, cw, None);
    let mut depth = crop(&depth, top, left, ch, cw, None);
    let mut label = crop(&label, top, left, ch, cw, Some(IGNORE_LABEL));
    if p.flip {
        rgb = hflip(&rgb);
        depth = hflip(&depth);
        label = hflip(&label);
    }
    if p.hue_shift != 0.0 || p.sat_factor != 1.0 || p.val_factor != 1.0 {
        rgb = jitter_hsv(&rgb, p.hue_shift, p.sat_factor, p.val_factor);
    }
    Sample::new(rgb, depth, label)
}

/// Full training-time transform: random geometry and color, then normalization.
pub fn augment(s: &Sample, cfg: &AugmentConfig, stats: &NormStats, rng: &mut impl Rng) -> Result<Sample> {
    let p = AugmentParams::sample(cfg, rng);
    Ok(normalize(&apply_augment(s, &p, cfg.crop)?, stats))
}
