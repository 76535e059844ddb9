//! Procedural RGBD scenes with exact labels.
//!
//! Each scene is a background (class 1) whose depth ramps linearly from far
//! at the top to near at the bottom, overlaid with flat-colored shapes drawn
//! in painter's order. A shape's class fixes its color, its outline kind and
//! how far in front of the background it sits, so both modalities carry the
//! class signal unless a cue mode removes one of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Image, LabelMap, Sample};
use crate::{Error, Result};

pub const BACKGROUND_CLASS: u8 = 1;
const FAR_DEPTH: f32 = 5.0;
const NEAR_DEPTH: f32 = 2.0;
const COLOR_NOISE: f64 = 0.02;
const BACKGROUND_RGB: [f32; 3] = [0.55, 0.52, 0.48];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CueMode {
    Both,
    /// Depth is the bare ramp; shapes are visible only in color.
    ColorOnly,
    /// Color is uniform gray plus noise; shapes are visible only in depth.
    DepthOnly,
}

impl CueMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(CueMode::Both),
            "color_only" => Ok(CueMode::ColorOnly),
            "depth_only" => Ok(CueMode::DepthOnly),
            _ => Err(Error::config(format!("unknown cue_mode {s:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CueMode::Both => "both",
            CueMode::ColorOnly => "color_only",
            CueMode::DepthOnly => "depth_only",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Including the ignore class 0 and the background class 1.
    pub num_classes: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub cue_mode: CueMode,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 8,
            height: 64,
            width: 64,
            num_classes: 6,
            shapes_min: 3,
            shapes_max: 6,
            cue_mode: CueMode::Both,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("synthetic image count must be positive"));
        }
        if self.height == 0 || self.width == 0 || self.height % 32 != 0 || self.width % 32 != 0 {
            return Err(Error::config(format!(
                "synthetic size {}x{} must be a positive multiple of 32",
                self.height, self.width
            )));
        }
        if self.shapes_min > self.shapes_max {
            return Err(Error::config("shapes_min exceeds shapes_max"));
        }
        if self.num_classes < 3 || self.num_classes > 256 {
            return Err(Error::config(format!(
                "{} classes leave no class for shapes (need 3..=256)",
                self.num_classes
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ShapeKind {
    Rect,
    Disc,
    Triangle,
}

fn shape_kind(class: u8) -> ShapeKind {
    match (class - 2) % 3 {
        0 => ShapeKind::Rect,
        1 => ShapeKind::Disc,
        _ => ShapeKind::Triangle,
    }
}

/// Flat color for a shape class: evenly spaced hues.
pub fn class_color(class: u8, num_classes: usize) -> [f32; 3] {
    let shapes = (num_classes - 2).max(1) as f32;
    let hue = (class as f32 - 2.0) / shapes;
    super::augment::hsv_to_rgb([hue, 0.8, 0.9])
}

/// Fraction of the background depth at which a class sits (nearer for
/// higher classes).
fn depth_factor(class: u8, num_classes: usize) -> f32 {
    let shapes = (num_classes - 2).max(1) as f32;
    0.85 - 0.5 * (class as f32 - 2.0) / shapes
}

fn ramp(y: usize, height: usize) -> f32 {
    let t = if height > 1 { y as f32 / (height - 1) as f32 } else { 0.0 };
    FAR_DEPTH + (NEAR_DEPTH - FAR_DEPTH) * t
}

struct Shape {
    kind: ShapeKind,
    class: u8,
    y0: f32,
    x0: f32,
    y1: f32,
    x1: f32,
}

impl Shape {
    fn contains(&self, y: f32, x: f32) -> bool {
        if y < self.y0 || y > self.y1 || x < self.x0 || x > self.x1 {
            return false;
        }
        let (cy, cx) = ((self.y0 + self.y1) / 2.0, (self.x0 + self.x1) / 2.0);
        let (ry, rx) = ((self.y1 - self.y0) / 2.0, (self.x1 - self.x0) / 2.0);
        match self.kind {
            ShapeKind::Rect => true,
            ShapeKind::Disc => {
                let (dy, dx) = ((y - cy) / ry, (x - cx) / rx);
                dy * dy + dx * dx <= 1.0
            }
            // Apex at top center, base along the bottom edge.
            ShapeKind::Triangle => {
                let t = (y - self.y0) / (self.y1 - self.y0);
                (x - cx).abs() <= t * rx
            }
        }
    }
}

/// Generates one scene using its own rng stream.
fn generate_one(spec: &SynthSpec, index: usize) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let (h, w) = (spec.height, spec.width);
    let noise = Normal::new(0.0, COLOR_NOISE).expect("valid sigma");

    let mut label = LabelMap::filled(h, w, 1, BACKGROUND_CLASS);
    let mut color = vec![BACKGROUND_RGB; h * w];
    let mut depth = Image::filled(h, w, 1, 0.0);
    for y in 0..h {
        for x in 0..w {
            depth.set(y, x, 0, ramp(y, h));
        }
    }
    let mut shape_depth = depth.clone();

    let n_shapes = rng.gen_range(spec.shapes_min..=spec.shapes_max);
    for _ in 0..n_shapes {
        let class = rng.gen_range(2..spec.num_classes) as u8;
        let (min_side, max_side) = (h.min(w) as f32 / 3.0, h.min(w) as f32 / 1.5);
        let sh = rng.gen_range(min_side..max_side);
        let sw = rng.gen_range(min_side..max_side);
        let cy = rng.gen_range(0.0..h as f32);
        let cx = rng.gen_range(0.0..w as f32);
        let shape = Shape {
            kind: shape_kind(class),
            class,
            y0: cy - sh / 2.0,
            x0: cx - sw / 2.0,
            y1: cy + sh / 2.0,
            x1: cx + sw / 2.0,
        };
        let rgb = class_color(class, spec.num_classes);
        // The ramp is nearest at the shape's bottom edge; anchor there so the
        // shape is in front of the background everywhere it covers.
        let bottom = (shape.y1.max(0.0) as usize).min(h - 1);
        let d = ramp(bottom, h) * depth_factor(class, spec.num_classes);
        for y in 0..h {
            for x in 0..w {
                if shape.contains(y as f32 + 0.5, x as f32 + 0.5) {
                    label.set(y, x, 0, shape.class);
                    color[y * w + x] = rgb;
                    shape_depth.set(y, x, 0, d);
                }
            }
        }
    }

    let mut img = Image::filled(h, w, 3, 0.0);
    for y in 0..h {
        for x in 0..w {
            let base = match spec.cue_mode {
                CueMode::DepthOnly => [0.5; 3],
                _ => color[y * w + x],
            };
            for (c, &v) in base.iter().enumerate() {
                let noisy = v as f64 + noise.sample(&mut rng);
                img.set(y, x, c, noisy.clamp(0.0, 1.0) as f32);
            }
        }
    }
    let depth = match spec.cue_mode {
        CueMode::ColorOnly => depth,
        _ => shape_depth,
    };
    Sample::new(img, depth, label)
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let samples = (0..spec.count).map(|i| generate_one(spec, i)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset::from_samples(samples))
}

/// The background depth ramp for a raster of the given height.
pub fn background_ramp(height: usize) -> Vec<f32> {
    (0..height).map(|y| ramp(y, height)).collect()
}
