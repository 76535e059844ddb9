//! RGBD samples: synthetic generation, PNG datasets, augmentation.

pub mod augment;
pub mod io;
pub mod synth;

use acnet_tensor::{Element, Tensor};

use crate::{Error, Result};

/// Channel-last raster, H×W×C.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<P> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<P>,
}

pub type Image = Raster<f32>;
pub type LabelMap = Raster<u8>;

impl<P: Copy> Raster<P> {
    pub fn filled(height: usize, width: usize, channels: usize, value: P) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<P>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} raster with {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> P {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: P) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[P] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_size<Q>(&self, other: &Raster<Q>) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// One RGBD example. `rgb` is H×W×3, `depth` H×W×1 (meters), `label` H×W×1
/// with 0 meaning unlabeled.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub rgb: Image,
    pub depth: Image,
    pub label: LabelMap,
}

impl Sample {
    pub fn new(rgb: Image, depth: Image, label: LabelMap) -> Result<Self> {
        if rgb.channels != 3 || depth.channels != 1 || label.channels != 1 {
            return Err(Error::Shape("sample needs 3-channel rgb, 1-channel depth and label".into()));
        }
        if !rgb.same_size(&depth) || !rgb.same_size(&label) {
            return Err(Error::Shape(format!(
                "rgb {}x{}, depth {}x{}, label {}x{}",
                rgb.height, rgb.width, depth.height, depth.width, label.height, label.width
            )));
        }
        Ok(Self { rgb, depth, label })
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }

    pub fn width(&self) -> usize {
        self.rgb.width
    }
}

/// Samples with their file stems (synthetic samples get generated names).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn from_samples(samples: Vec<Sample>) -> Self {
        let names = (0..samples.len()).map(|i| format!("{i:05}")).collect();
        Self { names, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Largest label value present, if any pixel is labeled.
    pub fn max_label(&self) -> Option<u8> {
        self.samples.iter().flat_map(|s| s.label.data.iter().copied()).max()
    }
}

/// N×H×W integer class raster for a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelBatch {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelBatch {
    pub fn new(n: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != n * height * width {
            return Err(Error::Shape(format!("{n}x{height}x{width} labels with {} values", data.len())));
        }
        Ok(Self { n, height, width, data })
    }

    pub fn from_maps(maps: &[&LabelMap]) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::Shape("empty label batch".into()))?;
        let mut data = Vec::with_capacity(maps.len() * first.data.len());
        for m in maps {
            if !m.same_size(first) {
                return Err(Error::Shape("label maps in a batch differ in size".into()));
            }
            data.extend_from_slice(&m.data);
        }
        Self::new(maps.len(), first.height, first.width, data)
    }

    pub fn map(&self, index: usize) -> LabelMap {
        let plane = self.height * self.width;
        LabelMap {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data[index * plane..(index + 1) * plane].to_vec(),
        }
    }
}

/// Channel-last raster to a 1×C×H×W tensor.
pub fn raster_to_tensor<T: Element>(img: &Image) -> Result<Tensor<T>> {
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut out = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(ch * h + y) * w + x] = T::from_f64(img.at(y, x, ch) as f64);
            }
        }
    }
    Ok(Tensor::new(&[1, c, h, w], out)?)
}

/// Model inputs for a batch of (already normalized) samples.
pub struct Batch<T> {
    pub rgb: Tensor<T>,
    pub depth: Tensor<T>,
    pub labels: LabelBatch,
}

pub fn make_batch<T: Element>(samples: &[&Sample]) -> Result<Batch<T>> {
    let rgbs = samples.iter().map(|s| raster_to_tensor(&s.rgb)).collect::<Result<Vec<_>>>()?;
    let depths = samples.iter().map(|s| raster_to_tensor(&s.depth)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<&LabelMap> = samples.iter().map(|s| &s.label).collect();
    Ok(Batch {
        rgb: Tensor::stack_batch(&rgbs.iter().collect::<Vec<_>>())?,
        depth: Tensor::stack_batch(&depths.iter().collect::<Vec<_>>())?,
        labels: LabelBatch::from_maps(&labels)?,
    })
}
