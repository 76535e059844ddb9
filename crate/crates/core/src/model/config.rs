//! Network shape: stem width, four residual stages and the ablation variant.

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Two 3×3 convolutions.
    Basic,
    /// 1×1 reduce, 3×3, 1×1 expand (4× expansion).
    Bottleneck,
}

impl BlockKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(BlockKind::Basic),
            "bottleneck" => Ok(BlockKind::Bottleneck),
            _ => Err(Error::config(format!("unknown block kind {s:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Basic => "basic",
            BlockKind::Bottleneck => "bottleneck",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub blocks: usize,
    pub channels: usize,
    pub block_kind: BlockKind,
    /// Stride of the stage's first block.
    pub stride: usize,
}

impl StageSpec {
    pub fn new(blocks: usize, channels: usize, stride: usize, block_kind: BlockKind) -> Self {
        Self {
            blocks,
            channels,
            block_kind,
            stride,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Three branches with attention gating.
    Full,
    /// Stems merged by plain addition, then only the fusion branch.
    Model1,
    /// Three branches merged by plain addition.
    Model2,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "model1" => Ok(Variant::Model1),
            "model2" => Ok(Variant::Model2),
            _ => Err(Error::config(format!("unknown variant {s:?} (full, model1, model2)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Model1 => "model1",
            Variant::Model2 => "model2",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Variant::Full => 0,
            Variant::Model1 => 1,
            Variant::Model2 => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Variant::Full),
            1 => Ok(Variant::Model1),
            2 => Ok(Variant::Model2),
            _ => Err(Error::config(format!("unknown variant code {code}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AcnetConfig {
    /// Including the ignore class 0.
    pub num_classes: usize,
    pub stem_channels: usize,
    pub stages: [StageSpec; 4],
    /// Decoder widths halve from the layer4 width down to this floor.
    pub decoder_min_channels: usize,
    pub variant: Variant,
    /// Training crop (height, width).
    pub input_size: (usize, usize),
}

impl AcnetConfig {
    /// Small basic-block network for CPU experiments.
    pub fn desk(num_classes: usize) -> Self {
        let s = |c, stride| StageSpec::new(1, c, stride, BlockKind::Basic);
        Self {
            num_classes,
            stem_channels: 16,
            stages: [s(16, 1), s(32, 2), s(64, 2), s(128, 2)],
            decoder_min_channels: 128,
            variant: Variant::Full,
            input_size: (64, 64),
        }
    }

    /// ResNet-50 encoder branches.
    pub fn resnet50(num_classes: usize) -> Self {
        let s = |b, c, stride| StageSpec::new(b, c, stride, BlockKind::Bottleneck);
        Self {
            num_classes,
            stem_channels: 64,
            stages: [s(3, 256, 1), s(4, 512, 2), s(6, 1024, 2), s(3, 2048, 2)],
            decoder_min_channels: 64,
            variant: Variant::Full,
            input_size: (480, 640),
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::config(format!("num_classes {} must lie in 2..=256", self.num_classes)));
        }
        if self.stem_channels == 0 || self.decoder_min_channels == 0 {
            return Err(Error::config("stem_channels and decoder_min_channels must be positive"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 || s.channels == 0 || !(1..=2).contains(&s.stride) {
                return Err(Error::config(format!(
                    "stage {} needs blocks >= 1, channels >= 1 and stride 1 or 2",
                    i + 1
                )));
            }
        }
        if self.stages.iter().map(|s| s.stride).product::<usize>() != 8 {
            return Err(Error::config("stages must downsample by 8 in total (stride 1, 2, 2, 2)"));
        }
        let (h, w) = self.input_size;
        check_input_size(h, w)
    }
}

pub(crate) fn check_input_size(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(Error::Shape(format!("input {h}x{w} is not divisible by 32")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        AcnetConfig::desk(6).validate().unwrap();
        AcnetConfig::resnet50(40).validate().unwrap();
    }

    #[test]
    fn bad_configs() {
        let mut c = AcnetConfig::desk(6);
        c.input_size = (48, 64);
        assert!(c.validate().is_err());
        let mut c = AcnetConfig::desk(1);
        assert!(c.validate().is_err());
        c = AcnetConfig::desk(6);
        c.stages[1].stride = 3;
        assert!(c.validate().is_err());
        c = AcnetConfig::desk(6);
        c.stages[2].blocks = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn variant_round_trip() {
        for v in [Variant::Full, Variant::Model1, Variant::Model2] {
            assert_eq!(Variant::parse(v.as_str()).unwrap(), v);
            assert_eq!(Variant::from_code(v.code()).unwrap(), v);
        }
    }
}
