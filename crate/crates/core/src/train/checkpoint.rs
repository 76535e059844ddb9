//! Binary checkpoint format.
//!
//! ```text
//! "ACNT" | u32 version | u32 tensor count
//! per tensor: u16 name length | name (UTF-8) | u8 dtype (0 f32, 1 f64)
//!             | u8 rank | rank × u32 extents | little-endian payload
//! u32 CRC-32 of everything after the magic
//! ```
//!
//! Configuration and progress live in `meta.*` f64 tensors; model
//! parameters, batch-norm statistics and momentum buffers follow in
//! parameter-store order.

use std::path::Path;

use acnet_tensor::{DType, Element, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::{EpochLog, TrainState};
use crate::data::augment::{AugmentConfig, NormStats};
use crate::loss::FocalLossConfig;
use crate::model::{Acnet, AcnetConfig, BlockKind, StageSpec, Variant};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ACNT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorData {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::F64(t) => t.shape(),
        }
    }

    fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(t) => t.data().iter().for_each(|v| v.write_le(out)),
            TensorData::F64(t) => t.data().iter().for_each(|v| v.write_le(out)),
        }
    }

    fn from_tensor<T: Element>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => TensorData::F32(t.convert()),
            DType::F64 => TensorData::F64(t.convert()),
        }
    }

    /// The tensor as `T`, refusing a dtype change.
    fn to_tensor<T: Element>(&self, name: &str) -> Result<Tensor<T>> {
        if self.dtype() != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "{name} is stored as {:?}, expected {:?}",
                self.dtype(),
                T::DTYPE
            )));
        }
        Ok(match self {
            TensorData::F32(t) => t.convert(),
            TensorData::F64(t) => t.convert(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub data: TensorData,
}

pub fn encode_table(entries: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::from(&MAGIC[..]);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        let name_len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {}", e.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.data.dtype().code());
        let shape = e.data.shape();
        out.push(u8::try_from(shape.len()).map_err(|_| Error::Checkpoint(format!("{}: rank too high", e.name)))?);
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("{}: extent too large", e.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        e.data.write_payload(&mut out);
    }
    let crc = crc32fast::hash(&out[MAGIC.len()..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(what.to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

fn read_payload<T: Element>(r: &mut Reader, shape: &[usize], name: &str) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let size = T::DTYPE.size();
    let raw = r.take(n * size, name)?;
    let data = raw.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))
}

pub fn decode_table(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic (not an ACNT checkpoint)".into()));
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u32("header")?;
    let mut entries = Vec::with_capacity(count.min(1 << 16) as usize);
    for i in 0..count {
        let header = format!("header of tensor #{i}");
        let len = r.u16(&header)? as usize;
        let name = std::str::from_utf8(r.take(len, &header)?)
            .map_err(|_| Error::Checkpoint(format!("tensor #{i} name is not UTF-8")))?
            .to_string();
        let dtype = DType::from_code(r.u8(&name)?).ok_or_else(|| Error::Checkpoint(format!("{name}: unknown dtype")))?;
        let rank = r.u8(&name)? as usize;
        let shape = (0..rank).map(|_| r.u32(&name).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let data = match dtype {
            DType::F32 => TensorData::F32(read_payload(&mut r, &shape, &name)?),
            DType::F64 => TensorData::F64(read_payload(&mut r, &shape, &name)?),
        };
        entries.push(NamedTensor { name, data });
    }
    let body_end = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let actual = crc32fast::hash(&bytes[MAGIC.len()..body_end]);
    if stored != actual {
        return Err(Error::Checkpoint(format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    Ok(entries)
}

fn meta(name: &str, values: Vec<f64>) -> NamedTensor {
    let n = values.len();
    NamedTensor {
        name: format!("meta.{name}"),
        data: TensorData::F64(Tensor::new(&[n], values).expect("nonempty meta")),
    }
}

fn split_u64(v: u64) -> [f64; 2] {
    [(v & 0xffff_ffff) as f64, (v >> 32) as f64]
}

fn join_u64(lo: f64, hi: f64) -> u64 {
    (lo as u64) | ((hi as u64) << 32)
}

fn encode_model(c: &AcnetConfig) -> Vec<f64> {
    let mut v = vec![
        c.num_classes as f64,
        c.stem_channels as f64,
        c.variant.code() as f64,
        c.input_size.0 as f64,
        c.input_size.1 as f64,
        c.decoder_min_channels as f64,
    ];
    for s in &c.stages {
        let kind = match s.block_kind {
            BlockKind::Basic => 0.0,
            BlockKind::Bottleneck => 1.0,
        };
        v.extend([s.blocks as f64, s.channels as f64, kind, s.stride as f64]);
    }
    v
}

fn decode_model(v: &[f64]) -> Result<AcnetConfig> {
    if v.len() != 22 {
        return Err(Error::Checkpoint(format!("meta.model has {} values, expected 22", v.len())));
    }
    let u = |i: usize| v[i] as usize;
    let stage = |i: usize| -> Result<StageSpec> {
        let b = 6 + 4 * i;
        let kind = match u(b + 2) {
            0 => BlockKind::Basic,
            1 => BlockKind::Bottleneck,
            k => return Err(Error::Checkpoint(format!("unknown block kind {k}"))),
        };
        Ok(StageSpec::new(u(b), u(b + 1), u(b + 3), kind))
    };
    let cfg = AcnetConfig {
        num_classes: u(0),
        stem_channels: u(1),
        variant: Variant::from_code(u(2) as u32)?,
        input_size: (u(3), u(4)),
        decoder_min_channels: u(5),
        stages: [stage(0)?, stage(1)?, stage(2)?, stage(3)?],
    };
    cfg.validate()?;
    Ok(cfg)
}

fn encode_train(t: &TrainConfig) -> Vec<f64> {
    let seed = split_u64(t.seed);
    vec![
        t.lr,
        t.momentum,
        t.weight_decay,
        t.batch_size as f64,
        t.lr_decay_factor,
        t.lr_decay_every as f64,
        t.epochs as f64,
        seed[0],
        seed[1],
        t.checkpoint_every as f64,
        if t.augment { 1.0 } else { 0.0 },
        t.focal.gamma,
        t.focal.ignore_index as f64,
    ]
}

fn decode_train(v: &[f64]) -> Result<TrainConfig> {
    if v.len() != 13 {
        return Err(Error::Checkpoint(format!("meta.train has {} values, expected 13", v.len())));
    }
    Ok(TrainConfig {
        lr: v[0],
        momentum: v[1],
        weight_decay: v[2],
        batch_size: v[3] as usize,
        lr_decay_factor: v[4],
        lr_decay_every: v[5] as usize,
        epochs: v[6] as usize,
        seed: join_u64(v[7], v[8]),
        checkpoint_every: v[9] as usize,
        augment: v[10] != 0.0,
        focal: FocalLossConfig {
            gamma: v[11],
            ignore_index: v[12] as u8,
        },
    })
}

fn encode_augment(a: &AugmentConfig) -> Vec<f64> {
    vec![
        a.scale_min,
        a.scale_max,
        a.crop.0 as f64,
        a.crop.1 as f64,
        a.hflip_prob,
        a.hue_jitter,
        a.sat_range.0,
        a.sat_range.1,
        a.val_range.0,
        a.val_range.1,
    ]
}

fn decode_augment(v: &[f64]) -> Result<AugmentConfig> {
    if v.len() != 10 {
        return Err(Error::Checkpoint(format!("meta.augment has {} values, expected 10", v.len())));
    }
    Ok(AugmentConfig {
        scale_min: v[0],
        scale_max: v[1],
        crop: (v[2] as usize, v[3] as usize),
        hflip_prob: v[4],
        hue_jitter: v[5],
        sat_range: (v[6], v[7]),
        val_range: (v[8], v[9]),
    })
}

fn encode_norm(n: &NormStats) -> Vec<f64> {
    let mut v = n.rgb_mean.to_vec();
    v.extend(n.rgb_std);
    v.extend([n.depth_mean, n.depth_std]);
    v
}

fn decode_norm(v: &[f64]) -> Result<NormStats> {
    if v.len() != 8 {
        return Err(Error::Checkpoint(format!("meta.norm has {} values, expected 8", v.len())));
    }
    Ok(NormStats {
        rgb_mean: [v[0], v[1], v[2]],
        rgb_std: [v[3], v[4], v[5]],
        depth_mean: v[6],
        depth_std: v[7],
    })
}

fn encode_log(log: &[EpochLog]) -> Vec<f64> {
    let mut v = vec![log.len() as f64];
    for e in log {
        v.extend([e.epoch as f64, e.lr, e.loss]);
    }
    v
}

fn decode_log(v: &[f64]) -> Result<Vec<EpochLog>> {
    let n = v.first().copied().unwrap_or(-1.0);
    if n < 0.0 || v.len() != 1 + 3 * n as usize {
        return Err(Error::Checkpoint("malformed meta.log".into()));
    }
    Ok(v[1..]
        .chunks_exact(3)
        .map(|c| EpochLog {
            epoch: c[0] as usize,
            lr: c[1],
            loss: c[2],
        })
        .collect())
}

impl<T: Element> TrainState<T> {
    pub fn to_table(&self) -> Vec<NamedTensor> {
        let store = self.model.store();
        let mut out = vec![
            meta("model", encode_model(self.model.config())),
            meta("train", encode_train(&self.train)),
            meta("augment", encode_augment(&self.augment)),
            meta("norm", encode_norm(&self.norm)),
            meta("progress", vec![self.epoch as f64]),
            meta("log", encode_log(&self.log)),
        ];
        for p in store.params() {
            out.push(NamedTensor {
                name: format!("param.{}", p.name),
                data: TensorData::from_tensor(&p.value),
            });
        }
        for (name, s) in store.stats() {
            let c = s.channels();
            let vec_entry = |field: &str, v: &[T]| NamedTensor {
                name: format!("stats.{name}.{field}"),
                data: TensorData::from_tensor(&Tensor::new(&[c], v.to_vec()).expect("stats channels")),
            };
            out.push(vec_entry("mean", &s.mean));
            out.push(vec_entry("var", &s.var));
            out.push(NamedTensor {
                name: format!("stats.{name}.tracked"),
                data: TensorData::F64(Tensor::scalar(s.tracked as f64)),
            });
        }
        for (p, v) in store.params().iter().zip(&self.velocity) {
            out.push(NamedTensor {
                name: format!("momentum.{}", p.name),
                data: TensorData::from_tensor(v),
            });
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_table(&self.to_table())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_table(decode_table(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_table(entries: Vec<NamedTensor>) -> Result<Self> {
        let find = |name: &str| -> Result<&TensorData> {
            entries
                .iter()
                .find(|e| e.name == name)
                .map(|e| &e.data)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        let meta_values = |name: &str| -> Result<Vec<f64>> {
            let full = format!("meta.{name}");
            Ok(find(&full)?.to_tensor::<f64>(&full)?.into_data())
        };
        let config = decode_model(&meta_values("model")?)?;
        let train = decode_train(&meta_values("train")?)?;
        let augment = decode_augment(&meta_values("augment")?)?;
        let norm = decode_norm(&meta_values("norm")?)?;
        let epoch = meta_values("progress")?.first().copied().unwrap_or(0.0) as usize;
        let log = decode_log(&meta_values("log")?)?;

        // Build the wiring the config describes, then fill it in.
        let mut model = Acnet::<T>::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let expect_shape = |name: &str, data: &TensorData, shape: &[usize]| -> Result<()> {
            if data.shape() != shape {
                return Err(Error::Shape(format!(
                    "{name} has shape {:?} in checkpoint, config implies {:?}",
                    data.shape(),
                    shape
                )));
            }
            Ok(())
        };
        let store = model.store_mut();
        for p in store.params_mut() {
            let name = format!("param.{}", p.name);
            let data = find(&name)?;
            expect_shape(&name, data, p.value.shape())?;
            p.value = data.to_tensor(&name)?;
        }
        for (bn, s) in store.stats_mut() {
            let c = [s.channels()];
            let mean_name = format!("stats.{bn}.mean");
            let var_name = format!("stats.{bn}.var");
            let tracked_name = format!("stats.{bn}.tracked");
            let (mean, var) = (find(&mean_name)?, find(&var_name)?);
            expect_shape(&mean_name, mean, &c)?;
            expect_shape(&var_name, var, &c)?;
            s.mean = mean.to_tensor::<T>(&mean_name)?.into_data();
            s.var = var.to_tensor::<T>(&var_name)?.into_data();
            s.tracked = find(&tracked_name)?.to_tensor::<f64>(&tracked_name)?.data()[0] as u64;
        }
        let mut velocity = Vec::with_capacity(store.params().len());
        for p in store.params() {
            let name = format!("momentum.{}", p.name);
            let data = find(&name)?;
            expect_shape(&name, data, p.value.shape())?;
            velocity.push(data.to_tensor(&name)?);
        }
        Ok(TrainState {
            model,
            train,
            augment,
            norm,
            velocity,
            epoch,
            log,
        })
    }
}
