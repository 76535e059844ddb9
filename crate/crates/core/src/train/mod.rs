//! Training loop, optimizer, checkpoints, evaluation and attention reports.

pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod sgd;

use acnet_tensor::{Element, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{lr_schedule, RunConfig, TrainConfig};
pub use evaluate::{attn_stats, evaluate, AttnReport, AttnRow};
pub use sgd::{sgd_step, sgd_update, SgdConfig};

use crate::data::augment::{augment, normalize, AugmentConfig, NormStats};
use crate::data::{make_batch, Dataset, Sample};
use crate::loss::deep_supervision_loss;
use crate::model::{Acnet, AcnetConfig, ForwardOptions};
use crate::{Error, Result};

const DOMAIN_INIT: u64 = 0;
const DOMAIN_SHUFFLE: u64 = 1;
const DOMAIN_AUGMENT: u64 = 2;

/// Independent random stream for `(seed, domain, index)`.
pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
}

/// Everything a run needs to continue: the model, optimizer buffers,
/// configuration and progress. This is what a checkpoint stores.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub model: Acnet<T>,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub norm: NormStats,
    pub velocity: Vec<Tensor<T>>,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

impl<T: Element> TrainState<T> {
    /// Freshly initialized model (seeded by `train.seed`), zero momentum.
    pub fn new(model: AcnetConfig, train: TrainConfig, augment: AugmentConfig, norm: NormStats) -> Result<Self> {
        train.validate()?;
        let model = Acnet::new(model, &mut stream_rng(train.seed, DOMAIN_INIT, 0))?;
        let velocity = sgd::zero_velocity(model.store());
        Ok(Self {
            model,
            train,
            augment,
            norm,
            velocity,
            epoch: 0,
            log: Vec::new(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.train.epochs
    }
}

/// Normalization statistics for a training set: dataset statistics for real
/// data, fixed rgb statistics plus dataset depth statistics for synthetic
/// scenes.
pub fn norm_stats_for(ds: &Dataset, synthetic: bool) -> NormStats {
    if synthetic {
        NormStats::default().with_depth_from(ds)
    } else {
        NormStats::from_dataset(ds)
    }
}

fn check_dataset(ds: &Dataset, num_classes: usize) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    match ds.max_label() {
        Some(l) if l as usize >= num_classes => Err(Error::LabelOutOfRange {
            label: l,
            classes: num_classes,
        }),
        _ => Ok(()),
    }
}

fn prepare(state_aug: &AugmentConfig, norm: &NormStats, s: &Sample, use_aug: bool, rng: &mut ChaCha8Rng) -> Result<Sample> {
    if use_aug {
        augment(s, state_aug, norm, rng)
    } else {
        Ok(normalize(s, norm))
    }
}

/// Runs one epoch and appends its log entry. A trailing single-image batch
/// is skipped when its deepest feature map is 1×1, since batch norm cannot
/// normalize one value.
pub fn train_epoch<T: Element>(state: &mut TrainState<T>, ds: &Dataset) -> Result<EpochLog> {
    check_dataset(ds, state.model.config().num_classes)?;
    let epoch = state.epoch;
    let cfg = state.train.clone();
    let sgd = cfg.sgd(epoch);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut stream_rng(cfg.seed, DOMAIN_SHUFFLE, epoch as u64));

    let (mut total, mut used) = (0.0, 0usize);
    for chunk in order.chunks(cfg.batch_size) {
        let samples = chunk
            .iter()
            .map(|&i| {
                let mut rng = stream_rng(cfg.seed, DOMAIN_AUGMENT + epoch as u64, i as u64);
                prepare(&state.augment, &state.norm, &ds.samples[i], cfg.augment, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = make_batch::<T>(&samples.iter().collect::<Vec<_>>())?;
        let (_, _, h, w) = batch.rgb.dims4("batch")?;
        if chunk.len() * (h / 32) * (w / 32) < 2 {
            // The deepest batch norm would see one value per channel.
            continue;
        }

        let mut g = Graph::new();
        let rgb = g.constant(batch.rgb);
        let depth = g.constant(batch.depth);
        let out = state.model.forward(&mut g, rgb, depth, ForwardOptions::train())?;
        let loss = deep_supervision_loss(&mut g, &out.outputs, &batch.labels, cfg.focal)?;
        let value = g.value(loss).data()[0].to_f64();
        if !value.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                loss: value,
            });
        }
        g.backward(loss)?;
        let grads: Vec<Option<Tensor<T>>> = out.params.iter().map(|&v| g.take_grad(v)).collect();
        sgd_step(state.model.store_mut(), &grads, &mut state.velocity, sgd)?;
        total += value * chunk.len() as f64;
        used += chunk.len();
    }
    if used == 0 {
        return Err(Error::config(
            "every batch holds a single image whose deepest feature map is 1x1; use larger batches or inputs",
        ));
    }
    let entry = EpochLog {
        epoch: epoch + 1,
        lr: sgd.lr,
        loss: total / used as f64,
    };
    state.epoch += 1;
    state.log.push(entry);
    Ok(entry)
}

/// Trains until `state.train.epochs` epochs are complete, calling
/// `after_epoch` after each one (for logging and checkpoints).
pub fn train<T: Element>(
    state: &mut TrainState<T>,
    ds: &Dataset,
    mut after_epoch: impl FnMut(&TrainState<T>, &EpochLog) -> Result<()>,
) -> Result<()> {
    while !state.is_finished() {
        let entry = train_epoch(state, ds)?;
        after_epoch(state, &entry)?;
    }
    Ok(())
}

/// `epoch,lr,loss` lines with round-trip precision.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,lr,loss\n");
    for e in log {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.lr, e.loss));
    }
    out
}
