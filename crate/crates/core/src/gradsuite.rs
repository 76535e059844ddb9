//! Finite-difference gradient checks over every differentiable operation,
//! including the attention module and focal loss.

use acnet_tensor::gradcheck::{check, GradCheckConfig, GradCheckReport};
use acnet_tensor::{BnConfig, BnMode, ConvGeom, Graph, PoolKind, RunningStats, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acm::acm_forward;
use crate::data::LabelBatch;
use crate::loss::{focal_loss, FocalLossConfig};
use crate::Result;

pub const OPS: [&str; 15] = [
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "sigmoid",
    "sum",
    "mean",
    "conv2d",
    "conv_transpose2d",
    "batch_norm2d",
    "max_pool",
    "global_avg_pool",
    "acm_forward",
    "focal_loss",
];

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub op: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)).expect("nonempty shape")
}

/// Reduces `y` to a scalar through fixed random weights so that every
/// output element carries a distinct gradient.
fn project(g: &mut Graph<f64>, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let w = g.constant(rand_tensor(rng, &shape));
    let p = g.mul(y, w)?;
    Ok(g.sum(p)?)
}

fn check_op(op: &str, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj_seed: u64 = rng.gen();
    let proj = move || ChaCha8Rng::seed_from_u64(proj_seed);
    let r = &mut rng;
    let report = match op {
        "add" | "sub" | "mul" => {
            // Broadcast a per-channel tensor against a full one.
            let inputs = [rand_tensor(r, &[2, 3, 2, 2]), rand_tensor(r, &[1, 3, 1, 1])];
            check::<_, crate::Error>(&inputs, cfg, |g, v| {
                let y = match op {
                    "add" => g.add(v[0], v[1])?,
                    "sub" => g.sub(v[0], v[1])?,
                    _ => g.mul(v[0], v[1])?,
                };
                project(g, y, &mut proj())
            })?
        }
        "scale" | "relu" | "sigmoid" | "sum" | "mean" => {
            let inputs = [rand_tensor(r, &[2, 2, 3, 3])];
            check::<_, crate::Error>(&inputs, cfg, |g, v| {
                Ok(match op {
                    "scale" => {
                        let y = g.scale(v[0], -1.7)?;
                        project(g, y, &mut proj())?
                    }
                    "relu" => {
                        let y = g.relu(v[0])?;
                        project(g, y, &mut proj())?
                    }
                    "sigmoid" => {
                        let y = g.sigmoid(v[0])?;
                        project(g, y, &mut proj())?
                    }
                    "sum" => {
                        let y = g.mul(v[0], v[0])?;
                        g.sum(y)?
                    }
                    _ => {
                        let y = g.mul(v[0], v[0])?;
                        g.mean(y)?
                    }
                })
            })?
        }
        "conv2d" => {
            let inputs = [rand_tensor(r, &[2, 3, 5, 6]), rand_tensor(r, &[4, 3, 3, 3]), rand_tensor(r, &[4])];
            check::<_, crate::Error>(&inputs, cfg, |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), ConvGeom::new(2, 1))?;
                project(g, y, &mut proj())
            })?
        }
        "conv_transpose2d" => {
            let inputs = [rand_tensor(r, &[2, 3, 3, 4]), rand_tensor(r, &[3, 2, 2, 2]), rand_tensor(r, &[2])];
            check::<_, crate::Error>(&inputs, cfg, |g, v| {
                let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), ConvGeom::new(2, 0))?;
                project(g, y, &mut proj())
            })?
        }
        "batch_norm2d" => {
            let inputs = [rand_tensor(r, &[3, 2, 2, 3]), rand_tensor(r, &[2]), rand_tensor(r, &[2])];
            check::<_, crate::Error>(&inputs, cfg, |g, v| {
                let mut stats = RunningStats::new(2);
                let y = g.batch_norm2d(v[0], v[1], v[2], &mut stats, BnMode::Train, BnConfig::default())?;
                project(g, y, &mut proj())
            })?
        }
        "max_pool" | "global_avg_pool" => {
            let inputs = [rand_tensor(r, &[2, 2, 5, 6])];
            let kind = if op == "max_pool" { PoolKind::Max3x3S2 } else { PoolKind::GlobalAvg };
            check::<_, crate::Error>(&inputs, cfg, |g, v| {
                let y = g.pool(kind, v[0])?;
                project(g, y, &mut proj())
            })?
        }
        "acm_forward" => {
            let inputs = [rand_tensor(r, &[2, 4, 3, 3]), rand_tensor(r, &[4, 4, 1, 1]), rand_tensor(r, &[4])];
            check::<_, crate::Error>(&inputs, cfg, |g, v| {
                let out = acm_forward(g, v[0], v[1], v[2])?;
                project(g, out.gated, &mut proj())
            })?
        }
        "focal_loss" => {
            let logits = Tensor::from_fn(&[2, 4, 3, 3], |_| r.gen_range(-1.0..1.0)).expect("shape");
            let labels: Vec<u8> = (0..18).map(|_| r.gen_range(0..4u8)).collect();
            let mut labels = LabelBatch::new(2, 3, 3, labels)?;
            labels.data[0] = 1;
            check::<_, crate::Error>(&[logits], cfg, |g, v| focal_loss(g, v[0], &labels, FocalLossConfig::default()))?
        }
        other => return Err(crate::Error::config(format!("unknown op {other:?}"))),
    };
    Ok(report)
}

/// Checks every op in [`OPS`] once per seed.
pub fn run_suite(seeds: &[u64], cfg: GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    for &op in &OPS {
        for &seed in seeds {
            out.push(SuiteEntry {
                op,
                seed,
                report: check_op(op, seed, cfg)?,
            });
        }
    }
    Ok(out)
}
