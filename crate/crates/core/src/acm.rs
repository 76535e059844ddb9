//! Attention Complementary Module.
//!
//! For a feature map `A` (N×C×H×W) the module pools each channel to its
//! spatial mean `Z`, mixes channels with a 1×1 convolution, squashes with a
//! sigmoid to get per-channel weights `V` in (0, 1), and rescales `A` by `V`.
//! `V` is returned alongside the gated map so callers can study it.

use acnet_tensor::{ConvGeom, Element, Graph, PoolKind, Tensor, Var};
use rand::Rng;

use crate::params::kaiming_uniform;
use crate::{Error, Result};

/// Weights of the 1×1 channel-mixing convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct AcmParams<T> {
    /// C×C×1×1.
    pub weight: Tensor<T>,
    /// C.
    pub bias: Tensor<T>,
}

impl<T: Element> AcmParams<T> {
    pub fn channels(&self) -> usize {
        self.bias.numel()
    }

    pub fn zeros(channels: usize) -> Result<Self> {
        Ok(Self {
            weight: Tensor::zeros(&[channels, channels, 1, 1])?,
            bias: Tensor::zeros(&[channels])?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AcmOutput {
    /// A ∘ V, N×C×H×W.
    pub gated: Var,
    /// V, N×C×1×1.
    pub weights: Var,
}

/// Kaiming-uniform weight (fan-in = `channels`), zero bias.
pub fn init_acm<T: Element>(channels: usize, rng: &mut impl Rng) -> Result<AcmParams<T>> {
    if channels == 0 {
        return Err(Error::config("ACM channel count must be at least 1"));
    }
    Ok(AcmParams {
        weight: kaiming_uniform(&[channels, channels, 1, 1], channels, rng)?,
        bias: Tensor::zeros(&[channels])?,
    })
}

/// Runs the module on `input` with parameters already recorded on `graph`.
pub fn acm_forward<T: Element>(graph: &mut Graph<T>, input: Var, weight: Var, bias: Var) -> Result<AcmOutput> {
    let (_, c, _, _) = graph.value(input).dims4("acm")?;
    let wc = graph.value(weight).shape()[0];
    if c != wc {
        return Err(Error::Shape(format!("ACM expects {wc} channels, input has {c}")));
    }
    let pooled = graph.pool(PoolKind::GlobalAvg, input)?;
    let mixed = graph.conv2d(pooled, weight, Some(bias), ConvGeom::default())?;
    let weights = graph.sigmoid(mixed)?;
    let gated = graph.mul(input, weights)?;
    Ok(AcmOutput { gated, weights })
}

/// Convenience wrapper that records `params` as trainable leaves.
pub fn acm_apply<T: Element>(graph: &mut Graph<T>, input: Var, params: &AcmParams<T>) -> Result<AcmOutput> {
    let w = graph.param(params.weight.clone());
    let b = graph.param(params.bias.clone());
    acm_forward(graph, input, w, b)
}
