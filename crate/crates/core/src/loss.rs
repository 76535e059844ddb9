//! Focal loss over per-pixel class logits and its deep-supervision average.

use acnet_tensor::{BackwardRule, Element, Graph, Tensor, Var};

use crate::data::LabelBatch;
use crate::{Error, Result};

const P_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalLossConfig {
    pub gamma: f64,
    pub ignore_index: u8,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            ignore_index: 0,
        }
    }
}

impl FocalLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::config(format!("focal gamma {} must be non-negative", self.gamma)));
        }
        Ok(())
    }
}

/// Softmax over the class axis of an N×K×H×W tensor.
pub fn softmax_classes<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k, h, w) = logits.dims4("softmax")?;
    let plane = h * w;
    let mut out = logits.clone();
    let d = out.data_mut();
    for b in 0..n {
        for p in 0..plane {
            let at = |c: usize| (b * k + c) * plane + p;
            let max = (0..k).map(|c| d[at(c)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for c in 0..k {
                let e = (d[at(c)] - max).exp();
                d[at(c)] = e;
                total = total + e;
            }
            for c in 0..k {
                d[at(c)] = d[at(c)] / total;
            }
        }
    }
    Ok(out)
}

struct FocalRule<T> {
    probs: Tensor<T>,
    labels: Vec<u8>,
    cfg: FocalLossConfig,
    scored: usize,
}

impl<T: Element> BackwardRule<T> for FocalRule<T> {
    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> acnet_tensor::Result<Vec<Option<Tensor<T>>>> {
        let (n, k, h, w) = self.probs.dims4("focal_loss")?;
        let plane = h * w;
        let gamma = self.cfg.gamma;
        let upstream = grad.data()[0].to_f64() / self.scored as f64;
        let s = self.probs.data();
        let mut dz = Tensor::zeros_like(&self.probs);
        let out = dz.data_mut();
        for b in 0..n {
            for p in 0..plane {
                let y = self.labels[b * plane + p];
                if y == self.cfg.ignore_index {
                    continue;
                }
                let y = y as usize;
                let at = |c: usize| (b * k + c) * plane + p;
                let pt = s[at(y)].to_f64();
                let q = 1.0 - pt;
                // dℓ/dp · p, so that dℓ/dz_c = (δ_cy − s_c) · factor.
                let decay = if gamma == 0.0 || q <= 0.0 {
                    0.0
                } else {
                    gamma * q.powf(gamma - 1.0) * pt * pt.max(P_FLOOR).ln()
                };
                let factor = decay - q.powf(gamma);
                for c in 0..k {
                    let delta = if c == y { 1.0 } else { 0.0 };
                    out[at(c)] = T::from_f64(upstream * (delta - s[at(c)].to_f64()) * factor);
                }
            }
        }
        Ok(vec![Some(dz)])
    }
}

/// Mean of −(1 − p_t)^γ · ln p_t over pixels whose label is not ignored.
pub fn focal_loss<T: Element>(graph: &mut Graph<T>, logits: Var, labels: &LabelBatch, cfg: FocalLossConfig) -> Result<Var> {
    cfg.validate()?;
    let value = graph.value(logits);
    let (n, k, h, w) = value.dims4("focal_loss")?;
    if k < 2 {
        return Err(Error::Shape(format!("focal loss needs at least 2 classes, got {k}")));
    }
    if (labels.n, labels.height, labels.width) != (n, h, w) {
        return Err(Error::Shape(format!(
            "logits {n}x{k}x{h}x{w} vs labels {}x{}x{}",
            labels.n, labels.height, labels.width
        )));
    }
    if let Some(&bad) = labels.data.iter().find(|&&l| l as usize >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    let probs = softmax_classes(value)?;
    let plane = h * w;
    let s = probs.data();
    let mut total = 0.0f64;
    let mut scored = 0usize;
    for b in 0..n {
        for p in 0..plane {
            let y = labels.data[b * plane + p];
            if y == cfg.ignore_index {
                continue;
            }
            let pt = s[(b * k + y as usize) * plane + p].to_f64();
            total += -(1.0 - pt).powf(cfg.gamma) * pt.max(P_FLOOR).ln();
            scored += 1;
        }
    }
    if scored == 0 {
        return Err(Error::AllIgnored);
    }
    let loss = Tensor::scalar(T::from_f64(total / scored as f64));
    let rule = FocalRule {
        probs,
        labels: labels.data.clone(),
        cfg,
        scored,
    };
    Ok(graph.custom(&[logits], loss, Box::new(rule))?)
}

/// Nearest-neighbor label downsampling that keeps the top-left pixel of
/// each block.
pub fn downsample_nearest(labels: &LabelBatch, height: usize, width: usize) -> Result<LabelBatch> {
    if height == 0 || width == 0 || labels.height % height != 0 || labels.width % width != 0 {
        return Err(Error::Shape(format!(
            "cannot downsample {}x{} labels to {height}x{width}",
            labels.height, labels.width
        )));
    }
    let (fy, fx) = (labels.height / height, labels.width / width);
    let mut data = Vec::with_capacity(labels.n * height * width);
    for b in 0..labels.n {
        for y in 0..height {
            for x in 0..width {
                data.push(labels.data[(b * labels.height + y * fy) * labels.width + x * fx]);
            }
        }
    }
    LabelBatch::new(labels.n, height, width, data)
}

/// Arithmetic mean of scalar losses recorded on `graph`.
pub fn average_losses<T: Element>(graph: &mut Graph<T>, losses: &[Var]) -> Result<Var> {
    let (&first, rest) = losses
        .split_first()
        .ok_or_else(|| Error::Shape("no losses to average".into()))?;
    let mut acc = first;
    for &l in rest {
        acc = graph.add(acc, l)?;
    }
    Ok(graph.scale(acc, T::from_f64(1.0 / losses.len() as f64))?)
}

/// Focal loss of every side output against labels downsampled to its
/// resolution, averaged.
pub fn deep_supervision_loss<T: Element>(
    graph: &mut Graph<T>,
    outputs: &[Var],
    labels: &LabelBatch,
    cfg: FocalLossConfig,
) -> Result<Var> {
    let mut losses = Vec::with_capacity(outputs.len());
    for &out in outputs {
        let shape = graph.value(out).shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::Shape(format!("side output has shape {shape:?}")));
        }
        let target = downsample_nearest(labels, shape[2], shape[3])?;
        losses.push(focal_loss(graph, out, &target, cfg)?);
    }
    average_losses(graph, &losses)
}
