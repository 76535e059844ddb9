//! Segmentation metrics on a dataset and statistics of the attention weights.

use acnet_tensor::{BnMode, Element, Graph};

use crate::data::augment::{normalize, NormStats};
use crate::data::{make_batch, Dataset};
use crate::metrics::ConfusionMatrix;
use crate::model::{Acnet, AcmSite, ForwardOptions, Variant};
use crate::{Error, Result};

/// Eval-mode predictions from the full-resolution output, accumulated into
/// a confusion matrix. The model is not modified.
pub fn evaluate<T: Element>(model: &Acnet<T>, ds: &Dataset, norm: &NormStats, ignore_index: u8) -> Result<ConfusionMatrix> {
    let k = model.config().num_classes;
    if let Some(l) = ds.max_label() {
        if l as usize >= k {
            return Err(Error::Shape(format!("dataset has label {l} but the model predicts {k} classes")));
        }
    }
    let mut cm = ConfusionMatrix::new(k, ignore_index);
    for s in &ds.samples {
        let batch = make_batch::<T>(&[&normalize(s, norm)])?;
        let pred = model.predict(&batch.rgb, &batch.depth)?;
        cm.update_maps(&pred[0], &s.label)?;
    }
    if cm.total() == 0 {
        return Err(Error::AllIgnored);
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnRow {
    pub acm_id: usize,
    pub site: AcmSite,
    /// Mean over samples and channels.
    pub avg: f64,
    /// Population std, min and max over channels of the per-channel sample mean.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnReport {
    pub rows: Vec<AttnRow>,
    /// Raw weights `[acm][sample][channel]`.
    pub weights: Vec<Vec<Vec<f64>>>,
}

impl AttnReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("acm_id,branch,stage,avg,std,min,max\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.9},{:.9},{:.9},{:.9}\n",
                r.acm_id,
                r.site.branch.as_str(),
                r.site.stage_name(),
                r.avg,
                r.std,
                r.min,
                r.max
            ));
        }
        out
    }

    /// Every weight as `acm_id,sample,channel,value` with round-trip precision.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("acm_id,sample,channel,value\n");
        for (a, per_sample) in self.weights.iter().enumerate() {
            for (s, chans) in per_sample.iter().enumerate() {
                for (c, v) in chans.iter().enumerate() {
                    out.push_str(&format!("{a},{s},{c},{v}\n"));
                }
            }
        }
        out
    }
}

/// Summary statistics of per-channel means.
pub fn summarize(per_sample: &[Vec<f64>]) -> (f64, f64, f64, f64) {
    let channels = per_sample.first().map_or(0, Vec::len);
    let n = per_sample.len() as f64;
    let means: Vec<f64> = (0..channels)
        .map(|c| per_sample.iter().map(|s| s[c]).sum::<f64>() / n)
        .collect();
    let avg = means.iter().sum::<f64>() / channels as f64;
    let var = means.iter().map(|m| (m - avg) * (m - avg)).sum::<f64>() / channels as f64;
    let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (avg, var.sqrt(), min, max)
}

/// Collects the attention weights of every ACM over `ds`, one sample at a
/// time. `mode` selects batch-norm behavior; train mode uses per-sample
/// statistics and leaves the model's running statistics untouched.
pub fn attn_stats<T: Element>(model: &Acnet<T>, ds: &Dataset, norm: &NormStats, mode: BnMode) -> Result<AttnReport> {
    let variant = model.config().variant;
    if variant != Variant::Full {
        return Err(Error::NoAttention(variant.as_str()));
    }
    if ds.is_empty() {
        return Err(Error::config("attention statistics need at least one sample"));
    }
    let sites = model.acm_sites();
    let mut weights = vec![Vec::with_capacity(ds.len()); sites.len()];
    let opts = ForwardOptions {
        mode,
        ..ForwardOptions::eval()
    };
    for s in &ds.samples {
        let batch = make_batch::<T>(&[&normalize(s, norm)])?;
        let mut g = Graph::new();
        let (r, d) = (g.constant(batch.rgb), g.constant(batch.depth));
        let out = model.forward_frozen(&mut g, r, d, opts)?;
        for (slot, &v) in weights.iter_mut().zip(&out.attention) {
            slot.push(g.value(v).data().iter().map(|x| Element::to_f64(*x)).collect());
        }
    }
    let rows = sites
        .iter()
        .enumerate()
        .map(|(i, &site)| {
            let (avg, std, min, max) = summarize(&weights[i]);
            AttnRow {
                acm_id: i,
                site,
                avg,
                std,
                min,
                max,
            }
        })
        .collect();
    Ok(AttnReport { rows, weights })
}
