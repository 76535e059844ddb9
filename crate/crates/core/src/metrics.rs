//! Confusion-matrix accumulation, IoU and pixel accuracy.

use std::fmt::Write as _;

use crate::data::LabelMap;
use crate::{Error, Result};

/// `counts[g * K + p]` = pixels with ground truth `g` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    ignore_index: u8,
    counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    /// `(class, iou)` for every non-ignore class with nonzero union.
    pub per_class: Vec<(usize, f64)>,
    pub miou: f64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize, ignore_index: u8) -> Self {
        Self {
            num_classes,
            ignore_index,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts every pixel whose ground truth is not the ignore index.
    pub fn update(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!("{} predictions vs {} labels", pred.len(), truth.len())));
        }
        let k = self.num_classes;
        for &v in pred.iter().chain(truth) {
            if v as usize >= k {
                return Err(Error::LabelOutOfRange { label: v, classes: k });
            }
        }
        for (&p, &t) in pred.iter().zip(truth) {
            if t != self.ignore_index {
                self.counts[t as usize * k + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn update_maps(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        if !pred.same_size(truth) {
            return Err(Error::Shape(format!(
                "prediction {}x{} vs label {}x{}",
                pred.height, pred.width, truth.height, truth.width
            )));
        }
        self.update(&pred.data, &truth.data)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes || other.ignore_index != self.ignore_index {
            return Err(Error::Shape("merging confusion matrices of different layout".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn iou(&self) -> Result<IouReport> {
        if self.total() == 0 {
            return Err(Error::EmptyConfusion);
        }
        let k = self.num_classes;
        let mut per_class = Vec::new();
        for c in 0..k {
            if c == self.ignore_index as usize {
                continue;
            }
            let tp = self.count(c, c);
            let row: u64 = (0..k).map(|p| self.count(c, p)).sum();
            let col: u64 = (0..k).map(|g| self.count(g, c)).sum();
            let union = row + col - tp;
            if union > 0 {
                per_class.push((c, tp as f64 / union as f64));
            }
        }
        let miou = if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().map(|(_, v)| v).sum::<f64>() / per_class.len() as f64
        };
        Ok(IouReport { per_class, miou })
    }

    pub fn miou(&self) -> Result<f64> {
        Ok(self.iou()?.miou)
    }

    pub fn pixel_acc(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyConfusion);
        }
        let correct: u64 = (0..self.num_classes).map(|c| self.count(c, c)).sum();
        Ok(correct as f64 / total as f64)
    }

    /// `class,iou` rows followed by `miou` and `pixel_acc`.
    pub fn to_csv(&self) -> Result<String> {
        let report = self.iou()?;
        let mut out = String::from("class,iou\n");
        for (c, v) in &report.per_class {
            let _ = writeln!(out, "{c},{v:.6}");
        }
        let _ = writeln!(out, "miou,{:.6}", report.miou);
        let _ = writeln!(out, "pixel_acc,{:.6}", self.pixel_acc()?);
        Ok(out)
    }
}
