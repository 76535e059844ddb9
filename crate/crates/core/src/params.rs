//! Named parameter storage shared by the model, the optimizer and checkpoints.

use acnet_tensor::{Element, Graph, RunningStats, Tensor, Var};
use rand::Rng;

use crate::{Error, Result};

/// What a learnable tensor is, which decides weight-decay treatment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StatsId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// All learnable tensors plus batch-norm running statistics, in
/// registration order. Order is part of the checkpoint format.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    stats: Vec<(String, RunningStats<T>)>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            params: Vec::new(),
            stats: Vec::new(),
        }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            kind,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_stats(&mut self, name: impl Into<String>, channels: usize) -> StatsId {
        self.stats.push((name.into(), RunningStats::new(channels)));
        StatsId(self.stats.len() - 1)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn find_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn stats(&self) -> &[(String, RunningStats<T>)] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [(String, RunningStats<T>)] {
        &mut self.stats
    }

    /// True once every batch-norm layer has seen at least one train step.
    pub fn has_running_stats(&self) -> bool {
        self.stats.iter().all(|(_, s)| s.tracked > 0)
    }

    /// Total number of learnable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Number of learnable scalars in tensors whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    /// Records every parameter on `graph`, as trainable leaves or constants.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    graph.param(p.value.clone())
                } else {
                    graph.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Copies values of same-named, same-shaped tensors from `other`.
    /// Returns how many were copied.
    pub fn copy_matching(&mut self, other: &ParamStore<T>) -> usize {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(q) = other.find(&p.name) {
                if q.value.shape() == p.value.shape() {
                    p.value = q.value.clone();
                    copied += 1;
                }
            }
        }
        for (name, s) in &mut self.stats {
            if let Some((_, t)) = other.stats.iter().find(|(n, _)| n == name) {
                if t.channels() == s.channels() {
                    *s = t.clone();
                }
            }
        }
        copied
    }

    /// Checks that `other` has the same tensor names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamStore<T>) -> Result<()> {
        if self.params.len() != other.params.len() || self.stats.len() != other.stats.len() {
            return Err(Error::Shape(format!(
                "parameter tables differ in size: {}/{} vs {}/{}",
                self.params.len(),
                self.stats.len(),
                other.params.len(),
                other.stats.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Shape(format!(
                    "{} {:?} vs {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Kaiming-uniform init for ReLU networks: U(−b, b) with b = √(6 / fan),
/// where `fan` is the fan-in or fan-out depending on the chosen mode.
pub fn kaiming_uniform<T: Element>(shape: &[usize], fan: usize, rng: &mut impl Rng) -> Result<Tensor<T>> {
    if fan == 0 {
        return Err(Error::config("kaiming fan must be positive"));
    }
    let bound = kaiming_bound(fan);
    Ok(Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound)))?)
}

pub fn kaiming_bound(fan: usize) -> f64 {
    (6.0 / fan as f64).sqrt()
}
