//! Central finite-difference verification of tape gradients in `f64`.

use crate::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Below this magnitude an entry is judged by `abs_tol` instead of `rel_tol`.
    pub near_zero: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            rel_tol: 1e-5,
            abs_tol: 1e-8,
            near_zero: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InputReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Number of entries outside tolerance.
    pub failures: usize,
    pub checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|r| r.failures == 0)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn max_abs_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_abs_err).fold(0.0, f64::max)
    }
}

/// Compares tape gradients of the scalar `build(graph, inputs)` against
/// central differences, one input element at a time.
///
/// `build` must be a deterministic function of the input values.
/// Errors from `build` pass through unchanged, so callers may use their own
/// error type as long as it absorbs this crate's.
pub fn check<F, E>(inputs: &[Tensor<f64>], cfg: GradCheckConfig, build: F) -> std::result::Result<GradCheckReport, E>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> std::result::Result<Var, E>,
    E: From<crate::Error>,
{
    let eval = |values: &[Tensor<f64>]| -> std::result::Result<f64, E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let root = build(&mut g, &vars)?;
        Ok(g.value(root).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros_like(t)))
        .collect();

    let mut work = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    for (k, an) in analytic.iter().enumerate() {
        let mut rep = InputReport {
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            failures: 0,
            checked: an.numel(),
        };
        for e in 0..an.numel() {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + cfg.step;
            let plus = eval(&work)?;
            work[k].data_mut()[e] = orig - cfg.step;
            let minus = eval(&work)?;
            work[k].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = an.data()[e];
            let abs = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            rep.max_abs_err = rep.max_abs_err.max(abs);
            let ok = if scale < cfg.near_zero {
                abs < cfg.abs_tol
            } else {
                let rel = abs / scale;
                rep.max_rel_err = rep.max_rel_err.max(rel);
                rel < cfg.rel_tol
            };
            if !ok {
                rep.failures += 1;
            }
        }
        reports.push(rep);
    }
    Ok(GradCheckReport { inputs: reports })
}
