use crate::{Element, Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Per-channel running statistics used by eval mode.
///
/// `tracked` counts train-mode updates; eval mode refuses to run while it is
/// zero.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub tracked: u64,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            tracked: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnSaved<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mode: BnMode,
}

/// Batch normalization over N, H and W for each channel of an N×C×H×W tensor.
///
/// Train mode normalizes with the biased batch variance and folds the batch
/// statistics into `stats` (unbiased variance, exponential moving average).
pub fn batch_norm2d<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: BnMode,
    cfg: BnConfig,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    let (n, c, h, w) = x.dims4("batch_norm2d")?;
    for p in [gamma, beta] {
        if p.numel() != c {
            return Err(Error::ChannelMismatch {
                op: "batch_norm2d",
                input: c,
                param: p.numel(),
            });
        }
    }
    if stats.channels() != c {
        return Err(Error::ChannelMismatch {
            op: "batch_norm2d",
            input: c,
            param: stats.channels(),
        });
    }
    let plane = h * w;
    let count = n * plane;
    let eps = T::from_f64(cfg.eps);
    let (mean, inv_std) = match mode {
        BnMode::Train => {
            if count < 2 {
                return Err(Error::BatchTooSmall(count));
            }
            let m = T::from_f64(count as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    s = s + x.data()[off..off + plane].iter().copied().sum::<T>();
                }
                let mu = s / m;
                let mut ss = T::zero();
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    for &v in &x.data()[off..off + plane] {
                        let d = v - mu;
                        ss = ss + d * d;
                    }
                }
                mean[ch] = mu;
                var[ch] = ss / m;
            }
            let mom = T::from_f64(cfg.momentum);
            let unbias = m / (m - T::one());
            for ch in 0..c {
                stats.mean[ch] = (T::one() - mom) * stats.mean[ch] + mom * mean[ch];
                stats.var[ch] = (T::one() - mom) * stats.var[ch] + mom * var[ch] * unbias;
            }
            stats.tracked += 1;
            let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (mean, inv)
        }
        BnMode::Eval => {
            if stats.tracked == 0 {
                return Err(Error::MissingRunningStats);
            }
            let inv: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (stats.mean.clone(), inv)
        }
    };
    let mut normalized = vec![T::zero(); x.numel()];
    let mut out = vec![T::zero(); x.numel()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let (mu, is, g, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in off..off + plane {
                let xh = (x.data()[i] - mu) * is;
                normalized[i] = xh;
                out[i] = g * xh + bt;
            }
        }
    }
    let saved = BnSaved {
        normalized: Tensor::new(x.shape(), normalized)?,
        inv_std,
        mode,
    };
    Ok((Tensor::new(x.shape(), out)?, saved))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batch_norm2d_backward<T: Element>(
    gamma: &Tensor<T>,
    saved: &BnSaved<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let shape = grad.shape();
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let m = T::from_f64((n * plane) as f64);
    let xh = saved.normalized.data();
    let g = grad.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                dgamma[ch] = dgamma[ch] + g[i] * xh[i];
                dbeta[ch] = dbeta[ch] + g[i];
            }
        }
    }
    let mut dx = vec![T::zero(); grad.numel()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let scale = gamma.data()[ch] * saved.inv_std[ch];
            for i in off..off + plane {
                dx[i] = match saved.mode {
                    // Σ dxhat = γ·dβ and Σ dxhat·xhat = γ·dγ per channel.
                    BnMode::Train => scale * (g[i] - (dbeta[ch] + xh[i] * dgamma[ch]) / m),
                    BnMode::Eval => scale * g[i],
                };
            }
        }
    }
    (
        Tensor::new(shape, dx).expect("grad shape"),
        Tensor::new(&[c], dgamma).expect("channels"),
        Tensor::new(&[c], dbeta).expect("channels"),
    )
}
