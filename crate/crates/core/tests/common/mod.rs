//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use acnet_tensor::Tensor;

/// Per-pixel counting: `(per-class (class, iou), miou, pixel_acc, counts)`,
/// where `counts[t][p]` tallies scored pixels.
pub struct BruteMetrics {
    pub per_class: Vec<(usize, f64)>,
    pub miou: f64,
    pub pixel_acc: f64,
    pub counts: Vec<Vec<u64>>,
}

pub fn brute_metrics(pairs: &[(Vec<u8>, Vec<u8>)], k: usize, ignore: u8) -> BruteMetrics {
    let mut counts = vec![vec![0u64; k]; k];
    let (mut scored, mut correct) = (0u64, 0u64);
    for (pred, truth) in pairs {
        for (&p, &t) in pred.iter().zip(truth) {
            if t == ignore {
                continue;
            }
            counts[t as usize][p as usize] += 1;
            scored += 1;
            correct += (p == t) as u64;
        }
    }
    let mut per_class = Vec::new();
    for c in 0..k {
        if c == ignore as usize {
            continue;
        }
        let (mut inter, mut union) = (0u64, 0u64);
        for (pred, truth) in pairs {
            for (&p, &t) in pred.iter().zip(truth) {
                if t == ignore {
                    continue;
                }
                let (hit_p, hit_t) = (p as usize == c, t as usize == c);
                inter += (hit_p && hit_t) as u64;
                union += (hit_p || hit_t) as u64;
            }
        }
        if union > 0 {
            per_class.push((c, inter as f64 / union as f64));
        }
    }
    let miou = per_class.iter().map(|(_, v)| v).sum::<f64>() / per_class.len() as f64;
    BruteMetrics {
        per_class,
        miou,
        pixel_acc: correct as f64 / scored as f64,
        counts,
    }
}

/// Attention weights of the channel-mixing module evaluated with scalar
/// loops: spatial means, a dense C×C product, then the logistic function.
pub fn acm_weights_oracle(input: &Tensor<f64>, weight: &Tensor<f64>, bias: &Tensor<f64>) -> Vec<Vec<f64>> {
    let s = input.shape();
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    let x = input.data();
    (0..n)
        .map(|b| {
            let z: Vec<f64> = (0..c)
                .map(|ch| x[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().sum::<f64>() / plane as f64)
                .collect();
            (0..c)
                .map(|o| {
                    let pre = bias.data()[o] + (0..c).map(|i| weight.data()[o * c + i] * z[i]).sum::<f64>();
                    1.0 / (1.0 + (-pre).exp())
                })
                .collect()
        })
        .collect()
}

/// Mean over samples and channels, then population std, min and max over
/// channels of the per-channel sample mean.
pub fn attn_summary_oracle(per_sample: &[Vec<f64>]) -> (f64, f64, f64, f64) {
    let c = per_sample[0].len();
    let mut means = vec![0.0; c];
    for s in per_sample {
        for (m, v) in means.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= per_sample.len() as f64;
    }
    let all: f64 = per_sample.iter().flatten().sum::<f64>() / (per_sample.len() * c) as f64;
    let var = means.iter().map(|m| (m - all).powi(2)).sum::<f64>() / c as f64;
    let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (all, var.sqrt(), min, max)
}
