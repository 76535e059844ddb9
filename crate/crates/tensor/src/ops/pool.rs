use crate::{Element, Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    /// 3×3 window, stride 2, padding 1 (ResNet stem).
    Max3x3S2,
    /// Spatial mean per channel, producing N×C×1×1.
    GlobalAvg,
}

fn check_extent<T: Element>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    let dims = x.dims4(op)?;
    if dims.2 == 0 || dims.3 == 0 {
        return Err(Error::Geometry {
            op,
            msg: "empty spatial extent".into(),
        });
    }
    Ok(dims)
}

/// Returns the pooled tensor and, per output element, the flat input index
/// of the maximum. Ties resolve to the first element in row-major order.
pub fn max_pool3x3s2<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = check_extent(x, "max_pool3x3s2")?;
    let oh = (h - 1) / 2 + 1;
    let ow = (w - 1) / 2 + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let y0 = (2 * oy).saturating_sub(1);
            let y1 = (2 * oy + 1).min(h - 1);
            for ox in 0..ow {
                let x0 = (2 * ox).saturating_sub(1);
                let x1 = (2 * ox + 1).min(w - 1);
                let mut best = base + y0 * w + x0;
                for iy in y0..=y1 {
                    for ix in x0..=x1 {
                        let i = base + iy * w + ix;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, argmax))
}

pub fn max_pool_backward<T: Element>(input_shape: &[usize], argmax: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    for (&i, &g) in argmax.iter().zip(grad.data()) {
        dx[i] = dx[i] + g;
    }
    Tensor::new(input_shape, dx).expect("input shape is valid")
}

pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_extent(x, "global_avg_pool")?;
    let plane = h * w;
    let inv = T::one() / T::from_f64(plane as f64);
    let data = x.data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Tensor::new(&[n, c, 1, 1], data)
}

pub fn global_avg_pool_backward<T: Element>(input_shape: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let plane = input_shape[2] * input_shape[3];
    let inv = T::one() / T::from_f64(plane as f64);
    let mut dx = Vec::with_capacity(input_shape.iter().product());
    for &g in grad.data() {
        dx.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor::new(input_shape, dx).expect("input shape is valid")
}
