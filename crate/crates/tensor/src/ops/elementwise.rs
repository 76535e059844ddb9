use crate::{Element, Error, Result, Tensor};

/// Numpy-style broadcast of two shapes. Ranks are right-aligned; an extent of
/// 1 stretches to match the other side.
pub fn broadcast_shape(lhs: &[usize], rhs: &[usize]) -> Result<Vec<usize>> {
    let rank = lhs.len().max(rhs.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let a = dim_from_right(lhs, rank - 1 - i);
        let b = dim_from_right(rhs, rank - 1 - i);
        out[i] = match (a, b) {
            (a, b) if a == b => a,
            (1, b) => b,
            (a, 1) => a,
            _ => {
                return Err(Error::Broadcast {
                    lhs: lhs.to_vec(),
                    rhs: rhs.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

fn dim_from_right(shape: &[usize], from_right: usize) -> usize {
    if from_right < shape.len() {
        shape[shape.len() - 1 - from_right]
    } else {
        1
    }
}

/// For every flat index of `out`, the flat index of the broadcast source.
fn source_indices(out: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..rank).rev() {
        let d = dim_from_right(src, rank - 1 - i);
        strides[i] = if d == 1 { 0 } else { acc };
        acc *= d;
    }
    let total: usize = out.iter().product();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    let mut result = Vec::with_capacity(total);
    for _ in 0..total {
        result.push(offset);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            offset -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    result
}

/// Applies `f` elementwise under broadcasting.
pub fn binary<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape(), data);
    }
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let ia = source_indices(&shape, a.shape());
    let ib = source_indices(&shape, b.shape());
    let (da, db) = (a.data(), b.data());
    let data = ia.iter().zip(&ib).map(|(&i, &j)| f(da[i], db[j])).collect();
    Tensor::new(&shape, data)
}

/// Sums `grad` (shaped like the broadcast output) back down to `shape`.
pub fn reduce_to<T: Element>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let idx = source_indices(grad.shape(), shape);
    let mut out = vec![T::zero(); shape.iter().product()];
    for (&i, &g) in idx.iter().zip(grad.data()) {
        out[i] = out[i] + g;
    }
    Tensor::new(shape, out).expect("reduce_to target shape is valid")
}

/// Gradient of `a ∘ b` with respect to `a`, reduced to `a`'s shape.
pub fn mul_grad<T: Element>(grad: &Tensor<T>, other: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let full = binary(grad, other, |g, o| g * o).expect("operands broadcast in forward");
    reduce_to(&full, shape)
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Element>(x: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape as input")
}

pub fn sigmoid_scalar<T: Element>(v: T) -> T {
    // Split on sign so exp never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Uses the saved forward output `s`: d/dx = s(1 − s).
pub fn sigmoid_backward<T: Element>(out: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = out
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::new(out.shape(), data).expect("same shape as output")
}
