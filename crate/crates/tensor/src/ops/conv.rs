//! 2-D cross-correlation and its adjoint (transposed convolution).
//!
//! Both run through an im2col/col2im lowering onto a single GEMM per batch
//! element. Padding is zero padding, stride and padding are symmetric.

use crate::gemm::gemm;
use crate::{Element, Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

impl Default for ConvGeom {
    fn default() -> Self {
        Self::new(1, 0)
    }
}

/// Output extent of a convolution along one axis, if positive.
pub fn conv_out_extent(input: usize, kernel: usize, geom: ConvGeom) -> Option<usize> {
    let padded = input + 2 * geom.padding;
    if geom.stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / geom.stride + 1)
}

/// Output extent of a transposed convolution along one axis, if positive.
pub fn conv_transpose_out_extent(input: usize, kernel: usize, geom: ConvGeom) -> Option<usize> {
    if geom.stride == 0 || kernel == 0 {
        return None;
    }
    let full = (input - 1) * geom.stride + kernel;
    (full > 2 * geom.padding).then(|| full - 2 * geom.padding)
}

/// Geometry of one im2col lowering: an image of `channels × h × w` seen
/// through `kh × kw` windows producing `oh × ow` positions.
#[derive(Clone, Copy, Debug)]
struct Patch {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    geom: ConvGeom,
}

impl Patch {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geom.stride == 1 && self.geom.padding == 0
    }

    /// Input coordinate read by output position `o` at kernel offset `k`.
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.geom.stride + k) as isize - self.geom.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col<T: Element>(&self, img: &[T], col: &mut [T]) {
        let cols = self.cols();
        for c in 0..self.channels {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in 0..self.oh {
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match self.source(oy, ki, self.h) {
                            None => line.iter_mut().for_each(|v| *v = T::zero()),
                            Some(iy) => {
                                let src = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.source(ox, kj, self.w) {
                                        Some(ix) => src[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds columns back into the image (adjoint of `im2col`).
    fn col2im<T: Element>(&self, col: &[T], img: &mut [T]) {
        let cols = self.cols();
        for c in 0..self.channels {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..self.oh {
                        let Some(iy) = self.source(oy, ki, self.h) else {
                            continue;
                        };
                        let line = &src[oy * self.ow..(oy + 1) * self.ow];
                        let dst = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for (ox, &v) in line.iter().enumerate() {
                            if let Some(ix) = self.source(ox, kj, self.w) {
                                dst[ix] = dst[ix] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Element>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.numel() != channels {
            return Err(Error::ChannelMismatch {
                op,
                input: b.numel(),
                param: channels,
            });
        }
    }
    Ok(())
}

fn add_bias<T: Element>(out: &mut [T], bias: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = bias {
        for (chunk, &bv) in out.chunks_mut(plane).zip(b.data()) {
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
    }
}

fn bias_grad<T: Element>(grad: &Tensor<T>, channels: usize) -> Tensor<T> {
    let plane = grad.numel() / grad.shape()[0] / channels;
    let mut db = vec![T::zero(); channels];
    for (i, chunk) in grad.data().chunks(plane).enumerate() {
        db[i % channels] = db[i % channels] + chunk.iter().copied().sum::<T>();
    }
    Tensor::new(&[channels], db).expect("channel count is positive")
}

/// Gradients produced by a convolution backward pass.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

fn conv2d_patch<T: Element>(x: &Tensor<T>, w: &Tensor<T>, geom: ConvGeom) -> Result<(Patch, usize, usize)> {
    let (n, cin, h, wd) = x.dims4("conv2d")?;
    let (cout, wcin, kh, kw) = w.dims4("conv2d")?;
    if cin != wcin {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            input: cin,
            param: wcin,
        });
    }
    if geom.stride == 0 {
        return Err(Error::Geometry {
            op: "conv2d",
            msg: "stride must be at least 1".into(),
        });
    }
    let (oh, ow) = match (conv_out_extent(h, kh, geom), conv_out_extent(wd, kw, geom)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::Geometry {
                op: "conv2d",
                msg: format!("non-positive output extent for {h}x{wd} input, {kh}x{kw} kernel, {geom:?}"),
            })
        }
    };
    let patch = Patch {
        channels: cin,
        h,
        w: wd,
        kh,
        kw,
        oh,
        ow,
        geom,
    };
    Ok((patch, n, cout))
}

/// `x: N×Cin×H×W`, `w: Cout×Cin×kh×kw`, `bias: Cout`.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let (p, n, cout) = conv2d_patch(x, w, geom)?;
    check_bias("conv2d", bias, cout)?;
    let (k, cols) = (p.rows(), p.cols());
    let in_plane = p.channels * p.h * p.w;
    let mut out = vec![T::zero(); n * cout * cols];
    let mut col = if p.is_pointwise() { Vec::new() } else { vec![T::zero(); k * cols] };
    for b in 0..n {
        let img = &x.data()[b * in_plane..(b + 1) * in_plane];
        let rhs: &[T] = if p.is_pointwise() {
            img
        } else {
            p.im2col(img, &mut col);
            &col
        };
        let dst = &mut out[b * cout * cols..(b + 1) * cout * cols];
        gemm(false, false, cout, cols, k, w.data(), rhs, T::zero(), dst);
        add_bias(dst, bias, cols);
    }
    Tensor::new(&[n, cout, p.oh, p.ow], out)
}

pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    geom: ConvGeom,
    grad: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (p, n, cout) = conv2d_patch(x, w, geom)?;
    let (k, cols) = (p.rows(), p.cols());
    let in_plane = p.channels * p.h * p.w;
    let mut dx = vec![T::zero(); x.numel()];
    let mut dw = vec![T::zero(); w.numel()];
    let mut col = if p.is_pointwise() { Vec::new() } else { vec![T::zero(); k * cols] };
    let mut dcol = vec![T::zero(); k * cols];
    for b in 0..n {
        let img = &x.data()[b * in_plane..(b + 1) * in_plane];
        let g = &grad.data()[b * cout * cols..(b + 1) * cout * cols];
        let lowered: &[T] = if p.is_pointwise() {
            img
        } else {
            p.im2col(img, &mut col);
            &col
        };
        // dW += G · colᵀ
        gemm(false, true, cout, k, cols, g, lowered, T::one(), &mut dw);
        // dcol = Wᵀ · G
        let dimg = &mut dx[b * in_plane..(b + 1) * in_plane];
        if p.is_pointwise() {
            gemm(true, false, k, cols, cout, w.data(), g, T::one(), dimg);
        } else {
            gemm(true, false, k, cols, cout, w.data(), g, T::zero(), &mut dcol);
            p.col2im(&dcol, dimg);
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(x.shape(), dx)?,
        weight: Tensor::new(w.shape(), dw)?,
        bias: has_bias.then(|| bias_grad(grad, cout)),
    })
}

fn conv_transpose_patch<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    geom: ConvGeom,
) -> Result<(Patch, usize, usize)> {
    let (n, cin, h, wd) = x.dims4("conv_transpose2d")?;
    let (wcin, cout, kh, kw) = w.dims4("conv_transpose2d")?;
    if cin != wcin {
        return Err(Error::ChannelMismatch {
            op: "conv_transpose2d",
            input: cin,
            param: wcin,
        });
    }
    let (oh, ow) = match (
        conv_transpose_out_extent(h, kh, geom),
        conv_transpose_out_extent(wd, kw, geom),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::Geometry {
                op: "conv_transpose2d",
                msg: format!("non-positive output extent for {h}x{wd} input, {kh}x{kw} kernel, {geom:?}"),
            })
        }
    };
    // The lowering runs over the *output* image, whose windows land on the
    // input grid: exactly the conv2d geometry read in reverse.
    let patch = Patch {
        channels: cout,
        h: oh,
        w: ow,
        kh,
        kw,
        oh: h,
        ow: wd,
        geom,
    };
    Ok((patch, n, cin))
}

/// `x: N×Cin×H×W`, `w: Cin×Cout×kh×kw`, `bias: Cout`. Output extent is
/// `(H−1)·stride − 2·padding + kh`.
pub fn conv_transpose2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let (p, n, cin) = conv_transpose_patch(x, w, geom)?;
    check_bias("conv_transpose2d", bias, p.channels)?;
    let (k, cols) = (p.rows(), p.cols());
    let out_plane = p.channels * p.h * p.w;
    let mut out = vec![T::zero(); n * out_plane];
    let mut col = vec![T::zero(); k * cols];
    for b in 0..n {
        let img = &x.data()[b * cin * cols..(b + 1) * cin * cols];
        // col = Wᵀ · x, with W viewed as Cin × (Cout·kh·kw)
        gemm(true, false, k, cols, cin, w.data(), img, T::zero(), &mut col);
        let dst = &mut out[b * out_plane..(b + 1) * out_plane];
        p.col2im(&col, dst);
        add_bias(dst, bias, p.h * p.w);
    }
    Tensor::new(&[n, p.channels, p.h, p.w], out)
}

pub fn conv_transpose2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    geom: ConvGeom,
    grad: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (p, n, cin) = conv_transpose_patch(x, w, geom)?;
    let (k, cols) = (p.rows(), p.cols());
    let out_plane = p.channels * p.h * p.w;
    let mut dx = vec![T::zero(); x.numel()];
    let mut dw = vec![T::zero(); w.numel()];
    let mut col = vec![T::zero(); k * cols];
    for b in 0..n {
        let img = &x.data()[b * cin * cols..(b + 1) * cin * cols];
        p.im2col(&grad.data()[b * out_plane..(b + 1) * out_plane], &mut col);
        gemm(false, false, cin, cols, k, w.data(), &col, T::zero(), &mut dx[b * cin * cols..(b + 1) * cin * cols]);
        gemm(false, true, cin, k, cols, img, &col, T::one(), &mut dw);
    }
    Ok(ConvGrads {
        input: Tensor::new(x.shape(), dx)?,
        weight: Tensor::new(w.shape(), dw)?,
        bias: has_bias.then(|| bias_grad(grad, p.channels)),
    })
}
