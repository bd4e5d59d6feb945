//! Differentiable layer primitives with hand-derived backward passes.
//!
//! Every layer comes in two forms: a plain function for inference and a
//! `*_forward` variant that also returns a tape. Tapes are consumed by the
//! matching `*_backward`, so a recorded forward can be differentiated once.
//!
//! Convolutions carry no bias. Weights are stored `(out, in, k, k)` for
//! [`conv2d`] and `(in, out, k, k)` for [`conv2d_transpose`], which makes a
//! transposed convolution the exact adjoint of a convolution sharing the
//! same weight tensor.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor};

/// Output extent of a convolution along one axis.
///
/// ```
/// use deepflow::layers::conv_output_size;
/// assert_eq!(conv_output_size(50, 7, 2, 3).unwrap(), 25);
/// assert_eq!(conv_output_size(25, 3, 2, 1).unwrap(), 13);
/// ```
pub fn conv_output_size(size_in: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidGeometry(format!(
            "kernel {kernel} and stride {stride} must be positive"
        )));
    }
    let span = size_in + 2 * padding;
    if size_in == 0 || span < kernel {
        return Err(Error::InvalidGeometry(format!(
            "input {size_in} with padding {padding} is smaller than kernel {kernel}"
        )));
    }
    Ok((span - kernel) / stride + 1)
}

/// Output extent of a transposed convolution: the smallest size `s_out`
/// with `conv_output_size(s_out, k, s, p) == size_in`.
pub fn conv_transpose_output_size(
    size_in: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if kernel == 0 || stride == 0 || size_in == 0 {
        return Err(Error::InvalidGeometry(format!(
            "transposed conv needs positive input {size_in}, kernel {kernel}, stride {stride}"
        )));
    }
    let full = (size_in - 1) * stride + kernel;
    if full <= 2 * padding {
        return Err(Error::InvalidGeometry(format!(
            "transposed conv k{kernel}s{stride}p{padding} on {size_in} has no valid output size"
        )));
    }
    Ok(full - 2 * padding)
}

/// Geometry of a bias-free 2-D convolution with square kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::InvalidGeometry(format!(
                "conv k{kernel}s{stride}p{padding} {in_channels}->{out_channels}: \
                 channels, kernel and stride must be positive"
            )));
        }
        Ok(ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    /// Weight shape for a forward convolution, `(out, in, k, k)`.
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    /// Weight shape for a transposed convolution, `(in, out, k, k)`.
    pub fn transposed_weight_shape(&self) -> [usize; 4] {
        [self.in_channels, self.out_channels, self.kernel, self.kernel]
    }

    pub fn output_size(&self, size_in: usize) -> Result<usize> {
        conv_output_size(size_in, self.kernel, self.stride, self.padding)
    }

    pub fn transposed_output_size(&self, size_in: usize) -> Result<usize> {
        conv_transpose_output_size(size_in, self.kernel, self.stride, self.padding)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Source/destination geometry shared by `im2col` and `col2im`.
#[derive(Clone, Copy)]
struct Patches {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Patches {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output indices `[lo, hi)` whose kernel tap `kk` lands inside an axis
    /// of length `len`.
    fn valid_range(&self, kk: usize, len: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if kk >= p { 0 } else { (p - kk).div_ceil(s) };
        let hi = if len + p > kk { ((len + p - kk - 1) / s + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Unfold `x` (`[C,H,W]`) into `cols` (`[C·k·k, out_h·out_w]`).
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (h, w, k, s) = (self.height, self.width, self.kernel, self.stride);
        let (ncol, ow) = (self.cols(), self.out_w);
        for ci in 0..self.channels {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                let (ylo, yhi) = self.valid_range(ki, h, self.out_h);
                for kj in 0..k {
                    let (xlo, xhi) = self.valid_range(kj, w, ow);
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut cols[row * ncol..(row + 1) * ncol];
                    dst[..ylo * ow].fill(T::zero());
                    dst[yhi * ow..].fill(T::zero());
                    for oy in ylo..yhi {
                        let iy = oy * s + ki - self.padding;
                        let seg = &mut dst[oy * ow..(oy + 1) * ow];
                        seg[..xlo].fill(T::zero());
                        seg[xhi..].fill(T::zero());
                        if xlo == xhi {
                            continue;
                        }
                        let first = iy * w + xlo * s + kj - self.padding;
                        if s == 1 {
                            seg[xlo..xhi].copy_from_slice(&plane[first..first + xhi - xlo]);
                        } else {
                            for (d, &v) in seg[xlo..xhi].iter_mut().zip(plane[first..].iter().step_by(s)) {
                                *d = v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Fold `cols` back, accumulating into `x` (which is overwritten).
    fn col2im<T: Real>(&self, cols: &[T], x: &mut [T]) {
        let (h, w, k, s) = (self.height, self.width, self.kernel, self.stride);
        let (ncol, ow) = (self.cols(), self.out_w);
        x.fill(T::zero());
        for ci in 0..self.channels {
            let plane = &mut x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..k {
                let (ylo, yhi) = self.valid_range(ki, h, self.out_h);
                for kj in 0..k {
                    let (xlo, xhi) = self.valid_range(kj, w, ow);
                    if xlo == xhi {
                        continue;
                    }
                    let row = (ci * k + ki) * k + kj;
                    let src = &cols[row * ncol..(row + 1) * ncol];
                    for oy in ylo..yhi {
                        let iy = oy * s + ki - self.padding;
                        let seg = &src[oy * ow + xlo..oy * ow + xhi];
                        let first = iy * w + xlo * s + kj - self.padding;
                        if s == 1 {
                            for (d, &v) in plane[first..first + seg.len()].iter_mut().zip(seg) {
                                *d += v;
                            }
                        } else {
                            for (d, &v) in plane[first..].iter_mut().step_by(s).zip(seg) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_input<T: Real>(input: &Tensor<T>, channels: usize, what: &str) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    if c != channels {
        return Err(Error::InvalidGeometry(format!(
            "{what}: input has {c} channels, layer expects {channels}"
        )));
    }
    Ok((n, h, w))
}

fn check_weight<T: Real>(weight: &Tensor<T>, shape: [usize; 4]) -> Result<()> {
    if weight.shape() != shape {
        return Err(Error::InvalidGeometry(format!(
            "weight shape {:?} does not match {:?}",
            weight.shape(),
            shape
        )));
    }
    Ok(())
}

/// Cross-correlation of `input` (`[N,C_in,H,W]`) with `weight`.
pub fn conv2d<T: Real>(input: &Tensor<T>, spec: &ConvSpec, weight: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w) = check_input(input, spec.in_channels, "conv2d")?;
    check_weight(weight, spec.weight_shape())?;
    let geom = Patches {
        channels: spec.in_channels,
        height: h,
        width: w,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
        out_h: spec.output_size(h)?,
        out_w: spec.output_size(w)?,
    };
    let mut out = Tensor::zeros(&[n, spec.out_channels, geom.out_h, geom.out_w]);
    let mut cols = if spec.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); geom.rows() * geom.cols()]
    };
    for i in 0..n {
        let x = input.outer(i);
        let b: &[T] = if spec.is_pointwise() {
            x
        } else {
            geom.im2col(x, &mut cols);
            &cols
        };
        gemm(
            false,
            false,
            spec.out_channels,
            geom.cols(),
            geom.rows(),
            T::one(),
            weight.data(),
            b,
            T::zero(),
            out.outer_mut(i),
        );
    }
    Ok(out)
}

/// Gradients of [`conv2d`]: accumulates into `grad_weight`, returns the
/// input gradient.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_weight: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, h, w) = check_input(input, spec.in_channels, "conv2d backward")?;
    check_weight(grad_weight, spec.weight_shape())?;
    let geom = Patches {
        channels: spec.in_channels,
        height: h,
        width: w,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
        out_h: spec.output_size(h)?,
        out_w: spec.output_size(w)?,
    };
    grad_out.expect_shape(&[n, spec.out_channels, geom.out_h, geom.out_w])?;
    let mut grad_in = Tensor::zeros(input.shape());
    let pointwise = spec.is_pointwise();
    let mut cols = vec![T::zero(); if pointwise { 0 } else { geom.rows() * geom.cols() }];
    let mut dcols = vec![T::zero(); if pointwise { 0 } else { geom.rows() * geom.cols() }];
    for i in 0..n {
        let x = input.outer(i);
        let dy = grad_out.outer(i);
        let b: &[T] = if pointwise {
            x
        } else {
            geom.im2col(x, &mut cols);
            &cols
        };
        gemm(
            false,
            true,
            spec.out_channels,
            geom.rows(),
            geom.cols(),
            T::one(),
            dy,
            b,
            T::one(),
            grad_weight.data_mut(),
        );
        if pointwise {
            gemm(
                true,
                false,
                geom.rows(),
                geom.cols(),
                spec.out_channels,
                T::one(),
                weight.data(),
                dy,
                T::zero(),
                grad_in.outer_mut(i),
            );
        } else {
            gemm(
                true,
                false,
                geom.rows(),
                geom.cols(),
                spec.out_channels,
                T::one(),
                weight.data(),
                dy,
                T::zero(),
                &mut dcols,
            );
            geom.col2im(&dcols, grad_in.outer_mut(i));
        }
    }
    Ok(grad_in)
}

/// Transposed convolution (fractionally strided), used for upsampling.
pub fn conv2d_transpose<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, h, w) = check_input(input, spec.in_channels, "conv2d_transpose")?;
    check_weight(weight, spec.transposed_weight_shape())?;
    let (oh, ow) = (spec.transposed_output_size(h)?, spec.transposed_output_size(w)?);
    let geom = Patches {
        channels: spec.out_channels,
        height: oh,
        width: ow,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
        out_h: h,
        out_w: w,
    };
    let mut out = Tensor::zeros(&[n, spec.out_channels, oh, ow]);
    let mut cols = vec![T::zero(); geom.rows() * geom.cols()];
    for i in 0..n {
        gemm(
            true,
            false,
            geom.rows(),
            geom.cols(),
            spec.in_channels,
            T::one(),
            weight.data(),
            input.outer(i),
            T::zero(),
            &mut cols,
        );
        geom.col2im(&cols, out.outer_mut(i));
    }
    Ok(out)
}

/// Gradients of [`conv2d_transpose`].
pub fn conv2d_transpose_backward<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_weight: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, h, w) = check_input(input, spec.in_channels, "conv2d_transpose backward")?;
    check_weight(grad_weight, spec.transposed_weight_shape())?;
    let (oh, ow) = (spec.transposed_output_size(h)?, spec.transposed_output_size(w)?);
    grad_out.expect_shape(&[n, spec.out_channels, oh, ow])?;
    let geom = Patches {
        channels: spec.out_channels,
        height: oh,
        width: ow,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
        out_h: h,
        out_w: w,
    };
    let mut grad_in = Tensor::zeros(input.shape());
    let mut dcols = vec![T::zero(); geom.rows() * geom.cols()];
    for i in 0..n {
        geom.im2col(grad_out.outer(i), &mut dcols);
        gemm(
            false,
            false,
            spec.in_channels,
            geom.cols(),
            geom.rows(),
            T::one(),
            weight.data(),
            &dcols,
            T::zero(),
            grad_in.outer_mut(i),
        );
        gemm(
            false,
            true,
            spec.in_channels,
            geom.rows(),
            geom.cols(),
            T::one(),
            input.outer(i),
            &dcols,
            T::one(),
            grad_weight.data_mut(),
        );
    }
    Ok(grad_in)
}

/// Cached input of a (transposed) convolution.
#[derive(Debug)]
pub struct ConvTape<T: Real> {
    input: Tensor<T>,
    spec: ConvSpec,
    transposed: bool,
}

impl<T: Real> ConvTape<T> {
    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    /// Returns the input gradient and accumulates into `grad_weight`.
    pub fn backward(self, weight: &Tensor<T>, grad_out: &Tensor<T>, grad_weight: &mut Tensor<T>) -> Result<Tensor<T>> {
        if self.transposed {
            conv2d_transpose_backward(&self.input, &self.spec, weight, grad_out, grad_weight)
        } else {
            conv2d_backward(&self.input, &self.spec, weight, grad_out, grad_weight)
        }
    }
}

pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
) -> Result<(Tensor<T>, ConvTape<T>)> {
    let out = conv2d(input, spec, weight)?;
    Ok((
        out,
        ConvTape {
            input: input.clone(),
            spec: *spec,
            transposed: false,
        },
    ))
}

pub fn conv2d_transpose_forward<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
) -> Result<(Tensor<T>, ConvTape<T>)> {
    let out = conv2d_transpose(input, spec, weight)?;
    Ok((
        out,
        ConvTape {
            input: input.clone(),
            spec: *spec,
            transposed: true,
        },
    ))
}

/// Whether batch normalization uses batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running per-channel statistics of a batch-norm layer. The stored
/// variance is the biased batch variance that normalization itself uses.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T: Real> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
        }
    }
}

#[derive(Debug)]
pub struct BatchNormTape<T: Real> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Per-channel normalization followed by the affine `scale * x̂ + shift`.
/// In train mode the running statistics move toward the batch statistics
/// by `momentum`.
pub fn batch_norm_forward<T: Real>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    running: &mut RunningStats<T>,
    mode: Mode,
    momentum: f64,
) -> Result<(Tensor<T>, BatchNormTape<T>)> {
    let (n, c, h, w) = input.dims4()?;
    scale.expect_shape(&[c])?;
    shift.expect_shape(&[c])?;
    running.mean.expect_shape(&[c])?;
    let plane = h * w;
    let count = n * plane;
    if mode == Mode::Train && count == 0 {
        return Err(Error::EmptyBatch);
    }
    let eps = T::of(BN_EPSILON);
    let mut normalized = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    let mut inv_std = vec![T::zero(); c];
    let x = input.data();
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = T::Acc::of(0.0);
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    sum += x[base..base + plane].iter().map(|v| v.widen()).sum::<T::Acc>();
                }
                let mean = sum / T::Acc::of(count as f64);
                let mut ss = T::Acc::of(0.0);
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    ss += x[base..base + plane]
                        .iter()
                        .map(|v| {
                            let d = v.widen() - mean;
                            d * d
                        })
                        .sum::<T::Acc>();
                }
                let (mean, var) = (T::narrow(mean), T::narrow(ss / T::Acc::of(count as f64)));
                let m = T::of(momentum);
                let rm = running.mean.data_mut();
                rm[ch] = (T::one() - m) * rm[ch] + m * mean;
                let rv = running.var.data_mut();
                rv[ch] = (T::one() - m) * rv[ch] + m * var;
                (mean, var)
            }
            Mode::Eval => (running.mean.data()[ch], running.var.data()[ch]),
        };
        let istd = T::one() / (var + eps).sqrt();
        inv_std[ch] = istd;
        let (g, beta) = (scale.data()[ch], shift.data()[ch]);
        for b in 0..n {
            let base = (b * c + ch) * plane;
            let xs = &x[base..base + plane];
            let nh = &mut normalized.data_mut()[base..base + plane];
            for (d, &v) in nh.iter_mut().zip(xs) {
                *d = (v - mean) * istd;
            }
            let nh = &normalized.data()[base..base + plane];
            for (o, &v) in out.data_mut()[base..base + plane].iter_mut().zip(nh) {
                *o = g * v + beta;
            }
        }
    }
    Ok((
        out,
        BatchNormTape {
            normalized,
            inv_std,
            mode,
        },
    ))
}

/// Returns the input gradient; accumulates scale/shift gradients.
pub fn batch_norm_backward<T: Real>(
    tape: BatchNormTape<T>,
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_scale: &mut Tensor<T>,
    grad_shift: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    grad_out.expect_shape(tape.normalized.shape())?;
    let (n, c, h, w) = grad_out.dims4()?;
    let plane = h * w;
    let count = T::Acc::of((n * plane) as f64);
    let dy = grad_out.data();
    let xh = tape.normalized.data();
    let mut grad_in = Tensor::zeros(grad_out.shape());
    for ch in 0..c {
        let mut sum_dy = T::Acc::of(0.0);
        let mut sum_dy_xh = T::Acc::of(0.0);
        for b in 0..n {
            let base = (b * c + ch) * plane;
            for k in base..base + plane {
                sum_dy += dy[k].widen();
                sum_dy_xh += dy[k].widen() * xh[k].widen();
            }
        }
        grad_shift.data_mut()[ch] += T::narrow(sum_dy);
        grad_scale.data_mut()[ch] += T::narrow(sum_dy_xh);
        let k_scale = scale.data()[ch] * tape.inv_std[ch];
        let gi = grad_in.data_mut();
        match tape.mode {
            Mode::Train => {
                // centred in the accumulator type; the subtraction cancels
                let (mean_dy, mean_dy_xh) = (sum_dy / count, sum_dy_xh / count);
                let k_scale = k_scale.widen();
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    for k in base..base + plane {
                        gi[k] = T::narrow(k_scale * (dy[k].widen() - mean_dy - xh[k].widen() * mean_dy_xh));
                    }
                }
            }
            Mode::Eval => {
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    for k in base..base + plane {
                        gi[k] = k_scale * dy[k];
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

#[derive(Debug)]
pub struct ActivationTape<T: Real> {
    output: Tensor<T>,
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_forward<T: Real>(input: &Tensor<T>) -> (Tensor<T>, ActivationTape<T>) {
    let out = relu(input);
    (out.clone(), ActivationTape { output: out })
}

pub fn relu_backward<T: Real>(tape: ActivationTape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(tape.output.shape())?;
    let mut g = tape.output;
    for (o, &d) in g.data_mut().iter_mut().zip(grad_out.data()) {
        *o = if *o > T::zero() { d } else { T::zero() };
    }
    Ok(g)
}

pub fn sigmoid<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn sigmoid_forward<T: Real>(input: &Tensor<T>) -> (Tensor<T>, ActivationTape<T>) {
    let out = sigmoid(input);
    (out.clone(), ActivationTape { output: out })
}

pub fn sigmoid_backward<T: Real>(tape: ActivationTape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(tape.output.shape())?;
    let mut g = tape.output;
    for (o, &d) in g.data_mut().iter_mut().zip(grad_out.data()) {
        *o = d * *o * (T::one() - *o);
    }
    Ok(g)
}

/// Channel extents of the concatenated parts.
#[derive(Debug, Clone)]
pub struct ConcatTape {
    channels: Vec<usize>,
}

/// Concatenate `[N,C_i,H,W]` tensors along the channel axis.
pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<(Tensor<T>, ConcatTape)> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidGeometry("concat of zero tensors".into()))?;
    let (n, _, h, w) = first.dims4()?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::ShapeMismatch {
                expected: vec![n, pc, h, w],
                found: p.shape().to_vec(),
            });
        }
        channels.push(pc);
    }
    let total: usize = channels.iter().sum();
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, total, h, w]);
    for b in 0..n {
        let dst = out.outer_mut(b);
        let mut off = 0;
        for (p, &c) in parts.iter().zip(&channels) {
            dst[off * plane..(off + c) * plane].copy_from_slice(p.outer(b));
            off += c;
        }
    }
    Ok((out, ConcatTape { channels }))
}

/// Split along channels into pieces of the given sizes.
pub fn split_channels<T: Real>(input: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (n, c, h, w) = input.dims4()?;
    if sizes.iter().sum::<usize>() != c {
        return Err(Error::InvalidGeometry(format!(
            "split sizes {sizes:?} do not sum to {c} channels"
        )));
    }
    let plane = h * w;
    let mut outs: Vec<Tensor<T>> = sizes.iter().map(|&s| Tensor::zeros(&[n, s, h, w])).collect();
    for b in 0..n {
        let src = input.outer(b);
        let mut off = 0;
        for (o, &s) in outs.iter_mut().zip(sizes) {
            o.outer_mut(b).copy_from_slice(&src[off * plane..(off + s) * plane]);
            off += s;
        }
    }
    Ok(outs)
}

pub fn concat_backward<T: Real>(tape: ConcatTape, grad_out: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    split_channels(grad_out, &tape.channels)
}

/// Broadcast one scalar per sample into a constant `[N,1,H,W]` map.
pub fn broadcast_map<T: Real>(values: &[T], height: usize, width: usize) -> Tensor<T> {
    let plane = height * width;
    Tensor::from_fn(&[values.len(), 1, height, width], |i| values[i / plane])
}

/// Adjoint of [`broadcast_map`]: sums each sample's map.
pub fn broadcast_map_backward<T: Real>(grad: &Tensor<T>) -> Result<Vec<T>> {
    let (n, c, _, _) = grad.dims4()?;
    if c != 1 {
        return Err(Error::InvalidGeometry(format!("time map has {c} channels")));
    }
    Ok((0..n).map(|b| grad.outer(b).iter().copied().sum()).collect())
}
