//! 2-D convolution and transposed convolution over NHWC tensors.
//!
//! Both layers are lowered onto one [`ConvGeometry`] that relates a "wide"
//! image (the convolution input, or the transposed-convolution output) to a
//! "narrow" one through a sliding window. `im2col` gathers windows of the
//! wide image into rows; `col2im` scatters rows back, accumulating. The
//! transposed convolution is therefore the exact adjoint of the strided
//! convolution sharing its geometry.

use crate::error::{bail, Result};

use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding, output side `ceil(in / stride)`.
    Same,
    /// No padding, output side `(in - k) / stride + 1`.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    /// Channels of the wide image.
    pub channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn same_extent(input: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let needed = (out.saturating_sub(1)) * stride + k;
    let total = needed.saturating_sub(input);
    (out, total / 2)
}

impl ConvGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        batch: usize,
        in_h: usize,
        in_w: usize,
        channels: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 {
            bail!(Parameter, "stride must be >= 1");
        }
        if kh == 0 || kw == 0 {
            bail!(Dimension, "empty kernel {kh}x{kw}");
        }
        let (out_h, pad_top, out_w, pad_left) = match padding {
            Padding::Same => {
                let (oh, pt) = same_extent(in_h, kh, stride);
                let (ow, pl) = same_extent(in_w, kw, stride);
                (oh, pt, ow, pl)
            }
            Padding::Valid => {
                if in_h < kh || in_w < kw {
                    bail!(
                        Dimension,
                        "valid convolution of {in_h}x{in_w} with {kh}x{kw} kernel"
                    );
                }
                ((in_h - kh) / stride + 1, 0, (in_w - kw) / stride + 1, 0)
            }
        };
        Ok(Self {
            batch,
            in_h,
            in_w,
            channels,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.channels
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    pub fn wide_len(&self) -> usize {
        self.batch * self.in_h * self.in_w * self.channels
    }

    /// Wide-image row for kernel tap `a` at narrow row `oy`, if in bounds.
    #[inline]
    fn src_row(&self, oy: usize, a: usize) -> Option<usize> {
        (oy * self.stride + a)
            .checked_sub(self.pad_top)
            .filter(|&y| y < self.in_h)
    }

    #[inline]
    fn src_col(&self, ox: usize, b: usize) -> Option<usize> {
        (ox * self.stride + b)
            .checked_sub(self.pad_left)
            .filter(|&x| x < self.in_w)
    }
}

/// Gathers every window of the wide image into one row of length `patch_len`.
pub(crate) fn im2col<T: Scalar>(src: &[T], g: &ConvGeometry) -> Vec<T> {
    let c = g.channels;
    let patch = g.patch_len();
    let mut cols = vec![T::zero(); g.rows() * patch];
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = (n * g.out_h + oy) * g.out_w + ox;
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for a in 0..g.kh {
                    let Some(iy) = g.src_row(oy, a) else { continue };
                    for b in 0..g.kw {
                        let Some(ix) = g.src_col(ox, b) else { continue };
                        let s = ((n * g.in_h + iy) * g.in_w + ix) * c;
                        let d = (a * g.kw + b) * c;
                        dst[d..d + c].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters rows back onto the wide image, summing overlaps.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, dst: &mut [T]) {
    let c = g.channels;
    let patch = g.patch_len();
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = (n * g.out_h + oy) * g.out_w + ox;
                let src = &cols[row * patch..(row + 1) * patch];
                for a in 0..g.kh {
                    let Some(iy) = g.src_row(oy, a) else { continue };
                    for b in 0..g.kw {
                        let Some(ix) = g.src_col(ox, b) else { continue };
                        let d = ((n * g.in_h + iy) * g.in_w + ix) * c;
                        let s = (a * g.kw + b) * c;
                        for (o, &v) in dst[d..d + c].iter_mut().zip(&src[s..s + c]) {
                            *o = *o + v;
                        }
                    }
                }
            }
        }
    }
}

/// Splits an `[H,W,C]` or `[N,H,W,C]` shape into `(n, h, w, c, was_batched)`.
fn nhwc(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize, bool)> {
    match *shape {
        [h, w, c] => Ok((1, h, w, c, false)),
        [n, h, w, c] => Ok((n, h, w, c, true)),
        _ => bail!(Dimension, "{what} must be HxWxC or NxHxWxC, got {shape:?}"),
    }
}

fn kernel_dims(kernel: &Tensor<impl Scalar>) -> Result<(usize, usize, usize, usize)> {
    match *kernel.shape() {
        [kh, kw, c, f] => Ok((kh, kw, c, f)),
        ref s => bail!(Dimension, "kernel must be khxkwxCxF, got {s:?}"),
    }
}

fn check_bias(bias: &Tensor<impl Scalar>, f: usize) -> Result<()> {
    if bias.shape() != [f] {
        bail!(
            Dimension,
            "bias shape {:?} does not match {} output channels",
            bias.shape(),
            f
        );
    }
    Ok(())
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o = *o + b;
        }
    }
}

/// Sum of `grad` over every pixel, per channel, accumulated in `f64`.
fn channel_sums<T: Scalar>(grad: &[T], channels: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; channels];
    for row in grad.chunks_exact(channels) {
        for (a, &g) in acc.iter_mut().zip(row) {
            *a += g.as_f64();
        }
    }
    acc.into_iter().map(T::from_f64).collect()
}

fn output_shape(batched: bool, n: usize, h: usize, w: usize, c: usize) -> Vec<usize> {
    if batched {
        vec![n, h, w, c]
    } else {
        vec![h, w, c]
    }
}

/// Saved state of a convolution forward pass, reused by its backward pass.
#[derive(Clone, Debug)]
pub(crate) struct ConvSaved<T> {
    pub geometry: ConvGeometry,
    pub cols: Vec<T>,
}

pub(crate) fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, ConvSaved<T>)> {
    let (n, h, w, c, batched) = nhwc(input.shape(), "conv2d input")?;
    let (kh, kw, kc, f) = kernel_dims(kernel)?;
    if kc != c {
        bail!(
            Dimension,
            "conv2d input has {c} channels but kernel expects {kc}"
        );
    }
    check_bias(bias, f)?;
    if padding == Padding::Same && (kh % 2 == 0 || kw % 2 == 0) {
        bail!(Parameter, "same padding needs an odd kernel, got {kh}x{kw}");
    }
    let g = ConvGeometry::new(n, h, w, c, kh, kw, stride, padding)?;
    conv_with_geometry(input, kernel, bias, g, batched)
}

/// Convolution over a prebuilt geometry; no kernel-parity check.
pub(crate) fn conv_with_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    g: ConvGeometry,
    batched: bool,
) -> Result<(Tensor<T>, ConvSaved<T>)> {
    let f = bias.len();
    let cols = im2col(input.data(), &g);
    let mut out = vec![T::zero(); g.rows() * f];
    T::gemm(
        g.rows(),
        g.patch_len(),
        f,
        T::one(),
        &cols,
        g.patch_len(),
        1,
        kernel.data(),
        f,
        1,
        T::zero(),
        &mut out,
    );
    add_bias(&mut out, bias.data());
    let out = Tensor::new(output_shape(batched, g.batch, g.out_h, g.out_w, f), out)?;
    Ok((
        out,
        ConvSaved { geometry: g, cols },
    ))
}

pub(crate) fn conv2d_backward_saved<T: Scalar>(
    saved: &ConvSaved<T>,
    input_shape: &[usize],
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = &saved.geometry;
    let (_, _, _, f) = kernel_dims(kernel)?;
    if grad_out.len() != g.rows() * f {
        bail!(
            Dimension,
            "conv2d grad has {} values, expected {}",
            grad_out.len(),
            g.rows() * f
        );
    }
    let patch = g.patch_len();
    let mut dcols = vec![T::zero(); g.rows() * patch];
    T::gemm(
        g.rows(),
        f,
        patch,
        T::one(),
        grad_out.data(),
        f,
        1,
        kernel.data(),
        1,
        f,
        T::zero(),
        &mut dcols,
    );
    let mut dx = vec![T::zero(); g.wide_len()];
    col2im(&dcols, g, &mut dx);

    let mut dk = vec![T::zero(); patch * f];
    T::gemm(
        patch,
        g.rows(),
        f,
        T::one(),
        &saved.cols,
        1,
        patch,
        grad_out.data(),
        f,
        1,
        T::zero(),
        &mut dk,
    );
    let db = channel_sums(grad_out.data(), f);
    Ok((
        Tensor::new(input_shape.to_vec(), dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
        Tensor::new(vec![f], db)?,
    ))
}

/// Strided 2-D convolution: `out[p, f] = sum(window(p) * kernel[.., f]) + bias[f]`.
///
/// `input` is `HxWxC` or `NxHxWxC`, `kernel` is `khxkwxCxF`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    conv2d_forward(input, kernel, bias, stride, padding).map(|(out, _)| out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (_, _, _, f) = kernel_dims(kernel)?;
    let zero_bias = Tensor::zeros(&[f]);
    let (_, saved) = conv2d_forward(input, kernel, &zero_bias, stride, padding)?;
    conv2d_backward_saved(&saved, input.shape(), kernel, grad_out)
}

/// Kernel `khxkwxCxF` reordered as a `C x (kh*kw*F)` matrix.
fn kernel_by_input_channel<T: Scalar>(kernel: &Tensor<T>) -> Result<Vec<T>> {
    let (kh, kw, c, f) = kernel_dims(kernel)?;
    let k = kernel.data();
    let row = kh * kw * f;
    let mut out = vec![T::zero(); c * row];
    for tap in 0..kh * kw {
        for ci in 0..c {
            let src = (tap * c + ci) * f;
            let dst = ci * row + tap * f;
            out[dst..dst + f].copy_from_slice(&k[src..src + f]);
        }
    }
    Ok(out)
}

fn kernel_from_input_channel<T: Scalar>(
    mat: &[T],
    kh: usize,
    kw: usize,
    c: usize,
    f: usize,
) -> Vec<T> {
    let row = kh * kw * f;
    let mut out = vec![T::zero(); kh * kw * c * f];
    for tap in 0..kh * kw {
        for ci in 0..c {
            let dst = (tap * c + ci) * f;
            let src = ci * row + tap * f;
            out[dst..dst + f].copy_from_slice(&mat[src..src + f]);
        }
    }
    out
}

/// Geometry of a transposed convolution seen from its wide (output) side.
fn transpose_geometry(
    n: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Result<ConvGeometry> {
    if !(1..=2).contains(&stride) {
        bail!(Parameter, "transposed convolution stride must be 1 or 2, got {stride}");
    }
    ConvGeometry::new(n, h * stride, w * stride, f, kh, kw, stride, Padding::Same)
}

pub(crate) fn conv2d_transpose_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, ConvGeometry, bool)> {
    let (n, h, w, c, batched) = nhwc(input.shape(), "conv2d_transpose input")?;
    let (kh, kw, kc, f) = kernel_dims(kernel)?;
    if kc != c {
        bail!(
            Dimension,
            "conv2d_transpose input has {c} channels but kernel expects {kc}"
        );
    }
    check_bias(bias, f)?;
    let g = transpose_geometry(n, h, w, f, kh, kw, stride)?;
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    let k2 = kernel_by_input_channel(kernel)?;
    let patch = g.patch_len();
    let mut cols = vec![T::zero(); g.rows() * patch];
    T::gemm(
        g.rows(),
        c,
        patch,
        T::one(),
        input.data(),
        c,
        1,
        &k2,
        patch,
        1,
        T::zero(),
        &mut cols,
    );
    let mut out = vec![T::zero(); g.wide_len()];
    col2im(&cols, &g, &mut out);
    add_bias(&mut out, bias.data());
    let out = Tensor::new(output_shape(batched, n, g.in_h, g.in_w, f), out)?;
    Ok((out, g, batched))
}

pub(crate) fn conv2d_transpose_backward_geom<T: Scalar>(
    g: &ConvGeometry,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (kh, kw, c, f) = kernel_dims(kernel)?;
    if grad_out.len() != g.wide_len() {
        bail!(
            Dimension,
            "conv2d_transpose grad has {} values, expected {}",
            grad_out.len(),
            g.wide_len()
        );
    }
    let patch = g.patch_len();
    let gcols = im2col(grad_out.data(), g);
    let k2 = kernel_by_input_channel(kernel)?;

    let mut dx = vec![T::zero(); g.rows() * c];
    T::gemm(
        g.rows(),
        patch,
        c,
        T::one(),
        &gcols,
        patch,
        1,
        &k2,
        1,
        patch,
        T::zero(),
        &mut dx,
    );
    let mut dk2 = vec![T::zero(); c * patch];
    T::gemm(
        c,
        g.rows(),
        patch,
        T::one(),
        input.data(),
        1,
        c,
        &gcols,
        patch,
        1,
        T::zero(),
        &mut dk2,
    );
    let dk = kernel_from_input_channel(&dk2, kh, kw, c, f);
    let db = channel_sums(grad_out.data(), f);
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
        Tensor::new(vec![f], db)?,
    ))
}

/// Transposed convolution (stride 1 or 2): every input pixel scatters
/// `x[q, c] * kernel[.., c, ..]` onto the output, whose side is `stride`
/// times the input side.
///
/// `input` is `hxwxC` (or batched), `kernel` is `khxkwxCxF`.
pub fn conv2d_transpose<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    conv2d_transpose_forward(input, kernel, bias, stride).map(|(out, _, _)| out)
}

/// Gradients of [`conv2d_transpose`] with respect to input, kernel and bias.
pub fn conv2d_transpose_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, h, w, _, _) = nhwc(input.shape(), "conv2d_transpose input")?;
    let (kh, kw, _, f) = kernel_dims(kernel)?;
    let g = transpose_geometry(n, h, w, f, kh, kw, stride)?;
    conv2d_transpose_backward_geom(&g, input, kernel, grad_out)
}
