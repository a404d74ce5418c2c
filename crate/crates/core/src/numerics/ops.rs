use rand::Rng;

use crate::error::{bail, Result};

use super::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// Passes `grad` where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad.shape() {
        bail!(Dimension, "relu grad shape {:?} vs input {:?}", grad.shape(), input.shape());
    }
    let data = input
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// 2x2 max pooling with stride 2 over `HxWxC` or `NxHxWxC`.
///
/// Returns the pooled tensor and, per output cell, the flat input index of
/// the maximum. Ties go to the first window position in row-major order.
pub fn max_pool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, h, w, c, batched) = match *input.shape() {
        [h, w, c] => (1, h, w, c, false),
        [n, h, w, c] => (n, h, w, c, true),
        ref s => bail!(Dimension, "max_pool2 input must be HxWxC or NxHxWxC, got {s:?}"),
    };
    if h % 2 != 0 || w % 2 != 0 {
        bail!(Dimension, "max_pool2 needs even sides, got {h}x{w}");
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let at = |dy: usize, dx: usize| ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    let mut best = at(0, 0);
                    for idx in [at(0, 1), at(1, 0), at(1, 1)] {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
    }
    let shape = if batched { vec![n, oh, ow, c] } else { vec![oh, ow, c] };
    Ok((Tensor::new(shape, out)?, argmax))
}

/// Routes each pooled gradient to its recorded argmax.
pub fn max_pool2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad.len() != argmax.len() {
        bail!(Dimension, "max_pool2 grad has {} values for {} cells", grad.len(), argmax.len());
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad.data()) {
        d[idx] = d[idx] + g;
    }
    Ok(dx)
}

/// Inverted dropout. Returns the output and the multiplicative mask applied
/// (`None` when the op is an identity).
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        bail!(Parameter, "dropout rate must be in [0, 1), got {rate}");
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::new(input.shape().to_vec(), data)?, Some(mask)))
}

fn dense_dims(input: &Tensor<impl Scalar>, weights: &Tensor<impl Scalar>) -> Result<(usize, usize, usize, bool)> {
    let (rows, n, batched) = match *input.shape() {
        [n] => (1, n, false),
        [b, n] => (b, n, true),
        ref s => bail!(Dimension, "dense input must be a vector or NxD matrix, got {s:?}"),
    };
    let m = match *weights.shape() {
        [wn, m] if wn == n => m,
        ref s => bail!(Dimension, "dense weights {s:?} do not accept {n} inputs"),
    };
    Ok((rows, n, m, batched))
}

/// `input^T * weights + bias` for a vector input, row-wise for `NxD` input.
pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, n, m, batched) = dense_dims(input, weights)?;
    if bias.shape() != [m] {
        bail!(Dimension, "dense bias {:?} for {m} outputs", bias.shape());
    }
    let mut out = Vec::with_capacity(rows * m);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    T::gemm(rows, n, m, T::one(), input.data(), n, 1, weights.data(), m, 1, T::one(), &mut out);
    let shape = if batched { vec![rows, m] } else { vec![m] };
    Tensor::new(shape, out)
}

/// Gradients of [`dense`] with respect to input, weights and bias.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (rows, n, m, _) = dense_dims(input, weights)?;
    if grad.len() != rows * m {
        bail!(Dimension, "dense grad has {} values, expected {}", grad.len(), rows * m);
    }
    let mut dx = vec![T::zero(); rows * n];
    T::gemm(rows, m, n, T::one(), grad.data(), m, 1, weights.data(), 1, m, T::zero(), &mut dx);
    let mut dw = vec![T::zero(); n * m];
    T::gemm(n, rows, m, T::one(), input.data(), 1, n, grad.data(), m, 1, T::zero(), &mut dw);
    let mut db = vec![0.0f64; m];
    for row in grad.data().chunks_exact(m) {
        for (a, &g) in db.iter_mut().zip(row) {
            *a += g.as_f64();
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(weights.shape().to_vec(), dw)?,
        Tensor::new(vec![m], db.into_iter().map(T::from_f64).collect())?,
    ))
}

/// `(1/n) * sum((target - pred)^2)`, accumulated in `f64`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        bail!(Dimension, "mse of {:?} against {:?}", pred.shape(), target.shape());
    }
    if pred.is_empty() {
        bail!(Dimension, "mse of an empty tensor");
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = t.as_f64() - p.as_f64();
            d * d
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `d mse / d pred = (2/n) (pred - target)`.
pub fn mse_loss_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() {
        bail!(Dimension, "mse of {:?} against {:?}", pred.shape(), target.shape());
    }
    let scale = 2.0 / pred.len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| T::from_f64(scale * (p.as_f64() - t.as_f64())))
        .collect();
    Tensor::new(pred.shape().to_vec(), data)
}

/// Concatenates along the last axis; all leading axes must agree.
pub fn concat_last<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
        bail!(Dimension, "cannot concatenate {sa:?} with {sb:?} on the last axis");
    }
    let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.data().chunks_exact(ca.max(1)).zip(b.data().chunks_exact(cb.max(1))) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    let mut shape = sa.to_vec();
    *shape.last_mut().unwrap() = ca + cb;
    Tensor::new(shape, out)
}

/// Inverse of [`concat_last`]: splits the last axis at `at`.
pub fn split_last<T: Scalar>(x: &Tensor<T>, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = x.shape();
    let Some(&c) = s.last() else {
        bail!(Dimension, "cannot split a scalar");
    };
    if at > c {
        bail!(Dimension, "split point {at} beyond last axis {c}");
    }
    let mut a = Vec::with_capacity(x.len() / c.max(1) * at);
    let mut b = Vec::with_capacity(x.len() / c.max(1) * (c - at));
    for row in x.data().chunks_exact(c.max(1)) {
        a.extend_from_slice(&row[..at]);
        b.extend_from_slice(&row[at..]);
    }
    let mut sa = s.to_vec();
    let mut sb = s.to_vec();
    *sa.last_mut().unwrap() = at;
    *sb.last_mut().unwrap() = c - at;
    Ok((Tensor::new(sa, a)?, Tensor::new(sb, b)?))
}
