//! Layer kinds with forward passes and analytic backward passes.
//!
//! Every function here works on batched tensors: the leading dimension is the
//! batch. Images are `N×C×H×W`, feature vectors `N×D`.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Mat, Tensor};

/// Side length of every convolution kernel.
pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

fn image_dims(x: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match x.shape()[..] {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Dimension(format!(
            "{what}: expected an N×C×H×W batch, got {:?}",
            x.shape()
        ))),
    }
}

fn vector_dims(x: &Tensor, what: &str) -> Result<(usize, usize)> {
    match x.shape()[..] {
        [n, d] => Ok((n, d)),
        _ => Err(Error::Dimension(format!(
            "{what}: expected an N×D batch, got {:?}",
            x.shape()
        ))),
    }
}

/// 3×3 convolution, stride 1, zero "same" padding, no kernel flip.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `out_channels × in_channels × 3 × 3`
    pub weight: Tensor,
    /// `out_channels`
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let ok = matches!(weight.shape(), &[o, _, KERNEL, KERNEL] if bias.shape() == [o]);
        if !ok {
            return Err(Error::Dimension(format!(
                "conv weight {:?} / bias {:?}: expected O×C×3×3 and O",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Conv2d { weight, bias })
    }

    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Conv2d {
            weight: Tensor::zeros(vec![out_channels, in_channels, KERNEL, KERNEL]),
            bias: Tensor::zeros(vec![out_channels]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize, usize)> {
        let dims = image_dims(x, "conv2d")?;
        if dims.1 != self.in_channels() {
            return Err(Error::Dimension(format!(
                "conv2d expects {} input channels, got {}",
                self.in_channels(),
                dims.1
            )));
        }
        Ok(dims)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = self.check_input(x)?;
        let o = self.out_channels();
        let hw = h * w;
        let mut cols = vec![0.0; c * TAPS * hw];
        let mut out = vec![0.0; n * o * hw];
        for (img, dst) in x.data().chunks(c * hw).zip(out.chunks_mut(o * hw)) {
            im2col(img, c, h, w, &mut cols);
            for (row, &b) in dst.chunks_mut(hw).zip(self.bias.data()) {
                row.fill(b);
            }
            gemm(
                o,
                c * TAPS,
                hw,
                1.0,
                Mat::row_major(self.weight.data(), c * TAPS),
                Mat::row_major(&cols, hw),
                1.0,
                dst,
            );
        }
        Tensor::new(vec![n, o, h, w], out)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<Conv2dGrads> {
        let (n, c, h, w) = self.check_input(x)?;
        let o = self.out_channels();
        if grad_out.shape() != [n, o, h, w] {
            return Err(Error::Dimension(format!(
                "conv2d backward: upstream gradient {:?} does not match output [{n}, {o}, {h}, {w}]",
                grad_out.shape()
            )));
        }
        let hw = h * w;
        let k = c * TAPS;
        let mut cols = vec![0.0; k * hw];
        let mut dcols = vec![0.0; k * hw];
        let mut dw = vec![0.0; o * k];
        let mut db = vec![0.0; o];
        let mut dx = vec![0.0; n * c * hw];
        for ((img, dy), dimg) in x
            .data()
            .chunks(c * hw)
            .zip(grad_out.data().chunks(o * hw))
            .zip(dx.chunks_mut(c * hw))
        {
            im2col(img, c, h, w, &mut cols);
            // dW += dY · colsᵀ
            gemm(
                o,
                hw,
                k,
                1.0,
                Mat::row_major(dy, hw),
                Mat::transposed(&cols, hw),
                1.0,
                &mut dw,
            );
            for (acc, row) in db.iter_mut().zip(dy.chunks(hw)) {
                *acc += row.iter().sum::<f64>();
            }
            // dcols = Wᵀ · dY
            gemm(
                k,
                o,
                hw,
                1.0,
                Mat::transposed(self.weight.data(), k),
                Mat::row_major(dy, hw),
                0.0,
                &mut dcols,
            );
            col2im(&dcols, c, h, w, dimg);
        }
        Ok(Conv2dGrads {
            input: Tensor::new(vec![n, c, h, w], dx)?,
            weight: Tensor::new(self.weight.shape().to_vec(), dw)?,
            bias: Tensor::new(vec![o], db)?,
        })
    }
}

/// Unfolds one `C×H×W` image into a `(C·9)×(H·W)` patch matrix.
fn im2col(img: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &img[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((ch * KERNEL + ky) * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im(dcols: &[f64], c: usize, h: usize, w: usize, dimg: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut dimg[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &dcols[((ch * KERNEL + ky) * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

/// Output of a 2×2 max-pool: the pooled batch and, for each output element, the
/// flat index of the input element it came from.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub output: Tensor,
    pub switches: Vec<usize>,
}

/// Non-overlapping 2×2 max-pool. Odd trailing rows/columns are dropped.
pub fn maxpool2x2_forward(x: &Tensor) -> Result<Pooled> {
    let (n, c, h, w) = image_dims(x, "maxpool")?;
    if h < 2 || w < 2 {
        return Err(Error::Dimension(format!(
            "maxpool needs H, W >= 2, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut switches = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                // Scan order: row-major inside the window; strict > keeps the first on ties.
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                switches.push(best);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![n, c, oh, ow], out)?,
        switches,
    })
}

/// Routes each pooled gradient back to the input position that won its window.
pub fn maxpool2x2_backward(
    input_shape: &[usize],
    switches: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    if grad_out.len() != switches.len() {
        return Err(Error::Dimension(format!(
            "maxpool backward: {} gradients for {} pooled positions",
            grad_out.len(),
            switches.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&idx, &g) in switches.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes the upstream gradient where the input was strictly positive.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.zip_map(grad_out, |v, g| if v > 0.0 { g } else { 0.0 })
}

/// Fully connected layer `y = x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in_dim × out_dim`
    pub weight: Tensor,
    /// `out_dim`
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let ok = matches!(weight.shape(), &[_, o] if bias.shape() == [o]);
        if !ok {
            return Err(Error::Dimension(format!(
                "dense weight {:?} / bias {:?}: expected I×O and O",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Dense { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            weight: Tensor::zeros(vec![in_dim, out_dim]),
            bias: Tensor::zeros(vec![out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let (n, d) = vector_dims(x, "dense")?;
        if d != self.in_dim() {
            return Err(Error::Dimension(format!(
                "dense expects {} inputs, got {d}",
                self.in_dim()
            )));
        }
        Ok(n)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.check_input(x)?;
        let (i, o) = (self.in_dim(), self.out_dim());
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(self.bias.data());
        }
        gemm(
            n,
            i,
            o,
            1.0,
            Mat::row_major(x.data(), i),
            Mat::row_major(self.weight.data(), o),
            1.0,
            &mut out,
        );
        Tensor::new(vec![n, o], out)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
        let n = self.check_input(x)?;
        let (i, o) = (self.in_dim(), self.out_dim());
        if grad_out.shape() != [n, o] {
            return Err(Error::Dimension(format!(
                "dense backward: upstream gradient {:?} does not match output [{n}, {o}]",
                grad_out.shape()
            )));
        }
        let mut dw = vec![0.0; i * o];
        gemm(
            i,
            n,
            o,
            1.0,
            Mat::transposed(x.data(), i),
            Mat::row_major(grad_out.data(), o),
            0.0,
            &mut dw,
        );
        let mut dx = vec![0.0; n * i];
        gemm(
            n,
            o,
            i,
            1.0,
            Mat::row_major(grad_out.data(), o),
            Mat::transposed(self.weight.data(), o),
            0.0,
            &mut dx,
        );
        Ok(DenseGrads {
            input: Tensor::new(vec![n, i], dx)?,
            weight: Tensor::new(vec![i, o], dw)?,
            bias: grad_out.reduce_sum(0)?,
        })
    }
}

/// Joins `N×dᵢ` batches along the feature axis, preserving input order.
pub fn concat_forward(xs: &[&Tensor]) -> Result<Tensor> {
    let Some(first) = xs.first() else {
        return Err(Error::Argument("concat of zero tensors".into()));
    };
    let (n, _) = vector_dims(first, "concat")?;
    let mut widths = Vec::with_capacity(xs.len());
    for x in xs {
        let (m, d) = vector_dims(x, "concat")?;
        if m != n {
            return Err(Error::Dimension(format!(
                "concat: batch sizes {n} and {m} differ"
            )));
        }
        widths.push(d);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total);
    for row in 0..n {
        for (x, &d) in xs.iter().zip(&widths) {
            out.extend_from_slice(&x.data()[row * d..(row + 1) * d]);
        }
    }
    Tensor::new(vec![n, total], out)
}

/// Splits an `N×Σdᵢ` gradient back into per-input slices.
pub fn concat_backward(grad_out: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let (n, total) = vector_dims(grad_out, "concat backward")?;
    if widths.iter().sum::<usize>() != total {
        return Err(Error::Dimension(format!(
            "concat backward: widths {widths:?} do not sum to {total}"
        )));
    }
    let mut parts: Vec<Vec<f64>> = widths.iter().map(|&d| Vec::with_capacity(n * d)).collect();
    for row in grad_out.data().chunks(total) {
        let mut offset = 0;
        for (part, &d) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&row[offset..offset + d]);
            offset += d;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(p, &d)| Tensor::new(vec![n, d], p))
        .collect()
}

/// Row-wise softmax with the maximum logit subtracted first.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, c) = vector_dims(logits, "softmax")?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean categorical cross-entropy over a batch, with the class probabilities
/// and the gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    pub probs: Tensor,
    /// `(probs − onehot(label)) / N`
    pub grad: Tensor,
}

pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<CrossEntropy> {
    let (n, c) = vector_dims(logits, "cross-entropy")?;
    if labels.len() != n {
        return Err(Error::Argument(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Argument(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let probs = softmax(logits)?;
    let mut loss = 0.0;
    let mut grad = probs.data().to_vec();
    for ((row, logit_row), (&label, g)) in probs
        .data()
        .chunks(c)
        .zip(logits.data().chunks(c))
        .zip(labels.iter().zip(grad.chunks_mut(c)))
    {
        // −log softmax computed from the logits so extreme values stay finite.
        let max = logit_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = logit_row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += log_sum - (logit_row[label] - max);
        debug_assert!(row[label] >= 0.0);
        g[label] -= 1.0;
    }
    let scale = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(CrossEntropy {
        loss: loss * scale,
        probs,
        grad: Tensor::new(vec![n, c], grad)?,
    })
}
