//! Reference implementations and checkers shared by the integration tests
//! and the acceptance run. Everything here is written as plain loops,
//! independent of the library's im2col/gemm code paths.
#![allow(dead_code)]

use std::collections::HashMap;

use multisense::data::Modality;
use multisense::graph::Graph;
use multisense::layers::{maxpool2x2_backward, maxpool2x2_forward, softmax_cross_entropy, Conv2d, Dense};
use multisense::models::{build_cnn_stream, build_depth_mlp, build_intermediate_fusion, ArchConfig};
use multisense::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn uniform_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// 3x3 "same" cross-correlation: x `[N,C,H,W]`, w `[O,C,3,3]`, b `[O]`.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let &[n, c, h, wd] = x.shape() else { panic!("rank 4 input") };
    let o = w.shape()[0];
    let (xd, wdata) = (x.data(), w.data());
    let mut out = vec![0.0; n * o * h * wd];
    for s in 0..n {
        for f in 0..o {
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = b.data()[f];
                    for ch in 0..c {
                        for di in 0..3 {
                            for dj in 0..3 {
                                let (y, xx) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let xv = xd[((s * c + ch) * h + y as usize) * wd + xx as usize];
                                acc += xv * wdata[((f * c + ch) * 3 + di) * 3 + dj];
                            }
                        }
                    }
                    out[((s * o + f) * h + i) * wd + j] = acc;
                }
            }
        }
    }
    out
}

/// Gradients of `sum(g * conv(x))` with respect to x, w and b.
pub fn naive_conv_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let &[n, c, h, wd] = x.shape() else { panic!("rank 4 input") };
    let o = w.shape()[0];
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; o];
    for s in 0..n {
        for f in 0..o {
            for i in 0..h {
                for j in 0..wd {
                    let gv = g.data()[((s * o + f) * h + i) * wd + j];
                    db[f] += gv;
                    for ch in 0..c {
                        for di in 0..3 {
                            for dj in 0..3 {
                                let (y, xx) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let xi = ((s * c + ch) * h + y as usize) * wd + xx as usize;
                                let wi = ((f * c + ch) * 3 + di) * 3 + dj;
                                dw[wi] += gv * x.data()[xi];
                                dx[xi] += gv * w.data()[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// 2x2 stride-2 max pooling over `[N,C,H,W]` with even H and W.
pub fn naive_maxpool(x: &Tensor) -> Vec<f64> {
    let &[_, _, h, w] = x.shape() else { panic!("rank 4 input") };
    let mut out = Vec::with_capacity(x.len() / 4);
    for plane in x.data().chunks(h * w) {
        for i in (0..h).step_by(2) {
            for j in (0..w).step_by(2) {
                let cell = [plane[i * w + j], plane[i * w + j + 1], plane[(i + 1) * w + j], plane[(i + 1) * w + j + 1]];
                out.push(cell.into_iter().fold(f64::NEG_INFINITY, f64::max));
            }
        }
    }
    out
}

/// `x W + b` for x `[N, in]`, W `[in, out]`.
pub fn naive_dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[1];
    let mut out = vec![0.0; n * dout];
    for r in 0..n {
        for k in 0..dout {
            let mut acc = b.data()[k];
            for i in 0..din {
                acc += x.data()[r * din + i] * w.data()[i * dout + k];
            }
            out[r * dout + k] = acc;
        }
    }
    out
}

/// Mean cross-entropy of softmax(logits) and its gradient, via log-sum-exp.
pub fn naive_softmax_ce(logits: &Tensor, labels: &[usize]) -> (f64, Vec<f64>) {
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * c];
    for r in 0..n {
        let row = &logits.data()[r * c..(r + 1) * c];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        loss += lse - row[labels[r]];
        for k in 0..c {
            let p = (row[k] - lse).exp();
            grad[r * c + k] = (p - if k == labels[r] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Default, Clone, Copy)]
pub struct GradReport {
    pub checked: usize,
    pub skipped: usize,
    pub under_1e4: usize,
    pub max_rel: f64,
}

impl GradReport {
    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.under_1e4 += other.under_1e4;
        self.max_rel = self.max_rel.max(other.max_rel);
    }

    pub fn fraction_under_1e4(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.under_1e4 as f64 / self.checked as f64
        }
    }

    /// At least 99% of elements below 1e-4 relative error, all below 1e-3.
    pub fn passes(&self) -> bool {
        self.fraction_under_1e4() >= 0.99 && self.max_rel < 1e-3
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let scale = analytic.abs() + numeric.abs();
        if scale < 1e-8 {
            self.skipped += 1;
            return;
        }
        let rel = (analytic - numeric).abs() / scale;
        self.checked += 1;
        if rel < 1e-4 {
            self.under_1e4 += 1;
        }
        self.max_rel = self.max_rel.max(rel);
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Move every parameter off its initial value by N(0, 0.1^2) noise. Zero
/// biases on dead units would otherwise put ReLUs exactly on their kink,
/// where central differences see half a one-sided slope.
pub fn jitter_parameters(graph: &mut Graph, rng: &mut ChaCha8Rng) {
    let flat: Vec<f64> = graph
        .flat_parameters()
        .into_iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(rng);
            v + 0.1 * z
        })
        .collect();
    graph.set_flat_parameters(&flat).unwrap();
}

fn loss_of(graph: &Graph, inputs: &HashMap<String, Tensor>, labels: &[usize]) -> f64 {
    let logits = graph.infer(inputs).unwrap();
    softmax_cross_entropy(&logits, labels).unwrap().loss
}

/// Central-difference check of every parameter and every entry-point input
/// of `graph` under mean softmax cross-entropy on its output.
pub fn check_graph_gradients(graph: &mut Graph, inputs: &HashMap<String, Tensor>, labels: &[usize]) -> GradReport {
    let logits = graph.forward(inputs).unwrap();
    let ce = softmax_cross_entropy(&logits, labels).unwrap();
    let entry_grads = graph.backward(&ce.grad).unwrap();
    let analytic: Vec<f64> = graph
        .parameters()
        .iter()
        .flat_map(|p| p.grad.data().iter().copied())
        .collect();

    let mut report = GradReport::default();
    let base = graph.flat_parameters();
    let mut probe = graph.clone();
    let mut flat = base.clone();
    for (i, &a) in analytic.iter().enumerate() {
        flat[i] = base[i] + FD_STEP;
        probe.set_flat_parameters(&flat).unwrap();
        let up = loss_of(&probe, inputs, labels);
        flat[i] = base[i] - FD_STEP;
        probe.set_flat_parameters(&flat).unwrap();
        let down = loss_of(&probe, inputs, labels);
        flat[i] = base[i];
        report.record(a, (up - down) / (2.0 * FD_STEP));
    }

    for (name, x) in inputs {
        let grad = &entry_grads[name];
        let mut shifted = inputs.clone();
        for i in 0..x.len() {
            let t = shifted.get_mut(name).unwrap();
            t.data_mut()[i] = x.data()[i] + FD_STEP;
            let up = loss_of(graph, &shifted, labels);
            let t = shifted.get_mut(name).unwrap();
            t.data_mut()[i] = x.data()[i] - FD_STEP;
            let down = loss_of(graph, &shifted, labels);
            shifted.get_mut(name).unwrap().data_mut()[i] = x.data()[i];
            report.record(grad.data()[i], (up - down) / (2.0 * FD_STEP));
        }
    }
    report
}

/// One small graph per layer kind, each ending in a dense head so the loss
/// is a softmax cross-entropy, with random inputs and labels.
pub fn layer_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Graph, HashMap<String, Tensor>, Vec<usize>)> {
    use multisense::graph::GraphBuilder;
    let n = 3;
    let mut cases: Vec<(&'static str, Graph, Vec<(&str, Vec<usize>)>)> = Vec::new();

    let mut b = GraphBuilder::new();
    let x = b.input("x", &[2, 4, 4]).unwrap();
    let c = b.conv2d("conv", x, 3, rng).unwrap();
    let f = b.flatten("flat", c).unwrap();
    let d = b.dense("head", f, 3, rng).unwrap();
    cases.push(("conv2d", b.build(d).unwrap(), vec![("x", vec![2, 4, 4])]));

    let mut b = GraphBuilder::new();
    let x = b.input("x", &[2, 4, 6]).unwrap();
    let p = b.maxpool("pool", x).unwrap();
    let f = b.flatten("flat", p).unwrap();
    let d = b.dense("head", f, 3, rng).unwrap();
    cases.push(("maxpool2x2", b.build(d).unwrap(), vec![("x", vec![2, 4, 6])]));

    let mut b = GraphBuilder::new();
    let x = b.input("x", &[5]).unwrap();
    let h = b.dense("hidden", x, 6, rng).unwrap();
    let r = b.relu("relu", h).unwrap();
    let d = b.dense("head", r, 3, rng).unwrap();
    cases.push(("dense+relu", b.build(d).unwrap(), vec![("x", vec![5])]));

    let mut b = GraphBuilder::new();
    let x = b.input("x", &[4]).unwrap();
    let y = b.input("y", &[3]).unwrap();
    let hx = b.dense("hx", x, 2, rng).unwrap();
    let cat = b.concat("cat", &[hx, y]).unwrap();
    let d = b.dense("head", cat, 3, rng).unwrap();
    cases.push(("concat", b.build(d).unwrap(), vec![("x", vec![4]), ("y", vec![3])]));

    let mut b = GraphBuilder::new();
    let x = b.input("x", &[4]).unwrap();
    let h1 = b.dense("h1", x, 3, rng).unwrap();
    let h2 = b.dense("h2", x, 3, rng).unwrap();
    let s = b.add("sum", &[h1, h2]).unwrap();
    let d = b.dense("head", s, 3, rng).unwrap();
    cases.push(("add", b.build(d).unwrap(), vec![("x", vec![4])]));

    cases
        .into_iter()
        .map(|(name, g, entries)| {
            let inputs = entries
                .into_iter()
                .map(|(entry, shape)| {
                    let mut full = vec![n];
                    full.extend(shape);
                    (entry.to_string(), normal_tensor(&full, rng))
                })
                .collect();
            let labels = (0..n).map(|_| rng.random_range(0..3)).collect();
            (name, g, inputs, labels)
        })
        .collect()
}

/// Gradient routed back through 2x2 max pooling: each output gradient goes
/// to the first maximum of its cell in row-major order.
pub fn naive_maxpool_backward(x: &Tensor, g: &Tensor) -> Vec<f64> {
    let &[_, _, h, w] = x.shape() else { panic!("rank 4 input") };
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; x.len()];
    for (p, plane) in x.data().chunks(h * w).enumerate() {
        for i in 0..oh {
            for j in 0..ow {
                let cells = [(2 * i, 2 * j), (2 * i, 2 * j + 1), (2 * i + 1, 2 * j), (2 * i + 1, 2 * j + 1)];
                let mut best = cells[0];
                for &(y, xx) in &cells[1..] {
                    if plane[y * w + xx] > plane[best.0 * w + best.1] {
                        best = (y, xx);
                    }
                }
                dx[p * h * w + best.0 * w + best.1] += g.data()[(p * oh + i) * ow + j];
            }
        }
    }
    dx
}

/// Gradients of `sum(g * (x W + b))`: `g W^T`, `x^T g` and column sums of g.
pub fn naive_dense_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[1];
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let mut dx = vec![0.0; n * din];
    let mut dw = vec![0.0; din * dout];
    let mut db = vec![0.0; dout];
    for s in 0..n {
        for i in 0..din {
            for o in 0..dout {
                dx[s * din + i] += gd[s * dout + o] * wd[i * dout + o];
                dw[i * dout + o] += xd[s * din + i] * gd[s * dout + o];
            }
        }
        for o in 0..dout {
            db[o] += gd[s * dout + o];
        }
    }
    (dx, dw, db)
}

/// Worst absolute deviation from the loop references over one random
/// instance of each kernel, forward and backward.
pub fn conv_oracle_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, o) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let (h, w) = (rng.random_range(1..7), rng.random_range(1..7));
    let x = uniform_tensor(&[n, c, h, w], &mut rng);
    let conv = Conv2d::new(uniform_tensor(&[o, c, 3, 3], &mut rng), uniform_tensor(&[o], &mut rng)).unwrap();
    let y = conv.forward(&x).unwrap();
    let g = uniform_tensor(y.shape(), &mut rng);
    let grads = conv.backward(&x, &g).unwrap();
    let (dx, dw, db) = naive_conv_backward(&x, &conv.weight, &g);
    [
        max_abs_diff(y.data(), &naive_conv(&x, &conv.weight, &conv.bias)),
        max_abs_diff(grads.input.data(), &dx),
        max_abs_diff(grads.weight.data(), &dw),
        max_abs_diff(grads.bias.data(), &db),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

pub fn maxpool_oracle_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [rng.random_range(1..3), rng.random_range(1..4), 2 * rng.random_range(1..4), 2 * rng.random_range(1..4)];
    let x = uniform_tensor(&shape, &mut rng);
    let pooled = maxpool2x2_forward(&x).unwrap();
    let g = uniform_tensor(pooled.output.shape(), &mut rng);
    let dx = maxpool2x2_backward(x.shape(), &pooled.switches, &g).unwrap();
    max_abs_diff(pooled.output.data(), &naive_maxpool(&x)).max(max_abs_diff(dx.data(), &naive_maxpool_backward(&x, &g)))
}

pub fn dense_oracle_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, din, dout) = (rng.random_range(1..5), rng.random_range(1..8), rng.random_range(1..8));
    let x = uniform_tensor(&[n, din], &mut rng);
    let dense = Dense::new(uniform_tensor(&[din, dout], &mut rng), uniform_tensor(&[dout], &mut rng)).unwrap();
    let y = dense.forward(&x).unwrap();
    let g = uniform_tensor(y.shape(), &mut rng);
    let grads = dense.backward(&x, &g).unwrap();
    let (dx, dw, db) = naive_dense_backward(&x, &dense.weight, &g);
    [
        max_abs_diff(y.data(), &naive_dense(&x, &dense.weight, &dense.bias)),
        max_abs_diff(grads.input.data(), &dx),
        max_abs_diff(grads.weight.data(), &dw),
        max_abs_diff(grads.bias.data(), &db),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

pub fn softmax_ce_oracle_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c) = (rng.random_range(1..6), rng.random_range(2..8));
    let logits = uniform_tensor(&[n, c], &mut rng).map(|v| 5.0 * v);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let ce = softmax_cross_entropy(&logits, &labels).unwrap();
    let (loss, grad) = naive_softmax_ce(&logits, &labels);
    (ce.loss - loss).abs().max(max_abs_diff(ce.grad.data(), &grad))
}

pub fn tiny_inputs(arch: &ArchConfig, modalities: &[Modality], n: usize, rng: &mut ChaCha8Rng) -> HashMap<String, Tensor> {
    modalities
        .iter()
        .map(|&m| {
            let mut shape = vec![n];
            shape.extend(arch.input_shape(m));
            (m.name().to_string(), normal_tensor(&shape, rng))
        })
        .collect()
}

/// Finite-difference report for every layer case, the tiny camera and
/// depth models, and the tiny fusion graph, each named.
pub fn all_gradient_reports() -> Vec<(String, GradReport)> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, mut graph, inputs, labels) in layer_cases(&mut rng) {
        out.push((format!("layer {name}"), check_graph_gradients(&mut graph, &inputs, &labels)));
    }
    let arch = ArchConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cnn = build_cnn_stream(&arch, 3, "cam_left", 5).unwrap();
    jitter_parameters(&mut cnn, &mut rng);
    let inputs = tiny_inputs(&arch, &[Modality::CamLeft], 4, &mut rng);
    out.push(("tiny camera CNN".into(), check_graph_gradients(&mut cnn, &inputs, &[0, 1, 2, 1])));

    let mut mlp = build_depth_mlp(&arch, 3, 6).unwrap();
    jitter_parameters(&mut mlp, &mut rng);
    let inputs = tiny_inputs(&arch, &[Modality::Depth], 4, &mut rng);
    out.push(("tiny depth MLP".into(), check_graph_gradients(&mut mlp, &inputs, &[2, 0, 1, 1])));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fusion = build_intermediate_fusion(&arch, 4, 8).unwrap();
    jitter_parameters(&mut fusion, &mut rng);
    let inputs = tiny_inputs(&arch, &Modality::ALL, 4, &mut rng);
    out.push(("tiny fusion graph".into(), check_graph_gradients(&mut fusion, &inputs, &[0, 1, 2, 3])));
    out
}
