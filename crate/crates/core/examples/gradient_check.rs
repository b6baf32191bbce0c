//! Compare backpropagated gradients of the joint fusion graph with central
//! finite differences at small shapes.
//!
//!     cargo run --release --example gradient_check

use std::collections::HashMap;

use multisense::data::Modality;
use multisense::graph::Graph;
use multisense::layers::softmax_cross_entropy;
use multisense::models::{build_intermediate_fusion, ArchConfig};
use multisense::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn loss(graph: &mut Graph, inputs: &HashMap<String, Tensor>, labels: &[usize]) -> multisense::Result<f64> {
    Ok(softmax_cross_entropy(&graph.forward(inputs)?, labels)?.loss)
}

fn main() -> multisense::Result<()> {
    let arch = ArchConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };

    let mut graph = build_intermediate_fusion(&arch, 4, 1)?;
    // Move parameters off zero so no ReLU input sits exactly on its kink.
    let jittered: Vec<f64> = graph.flat_parameters().iter().zip(normal(graph.param_count())).map(|(w, z)| w + 0.1 * z).collect();
    graph.set_flat_parameters(&jittered)?;

    let batch = 3;
    let inputs: HashMap<String, Tensor> = Modality::ALL
        .iter()
        .map(|&m| {
            let mut shape = vec![batch];
            shape.extend(arch.input_shape(m));
            let n = shape.iter().product();
            (m.name().to_string(), Tensor::new(shape, normal(n)).unwrap())
        })
        .collect();
    let labels = [0, 2, 3];

    let logits = graph.forward(&inputs)?;
    let ce = softmax_cross_entropy(&logits, &labels)?;
    graph.backward(&ce.grad)?;
    let analytic: Vec<f64> = graph.parameters().iter().flat_map(|p| p.grad.data().to_vec()).collect();

    let base = graph.flat_parameters();
    let h = 1e-5;
    let (mut checked, mut worst) = (0, 0.0f64);
    for i in (0..base.len()).step_by(3) {
        let mut p = base.clone();
        p[i] = base[i] + h;
        graph.set_flat_parameters(&p)?;
        let up = loss(&mut graph, &inputs, &labels)?;
        p[i] = base[i] - h;
        graph.set_flat_parameters(&p)?;
        let down = loss(&mut graph, &inputs, &labels)?;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs() + numeric.abs();
        if scale > 1e-8 {
            worst = worst.max((analytic[i] - numeric).abs() / scale);
            checked += 1;
        }
    }
    graph.set_flat_parameters(&base)?;
    println!("{} parameters, {checked} checked, worst relative error {worst:.2e}", base.len());
    Ok(())
}
