//! Train the three camera streams and the depth MLP separately, then sum
//! their test-set probability vectors.
//!
//!     cargo run --release --example decision_fusion -- [classes] [views]

use multisense::data::*;
use multisense::models::*;
use multisense::Tensor;

fn main() -> multisense::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let classes = args.next().unwrap_or(6);
    let views = args.next().unwrap_or(36);

    // A single test view: three confident camera votes against one depth vote.
    let votes = [[0.6, 0.4], [0.6, 0.4], [0.6, 0.4], [0.1, 0.9]].map(|p| Tensor::new(vec![1, 2], p.to_vec()).unwrap());
    let (sum, class) = decision_fusion(&votes)?;
    println!("sum {:?} -> class {class}", sum.data());

    let cfg = SyntheticConfig::complementary(classes, views);
    let split = normalize(split_dataset(preprocess_all(&generate_synthetic(&cfg, 0)?)?, 0)?)?;
    let outcome = run_decision_fusion_experiment(&split, &ArchConfig::desk(), &TrainingPlan::desk(), classes, 0)?;
    for m in &outcome.unimodal {
        println!("{:<16} accuracy {:.3} ({} epochs)", m.id.name(), m.report.accuracy, m.history.epochs());
    }
    println!("{:<16} accuracy {:.3}", "decision fusion", outcome.fused.accuracy);
    Ok(())
}
