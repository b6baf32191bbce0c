//! Replace one camera with uniform noise in training, validation and test
//! data and compare how much decision fusion and the joint graph lose.
//!
//!     cargo run --release --example noise_corruption -- [classes] [views] [seed]

use multisense::data::*;
use multisense::models::*;

fn main() -> multisense::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().expect("integer argument"));
    let classes = args.next().unwrap_or(6) as usize;
    let views = args.next().unwrap_or(36) as usize;
    let seed = args.next().unwrap_or(0);
    let (arch, plan) = (ArchConfig::desk(), TrainingPlan::desk());

    let raw = generate_synthetic(&SyntheticConfig::complementary(classes, views), seed)?;
    let split = split_dataset(preprocess_all(&raw)?, seed)?;
    let clean = normalize(split.clone())?;
    let noisy = normalize(corrupt_modality(split, Modality::CamLeft, seed + 1))?;

    let mut rows = Vec::new();
    for (name, data) in [("clean", &clean), ("cam_left noise", &noisy)] {
        let decision = run_decision_fusion_experiment(data, &arch, &plan, classes, seed)?;
        let inter = run_intermediate_fusion_experiment(data, &arch, &plan, classes, seed)?;
        println!(
            "{name:<15} cam_left alone {:.3}  decision fusion {:.3}  intermediate fusion {:.3}",
            decision.unimodal[0].report.accuracy,
            decision.fused.accuracy,
            inter.report.accuracy
        );
        rows.push((decision.fused.accuracy, inter.report.accuracy));
    }
    println!(
        "drop: decision fusion {:.1} pp, intermediate fusion {:.1} pp",
        100.0 * (rows[0].0 - rows[1].0),
        100.0 * (rows[0].1 - rows[1].1)
    );
    Ok(())
}
