//! Train the joint graph: three camera trunks and the depth trunk feed one
//! concatenated representation and a shared classifier, all trained
//! together on a task no single sensor can solve.
//!
//!     cargo run --release --example intermediate_fusion -- [classes] [views]

use multisense::data::*;
use multisense::models::*;

fn main() -> multisense::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let classes = args.next().unwrap_or(6);
    let views = args.next().unwrap_or(36);

    let arch = ArchConfig::desk();
    let graph = build_intermediate_fusion(&arch, classes, 0)?;
    println!("{} parameters; entry points:", graph.param_count());
    for (name, shape) in graph.entry_points() {
        println!("  {name} {shape:?}");
    }

    let cfg = SyntheticConfig::complementary(classes, views);
    let split = normalize(split_dataset(preprocess_all(&generate_synthetic(&cfg, 0)?)?, 0)?)?;
    let model = run_intermediate_fusion_experiment(&split, &arch, &TrainingPlan::desk(), classes, 0)?;
    let r = &model.report;
    println!(
        "{} epochs: accuracy {:.3}, weighted precision {:.3}, recall {:.3}, F1 {:.3}",
        model.history.epochs(),
        r.accuracy,
        r.precision_weighted,
        r.recall_weighted,
        r.f1_weighted
    );
    println!(
        "single-sensor ceilings on this task: cameras 1/2, depth 1/{}",
        classes / COMPLEMENTARY_DEPTH_CLASSES
    );
    Ok(())
}
