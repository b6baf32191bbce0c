//! Train the depth MLP on flattened depth maps where every class has its
//! own surface profile.
//!
//!     cargo run --release --example depth_mlp

use multisense::data::*;
use multisense::models::*;

fn main() -> multisense::Result<()> {
    let cfg = SyntheticConfig { n_classes: 4, views_per_class: 40, ..SyntheticConfig::default() };
    let split = normalize(split_dataset(preprocess_all(&generate_synthetic(&cfg, 5)?)?, 5)?)?;
    let arch = ArchConfig::desk();
    let mut plan = TrainingPlan::desk();
    plan.mlp.max_epochs = 60;

    let model = run_unimodal_experiment(&split, Modality::Depth, &arch, &plan, cfg.n_classes, 1)?;
    println!("{} parameters", model.graph.param_count());
    println!(
        "{} epochs, final validation loss {:.4}, test accuracy {:.3}",
        model.history.epochs(),
        model.history.val_loss.last().copied().unwrap_or(f64::NAN),
        model.report.accuracy
    );
    Ok(())
}
