//! Train one camera CNN stream on a task where shape alone identifies the
//! class, then inspect its 128-wide representation layer.
//!
//!     cargo run --release --example cnn_stream

use multisense::data::*;
use multisense::models::*;

fn main() -> multisense::Result<()> {
    let cfg = SyntheticConfig { n_classes: 5, views_per_class: 40, ..SyntheticConfig::default() };
    let split = normalize(split_dataset(preprocess_all(&generate_synthetic(&cfg, 3)?)?, 3)?)?;
    let arch = ArchConfig::desk();
    let mut plan = TrainingPlan::desk();
    plan.cnn.max_epochs = 30;

    let graph = build_cnn_stream(&arch, cfg.n_classes, "cam_left", 0)?;
    print!("{}", graph.describe());
    let model = run_unimodal_experiment(&split, Modality::CamLeft, &arch, &plan, cfg.n_classes, 0)?;
    println!(
        "trained {} epochs (stopped early: {}), test accuracy {:.3}",
        model.history.epochs(),
        model.history.stopped_early,
        model.report.accuracy
    );

    let repr = model.graph.node_by_label(&repr_label("cam_left")).expect("stream has a representation");
    let test = labeled_set(&split.test[..4], &[Modality::CamLeft])?;
    let features = model.graph.infer_at(repr, &test.batch(&[0, 1, 2, 3])?)?;
    println!("representation of 4 test views: {:?}", features.shape());
    Ok(())
}
