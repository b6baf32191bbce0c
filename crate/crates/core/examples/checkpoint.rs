//! Save a trained model, load it into a freshly built graph and check that
//! predictions match bit for bit.
//!
//!     cargo run --release --example checkpoint

use multisense::checkpoint::{fingerprint, load_checkpoint, save_checkpoint};
use multisense::data::*;
use multisense::models::*;

fn main() -> multisense::Result<()> {
    let cfg = SyntheticConfig { n_classes: 4, views_per_class: 16, ..SyntheticConfig::default() };
    let split = normalize(split_dataset(preprocess_all(&generate_synthetic(&cfg, 2)?)?, 2)?)?;
    let arch = ArchConfig::desk();
    let mut plan = TrainingPlan::desk();
    plan.cnn.max_epochs = 5;
    let model = run_unimodal_experiment(&split, Modality::CamRs, &arch, &plan, 4, 0)?;

    let path = std::env::temp_dir().join("multisense_cam_rs.ckpt");
    save_checkpoint(&path, model.id.name(), &model.graph, &model.history)?;
    let ck = load_checkpoint(&path)?;
    println!("{}: fingerprint {:016x}, {} parameters, {} epochs", ck.model, ck.fingerprint, ck.params.len(), ck.history.epochs());

    let mut fresh = build_cnn_stream(&arch, 4, "cam_rs", 999)?;
    assert_eq!(fingerprint(&fresh), ck.fingerprint);
    ck.restore_into(&mut fresh)?;
    let proba = predict_proba_set(&fresh, &labeled_set(&split.test, &[Modality::CamRs])?)?;
    let identical = proba.data().iter().zip(model.test_proba.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("restored predictions bit-identical: {identical}");

    let mut wrong = build_depth_mlp(&arch, 4, 0)?;
    println!("restoring into the depth MLP: {}", ck.restore_into(&mut wrong).unwrap_err());
    Ok(())
}
