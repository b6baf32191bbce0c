//! Drive a whole experiment from a config value, as the `multisense run`
//! command does from a TOML file.
//!
//!     cargo run --release --example run_config -- [out_dir]

use std::path::PathBuf;

use multisense::data::SyntheticConfig;
use multisense::runner::{metrics_csv, run, Corruption, DataSource, ExperimentConfig, Selector};

fn main() -> multisense::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("multisense_run"));
    let mut cfg = ExperimentConfig {
        out_dir: out,
        experiments: vec![Selector::DecisionFusion, Selector::IntermediateFusion],
        corrupt: Corruption::CamLeft,
        data: DataSource::Synthetic(SyntheticConfig::complementary(4, 24)),
        ..ExperimentConfig::default()
    };
    for t in [&mut cfg.training.cnn, &mut cfg.training.mlp, &mut cfg.training.fusion] {
        t.max_epochs = 40;
    }
    println!("config:\n{}", cfg.to_toml());
    let rows = run(&cfg)?;
    print!("{}", metrics_csv(&rows));
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}
