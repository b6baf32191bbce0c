//! Generate the complementary synthetic task and round-trip it through the
//! per-split binary containers.
//!
//!     cargo run --release --example synthetic_dataset -- [out_dir]

use std::path::PathBuf;

use multisense::data::*;

fn main() -> multisense::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let cfg = SyntheticConfig::complementary(10, 72);
    println!(
        "{} classes = {} shapes x {} depth profiles; camera ceiling 1/2, depth ceiling 1/{}",
        cfg.n_classes,
        cfg.n_shapes(),
        COMPLEMENTARY_DEPTH_CLASSES,
        cfg.n_shapes()
    );
    for label in 0..4 {
        println!("  label {label}: (shape, depth profile) = {:?}", cfg.factors(label));
    }

    let raw = generate_synthetic(&cfg, 7)?;
    let split = normalize(split_dataset(preprocess_all(&raw)?, 7)?)?;
    for (name, part) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        let path = out.join(format!("multisense_{name}.bin"));
        write_split_file(&path, part)?;
        let back = read_split_file(&path)?;
        // The container stores f32, so compare at that precision.
        let exact = back.iter().zip(part.iter()).all(|(a, b)| {
            a.label == b.label
                && Modality::ALL.iter().all(|&m| {
                    a.modality(m).data().iter().zip(b.modality(m).data()).all(|(x, y)| *x == (*y as f32) as f64)
                })
        });
        println!("{name}: {} samples -> {} (f32 round trip exact: {exact})", part.len(), path.display());
    }
    Ok(())
}
