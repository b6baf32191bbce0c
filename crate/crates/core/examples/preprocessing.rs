//! Raw RGB-D views to normalized 32x32 camera planes and 1024-long depth
//! vectors, split 50/25/25.
//!
//!     cargo run --release --example preprocessing

use multisense::data::*;
use multisense::Tensor;

fn main() -> multisense::Result<()> {
    let red = Tensor::new(vec![1, 1, 3], vec![255.0, 0.0, 0.0])?;
    println!("grayscale of pure red: {:.3}", grayscale(&red)?.data()[0]);

    let ramp = Tensor::new(vec![4, 4], (0..16).map(f64::from).collect())?;
    println!("4x4 ramp resized to 2x2: {:?}", bilinear_resize(&ramp, 2, 2)?.data());

    let raw = generate_synthetic(&SyntheticConfig::complementary(4, 12), 0)?;
    let first = &raw[0];
    println!(
        "raw view: cameras {:?}, depth {:?} mm, label {}",
        first.rgb_left.shape(),
        first.depth.shape(),
        first.label
    );

    let samples = preprocess_all(&raw)?;
    println!("preprocessed: cam_left {:?}, depth {:?}", samples[0].cam_left.shape(), samples[0].depth.shape());

    let split = normalize(split_dataset(samples, 0)?)?;
    let (lo, hi) = split.depth_range.expect("normalized");
    println!(
        "split {}/{}/{}, depth scaled with train range {lo}..{hi} mm",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    let max = split
        .train
        .iter()
        .flat_map(|s| Modality::ALL.map(|m| s.modality(m).data().iter().cloned().fold(0.0, f64::max)))
        .fold(0.0, f64::max);
    println!("largest normalized value in train: {max}");
    Ok(())
}
