//! Load a recorded dataset tree (`<root>/<object>/<view>/{left,right,rs_rgb}.png`
//! plus `depth.bin`) and preprocess it. Without an argument a two-object
//! tree is written to a temporary directory first.
//!
//!     cargo run --release --example load_dataset -- [root] [max_objects]

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use multisense::data::*;

fn write_png(path: &Path, w: u32, h: u32, rgb: &[u8]) -> std::io::Result<()> {
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), w, h);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header()?.write_image_data(rgb)?;
    Ok(())
}

/// Two objects, three views each, with camera images at a quarter of the
/// recorded resolution.
fn write_demo_tree(root: &Path) -> std::io::Result<()> {
    let (w, h) = (160u32, 120u32);
    for object in 0..2u32 {
        for view in 0..3u32 {
            let dir = root.join(object.to_string()).join(view.to_string());
            fs::create_dir_all(&dir)?;
            let rgb: Vec<u8> = (0..w * h)
                .flat_map(|i| {
                    let (x, y) = (i % w, i / w);
                    let on = (x as i32 - 80).pow(2) + (y as i32 - 60).pow(2) < (20 + 15 * object as i32).pow(2);
                    let v = if on { 200 } else { 40 + 10 * view as u8 };
                    [v, v, v]
                })
                .collect();
            for name in ["left.png", "right.png", "rs_rgb.png"] {
                write_png(&dir.join(name), w, h, &rgb)?;
            }
            let depth: Vec<u8> = (0..480 * 640).flat_map(|_| (1500u16 - 100 * object as u16).to_le_bytes()).collect();
            fs::write(dir.join("depth.bin"), depth)?;
        }
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let _tmp;
    let root = match args.next() {
        Some(r) => PathBuf::from(r),
        None => {
            _tmp = tempfile::tempdir()?;
            write_demo_tree(_tmp.path())?;
            _tmp.path().to_path_buf()
        }
    };
    let max_objects = args.next().map(|s| s.parse()).transpose()?;

    let raw = load_icub_dataset(&root, max_objects)?;
    let n_objects = raw.iter().map(|s| s.label + 1).max().unwrap_or(0);
    println!("{} views of {n_objects} objects from {}", raw.len(), root.display());
    let samples = preprocess_all(&raw)?;
    for s in samples.iter().step_by(3) {
        let mean = s.cam_left.data().iter().sum::<f64>() / s.cam_left.len() as f64;
        println!(
            "  label {}: mean gray {mean:.1}, depth[0] {} mm",
            s.label,
            s.depth.data()[0]
        );
    }
    Ok(())
}
