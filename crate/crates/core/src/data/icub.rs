//! Loader for the recorded multi-sensor object dataset.
//!
//! Expected layout: `<root>/<object_id>/<view_index>/` holding `left.png`,
//! `right.png`, `rs_rgb.png` and `depth.bin` (little-endian `u16`
//! millimeters, row-major 480x640). Object and view directories are ordered
//! numerically when their names are integers, lexicographically otherwise;
//! labels are object positions in that order.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use super::RawSample;
use crate::{Error, Result, Tensor};

pub const DEPTH_HEIGHT: usize = 480;
pub const DEPTH_WIDTH: usize = 640;

const IMAGE_FILES: [&str; 3] = ["left.png", "right.png", "rs_rgb.png"];
const DEPTH_FILE: &str = "depth.bin";

/// Load every view of every object under `root`, or only the first
/// `max_objects` objects when given.
pub fn load_icub_dataset(root: &Path, max_objects: Option<usize>) -> Result<Vec<RawSample>> {
    let mut objects = sorted_subdirs(root)?;
    if objects.is_empty() {
        return Err(Error::Ingestion(format!(
            "{}: no object directories found",
            root.display()
        )));
    }
    if let Some(n) = max_objects {
        objects.truncate(n);
    }
    let mut samples = Vec::new();
    for (label, object) in objects.iter().enumerate() {
        let views = sorted_subdirs(object)?;
        if views.is_empty() {
            return Err(Error::Ingestion(format!(
                "{}: object has no view directories",
                object.display()
            )));
        }
        for (v, view) in views.iter().enumerate() {
            samples.push(load_view(view, label, 360.0 * v as f64 / views.len() as f64)?);
        }
    }
    Ok(samples)
}

fn load_view(dir: &Path, label: usize, view_angle: f64) -> Result<RawSample> {
    for name in IMAGE_FILES.iter().chain([&DEPTH_FILE]) {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(Error::Ingestion(format!(
                "missing modality file {}",
                path.display()
            )));
        }
    }
    let [left, right, rs] = IMAGE_FILES.map(|f| read_png_rgb(&dir.join(f)));
    Ok(RawSample {
        rgb_left: left?,
        rgb_right: right?,
        rgb_realsense: rs?,
        depth: read_depth(&dir.join(DEPTH_FILE))?,
        label,
        view_angle,
    })
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir)
        .map_err(|e| Error::Ingestion(format!("{}: cannot list directory: {e}", dir.display())))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    let key = |p: &PathBuf| {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        (name.parse::<u64>().ok(), name)
    };
    // Integer names sort numerically and ahead of anything else.
    dirs.sort_by_key(|p| {
        let (num, name) = key(p);
        (num.is_none(), num, name)
    });
    Ok(dirs)
}

/// Decode a PNG into an `[H, W, 3]` tensor of 0..=255 values. Grayscale is
/// replicated over the three channels and alpha is dropped.
pub(crate) fn read_png_rgb(path: &Path) -> Result<Tensor> {
    let bad = |e: png::DecodingError| {
        Error::Ingestion(format!("{}: unreadable png: {e}", path.display()))
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Ingestion(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (h, w) = (info.height as usize, info.width as usize);
    let stride = info.line_size;
    let channels = info.color_type.samples();
    let mut data = Vec::with_capacity(h * w * 3);
    for row in buf.chunks(stride).take(h) {
        for px in row[..w * channels].chunks_exact(channels) {
            match channels {
                1 | 2 => data.extend([f64::from(px[0]); 3]),
                _ => data.extend(px[..3].iter().map(|&v| f64::from(v))),
            }
        }
    }
    Tensor::new(vec![h, w, 3], data)
}

pub(crate) fn read_depth(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = 2 * DEPTH_HEIGHT * DEPTH_WIDTH;
    if bytes.len() != expected {
        return Err(Error::Ingestion(format!(
            "{}: expected {expected} bytes of depth, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(2)
        .map(|b| f64::from(u16::from_le_bytes([b[0], b[1]])))
        .collect();
    Tensor::new(vec![DEPTH_HEIGHT, DEPTH_WIDTH], data)
}
