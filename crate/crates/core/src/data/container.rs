//! Binary container for one part of a preprocessed split.
//!
//! Layout, all little-endian: 16-byte magic, version byte, `u64` sample
//! count, then per sample a `u32` label, three 32x32 `f32` camera planes
//! (left, right, realsense) and 1024 `f32` depth values. Values are stored
//! as `f32`, so a write/read/write cycle is byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Modality, MultimodalSample, DEPTH_LEN, IMAGE_SIDE};
use crate::{Error, Result, Tensor};

pub const MAGIC: &[u8; 16] = b"MULTISENSE-SPLIT";
pub const VERSION: u8 = 1;

const PLANE: usize = IMAGE_SIDE * IMAGE_SIDE;

pub fn write_split_file(path: &Path, samples: &[MultimodalSample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_samples(&mut w, samples).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_samples(w: &mut impl Write, samples: &[MultimodalSample]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    for s in samples {
        let label = u32::try_from(s.label).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "label exceeds u32")
        })?;
        w.write_all(&label.to_le_bytes())?;
        for m in Modality::ALL {
            for &v in s.modality(m).data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Read a container written by [`write_split_file`]. Sample ids are file
/// positions.
pub fn read_split_file(path: &Path) -> Result<Vec<MultimodalSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 16];
    read_or_truncated(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{}: bad magic header", path.display())));
    }
    let mut version = [0u8; 1];
    read_or_truncated(&mut r, &mut version, path)?;
    if version[0] != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported container version {}",
            path.display(),
            version[0]
        )));
    }
    let mut count = [0u8; 8];
    read_or_truncated(&mut r, &mut count, path)?;
    let count = u64::from_le_bytes(count);

    let floats_per_sample = 3 * PLANE + DEPTH_LEN;
    let mut buf = vec![0u8; 4 + 4 * floats_per_sample];
    let mut samples = Vec::new();
    for id in 0..count {
        read_or_truncated(&mut r, &mut buf, path)?;
        let label = u32::from_le_bytes(buf[..4].try_into().expect("4 bytes")) as usize;
        let values: Vec<f64> = buf[4..]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect();
        let plane = |k: usize| {
            Tensor::new(vec![1, IMAGE_SIDE, IMAGE_SIDE], values[k * PLANE..(k + 1) * PLANE].to_vec())
        };
        samples.push(MultimodalSample {
            id: id as usize,
            cam_left: plane(0)?,
            cam_right: plane(1)?,
            cam_rs: plane(2)?,
            depth: Tensor::new(vec![DEPTH_LEN], values[3 * PLANE..].to_vec())?,
            label,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(Error::Format(format!(
            "{}: trailing bytes after {count} samples",
            path.display()
        )));
    }
    Ok(samples)
}

fn read_or_truncated(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::Format(format!("{}: truncated container", path.display()))
        }
        _ => Error::io(path, e),
    })
}
