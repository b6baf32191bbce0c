//! Trained-parameter files.
//!
//! Layout, all little-endian: 16-byte magic, version byte, `u64`
//! architecture fingerprint, model name (`u16` length + UTF-8), training
//! history (`u32` epoch count, train losses, validation losses as `f64`,
//! one stopped-early byte), `u64` parameter count, then the parameters as
//! `f64` in [`Graph::parameters`] order.

use std::fs;
use std::path::Path;

use crate::graph::Graph;
use crate::optim::History;
use crate::{Error, Result};

pub const MAGIC: &[u8; 16] = b"MULTISENSE-CKPT\0";
pub const VERSION: u8 = 1;

/// 64-bit FNV-1a hash of the graph's layer kinds, wiring and shapes.
pub fn fingerprint(graph: &Graph) -> u64 {
    fnv1a(graph.describe().as_bytes())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Contents of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub fingerprint: u64,
    pub history: History,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_graph(model: &str, graph: &Graph, history: &History) -> Self {
        Checkpoint {
            model: model.to_string(),
            fingerprint: fingerprint(graph),
            history: history.clone(),
            params: graph.flat_parameters(),
        }
    }

    /// Copy the stored parameters into `graph`, which must have the
    /// architecture the checkpoint was taken from.
    pub fn restore_into(&self, graph: &mut Graph) -> Result<()> {
        let expected = fingerprint(graph);
        if expected != self.fingerprint {
            return Err(Error::Incompatible(format!(
                "checkpoint of {} has fingerprint {:016x}, graph has {expected:016x}",
                self.model, self.fingerprint
            )));
        }
        graph.set_flat_parameters(&self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.history;
        let mut out = Vec::with_capacity(64 + 8 * (self.params.len() + 2 * h.epochs()));
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend(self.fingerprint.to_le_bytes());
        let name = self.model.as_bytes();
        out.extend((name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend((h.train_loss.len() as u32).to_le_bytes());
        for v in h.train_loss.iter().chain(&h.val_loss) {
            out.extend(v.to_le_bytes());
        }
        out.push(u8::from(h.stopped_early));
        out.extend((self.params.len() as u64).to_le_bytes());
        for v in &self.params {
            out.extend(v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(16)? != MAGIC {
            return Err(Error::Format("not a checkpoint: bad magic header".into()));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let fingerprint = r.u64()?;
        let name_len = u16::from_le_bytes(r.array()?) as usize;
        let model = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("model name is not UTF-8".into()))?;
        let epochs = u32::from_le_bytes(r.array()?) as usize;
        let train_loss = r.f64s(epochs)?;
        let val_loss = r.f64s(epochs)?;
        let stopped_early = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("bad stopped-early flag {b}"))),
        };
        let n = usize::try_from(r.u64()?).map_err(|_| Error::Format("parameter count overflows".into()))?;
        let params = r.f64s(n)?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after parameters",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            model,
            fingerprint,
            history: History {
                train_loss,
                val_loss,
                stopped_early,
            },
            params,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("take returns N bytes"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn save_checkpoint(path: &Path, model: &str, graph: &Graph, history: &History) -> Result<()> {
    let bytes = Checkpoint::from_graph(model, graph, history).to_bytes();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_cnn_stream, build_depth_mlp, predict_proba, ArchConfig};
    use crate::Tensor;
    use std::collections::HashMap;

    fn history() -> History {
        History {
            train_loss: vec![2.0, 1.5],
            val_loss: vec![2.1, 1.7],
            stopped_early: true,
        }
    }

    #[test]
    fn round_trip_restores_identical_predictions() {
        let arch = ArchConfig::tiny();
        let trained = build_cnn_stream(&arch, 3, "cam_left", 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, "cam_left", &trained, &history()).unwrap();

        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.model, "cam_left");
        assert_eq!(ck.history, history());
        let mut fresh = build_cnn_stream(&arch, 3, "cam_left", 99).unwrap();
        ck.restore_into(&mut fresh).unwrap();

        let x = Tensor::new(vec![2, 1, 8, 8], (0..128).map(|i| (i as f64 * 0.1).cos()).collect()).unwrap();
        let inputs = HashMap::from([("cam_left".to_string(), x)]);
        let a = predict_proba(&trained, &inputs).unwrap();
        let b = predict_proba(&fresh, &inputs).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn wrong_architecture_is_rejected() {
        let arch = ArchConfig::tiny();
        let cnn = build_cnn_stream(&arch, 3, "cam_left", 1).unwrap();
        let ck = Checkpoint::from_graph("cam_left", &cnn, &History::default());
        let mut mlp = build_depth_mlp(&arch, 3, 1).unwrap();
        assert!(matches!(ck.restore_into(&mut mlp), Err(Error::Incompatible(_))));
        let mut other_classes = build_cnn_stream(&arch, 4, "cam_left", 1).unwrap();
        assert!(matches!(ck.restore_into(&mut other_classes), Err(Error::Incompatible(_))));
    }

    #[test]
    fn damaged_files_are_format_errors() {
        let cnn = build_cnn_stream(&ArchConfig::tiny(), 3, "cam_rs", 0).unwrap();
        let bytes = Checkpoint::from_graph("cam_rs", &cnn, &history()).to_bytes();
        for cut in [0, 5, 17, 30, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[3] = b'x';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x8594_4171_f739_67e8);
    }
}
