//! Sample types, preprocessing, splitting, normalization and corruption.

mod container;
mod icub;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::optim::LabeledSet;
use crate::{Error, Result, Tensor};

pub use container::{read_split_file, write_split_file, MAGIC as CONTAINER_MAGIC, VERSION as CONTAINER_VERSION};
pub use icub::load_icub_dataset;
pub use synthetic::{generate_synthetic, SyntheticConfig, COMPLEMENTARY_DEPTH_CLASSES};

/// Side length of every preprocessed camera image.
pub const IMAGE_SIDE: usize = 32;
/// Length of the flattened depth vector.
pub const DEPTH_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;

/// One recorded view before preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    /// `[H, W, 3]`, channel values in 0..=255.
    pub rgb_left: Tensor,
    pub rgb_right: Tensor,
    pub rgb_realsense: Tensor,
    /// `[H, W]` in millimeters.
    pub depth: Tensor,
    pub label: usize,
    /// Turntable angle in degrees. Bookkeeping only.
    pub view_angle: f64,
}

/// One view after grayscale conversion and resizing.
///
/// Camera planes have shape `[1, 32, 32]`, the depth vector `[1024]`. Values
/// are raw (0..=255 and millimeters) until [`normalize`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub id: usize,
    pub cam_left: Tensor,
    pub cam_right: Tensor,
    pub cam_rs: Tensor,
    pub depth: Tensor,
    pub label: usize,
}

/// The four sensor streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    CamLeft,
    CamRight,
    CamRs,
    Depth,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::CamLeft,
        Modality::CamRight,
        Modality::CamRs,
        Modality::Depth,
    ];
    pub const CAMERAS: [Modality; 3] = [Modality::CamLeft, Modality::CamRight, Modality::CamRs];

    /// Entry-point name used by the model graphs.
    pub fn name(self) -> &'static str {
        match self {
            Modality::CamLeft => "cam_left",
            Modality::CamRight => "cam_right",
            Modality::CamRs => "cam_rs",
            Modality::Depth => "depth",
        }
    }

    pub fn is_camera(self) -> bool {
        self != Modality::Depth
    }

    /// Per-sample tensor shape.
    pub fn shape(self) -> Vec<usize> {
        if self.is_camera() {
            vec![1, IMAGE_SIDE, IMAGE_SIDE]
        } else {
            vec![DEPTH_LEN]
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown modality {s:?}")))
    }
}

impl MultimodalSample {
    pub fn modality(&self, m: Modality) -> &Tensor {
        match m {
            Modality::CamLeft => &self.cam_left,
            Modality::CamRight => &self.cam_right,
            Modality::CamRs => &self.cam_rs,
            Modality::Depth => &self.depth,
        }
    }

    pub fn modality_mut(&mut self, m: Modality) -> &mut Tensor {
        match m {
            Modality::CamLeft => &mut self.cam_left,
            Modality::CamRight => &mut self.cam_right,
            Modality::CamRs => &mut self.cam_rs,
            Modality::Depth => &mut self.depth,
        }
    }
}

/// Train/validation/test partition of preprocessed samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<MultimodalSample>,
    pub validation: Vec<MultimodalSample>,
    pub test: Vec<MultimodalSample>,
    pub seed: u64,
    /// Train-set depth range `(min, max)` once [`normalize`] has run.
    pub depth_range: Option<(f64, f64)>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_normalized(&self) -> bool {
        self.depth_range.is_some()
    }

    /// Fails if any sample id appears in more than one place.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(self.len());
        for (part, samples) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            for s in samples {
                if !seen.insert(s.id) {
                    return Err(Error::State(format!(
                        "sample {} occurs more than once (again in {part})",
                        s.id
                    )));
                }
            }
        }
        Ok(())
    }

    fn parts_mut(&mut self) -> [&mut Vec<MultimodalSample>; 3] {
        [&mut self.train, &mut self.validation, &mut self.test]
    }
}

/// ITU-R BT.601 luminance of an `[H, W, 3]` image. Not re-quantized.
pub fn grayscale(rgb: &Tensor) -> Result<Tensor> {
    let &[h, w, c] = rgb.shape() else {
        return Err(Error::Dimension(format!(
            "grayscale expects [H, W, 3], got {:?}",
            rgb.shape()
        )));
    };
    if c != 3 {
        return Err(Error::Dimension(format!(
            "grayscale expects 3 channels, got {c}"
        )));
    }
    let data = rgb
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    Tensor::new(vec![h, w], data)
}

/// Bilinear resize of an `[H, W]` plane with half-pixel centers
/// (`align_corners = false`). Source coordinates are clamped at the border.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let &[h, w] = x.shape() else {
        return Err(Error::Dimension(format!(
            "bilinear_resize expects [H, W], got {:?}",
            x.shape()
        )));
    };
    if h < 2 || w < 2 {
        return Err(Error::Dimension(format!(
            "bilinear_resize needs at least 2x2 input, got {h}x{w}"
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Dimension("bilinear_resize output must be non-empty".into()));
    }
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|j| source_coord(j, w, out_w)).collect();
    let src = x.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (y0, y1, fy) = source_coord(i, h, out_h);
        for &(x0, x1, fx) in &cols {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::new(vec![out_h, out_w], out)
}

fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let lo = (s.floor() as usize).min(src_len - 1);
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, s - lo as f64)
}

/// Grayscale and resize the three images, resize and flatten the depth map.
pub fn preprocess(raw: &RawSample, id: usize) -> Result<MultimodalSample> {
    let camera = |rgb: &Tensor| -> Result<Tensor> {
        bilinear_resize(&grayscale(rgb)?, IMAGE_SIDE, IMAGE_SIDE)?
            .into_reshaped(vec![1, IMAGE_SIDE, IMAGE_SIDE])
    };
    if raw.depth.data().iter().any(|&d| d < 0.0) {
        return Err(Error::Argument(format!("sample {id}: negative depth value")));
    }
    Ok(MultimodalSample {
        id,
        cam_left: camera(&raw.rgb_left)?,
        cam_right: camera(&raw.rgb_right)?,
        cam_rs: camera(&raw.rgb_realsense)?,
        depth: bilinear_resize(&raw.depth, IMAGE_SIDE, IMAGE_SIDE)?.into_reshaped(vec![DEPTH_LEN])?,
        label: raw.label,
    })
}

/// Preprocess a whole list; sample ids are list positions.
pub fn preprocess_all(raw: &[RawSample]) -> Result<Vec<MultimodalSample>> {
    raw.iter().enumerate().map(|(i, r)| preprocess(r, i)).collect()
}

/// Seeded shuffle of `0..n` cut into 50/25/25 index lists. Train and
/// validation sizes are floored; the remainder goes to test.
pub fn split_indices(n: usize, seed: u64) -> Result<[Vec<usize>; 3]> {
    if n < 4 {
        return Err(Error::Argument(format!(
            "need at least 4 samples to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n / 2;
    let n_val = n / 4;
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok([order, val, test])
}

/// Partition samples into train/validation/test.
pub fn split_dataset(samples: Vec<MultimodalSample>, seed: u64) -> Result<DatasetSplit> {
    let [train, val, test] = split_indices(samples.len(), seed)?;
    let mut slots: Vec<Option<MultimodalSample>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: Vec<usize>| -> Vec<MultimodalSample> {
        idx.into_iter()
            .map(|i| slots[i].take().expect("split indices are a permutation"))
            .collect()
    };
    Ok(DatasetSplit {
        train: take(train),
        validation: take(val),
        test: take(test),
        seed,
        depth_range: None,
    })
}

/// Scale images by 1/255 and depth by the train-set min-max, clamping
/// validation and test into `[0, 1]`.
///
/// A degenerate depth range maps every depth value to 0 and logs a warning.
pub fn normalize(mut split: DatasetSplit) -> Result<DatasetSplit> {
    if split.is_normalized() {
        return Err(Error::State("split is already normalized".into()));
    }
    if split.train.is_empty() {
        return Err(Error::Argument("cannot normalize with an empty train split".into()));
    }
    let (lo, hi) = split
        .train
        .iter()
        .flat_map(|s| s.depth.data())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
            (lo.min(d), hi.max(d))
        });
    let range = hi - lo;
    if range <= 0.0 {
        log::warn!("train depth range is degenerate ({lo}); depth normalized to 0");
    }
    for part in split.parts_mut() {
        for s in part.iter_mut() {
            for m in Modality::CAMERAS {
                s.modality_mut(m)
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = (*v / 255.0).clamp(0.0, 1.0));
            }
            s.depth.data_mut().iter_mut().for_each(|v| {
                *v = if range > 0.0 {
                    ((*v - lo) / range).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            });
        }
    }
    split.depth_range = Some((lo, hi));
    Ok(split)
}

/// Replace one modality in every part of the split with integer-uniform
/// noise in 0..=255.
///
/// On a raw split the noise is written as-is and [`normalize`] scales it
/// later. On a normalized split it is divided by 255, which is the min-max
/// mapping of the noise's own range for depth as well as the image scaling.
pub fn corrupt_modality(mut split: DatasetSplit, modality: Modality, seed: u64) -> DatasetSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = if split.is_normalized() { 1.0 / 255.0 } else { 1.0 };
    for part in split.parts_mut() {
        for s in part.iter_mut() {
            for v in s.modality_mut(modality).data_mut() {
                *v = f64::from(rng.random_range(0u8..=255)) * scale;
            }
        }
    }
    split
}

/// Stack the requested modalities of `samples` into a training set whose
/// entry names match the model graphs.
pub fn labeled_set(samples: &[MultimodalSample], modalities: &[Modality]) -> Result<LabeledSet> {
    if samples.is_empty() {
        return Err(Error::Argument("no samples to stack".into()));
    }
    let inputs = modalities
        .iter()
        .map(|&m| {
            let mut shape = vec![samples.len()];
            shape.extend(m.shape());
            let data = samples
                .iter()
                .flat_map(|s| s.modality(m).data().iter().copied())
                .collect();
            Ok((m.name().to_string(), Tensor::new(shape, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledSet::new(inputs, samples.iter().map(|s| s.label).collect())
}
