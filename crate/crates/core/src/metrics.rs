//! Confusion matrices, accuracy and support-weighted precision/recall/F1.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{Error, Result};

/// Counts with rows indexed by the actual class and columns by the
/// predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            n_classes: n,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.n_classes + predicted]
    }

    pub fn row(&self, actual: usize) -> &[u64] {
        &self.counts[actual * self.n_classes..(actual + 1) * self.n_classes]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.get(i, i)).sum()
    }

    fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.n_classes).map(|i| self.get(i, predicted)).sum()
    }

    /// Exact counts as CSV with header `actual\predicted,0,1,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("actual\\predicted");
        for j in 0..self.n_classes {
            write!(out, ",{j}").expect("writing to a String");
        }
        out.push('\n');
        for i in 0..self.n_classes {
            write!(out, "{i}").expect("writing to a String");
            for &c in self.row(i) {
                write!(out, ",{c}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format(format!("confusion csv: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty input".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("actual\\predicted") {
            return Err(bad("missing actual\\predicted header".into()));
        }
        let n = cols.count();
        let mut rows = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let mut cells = line.split(',');
            if cells.next() != Some(i.to_string().as_str()) {
                return Err(bad(format!("row {i} has the wrong index")));
            }
            let row = cells
                .map(|c| c.trim().parse::<u64>().map_err(|e| bad(format!("row {i}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != n {
                return Err(bad(format!("row {i} has {} cells, expected {n}", row.len())));
            }
            rows.push(row);
        }
        if rows.len() != n {
            return Err(bad(format!("{} rows for {n} columns", rows.len())));
        }
        Self::from_rows(&rows)
    }

    /// Binary P5 graymap, one `zoom`x`zoom` block per cell. Each row is
    /// scaled by its own maximum; larger counts are darker and all-zero rows
    /// are white.
    pub fn to_pgm(&self, zoom: usize) -> Result<Vec<u8>> {
        if zoom == 0 {
            return Err(Error::Argument("heatmap zoom must be at least 1".into()));
        }
        let side = self.n_classes * zoom;
        let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
        for i in 0..self.n_classes {
            let row = self.row(i);
            let max = row.iter().copied().max().unwrap_or(0);
            let shades: Vec<u8> = row
                .iter()
                .map(|&c| {
                    if max == 0 {
                        255
                    } else {
                        (255.0 * (1.0 - c as f64 / max as f64)).round() as u8
                    }
                })
                .collect();
            for _ in 0..zoom {
                for &s in &shades {
                    out.extend(std::iter::repeat_n(s, zoom));
                }
            }
        }
        Ok(out)
    }
}

/// Tally `actual` against `predicted` over `n_classes` classes.
pub fn confusion(actual: &[usize], predicted: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::Dimension(format!(
            "{} actual labels vs {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (&a, &p) in actual.iter().zip(predicted) {
        if a >= n_classes || p >= n_classes {
            return Err(Error::Argument(format!(
                "label pair ({a}, {p}) out of range for {n_classes} classes"
            )));
        }
        cm.counts[a * n_classes + p] += 1;
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("accuracy of an empty confusion matrix".into()));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Per-class precision, recall and F1 averaged with true-class support
/// weights. Undefined per-class values count as 0.
pub fn weighted_prf(cm: &ConfusionMatrix) -> Result<(f64, f64, f64)> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("metrics of an empty confusion matrix".into()));
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    // Sums are weighted by raw support and divided by the total once. The
    // weighted recall terms support * tp / support are just tp, so recall is
    // summed in integers and comes out bit-identical to accuracy.
    let (mut p, mut tp_sum, mut f) = (0.0, 0u64, 0.0);
    for k in 0..cm.n_classes {
        let support: u64 = cm.row(k).iter().sum();
        let tp = cm.get(k, k);
        let pk = ratio(tp, cm.col_sum(k));
        let rk = ratio(tp, support);
        let fk = if pk + rk == 0.0 { 0.0 } else { 2.0 * pk * rk / (pk + rk) };
        p += support as f64 * pk;
        tp_sum += tp;
        f += support as f64 * fk;
    }
    let t = total as f64;
    Ok((p / t, tp_sum as f64 / t, f / t))
}

/// Scores of one evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(skip)]
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
}

impl EvalReport {
    pub fn from_predictions(actual: &[usize], predicted: &[usize], n_classes: usize) -> Result<Self> {
        Self::from_confusion(confusion(actual, predicted, n_classes)?)
    }

    pub fn from_confusion(cm: ConfusionMatrix) -> Result<Self> {
        let accuracy = accuracy(&cm)?;
        let (precision_weighted, recall_weighted, f1_weighted) = weighted_prf(&cm)?;
        Ok(EvalReport {
            confusion: cm,
            accuracy,
            precision_weighted,
            recall_weighted,
            f1_weighted,
        })
    }
}

/// Write `<stem>.csv` with exact counts and `<stem>.pgm` with the heatmap.
/// Returns both paths.
pub fn export_heatmap(cm: &ConfusionMatrix, stem: &Path, zoom: usize) -> Result<(PathBuf, PathBuf)> {
    let csv = stem.with_extension("csv");
    let pgm = stem.with_extension("pgm");
    let image = cm.to_pgm(zoom)?;
    fs::write(&csv, cm.to_csv()).map_err(|e| Error::io(&csv, e))?;
    fs::write(&pgm, image).map_err(|e| Error::io(&pgm, e))?;
    Ok((csv, pgm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_tally() {
        let cm = confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm, ConfusionMatrix::from_rows(&[vec![1, 1], vec![0, 1]]).unwrap());
        assert!((accuracy(&cm).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(confusion(&[], &[], 3).unwrap().total(), 0);
        assert!(matches!(confusion(&[2], &[0], 2), Err(Error::Argument(_))));
        assert!(matches!(accuracy(&ConfusionMatrix::zeros(2)), Err(Error::Argument(_))));
    }

    #[test]
    fn perfect_predictions() {
        let a = [0, 1, 2, 2, 1];
        let cm = confusion(&a, &a, 3).unwrap();
        assert_eq!(cm.trace(), cm.total());
        assert_eq!(weighted_prf(&cm).unwrap(), (1.0, 1.0, 1.0));
    }

    #[test]
    fn single_class_f1() {
        // Class 0: 1 true positive, 1 false positive from class 1, no misses.
        let cm = ConfusionMatrix::from_rows(&[vec![1, 0], vec![1, 0]]).unwrap();
        let (p, r, f) = weighted_prf(&cm).unwrap();
        // class 0: p = 0.5, r = 1, f = 2/3; class 1: all zero; weights 1/2 each.
        assert!((p - 0.25).abs() < 1e-15);
        assert!((r - 0.5).abs() < 1e-15);
        assert!((f - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 0, 1], vec![0, 0, 0], vec![2, 5, 7]]).unwrap();
        let csv = cm.to_csv();
        assert!(csv.starts_with("actual\\predicted,0,1,2\n0,3,0,1\n"));
        assert_eq!(ConfusionMatrix::from_csv(&csv).unwrap(), cm);
        assert!(ConfusionMatrix::from_csv("0,1\n").is_err());
    }

    #[test]
    fn heatmap_identity_and_zero_row() {
        let cm = ConfusionMatrix::from_rows(&[vec![4, 0], vec![0, 0]]).unwrap();
        let img = cm.to_pgm(2).unwrap();
        let header = b"P5\n4 4\n255\n";
        assert_eq!(&img[..header.len()], header);
        let px = &img[header.len()..];
        assert_eq!(px, &[0, 0, 255, 255, 0, 0, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255]);
        assert!(cm.to_pgm(0).is_err());
    }

    #[test]
    fn export_writes_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let cm = ConfusionMatrix::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        let (csv, pgm) = export_heatmap(&cm, &dir.path().join("cm"), 3).unwrap();
        let back = ConfusionMatrix::from_csv(&fs::read_to_string(csv).unwrap()).unwrap();
        assert_eq!(back, cm);
        assert_eq!(fs::read(pgm).unwrap().len(), b"P5\n6 6\n255\n".len() + 36);
        let missing = dir.path().join("no/such/dir/cm");
        assert!(matches!(export_heatmap(&cm, &missing, 1), Err(Error::Io { .. })));
    }
}
