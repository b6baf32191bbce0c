//! Score predictions and export the confusion matrix as CSV and a PGM
//! heatmap.
//!
//!     cargo run --release --example metrics_heatmap -- [out_dir]

use std::path::PathBuf;

use multisense::metrics::*;

fn main() -> multisense::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let actual = [0, 0, 0, 1, 1, 1, 2, 2, 2, 2];
    let predicted = [0, 0, 1, 1, 1, 2, 2, 2, 2, 0];
    let report = EvalReport::from_predictions(&actual, &predicted, 3)?;
    print!("{}", report.confusion.to_csv());
    println!(
        "accuracy {:.3}, weighted precision {:.3}, recall {:.3}, F1 {:.3}",
        report.accuracy, report.precision_weighted, report.recall_weighted, report.f1_weighted
    );
    let (csv, pgm) = export_heatmap(&report.confusion, &out.join("example_confusion"), 16)?;
    println!("wrote {} and {}", csv.display(), pgm.display());
    Ok(())
}
