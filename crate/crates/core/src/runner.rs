//! Config-driven experiment runs: build the data, train the selected
//! models, and write metrics, confusion matrices, histories and checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data::{
    corrupt_modality, generate_synthetic, load_icub_dataset, normalize, preprocess_all, split_dataset,
    DatasetSplit, Modality, SyntheticConfig,
};
use crate::metrics::{export_heatmap, EvalReport};
use crate::models::{
    fuse_trained, run_intermediate_fusion_experiment, run_unimodal_experiment, ArchConfig, ModelId,
    TrainedModel, TrainingPlan,
};
use crate::optim::History;
use crate::{Error, Result};

/// Which experiments a run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selector {
    UnimodalLeft,
    UnimodalRight,
    UnimodalRs,
    UnimodalDepth,
    DecisionFusion,
    IntermediateFusion,
    All,
}

/// Modality replaced by uniform noise before training, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    #[default]
    None,
    CamLeft,
    CamRight,
    CamRs,
    Depth,
}

impl Corruption {
    pub fn modality(self) -> Option<Modality> {
        match self {
            Corruption::None => None,
            Corruption::CamLeft => Some(Modality::CamLeft),
            Corruption::CamRight => Some(Modality::CamRight),
            Corruption::CamRs => Some(Modality::CamRs),
            Corruption::Depth => Some(Modality::Depth),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    /// A recorded dataset tree; see [`load_icub_dataset`].
    Dataset {
        root: PathBuf,
        #[serde(default)]
        max_objects: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub experiments: Vec<Selector>,
    #[serde(default)]
    pub corrupt: Corruption,
    #[serde(default = "default_zoom")]
    pub heatmap_zoom: usize,
    pub data: DataSource,
    pub arch: ArchConfig,
    pub training: TrainingPlan,
}

fn default_zoom() -> usize {
    8
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            experiments: vec![Selector::All],
            corrupt: Corruption::None,
            heatmap_zoom: default_zoom(),
            data: DataSource::Synthetic(SyntheticConfig::complementary(10, 72)),
            arch: ArchConfig::desk(),
            training: TrainingPlan::desk(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.experiments.is_empty() {
            return bad("experiments: select at least one experiment".into());
        }
        if self.heatmap_zoom == 0 {
            return bad("heatmap_zoom: must be at least 1".into());
        }
        self.arch.validate().map_err(|e| Error::Config(format!("arch: {e}")))?;
        for (name, t) in [
            ("training.cnn", &self.training.cnn),
            ("training.mlp", &self.training.mlp),
            ("training.fusion", &self.training.fusion),
        ] {
            if t.batch_size == 0 {
                return bad(format!("{name}.batch_size: must be positive"));
            }
            if t.max_epochs == 0 {
                return bad(format!("{name}.max_epochs: must be positive"));
            }
            if !(t.min_delta.is_finite() && t.min_delta >= 0.0) {
                return bad(format!("{name}.min_delta: must be finite and >= 0"));
            }
        }
        if let DataSource::Synthetic(s) = &self.data {
            if s.n_classes < 2 {
                return bad("data.n_classes: need at least 2 classes".into());
            }
            if s.complementary && s.n_classes % 2 != 0 {
                return bad("data.n_classes: complementary mode needs an even class count".into());
            }
            if s.n_classes * s.views_per_class < 4 {
                return bad("data: fewer than 4 samples cannot be split".into());
            }
        }
        if self.arch.image_side != crate::data::IMAGE_SIDE || self.arch.depth_len != crate::data::DEPTH_LEN {
            return bad(format!(
                "arch: runs use {0}x{0} images and {1}-long depth vectors",
                crate::data::IMAGE_SIDE,
                crate::data::DEPTH_LEN
            ));
        }
        Ok(())
    }

    fn wants(&self, s: Selector) -> bool {
        self.experiments.contains(&Selector::All) || self.experiments.contains(&s)
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub heatmap_zoom: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out_dir {
            cfg.out_dir = o.clone();
        }
        if let Some(z) = self.heatmap_zoom {
            cfg.heatmap_zoom = z;
        }
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub model: ModelId,
    pub report: EvalReport,
    pub epochs_ran: usize,
}

pub const METRICS_HEADER: &str = "model,accuracy,precision_weighted,recall_weighted,f1_weighted,epochs_ran";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let m = &r.report;
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            r.model.name(),
            m.accuracy,
            m.precision_weighted,
            m.recall_weighted,
            m.f1_weighted,
            r.epochs_ran
        )
        .expect("writing to a String");
    }
    out
}

pub fn history_csv(h: &History) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for (i, (t, v)) in h.train_loss.iter().zip(&h.val_loss).enumerate() {
        writeln!(out, "{},{t},{v}", i + 1).expect("writing to a String");
    }
    out
}

/// Build the normalized split a config describes, along with its class count.
pub fn prepare_split(cfg: &ExperimentConfig) -> Result<(DatasetSplit, usize)> {
    let raw = match &cfg.data {
        DataSource::Synthetic(s) => generate_synthetic(s, cfg.seed)?,
        DataSource::Dataset { root, max_objects } => load_icub_dataset(root, *max_objects)?,
    };
    let n_classes = raw.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let mut split = split_dataset(preprocess_all(&raw)?, cfg.seed)?;
    if let Some(m) = cfg.corrupt.modality() {
        split = corrupt_modality(split, m, cfg.seed.wrapping_add(CORRUPTION_SEED_OFFSET));
    }
    Ok((normalize(split)?, n_classes))
}

const CORRUPTION_SEED_OFFSET: u64 = 7_919;

/// Train and evaluate everything the config selects. Returns the metrics
/// rows in the order they are written.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let (split, n_classes) = prepare_split(cfg)?;
    let arch = &cfg.arch;
    let plan = &cfg.training;

    let unimodal_selectors = [
        (Selector::UnimodalLeft, Modality::CamLeft),
        (Selector::UnimodalRight, Modality::CamRight),
        (Selector::UnimodalRs, Modality::CamRs),
        (Selector::UnimodalDepth, Modality::Depth),
    ];
    let decision = cfg.wants(Selector::DecisionFusion);
    let mut rows = Vec::new();
    let mut trained: Vec<TrainedModel> = Vec::new();
    for (sel, m) in unimodal_selectors {
        if decision || cfg.wants(sel) {
            log::info!("training {}", m.name());
            let model = run_unimodal_experiment(&split, m, arch, plan, n_classes, cfg.seed)?;
            log::info!("{}: accuracy {:.4}", m.name(), model.report.accuracy);
            if cfg.wants(sel) {
                rows.push(row_of(&model));
            }
            trained.push(model);
        }
    }

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    for model in &trained {
        write_model_artifacts(cfg, model)?;
    }

    if decision {
        let epochs_ran = trained.iter().map(|m| m.history.epochs()).sum();
        let outcome = fuse_trained(trained, n_classes)?;
        log::info!("decision fusion: accuracy {:.4}", outcome.fused.accuracy);
        write_confusion(cfg, ModelId::DecisionFusion, &outcome.fused)?;
        rows.push(MetricsRow {
            model: ModelId::DecisionFusion,
            report: outcome.fused,
            epochs_ran,
        });
    }
    if cfg.wants(Selector::IntermediateFusion) {
        log::info!("training intermediate fusion");
        let model = run_intermediate_fusion_experiment(&split, arch, plan, n_classes, cfg.seed)?;
        log::info!("intermediate fusion: accuracy {:.4}", model.report.accuracy);
        write_model_artifacts(cfg, &model)?;
        rows.push(row_of(&model));
    }

    let metrics = cfg.out_dir.join("metrics.csv");
    fs::write(&metrics, metrics_csv(&rows)).map_err(|e| Error::io(&metrics, e))?;
    let resolved = cfg.out_dir.join("config.toml");
    fs::write(&resolved, cfg.to_toml()).map_err(|e| Error::io(&resolved, e))?;
    Ok(rows)
}

fn row_of(model: &TrainedModel) -> MetricsRow {
    MetricsRow {
        model: model.id,
        report: model.report.clone(),
        epochs_ran: model.history.epochs(),
    }
}

fn write_model_artifacts(cfg: &ExperimentConfig, model: &TrainedModel) -> Result<()> {
    let name = model.id.name();
    write_confusion(cfg, model.id, &model.report)?;
    let history = cfg.out_dir.join(format!("{name}_history.csv"));
    fs::write(&history, history_csv(&model.history)).map_err(|e| Error::io(&history, e))?;
    save_checkpoint(&cfg.out_dir.join(format!("{name}.ckpt")), name, &model.graph, &model.history)
}

fn write_confusion(cfg: &ExperimentConfig, id: ModelId, report: &EvalReport) -> Result<()> {
    let stem = cfg.out_dir.join(format!("{}_confusion", id.name()));
    export_heatmap(&report.confusion, &stem, cfg.heatmap_zoom).map(|_| ())
}

/// Process exit code for an error: 2 for configuration problems, 3 for
/// diverged training, 4 for I/O and dataset ingestion, 1 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Training(_) => 3,
        Error::Io { .. } | Error::Ingestion(_) => 4,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert!(text.contains("source = \"synthetic\""));
    }

    #[test]
    fn dataset_source_parses() {
        let mut cfg = ExperimentConfig::default();
        cfg.data = DataSource::Dataset {
            root: PathBuf::from("/data/objects"),
            max_objects: Some(10),
        };
        cfg.corrupt = Corruption::CamLeft;
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_selector_and_fields_are_config_errors() {
        let text = ExperimentConfig::default().to_toml();
        let bad = text.replace("\"all\"", "\"everything\"");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("line"), "{err}");
        assert_eq!(exit_code(&err), 2);

        let unknown = format!("bogus = 1\n{text}");
        assert!(matches!(ExperimentConfig::from_toml(&unknown), Err(Error::Config(_))));

        let empty = text.replace("experiments = [\"all\"]", "experiments = []");
        assert!(matches!(ExperimentConfig::from_toml(&empty), Err(Error::Config(_))));
    }

    #[test]
    fn metrics_csv_shape() {
        let report = EvalReport::from_predictions(&[0, 1], &[0, 0], 2).unwrap();
        let csv = metrics_csv(&[MetricsRow {
            model: ModelId::CamRs,
            report,
            epochs_ran: 3,
        }]);
        assert_eq!(csv, format!("{METRICS_HEADER}\ncam_rs,0.500000,0.250000,0.500000,0.333333,3\n"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Training("nan".into())), 3);
        assert_eq!(exit_code(&Error::io("x", std::io::Error::other("boom"))), 4);
        assert_eq!(exit_code(&Error::Ingestion("missing".into())), 4);
        assert_eq!(exit_code(&Error::Dimension("d".into())), 1);
    }
}
