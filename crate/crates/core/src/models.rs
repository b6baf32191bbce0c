//! Camera CNN streams, the depth MLP, decision-level fusion and the jointly
//! trained intermediate-representation fusion graph.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{labeled_set, DatasetSplit, Modality, DEPTH_LEN, IMAGE_SIDE};
use crate::graph::{Graph, GraphBuilder, NodeId};
use crate::layers::softmax;
use crate::metrics::EvalReport;
use crate::optim::{predict_logits, train, History, LabeledSet, TrainConfig};
use crate::tensor::argmax;
use crate::{Error, Result, Tensor};

/// Layer widths shared by every builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Filters of the three conv blocks.
    pub conv_filters: [usize; 3],
    /// Width of the CNN representation layer.
    pub cnn_hidden: usize,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    /// Width of the dense layer after the joint concatenation.
    pub fusion_hidden: usize,
    /// Side of the square camera input; must be divisible by 8.
    pub image_side: usize,
    pub depth_len: usize,
}

impl ArchConfig {
    /// Conv 32/64/64, dense 128, MLP 3x256, joint dense 128 on 32x32 / 1024 inputs.
    pub fn full() -> Self {
        ArchConfig {
            conv_filters: [32, 64, 64],
            cnn_hidden: 128,
            mlp_hidden: 256,
            mlp_layers: 3,
            fusion_hidden: 128,
            image_side: IMAGE_SIDE,
            depth_len: DEPTH_LEN,
        }
    }

    /// Same topology with the camera widths cut to a quarter, cheap enough to
    /// train every model on one CPU core in minutes. The MLP and the fusion
    /// head keep their full width: both are cheap, and narrow versions can
    /// lose every ReLU unit within a few epochs, the MLP on the
    /// mostly-background depth vectors and the head on the depth branch's
    /// comparatively large activations.
    pub fn desk() -> Self {
        ArchConfig {
            conv_filters: [8, 16, 16],
            cnn_hidden: 32,
            mlp_hidden: 256,
            mlp_layers: 3,
            fusion_hidden: 128,
            image_side: IMAGE_SIDE,
            depth_len: DEPTH_LEN,
        }
    }

    /// Very small shapes (8x8 images, 16-long depth) for gradient checks.
    pub fn tiny() -> Self {
        ArchConfig {
            conv_filters: [2, 3, 2],
            cnn_hidden: 4,
            mlp_hidden: 5,
            mlp_layers: 3,
            fusion_hidden: 6,
            image_side: 8,
            depth_len: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_side == 0 || self.image_side % 8 != 0 {
            return Err(Error::Argument(format!(
                "image side {} must be a positive multiple of 8",
                self.image_side
            )));
        }
        let widths = [
            self.cnn_hidden,
            self.mlp_hidden,
            self.mlp_layers,
            self.fusion_hidden,
            self.depth_len,
        ];
        if self.conv_filters.contains(&0) || widths.contains(&0) {
            return Err(Error::Argument("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Flattened width after the three conv blocks.
    pub fn flatten_width(&self) -> usize {
        let side = self.image_side / 8;
        self.conv_filters[2] * side * side
    }

    /// Per-sample input shape of a modality.
    pub fn input_shape(&self, m: Modality) -> Vec<usize> {
        if m.is_camera() {
            vec![1, self.image_side, self.image_side]
        } else {
            vec![self.depth_len]
        }
    }
}

/// Label of the representation node of the trunk fed by `entry`.
pub fn repr_label(entry: &str) -> String {
    format!("{entry}/repr")
}

/// Label of the classification head of the trunk fed by `entry`.
pub fn logits_label(entry: &str) -> String {
    format!("{entry}/logits")
}

fn check_classes(n_classes: usize) -> Result<()> {
    if n_classes < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    Ok(())
}

/// Adds `input -> 3 x [conv, relu, pool] -> flatten -> dense + relu` and
/// returns the representation node.
pub fn cnn_trunk(b: &mut GraphBuilder, arch: &ArchConfig, entry: &str, rng: &mut ChaCha8Rng) -> Result<NodeId> {
    let mut x = b.input(entry, &arch.input_shape(Modality::CamLeft))?;
    for (i, &filters) in arch.conv_filters.iter().enumerate() {
        let k = i + 1;
        x = b.conv2d(&format!("{entry}/conv{k}"), x, filters, rng)?;
        x = b.relu(&format!("{entry}/conv{k}_relu"), x)?;
        x = b.maxpool(&format!("{entry}/pool{k}"), x)?;
    }
    x = b.flatten(&format!("{entry}/flatten"), x)?;
    x = b.dense(&format!("{entry}/dense"), x, arch.cnn_hidden, rng)?;
    b.relu(&repr_label(entry), x)
}

/// Adds `input -> mlp_layers x (dense + relu)` and returns the last hidden
/// activation.
pub fn mlp_trunk(b: &mut GraphBuilder, arch: &ArchConfig, entry: &str, rng: &mut ChaCha8Rng) -> Result<NodeId> {
    let mut x = b.input(entry, &[arch.depth_len])?;
    for k in 1..=arch.mlp_layers {
        x = b.dense(&format!("{entry}/hidden{k}"), x, arch.mlp_hidden, rng)?;
        let label = if k == arch.mlp_layers {
            repr_label(entry)
        } else {
            format!("{entry}/hidden{k}_relu")
        };
        x = b.relu(&label, x)?;
    }
    Ok(x)
}

/// Camera CNN reading the entry point named `entry`. Outputs logits.
pub fn build_cnn_stream(arch: &ArchConfig, n_classes: usize, entry: &str, seed: u64) -> Result<Graph> {
    arch.validate()?;
    check_classes(n_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    let repr = cnn_trunk(&mut b, arch, entry, &mut rng)?;
    let head = b.dense(&logits_label(entry), repr, n_classes, &mut rng)?;
    b.build(head)
}

/// Depth MLP reading the `depth` entry point. Outputs logits.
pub fn build_depth_mlp(arch: &ArchConfig, n_classes: usize, seed: u64) -> Result<Graph> {
    arch.validate()?;
    check_classes(n_classes)?;
    let entry = Modality::Depth.name();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    let repr = mlp_trunk(&mut b, arch, entry, &mut rng)?;
    let head = b.dense(&logits_label(entry), repr, n_classes, &mut rng)?;
    b.build(head)
}

/// Unimodal model for one modality.
pub fn build_unimodal(arch: &ArchConfig, n_classes: usize, modality: Modality, seed: u64) -> Result<Graph> {
    if modality.is_camera() {
        build_cnn_stream(arch, n_classes, modality.name(), seed)
    } else {
        build_depth_mlp(arch, n_classes, seed)
    }
}

/// Initialization seeds of the four fusion trunks (in [`Modality::ALL`]
/// order) and of the fusion head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionSeeds {
    pub trunks: [u64; 4],
    pub head: u64,
}

impl FusionSeeds {
    pub fn from_seed(seed: u64) -> Self {
        FusionSeeds {
            trunks: [0, 1, 2, 3].map(|k| seed.wrapping_add(k)),
            head: seed.wrapping_add(4),
        }
    }
}

/// Three camera trunks and the depth trunk, joined as
/// `concat(concat(cam reprs), depth repr) -> dense + relu -> logits`.
pub fn build_intermediate_fusion(arch: &ArchConfig, n_classes: usize, seed: u64) -> Result<Graph> {
    build_intermediate_fusion_seeded(arch, n_classes, FusionSeeds::from_seed(seed))
}

pub fn build_intermediate_fusion_seeded(arch: &ArchConfig, n_classes: usize, seeds: FusionSeeds) -> Result<Graph> {
    arch.validate()?;
    check_classes(n_classes)?;
    let mut b = GraphBuilder::new();
    let mut cams = Vec::with_capacity(3);
    for (m, &s) in Modality::CAMERAS.iter().zip(&seeds.trunks) {
        cams.push(cnn_trunk(&mut b, arch, m.name(), &mut ChaCha8Rng::seed_from_u64(s))?);
    }
    let depth = mlp_trunk(
        &mut b,
        arch,
        Modality::Depth.name(),
        &mut ChaCha8Rng::seed_from_u64(seeds.trunks[3]),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.head);
    let shared = b.concat("shared", &cams)?;
    let joint = b.concat("joint", &[shared, depth])?;
    let hidden = b.dense("fusion/dense", joint, arch.fusion_hidden, &mut rng)?;
    let hidden = b.relu("fusion/repr", hidden)?;
    let head = b.dense("fusion/logits", hidden, n_classes, &mut rng)?;
    b.build(head)
}

/// Softmax of the model output, one row per input row.
pub fn predict_proba(graph: &Graph, inputs: &HashMap<String, Tensor>) -> Result<Tensor> {
    softmax(&graph.infer(inputs)?)
}

/// Softmax probabilities for every row of a set.
pub fn predict_proba_set(graph: &Graph, set: &LabeledSet) -> Result<Tensor> {
    softmax(&predict_logits(graph, set)?)
}

/// Sum the decision vectors and take the argmax (lowest index on ties).
/// Returns the raw sum.
pub fn decision_fusion(probas: &[Tensor]) -> Result<(Tensor, usize)> {
    let (sum, classes) = fuse_rows(probas)?;
    if sum.shape()[0] != 1 {
        return Err(Error::Dimension(format!(
            "decision_fusion takes single decision vectors, got {} rows",
            sum.shape()[0]
        )));
    }
    Ok((sum, classes[0]))
}

/// Row-wise [`decision_fusion`] over `[N, C]` probability tensors.
pub fn fuse_rows(probas: &[Tensor]) -> Result<(Tensor, Vec<usize>)> {
    let first = probas
        .first()
        .ok_or_else(|| Error::Argument("no decision vectors to fuse".into()))?;
    let shape = match first.shape() {
        [c] => vec![1, *c],
        s => s.to_vec(),
    };
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "decision vectors must be [C] or [N, C], got {:?}",
            first.shape()
        )));
    }
    let mut sum = vec![0.0; shape[0] * shape[1]];
    for p in probas {
        if p.len() != sum.len() || (p.rank() == 2 && p.shape() != shape.as_slice()) {
            return Err(Error::Dimension(format!(
                "decision vector shape {:?} does not match {:?}",
                p.shape(),
                shape
            )));
        }
        sum.iter_mut().zip(p.data()).for_each(|(s, v)| *s += v);
    }
    let classes = sum
        .chunks(shape[1])
        .map(argmax)
        .collect::<Result<Vec<_>>>()?;
    Ok((Tensor::new(shape, sum)?, classes))
}

/// Train settings for each model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingPlan {
    pub cnn: TrainConfig,
    pub mlp: TrainConfig,
    pub fusion: TrainConfig,
}

impl TrainingPlan {
    /// Batch 64, 600 epochs, patience 20 for CNNs and 150 for the MLP and fusion.
    pub fn full() -> Self {
        TrainingPlan {
            cnn: TrainConfig::cnn(),
            mlp: TrainConfig::mlp(),
            fusion: TrainConfig::fusion(),
        }
    }

    /// Batch 8 for the smaller synthetic training sets. The joint graph
    /// stops with the CNN patience of 20: it converges in tens of epochs and
    /// a patience of 150 would dominate the run time.
    pub fn desk() -> Self {
        let mut plan = Self::full();
        for cfg in [&mut plan.cnn, &mut plan.mlp, &mut plan.fusion] {
            cfg.batch_size = 8;
        }
        plan.fusion.patience = plan.cnn.patience;
        plan
    }

    fn for_modality(&self, m: Modality) -> &TrainConfig {
        if m.is_camera() {
            &self.cnn
        } else {
            &self.mlp
        }
    }
}

/// Fixed offsets from the run seed to each model's initialization and
/// shuffling seeds.
pub fn model_seed(run_seed: u64, model: ModelId) -> u64 {
    run_seed.wrapping_mul(1_000).wrapping_add(model.offset())
}

/// The six models of a full run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    CamLeft,
    CamRight,
    CamRs,
    Depth,
    DecisionFusion,
    IntermediateFusion,
}

impl ModelId {
    pub const ALL: [ModelId; 6] = [
        ModelId::CamLeft,
        ModelId::CamRight,
        ModelId::CamRs,
        ModelId::Depth,
        ModelId::DecisionFusion,
        ModelId::IntermediateFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::CamLeft => "cam_left",
            ModelId::CamRight => "cam_right",
            ModelId::CamRs => "cam_rs",
            ModelId::Depth => "depth",
            ModelId::DecisionFusion => "decision_fusion",
            ModelId::IntermediateFusion => "intermediate_fusion",
        }
    }

    pub fn from_modality(m: Modality) -> Self {
        match m {
            Modality::CamLeft => ModelId::CamLeft,
            Modality::CamRight => ModelId::CamRight,
            Modality::CamRs => ModelId::CamRs,
            Modality::Depth => ModelId::Depth,
        }
    }

    fn offset(self) -> u64 {
        match self {
            ModelId::CamLeft => 11,
            ModelId::CamRight => 23,
            ModelId::CamRs => 37,
            ModelId::Depth => 41,
            ModelId::DecisionFusion => 53,
            ModelId::IntermediateFusion => 67,
        }
    }
}

/// A trained model with its test-set results.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub id: ModelId,
    pub graph: Graph,
    pub history: History,
    pub report: EvalReport,
    /// Test-set probabilities, `[N_test, C]`.
    pub test_proba: Tensor,
    pub test_labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DecisionFusionOutcome {
    /// One model per modality, in [`Modality::ALL`] order.
    pub unimodal: Vec<TrainedModel>,
    pub fused: EvalReport,
}

fn prepared_sets(split: &DatasetSplit, modalities: &[Modality]) -> Result<[LabeledSet; 3]> {
    if !split.is_normalized() {
        return Err(Error::State("experiments need a normalized split".into()));
    }
    split.check_disjoint()?;
    Ok([
        labeled_set(&split.train, modalities)?,
        labeled_set(&split.validation, modalities)?,
        labeled_set(&split.test, modalities)?,
    ])
}

fn fit_and_test(
    id: ModelId,
    mut graph: Graph,
    sets: &[LabeledSet; 3],
    cfg: &TrainConfig,
    n_classes: usize,
) -> Result<TrainedModel> {
    let [train_set, val_set, test_set] = sets;
    let history = train(&mut graph, train_set, val_set, cfg)?;
    let test_proba = predict_proba_set(&graph, test_set)?;
    let predicted = test_proba
        .data()
        .chunks(n_classes)
        .map(argmax)
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::from_predictions(test_set.labels(), &predicted, n_classes)?;
    Ok(TrainedModel {
        id,
        graph,
        history,
        report,
        test_proba,
        test_labels: test_set.labels().to_vec(),
    })
}

/// Train the model of one modality on its own and score it on the test split.
pub fn run_unimodal_experiment(
    split: &DatasetSplit,
    modality: Modality,
    arch: &ArchConfig,
    plan: &TrainingPlan,
    n_classes: usize,
    run_seed: u64,
) -> Result<TrainedModel> {
    let sets = prepared_sets(split, &[modality])?;
    let id = ModelId::from_modality(modality);
    let seed = model_seed(run_seed, id);
    let graph = build_unimodal(arch, n_classes, modality, seed)?;
    let cfg = plan.for_modality(modality).clone().with_seed(seed);
    fit_and_test(id, graph, &sets, &cfg, n_classes)
}

/// Train the four unimodal models independently and fuse their test-set
/// decision vectors by summation.
pub fn run_decision_fusion_experiment(
    split: &DatasetSplit,
    arch: &ArchConfig,
    plan: &TrainingPlan,
    n_classes: usize,
    run_seed: u64,
) -> Result<DecisionFusionOutcome> {
    let unimodal = Modality::ALL
        .iter()
        .map(|&m| run_unimodal_experiment(split, m, arch, plan, n_classes, run_seed))
        .collect::<Result<Vec<_>>>()?;
    fuse_trained(unimodal, n_classes)
}

/// Decision fusion over already trained unimodal models.
pub fn fuse_trained(unimodal: Vec<TrainedModel>, n_classes: usize) -> Result<DecisionFusionOutcome> {
    let probas: Vec<Tensor> = unimodal.iter().map(|m| m.test_proba.clone()).collect();
    let (_, predicted) = fuse_rows(&probas)?;
    let actual = &unimodal
        .first()
        .ok_or_else(|| Error::Argument("no models to fuse".into()))?
        .test_labels;
    if unimodal.iter().any(|m| &m.test_labels != actual) {
        return Err(Error::Argument("models were scored on different test sets".into()));
    }
    let fused = EvalReport::from_predictions(actual, &predicted, n_classes)?;
    Ok(DecisionFusionOutcome { unimodal, fused })
}

/// Build the fusion graph and train all of it jointly under one optimizer.
pub fn run_intermediate_fusion_experiment(
    split: &DatasetSplit,
    arch: &ArchConfig,
    plan: &TrainingPlan,
    n_classes: usize,
    run_seed: u64,
) -> Result<TrainedModel> {
    let sets = prepared_sets(split, &Modality::ALL)?;
    let seed = model_seed(run_seed, ModelId::IntermediateFusion);
    let graph = build_intermediate_fusion(arch, n_classes, seed)?;
    let cfg = plan.fusion.clone().with_seed(seed);
    fit_and_test(ModelId::IntermediateFusion, graph, &sets, &cfg, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Dense;
    use crate::graph::Layer;
    use rand::Rng;

    fn one(name: &str, t: Tensor) -> HashMap<String, Tensor> {
        HashMap::from([(name.to_string(), t)])
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn fusion_inputs(arch: &ArchConfig, rows: usize, seed: u64) -> HashMap<String, Tensor> {
        Modality::ALL
            .iter()
            .map(|&m| {
                let mut shape = vec![rows];
                shape.extend(arch.input_shape(m));
                (m.name().to_string(), random(&shape, seed + m as u64))
            })
            .collect()
    }

    #[test]
    fn cnn_stream_outputs_probabilities() {
        let arch = ArchConfig::full();
        let g = build_cnn_stream(&arch, 10, "cam_left", 1).unwrap();
        assert_eq!(arch.flatten_width(), 1024);
        let p = predict_proba(&g, &one("cam_left", random(&[2, 1, 32, 32], 3))).unwrap();
        assert_eq!(p.shape(), &[2, 10]);
        for row in p.data().chunks(10) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let again = predict_proba(&g, &one("cam_left", random(&[2, 1, 32, 32], 3))).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn depth_mlp_on_zero_vector() {
        let g = build_depth_mlp(&ArchConfig::full(), 100, 0).unwrap();
        let p = predict_proba(&g, &one("depth", Tensor::zeros(&[1, 1024]))).unwrap();
        assert_eq!(p.shape(), &[1, 100]);
        assert!((p.sum() - 1.0).abs() < 1e-12);
        // He init with zero biases: every layer maps zero to zero.
        assert!(p.data().iter().all(|&v| (v - 0.01).abs() < 1e-15));
    }

    #[test]
    fn too_few_classes() {
        let arch = ArchConfig::desk();
        assert!(matches!(build_cnn_stream(&arch, 1, "cam_left", 0), Err(Error::Argument(_))));
        assert!(matches!(build_depth_mlp(&arch, 0, 0), Err(Error::Argument(_))));
        assert!(matches!(build_intermediate_fusion(&arch, 1, 0), Err(Error::Argument(_))));
        let odd = ArchConfig { image_side: 12, ..arch };
        assert!(odd.validate().is_err());
    }

    #[test]
    fn fusion_parameter_count_closed_form() {
        for arch in [ArchConfig::full(), ArchConfig::desk(), ArchConfig::tiny()] {
            let c = 7;
            let [f1, f2, f3] = arch.conv_filters;
            let h = arch.cnn_hidden;
            let side = arch.image_side / 8;
            let cnn_trunk = (9 * f1 + f1) + (9 * f1 * f2 + f2) + (9 * f2 * f3 + f3) + (f3 * side * side * h + h);
            let m = arch.mlp_hidden;
            let mlp_trunk = (arch.depth_len * m + m) + (arch.mlp_layers - 1) * (m * m + m);
            let f = arch.fusion_hidden;
            let head = ((3 * h + m) * f + f) + (f * c + c);
            let g = build_intermediate_fusion(&arch, c, 0).unwrap();
            assert_eq!(g.param_count(), 3 * cnn_trunk + mlp_trunk + head);
            let cnn = build_cnn_stream(&arch, c, "cam_rs", 0).unwrap();
            assert_eq!(cnn.param_count(), cnn_trunk + h * c + c);
        }
        // Full widths: 1*9*32+32 + 32*9*64+64 + 64*9*64+64 + 1024*128+128.
        let arch = ArchConfig::full();
        let cnn = build_cnn_stream(&arch, 100, "cam_left", 0).unwrap();
        assert_eq!(cnn.param_count(), 320 + 18_496 + 36_928 + 131_200 + 12_900);
    }

    #[test]
    fn decision_fusion_hand_sum() {
        let v = |a: f64, b: f64| Tensor::row(&[a, b]);
        let (sum, class) = decision_fusion(&[v(0.6, 0.4), v(0.6, 0.4), v(0.6, 0.4), v(0.1, 0.9)]).unwrap();
        assert!((sum.data()[0] - 1.9).abs() < 1e-12 && (sum.data()[1] - 2.1).abs() < 1e-12);
        assert_eq!(class, 1);

        let same = Tensor::row(&[0.2, 0.5, 0.3]);
        let (_, class) = decision_fusion(&[same.clone(), same.clone(), same.clone(), same]).unwrap();
        assert_eq!(class, 1);

        assert!(matches!(
            decision_fusion(&[v(0.5, 0.5), Tensor::row(&[1.0, 0.0, 0.0])]),
            Err(Error::Dimension(_))
        ));
        assert!(decision_fusion(&[]).is_err());
    }

    #[test]
    fn decision_fusion_ignores_positive_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let probas: Vec<Tensor> = (0..4)
                .map(|_| softmax(&Tensor::row(&(0..6).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>())).unwrap())
                .collect();
            let k: f64 = rng.random_range(0.01..100.0);
            let scaled: Vec<Tensor> = probas.iter().map(|p| p.map(|v| v * k)).collect();
            let (sum, a) = decision_fusion(&probas).unwrap();
            let (_, b) = decision_fusion(&scaled).unwrap();
            assert_eq!(a, b);
            assert_eq!(argmax(&sum.map(|v| v / 4.0).into_data()).unwrap(), a);
        }
    }

    #[test]
    fn shared_seed_trunks_agree_on_identical_input() {
        let arch = ArchConfig::tiny();
        let image = random(&[3, 1, 8, 8], 9);
        let mut inputs = fusion_inputs(&arch, 3, 0);
        for m in Modality::CAMERAS {
            inputs.insert(m.name().to_string(), image.clone());
        }
        let reprs = |g: &Graph| -> Vec<Tensor> {
            Modality::CAMERAS
                .iter()
                .map(|m| g.infer_at(g.node_by_label(&repr_label(m.name())).unwrap(), &inputs).unwrap())
                .collect()
        };
        let shared = build_intermediate_fusion_seeded(&arch, 3, FusionSeeds { trunks: [4; 4], head: 1 }).unwrap();
        let r = reprs(&shared);
        assert_eq!(r[0], r[1]);
        assert_eq!(r[1], r[2]);
        let distinct = build_intermediate_fusion(&arch, 3, 4).unwrap();
        let r = reprs(&distinct);
        assert_ne!(r[0], r[1]);
    }

    #[test]
    fn truncated_stream_with_its_own_head_predicts_the_same() {
        let arch = ArchConfig::desk();
        let g = build_cnn_stream(&arch, 5, "cam_right", 2).unwrap();
        let head = g.node_by_label(&logits_label("cam_right")).unwrap();
        let Layer::Dense(dense) = &g.nodes()[head].layer else { panic!("head is dense") };
        let dense: Dense = dense.clone();

        let trunk = g.truncate_at(g.node_by_label(&repr_label("cam_right")).unwrap()).unwrap();
        let repr = trunk.output();
        let mut b = trunk.into_builder();
        let new_head = b.layer("reattached", Layer::Dense(dense), &[repr], vec![5]).unwrap();
        let rebuilt = b.build(new_head).unwrap();

        let x = one("cam_right", random(&[4, 1, 32, 32], 1));
        assert_eq!(predict_proba(&g, &x).unwrap(), predict_proba(&rebuilt, &x).unwrap());
    }

    #[test]
    fn one_batch_reaches_every_trunk() {
        let arch = ArchConfig::desk();
        let mut g = build_intermediate_fusion(&arch, 4, 3).unwrap();
        let logits = g.forward(&fusion_inputs(&arch, 5, 1)).unwrap();
        let ce = crate::layers::softmax_cross_entropy(&logits, &[0, 1, 2, 3, 0]).unwrap();
        g.backward(&ce.grad).unwrap();
        for prefix in ["cam_left/", "cam_right/", "cam_rs/", "depth/", "fusion/"] {
            let moved = g
                .parameters()
                .iter()
                .filter(|p| p.node_label.starts_with(prefix))
                .any(|p| p.grad.data().iter().any(|&v| v.abs() > 0.0));
            assert!(moved, "no gradient reached {prefix}");
        }
    }

    #[test]
    fn seeds_differ_per_model() {
        let mut seen: Vec<u64> = ModelId::ALL.iter().map(|&m| model_seed(3, m)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 6);
    }
}
