//! FixMatch-style training loop with prototype adaptive fitting and dual
//! logit fusion.
//!
//! One step, in order:
//!
//! 1. weak-augment the labeled batch, weak- and strong-augment the unlabeled
//!    batch (run RNG, in that order);
//! 2. adapt and normalize the weak features;
//! 3. per-class means of the labeled batch;
//! 4. EMA update of the visual prototypes;
//! 5. probe and similarity logits on the weak unlabeled batch, alignment,
//!    fusion, pseudo-labels and mask;
//! 6. fold the fused probabilities into `P_u`, compute `α`, momentum-update
//!    the textual prototypes;
//! 7. total loss and gradients;
//! 8. momentum SGD.
//!
//! Batch indices are drawn with replacement from the run RNG before step 1
//! (labeled first, then unlabeled).

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{DataSource, ExperimentConfig, TextMode};
use crate::data::{self, AugmentKind, AugmentationConfig, EmbeddingSet};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionConfig, LogitBundle};
use crate::linalg::{self, Matrix};
use crate::metrics::{self, GroupSpec, RunReport, StabilityMode, REPORT_SCHEMA_VERSION};
use crate::model::{self, LossBatch, LossBreakdown, LossConfig, ModelParams, OptimizerState};
use crate::prototypes::{self, PafConfig, PrototypeState, TextPrototypes};
use crate::rng::{stream_rng, RunRng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub rank: usize,
    pub scale: f64,
    pub train_adapter: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            scale: 1.0,
            train_adapter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Label written into every report.
    pub arm: String,
    pub seed: u64,
    pub iterations: u64,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub eval_every: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub model: ModelConfig,
    pub paf: PafConfig,
    pub fusion: FusionConfig,
    pub augment: AugmentationConfig,
    pub groups: GroupSpec,
    pub stability: StabilityMode,
}

/// Iteration count used by the full-scale experiments.
pub const FULL_SCALE_ITERATIONS: u64 = 15_000;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arm: "custom".into(),
            seed: 0,
            iterations: 3000,
            batch_labeled: 32,
            batch_unlabeled: 32,
            eval_every: 500,
            learning_rate: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            model: ModelConfig::default(),
            paf: PafConfig::default(),
            fusion: FusionConfig::default(),
            augment: AugmentationConfig::default(),
            groups: GroupSpec::default(),
            stability: StabilityMode::Probability,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_labeled < 1 || self.batch_unlabeled < 1 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if self.eval_every < 1 {
            return Err(Error::Config("train.eval_every must be at least 1".into()));
        }
        if self.model.rank < 1 {
            return Err(Error::Config("model.rank must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0)
        {
            return Err(Error::Config(
                "optimizer needs lr >= 0, momentum in [0,1), decay >= 0".into(),
            ));
        }
        let wrap = |e: Error| Error::Config(e.to_string());
        self.paf.validate().map_err(wrap)?;
        self.fusion.validate().map_err(wrap)?;
        self.augment.validate().map_err(wrap)?;
        self.groups.validate().map_err(wrap)
    }
}

/// Everything a run trains on and is evaluated against, widened to `f64`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub classes: usize,
    pub dim: usize,
    pub labeled_x: Matrix,
    pub labeled_y: Vec<usize>,
    pub unlabeled_x: Matrix,
    /// Hidden ground truth of the unlabeled pool, diagnostics only.
    pub unlabeled_truth: Vec<usize>,
    pub test_x: Matrix,
    pub test_y: Vec<usize>,
    pub labeled_counts: Vec<usize>,
    pub class_prior: Vec<f64>,
    pub text: TextPrototypes,
}

fn labels_of(set: &EmbeddingSet, what: &str) -> Result<Vec<usize>> {
    set.labels()
        .map(|l| l.iter().map(|&y| y as usize).collect())
        .ok_or_else(|| Error::Config(format!("{what} must be labeled")))
}

/// Per-class mean directions of a labeled set.
fn empirical_means(set: &EmbeddingSet) -> Result<Matrix> {
    let y = labels_of(set, "training pool")?;
    let (m, present) = prototypes::batch_class_means(&set.to_matrix(), &y, set.class_count());
    if let Some(k) = present.iter().position(|&p| !p) {
        return Err(Error::InvalidParameter(format!(
            "class {k} has no usable samples for aligned text prototypes"
        )));
    }
    Ok(m)
}

/// Training pool, test set and class means (when synthetic) for `cfg`.
pub fn load_pools(cfg: &ExperimentConfig) -> Result<(EmbeddingSet, EmbeddingSet, Option<Matrix>)> {
    let d = &cfg.data;
    let seed = cfg.train.seed;
    match d.source {
        DataSource::Synthetic => {
            let means = data::synthetic_class_means(
                d.classes,
                d.dim,
                &mut stream_rng(seed, Stream::ClassMeans),
            )?;
            let train = data::sample_around_means(
                &means,
                &vec![d.train_per_class; d.classes],
                d.separation,
                d.noise,
                &mut stream_rng(seed, Stream::TrainSamples),
            )?;
            let test = data::sample_around_means(
                &means,
                &vec![d.test_per_class; d.classes],
                d.separation,
                d.noise,
                &mut stream_rng(seed, Stream::TestSamples),
            )?;
            Ok((train, test, Some(means)))
        }
        DataSource::Files => {
            let mut train = data::load_embeddings(&d.train)?;
            let mut test = data::load_embeddings(&d.test)?;
            train.normalize()?;
            test.normalize()?;
            for (set, name) in [(&train, "data.train"), (&test, "data.test")] {
                if set.dim() != d.dim || set.class_count() != d.classes {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} is D={} C={}, config says D={} C={}",
                        set.dim(),
                        set.class_count(),
                        d.dim,
                        d.classes
                    )));
                }
            }
            Ok((train, test, None))
        }
    }
}

/// Text prototypes for `cfg`: the configured file, else synthetic ones.
pub fn load_text_prototypes(
    cfg: &ExperimentConfig,
    train: &EmbeddingSet,
    means: Option<&Matrix>,
) -> Result<TextPrototypes> {
    let d = &cfg.data;
    if let Some(p) = cfg.path(&d.text_prototypes) {
        return TextPrototypes::load(p, d.classes, d.dim);
    }
    let mut rng = stream_rng(cfg.train.seed, Stream::TextPrototypes);
    match d.text_mode {
        TextMode::Random => TextPrototypes::synthetic(d.classes, d.dim, &mut rng),
        TextMode::Aligned => {
            let owned;
            let means = match means {
                Some(m) => m,
                None => {
                    owned = empirical_means(train)?;
                    &owned
                }
            };
            TextPrototypes::synthetic_aligned(means, d.text_noise, &mut rng)
        }
    }
}

/// Builds the split and materializes everything a run needs.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (train, test, means) = load_pools(cfg)?;
    let text = load_text_prototypes(cfg, &train, means.as_ref())?;
    let spec = cfg.long_tail_spec();
    let split = data::build_split(
        &train,
        &spec,
        &mut stream_rng(cfg.train.seed, Stream::Split),
    )?;
    let labeled = train.subset(&split.labeled_rows())?;
    let unlabeled = train.subset(&split.unlabeled_rows())?;
    let labeled_counts = split.labeled_counts(cfg.data.classes);
    Ok(Dataset {
        classes: cfg.data.classes,
        dim: cfg.data.dim,
        labeled_x: labeled.to_matrix(),
        labeled_y: labels_of(&labeled, "labeled split")?,
        unlabeled_x: unlabeled.to_matrix(),
        unlabeled_truth: labels_of(&unlabeled, "unlabeled split")?,
        test_x: test.to_matrix(),
        test_y: labels_of(&test, "test set")?,
        class_prior: fusion::prior_from_counts(&labeled_counts),
        labeled_counts,
        text,
    })
}

/// Running sums since the previous regular evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WindowStats {
    pub steps: u64,
    pub loss: LossBreakdown,
    pub mask_rate: f64,
    /// Set once a regular evaluation has consumed the window; the next step
    /// starts a fresh one.
    pub closed: bool,
}

impl WindowStats {
    fn add(&mut self, b: &LossBreakdown, mask_rate: f64) {
        if self.closed {
            *self = Self::default();
        }
        self.steps += 1;
        self.loss.labeled += b.labeled;
        self.loss.unlabeled += b.unlabeled;
        self.loss.orthogonal += b.orthogonal;
        self.loss.total += b.total;
        self.mask_rate += mask_rate;
    }

    fn means(&self) -> (LossBreakdown, f64) {
        if self.steps == 0 {
            return (LossBreakdown::default(), 0.0);
        }
        let n = self.steps as f64;
        (
            LossBreakdown {
                labeled: self.loss.labeled / n,
                unlabeled: self.loss.unlabeled / n,
                orthogonal: self.loss.orthogonal / n,
                total: self.loss.total / n,
            },
            self.mask_rate / n,
        )
    }
}

/// Complete mutable state of a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub prototypes: PrototypeState,
    pub iteration: u64,
    pub rng: RunRng,
    pub window: WindowStats,
}

impl TrainState {
    pub fn init(cfg: &TrainConfig, data: &Dataset) -> Self {
        let params = ModelParams::init(
            data.classes,
            data.dim,
            cfg.model.rank,
            cfg.model.scale,
            &mut stream_rng(cfg.seed, Stream::ParamInit),
        );
        let mut optimizer =
            OptimizerState::new(&params, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
        optimizer.freeze_adapter = !cfg.model.train_adapter;
        Self {
            params,
            optimizer,
            prototypes: PrototypeState::new(data.text.clone()),
            iteration: 0,
            rng: stream_rng(cfg.seed, Stream::Training),
            window: WindowStats::default(),
        }
    }
}

/// Intermediates of one step, for inspection and tests.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub weak_labeled: Matrix,
    pub weak_unlabeled: Matrix,
    pub strong_unlabeled: Matrix,
    pub z_labeled: Matrix,
    pub class_means: Matrix,
    pub present: Vec<bool>,
    pub bundles: Vec<LogitBundle>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub loss: LossBreakdown,
    pub mask_rate: f64,
    pub pl_histogram: Vec<usize>,
    /// Masked-in pseudo-labels that disagree with the hidden truth, when
    /// truths were supplied.
    pub pl_false: Option<usize>,
    pub trace: StepTrace,
}

fn with_iteration(e: Error, iteration: u64) -> Error {
    match e {
        Error::NonFinite { detail, .. } => Error::NonFinite { iteration, detail },
        other => other,
    }
}

/// Runs one optimization step on already-sampled raw batches.
pub fn train_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    class_prior: &[f64],
    labeled_x: &Matrix,
    labels: &[usize],
    unlabeled_x: &Matrix,
    unlabeled_truth: Option<&[usize]>,
) -> Result<StepOutcome> {
    let classes = state.params.classes();
    let it = state.iteration;

    // (1) augmentation
    let mut weak_labeled = labeled_x.clone();
    data::augment(
        &mut weak_labeled,
        AugmentKind::Weak,
        &cfg.augment,
        &mut state.rng,
    );
    let mut weak_unlabeled = unlabeled_x.clone();
    data::augment(
        &mut weak_unlabeled,
        AugmentKind::Weak,
        &cfg.augment,
        &mut state.rng,
    );
    let mut strong_unlabeled = unlabeled_x.clone();
    data::augment(
        &mut strong_unlabeled,
        AugmentKind::Strong,
        &cfg.augment,
        &mut state.rng,
    );

    // (2) features
    let mut z_labeled = Matrix::zeros(weak_labeled.rows(), weak_labeled.cols());
    for i in 0..weak_labeled.rows() {
        let z = model::forward_features(&state.params, weak_labeled.row(i))
            .map_err(|e| with_iteration(e, it))?;
        z_labeled.row_mut(i).copy_from_slice(&z);
    }

    // (3, 4) visual prototypes
    let (class_means, present) = prototypes::batch_class_means(&z_labeled, labels, classes);
    prototypes::update_visual(
        &mut state.prototypes.visual,
        &class_means,
        &present,
        cfg.paf.visual_momentum,
    );

    // (5) weak-branch fusion and pseudo-labels
    let mut bundles = Vec::with_capacity(weak_unlabeled.rows());
    let mut fused_probs = Matrix::zeros(weak_unlabeled.rows(), classes);
    for j in 0..weak_unlabeled.rows() {
        let z = model::forward_features(&state.params, weak_unlabeled.row(j))
            .map_err(|e| with_iteration(e, it))?;
        let b = fusion::weak_branch(&z, &state.params, &state.prototypes.text, &cfg.fusion);
        fused_probs
            .row_mut(j)
            .copy_from_slice(&linalg::softmax(&b.p_fused));
        bundles.push(b);
    }

    // (6) pseudo-label distribution and textual prototypes
    let pseudo = &mut state.prototypes.pseudo;
    let alpha = if cfg.paf.pu_before_alpha {
        prototypes::update_pseudo_distribution(pseudo, &fused_probs, cfg.paf.dist_momentum);
        prototypes::alpha_coefficients(&pseudo.probs, cfg.paf.mu)?
    } else {
        let a = prototypes::alpha_coefficients(&pseudo.probs, cfg.paf.mu)?;
        prototypes::update_pseudo_distribution(pseudo, &fused_probs, cfg.paf.dist_momentum);
        a
    };
    prototypes::paf_update_text(&mut state.prototypes.text, &state.prototypes.visual, &alpha);

    // (7) loss and gradients
    let batch = LossBatch {
        labeled_x: weak_labeled.clone(),
        labels: labels.to_vec(),
        strong_x: strong_unlabeled.clone(),
        targets: bundles.iter().map(|b| b.pseudo_label).collect(),
        mask: bundles.iter().map(|b| b.mask_pass).collect(),
    };
    let loss_cfg = LossConfig {
        class_prior: class_prior.to_vec(),
        la_strength: cfg.fusion.la_strength,
        orthogonal_weight: cfg.paf.orthogonal_weight,
    };
    let grads =
        model::backward(&state.params, &batch, &loss_cfg).map_err(|e| with_iteration(e, it))?;

    // (8) update
    model::sgd_step(&mut state.params, &grads, &mut state.optimizer);
    if !state.params.is_finite() {
        return Err(Error::NonFinite {
            iteration: it,
            detail: format!("parameters diverged; loss terms {}", grads.breakdown),
        });
    }
    state.iteration += 1;

    let masked_in = batch.mask.iter().filter(|&&m| m).count();
    let mask_rate = if batch.mask.is_empty() {
        0.0
    } else {
        masked_in as f64 / batch.mask.len() as f64
    };
    let mut pl_histogram = vec![0; classes];
    for (b, _) in bundles.iter().zip(&batch.mask).filter(|(_, &m)| m) {
        pl_histogram[b.pseudo_label] += 1;
    }
    let pl_false = unlabeled_truth.map(|t| {
        bundles
            .iter()
            .zip(t)
            .filter(|(b, &y)| b.mask_pass && b.pseudo_label != y)
            .count()
    });
    state.window.add(&grads.breakdown, mask_rate);

    Ok(StepOutcome {
        loss: grads.breakdown,
        mask_rate,
        pl_histogram,
        pl_false,
        trace: StepTrace {
            weak_labeled,
            weak_unlabeled,
            strong_unlabeled,
            z_labeled,
            class_means,
            present,
            bundles,
            alpha,
        },
    })
}

fn gather(x: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), x.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(x.row(i));
    }
    out
}

/// Samples a batch with replacement and runs [`train_step`].
pub fn sample_and_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    data: &Dataset,
) -> Result<StepOutcome> {
    let nl = data.labeled_y.len();
    let nu = data.unlabeled_truth.len();
    if nl == 0 || nu == 0 {
        return Err(Error::InvalidParameter(
            "labeled and unlabeled splits must be nonempty".into(),
        ));
    }
    let li: Vec<usize> = (0..cfg.batch_labeled)
        .map(|_| state.rng.random_range(0..nl))
        .collect();
    let ui: Vec<usize> = (0..cfg.batch_unlabeled)
        .map(|_| state.rng.random_range(0..nu))
        .collect();
    let lx = gather(&data.labeled_x, &li);
    let ly: Vec<usize> = li.iter().map(|&i| data.labeled_y[i]).collect();
    let ux = gather(&data.unlabeled_x, &ui);
    let ut: Vec<usize> = ui.iter().map(|&i| data.unlabeled_truth[i]).collect();
    train_step(state, cfg, &data.class_prior, &lx, &ly, &ux, Some(&ut))
}

/// Predictions and true-class probabilities on the test set.
pub struct TestPredictions {
    pub fused: Vec<usize>,
    pub probe: Vec<usize>,
    pub true_class_prob: Vec<f64>,
}

pub fn predict_test(
    state: &TrainState,
    cfg: &TrainConfig,
    data: &Dataset,
) -> Result<TestPredictions> {
    let n = data.test_y.len();
    let mut out = TestPredictions {
        fused: Vec::with_capacity(n),
        probe: Vec::with_capacity(n),
        true_class_prob: Vec::with_capacity(n),
    };
    for (x, &y) in data.test_x.iter_rows().zip(&data.test_y) {
        let z = model::forward_features(&state.params, x)?;
        let pv = model::probe_logits(&state.params, &z);
        let fused = if cfg.fusion.eta == 1.0 {
            pv.clone()
        } else {
            let pt = fusion::text_logits(&z, &state.prototypes.text, cfg.fusion.temperature);
            fusion::fuse(
                &pv,
                &fusion::align_logits(&pt, &pv, cfg.fusion.epsilon_range),
                cfg.fusion.eta,
            )
        };
        out.probe.push(linalg::argmax(&pv));
        out.fused.push(linalg::argmax(&fused));
        out.true_class_prob.push(linalg::softmax(&fused)[y]);
    }
    Ok(out)
}

/// Evaluation record for the current state.
pub fn evaluate(
    state: &TrainState,
    cfg: &TrainConfig,
    data: &Dataset,
    config: &std::collections::BTreeMap<String, String>,
) -> Result<RunReport> {
    let preds = predict_test(state, cfg, data)?;
    let groups = metrics::group_accuracy(
        &preds.fused,
        &data.test_y,
        &data.labeled_counts,
        &cfg.groups,
    );
    let probe_acc = metrics::group_accuracy(
        &preds.probe,
        &data.test_y,
        &data.labeled_counts,
        &cfg.groups,
    )
    .overall;
    let stability_inputs: Vec<f64> = match cfg.stability {
        StabilityMode::Probability => preds.true_class_prob.clone(),
        StabilityMode::Indicator => preds
            .fused
            .iter()
            .zip(&data.test_y)
            .map(|(p, y)| if p == y { 1.0 } else { 0.0 })
            .collect(),
    };
    let stability = metrics::classification_stability(&stability_inputs)?;

    let nu = data.unlabeled_x.rows();
    let mut q = Vec::with_capacity(nu);
    let mut conf = Vec::with_capacity(nu);
    let mut mask = Vec::with_capacity(nu);
    for x in data.unlabeled_x.iter_rows() {
        let z = model::forward_features(&state.params, x)?;
        let b = fusion::weak_branch(&z, &state.params, &state.prototypes.text, &cfg.fusion);
        q.push(b.pseudo_label);
        conf.push(b.confidence);
        mask.push(b.mask_pass);
    }
    let pl = metrics::pseudo_label_stats(&q, &conf, &data.unlabeled_truth, &mask, data.classes);
    let (loss, train_mask_rate) = state.window.means();
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        arm: cfg.arm.clone(),
        seed: cfg.seed,
        iteration: state.iteration,
        accuracy: groups.overall,
        head_accuracy: groups.head,
        medium_accuracy: groups.medium,
        tail_accuracy: groups.tail,
        probe_accuracy: probe_acc,
        stability,
        mask_pass_rate: if nu == 0 {
            0.0
        } else {
            pl.masked_in as f64 / nu as f64
        },
        pl_histogram: pl.histogram,
        pl_masked_in: pl.masked_in,
        pl_false_count: pl.false_count,
        pl_false_confidence: pl.mean_false_confidence,
        loss,
        train_mask_rate,
        config: config.clone(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop once this iteration is reached without the end-of-run record,
    /// as if the process had been interrupted.
    pub stop_after: Option<u64>,
    /// Where to dump a checkpoint if training aborts on a numeric failure.
    pub abort_checkpoint: Option<PathBuf>,
}

pub struct RunOutput {
    pub reports: Vec<RunReport>,
    pub state: TrainState,
}

/// Trains from `resume` (or a fresh state) up to `cfg.train.iterations`.
///
/// A fresh run records the initial state first. Records are taken every
/// `eval_every` iterations and at the final iteration.
pub fn run_with_data(
    cfg: &ExperimentConfig,
    data: &Dataset,
    resume: Option<TrainState>,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let tc = &cfg.train;
    let config_map = cfg.to_map();
    let mut state = resume.unwrap_or_else(|| TrainState::init(tc, data));
    if state.params.classes() != data.classes || state.params.dim() != data.dim {
        return Err(Error::DimensionMismatch(format!(
            "state is C={} D={}, data is C={} D={}",
            state.params.classes(),
            state.params.dim(),
            data.classes,
            data.dim
        )));
    }
    let mut reports = Vec::new();
    if state.iteration == 0 {
        reports.push(evaluate(&state, tc, data, &config_map)?);
    }
    let end = opts
        .stop_after
        .map_or(tc.iterations, |s| s.min(tc.iterations));
    while state.iteration < end {
        if let Err(e) = sample_and_step(&mut state, tc, data) {
            if let (true, Some(p)) = (e.is_numeric(), &opts.abort_checkpoint) {
                checkpoint::save_checkpoint(&state, &cfg.to_text(), p)?;
            }
            return Err(e);
        }
        let regular = state.iteration.is_multiple_of(tc.eval_every);
        if regular || state.iteration == tc.iterations {
            reports.push(evaluate(&state, tc, data, &config_map)?);
        }
        if regular {
            state.window.closed = true;
        }
    }
    Ok(RunOutput { reports, state })
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let data = prepare_data(cfg)?;
    run_with_data(cfg, &data, None, &RunOptions::default())
}

/// Ablation arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Linear probe only.
    Lp,
    /// Probe plus trainable adapter.
    LpAdapter,
    /// Adapter with prototype fitting and the orthogonality loss, no fusion.
    Paf,
    /// Adapter with dual logit fusion, no prototype fitting.
    Dlf,
    /// Everything.
    Full,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::Lp, Arm::LpAdapter, Arm::Paf, Arm::Dlf, Arm::Full];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Lp => "lp",
            Arm::LpAdapter => "lp_adapter",
            Arm::Paf => "paf",
            Arm::Dlf => "dlf",
            Arm::Full => "full",
        }
    }

    /// (adapter, prototype fitting, logit fusion)
    pub fn components(self) -> (bool, bool, bool) {
        match self {
            Arm::Lp => (false, false, false),
            Arm::LpAdapter => (true, false, false),
            Arm::Paf => (true, true, false),
            Arm::Dlf => (true, false, true),
            Arm::Full => (true, true, true),
        }
    }

    /// Switches off the components this arm excludes. Baseline arms also drop
    /// logit adjustment, which belongs to the rewritten objective.
    pub fn configure(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        let (adapter, paf, dlf) = self.components();
        let t = &mut c.train;
        t.arm = self.name().to_string();
        t.model.train_adapter = adapter;
        if !paf {
            t.paf.mu = 0.0;
            t.paf.orthogonal_weight = 0.0;
        }
        if !dlf {
            t.fusion.eta = 1.0;
        }
        if !paf && !dlf {
            t.fusion.la_strength = 0.0;
        }
        c
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown arm {s:?} (expected lp|lp_adapter|paf|dlf|full)"
            ))
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: Arm,
    pub adapter: bool,
    pub paf: bool,
    pub dlf: bool,
    pub last: RunReport,
}

pub struct AblationReport {
    pub runs: Vec<(Arm, Vec<RunReport>)>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Component check marks and final metrics per arm.
    pub fn table(&self) -> String {
        let mark = |b: bool| if b { "x" } else { " " };
        let pct = |v: Option<f64>| v.map_or("   -  ".to_string(), |x| format!("{:6.2}", 100.0 * x));
        let mut s = String::from(
            "| LP | LFT | PAF | DLF | arm        |  acc   |  head  | medium |  tail  |   S    | false PL | false conf |\n\
             |----|-----|-----|-----|------------|--------|--------|--------|--------|--------|----------|------------|\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "| x  |  {}  |  {}  |  {}  | {:<10} | {} | {} | {} | {} | {:6.4} | {:>8} | {:>10.4} |\n",
                mark(r.adapter),
                mark(r.paf),
                mark(r.dlf),
                r.arm.name(),
                pct(Some(r.last.accuracy)),
                pct(r.last.head_accuracy),
                pct(r.last.medium_accuracy),
                pct(r.last.tail_accuracy),
                r.last.stability,
                r.last.pl_false_count,
                r.last.pl_false_confidence,
            ));
        }
        s
    }
}

/// Runs each arm on the same seed and split.
pub fn ablation_matrix(cfg: &ExperimentConfig, arms: &[Arm]) -> Result<AblationReport> {
    let data = prepare_data(cfg)?;
    ablation_with_data(cfg, &data, arms)
}

pub fn ablation_with_data(
    cfg: &ExperimentConfig,
    data: &Dataset,
    arms: &[Arm],
) -> Result<AblationReport> {
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for &arm in arms {
        let arm_cfg = arm.configure(cfg);
        let out = run_with_data(&arm_cfg, data, None, &RunOptions::default())?;
        let (adapter, paf, dlf) = arm.components();
        rows.push(AblationRow {
            arm,
            adapter,
            paf,
            dlf,
            last: out
                .reports
                .last()
                .cloned()
                .expect("at least the initial record"),
        });
        runs.push((arm, out.reports));
    }
    Ok(AblationReport { runs, rows })
}

/// Writes the checkpoint of a finished run.
pub fn write_final_checkpoint(out: &RunOutput, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    checkpoint::save_checkpoint(&out.state, &cfg.to_text(), path)
}
