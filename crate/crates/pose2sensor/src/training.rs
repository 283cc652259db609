//! The three training regimes and their shared machinery: the compound
//! loss, early stopping on validation score, and multi-seed experiment
//! aggregation.
//!
//! Determinism contract: a run is a pure function of (data splits, config,
//! seed). Every random decision draws from a named stream — `init` for
//! parameter initialization, `data` for epoch shuffles, `dropout.regressor`
//! and `dropout.feature` for the dropout masks — so regimes that share a
//! sub-computation consume identical draws for it. This is what makes joint
//! training with alpha = beta = 0 reproduce the regression-first first stage
//! bit for bit.

use crate::error::{Error, Result};
use crate::evaluation::{classification_eval, macro_f1, accuracy, test_mse};
use crate::models::{
    classifier_forward, feature_forward, init_models, register_classifier, register_feature,
    regressor_forward, FeatureExtractorSpec, FeatureParams, LayerParams, ModelBundle,
    RegressorParams, RegressorSpec, RegressorVariant,
};
use crate::preprocessing::{stack_windows, LabeledWindow};
use crate::rng::StreamRng;
use crate::synthdata::DataSplits;
use crate::tensor::{Adam, AdamConfig, Graph, Mode, ParamId, ParamSet, Tensor, Value};

const COSINE_EPS: f64 = 1e-8;

/// Which training regime to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Regressor, feature extractor, and classifier optimized together under
    /// the compound loss.
    Joint,
    /// Feature extractor + classifier on real sensor windows only.
    BaselineReal,
    /// Stage 1 fits the regressor alone on MSE; stage 2 freezes it and
    /// trains the classifier on paired real + synthesized windows.
    RegressionFirst,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Joint => "joint",
            Method::BaselineReal => "baseline-real",
            Method::RegressionFirst => "regression-first",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "joint" => Ok(Method::Joint),
            "baseline-real" => Ok(Method::BaselineReal),
            "regression-first" => Ok(Method::RegressionFirst),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected joint, baseline-real, or regression-first)"
            ))),
        }
    }
}

/// Loss-term weighting: the activity and similarity coefficients plus the
/// per-class cross-entropy weights.
#[derive(Debug, Clone)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub class_weights: Vec<f32>,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, class_weights: Vec<f32>) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got alpha {alpha}, beta {beta}"
            )));
        }
        if class_weights.is_empty() || class_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("class weights must be strictly positive".into()));
        }
        Ok(LossWeights {
            alpha,
            beta,
            class_weights,
        })
    }

    /// Inverse training-split class frequency, normalized to mean 1.
    pub fn inverse_frequency(
        alpha: f64,
        beta: f64,
        train: &[LabeledWindow],
        n_classes: usize,
    ) -> Result<Self> {
        let mut counts = vec![0usize; n_classes];
        for w in train {
            if w.label >= n_classes {
                return Err(Error::Data(format!(
                    "window label {} out of range for {n_classes} classes",
                    w.label
                )));
            }
            counts[w.label] += 1;
        }
        if let Some(cls) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Data(format!(
                "class {cls} is absent from the training split"
            )));
        }
        let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
        let mean = inv.iter().sum::<f64>() / n_classes as f64;
        let class_weights = inv.iter().map(|&w| (w / mean) as f32).collect();
        LossWeights::new(alpha, beta, class_weights)
    }

    pub fn uniform(alpha: f64, beta: f64, n_classes: usize) -> Result<Self> {
        LossWeights::new(alpha, beta, vec![1.0; n_classes])
    }
}

/// Everything a single experiment run needs besides the data.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub method: Method,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub alpha: f64,
    pub beta: f64,
    pub uniform_class_weights: bool,
    pub variant: RegressorVariant,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} must be smaller than max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "lr must be positive and batch_size nonzero, got {} / {}",
                self.lr, self.batch_size
            )));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Joint,
            lr: 1e-3,
            max_epochs: 100,
            patience: 25,
            batch_size: 64,
            seeds: vec![0, 1, 2, 3, 4],
            alpha: 1.0,
            beta: 1.0,
            uniform_class_weights: false,
            variant: RegressorVariant::Full,
        }
    }
}

/// Whether training should continue after an early-stop update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Early stopping on a validation score where higher is better. Improvement
/// is strict (an equal score does not count) and snapshots the full
/// parameter set, running statistics included.
#[derive(Debug)]
pub struct EarlyStopState {
    best_score: f64,
    best_epoch: usize,
    best_snapshot: Vec<Tensor<f32>>,
    since_improvement: usize,
}

impl EarlyStopState {
    pub fn new() -> Self {
        EarlyStopState {
            best_score: f64::NEG_INFINITY,
            best_epoch: 0,
            best_snapshot: Vec::new(),
            since_improvement: 0,
        }
    }

    pub fn best_score(&self) -> f64 {
        self.best_score
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn update(
        &mut self,
        score: f64,
        epoch: usize,
        params: &ParamSet<f32>,
        patience: usize,
    ) -> StopDecision {
        if score > self.best_score {
            self.best_score = score;
            self.best_epoch = epoch;
            self.best_snapshot = params.snapshot();
            self.since_improvement = 0;
            StopDecision::Continue
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    /// Restore the parameters of the best epoch. No-op if no epoch was
    /// recorded.
    pub fn restore_best(&self, params: &mut ParamSet<f32>) {
        if !self.best_snapshot.is_empty() {
            params.restore(&self.best_snapshot);
        }
    }
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self::new()
    }
}

/// Metrics of one seed's run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub f1: f64,
    pub accuracy: f64,
    /// Absent for the real-only baseline, which trains no regressor.
    pub test_mse: Option<f64>,
    pub stopped_epoch: usize,
}

/// Mean and population (÷N) standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

/// All seeds of one method, with aggregate accessors.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub seeds: Vec<SeedResult>,
}

impl RunResult {
    pub fn f1_stats(&self) -> MeanStd {
        mean_std(&self.seeds.iter().map(|s| s.f1).collect::<Vec<_>>())
    }

    pub fn accuracy_stats(&self) -> MeanStd {
        mean_std(&self.seeds.iter().map(|s| s.accuracy).collect::<Vec<_>>())
    }

    pub fn mse_stats(&self) -> Option<MeanStd> {
        let values: Vec<f64> = self.seeds.iter().filter_map(|s| s.test_mse).collect();
        if values.len() == self.seeds.len() {
            Some(mean_std(&values))
        } else {
            None
        }
    }
}

/// A trained model ready for evaluation or checkpointing. The regressor
/// handles are absent for the real-only baseline, which never creates them.
pub struct TrainedModel {
    pub bundle: ModelBundle,
    pub params: ParamSet<f32>,
    pub regressor: Option<RegressorParams>,
    pub feature: FeatureParams,
    pub classifier: LayerParams,
}

/// One run's result plus diagnostics used by the verification suite.
pub struct TrainOutcome {
    pub result: SeedResult,
    pub model: TrainedModel,
    /// Per-batch training losses of the first (or only) optimization stage.
    pub stage1_losses: Vec<f32>,
    /// Per-batch losses of the regression-first second stage, else empty.
    pub stage2_losses: Vec<f32>,
    /// Per-epoch early-stop scores (higher is better) of the regression
    /// stage when the method has one: negated validation MSE.
    pub stage1_val_scores: Vec<f64>,
    /// Per-epoch validation scores of the final stage.
    pub val_scores: Vec<f64>,
}

/// The compound training objective: regression MSE plus `alpha` times the
/// summed real/synthetic classification cross-entropies plus `beta` times
/// the mean feature dissimilarity (1 − cosine). A zero coefficient removes
/// its term from values and gradients exactly; `include_similarity = false`
/// additionally skips building the similarity nodes, which the verification
/// suite uses as an independent reference for that exactness claim.
#[allow(clippy::too_many_arguments)]
pub fn loss_final(
    g: &mut Graph<f32>,
    x_sensor: Value,
    x_synth: Value,
    feat_real: Value,
    feat_synth: Value,
    logits_real: Value,
    logits_synth: Value,
    targets: &[usize],
    weights: &LossWeights,
    include_similarity: bool,
) -> Result<Value> {
    let mse = g.mse(x_synth, x_sensor)?;
    let ce_real = g.weighted_cross_entropy(logits_real, targets, &weights.class_weights)?;
    let ce_synth = g.weighted_cross_entropy(logits_synth, targets, &weights.class_weights)?;
    let activity = g.add(ce_real, ce_synth)?;
    let activity_scaled = g.affine(activity, weights.alpha, 0.0);
    let total = g.add(mse, activity_scaled)?;
    if !include_similarity {
        return Ok(total);
    }
    let cos = g.cosine_sim(feat_real, feat_synth, COSINE_EPS)?;
    let dissim = g.affine(cos, -1.0, 1.0);
    let sim_mean = g.mean_all(dissim);
    let sim_scaled = g.affine(sim_mean, weights.beta, 0.0);
    g.add(total, sim_scaled)
}

fn check_finite(loss: f32, stage: &str, epoch: usize, batch: usize) -> Result<f32> {
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "training diverged: non-finite loss {loss} in {stage}, epoch {epoch}, batch {batch}"
        )));
    }
    Ok(loss)
}

/// Shuffle the window indices for one epoch and cut them into batches (the
/// final partial batch is kept).
fn epoch_batches(n: usize, batch_size: usize, data_rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    data_rng.shuffle(&mut idx);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn adam_apply(
    adam: &mut Adam<f32>,
    params: &mut ParamSet<f32>,
    ids: &[ParamId],
    grads: &[Option<Tensor<f32>>],
) -> Result<()> {
    for (slot, grad) in grads.iter().enumerate() {
        if let Some(grad) = grad {
            adam.step(slot, params.tensor_mut(ids[slot]), grad)?;
        }
    }
    Ok(())
}

fn param_ids(params: &ParamSet<f32>) -> Vec<ParamId> {
    params.iter().map(|(id, _)| id).collect()
}

fn window_len(splits: &DataSplits) -> Result<usize> {
    let first = splits
        .train
        .first()
        .ok_or_else(|| Error::Data("training split is empty".into()))?;
    Ok(first.pose.shape()[2])
}

fn desk_bundle(cfg: &TrainConfig, window: usize, n_classes: usize) -> ModelBundle {
    let mut rspec = RegressorSpec::default();
    rspec.window = window;
    rspec.variant = cfg.variant;
    ModelBundle::new(rspec, FeatureExtractorSpec::default(), n_classes)
}

fn class_weights(cfg: &TrainConfig, splits: &DataSplits) -> Result<LossWeights> {
    if cfg.uniform_class_weights {
        LossWeights::uniform(cfg.alpha, cfg.beta, splits.n_classes)
    } else {
        LossWeights::inverse_frequency(cfg.alpha, cfg.beta, &splits.train, splits.n_classes)
    }
}

/// Train regressor, feature extractor, and classifier together under the
/// compound loss: one backward pass and one optimizer step over all
/// parameters per batch.
pub fn train_joint(splits: &DataSplits, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let window = window_len(splits)?;
    let bundle = desk_bundle(cfg, window, splits.n_classes);
    let weights = class_weights(cfg, splits)?;

    let mut params = ParamSet::new();
    let mut init_rng = StreamRng::new(seed, "init");
    let handles = init_models(&bundle, &mut params, &mut init_rng)?;
    let ids = param_ids(&params);

    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut data_rng = StreamRng::new(seed, "data");
    let mut drop_r = StreamRng::new(seed, "dropout.regressor");
    let mut drop_f = StreamRng::new(seed, "dropout.feature");
    let mut stop = EarlyStopState::new();
    let mut losses = Vec::new();
    let mut val_scores = Vec::new();
    let mut stopped_epoch = 0;

    for epoch in 1..=cfg.max_epochs {
        for (b, idx) in epoch_batches(splits.train.len(), cfg.batch_size, &mut data_rng)
            .into_iter()
            .enumerate()
        {
            let (pose, sensor, labels) = stack_windows(&splits.train, &idx)?;
            let mut g = Graph::<f32>::new();
            let binding = params.bind(&mut g, true);
            let x = g.leaf(pose, false);
            let y = g.leaf(sensor, false);
            let synth = regressor_forward(&mut g, x, &bundle.regressor, &handles.regressor, &binding, Mode::Train, &mut drop_r)?;
            let f_real = feature_forward(&mut g, y, &bundle.feature, &handles.feature, &binding, &mut params, Mode::Train, &mut drop_f)?;
            let f_synth = feature_forward(&mut g, synth, &bundle.feature, &handles.feature, &binding, &mut params, Mode::Train, &mut drop_f)?;
            let logits_real = classifier_forward(&mut g, f_real, bundle.feature.feature_width, &handles.classifier, &binding)?;
            let logits_synth = classifier_forward(&mut g, f_synth, bundle.feature.feature_width, &handles.classifier, &binding)?;
            let loss = loss_final(
                &mut g, y, synth, f_real, f_synth, logits_real, logits_synth, &labels, &weights,
                true,
            )?;
            losses.push(check_finite(g.value(loss).item()?, "joint", epoch, b)?);
            let grads = g.backward(loss)?;
            let grad_vec = binding.finish(&mut g, Some(grads), &mut params);
            adam_apply(&mut adam, &mut params, &ids, &grad_vec)?;
        }
        let cm = classification_eval(
            &bundle.feature,
            &handles.feature,
            &handles.classifier,
            splits.n_classes,
            &mut params,
            &splits.val,
            cfg.batch_size,
        )?;
        let score = macro_f1(&cm)?;
        val_scores.push(score);
        // TEMP calibration trace — remove before delivery.
        if std::env::var_os("P2S_TRACE").is_some() {
            let vm = test_mse(&bundle.regressor, &handles.regressor, &mut params, &splits.val, cfg.batch_size)?;
            eprintln!("epoch {epoch}: val_f1 {score:.4} val_mse {vm:.4}");
        }
        stopped_epoch = epoch;
        if stop.update(score, epoch, &params, cfg.patience) == StopDecision::Stop {
            break;
        }
    }
    stop.restore_best(&mut params);

    let cm = classification_eval(
        &bundle.feature,
        &handles.feature,
        &handles.classifier,
        splits.n_classes,
        &mut params,
        &splits.test,
        cfg.batch_size,
    )?;
    let mse = test_mse(&bundle.regressor, &handles.regressor, &mut params, &splits.test, cfg.batch_size)?;
    let result = SeedResult {
        seed,
        f1: macro_f1(&cm)?,
        accuracy: accuracy(&cm)?,
        test_mse: Some(mse),
        stopped_epoch,
    };
    Ok(TrainOutcome {
        result,
        model: TrainedModel {
            bundle,
            params,
            regressor: Some(handles.regressor),
            feature: handles.feature,
            classifier: handles.classifier,
        },
        stage1_losses: losses,
        stage2_losses: Vec::new(),
        stage1_val_scores: Vec::new(),
        val_scores,
    })
}

/// Train the feature extractor and classifier on real sensor windows only;
/// no regressor parameter is ever created.
pub fn train_baseline_real(splits: &DataSplits, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let window = window_len(splits)?;
    let bundle = desk_bundle(cfg, window, splits.n_classes);
    let weights = class_weights(cfg, splits)?;

    let mut params = ParamSet::new();
    let mut init_rng = StreamRng::new(seed, "init");
    let feature = register_feature(&bundle.feature, window, &mut params, &mut init_rng)?;
    let classifier = register_classifier(
        bundle.feature.feature_width,
        splits.n_classes,
        bundle.feature.leaky_slope,
        &mut params,
        &mut init_rng,
    )?;
    let ids = param_ids(&params);

    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut data_rng = StreamRng::new(seed, "data");
    let mut drop_f = StreamRng::new(seed, "dropout.feature");
    let mut stop = EarlyStopState::new();
    let mut losses = Vec::new();
    let mut val_scores = Vec::new();
    let mut stopped_epoch = 0;

    for epoch in 1..=cfg.max_epochs {
        for (b, idx) in epoch_batches(splits.train.len(), cfg.batch_size, &mut data_rng)
            .into_iter()
            .enumerate()
        {
            let (_, sensor, labels) = stack_windows(&splits.train, &idx)?;
            let mut g = Graph::<f32>::new();
            let binding = params.bind(&mut g, true);
            let y = g.leaf(sensor, false);
            let feats = feature_forward(&mut g, y, &bundle.feature, &feature, &binding, &mut params, Mode::Train, &mut drop_f)?;
            let logits = classifier_forward(&mut g, feats, bundle.feature.feature_width, &classifier, &binding)?;
            let loss = g.weighted_cross_entropy(logits, &labels, &weights.class_weights)?;
            losses.push(check_finite(g.value(loss).item()?, "baseline", epoch, b)?);
            let grads = g.backward(loss)?;
            let grad_vec = binding.finish(&mut g, Some(grads), &mut params);
            adam_apply(&mut adam, &mut params, &ids, &grad_vec)?;
        }
        let cm = classification_eval(
            &bundle.feature,
            &feature,
            &classifier,
            splits.n_classes,
            &mut params,
            &splits.val,
            cfg.batch_size,
        )?;
        let score = macro_f1(&cm)?;
        val_scores.push(score);
        stopped_epoch = epoch;
        if stop.update(score, epoch, &params, cfg.patience) == StopDecision::Stop {
            break;
        }
    }
    stop.restore_best(&mut params);

    let cm = classification_eval(
        &bundle.feature,
        &feature,
        &classifier,
        splits.n_classes,
        &mut params,
        &splits.test,
        cfg.batch_size,
    )?;
    let result = SeedResult {
        seed,
        f1: macro_f1(&cm)?,
        accuracy: accuracy(&cm)?,
        test_mse: None,
        stopped_epoch,
    };
    Ok(TrainOutcome {
        result,
        model: TrainedModel {
            bundle,
            params,
            regressor: None,
            feature,
            classifier,
        },
        stage1_losses: losses,
        stage2_losses: Vec::new(),
        stage1_val_scores: Vec::new(),
        val_scores,
    })
}

/// Synthesize one window per training window with the frozen regressor in
/// eval mode.
fn precompute_synth(
    bundle: &ModelBundle,
    regressor: &RegressorParams,
    params: &mut ParamSet<f32>,
    windows: &[LabeledWindow],
    batch_size: usize,
) -> Result<Vec<Tensor<f32>>> {
    let mut rng = StreamRng::new(0, "eval.unused");
    let mut out = Vec::with_capacity(windows.len());
    for start in (0..windows.len()).step_by(batch_size) {
        let idx: Vec<usize> = (start..(start + batch_size).min(windows.len())).collect();
        let (pose, _, _) = stack_windows(windows, &idx)?;
        let mut g = Graph::<f32>::new();
        let binding = params.bind(&mut g, false);
        let x = g.leaf(pose, false);
        let y = regressor_forward(&mut g, x, &bundle.regressor, regressor, &binding, Mode::Eval, &mut rng)?;
        let t = g.value(y).clone();
        binding.finish(&mut g, None, params);
        let [_, ch, len] = *t.shape() else {
            unreachable!("regressor output is rank 3")
        };
        for (row, _) in idx.iter().enumerate() {
            let slice = &t.data()[row * ch * len..(row + 1) * ch * len];
            out.push(Tensor::new(vec![1, ch, len], slice.to_vec())?);
        }
    }
    Ok(out)
}

fn stack_precomputed(synth: &[Tensor<f32>], idx: &[usize]) -> Result<Tensor<f32>> {
    let [_, ch, len] = *synth[idx[0]].shape() else {
        unreachable!("precomputed windows are rank 3")
    };
    let mut data = Vec::with_capacity(idx.len() * ch * len);
    for &i in idx {
        data.extend_from_slice(synth[i].data());
    }
    Tensor::new(vec![idx.len(), ch, len], data)
}

/// Two-step regime: stage 1 trains the regressor alone on MSE with early
/// stopping on validation MSE; stage 2 freezes it, synthesizes one window
/// per training window, and trains the feature extractor + classifier on
/// paired real/synthetic batches.
pub fn train_regression_first(splits: &DataSplits, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let window = window_len(splits)?;
    let bundle = desk_bundle(cfg, window, splits.n_classes);
    let weights = class_weights(cfg, splits)?;

    // The full parameter set is created up front, in the same order and from
    // the same stream as joint training, so both regimes start from
    // identical values.
    let mut params = ParamSet::new();
    let mut init_rng = StreamRng::new(seed, "init");
    let handles = init_models(&bundle, &mut params, &mut init_rng)?;
    let ids = param_ids(&params);

    let mut data_rng = StreamRng::new(seed, "data");
    let mut drop_r = StreamRng::new(seed, "dropout.regressor");

    // Stage 1: regressor on plain MSE, early stop on validation MSE
    // (negated: the early-stop state maximizes its score).
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut stop = EarlyStopState::new();
    let mut stage1_losses = Vec::new();
    let mut stage1_val_scores = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        for (b, idx) in epoch_batches(splits.train.len(), cfg.batch_size, &mut data_rng)
            .into_iter()
            .enumerate()
        {
            let (pose, sensor, _) = stack_windows(&splits.train, &idx)?;
            let mut g = Graph::<f32>::new();
            let binding = params.bind(&mut g, true);
            let x = g.leaf(pose, false);
            let y = g.leaf(sensor, false);
            let synth = regressor_forward(&mut g, x, &bundle.regressor, &handles.regressor, &binding, Mode::Train, &mut drop_r)?;
            let loss = g.mse(synth, y)?;
            stage1_losses.push(check_finite(g.value(loss).item()?, "stage 1", epoch, b)?);
            let grads = g.backward(loss)?;
            let grad_vec = binding.finish(&mut g, Some(grads), &mut params);
            adam_apply(&mut adam, &mut params, &ids, &grad_vec)?;
        }
        let val_mse = test_mse(&bundle.regressor, &handles.regressor, &mut params, &splits.val, cfg.batch_size)?;
        stage1_val_scores.push(-val_mse);
        if stop.update(-val_mse, epoch, &params, cfg.patience) == StopDecision::Stop {
            break;
        }
    }
    stop.restore_best(&mut params);

    // Stage 2: freeze the regressor, precompute its outputs once, and train
    // the classifier path on paired real + synthetic windows.
    let synth_train = precompute_synth(&bundle, &handles.regressor, &mut params, &splits.train, cfg.batch_size)?;
    let mut adam2 = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut drop_f = StreamRng::new(seed, "dropout.feature");
    let mut stop2 = EarlyStopState::new();
    let mut stage2_losses = Vec::new();
    let mut val_scores = Vec::new();
    let mut stopped_epoch = 0;
    for epoch in 1..=cfg.max_epochs {
        for (b, idx) in epoch_batches(splits.train.len(), cfg.batch_size, &mut data_rng)
            .into_iter()
            .enumerate()
        {
            let (_, sensor, labels) = stack_windows(&splits.train, &idx)?;
            let synth = stack_precomputed(&synth_train, &idx)?;
            let mut g = Graph::<f32>::new();
            let binding = params.bind(&mut g, true);
            let y_real = g.leaf(sensor, false);
            let y_synth = g.leaf(synth, false);
            let f_real = feature_forward(&mut g, y_real, &bundle.feature, &handles.feature, &binding, &mut params, Mode::Train, &mut drop_f)?;
            let f_synth = feature_forward(&mut g, y_synth, &bundle.feature, &handles.feature, &binding, &mut params, Mode::Train, &mut drop_f)?;
            let logits_real = classifier_forward(&mut g, f_real, bundle.feature.feature_width, &handles.classifier, &binding)?;
            let logits_synth = classifier_forward(&mut g, f_synth, bundle.feature.feature_width, &handles.classifier, &binding)?;
            let ce_real = g.weighted_cross_entropy(logits_real, &labels, &weights.class_weights)?;
            let ce_synth = g.weighted_cross_entropy(logits_synth, &labels, &weights.class_weights)?;
            let loss = g.add(ce_real, ce_synth)?;
            stage2_losses.push(check_finite(g.value(loss).item()?, "stage 2", epoch, b)?);
            let grads = g.backward(loss)?;
            let grad_vec = binding.finish(&mut g, Some(grads), &mut params);
            adam_apply(&mut adam2, &mut params, &ids, &grad_vec)?;
        }
        let cm = classification_eval(
            &bundle.feature,
            &handles.feature,
            &handles.classifier,
            splits.n_classes,
            &mut params,
            &splits.val,
            cfg.batch_size,
        )?;
        let score = macro_f1(&cm)?;
        val_scores.push(score);
        stopped_epoch = epoch;
        if stop2.update(score, epoch, &params, cfg.patience) == StopDecision::Stop {
            break;
        }
    }
    stop2.restore_best(&mut params);

    let cm = classification_eval(
        &bundle.feature,
        &handles.feature,
        &handles.classifier,
        splits.n_classes,
        &mut params,
        &splits.test,
        cfg.batch_size,
    )?;
    let mse = test_mse(&bundle.regressor, &handles.regressor, &mut params, &splits.test, cfg.batch_size)?;
    let result = SeedResult {
        seed,
        f1: macro_f1(&cm)?,
        accuracy: accuracy(&cm)?,
        test_mse: Some(mse),
        stopped_epoch,
    };
    Ok(TrainOutcome {
        result,
        model: TrainedModel {
            bundle,
            params,
            regressor: Some(handles.regressor),
            feature: handles.feature,
            classifier: handles.classifier,
        },
        stage1_losses,
        stage2_losses,
        stage1_val_scores,
        val_scores,
    })
}

/// Dispatch one seed's run to the configured method.
pub fn train_method(splits: &DataSplits, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    match cfg.method {
        Method::Joint => train_joint(splits, cfg, seed),
        Method::BaselineReal => train_baseline_real(splits, cfg, seed),
        Method::RegressionFirst => train_regression_first(splits, cfg, seed),
    }
}

fn tag_seed_error(e: Error, seed: u64) -> Error {
    let tag = |msg: String| format!("seed {seed}: {msg}");
    match e {
        Error::Shape(m) => Error::Shape(tag(m)),
        Error::Graph(m) => Error::Graph(tag(m)),
        Error::Config(m) => Error::Config(tag(m)),
        Error::Format(m) => Error::Format(tag(m)),
        Error::Data(m) => Error::Data(tag(m)),
        Error::Numeric(m) => Error::Numeric(tag(m)),
        Error::Io(e) => Error::Io(e),
    }
}

/// Run every configured seed on the same data splits and aggregate. A
/// failing seed aborts the whole run with the seed identified.
pub fn run_multi_seed(splits: &DataSplits, cfg: &TrainConfig) -> Result<(RunResult, Vec<TrainedModel>)> {
    cfg.validate()?;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    let mut models = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let outcome = train_method(splits, cfg, seed).map_err(|e| tag_seed_error(e, seed))?;
        seeds.push(outcome.result);
        models.push(outcome.model);
    }
    Ok((
        RunResult {
            method: cfg.method,
            seeds,
        },
        models,
    ))
}
