//! Classification and regression metrics computed from trained models.
//!
//! All reductions accumulate in f64. Reported standard deviations throughout
//! the project are population (÷N) standard deviations.

use crate::error::{Error, Result};
use crate::models::{
    feature_forward, classifier_forward, regressor_forward, FeatureExtractorSpec, FeatureParams,
    LayerParams, RegressorParams, RegressorSpec,
};
use crate::preprocessing::{stack_windows, LabeledWindow};
use crate::rng::StreamRng;
use crate::tensor::{Graph, Mode, ParamSet, Tensor};

/// Class-count table with rows indexed by true class and columns by
/// predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::Config("confusion matrix needs at least one class".into()));
        }
        Ok(ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        })
    }

    pub fn from_pairs(n_classes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(n_classes)?;
        for &(truth, pred) in pairs {
            cm.record(truth, pred)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.n_classes || pred >= self.n_classes {
            return Err(Error::Data(format!(
                "class pair ({truth}, {pred}) out of range for {} classes",
                self.n_classes
            )));
        }
        self.counts[truth * self.n_classes + pred] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> usize {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Unweighted mean over classes of 2PR/(P+R); a class with no support in
/// either truth or predictions contributes 0.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::Data("cannot compute F1 of an empty confusion matrix".into()));
    }
    let n = cm.n_classes;
    let mut sum = 0.0;
    for c in 0..n {
        let tp = cm.count(c, c) as f64;
        let truth_total: usize = (0..n).map(|p| cm.count(c, p)).sum();
        let pred_total: usize = (0..n).map(|t| cm.count(t, c)).sum();
        // 2PR/(P+R) = 2·tp / (truth_total + pred_total); zero support → 0.
        let denom = (truth_total + pred_total) as f64;
        if denom > 0.0 {
            sum += 2.0 * tp / denom;
        }
    }
    Ok(sum / n as f64)
}

/// Fraction of samples on the diagonal.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("cannot compute accuracy of an empty confusion matrix".into()));
    }
    let correct: usize = (0..cm.n_classes).map(|c| cm.count(c, c)).sum();
    Ok(correct as f64 / total as f64)
}

/// Row-wise argmax with ties broken toward the lowest class index.
pub fn argmax_rows(logits: &Tensor<f32>, n_classes: usize) -> Vec<usize> {
    let rows = logits.numel() / n_classes;
    (0..rows)
        .map(|r| {
            let row = &logits.data()[r * n_classes..(r + 1) * n_classes];
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn batches(n: usize, batch: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n.div_ceil(batch)).map(move |b| (b * batch..((b + 1) * batch).min(n)).collect())
}

/// Run the feature extractor + classifier over real sensor windows in eval
/// mode and tally the confusion matrix.
pub fn classification_eval(
    spec: &FeatureExtractorSpec,
    feature: &FeatureParams,
    classifier: &LayerParams,
    n_classes: usize,
    params: &mut ParamSet<f32>,
    windows: &[LabeledWindow],
    batch: usize,
) -> Result<ConfusionMatrix> {
    if windows.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty window set".into()));
    }
    let mut cm = ConfusionMatrix::new(n_classes)?;
    let mut rng = StreamRng::new(0, "eval.unused");
    for idx in batches(windows.len(), batch.max(1)) {
        let (_, sensor, labels) = stack_windows(windows, &idx)?;
        let mut g = Graph::<f32>::new();
        let binding = params.bind(&mut g, false);
        let x = g.leaf(sensor, false);
        let feats = feature_forward(&mut g, x, spec, feature, &binding, params, Mode::Eval, &mut rng)?;
        let logits = classifier_forward(&mut g, feats, spec.feature_width, classifier, &binding)?;
        let preds = argmax_rows(g.value(logits), n_classes);
        binding.finish(&mut g, None, params);
        for (&truth, pred) in labels.iter().zip(preds) {
            cm.record(truth, pred)?;
        }
    }
    Ok(cm)
}

/// Mean squared error of the regressor against the windows' (standardized)
/// sensor targets, averaged over every element of every test window, in
/// eval mode.
pub fn test_mse(
    spec: &RegressorSpec,
    regressor: &RegressorParams,
    params: &mut ParamSet<f32>,
    windows: &[LabeledWindow],
    batch: usize,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty window set".into()));
    }
    let mut rng = StreamRng::new(0, "eval.unused");
    let mut sse = 0.0f64;
    let mut count = 0usize;
    for idx in batches(windows.len(), batch.max(1)) {
        let (pose, sensor, _) = stack_windows(windows, &idx)?;
        let mut g = Graph::<f32>::new();
        let binding = params.bind(&mut g, false);
        let x = g.leaf(pose, false);
        let y = regressor_forward(&mut g, x, spec, regressor, &binding, Mode::Eval, &mut rng)?;
        let out = g.value(y);
        for (&a, &b) in out.data().iter().zip(sensor.data()) {
            let d = a as f64 - b as f64;
            sse += d * d;
        }
        count += out.numel();
        binding.finish(&mut g, None, params);
    }
    Ok(sse / count as f64)
}
