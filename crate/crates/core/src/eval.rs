//! Classification reports built from a confusion matrix.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::features::PatchGrid;
use crate::model::QmcNet;
use crate::nn;

/// Chunk size for inference batches.
pub const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Recall of each class.
    pub per_class_accuracy: Vec<f64>,
    /// Mean cross-entropy, when logits were available.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss: Option<f64>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl EvalReport {
    /// Metrics derived from a `K x K` confusion matrix. Classes with no
    /// predictions (or no samples) score 0 precision (or recall) and still
    /// count toward the macro averages.
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let k = confusion.len();
        if k == 0 || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::shape("confusion matrix must be square and non-empty".to_string()));
        }
        let total: usize = confusion.iter().flatten().sum();
        let diag: usize = (0..k).map(|i| confusion[i][i]).sum();
        let recall: Vec<f64> = (0..k).map(|i| ratio(confusion[i][i], confusion[i].iter().sum())).collect();
        let precision: Vec<f64> =
            (0..k).map(|j| ratio(confusion[j][j], (0..k).map(|i| confusion[i][j]).sum())).collect();
        let f1: Vec<f64> = precision
            .iter()
            .zip(&recall)
            .map(|(p, r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
        Ok(Self {
            accuracy: ratio(diag, total),
            macro_precision: mean(&precision),
            macro_recall: mean(&recall),
            macro_f1: mean(&f1),
            per_class_accuracy: recall,
            confusion,
            loss: None,
        })
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize], num_classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::LengthMismatch { what: "predictions", expected: labels.len(), got: predictions.len() });
        }
        let mut confusion = vec![vec![0; num_classes]; num_classes];
        for (&t, &p) in labels.iter().zip(predictions) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::invalid(format!("class index out of range for {num_classes} classes")));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn num_samples(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Largest absolute gap between the stored metrics and a fresh
    /// recomputation from the confusion matrix.
    pub fn consistency_error(&self) -> f64 {
        let Ok(fresh) = Self::from_confusion(self.confusion.clone()) else { return f64::INFINITY };
        let mut err: f64 = 0.0;
        for (a, b) in [
            (self.accuracy, fresh.accuracy),
            (self.macro_precision, fresh.macro_precision),
            (self.macro_recall, fresh.macro_recall),
            (self.macro_f1, fresh.macro_f1),
        ] {
            err = err.max((a - b).abs());
        }
        if self.per_class_accuracy.len() != fresh.per_class_accuracy.len() {
            return f64::INFINITY;
        }
        for (a, b) in self.per_class_accuracy.iter().zip(&fresh.per_class_accuracy) {
            err = err.max((a - b).abs());
        }
        err
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

/// Inference logits for the given grids, in order.
pub fn predict_logits(model: &QmcNet, grids: &[&PatchGrid]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(grids.len());
    for chunk in grids.chunks(EVAL_CHUNK) {
        out.extend(model.predict(chunk)?);
    }
    Ok(out)
}

/// Report for prepared grids with known labels, including mean loss.
pub fn evaluate_grids(model: &QmcNet, grids: &[&PatchGrid], labels: &[usize]) -> Result<EvalReport> {
    if grids.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let logits = predict_logits(model, grids)?;
    let mut loss = 0.0;
    for (l, &y) in logits.iter().zip(labels) {
        loss += nn::cross_entropy(l, y)?.0;
    }
    let preds: Vec<usize> = logits.iter().map(|l| argmax(l)).collect();
    let mut report = EvalReport::from_predictions(labels, &preds, model.config.num_classes)?;
    report.loss = Some(loss / labels.len() as f64);
    Ok(report)
}

/// Checks that a model can consume a dataset.
pub fn check_compatible(model: &QmcNet, dataset: &Dataset) -> Result<()> {
    if model.config.num_classes != dataset.num_classes() {
        return Err(Error::invalid(format!(
            "model predicts {} classes, dataset has {}",
            model.config.num_classes,
            dataset.num_classes()
        )));
    }
    let p = model.config.patch_size;
    if !dataset.height().is_multiple_of(p) || !dataset.width().is_multiple_of(p) {
        return Err(Error::shape(format!(
            "patch size {p} does not tile {}x{} images",
            dataset.height(),
            dataset.width()
        )));
    }
    Ok(())
}

/// Inference-mode report on a subset of a dataset.
pub fn evaluate(model: &QmcNet, dataset: &Dataset, indices: &[usize]) -> Result<EvalReport> {
    check_compatible(model, dataset)?;
    let grids = indices
        .iter()
        .map(|&i| model.prepare(&dataset.images[i]))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PatchGrid> = grids.iter().collect();
    let labels: Vec<usize> = indices.iter().map(|&i| dataset.images[i].label).collect();
    evaluate_grids(model, &refs, &labels)
}
