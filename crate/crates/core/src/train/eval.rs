use serde::{Deserialize, Serialize};

use super::{extract_embeddings, EmbeddingSet, TrainError};
use crate::data::{DatasetManifest, Split};
use crate::model::ModelBundle;
use crate::nnops::{argmax, Dense};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: String,
    pub accuracy: f64,
    pub samples: usize,
}

/// Per-class and overall accuracy with the confusion matrix (rows = true class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassAccuracy>,
    pub overall_accuracy: f64,
    pub total: usize,
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_predictions(labels: &[String], truth: &[usize], predicted: &[usize]) -> Result<Self, TrainError> {
        if truth.len() != predicted.len() {
            return Err(TrainError::PredictionCount(predicted.len(), truth.len()));
        }
        if truth.is_empty() {
            return Err(TrainError::EmptySplit);
        }
        let k = labels.len();
        let mut confusion = vec![vec![0usize; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            for idx in [t, p] {
                if idx >= k {
                    return Err(TrainError::LabelOutOfRange(idx, k));
                }
            }
            confusion[t][p] += 1;
        }
        let classes = labels
            .iter()
            .zip(&confusion)
            .enumerate()
            .map(|(i, (label, row))| {
                let samples: usize = row.iter().sum();
                ClassAccuracy {
                    label: label.clone(),
                    accuracy: if samples == 0 { 0.0 } else { row[i] as f64 / samples as f64 },
                    samples,
                }
            })
            .collect();
        let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
        Ok(Self {
            classes,
            overall_accuracy: trace as f64 / truth.len() as f64,
            total: truth.len(),
            confusion,
        })
    }

    /// Plain-text table: one row per class plus the overall line.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12} {:>8} {:>10}\n", "CLASS", "ACCURACY", "# SAMPLES");
        for c in &self.classes {
            s.push_str(&format!("{:<12} {:>8.2} {:>10}\n", c.label, c.accuracy, c.samples));
        }
        s.push_str(&format!("{:<12} {:>8.4} {:>10}\n", "overall", self.overall_accuracy, self.total));
        s
    }
}

/// Argmax class per row; ties go to the lowest class index.
pub fn predict(head: &Dense<f32>, set: &EmbeddingSet) -> Result<Vec<usize>, TrainError> {
    if set.dim() != head.in_dim() {
        return Err(TrainError::DimMismatch {
            expected: head.in_dim(),
            got: set.dim(),
        });
    }
    (0..set.len())
        .map(|i| {
            let logits = head.forward(set.row(i))?;
            Ok(argmax(&logits).unwrap_or(0))
        })
        .collect()
}

pub fn evaluate_embeddings(head: &Dense<f32>, set: &EmbeddingSet, labels: &[String]) -> Result<EvalReport, TrainError> {
    let preds = predict(head, set)?;
    EvalReport::from_predictions(labels, set.labels(), &preds)
}

/// Classifies every entry of `split` and tabulates the results against the bundle labels.
pub fn evaluate(bundle: &ModelBundle, manifest: &DatasetManifest, split: Split) -> Result<EvalReport, TrainError> {
    let set = extract_embeddings(bundle, manifest, Some(split))?;
    if set.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    evaluate_embeddings(bundle.head(), &set, bundle.labels())
}
