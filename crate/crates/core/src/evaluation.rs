//! Leave-one-out validation over whole images.
//!
//! Patches are sampled once for the whole dataset. Fold `k` trains on every
//! patch not taken from image `k`, scores image `k`'s own patches at the
//! 0.5 cut, and classifies image `k` as a whole with the sliding-window rule.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{Dataset, Label};
use crate::model::{prepare_patchset, train_prepared, ModelError, PreparedSample, TrainConfig};
use crate::predictor::{predict_image, CoverMode, PredictError};
use crate::sampler::{generate_patchset, PatchSet, SamplerConfig, SamplerError};

pub const PATCH_DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("leave-one-out needs at least two images with both classes present ({healthy} healthy, {diseased} diseased)")]
    InsufficientData { healthy: usize, diseased: usize },
    #[error("fold {fold} ({image_id}): {message}")]
    Fold {
        fold: usize,
        image_id: String,
        message: String,
    },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Predict(#[from] PredictError),
}

/// Fraction of patches where `p >= threshold` agrees with the label.
pub fn patch_accuracy(
    predictions: &[f64],
    labels: &[Label],
    threshold: f64,
) -> Result<f64, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| (p >= threshold) == (l == Label::LateBlight))
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub accuracy: f64,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_positive + self.false_negative + self.true_negative + self.false_positive
    }
}

/// Whole-image confusion counts, late blight being the positive class.
pub fn confusion(verdicts: &[Label], truths: &[Label]) -> Result<Confusion, EvalError> {
    if verdicts.len() != truths.len() {
        return Err(EvalError::LengthMismatch(verdicts.len(), truths.len()));
    }
    let mut c = Confusion::default();
    for (&v, &t) in verdicts.iter().zip(truths) {
        match (t, v) {
            (Label::LateBlight, Label::LateBlight) => c.true_positive += 1,
            (Label::LateBlight, Label::Healthy) => c.false_negative += 1,
            (Label::Healthy, Label::Healthy) => c.true_negative += 1,
            (Label::Healthy, Label::LateBlight) => c.false_positive += 1,
        }
    }
    c.accuracy = if truths.is_empty() {
        0.0
    } else {
        (c.true_positive + c.true_negative) as f64 / truths.len() as f64
    };
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooConfig {
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    /// Sliding-window side.
    pub window: usize,
    pub threshold: f64,
    pub cover: CoverMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchPrediction {
    /// Index into the patch set.
    pub patch_index: usize,
    pub label: Label,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub held_out_image_id: String,
    pub image_truth: Label,
    pub image_verdict: Label,
    pub max_prob: f64,
    pub positive_window_count: usize,
    pub patch_accuracy: f64,
    pub patches: Vec<PatchPrediction>,
    pub train_patch_count: usize,
    pub train_positive_count: usize,
    /// Distinct source images of the training patches.
    pub train_source_ids: Vec<String>,
    pub final_train_loss: f64,
    pub weight_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub config: LooConfig,
    pub dataset_digest: String,
    pub patchset_digest: String,
    pub folds: Vec<FoldResult>,
    pub mean_patch_accuracy: f64,
    pub confusion: Confusion,
}

impl LooReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// SHA-256 of [`Self::to_json`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// SHA-256 over the per-fold weight digests, in fold order.
    pub fn weights_digest(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.folds {
            h.update(f.weight_digest.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Recomputes every summary figure from the per-patch and per-image
    /// records; returns a description of the first disagreement.
    pub fn check_consistency(&self) -> Result<(), String> {
        let mut sum = 0.0;
        for f in &self.folds {
            let probs: Vec<f64> = f.patches.iter().map(|p| p.probability).collect();
            let labels: Vec<Label> = f.patches.iter().map(|p| p.label).collect();
            let acc = patch_accuracy(&probs, &labels, PATCH_DECISION_THRESHOLD)
                .map_err(|e| e.to_string())?;
            if acc != f.patch_accuracy {
                return Err(format!(
                    "fold {} patch accuracy {} != {}",
                    f.fold, f.patch_accuracy, acc
                ));
            }
            let verdict = if f.max_prob >= self.config.threshold {
                Label::LateBlight
            } else {
                Label::Healthy
            };
            if verdict != f.image_verdict {
                return Err(format!("fold {} verdict disagrees with max_prob", f.fold));
            }
            if f.train_source_ids.contains(&f.held_out_image_id) {
                return Err(format!("fold {} trained on its held-out image", f.fold));
            }
            sum += acc;
        }
        let mean = sum / self.folds.len() as f64;
        if mean != self.mean_patch_accuracy {
            return Err(format!(
                "mean patch accuracy {} != {}",
                self.mean_patch_accuracy, mean
            ));
        }
        let verdicts: Vec<Label> = self.folds.iter().map(|f| f.image_verdict).collect();
        let truths: Vec<Label> = self.folds.iter().map(|f| f.image_truth).collect();
        let c = confusion(&verdicts, &truths).map_err(|e| e.to_string())?;
        if c != self.confusion {
            return Err(format!("confusion {:?} != {:?}", self.confusion, c));
        }
        Ok(())
    }

    /// Plain-text per-fold accuracy table and whole-image confusion table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Leave-one-out patch accuracy");
        let _ = writeln!(s, "+------+----------------------+----------+");
        let _ = writeln!(s, "| Fold | Image                | Accuracy |");
        let _ = writeln!(s, "+------+----------------------+----------+");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "| {:>4} | {:<20} | {:>8.4} |",
                f.fold + 1,
                f.held_out_image_id,
                f.patch_accuracy
            );
        }
        let _ = writeln!(s, "+------+----------------------+----------+");
        let _ = writeln!(
            s,
            "| Mean accuracy               | {:>8.4} |",
            self.mean_patch_accuracy
        );
        let _ = writeln!(s, "+-----------------------------+----------+");
        let _ = writeln!(s);
        let c = &self.confusion;
        let _ = writeln!(
            s,
            "Whole-image predictions (threshold {})",
            self.config.threshold
        );
        let _ = writeln!(s, "+-------------+---------+-----------+");
        let _ = writeln!(s, "| Image class | Correct | Incorrect |");
        let _ = writeln!(s, "+-------------+---------+-----------+");
        let _ = writeln!(
            s,
            "| Late blight | {:>7} | {:>9} |",
            c.true_positive, c.false_negative
        );
        let _ = writeln!(
            s,
            "| Healthy     | {:>7} | {:>9} |",
            c.true_negative, c.false_positive
        );
        let _ = writeln!(s, "+-------------+---------+-----------+");
        let _ = writeln!(
            s,
            "Image-level accuracy: {:.4} ({} / {})",
            c.accuracy,
            c.true_positive + c.true_negative,
            c.total()
        );
        s
    }
}

/// Result of a leave-one-out run, with the shared patch set.
#[derive(Clone, Debug)]
pub struct LooRun {
    pub report: LooReport,
    pub patchset: PatchSet,
}

fn run_fold(
    fold: usize,
    dataset: &Dataset,
    patchset: &PatchSet,
    samples: &[PreparedSample],
    config: &LooConfig,
) -> Result<FoldResult, EvalError> {
    let started = Instant::now();
    let image = &dataset.images()[fold];
    let fold_err = |message: String| EvalError::Fold {
        fold,
        image_id: image.id.clone(),
        message,
    };
    let (held_out, training): (Vec<usize>, Vec<usize>) =
        (0..patchset.len()).partition(|&i| patchset.patches[i].spec.source_image_id == image.id);
    let train_source_ids: BTreeSet<&str> = training
        .iter()
        .map(|&i| patchset.patches[i].spec.source_image_id.as_str())
        .collect();
    if train_source_ids.contains(image.id.as_str()) {
        return Err(fold_err("held-out patches leaked into training".into()));
    }
    let train_refs: Vec<&PreparedSample> = training.iter().map(|&i| &samples[i]).collect();
    let model = train_prepared(&train_refs, &config.train, &patchset.digest())
        .map_err(|e| fold_err(e.to_string()))?;

    let patches: Vec<PatchPrediction> = held_out
        .iter()
        .map(|&i| PatchPrediction {
            patch_index: i,
            label: patchset.patches[i].label,
            probability: model.predict_prepared(&samples[i].input),
        })
        .collect();
    let probs: Vec<f64> = patches.iter().map(|p| p.probability).collect();
    let labels: Vec<Label> = patches.iter().map(|p| p.label).collect();
    let accuracy = patch_accuracy(&probs, &labels, PATCH_DECISION_THRESHOLD)?;

    let prediction = predict_image(
        &model,
        &image.pixels,
        config.window,
        config.threshold,
        config.cover,
    )
    .map_err(|e| fold_err(e.to_string()))?;
    info!(
        "fold {:>2} {}: truth {} verdict {} max_prob {:.4} patch accuracy {:.4} ({:.1}s)",
        fold + 1,
        image.id,
        image.label,
        prediction.verdict,
        prediction.max_prob,
        accuracy,
        started.elapsed().as_secs_f64()
    );
    Ok(FoldResult {
        fold,
        held_out_image_id: image.id.clone(),
        image_truth: image.label,
        image_verdict: prediction.verdict,
        max_prob: prediction.max_prob,
        positive_window_count: prediction.positive_windows.len(),
        patch_accuracy: accuracy,
        patches,
        train_patch_count: training.len(),
        train_positive_count: train_refs.iter().filter(|s| s.target == 1).count(),
        train_source_ids: train_source_ids.into_iter().map(String::from).collect(),
        final_train_loss: model
            .metadata
            .epoch_losses
            .last()
            .copied()
            .unwrap_or(f64::NAN),
        weight_digest: model.weight_digest(),
    })
}

/// Runs one fold per image. The result depends only on the dataset and the
/// configuration, not on how folds are scheduled.
pub fn run_loo(dataset: &Dataset, config: &LooConfig) -> Result<LooRun, EvalError> {
    let (healthy, diseased) = (dataset.healthy_count(), dataset.diseased_count());
    if dataset.len() < 2 || healthy == 0 || diseased == 0 {
        return Err(EvalError::InsufficientData { healthy, diseased });
    }
    config.train.validate()?;

    let started = Instant::now();
    let patchset = generate_patchset(dataset, config.sampler)?;
    let samples = prepare_patchset(&patchset, config.train.input_size)?;
    info!(
        "sampled {} patches ({} positive) in {:.1}s",
        patchset.len(),
        patchset.positives(),
        started.elapsed().as_secs_f64()
    );

    let folds = (0..dataset.len())
        .into_par_iter()
        .map(|k| run_fold(k, dataset, &patchset, &samples, config))
        .collect::<Result<Vec<_>, _>>()?;

    let mean_patch_accuracy =
        folds.iter().map(|f| f.patch_accuracy).sum::<f64>() / folds.len() as f64;
    let verdicts: Vec<Label> = folds.iter().map(|f| f.image_verdict).collect();
    let truths: Vec<Label> = folds.iter().map(|f| f.image_truth).collect();
    let report = LooReport {
        config: config.clone(),
        dataset_digest: dataset.digest(),
        patchset_digest: patchset.digest(),
        mean_patch_accuracy,
        confusion: confusion(&verdicts, &truths)?,
        folds,
    };
    info!(
        "leave-one-out finished in {:.1}s",
        started.elapsed().as_secs_f64()
    );
    Ok(LooRun { report, patchset })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Stream, UniformSource};

    #[test]
    fn accuracy_examples() {
        let labels = vec![Label::LateBlight, Label::Healthy, Label::Healthy];
        assert_eq!(
            patch_accuracy(&[0.9, 0.1, 0.4999], &labels, 0.5).unwrap(),
            1.0
        );
        assert_eq!(
            patch_accuracy(&[0.5, 0.5, 0.1], &labels, 0.5).unwrap(),
            2.0 / 3.0
        );

        let labels = vec![Label::Healthy; 126];
        let mut preds = vec![0.0; 126];
        preds[0] = 0.9;
        preds[1] = 0.7;
        let acc = patch_accuracy(&preds, &labels, 0.5).unwrap();
        assert_eq!(format!("{acc:.4}"), "0.9841");

        assert!(matches!(
            patch_accuracy(&[0.1], &[], 0.5),
            Err(EvalError::LengthMismatch(1, 0))
        ));
    }

    #[test]
    fn random_predictions_score_about_half() {
        let mut s = Stream::new(4, 0);
        let n = 10_000;
        let preds: Vec<f64> = (0..n).map(|_| s.next_unit()).collect();
        let labels: Vec<Label> = (0..n)
            .map(|_| Label::from_target((s.next_unit() < 0.5) as u8))
            .collect();
        let acc = patch_accuracy(&preds, &labels, 0.5).unwrap();
        assert!((acc - 0.5).abs() < 0.02, "{acc}");
    }

    #[test]
    fn confusion_examples() {
        let mut truths = vec![Label::LateBlight; 9];
        truths.extend(vec![Label::Healthy; 13]);
        let mut verdicts = truths.clone();
        verdicts[21] = Label::LateBlight;
        let c = confusion(&verdicts, &truths).unwrap();
        assert_eq!(
            (
                c.true_positive,
                c.false_negative,
                c.true_negative,
                c.false_positive
            ),
            (9, 0, 12, 1)
        );
        assert_eq!(format!("{:.4}", c.accuracy), "0.9545");

        let t = [
            Label::LateBlight,
            Label::Healthy,
            Label::Healthy,
            Label::LateBlight,
        ];
        assert_eq!(confusion(&t, &t).unwrap().accuracy, 1.0);
        let inverted: Vec<Label> = t
            .iter()
            .map(|l| {
                if *l == Label::Healthy {
                    Label::LateBlight
                } else {
                    Label::Healthy
                }
            })
            .collect();
        let c = confusion(&inverted, &t).unwrap();
        assert_eq!((c.true_positive, c.true_negative), (0, 0));
        assert!(confusion(&t[..2], &t).is_err());
    }
}
