//! Confusion matrices, scalar classification metrics and ROC AUC.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::ensemble::ProbabilityDistribution;
use crate::error::{Error, Result};

/// Counts with `positive` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(preds: &[Label], truth: &[Label]) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("no predictions to evaluate".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truth) {
        match (p, t) {
            (Label::Positive, Label::Positive) => cm.tp += 1,
            (Label::Positive, Label::Negative) => cm.fp += 1,
            (Label::Negative, Label::Negative) => cm.tn += 1,
            (Label::Negative, Label::Positive) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Metric whose denominator was zero and was reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    Precision,
    Recall,
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: Vec<Degenerate>,
}

pub fn scalar_metrics(cm: &ConfusionMatrix) -> ScalarMetrics {
    let n = cm.total();
    let mut degenerate = Vec::new();
    let ratio = |num: usize, den: usize, flag: Degenerate, flags: &mut Vec<Degenerate>| {
        if den == 0 {
            flags.push(flag);
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = if n == 0 {
        0.0
    } else {
        (cm.tp + cm.tn) as f64 / n as f64
    };
    let precision = ratio(cm.tp, cm.tp + cm.fp, Degenerate::Precision, &mut degenerate);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, Degenerate::Recall, &mut degenerate);
    let f1 = if precision + recall == 0.0 {
        degenerate.push(Degenerate::F1);
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ScalarMetrics {
        accuracy,
        precision,
        recall,
        f1,
        degenerate,
    }
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half. Computed exactly from sorted scores in `O(n log n)`.
pub fn roc_auc(scores: &[f64], truth: &[Label]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            truth.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidInput(format!("score {s} is not a number")));
    }
    let positives = truth.iter().filter(|&&l| l == Label::Positive).count() as u128;
    let negatives = truth.len() as u128 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidInput(
            "ROC AUC is undefined when the truth contains a single class".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the number of correctly ordered pairs, ties counted once
    let mut doubled: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group = &order[start..end];
        let pos = group.iter().filter(|&&i| truth[i] == Label::Positive).count() as u128;
        let neg = group.len() as u128 - pos;
        doubled += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        start = end;
    }
    Ok(doubled as f64 / (2 * positives * negatives) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the truth holds a single class.
    pub roc_auc: Option<f64>,
    pub confusion: ConfusionMatrix,
    #[serde(default)]
    pub degenerate: Vec<Degenerate>,
}

/// Scores predicted distributions against the truth. The predicted label is
/// the distribution's argmax and the AUC score is `P(positive)`.
pub fn evaluate(
    model: &str,
    predictions: &[ProbabilityDistribution],
    truth: &[Label],
) -> Result<EvaluationReport> {
    let labels: Vec<Label> = predictions.iter().map(|p| p.argmax()).collect();
    let cm = confusion(&labels, truth)?;
    let scalars = scalar_metrics(&cm);
    let scores: Vec<f64> = predictions.iter().map(|p| p.positive()).collect();
    let single_class = truth.iter().all(|&t| t == truth[0]);
    let roc_auc = if single_class {
        None
    } else {
        Some(roc_auc(&scores, truth)?)
    };
    Ok(EvaluationReport {
        model: model.to_string(),
        n: cm.total(),
        accuracy: scalars.accuracy,
        precision: scalars.precision,
        recall: scalars.recall,
        f1: scalars.f1,
        roc_auc,
        confusion: cm,
        degenerate: scalars.degenerate,
    })
}

/// Evaluation reports for every model of a run, ensemble included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub reports: Vec<EvaluationReport>,
}

impl ReportBundle {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes =
            serde_json::to_vec_pretty(self).map_err(|e| Error::json("report bundle", e))?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bundle: ReportBundle = serde_json::from_slice(&bytes)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        if bundle.reports.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{}: report bundle is empty",
                path.display()
            )));
        }
        Ok(bundle)
    }

    /// Reports ordered by accuracy, best first; equal accuracies keep bundle
    /// order.
    pub fn ranked(&self) -> Vec<&EvaluationReport> {
        let mut ranked: Vec<&EvaluationReport> = self.reports.iter().collect();
        ranked.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
        ranked
    }

    /// Text table with one row per report, best accuracy first.
    pub fn render_table(&self) -> String {
        let ranked = self.ranked();
        let width = ranked
            .iter()
            .map(|r| r.model.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>7}\n",
            "Model", "Accuracy", "F1", "ROC AUC", "n"
        );
        for r in ranked {
            let auc = r
                .roc_auc
                .map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
            out.push_str(&format!(
                "{:<width$}  {:>8.4}  {:>8.4}  {:>8}  {:>7}\n",
                r.model, r.accuracy, r.f1, auc, r.n
            ));
        }
        out
    }

    /// `model,accuracy,f1,roc_auc` rows, best accuracy first.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("model,accuracy,f1,roc_auc\n");
        for r in self.ranked() {
            let auc = r.roc_auc.map_or_else(String::new, |a| a.to_string());
            out.push_str(&format!("{},{},{},{}\n", r.model, r.accuracy, r.f1, auc));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Negative as N, Positive as P};

    #[test]
    fn confusion_hand_count() {
        let cm = confusion(&[P, P, N, N], &[P, N, N, P]).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix {
                tp: 1,
                fp: 1,
                tn: 1,
                fn_: 1
            }
        );
        let cm = confusion(&[P, N, P], &[P, N, P]).unwrap();
        assert_eq!((cm.fp, cm.fn_), (0, 0));
        let cm = confusion(&[P, P], &[N, N]).unwrap();
        assert_eq!((cm.tn, cm.tp, cm.fn_, cm.fp), (0, 0, 0, 2));
        assert!(confusion(&[P], &[P, N]).is_err());
        assert!(confusion(&[], &[]).is_err());
    }

    #[test]
    fn scalar_hand_computed() {
        let m = scalar_metrics(&ConfusionMatrix {
            tp: 2,
            fp: 1,
            fn_: 1,
            tn: 0,
        });
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.accuracy - 0.5).abs() < 1e-15);
        assert!(m.degenerate.is_empty());

        let perfect = scalar_metrics(&ConfusionMatrix {
            tp: 3,
            fp: 0,
            fn_: 0,
            tn: 4,
        });
        assert_eq!(
            (perfect.accuracy, perfect.precision, perfect.recall, perfect.f1),
            (1.0, 1.0, 1.0, 1.0)
        );

        let none_predicted = scalar_metrics(&ConfusionMatrix {
            tp: 0,
            fp: 0,
            fn_: 2,
            tn: 2,
        });
        assert_eq!(none_predicted.precision, 0.0);
        assert!(none_predicted.degenerate.contains(&Degenerate::Precision));
    }

    #[test]
    fn auc_examples() {
        let scores = [0.9, 0.8, 0.3, 0.2];
        assert_eq!(roc_auc(&scores, &[P, P, N, N]).unwrap(), 1.0);
        assert_eq!(roc_auc(&scores, &[P, N, P, N]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.4; 4], &[P, N, P, N]).unwrap(), 0.5);
        assert!(roc_auc(&scores, &[P, P, P, P]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.1], &[P, N]).is_err());
    }

    #[test]
    fn evaluate_assembles_report() {
        let preds: Vec<_> = [0.9, 0.4, 0.6, 0.1]
            .iter()
            .map(|&p| ProbabilityDistribution::from_positive(p).unwrap())
            .collect();
        let report = evaluate("lr", &preds, &[P, P, N, N]).unwrap();
        assert_eq!(report.n, 4);
        assert_eq!(report.accuracy, 0.5);
        assert_eq!(report.roc_auc, Some(0.75));
        let json = serde_json::to_value(&report).unwrap();
        for key in ["model", "n", "accuracy", "precision", "recall", "f1", "roc_auc"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["confusion"]["fn"], 1);
        assert!(evaluate("lr", &[], &[]).is_err());
    }

    #[test]
    fn bundle_table_sorted_by_accuracy() {
        let report = |model: &str, accuracy: f64| EvaluationReport {
            model: model.into(),
            n: 10,
            accuracy,
            precision: accuracy,
            recall: accuracy,
            f1: accuracy,
            roc_auc: Some(accuracy),
            confusion: ConfusionMatrix::default(),
            degenerate: vec![],
        };
        let bundle = ReportBundle {
            reports: vec![report("svm", 0.8961), report("roberta", 0.9302)],
        };
        let table = bundle.render_table();
        let rows: Vec<&str> = table.lines().collect();
        assert!(rows[1].starts_with("roberta"));
        assert!(rows[2].starts_with("svm"));
        assert!(bundle.plot_csv().starts_with("model,accuracy,f1,roc_auc\nroberta,"));
    }
}
