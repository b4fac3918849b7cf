//! L2-regularized linear classifiers trained by seeded stochastic
//! (sub)gradient descent.
//!
//! Both objectives have the form `mean(loss(y * (w.x + b))) + l2 / 2 * |w|^2`
//! with an unregularized bias: logistic loss `ln(1 + exp(-y m))` and hinge loss
//! `max(0, 1 - y m)`.
//!
//! One epoch is a pass over a freshly shuffled order. After each epoch the
//! full objective is evaluated: an epoch that raises it is rolled back and
//! the step size halved, and so is an epoch that improves it by less than the
//! relative tolerance (after being kept). Training stops at the epoch cap or
//! once the step size has been halved ten times. Accepted objectives are
//! therefore non-increasing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::calibration::{fit_platt, Calibrator};
use super::{check_training_set, ProbabilisticClassifier, TrainConfig};
use crate::corpus::Label;
use crate::ensemble::ProbabilityDistribution;
use crate::error::{Error, Result};
use crate::features::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearKind {
    Logistic,
    Svm,
}

impl LinearKind {
    fn loss(self, label_sign: f64, margin: f64) -> f64 {
        let z = label_sign * margin;
        match self {
            LinearKind::Logistic => softplus(-z),
            LinearKind::Svm => (1.0 - z).max(0.0),
        }
    }

    /// d loss / d margin (a subgradient for the hinge).
    fn slope(self, label_sign: f64, margin: f64) -> f64 {
        let z = label_sign * margin;
        match self {
            LinearKind::Logistic => -label_sign * sigmoid(-z),
            LinearKind::Svm => {
                if z < 1.0 {
                    -label_sign
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    /// Decision value `w.x + b`.
    pub fn margin(&self, x: &SparseVector) -> Result<f64> {
        let size = self.weights.len();
        if x.dimension_bound() > size {
            return Err(Error::IndexOutOfBounds {
                index: x.dimension_bound() - 1,
                size,
            });
        }
        Ok(x.dot(&self.weights) + self.bias)
    }
}

impl ProbabilisticClassifier for LinearModel {
    /// Logistic models only; SVM margins need a [`CalibratedSvm`].
    fn predict_proba(&self, x: &SparseVector) -> Result<ProbabilityDistribution> {
        match self.kind {
            LinearKind::Logistic => ProbabilityDistribution::from_positive(sigmoid(self.margin(x)?)),
            LinearKind::Svm => Err(Error::InvalidInput(
                "an uncalibrated SVM has no probability output".into(),
            )),
        }
    }
}

/// Linear SVM plus the sigmoid mapping its margins to probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedSvm {
    pub model: LinearModel,
    pub calibrator: Calibrator,
}

impl ProbabilisticClassifier for CalibratedSvm {
    fn predict_proba(&self, x: &SparseVector) -> Result<ProbabilityDistribution> {
        let margin = self.model.margin(x)?;
        ProbabilityDistribution::from_positive(self.calibrator.probability(margin))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

const CHUNK: usize = 2048;

fn objective(
    kind: LinearKind,
    data: &[(SparseVector, Label)],
    weights: &[f64],
    bias: f64,
    l2: f64,
) -> f64 {
    // fixed chunking keeps the summation order independent of thread count
    let partial: Vec<f64> = data
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|(x, y)| kind.loss(y.sign(), x.dot(weights) + bias))
                .sum::<f64>()
        })
        .collect();
    let data_term = partial.iter().sum::<f64>() / data.len() as f64;
    data_term + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Regularized mean logistic loss.
pub fn logistic_objective(
    data: &[(SparseVector, Label)],
    weights: &[f64],
    bias: f64,
    l2: f64,
) -> f64 {
    objective(LinearKind::Logistic, data, weights, bias, l2)
}

/// Regularized mean hinge loss.
pub fn hinge_objective(data: &[(SparseVector, Label)], weights: &[f64], bias: f64, l2: f64) -> f64 {
    objective(LinearKind::Svm, data, weights, bias, l2)
}

/// Analytic gradient of [`logistic_objective`] as `(d/dw, d/db)`.
pub fn logistic_gradient(
    data: &[(SparseVector, Label)],
    weights: &[f64],
    bias: f64,
    l2: f64,
) -> (Vec<f64>, f64) {
    let n = data.len() as f64;
    let mut grad: Vec<f64> = weights.iter().map(|w| l2 * w).collect();
    let mut grad_bias = 0.0;
    for (x, y) in data {
        let slope = LinearKind::Logistic.slope(y.sign(), x.dot(weights) + bias) / n;
        for (j, v) in x.iter() {
            grad[j] += slope * v;
        }
        grad_bias += slope;
    }
    (grad, grad_bias)
}

/// Objective values recorded during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Objective at the zero model, then after each accepted epoch.
    pub objective: Vec<f64>,
    /// Epochs run, rejected ones included.
    pub epochs: usize,
}

/// Weight vector stored as `scale * v` so the L2 shrink is O(1) per step.
struct ScaledWeights {
    v: Vec<f64>,
    scale: f64,
}

impl ScaledWeights {
    fn dot(&self, x: &SparseVector) -> f64 {
        self.scale * x.dot(&self.v)
    }

    fn materialize(&self) -> Vec<f64> {
        self.v.iter().map(|v| v * self.scale).collect()
    }

    fn renormalize(&mut self) {
        for v in self.v.iter_mut() {
            *v *= self.scale;
        }
        self.scale = 1.0;
    }
}

const MAX_HALVINGS: u32 = 10;

fn train_linear(
    kind: LinearKind,
    train: &[(SparseVector, Label)],
    n_features: usize,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<(LinearModel, TrainTrace)> {
    cfg.validate()?;
    check_training_set(train, n_features)?;
    if epochs == 0 {
        return Err(Error::Config("iteration count must be at least 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut w = ScaledWeights {
        v: vec![0.0; n_features],
        scale: 1.0,
    };
    let mut bias = 0.0;
    let mut best = objective(kind, train, &w.v, bias, cfg.l2);
    let mut trace = TrainTrace {
        objective: vec![best],
        epochs: 0,
    };
    let mut eta = cfg.learning_rate;
    let mut halvings = 0;
    let mut snapshot = w.v.clone();

    while trace.epochs < epochs && halvings <= MAX_HALVINGS {
        trace.epochs += 1;
        w.renormalize();
        snapshot.copy_from_slice(&w.v);
        let snapshot_bias = bias;

        order.shuffle(&mut rng);
        let shrink = 1.0 - eta * cfg.l2;
        for &i in &order {
            let (x, y) = &train[i];
            let slope = kind.slope(y.sign(), w.dot(x) + bias);
            w.scale *= shrink;
            if w.scale < 1e-9 {
                w.renormalize();
            }
            if slope != 0.0 {
                let step = eta * slope / w.scale;
                for (j, value) in x.iter() {
                    w.v[j] -= step * value;
                }
                bias -= eta * slope;
            }
        }
        w.renormalize();

        let current = objective(kind, train, &w.v, bias, cfg.l2);
        if !current.is_finite() {
            return Err(Error::Diverged(format!(
                "objective became {current} at epoch {}; lower train.learning_rate (currently {})",
                trace.epochs, cfg.learning_rate
            )));
        }
        if current > best {
            w.v.copy_from_slice(&snapshot);
            bias = snapshot_bias;
            eta *= 0.5;
            halvings += 1;
            continue;
        }
        let improvement = (best - current) / best.abs().max(f64::MIN_POSITIVE);
        best = current;
        trace.objective.push(current);
        if improvement < cfg.tolerance {
            eta *= 0.5;
            halvings += 1;
        }
    }

    Ok((
        LinearModel {
            kind,
            weights: w.materialize(),
            bias,
        },
        trace,
    ))
}

pub fn train_logistic(
    train: &[(SparseVector, Label)],
    n_features: usize,
    cfg: &TrainConfig,
) -> Result<LinearModel> {
    train_logistic_traced(train, n_features, cfg).map(|(m, _)| m)
}

pub fn train_logistic_traced(
    train: &[(SparseVector, Label)],
    n_features: usize,
    cfg: &TrainConfig,
) -> Result<(LinearModel, TrainTrace)> {
    train_linear(LinearKind::Logistic, train, n_features, cfg.lr_iterations, cfg)
}

/// Hinge-loss model without calibration.
pub fn train_svm_margins(
    train: &[(SparseVector, Label)],
    n_features: usize,
    cfg: &TrainConfig,
) -> Result<(LinearModel, TrainTrace)> {
    train_linear(LinearKind::Svm, train, n_features, cfg.svm_iterations, cfg)
}

/// Trains the SVM on all data, and fits its calibrator on out-of-fold margins
/// from `cfg.calibration_folds` seeded folds. When some fold's complement
/// lacks a class (tiny data sets), the calibrator is fitted on in-sample
/// margins instead.
pub fn train_svm(
    train: &[(SparseVector, Label)],
    n_features: usize,
    cfg: &TrainConfig,
) -> Result<(LinearModel, Calibrator)> {
    let (model, _) = train_svm_margins(train, n_features, cfg)?;
    let folds = fold_assignment(train.len(), cfg.calibration_folds, cfg.seed);
    let out_of_fold = (0..cfg.calibration_folds)
        .into_par_iter()
        .map(|fold| -> Result<Option<Vec<(usize, f64)>>> {
            let rest: Vec<(SparseVector, Label)> = train
                .iter()
                .zip(&folds)
                .filter(|(_, &f)| f != fold)
                .map(|(example, _)| example.clone())
                .collect();
            let has_both = Label::ALL
                .iter()
                .all(|l| rest.iter().any(|(_, y)| y == l));
            if !has_both {
                return Ok(None);
            }
            let (fold_model, _) = train_svm_margins(&rest, n_features, cfg)?;
            train
                .iter()
                .enumerate()
                .filter(|(i, _)| folds[*i] == fold)
                .map(|(i, (x, _))| fold_model.margin(x).map(|m| (i, m)))
                .collect::<Result<Vec<_>>>()
                .map(Some)
        })
        .collect::<Result<Vec<_>>>()?;

    let margins: Vec<f64> = if cfg.calibration_folds >= 2 && out_of_fold.iter().all(Option::is_some)
    {
        let mut margins = vec![0.0; train.len()];
        for (i, m) in out_of_fold.into_iter().flatten().flatten() {
            margins[i] = m;
        }
        margins
    } else {
        train
            .iter()
            .map(|(x, _)| model.margin(x))
            .collect::<Result<_>>()?
    };
    let labels: Vec<Label> = train.iter().map(|(_, y)| *y).collect();
    let calibrator = fit_platt(&margins, &labels)?;
    Ok((model, calibrator))
}

/// Seeded round-robin fold ids over a shuffled index order.
fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let folds = folds.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f01d));
    let mut assignment = vec![0; n];
    for (rank, i) in order.into_iter().enumerate() {
        assignment[i] = rank % folds;
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(x: f64, label: Label) -> (SparseVector, Label) {
        (SparseVector::from_pairs([(0, x)]).unwrap(), label)
    }

    fn separable() -> Vec<(SparseVector, Label)> {
        vec![point(1.0, Label::Positive), point(-1.0, Label::Negative)]
    }

    #[test]
    fn logistic_separates_two_points() {
        let model = train_logistic(&separable(), 1, &TrainConfig::default()).unwrap();
        let p = model
            .predict_proba(&SparseVector::from_pairs([(0, 1.0)]).unwrap())
            .unwrap();
        assert!(p.positive() > 0.9, "{p:?}");
    }

    #[test]
    fn zero_margin_is_one_half() {
        let model = LinearModel {
            kind: LinearKind::Logistic,
            weights: vec![1.0, -1.0],
            bias: 0.0,
        };
        let x = SparseVector::from_pairs([(0, 0.5), (1, 0.5)]).unwrap();
        assert_eq!(model.predict_proba(&x).unwrap().as_array(), [0.5, 0.5]);
    }

    #[test]
    fn zero_iterations_are_rejected() {
        let cfg = TrainConfig {
            lr_iterations: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_logistic(&separable(), 1, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bias_gradient_vanishes_at_origin_on_balanced_data() {
        let data = vec![
            point(0.3, Label::Positive),
            point(0.7, Label::Negative),
            point(-0.2, Label::Positive),
            point(0.1, Label::Negative),
        ];
        let (_, grad_bias) = logistic_gradient(&data, &[0.0], 0.0, 0.1);
        assert_eq!(grad_bias, 0.0);
    }

    #[test]
    fn svm_separates_two_points() {
        let (model, calibrator) = train_svm(&separable(), 1, &TrainConfig::default()).unwrap();
        let plus = model.margin(&SparseVector::from_pairs([(0, 1.0)]).unwrap()).unwrap();
        let minus = model.margin(&SparseVector::from_pairs([(0, -1.0)]).unwrap()).unwrap();
        assert!(plus > 0.0 && minus < 0.0);
        let mid = calibrator.probability(0.0);
        assert!((0.25..=0.75).contains(&mid), "{mid}");
    }

    #[test]
    fn flipping_labels_negates_margins() {
        let data = vec![
            (SparseVector::from_pairs([(0, 0.6), (1, 0.8)]).unwrap(), Label::Positive),
            (SparseVector::from_pairs([(1, 1.0)]).unwrap(), Label::Negative),
            (SparseVector::from_pairs([(0, 1.0)]).unwrap(), Label::Positive),
            (SparseVector::from_pairs([(0, 0.2), (2, 0.9)]).unwrap(), Label::Negative),
        ];
        let flipped: Vec<_> = data.iter().map(|(x, y)| (x.clone(), y.flipped())).collect();
        let cfg = TrainConfig::default();
        let (a, _) = train_svm_margins(&data, 3, &cfg).unwrap();
        let (b, _) = train_svm_margins(&flipped, 3, &cfg).unwrap();
        for (x, _) in &data {
            assert_eq!(a.margin(x).unwrap(), -b.margin(x).unwrap());
        }
    }

    #[test]
    fn uncalibrated_svm_has_no_probabilities() {
        let model = LinearModel {
            kind: LinearKind::Svm,
            weights: vec![1.0],
            bias: 0.0,
        };
        assert!(model.predict_proba(&SparseVector::empty()).is_err());
    }

    #[test]
    fn divergence_names_learning_rate() {
        let cfg = TrainConfig {
            learning_rate: 1e300,
            l2: 0.0,
            ..TrainConfig::default()
        };
        let data = vec![
            (SparseVector::from_pairs([(0, 1e10)]).unwrap(), Label::Positive),
            (SparseVector::from_pairs([(0, -1e10)]).unwrap(), Label::Negative),
            (SparseVector::from_pairs([(0, 1e10)]).unwrap(), Label::Negative),
        ];
        let err = train_logistic(&data, 1, &cfg).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn accepted_objectives_never_increase() {
        let data: Vec<_> = (0..40)
            .map(|i| {
                let x = (i as f64 * 0.37).sin();
                let label = if x + 0.3 * (i as f64 * 1.3).cos() > 0.0 {
                    Label::Positive
                } else {
                    Label::Negative
                };
                (
                    SparseVector::from_pairs([(0, x), (1, (i as f64 * 0.11).cos())]).unwrap(),
                    label,
                )
            })
            .collect();
        let (_, trace) = train_logistic_traced(&data, 2, &TrainConfig::default()).unwrap();
        assert!(trace.objective.windows(2).all(|w| w[1] <= w[0]));
        assert!(trace.objective.last() < trace.objective.first());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig::default();
        let a = train_svm(&separable(), 1, &cfg).unwrap();
        let b = train_svm(&separable(), 1, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
