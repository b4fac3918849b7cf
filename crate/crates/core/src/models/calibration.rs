//! Platt scaling: a sigmoid fitted on decision margins,
//! `P(positive | m) = 1 / (1 + exp(a * m + b))`.
//!
//! Fitting follows the Newton method with backtracking line search and
//! smoothed targets `(N+ + 1) / (N+ + 2)` and `1 / (N- + 2)`.

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Outputs are clamped to `[EPS, 1 - EPS]` so they stay strictly inside (0, 1).
const EPS: f64 = 1e-12;
const MAX_ITERATIONS: usize = 100;
const MIN_STEP: f64 = 1e-10;
const HESSIAN_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    pub a: f64,
    pub b: f64,
}

impl Calibrator {
    pub fn probability(&self, margin: f64) -> f64 {
        let z = self.a * margin + self.b;
        let p = if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        };
        p.clamp(EPS, 1.0 - EPS)
    }
}

/// Negative log-likelihood of targets under `sigmoid(-(a f + b))`.
fn objective(margins: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    margins
        .iter()
        .zip(targets)
        .map(|(&f, &t)| {
            let z = f * a + b;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

pub fn fit_platt(margins: &[f64], labels: &[Label]) -> Result<Calibrator> {
    if margins.len() != labels.len() || margins.is_empty() {
        return Err(Error::InvalidInput(format!(
            "calibration needs matching, non-empty margins and labels ({} vs {})",
            margins.len(),
            labels.len()
        )));
    }
    if let Some(m) = margins.iter().find(|m| !m.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite margin {m}")));
    }
    let positives = labels.iter().filter(|&&l| l == Label::Positive).count() as f64;
    let negatives = labels.len() as f64 - positives;
    let hi = (positives + 1.0) / (positives + 2.0);
    let lo = 1.0 / (negatives + 2.0);
    let targets: Vec<f64> = labels
        .iter()
        .map(|&l| if l == Label::Positive { hi } else { lo })
        .collect();

    let mut a = 0.0;
    let mut b = ((negatives + 1.0) / (positives + 1.0)).ln();
    let mut fval = objective(margins, &targets, a, b);
    for _ in 0..MAX_ITERATIONS {
        let (mut h11, mut h22, mut h21) = (HESSIAN_RIDGE, HESSIAN_RIDGE, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&f, &t) in margins.iter().zip(&targets) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(margins, &targets, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < MIN_STEP {
            break;
        }
    }
    Ok(Calibrator { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_margins_center_at_one_half() {
        let margins = [-2.0, -1.0, 1.0, 2.0];
        let labels = [
            Label::Negative,
            Label::Negative,
            Label::Positive,
            Label::Positive,
        ];
        let c = fit_platt(&margins, &labels).unwrap();
        assert!(c.a < 0.0);
        assert!((c.probability(0.0) - 0.5).abs() < 1e-6);
        assert!(c.probability(2.0) > c.probability(1.0));
    }

    #[test]
    fn outputs_stay_inside_unit_interval() {
        let c = Calibrator { a: -50.0, b: 0.0 };
        for m in [-1e6, -10.0, 0.0, 10.0, 1e6] {
            let p = c.probability(m);
            assert!(p > 0.0 && p < 1.0, "{m} -> {p}");
        }
    }

    #[test]
    fn overlapping_classes_give_moderate_slope() {
        let margins = [-1.0, -0.5, 0.5, 1.0, -0.2, 0.2];
        let labels = [
            Label::Negative,
            Label::Positive,
            Label::Negative,
            Label::Positive,
            Label::Negative,
            Label::Positive,
        ];
        let c = fit_platt(&margins, &labels).unwrap();
        let p = c.probability(1.0);
        assert!(p > 0.5 && p < 0.99, "{p}");
    }

    #[test]
    fn bad_inputs() {
        assert!(fit_platt(&[], &[]).is_err());
        assert!(fit_platt(&[f64::INFINITY], &[Label::Positive]).is_err());
    }
}
