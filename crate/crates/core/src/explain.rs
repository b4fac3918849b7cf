//! Additive attributions for single predictions.
//!
//! [`explain_linear`] gives the exact Shapley values of a linear model under a
//! background mean: `w_j * (x_j - mu_j)` on the margin scale. With a zero
//! background this is the feature weight times the model coefficient.
//!
//! [`explain_by_masking`] works with any `P(positive)` function over token
//! sequences. A coalition keeps its tokens and replaces the rest with
//! [`MaskingConfig::mask_token`]. Depending on the evaluation budget it uses:
//!
//! * exact Shapley values from all `2^n` coalitions, when `2^n` fits;
//! * otherwise Monte Carlo permutation sampling, when at least one full
//!   permutation fits after the leave-one-out evaluations;
//! * otherwise leave-one-out differences `P(full) - P(full without t)`.
//!
//! Base value is `P(all masked)`, output value `P(full)`. The two estimators
//! do not add up exactly, so any residual `output - base - sum` is spread
//! over the tokens in proportion to `|contribution|` (equally if all are zero).

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{SparseVector, Vocabulary};
use crate::models::LinearModel;
use crate::textprep::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionItem {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub base_value: f64,
    pub output_value: f64,
    pub items: Vec<AttributionItem>,
}

impl Attribution {
    /// `output - (base + sum of contributions)`.
    pub fn efficiency_gap(&self) -> f64 {
        self.output_value - self.base_value - self.items.iter().map(|i| i.value).sum::<f64>()
    }
}

/// Exact linear attribution over the union of the supports of `x` and
/// `background_mean`. Feature names come from `vocab` when given.
pub fn explain_linear(
    model: &LinearModel,
    x: &SparseVector,
    background_mean: &SparseVector,
    vocab: Option<&Vocabulary>,
) -> Result<Attribution> {
    let size = model.n_features();
    if let Some(vocab) = vocab {
        if vocab.len() != size {
            return Err(Error::VocabularyMismatch {
                expected: format!("{size} features"),
                actual: format!("{} features", vocab.len()),
            });
        }
    }
    for v in [x, background_mean] {
        if v.dimension_bound() > size {
            return Err(Error::IndexOutOfBounds {
                index: v.dimension_bound() - 1,
                size,
            });
        }
    }
    let mut support: Vec<usize> = x.iter().chain(background_mean.iter()).map(|p| p.0).collect();
    support.sort_unstable();
    support.dedup();
    let items = support
        .into_iter()
        .map(|j| AttributionItem {
            name: vocab
                .and_then(|v| v.term(j))
                .map_or_else(|| format!("#{j}"), String::from),
            value: model.weights[j] * (x.get(j) - background_mean.get(j)),
        })
        .collect();
    Ok(Attribution {
        base_value: background_mean.dot(&model.weights) + model.bias,
        output_value: x.dot(&model.weights) + model.bias,
        items,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    pub mask_token: String,
    pub max_evaluations: usize,
    pub seed: u64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            mask_token: "[MASK]".into(),
            max_evaluations: 2048,
            seed: 42,
        }
    }
}

/// Which estimator [`explain_by_masking`] used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskingMethod {
    Exact,
    PermutationSampling { permutations: usize },
    LeaveOneOut,
}

/// Largest token count for exhaustive enumeration regardless of budget.
const EXACT_TOKEN_LIMIT: usize = 20;

pub fn masking_method(n_tokens: usize, max_evaluations: usize) -> MaskingMethod {
    if n_tokens <= EXACT_TOKEN_LIMIT && (1usize << n_tokens) <= max_evaluations {
        return MaskingMethod::Exact;
    }
    // full, empty and one leave-one-out coalition per token
    let fixed = n_tokens + 2;
    let per_permutation = n_tokens.saturating_sub(1).max(1);
    let permutations = max_evaluations.saturating_sub(fixed) / per_permutation;
    if permutations >= 1 {
        MaskingMethod::PermutationSampling { permutations }
    } else {
        MaskingMethod::LeaveOneOut
    }
}

type Coalition = Vec<bool>;

struct CoalitionValues<'a> {
    tokens: &'a TokenSequence,
    mask: &'a str,
    predict: &'a (dyn Fn(&TokenSequence) -> Result<f64> + Sync),
    cache: HashMap<Coalition, f64>,
}

impl CoalitionValues<'_> {
    fn masked(&self, keep: &[bool]) -> TokenSequence {
        self.tokens
            .iter()
            .zip(keep)
            .map(|(t, &k)| if k { t.as_str() } else { self.mask })
            .collect()
    }

    /// Evaluates every coalition not already cached, in parallel.
    fn fill(&mut self, coalitions: &[Coalition]) -> Result<()> {
        let mut pending: Vec<&Coalition> = coalitions
            .iter()
            .filter(|c| !self.cache.contains_key(*c))
            .collect();
        pending.sort();
        pending.dedup();
        let values = pending
            .par_iter()
            .map(|keep| {
                let masked = self.masked(keep);
                (self.predict)(&masked).map_err(|e| {
                    Error::InvalidInput(format!(
                        "prediction failed for masked input `{}`: {e}",
                        masked.join(" ")
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        for (keep, v) in pending.into_iter().zip(values) {
            self.cache.insert(keep.clone(), v);
        }
        Ok(())
    }

    fn value(&self, keep: &[bool]) -> f64 {
        self.cache[keep]
    }
}

pub fn explain_by_masking(
    predict: &(dyn Fn(&TokenSequence) -> Result<f64> + Sync),
    tokens: &TokenSequence,
    cfg: &MaskingConfig,
) -> Result<Attribution> {
    explain_by_masking_with_method(predict, tokens, cfg).map(|(a, _)| a)
}

pub fn explain_by_masking_with_method(
    predict: &(dyn Fn(&TokenSequence) -> Result<f64> + Sync),
    tokens: &TokenSequence,
    cfg: &MaskingConfig,
) -> Result<(Attribution, MaskingMethod)> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::InvalidInput("cannot explain an empty token sequence".into()));
    }
    if cfg.max_evaluations < n {
        return Err(Error::Config(format!(
            "explain.max_evaluations ({}) must be at least the token count ({n})",
            cfg.max_evaluations
        )));
    }
    let mut values = CoalitionValues {
        tokens,
        mask: &cfg.mask_token,
        predict,
        cache: HashMap::new(),
    };
    let full = vec![true; n];
    let empty = vec![false; n];
    let method = masking_method(n, cfg.max_evaluations);

    let contributions: Vec<f64> = match method {
        MaskingMethod::Exact => {
            let all: Vec<Coalition> = (0..1usize << n)
                .map(|bits| (0..n).map(|i| bits >> i & 1 == 1).collect())
                .collect();
            values.fill(&all)?;
            exact_shapley(n, |keep| values.value(keep))
        }
        MaskingMethod::PermutationSampling { permutations } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let orders: Vec<Vec<usize>> = (0..permutations)
                .map(|_| {
                    let mut order: Vec<usize> = (0..n).collect();
                    order.shuffle(&mut rng);
                    order
                })
                .collect();
            let mut needed = vec![full.clone(), empty.clone()];
            for order in &orders {
                let mut keep = empty.clone();
                for &i in order {
                    keep[i] = true;
                    needed.push(keep.clone());
                }
            }
            values.fill(&needed)?;
            let mut sums = vec![0.0; n];
            for order in &orders {
                let mut keep = empty.clone();
                let mut previous = values.value(&keep);
                for &i in order {
                    keep[i] = true;
                    let current = values.value(&keep);
                    sums[i] += current - previous;
                    previous = current;
                }
            }
            sums.into_iter().map(|s| s / permutations as f64).collect()
        }
        MaskingMethod::LeaveOneOut => {
            let mut needed = vec![full.clone(), empty.clone()];
            needed.extend((0..n).map(|i| {
                let mut keep = full.clone();
                keep[i] = false;
                keep
            }));
            values.fill(&needed)?;
            let whole = values.value(&full);
            (0..n)
                .map(|i| {
                    let mut keep = full.clone();
                    keep[i] = false;
                    whole - values.value(&keep)
                })
                .collect()
        }
    };

    let base_value = values.value(&empty);
    let output_value = values.value(&full);
    let contributions = if method == MaskingMethod::Exact {
        contributions
    } else {
        distribute_residual(contributions, output_value - base_value)
    };
    let items = tokens
        .iter()
        .zip(contributions)
        .map(|(t, value)| AttributionItem {
            name: t.clone(),
            value,
        })
        .collect();
    Ok((
        Attribution {
            base_value,
            output_value,
            items,
        },
        method,
    ))
}

/// Shapley values from a complete coalition value function.
fn exact_shapley(n: usize, value: impl Fn(&[bool]) -> f64) -> Vec<f64> {
    // weight(|S|) = |S|! (n - |S| - 1)! / n!
    let mut factorial = vec![1.0f64; n + 1];
    for k in 1..=n {
        factorial[k] = factorial[k - 1] * k as f64;
    }
    let weight: Vec<f64> = (0..n)
        .map(|s| factorial[s] * factorial[n - s - 1] / factorial[n])
        .collect();
    let mut phi = vec![0.0; n];
    let mut keep = vec![false; n];
    for bits in 0..1usize << n {
        for (i, k) in keep.iter_mut().enumerate() {
            *k = bits >> i & 1 == 1;
        }
        let size = bits.count_ones() as usize;
        let without = value(&keep);
        for i in 0..n {
            if keep[i] {
                continue;
            }
            keep[i] = true;
            phi[i] += weight[size] * (value(&keep) - without);
            keep[i] = false;
        }
    }
    phi
}

fn distribute_residual(mut contributions: Vec<f64>, target: f64) -> Vec<f64> {
    let residual = target - contributions.iter().sum::<f64>();
    let mass: f64 = contributions.iter().map(|c| c.abs()).sum();
    let n = contributions.len() as f64;
    for c in contributions.iter_mut() {
        let share = if mass > 0.0 { c.abs() / mass } else { 1.0 / n };
        *c += residual * share;
    }
    contributions
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenderFormat {
    Text,
    Json,
    SvgBar,
}

/// Color of bars pushing toward the positive class.
pub const POSITIVE_COLOR: &str = "#d62728";
/// Color of bars pushing toward the negative class.
pub const NEGATIVE_COLOR: &str = "#1f77b4";

/// Items sorted by decreasing `|value|`, stable for equal magnitudes.
fn by_magnitude(attr: &Attribution) -> Vec<&AttributionItem> {
    let mut items: Vec<&AttributionItem> = attr.items.iter().collect();
    items.sort_by(|a, b| b.value.abs().total_cmp(&a.value.abs()));
    items
}

/// Renders an attribution. An attribution without items renders as the
/// empty string in every format.
pub fn render_attribution(attr: &Attribution, format: RenderFormat) -> Result<String> {
    if attr.items.is_empty() {
        return Ok(String::new());
    }
    match format {
        RenderFormat::Json => {
            serde_json::to_string_pretty(attr).map_err(|e| Error::json("attribution", e))
        }
        RenderFormat::Text => {
            let mut out = format!(
                "base {:.6}  output {:.6}\n",
                attr.base_value, attr.output_value
            );
            for item in by_magnitude(attr) {
                out.push_str(&format!("{:+.6}  {}\n", item.value, item.name));
            }
            Ok(out)
        }
        RenderFormat::SvgBar => Ok(render_svg(attr)),
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn render_svg(attr: &Attribution) -> String {
    const ROW: f64 = 22.0;
    const LABEL_WIDTH: f64 = 160.0;
    const HALF: f64 = 220.0;
    let items = by_magnitude(attr);
    let largest = items
        .iter()
        .map(|i| i.value.abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let axis = LABEL_WIDTH + HALF;
    let width = LABEL_WIDTH + 2.0 * HALF + 20.0;
    let height = ROW * items.len() as f64 + 10.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    for (row, item) in items.iter().enumerate() {
        let y = 5.0 + ROW * row as f64;
        let length = HALF * item.value.abs() / largest;
        let (x, color) = if item.value >= 0.0 {
            (axis, POSITIVE_COLOR)
        } else {
            (axis - length, NEGATIVE_COLOR)
        };
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            LABEL_WIDTH - 6.0,
            y + 14.0,
            escape_xml(&item.name)
        ));
        svg.push_str(&format!(
            "  <rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{length:.1}\" height=\"{:.1}\" fill=\"{color}\">\
             <title>{:+.6}</title></rect>\n",
            y + 2.0,
            ROW - 6.0,
            item.value
        ));
    }
    svg.push_str(&format!(
        "  <line x1=\"{axis:.1}\" y1=\"0\" x2=\"{axis:.1}\" y2=\"{height:.1}\" stroke=\"#333\"/>\n</svg>\n"
    ));
    svg
}
