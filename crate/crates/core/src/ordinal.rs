//! Ordinal encoding of classes `1..=K` and the label-distribution algebra
//! behind per-head calibration.
//!
//! Class `c` of `K` is represented by `K - 1` bits where bit `i` (1-based) is
//! set iff `c > i`. The positive rate of bit `i` under a label distribution is
//! therefore the tail probability `P(class > i)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rates are kept inside `[RATE_EPSILON, 1 - RATE_EPSILON]` so logits stay finite.
pub const RATE_EPSILON: f64 = 1e-6;

/// Probability vector over `K >= 2` ordinal classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelDistribution {
    probs: Vec<f64>,
}

impl LabelDistribution {
    /// Accepts probabilities summing to one within `1e-9` and renormalises them.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::invalid(format!(
                "label distribution needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(format!(
                "label distribution has a negative or non-finite entry: {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "label distribution sums to {total}, expected 1"
            )));
        }
        Ok(Self {
            probs: probs.iter().map(|p| p / total).collect(),
        })
    }

    /// Normalises arbitrary nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights must have positive total mass"));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        Self::new(vec![1.0 / classes as f64; classes])
    }

    /// Class frequencies of `labels` (each in `1..=classes`).
    pub fn empirical(labels: &[usize], classes: usize) -> Result<Self> {
        let mut counts = vec![0.0; classes];
        for &y in labels {
            if y == 0 || y > classes {
                return Err(Error::invalid(format!("label {y} outside 1..={classes}")));
            }
            counts[y - 1] += 1.0;
        }
        Self::from_weights(&counts)
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of class `c` (1-based).
    pub fn prob(&self, class: usize) -> f64 {
        self.probs[class - 1]
    }
}

impl TryFrom<Vec<f64>> for LabelDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<LabelDistribution> for Vec<f64> {
    fn from(d: LabelDistribution) -> Self {
        d.probs
    }
}

/// `K - 1` entries in `[0, 1]`: hard targets or per-bit probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrdinalVector(Vec<f64>);

impl OrdinalVector {
    pub fn new(bits: Vec<f64>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::invalid("ordinal vector must have at least one bit"));
        }
        if let Some(b) = bits.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::invalid(format!("ordinal bit {b} outside [0, 1]")));
        }
        Ok(Self(bits))
    }

    pub fn bits(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.0.len() + 1
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn encode(class: usize, classes: usize) -> Result<OrdinalVector> {
    if classes < 2 || class == 0 || class > classes {
        return Err(Error::invalid(format!(
            "class {class} outside 1..={classes}"
        )));
    }
    Ok(OrdinalVector(
        (1..classes)
            .map(|i| if class > i { 1.0 } else { 0.0 })
            .collect(),
    ))
}

/// How per-bit probabilities turn into a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeRule {
    /// One plus the highest bit index above 0.5.
    #[default]
    HighestPositive,
    /// One plus the number of bits above 0.5.
    Count,
}

/// Highest-positive-bit decoding; non-monotone patterns are taken literally.
pub fn decode(probs: &[f64]) -> usize {
    decode_with(probs, DecodeRule::HighestPositive)
}

pub fn decode_with(probs: &[f64], rule: DecodeRule) -> usize {
    match rule {
        DecodeRule::HighestPositive => probs
            .iter()
            .rposition(|&p| p > 0.5)
            .map_or(1, |i| i + 2),
        DecodeRule::Count => 1 + probs.iter().filter(|&&p| p > 0.5).count(),
    }
}

/// Per-bit positive label proportions `r_i`, each inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PositiveRates(Vec<f64>);

impl PositiveRates {
    /// Clamps each rate into `[RATE_EPSILON, 1 - RATE_EPSILON]`.
    pub fn clamped(rates: Vec<f64>) -> Self {
        Self(
            rates
                .into_iter()
                .map(|r| r.clamp(RATE_EPSILON, 1.0 - RATE_EPSILON))
                .collect(),
        )
    }

    pub fn rates(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Unclamped tail sums `P(class > i)` for `i = 1..K-1`.
pub fn tail_probabilities(dist: &LabelDistribution) -> Vec<f64> {
    let probs = dist.probs();
    let mut tails = vec![0.0; probs.len() - 1];
    let mut acc = 0.0;
    for i in (0..probs.len() - 1).rev() {
        acc += probs[i + 1];
        tails[i] = acc;
    }
    tails
}

pub fn positive_rates(dist: &LabelDistribution) -> PositiveRates {
    PositiveRates::clamped(tail_probabilities(dist))
}

/// Class `dominating` carries `lambda` times the mass of every other class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominatingSpec {
    dominating: usize,
    lambda: f64,
    classes: usize,
}

impl DominatingSpec {
    pub fn new(dominating: usize, lambda: f64, classes: usize) -> Result<Self> {
        if classes < 2 || dominating == 0 || dominating > classes {
            return Err(Error::invalid(format!(
                "dominating class {dominating} outside 1..={classes}"
            )));
        }
        if !(lambda >= 1.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be >= 1, got {lambda}")));
        }
        Ok(Self {
            dominating,
            lambda,
            classes,
        })
    }

    pub fn dominating(&self) -> usize {
        self.dominating
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

/// Closed-form positive rates of the one-dominating-class distribution:
/// `r'_i = 1 - (i - [i >= j](1 - lambda)) / (lambda + K - 1)`.
pub fn one_dominating_rates(spec: &DominatingSpec) -> PositiveRates {
    let k = spec.classes as f64;
    let denom = spec.lambda + k - 1.0;
    let rates = (1..spec.classes)
        .map(|i| {
            let indicator = if i >= spec.dominating { 1.0 } else { 0.0 };
            1.0 - (i as f64 - indicator * (1.0 - spec.lambda)) / denom
        })
        .collect();
    PositiveRates::clamped(rates)
}

pub fn dominating_distribution(spec: &DominatingSpec) -> LabelDistribution {
    let denom = spec.lambda + spec.classes as f64 - 1.0;
    let probs = (1..=spec.classes)
        .map(|c| {
            if c == spec.dominating {
                spec.lambda / denom
            } else {
                1.0 / denom
            }
        })
        .collect();
    LabelDistribution { probs }
}
