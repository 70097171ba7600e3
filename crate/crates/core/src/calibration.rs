//! Logit compensation between training-set and expected positive rates, and
//! the calibrated binary cross-entropy used to train each head.
//!
//! A head trained with offsets `delta_i` on data with rates `r_i` learns logits
//! whose plain sigmoid reflects the expected rates `r'_i`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::ordinal::{one_dominating_rates, positive_rates, DominatingSpec, LabelDistribution, PositiveRates};

/// `log((r' / (1 - r')) * ((1 - r) / r))`.
pub fn compensating_term(r_prime: f64, r: f64) -> Result<f64> {
    for (name, v) in [("r'", r_prime), ("r", r)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::invalid(format!(
                "{name} = {v} must lie strictly inside (0, 1)"
            )));
        }
    }
    if r_prime == r {
        return Ok(0.0);
    }
    Ok(((r_prime / (1.0 - r_prime)) * ((1.0 - r) / r)).ln())
}

/// Training-time probability of a bit whose expected-distribution logit is `phi`.
pub fn calibrated_prob(phi: f64, delta: f64) -> f64 {
    sigmoid(phi - delta)
}

pub fn odds(p: f64) -> f64 {
    p / (1.0 - p)
}

/// Calibration record of one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    /// 1-based head index.
    pub index: usize,
    /// Dominating class this head is calibrated towards, if any.
    pub dominating: Option<usize>,
    pub lambda: Option<f64>,
    pub expected_rates: PositiveRates,
    pub train_rates: PositiveRates,
    pub deltas: Vec<f64>,
}

impl HeadSpec {
    pub fn new(
        index: usize,
        expected_rates: PositiveRates,
        train_rates: PositiveRates,
    ) -> Result<Self> {
        if expected_rates.len() != train_rates.len() {
            return Err(Error::invalid(format!(
                "rate lengths differ: expected {} vs train {}",
                expected_rates.len(),
                train_rates.len()
            )));
        }
        let deltas = expected_rates
            .rates()
            .iter()
            .zip(train_rates.rates())
            .map(|(&rp, &r)| compensating_term(rp, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            index,
            dominating: None,
            lambda: None,
            expected_rates,
            train_rates,
            deltas,
        })
    }

    /// Uncalibrated head: expected rates equal the training rates, all offsets zero.
    pub fn plain(index: usize, train: &LabelDistribution) -> Result<Self> {
        let rates = positive_rates(train);
        Self::new(index, rates.clone(), rates)
    }

    /// Calibrated towards the uniform label distribution. The expected rates
    /// come from the one-dominating closed form at `lambda = 1`, so these heads
    /// coincide bit for bit with any one-dominating head at `lambda = 1`.
    pub fn balanced(index: usize, train: &LabelDistribution) -> Result<Self> {
        let uniform = DominatingSpec::new(1, 1.0, train.classes())?;
        Self::new(index, one_dominating_rates(&uniform), positive_rates(train))
    }

    /// Calibrated towards the distribution dominated by `spec.dominating()`.
    pub fn one_dominating(spec: &DominatingSpec, train: &LabelDistribution) -> Result<Self> {
        let mut head = Self::new(
            spec.dominating(),
            one_dominating_rates(spec),
            positive_rates(train),
        )?;
        head.dominating = Some(spec.dominating());
        head.lambda = Some(spec.lambda());
        Ok(head)
    }

    pub fn bits(&self) -> usize {
        self.deltas.len()
    }
}

/// Calibrated BCE summed over bits and averaged over rows.
///
/// `phi` is either a `[K-1]` vector (one sample) or an `[n, K-1]` matrix;
/// `targets` must have the same shape with entries in `{0, 1}`. The offsets
/// enter as constants.
pub fn calibrated_bce(
    g: &mut Graph,
    phi: NodeId,
    targets: &Tensor,
    spec: &HeadSpec,
) -> Result<NodeId> {
    let shape = g.value(phi).shape().to_vec();
    let bits = *shape.last().expect("non-empty shape");
    if bits != spec.bits() || targets.shape() != shape.as_slice() {
        return Err(Error::invalid(format!(
            "calibrated_bce shapes: logits {shape:?}, targets {:?}, head bits {}",
            targets.shape(),
            spec.bits()
        )));
    }
    let rows = if shape.len() == 2 { shape[0] } else { 1 };
    let tiled: Vec<f64> = (0..rows).flat_map(|_| spec.deltas.iter().copied()).collect();
    let delta = g.constant(Tensor::new(shape.clone(), tiled)?);
    let z = g.sub(phi, delta)?;

    // y·logσ(z) + (1 − y)·logσ(−z)
    let log_pos = g.log_sigmoid(z);
    let neg_z = g.neg(z);
    let log_neg = g.log_sigmoid(neg_z);
    let y = g.constant(targets.clone());
    let one_minus_y = g.constant(Tensor::new(
        shape,
        targets.data().iter().map(|t| 1.0 - t).collect(),
    )?);
    let a = g.mul(y, log_pos)?;
    let b = g.mul(one_minus_y, log_neg)?;
    let ll = g.add(a, b)?;
    let total = g.sum(ll);
    Ok(g.scale(total, -1.0 / rows as f64))
}
