//! Test-time aggregation of the heads.
//!
//! The heads' per-bit probabilities are mixed with simplex weights
//! `w = softmax(alpha)`. Adaptation draws two augmented views of each test
//! sample and descends the negative cosine similarity between the two mixed
//! outputs with respect to `alpha` only; the network is bound as constants.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, Graph, NodeId, Tensor};
use crate::data::{augment_rows, gather_rows, AugmentationSpec};
use crate::error::{Error, Result};
use crate::model::MultiHeadModel;
use crate::ordinal::decode;
use crate::rng::{derive_seed, seeded};

/// Guard added to each norm in the cosine similarity.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    alpha: Vec<f64>,
}

impl AggregationWeights {
    /// All logits zero, i.e. every weight `1/K`.
    pub fn uniform(heads: usize) -> Self {
        Self {
            alpha: vec![0.0; heads],
        }
    }

    pub fn from_alpha(alpha: Vec<f64>) -> Self {
        Self { alpha }
    }

    /// Logits putting (numerically) all mass on head `k` (0-based).
    pub fn one_hot(heads: usize, k: usize) -> Self {
        let mut alpha = vec![-800.0; heads];
        alpha[k] = 0.0;
        Self { alpha }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.alpha)
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Index (0-based) of the largest weight.
    pub fn argmax(&self) -> usize {
        self.alpha
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &a)| if a > best.1 { (i, a) } else { best })
            .0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub augmentation: AugmentationSpec,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 32,
            learning_rate: 0.1,
            augmentation: AugmentationSpec::default(),
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        self.augmentation.validate()?;
        if self.batch_size == 0 || !(self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!("bad adaptation config: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptOutcome {
    pub weights: AggregationWeights,
    /// Batch-mean consistency loss at each step, before the update.
    pub loss_trace: Vec<f64>,
    /// Simplex weights after each step.
    pub weight_trace: Vec<Vec<f64>>,
    /// Largest absolute gradient seen on any frozen model parameter.
    pub frozen_grad_max: f64,
}

/// Serialised summary of one adaptation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub initial_weights: Vec<f64>,
    pub final_weights: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub config: AdaptConfig,
    pub seed: u64,
}

impl AdaptReport {
    pub fn new(initial: &AggregationWeights, outcome: &AdaptOutcome, config: &AdaptConfig) -> Self {
        Self {
            initial_weights: initial.weights(),
            final_weights: outcome.weights.weights(),
            loss_trace: outcome.loss_trace.clone(),
            config: config.clone(),
            seed: config.seed,
        }
    }
}

fn check_heads(model: &MultiHeadModel, weights: &AggregationWeights) -> Result<()> {
    if weights.len() != model.head_count() {
        return Err(Error::invalid(format!(
            "{} aggregation weights for {} heads",
            weights.len(),
            model.head_count()
        )));
    }
    Ok(())
}

/// Convex combination of the heads' probabilities for an `[n, d]` batch.
pub fn aggregate(model: &MultiHeadModel, weights: &AggregationWeights, x: &Tensor) -> Result<Tensor> {
    check_heads(model, weights)?;
    let w = weights.weights();
    let heads = model.head_probabilities(x)?;
    let mut out = vec![0.0; heads[0].numel()];
    for (wk, p) in w.iter().zip(&heads) {
        for (o, v) in out.iter_mut().zip(p.data()) {
            *o += wk * v;
        }
    }
    Ok(Tensor::new(heads[0].shape().to_vec(), out)?)
}

/// Negative cosine similarity with [`NORM_GUARD`] added to each norm.
pub fn consistency_loss(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "consistency loss on lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt() + NORM_GUARD;
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt() + NORM_GUARD;
    Ok(-dot / (na * nb))
}

/// Graph form of [`consistency_loss`] on two vectors, via `dot` and `l2_norm`.
pub fn consistency_loss_node(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let dot = g.dot(a, b)?;
    let na = g.l2_norm(a);
    let na = g.add_scalar(na, NORM_GUARD);
    let nb = g.l2_norm(b);
    let nb = g.add_scalar(nb, NORM_GUARD);
    let denom = g.mul(na, nb)?;
    let cos = g.div(dot, denom)?;
    Ok(g.neg(cos))
}

/// Row-wise negative cosine similarity of two `[n, K-1]` nodes, averaged over rows.
pub fn batch_consistency_loss(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let ab = g.mul(a, b)?;
    let dot = g.sum_rows(ab)?;
    let norm = |g: &mut Graph, v: NodeId| -> Result<NodeId> {
        let sq = g.mul(v, v)?;
        let s = g.sum_rows(sq)?;
        let n = g.sqrt(s)?;
        Ok(g.add_scalar(n, NORM_GUARD))
    };
    let na = norm(g, a)?;
    let nb = norm(g, b)?;
    let denom = g.mul(na, nb)?;
    let cos = g.div(dot, denom)?;
    let mean = g.mean(cos);
    Ok(g.neg(mean))
}

/// `Σ_k w_k · sigmoid(logits_k)` on the graph; `w` is a `[heads]` node.
fn aggregate_node(g: &mut Graph, w: NodeId, logits: &[NodeId]) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for (k, &phi) in logits.iter().enumerate() {
        let p = g.sigmoid(phi);
        let wk = g.select(w, k)?;
        let term = g.mul(wk, p)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("at least one head"))
}

/// Adapts `weights` on an unlabeled `[n, d]` pool. The model is only read.
pub fn adapt(
    model: &MultiHeadModel,
    weights: &AggregationWeights,
    test_features: &Tensor,
    config: &AdaptConfig,
) -> Result<AdaptOutcome> {
    config.validate()?;
    check_heads(model, weights)?;
    let n = test_features.rows();
    if n == 0 || test_features.shape().len() != 2 {
        return Err(Error::invalid("adaptation needs a non-empty [n, d] test pool"));
    }
    let batch = config.batch_size.min(n);
    let mut batch_rng = seeded(derive_seed(config.seed, "adapt-batches"));
    let mut view_rng = seeded(derive_seed(config.augmentation.seed, "adapt-views"));
    let mut alpha = weights.alpha().to_vec();
    let mut loss_trace = Vec::with_capacity(config.steps);
    let mut weight_trace = Vec::with_capacity(config.steps);
    let mut frozen_grad_max: f64 = 0.0;

    for step in 0..config.steps {
        let idx = sample(&mut batch_rng, n, batch).into_vec();
        let x = gather_rows(test_features, &idx);
        let v1 = augment_rows(&x, &config.augmentation, &mut view_rng);
        let v2 = augment_rows(&x, &config.augmentation, &mut view_rng);

        let mut g = Graph::new();
        let params = model.bind(&mut g, false);
        let alpha_id = g.leaf(Tensor::vector(alpha.clone()));
        let w = g.softmax(alpha_id)?;
        let in1 = g.constant(v1);
        let in2 = g.constant(v2);
        let l1 = model.forward_bound(&mut g, &params, in1)?;
        let l2 = model.forward_bound(&mut g, &params, in2)?;
        let a1 = aggregate_node(&mut g, w, &l1)?;
        let a2 = aggregate_node(&mut g, w, &l2)?;
        let loss = batch_consistency_loss(&mut g, a1, a2)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("consistency loss {value} at step {step}")));
        }
        g.backward(loss)?;

        for id in &params.ids {
            let gmax = g
                .grad(*id)
                .expect("leaf")
                .data()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            frozen_grad_max = frozen_grad_max.max(gmax);
        }
        let grad = g.grad(alpha_id).expect("alpha leaf").data();
        for (a, gv) in alpha.iter_mut().zip(grad) {
            *a -= config.learning_rate * gv;
        }
        let w = softmax(&alpha);
        if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::NonFinite(format!("aggregation weights {w:?} left the simplex")));
        }
        loss_trace.push(value);
        weight_trace.push(w);
    }
    Ok(AdaptOutcome {
        weights: AggregationWeights::from_alpha(alpha),
        loss_trace,
        weight_trace,
        frozen_grad_max,
    })
}

/// Classes decoded from the aggregated output on clean inputs.
pub fn predict(model: &MultiHeadModel, weights: &AggregationWeights, x: &Tensor) -> Result<Vec<usize>> {
    let agg = aggregate(model, weights, x)?;
    Ok(agg.data().chunks(model.classes() - 1).map(decode).collect())
}
