//! Shared-trunk network with independent ordinal heads, and its SGD training loop.
//!
//! The trunk (`d → 64 → 32`, tanh) runs once per input; every head
//! (`32 → 16 → K-1`) reads the shared representation and carries its own
//! [`HeadSpec`]. Training averages the heads' calibrated losses.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, NodeId, Tensor};
use crate::calibration::{calibrated_bce, HeadSpec};
use crate::data::{read_json, write_json, Dataset};
use crate::error::{Error, Result};
use crate::ordinal::{encode, DominatingSpec, LabelDistribution};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub trunk: Vec<usize>,
    pub head: Vec<usize>,
    /// Give every head the same initial parameters.
    pub shared_head_init: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            trunk: vec![64, 32],
            head: vec![16],
            shared_head_init: true,
        }
    }
}

/// Which heads a model carries and how each is calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadLayout {
    /// One uncalibrated head.
    Plain,
    /// `K` heads, all calibrated towards the uniform distribution.
    Balanced,
    /// `K` heads, head `k` calibrated towards the `k`-dominating distribution.
    OneDominating { lambda: f64 },
}

impl HeadLayout {
    pub fn head_specs(&self, train: &LabelDistribution) -> Result<Vec<HeadSpec>> {
        match *self {
            HeadLayout::Plain => Ok(vec![HeadSpec::plain(1, train)?]),
            HeadLayout::Balanced => (1..=train.classes())
                .map(|k| HeadSpec::balanced(k, train))
                .collect(),
            HeadLayout::OneDominating { lambda } => (1..=train.classes())
                .map(|j| HeadSpec::one_dominating(&DominatingSpec::new(j, lambda, train.classes())?, train))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    fn init(inputs: usize, outputs: usize, rng: &mut crate::rng::Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weight: Tensor::matrix(inputs, outputs, w).expect("dense weight"),
            bias: Tensor::zeros(&[outputs]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadModel {
    classes: usize,
    input_dim: usize,
    architecture: Architecture,
    trunk: Vec<Dense>,
    heads: Vec<Vec<Dense>>,
    head_specs: Vec<HeadSpec>,
    seed: u64,
}

/// Parameter leaves of one model registered on a graph, in parameter order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub ids: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            lambda: 2.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid(format!("bad training config: {self:?}")));
        }
        if !(self.lambda >= 1.0) {
            return Err(Error::invalid(format!("lambda must be >= 1, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Mean per-sample loss of each head over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub head_losses: Vec<f64>,
    pub total: f64,
}

impl MultiHeadModel {
    pub fn init(
        input_dim: usize,
        architecture: Architecture,
        head_specs: Vec<HeadSpec>,
        seed: u64,
    ) -> Result<Self> {
        let classes = head_specs
            .first()
            .map(|h| h.bits() + 1)
            .ok_or_else(|| Error::invalid("model needs at least one head"))?;
        if classes < 2 || input_dim == 0 {
            return Err(Error::invalid(format!(
                "need K >= 2 and d >= 1, got K = {classes}, d = {input_dim}"
            )));
        }
        if head_specs.iter().any(|h| h.bits() != classes - 1) {
            return Err(Error::invalid("head specs disagree on the class count"));
        }
        let mut rng = seeded(derive_seed(seed, "trunk"));
        let mut trunk = Vec::new();
        let mut width = input_dim;
        for &h in &architecture.trunk {
            trunk.push(Dense::init(width, h, &mut rng));
            width = h;
        }
        let head_init = |rng: &mut crate::rng::Rng| {
            let mut layers = Vec::new();
            let mut w = width;
            for &h in architecture.head.iter().chain(std::iter::once(&(classes - 1))) {
                layers.push(Dense::init(w, h, rng));
                w = h;
            }
            layers
        };
        let heads = (0..head_specs.len())
            .map(|k| {
                let stream = if architecture.shared_head_init {
                    "head".to_string()
                } else {
                    format!("head-{k}")
                };
                head_init(&mut seeded(derive_seed(seed, &stream)))
            })
            .collect();
        Ok(Self {
            classes,
            input_dim,
            architecture,
            trunk,
            heads,
            head_specs,
            seed,
        })
    }

    /// Builds head specs from `layout` and the training label distribution.
    pub fn with_layout(
        input_dim: usize,
        architecture: Architecture,
        layout: HeadLayout,
        train: &LabelDistribution,
        seed: u64,
    ) -> Result<Self> {
        Self::init(input_dim, architecture, layout.head_specs(train)?, seed)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn head_specs(&self) -> &[HeadSpec] {
        &self.head_specs
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Trunk layers first, then each head's layers; weight before bias.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.trunk
            .iter()
            .chain(self.heads.iter().flatten())
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut().flatten())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn trunk_parameter_count(&self) -> usize {
        2 * self.trunk.len()
    }

    /// Range of [`Self::parameters`] indices owned by head `k` (0-based).
    pub fn head_parameter_range(&self, k: usize) -> std::ops::Range<usize> {
        let per_head = 2 * (self.architecture.head.len() + 1);
        let start = self.trunk_parameter_count() + k * per_head;
        start..start + per_head
    }

    pub fn head_mut(&mut self, k: usize) -> &mut [Dense] {
        &mut self.heads[k]
    }

    /// Registers parameters as trainable leaves or frozen constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let ids = self
            .parameters()
            .into_iter()
            .map(|p| {
                if trainable {
                    g.leaf(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect();
        BoundParams { ids }
    }

    /// Head logits for an `[n, d]` input node, one `[n, K-1]` node per head.
    pub fn forward_bound(&self, g: &mut Graph, params: &BoundParams, x: NodeId) -> Result<Vec<NodeId>> {
        let width = g.value(x).shape().get(1).copied();
        if g.value(x).shape().len() != 2 || width != Some(self.input_dim) {
            return Err(Error::invalid(format!(
                "input shape {:?} does not have width {}",
                g.value(x).shape(),
                self.input_dim
            )));
        }
        let mut ids = params.ids.iter().copied();
        let mut h = x;
        for _ in &self.trunk {
            let (w, b) = (ids.next().expect("weight"), ids.next().expect("bias"));
            let z = g.matmul(h, w)?;
            let z = g.add_bias(z, b)?;
            h = g.tanh(z);
        }
        let mut outputs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut a = h;
            for (i, _) in head.iter().enumerate() {
                let (w, b) = (ids.next().expect("weight"), ids.next().expect("bias"));
                let z = g.matmul(a, w)?;
                let z = g.add_bias(z, b)?;
                a = if i + 1 < head.len() { g.tanh(z) } else { z };
            }
            outputs.push(a);
        }
        Ok(outputs)
    }

    /// Logits of every head for an `[n, d]` batch.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let input = g.constant(x.clone());
        let outs = self.forward_bound(&mut g, &params, input)?;
        Ok(outs.into_iter().map(|o| g.value(o).clone()).collect())
    }

    /// Per-bit probabilities of every head: plain sigmoid of the logits.
    pub fn head_probabilities(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self
            .forward(x)?
            .into_iter()
            .map(|t| {
                let shape = t.shape().to_vec();
                Tensor::new(shape, t.data().iter().map(|&v| sigmoid(v)).collect())
                    .expect("same shape")
            })
            .collect())
    }

    /// Probabilities of head `k` (1-based).
    pub fn predict_head(&self, k: usize, x: &Tensor) -> Result<Tensor> {
        if k == 0 || k > self.head_count() {
            return Err(Error::invalid(format!(
                "head {k} outside 1..={}",
                self.head_count()
            )));
        }
        Ok(self.head_probabilities(x)?.swap_remove(k - 1))
    }

    /// Head-averaged calibrated loss of a batch, built on `g`.
    pub fn loss_bound(
        &self,
        g: &mut Graph,
        params: &BoundParams,
        x: &Tensor,
        labels: &[usize],
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let targets = ordinal_targets(labels, self.classes)?;
        let input = g.constant(x.clone());
        let logits = self.forward_bound(g, params, input)?;
        let mut head_losses = Vec::with_capacity(logits.len());
        for (phi, spec) in logits.iter().zip(&self.head_specs) {
            head_losses.push(calibrated_bce(g, *phi, &targets, spec)?);
        }
        let mut total = head_losses[0];
        for &l in &head_losses[1..] {
            total = g.add(total, l)?;
        }
        let total = g.scale(total, 1.0 / head_losses.len() as f64);
        Ok((total, head_losses))
    }

    /// One SGD step on a batch; returns each head's batch loss.
    pub fn sgd_step(
        &mut self,
        x: &Tensor,
        labels: &[usize],
        learning_rate: f64,
        weight_decay: f64,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, true);
        let (total, heads) = self.loss_bound(&mut g, &params, x, labels)?;
        let loss = g.value(total).item();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss became {loss}")));
        }
        g.backward(total)?;
        for (p, id) in self.parameters_mut().into_iter().zip(&params.ids) {
            let grad = g.grad(*id).expect("leaf gradient");
            for (v, gv) in p.data_mut().iter_mut().zip(grad.data()) {
                *v -= learning_rate * (gv + weight_decay * *v);
            }
        }
        Ok(heads.iter().map(|&h| g.value(h).item()).collect())
    }

    /// One shuffled pass over `data`.
    pub fn train_epoch(
        &mut self,
        data: &Dataset,
        config: &TrainConfig,
        epoch: usize,
        rng: &mut crate::rng::Rng,
    ) -> Result<EpochSummary> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if data.classes() != self.classes || data.dim() != self.input_dim {
            return Err(Error::invalid(format!(
                "dataset (K = {}, d = {}) does not fit model (K = {}, d = {})",
                data.classes(),
                data.dim(),
                self.classes,
                self.input_dim
            )));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let mut sums = vec![0.0; self.head_count()];
        for batch in order.chunks(config.batch_size) {
            let x = data.gather(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
            let losses = self.sgd_step(&x, &labels, config.learning_rate, config.weight_decay)?;
            for (s, l) in sums.iter_mut().zip(losses) {
                *s += l * batch.len() as f64;
            }
        }
        let head_losses: Vec<f64> = sums.iter().map(|s| s / data.len() as f64).collect();
        let total = head_losses.iter().sum::<f64>() / head_losses.len() as f64;
        Ok(EpochSummary {
            epoch,
            head_losses,
            total,
        })
    }

    /// Runs `config.epochs` epochs with data order drawn from `config.seed`.
    pub fn train(&mut self, data: &Dataset, config: &TrainConfig) -> Result<Vec<EpochSummary>> {
        config.validate()?;
        let mut rng = seeded(derive_seed(config.seed, "shuffle"));
        (1..=config.epochs)
            .map(|e| self.train_epoch(data, config, e, &mut rng))
            .collect()
    }

    pub fn to_checkpoint(&self, train_config: Option<TrainConfig>) -> Checkpoint {
        let params = self.parameters();
        Checkpoint {
            classes: self.classes,
            input_dim: self.input_dim,
            architecture: self.architecture.clone(),
            layer_shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
            parameters: params.iter().map(|p| p.data().to_vec()).collect(),
            head_specs: self.head_specs.clone(),
            train_config,
            seed: self.seed,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Self::init(
            ckpt.input_dim,
            ckpt.architecture.clone(),
            ckpt.head_specs.clone(),
            ckpt.seed,
        )?;
        if model.classes != ckpt.classes {
            return Err(Error::invalid("checkpoint class count disagrees with its head specs"));
        }
        let slots = model.parameters_mut();
        if slots.len() != ckpt.parameters.len() || slots.len() != ckpt.layer_shapes.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} parameter arrays, model expects {}",
                ckpt.parameters.len(),
                slots.len()
            )));
        }
        for ((slot, shape), values) in slots.into_iter().zip(&ckpt.layer_shapes).zip(&ckpt.parameters) {
            if slot.shape() != shape.as_slice() {
                return Err(Error::invalid(format!(
                    "checkpoint layer shape {shape:?} does not match {:?}",
                    slot.shape()
                )));
            }
            *slot = Tensor::new(shape.clone(), values.clone())?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path, train_config: Option<TrainConfig>) -> Result<()> {
        write_json(path, &self.to_checkpoint(train_config))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&read_json(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub classes: usize,
    pub input_dim: usize,
    pub architecture: Architecture,
    pub layer_shapes: Vec<Vec<usize>>,
    pub parameters: Vec<Vec<f64>>,
    pub head_specs: Vec<HeadSpec>,
    pub train_config: Option<TrainConfig>,
    pub seed: u64,
}

/// `[n, K-1]` hard ordinal targets.
pub fn ordinal_targets(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(labels.len() * (classes - 1));
    for &y in labels {
        data.extend(encode(y, classes)?.into_inner());
    }
    Ok(Tensor::matrix(labels.len(), classes - 1, data)?)
}
