//! Synthetic ordinal datasets with controllable class priors.
//!
//! Class-conditional feature distributions depend only on the class, never on
//! the requested label distribution, so datasets drawn under different priors
//! differ by label shift alone.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::ordinal::LabelDistribution;
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub classes: usize,
    pub dim: usize,
    /// Spacing between consecutive class means along the ordinal direction.
    pub separation: f64,
    /// Isotropic standard deviation around each class mean.
    pub noise: f64,
    /// Length of the per-class offset orthogonal to the ordinal direction.
    pub offset: f64,
    pub distribution: LabelDistribution,
    pub n: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.distribution.classes() != self.classes {
            return Err(Error::invalid(format!(
                "distribution has {} classes, generator has {}",
                self.distribution.classes(),
                self.classes
            )));
        }
        if self.dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if !(self.separation > 0.0) || !(self.noise > 0.0) || !(self.offset >= 0.0) {
            return Err(Error::invalid(format!(
                "separation ({}) and noise ({}) must be positive, offset ({}) nonnegative",
                self.separation, self.noise, self.offset
            )));
        }
        if self.n < self.classes {
            return Err(Error::invalid(format!(
                "n = {} is smaller than the class count {}",
                self.n, self.classes
            )));
        }
        Ok(())
    }

    /// Mean of class `c` (1-based): `c·s` on axis 0 plus `offset` on one other axis.
    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        mean[0] = class as f64 * self.separation;
        if self.dim > 1 {
            mean[1 + (class - 1) % (self.dim - 1)] += self.offset;
        }
        mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Generated(GeneratorSpec),
    Resampled {
        source: Box<Provenance>,
        target: LabelDistribution,
        n: usize,
        seed: u64,
    },
    Loaded {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize, provenance: Provenance) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "features {:?} do not match {} labels",
                features.shape(),
                labels.len()
            )));
        }
        if let Some(y) = labels.iter().find(|&&y| y == 0 || y > classes) {
            return Err(Error::invalid(format!("label {y} outside 1..={classes}")));
        }
        Ok(Self {
            features,
            labels,
            classes,
            provenance,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y - 1] += 1;
        }
        counts
    }

    pub fn label_distribution(&self) -> Result<LabelDistribution> {
        LabelDistribution::empirical(&self.labels, self.classes)
    }

    /// Rows gathered by index, as an `[idx.len(), d]` tensor.
    pub fn gather(&self, idx: &[usize]) -> Tensor {
        gather_rows(&self.features, idx)
    }

    /// Writes `f1..fd,label` CSV plus a `<path>.json` provenance sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (i, y) in self.labels.iter().enumerate() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;

        let sidecar = Sidecar {
            classes: self.classes,
            dim: self.dim(),
            n: self.len(),
            provenance: self.provenance.clone(),
        };
        write_json(&sidecar_path(path), &sidecar)
    }

    /// Reads a dataset CSV. The class count comes from the sidecar when it
    /// exists, otherwise from the largest label.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let dim = headers.len().saturating_sub(1);
        if dim == 0 || headers.get(dim) != Some("label") {
            return Err(Error::invalid(format!(
                "{}: expected header f1..fd,label",
                path.display()
            )));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            for field in rec.iter().take(dim) {
                features.push(field.parse::<f64>().map_err(|e| {
                    Error::invalid(format!("{} row {}: {e}", path.display(), line + 2))
                })?);
            }
            labels.push(rec[dim].parse::<usize>().map_err(|e| {
                Error::invalid(format!("{} row {}: {e}", path.display(), line + 2))
            })?);
        }
        if labels.is_empty() {
            return Err(Error::invalid(format!("{} has no rows", path.display())));
        }
        let side = sidecar_path(path);
        let (classes, provenance) = if side.exists() {
            let s: Sidecar = read_json(&side)?;
            (s.classes, s.provenance)
        } else {
            let k = labels.iter().copied().max().unwrap_or(0).max(2);
            (k, Provenance::Loaded { path: path.to_path_buf() })
        };
        let n = labels.len();
        Self::new(Tensor::matrix(n, dim, features)?, labels, classes, provenance)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    classes: usize,
    dim: usize,
    n: usize,
    provenance: Provenance,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn gather_rows(features: &Tensor, idx: &[usize]) -> Tensor {
    let d = features.cols();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(features.row(i));
    }
    Tensor::matrix(idx.len(), d, data).expect("gathered rows")
}

/// Largest-remainder rounding of `n · probs`; ties go to the lower class.
pub fn class_counts(dist: &LabelDistribution, n: usize) -> Vec<usize> {
    let raw: Vec<f64> = dist.probs().iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| (r + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    let frac = |i: usize| raw[i] - counts[i] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let counts = class_counts(&spec.distribution, spec.n);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &m)| std::iter::repeat_n(c + 1, m))
        .collect();
    labels.shuffle(&mut rng);

    let means: Vec<Vec<f64>> = (1..=spec.classes).map(|c| spec.class_mean(c)).collect();
    let mut features = Vec::with_capacity(spec.n * spec.dim);
    for &y in &labels {
        for &m in &means[y - 1] {
            let z: f64 = rng.sample(StandardNormal);
            features.push(m + spec.noise * z);
        }
    }
    Dataset::new(
        Tensor::matrix(spec.n, spec.dim, features)?,
        labels,
        spec.classes,
        Provenance::Generated(spec.clone()),
    )
}

/// Draws per-class counts matching `target` from `source`; sampling is without
/// replacement while a class has enough rows and with replacement otherwise.
pub fn resample(source: &Dataset, target: &LabelDistribution, n: usize, seed: u64) -> Result<Dataset> {
    if target.classes() != source.classes() {
        return Err(Error::invalid(format!(
            "target has {} classes, dataset has {}",
            target.classes(),
            source.classes()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); source.classes()];
    for (i, &y) in source.labels().iter().enumerate() {
        by_class[y - 1].push(i);
    }
    let counts = class_counts(target, n);
    let mut rng = seeded(seed);
    let mut picked = Vec::with_capacity(n);
    for (c, &m) in counts.iter().enumerate() {
        let pool = &by_class[c];
        if m == 0 {
            continue;
        }
        if pool.is_empty() {
            return Err(Error::invalid(format!(
                "target puts mass on class {} which is absent from the source",
                c + 1
            )));
        }
        if m <= pool.len() {
            picked.extend(pool.choose_multiple(&mut rng, m).copied());
        } else {
            picked.extend((0..m).map(|_| pool[rng.random_range(0..pool.len())]));
        }
    }
    picked.shuffle(&mut rng);
    let labels = picked.iter().map(|&i| source.labels()[i]).collect();
    Dataset::new(
        source.gather(&picked),
        labels,
        source.classes(),
        Provenance::Resampled {
            source: Box::new(source.provenance().clone()),
            target: target.clone(),
            n,
            seed,
        },
    )
}

/// Perturbation strengths for one augmented view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    /// Each feature is multiplied by `1 + U(-jitter, jitter)`.
    pub jitter: f64,
    /// Probability of zeroing a feature.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            noise: 0.5,
            jitter: 0.1,
            dropout: 0.05,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self {
            noise: 0.0,
            jitter: 0.0,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0) || !(self.jitter >= 0.0) || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "augmentation needs noise >= 0, jitter >= 0, dropout in [0, 1): {self:?}"
            )));
        }
        Ok(())
    }
}

/// One random view of `x`: jitter, then dropout, then additive noise.
pub fn augment(x: &[f64], spec: &AugmentationSpec, rng: &mut Rng) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let mut out = v;
            if spec.jitter > 0.0 {
                out *= 1.0 + rng.random_range(-spec.jitter..=spec.jitter);
            }
            if spec.dropout > 0.0 && rng.random::<f64>() < spec.dropout {
                out = 0.0;
            }
            if spec.noise > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                out += spec.noise * z;
            }
            out
        })
        .collect()
}

/// Augments every row of an `[n, d]` tensor.
pub fn augment_rows(x: &Tensor, spec: &AugmentationSpec, rng: &mut Rng) -> Tensor {
    let d = x.cols();
    let mut data = Vec::with_capacity(x.numel());
    for r in 0..x.rows() {
        data.extend(augment(x.row(r), spec, rng));
    }
    Tensor::matrix(x.rows(), d, data).expect("augmented rows")
}
