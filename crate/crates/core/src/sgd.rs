//! Noisy SGD on small synthetic tasks.
//!
//! Per-example gradients are clipped to norm C, averaged over a batch and
//! perturbed with N(0, τ²I) before the update. Training records what an
//! attacker observes: the published mean at every step, the gradients of
//! designated probe points at the pre-update parameters, and gradients of
//! fresh background points from which the attacker estimates the gradient
//! distribution.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain, StreamRng};
use crate::trace::{Background, Trace};

/// Scales `g` into the ball of radius `clip`; shorter vectors pass unchanged.
pub fn clip_gradient(g: &DVector<f64>, clip: f64) -> DVector<f64> {
    let norm = g.norm();
    if norm > clip {
        g * (clip / norm)
    } else {
        g.clone()
    }
}

/// Mean of the clipped gradients plus isotropic noise of variance τ².
pub fn noisy_step(gradients: &[DVector<f64>], clip: f64, tau: f64, rng: &mut StreamRng) -> Result<DVector<f64>> {
    let first = gradients
        .first()
        .ok_or_else(|| Error::invalid("gradients", "batch is empty"))?;
    if !(clip > 0.0) {
        return Err(Error::invalid("clip", "must be positive"));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau", "must be finite and >= 0"));
    }
    let mut mean = DVector::zeros(first.len());
    for g in gradients {
        mean += clip_gradient(g, clip);
    }
    mean /= gradients.len() as f64;
    add_noise(&mut mean, tau, rng);
    Ok(mean)
}

fn add_noise(v: &mut DVector<f64>, tau: f64, rng: &mut StreamRng) {
    if tau > 0.0 {
        for x in v.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x += tau * z;
        }
    }
}

/// Model and loss of a synthetic task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Squared loss ½(xᵀw − y)².
    LinearRegression,
    /// Log loss with labels in {0, 1}.
    LogisticRegression,
}

/// A teacher model generating labelled examples with standard normal
/// features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub feature_dim: usize,
    /// Variance of the label noise; for logistic tasks it perturbs the logit.
    pub label_noise: f64,
    pub true_params: Vec<f64>,
}

/// Features and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<DVector<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be >= 1"));
        }
        if self.true_params.len() != self.feature_dim {
            return Err(Error::invalid(
                "true_params",
                format!("length {} differs from feature_dim {}", self.true_params.len(), self.feature_dim),
            ));
        }
        if !(self.label_noise >= 0.0 && self.label_noise.is_finite()) {
            return Err(Error::invalid("label_noise", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Draws `count` examples.
    pub fn sample(&self, count: usize, rng: &mut StreamRng) -> Dataset {
        let beta = DVector::from_column_slice(&self.true_params);
        let sd = self.label_noise.sqrt();
        let mut features = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let x = DVector::from_iterator(
                self.feature_dim,
                (0..self.feature_dim).map(|_| rng.sample::<f64, _>(StandardNormal)),
            );
            let eps: f64 = rng.sample::<f64, _>(StandardNormal) * sd;
            let signal = x.dot(&beta) + eps;
            let y = match self.kind {
                TaskKind::LinearRegression => signal,
                TaskKind::LogisticRegression => {
                    let u: f64 = rng.random();
                    if u < sigmoid(signal) {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            features.push(x);
            labels.push(y);
        }
        Dataset { features, labels }
    }

    /// Per-example loss gradient at `w`.
    pub fn gradient(&self, w: &DVector<f64>, x: &DVector<f64>, y: f64) -> DVector<f64> {
        let z = x.dot(w);
        let residual = match self.kind {
            TaskKind::LinearRegression => z - y,
            TaskKind::LogisticRegression => sigmoid(z) - y,
        };
        x * residual
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Optimizer settings. `clip = +∞` disables clipping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    #[serde(with = "extended_f64")]
    pub clip: f64,
    pub tau: f64,
    pub seed: u64,
    /// Training-set size N.
    pub dataset_size: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be finite and >= 0"));
        }
        if self.batch_size == 0 || self.batch_size > self.dataset_size {
            return Err(Error::invalid(
                "batch_size",
                format!("{} must lie in [1, dataset_size = {}]", self.batch_size, self.dataset_size),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be >= 1"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::invalid("clip", "must be positive"));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// What to record besides the published means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    /// The first `members` training points become member probes.
    pub members: usize,
    /// Fresh points never used in training.
    pub nonmembers: usize,
    /// Fresh points whose gradients are recorded at every step.
    pub background: usize,
}

/// A task and its training run, as accepted in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub task: SyntheticTask,
    pub config: SgdConfig,
    #[serde(default)]
    pub probes: ProbeOptions,
}

/// Gradients of one probe point, one per step.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeTrace {
    pub member: bool,
    pub gradients: Vec<DVector<f64>>,
}

/// Everything an attacker observes during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTrace {
    pub batch_size: usize,
    pub dim: usize,
    pub means: Vec<DVector<f64>>,
    pub probes: Vec<ProbeTrace>,
    /// `background[t]` holds the background gradients at step t.
    pub background: Vec<Vec<DVector<f64>>>,
}

impl TrainingTrace {
    /// The single-probe view used by the trace file format.
    pub fn probe_trace(&self, probe: usize) -> Result<Trace> {
        let p = self
            .probes
            .get(probe)
            .ok_or_else(|| Error::invalid("probe", format!("{probe} out of range")))?;
        Trace::new(self.batch_size, self.means.clone(), p.gradients.clone())
    }

    pub fn background_set(&self) -> Result<Background> {
        Background::new(self.dim, self.background.clone())
    }
}

/// Final parameters and the recorded trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub params: DVector<f64>,
    pub trace: TrainingTrace,
}

/// Runs noisy SGD from zero parameters.
///
/// Batches are drawn without replacement from a per-epoch shuffle; a
/// remainder shorter than a batch is dropped before reshuffling. Probe and
/// background gradients are clipped like training gradients, so they live
/// in the same space as the published means.
pub fn train(task: &SyntheticTask, config: &SgdConfig, probes: &ProbeOptions) -> Result<TrainOutput> {
    task.validate()?;
    config.validate()?;
    if probes.members > config.dataset_size {
        return Err(Error::invalid("members", "more member probes than training points"));
    }
    let data = task.sample(config.dataset_size, &mut rng::stream(config.seed, Domain::SgdData, 0));
    let outside = task.sample(probes.nonmembers, &mut rng::stream(config.seed, Domain::SgdData, 1));
    let bg = task.sample(probes.background, &mut rng::stream(config.seed, Domain::SgdBackground, 0));

    let d = task.feature_dim;
    let n = config.batch_size;
    let clip = |g: DVector<f64>| {
        if config.clip.is_finite() {
            clip_gradient(&g, config.clip)
        } else {
            g
        }
    };
    let grad = |w: &DVector<f64>, set: &Dataset, i: usize| clip(task.gradient(w, &set.features[i], set.labels[i]));

    let mut w = DVector::zeros(d);
    let mut order: Vec<usize> = (0..config.dataset_size).collect();
    let mut cursor = order.len();
    let mut epoch = 0u64;

    let mut means = Vec::with_capacity(config.iterations);
    let mut member_grads = vec![Vec::with_capacity(config.iterations); probes.members];
    let mut outside_grads = vec![Vec::with_capacity(config.iterations); probes.nonmembers];
    let mut background = Vec::with_capacity(if probes.background > 0 { config.iterations } else { 0 });

    for t in 0..config.iterations {
        if cursor + n > order.len() {
            order.shuffle(&mut rng::stream(config.seed, Domain::SgdBatch, epoch));
            epoch += 1;
            cursor = 0;
        }
        let batch = &order[cursor..cursor + n];
        cursor += n;

        for (i, g) in member_grads.iter_mut().enumerate() {
            g.push(grad(&w, &data, i));
        }
        for (i, g) in outside_grads.iter_mut().enumerate() {
            g.push(grad(&w, &outside, i));
        }
        if probes.background > 0 {
            background.push((0..bg.len()).map(|i| grad(&w, &bg, i)).collect());
        }

        let mut mean = DVector::zeros(d);
        for &i in batch {
            mean += grad(&w, &data, i);
        }
        mean /= n as f64;
        add_noise(&mut mean, config.tau, &mut rng::stream(config.seed, Domain::SgdNoise, t as u64));

        w -= &mean * config.learning_rate;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: t });
        }
        means.push(mean);
    }

    let probes = member_grads
        .into_iter()
        .map(|gradients| ProbeTrace { member: true, gradients })
        .chain(outside_grads.into_iter().map(|gradients| ProbeTrace { member: false, gradients }))
        .collect();
    Ok(TrainOutput {
        params: w,
        trace: TrainingTrace {
            batch_size: n,
            dim: d,
            means,
            probes,
            background,
        },
    })
}

/// Serializes non-finite floats as the strings "inf", "-inf" and "nan".
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse::<f64>().map_err(serde::de::Error::custom),
        }
    }
}
