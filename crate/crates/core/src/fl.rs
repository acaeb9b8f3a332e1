//! Distributed SGD: local gradients, the global update and the training loop.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{run_baseline_iteration, run_iteration, IterationConfig, ProtocolError, RoundTranscript};
use crate::rng::{keyed_rng, Stream};
use crate::ClientId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlError {
    #[error("shape mismatch: expected dimension {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("client {0} has an empty dataset")]
    EmptyDataset(ClientId),

    #[error("update diverged: non-finite parameter at index {0}")]
    Divergence(usize),

    #[error("invalid task: {0}")]
    InvalidTask(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearningRate {
    Constant { eta: f64 },
    /// `eta0 / (1 + decay·t)`
    InverseTime { eta0: f64, decay: f64 },
}

impl LearningRate {
    pub fn at(&self, t: u64) -> f64 {
        match *self {
            LearningRate::Constant { eta } => eta,
            LearningRate::InverseTime { eta0, decay } => eta0 / (1.0 + decay * t as f64),
        }
    }
}

/// Global parameters `θᵗ` and the step schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub theta: Vec<f64>,
    pub iteration: u64,
    pub learning_rate: LearningRate,
}

impl ModelState {
    pub fn new(theta: Vec<f64>, learning_rate: LearningRate) -> Self {
        Self { theta, iteration: 0, learning_rate }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta_norm(&self) -> f64 {
        self.theta.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub owner: ClientId,
    pub samples: Vec<Sample>,
}

/// Per-sample loss `f(θ, x, y)` and its gradient in `θ`.
pub trait Loss: Sync {
    fn value(&self, theta: &[f64], sample: &Sample) -> f64;
    /// Adds `∇θ f` into `grad`.
    fn accumulate_gradient(&self, theta: &[f64], sample: &Sample, grad: &mut [f64]);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Built-in losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `½(xᵀθ − y)²`
    #[default]
    LeastSquares,
    /// `log(1 + e^{xᵀθ}) − y·xᵀθ` for `y ∈ {0, 1}`
    Logistic,
}

impl Loss for LossKind {
    fn value(&self, theta: &[f64], s: &Sample) -> f64 {
        let z = dot(&s.features, theta);
        match self {
            LossKind::LeastSquares => 0.5 * (z - s.target).powi(2),
            LossKind::Logistic => {
                // log(1 + e^z), stable for large |z|
                let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                softplus - s.target * z
            }
        }
    }

    fn accumulate_gradient(&self, theta: &[f64], s: &Sample, grad: &mut [f64]) {
        let z = dot(&s.features, theta);
        let scale = match self {
            LossKind::LeastSquares => z - s.target,
            LossKind::Logistic => 1.0 / (1.0 + (-z).exp()) - s.target,
        };
        for (g, x) in grad.iter_mut().zip(&s.features) {
            *g += scale * x;
        }
    }
}

/// Mean per-sample gradient of `loss` over one client's data.
pub fn compute_gradient(theta: &[f64], dataset: &ClientDataset, loss: &dyn Loss) -> Result<Vec<f64>, FlError> {
    if dataset.samples.is_empty() {
        return Err(FlError::EmptyDataset(dataset.owner));
    }
    let mut grad = vec![0.0; theta.len()];
    for s in &dataset.samples {
        if s.features.len() != theta.len() {
            return Err(FlError::Shape { expected: theta.len(), got: s.features.len() });
        }
        loss.accumulate_gradient(theta, s, &mut grad);
    }
    let n = dataset.samples.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(grad)
}

/// Gradients of every client against the shared `θ`, computed in parallel.
pub fn compute_gradients(
    theta: &[f64],
    datasets: &[ClientDataset],
    loss: &dyn Loss,
) -> Result<Vec<Vec<f64>>, FlError> {
    datasets.par_iter().map(|d| compute_gradient(theta, d, loss)).collect()
}

/// `θ − η·ḡ`
pub fn sgd_update(theta: &[f64], mean_gradient: &[f64], eta: f64) -> Result<Vec<f64>, FlError> {
    if theta.len() != mean_gradient.len() {
        return Err(FlError::Shape { expected: theta.len(), got: mean_gradient.len() });
    }
    let next: Vec<f64> = theta.iter().zip(mean_gradient).map(|(t, g)| t - eta * g).collect();
    match next.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(FlError::Divergence(i)),
        None => Ok(next),
    }
}

/// Mean loss over every sample of every client.
pub fn global_loss(theta: &[f64], datasets: &[ClientDataset], loss: &dyn Loss) -> f64 {
    let (sum, count) = datasets
        .iter()
        .flat_map(|d| &d.samples)
        .fold((0.0, 0usize), |(s, c), x| (s + loss.value(theta, x), c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Synthetic linear-regression task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub clients: usize,
    pub dimension: usize,
    pub samples_per_client: usize,
    /// Standard deviation-like scale of uniform target noise.
    #[serde(default)]
    pub noise: f64,
}

/// Generated data and the parameter that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub true_theta: Vec<f64>,
    pub datasets: Vec<ClientDataset>,
}

impl SyntheticTask {
    /// Features uniform in `[-1, 1]`, `θ*` uniform in `[-1, 1]`,
    /// `y = xᵀθ* + noise·U(-1, 1)`.
    pub fn generate(&self, seed: u64) -> Result<SyntheticData, FlError> {
        if self.clients == 0 || self.dimension == 0 || self.samples_per_client == 0 {
            return Err(FlError::InvalidTask("clients, dimension and samples must be positive".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(FlError::InvalidTask(format!("noise must be finite and non-negative, got {}", self.noise)));
        }
        let mut rng = keyed_rng(Stream::Dataset, seed, &[u64::MAX]);
        let true_theta: Vec<f64> = (0..self.dimension).map(|_| rng.random_range(-1.0..1.0)).collect();
        let datasets = (0..self.clients)
            .map(|owner| {
                let mut rng = keyed_rng(Stream::Dataset, seed, &[owner as u64]);
                let samples = (0..self.samples_per_client)
                    .map(|_| {
                        let features: Vec<f64> = (0..self.dimension).map(|_| rng.random_range(-1.0..1.0)).collect();
                        let noise = if self.noise > 0.0 { self.noise * rng.random_range(-1.0..1.0) } else { 0.0 };
                        let target = dot(&features, &true_theta) + noise;
                        Sample { features, target }
                    })
                    .collect();
                ClientDataset { owner, samples }
            })
            .collect();
        Ok(SyntheticData { true_theta, datasets })
    }
}

/// How client updates reach the global model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationPath {
    /// Masked phase aggregation.
    Secure,
    /// Quantized digits summed in the clear; reference for the secure path.
    InsecureBaseline,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub iteration: IterationConfig,
    pub path: AggregationPath,
    pub rounds: u64,
    /// Stop early once the global loss drops below this value.
    pub loss_threshold: Option<f64>,
    pub learning_rate: LearningRate,
    pub loss: LossKind,
}

/// One row of the training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub round: u64,
    pub loss: f64,
    pub theta_norm: f64,
    pub phase_estimations: u64,
    pub uplink: u64,
    pub recoveries: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingHistory {
    /// Row 0 is the initial state; row `t` is the state after round `t`.
    pub records: Vec<HistoryRecord>,
    /// Secure path only; one per executed round.
    pub transcripts: Vec<RoundTranscript>,
    /// `θᵗ` after every round, starting with `θ⁰`.
    pub trajectory: Vec<Vec<f64>>,
    pub final_model: ModelState,
    /// Set when a round could not be recovered; training stops there.
    pub halted: Option<ProtocolError>,
}

impl TrainingHistory {
    pub fn initial_loss(&self) -> f64 {
        self.records[0].loss
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().expect("history has an initial row").loss
    }

    /// Writes `round,loss,theta_norm,phase_estimations,uplink,recoveries`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs DSGD from `θ = 0` until `rounds` or the loss threshold.
pub fn run_training(config: &TrainingConfig, datasets: &[ClientDataset]) -> Result<TrainingHistory, ProtocolError> {
    let dim = datasets
        .first()
        .and_then(|d| d.samples.first())
        .map(|s| s.features.len())
        .ok_or_else(|| FlError::InvalidTask("no training data".into()))?;
    let mut model = ModelState::new(vec![0.0; dim], config.learning_rate);
    let loss = &config.loss;

    let mut records = vec![HistoryRecord {
        round: 0,
        loss: global_loss(&model.theta, datasets, loss),
        theta_norm: model.theta_norm(),
        phase_estimations: 0,
        uplink: 0,
        recoveries: 0,
    }];
    let mut trajectory = vec![model.theta.clone()];
    let mut transcripts = Vec::new();
    let mut halted = None;

    for _ in 0..config.rounds {
        if config.loss_threshold.is_some_and(|thr| records.last().unwrap().loss < thr) {
            break;
        }
        let (next, counters) = match config.path {
            AggregationPath::Secure => {
                let (transcript, next) = match run_iteration(&model, datasets, &config.iteration, loss) {
                    Err(e) if e.is_unrecoverable() => {
                        halted = Some(e);
                        break;
                    }
                    r => r?,
                };
                let c = transcript.counters;
                transcripts.push(transcript);
                (next, c)
            }
            AggregationPath::InsecureBaseline => {
                let (_, next) = match run_baseline_iteration(&model, datasets, &config.iteration, loss) {
                    Err(e) if e.is_unrecoverable() => {
                        halted = Some(e);
                        break;
                    }
                    r => r?,
                };
                (next, Default::default())
            }
        };
        model = next;
        records.push(HistoryRecord {
            round: model.iteration,
            loss: global_loss(&model.theta, datasets, loss),
            theta_norm: model.theta_norm(),
            phase_estimations: counters.phase_estimations,
            uplink: counters.uplink_messages,
            recoveries: counters.recovery_messages,
        });
        trajectory.push(model.theta.clone());
    }
    Ok(TrainingHistory { records, transcripts, trajectory, final_model: model, halted })
}
