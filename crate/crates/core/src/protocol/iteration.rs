use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::round::{execute_round, ProtocolVersion, RoundContext};
use super::{assign_subgroups, assign_two_groups, GroupAssignment, ProtocolError, RoundTranscript};
use crate::channel::sample_round_channel;
use crate::codec::{dequantize_mean, quantize, quantize_stochastic, FecConfig, QuantizationConfig, QuantizedVector};
use crate::fl::{compute_gradients, sgd_update, ClientDataset, Loss, ModelState};
use crate::masking::MaskMode;
use crate::rng::{derive_seed, keyed_rng, Stream};
use crate::ClientId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupingSpec {
    TwoGroup,
    Subgroup { groups: usize, subgroup_size: usize },
}

impl GroupingSpec {
    pub fn assign(&self, num_clients: usize, seed: u64) -> Result<GroupAssignment, ProtocolError> {
        match *self {
            GroupingSpec::TwoGroup => assign_two_groups(num_clients, seed),
            GroupingSpec::Subgroup { groups, subgroup_size } => {
                assign_subgroups(num_clients, groups, subgroup_size, seed)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum DropoutModel {
    #[default]
    None,
    /// Each client independently misses each round with probability `p`.
    Probability { p: f64 },
    /// The listed clients miss every round.
    Fixed { clients: Vec<ClientId> },
}

/// Clients that drop out of round `iteration`.
pub fn sample_dropouts(model: &DropoutModel, num_clients: usize, iteration: u64, seed: u64) -> BTreeSet<ClientId> {
    match model {
        DropoutModel::None => BTreeSet::new(),
        DropoutModel::Probability { p } => {
            let mut rng = keyed_rng(Stream::Dropout, seed, &[iteration]);
            (0..num_clients).filter(|_| rng.random::<f64>() < *p).collect()
        }
        DropoutModel::Fixed { clients } => clients.iter().copied().filter(|&i| i < num_clients).collect(),
    }
}

/// Everything a round needs besides the model and the data.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationConfig {
    pub quant: QuantizationConfig,
    pub version: ProtocolVersion,
    pub mask_mode: MaskMode,
    pub grouping: GroupingSpec,
    pub fec: FecConfig,
    pub dropout: DropoutModel,
    pub delayed_client: Option<ClientId>,
    pub stochastic_rounding: bool,
    pub seed: u64,
}

impl IterationConfig {
    fn quantize_all(&self, grads: &[Vec<f64>], iteration: u64) -> Result<Vec<QuantizedVector>, ProtocolError> {
        grads
            .iter()
            .enumerate()
            .map(|(i, g)| {
                if self.stochastic_rounding {
                    let mut rng = keyed_rng(Stream::StochasticRounding, self.seed, &[iteration, i as u64]);
                    quantize_stochastic(g, &self.quant, &mut rng)
                } else {
                    quantize(g, &self.quant)
                }
            })
            .collect::<Result<_, _>>()
            .map_err(Into::into)
    }

    /// Dropped clients for `iteration`, never including the delayed one.
    fn dropped(&self, num_clients: usize, iteration: u64) -> BTreeSet<ClientId> {
        let mut d = sample_dropouts(&self.dropout, num_clients, iteration, self.seed);
        if let Some(i) = self.delayed_client {
            d.remove(&i);
        }
        d
    }
}

/// One secure training round: gradients, masked upload, correction, decode
/// and the SGD step.
pub fn run_iteration(
    model: &ModelState,
    datasets: &[ClientDataset],
    cfg: &IterationConfig,
    loss: &dyn Loss,
) -> Result<(RoundTranscript, ModelState), ProtocolError> {
    let t = model.iteration;
    let n = datasets.len();
    let grads = compute_gradients(&model.theta, datasets, loss)?;
    let digits = cfg.quantize_all(&grads, t)?;

    let channel = sample_round_channel(n, t, cfg.seed)?;
    let assignment = cfg.grouping.assign(n, derive_seed(Stream::Grouping, cfg.seed, &[t]))?;
    let ctx = RoundContext {
        iteration: t,
        assignment: &assignment,
        channel: &channel,
        quant: &cfg.quant,
        fec: &cfg.fec,
        version: cfg.version,
        mask_mode: cfg.mask_mode,
        seed: cfg.seed,
    };
    let outcome = execute_round(&ctx, &digits, &cfg.dropped(n, t), cfg.delayed_client)?;

    let theta = sgd_update(&model.theta, &outcome.result.mean, model.learning_rate.at(t))?;
    let next = ModelState { theta, iteration: t + 1, learning_rate: model.learning_rate };
    Ok((outcome.transcript, next))
}

/// Plaintext aggregate of a baseline round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaselineRound {
    pub digit_sums: Vec<u64>,
    pub contributors: usize,
}

/// The same round with quantized digits summed in the clear.
pub fn run_baseline_iteration(
    model: &ModelState,
    datasets: &[ClientDataset],
    cfg: &IterationConfig,
    loss: &dyn Loss,
) -> Result<(BaselineRound, ModelState), ProtocolError> {
    let t = model.iteration;
    let n = datasets.len();
    let grads = compute_gradients(&model.theta, datasets, loss)?;
    let digits = cfg.quantize_all(&grads, t)?;
    let mut absent = cfg.dropped(n, t);
    absent.extend(cfg.delayed_client);

    let contributors: Vec<&QuantizedVector> =
        digits.iter().enumerate().filter(|(i, _)| !absent.contains(i)).map(|(_, v)| v).collect();
    if contributors.is_empty() {
        return Err(ProtocolError::Unrecoverable("every client dropped".into()));
    }
    let digit_sums: Vec<u64> = (0..model.dim())
        .map(|k| contributors.iter().map(|v| v.digits()[k] as u64).sum())
        .collect();
    let mean = dequantize_mean(&digit_sums, contributors.len(), &cfg.quant)?;
    let theta = sgd_update(&model.theta, &mean, model.learning_rate.at(t))?;
    let next = ModelState { theta, iteration: t + 1, learning_rate: model.learning_rate };
    Ok((BaselineRound { digit_sums, contributors: contributors.len() }, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::{LearningRate, LossKind, SyntheticTask};

    fn config(version: ProtocolVersion, dropout: DropoutModel) -> IterationConfig {
        IterationConfig {
            quant: QuantizationConfig::auto(1.0, 256, 8).unwrap(),
            version,
            mask_mode: MaskMode::Scalar,
            grouping: GroupingSpec::TwoGroup,
            fec: FecConfig::repetition(3),
            dropout,
            delayed_client: None,
            stochastic_rounding: false,
            seed: 13,
        }
    }

    fn setup() -> (ModelState, Vec<ClientDataset>) {
        let data = SyntheticTask { clients: 8, dimension: 4, samples_per_client: 10, noise: 0.1 }
            .generate(2)
            .unwrap();
        (ModelState::new(vec![0.0; 4], LearningRate::Constant { eta: 0.1 }), data.datasets)
    }

    #[test]
    fn secure_step_equals_baseline_step() {
        let (model, data) = setup();
        for version in [ProtocolVersion::Alg1, ProtocolVersion::Alg2] {
            let cfg = config(version, DropoutModel::None);
            let (tr, a) = run_iteration(&model, &data, &cfg, &LossKind::LeastSquares).unwrap();
            let (base, b) = run_baseline_iteration(&model, &data, &cfg, &LossKind::LeastSquares).unwrap();
            assert_eq!(a, b);
            assert_eq!(tr.aggregate, base.digit_sums);
            assert_eq!(tr.link.payload_bits, 4 * 8);
            assert_eq!(tr.link.fec_redundancy_bits, 2 * 4 * 8);
        }
    }

    #[test]
    fn fixed_dropout_matches_baseline() {
        let (model, data) = setup();
        let cfg = config(ProtocolVersion::Alg2, DropoutModel::Fixed { clients: vec![1] });
        let (tr, a) = run_iteration(&model, &data, &cfg, &LossKind::LeastSquares).unwrap();
        let (base, b) = run_baseline_iteration(&model, &data, &cfg, &LossKind::LeastSquares).unwrap();
        assert_eq!(a, b);
        assert_eq!(base.contributors, 7);
        assert_eq!(tr.contributors, 7);
    }

    #[test]
    fn everyone_dropped_is_unrecoverable() {
        let (model, data) = setup();
        let cfg = config(ProtocolVersion::Alg2, DropoutModel::Probability { p: 1.0 });
        let err = run_iteration(&model, &data, &cfg, &LossKind::LeastSquares).unwrap_err();
        assert!(err.is_unrecoverable());
    }

    #[test]
    fn seeded_iteration_is_deterministic() {
        let (model, data) = setup();
        let cfg = config(ProtocolVersion::Alg2, DropoutModel::Probability { p: 0.1 });
        let a = run_iteration(&model, &data, &cfg, &LossKind::LeastSquares);
        let b = run_iteration(&model, &data, &cfg, &LossKind::LeastSquares);
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_sampling() {
        assert!(sample_dropouts(&DropoutModel::None, 8, 0, 1).is_empty());
        assert_eq!(sample_dropouts(&DropoutModel::Fixed { clients: vec![2, 9] }, 8, 0, 1), [2].into());
        let all = sample_dropouts(&DropoutModel::Probability { p: 1.0 }, 8, 0, 1);
        assert_eq!(all.len(), 8);
        let a = sample_dropouts(&DropoutModel::Probability { p: 0.5 }, 64, 3, 1);
        assert_eq!(a, sample_dropouts(&DropoutModel::Probability { p: 0.5 }, 64, 3, 1));
        assert!(a.len() > 10 && a.len() < 54);
    }
}
