//! JSON scenario configs and the runners behind the `phyfed` command.
//!
//! Every runner writes its artifacts into an output directory and returns a
//! [`ScenarioReport`] whose `violations` list is empty only when every
//! checked invariant held.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::analysis::{
    binomial_two_sided_p, chi_square_uniformity, delayed_client_attack, difference_leak_probe, verify_overhead,
    AnalysisError, AttackConfig, AttackOutcome, AttackScenario, LeakReport, OverheadReport, UniformityReport, ALPHA,
    MIN_SAMPLES_PER_BIN,
};
use crate::codec::{FecConfig, QuantizationConfig};
use crate::fl::{
    run_training, AggregationPath, FlError, HistoryRecord, LearningRate, LossKind, ModelState, SyntheticTask,
    TrainingConfig, TrainingHistory,
};
use crate::masking::MaskMode;
use crate::protocol::{
    read_transcripts, run_baseline_iteration, run_iteration, write_transcripts, DropoutModel, GroupingSpec,
    IterationConfig, LateDisposition, ProtocolError, ProtocolVersion, RoundTranscript, MIN_CLIENTS_TWO_GROUP, MIN_SIDE,
};
use crate::{ClientId, Turn32};

const UNIFORMITY_BINS: usize = 16;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config does not parse: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),

    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    #[error(transparent)]
    Analysis(#[from] AnalysisError),

    #[error(transparent)]
    Fl(#[from] FlError),

    #[error("writing history: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io { path: path.to_path_buf(), source }
}

/// PSK order: the smallest admissible power of two, or a fixed value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Modulation {
    #[default]
    Auto,
    Fixed(u64),
}

impl Serialize for Modulation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Modulation::Auto => s.serialize_str("auto"),
            Modulation::Fixed(m) => s.serialize_u64(*m),
        }
    }
}

impl<'de> Deserialize<'de> for Modulation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) if s == "auto" => Ok(Modulation::Auto),
            serde_json::Value::Number(n) if n.as_u64().is_some() => Ok(Modulation::Fixed(n.as_u64().unwrap())),
            other => Err(D::Error::custom(format!("modulation must be \"auto\" or a positive integer, got {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizationSpec {
    pub clip: f64,
    pub levels: u32,
    pub stochastic_rounding: bool,
}

impl Default for QuantizationSpec {
    fn default() -> Self {
        Self { clip: 1.0, levels: 256, stochastic_rounding: false }
    }
}

/// Artifact file names inside the output directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub history: String,
    pub transcripts: String,
    pub report: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            history: "history.csv".into(),
            transcripts: "transcripts.jsonl".into(),
            report: "report.json".into(),
        }
    }
}

fn default_grouping() -> GroupingSpec {
    GroupingSpec::TwoGroup
}

fn default_protocol() -> ProtocolVersion {
    ProtocolVersion::Alg2
}

fn default_learning_rate() -> LearningRate {
    LearningRate::Constant { eta: 0.1 }
}

fn default_dimension() -> usize {
    8
}

fn default_samples() -> usize {
    32
}

/// A complete experiment description. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub clients: usize,
    #[serde(default = "default_grouping")]
    pub grouping: GroupingSpec,
    #[serde(default = "default_protocol")]
    pub protocol: ProtocolVersion,
    #[serde(default)]
    pub mask_mode: MaskMode,
    #[serde(default)]
    pub quantization: QuantizationSpec,
    #[serde(default)]
    pub modulation: Modulation,
    #[serde(default)]
    pub fec: FecConfig,
    #[serde(default)]
    pub dropout: DropoutModel,
    #[serde(default)]
    pub delayed_client: Option<ClientId>,
    pub rounds: u64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: LearningRate,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_samples")]
    pub samples_per_client: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub loss_threshold: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub outputs: OutputSpec,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn quant(&self) -> Result<QuantizationConfig, crate::codec::CodecError> {
        let q = &self.quantization;
        match self.modulation {
            Modulation::Auto => QuantizationConfig::auto(q.clip, q.levels, self.clients),
            Modulation::Fixed(m) => QuantizationConfig::new(q.clip, q.levels, m, self.clients),
        }
    }

    /// Checks every cross-field constraint and reports all violations at once.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut v = Vec::new();
        let s = self.clients;
        if self.name.trim().is_empty() {
            v.push("name must not be empty".to_string());
        }
        if s < MIN_CLIENTS_TWO_GROUP {
            v.push(format!("clients = {s} is below the minimum of {MIN_CLIENTS_TWO_GROUP}"));
        }
        if let GroupingSpec::Subgroup { groups, subgroup_size } = self.grouping {
            if subgroup_size < MIN_SIDE {
                v.push(format!(
                    "subgroup_size L = {subgroup_size} is below the security floor L >= {MIN_SIDE}: \
                     with a single client per side each mask is one pairwise phase that the partner also holds"
                ));
            }
            if groups == 0 {
                v.push("groups K must be at least 1".into());
            } else if subgroup_size >= MIN_SIDE {
                let full = groups * 2 * subgroup_size;
                if s < full || s >= full + 2 * subgroup_size {
                    v.push(format!(
                        "clients = {s} cannot form K = {groups} groups of 2L = {} (need {full} <= clients < {})",
                        2 * subgroup_size,
                        full + 2 * subgroup_size
                    ));
                }
            }
        }
        if s > 0 {
            if let Err(e) = self.quant() {
                v.push(format!("quantization: {e}"));
            }
        }
        if let Err(e) = self.fec.validate() {
            v.push(format!("fec: {e}"));
        }
        match &self.dropout {
            DropoutModel::None => {}
            DropoutModel::Probability { p } => {
                if !(p.is_finite() && (0.0..=1.0).contains(p)) {
                    v.push(format!("dropout probability must be in [0, 1], got {p}"));
                }
            }
            DropoutModel::Fixed { clients } => {
                let unique: BTreeSet<_> = clients.iter().collect();
                if unique.len() != clients.len() {
                    v.push("dropout list contains duplicates".into());
                }
                if let Some(bad) = clients.iter().find(|&&i| i >= s) {
                    v.push(format!("dropout list names client {bad}, but only {s} clients exist"));
                }
                if s > 0 && unique.len() >= s {
                    v.push("dropout list drops every client".into());
                }
                if let Some(d) = self.delayed_client.filter(|d| unique.contains(d)) {
                    v.push(format!("client {d} cannot be both delayed and dropped"));
                }
            }
        }
        if let Some(d) = self.delayed_client.filter(|&d| d >= s) {
            v.push(format!("delayed_client = {d} is out of range for {s} clients"));
        }
        if self.rounds == 0 {
            v.push("rounds must be at least 1".into());
        }
        if self.dimension == 0 {
            v.push("dimension must be at least 1".into());
        }
        if self.samples_per_client == 0 {
            v.push("samples_per_client must be at least 1".into());
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            v.push(format!("noise must be finite and non-negative, got {}", self.noise));
        }
        match self.learning_rate {
            LearningRate::Constant { eta } if !(eta.is_finite() && eta > 0.0) => {
                v.push(format!("learning rate must be positive, got {eta}"));
            }
            LearningRate::InverseTime { eta0, decay } if !(eta0.is_finite() && eta0 > 0.0 && decay >= 0.0) => {
                v.push(format!("inverse-time schedule needs eta0 > 0 and decay >= 0, got {eta0}, {decay}"));
            }
            _ => {}
        }
        if let Some(t) = self.loss_threshold.filter(|t| !t.is_finite()) {
            v.push(format!("loss_threshold must be finite, got {t}"));
        }
        let o = &self.outputs;
        let names = [&o.history, &o.transcripts, &o.report];
        if names.iter().any(|n| n.trim().is_empty()) {
            v.push("output file names must not be empty".into());
        }
        if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
            v.push("output file names must be distinct".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(v))
        }
    }

    fn iteration_config(&self) -> Result<IterationConfig, ScenarioError> {
        Ok(IterationConfig {
            quant: self.quant().map_err(ProtocolError::from)?,
            version: self.protocol,
            mask_mode: self.mask_mode,
            grouping: self.grouping,
            fec: self.fec,
            dropout: self.dropout.clone(),
            delayed_client: self.delayed_client,
            stochastic_rounding: self.quantization.stochastic_rounding,
            seed: self.seed,
        })
    }

    fn task(&self) -> SyntheticTask {
        SyntheticTask {
            clients: self.clients,
            dimension: self.dimension,
            samples_per_client: self.samples_per_client,
            noise: self.noise,
        }
    }

    fn training(&self, path: AggregationPath) -> Result<TrainingConfig, ScenarioError> {
        Ok(TrainingConfig {
            iteration: self.iteration_config()?,
            path,
            rounds: self.rounds,
            loss_threshold: self.loss_threshold,
            learning_rate: self.learning_rate,
            loss: self.loss,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Run,
    Round,
    Attack,
    Analyze,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HaltInfo {
    pub iteration: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverheadSummary {
    pub rounds: usize,
    pub exact_match_all: bool,
    pub total_phase_estimations: u64,
    pub total_uplink_messages: u64,
    pub total_recovery_messages: u64,
    pub total_private_phase_reveals: u64,
    /// Reports of rounds whose counts disagree with the formulas.
    pub mismatches: Vec<OverheadReport>,
}

impl OverheadSummary {
    fn from_transcripts(ts: &[RoundTranscript]) -> Self {
        let reports: Vec<OverheadReport> = ts.iter().map(verify_overhead).collect();
        Self {
            rounds: ts.len(),
            exact_match_all: reports.iter().all(|r| r.exact_match),
            total_phase_estimations: ts.iter().map(|t| t.counters.phase_estimations).sum(),
            total_uplink_messages: ts.iter().map(|t| t.counters.uplink_messages).sum(),
            total_recovery_messages: ts.iter().map(|t| t.counters.recovery_messages).sum(),
            total_private_phase_reveals: ts.iter().map(|t| t.counters.private_phase_reveals).sum(),
            mismatches: reports.into_iter().filter(|r| !r.exact_match).collect(),
        }
    }

    fn violations(&self, v: &mut Vec<String>) {
        for r in &self.mismatches {
            v.push(format!(
                "round {}: {} phase estimations measured, formula gives {}",
                r.iteration, r.measured_phase_estimations, r.formula_phase_estimations
            ));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub rounds_requested: u64,
    pub rounds_executed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_ratio: f64,
    pub baseline_final_loss: f64,
    /// Secure and plaintext-quantized trajectories agree bit for bit.
    pub trajectories_identical: bool,
    pub first_divergence: Option<u64>,
    pub halted: Option<HaltInfo>,
    pub overhead: OverheadSummary,
    pub late_messages_processed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundReport {
    pub iteration: u64,
    pub contributors: usize,
    pub dropped: Vec<ClientId>,
    pub delayed: Option<ClientId>,
    /// Decoded digit sums equal the plaintext sums of the contributors.
    pub aggregate_matches_plaintext: bool,
    pub overhead: OverheadReport,
    pub leak_probe: LeakReport,
    pub late_messages_processed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackReport {
    pub scenario: AttackScenario,
    pub delayed_client: ClientId,
    pub trials: u64,
    pub modulus: u64,
    pub digits_total: u64,
    pub digits_recovered: u64,
    pub recovery_rate: f64,
    pub rounds_fully_recovered: u64,
    /// First digit of each trial, one independent draw per round.
    pub test_successes: u64,
    pub guess_rate: f64,
    pub binomial_p_value: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub rounds: usize,
    pub overhead: OverheadSummary,
    /// Rounds whose recorded aggregate matches a fresh decode of the
    /// recorded messages and correction.
    pub aggregates_consistent: usize,
    /// Difference probe over the first message of each round.
    pub leak_probe: LeakReport,
    /// Uniformity of the first masked symbol of each round's first message.
    pub masked_symbol_uniformity: Option<UniformityReport>,
    pub uniformity_note: Option<String>,
    pub late_messages_processed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum ReportBody {
    Run(RunReport),
    Round(RoundReport),
    Attack(AttackReport),
    Analyze(AnalysisReport),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: Option<u64>,
    pub passed: bool,
    pub violations: Vec<String>,
    #[serde(flatten)]
    pub body: ReportBody,
}

fn late_processed(ts: &[RoundTranscript], v: &mut Vec<String>) -> usize {
    let mut count = 0;
    for t in ts {
        for l in &t.late_messages {
            if matches!(l.disposition, LateDisposition::Processed { .. }) {
                count += 1;
                v.push(format!(
                    "round {}: late message from client {} was de-rotated with recovery shares",
                    t.iteration, l.message.owner
                ));
            }
        }
    }
    count
}

fn write_history(path: &Path, h: &[HistoryRecord]) -> Result<(), ScenarioError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(f));
    w.write_record(["round", "loss", "theta_norm", "phase_estimations", "uplink", "recoveries"])?;
    for r in h {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn write_transcript_file(path: &Path, ts: &[RoundTranscript]) -> Result<(), ScenarioError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    write_transcripts(&mut w, ts).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn write_report(path: &Path, r: &ScenarioReport) -> Result<(), ScenarioError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, r)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn finish(name: &str, seed: Option<u64>, violations: Vec<String>, body: ReportBody) -> ScenarioReport {
    ScenarioReport { name: name.to_string(), seed, passed: violations.is_empty(), violations, body }
}

fn halt_info(h: &TrainingHistory) -> Option<HaltInfo> {
    h.halted.as_ref().map(|e| HaltInfo { iteration: h.final_model.iteration, error: e.to_string() })
}

/// Trains along the secure and the plaintext-quantized paths and compares them.
pub fn run_training_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<ScenarioReport, ScenarioError> {
    let data = cfg.task().generate(cfg.seed)?;
    let secure = run_training(&cfg.training(AggregationPath::Secure)?, &data.datasets)?;
    let baseline = run_training(&cfg.training(AggregationPath::InsecureBaseline)?, &data.datasets)?;

    let mut v = Vec::new();
    let halted = halt_info(&secure);
    if let Some(h) = &halted {
        v.push(format!("round {} unrecoverable: {}", h.iteration, h.error));
    }
    let first_divergence = secure
        .trajectory
        .iter()
        .zip(&baseline.trajectory)
        .position(|(a, b)| a.iter().map(|x| x.to_bits()).ne(b.iter().map(|x| x.to_bits())))
        .map(|i| i as u64);
    // after a halt only the executed prefix is comparable
    let lengths_agree = halted.is_some() || secure.trajectory.len() == baseline.trajectory.len();
    let trajectories_identical = first_divergence.is_none() && lengths_agree;
    if !trajectories_identical {
        v.push(format!(
            "secure trajectory diverges from the quantized baseline at round {}",
            first_divergence.unwrap_or(secure.trajectory.len().min(baseline.trajectory.len()) as u64)
        ));
    }
    let overhead = OverheadSummary::from_transcripts(&secure.transcripts);
    overhead.violations(&mut v);
    let late = late_processed(&secure.transcripts, &mut v);

    write_history(&out.join(&cfg.outputs.history), &secure.records)?;
    write_transcript_file(&out.join(&cfg.outputs.transcripts), &secure.transcripts)?;
    let report = finish(
        &cfg.name,
        Some(cfg.seed),
        v,
        ReportBody::Run(RunReport {
            rounds_requested: cfg.rounds,
            rounds_executed: secure.final_model.iteration,
            initial_loss: secure.initial_loss(),
            final_loss: secure.final_loss(),
            loss_ratio: secure.final_loss() / secure.initial_loss(),
            baseline_final_loss: baseline.final_loss(),
            trajectories_identical,
            first_divergence,
            halted,
            overhead,
            late_messages_processed: late,
        }),
    );
    write_report(&out.join(&cfg.outputs.report), &report)?;
    Ok(report)
}

/// One aggregation round at `θ = 0`, checked against the plaintext sum.
pub fn run_round_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<ScenarioReport, ScenarioError> {
    let data = cfg.task().generate(cfg.seed)?;
    let icfg = cfg.iteration_config()?;
    let model = ModelState::new(vec![0.0; cfg.dimension], cfg.learning_rate);
    let loss = &cfg.loss;
    let (transcript, next) = run_iteration(&model, &data.datasets, &icfg, loss)?;
    let (baseline, _) = run_baseline_iteration(&model, &data.datasets, &icfg, loss)?;

    let mut v = Vec::new();
    let aggregate_matches_plaintext =
        transcript.aggregate == baseline.digit_sums && transcript.contributors == baseline.contributors;
    if !aggregate_matches_plaintext {
        v.push("decoded aggregate differs from the plaintext digit sums".into());
    }
    let overhead = verify_overhead(&transcript);
    if !overhead.exact_match {
        v.push(format!(
            "{} phase estimations measured, formula gives {}",
            overhead.measured_phase_estimations, overhead.formula_phase_estimations
        ));
    }
    let ts = [transcript];
    let late = late_processed(&ts, &mut v);
    let [transcript] = ts;

    let global = |theta: &[f64]| crate::fl::global_loss(theta, &data.datasets, loss);
    let c = transcript.counters;
    let history = [
        HistoryRecord {
            round: 0,
            loss: global(&model.theta),
            theta_norm: model.theta_norm(),
            phase_estimations: 0,
            uplink: 0,
            recoveries: 0,
        },
        HistoryRecord {
            round: 1,
            loss: global(&next.theta),
            theta_norm: next.theta_norm(),
            phase_estimations: c.phase_estimations,
            uplink: c.uplink_messages,
            recoveries: c.recovery_messages,
        },
    ];
    write_history(&out.join(&cfg.outputs.history), &history)?;
    write_transcript_file(&out.join(&cfg.outputs.transcripts), std::slice::from_ref(&transcript))?;

    let report = finish(
        &cfg.name,
        Some(cfg.seed),
        v,
        ReportBody::Round(RoundReport {
            iteration: transcript.iteration,
            contributors: transcript.contributors,
            dropped: transcript.dropped.iter().copied().collect(),
            delayed: transcript.delayed,
            aggregate_matches_plaintext,
            overhead,
            leak_probe: difference_leak_probe(&transcript.messages, transcript.modulus),
            late_messages_processed: late,
        }),
    );
    write_report(&out.join(&cfg.outputs.report), &report)?;
    Ok(report)
}

/// Repeats the delayed-client attack for `rounds` independent rounds.
pub fn run_attack_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<ScenarioReport, ScenarioError> {
    let quant = cfg.quant().map_err(ProtocolError::from)?;
    let scenario = match cfg.protocol {
        ProtocolVersion::Alg1 => AttackScenario::Alg1NaiveRemedy,
        ProtocolVersion::Alg2 => AttackScenario::Alg2,
    };
    let delayed_client = cfg.delayed_client.unwrap_or(0);
    let mut transcripts = Vec::new();
    let (mut digits_total, mut digits_recovered, mut full, mut first_hits) = (0u64, 0u64, 0u64, 0u64);
    for t in 0..cfg.rounds {
        let run = delayed_client_attack(&AttackConfig {
            scenario,
            num_clients: cfg.clients,
            grouping: cfg.grouping,
            dimension: cfg.dimension,
            quant,
            mask_mode: cfg.mask_mode,
            delayed_client,
            delayed_sends: true,
            iteration: t,
            seed: cfg.seed,
        })?;
        if let AttackOutcome::Executed { true_digits, recovered_digits, matches, succeeded, .. } = &run.outcome {
            digits_total += true_digits.len() as u64;
            digits_recovered += *matches as u64;
            full += *succeeded as u64;
            first_hits += (true_digits[0] == recovered_digits[0]) as u64;
        }
        transcripts.push(run.transcript);
    }
    let guess_rate = 1.0 / quant.modulus() as f64;
    let binomial_p_value = binomial_two_sided_p(first_hits, cfg.rounds, guess_rate)?;

    let mut v = Vec::new();
    match scenario {
        AttackScenario::Alg1NaiveRemedy if digits_recovered != digits_total => {
            v.push(format!("naive remedy recovered {digits_recovered} of {digits_total} digits, expected all"));
        }
        AttackScenario::Alg2 if binomial_p_value < ALPHA => {
            v.push(format!(
                "attack accuracy {first_hits}/{} departs from the 1/M guessing rate (p = {binomial_p_value:.3e})",
                cfg.rounds
            ));
        }
        _ => {}
    }
    write_transcript_file(&out.join(&cfg.outputs.transcripts), &transcripts)?;
    let report = finish(
        &cfg.name,
        Some(cfg.seed),
        v,
        ReportBody::Attack(AttackReport {
            scenario,
            delayed_client,
            trials: cfg.rounds,
            modulus: quant.modulus(),
            digits_total,
            digits_recovered,
            recovery_rate: digits_recovered as f64 / digits_total.max(1) as f64,
            rounds_fully_recovered: full,
            test_successes: first_hits,
            guess_rate,
            binomial_p_value,
            alpha: ALPHA,
        }),
    );
    write_report(&out.join(&cfg.outputs.report), &report)?;
    Ok(report)
}

/// Server-side decode of a recorded round, independent of the round code.
fn redecode(t: &RoundTranscript) -> Vec<u64> {
    let step = Turn32::GRID / t.modulus;
    (0..t.correction.len())
        .map(|k| {
            let sum: Turn32 = t.messages.iter().map(|m| m.masked.symbols[k]).sum::<Turn32>() + t.correction[k];
            ((sum.0 as u64 + step / 2) / step) % t.modulus
        })
        .collect()
}

/// Recomputes the analyses from a transcripts file.
pub fn analyze_transcripts(name: &str, input: &Path, report_path: &Path) -> Result<ScenarioReport, ScenarioError> {
    let f = File::open(input).map_err(io_err(input))?;
    let ts = read_transcripts(BufReader::new(f)).map_err(io_err(input))?;

    let mut v = Vec::new();
    let overhead = OverheadSummary::from_transcripts(&ts);
    overhead.violations(&mut v);
    let mut consistent = 0;
    for t in &ts {
        if t.messages.iter().all(|m| m.masked.symbols.len() == t.correction.len()) && redecode(t) == t.aggregate {
            consistent += 1;
        } else {
            v.push(format!("round {}: recorded aggregate does not match a fresh decode", t.iteration));
        }
    }
    let late = late_processed(&ts, &mut v);

    // one message per round; masks cancel within a round, so its messages
    // are not independent samples
    let messages: Vec<_> = ts.iter().filter_map(|t| t.messages.first().cloned()).collect();
    let modulus = ts.first().map_or(2, |t| t.modulus);
    let leak_probe = difference_leak_probe(&messages, modulus);
    let firsts: Vec<Turn32> = messages.iter().filter_map(|m| m.masked.symbols.first().copied()).collect();
    let needed = MIN_SAMPLES_PER_BIN * UNIFORMITY_BINS;
    let (masked_symbol_uniformity, uniformity_note) = if firsts.len() >= needed {
        (Some(chi_square_uniformity(&firsts, UNIFORMITY_BINS)?), None)
    } else {
        (None, Some(format!("{} masked symbols, the uniformity test needs {needed}", firsts.len())))
    };

    let report = finish(
        name,
        None,
        v,
        ReportBody::Analyze(AnalysisReport {
            rounds: ts.len(),
            overhead,
            aggregates_consistent: consistent,
            leak_probe,
            masked_symbol_uniformity,
            uniformity_note,
            late_messages_processed: late,
        }),
    );
    write_report(report_path, &report)?;
    Ok(report)
}

/// Runs `command` for `cfg`, writing artifacts into `out`.
pub fn run_command(command: Command, cfg: &ScenarioConfig, out: &Path) -> Result<ScenarioReport, ScenarioError> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    match command {
        Command::Run => run_training_scenario(cfg, out),
        Command::Round => run_round_scenario(cfg, out),
        Command::Attack => run_attack_scenario(cfg, out),
        Command::Analyze => {
            analyze_transcripts(&cfg.name, &out.join(&cfg.outputs.transcripts), &out.join(&cfg.outputs.report))
        }
    }
}

/// Result of one seed in a fan-out.
pub type SeedOutcome = (u64, Result<ScenarioReport, ScenarioError>);

/// Runs seeds `cfg.seed .. cfg.seed + jobs` concurrently, each into
/// `out/seed-<n>`. A single job writes straight into `out`.
pub fn run_seeds(
    command: Command,
    cfg: &ScenarioConfig,
    out: &Path,
    jobs: usize,
) -> Result<Vec<SeedOutcome>, ScenarioError> {
    if jobs <= 1 {
        return Ok(vec![(cfg.seed, run_command(command, cfg, out))]);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ScenarioError::Invalid(vec![format!("cannot start {jobs} jobs: {e}")]))?;
    let seeds: Vec<u64> = (0..jobs as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    Ok(pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let cfg = ScenarioConfig { seed, ..cfg.clone() };
                (seed, run_command(command, &cfg, &out.join(format!("seed-{seed}"))))
            })
            .collect()
    }))
}
