use phyfed::codec::{FecConfig, QuantizationConfig};
use phyfed::fl::{run_training, AggregationPath, LearningRate, LossKind, SyntheticTask, TrainingConfig};
use phyfed::masking::MaskMode;
use phyfed::protocol::{DropoutModel, GroupingSpec, IterationConfig, ProtocolVersion};

fn config(
    version: ProtocolVersion,
    mask_mode: MaskMode,
    grouping: GroupingSpec,
    dropout: DropoutModel,
    path: AggregationPath,
    stochastic: bool,
) -> TrainingConfig {
    TrainingConfig {
        iteration: IterationConfig {
            quant: QuantizationConfig::auto(1.0, 1 << 12, 8).unwrap(),
            version,
            mask_mode,
            grouping,
            fec: FecConfig::repetition(3),
            dropout,
            delayed_client: None,
            stochastic_rounding: stochastic,
            seed: 17,
        },
        path,
        rounds: 40,
        loss_threshold: None,
        learning_rate: LearningRate::Constant { eta: 0.2 },
        loss: LossKind::LeastSquares,
    }
}

fn assert_bit_identical(a: &[Vec<f64>], b: &[Vec<f64>]) {
    assert_eq!(a.len(), b.len());
    for (t, (x, y)) in a.iter().zip(b).enumerate() {
        let xb: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u64> = y.iter().map(|v| v.to_bits()).collect();
        assert_eq!(xb, yb, "diverged at round {t}");
    }
}

#[test]
fn secure_matches_baseline_across_protocol_variants() {
    let data = SyntheticTask { clients: 8, dimension: 5, samples_per_client: 20, noise: 0.05 }.generate(3).unwrap();
    let variants = [
        (ProtocolVersion::Alg1, MaskMode::Scalar, GroupingSpec::TwoGroup, DropoutModel::None, false),
        (ProtocolVersion::Alg2, MaskMode::PerSymbol, GroupingSpec::TwoGroup, DropoutModel::None, true),
        (
            ProtocolVersion::Alg2,
            MaskMode::Scalar,
            GroupingSpec::Subgroup { groups: 2, subgroup_size: 2 },
            DropoutModel::Fixed { clients: vec![5] },
            false,
        ),
        (ProtocolVersion::Alg1, MaskMode::PerSymbol, GroupingSpec::TwoGroup, DropoutModel::Fixed { clients: vec![0, 7] }, false),
    ];
    for (version, mode, grouping, dropout, stochastic) in variants {
        let secure =
            run_training(&config(version, mode, grouping, dropout.clone(), AggregationPath::Secure, stochastic), &data.datasets)
                .unwrap();
        let base = run_training(
            &config(version, mode, grouping, dropout, AggregationPath::InsecureBaseline, stochastic),
            &data.datasets,
        )
        .unwrap();
        assert!(secure.halted.is_none());
        assert_bit_identical(&secure.trajectory, &base.trajectory);
        assert!(secure.final_loss() < secure.initial_loss());
        assert_eq!(secure.transcripts.len(), 40);
    }
}

#[test]
fn history_csv_has_expected_header_and_rows() {
    let data = SyntheticTask { clients: 6, dimension: 3, samples_per_client: 10, noise: 0.0 }.generate(1).unwrap();
    let h = run_training(
        &config(ProtocolVersion::Alg2, MaskMode::Scalar, GroupingSpec::TwoGroup, DropoutModel::None, AggregationPath::Secure, false),
        &data.datasets,
    )
    .unwrap();
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("round,loss,theta_norm,phase_estimations,uplink,recoveries"));
    assert_eq!(lines.count(), 41);
}

#[test]
fn loss_threshold_stops_early() {
    let data = SyntheticTask { clients: 6, dimension: 3, samples_per_client: 10, noise: 0.0 }.generate(1).unwrap();
    let mut cfg =
        config(ProtocolVersion::Alg2, MaskMode::Scalar, GroupingSpec::TwoGroup, DropoutModel::None, AggregationPath::Secure, false);
    cfg.loss_threshold = Some(0.05);
    let h = run_training(&cfg, &data.datasets).unwrap();
    assert!(h.records.len() < 41);
    assert!(h.final_loss() < 0.05);
    assert!(h.records[h.records.len() - 2].loss >= 0.05);
}

#[test]
fn logistic_loss_trains_on_the_secure_path() {
    let data = SyntheticTask { clients: 8, dimension: 4, samples_per_client: 30, noise: 0.0 }.generate(9).unwrap();
    let mut datasets = data.datasets;
    for d in &mut datasets {
        for s in &mut d.samples {
            s.target = if s.target > 0.0 { 1.0 } else { 0.0 };
        }
    }
    let mut cfg =
        config(ProtocolVersion::Alg2, MaskMode::Scalar, GroupingSpec::TwoGroup, DropoutModel::None, AggregationPath::Secure, false);
    cfg.loss = LossKind::Logistic;
    cfg.learning_rate = LearningRate::Constant { eta: 1.0 };
    let h = run_training(&cfg, &datasets).unwrap();
    assert!(h.final_loss() < 0.8 * h.initial_loss(), "{} -> {}", h.initial_loss(), h.final_loss());
}

#[test]
fn unrecoverable_round_halts_with_partial_history() {
    let data = SyntheticTask { clients: 8, dimension: 3, samples_per_client: 10, noise: 0.0 }.generate(2).unwrap();
    let cfg = config(
        ProtocolVersion::Alg2,
        MaskMode::Scalar,
        GroupingSpec::TwoGroup,
        DropoutModel::Fixed { clients: (0..8).collect() },
        AggregationPath::Secure,
        false,
    );
    let h = run_training(&cfg, &data.datasets).unwrap();
    assert!(h.halted.as_ref().is_some_and(|e| e.is_unrecoverable()));
    assert_eq!(h.records.len(), 1);
    assert!(h.transcripts.is_empty());
}
