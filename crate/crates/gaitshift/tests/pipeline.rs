use std::collections::BTreeMap;

use gaitshift::data::{render_domain, DomainSpec, Split};
use gaitshift::discovery::{build_bank, Strategy};
use gaitshift::encoder::{encode_sequence, Condition, SilhouetteSequence};
use gaitshift::numerics::l2_normalize;
use gaitshift::pipeline::{adapt_target, initial_params, pretrain_source, Stage, TrainConfig};

/// 4 identities x 2 views x 3 runs, labeled by identity.
fn domain(spec: DomainSpec) -> (Vec<SilhouetteSequence>, Vec<usize>) {
    let spec = DomainSpec {
        frames: 6,
        views: vec![54, 90],
        runs: BTreeMap::from([(Condition::Normal, 3)]),
        train_identities: 4,
        test_identities: 0,
        ..spec
    };
    let seqs: Vec<_> = render_domain(&spec, 5)
        .unwrap()
        .into_iter()
        .filter(|g| g.split == Split::Train)
        .map(|g| g.sequence)
        .collect();
    let mut ids: Vec<String> = seqs.iter().map(|s| s.identity.clone().unwrap()).collect();
    ids.dedup();
    let labels = seqs
        .iter()
        .map(|s| {
            ids.iter()
                .position(|i| Some(i) == s.identity.as_ref())
                .unwrap()
        })
        .collect();
    (seqs, labels)
}

fn quick() -> TrainConfig {
    TrainConfig {
        pretrain_epochs: 8,
        epochs_per_round: 2,
        rounds: 3,
        persons: 2,
        samples_per_person: 3,
        anchor_batch: 5,
        ..TrainConfig::desk()
    }
}

#[test]
fn pretraining_reduces_the_triplet_loss() {
    let (seqs, labels) = domain(DomainSpec::source());
    let cfg = TrainConfig {
        pretrain_epochs: 30,
        ..quick()
    };
    let (_, log) = pretrain_source(&seqs, &labels, &cfg).unwrap();
    let first = log.epochs.first().unwrap().loss;
    let last = log.epochs.last().unwrap().loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert!(log.epochs.iter().all(|e| e.stage == Stage::Pretrain));
}

#[test]
fn pretraining_rejects_single_sample_batches() {
    let (seqs, labels) = domain(DomainSpec::source());
    for (p, k) in [(1, 3), (2, 1)] {
        let cfg = TrainConfig {
            persons: p,
            samples_per_person: k,
            ..quick()
        };
        assert!(pretrain_source(&seqs, &labels, &cfg).is_err());
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let (seqs, labels) = domain(DomainSpec::source());
    let cfg = TrainConfig { lr: 0.0, ..quick() };
    let (params, _) = pretrain_source(&seqs, &labels, &cfg).unwrap();
    assert_eq!(params, initial_params(&cfg).unwrap());

    let (target, _) = domain(DomainSpec::target());
    let out = adapt_target(&target, params.clone(), &cfg).unwrap();
    assert_eq!(out.params, params);
}

#[test]
fn adaptation_step_count_follows_the_curriculum() {
    let (target, _) = domain(DomainSpec::target());
    let cfg = quick();
    let params = initial_params(&cfg).unwrap();
    let out = adapt_target(&target, params, &cfg).unwrap();
    let n = target.len();
    let mut expected = 0;
    for (r, report) in out.rounds.iter().enumerate() {
        let size = (r + 1) * n;
        let size = size.div_ceil(cfg.rounds);
        assert_eq!(report.schedule.selected.len(), size);
        expected += cfg.epochs_per_round * size.div_ceil(cfg.anchor_batch);
    }
    assert_eq!(out.log.total_steps(), expected);
    // the schedule's epoch counter runs on across rounds
    let epochs: Vec<usize> = out.log.epochs.iter().map(|e| e.epoch).collect();
    assert_eq!(
        epochs,
        (1..=cfg.rounds * cfg.epochs_per_round).collect::<Vec<_>>()
    );
}

#[test]
fn single_round_selects_everything() {
    let (target, _) = domain(DomainSpec::target());
    let cfg = TrainConfig {
        rounds: 1,
        epochs_per_round: 1,
        ..quick()
    };
    for strategy in Strategy::ALL {
        let cfg = TrainConfig {
            strategy,
            ..cfg.clone()
        };
        let out = adapt_target(&target, initial_params(&cfg).unwrap(), &cfg).unwrap();
        assert_eq!(out.rounds[0].schedule.selected.len(), target.len());
    }
}

#[test]
fn random_strategy_seeds_change_the_pick_not_the_size() {
    let (target, _) = domain(DomainSpec::target());
    let picks: Vec<_> = [1u64, 2]
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                seed,
                strategy: Strategy::Random,
                epochs_per_round: 0,
                ..quick()
            };
            let out = adapt_target(&target, initial_params(&quick()).unwrap(), &cfg).unwrap();
            out.rounds[0].schedule.selected.clone()
        })
        .collect();
    assert_eq!(picks[0].len(), picks[1].len());
    assert_ne!(picks[0], picks[1]);
}

#[test]
fn bank_matches_per_sample_encoding() {
    let (target, _) = domain(DomainSpec::target());
    let params = initial_params(&quick()).unwrap();
    let bank = build_bank(&target, &params, 0.5).unwrap();
    assert_eq!(bank.len(), target.len());
    for (i, seq) in target.iter().enumerate() {
        let direct = encode_sequence(seq, &params).unwrap();
        let unit = l2_normalize(direct.as_slice()).unwrap();
        for (a, b) in bank.entry(i).iter().zip(&unit) {
            assert!((a - b).abs() <= 1e-12, "sample {i}: {a} vs {b}");
        }
    }
}
