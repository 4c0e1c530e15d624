use std::collections::BTreeSet;

use epic_core::checkpoint;
use epic_core::datagen::{generate, SyntheticSpec};
use epic_core::encode::{EncodingContext, SequenceRecord};
use epic_core::nn::{ModelSpec, TrainConfig};
use epic_core::orchestrator::{
    evaluate, prepare, run_centralized, run_epic, Experiment, ExperimentReport, FedConfig, Prepared, RoundState,
};
use epic_core::partition::SplitConfig;

fn small_corpus() -> (SyntheticSpec, Vec<SequenceRecord>) {
    let mut spec =
        SyntheticSpec { ancestral_length: 40, total_samples: 900, months: 3, ..SyntheticSpec::surveillance_shaped(11) };
    spec.countries.truncate(4);
    let records = generate(&spec).unwrap();
    (spec, records)
}

fn experiment(spec: &SyntheticSpec, records: &[SequenceRecord], parallelism: usize) -> Experiment {
    let context = EncodingContext::from_records(records, spec.label_set()).unwrap();
    let model = ModelSpec { hidden_dims: vec![24, 12], ..ModelSpec::with_defaults(context.feature_width(), 5, 8) };
    Experiment {
        context,
        countries: spec.country_list(),
        months: (0..spec.months).collect(),
        split: SplitConfig { seed: 5, ..SplitConfig::default() },
        model,
        train: TrainConfig { epochs: 3, shuffle_seed: 9, ..TrainConfig::default() },
        fed: FedConfig::default(),
        parallelism,
    }
}

fn collect_rounds(exp: &Experiment, prepared: &Prepared) -> (Vec<RoundState>, ExperimentReport) {
    let mut rounds = Vec::new();
    let report = run_epic(exp, prepared, &mut |s| {
        rounds.push(s.clone());
        Ok(())
    })
    .unwrap();
    (rounds, report)
}

#[test]
fn parallel_clients_match_serial_clients() {
    let (spec, records) = small_corpus();
    let serial = experiment(&spec, &records, 1);
    let parallel = experiment(&spec, &records, 4);
    let prepared = prepare(&serial, &records).unwrap();
    let (rounds_a, report_a) = collect_rounds(&serial, &prepared);
    let (rounds_b, report_b) = collect_rounds(&parallel, &prepared);
    assert_eq!(report_a.locals, report_b.locals);
    assert_eq!(report_a.global, report_b.global);
    assert_eq!(report_a.histories, report_b.histories);
    for (a, b) in rounds_a.iter().zip(&rounds_b) {
        assert_eq!(a.local, b.local);
        assert_eq!(a.global, b.global);
    }
}

#[test]
fn round_state_invariants() {
    let (spec, records) = small_corpus();
    let exp = experiment(&spec, &records, 1);
    let prepared = prepare(&exp, &records).unwrap();
    let (rounds, report) = collect_rounds(&exp, &prepared);
    assert_eq!(rounds.len(), exp.months.len());
    let fingerprint = exp.model.fingerprint();
    let mut trained = BTreeSet::new();
    for state in &rounds {
        for c in &exp.countries {
            if prepared.plan.cell(state.month, c).is_some_and(|cell| !cell.local_train.is_empty()) {
                trained.insert(c.clone());
            }
        }
        let have: BTreeSet<String> = state.local.keys().cloned().collect();
        assert_eq!(have, trained, "month {}", state.month);
        assert!(state.global.is_some(), "month {}", state.month);
        let weights = state.local.values().map(|c| &c.weights).chain(state.global.as_ref().map(|g| &g.weights));
        assert!(weights.clone().all(|w| w.fingerprint == fingerprint));
    }
    assert_eq!(report.locals.len(), exp.countries.len());

    // the final global weights survive a checkpoint round trip and score the same
    let global = &rounds.last().unwrap().global.as_ref().unwrap().weights;
    let dir = std::env::temp_dir().join(format!("epic-protocol-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("global.epicw");
    checkpoint::save(&path, global).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(&loaded, global);
    let rescored = evaluate(&loaded, &exp.model, &prepared.plan.global_test, &prepared.dataset).unwrap();
    assert_eq!(rescored, report.global);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn global_test_accumulates_month_by_month() {
    let (spec, records) = small_corpus();
    let exp = experiment(&spec, &records, 1);
    let prepared = prepare(&exp, &records).unwrap();
    let plan = &prepared.plan;
    let mut expected = Vec::new();
    for &m in &exp.months {
        for c in &exp.countries {
            expected.extend(plan.cell(m, c).unwrap().global_test.iter().copied());
        }
        assert_eq!(plan.global_test_through(m), expected, "month {m}");
    }
    assert_eq!(plan.global_test, expected);
}

#[test]
fn centralized_baseline_scores_the_same_test_set() {
    let (spec, records) = small_corpus();
    let exp = experiment(&spec, &records, 1);
    let prepared = prepare(&exp, &records).unwrap();
    let central = run_centralized(&exp, &prepared).unwrap();
    assert_eq!(central.metrics.examples as usize, prepared.plan.global_test.len());
    assert_eq!(central.history.epochs.len(), exp.months.len() * exp.train.epochs);
}
