mod common;

use fedtoken::config::{load_config, ExperimentConfig};
use fedtoken::data::PartitionKind;
use fedtoken::harness::{self, read_metrics, LEDGER_FILE, METRICS_FILE, MODEL_FILE};
use fedtoken::learning::{upload_bytes, GlobalModel, LossKind};
use fedtoken::scheduler::{AggregationPolicy, NuRule};

#[test]
fn identical_configs_give_identical_artifacts() {
    let cfg = common::tiny(21, AggregationPolicy::Fedtoken);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    harness::run(&cfg, Some(a.path())).unwrap();
    harness::run(&cfg, Some(b.path())).unwrap();
    for file in [LEDGER_FILE, METRICS_FILE, MODEL_FILE, harness::SUMMARY_FILE] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn different_seeds_diverge() {
    let a = harness::run(&common::tiny(1, AggregationPolicy::Fedtoken), None).unwrap();
    let b = harness::run(&common::tiny(2, AggregationPolicy::Fedtoken), None).unwrap();
    assert_ne!(a.model.phi, b.model.phi);
}

fn clean_iid(policy: AggregationPolicy) -> ExperimentConfig {
    let mut c = ExperimentConfig { seed: 4, ..Default::default() };
    c.data.n_train = 400;
    c.data.n_test = 200;
    c.data.dim = 5;
    c.data.separation = 3.0;
    c.data.partition = PartitionKind::Iid;
    c.scheduler.n_clients = 8;
    c.scheduler.m_fraction = 0.5;
    c.scheduler.quota = Some(4);
    c.scheduler.rounds = 2;
    c.scheduler.policy = policy;
    c.learning.nu = NuRule::Fixed(0.25);
    c
}

#[test]
fn full_quota_with_useful_updates_matches_plain_averaging() {
    let ft = harness::run(&clean_iid(AggregationPolicy::Fedtoken), None).unwrap();
    let fa = harness::run(&clean_iid(AggregationPolicy::FedavgAll), None).unwrap();
    // the equivalence only applies while every update has a non-negative value
    for m in &ft.metrics {
        assert!(m.contributions.as_ref().unwrap().values().all(|&u| u >= 0.0), "round {} has a negative value", m.round);
    }
    assert_eq!(ft.metrics.len(), fa.metrics.len());
    for (a, b) in ft.metrics.iter().zip(&fa.metrics) {
        let sorted = |v: &[u32]| {
            let mut v = v.to_vec();
            v.sort_unstable();
            v
        };
        assert_eq!(sorted(&a.selected), sorted(&b.selected));
        assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits());
        assert_eq!(a.duality_gap.to_bits(), b.duality_gap.to_bits());
    }
    let bits = |m: &GlobalModel| m.phi.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ft.model), bits(&fa.model));
}

#[test]
fn gap_does_not_grow_under_plain_averaging() {
    for loss in [LossKind::Squared, LossKind::Logistic] {
        let mut cfg = common::ridge(3, 10, 200, 5, 60);
        cfg.learning.loss = loss;
        let out = harness::run(&cfg, None).unwrap();
        for w in out.metrics.windows(2) {
            assert!(
                w[1].duality_gap <= w[0].duality_gap + 1e-8,
                "{loss:?}: gap rose from {} to {} at round {}",
                w[0].duality_gap,
                w[1].duality_gap,
                w[1].round
            );
        }
    }
}

#[test]
fn metrics_agree_with_ledger_and_byte_counts() {
    for policy in [AggregationPolicy::Fedtoken, AggregationPolicy::RandomQuota, AggregationPolicy::FedavgAll] {
        let mut cfg = common::tiny(6, policy);
        cfg.scheduler.m_fraction = 0.6;
        cfg.scheduler.rounds = 10;
        let out = harness::run(&cfg, None).unwrap();
        let per_upload = upload_bytes(cfg.data.dim);
        let mut uploaded = 0;
        let mut committed = 0;
        let mut issued = 0;
        for m in &out.metrics {
            uploaded += m.cohort.len() as u64 * per_upload;
            committed += m.selected.len() as u64 * per_upload;
            issued += m.tokens_contribution + m.tokens_participation;
            assert!(m.selected.len() <= cfg.quota().max(m.cohort.len()));
            if policy != AggregationPolicy::FedavgAll {
                assert!(m.selected.len() <= cfg.quota());
            }
            assert_eq!(m.cumulative_uploaded_bytes, uploaded);
            assert_eq!(m.cumulative_committed_bytes, committed);
            assert_eq!(m.cumulative_issued, issued);
            assert_eq!(m.awards.values().sum::<u64>(), m.tokens_contribution + m.tokens_participation);
            assert!(m.selected.iter().all(|id| !m.flagged.contains(id)));
        }
        assert_eq!(out.chain().total_issued(), issued);
        assert_eq!(out.chain().balances().values().sum::<u64>(), cfg.budget_microtokens() - out.state.budget.remaining);
    }
}

#[test]
fn streamed_metrics_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = harness::run(&common::tiny(8, AggregationPolicy::Fedtoken), Some(dir.path())).unwrap();
    let read = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(read, out.metrics);
    let snapshot = std::fs::read(dir.path().join(MODEL_FILE)).unwrap();
    assert_eq!(GlobalModel::from_snapshot_bytes(&snapshot).unwrap(), out.model.phi);
}

#[test]
fn shipped_configs_load() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
    let default = load_config(std::path::Path::new(&format!("{dir}/default.toml"))).unwrap();
    assert_eq!(default, ExperimentConfig::default());
}
