// End to end: ten label-pure clients, two of them with flipped labels.
// Compares contribution-based selection with random selection and plain
// averaging, then sweeps the quota.
//
// `cargo run --release --example policy_comparison`

use fedtoken::config::ExperimentConfig;
use fedtoken::data::PartitionKind;
use fedtoken::harness::{render_report, render_sweep, sweep, SweepAxis};
use fedtoken::scheduler::AggregationPolicy;

pub fn run_example() -> fedtoken::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.data.n_train = 500;
    cfg.data.n_test = 300;
    cfg.data.dim = 6;
    cfg.data.feature_offsets = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    cfg.data.partition = PartitionKind::LabelShards { k: 1 };
    cfg.poison.clients = vec![0, 1];
    cfg.scheduler.n_clients = 10;
    cfg.scheduler.m_fraction = 1.0;
    cfg.scheduler.rounds = 8;

    for policy in [AggregationPolicy::Fedtoken, AggregationPolicy::RandomQuota, AggregationPolicy::FedavgAll] {
        cfg.scheduler.policy = policy;
        let out = fedtoken::run(&cfg, None)?;
        let poison_tokens: u64 = [0, 1].iter().map(|&c| out.chain().balance_of(c)).sum();
        println!(
            "{policy:?}: final accuracy {:.3}, committed bytes {}, tokens to flipped clients {poison_tokens}",
            out.summary.final_accuracy, out.summary.total_committed_bytes
        );
        if policy == AggregationPolicy::Fedtoken {
            print!("{}", render_report(&out.metrics, false));
        }
    }

    cfg.scheduler.policy = AggregationPolicy::Fedtoken;
    let rows = sweep(&cfg, SweepAxis::QuotaRatio, &[0.3, 0.5, 0.8])?;
    print!("{}", render_sweep(SweepAxis::QuotaRatio, &rows));
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedtoken::Result<()> {
    run_example()
}
