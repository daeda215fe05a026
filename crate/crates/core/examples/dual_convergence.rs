// Trains a ridge model with federated dual coordinate ascent and prints the
// duality gap, which bounds suboptimality of both objectives.
//
// `cargo run --example dual_convergence`

use fedtoken::config::ExperimentConfig;
use fedtoken::data::PartitionKind;
use fedtoken::learning::LossKind;
use fedtoken::scheduler::AggregationPolicy;

pub fn run_example() -> fedtoken::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.data.n_train = 200;
    cfg.data.n_test = 100;
    cfg.data.dim = 5;
    cfg.data.partition = PartitionKind::Iid;
    cfg.learning.loss = LossKind::Squared;
    cfg.learning.lambda = 0.1;
    cfg.scheduler.n_clients = 10;
    cfg.scheduler.m_fraction = 1.0;
    cfg.scheduler.policy = AggregationPolicy::FedavgAll;
    cfg.scheduler.rounds = 80;

    let out = fedtoken::run(&cfg, None)?;
    for m in out.metrics.iter().filter(|m| m.round == 1 || m.round % 10 == 0) {
        println!("round {:>3}  gap {:.3e}  accuracy {:.3}", m.round, m.duality_gap, m.test_accuracy);
    }
    let gaps: Vec<f64> = out.metrics.iter().map(|m| m.duality_gap).collect();
    assert!(gaps.last().unwrap() < &gaps[0]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedtoken::Result<()> {
    run_example()
}
