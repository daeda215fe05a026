//! Shared configs and reference implementations for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use fedtoken::config::ExperimentConfig;
use fedtoken::data::PartitionKind;
use fedtoken::learning::LossKind;
use fedtoken::scheduler::AggregationPolicy;

/// Ten label-pure clients, clients 0 and 1 fully flipped, everyone in the cohort.
/// Features get a unit offset on the first axis so the classes are not centred.
pub fn poisoned_shards(seed: u64, policy: AggregationPolicy) -> ExperimentConfig {
    let mut c = ExperimentConfig { seed, ..Default::default() };
    c.data.n_train = 1000;
    c.data.n_test = 1000;
    c.data.dim = 10;
    c.data.separation = 2.0;
    c.data.feature_offsets = unit_offset(10);
    c.data.partition = PartitionKind::LabelShards { k: 1 };
    c.poison.clients = vec![0, 1];
    c.poison.flip_fraction = 1.0;
    c.scheduler.n_clients = 10;
    c.scheduler.m_fraction = 1.0;
    c.scheduler.quota = None;
    c.scheduler.quota_ratio = 0.5;
    c.scheduler.policy = policy;
    c.scheduler.rounds = 30;
    c
}

pub fn unit_offset(dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = 1.0;
    v
}

/// Small ridge problem solved with full participation.
pub fn ridge(seed: u64, n_clients: usize, n_train: usize, dim: usize, rounds: u32) -> ExperimentConfig {
    let mut c = ExperimentConfig { seed, ..Default::default() };
    c.data.n_train = n_train;
    c.data.n_test = 200;
    c.data.dim = dim;
    c.data.partition = PartitionKind::Iid;
    c.learning.loss = LossKind::Squared;
    c.learning.lambda = 0.1;
    c.scheduler.n_clients = n_clients;
    c.scheduler.m_fraction = 1.0;
    c.scheduler.policy = AggregationPolicy::FedavgAll;
    c.scheduler.rounds = rounds;
    c
}

/// Tiny run that finishes in well under a second.
pub fn tiny(seed: u64, policy: AggregationPolicy) -> ExperimentConfig {
    let mut c = poisoned_shards(seed, policy);
    c.data.n_train = 200;
    c.data.n_test = 100;
    c.data.dim = 4;
    c.data.feature_offsets = unit_offset(4);
    c.scheduler.rounds = 6;
    c
}

fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (k, &head) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(k);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Shapley values by averaging marginals over every ordering.
pub fn brute_shapley(players: &[u32], v: impl Fn(&[u32]) -> f64) -> BTreeMap<u32, f64> {
    let perms = permutations(players);
    let mut u: BTreeMap<u32, f64> = players.iter().map(|&p| (p, 0.0)).collect();
    for perm in &perms {
        let mut prefix: Vec<u32> = Vec::new();
        let mut prev = v(&prefix);
        for &p in perm {
            prefix.push(p);
            let mut sorted = prefix.clone();
            sorted.sort_unstable();
            let cur = v(&sorted);
            *u.get_mut(&p).unwrap() += cur - prev;
            prev = cur;
        }
    }
    let n = perms.len() as f64;
    u.values_mut().for_each(|x| *x /= n);
    u
}

pub fn mask(members: &[u32]) -> usize {
    members.iter().fold(0, |m, &p| m | (1 << p))
}
