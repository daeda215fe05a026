mod common;

use std::collections::{BTreeMap, BTreeSet};

use fedtoken::data::{partition, synth_gaussian, PartitionKind, PartitionScheme};
use fedtoken::ledger::{verify_bytes, Chain, Verification};
use fedtoken::learning::{duality_gap, DualState, LossKind};
use fedtoken::tokenomics::{
    allocate_ep, allocate_pf, discounted_participation, settle_round, AllocationKind, AllocationPolicy, Budget,
    RoundAllocation,
};
use fedtoken::valuation::{tmc_shapley, PermutationPlan};
use fedtoken::{Error, Purpose, RngStream};
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = PartitionKind> {
    prop_oneof![
        Just(PartitionKind::Iid),
        (1usize..3).prop_map(|k| PartitionKind::LabelShards { k }),
        (0.05f64..5.0).prop_map(|beta| PartitionKind::Dirichlet { beta }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partitions_are_disjoint_and_cover(n in 4usize..200, clients in 1usize..12, kind in kind_strategy(), seed in any::<u64>()) {
        let clients = clients.min(n);
        let data = synth_gaussian(n, 2, 2.0, &RngStream::new(seed, Purpose::Synth)).unwrap();
        let parts = match partition(&data, clients, &PartitionScheme { kind, seed }) {
            Ok(parts) => parts,
            // too few clients to give every label an owner
            Err(Error::InfeasiblePartition { .. }) => {
                let k = match kind { PartitionKind::LabelShards { k } => k, _ => usize::MAX };
                prop_assert!(clients * k < 2);
                return Ok(());
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert_eq!(parts.len(), clients);
        let mut seen = BTreeSet::new();
        for p in &parts {
            for &i in &p.sample_indices {
                prop_assert!(seen.insert(i), "index {} assigned twice", i);
            }
            if let PartitionKind::LabelShards { k } = kind {
                let labels: BTreeSet<_> = p.sample_indices.iter().map(|&i| data.point(i).label).collect();
                prop_assert!(labels.len() <= k);
            }
        }
        prop_assert_eq!(seen, (0..n).collect::<BTreeSet<_>>());
    }

    #[test]
    fn pf_shares_ignore_scale(u in prop::collection::vec(0.0f64..10.0, 1..10), c in 1e-3f64..1e3, pool in 0u64..10_000_000_000) {
        let base: BTreeMap<u32, f64> = u.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect();
        let scaled: BTreeMap<u32, f64> = base.iter().map(|(&i, &v)| (i, v * c)).collect();
        prop_assert_eq!(allocate_pf(&base, pool), allocate_pf(&scaled, pool));
    }

    #[test]
    fn pf_equals_ep_for_equal_values(n in 1u32..12, v in 0.01f64..100.0, pool in 0u64..10_000_000_000) {
        let u: BTreeMap<u32, f64> = (0..n).map(|i| (i, v)).collect();
        let ids: Vec<u32> = (0..n).collect();
        prop_assert_eq!(allocate_pf(&u, pool), allocate_ep(&ids, pool));
    }

    #[test]
    fn participation_discount_never_grows(p0 in 0u64..1_000_000_000, zeta in 0.01f64..0.99) {
        let mut prev = u64::MAX;
        for t in 1..40 {
            let a = discounted_participation(p0, zeta, t);
            prop_assert!(a <= prev);
            prev = a;
        }
    }

    #[test]
    fn settlements_conserve_and_zero_non_contributors(
        u in prop::collection::vec(-1.0f64..1.0, 2..10),
        pay_selected in any::<bool>(),
        pf in any::<bool>(),
        total in 1u64..1_000_000,
        rounds in 1u32..30,
    ) {
        let ids: Vec<u32> = (0..u.len() as u32).collect();
        let umap: BTreeMap<u32, f64> = ids.iter().map(|&i| (i, u[i as usize])).collect();
        let mut order = ids.clone();
        order.sort_by(|a, b| umap[b].total_cmp(&umap[a]).then(a.cmp(b)));
        let selected: Vec<u32> = order.into_iter().take(ids.len() / 2).filter(|i| umap[i] > 0.0).collect();
        let policy = AllocationPolicy {
            kind: if pf { AllocationKind::ProportionalFair } else { AllocationKind::EqualPay },
            discount_zeta: 0.7,
            pay_selected_participation: pay_selected,
        };
        let per_round = total.div_ceil(7);
        let mut budget = Budget::new(total, per_round, per_round / 10).unwrap();
        let mut chain = Chain::new();
        for round in 1..=rounds {
            let before = budget.remaining;
            let s = settle_round(&budget, &policy, Some(&umap), &ids, &selected, round);
            prop_assert!(s.allocation.total_issued <= per_round.min(before));
            for (&id, &v) in &umap {
                if v <= 0.0 {
                    prop_assert_eq!(s.allocation.client_total(id), 0);
                }
            }
            chain.append_block(round, &s.allocation).unwrap();
            budget = s.budget;
        }
        let balances: u64 = chain.balances().values().sum();
        prop_assert_eq!(balances, total - budget.remaining);
        prop_assert_eq!(chain.total_issued(), total - budget.remaining);
    }

    #[test]
    fn larger_eps_never_costs_more(table in prop::collection::vec(-1.0f64..1.0, 32), e1 in 0.0f64..0.5, e2 in 0.0f64..0.5, seed in any::<u64>()) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let v = |s: &[u32]| table[common::mask(s)];
        let players = [0, 1, 2, 3, 4];
        let stream = RngStream::new(seed, Purpose::Permutation);
        let a = tmc_shapley(&v, &players, &PermutationPlan::sampled(6, lo, stream)).unwrap();
        let b = tmc_shapley(&v, &players, &PermutationPlan::sampled(6, hi, stream)).unwrap();
        prop_assert!(a.utility_evaluations >= b.utility_evaluations);
    }

    #[test]
    fn weak_duality_holds(seed in any::<u64>(), squared in any::<bool>(), lambda in 0.001f64..1.0, raw in prop::collection::vec(0.0f64..1.0, 30)) {
        let data = synth_gaussian(30, 3, 1.5, &RngStream::new(seed, Purpose::Synth)).unwrap();
        let loss = if squared { LossKind::Squared } else { LossKind::Logistic };
        // logistic needs α·y in [0, 1]; squared accepts any α
        let mut state = DualState::new(0);
        for (i, r) in raw.iter().enumerate() {
            let y = data.point(i).y();
            let a = if squared { 4.0 * (r - 0.5) } else { r * y };
            state.alpha.insert(i, a);
        }
        let gap = duality_gap(&[state], &data, loss, lambda).unwrap();
        prop_assert!(gap >= -1e-9, "gap {}", gap);
    }
}

fn sample_chain() -> Chain {
    let mut chain = Chain::new();
    for round in 1..=4u32 {
        let alloc = RoundAllocation {
            round,
            contribution_awards: BTreeMap::from([(round, 1000 + u64::from(round)), (7, 5)]),
            participation_awards: BTreeMap::from([(9, 42)]),
            total_issued: 1047 + u64::from(round),
        };
        chain.append_block(round, &alloc).unwrap();
    }
    chain
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn every_bit_flip_is_detected(pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let bytes = sample_chain().to_bytes();
        let mut bad = bytes.clone();
        bad[pos.index(bytes.len())] ^= 1 << bit;
        let caught = matches!(verify_bytes(&bad), Verification::Tampered { .. });
        prop_assert!(caught);
    }
}
