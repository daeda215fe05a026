//! Budgeted token issuance.
//!
//! All amounts are integer microtokens (10⁻⁶ token). Each round draws at most
//! `per_round` from the remaining budget; participation awards are paid first
//! and the rest of the round pool goes to the selected clients, either in
//! proportion to their clipped contributions or in equal shares.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MICROTOKENS_PER_TOKEN: u64 = 1_000_000;

/// Tolerance, in microtokens, for snapping floating-point shares onto integers.
const SNAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub total_microtokens: u64,
    pub per_round_microtokens: u64,
    pub participation_base_microtokens: u64,
    pub remaining: u64,
}

impl Budget {
    pub fn new(total: u64, per_round: u64, participation_base: u64) -> Result<Self> {
        if per_round > total {
            return Err(Error::config("budget.per_round", "exceeds the total budget"));
        }
        Ok(Self {
            total_microtokens: total,
            per_round_microtokens: per_round,
            participation_base_microtokens: participation_base,
            remaining: total,
        })
    }

    pub fn issued(&self) -> u64 {
        self.total_microtokens - self.remaining
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationKind {
    ProportionalFair,
    EqualPay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationPolicy {
    pub kind: AllocationKind,
    pub discount_zeta: f64,
    /// Whether selected clients also receive the undiscounted participation award.
    pub pay_selected_participation: bool,
}

impl AllocationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount_zeta > 0.0 && self.discount_zeta < 1.0) {
            return Err(Error::config("tokenomics.zeta", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundAllocation {
    pub round: u32,
    pub contribution_awards: BTreeMap<u32, u64>,
    pub participation_awards: BTreeMap<u32, u64>,
    pub total_issued: u64,
}

impl RoundAllocation {
    pub fn contribution_total(&self) -> u64 {
        self.contribution_awards.values().sum()
    }

    pub fn participation_total(&self) -> u64 {
        self.participation_awards.values().sum()
    }

    /// Everything a client received this round.
    pub fn client_total(&self, id: u32) -> u64 {
        self.contribution_awards.get(&id).copied().unwrap_or(0)
            + self.participation_awards.get(&id).copied().unwrap_or(0)
    }
}

fn snap_floor(x: f64) -> u64 {
    (x + SNAP).floor().max(0.0) as u64
}

/// Splits `pool` among `(id, weight)` by largest remainder. Weights must be
/// non-negative; an all-zero weight vector issues nothing.
fn largest_remainder(weights: &[(u32, f64)], pool: u64) -> BTreeMap<u32, u64> {
    let sum: f64 = weights.iter().map(|(_, w)| w).sum();
    if sum <= 0.0 || pool == 0 {
        return weights.iter().map(|&(id, _)| (id, 0)).collect();
    }
    // quotas quantised to 10⁻⁶ microtoken so equal fractions compare equal
    let mut parts: Vec<(u32, u64, u64)> = weights
        .iter()
        .map(|&(id, w)| {
            let q = pool as f64 * (w / sum);
            let fine = (q / SNAP).round() as u128;
            let scale = (1.0 / SNAP) as u128;
            (id, (fine / scale) as u64, (fine % scale) as u64)
        })
        .collect();
    let floor_sum: u64 = parts.iter().map(|p| p.1).sum();
    let mut leftover = pool.saturating_sub(floor_sum);
    let mut order: Vec<usize> = (0..parts.len()).collect();
    order.sort_by(|&a, &b| parts[b].2.cmp(&parts[a].2).then(parts[a].0.cmp(&parts[b].0)));
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        parts[i].1 += 1;
        leftover -= 1;
    }
    parts.into_iter().map(|(id, share, _)| (id, share)).collect()
}

/// Proportional-fair split of `pool` by `max(u_n, 0)`.
pub fn allocate_pf(u: &BTreeMap<u32, f64>, pool: u64) -> BTreeMap<u32, u64> {
    let weights: Vec<(u32, f64)> = u.iter().map(|(&id, &v)| (id, v.max(0.0))).collect();
    largest_remainder(&weights, pool)
}

/// Equal split; the remainder goes one microtoken each to the lowest ids.
pub fn allocate_ep(selected: &[u32], pool: u64) -> BTreeMap<u32, u64> {
    if selected.is_empty() {
        return BTreeMap::new();
    }
    let mut ids = selected.to_vec();
    ids.sort_unstable();
    let n = ids.len() as u64;
    let base = pool / n;
    let extra = pool % n;
    ids.into_iter()
        .enumerate()
        .map(|(k, id)| (id, base + u64::from((k as u64) < extra)))
        .collect()
}

/// Participation award of an unselected client with positive contribution.
pub fn discounted_participation(p0: u64, zeta: f64, round: u32) -> u64 {
    if round <= 1 {
        p0
    } else {
        snap_floor(p0 as f64 * zeta.powi(round as i32))
    }
}

/// Participation awards for a round's cohort.
///
/// Selected clients get `p0` when the policy pays them participation (and
/// nothing here otherwise, being paid from the contribution pool). Unselected clients with positive contribution get
/// `p0` in round 1 and `⌊p0·ζ^t⌋` afterwards. Clients with `u ≤ 0` get nothing.
/// When `u` is `None` (no valuation ran) every cohort member counts as positive.
pub fn participation_rewards(
    cohort: &[u32],
    selected: &[u32],
    u: Option<&BTreeMap<u32, f64>>,
    round: u32,
    policy: &AllocationPolicy,
    p0: u64,
) -> BTreeMap<u32, u64> {
    let mut out = BTreeMap::new();
    for &id in cohort {
        let positive = u.is_none_or(|u| u.get(&id).is_some_and(|&v| v > 0.0));
        let award = if !positive {
            0
        } else if selected.contains(&id) {
            if policy.pay_selected_participation {
                p0
            } else {
                0
            }
        } else {
            discounted_participation(p0, policy.discount_zeta, round)
        };
        out.insert(id, award);
    }
    out.retain(|_, a| *a > 0);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settlement {
    pub allocation: RoundAllocation,
    pub budget: Budget,
    /// Set once the remaining budget reaches zero.
    pub exhausted: bool,
}

/// Issues this round's tokens and debits the budget.
pub fn settle_round(
    budget: &Budget,
    policy: &AllocationPolicy,
    u: Option<&BTreeMap<u32, f64>>,
    cohort: &[u32],
    selected: &[u32],
    round: u32,
) -> Settlement {
    let pool = budget.per_round_microtokens.min(budget.remaining);
    let mut participation = participation_rewards(
        cohort,
        selected,
        u,
        round,
        policy,
        budget.participation_base_microtokens,
    );

    // if the pool cannot cover every award, selected clients are paid first
    let wanted: u64 = participation.values().sum();
    if wanted > pool {
        let mut left = pool;
        let mut order: Vec<u32> = selected.to_vec();
        order.extend(participation.keys().filter(|id| !selected.contains(id)));
        for id in order {
            if let Some(a) = participation.get_mut(&id) {
                *a = (*a).min(left);
                left -= *a;
            }
        }
    }
    participation.retain(|_, a| *a > 0);
    let paid: u64 = participation.values().sum();
    let contribution_pool = pool - paid;

    let mut contribution = match (policy.kind, u) {
        (AllocationKind::ProportionalFair, Some(u)) => {
            let sel: BTreeMap<u32, f64> = selected.iter().map(|id| (*id, u.get(id).copied().unwrap_or(0.0))).collect();
            allocate_pf(&sel, contribution_pool)
        }
        // without a valuation there is nothing to be proportional to
        _ => allocate_ep(selected, contribution_pool),
    };
    contribution.retain(|_, a| *a > 0);

    let total_issued = paid + contribution.values().sum::<u64>();
    let mut next = *budget;
    next.remaining -= total_issued;
    Settlement {
        allocation: RoundAllocation {
            round,
            contribution_awards: contribution,
            participation_awards: participation,
            total_issued,
        },
        exhausted: next.remaining == 0,
        budget: next,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const M: u64 = MICROTOKENS_PER_TOKEN;

    fn umap(v: &[f64]) -> BTreeMap<u32, f64> {
        v.iter().enumerate().map(|(i, &x)| (i as u32, x)).collect()
    }

    fn shares(m: &BTreeMap<u32, u64>) -> Vec<u64> {
        m.values().copied().collect()
    }

    #[test]
    fn pf_examples() {
        assert_eq!(shares(&allocate_pf(&umap(&[2.0, 1.0, 1.0]), 100 * M)), vec![50 * M, 25 * M, 25 * M]);
        assert_eq!(shares(&allocate_pf(&umap(&[1.0, -5.0]), 10 * M)), vec![10 * M, 0]);
        assert_eq!(shares(&allocate_pf(&umap(&[1.0, 1.0, 1.0]), 10)), vec![4, 3, 3]);
        assert_eq!(shares(&allocate_pf(&umap(&[-1.0, 0.0]), 10)), vec![0, 0]);
    }

    #[test]
    fn ep_examples() {
        assert_eq!(shares(&allocate_ep(&[3, 1, 2, 0], 100 * M)), vec![25 * M; 4]);
        assert_eq!(shares(&allocate_ep(&[5, 9, 7], 10)), vec![4, 3, 3]);
        assert_eq!(shares(&allocate_ep(&[4], 17)), vec![17]);
        assert!(allocate_ep(&[], 17).is_empty());
    }

    #[test]
    fn participation_discounting() {
        let policy = AllocationPolicy { kind: AllocationKind::ProportionalFair, discount_zeta: 0.7, pay_selected_participation: true };
        let u = umap(&[0.5, 0.2, -0.1]);
        let at = |t| participation_rewards(&[0, 1, 2], &[0], Some(&u), t, &policy, M);
        assert_eq!(at(1), [(0, M), (1, M)].into_iter().collect());
        assert_eq!(at(3), [(0, M), (1, 343_000)].into_iter().collect());
        let unpaid = AllocationPolicy { pay_selected_participation: false, ..policy };
        assert_eq!(participation_rewards(&[0, 1, 2], &[0], Some(&u), 3, &unpaid, M), [(1, 343_000)].into_iter().collect());
        assert_eq!(discounted_participation(M, 0.7, 2), 490_000);
        let mut last = u64::MAX;
        for t in 1..40 {
            let a = discounted_participation(M, 0.7, t);
            assert!(a <= last);
            last = a;
        }
    }

    #[test]
    fn settle_worked_example() {
        let budget = Budget::new(1000 * M, 100 * M, 10 * M).unwrap();
        let policy = AllocationPolicy { kind: AllocationKind::ProportionalFair, discount_zeta: 0.7, pay_selected_participation: false };
        let u = umap(&[3.0, 1.0, 0.5, 0.25]);
        let s = settle_round(&budget, &policy, Some(&u), &[0, 1, 2, 3], &[0, 1], 1);
        // two unselected-positive clients: 20 participation, 80 split 3:1
        assert_eq!(s.allocation.participation_total(), 20 * M);
        assert_eq!(shares(&s.allocation.contribution_awards), vec![60 * M, 20 * M]);
        assert_eq!(s.allocation.total_issued, 100 * M);
        assert_eq!(s.budget.remaining, 900 * M);
        assert!(!s.exhausted);

        let paying = AllocationPolicy { pay_selected_participation: true, ..policy };
        let s = settle_round(&budget, &paying, Some(&u), &[0, 1, 2, 3], &[0, 1], 1);
        assert_eq!(s.allocation.participation_total(), 40 * M);
        assert_eq!(shares(&s.allocation.contribution_awards), vec![45 * M, 15 * M]);
    }

    #[test]
    fn fully_spent_budget_runs_out_after_twenty_rounds() {
        let mut budget = Budget::new(1000 * M, 50 * M, M / 2).unwrap();
        let policy = AllocationPolicy { kind: AllocationKind::EqualPay, discount_zeta: 0.7, pay_selected_participation: true };
        let mut rounds = 0;
        for t in 1..=100 {
            let s = settle_round(&budget, &policy, None, &[0, 1, 2], &[0, 1, 2], t);
            assert_eq!(s.allocation.total_issued, 50 * M);
            budget = s.budget;
            rounds = t;
            if s.exhausted {
                break;
            }
        }
        assert_eq!(rounds, 20);
        assert_eq!(budget.issued(), 1000 * M);
    }

    #[test]
    fn settle_with_nothing_left() {
        let mut budget = Budget::new(10, 10, 1).unwrap();
        budget.remaining = 0;
        let policy = AllocationPolicy { kind: AllocationKind::EqualPay, discount_zeta: 0.7, pay_selected_participation: true };
        let s = settle_round(&budget, &policy, None, &[0, 1], &[0, 1], 4);
        assert_eq!(s.allocation.total_issued, 0);
        assert!(s.exhausted);
    }

    #[test]
    fn participation_capped_by_pool() {
        let budget = Budget::new(100, 5, 3).unwrap();
        let policy = AllocationPolicy { kind: AllocationKind::EqualPay, discount_zeta: 0.5, pay_selected_participation: true };
        let s = settle_round(&budget, &policy, None, &[0, 1, 2], &[2], 1);
        assert_eq!(s.allocation.total_issued, 5);
        assert_eq!(s.allocation.participation_awards[&2], 3);
    }

    #[test]
    fn invalid_policy_and_budget() {
        assert!(Budget::new(10, 11, 0).is_err());
        let p = |z| AllocationPolicy { kind: AllocationKind::EqualPay, discount_zeta: z, pay_selected_participation: false };
        assert!(p(1.0).validate().is_err());
        assert!(p(0.0).validate().is_err());
        assert!(p(0.7).validate().is_ok());
    }
}
