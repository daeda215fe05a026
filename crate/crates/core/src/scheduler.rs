//! Round orchestration: cohort sampling, contribution-based selection under a
//! quota, aggregation and commit, token settlement and ledger append.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientPartition, Dataset};
use crate::error::Result;
use crate::ledger::Chain;
use crate::learning::{self, DualState, GlobalModel, Hyperparams, LocalUpdate, LossKind};
use crate::metrics::RoundMetrics;
use crate::rng::{Purpose, RngStream};
use crate::tokenomics::{self, AllocationPolicy, Budget};
use crate::valuation::{self, CandidateForm, ContributionVector, PermutationPlan, UtilityContext, VRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationPolicy {
    /// Value every update, aggregate the top `quota` with positive value.
    Fedtoken,
    /// Aggregate the whole cohort without valuation.
    FedavgAll,
    /// Aggregate `quota` cohort members drawn uniformly.
    RandomQuota,
}

/// Aggregation weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuRule {
    /// `1/|aggregated|`: the mean of the aggregated deltas.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundPlan {
    pub round: u32,
    pub cohort: Vec<u32>,
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SelectionResult {
    /// Descending contribution, ties by ascending id.
    pub selected: Vec<u32>,
    pub rejected: Vec<u32>,
    /// Clients with `u ≤ 0`.
    pub flagged_non_contributing: Vec<u32>,
}

/// Cohort size for a participation fraction: `⌈fraction·N⌉`.
pub fn cohort_size(n_clients: usize, m_fraction: f64) -> usize {
    // the small offset keeps e.g. 0.1 × 100 from rounding up to 11
    ((m_fraction * n_clients as f64 - 1e-9).ceil() as usize).clamp(1, n_clients)
}

/// `⌈fraction·N⌉` distinct client ids, uniform without replacement.
pub fn sample_cohort(n_clients: usize, m_fraction: f64, round: u32, stream: &RngStream) -> Vec<u32> {
    let m = cohort_size(n_clients, m_fraction);
    let ids: Vec<u32> = (0..n_clients as u32).collect();
    let mut rng = stream.at_round(u64::from(round)).rng();
    let mut cohort: Vec<u32> = ids.choose_multiple(&mut rng, m).copied().collect();
    cohort.sort_unstable();
    cohort
}

/// Picks up to `quota` clients with the highest positive contribution.
pub fn select_top_q(u: &ContributionVector, quota: usize) -> SelectionResult {
    let mut ranked: Vec<(u32, f64)> = u.u.iter().map(|(&id, &v)| (id, v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = SelectionResult::default();
    for (id, v) in ranked {
        if v <= 0.0 {
            out.flagged_non_contributing.push(id);
        } else if out.selected.len() < quota {
            out.selected.push(id);
        } else {
            out.rejected.push(id);
        }
    }
    out.flagged_non_contributing.sort_unstable();
    out.rejected.sort_unstable();
    out
}

/// `φ_{t+1} = φ_t + ν·Σ_{selected} Δφ`, summed in ascending client-id order.
pub fn aggregate(
    phi_t: &GlobalModel,
    selected: &[u32],
    deltas: &BTreeMap<u32, Vec<f64>>,
    nu: f64,
) -> GlobalModel {
    let mut ids = selected.to_vec();
    ids.sort_unstable();
    let mut sum = vec![0.0; phi_t.phi.len()];
    for id in &ids {
        for (s, d) in sum.iter_mut().zip(&deltas[id]) {
            *s += d;
        }
    }
    let phi = if ids.is_empty() {
        phi_t.phi.clone()
    } else {
        phi_t.phi.iter().zip(&sum).map(|(p, s)| p + nu * s).collect()
    };
    GlobalModel {
        phi,
        round: phi_t.round + 1,
    }
}

/// Static inputs of a simulation.
#[derive(Debug, Clone)]
pub struct Environment {
    /// Training data as seen by the clients (poisoned labels included).
    pub train: Dataset,
    pub test: Dataset,
    pub partitions: Vec<ClientPartition>,
    pub settings: RoundSettings,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSettings {
    pub seed: u64,
    pub m_fraction: f64,
    pub quota: usize,
    pub policy: AggregationPolicy,
    pub nu: NuRule,
    pub loss: LossKind,
    pub hyper: Hyperparams,
    pub delta: u64,
    pub eps: f64,
    pub v_ref: VRef,
    pub candidate: CandidateForm,
    pub allocation: AllocationPolicy,
}

/// Mutable simulation state between rounds.
#[derive(Debug, Clone)]
pub struct SimState {
    pub model: GlobalModel,
    pub duals: Vec<DualState>,
    pub budget: Budget,
    pub chain: Chain,
    pub cumulative_uploaded_bytes: u64,
    pub cumulative_committed_bytes: u64,
    pub exhausted: bool,
}

impl SimState {
    pub fn new(env: &Environment, budget: Budget) -> Self {
        Self {
            model: GlobalModel::zeros(env.train.dim()),
            duals: env.partitions.iter().map(|p| DualState::new(p.client_id)).collect(),
            budget,
            chain: Chain::new(),
            cumulative_uploaded_bytes: 0,
            cumulative_committed_bytes: 0,
            exhausted: budget.is_exhausted(),
        }
    }

    pub fn round(&self) -> u32 {
        self.model.round
    }
}

impl Environment {
    pub fn n_clients(&self) -> usize {
        self.partitions.len()
    }

    pub fn plan(&self, round: u32) -> RoundPlan {
        let s = &self.settings;
        let stream = RngStream::new(s.seed, Purpose::Cohort);
        let cohort = sample_cohort(self.n_clients(), s.m_fraction, round, &stream);
        let quota = s.quota.min(cohort.len());
        RoundPlan { round, cohort, quota }
    }

    /// Local solves for the cohort; independent per client.
    pub fn local_updates(&self, state: &SimState, plan: &RoundPlan) -> Vec<LocalUpdate> {
        let s = &self.settings;
        plan.cohort
            .par_iter()
            .map(|&id| {
                let stream = RngStream::new(s.seed, Purpose::LocalSolve)
                    .at_round(u64::from(plan.round))
                    .for_client(u64::from(id));
                learning::local_solve(
                    &self.partitions[id as usize],
                    &state.duals[id as usize],
                    &state.model,
                    &self.train,
                    s.loss,
                    &s.hyper,
                    &stream,
                )
            })
            .collect()
    }

    /// Runs one full round. Returns the next state and the round's metrics.
    pub fn round_step(&self, state: &SimState) -> Result<(SimState, RoundMetrics)> {
        let s = &self.settings;
        let round = state.round() + 1;
        let plan = self.plan(round);
        let updates = self.local_updates(state, &plan);
        let deltas: BTreeMap<u32, Vec<f64>> =
            updates.iter().map(|u| (u.client_id, u.delta_phi.clone())).collect();

        let (contribution, selection) = match s.policy {
            AggregationPolicy::Fedtoken => {
                let ctx = UtilityContext::new(
                    state.model.phi.clone(),
                    deltas.clone(),
                    &self.test,
                    s.loss,
                    s.v_ref,
                    s.candidate,
                );
                let stream = RngStream::new(s.seed, Purpose::Permutation).at_round(u64::from(round));
                let plan_p = PermutationPlan::sampled(s.delta, s.eps, stream);
                let u = valuation::tmc_shapley(&ctx, &plan.cohort, &plan_p)?;
                let sel = select_top_q(&u, plan.quota);
                (Some(u), sel)
            }
            AggregationPolicy::FedavgAll => (
                None,
                SelectionResult {
                    selected: plan.cohort.clone(),
                    ..Default::default()
                },
            ),
            AggregationPolicy::RandomQuota => {
                let mut rng = RngStream::new(s.seed, Purpose::RandomQuota)
                    .at_round(u64::from(round))
                    .rng();
                let mut pool = plan.cohort.clone();
                pool.shuffle(&mut rng);
                let mut selected = pool[..plan.quota].to_vec();
                let mut rejected = pool[plan.quota..].to_vec();
                selected.sort_unstable();
                rejected.sort_unstable();
                (
                    None,
                    SelectionResult {
                        selected,
                        rejected,
                        flagged_non_contributing: Vec::new(),
                    },
                )
            }
        };

        let nu = match s.nu {
            NuRule::Auto if selection.selected.is_empty() => 0.0,
            NuRule::Auto => 1.0 / selection.selected.len() as f64,
            NuRule::Fixed(v) => v,
        };

        let mut next = state.clone();
        next.model = aggregate(&state.model, &selection.selected, &deltas, nu);
        for upd in updates.iter().filter(|u| selection.selected.contains(&u.client_id)) {
            let i = upd.client_id as usize;
            next.duals[i] = learning::commit(&state.duals[i], &upd.rho, nu);
        }

        let u_map = contribution.as_ref().map(|c| c.u.clone());
        let settlement = tokenomics::settle_round(
            &state.budget,
            &s.allocation,
            u_map.as_ref(),
            &plan.cohort,
            &selection.selected,
            round,
        );
        next.budget = settlement.budget;
        next.exhausted = settlement.exhausted;
        next.chain.append_block(round, &settlement.allocation)?;

        let per_upload = learning::upload_bytes(self.train.dim());
        next.cumulative_uploaded_bytes += per_upload * plan.cohort.len() as u64;
        next.cumulative_committed_bytes += per_upload * selection.selected.len() as u64;

        let alloc = &settlement.allocation;
        let metrics = RoundMetrics {
            round,
            test_accuracy: learning::accuracy(&next.model.phi, &self.test),
            test_loss: learning::mean_loss(&next.model.phi, &self.test, s.loss),
            duality_gap: learning::duality_gap(&next.duals, &self.train, s.loss, s.hyper.lambda)?,
            cohort: plan.cohort.clone(),
            contribution_digest: contribution.as_ref().map(|c| hex::encode(c.digest())),
            contributions: u_map,
            selected: selection.selected.clone(),
            flagged: selection.flagged_non_contributing.clone(),
            nu,
            tokens_contribution: alloc.contribution_total(),
            tokens_participation: alloc.participation_total(),
            awards: plan.cohort.iter().map(|&id| (id, alloc.client_total(id))).collect(),
            cumulative_issued: next.budget.issued(),
            cumulative_uploaded_bytes: next.cumulative_uploaded_bytes,
            cumulative_committed_bytes: next.cumulative_committed_bytes,
            utility_evaluations: contribution.as_ref().map_or(0, |c| c.utility_evaluations),
            budget_remaining: next.budget.remaining,
            budget_exhausted: next.exhausted,
        };
        Ok((next, metrics))
    }
}
