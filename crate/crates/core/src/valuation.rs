//! Contribution valuation of client updates.
//!
//! A round's updates form a cooperative game whose value for a coalition is
//! the test-loss improvement of the model built from that coalition's deltas.
//! Values are estimated by truncated Monte-Carlo permutation sampling, with an
//! exact subset-enumeration routine kept as an oracle for small games.

use std::collections::{BTreeMap, HashMap};

use itertools::Itertools;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learning::{mean_loss, LossKind};
use crate::rng::RngStream;

/// Largest game the exact oracle will enumerate.
pub const EXACT_MAX_PLAYERS: usize = 10;

/// A cooperative game over client ids.
pub trait Game {
    /// Value of the coalition. `members` is sorted ascending and duplicate-free.
    fn value(&self, members: &[u32]) -> Result<f64>;
}

impl<F> Game for F
where
    F: Fn(&[u32]) -> f64,
{
    fn value(&self, members: &[u32]) -> Result<f64> {
        Ok(self(members))
    }
}

/// How a coalition's deltas are combined into a candidate model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "form")]
pub enum CandidateForm {
    /// `φ_t + (1/|S|)·Σ Δφ_s`
    Mean,
    /// `φ_t + ν·Σ Δφ_s` with a fixed ν.
    Sum { nu: f64 },
}

/// Reference level for utilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum VRef {
    /// Mean test loss of the round-start model, so `V(∅) = 0`.
    RoundStart,
    Constant(f64),
}

/// Everything needed to score coalitions of one round's updates.
#[derive(Debug, Clone)]
pub struct UtilityContext<'a> {
    pub phi_t: Vec<f64>,
    pub deltas: BTreeMap<u32, Vec<f64>>,
    pub test_set: &'a Dataset,
    pub loss: LossKind,
    pub v_ref: f64,
    pub form: CandidateForm,
}

impl<'a> UtilityContext<'a> {
    pub fn new(
        phi_t: Vec<f64>,
        deltas: BTreeMap<u32, Vec<f64>>,
        test_set: &'a Dataset,
        loss: LossKind,
        v_ref: VRef,
        form: CandidateForm,
    ) -> Self {
        let v_ref = match v_ref {
            VRef::RoundStart => mean_loss(&phi_t, test_set, loss),
            VRef::Constant(v) => v,
        };
        Self {
            phi_t,
            deltas,
            test_set,
            loss,
            v_ref,
            form,
        }
    }

    /// The candidate model for a coalition.
    pub fn candidate(&self, members: &[u32]) -> Result<Vec<f64>> {
        let mut phi = self.phi_t.clone();
        if members.is_empty() {
            return Ok(phi);
        }
        let weight = match self.form {
            CandidateForm::Mean => 1.0 / members.len() as f64,
            CandidateForm::Sum { nu } => nu,
        };
        let mut sum = vec![0.0; phi.len()];
        for id in members {
            let delta = self.deltas.get(id).ok_or(Error::UnknownClient(*id))?;
            for (s, d) in sum.iter_mut().zip(delta) {
                *s += d;
            }
        }
        for (p, s) in phi.iter_mut().zip(&sum) {
            *p += weight * s;
        }
        Ok(phi)
    }

    pub fn utility(&self, members: &[u32]) -> Result<f64> {
        let phi = self.candidate(members)?;
        Ok(self.v_ref - mean_loss(&phi, self.test_set, self.loss))
    }
}

impl Game for UtilityContext<'_> {
    fn value(&self, members: &[u32]) -> Result<f64> {
        self.utility(members)
    }
}

/// Per-client contribution estimates for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionVector {
    pub u: BTreeMap<u32, f64>,
    pub permutations_used: u64,
    pub truncation_eps: f64,
    /// Utility values requested by the scans (cache hits included).
    pub utility_evaluations: u64,
    /// Utility values actually computed.
    pub distinct_evaluations: u64,
}

impl ContributionVector {
    pub fn get(&self, id: u32) -> f64 {
        self.u.get(&id).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.u.values().sum()
    }

    /// SHA-256 over `(id u32 BE ‖ u f64 BE)` in id order.
    pub fn digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (id, v) in &self.u {
            h.update(id.to_be_bytes());
            h.update(v.to_bits().to_be_bytes());
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(&h.finalize());
        out
    }
}

/// Where the scanned permutations come from.
#[derive(Debug, Clone, Copy)]
pub enum PermutationSource {
    /// `delta` Fisher-Yates shuffles drawn from the stream.
    Sampled { delta: u64, stream: RngStream },
    /// Every ordering of the participants, in lexicographic order.
    Exhaustive,
}

#[derive(Debug, Clone, Copy)]
pub struct PermutationPlan {
    pub source: PermutationSource,
    pub eps: f64,
}

impl PermutationPlan {
    pub fn sampled(delta: u64, eps: f64, stream: RngStream) -> Self {
        Self {
            source: PermutationSource::Sampled { delta, stream },
            eps,
        }
    }

    pub fn exhaustive(eps: f64) -> Self {
        Self {
            source: PermutationSource::Exhaustive,
            eps,
        }
    }
}

/// Memoising wrapper that counts requests and misses.
struct CachedGame<'g, G: Game + ?Sized> {
    game: &'g G,
    participants: Vec<u32>,
    cache: HashMap<Vec<u64>, f64>,
    requests: u64,
}

impl<'g, G: Game + ?Sized> CachedGame<'g, G> {
    fn new(game: &'g G, participants: &[u32]) -> Self {
        Self {
            game,
            participants: participants.to_vec(),
            cache: HashMap::new(),
            requests: 0,
        }
    }

    /// `mask` is a bitset over positions in `participants`.
    fn value(&mut self, mask: &[u64]) -> Result<f64> {
        self.requests += 1;
        if let Some(v) = self.cache.get(mask) {
            return Ok(*v);
        }
        let mut members: Vec<u32> = self
            .participants
            .iter()
            .enumerate()
            .filter(|(p, _)| mask[p / 64] >> (p % 64) & 1 == 1)
            .map(|(_, &id)| id)
            .collect();
        members.sort_unstable();
        let v = self.game.value(&members)?;
        self.cache.insert(mask.to_vec(), v);
        Ok(v)
    }
}

fn check_participants(participants: &[u32]) -> Result<()> {
    if participants.iter().duplicates().next().is_some() {
        return Err(Error::Domain("duplicate participant id".into()));
    }
    Ok(())
}

/// Shapley values by enumerating all subsets with their permutation
/// multiplicities `|S|!·(M−|S|−1)!/M!`.
pub fn exact_shapley<G: Game + ?Sized>(game: &G, participants: &[u32]) -> Result<ContributionVector> {
    check_participants(participants)?;
    let m = participants.len();
    if m > EXACT_MAX_PLAYERS {
        return Err(Error::OracleSize {
            got: m,
            max: EXACT_MAX_PLAYERS,
        });
    }
    let n_subsets = 1usize << m;
    let mut values = Vec::with_capacity(n_subsets);
    for mask in 0..n_subsets {
        let mut members: Vec<u32> = (0..m).filter(|p| mask >> p & 1 == 1).map(|p| participants[p]).collect();
        members.sort_unstable();
        values.push(game.value(&members)?);
    }

    let fact: Vec<f64> = (0..=m).scan(1.0, |acc, k| {
        if k > 0 {
            *acc *= k as f64;
        }
        Some(*acc)
    }).collect();
    let weight: Vec<f64> = (0..m).map(|s| fact[s] * fact[m - s - 1] / fact[m]).collect();

    let mut u = BTreeMap::new();
    for (p, &id) in participants.iter().enumerate() {
        let bit = 1usize << p;
        let mut acc = 0.0;
        for mask in (0..n_subsets).filter(|s| s & bit == 0) {
            let size = mask.count_ones() as usize;
            acc += weight[size] * (values[mask | bit] - values[mask]);
        }
        u.insert(id, acc);
    }
    Ok(ContributionVector {
        u,
        permutations_used: fact[m] as u64,
        truncation_eps: 0.0,
        utility_evaluations: n_subsets as u64,
        distinct_evaluations: n_subsets as u64,
    })
}

/// Truncated Monte-Carlo Shapley estimation.
///
/// Each permutation is scanned prefix by prefix. Once a prefix value is within
/// `eps` of the full-coalition value the remaining marginals are taken as zero
/// and no further utilities are requested for that permutation. Estimates are
/// running means over permutations, combined in permutation order.
pub fn tmc_shapley<G: Game + ?Sized>(
    game: &G,
    participants: &[u32],
    plan: &PermutationPlan,
) -> Result<ContributionVector> {
    check_participants(participants)?;
    let m = participants.len();
    let words = m.div_ceil(64).max(1);
    let mut cached = CachedGame::new(game, participants);
    let mut u = vec![0.0; m];
    let empty = vec![0u64; words];

    // The full-coalition value is only needed when truncation can fire.
    let full_value = if plan.eps > 0.0 && m > 0 {
        let mut full = vec![0u64; words];
        (0..m).for_each(|p| full[p / 64] |= 1 << (p % 64));
        Some(cached.value(&full)?)
    } else {
        None
    };

    let mut scan = |perm: &[usize], c: u64, cached: &mut CachedGame<'_, G>| -> Result<()> {
        let mut mask = empty.clone();
        let mut prev = cached.value(&mask)?;
        let mut truncated = false;
        let keep = (c - 1) as f64 / c as f64;
        let fresh = 1.0 / c as f64;
        for &p in perm {
            if !truncated {
                if let Some(full) = full_value {
                    truncated = (full - prev).abs() < plan.eps;
                }
            }
            let marginal = if truncated {
                0.0
            } else {
                mask[p / 64] |= 1 << (p % 64);
                let v = cached.value(&mask)?;
                let diff = v - prev;
                prev = v;
                diff
            };
            u[p] = keep * u[p] + fresh * marginal;
        }
        Ok(())
    };

    let mut used = 0u64;
    match plan.source {
        PermutationSource::Sampled { delta, stream } => {
            if delta == 0 {
                return Err(Error::Domain("permutation count must be >= 1".into()));
            }
            let mut rng = stream.rng();
            let mut perm: Vec<usize> = (0..m).collect();
            for c in 1..=delta {
                perm.shuffle(&mut rng);
                scan(&perm, c, &mut cached)?;
            }
            used = delta;
        }
        PermutationSource::Exhaustive => {
            for perm in (0..m).permutations(m) {
                used += 1;
                scan(&perm, used, &mut cached)?;
            }
        }
    }

    Ok(ContributionVector {
        u: participants.iter().copied().zip(u).collect(),
        permutations_used: used,
        truncation_eps: plan.eps,
        utility_evaluations: cached.requests,
        distinct_evaluations: cached.cache.len() as u64,
    })
}

/// `Σ u_n − [V(all) − V(∅)]`.
pub fn efficiency_residual<G: Game + ?Sized>(
    u: &ContributionVector,
    game: &G,
    participants: &[u32],
) -> Result<f64> {
    let mut all = participants.to_vec();
    all.sort_unstable();
    let span = game.value(&all)? - game.value(&[])?;
    let total: f64 = participants.iter().map(|id| u.get(*id)).sum();
    Ok(total - span)
}
