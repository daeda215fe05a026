//! Experiment configuration.
//!
//! A TOML document with one table per subsystem. Every key is optional; a file
//! containing only `seed = 1` yields the full default configuration. Unknown
//! keys are rejected.
//!
//! | key | default |
//! |---|---|
//! | `seed` | 0 |
//! | `data.source` | `"synthetic"` |
//! | `data.n_train` / `data.n_test` | 2000 / 1000 |
//! | `data.dim` / `data.separation` | 10 / 2.0 |
//! | `data.feature_scales` / `data.feature_offsets` | none / none (synthetic only) |
//! | `data.csv_path` / `data.csv_test_path` / `data.csv_header` | none / none / false |
//! | `data.test_fraction` | 0.2 (CSV without a test file) |
//! | `data.partition` | `{ kind = "label-shards", k = 2 }` |
//! | `poison.clients` / `poison.flip_fraction` | `[]` / 1.0 |
//! | `learning.loss` | `"logistic"` |
//! | `learning.lambda` / `learning.local_passes` | 0.01 / 5 |
//! | `learning.nu` | `"auto"` (1 / number aggregated) |
//! | `valuation.delta` / `valuation.eps` | 3 / 0.0001 |
//! | `valuation.candidate` | `{ form = "mean" }` |
//! | `valuation.v_ref` | `{ kind = "round-start" }` |
//! | `scheduler.n_clients` / `scheduler.m_fraction` | 100 / 0.1 |
//! | `scheduler.quota` / `scheduler.quota_ratio` | none / 0.5 of the cohort |
//! | `scheduler.policy` | `"fedtoken"` |
//! | `scheduler.rounds` / `scheduler.target_accuracy` | 50 / 0.7 |
//! | `tokenomics.budget_tokens` | 1000 |
//! | `tokenomics.per_round_tokens` | budget / rounds |
//! | `tokenomics.participation_base_tokens` | 1% of the per-round budget |
//! | `tokenomics.allocation` / `tokenomics.zeta` | `"proportional-fair"` / 0.7 |
//! | `tokenomics.pay_selected_participation` | false |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PartitionKind;
use crate::error::{Error, Result};
use crate::learning::LossKind;
use crate::scheduler::{cohort_size, AggregationPolicy, NuRule};
use crate::tokenomics::{AllocationKind, MICROTOKENS_PER_TOKEN};
use crate::valuation::{CandidateForm, VRef};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub poison: PoisonConfig,
    pub learning: LearningConfig,
    pub valuation: ValuationConfig,
    pub scheduler: SchedulerConfig,
    pub tokenomics: TokenomicsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub separation: f64,
    /// Per-feature multipliers applied to synthetic data; empty means none.
    pub feature_scales: Vec<f64>,
    /// Per-feature shifts added after scaling; empty means none.
    pub feature_offsets: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_test_path: Option<PathBuf>,
    pub csv_header: bool,
    pub test_fraction: f64,
    pub partition: PartitionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoisonConfig {
    pub clients: Vec<u32>,
    pub flip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    pub loss: LossKind,
    pub lambda: f64,
    pub local_passes: usize,
    #[serde(with = "nu_repr")]
    pub nu: NuRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValuationConfig {
    pub delta: u64,
    pub eps: f64,
    pub candidate: CandidateForm,
    pub v_ref: VRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    pub n_clients: usize,
    pub m_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quota: Option<usize>,
    pub quota_ratio: f64,
    pub policy: AggregationPolicy,
    pub rounds: u32,
    pub target_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenomicsConfig {
    pub budget_tokens: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_round_tokens: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub participation_base_tokens: Option<f64>,
    pub allocation: AllocationKind,
    pub zeta: f64,
    pub pay_selected_participation: bool,
}


impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            n_train: 2000,
            n_test: 1000,
            dim: 10,
            separation: 2.0,
            feature_scales: Vec::new(),
            feature_offsets: Vec::new(),
            csv_path: None,
            csv_test_path: None,
            csv_header: false,
            test_fraction: 0.2,
            partition: PartitionKind::LabelShards { k: 2 },
        }
    }
}

impl Default for PoisonConfig {
    fn default() -> Self {
        Self {
            clients: Vec::new(),
            flip_fraction: 1.0,
        }
    }
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Logistic,
            lambda: 0.01,
            local_passes: 5,
            nu: NuRule::Auto,
        }
    }
}

impl Default for ValuationConfig {
    fn default() -> Self {
        Self {
            delta: 3,
            eps: 1e-4,
            candidate: CandidateForm::Mean,
            v_ref: VRef::RoundStart,
        }
    }
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            n_clients: 100,
            m_fraction: 0.1,
            quota: None,
            quota_ratio: 0.5,
            policy: AggregationPolicy::Fedtoken,
            rounds: 50,
            target_accuracy: 0.7,
        }
    }
}

impl Default for TokenomicsConfig {
    fn default() -> Self {
        Self {
            budget_tokens: 1000.0,
            per_round_tokens: None,
            participation_base_tokens: None,
            allocation: AllocationKind::ProportionalFair,
            zeta: 0.7,
            pay_selected_participation: false,
        }
    }
}

/// `nu = "auto"` or a number.
mod nu_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::scheduler::NuRule;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Word(String),
        Value(f64),
    }

    pub fn serialize<S: Serializer>(nu: &NuRule, s: S) -> Result<S::Ok, S::Error> {
        match nu {
            NuRule::Auto => Repr::Word("auto".into()),
            NuRule::Fixed(v) => Repr::Value(*v),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NuRule, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Word(w) if w == "auto" => Ok(NuRule::Auto),
            Repr::Word(w) => Err(serde::de::Error::custom(format!("expected \"auto\" or a number, got \"{w}\""))),
            Repr::Value(v) => Ok(NuRule::Fixed(v)),
        }
    }
}

fn tokens_to_micro(tokens: f64) -> u64 {
    (tokens * MICROTOKENS_PER_TOKEN as f64).round() as u64
}

impl ExperimentConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| {
            let key = e.span().map(|span| key_at(src, span.start)).unwrap_or_default();
            Error::config(key, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn cohort_size(&self) -> usize {
        cohort_size(self.scheduler.n_clients, self.scheduler.m_fraction)
    }

    /// Explicit quota, or `round(quota_ratio·|M|)` clamped to `[1, |M|]`.
    pub fn quota(&self) -> usize {
        let m = self.cohort_size();
        self.scheduler
            .quota
            .unwrap_or_else(|| ((self.scheduler.quota_ratio * m as f64).round() as usize).clamp(1, m))
    }

    pub fn budget_microtokens(&self) -> u64 {
        tokens_to_micro(self.tokenomics.budget_tokens)
    }

    pub fn per_round_microtokens(&self) -> u64 {
        match self.tokenomics.per_round_tokens {
            Some(t) => tokens_to_micro(t),
            None => self.budget_microtokens() / u64::from(self.scheduler.rounds.max(1)),
        }
    }

    pub fn participation_base_microtokens(&self) -> u64 {
        match self.tokenomics.participation_base_tokens {
            Some(t) => tokens_to_micro(t),
            None => self.per_round_microtokens() / 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let s = &self.scheduler;
        let l = &self.learning;
        let v = &self.valuation;
        let t = &self.tokenomics;
        let bad = |k: &str, r: &str| Err(Error::config(k, r));

        match d.source {
            DataSource::Synthetic => {
                if d.n_train < 2 || d.n_test < 2 {
                    return bad("data.n_train", "synthetic splits need at least 2 points each");
                }
                if d.dim == 0 {
                    return bad("data.dim", "must be >= 1");
                }
                if !(d.separation > 0.0) {
                    return bad("data.separation", "must be > 0");
                }
                if !d.feature_scales.is_empty() && d.feature_scales.len() != d.dim {
                    return bad("data.feature_scales", "must be empty or have one entry per feature");
                }
                if !d.feature_offsets.is_empty() && d.feature_offsets.len() != d.dim {
                    return bad("data.feature_offsets", "must be empty or have one entry per feature");
                }
            }
            DataSource::Csv => {
                if d.csv_path.is_none() {
                    return bad("data.csv_path", "required when data.source = \"csv\"");
                }
            }
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return bad("data.test_fraction", "must lie in (0, 1)");
        }
        match d.partition {
            PartitionKind::LabelShards { k: 0 } => return bad("data.partition", "label-shards needs k >= 1"),
            PartitionKind::Dirichlet { beta } if !(beta > 0.0) => return bad("data.partition", "dirichlet needs beta > 0"),
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.poison.flip_fraction) {
            return bad("poison.flip_fraction", "must lie in [0, 1]");
        }
        if let Some(c) = self.poison.clients.iter().find(|&&c| c as usize >= s.n_clients) {
            return bad("poison.clients", &format!("client {c} is outside [0, n_clients)"));
        }
        if !(l.lambda > 0.0 && l.lambda.is_finite()) {
            return bad("learning.lambda", "must be a finite value > 0");
        }
        if l.local_passes == 0 {
            return bad("learning.local_passes", "must be >= 1");
        }
        if let NuRule::Fixed(nu) = l.nu {
            if !(nu > 0.0 && nu <= 1.0) {
                return bad("learning.nu", "must be \"auto\" or lie in (0, 1]");
            }
        }
        if v.delta == 0 {
            return bad("valuation.delta", "must be >= 1");
        }
        if !(v.eps >= 0.0) {
            return bad("valuation.eps", "must be >= 0");
        }
        if let CandidateForm::Sum { nu } = v.candidate {
            if !(nu > 0.0 && nu.is_finite()) {
                return bad("valuation.candidate", "sum-form nu must be > 0");
            }
        }
        if s.n_clients == 0 {
            return bad("scheduler.n_clients", "must be >= 1");
        }
        if !(s.m_fraction > 0.0 && s.m_fraction <= 1.0) {
            return bad("scheduler.m_fraction", "must lie in (0, 1]");
        }
        if let Some(q) = s.quota {
            if q == 0 || q > self.cohort_size() {
                return bad("scheduler.quota", &format!("must lie in [1, {}] (the cohort size)", self.cohort_size()));
            }
        }
        if !(s.quota_ratio > 0.0 && s.quota_ratio <= 1.0) {
            return bad("scheduler.quota_ratio", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&s.target_accuracy) {
            return bad("scheduler.target_accuracy", "must lie in [0, 1]");
        }
        if !(t.budget_tokens >= 0.0 && t.budget_tokens.is_finite()) {
            return bad("tokenomics.budget_tokens", "must be a finite value >= 0");
        }
        if let Some(b) = t.per_round_tokens {
            if !(b >= 0.0) || tokens_to_micro(b) > self.budget_microtokens() {
                return bad("tokenomics.per_round_tokens", "must lie in [0, budget_tokens]");
            }
        }
        if let Some(p) = t.participation_base_tokens {
            if !(p >= 0.0 && p.is_finite()) {
                return bad("tokenomics.participation_base_tokens", "must be >= 0");
            }
        }
        if !(t.zeta > 0.0 && t.zeta < 1.0) {
            return bad("tokenomics.zeta", "must lie strictly between 0 and 1");
        }
        Ok(())
    }
}

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&src)
}

/// Best-effort dotted key name for the line containing byte `offset`.
fn key_at(src: &str, offset: usize) -> String {
    let upto = &src[..offset.min(src.len())];
    let line_start = upto.rfind('\n').map_or(0, |i| i + 1);
    let line_end = src[line_start..].find('\n').map_or(src.len(), |i| line_start + i);
    let line = &src[line_start..line_end];
    let section = upto[..line_start]
        .lines()
        .rev()
        .find_map(|l| {
            let l = l.trim();
            (l.starts_with('[') && l.ends_with(']')).then(|| l.trim_matches(|c| c == '[' || c == ']').trim().to_string())
        });
    let key = line.split('=').next().unwrap_or("").trim().to_string();
    match section {
        Some(s) if !key.is_empty() && !key.starts_with('[') => format!("{s}.{key}"),
        Some(s) => s,
        None => key,
    }
}
