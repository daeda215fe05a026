use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub duality_gap: f64,
    pub cohort: Vec<u32>,
    /// Per-client contribution estimates; absent when the policy skips valuation.
    pub contributions: Option<BTreeMap<u32, f64>>,
    /// Hex SHA-256 of the contribution vector.
    pub contribution_digest: Option<String>,
    pub selected: Vec<u32>,
    pub flagged: Vec<u32>,
    pub nu: f64,
    pub tokens_contribution: u64,
    pub tokens_participation: u64,
    /// Microtokens received by each cohort member this round.
    pub awards: BTreeMap<u32, u64>,
    pub cumulative_issued: u64,
    pub cumulative_uploaded_bytes: u64,
    pub cumulative_committed_bytes: u64,
    pub utility_evaluations: u64,
    pub budget_remaining: u64,
    pub budget_exhausted: bool,
}

impl RoundMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics are always serialisable")
    }
}

/// First round whose test accuracy reaches `target`.
pub fn rounds_to_accuracy(metrics: &[RoundMetrics], target: f64) -> Option<u32> {
    metrics.iter().find(|m| m.test_accuracy >= target).map(|m| m.round)
}

/// Committed bytes spent up to and including the round that first reaches `target`.
pub fn committed_bytes_to_accuracy(metrics: &[RoundMetrics], target: f64) -> Option<u64> {
    metrics
        .iter()
        .find(|m| m.test_accuracy >= target)
        .map(|m| m.cumulative_committed_bytes)
}
