//! End-to-end runs, parameter sweeps and reporting.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig};
use crate::data::{self, Dataset, PartitionScheme};
use crate::error::{Error, Result};
use crate::ledger::{Chain, LedgerWriter};
use crate::learning::{GlobalModel, Hyperparams};
use crate::metrics::{committed_bytes_to_accuracy, rounds_to_accuracy, RoundMetrics};
use crate::rng::{Purpose, RngStream};
use crate::scheduler::{Environment, RoundSettings, SimState};
use crate::tokenomics::{AllocationPolicy, Budget};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LEDGER_FILE: &str = "ledger.bin";
pub const MODEL_FILE: &str = "model.bin";
pub const SUMMARY_FILE: &str = "summary.json";

/// Loads or generates the train/test split described by the config.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    match d.source {
        DataSource::Synthetic => {
            let base = RngStream::new(cfg.seed, Purpose::Synth);
            let mut train = data::synth_gaussian(d.n_train, d.dim, d.separation, &base.for_client(0))?;
            let mut test = data::synth_gaussian(d.n_test, d.dim, d.separation, &base.for_client(1))?;
            if !d.feature_scales.is_empty() || !d.feature_offsets.is_empty() {
                let affine = |x: &[f64]| {
                    x.iter()
                        .enumerate()
                        .map(|(k, a)| {
                            a * d.feature_scales.get(k).copied().unwrap_or(1.0)
                                + d.feature_offsets.get(k).copied().unwrap_or(0.0)
                        })
                        .collect()
                };
                train = train.map_features(affine)?;
                test = test.map_features(affine)?;
            }
            Ok((train, test))
        }
        DataSource::Csv => {
            let path = d.csv_path.as_ref().expect("validated");
            let all = Dataset::read_csv(path, d.csv_header)?;
            if let Some(test_path) = &d.csv_test_path {
                let test = Dataset::read_csv(test_path, d.csv_header)?;
                if test.dim() != all.dim() {
                    return Err(Error::Dataset("train and test CSV dimensions differ".into()));
                }
                return Ok((all, test));
            }
            let mut idx: Vec<usize> = (0..all.len()).collect();
            idx.shuffle(&mut RngStream::new(cfg.seed, Purpose::Synth).for_client(2).rng());
            let n_test = ((all.len() as f64 * d.test_fraction).round() as usize).clamp(1, all.len() - 1);
            let pick = |ix: &[usize]| Dataset::new(ix.iter().map(|&i| all.point(i).clone()).collect());
            Ok((pick(&idx[n_test..])?, pick(&idx[..n_test])?))
        }
    }
}

/// Builds the simulation environment: partitions and the poisoned training view.
pub fn build_environment(cfg: &ExperimentConfig) -> Result<Environment> {
    cfg.validate()?;
    let (mut train, test) = load_datasets(cfg)?;
    let scheme = PartitionScheme {
        kind: cfg.data.partition,
        seed: cfg.seed,
    };
    let partitions = data::partition(&train, cfg.scheduler.n_clients, &scheme)?;
    for &c in &cfg.poison.clients {
        let stream = RngStream::new(cfg.seed, Purpose::Poison).for_client(u64::from(c));
        train = data::poison_labels(&partitions[c as usize], &train, cfg.poison.flip_fraction, &stream)?;
    }
    let settings = RoundSettings {
        seed: cfg.seed,
        m_fraction: cfg.scheduler.m_fraction,
        quota: cfg.quota(),
        policy: cfg.scheduler.policy,
        nu: cfg.learning.nu,
        loss: cfg.learning.loss,
        hyper: Hyperparams {
            lambda: cfg.learning.lambda,
            local_passes: cfg.learning.local_passes,
            seed: cfg.seed,
        },
        delta: cfg.valuation.delta,
        eps: cfg.valuation.eps,
        v_ref: cfg.valuation.v_ref,
        candidate: cfg.valuation.candidate,
        allocation: AllocationPolicy {
            kind: cfg.tokenomics.allocation,
            discount_zeta: cfg.tokenomics.zeta,
            pay_selected_participation: cfg.tokenomics.pay_selected_participation,
        },
    };
    Ok(Environment {
        train,
        test,
        partitions,
        settings,
    })
}

pub fn initial_budget(cfg: &ExperimentConfig) -> Result<Budget> {
    Budget::new(
        cfg.budget_microtokens(),
        cfg.per_round_microtokens(),
        cfg.participation_base_microtokens(),
    )
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    RoundsCompleted,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds_run: u32,
    pub stop_reason: StopReason,
    pub final_accuracy: f64,
    pub final_test_loss: f64,
    pub final_duality_gap: Option<f64>,
    pub target_accuracy: f64,
    pub rounds_to_target: Option<u32>,
    pub committed_bytes_to_target: Option<u64>,
    pub total_uploaded_bytes: u64,
    pub total_committed_bytes: u64,
    pub tokens_issued: u64,
    pub budget_remaining: u64,
    pub utility_evaluations: u64,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub model: GlobalModel,
    pub state: SimState,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn chain(&self) -> &Chain {
        &self.state.chain
    }
}

struct Sinks {
    metrics: BufWriter<File>,
    ledger: LedgerWriter,
}

impl Sinks {
    fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mpath = dir.join(METRICS_FILE);
        let metrics = BufWriter::new(File::create(&mpath).map_err(|e| Error::io(&mpath, e))?);
        let ledger = LedgerWriter::create(&dir.join(LEDGER_FILE))?;
        Ok(Self { metrics, ledger })
    }

    fn record(&mut self, m: &RoundMetrics, chain: &Chain) -> Result<()> {
        writeln!(self.metrics, "{}", m.to_json_line())
            .and_then(|_| self.metrics.flush())
            .map_err(|e| Error::io(METRICS_FILE, e))?;
        self.ledger.append(chain.blocks().last().expect("a block per round"))
    }
}

/// Runs rounds until the configured count is reached or the budget runs out.
/// With `out_dir`, metrics and ledger are streamed there round by round and the
/// final model and summary are written at the end.
pub fn run(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    let env = build_environment(cfg)?;
    let mut state = SimState::new(&env, initial_budget(cfg)?);
    let mut sinks = out_dir.map(Sinks::open).transpose()?;
    let mut metrics = Vec::new();
    let mut stop_reason = StopReason::RoundsCompleted;

    with_thread_cap(|| -> Result<()> {
        for _ in 0..cfg.scheduler.rounds {
            if state.exhausted {
                stop_reason = StopReason::BudgetExhausted;
                break;
            }
            let (next, m) = env.round_step(&state)?;
            state = next;
            if let Some(s) = sinks.as_mut() {
                s.record(&m, &state.chain)?;
            }
            metrics.push(m);
        }
        if state.exhausted {
            stop_reason = StopReason::BudgetExhausted;
        }
        Ok(())
    })?;

    let target = cfg.scheduler.target_accuracy;
    let last = metrics.last();
    let summary = RunSummary {
        rounds_run: metrics.len() as u32,
        stop_reason,
        final_accuracy: last.map_or_else(|| crate::learning::accuracy(&state.model.phi, &env.test), |m| m.test_accuracy),
        final_test_loss: last.map_or_else(
            || crate::learning::mean_loss(&state.model.phi, &env.test, cfg.learning.loss),
            |m| m.test_loss,
        ),
        final_duality_gap: last.map(|m| m.duality_gap),
        target_accuracy: target,
        rounds_to_target: rounds_to_accuracy(&metrics, target),
        committed_bytes_to_target: committed_bytes_to_accuracy(&metrics, target),
        total_uploaded_bytes: state.cumulative_uploaded_bytes,
        total_committed_bytes: state.cumulative_committed_bytes,
        tokens_issued: state.budget.issued(),
        budget_remaining: state.budget.remaining,
        utility_evaluations: metrics.iter().map(|m| m.utility_evaluations).sum(),
    };

    if let Some(dir) = out_dir {
        let mpath = dir.join(MODEL_FILE);
        std::fs::write(&mpath, state.model.to_snapshot_bytes()).map_err(|e| Error::io(&mpath, e))?;
        let spath = dir.join(SUMMARY_FILE);
        let json = serde_json::to_string_pretty(&summary)?;
        std::fs::write(&spath, json + "\n").map_err(|e| Error::io(&spath, e))?;
    }

    Ok(RunOutput {
        model: state.model.clone(),
        metrics,
        state,
        summary,
    })
}

/// Honours `FEDTOKEN_THREADS` for the closure's parallel sections.
fn with_thread_cap<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match std::env::var("FEDTOKEN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    QuotaRatio,
    Delta,
    Budget,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quota_ratio" => Ok(SweepAxis::QuotaRatio),
            "delta" => Ok(SweepAxis::Delta),
            "budget" => Ok(SweepAxis::Budget),
            other => Err(Error::config("axis", format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub summary: RunSummary,
}

/// The config with one sweep axis set to `value`.
pub fn apply_axis(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::QuotaRatio => {
            c.scheduler.quota = None;
            c.scheduler.quota_ratio = value;
        }
        SweepAxis::Delta => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::config("valuation.delta", format!("sweep value {value} is not a positive integer")));
            }
            c.valuation.delta = value as u64;
        }
        SweepAxis::Budget => c.tokenomics.budget_tokens = value,
    }
    c.validate()?;
    Ok(c)
}

/// One run per axis value, all sharing the config's seed schedule.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("values", "sweep needs at least one value"));
    }
    let configs = values
        .iter()
        .map(|&v| apply_axis(cfg, axis, v))
        .collect::<Result<Vec<_>>>()?;
    use rayon::prelude::*;
    with_thread_cap(|| {
        configs
            .par_iter()
            .zip(values)
            .map(|(c, &value)| run(c, None).map(|out| SweepRow { value, summary: out.summary }))
            .collect()
    })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

/// Plain-text comparison table for a sweep.
pub fn render_sweep(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:>12} {:>9} {:>7} {:>10} {:>16} {:>14} {:>14} {:>11}\n",
        format!("{axis:?}"),
        "final_acc",
        "rounds",
        "to_target",
        "tokens_issued",
        "uploaded_B",
        "committed_B",
        "utility_ev"
    );
    for r in rows {
        let s = &r.summary;
        out += &format!(
            "{:>12} {:>9.4} {:>7} {:>10} {:>16} {:>14} {:>14} {:>11}\n",
            r.value,
            s.final_accuracy,
            s.rounds_run,
            opt(s.rounds_to_target),
            s.tokens_issued,
            s.total_uploaded_bytes,
            s.total_committed_bytes,
            s.utility_evaluations
        );
    }
    out
}

pub fn read_metrics(path: &Path) -> Result<Vec<RoundMetrics>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Per-round table of a metrics stream. `gnuplot` drops the header decoration
/// and emits whitespace-separated columns with a `#` comment header.
pub fn render_report(metrics: &[RoundMetrics], gnuplot: bool) -> String {
    let cols = [
        "round", "accuracy", "test_loss", "gap", "selected", "flagged", "tok_contrib", "tok_partic",
        "uploaded_B", "committed_B", "utility_ev", "remaining",
    ];
    let mut out = String::new();
    if gnuplot {
        out += &format!("# {}\n", cols.join(" "));
    } else {
        out += &format!(
            "{:>5} {:>8} {:>9} {:>10} {:>8} {:>7} {:>12} {:>11} {:>11} {:>12} {:>10} {:>14}\n",
            cols[0], cols[1], cols[2], cols[3], cols[4], cols[5], cols[6], cols[7], cols[8], cols[9], cols[10], cols[11]
        );
    }
    for m in metrics {
        if gnuplot {
            out += &format!(
                "{} {} {} {} {} {} {} {} {} {} {} {}\n",
                m.round, m.test_accuracy, m.test_loss, m.duality_gap, m.selected.len(), m.flagged.len(),
                m.tokens_contribution, m.tokens_participation, m.cumulative_uploaded_bytes,
                m.cumulative_committed_bytes, m.utility_evaluations, m.budget_remaining
            );
        } else {
            out += &format!(
                "{:>5} {:>8.4} {:>9.5} {:>10.3e} {:>8} {:>7} {:>12} {:>11} {:>11} {:>12} {:>10} {:>14}\n",
                m.round, m.test_accuracy, m.test_loss, m.duality_gap, m.selected.len(), m.flagged.len(),
                m.tokens_contribution, m.tokens_participation, m.cumulative_uploaded_bytes,
                m.cumulative_committed_bytes, m.utility_evaluations, m.budget_remaining
            );
        }
    }
    out
}
