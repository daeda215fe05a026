//! Primal/dual machinery for L2-regularised convex binary classification.
//!
//! With `g(w) = ½‖w‖²` the primal model equals the shared vector
//! `φ(α) = (1/λD)·Σ_i α_i x_i`, so the same vector is both what clients
//! exchange and what gets evaluated on test data.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Bytes of framing added to every uploaded update.
pub const UPLOAD_HEADER_BYTES: u64 = 64;

/// Slack allowed on the logistic dual interval before it is a domain error.
const FEASIBILITY_SLACK: f64 = 1e-9;

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `½(z − y)²`
    Squared,
    /// `log(1 + exp(−y z))`
    Logistic,
}

impl LossKind {
    /// Loss at margin input `z = wᵀx`.
    pub fn loss(self, z: f64, y: f64) -> f64 {
        match self {
            LossKind::Squared => 0.5 * (z - y) * (z - y),
            LossKind::Logistic => softplus(-y * z),
        }
    }
}

/// Numerically stable `log(1 + e^t)`.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn xlogx(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        s * s.ln()
    }
}

/// `−f_i*(−α_i)`: the per-sample term of the dual objective.
pub fn conjugate_term(loss: LossKind, alpha: f64, y: f64) -> Result<f64> {
    match loss {
        LossKind::Squared => Ok(-0.5 * alpha * alpha + alpha * y),
        LossKind::Logistic => {
            let s = logistic_dual_coordinate(alpha, y)?;
            Ok(-(xlogx(s) + xlogx(1.0 - s)))
        }
    }
}

fn logistic_dual_coordinate(alpha: f64, y: f64) -> Result<f64> {
    let s = alpha * y;
    if !(-FEASIBILITY_SLACK..=1.0 + FEASIBILITY_SLACK).contains(&s) {
        return Err(Error::Domain(format!(
            "logistic dual coordinate α·y = {s} outside [0, 1]"
        )));
    }
    Ok(s.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda: f64,
    pub local_passes: usize,
    pub seed: u64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be a finite value > 0"));
        }
        if self.local_passes == 0 {
            return Err(Error::config("local_passes", "must be >= 1"));
        }
        Ok(())
    }
}

/// The shared vector `φ` at the start of round `round`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub phi: Vec<f64>,
    pub round: u32,
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"FTMD";
const SNAPSHOT_VERSION: u32 = 1;

impl GlobalModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            phi: vec![0.0; dim],
            round: 0,
        }
    }

    /// Raw snapshot: `"FTMD" ‖ version u32 ‖ d u64 ‖ d × f64`, little-endian.
    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.phi.len());
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.phi.len() as u64).to_le_bytes());
        for v in &self.phi {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
        if bytes.len() < 16 || &bytes[..4] != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("missing FTMD header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let d = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != d.saturating_mul(8) {
            return Err(Error::Snapshot(format!(
                "header says {d} values but body has {} bytes",
                body.len()
            )));
        }
        Ok(body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Non-zero dual coordinates owned by one client, keyed by global sample index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DualState {
    pub client_id: u32,
    pub alpha: BTreeMap<usize, f64>,
}

impl DualState {
    pub fn new(client_id: u32) -> Self {
        Self {
            client_id,
            alpha: BTreeMap::new(),
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        self.alpha.get(&i).copied().unwrap_or(0.0)
    }
}

/// One client's round output.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub client_id: u32,
    pub rho: BTreeMap<usize, f64>,
    pub delta_phi: Vec<f64>,
    pub upload_bytes: u64,
}

pub fn upload_bytes(dim: usize) -> u64 {
    8 * dim as u64 + UPLOAD_HEADER_BYTES
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `(1/λD)·Σ coeff_i x_i` over the given coordinates, accumulated in index order.
pub fn feature_combination<'a>(
    coords: impl IntoIterator<Item = (&'a usize, &'a f64)>,
    dataset: &Dataset,
    lambda: f64,
) -> Vec<f64> {
    let scale = 1.0 / (lambda * dataset.len() as f64);
    let mut out = vec![0.0; dataset.dim()];
    for (&i, &a) in coords {
        if a != 0.0 {
            axpy(a * scale, &dataset.point(i).features, &mut out);
        }
    }
    out
}

/// `φ(α)` for the stitched global dual vector.
pub fn phi_from_alpha(states: &[DualState], dataset: &Dataset, lambda: f64) -> Vec<f64> {
    let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
    for s in states {
        merged.extend(s.alpha.iter().map(|(&i, &a)| (i, a)));
    }
    feature_combination(merged.iter(), dataset, lambda)
}

/// Regularised empirical risk `(1/D)Σ f_i(wᵀx_i) + λ·½‖w‖²`.
pub fn primal_objective(w: &[f64], dataset: &Dataset, loss: LossKind, lambda: f64) -> f64 {
    mean_loss(w, dataset, loss) + 0.5 * lambda * norm_sq(w)
}

pub fn mean_loss(w: &[f64], dataset: &Dataset, loss: LossKind) -> f64 {
    let total: f64 = dataset
        .points()
        .iter()
        .map(|p| loss.loss(dot(w, &p.features), p.y()))
        .sum();
    total / dataset.len() as f64
}

pub fn accuracy(w: &[f64], dataset: &Dataset) -> f64 {
    let correct = dataset
        .points()
        .iter()
        .filter(|p| {
            let pred = if dot(w, &p.features) >= 0.0 { 1.0 } else { -1.0 };
            pred == p.y()
        })
        .count();
    correct as f64 / dataset.len() as f64
}

/// `(1/D)Σ −f_i*(−α_i) − λ·½‖φ(α)‖²`.
pub fn dual_objective(states: &[DualState], dataset: &Dataset, loss: LossKind, lambda: f64) -> Result<f64> {
    let d = dataset.len() as f64;
    let mut sep = 0.0;
    for s in states {
        for (&i, &a) in &s.alpha {
            sep += conjugate_term(loss, a, dataset.point(i).y())?;
        }
    }
    // coordinates not stored are zero, and −f*(0) = 0 for both losses
    let phi = phi_from_alpha(states, dataset, lambda);
    Ok(sep / d - 0.5 * lambda * norm_sq(&phi))
}

/// Primal at `w(α) = φ(α)` minus dual at `α`. Non-negative up to rounding.
pub fn duality_gap(states: &[DualState], dataset: &Dataset, loss: LossKind, lambda: f64) -> Result<f64> {
    let phi = phi_from_alpha(states, dataset, lambda);
    Ok(primal_objective(&phi, dataset, loss, lambda) - dual_objective(states, dataset, loss, lambda)?)
}

/// The one-dimensional slice of a client's subproblem along coordinate `i`.
///
/// With `a = α_i + ρ_i` the current coordinate value, `wx = wᵀx_i` under the
/// client's running model and `q = ‖x_i‖²/(λD)`, the objective in the step
/// `Δ` is `−f*(−(a+Δ)) − Δ·wx − ½qΔ²` (up to the factor `1/D`).
#[derive(Debug, Clone, Copy)]
pub struct CoordinateSlice {
    pub loss: LossKind,
    pub a: f64,
    pub y: f64,
    pub wx: f64,
    pub q: f64,
}

impl CoordinateSlice {
    pub fn value(&self, delta: f64) -> Result<f64> {
        Ok(conjugate_term(self.loss, self.a + delta, self.y)? - delta * self.wx - 0.5 * self.q * delta * delta)
    }

    /// Derivative of [`value`](Self::value) in `delta`. For the logistic loss the
    /// point must be strictly inside the feasible interval.
    pub fn derivative(&self, delta: f64) -> f64 {
        match self.loss {
            LossKind::Squared => -(self.a + delta) + self.y - self.wx - self.q * delta,
            LossKind::Logistic => {
                let s = (self.a + delta) * self.y;
                self.y * ((1.0 - s) / s).ln() - self.wx - self.q * delta
            }
        }
    }

    /// The exact maximiser, clamped to the feasible set.
    pub fn argmax(&self) -> f64 {
        match self.loss {
            LossKind::Squared => (self.y - self.wx - self.a) / (1.0 + self.q),
            LossKind::Logistic => self.logistic_argmax(),
        }
    }

    /// Safeguarded Newton on `s = (a+Δ)·y ∈ (0,1)`, where the stationarity
    /// condition `log((1−s)/s) − y·wx − q(s − a·y) = 0` is strictly decreasing.
    fn logistic_argmax(&self) -> f64 {
        let ay = self.a * self.y;
        let g = |s: f64| ((1.0 - s) / s).ln() - self.y * self.wx - self.q * (s - ay);
        let dg = |s: f64| -1.0 / (s * (1.0 - s)) - self.q;

        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut s = ay.clamp(1e-6, 1.0 - 1e-6);
        for _ in 0..NEWTON_MAX_ITERS {
            let gs = g(s);
            if gs == 0.0 {
                break;
            }
            if gs > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let newton = s - gs / dg(s);
            let next = if newton > lo && newton < hi && newton.is_finite() {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let step = (next - s).abs();
            s = next;
            if step < NEWTON_TOL || hi - lo < NEWTON_TOL {
                break;
            }
        }
        s.clamp(0.0, 1.0) * self.y - self.a
    }
}

/// Client subproblem `𝓕_n(ρ; φ, α_[n])`, including the `−(λ/N)·½‖φ‖²`
/// share of the regulariser so that `Σ_n 𝓕_n(0)` is the global dual.
#[allow(clippy::too_many_arguments)]
pub fn local_objective(
    client: &ClientPartition,
    alpha_n: &DualState,
    phi: &[f64],
    rho: &BTreeMap<usize, f64>,
    dataset: &Dataset,
    loss: LossKind,
    lambda: f64,
    n_clients: usize,
) -> Result<f64> {
    let d = dataset.len() as f64;
    let dphi = feature_combination(rho.iter(), dataset, lambda);
    // ⟨(1/D) X_nᵀ φ, ρ⟩ = λ·⟨φ, Δφ⟩
    let linear = lambda * dot(phi, &dphi);
    let quad = 0.5 * lambda * norm_sq(&dphi);
    let mut sep = 0.0;
    for &i in &client.sample_indices {
        let a = alpha_n.get(i) + rho.get(&i).copied().unwrap_or(0.0);
        sep += conjugate_term(loss, a, dataset.point(i).y())?;
    }
    Ok(-(lambda / n_clients as f64) * 0.5 * norm_sq(phi) - linear - quad + sep / d)
}

/// Randomised dual coordinate ascent on the client subproblem.
///
/// Each of `local_passes` epochs visits the client's coordinates in a fresh
/// random order and applies the exact one-dimensional maximiser. The returned
/// `delta_phi` is recomputed from `ρ` rather than from the running model.
pub fn local_solve(
    client: &ClientPartition,
    alpha_n: &DualState,
    phi: &GlobalModel,
    dataset: &Dataset,
    loss: LossKind,
    hyper: &Hyperparams,
    stream: &RngStream,
) -> LocalUpdate {
    let lambda_d = hyper.lambda * dataset.len() as f64;
    let mut w = phi.phi.clone();
    let mut rho: BTreeMap<usize, f64> = client.sample_indices.iter().map(|&i| (i, 0.0)).collect();
    let mut order = client.sample_indices.clone();
    let mut rng = stream.rng();

    for _ in 0..hyper.local_passes {
        order.shuffle(&mut rng);
        for &i in &order {
            let p = dataset.point(i);
            let r = rho.get_mut(&i).expect("index belongs to client");
            let slice = CoordinateSlice {
                loss,
                a: alpha_n.get(i) + *r,
                y: p.y(),
                wx: dot(&w, &p.features),
                q: norm_sq(&p.features) / lambda_d,
            };
            let step = slice.argmax();
            if step != 0.0 {
                *r += step;
                axpy(step / lambda_d, &p.features, &mut w);
            }
        }
    }

    rho.retain(|_, v| *v != 0.0);
    let delta_phi = feature_combination(rho.iter(), dataset, hyper.lambda);
    LocalUpdate {
        client_id: client.client_id,
        rho,
        delta_phi,
        upload_bytes: upload_bytes(dataset.dim()),
    }
}

/// `α_[n] ← α_[n] + ν·ρ_[n]`.
pub fn commit(alpha_n: &DualState, rho: &BTreeMap<usize, f64>, nu: f64) -> DualState {
    let mut next = alpha_n.clone();
    if nu == 0.0 {
        return next;
    }
    for (&i, &r) in rho {
        *next.alpha.entry(i).or_insert(0.0) += nu * r;
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_gaussian, DataPoint, Label};
    use crate::rng::Purpose;
    use rand::Rng;

    fn synth(n: usize, d: usize, seed: u64) -> Dataset {
        synth_gaussian(n, d, 2.0, &RngStream::new(seed, Purpose::Synth)).unwrap()
    }

    fn whole(ds: &Dataset) -> ClientPartition {
        ClientPartition { client_id: 0, sample_indices: (0..ds.len()).collect() }
    }

    #[test]
    fn conjugate_examples() {
        assert_eq!(conjugate_term(LossKind::Squared, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(conjugate_term(LossKind::Squared, 0.0, -1.0).unwrap(), 0.0);
        assert_eq!(conjugate_term(LossKind::Logistic, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(conjugate_term(LossKind::Logistic, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(conjugate_term(LossKind::Logistic, -1.0, -1.0).unwrap(), 0.0);
        let h = conjugate_term(LossKind::Logistic, 0.5, 1.0).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(conjugate_term(LossKind::Logistic, 1.5, 1.0), Err(Error::Domain(_))));
        assert!(matches!(conjugate_term(LossKind::Logistic, 0.5, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn objectives_at_zero() {
        let ds = synth(40, 3, 1);
        let zero = vec![DualState::new(0)];
        for loss in [LossKind::Squared, LossKind::Logistic] {
            assert_eq!(dual_objective(&zero, &ds, loss, 0.1).unwrap(), 0.0);
        }
        let w = vec![0.0; 3];
        assert!((primal_objective(&w, &ds, LossKind::Logistic, 0.1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(primal_objective(&w, &ds, LossKind::Squared, 0.1), 0.5);
        let gap = duality_gap(&zero, &ds, LossKind::Squared, 0.1).unwrap();
        assert_eq!(gap, 0.5);
    }

    #[test]
    fn single_point_dual_by_hand() {
        // D = 1, α = y: −½y² + y² − λ·½‖x y/λ‖²
        let ds = Dataset::new(vec![DataPoint { features: vec![0.5, -2.0], label: Label::Neg }]).unwrap();
        let lambda = 0.3;
        let mut st = DualState::new(0);
        st.alpha.insert(0, -1.0);
        let expected = 0.5 - 0.5 * (0.25 + 4.0) / lambda;
        let got = dual_objective(&[st], &ds, LossKind::Squared, lambda).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn regulariser_quadruples_when_phi_doubles() {
        let ds = synth(20, 2, 3);
        let mut st = DualState::new(0);
        for i in 0..20 {
            st.alpha.insert(i, 0.1 * ds.point(i).y());
        }
        let reg = |s: &DualState| 0.5 * 0.2 * norm_sq(&phi_from_alpha(std::slice::from_ref(s), &ds, 0.2));
        let doubled = commit(&st, &st.alpha, 1.0);
        assert!((reg(&doubled) - 4.0 * reg(&st)).abs() < 1e-12);
    }

    #[test]
    fn logistic_derivative_matches_finite_difference() {
        let mut rng = RngStream::new(99, Purpose::Custom(1)).rng();
        let h = 1e-6;
        for _ in 0..100 {
            let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let slice = CoordinateSlice {
                loss: LossKind::Logistic,
                a: y * rng.random_range(0.05..0.95),
                y,
                wx: rng.random_range(-3.0..3.0),
                q: rng.random_range(0.0..5.0),
            };
            // a step keeping s well inside (0, 1)
            let s_target: f64 = rng.random_range(0.01..0.99);
            let delta = s_target * y - slice.a;
            let fd = (slice.value(delta + h).unwrap() - slice.value(delta - h).unwrap()) / (2.0 * h);
            let an = slice.derivative(delta);
            let rel = (fd - an).abs() / an.abs().max(1e-3);
            assert!(rel < 1e-4, "fd={fd} analytic={an}");
        }
    }

    #[test]
    fn logistic_argmax_is_stationary_and_feasible() {
        for (a, y, wx, q) in [(0.0, 1.0, 0.0, 1.0), (0.3, 1.0, 5.0, 0.01), (-0.9, -1.0, -4.0, 0.0), (0.0, -1.0, 30.0, 2.0)] {
            let slice = CoordinateSlice { loss: LossKind::Logistic, a, y, wx, q };
            let step = slice.argmax();
            let s = (a + step) * y;
            assert!((0.0..=1.0).contains(&s));
            if s > 1e-9 && s < 1.0 - 1e-9 {
                assert!(slice.derivative(step).abs() < 1e-6);
            }
            assert!(slice.value(step).unwrap() >= slice.value(0.0).unwrap() - 1e-12);
        }
    }

    #[test]
    fn zero_feature_row() {
        let slice = CoordinateSlice { loss: LossKind::Squared, a: 0.2, y: 1.0, wx: 0.0, q: 0.0 };
        assert!((slice.a + slice.argmax() - 1.0).abs() < 1e-15);
        let slice = CoordinateSlice { loss: LossKind::Logistic, a: 0.2, y: 1.0, wx: 0.0, q: 0.0 };
        // maximiser of the binary entropy
        assert!((slice.a + slice.argmax() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn local_solve_ascends_and_matches_delta_phi() {
        let ds = synth(60, 4, 5);
        let parts = crate::data::partition(&ds, 3, &crate::data::PartitionScheme { kind: crate::data::PartitionKind::Iid, seed: 1 }).unwrap();
        let hyper = Hyperparams { lambda: 0.05, local_passes: 3, seed: 0 };
        for loss in [LossKind::Squared, LossKind::Logistic] {
            let phi = GlobalModel { phi: vec![0.1, -0.2, 0.0, 0.3], round: 0 };
            let mut alpha = DualState::new(1);
            for &i in &parts[1].sample_indices {
                alpha.alpha.insert(i, 0.25 * ds.point(i).y());
            }
            let upd = local_solve(&parts[1], &alpha, &phi, &ds, loss, &hyper, &RngStream::new(3, Purpose::LocalSolve));
            let f0 = local_objective(&parts[1], &alpha, &phi.phi, &BTreeMap::new(), &ds, loss, hyper.lambda, 3).unwrap();
            let f1 = local_objective(&parts[1], &alpha, &phi.phi, &upd.rho, &ds, loss, hyper.lambda, 3).unwrap();
            assert!(f1 >= f0, "{loss:?}: {f1} < {f0}");
            let direct = feature_combination(upd.rho.iter(), &ds, hyper.lambda);
            for (a, b) in direct.iter().zip(&upd.delta_phi) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
            }
            assert_eq!(upd.upload_bytes, 8 * 4 + 64);
        }
    }

    #[test]
    fn local_solve_at_optimum_is_stationary() {
        let ds = synth(30, 3, 7);
        let part = whole(&ds);
        let hyper = Hyperparams { lambda: 0.1, local_passes: 200, seed: 0 };
        let s = RngStream::new(1, Purpose::LocalSolve);
        let first = local_solve(&part, &DualState::new(0), &GlobalModel::zeros(3), &ds, LossKind::Squared, &hyper, &s);
        let alpha = commit(&DualState::new(0), &first.rho, 1.0);
        let phi = GlobalModel { phi: phi_from_alpha(std::slice::from_ref(&alpha), &ds, 0.1), round: 1 };
        let hyper = Hyperparams { local_passes: 2, ..hyper };
        let again = local_solve(&part, &alpha, &phi, &ds, LossKind::Squared, &hyper, &s);
        assert!(norm_sq(&again.delta_phi).sqrt() <= 1e-8);
    }

    #[test]
    fn commit_arithmetic() {
        let mut a = DualState::new(0);
        a.alpha.insert(4, 0.2);
        let rho: BTreeMap<usize, f64> = [(4, 0.4)].into_iter().collect();
        assert_eq!(commit(&a, &rho, 0.0), a);
        assert!((commit(&a, &rho, 0.5).get(4) - 0.4).abs() < 1e-15);
        assert!((commit(&a, &rho, 1.0).get(4) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn snapshot_round_trip() {
        let m = GlobalModel { phi: vec![1.5, -0.25, f64::MIN_POSITIVE], round: 3 };
        let bytes = m.to_snapshot_bytes();
        assert_eq!(&bytes[..4], b"FTMD");
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(GlobalModel::from_snapshot_bytes(&bytes).unwrap(), m.phi);
        assert!(GlobalModel::from_snapshot_bytes(&bytes[..20]).is_err());
    }
}
