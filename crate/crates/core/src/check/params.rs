//! Configuration validation and the closed-form latency and vote models.

use serde::{Deserialize, Serialize};

use crate::sim::Scenario;

/// Evaluation of the growth inequality
/// `(1 + ε) β < (1 - ε)(1 - 2pnΔ) α - (T_recent + 2Δ + 1) / T_checkpoint`
/// with `α = p (n - f)` and `β = p f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub alpha: f64,
    pub beta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub t_recent: u64,
    pub holds: bool,
    /// `(n - 2f) / (2Δ n (n - f))`; infinite when `Δ = 0`.
    pub p_bound: f64,
    pub warnings: Vec<String>,
}

/// Largest lottery probability for which the longest chain recovers after healing.
pub fn p_bound(n: u32, f: u32, delta: u64) -> f64 {
    let (n, f, d) = (n as f64, f as f64, delta as f64);
    if d == 0.0 {
        return f64::INFINITY;
    }
    (n - 2.0 * f) / (2.0 * d * n * (n - f))
}

/// Left- and right-hand side of the growth inequality.
pub fn growth_inequality(n: u32, f: u32, p: f64, delta: u64, epsilon: f64, t_recent: u64, t_checkpoint: u64) -> (f64, f64) {
    let (nf, ff, d) = (n as f64, f as f64, delta as f64);
    let alpha = p * (nf - ff);
    let beta = p * ff;
    let lhs = (1.0 + epsilon) * beta;
    let rhs = (1.0 - epsilon) * (1.0 - 2.0 * p * nf * d) * alpha
        - (t_recent as f64 + 2.0 * d + 1.0) / t_checkpoint as f64;
    (lhs, rhs)
}

/// `100 (2 T_timeout + 3Δ) Δ`, the closed-form checkpoint interval for
/// `f = n/4`, `ε = 0.1` and `p = 0.8 / (3nΔ)`.
pub fn worked_t_checkpoint_bound(t_timeout: f64, delta: f64) -> f64 {
    100.0 * (2.0 * t_timeout + 3.0 * delta) * delta
}

/// Warns when the scenario falls outside the regime where liveness after
/// healing is guaranteed.
pub fn validate_params(sc: &Scenario, t_recent: u64) -> ParamCheck {
    let p = sc.p.unwrap_or(0.0);
    let (lhs, rhs) = growth_inequality(sc.n, sc.f, p, sc.delta, sc.epsilon, t_recent, sc.t_checkpoint);
    let alpha = p * (sc.n - sc.f.min(sc.n)) as f64;
    let beta = p * sc.f as f64;
    let bound = p_bound(sc.n, sc.f, sc.delta);
    let holds = alpha > 0.0 && lhs < rhs;
    let mut warnings = Vec::new();
    if p <= 0.0 {
        warnings.push("p = 0: no blocks are ever produced".to_string());
    }
    if !holds {
        warnings.push(format!(
            "growth inequality violated ({lhs:.3e} >= {rhs:.3e}); liveness after healing not guaranteed"
        ));
    }
    if p >= bound {
        warnings.push(format!("p = {p:.3e} is not below (n - 2f) / (2Δn(n - f)) = {bound:.3e}"));
    }
    ParamCheck {
        alpha,
        beta,
        lhs,
        rhs,
        t_recent,
        holds,
        p_bound: bound,
        warnings,
    }
}

/// Mean time for a transaction to enter the accountable ledger: `k_cp`
/// blocks of depth plus half a checkpoint interval.
pub fn latency_model(k_cp: u64, block_interval: f64, t_checkpoint: f64) -> f64 {
    k_cp as f64 * block_interval + t_checkpoint / 2.0
}

/// Gasper finality latency: half an epoch of waiting plus two epochs of
/// `slots_per_epoch` slots.
pub fn gasper_latency(slots_per_epoch: u64, slot_seconds: f64) -> f64 {
    2.5 * slots_per_epoch as f64 * slot_seconds
}

/// Checkpoint-related votes per checkpoint interval under ideal operation.
pub fn votes_per_checkpoint_model(n: u32) -> u64 {
    5 * n as u64
}

/// Gasper votes per slot with committees of `n / slots_per_epoch` members.
pub fn gasper_votes_per_slot(n: u32, slots_per_epoch: u64) -> f64 {
    2.0 * n as f64 / slots_per_epoch as f64
}
