//! Trace checkers for the security properties, trace analyzers and metrics.

mod checkpoints;
mod growth;
mod liveness;
mod metrics;
mod params;
mod safety;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use checkpoints::{check_gap, check_recency, first_checkpoints};
pub use growth::{
    honest_winners, inter_checkpoint_intervals, opportunities_from_winners, pivots, winners_at, GrowthAnalysis,
};
pub use liveness::check_liveness;
pub use metrics::{inclusion_slots, measure_metrics, IterationVotes, Metrics};
pub use params::{
    gasper_latency, gasper_votes_per_slot, growth_inequality, latency_model, p_bound, validate_params,
    votes_per_checkpoint_model, worked_t_checkpoint_bound, ParamCheck,
};
pub use safety::{check_prefix, check_safety};

use crate::adjudication::LedgerKind;
use crate::sim::{Protocol, Strategy, Trace};
use crate::types::Slot;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Whether the scenario's assumptions promise the property.
    pub expected: bool,
    pub first_violation_slot: Option<Slot>,
    pub detail: String,
}

impl CheckResult {
    pub fn pass(name: String) -> Self {
        CheckResult {
            name,
            passed: true,
            expected: true,
            first_violation_slot: None,
            detail: String::new(),
        }
    }

    pub fn fail(name: String, slot: Slot, detail: String) -> Self {
        CheckResult {
            name,
            passed: false,
            expected: true,
            first_violation_slot: Some(slot),
            detail,
        }
    }

    /// Failed although the scenario promises the property.
    pub fn is_unexpected_failure(&self) -> bool {
        self.expected && !self.passed
    }

    fn expect(mut self, expected: bool) -> Self {
        self.expected = expected;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub safety_da: CheckResult,
    pub safety_acc: CheckResult,
    pub safety_bft: CheckResult,
    pub liveness_da: CheckResult,
    pub liveness_acc: CheckResult,
    pub prefix: CheckResult,
    pub gap: CheckResult,
    pub recency: CheckResult,
    pub t_confirm_da: u64,
    pub t_confirm_acc: u64,
    /// Longest observed submission-to-finalization time of a BFT payload
    /// submitted after healing.
    pub t_confirm_bft: u64,
    pub t_recent: u64,
    pub params: ParamCheck,
}

impl SecurityReport {
    pub fn checks(&self) -> [&CheckResult; 8] {
        [
            &self.safety_da,
            &self.safety_acc,
            &self.safety_bft,
            &self.liveness_da,
            &self.liveness_acc,
            &self.prefix,
            &self.gap,
            &self.recency,
        ]
    }

    /// True when every property the scenario promises holds.
    pub fn ok(&self) -> bool {
        self.checks().iter().all(|c| !c.is_unexpected_failure())
    }

    pub fn first_violation(&self) -> Option<&CheckResult> {
        self.checks()
            .into_iter()
            .filter(|c| !c.passed)
            .min_by_key(|c| c.first_violation_slot)
    }
}

/// Longest BFT confirmation time among payloads submitted at or after
/// `from`, falling back to four epochs when nothing was confirmed.
///
/// Payloads finalized only after every honest node had decided their
/// iteration are left out: they sat in a paused engine and no longer
/// mattered to the gadget.
pub fn measured_t_bft(trace: &Trace, from: Slot) -> u64 {
    let nodes = trace.recorded_nodes().len();
    let mut decided: HashMap<u64, (usize, Slot)> = HashMap::new();
    for d in &trace.decisions {
        let e = decided.entry(d.iteration).or_insert((0, 0));
        e.0 += 1;
        e.1 = e.1.max(d.slot);
    }
    let all_decided = |it: u64| decided.get(&it).filter(|(c, _)| *c == nodes).map(|(_, s)| *s);
    trace
        .bft_latencies
        .iter()
        .filter(|l| l.submitted >= from)
        .filter_map(|l| {
            let f = l.finalized_all?;
            match all_decided(l.iteration) {
                Some(d) if f > d => None,
                _ => Some(f - l.submitted),
            }
        })
        .max()
        .unwrap_or(4 * trace.scenario.bft_config().epoch_len)
}

/// `Δ + T_timeout + T_confirm_bft`.
pub fn default_t_recent(trace: &Trace) -> u64 {
    let sc = &trace.scenario;
    sc.delta + sc.t_timeout + measured_t_bft(trace, sc.healing().unwrap_or(0))
}

/// `ceil(3 (k + 1) / g) + 2Δ` for measured chain growth `g` blocks per slot,
/// or the horizon when the chain did not grow.
pub fn default_t_confirm_da(trace: &Trace) -> u64 {
    let sc = &trace.scenario;
    let nodes = trace.recorded_nodes().len();
    if sc.horizon == 0 || nodes == 0 || trace.rows.is_empty() {
        return sc.horizon;
    }
    let idx = trace.index();
    let last = trace.rows_at(sc.horizon - 1);
    let g = last.iter().map(|r| idx.height(r.tip) as f64).sum::<f64>() / last.len() as f64 / sc.horizon as f64;
    if g <= 0.0 {
        return sc.horizon;
    }
    let k = sc.k.unwrap_or(sc.sigma) as f64;
    (3.0 * (k + 1.0) / g).ceil() as u64 + 2 * sc.delta
}

/// `4 (Δ + T_timeout + T_confirm_bft + T_checkpoint)`.
pub fn default_t_confirm_acc(trace: &Trace) -> u64 {
    let sc = &trace.scenario;
    4 * (sc.delta + sc.t_timeout + measured_t_bft(trace, sc.healing().unwrap_or(0)) + sc.t_checkpoint)
}

/// Runs every checker with the scenario's confirmation times, or the
/// measured defaults where the scenario leaves them open.
pub fn check_all(trace: &Trace) -> SecurityReport {
    let sc = &trace.scenario;
    let heal = sc.healing();
    let t_bft = measured_t_bft(trace, heal.unwrap_or(0));
    let t_recent = sc.delta + sc.t_timeout + t_bft;
    let t_da = sc.t_confirm_da.unwrap_or_else(|| default_t_confirm_da(trace));
    let t_acc = sc.t_confirm_acc.unwrap_or_else(|| default_t_confirm_acc(trace));

    let attack = matches!(sc.strategy, Strategy::Equivocate { .. } | Strategy::SplitWorld { .. });
    let gadget = sc.protocol == Protocol::Full;
    let synchronous = sc.gst == 0;

    SecurityReport {
        safety_da: check_safety(trace, LedgerKind::Da).expect(!attack && synchronous),
        safety_acc: check_safety(trace, LedgerKind::Acc).expect(!attack),
        safety_bft: check_safety(trace, LedgerKind::Bft).expect(!attack),
        liveness_da: check_liveness(trace, LedgerKind::Da, t_da, sc.gst).expect(!attack && synchronous),
        liveness_acc: check_liveness(trace, LedgerKind::Acc, t_acc, heal.unwrap_or(sc.horizon))
            .expect(!attack && gadget && heal.is_some()),
        prefix: check_prefix(trace),
        gap: check_gap(&trace.decisions, sc.t_checkpoint),
        recency: check_recency(trace, t_recent).expect(!attack),
        t_confirm_da: t_da,
        t_confirm_acc: t_acc,
        t_confirm_bft: t_bft,
        t_recent,
        params: validate_params(sc, t_recent),
    }
}
