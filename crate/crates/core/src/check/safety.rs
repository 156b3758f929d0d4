use super::CheckResult;
use crate::adjudication::LedgerKind;
use crate::sim::{LedgerRow, Trace};

fn ledger_tip(r: &LedgerRow, kind: LedgerKind) -> u32 {
    match kind {
        LedgerKind::Da => r.da,
        _ => r.acc,
    }
}

/// Every ledger an awake honest node ever output is a prefix of every other.
///
/// Keeps the deepest ledger seen so far: a set of chains is pairwise
/// prefix-consistent exactly when each one is a prefix of the deepest.
pub fn check_safety(trace: &Trace, kind: LedgerKind) -> CheckResult {
    let name = format!("safety_{}", kind_name(kind));
    if kind == LedgerKind::Bft {
        return check_bft_safety(trace, name);
    }
    let idx = trace.index();
    let mut deepest: Option<(u32, &LedgerRow)> = None;
    for r in trace.rows.iter().filter(|r| r.awake) {
        let tip = ledger_tip(r, kind);
        match deepest {
            None => deepest = Some((tip, r)),
            Some((m, mr)) => {
                if idx.is_ancestor_or_self(trace, tip, m) {
                    continue;
                }
                if idx.is_ancestor_or_self(trace, m, tip) {
                    deepest = Some((tip, r));
                    continue;
                }
                return CheckResult::fail(
                    name,
                    r.slot,
                    format!(
                        "node {} at slot {} ends at block {} (height {}), node {} at slot {} ends at block {} (height {})",
                        r.node,
                        r.slot,
                        idx.id(trace, tip),
                        idx.height(tip),
                        mr.node,
                        mr.slot,
                        idx.id(trace, m),
                        idx.height(m)
                    ),
                );
            }
        }
    }
    CheckResult::pass(name)
}

fn check_bft_safety(trace: &Trace, name: String) -> CheckResult {
    let Some(longest) = trace.bft_logs.values().max_by_key(|l| l.len()) else {
        return CheckResult::pass(name);
    };
    let mut first: Option<(u64, String)> = None;
    for (node, log) in &trace.bft_logs {
        let Some(pos) = log.iter().zip(longest).position(|(a, b)| a != b) else {
            continue;
        };
        // First slot at which this node's log reached the diverging entry.
        let slot = trace
            .rows
            .iter()
            .find(|r| r.node == *node && r.bft_len as usize > pos)
            .map(|r| r.slot)
            .unwrap_or(trace.scenario.horizon);
        if first.as_ref().is_none_or(|(s, _)| slot < *s) {
            first = Some((
                slot,
                format!("node {node} LOG_bft diverges from the longest log at position {pos}"),
            ));
        }
    }
    match first {
        Some((slot, detail)) => CheckResult::fail(name, slot, detail),
        None => CheckResult::pass(name),
    }
}

/// `LOG_acc` is a prefix of `LOG_da` for every honest node at every slot.
pub fn check_prefix(trace: &Trace) -> CheckResult {
    let idx = trace.index();
    for r in &trace.rows {
        if !idx.is_ancestor_or_self(trace, r.acc, r.da) {
            return CheckResult::fail(
                "prefix".into(),
                r.slot,
                format!(
                    "node {} at slot {}: LOG_acc ends at {} which is not on LOG_da ending at {}",
                    r.node,
                    r.slot,
                    idx.id(trace, r.acc),
                    idx.id(trace, r.da)
                ),
            );
        }
    }
    CheckResult::pass("prefix".into())
}

pub(crate) fn kind_name(kind: LedgerKind) -> &'static str {
    match kind {
        LedgerKind::Da => "da",
        LedgerKind::Acc => "acc",
        LedgerKind::Bft => "bft",
    }
}
