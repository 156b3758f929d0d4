use std::collections::HashMap;

use super::safety::kind_name;
use super::CheckResult;
use crate::adjudication::LedgerKind;
use crate::sim::Trace;
use crate::types::{Slot, TxId};

/// Slot at which each transaction was first handed to an honest node.
pub(crate) fn first_given(trace: &Trace) -> Vec<(TxId, Slot)> {
    let mut first: HashMap<TxId, Slot> = HashMap::new();
    for t in &trace.txs {
        first.entry(t.tx).and_modify(|s| *s = (*s).min(t.slot)).or_insert(t.slot);
    }
    let mut out: Vec<_> = first.into_iter().collect();
    out.sort_by_key(|&(tx, s)| (s, tx));
    out
}

/// Blocks carrying each transaction, as trace indices.
pub(crate) fn tx_blocks(trace: &Trace) -> HashMap<TxId, Vec<u32>> {
    let mut out: HashMap<TxId, Vec<u32>> = HashMap::new();
    for (i, b) in trace.blocks.iter().enumerate() {
        for tx in &b.payload {
            out.entry(*tx).or_default().push(i as u32);
        }
    }
    out
}

/// Every transaction given to an awake honest node at `t` is in the ledger
/// of every awake honest node at every slot from `max(t, after) + t_confirm`
/// on. Transactions whose deadline falls at or past the horizon are skipped.
///
/// Containment is tested exactly at each node's first awake slot after the
/// deadline; later slots only need the ledger to stay at least as deep as
/// the block found there, which implies containment whenever the ledger is
/// safe.
pub fn check_liveness(trace: &Trace, kind: LedgerKind, t_confirm: u64, after: Slot) -> CheckResult {
    let name = format!("liveness_{}", kind_name(kind));
    let horizon = trace.scenario.horizon;
    if kind == LedgerKind::Bft {
        for l in &trace.bft_latencies {
            let deadline = l.submitted.max(after) + t_confirm;
            if deadline >= horizon {
                continue;
            }
            if l.finalized_all.is_none_or(|f| f > deadline) {
                return CheckResult::fail(
                    name,
                    deadline,
                    format!(
                        "payload submitted at slot {} not in every LOG_bft by slot {deadline}",
                        l.submitted
                    ),
                );
            }
        }
        return CheckResult::pass(name);
    }

    let idx = trace.index();
    let nodes = trace.recorded_nodes();
    let r = nodes.len();
    let slots = trace.rows.len() / r.max(1);
    let tip = |slot: usize, j: usize| {
        let row = &trace.rows[slot * r + j];
        match kind {
            LedgerKind::Da => row.da,
            _ => row.acc,
        }
    };
    // Per node: next awake slot at or after s, and the minimum ledger height
    // over awake slots from s on.
    let mut next_awake = vec![vec![usize::MAX; slots + 1]; r];
    let mut suffix_min = vec![vec![u64::MAX; slots + 1]; r];
    for j in 0..r {
        for s in (0..slots).rev() {
            let row = &trace.rows[s * r + j];
            next_awake[j][s] = if row.awake { s } else { next_awake[j][s + 1] };
            let h = if row.awake { idx.height(tip(s, j)) } else { u64::MAX };
            suffix_min[j][s] = h.min(suffix_min[j][s + 1]);
        }
    }
    let carriers = tx_blocks(trace);
    let mut worst: Option<(Slot, String)> = None;
    let mut note = |slot: Slot, detail: String| {
        if worst.as_ref().is_none_or(|(s, _)| slot < *s) {
            worst = Some((slot, detail));
        }
    };
    let mut checked = 0usize;
    for (tx, given) in first_given(trace) {
        let deadline = given.max(after) + t_confirm;
        if deadline >= horizon || deadline as usize >= slots {
            continue;
        }
        checked += 1;
        let empty = Vec::new();
        let holders = carriers.get(&tx).unwrap_or(&empty);
        for j in 0..r {
            let s = next_awake[j][deadline as usize];
            if s == usize::MAX {
                continue;
            }
            let ledger = tip(s, j);
            let Some(&b) = holders.iter().find(|&&b| idx.is_ancestor_or_self(trace, b, ledger)) else {
                note(
                    s as Slot,
                    format!("{tx} given at slot {given} missing from node {} at slot {s}", nodes[j]),
                );
                continue;
            };
            let need = idx.height(b);
            if suffix_min[j][s] < need {
                let drop = (s..slots)
                    .find(|&u| trace.rows[u * r + j].awake && idx.height(tip(u, j)) < need)
                    .expect("suffix minimum is attained");
                note(
                    drop as Slot,
                    format!(
                        "{tx} given at slot {given} dropped from node {} at slot {drop}",
                        nodes[j]
                    ),
                );
            }
        }
    }
    match worst {
        Some((slot, detail)) => CheckResult::fail(name, slot, detail),
        None => {
            let mut ok = CheckResult::pass(name);
            ok.detail = format!("{checked} transactions checked with T_confirm = {t_confirm}");
            ok
        }
    }
}
