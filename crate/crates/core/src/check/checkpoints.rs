use std::collections::BTreeMap;

use super::CheckResult;
use crate::sim::{DecisionRecord, Trace};
use crate::types::{BlockId, NodeId, Slot};

/// In every interval `[t1, t2]` at most `ceil((1 + t2 - t1) / T_checkpoint)`
/// non-⊥ checkpoints are decided, per node. Equivalent to consecutive
/// non-⊥ decisions of a node being at least `T_checkpoint` slots apart.
pub fn check_gap(decisions: &[DecisionRecord], t_checkpoint: u64) -> CheckResult {
    let mut per_node: BTreeMap<NodeId, Vec<Slot>> = BTreeMap::new();
    for d in decisions.iter().filter(|d| d.block.is_some()) {
        per_node.entry(d.node).or_default().push(d.slot);
    }
    let mut worst: Option<(Slot, String)> = None;
    for (node, mut slots) in per_node {
        slots.sort_unstable();
        for w in slots.windows(2) {
            if w[1] - w[0] < t_checkpoint && worst.as_ref().is_none_or(|(s, _)| w[1] < *s) {
                worst = Some((
                    w[1],
                    format!(
                        "node {node} decided checkpoints at slots {} and {}, less than {t_checkpoint} apart",
                        w[0], w[1]
                    ),
                ));
            }
        }
    }
    match worst {
        Some((slot, detail)) => CheckResult::fail("gap".into(), slot, detail),
        None => CheckResult::pass("gap".into()),
    }
}

/// Non-⊥ checkpoints with the first slot any honest node decided them.
pub fn first_checkpoints(trace: &Trace) -> Vec<(u64, BlockId, Slot)> {
    let mut first: BTreeMap<(u64, BlockId), Slot> = BTreeMap::new();
    for d in &trace.decisions {
        if let Some(b) = d.block {
            first
                .entry((d.iteration, b))
                .and_modify(|s| *s = (*s).min(d.slot))
                .or_insert(d.slot);
        }
    }
    let mut out: Vec<_> = first.into_iter().map(|((it, b), s)| (it, b, s)).collect();
    out.sort_by_key(|&(it, _, s)| (s, it));
    out
}

/// Every block first checkpointed at a slot `t` after healing was on some
/// honest node's checkpoint-respecting longest chain during `[t - T_recent, t]`.
pub fn check_recency(trace: &Trace, t_recent: u64) -> CheckResult {
    let Some(heal) = trace.scenario.healing() else {
        let mut ok = CheckResult::pass("recency".into());
        ok.detail = "no healing slot; vacuous".into();
        return ok;
    };
    let idx = trace.index();
    let r = trace.recorded_nodes().len();
    for (it, block, t) in first_checkpoints(trace) {
        if t <= heal {
            continue;
        }
        let Some(&b) = idx.index.get(&block) else {
            return CheckResult::fail(
                "recency".into(),
                t,
                format!("checkpoint {block} of iteration {it} was never produced"),
            );
        };
        let from = t.saturating_sub(t_recent);
        let seen = (from..=t).any(|s| {
            (0..r).any(|j| {
                trace
                    .rows
                    .get(s as usize * r + j)
                    .is_some_and(|row| idx.is_ancestor_or_self(trace, b, row.tip))
            })
        });
        if !seen {
            return CheckResult::fail(
                "recency".into(),
                t,
                format!(
                    "checkpoint {block} of iteration {it} decided at slot {t} was on no honest chain during [{from}, {t}]"
                ),
            );
        }
    }
    CheckResult::pass("recency".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dec(node: u32, slot: Slot, bot: bool) -> DecisionRecord {
        DecisionRecord {
            slot,
            node: NodeId(node),
            iteration: slot,
            block: (!bot).then_some(BlockId::ZERO),
        }
    }

    /// Count bound over every interval with endpoints at decisions.
    fn gap_bound_holds(slots: &[Slot], t: u64) -> bool {
        let mut s = slots.to_vec();
        s.sort_unstable();
        for i in 0..s.len() {
            for j in i..s.len() {
                let count = (j - i + 1) as u64;
                if count > (1 + s[j] - s[i]).div_ceil(t) {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn one_slot_short_is_a_violation() {
        let d = [dec(0, 100, false), dec(0, 159, false)];
        let r = check_gap(&d, 60);
        assert!(!r.passed);
        assert_eq!(r.first_violation_slot, Some(159));
    }

    #[test]
    fn exactly_t_checkpoint_apart_passes() {
        let d = [dec(0, 100, false), dec(0, 160, false), dec(1, 101, false)];
        assert!(check_gap(&d, 60).passed);
    }

    #[test]
    fn bottom_decisions_do_not_count() {
        let d = [dec(0, 100, false), dec(0, 110, true), dec(0, 160, false)];
        assert!(check_gap(&d, 60).passed);
        assert!(check_gap(&[], 60).passed);
    }

    proptest! {
        #[test]
        fn consecutive_scan_matches_interval_bound(
            slots in proptest::collection::vec(0u64..400, 0..12),
            t in 1u64..80,
        ) {
            let d: Vec<_> = slots.iter().map(|&s| dec(0, s, false)).collect();
            prop_assert_eq!(check_gap(&d, t).passed, gap_bound_holds(&slots, t));
        }
    }
}
