//! Convergence opportunities, inter-checkpoint intervals and
//! checkpoint-strong pivots, all evaluated against ground truth.

use super::checkpoints::first_checkpoints;
use crate::chain::leader_lottery;
use crate::crypto::RandomTape;
use crate::sim::Trace;
use crate::types::{NodeId, Slot};

/// Per-slot ground truth needed by the growth analyses.
pub struct GrowthAnalysis {
    pub delta: u64,
    /// Convergence opportunity at each slot.
    pub opportunity: Vec<bool>,
    /// Whether each slot lies in the union of inter-checkpoint intervals.
    pub in_i: Vec<bool>,
    /// Adversarial blocks produced at each slot.
    pub adversarial_blocks: Vec<u64>,
}

/// Awake honest lottery winners per slot. Slot 0 belongs to genesis.
pub fn honest_winners(trace: &Trace) -> Vec<u32> {
    let sc = &trace.scenario;
    let tape = RandomTape::new(sc.seed);
    let p = sc.p.unwrap_or(0.0);
    let awake = sc.awake_table();
    let honest = sc.honest_nodes();
    (0..sc.horizon)
        .map(|t| {
            if t == 0 {
                return 0;
            }
            honest
                .iter()
                .filter(|i| awake[t as usize][i.index()] && leader_lottery(**i, t, p, &tape))
                .count() as u32
        })
        .collect()
}

/// Slots with exactly one awake honest winner and no awake honest winner
/// within `delta` slots on either side.
pub fn opportunities_from_winners(winners: &[u32], delta: u64) -> Vec<bool> {
    let t_max = winners.len();
    let d = delta as usize;
    // Prefix sums of winner counts.
    let mut pre = vec![0u64; t_max + 1];
    for (t, w) in winners.iter().enumerate() {
        pre[t + 1] = pre[t] + *w as u64;
    }
    (0..t_max)
        .map(|t| {
            let lo = t.saturating_sub(d);
            let hi = (t + d + 1).min(t_max);
            winners[t] == 1 && pre[hi] - pre[lo] == 1
        })
        .collect()
}

/// Inter-checkpoint intervals as inclusive slot ranges within the horizon:
/// `[heal + Δ, t*_1 - T_recent - Δ]`, then `[t*_l + Δ, t*_{l+1} - T_recent - Δ]`,
/// and finally `[t*_L + Δ, horizon)`. `t*_l` are the first decision slots of
/// the non-⊥ checkpoints after healing. Empty when the network never heals.
pub fn inter_checkpoint_intervals(trace: &Trace, t_recent: u64) -> Vec<(Slot, Slot)> {
    let sc = &trace.scenario;
    let Some(heal) = sc.healing() else {
        return Vec::new();
    };
    if sc.horizon == 0 {
        return Vec::new();
    }
    let last = sc.horizon - 1;
    let mut starts = vec![heal];
    starts.extend(first_checkpoints(trace).into_iter().map(|(_, _, t)| t).filter(|t| *t >= heal));
    starts.dedup();
    let mut out = Vec::new();
    for (i, &s) in starts.iter().enumerate() {
        let from = s + sc.delta;
        let to = match starts.get(i + 1) {
            Some(&next) => match next.checked_sub(t_recent + sc.delta) {
                Some(t) => t,
                None => continue,
            },
            None => last,
        };
        let to = to.min(last);
        if from <= to {
            out.push((from, to));
        }
    }
    out
}

impl GrowthAnalysis {
    pub fn new(trace: &Trace, t_recent: u64) -> Self {
        let sc = &trace.scenario;
        let horizon = sc.horizon as usize;
        let opportunity = opportunities_from_winners(&honest_winners(trace), sc.delta);
        let mut in_i = vec![false; horizon];
        for (a, b) in inter_checkpoint_intervals(trace, t_recent) {
            for s in a..=b {
                in_i[s as usize] = true;
            }
        }
        let mut adversarial_blocks = vec![0u64; horizon];
        for b in trace.blocks.iter().skip(1) {
            if sc.is_adversarial(b.producer) && (b.slot as usize) < horizon {
                adversarial_blocks[b.slot as usize] += 1;
            }
        }
        GrowthAnalysis {
            delta: sc.delta,
            opportunity,
            in_i,
            adversarial_blocks,
        }
    }

    /// Convergence opportunities in the inclusive range, optionally only
    /// those inside the inter-checkpoint intervals.
    pub fn count(&self, from: Slot, to: Slot, restrict_to_i: bool) -> u64 {
        let end = (to as usize + 1).min(self.opportunity.len());
        (from as usize..end)
            .filter(|&t| self.opportunity[t] && (!restrict_to_i || self.in_i[t]))
            .count() as u64
    }

    pub fn adversarial_in(&self, from: Slot, to: Slot) -> u64 {
        let end = (to as usize + 1).min(self.adversarial_blocks.len());
        self.adversarial_blocks[from as usize..end].iter().sum()
    }

    /// Slots `t` such that every interval `[t0, t1]` containing `t` has
    /// `A([t0, t1]) = 0` or `A([t0, t1]) < C(I ∩ [t0 + Δ, t1 - Δ])`.
    pub fn pivots(&self) -> Vec<Slot> {
        pivots(&self.adversarial_blocks, &self.opportunity, &self.in_i, self.delta)
    }
}

/// Pivot slots from per-slot adversarial block counts and opportunity flags.
/// For each left end the farthest bad right end is found; all slots between
/// them are covered by a bad interval.
pub fn pivots(adversarial: &[u64], opportunity: &[bool], in_i: &[bool], delta: u64) -> Vec<Slot> {
    let t_max = adversarial.len();
    let mut a_pre = vec![0u64; t_max + 1];
    let mut c_pre = vec![0u64; t_max + 1];
    for t in 0..t_max {
        a_pre[t + 1] = a_pre[t] + adversarial[t];
        c_pre[t + 1] = c_pre[t] + (opportunity[t] && in_i[t]) as u64;
    }
    let d = delta as usize;
    let mut cover = vec![0i64; t_max + 1];
    for t0 in 0..t_max {
        let mut far: Option<usize> = None;
        for t1 in t0..t_max {
            let a = a_pre[t1 + 1] - a_pre[t0];
            if a == 0 {
                continue;
            }
            let (lo, hi) = (t0 + d, t1 as i64 - d as i64);
            let c = if hi >= lo as i64 {
                c_pre[hi as usize + 1] - c_pre[lo]
            } else {
                0
            };
            if a >= c {
                far = Some(t1);
            }
        }
        if let Some(t1) = far {
            cover[t0] += 1;
            cover[t1 + 1] -= 1;
        }
    }
    let mut out = Vec::new();
    let mut run = 0i64;
    for (t, c) in cover.iter().take(t_max).enumerate() {
        run += c;
        if run == 0 {
            out.push(t as Slot);
        }
    }
    out
}

/// Nodes whose lottery ticket wins `slot`.
pub fn winners_at(trace: &Trace, slot: Slot) -> Vec<NodeId> {
    let sc = &trace.scenario;
    let tape = RandomTape::new(sc.seed);
    let p = sc.p.unwrap_or(0.0);
    (0..sc.n)
        .map(NodeId)
        .filter(|i| slot > 0 && leader_lottery(*i, slot, p, &tape))
        .collect()
}
