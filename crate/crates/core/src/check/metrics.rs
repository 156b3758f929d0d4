use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::checkpoints::first_checkpoints;
use super::growth::GrowthAnalysis;
use super::liveness::first_given;
use super::params::latency_model;
use crate::adjudication::LedgerKind;
use crate::gadget::VoteKind;
use crate::sim::Trace;
use crate::types::{Slot, TxId};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationVotes {
    pub iteration: u64,
    pub propose: u64,
    pub accept: u64,
    pub reject: u64,
    /// Accepts for the block the iteration checkpointed, if any.
    pub accepts_for_decided: Option<u64>,
}

/// Quantities measured on one trace. Latencies are in slots.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub horizon: Slot,
    pub slot_seconds: f64,
    /// Injection to presence in every honest `LOG_acc`.
    pub acc_latency_mean: Option<f64>,
    pub acc_latency_samples: usize,
    /// Injection to presence in every honest `LOG_da`.
    pub da_latency_mean: Option<f64>,
    pub da_latency_samples: usize,
    /// Mean final chain height per slot.
    pub growth_rate: f64,
    /// Mean final `LOG_da` length per slot.
    pub da_growth_rate: f64,
    /// Slots per block on the honest chains.
    pub mean_block_interval: Option<f64>,
    pub window: u64,
    /// Honest share of the final chain's blocks, per window with blocks.
    pub chain_quality: Vec<f64>,
    pub min_chain_quality: Option<f64>,
    pub iterations: Vec<IterationVotes>,
    pub checkpoints: usize,
    pub bot_iterations: usize,
    pub checkpoint_votes: u64,
    pub bft_votes_cast: u64,
    /// Checkpoint and BFT votes per decided iteration.
    pub votes_per_iteration: Option<f64>,
    pub bft_latency_mean: Option<f64>,
    pub bft_latency_max: Option<u64>,
    pub convergence_opportunities: u64,
    pub convergence_opportunities_in_i: u64,
    pub adversarial_blocks: u64,
    pub honest_blocks: u64,
    pub pivots: Vec<Slot>,
    /// `k_cp · mean_block_interval + T_checkpoint / 2`.
    pub acc_latency_model: Option<f64>,
}

/// First slot at which each transaction is in every honest node's ledger.
pub fn inclusion_slots(trace: &Trace, kind: LedgerKind) -> HashMap<TxId, Slot> {
    let idx = trace.index();
    let r = idx.nodes.len();
    if r == 0 {
        return HashMap::new();
    }
    let slots = trace.rows.len() / r;
    let mut all: HashMap<TxId, (usize, Slot)> = HashMap::new();
    for j in 0..r {
        let mut have: HashSet<TxId> = HashSet::new();
        let mut prev = 0u32;
        for s in 0..slots {
            let row = &trace.rows[s * r + j];
            let tip = if kind == LedgerKind::Da { row.da } else { row.acc };
            if tip == prev {
                continue;
            }
            let stop = idx.is_ancestor_or_self(trace, prev, tip).then_some(prev);
            let mut cur = Some(tip);
            while let Some(c) = cur {
                if Some(c) == stop {
                    break;
                }
                let b = &trace.blocks[c as usize];
                for tx in &b.payload {
                    if have.insert(*tx) {
                        let e = all.entry(*tx).or_insert((0, 0));
                        e.0 += 1;
                        e.1 = e.1.max(row.slot);
                    }
                }
                cur = b.parent.map(|p| idx.index[&p]);
            }
            prev = tip;
        }
    }
    all.into_iter()
        .filter(|(_, (count, _))| *count == r)
        .map(|(tx, (_, s))| (tx, s))
        .collect()
}

fn mean_latency(trace: &Trace, kind: LedgerKind) -> (Option<f64>, usize) {
    let inc = inclusion_slots(trace, kind);
    let lat: Vec<u64> = first_given(trace)
        .into_iter()
        .filter_map(|(tx, given)| inc.get(&tx).map(|s| s.saturating_sub(given)))
        .collect();
    if lat.is_empty() {
        (None, 0)
    } else {
        (Some(lat.iter().sum::<u64>() as f64 / lat.len() as f64), lat.len())
    }
}

pub fn measure_metrics(trace: &Trace, t_recent: u64) -> Metrics {
    let sc = &trace.scenario;
    let window = sc.growth_window.unwrap_or(2 * sc.delta + 100).max(1);
    let mut m = Metrics {
        horizon: sc.horizon,
        slot_seconds: sc.slot_seconds,
        window,
        bft_votes_cast: trace.bft_votes_cast,
        ..Metrics::default()
    };
    let nodes = trace.recorded_nodes();
    if trace.rows.is_empty() || nodes.is_empty() || sc.horizon == 0 {
        return m;
    }
    let idx = trace.index();
    let last = trace.rows_at(sc.horizon - 1);
    let mean_h = |f: &dyn Fn(&crate::sim::LedgerRow) -> u32| {
        last.iter().map(|r| idx.height(f(r)) as f64).sum::<f64>() / last.len() as f64
    };
    let tip_h = mean_h(&|r| r.tip);
    m.growth_rate = tip_h / sc.horizon as f64;
    m.da_growth_rate = mean_h(&|r| r.da) / sc.horizon as f64;
    m.mean_block_interval = (tip_h > 0.0).then(|| sc.horizon as f64 / tip_h);
    (m.acc_latency_mean, m.acc_latency_samples) = mean_latency(trace, LedgerKind::Acc);
    (m.da_latency_mean, m.da_latency_samples) = mean_latency(trace, LedgerKind::Da);

    // Chain quality along the first honest node's final chain.
    let final_chain = idx.tree.chain_to(&idx.id(trace, last[0].tip)).expect("tip in tree");
    let mut per_window: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for b in final_chain.iter().skip(1) {
        let e = per_window.entry(b.slot / window).or_default();
        e.1 += 1;
        if !sc.is_adversarial(b.producer) {
            e.0 += 1;
        }
    }
    m.chain_quality = per_window.values().map(|(h, t)| *h as f64 / *t as f64).collect();
    m.min_chain_quality = m.chain_quality.iter().copied().reduce(f64::min);

    let decided: HashMap<u64, crate::types::BlockId> =
        first_checkpoints(trace).into_iter().map(|(it, b, _)| (it, b)).collect();
    let mut iters: BTreeMap<u64, IterationVotes> = BTreeMap::new();
    for v in &trace.votes {
        let e = iters.entry(v.iteration).or_insert_with(|| IterationVotes {
            iteration: v.iteration,
            ..Default::default()
        });
        match v.kind {
            VoteKind::Propose => e.propose += 1,
            VoteKind::Accept => e.accept += 1,
            VoteKind::Reject => e.reject += 1,
        }
        if let Some(b) = decided.get(&v.iteration) {
            let c = e.accepts_for_decided.get_or_insert(0);
            if v.kind == VoteKind::Accept && v.block == Some(*b) {
                *c += 1;
            }
        }
    }
    m.iterations = iters.into_values().collect();
    m.checkpoints = decided.len();
    let mut decided_iters: HashSet<u64> = HashSet::new();
    for d in &trace.decisions {
        decided_iters.insert(d.iteration);
    }
    m.bot_iterations = decided_iters.iter().filter(|i| !decided.contains_key(i)).count();
    m.checkpoint_votes = trace.votes.len() as u64;
    m.votes_per_iteration = (!decided_iters.is_empty())
        .then(|| (m.checkpoint_votes + m.bft_votes_cast) as f64 / decided_iters.len() as f64);

    let lat: Vec<u64> = trace
        .bft_latencies
        .iter()
        .filter_map(|l| l.finalized_all.map(|f| f - l.submitted))
        .collect();
    if !lat.is_empty() {
        m.bft_latency_mean = Some(lat.iter().sum::<u64>() as f64 / lat.len() as f64);
        m.bft_latency_max = lat.iter().copied().max();
    }

    let growth = GrowthAnalysis::new(trace, t_recent);
    m.convergence_opportunities = growth.count(0, sc.horizon - 1, false);
    m.convergence_opportunities_in_i = growth.count(0, sc.horizon - 1, true);
    m.adversarial_blocks = growth.adversarial_blocks.iter().sum();
    m.honest_blocks = (trace.blocks.len() as u64 - 1).saturating_sub(m.adversarial_blocks);
    m.pivots = growth.pivots();
    m.acc_latency_model = m
        .mean_block_interval
        .map(|bi| latency_model(sc.k_cp.unwrap_or(sc.sigma), bi, sc.t_checkpoint as f64));
    m
}
