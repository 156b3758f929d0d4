//! Fixtures shared by the criterion benches.

use std::sync::Arc;

use accgadget::{Block, BlockId, BlockTree, CheckpointDecision, NodeId, Scenario, TxId};

/// A main chain of `len` blocks with a one-block fork every `fork_every`
/// heights, plus a checkpoint on the main chain at half its length.
pub fn forked_tree(len: u64, fork_every: u64) -> (BlockTree, Vec<CheckpointDecision>) {
    let mut tree = BlockTree::new();
    let mut tip = tree.genesis_id();
    let mut checkpoint = tip;
    for h in 1..=len {
        let b = Block::new(tip, NodeId(0), 2 * h, vec![TxId(h)]);
        if h % fork_every == 0 {
            let side = Block::new(tip, NodeId(1), 2 * h + 1, vec![TxId(len + h)]);
            tree.insert(Arc::new(side)).expect("parent present");
        }
        tip = b.id;
        tree.insert(Arc::new(b)).expect("parent present");
        if h == len / 2 {
            checkpoint = tip;
        }
    }
    let cps = vec![CheckpointDecision {
        iteration: 0,
        block: Some(checkpoint),
        decided_at: len,
    }];
    (tree, cps)
}

/// Fault-free scenario with `n` nodes and a block roughly every two slots.
pub fn fault_free(n: u32, horizon: u64) -> Scenario {
    let mut s = Scenario::new(n, horizon);
    s.p = Some(0.5 / n as f64);
    s
}

pub fn tip_of(tree: &BlockTree, cps: &[CheckpointDecision]) -> BlockId {
    accgadget::chain::fork_choice_tip(tree, cps).expect("consistent checkpoints")
}
