//! Permissioned lottery-based longest-chain protocol with a
//! checkpoint-respecting fork choice and k-deep confirmation.

mod block;

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use block::{Block, BlockTree};

use crate::crypto::{RandomTape, Stream};
use crate::gadget::CheckpointDecision;
use crate::ledger::Ledger;
use crate::types::{BlockId, NodeId, Slot, TxId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("parent {0} is not in the tree")]
    MissingParent(BlockId),
    #[error("block slot {child} does not exceed parent slot {parent}")]
    SlotOrder { parent: Slot, child: Slot },
    #[error("a second parentless block was offered")]
    SecondGenesis,
    #[error("checkpointed block {0} is not in the tree")]
    UnknownCheckpoint(BlockId),
    #[error("checkpoints {a} and {b} are not ancestor-related")]
    ConflictingCheckpoints { a: BlockId, b: BlockId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid chain parameters: {0}")]
pub struct ParamError(pub String);

/// Longest-chain parameters. Depths are in blocks, `delta` in slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub n: u32,
    pub f: u32,
    pub p: f64,
    pub delta: u64,
    pub k: u64,
    pub k_cp: u64,
    pub sigma: u64,
}

impl ChainParams {
    /// Parameters with `k = k_cp = sigma`.
    pub fn new(n: u32, f: u32, p: f64, delta: u64, sigma: u64) -> Self {
        ChainParams {
            n,
            f,
            p,
            delta,
            k: sigma,
            k_cp: sigma,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.n == 0 {
            return Err(ParamError("n >= 1".into()));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(ParamError(format!("0 < p < 1 (got p = {})", self.p)));
        }
        if self.k == 0 {
            return Err(ParamError("k >= 1".into()));
        }
        if self.k_cp == 0 {
            return Err(ParamError("k_cp >= 1".into()));
        }
        if self.f > self.n.div_ceil(2) {
            return Err(ParamError(format!(
                "f <= ceil(n/2) (got f = {}, n = {})",
                self.f, self.n
            )));
        }
        Ok(())
    }
}

/// Wins with probability exactly `p` (up to 2^-64 resolution), as a pure
/// function of `(seed, node, slot)`.
pub fn leader_lottery(node: NodeId, slot: Slot, p: f64, tape: &RandomTape) -> bool {
    if p <= 0.0 {
        return false;
    }
    if p >= 1.0 {
        return true;
    }
    let threshold = (p * 2f64.powi(64)) as u64;
    tape.draw(Stream::Lottery, node.0 as u64, slot) < threshold
}

/// Deepest non-bottom checkpoint, after checking that all of them lie on one chain.
pub fn checkpoint_anchor(
    tree: &BlockTree,
    checkpoints: &[CheckpointDecision],
) -> Result<BlockId, ChainError> {
    let mut anchor = tree.genesis_id();
    let mut anchor_h = 0;
    let mut seen: Vec<BlockId> = Vec::new();
    for cp in checkpoints {
        let Some(b) = cp.block else { continue };
        let h = tree.height(&b).ok_or(ChainError::UnknownCheckpoint(b))?;
        if h > anchor_h {
            anchor = b;
            anchor_h = h;
        }
        seen.push(b);
    }
    for b in seen {
        if !tree.is_ancestor_or_self(&b, &anchor) {
            return Err(ChainError::ConflictingCheckpoints { a: b, b: anchor });
        }
    }
    Ok(anchor)
}

/// Tip of the longest chain through every checkpoint; ties go to the smallest tip id.
pub fn fork_choice_tip(
    tree: &BlockTree,
    checkpoints: &[CheckpointDecision],
) -> Result<BlockId, ChainError> {
    let anchor = checkpoint_anchor(tree, checkpoints)?;
    Ok(best_in_subtree(tree, &anchor))
}

pub(crate) fn best_in_subtree(tree: &BlockTree, root: &BlockId) -> BlockId {
    let mut best = *root;
    let mut best_h = tree.height(root).unwrap_or(0);
    for b in tree.subtree(root) {
        let h = tree.height(&b.id).expect("subtree member");
        if h > best_h || (h == best_h && b.id < best) {
            best = b.id;
            best_h = h;
        }
    }
    best
}

pub fn fork_choice(
    tree: &BlockTree,
    checkpoints: &[CheckpointDecision],
) -> Result<Vec<Arc<Block>>, ChainError> {
    let tip = fork_choice_tip(tree, checkpoints)?;
    Ok(tree.chain_to(&tip).expect("tip is in the tree"))
}

/// Height of the confirmed prefix: the k-deep block or the latest
/// checkpoint, whichever is higher.
pub fn confirmed_height(tip_height: u64, checkpoint_height: Option<u64>, k: u64) -> u64 {
    tip_height
        .saturating_sub(k)
        .max(checkpoint_height.unwrap_or(0))
}

/// Ledger of `chain` truncated to the confirmed height.
///
/// `latest_checkpoint` must be on `chain`; a checkpoint beyond the tip is
/// clamped to the tip.
pub fn confirm_da(chain: &[Arc<Block>], latest_checkpoint: Option<&Block>, k: u64) -> Ledger {
    let tip_h = chain.len().saturating_sub(1) as u64;
    let cp_h = latest_checkpoint.and_then(|cp| {
        chain
            .iter()
            .position(|b| b.id == cp.id)
            .map(|i| i as u64)
    });
    let h = confirmed_height(tip_h, cp_h, k).min(tip_h);
    chain_ledger(&chain[..chain.len().min(h as usize + 1)])
}

pub fn chain_ledger(chain: &[Arc<Block>]) -> Ledger {
    Ledger::from_payloads(chain.iter().map(|b| b.payload.as_slice()))
}

/// New block on the fork-choice tip carrying every mempool transaction not
/// already in that chain, in mempool order.
pub fn produce_block(
    node: NodeId,
    slot: Slot,
    tree: &BlockTree,
    checkpoints: &[CheckpointDecision],
    mempool: &[TxId],
) -> Result<Block, ChainError> {
    let chain = fork_choice(tree, checkpoints)?;
    let included: HashSet<TxId> = chain
        .iter()
        .flat_map(|b| b.payload.iter().copied())
        .collect();
    let mut payload = Vec::new();
    let mut taken = HashSet::new();
    for tx in mempool {
        if !included.contains(tx) && taken.insert(*tx) {
            payload.push(*tx);
        }
    }
    let parent = chain.last().expect("chain holds genesis").id;
    Ok(Block::new(parent, node, slot, payload))
}

pub fn validate_block(block: &Block, tree: &BlockTree, params: &ChainParams, tape: &RandomTape) -> bool {
    if block.is_genesis() {
        return block.id == tree.genesis_id();
    }
    if !block.id_is_valid() {
        return false;
    }
    let Some(parent) = block.parent.and_then(|p| tree.get(&p)) else {
        return false;
    };
    parent.slot < block.slot
        && block.producer.0 < params.n
        && leader_lottery(block.producer, block.slot, params.p, tape)
}
