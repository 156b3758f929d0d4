//! The accountability gadget: checkpoint votes, the per-node vote generator
//! and the vote interpreter that turns the BFT-ordered vote log into
//! checkpoint decisions.

mod generator;
mod interpreter;

use serde::{Deserialize, Serialize};

pub use generator::{
    generator_step, get_curr_proposal_tip, is_valid_proposal, ChainView, GenAction, GenEvent,
    GenPhase, GeneratorState,
};
pub use interpreter::{interpreter_step, InterpreterState};

use crate::chain::{checkpoint_anchor, chain_ledger, BlockTree, ChainError};
use crate::crypto::{self, Hasher, RandomTape, Signature, Stream};
use crate::ledger::Ledger;
use crate::types::{BlockId, Digest, NodeId, Slot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteKind {
    Propose,
    Accept,
    Reject,
}

impl VoteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VoteKind::Propose => "propose",
            VoteKind::Accept => "accept",
            VoteKind::Reject => "reject",
        }
    }
}

/// Signed checkpoint message. Propose and accept carry a block, reject does not.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CheckpointVote {
    pub kind: VoteKind,
    pub iteration: u64,
    pub block: Option<BlockId>,
    pub author: NodeId,
    pub signature: Signature,
}

impl CheckpointVote {
    pub fn statement(kind: VoteKind, iteration: u64, block: Option<BlockId>) -> Digest {
        let h = Hasher::new("accgadget/cp-vote")
            .bytes(kind.as_str().as_bytes())
            .u64(iteration);
        match block {
            Some(b) => h.u64(1).digest(&b),
            None => h.u64(0),
        }
        .finish()
    }

    pub fn signed(kind: VoteKind, iteration: u64, block: Option<BlockId>, author: NodeId) -> Self {
        let signature = crypto::sign(author, &Self::statement(kind, iteration, block));
        CheckpointVote {
            kind,
            iteration,
            block,
            author,
            signature,
        }
    }

    pub fn propose(iteration: u64, block: BlockId, author: NodeId) -> Self {
        Self::signed(VoteKind::Propose, iteration, Some(block), author)
    }

    pub fn accept(iteration: u64, block: BlockId, author: NodeId) -> Self {
        Self::signed(VoteKind::Accept, iteration, Some(block), author)
    }

    pub fn reject(iteration: u64, author: NodeId) -> Self {
        Self::signed(VoteKind::Reject, iteration, None, author)
    }

    /// Well-formed and signed by its claimed author.
    pub fn verify(&self) -> bool {
        let shape_ok = match self.kind {
            VoteKind::Propose | VoteKind::Accept => self.block.is_some(),
            VoteKind::Reject => self.block.is_none(),
        };
        shape_ok
            && crypto::verify(
                self.author,
                &Self::statement(self.kind, self.iteration, self.block),
                &self.signature,
            )
    }

    /// Content id used to deduplicate BFT payloads.
    pub fn payload_id(&self) -> Digest {
        Hasher::new("accgadget/payload")
            .u64(self.author.0 as u64)
            .digest(&Self::statement(self.kind, self.iteration, self.block))
            .finish()
    }
}

/// Output of the interpreter for one iteration. `block == None` is the abort outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointDecision {
    pub iteration: u64,
    pub block: Option<BlockId>,
    pub decided_at: Slot,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuorumPreset {
    /// `ceil(2n/3)` accepts, `floor(n/3) + 1` rejects.
    #[default]
    TwoThirds,
    /// `n - f` accepts, `f + 1` rejects.
    NMinusF,
}

impl QuorumPreset {
    pub fn thresholds(self, n: u32, f: u32) -> (u32, u32) {
        match self {
            QuorumPreset::TwoThirds => ((2 * n).div_ceil(3), n / 3 + 1),
            QuorumPreset::NMinusF => (n - f, f + 1),
        }
    }
}

impl std::str::FromStr for QuorumPreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two-thirds" => Ok(QuorumPreset::TwoThirds),
            "n-minus-f" => Ok(QuorumPreset::NMinusF),
            other => Err(format!("unknown quorum preset `{other}`")),
        }
    }
}

/// Gadget timing (slots) and vote thresholds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GadgetParams {
    pub t_checkpoint: u64,
    pub t_timeout: u64,
    pub q_accept: u32,
    pub q_reject: u32,
}

impl GadgetParams {
    pub fn with_preset(preset: QuorumPreset, n: u32, f: u32, t_checkpoint: u64, t_timeout: u64) -> Self {
        let (q_accept, q_reject) = preset.thresholds(n, f);
        GadgetParams {
            t_checkpoint,
            t_timeout,
            q_accept,
            q_reject,
        }
    }

    pub fn validate(&self, n: u32) -> Result<(), String> {
        if 2 * self.q_accept <= n {
            return Err(format!("q_accept > n/2 (got {} for n = {n})", self.q_accept));
        }
        if self.q_accept + self.q_reject <= n {
            return Err(format!(
                "q_accept + q_reject > n (got {} + {} for n = {n})",
                self.q_accept, self.q_reject
            ));
        }
        if self.q_accept > n || self.q_reject == 0 || self.q_reject > n {
            return Err("quorums must lie in 1..=n".into());
        }
        if self.t_timeout == 0 {
            return Err("t_timeout >= 1".into());
        }
        Ok(())
    }
}

/// Leader of checkpoint iteration `c`, uniform over `0..n`.
pub fn cp_leader_of_iter(c: u64, n: u32, tape: &RandomTape) -> NodeId {
    let x = tape.draw(Stream::CheckpointLeader, c, 0);
    NodeId(((x as u128 * n as u128) >> 64) as u32)
}

/// Ledger of the prefix ending at the latest non-bottom checkpoint.
pub fn ledger_acc(decisions: &[CheckpointDecision], tree: &BlockTree) -> Result<Ledger, ChainError> {
    let anchor = checkpoint_anchor(tree, decisions)?;
    Ok(chain_ledger(&tree.chain_to(&anchor).expect("anchor is in the tree")))
}
