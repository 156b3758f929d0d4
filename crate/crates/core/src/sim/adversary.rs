//! Selfish mining for the adversarial coalition.
//!
//! The coalition mines one private chain with all of its lottery wins and
//! reacts to honest progress as in Eyal and Sirer's strategy: it publishes
//! everything when its lead shrinks to one or to a tie, publishes just
//! enough to match the public chain when the lead is larger, and gives up
//! its branch once the public chain is longer. The coalition sees honest
//! blocks as soon as they are sent.

use std::sync::Arc;

use crate::chain::{best_in_subtree, checkpoint_anchor, leader_lottery, Block, BlockTree};
use crate::crypto::RandomTape;
use crate::gadget::CheckpointDecision;
use crate::types::{BlockId, NodeId, Slot};

pub(crate) struct SelfishPool {
    members: Vec<NodeId>,
    /// Every block the coalition knows, withheld ones included.
    full: BlockTree,
    /// Blocks that honest nodes have been sent.
    public: BlockTree,
    private: Vec<Arc<Block>>,
    /// Tip of a branch published to tie the public chain.
    race_tip: Option<BlockId>,
    last_public_height: u64,
    /// Blocks mined since the last [`SelfishPool::take_mined`].
    mined: Vec<Arc<Block>>,
}

impl SelfishPool {
    pub fn new(members: Vec<NodeId>) -> Self {
        SelfishPool {
            members,
            full: BlockTree::new(),
            public: BlockTree::new(),
            private: Vec::new(),
            race_tip: None,
            last_public_height: 0,
            mined: Vec::new(),
        }
    }

    pub fn observe(&mut self, b: &Arc<Block>) {
        let _ = self.full.insert(b.clone());
        let _ = self.public.insert(b.clone());
    }

    fn public_tip(&self, cps: &[CheckpointDecision]) -> BlockId {
        let anchor = checkpoint_anchor(&self.public, cps).unwrap_or(self.public.genesis_id());
        best_in_subtree(&self.public, &anchor)
    }

    pub fn take_mined(&mut self) -> Vec<Arc<Block>> {
        std::mem::take(&mut self.mined)
    }

    /// Blocks the coalition is withholding.
    #[cfg(test)]
    pub fn withheld(&self) -> usize {
        self.private.len()
    }

    /// Mines at `slot` if some member wins. Returns blocks to publish now.
    pub fn mine(&mut self, slot: Slot, p: f64, tape: &RandomTape, cps: &[CheckpointDecision]) -> Vec<Arc<Block>> {
        if slot == 0 {
            return Vec::new();
        }
        let Some(winner) = self.members.iter().copied().find(|m| leader_lottery(*m, slot, p, tape)) else {
            return Vec::new();
        };
        let pub_tip = self.public_tip(cps);
        let pub_h = self.public.height(&pub_tip).expect("tip in tree");
        let racing = self
            .race_tip
            .filter(|r| self.private.is_empty() && self.public.height(r) == Some(pub_h));
        let parent = match (self.private.last(), racing) {
            (Some(last), _) => last.id,
            (None, Some(r)) => r,
            (None, None) => pub_tip,
        };
        let block = Arc::new(Block::new(parent, winner, slot, Vec::new()));
        if self.full.insert(block.clone()).is_err() {
            return Vec::new();
        }
        self.mined.push(block.clone());
        if racing.is_some() {
            self.race_tip = None;
            let _ = self.public.insert(block.clone());
            return vec![block];
        }
        self.private.push(block);
        Vec::new()
    }

    /// Responds to the public chain. Returns blocks to publish now.
    pub fn react(&mut self, cps: &[CheckpointDecision]) -> Vec<Arc<Block>> {
        let pub_tip = self.public_tip(cps);
        let pub_h = self.public.height(&pub_tip).expect("tip in tree");
        let progressed = pub_h > self.last_public_height;
        self.last_public_height = pub_h;
        let Some(priv_tip) = self.private.last().map(|b| b.id) else {
            return Vec::new();
        };
        let anchor = checkpoint_anchor(&self.public, cps).unwrap_or(self.public.genesis_id());
        let priv_h = self.full.height(&priv_tip).expect("private block in tree");
        if priv_h < pub_h || !self.full.is_ancestor_or_self(&anchor, &priv_tip) {
            self.private.clear();
            return Vec::new();
        }
        if !progressed {
            return Vec::new();
        }
        let lead = priv_h - pub_h;
        let release: Vec<Arc<Block>> = if lead <= 1 {
            if lead == 0 {
                self.race_tip = Some(priv_tip);
            }
            std::mem::take(&mut self.private)
        } else {
            let cut = self
                .private
                .iter()
                .position(|b| self.full.height(&b.id).expect("in tree") > pub_h)
                .unwrap_or(self.private.len());
            self.private.drain(..cut).collect()
        };
        for b in &release {
            let _ = self.public.insert(b.clone());
        }
        release
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TxId;

    fn tape_where_member_wins(member: NodeId, slots: &[Slot], p: f64) -> RandomTape {
        (0..10_000)
            .map(RandomTape::new)
            .find(|t| slots.iter().all(|s| leader_lottery(member, *s, p, t)))
            .expect("some seed makes the member win")
    }

    #[test]
    fn withholds_then_releases_when_lead_shrinks_to_one() {
        let me = NodeId(9);
        let p = 0.5;
        let tape = tape_where_member_wins(me, &[1, 2], p);
        let mut pool = SelfishPool::new(vec![me]);
        assert!(pool.mine(1, p, &tape, &[]).is_empty());
        assert!(pool.mine(2, p, &tape, &[]).is_empty());
        assert_eq!(pool.withheld(), 2);
        // An honest block at height 1 leaves a lead of one: publish everything.
        let g = pool.public.genesis_id();
        let honest = Arc::new(Block::new(g, NodeId(0), 3, vec![TxId(1)]));
        pool.observe(&honest);
        let out = pool.react(&[]);
        assert_eq!(out.len(), 2);
        assert_eq!(pool.withheld(), 0);
    }

    #[test]
    fn abandons_branch_once_behind() {
        let me = NodeId(9);
        let p = 0.5;
        let tape = tape_where_member_wins(me, &[5], p);
        let mut pool = SelfishPool::new(vec![me]);
        let g = pool.public.genesis_id();
        let h1 = Arc::new(Block::new(g, NodeId(0), 1, vec![]));
        let h2 = Arc::new(Block::new(h1.id, NodeId(0), 2, vec![]));
        pool.observe(&h1);
        pool.react(&[]);
        assert!(pool.mine(5, p, &tape, &[]).is_empty());
        assert_eq!(pool.withheld(), 1);
        // Tie at height 2 after an honest block: release and race.
        pool.observe(&h2);
        assert_eq!(pool.react(&[]).len(), 1);
        let h3 = Arc::new(Block::new(h2.id, NodeId(0), 6, vec![]));
        pool.observe(&h3);
        assert!(pool.react(&[]).is_empty());
        assert_eq!(pool.withheld(), 0);
    }
}
