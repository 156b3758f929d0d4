use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use super::{
    bft_leader, proposal_statement, vote_statement, BftBlock, BftConfig, BftEvidence, BftMsg,
    CertifiedBlock, LogEntry, QuorumCert,
};
use crate::crypto::{self, RandomTape, Signature};
use crate::gadget::CheckpointVote;
use crate::types::{Digest, NodeId};

/// Result of feeding one event to a [`BftNode`].
#[derive(Debug, Default)]
pub struct BftOutput {
    pub broadcasts: Vec<BftMsg>,
    pub finalized: Vec<LogEntry>,
    /// Two finalized blocks that are not ancestor-related in this node's view.
    pub conflict: Option<(Digest, Digest)>,
}

impl BftOutput {
    fn absorb(&mut self, other: BftOutput) {
        self.broadcasts.extend(other.broadcasts);
        self.finalized.extend(other.finalized);
        if self.conflict.is_none() {
            self.conflict = other.conflict;
        }
    }
}

/// One replica of the engine.
#[derive(Clone, Debug)]
pub struct BftNode {
    pub me: NodeId,
    cfg: BftConfig,
    tape: RandomTape,
    blocks: HashMap<Digest, Arc<BftBlock>>,
    children: HashMap<Digest, Vec<Digest>>,
    votes: HashMap<Digest, BTreeMap<NodeId, Signature>>,
    /// Blocks with a quorum of votes whose whole ancestry is also notarized.
    chain_notarized: HashSet<Digest>,
    certs: HashMap<Digest, Arc<QuorumCert>>,
    best_height: u64,
    best_tips: Vec<Digest>,
    finalized_tip: Digest,
    finality_witness: Digest,
    log: Vec<LogEntry>,
    logged: HashSet<Digest>,
    pending: BTreeMap<u64, CheckpointVote>,
    pending_ids: HashMap<Digest, u64>,
    pending_seq: u64,
    elapsed: u64,
    started: bool,
    last_voted_epoch: u64,
    last_proposed_epoch: u64,
    paused: bool,
    queue: Vec<BftMsg>,
    halted: bool,
}

impl BftNode {
    pub fn new(me: NodeId, cfg: BftConfig, tape: RandomTape) -> Self {
        let genesis = Arc::new(BftBlock::genesis());
        let g = genesis.digest;
        let genesis_qc = Arc::new(QuorumCert {
            view: 0,
            block_digest: g,
            signers: Default::default(),
            signatures: Vec::new(),
            threshold: 0,
        });
        BftNode {
            me,
            cfg,
            tape,
            blocks: HashMap::from([(g, genesis)]),
            children: HashMap::new(),
            votes: HashMap::new(),
            chain_notarized: HashSet::from([g]),
            certs: HashMap::from([(g, genesis_qc)]),
            best_height: 0,
            best_tips: vec![g],
            finalized_tip: g,
            finality_witness: g,
            log: Vec::new(),
            logged: HashSet::new(),
            pending: BTreeMap::new(),
            pending_ids: HashMap::new(),
            pending_seq: 0,
            elapsed: 0,
            started: false,
            last_voted_epoch: 0,
            last_proposed_epoch: 0,
            paused: false,
            queue: Vec::new(),
            halted: false,
        }
    }

    pub fn config(&self) -> &BftConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> u64 {
        self.elapsed / self.cfg.epoch_len + 1
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn finalized_tip(&self) -> Digest {
        self.finalized_tip
    }

    pub fn finalized_height(&self) -> u64 {
        self.blocks[&self.finalized_tip].height
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn halt(&mut self) {
        self.halted = true;
    }

    pub fn block(&self, d: &Digest) -> Option<&Arc<BftBlock>> {
        self.blocks.get(d)
    }

    /// Freezes or resumes the epoch clock. Messages received while paused
    /// are queued and processed on resume.
    pub fn set_paused(&mut self, paused: bool) -> BftOutput {
        let mut out = BftOutput::default();
        if self.paused == paused {
            return out;
        }
        self.paused = paused;
        if !paused {
            for msg in std::mem::take(&mut self.queue) {
                out.absorb(self.process(msg));
            }
        }
        out
    }

    /// Queues `payload` for ordering and shares it with every node.
    pub fn submit(&mut self, payload: CheckpointVote) -> BftOutput {
        let mut out = BftOutput::default();
        if !self.halted {
            self.add_pending(payload.clone());
            out.broadcasts.push(BftMsg::Payload(payload));
        }
        out
    }

    /// Advances the epoch clock by one slot, proposing if this node leads
    /// the current epoch and the leader wait has elapsed.
    pub fn tick(&mut self) -> BftOutput {
        let mut out = BftOutput::default();
        if self.paused || self.halted {
            return out;
        }
        if self.started {
            self.elapsed += 1;
        }
        self.started = true;
        let epoch = self.epoch();
        let offset = self.elapsed % self.cfg.epoch_len;
        if offset == self.cfg.leader_wait
            && epoch > self.last_proposed_epoch
            && bft_leader(epoch, self.cfg.n, &self.tape) == self.me
        {
            self.last_proposed_epoch = epoch;
            out.broadcasts.push(self.make_proposal(epoch));
        }
        out
    }

    /// Builds a signed proposal on the smallest-digest longest notarized tip.
    pub fn make_proposal(&self, epoch: u64) -> BftMsg {
        let parent = self.blocks[self.best_tips.iter().min().expect("at least genesis")].clone();
        let in_chain = self.payloads_in_chain(&parent.digest);
        let batch: Vec<CheckpointVote> = self
            .pending
            .values()
            .filter(|p| !in_chain.contains(&p.payload_id()))
            .cloned()
            .collect();
        let block = Arc::new(BftBlock::new(epoch, &parent, self.me, batch));
        let signature = crypto::sign(self.me, &proposal_statement(&block.digest));
        BftMsg::Propose { block, signature }
    }

    fn payloads_in_chain(&self, tip: &Digest) -> HashSet<Digest> {
        let mut out = HashSet::new();
        let mut cur = Some(*tip);
        while let Some(d) = cur {
            let b = &self.blocks[&d];
            out.extend(b.payloads.iter().map(|p| p.payload_id()));
            cur = b.parent;
        }
        out
    }

    pub fn handle(&mut self, msg: BftMsg) -> BftOutput {
        if self.halted {
            return BftOutput::default();
        }
        if self.paused {
            self.queue.push(msg);
            return BftOutput::default();
        }
        self.process(msg)
    }

    fn process(&mut self, msg: BftMsg) -> BftOutput {
        let mut out = BftOutput::default();
        match msg {
            BftMsg::Payload(p) => {
                if p.verify() {
                    self.add_pending(p);
                }
            }
            BftMsg::Propose { block, signature } => {
                if !self.block_is_valid(&block)
                    || block.proposer != bft_leader(block.epoch, self.cfg.n, &self.tape)
                    || !crypto::verify(block.proposer, &proposal_statement(&block.digest), &signature)
                {
                    return out;
                }
                out.absorb(self.store_block(block.clone()));
                if block.epoch > self.epoch() {
                    self.elapsed = (block.epoch - 1) * self.cfg.epoch_len + self.cfg.leader_wait;
                }
                if block.epoch == self.epoch() && block.epoch > self.last_voted_epoch {
                    let extends_longest = block
                        .parent
                        .is_some_and(|p| self.chain_notarized.contains(&p) && self.blocks[&p].height == self.best_height);
                    if extends_longest {
                        self.last_voted_epoch = block.epoch;
                        let signature = crypto::sign(self.me, &vote_statement(&block.digest));
                        out.broadcasts.push(BftMsg::Vote {
                            block,
                            voter: self.me,
                            signature,
                        });
                    }
                }
            }
            BftMsg::Vote {
                block,
                voter,
                signature,
            } => {
                if !self.block_is_valid(&block)
                    || voter.0 >= self.cfg.n
                    || !crypto::verify(voter, &vote_statement(&block.digest), &signature)
                {
                    return out;
                }
                let d = block.digest;
                out.absorb(self.store_block(block));
                let votes = self.votes.entry(d).or_default();
                if votes.insert(voter, signature).is_none() && votes.len() == self.cfg.q_bft as usize {
                    out.absorb(self.try_notarize(d));
                }
            }
        }
        out
    }

    /// Digest check, skipped for a block already stored under that digest.
    fn block_is_valid(&self, block: &Arc<BftBlock>) -> bool {
        match self.blocks.get(&block.digest) {
            Some(known) => Arc::ptr_eq(known, block) || **known == **block,
            None => block.digest_is_valid(),
        }
    }

    fn add_pending(&mut self, p: CheckpointVote) {
        let id = p.payload_id();
        if self.logged.contains(&id) || self.pending_ids.contains_key(&id) {
            return;
        }
        self.pending_ids.insert(id, self.pending_seq);
        self.pending.insert(self.pending_seq, p);
        self.pending_seq += 1;
    }

    fn store_block(&mut self, block: Arc<BftBlock>) -> BftOutput {
        let d = block.digest;
        if self.blocks.contains_key(&d) || block.parent.is_none() {
            return BftOutput::default();
        }
        let parent = block.parent.expect("checked");
        self.children.entry(parent).or_default().push(d);
        self.blocks.insert(d, block);
        // A parent arriving late can complete the notarized ancestry of
        // descendants that already hold a quorum.
        self.try_notarize(d)
    }

    fn has_quorum(&self, d: &Digest) -> bool {
        self.votes
            .get(d)
            .is_some_and(|v| v.len() >= self.cfg.q_bft as usize)
    }

    /// Marks `d` and any waiting descendants as chain-notarized when their
    /// ancestry allows it, running the finality rule on each.
    fn try_notarize(&mut self, d: Digest) -> BftOutput {
        let mut out = BftOutput::default();
        let mut stack = vec![d];
        while let Some(x) = stack.pop() {
            if self.chain_notarized.contains(&x) || !self.has_quorum(&x) {
                continue;
            }
            let Some(b) = self.blocks.get(&x).cloned() else {
                continue;
            };
            let Some(parent) = b.parent.and_then(|p| self.blocks.get(&p)).cloned() else {
                continue;
            };
            if !self.chain_notarized.contains(&parent.digest)
                || parent.height + 1 != b.height
                || parent.epoch >= b.epoch
            {
                continue;
            }
            self.chain_notarized.insert(x);
            let votes = &self.votes[&x];
            self.certs.insert(
                x,
                Arc::new(QuorumCert {
                    view: b.epoch,
                    block_digest: x,
                    signers: votes.keys().copied().collect(),
                    signatures: votes.values().copied().collect(),
                    threshold: self.cfg.q_bft,
                }),
            );
            if b.height > self.best_height {
                self.best_height = b.height;
                self.best_tips = vec![x];
            } else if b.height == self.best_height {
                self.best_tips.push(x);
            }
            out.absorb(self.check_finality(&b, &parent));
            if let Some(kids) = self.children.get(&x) {
                stack.extend(kids.iter().copied());
            }
        }
        out
    }

    fn check_finality(&mut self, b2: &BftBlock, b1: &BftBlock) -> BftOutput {
        let mut out = BftOutput::default();
        let Some(b0) = b1.parent.map(|p| self.blocks[&p].clone()) else {
            return out;
        };
        if b0.epoch + 1 != b1.epoch || b1.epoch + 1 != b2.epoch {
            return out;
        }
        let fin_h = self.finalized_height();
        if b1.height <= fin_h {
            if !self.is_ancestor_or_self(&b1.digest, &self.finalized_tip) {
                out.conflict = Some((self.finalized_tip, b1.digest));
            }
            return out;
        }
        if !self.is_ancestor_or_self(&self.finalized_tip, &b1.digest) {
            out.conflict = Some((self.finalized_tip, b1.digest));
            return out;
        }
        let mut segment = Vec::new();
        let mut cur = b1.digest;
        while cur != self.finalized_tip {
            segment.push(cur);
            cur = self.blocks[&cur].parent.expect("above finalized tip");
        }
        segment.reverse();
        for d in segment {
            let cert = self.certs[&d].clone();
            let block = self.blocks[&d].clone();
            for p in &block.payloads {
                let id = p.payload_id();
                if self.logged.insert(id) {
                    if let Some(seq) = self.pending_ids.remove(&id) {
                        self.pending.remove(&seq);
                    }
                    let entry = LogEntry {
                        position: self.log.len() as u64,
                        payload: p.clone(),
                        certificate: cert.clone(),
                    };
                    self.log.push(entry.clone());
                    out.finalized.push(entry);
                }
            }
        }
        self.finalized_tip = b1.digest;
        self.finality_witness = b2.digest;
        out
    }

    fn is_ancestor_or_self(&self, a: &Digest, b: &Digest) -> bool {
        let ha = self.blocks[a].height;
        let mut cur = *b;
        loop {
            let blk = &self.blocks[&cur];
            if blk.height < ha {
                return false;
            }
            if cur == *a {
                return true;
            }
            match blk.parent {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    /// Notarized chain with certificates through the block that finalized the current tip.
    pub fn evidence(&self) -> BftEvidence {
        let mut chain = Vec::new();
        let mut cur = self.finality_witness;
        while let Some(parent) = self.blocks[&cur].parent {
            chain.push(CertifiedBlock {
                block: (*self.blocks[&cur]).clone(),
                qc: (*self.certs[&cur]).clone(),
            });
            cur = parent;
        }
        chain.reverse();
        BftEvidence {
            chain,
            finalized_height: self.finalized_height(),
        }
    }
}
