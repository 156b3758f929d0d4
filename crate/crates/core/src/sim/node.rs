use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use crate::adjudication::{Evidence, LedgerKind};
use crate::bft::{BftMsg, BftNode, BftOutput};
use crate::chain::{
    best_in_subtree, chain_ledger, checkpoint_anchor, confirmed_height, leader_lottery, validate_block,
    Block, BlockTree, ChainError, ChainParams,
};
use crate::crypto::RandomTape;
use crate::gadget::{
    generator_step, interpreter_step, ChainView, CheckpointDecision, CheckpointVote, GadgetParams, GenAction,
    GenEvent, GeneratorState, InterpreterState,
};
use crate::ledger::Ledger;
use crate::types::{BlockId, NodeId, Slot, TxId};

#[derive(Clone, Debug)]
pub(crate) enum Msg {
    Block(Arc<Block>),
    /// A transaction handed to the node by the environment.
    Inject(TxId),
    Tx(TxId),
    Proposal(CheckpointVote),
    Bft(BftMsg),
}

impl Msg {
    /// Delivery order within a slot; blocks first so that votes can refer to them.
    pub(crate) fn priority(&self) -> u8 {
        match self {
            Msg::Block(_) => 0,
            Msg::Inject(_) | Msg::Tx(_) => 1,
            Msg::Proposal(_) => 2,
            Msg::Bft(_) => 3,
        }
    }
}

pub(crate) struct Ctx<'a> {
    pub chain: &'a ChainParams,
    pub gadget: &'a GadgetParams,
    pub tape: &'a RandomTape,
    pub now: Slot,
}

/// What happened inside a node since the simulator last looked.
#[derive(Default)]
pub(crate) struct Events {
    pub votes: Vec<CheckpointVote>,
    pub decisions: Vec<CheckpointDecision>,
    pub finalized: Vec<CheckpointVote>,
    pub injected: Vec<TxId>,
    pub blocks: Vec<Arc<Block>>,
    pub bft_votes: u64,
    pub alarm: Option<String>,
}

pub(crate) struct Node {
    pub id: NodeId,
    /// Whether this node runs the gadget at all.
    full: bool,
    /// Whether the node mines its own lottery wins.
    produces: bool,
    /// Stay silent when leading a checkpoint iteration or a BFT epoch.
    boycott: bool,
    pub tree: BlockTree,
    orphans: BTreeMap<BlockId, Vec<Arc<Block>>>,
    mempool: Vec<TxId>,
    in_mempool: HashSet<TxId>,
    pub decisions: Vec<CheckpointDecision>,
    /// Length of the prefix of `decisions` whose blocks are in the tree.
    known_cps: usize,
    pub anchor: BlockId,
    pub tip: BlockId,
    gen: GeneratorState,
    interp: InterpreterState,
    pub bft: BftNode,
    pub transcript: Vec<CheckpointVote>,
    pub halted: bool,
    pub outbox: Vec<Msg>,
    pub events: Events,
}

impl Node {
    pub fn new(id: NodeId, n: u32, bft: BftNode, full: bool, produces: bool, boycott: bool) -> Self {
        let tree = BlockTree::new();
        let g = tree.genesis_id();
        Node {
            id,
            full,
            produces,
            boycott,
            tree,
            orphans: BTreeMap::new(),
            mempool: Vec::new(),
            in_mempool: HashSet::new(),
            decisions: Vec::new(),
            known_cps: 0,
            anchor: g,
            tip: g,
            gen: GeneratorState::new(id, n),
            interp: InterpreterState::new(),
            bft,
            transcript: Vec::new(),
            halted: false,
            outbox: Vec::new(),
            events: Events::default(),
        }
    }

    pub fn checkpoints(&self) -> &[CheckpointDecision] {
        &self.decisions[..self.known_cps]
    }

    /// Tip of the confirmed prefix of the node's chain.
    pub fn da_tip(&self, k: u64) -> BlockId {
        let h = self.tree.height(&self.tip).expect("tip in tree");
        let cp_h = self.tree.height(&self.anchor);
        self.tree
            .ancestor_at(&self.tip, confirmed_height(h, cp_h, k).min(h))
            .expect("ancestor exists")
    }

    pub fn ledger(&self, kind: LedgerKind, k: u64) -> Ledger {
        let tip = match kind {
            LedgerKind::Da => self.da_tip(k),
            _ => self.anchor,
        };
        chain_ledger(&self.tree.chain_to(&tip).expect("tip in tree"))
    }

    pub fn evidence(&self, now: Slot, kind: LedgerKind, k: u64) -> Evidence {
        let tip = match kind {
            LedgerKind::Da => self.da_tip(k),
            LedgerKind::Acc => self.anchor,
            LedgerKind::Bft => self.tree.genesis_id(),
        };
        let chain = self
            .tree
            .chain_to(&tip)
            .expect("tip in tree")
            .iter()
            .map(|b| (**b).clone())
            .collect();
        let gadget = kind != LedgerKind::Da;
        Evidence {
            node: self.id,
            at_slot: now,
            ledger: kind,
            bft_evidence: if gadget { self.bft.evidence() } else { Default::default() },
            observed_decisions: if gadget { self.decisions.clone() } else { Vec::new() },
            vote_transcript: if gadget { self.transcript.clone() } else { Vec::new() },
            chain,
        }
    }

    fn halt(&mut self, reason: String) {
        if !self.halted {
            self.halted = true;
            self.bft.halt();
            self.events.alarm = Some(reason);
        }
    }

    pub fn tick(&mut self, ctx: &Ctx) {
        if self.halted {
            return;
        }
        if self.produces && ctx.now > 0 && leader_lottery(self.id, ctx.now, ctx.chain.p, ctx.tape) {
            let block = Arc::new(self.build_block(ctx.now));
            self.on_block(block.clone(), ctx);
            self.events.blocks.push(block.clone());
            self.outbox.push(Msg::Block(block));
        }
        if self.full && !self.halted {
            let actions = self.gen_step(GenEvent::Tick(ctx.now), ctx);
            self.apply_gen(actions, ctx);
            let out = self.bft.tick();
            self.apply_bft(out, ctx);
        }
    }

    fn build_block(&self, slot: Slot) -> Block {
        let included: HashSet<TxId> = self
            .tree
            .chain_to(&self.tip)
            .expect("tip in tree")
            .iter()
            .flat_map(|b| b.payload.iter().copied())
            .collect();
        let payload = self
            .mempool
            .iter()
            .copied()
            .filter(|t| !included.contains(t))
            .collect();
        Block::new(self.tip, self.id, slot, payload)
    }

    pub fn handle(&mut self, msg: Msg, ctx: &Ctx) {
        if self.halted {
            return;
        }
        match msg {
            Msg::Block(b) => self.on_block(b, ctx),
            Msg::Inject(tx) => {
                self.events.injected.push(tx);
                self.add_tx(tx);
                self.outbox.push(Msg::Tx(tx));
            }
            Msg::Tx(tx) => self.add_tx(tx),
            Msg::Proposal(v) => {
                if self.full {
                    let actions = self.gen_step(GenEvent::Proposal(v, ctx.now), ctx);
                    self.apply_gen(actions, ctx);
                }
            }
            Msg::Bft(m) => {
                if self.full {
                    let out = self.bft.handle(m);
                    self.apply_bft(out, ctx);
                }
            }
        }
    }

    fn add_tx(&mut self, tx: TxId) {
        if self.in_mempool.insert(tx) {
            self.mempool.push(tx);
        }
    }

    fn on_block(&mut self, block: Arc<Block>, ctx: &Ctx) {
        if self.tree.contains(&block.id) {
            return;
        }
        let Some(parent) = block.parent else { return };
        if !self.tree.contains(&parent) {
            self.orphans.entry(parent).or_default().push(block);
            return;
        }
        let mut stack = vec![block];
        while let Some(b) = stack.pop() {
            if self.tree.contains(&b.id) || !validate_block(&b, &self.tree, ctx.chain, ctx.tape) {
                continue;
            }
            let id = b.id;
            if self.tree.insert(b).is_err() {
                continue;
            }
            self.consider_tip(id);
            if let Some(kids) = self.orphans.remove(&id) {
                stack.extend(kids);
            }
        }
        if self.known_cps < self.decisions.len() {
            self.refresh_checkpoints();
        }
    }

    fn consider_tip(&mut self, id: BlockId) {
        let h = self.tree.height(&id).expect("inserted");
        let tip_h = self.tree.height(&self.tip).expect("tip in tree");
        if (h > tip_h || (h == tip_h && id < self.tip)) && self.tree.is_ancestor_or_self(&self.anchor, &id) {
            self.tip = id;
        }
    }

    /// Extends the usable checkpoint prefix and re-anchors the fork choice.
    fn refresh_checkpoints(&mut self) {
        while self.known_cps < self.decisions.len() {
            match self.decisions[self.known_cps].block {
                Some(b) if !self.tree.contains(&b) => break,
                _ => self.known_cps += 1,
            }
        }
        match checkpoint_anchor(&self.tree, &self.decisions[..self.known_cps]) {
            Ok(a) => {
                if a != self.anchor {
                    self.anchor = a;
                    if !self.tree.is_ancestor_or_self(&a, &self.tip) {
                        self.tip = best_in_subtree(&self.tree, &a);
                    }
                }
            }
            Err(ChainError::ConflictingCheckpoints { a, b }) => {
                self.halt(format!("conflicting checkpoints {} and {}", a.short_hex(), b.short_hex()))
            }
            Err(e) => self.halt(e.to_string()),
        }
    }

    fn gen_step(&mut self, event: GenEvent, ctx: &Ctx) -> Vec<GenAction> {
        let view = ChainView {
            tree: &self.tree,
            checkpoints: &self.decisions[..self.known_cps],
            tip: self.tip,
            k_cp: ctx.chain.k_cp,
        };
        generator_step(&mut self.gen, event, &view, ctx.gadget, ctx.tape)
    }

    fn apply_gen(&mut self, actions: Vec<GenAction>, ctx: &Ctx) {
        for a in actions {
            if self.halted {
                return;
            }
            match a {
                GenAction::BroadcastProposal(v) => {
                    if !self.boycott {
                        self.events.votes.push(v.clone());
                        self.outbox.push(Msg::Proposal(v));
                    }
                }
                GenAction::SubmitVote(v) => {
                    self.events.votes.push(v.clone());
                    let out = self.bft.submit(v);
                    self.apply_bft(out, ctx);
                }
            }
        }
        self.sync_pause(ctx);
    }

    /// The BFT clock stands still while the generator waits out `T_checkpoint`.
    fn sync_pause(&mut self, ctx: &Ctx) {
        if self.halted {
            return;
        }
        let want = self.gen.is_waiting_checkpoint();
        if self.bft.is_paused() != want {
            let out = self.bft.set_paused(want);
            self.apply_bft(out, ctx);
        }
    }

    fn apply_bft(&mut self, out: BftOutput, ctx: &Ctx) {
        for m in out.broadcasts {
            match &m {
                BftMsg::Vote { .. } => self.events.bft_votes += 1,
                BftMsg::Propose { block, .. } if self.boycott && block.proposer == self.id => continue,
                _ => {}
            }
            self.outbox.push(Msg::Bft(m));
        }
        if let Some((a, b)) = out.conflict {
            self.halt(format!("conflicting BFT finalization {} and {}", a.short_hex(), b.short_hex()));
            return;
        }
        for e in out.finalized {
            if self.halted {
                return;
            }
            self.transcript.push(e.payload.clone());
            self.events.finalized.push(e.payload.clone());
            if let Some(d) = interpreter_step(&mut self.interp, &e.payload, ctx.gadget, ctx.now) {
                self.on_decision(d, ctx);
            }
        }
    }

    fn on_decision(&mut self, d: CheckpointDecision, ctx: &Ctx) {
        self.decisions.push(d);
        self.events.decisions.push(d);
        self.refresh_checkpoints();
        if self.halted {
            return;
        }
        let actions = self.gen_step(GenEvent::Decision(d), ctx);
        self.apply_gen(actions, ctx);
    }
}
