//! Deterministic slot-driven simulator.
//!
//! Every node runs as one or more instances. Messages are delivered at slot
//! granularity according to the scenario's strategy; within a slot they are
//! processed blocks first, then transactions, checkpoint proposals and BFT
//! traffic, each class in send order.

mod adversary;
mod node;
pub mod scenario;
mod trace;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

pub use scenario::{ConfigError, Protocol, RandomSleep, Scenario, Strategy, TxInjection};
pub use trace::{Alarm, BftLatency, DecisionRecord, LedgerRow, Trace, TraceIndex, TxRecord, VoteRecord};

use crate::adjudication::{Evidence, LedgerKind};
use crate::bft::BftNode;
use crate::chain::{Block, ChainParams};
use crate::crypto::RandomTape;
use crate::gadget::GadgetParams;
use crate::ledger::Ledger;
use crate::types::{BlockId, Digest, NodeId, Slot};
use adversary::SelfishPool;
use node::{Ctx, Msg, Node};

struct Envelope {
    to: usize,
    msg: Msg,
}

struct Instance {
    node: Node,
    /// Communication domain. Instances in different worlds only talk when
    /// the strategy allows it.
    world: u8,
    adversarial: bool,
    recorded: bool,
    /// Messages that arrived while the node slept.
    asleep_queue: Vec<(u64, Envelope)>,
}

/// Runs a scenario to its horizon.
pub fn run(scenario: &Scenario) -> Result<Trace, ConfigError> {
    let mut sim = Simulation::new(scenario.clone())?;
    sim.run_to_end();
    Ok(sim.into_trace())
}

pub struct Simulation {
    sc: Scenario,
    chain: ChainParams,
    gadget: GadgetParams,
    tape: RandomTape,
    awake: Vec<Vec<bool>>,
    instances: Vec<Instance>,
    pool: Option<SelfishPool>,
    /// First adversarial instance; its checkpoints steer the selfish pool.
    pool_view: Option<usize>,
    txs: Vec<TxInjection>,
    next_tx: usize,
    future: BTreeMap<Slot, Vec<(u64, Envelope)>>,
    current: BTreeMap<(u8, u64), Envelope>,
    seq: u64,
    now: Slot,
    trace: Trace,
    block_index: HashMap<BlockId, u32>,
    payload_index: HashMap<Digest, u32>,
    /// Per payload: position in `bft_latencies` and honest nodes that finalized it.
    latency: HashMap<Digest, (usize, u32)>,
    seen_votes: std::collections::HashSet<Digest>,
    recorded_count: u32,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, ConfigError> {
        let sc = scenario.resolve()?;
        let chain = sc.chain_params();
        let gadget = sc.gadget_params();
        let tape = RandomTape::new(sc.seed);
        let full = sc.protocol == scenario::Protocol::Full;
        let bft_cfg = sc.bft_config();
        let (selfish, boycott) = match sc.strategy {
            Strategy::SelfishMine { leader_boycott } => (true, leader_boycott),
            _ => (false, false),
        };
        let mut worlds = vec![0u8; sc.n as usize];
        match &sc.strategy {
            Strategy::Equivocate { groups } => {
                let [_, g2] = groups.as_ref().expect("resolved");
                for (i, w) in worlds.iter_mut().enumerate() {
                    *w = if g2.contains(&(i as u32)) { 2 } else { 1 };
                }
            }
            Strategy::SplitWorld { .. } => {
                let half = sc.n / 2;
                for (i, w) in worlds.iter_mut().enumerate() {
                    let i = i as u32;
                    *w = if i < half {
                        1
                    } else if i < 2 * half {
                        2
                    } else {
                        0
                    };
                }
            }
            _ => {}
        }
        let make = |id: u32, world: u8| {
            let nid = NodeId(id);
            let adversarial = sc.is_adversarial(nid);
            let bft = BftNode::new(nid, bft_cfg.clone(), tape);
            let produces = !(selfish && adversarial);
            let boy = selfish && adversarial && boycott;
            Instance {
                node: Node::new(nid, sc.n, bft, full, produces, boy),
                world,
                adversarial,
                recorded: !adversarial,
                asleep_queue: Vec::new(),
            }
        };
        let mut instances: Vec<Instance> = (0..sc.n).map(|i| make(i, worlds[i as usize])).collect();
        if matches!(sc.strategy, Strategy::Equivocate { .. }) {
            for &a in &sc.adversarial {
                instances[a as usize].world = 1;
                instances.push(make(a, 2));
            }
        }
        let pool = (selfish && !sc.adversarial.is_empty())
            .then(|| SelfishPool::new(sc.adversarial.iter().copied().map(NodeId).collect()));
        let pool_view = pool.as_ref().map(|_| sc.adversarial[0] as usize);
        let recorded_count = instances.iter().filter(|i| i.recorded).count() as u32;
        let genesis = Block::genesis();
        let trace = Trace::new(sc.clone());
        Ok(Simulation {
            awake: sc.awake_table(),
            txs: sc.tx_schedule(),
            chain,
            gadget,
            tape,
            instances,
            pool,
            pool_view,
            next_tx: 0,
            future: BTreeMap::new(),
            current: BTreeMap::new(),
            seq: 0,
            now: 0,
            trace,
            block_index: HashMap::from([(genesis.id, 0)]),
            payload_index: HashMap::new(),
            latency: HashMap::new(),
            seen_votes: Default::default(),
            recorded_count,
            sc,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.sc
    }

    /// Next slot to execute.
    pub fn now(&self) -> Slot {
        self.now
    }

    pub fn is_done(&self) -> bool {
        self.now >= self.sc.horizon
    }

    fn is_awake(&self, inst: usize, slot: Slot) -> bool {
        let id = self.instances[inst].node.id.index();
        self.awake.get(slot as usize).is_none_or(|row| row[id])
    }

    /// Slot at which a message from `from` reaches `to`, or `None` if it never does.
    fn delivery(&self, from: usize, to: usize) -> Option<Slot> {
        let (a, b) = (&self.instances[from], &self.instances[to]);
        let now = self.now;
        let delta = self.sc.delta;
        if from == to {
            return Some(now);
        }
        let synced = |t: Slot| if t >= self.sc.gst { t + delta } else { self.sc.gst + delta };
        match self.sc.strategy {
            Strategy::SplitWorld { .. } => (a.world == b.world && a.world != 0).then_some(now + delta),
            Strategy::Equivocate { .. } => {
                if a.world == b.world {
                    Some(if a.adversarial && b.adversarial { now } else { now + delta })
                } else if a.adversarial || b.adversarial {
                    None
                } else {
                    Some(synced(now))
                }
            }
            _ => {
                if a.adversarial && b.adversarial {
                    Some(now)
                } else {
                    Some(synced(now))
                }
            }
        }
    }

    fn send(&mut self, from: usize, msg: Msg) {
        if let (Some(pool), Msg::Block(b)) = (self.pool.as_mut(), &msg) {
            if !self.instances[from].adversarial {
                pool.observe(b);
            }
        }
        for to in 0..self.instances.len() {
            let Some(at) = self.delivery(from, to) else { continue };
            let env = Envelope {
                to,
                msg: msg.clone(),
            };
            self.seq += 1;
            if at <= self.now {
                self.current.insert((env.msg.priority(), self.seq), env);
            } else {
                self.future.entry(at).or_default().push((self.seq, env));
            }
        }
    }

    fn flush(&mut self, inst: usize) {
        let out = std::mem::take(&mut self.instances[inst].node.outbox);
        for m in out {
            self.send(inst, m);
        }
    }

    fn publish(&mut self, blocks: Vec<Arc<Block>>) {
        for b in blocks {
            let from = b.producer.index();
            self.send(from, Msg::Block(b));
        }
    }

    fn pool_cps(&self) -> Vec<crate::gadget::CheckpointDecision> {
        self.pool_view
            .map(|i| self.instances[i].node.checkpoints().to_vec())
            .unwrap_or_default()
    }

    /// Executes one slot.
    pub fn step(&mut self) {
        if self.is_done() {
            return;
        }
        let now = self.now;
        let chain = self.chain.clone();
        let gadget = self.gadget.clone();
        let tape = self.tape;
        let ctx = Ctx {
            chain: &chain,
            gadget: &gadget,
            tape: &tape,
            now,
        };

        for i in 0..self.instances.len() {
            if self.is_awake(i, now) && !self.instances[i].asleep_queue.is_empty() {
                for (seq, env) in std::mem::take(&mut self.instances[i].asleep_queue) {
                    self.current.insert((env.msg.priority(), seq), env);
                }
            }
        }
        for (seq, env) in self.future.remove(&now).unwrap_or_default() {
            self.current.insert((env.msg.priority(), seq), env);
        }
        while self.next_tx < self.txs.len() && self.txs[self.next_tx].slot <= now {
            let t = self.txs[self.next_tx];
            self.next_tx += 1;
            let to = t.node as usize;
            self.seq += 1;
            let env = Envelope {
                to,
                msg: Msg::Inject(Scenario::tx_id(&t)),
            };
            self.current.insert((env.msg.priority(), self.seq), env);
        }

        if self.pool.is_some() {
            let cps = self.pool_cps();
            let pool = self.pool.as_mut().expect("checked");
            let out = pool.mine(now, chain.p, &tape, &cps);
            let mined = pool.take_mined();
            for b in &mined {
                self.record_block(b);
            }
            self.publish(out);
        }

        for i in 0..self.instances.len() {
            if !self.is_awake(i, now) {
                continue;
            }
            self.instances[i].node.tick(&ctx);
            self.flush(i);
        }

        loop {
            while let Some((_, env)) = self.current.pop_first() {
                let to = env.to;
                if !self.is_awake(to, now) {
                    self.seq += 1;
                    self.instances[to].asleep_queue.push((self.seq, env));
                    continue;
                }
                self.instances[to].node.handle(env.msg, &ctx);
                self.flush(to);
            }
            if self.pool.is_none() {
                break;
            }
            let cps = self.pool_cps();
            let out = self.pool.as_mut().expect("checked").react(&cps);
            if out.is_empty() {
                break;
            }
            self.publish(out);
        }

        self.collect_events();
        self.snapshot();
        self.now += 1;
    }

    pub fn run_to_end(&mut self) {
        while !self.is_done() {
            self.step();
        }
    }

    fn record_block(&mut self, b: &Block) {
        if !self.block_index.contains_key(&b.id) {
            self.block_index.insert(b.id, self.trace.blocks.len() as u32);
            self.trace.blocks.push(b.clone());
        }
    }

    fn intern_payload(&mut self, v: &crate::gadget::CheckpointVote) -> u32 {
        let id = v.payload_id();
        if let Some(&i) = self.payload_index.get(&id) {
            return i;
        }
        let i = self.trace.payloads.len() as u32;
        self.trace.payloads.push(v.clone());
        self.payload_index.insert(id, i);
        i
    }

    fn collect_events(&mut self) {
        let now = self.now;
        for i in 0..self.instances.len() {
            let ev = std::mem::take(&mut self.instances[i].node.events);
            let id = self.instances[i].node.id;
            let recorded = self.instances[i].recorded;
            for b in &ev.blocks {
                self.record_block(b);
            }
            self.trace.bft_votes_cast += ev.bft_votes;
            for v in &ev.votes {
                if self.seen_votes.insert(v.payload_id()) {
                    self.trace.votes.push(VoteRecord {
                        slot: now,
                        author: v.author,
                        kind: v.kind,
                        iteration: v.iteration,
                        block: v.block,
                    });
                }
                if recorded && v.kind != crate::gadget::VoteKind::Propose {
                    let pid = v.payload_id();
                    if !self.latency.contains_key(&pid) {
                        self.latency.insert(pid, (self.trace.bft_latencies.len(), 0));
                        self.trace.bft_latencies.push(BftLatency {
                            iteration: v.iteration,
                            submitted: now,
                            finalized_all: None,
                        });
                    }
                }
            }
            if !recorded {
                continue;
            }
            for v in &ev.finalized {
                self.intern_payload(v);
                if let Some((pos, count)) = self.latency.get_mut(&v.payload_id()) {
                    *count += 1;
                    if *count == self.recorded_count {
                        self.trace.bft_latencies[*pos].finalized_all = Some(now);
                    }
                }
            }
            for d in &ev.decisions {
                self.trace.decisions.push(DecisionRecord {
                    slot: now,
                    node: id,
                    iteration: d.iteration,
                    block: d.block,
                });
            }
            for tx in &ev.injected {
                self.trace.txs.push(TxRecord { slot: now, node: id, tx: *tx });
            }
            if let Some(reason) = ev.alarm {
                self.trace.alarms.push(Alarm { slot: now, node: id, reason });
            }
        }
    }

    fn snapshot(&mut self) {
        let k = self.chain.k;
        for i in 0..self.instances.len() {
            if !self.instances[i].recorded {
                continue;
            }
            let awake = self.is_awake(i, self.now);
            let node = &self.instances[i].node;
            let idx = |b: &BlockId| self.block_index[b];
            let row = LedgerRow {
                slot: self.now,
                node: node.id,
                awake,
                tip: idx(&node.tip),
                da: idx(&node.da_tip(k)),
                acc: idx(&node.anchor),
                bft_len: node.bft.log().len() as u32,
            };
            self.trace.rows.push(row);
        }
    }

    /// Primary instance of `node`.
    fn instance(&self, node: NodeId) -> &Node {
        &self.instances[node.index()].node
    }

    pub fn ledger(&self, node: NodeId, kind: LedgerKind) -> Ledger {
        let n = self.instance(node);
        match kind {
            LedgerKind::Bft => Ledger::default(),
            _ => n.ledger(kind, self.chain.k),
        }
    }

    /// Evidence `node` would hand to the adjudicator now.
    pub fn evidence(&self, node: NodeId, kind: LedgerKind) -> Evidence {
        self.instance(node).evidence(self.now, kind, self.chain.k)
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(mut self) -> Trace {
        for i in 0..self.instances.len() {
            if !self.instances[i].recorded {
                continue;
            }
            let id = self.instances[i].node.id;
            let transcript = self.instances[i].node.transcript.clone();
            let log = transcript.iter().map(|v| self.intern_payload(v)).collect();
            self.trace.bft_logs.insert(id, log);
        }
        self.trace
    }
}
