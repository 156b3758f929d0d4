use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::chain::{Block, BlockTree};
use crate::crypto::Hasher;
use crate::gadget::{CheckpointVote, VoteKind};
use crate::types::{BlockId, Digest, NodeId, Slot, TxId};

/// One honest node's ledgers at the end of one slot. Blocks are indices into
/// [`Trace::blocks`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub slot: Slot,
    pub node: NodeId,
    pub awake: bool,
    /// Tip of the checkpoint-respecting longest chain.
    pub tip: u32,
    /// Last block of `LOG_da`.
    pub da: u32,
    /// Last block of `LOG_acc`.
    pub acc: u32,
    /// Number of entries in `LOG_bft`.
    pub bft_len: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub slot: Slot,
    pub author: NodeId,
    pub kind: VoteKind,
    pub iteration: u64,
    pub block: Option<BlockId>,
}

/// A decision as first observed by one honest node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub slot: Slot,
    pub node: NodeId,
    pub iteration: u64,
    pub block: Option<BlockId>,
}

/// A transaction handed to an awake honest node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub slot: Slot,
    pub node: NodeId,
    pub tx: TxId,
}

/// A checkpoint vote submitted to the BFT engine, and when every honest
/// node had it in `LOG_bft`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BftLatency {
    pub iteration: u64,
    pub submitted: Slot,
    pub finalized_all: Option<Slot>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alarm {
    pub slot: Slot,
    pub node: NodeId,
    pub reason: String,
}

/// Complete record of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub scenario: Scenario,
    /// Every block produced, withheld ones included, genesis first. Parents
    /// precede children.
    pub blocks: Vec<Block>,
    /// Slot-major, node-minor; one row per honest node per slot.
    pub rows: Vec<LedgerRow>,
    pub votes: Vec<VoteRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub txs: Vec<TxRecord>,
    /// Distinct checkpoint votes that reached some honest `LOG_bft`.
    pub payloads: Vec<CheckpointVote>,
    /// Final `LOG_bft` per honest node as indices into `payloads`.
    pub bft_logs: BTreeMap<NodeId, Vec<u32>>,
    pub bft_latencies: Vec<BftLatency>,
    pub bft_votes_cast: u64,
    pub alarms: Vec<Alarm>,
}

/// Lookup structures derived from a trace.
pub struct TraceIndex {
    pub tree: BlockTree,
    pub heights: Vec<u64>,
    pub index: HashMap<BlockId, u32>,
    /// Honest nodes in row order.
    pub nodes: Vec<NodeId>,
}

impl TraceIndex {
    pub fn height(&self, i: u32) -> u64 {
        self.heights[i as usize]
    }

    pub fn id(&self, trace: &Trace, i: u32) -> BlockId {
        trace.blocks[i as usize].id
    }

    /// Whether block `a` is on the chain ending at block `b`.
    pub fn is_ancestor_or_self(&self, trace: &Trace, a: u32, b: u32) -> bool {
        self.tree
            .is_ancestor_or_self(&trace.blocks[a as usize].id, &trace.blocks[b as usize].id)
    }
}

impl Trace {
    pub fn new(scenario: Scenario) -> Self {
        Trace {
            scenario,
            blocks: vec![Block::genesis()],
            rows: Vec::new(),
            votes: Vec::new(),
            decisions: Vec::new(),
            txs: Vec::new(),
            payloads: Vec::new(),
            bft_logs: BTreeMap::new(),
            bft_latencies: Vec::new(),
            bft_votes_cast: 0,
            alarms: Vec::new(),
        }
    }

    /// Honest node ids in row order.
    pub fn recorded_nodes(&self) -> Vec<NodeId> {
        self.scenario.honest_nodes()
    }

    pub fn index(&self) -> TraceIndex {
        let mut tree = BlockTree::new();
        let mut index = HashMap::with_capacity(self.blocks.len());
        let mut heights = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                tree.insert(Arc::new(b.clone())).expect("trace blocks are well formed");
            }
            index.insert(b.id, i as u32);
            heights.push(tree.height(&b.id).expect("just inserted"));
        }
        TraceIndex {
            tree,
            heights,
            index,
            nodes: self.recorded_nodes(),
        }
    }

    /// Rows of one slot, in node order.
    pub fn rows_at(&self, slot: Slot) -> &[LedgerRow] {
        let r = self.recorded_nodes().len();
        let start = slot as usize * r;
        if r == 0 || start >= self.rows.len() {
            return &[];
        }
        &self.rows[start..start + r]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Hash over every CSV stream and the JSON trace.
    pub fn digest(&self) -> Digest {
        let mut buf = Vec::new();
        self.write_ledgers_csv(&mut buf).expect("in-memory write");
        self.write_votes_csv(&mut buf).expect("in-memory write");
        self.write_decisions_csv(&mut buf).expect("in-memory write");
        Hasher::new("accgadget/trace")
            .bytes(&buf)
            .bytes(self.to_json().as_bytes())
            .finish()
    }

    fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
        csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w)
    }

    /// `slot,node,log_da_len,log_acc_len,log_da_digest,log_acc_digest`.
    /// Lengths count blocks after genesis; a digest is the first eight
    /// bytes of the id of the ledger's last block.
    pub fn write_ledgers_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let idx = self.index();
        let mut out = Self::csv_writer(w);
        out.write_record(["slot", "node", "log_da_len", "log_acc_len", "log_da_digest", "log_acc_digest"])?;
        for r in &self.rows {
            out.write_record([
                r.slot.to_string(),
                r.node.0.to_string(),
                idx.height(r.da).to_string(),
                idx.height(r.acc).to_string(),
                self.blocks[r.da as usize].id.short_hex(),
                self.blocks[r.acc as usize].id.short_hex(),
            ])?;
        }
        out.flush()
    }

    /// `slot,author,kind,iteration,block`; the block column is empty for rejects.
    pub fn write_votes_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut out = Self::csv_writer(w);
        out.write_record(["slot", "author", "kind", "iteration", "block"])?;
        for v in &self.votes {
            out.write_record([
                v.slot.to_string(),
                v.author.0.to_string(),
                v.kind.as_str().to_string(),
                v.iteration.to_string(),
                v.block.map(|b| b.short_hex()).unwrap_or_default(),
            ])?;
        }
        out.flush()
    }

    /// `iteration,block_or_bot,first_observed_slot_per_node`, one row per
    /// distinct (iteration, outcome); the last column lists `node:slot`
    /// pairs joined by `;`.
    pub fn write_decisions_csv<W: Write>(&self, w: W) -> io::Result<()> {
        type Seen = Vec<(NodeId, Slot)>;
        let mut groups: BTreeMap<(u64, Option<BlockId>), Seen> = BTreeMap::new();
        for d in &self.decisions {
            groups.entry((d.iteration, d.block)).or_default().push((d.node, d.slot));
        }
        let mut out = Self::csv_writer(w);
        out.write_record(["iteration", "block_or_bot", "first_observed_slot_per_node"])?;
        for ((it, block), mut seen) in groups {
            seen.sort();
            let cell = seen
                .iter()
                .map(|(n, s)| format!("{}:{}", n.0, s))
                .collect::<Vec<_>>()
                .join(";");
            out.write_record([
                it.to_string(),
                block.map(|b| b.short_hex()).unwrap_or_else(|| "bot".into()),
                cell,
            ])?;
        }
        out.flush()
    }

    /// Writes `trace.json`, `ledgers.csv`, `votes.csv` and `decisions.csv`.
    pub fn write_artifacts(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trace.json"), self.to_json())?;
        self.write_ledgers_csv(std::fs::File::create(dir.join("ledgers.csv"))?)?;
        self.write_votes_csv(std::fs::File::create(dir.join("votes.csv"))?)?;
        self.write_decisions_csv(std::fs::File::create(dir.join("decisions.csv"))?)?;
        Ok(())
    }
}
