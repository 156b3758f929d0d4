use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crypto::Hasher;
use crate::types::{BlockId, NodeId, Slot, TxId};

use super::ChainError;

/// Longest-chain block. The id is the hash of `(parent, producer, slot, payload)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub parent: Option<BlockId>,
    pub producer: NodeId,
    pub slot: Slot,
    pub payload: Vec<TxId>,
}

impl Block {
    pub fn genesis() -> Block {
        let producer = NodeId(0);
        Block {
            id: Self::compute_id(None, producer, 0, &[]),
            parent: None,
            producer,
            slot: 0,
            payload: Vec::new(),
        }
    }

    pub fn new(parent: BlockId, producer: NodeId, slot: Slot, payload: Vec<TxId>) -> Block {
        Block {
            id: Self::compute_id(Some(parent), producer, slot, &payload),
            parent: Some(parent),
            producer,
            slot,
            payload,
        }
    }

    pub fn compute_id(
        parent: Option<BlockId>,
        producer: NodeId,
        slot: Slot,
        payload: &[TxId],
    ) -> BlockId {
        let mut h = Hasher::new("accgadget/block");
        h = match parent {
            Some(p) => h.u64(1).digest(&p),
            None => h.u64(0),
        };
        h = h.u64(producer.0 as u64).u64(slot).u64(payload.len() as u64);
        for tx in payload {
            h = h.u64(tx.0);
        }
        h.finish()
    }

    pub fn id_is_valid(&self) -> bool {
        self.id == Self::compute_id(self.parent, self.producer, self.slot, &self.payload)
    }

    pub fn is_genesis(&self) -> bool {
        self.parent.is_none()
    }
}

#[derive(Clone, Debug)]
struct Entry {
    block: Arc<Block>,
    parent: Option<u32>,
    skip: Option<u32>,
    height: u32,
    children: Vec<u32>,
}

/// Rooted block tree. Every stored block's parent is stored, so the tree is
/// always connected to genesis. Ancestor queries use a skip pointer per entry
/// and run in logarithmic time.
#[derive(Clone, Debug)]
pub struct BlockTree {
    entries: Vec<Entry>,
    index: HashMap<BlockId, u32>,
}

impl Default for BlockTree {
    fn default() -> Self {
        Self::new()
    }
}

fn invert_lowest_one(n: u32) -> u32 {
    n & n.wrapping_sub(1)
}

fn skip_height(height: u32) -> u32 {
    if height < 2 {
        0
    } else if height & 1 == 1 {
        invert_lowest_one(invert_lowest_one(height - 1)) + 1
    } else {
        invert_lowest_one(height)
    }
}

impl BlockTree {
    pub fn new() -> Self {
        let genesis = Arc::new(Block::genesis());
        let mut index = HashMap::new();
        index.insert(genesis.id, 0);
        BlockTree {
            entries: vec![Entry {
                block: genesis,
                parent: None,
                skip: None,
                height: 0,
                children: Vec::new(),
            }],
            index,
        }
    }

    pub fn genesis_id(&self) -> BlockId {
        self.entries[0].block.id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, id: &BlockId) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &BlockId) -> Option<&Arc<Block>> {
        self.index.get(id).map(|&i| &self.entries[i as usize].block)
    }

    pub fn height(&self, id: &BlockId) -> Option<u64> {
        self.index
            .get(id)
            .map(|&i| self.entries[i as usize].height as u64)
    }

    pub fn children(&self, id: &BlockId) -> impl Iterator<Item = &Arc<Block>> + '_ {
        let kids: &[u32] = match self.index.get(id) {
            Some(&i) => &self.entries[i as usize].children,
            None => &[],
        };
        kids.iter().map(move |&c| &self.entries[c as usize].block)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Arc<Block>> + '_ {
        self.entries.iter().map(|e| &e.block)
    }

    /// Inserts a block whose parent is already present. Returns `false` if
    /// the block was already known.
    pub fn insert(&mut self, block: Arc<Block>) -> Result<bool, ChainError> {
        if self.index.contains_key(&block.id) {
            return Ok(false);
        }
        let parent_id = block.parent.ok_or(ChainError::SecondGenesis)?;
        let &pi = self
            .index
            .get(&parent_id)
            .ok_or(ChainError::MissingParent(parent_id))?;
        let parent = &self.entries[pi as usize];
        if parent.block.slot >= block.slot {
            return Err(ChainError::SlotOrder {
                parent: parent.block.slot,
                child: block.slot,
            });
        }
        let height = parent.height + 1;
        let skip = self.ancestor_index(pi, skip_height(height));
        let idx = self.entries.len() as u32;
        self.index.insert(block.id, idx);
        self.entries[pi as usize].children.push(idx);
        self.entries.push(Entry {
            block,
            parent: Some(pi),
            skip: Some(skip),
            height,
            children: Vec::new(),
        });
        Ok(true)
    }

    fn ancestor_index(&self, from: u32, target: u32) -> u32 {
        let mut walk = from;
        let mut h = self.entries[walk as usize].height;
        debug_assert!(target <= h);
        while h > target {
            let e = &self.entries[walk as usize];
            let hs = skip_height(h);
            let hs_prev = skip_height(h - 1);
            match e.skip {
                Some(s)
                    if hs == target
                        || (hs > target && !(hs_prev + 2 < hs && hs_prev >= target)) =>
                {
                    walk = s;
                    h = hs;
                }
                _ => {
                    walk = e.parent.expect("non-genesis entry has a parent");
                    h -= 1;
                }
            }
        }
        walk
    }

    /// Ancestor of `id` at `height` (the block itself when heights match).
    pub fn ancestor_at(&self, id: &BlockId, height: u64) -> Option<BlockId> {
        let &i = self.index.get(id)?;
        if height > self.entries[i as usize].height as u64 {
            return None;
        }
        let a = self.ancestor_index(i, height as u32);
        Some(self.entries[a as usize].block.id)
    }

    /// True iff `a` equals `b` or is an ancestor of `b`.
    pub fn is_ancestor_or_self(&self, a: &BlockId, b: &BlockId) -> bool {
        let (Some(&ia), Some(&ib)) = (self.index.get(a), self.index.get(b)) else {
            return false;
        };
        let ha = self.entries[ia as usize].height;
        if ha > self.entries[ib as usize].height {
            return false;
        }
        self.ancestor_index(ib, ha) == ia
    }

    /// Blocks from genesis to `tip`, inclusive.
    pub fn chain_to(&self, tip: &BlockId) -> Option<Vec<Arc<Block>>> {
        let &mut_start = self.index.get(tip)?;
        let mut out = Vec::with_capacity(self.entries[mut_start as usize].height as usize + 1);
        let mut cur = Some(mut_start);
        while let Some(i) = cur {
            let e = &self.entries[i as usize];
            out.push(e.block.clone());
            cur = e.parent;
        }
        out.reverse();
        Some(out)
    }

    /// Every block in the subtree rooted at `root`, in DFS pre-order.
    pub fn subtree(&self, root: &BlockId) -> Vec<&Arc<Block>> {
        let mut out = Vec::new();
        let Some(&r) = self.index.get(root) else {
            return out;
        };
        let mut stack = vec![r];
        while let Some(i) = stack.pop() {
            let e = &self.entries[i as usize];
            out.push(&e.block);
            stack.extend(e.children.iter().rev());
        }
        out
    }
}
