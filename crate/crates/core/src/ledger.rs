//! Transaction ledgers and the prefix relation between them.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::types::TxId;

/// Totally ordered transaction sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ledger(pub Vec<TxId>);

impl Ledger {
    pub fn new() -> Self {
        Ledger(Vec::new())
    }

    /// Flattens payloads in order, keeping the first occurrence of each transaction.
    pub fn from_payloads<'a, I>(payloads: I) -> Self
    where
        I: IntoIterator<Item = &'a [TxId]>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for payload in payloads {
            for tx in payload {
                if seen.insert(*tx) {
                    out.push(*tx);
                }
            }
        }
        Ledger(out)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, tx: TxId) -> bool {
        self.0.contains(&tx)
    }

    pub fn is_prefix_of(&self, other: &Ledger) -> bool {
        self.0.len() <= other.0.len() && self.0[..] == other.0[..self.0.len()]
    }
}

/// True iff neither ledger is a prefix of the other.
pub fn conflicting(l1: &Ledger, l2: &Ledger) -> bool {
    !(l1.is_prefix_of(l2) || l2.is_prefix_of(l1))
}
