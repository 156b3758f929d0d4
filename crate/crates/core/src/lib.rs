//! Accountability gadgets over a checkpoint-respecting longest-chain protocol.

pub mod adjudication;
pub mod bft;
pub mod chain;
pub mod check;
pub mod crypto;
pub mod gadget;
pub mod ledger;
pub mod sim;
pub mod types;

pub use chain::{Block, BlockTree, ChainError, ChainParams};
pub use gadget::{CheckpointDecision, CheckpointVote, GadgetParams, QuorumPreset, VoteKind};
pub use ledger::{conflicting, Ledger};
pub use types::{BlockId, Digest, NodeId, Slot, TxId};
pub use sim::{run, ConfigError, Scenario, Simulation, Strategy, Trace};
pub use check::{check_all, measure_metrics, CheckResult, Metrics, SecurityReport};
