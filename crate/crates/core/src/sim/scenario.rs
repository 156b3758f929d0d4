use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bft::BftConfig;
use crate::chain::ChainParams;
use crate::crypto::{RandomTape, Stream};
use crate::gadget::{GadgetParams, QuorumPreset};
use crate::types::{NodeId, Slot, TxId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid scenario: {invariant}")]
pub struct ConfigError {
    pub invariant: String,
}

fn invalid(invariant: impl Into<String>) -> ConfigError {
    ConfigError {
        invariant: invariant.into(),
    }
}

/// Behaviour of the adversarial nodes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    /// Adversarial nodes follow the protocol.
    #[default]
    Honest,
    /// The adversarial nodes pool their lottery wins into one withheld chain
    /// and, with `leader_boycott`, never propose when they lead.
    SelfishMine {
        #[serde(default = "yes")]
        leader_boycott: bool,
    },
    /// Every adversarial node runs one honest replica per honest group. The
    /// groups cannot hear each other before GST and the replicas never talk
    /// across groups, so each group sees a complete but different execution.
    Equivocate {
        /// Two disjoint honest groups. Defaults to the lower and upper half
        /// of the honest nodes.
        #[serde(default)]
        groups: Option<[Vec<u32>; 2]>,
    },
    /// The four worlds of the dynamic-availability dilemma. `P` is the lower
    /// half of the nodes and `Q` the upper half. Worlds 1 and 2 keep `Q`,
    /// respectively `P`, asleep throughout. In worlds 3 and 4 everyone is
    /// awake, `Q`, respectively `P`, is adversarial, and no message crosses
    /// between the halves.
    SplitWorld { world: u8 },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Longest chain plus accountability gadget.
    #[default]
    Full,
    /// Longest chain alone; `LOG_acc` stays empty.
    LcOnly,
}

/// Random on/off schedules for the honest nodes, capped so that the
/// adversarial share of awake nodes never exceeds `max_adv_fraction`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSleep {
    pub max_adv_fraction: f64,
    /// Mean length of an awake spell, slots.
    pub mean_awake: u64,
    /// Mean length of an asleep spell, slots.
    pub mean_asleep: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxInjection {
    pub slot: Slot,
    pub node: u32,
    pub tx: u64,
}

fn d_delta() -> u64 {
    1
}
fn d_sigma() -> u64 {
    6
}
fn d_t_checkpoint() -> u64 {
    60
}
fn d_t_timeout() -> u64 {
    12
}
fn d_gat() -> Option<Slot> {
    Some(0)
}
fn d_tx_every() -> u64 {
    5
}
fn d_slot_seconds() -> f64 {
    1.0
}
fn d_epsilon() -> f64 {
    0.1
}

/// Everything a run depends on. Optional fields are filled by [`Scenario::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: u32,
    #[serde(default)]
    pub f: u32,
    /// Per-node per-slot lottery probability. Default `1 / (n (2Δ + 1))`.
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default = "d_delta")]
    pub delta: u64,
    #[serde(default = "d_sigma")]
    pub sigma: u64,
    /// Confirmation depth, default `sigma`.
    #[serde(default)]
    pub k: Option<u64>,
    /// Checkpoint proposal depth, default `sigma`.
    #[serde(default)]
    pub k_cp: Option<u64>,
    #[serde(default = "d_t_checkpoint")]
    pub t_checkpoint: u64,
    #[serde(default = "d_t_timeout")]
    pub t_timeout: u64,
    #[serde(default)]
    pub quorum_preset: QuorumPreset,
    #[serde(default)]
    pub q_accept: Option<u32>,
    #[serde(default)]
    pub q_reject: Option<u32>,
    /// BFT notarization quorum, default `max(n - f, n/2 + 1)`.
    #[serde(default)]
    pub q_bft: Option<u32>,
    #[serde(default)]
    pub gst: Slot,
    /// `null` means the honest nodes may sleep until the end.
    #[serde(default = "d_gat")]
    pub gat: Option<Slot>,
    #[serde(default)]
    pub adversarial: Vec<u32>,
    /// Per honest node, half-open `[from, to)` asleep intervals.
    #[serde(default)]
    pub sleep: BTreeMap<u32, Vec<[Slot; 2]>>,
    /// Expanded into `sleep` on resolution.
    #[serde(default)]
    pub random_sleep: Option<RandomSleep>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub txs: Vec<TxInjection>,
    /// Inject one transaction every this many slots into an honest node,
    /// round robin. Zero disables.
    #[serde(default = "d_tx_every")]
    pub tx_every: u64,
    pub horizon: Slot,
    #[serde(default)]
    pub seed: u64,
    /// Wall-clock seconds per slot, used only to report metrics in seconds.
    #[serde(default = "d_slot_seconds")]
    pub slot_seconds: f64,
    /// Window for growth and quality metrics, default `2Δ + 100`.
    #[serde(default)]
    pub growth_window: Option<u64>,
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    /// Liveness bound for `LOG_da`. Derived from the measured growth rate when absent.
    #[serde(default)]
    pub t_confirm_da: Option<u64>,
    /// Liveness bound for `LOG_acc`. Derived from the measured BFT latency when absent.
    #[serde(default)]
    pub t_confirm_acc: Option<u64>,
}

impl Scenario {
    /// A scenario with every optional field at its default.
    pub fn new(n: u32, horizon: Slot) -> Self {
        Scenario {
            n,
            f: 0,
            p: None,
            delta: d_delta(),
            sigma: d_sigma(),
            k: None,
            k_cp: None,
            t_checkpoint: d_t_checkpoint(),
            t_timeout: d_t_timeout(),
            quorum_preset: QuorumPreset::default(),
            q_accept: None,
            q_reject: None,
            q_bft: None,
            gst: 0,
            gat: d_gat(),
            adversarial: Vec::new(),
            sleep: BTreeMap::new(),
            random_sleep: None,
            strategy: Strategy::Honest,
            protocol: Protocol::Full,
            txs: Vec::new(),
            tx_every: d_tx_every(),
            horizon,
            seed: 0,
            slot_seconds: d_slot_seconds(),
            growth_window: None,
            epsilon: d_epsilon(),
            t_confirm_da: None,
            t_confirm_acc: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn is_resolved(&self) -> bool {
        self.p.is_some()
            && self.k.is_some()
            && self.k_cp.is_some()
            && self.q_accept.is_some()
            && self.q_reject.is_some()
            && self.q_bft.is_some()
            && self.growth_window.is_some()
            && self.random_sleep.is_none()
    }

    /// Fills every default, expands strategy-implied settings and random
    /// sleep, then validates.
    pub fn resolve(mut self) -> Result<Scenario, ConfigError> {
        if self.n == 0 {
            return Err(invalid("n >= 1"));
        }
        let n = self.n;
        self.p.get_or_insert(1.0 / (n as f64 * (2 * self.delta + 1) as f64));
        self.k.get_or_insert(self.sigma);
        self.k_cp.get_or_insert(self.sigma);
        let (qa, qr) = self.quorum_preset.thresholds(n, self.f.min(n));
        self.q_accept.get_or_insert(qa);
        self.q_reject.get_or_insert(qr);
        self.q_bft.get_or_insert(n.saturating_sub(self.f).max(n / 2 + 1));
        self.growth_window.get_or_insert(2 * self.delta + 100);

        if let Strategy::SplitWorld { world } = self.strategy {
            self.apply_split_world(world)?;
        }
        if let Strategy::Equivocate { groups: None } = &self.strategy {
            let honest: Vec<u32> = (0..n).filter(|i| !self.adversarial.contains(i)).collect();
            let half = honest.len() / 2;
            self.strategy = Strategy::Equivocate {
                groups: Some([honest[..half].to_vec(), honest[half..].to_vec()]),
            };
        }
        if let Some(rs) = self.random_sleep.take() {
            self.sleep = self.random_schedule(&rs)?;
            if self.gat.is_some_and(|g| g < self.horizon) {
                self.gat = None;
            }
        }
        self.adversarial.sort_unstable();
        self.adversarial.dedup();
        self.validate()?;
        Ok(self)
    }

    fn apply_split_world(&mut self, world: u8) -> Result<(), ConfigError> {
        if !(1..=4).contains(&world) {
            return Err(invalid("split_world world in 1..=4"));
        }
        if self.protocol != Protocol::LcOnly {
            return Err(invalid("split_world runs the lc_only protocol"));
        }
        let n = self.n;
        let half = n / 2;
        let p: Vec<u32> = (0..half).collect();
        let q: Vec<u32> = (half..2 * half).collect();
        let everyone_awake = 0..self.horizon + 1;
        let mut sleep = BTreeMap::new();
        if n % 2 == 1 {
            sleep.insert(n - 1, vec![[everyone_awake.start, everyone_awake.end]]);
        }
        match world {
            1 => q.iter().for_each(|&i| {
                sleep.insert(i, vec![[0, self.horizon + 1]]);
            }),
            2 => p.iter().for_each(|&i| {
                sleep.insert(i, vec![[0, self.horizon + 1]]);
            }),
            _ => {}
        }
        self.adversarial = match world {
            3 => q.clone(),
            4 => p.clone(),
            _ => Vec::new(),
        };
        self.f = self.f.max(self.adversarial.len() as u32);
        self.sleep = sleep;
        if !self.sleep.is_empty() {
            self.gat = None;
        }
        self.tx_every = 0;
        self.txs = p
            .iter()
            .map(|&node| TxInjection { slot: 1, node, tx: 1 })
            .chain(q.iter().map(|&node| TxInjection { slot: 1, node, tx: 2 }))
            .collect();
        Ok(())
    }

    fn random_schedule(&self, rs: &RandomSleep) -> Result<BTreeMap<u32, Vec<[Slot; 2]>>, ConfigError> {
        if !(rs.max_adv_fraction > 0.0 && rs.max_adv_fraction < 1.0) {
            return Err(invalid("random_sleep.max_adv_fraction in (0, 1)"));
        }
        if rs.mean_awake == 0 || rs.mean_asleep == 0 {
            return Err(invalid("random_sleep means >= 1"));
        }
        let tape = RandomTape::new(self.seed);
        let mut rng = ChaCha8Rng::from_seed(tape.rng_seed(Stream::Schedule));
        let adv: BTreeSet<u32> = self.adversarial.iter().copied().collect();
        let honest: Vec<u32> = (0..self.n).filter(|i| !adv.contains(i)).collect();
        let horizon = self.horizon as usize;
        let mut asleep = vec![vec![false; horizon]; honest.len()];
        for row in asleep.iter_mut() {
            let mut awake = rng.gen_bool(rs.mean_awake as f64 / (rs.mean_awake + rs.mean_asleep) as f64);
            let mut t = 0usize;
            while t < horizon {
                let mean = if awake { rs.mean_awake } else { rs.mean_asleep } as f64;
                let len = 1 + (-(1.0 - rng.gen::<f64>()).ln() * (mean - 1.0).max(0.0)).round() as usize;
                row[t..(t + len).min(horizon)].fill(!awake);
                t += len;
                awake = !awake;
            }
        }
        // Smallest honest awake count keeping a / (a + h) <= beta.
        let a = adv.len() as f64;
        let beta = rs.max_adv_fraction;
        let need = ((a * (1.0 - beta) / beta) - 1e-9).ceil().max(0.0) as usize;
        if need > honest.len() {
            return Err(invalid("random_sleep cap unreachable even with every honest node awake"));
        }
        for s in 0..horizon {
            let mut awake = asleep.iter().filter(|r| !r[s]).count();
            let mut i = 0;
            while awake < need {
                if asleep[i][s] {
                    asleep[i][s] = false;
                    awake += 1;
                }
                i += 1;
            }
        }
        let mut out = BTreeMap::new();
        for (row, &node) in asleep.iter().zip(&honest) {
            let mut spans = Vec::new();
            let mut s = 0;
            while s < horizon {
                if row[s] {
                    let start = s;
                    while s < horizon && row[s] {
                        s += 1;
                    }
                    spans.push([start as Slot, s as Slot]);
                } else {
                    s += 1;
                }
            }
            if !spans.is_empty() {
                out.insert(node, spans);
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.chain_params().validate().map_err(|e| invalid(e.0))?;
        self.gadget_params().validate(self.n).map_err(invalid)?;
        self.bft_config().validate().map_err(invalid)?;
        for &a in &self.adversarial {
            if a >= self.n {
                return Err(invalid(format!("adversarial node {a} < n")));
            }
        }
        let exempt = matches!(self.strategy, Strategy::Equivocate { .. } | Strategy::SplitWorld { .. });
        if !exempt && self.adversarial.len() as u32 > self.f {
            return Err(invalid(format!(
                "|adversarial| <= f (got {} > {})",
                self.adversarial.len(),
                self.f
            )));
        }
        for (&node, spans) in &self.sleep {
            if node >= self.n {
                return Err(invalid(format!("sleeping node {node} < n")));
            }
            if self.adversarial.contains(&node) {
                return Err(invalid(format!("only honest nodes sleep (node {node})")));
            }
            for [a, b] in spans {
                if a >= b {
                    return Err(invalid(format!("sleep interval [{a}, {b}) of node {node} is empty")));
                }
                if self.gat.is_some_and(|g| *b > g) {
                    return Err(invalid(format!(
                        "all honest nodes awake after GAT (node {node} sleeps until {b})"
                    )));
                }
            }
        }
        for t in &self.txs {
            if t.node >= self.n {
                return Err(invalid(format!("transaction target {} < n", t.node)));
            }
        }
        if let Strategy::Equivocate { groups: Some([g1, g2]) } = &self.strategy {
            let mut seen = BTreeSet::new();
            for &i in g1.iter().chain(g2) {
                if i >= self.n || self.adversarial.contains(&i) || !seen.insert(i) {
                    return Err(invalid("equivocate groups are disjoint sets of honest nodes"));
                }
            }
        }
        if self.slot_seconds.is_nan() || self.slot_seconds <= 0.0 {
            return Err(invalid("slot_seconds > 0"));
        }
        Ok(())
    }

    pub fn chain_params(&self) -> ChainParams {
        ChainParams {
            n: self.n,
            f: self.f,
            p: self.p.unwrap_or(0.0),
            delta: self.delta,
            k: self.k.unwrap_or(self.sigma),
            k_cp: self.k_cp.unwrap_or(self.sigma),
            sigma: self.sigma,
        }
    }

    pub fn gadget_params(&self) -> GadgetParams {
        let (qa, qr) = self.quorum_preset.thresholds(self.n, self.f.min(self.n));
        GadgetParams {
            t_checkpoint: self.t_checkpoint,
            t_timeout: self.t_timeout,
            q_accept: self.q_accept.unwrap_or(qa),
            q_reject: self.q_reject.unwrap_or(qr),
        }
    }

    pub fn q_bft(&self) -> u32 {
        self.q_bft
            .unwrap_or(self.n.saturating_sub(self.f).max(self.n / 2 + 1))
    }

    pub fn bft_config(&self) -> BftConfig {
        BftConfig::for_delta(self.n, self.q_bft(), self.delta)
    }

    pub fn is_adversarial(&self, node: NodeId) -> bool {
        self.adversarial.binary_search(&node.0).is_ok()
    }

    pub fn honest_nodes(&self) -> Vec<NodeId> {
        (0..self.n)
            .map(NodeId)
            .filter(|i| !self.is_adversarial(*i))
            .collect()
    }

    /// `max(GST, GAT)`, or `None` when GAT never comes.
    pub fn healing(&self) -> Option<Slot> {
        self.gat.map(|g| g.max(self.gst))
    }

    /// `awake[slot][node]` for slots `0..horizon`.
    pub fn awake_table(&self) -> Vec<Vec<bool>> {
        let mut t = vec![vec![true; self.n as usize]; self.horizon as usize];
        for (&node, spans) in &self.sleep {
            for [a, b] in spans {
                for s in *a..(*b).min(self.horizon) {
                    t[s as usize][node as usize] = false;
                }
            }
        }
        t
    }

    /// Explicit injections followed by the periodic schedule, sorted by slot.
    pub fn tx_schedule(&self) -> Vec<TxInjection> {
        let mut out = self.txs.clone();
        if self.tx_every > 0 {
            let honest = self.honest_nodes();
            let mut next_id = self.txs.iter().map(|t| t.tx + 1).max().unwrap_or(1);
            let mut i = 0;
            let mut slot = self.tx_every;
            while slot < self.horizon && !honest.is_empty() {
                out.push(TxInjection {
                    slot,
                    node: honest[i % honest.len()].0,
                    tx: next_id,
                });
                next_id += 1;
                i += 1;
                slot += self.tx_every;
            }
        }
        out.sort_by_key(|t| t.slot);
        out
    }

    pub fn tx_id(t: &TxInjection) -> TxId {
        TxId(t.tx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::from_json(r#"{"n": 20, "horizon": 600}"#)
            .unwrap()
            .resolve()
            .unwrap();
        assert!(s.is_resolved());
        assert_eq!(s.k, Some(6));
        assert_eq!(s.k_cp, Some(6));
        assert_eq!(s.q_accept, Some(14));
        assert_eq!(s.q_reject, Some(7));
        assert_eq!(s.q_bft, Some(20));
        assert_eq!(s.gat, Some(0));
        assert_eq!(s.growth_window, Some(102));
        let p = s.p.unwrap();
        assert!((p - 1.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_faults_rejected() {
        let mut s = Scenario::new(10, 10);
        s.f = 6;
        let e = s.resolve().unwrap_err();
        assert!(e.invariant.contains("f"), "{e}");
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        assert!(Scenario::from_json(r#"{"n": 4, "horizon": 1, "bogus": 3}"#).is_err());
    }

    #[test]
    fn adversaries_beyond_f_rejected() {
        let mut s = Scenario::new(10, 10);
        s.f = 1;
        s.adversarial = vec![1, 2];
        assert!(s.resolve().is_err());
    }

    #[test]
    fn sleeping_past_gat_rejected() {
        let mut s = Scenario::new(4, 100);
        s.gat = Some(10);
        s.sleep.insert(1, vec![[5, 20]]);
        assert!(s.resolve().is_err());
    }

    #[test]
    fn split_world_with_odd_n_sleeps_one_node() {
        let mut s = Scenario::new(21, 50);
        s.protocol = Protocol::LcOnly;
        s.strategy = Strategy::SplitWorld { world: 3 };
        let s = s.resolve().unwrap();
        assert_eq!(s.sleep.get(&20), Some(&vec![[0, 51]]));
        assert_eq!(s.adversarial, (10..20).collect::<Vec<_>>());
        assert_eq!(s.gat, None);
        let awake = s.awake_table();
        assert!(awake.iter().all(|row| !row[20] && row[..20].iter().all(|a| *a)));
    }

    #[test]
    fn random_sleep_respects_the_cap() {
        let mut s = Scenario::new(50, 500);
        s.f = 10;
        s.adversarial = (40..50).collect();
        s.random_sleep = Some(RandomSleep {
            max_adv_fraction: 0.45,
            mean_awake: 40,
            mean_asleep: 60,
        });
        let s = s.resolve().unwrap();
        assert!(!s.sleep.is_empty());
        for row in s.awake_table() {
            let awake = row.iter().filter(|a| **a).count();
            assert!(10.0 / awake as f64 <= 0.45, "{awake}");
        }
    }

    #[test]
    fn periodic_transactions_cycle_over_honest_nodes() {
        let mut s = Scenario::new(4, 21);
        s.f = 1;
        s.adversarial = vec![1];
        let s = s.resolve().unwrap();
        let sched = s.tx_schedule();
        assert_eq!(sched.iter().map(|t| t.slot).collect::<Vec<_>>(), vec![5, 10, 15, 20]);
        assert_eq!(sched.iter().map(|t| t.node).collect::<Vec<_>>(), vec![0, 2, 3, 0]);
    }
}
