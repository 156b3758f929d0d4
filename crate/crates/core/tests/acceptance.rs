//! Acceptance suite: one pass/fail line per criterion.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use accgadget::adjudication::{adjudicate, adjudicate_all, Adjudication, LedgerKind, ProofKind};
use accgadget::chain::fork_choice_tip;
use accgadget::check::{check_gap, gasper_latency, latency_model, validate_params};
use accgadget::sim::{DecisionRecord, Protocol, RandomSleep, Trace};
use accgadget::{
    check_all, conflicting, measure_metrics, Block, BlockId, BlockTree, CheckpointDecision, NodeId, QuorumPreset,
    Scenario, SecurityReport, Simulation, Strategy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = Instant::now();
    let v = f();
    (v, t0.elapsed())
}

fn c1_scenario() -> Scenario {
    let mut s = Scenario::new(100, 1200);
    s.delta = 0;
    s.p = Some(0.01);
    s.k = Some(6);
    s.k_cp = Some(6);
    s.t_checkpoint = 60;
    s.t_timeout = 12;
    s
}

fn c2_scenario() -> Scenario {
    let mut s = c1_scenario();
    s.f = 25;
    s.adversarial = (75..100).collect();
    s.strategy = Strategy::SelfishMine { leader_boycott: true };
    s
}

fn c6_scenario(seed: u64) -> Scenario {
    let mut s = Scenario::new(50, 2000);
    s.seed = seed;
    s.f = 10;
    s.adversarial = (40..50).collect();
    s.strategy = Strategy::SelfishMine { leader_boycott: true };
    s.p = Some(0.002);
    s.k = Some(20);
    s.k_cp = Some(20);
    s.gat = None;
    s.random_sleep = Some(RandomSleep {
        max_adv_fraction: 0.45,
        mean_awake: 200,
        mean_asleep: 100,
    });
    s
}

fn c7_scenario() -> Scenario {
    let mut s = Scenario::new(20, 7000);
    s.f = 3;
    s.adversarial = vec![18, 19];
    s.strategy = Strategy::SelfishMine { leader_boycott: true };
    s.p = Some(0.01);
    s.t_timeout = 20;
    s.t_checkpoint = 1200;
    s.gst = 400;
    s.gat = Some(400);
    s.sleep.insert(0, vec![[0, 400]]);
    s
}

/// Confirmed heights `(da, acc)` per recorded node and slot.
fn heights(trace: &Trace) -> Vec<Vec<(u64, u64)>> {
    let idx = trace.index();
    let r = idx.nodes.len();
    let slots = trace.rows.len() / r;
    (0..r)
        .map(|j| {
            (0..slots)
                .map(|s| {
                    let row = &trace.rows[s * r + j];
                    (idx.height(row.da), idx.height(row.acc))
                })
                .collect()
        })
        .collect()
}

fn mean_growth(trace: &Trace) -> f64 {
    let h = heights(trace);
    h.iter().map(|n| n.last().unwrap().0 as f64).sum::<f64>() / h.len() as f64 / trace.scenario.horizon as f64
}

fn c1(trace: &Trace, elapsed: Duration) -> Outcome {
    let sc = &trace.scenario;
    let gap = sc.k.unwrap() + sc.k_cp.unwrap();
    let h = heights(trace);
    let mut bad = Vec::new();
    for (j, node) in h.iter().enumerate() {
        if let Some(s) = (0..node.len().saturating_sub(50)).find(|&s| node[s + 50].0 <= node[s].0) {
            bad.push(format!("node {j}: LOG_da flat over [{s}, {}]", s + 50));
        }
        if let Some(s) = (1..node.len()).find(|&s| node[s].1 < node[s - 1].1) {
            bad.push(format!("node {j}: LOG_acc shrank at {s}"));
        }
    }
    let pos = |n: NodeId| trace.recorded_nodes().iter().position(|m| *m == n).unwrap();
    for d in trace.decisions.iter().filter(|d| d.block.is_some()) {
        let (da, acc) = h[pos(d.node)][d.slot as usize];
        if da > acc + gap {
            bad.push(format!("node {} at {}: da {da} acc {acc}", d.node, d.slot));
        }
    }
    let m = measure_metrics(trace, 0);
    let passed = bad.is_empty() && m.checkpoints >= 15 && elapsed < Duration::from_secs(60);
    outcome(
        passed,
        format!(
            "checkpoints={} runtime={:.1}s {}",
            m.checkpoints,
            elapsed.as_secs_f64(),
            bad.first().cloned().unwrap_or_default()
        ),
    )
}

fn c2(trace: &Trace, report: &SecurityReport, elapsed: Duration, c1_growth: f64) -> Outcome {
    let sc = &trace.scenario;
    let gap = sc.k.unwrap() + sc.k_cp.unwrap();
    let window = 3 * sc.t_checkpoint as usize;
    let h = heights(trace);
    let mut worst = None;
    for (j, node) in h.iter().enumerate() {
        let close: Vec<bool> = node.iter().map(|(da, acc)| *da <= acc + gap).collect();
        for s in 0..=close.len().saturating_sub(window) {
            if !close[s..s + window].iter().any(|c| *c) {
                worst.get_or_insert(format!("node {j}: LOG_acc far behind over [{s}, {})", s + window));
                break;
            }
        }
    }
    let growth = mean_growth(trace);
    let violations: Vec<&str> = report
        .checks()
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    let passed =
        violations.is_empty() && growth < c1_growth && worst.is_none() && elapsed < Duration::from_secs(90);
    outcome(
        passed,
        format!(
            "growth={growth:.3} (fault-free {c1_growth:.3}) violations={violations:?} runtime={:.1}s {}",
            elapsed.as_secs_f64(),
            worst.unwrap_or_default()
        ),
    )
}

fn c3() -> Outcome {
    let adversarial: BTreeSet<NodeId> = (6..10).map(NodeId).collect();
    let mut violating = 0;
    let mut failures = Vec::new();
    for seed in 0..50 {
        let mut s = Scenario::new(10, 800);
        s.seed = seed;
        s.f = 3;
        s.quorum_preset = QuorumPreset::NMinusF;
        s.q_bft = Some(7);
        s.adversarial = adversarial.iter().map(|n| n.0).collect();
        s.strategy = Strategy::Equivocate {
            groups: Some([vec![0, 1, 2], vec![3, 4, 5]]),
        };
        s.gst = 600;
        let mut sim = Simulation::new(s).expect("valid scenario");
        sim.run_to_end();
        let sc = sim.scenario().clone();
        let honest = sc.honest_nodes();
        let ledgers: Vec<_> = honest.iter().map(|n| sim.ledger(*n, LedgerKind::Acc)).collect();
        let conflict = (0..ledgers.len())
            .any(|i| (i + 1..ledgers.len()).any(|j| conflicting(&ledgers[i], &ledgers[j])));
        if !conflict {
            continue;
        }
        violating += 1;
        let evidences: Vec<_> = honest.iter().map(|n| sim.evidence(*n, LedgerKind::Acc)).collect();
        match adjudicate_all(&evidences, &sc.gadget_params(), sc.n, sc.q_bft()) {
            Ok(a) => {
                let v = a.violators();
                if v.len() < 4 || !v.is_subset(&adversarial) {
                    failures.push(format!("seed {seed}: violators {v:?}"));
                }
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    outcome(
        violating > 0 && failures.is_empty(),
        format!(
            "violating runs={violating}/50 correctly adjudicated={} {}",
            violating - failures.len(),
            failures.first().cloned().unwrap_or_default()
        ),
    )
}

fn c4() -> Outcome {
    let mut s = Scenario::new(4, 300);
    s.f = 1;
    s.quorum_preset = QuorumPreset::NMinusF;
    s.q_bft = Some(3);
    s.adversarial = vec![2, 3];
    s.strategy = Strategy::Equivocate {
        groups: Some([vec![0], vec![1]]),
    };
    s.gst = 10_000;
    let mut sim = Simulation::new(s).expect("valid scenario");
    sim.run_to_end();
    let sc = sim.scenario().clone();
    let w1 = sim.evidence(NodeId(0), LedgerKind::Bft);
    let w2 = sim.evidence(NodeId(1), LedgerKind::Bft);
    match adjudicate(&w1, &w2, &sc.gadget_params(), sc.n, sc.q_bft()) {
        Ok(Adjudication::Guilty(v)) => {
            let want: BTreeSet<NodeId> = [NodeId(2), NodeId(3)].into();
            outcome(
                v.violators == want && v.proof_kind == ProofKind::BftEquivocation,
                format!("violators={:?} proof={:?}", v.violators, v.proof_kind),
            )
        }
        other => outcome(false, format!("{other:?}")),
    }
}

fn c5() -> Outcome {
    let mut pairs = Vec::new();
    let mut detail = Vec::new();
    for world in [3u8, 4] {
        let mut s = Scenario::new(20, 200);
        s.protocol = Protocol::LcOnly;
        s.strategy = Strategy::SplitWorld { world };
        let mut sim = Simulation::new(s).expect("valid scenario");
        sim.run_to_end();
        let sc = sim.scenario().clone();
        let w1 = sim.evidence(NodeId(0), LedgerKind::Da);
        let w2 = sim.evidence(NodeId(10), LedgerKind::Da);
        let (gp, n, q) = (sc.gadget_params(), sc.n, sc.q_bft());
        let ledgers = (w1.verified_ledger(&gp, n, q), w2.verified_ledger(&gp, n, q));
        let conflict = match &ledgers {
            (Ok(a), Ok(b)) => !a.is_empty() && !b.is_empty() && conflicting(a, b),
            _ => false,
        };
        let verdict = adjudicate(&w1, &w2, &gp, n, q);
        detail.push(format!("world {world}: conflict={conflict} verdict={verdict:?}"));
        let bytes = (serde_json::to_vec(&w1).unwrap(), serde_json::to_vec(&w2).unwrap());
        pairs.push((bytes, conflict && verdict == Ok(Adjudication::UnattributableConflict)));
    }
    let identical = pairs[0].0 == pairs[1].0;
    outcome(
        identical && pairs.iter().all(|p| p.1),
        format!("identical={identical} {}", detail.join("; ")),
    )
}

fn c6(reports: &[SecurityReport]) -> Outcome {
    let ok = reports
        .iter()
        .filter(|r| r.safety_da.passed && r.liveness_da.passed && r.prefix.passed)
        .count();
    let first_bad = reports
        .iter()
        .position(|r| !(r.safety_da.passed && r.liveness_da.passed && r.prefix.passed));
    outcome(
        ok == reports.len(),
        format!("{ok}/{} runs pass safety, liveness and prefix on LOG_da; first failing seed {first_bad:?}", reports.len()),
    )
}

fn c7(trace: &Trace, report: &SecurityReport) -> Outcome {
    let params = validate_params(&trace.scenario, report.t_recent);
    outcome(
        report.liveness_acc.passed && report.safety_acc.passed && params.holds,
        format!(
            "liveness_acc={} safety_acc={} T_confirm_acc={} T_bft={} params_hold={} {}",
            report.liveness_acc.passed,
            report.safety_acc.passed,
            report.t_confirm_acc,
            report.t_confirm_bft,
            params.holds,
            report.liveness_acc.detail
        ),
    )
}

fn c8(named: &[(&str, &SecurityReport)], c1_trace: &Trace) -> Outcome {
    let failing: Vec<String> = named
        .iter()
        .filter(|(_, r)| !(r.gap.passed && r.recency.passed))
        .map(|(n, r)| format!("{n}: {} {}", r.gap.detail, r.recency.detail))
        .collect();
    let t_cp = c1_trace.scenario.t_checkpoint;
    let mut mutated: Vec<DecisionRecord> = c1_trace.decisions.clone();
    let prev = *mutated.iter().find(|d| d.block.is_some()).expect("a checkpoint");
    let clean = check_gap(&mutated, t_cp).passed;
    mutated.push(DecisionRecord {
        slot: prev.slot + t_cp - 1,
        iteration: prev.iteration + 1,
        ..prev
    });
    let caught = !check_gap(&mutated, t_cp).passed;
    outcome(
        failing.is_empty() && clean && caught,
        format!(
            "traces checked={} mutation caught={caught} {}",
            named.len(),
            failing.first().cloned().unwrap_or_default()
        ),
    )
}

fn c9(c1_trace: &Trace) -> Outcome {
    let ours = latency_model(6, 12.0, 300.0);
    let gasper = gasper_latency(32, 12.0);
    let analytic = ours == 222.0 && gasper == 960.0 && gasper / ours >= 4.0;
    let m = measure_metrics(c1_trace, 0);
    let (Some(measured), Some(model)) = (m.acc_latency_mean, m.acc_latency_model) else {
        return outcome(false, "no LOG_acc latency samples");
    };
    let within = (measured - model).abs() <= 0.25 * model;
    let sc = &c1_trace.scenario;
    let q = sc.q_accept.unwrap() as u64;
    let accepts: Vec<u64> = m.iterations.iter().filter_map(|i| i.accepts_for_decided).collect();
    let votes_ok = !accepts.is_empty() && accepts.iter().all(|a| (q..=sc.n as u64).contains(a));
    outcome(
        analytic && within && votes_ok,
        format!(
            "model={ours}s gasper={gasper}s ratio={:.2} measured acc latency={measured:.1} vs {model:.1} ({:+.1}%) accepts in [{}, {}]",
            gasper / ours,
            100.0 * (measured - model) / model,
            accepts.iter().min().copied().unwrap_or(0),
            accepts.iter().max().copied().unwrap_or(0),
        ),
    )
}

fn csv_bytes(trace: &Trace) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new(), Vec::new(), Vec::new()];
    trace.write_ledgers_csv(&mut out[0]).unwrap();
    trace.write_votes_csv(&mut out[1]).unwrap();
    trace.write_decisions_csv(&mut out[2]).unwrap();
    out
}

fn c10(c1_trace: &Trace) -> Outcome {
    let again = accgadget::run(&c1_scenario()).expect("valid scenario");
    let (a, b) = (csv_bytes(c1_trace), csv_bytes(&again));
    outcome(
        a == b,
        format!("ledgers.csv {} bytes, votes.csv {} bytes, decisions.csv {} bytes", a[0].len(), a[1].len(), a[2].len()),
    )
}

/// Longest chain through all checkpoints by enumerating every block as a tip.
fn brute_force_tip(tree: &BlockTree, blocks: &[BlockId], cps: &[BlockId]) -> Option<BlockId> {
    blocks
        .iter()
        .filter(|tip| cps.iter().all(|c| tree.is_ancestor_or_self(c, tip)))
        .max_by(|a, b| {
            let (ha, hb) = (tree.height(a).unwrap(), tree.height(b).unwrap());
            ha.cmp(&hb).then(b.cmp(a))
        })
        .copied()
}

fn c11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut agree = 0;
    let mut first_bad = None;
    for case in 0..500 {
        let mut tree = BlockTree::new();
        let mut blocks = vec![tree.genesis_id()];
        let mut slots = vec![0u64];
        for i in 0..rng.gen_range(0..12) {
            let p = rng.gen_range(0..blocks.len());
            let slot = slots[p] + rng.gen_range(1..4);
            let b = Block::new(blocks[p], NodeId(rng.gen_range(0..4)), slot, vec![accgadget::TxId(i)]);
            let id = b.id;
            if tree.insert(Arc::new(b)).unwrap() {
                blocks.push(id);
                slots.push(slot);
            }
        }
        let picks: Vec<BlockId> = (0..rng.gen_range(0..=2))
            .map(|_| blocks[rng.gen_range(0..blocks.len())])
            .collect();
        let decisions: Vec<CheckpointDecision> = picks
            .iter()
            .enumerate()
            .map(|(i, b)| CheckpointDecision {
                iteration: i as u64,
                block: Some(*b),
                decided_at: i as u64,
            })
            .collect();
        let ours = fork_choice_tip(&tree, &decisions).ok();
        let oracle = if picks.iter().all(|a| picks.iter().all(|b| {
            tree.is_ancestor_or_self(a, b) || tree.is_ancestor_or_self(b, a)
        })) {
            brute_force_tip(&tree, &blocks, &picks)
        } else {
            None
        };
        if ours == oracle {
            agree += 1;
        } else {
            first_bad.get_or_insert(case);
        }
    }
    outcome(agree == 500, format!("{agree}/500 agree; first mismatch {first_bad:?}"))
}

fn report(id: usize, o: Outcome, all: &mut bool) {
    *all &= o.passed;
    println!("criterion {id:>2}: {} {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
}

fn main() {
    let mut all = true;

    let (t1, d1) = timed(|| accgadget::run(&c1_scenario()).expect("valid scenario"));
    let r1 = check_all(&t1);
    report(1, c1(&t1, d1), &mut all);

    let (t2, d2) = timed(|| accgadget::run(&c2_scenario()).expect("valid scenario"));
    let r2 = check_all(&t2);
    report(2, c2(&t2, &r2, d2, mean_growth(&t1)), &mut all);

    report(3, c3(), &mut all);
    report(4, c4(), &mut all);
    report(5, c5(), &mut all);

    let r6: Vec<SecurityReport> = (0..100)
        .map(|seed| check_all(&accgadget::run(&c6_scenario(seed)).expect("valid scenario")))
        .collect();
    report(6, c6(&r6), &mut all);

    let t7 = accgadget::run(&c7_scenario()).expect("valid scenario");
    let r7 = check_all(&t7);
    report(7, c7(&t7, &r7), &mut all);

    let mut named: Vec<(String, &SecurityReport)> = vec![("c1".into(), &r1), ("c2".into(), &r2), ("c7".into(), &r7)];
    named.extend(r6.iter().enumerate().map(|(i, r)| (format!("c6 seed {i}"), r)));
    let named: Vec<(&str, &SecurityReport)> = named.iter().map(|(n, r)| (n.as_str(), *r)).collect();
    report(8, c8(&named, &t1), &mut all);

    report(9, c9(&t1), &mut all);
    report(10, c10(&t1), &mut all);
    report(11, c11(), &mut all);

    if !all {
        std::process::exit(1);
    }
}
