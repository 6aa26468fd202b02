use std::collections::BTreeSet;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use proptest::prelude::*;
use qcloud::sim::{
    episode_total_completion, estimate_execution_time, DataCenter, EventKind, PlacementOutcome,
    QNodeSpec, QTask, TaskStatus,
};
use qcloud::workload::{
    bundled_circuits, effective_depth, generate_episode_workload, BackendRegistry,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn node(qubits: u32, d1cps: f64) -> QNodeSpec {
    QNodeSpec {
        id: 0,
        name: "n".into(),
        qubits,
        quantum_volume: 32,
        d1cps,
        gate_set: BTreeSet::new(),
        topology: String::new(),
    }
}

fn task(id: usize, qubits: u32, depth: u32, shots: u32, arrival: f64) -> QTask {
    QTask {
        id,
        app: "t".into(),
        qubits,
        base_depth: depth,
        gates: BTreeSet::new(),
        shots,
        topology: String::new(),
        arrival,
        status: TaskStatus::Pending,
        replacement_count: 0,
    }
}

fn registry(rows: &[(u32, f64)]) -> Arc<BackendRegistry> {
    let mut csv = String::from("name,qubits,qv,d1cps,gates,topology,overhead\n");
    for (i, (q, d)) in rows.iter().enumerate() {
        csv.push_str(&format!("n{i},{q},32,{d},cx,line,1.0\n"));
    }
    Arc::new(BackendRegistry::from_csv_str(&csv, "fixture").unwrap())
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

#[test]
fn execution_time_matches_exact_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let depth: u64 = rng.random_range(1..=20_000);
        let shots: u32 = rng.random_range(1..=100_000);
        let d1cps: f64 = rng.random_range(1.0..50_000.0);
        let t = task(0, 1, 1, shots, 0.0);
        let got = estimate_execution_time(&t, &node(1, d1cps), depth);

        let exact =
            BigRational::from_integer(BigInt::from(depth) * BigInt::from(shots)) / rational(d1cps);
        let err = ((rational(got) - &exact).abs() / &exact).to_f64().unwrap();
        worst = worst.max(err);
    }
    assert!(worst < 1e-12, "max relative error {worst:e}");
}

#[test]
fn effective_depth_is_exact_ceiling_for_decimal_overheads() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5000 {
        let base: u32 = rng.random_range(1..=5000);
        let hundredths: i64 = rng.random_range(100..=400);
        let exact = (BigRational::from_integer(BigInt::from(base))
            * BigRational::new(hundredths.into(), 100.into()))
        .ceil()
        .to_integer();
        let got = effective_depth(base, hundredths as f64 / 100.0);
        assert_eq!(
            BigInt::from(got),
            exact,
            "base {base}, overhead {hundredths}/100"
        );
    }
}

/// Plays three tasks that arrive at 0, 1 and 2 on two nodes, each task placed on arrival.
/// Execution times are dyadic so every sum below is exact in binary floating point.
#[test]
fn fifo_timeline_matches_hand_unrolled_oracle() {
    let reg = registry(&[(8, 1024.0), (8, 2048.0)]);
    let shots = 1024;
    let depths = [4u32, 2, 6];
    let arrivals = [0.0, 1.0, 2.0];
    // exec[i][k] = depth_i * shots / d1cps_k
    let exec = |i: usize, k: usize| f64::from(depths[i]) / if k == 0 { 1.0 } else { 2.0 };

    for mask in 0..8u32 {
        let assign: Vec<usize> = (0..3).map(|i| ((mask >> i) & 1) as usize).collect();
        let tasks: Vec<QTask> = (0..3)
            .map(|i| task(i, 4, depths[i], shots, arrivals[i]))
            .collect();
        let mut dc = DataCenter::new(reg.clone(), tasks).unwrap();
        for i in 0..3 {
            dc.advance_to(arrivals[i]);
            let out = dc.try_place(i, assign[i], arrivals[i]).unwrap();
            assert!(out.is_accepted());
        }
        dc.drain();

        // Hand-unrolled FIFO: task 0 first, then 1, then 2.
        let mut free = [0.0f64; 2];
        let mut expect = Vec::new();
        {
            let k = assign[0];
            let s0 = arrivals[0].max(free[k]);
            let c0 = s0 + exec(0, k);
            free[k] = c0;
            expect.push((s0, c0));
        }
        {
            let k = assign[1];
            let s1 = arrivals[1].max(free[k]);
            let c1 = s1 + exec(1, k);
            free[k] = c1;
            expect.push((s1, c1));
        }
        {
            let k = assign[2];
            let s2 = arrivals[2].max(free[k]);
            let c2 = s2 + exec(2, k);
            expect.push((s2, c2));
        }

        for (i, &(s, c)) in expect.iter().enumerate() {
            let p = dc.placement(i).unwrap();
            assert_eq!(
                (p.start_time, p.completion_time),
                (s, c),
                "assignment {assign:?}, task {i}"
            );
            assert_eq!(p.total_time, c - arrivals[i]);
            assert_eq!(dc.tasks()[i].status, TaskStatus::Completed);
        }

        // Completion events per node appear in placement order.
        for k in 0..2 {
            let completes: Vec<usize> = dc
                .events()
                .iter()
                .filter(|e| e.kind == EventKind::Complete && e.node_id == Some(k))
                .map(|e| e.task_id)
                .collect();
            let placed: Vec<usize> = (0..3).filter(|&i| assign[i] == k).collect();
            assert_eq!(completes, placed);
        }
        // The event log is time ordered.
        assert!(dc.events().windows(2).all(|w| w[0].t <= w[1].t));
    }
}

#[test]
fn rejection_consumes_no_time_and_keeps_task_pending() {
    let reg = registry(&[(4, 1000.0), (16, 1000.0)]);
    let mut dc = DataCenter::new(reg, vec![task(0, 10, 10, 100, 3.0)]).unwrap();
    dc.advance_to(3.0);
    let out = dc.try_place(0, 0, 3.0).unwrap();
    assert!(matches!(out, PlacementOutcome::Rejected(_)));
    assert_eq!(dc.clock(), 3.0);
    assert_eq!(dc.tasks()[0].status, TaskStatus::Pending);
    assert_eq!(dc.backlog(0), 0.0);
    let p = *dc.try_place(0, 1, 3.0).unwrap().placement().unwrap();
    assert_eq!(p.start_time, 3.0);
}

#[test]
fn event_log_replay_reproduces_episode_total() {
    let reg = Arc::new(BackendRegistry::bundled());
    let w = generate_episode_workload(&bundled_circuits(), 17, 60, 60.0).unwrap();
    let arrivals: Vec<f64> = w.tasks.iter().map(|t| t.arrival).collect();
    let mut dc = DataCenter::new(reg.clone(), w.tasks).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..arrivals.len() {
        dc.advance_to(arrivals[i]);
        loop {
            let k = rng.random_range(0..reg.len());
            if dc.try_place(i, k, arrivals[i]).unwrap().is_accepted() {
                break;
            }
        }
    }
    dc.drain();
    let totals = episode_total_completion(&dc.task_records()).unwrap();

    let mut replay = 0.0;
    for e in dc.events().iter().filter(|e| e.kind == EventKind::Complete) {
        replay += e.t - arrivals[e.task_id];
    }
    assert_eq!(totals.completed, 60);
    assert!((replay - totals.total_completion_time).abs() <= 1e-9 * totals.total_completion_time);
}

#[test]
fn arrivals_are_uniform_on_window() {
    // Pooled sorted arrivals are still i.i.d. uniform draws; one-sample KS at alpha = 0.01.
    let records = bundled_circuits();
    let mut xs = Vec::new();
    for seed in 0..200 {
        let w = generate_episode_workload(&records, seed, 50, 60.0).unwrap();
        xs.extend(w.tasks.iter().map(|t| t.arrival / 60.0));
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max);
    assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
}

proptest! {
    #[test]
    fn placed_tasks_never_overlap_on_a_node(
        seed in 0u64..10_000,
        picks in proptest::collection::vec(0usize..3, 1..25),
    ) {
        let reg = registry(&[(50, 900.0), (50, 1700.0), (50, 3100.0)]);
        let w = generate_episode_workload(&bundled_circuits(), seed, picks.len(), 30.0).unwrap();
        let arrivals: Vec<f64> = w.tasks.iter().map(|t| t.arrival).collect();
        let mut dc = DataCenter::new(reg, w.tasks).unwrap();
        for (i, &k) in picks.iter().enumerate() {
            dc.advance_to(arrivals[i]);
            prop_assert!(dc.try_place(i, k, arrivals[i]).unwrap().is_accepted());
        }
        dc.drain();
        for k in 0..3 {
            let mut spans: Vec<(f64, f64)> = (0..picks.len())
                .filter_map(|i| dc.placement(i).filter(|p| p.node_id == k).map(|p| (p.start_time, p.completion_time)))
                .collect();
            spans.sort_by(|a, b| a.0.total_cmp(&b.0));
            for s in spans.windows(2) {
                prop_assert!(s[0].1 <= s[1].0);
            }
        }
        for i in 0..picks.len() {
            let p = dc.placement(i).unwrap();
            prop_assert!(p.start_time >= arrivals[i]);
            prop_assert!(p.total_time > 0.0);
            prop_assert!(!p.exec_time.is_zero());
        }
    }
}
