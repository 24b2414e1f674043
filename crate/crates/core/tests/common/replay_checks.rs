use std::collections::VecDeque;

use der_core::replay::{PrioritizedBuffer, ReplayConfig};
use der_core::rng::seed_streams;
use rand::Rng;

use super::fixtures::{tag_of, tagged, tagged_episode};
use super::stats::chi_square_p;

/// Sampling frequencies of `draws` draws from a buffer holding a mix of
/// pinned demos and main transitions with spread-out priorities, compared
/// with `p^alpha / sum p^alpha` by chi-square. Returns the p-value.
pub fn sampling_chi_square(draws: usize, seed: u64) -> f64 {
    let cfg = ReplayConfig {
        capacity: 400,
        demo_fraction: 0.02,
        alpha: 0.5,
        ..ReplayConfig::default()
    };
    let mut buf = PrioritizedBuffer::new(0, cfg.clone());
    let mut rng = seed_streams(seed, "chi-square");
    buf.load_demo(&tagged_episode(10_000, 3, true), true);
    buf.load_demo(&tagged_episode(20_000, 2, true), false);
    let fragment: Vec<_> = (0..60).map(|i| tagged(i, false, false)).collect();
    buf.insert_main(&fragment);

    let slots: Vec<usize> = buf.zone_slots().into_iter().chain(buf.main_slots()).collect();
    let refs: Vec<_> = slots.iter().map(|&s| buf.slot_ref(s)).collect();
    let td: Vec<f64> = slots.iter().map(|_| rng.random_range(0.01..5.0)).collect();
    buf.update_priorities(&refs, &td);

    let expected: Vec<f64> = slots
        .iter()
        .map(|&s| buf.priority(s).unwrap().powf(cfg.alpha))
        .collect();
    let mut counts = vec![0u64; cfg.capacity];
    let mut remaining = draws;
    while remaining > 0 {
        let n = remaining.min(4096);
        let batch = buf.sample(n, 0.4, &mut rng).unwrap();
        for r in &batch.refs {
            counts[r.slot] += 1;
        }
        remaining -= n;
    }
    let observed: Vec<u64> = slots.iter().map(|&s| counts[s]).collect();
    chi_square_p(&observed, &expected)
}

#[derive(Debug, Default)]
pub struct InvariantReport {
    pub ops: usize,
    pub violations: Vec<String>,
}

/// Runs `ops` random inserts, demo loads and priority updates against a
/// reference model of both FIFO regions. Checks after every op that main
/// inserts never touch the zone, each region holds exactly its most recent
/// entries in order, pinned slots report the running maximum priority, and
/// the sampling mass equals the direct sum over occupied slots.
pub fn random_ops(ops: usize, seed: u64, capacity: usize, demo_fraction: f64) -> InvariantReport {
    let cfg = ReplayConfig {
        capacity,
        demo_fraction,
        ..ReplayConfig::default()
    };
    let alpha = cfg.alpha;
    let mut buf = PrioritizedBuffer::new(0, cfg.clone());
    let zone_cap = cfg.zone_capacity();
    let main_cap = capacity - zone_cap;
    let mut rng = seed_streams(seed, "replay-ops");
    let mut main_model: VecDeque<u64> = VecDeque::new();
    let mut zone_model: VecDeque<(u64, bool)> = VecDeque::new();
    let mut next_tag = 1u64;
    let mut max_seen: f64 = 1.0;
    let mut report = InvariantReport::default();

    for op in 0..ops {
        let zone_before: Vec<u64> = buf.zone_transitions().iter().map(|t| tag_of(t)).collect();
        let kind = rng.random_range(0..10);
        if kind < 5 {
            let n = rng.random_range(1..=12);
            let frag: Vec<_> = (0..n)
                .map(|_| {
                    next_tag += 1;
                    tagged(next_tag, false, false)
                })
                .collect();
            buf.insert_main(&frag);
            for t in &frag {
                main_model.push_back(tag_of(t));
                if main_model.len() > main_cap {
                    main_model.pop_front();
                }
            }
            let zone_after: Vec<u64> = buf.zone_transitions().iter().map(|t| tag_of(t)).collect();
            if zone_after != zone_before {
                report.violations.push(format!("op {op}: main insert changed the zone"));
            }
        } else if kind < 7 {
            let len = rng.random_range(1..=zone_cap.max(1) + 3);
            let pinned = rng.random_bool(0.5);
            let ep = tagged_episode(next_tag + 1, len, true);
            next_tag += len as u64;
            buf.load_demo(&ep, pinned);
            let keep = len.min(zone_cap);
            for t in &ep.transitions()[len - keep..] {
                zone_model.push_back((tag_of(t), pinned));
                if zone_model.len() > zone_cap {
                    zone_model.pop_front();
                }
            }
        } else if !buf.is_empty() {
            let batch = buf.sample(rng.random_range(1..=16), 0.4, &mut rng).unwrap();
            let scale = if rng.random_bool(0.1) { 50.0 } else { 2.0 };
            let td: Vec<f64> = batch.refs.iter().map(|_| rng.random_range(-scale..scale)).collect();
            for e in &td {
                max_seen = max_seen.max(e.abs() + cfg.priority_eps);
            }
            buf.update_priorities(&batch.refs, &td);
        }

        let main_now: Vec<u64> = buf.main_slots().iter().map(|&s| tag_of(buf.transition(s).unwrap())).collect();
        if main_now != main_model.iter().copied().collect::<Vec<_>>() {
            report.violations.push(format!("op {op}: main region is not the FIFO of recent inserts"));
        }
        let zone_now: Vec<(u64, bool)> = buf
            .zone_slots()
            .iter()
            .map(|&s| (tag_of(buf.transition(s).unwrap()), buf.is_pinned(s)))
            .collect();
        if zone_now != zone_model.iter().copied().collect::<Vec<_>>() {
            report.violations.push(format!("op {op}: zone is not the FIFO of recent demo transitions"));
        }
        if buf.max_priority() != max_seen {
            report.violations.push(format!("op {op}: max priority is not the running maximum"));
        }
        let mut direct = 0.0;
        for s in buf.zone_slots().into_iter().chain(buf.main_slots()) {
            let p = buf.priority(s).unwrap();
            if buf.is_pinned(s) && p != buf.max_priority() {
                report.violations.push(format!("op {op}: pinned slot {s} priority {p} != max"));
            }
            direct += p.powf(alpha);
        }
        if (direct - buf.total_mass()).abs() > 1e-9 * direct.max(1.0) {
            report
                .violations
                .push(format!("op {op}: sampling mass {} != direct sum {direct}", buf.total_mass()));
        }
        report.ops += 1;
        if report.violations.len() > 20 {
            break;
        }
    }
    report
}
