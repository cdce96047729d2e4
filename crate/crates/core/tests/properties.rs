use proptest::prelude::*;

use rngdram::buffer::{RandomNumberBuffer, ServeOutcome};
use rngdram::dram::{AddressLayout, Dram, DramConfig, Location};
use rngdram::memctrl::{ChannelController, Entry, MemRequest, ReqKind, SchedContext, SchedulerConfig, SchedulerKind};
use rngdram::metrics::unfairness;
use rngdram::predictor::{Action, FillPolicy, PredictorConfig, QAgent, SimplePredictor};
use rngdram::system::{BufferConfig, Simulation, SystemConfig};
use rngdram::trng::{TrngConfig, TrngPreset};
use rngdram::workloads::{Trace, TraceOp, TraceRecord};

fn geometry() -> impl Strategy<Value = DramConfig> {
    (0u32..3, 0u32..2, 1u32..4, 8u32..17, 5u32..8).prop_map(|(ch, rk, bk, rows, cols)| DramConfig {
        channels: 1 << ch,
        ranks_per_channel: 1 << rk,
        banks_per_rank: 1 << bk,
        rows_per_bank: 1 << rows,
        columns_per_row: 1 << cols,
        ..Default::default()
    })
}

fn op() -> impl Strategy<Value = TraceOp> {
    prop_oneof![(0u64..1 << 32).prop_map(TraceOp::Read), (0u64..1 << 32).prop_map(TraceOp::Write), Just(TraceOp::Rng),]
}

fn small_trace() -> impl Strategy<Value = Trace> {
    prop::collection::vec(
        (
            0u64..200,
            prop_oneof![
                (0u64..1 << 20).prop_map(|a| TraceOp::Read(a << 6)),
                (0u64..1 << 20).prop_map(|a| TraceOp::Write(a << 6)),
                Just(TraceOp::Rng)
            ],
        ),
        1..20,
    )
    .prop_map(|v| Trace::new(v.into_iter().map(|(bubbles, op)| TraceRecord { bubbles, op }).collect()))
}

proptest! {
    #[test]
    fn counters_track_a_clamped_reference(stream in prop::collection::vec((0u64..100, 0u64..512), 1..400)) {
        let mut p = SimplePredictor::new(256, 40);
        let mut reference = vec![0i64; 256];
        for (observed, next) in stream {
            let idx = p.index(p.last_addr);
            reference[idx] = (reference[idx] + if observed >= 40 { 1 } else { -1 }).clamp(0, 3);
            p.update(observed, next << 6);
            prop_assert!(p.counters().iter().all(|&c| c <= 3));
        }
        let got: Vec<i64> = p.counters().iter().map(|&c| c as i64).collect();
        prop_assert_eq!(got, reference);
    }

    #[test]
    fn q_values_stay_bounded(steps in prop::collection::vec((0usize..1024, any::<bool>(), 0u64..100), 1..500)) {
        let mut q = QAgent::new(0.05, 40);
        for (s, gen, observed) in steps {
            let a = if gen { Action::Generate } else { Action::Wait };
            q.update(s, a, observed, 0);
            prop_assert!(q.max_abs_q() <= 1.0);
        }
    }

    #[test]
    fn q_update_is_a_convex_step(start in -1.0f64..1.0, long in any::<bool>()) {
        let mut q = QAgent::new(0.05, 40);
        q.set_q(3, Action::Generate, start);
        q.update(3, Action::Generate, if long { 40 } else { 39 }, 0);
        let r = if long { 1.0 } else { -1.0 };
        prop_assert!((q.q(3, Action::Generate) - (0.95 * start + 0.05 * r)).abs() < 1e-12);
    }

    #[test]
    fn scaling_q_keeps_every_action(values in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16)) {
        let mut a = QAgent::new(0.05, 40);
        let mut b = QAgent::new(0.05, 40);
        for (s, &(g, w)) in values.iter().enumerate() {
            a.set_q(s, Action::Generate, g);
            a.set_q(s, Action::Wait, w);
            b.set_q(s, Action::Generate, 2.0 * g);
            b.set_q(s, Action::Wait, 2.0 * w);
        }
        for s in 0..values.len() {
            prop_assert_eq!(a.act(s), b.act(s));
        }
    }

    #[test]
    fn state_is_line_bits_xor_history(addr in any::<u64>(), history in 0u16..1024) {
        let s = QAgent::state_for(addr, history);
        prop_assert_eq!(s as u64, ((addr >> 6) & 1023) ^ history as u64);
        prop_assert_eq!(QAgent::state_for(addr, ((addr >> 6) & 1023) as u16), 0);
    }

    #[test]
    fn buffer_conserves_bits(entries in 1u32..8, ops in prop::collection::vec((0u8..4, 1usize..200), 1..300)) {
        let mut b = RandomNumberBuffer::new(entries);
        let mut reserved: Vec<usize> = Vec::new();
        for (kind, n) in ops {
            match kind {
                0 => { b.push(&vec![false; n]); }
                1 => { let _ = b.serve(); }
                2 => if b.reserve(n) { reserved.push(n); },
                _ => if let Some(n) = reserved.pop() { b.fill_reserved(&vec![true; n]); },
            }
            prop_assert!(b.occupancy() <= b.capacity());
            prop_assert_eq!(b.bits_in(), b.bits_out() + b.occupancy() as u64);
            prop_assert!(b.served_from_buffer() <= b.total_rng_requests());
            let rate = b.serve_rate().unwrap_or(0.0);
            prop_assert!((0.0..=1.0).contains(&rate));
        }
    }

    #[test]
    fn serve_is_all_or_nothing(bits in 0usize..256) {
        let mut b = RandomNumberBuffer::new(4);
        b.push(&vec![true; bits]);
        match b.serve() {
            ServeOutcome::Served(_) => prop_assert_eq!(b.occupancy(), bits - 64),
            ServeOutcome::Miss => { prop_assert!(bits < 64); prop_assert_eq!(b.occupancy(), bits); }
        }
    }

    #[test]
    fn address_map_is_a_bijection(cfg in geometry(), raw in any::<u64>()) {
        let layout = AddressLayout::new(&cfg).unwrap();
        let addr = layout.clamp_to_usable(raw % layout.capacity_bytes()) & !63;
        let loc = layout.decode(addr).unwrap();
        prop_assert_eq!(layout.encode(&loc), addr);
        let (ch, banks, ranks, rows) = layout.shape();
        prop_assert!(loc.channel < ch && loc.bank < banks && loc.rank < ranks && loc.row < rows);
        prop_assert!(loc.column < layout.columns());
    }

    #[test]
    fn traces_round_trip(records in prop::collection::vec((0u64..100_000, op()), 0..100)) {
        let t = Trace::new(records.into_iter().map(|(bubbles, op)| TraceRecord { bubbles, op }).collect());
        prop_assert_eq!(Trace::parse_str(&t.to_string()).unwrap(), t);
    }

    #[test]
    fn unfairness_is_at_least_one(xs in prop::collection::vec(0.01f64..100.0, 2..8)) {
        prop_assert!(unfairness(&xs).unwrap() >= 1.0);
    }
}

fn machine(kind: SchedulerKind, policy: FillPolicy, quac: bool) -> SystemConfig {
    SystemConfig {
        scheduler: SchedulerConfig { kind, ..Default::default() },
        predictor: PredictorConfig { policy, ..Default::default() },
        buffer: BufferConfig { entries: 4 },
        trng: TrngConfig { preset: if quac { TrngPreset::Quac } else { TrngPreset::Drange }, ..Default::default() },
        ..Default::default()
    }
}

fn kind() -> impl Strategy<Value = SchedulerKind> {
    prop_oneof![Just(SchedulerKind::FrFcfsCap), Just(SchedulerKind::Bliss), Just(SchedulerKind::RngAware)]
}

fn policy() -> impl Strategy<Value = FillPolicy> {
    prop_oneof![
        Just(FillPolicy::None),
        Just(FillPolicy::SimpleBuffering),
        Just(FillPolicy::SimplePredictor),
        Just(FillPolicy::RlAgent),
        Just(FillPolicy::GreedyOracle),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn runs_conserve_bits_and_bound_queues(
        kind in kind(), policy in policy(), quac in any::<bool>(), a in small_trace(), b in small_trace(),
    ) {
        let cfg = machine(kind, policy, quac);
        let mut sim = Simulation::new(&cfg, vec![a, b], &[Some(3_000), Some(3_000)]).unwrap();
        let mut guard = 0u64;
        while !sim.cores.iter().all(|c| c.finished()) {
            sim.step();
            for ch in 0..4 {
                let q = &sim.mem.controller(ch).queues;
                prop_assert!(q.read_q.len() <= q.read_q.capacity());
                prop_assert!(q.write_q.len() <= q.write_q.capacity());
                prop_assert!(q.rng_q.len() <= q.rng_q.capacity());
            }
            guard += 1;
            prop_assert!(guard < 50_000_000, "run did not finish");
        }
        let out = sim.output();
        let greedy = out.mem.greedy_credits;
        if greedy == 0 {
            prop_assert_eq!(out.bits_harvested, out.buffer_bits_in + out.mem.bits_to_requesters);
        }
        prop_assert!(out.buffer_served <= out.buffer_requests);
    }

    #[test]
    fn scaling_priorities_changes_nothing(a in small_trace(), b in small_trace(), p0 in 0u32..3, p1 in 0u32..3) {
        let run = |k: u32| {
            let mut cfg = machine(SchedulerKind::RngAware, FillPolicy::SimplePredictor, false);
            cfg.scheduler.priorities = vec![p0 * k, p1 * k];
            Simulation::new(&cfg, vec![a.clone(), b.clone()], &[Some(3_000), Some(3_000)]).unwrap().run().unwrap().cores
        };
        prop_assert_eq!(run(1), run(3));
    }

    #[test]
    fn bliss_blacklist_clears_on_schedule(
        mut reqs in prop::collection::vec((0usize..3, 0u32..2, 0u32..4, 0u64..300), 1..30),
    ) {
        // ids follow arrival order
        reqs.sort_by_key(|r| r.3);
        let dram_cfg = DramConfig { channels: 1, ranks_per_channel: 1, banks_per_rank: 2, ..Default::default() };
        let mut dram = Dram::new(&dram_cfg).unwrap();
        let cfg = SchedulerConfig {
            kind: SchedulerKind::Bliss,
            bliss_blacklist_threshold: 1,
            bliss_clearing_interval: 25,
            ..Default::default()
        };
        let mut ctrl = ChannelController::new(0, &cfg, 2);
        let ctx = SchedContext { priorities: &[], rng_apps: &[], rng_start_ok: true };
        for now in 0..2_000u64 {
            for (id, &(core, bank, row, _)) in reqs.iter().enumerate().filter(|(_, r)| r.3 == now) {
                let addr = dram.layout().encode(&Location { bank, row, ..Default::default() });
                let loc = dram.decode_address(addr).unwrap();
                let req = MemRequest {
                    id: id as u64, core, kind: ReqKind::Read, addr: Some(addr),
                    arrival: now, enqueue_cycle: now, completion: None,
                };
                prop_assert!(ctrl.enqueue(Entry::new(req, loc, bank as usize)));
            }
            ctrl.begin_cycle(now);
            if now > 0 && now % 25 == 0 {
                prop_assert!((0..3).all(|c| !ctrl.blacklisted(c)));
            }
            ctrl.tick(&mut dram, now, &ctx);
        }
    }
}
