#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rngdram::config::ExperimentConfig;
use rngdram::dram::{Command, Cycle, Dram, DramConfig, Location};
use rngdram::memctrl::{
    ChannelController, Entry, MemRequest, ReqId, ReqKind, SchedContext, SchedulerConfig, SchedulerKind, Serviced,
};

/// Companion traces, one per intensity, each paired with an RNG core.
pub const MIXES: &[(&str, &str)] = &[
    ("L", r#"{ kind = "synthetic", pattern = "random_uniform", mpki = 0.5, seed = 1 }"#),
    ("M", r#"{ kind = "synthetic", pattern = "row_local", mpki = 5.0, seed = 2 }"#),
    ("H", r#"{ kind = "synthetic", pattern = "random_uniform", mpki = 20.0, seed = 3 }"#),
    ("S", r#"{ kind = "synthetic", pattern = "stream", mpki = 30.0, seed = 4 }"#),
];

pub fn mix_workload(name: &str, companion: &str, rng_mbps: u64) -> String {
    format!(
        "[[workload]]\nname = \"{name}\"\n[[workload.cores]]\ntrace = {companion}\n\
         [[workload.cores]]\ntrace = {{ kind = \"rng\", throughput_mbps = {rng_mbps} }}\n"
    )
}

pub fn all_mixes(rng_mbps: u64) -> String {
    MIXES.iter().map(|(n, c)| mix_workload(n, c, rng_mbps)).collect()
}

/// System block for the full mechanism: buffer, predictor and RNG-aware scheduler.
pub const FULL_DESIGN: &str = r#"
[system.buffer]
entries = 16
[system.predictor]
policy = "simple_predictor"
low_util_threshold = 4
[system.scheduler]
kind = "rng_aware"
"#;

pub const BASELINE: &str = r#"
[system.buffer]
entries = 0
[system.predictor]
policy = "none"
[system.scheduler]
kind = "fr_fcfs_cap"
"#;

pub fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap_or_else(|e| panic!("bad config: {e}\n{text}"))
}

/// A read in a scheduling instance.
#[derive(Clone, Copy, Debug)]
pub struct Req {
    pub id: ReqId,
    pub core: usize,
    pub bank: u32,
    pub row: u32,
    pub arrival: Cycle,
}

/// Scheduling rules under test.
#[derive(Clone, Copy, Debug)]
pub enum Rules {
    Cap { cap: u32 },
    Bliss { threshold: u32, interval: Cycle },
}

pub fn small_dram() -> DramConfig {
    DramConfig { channels: 1, ranks_per_channel: 1, banks_per_rank: 2, ..Default::default() }
}

/// Up to `max` reads over 2 banks, 4 rows and 3 cores, ids in arrival order.
pub fn random_instance(seed: u64, max: usize) -> Vec<Req> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max);
    let mut arrivals: Vec<Cycle> = (0..n).map(|_| rng.random_range(0..40)).collect();
    arrivals.sort_unstable();
    arrivals
        .into_iter()
        .enumerate()
        .map(|(i, arrival)| Req {
            id: i as ReqId,
            core: rng.random_range(0..3),
            bank: rng.random_range(0..2),
            row: rng.random_range(0..4),
            arrival,
        })
        .collect()
}

const HORIZON: Cycle = 5_000;

/// Column-command order produced by the controller.
pub fn controller_order(reqs: &[Req], rules: Rules) -> Vec<ReqId> {
    let mut dram = Dram::new(&small_dram()).unwrap();
    let cfg = match rules {
        Rules::Cap { cap } => SchedulerConfig { kind: SchedulerKind::FrFcfsCap, column_cap: cap, ..Default::default() },
        Rules::Bliss { threshold, interval } => SchedulerConfig {
            kind: SchedulerKind::Bliss,
            bliss_blacklist_threshold: threshold,
            bliss_clearing_interval: interval,
            ..Default::default()
        },
    };
    let mut ctrl = ChannelController::new(0, &cfg, 2);
    let ctx = SchedContext { priorities: &[], rng_apps: &[], rng_start_ok: true };
    let mut order = Vec::new();
    for now in 0..HORIZON {
        for r in reqs.iter().filter(|r| r.arrival == now) {
            assert!(ctrl.enqueue(entry(&dram, r)));
        }
        ctrl.begin_cycle(now);
        if let Some(Serviced::Issued { cmd: Command::Rd, entry, .. }) = ctrl.tick(&mut dram, now, &ctx) {
            order.push(entry.id());
        }
        if order.len() == reqs.len() {
            break;
        }
    }
    order
}

fn entry(dram: &Dram, r: &Req) -> Entry {
    let addr = dram.layout().encode(&Location { bank: r.bank, row: r.row, ..Default::default() });
    let loc = dram.decode_address(addr).unwrap();
    let req = MemRequest {
        id: r.id,
        core: r.core,
        kind: ReqKind::Read,
        addr: Some(addr),
        arrival: r.arrival,
        enqueue_cycle: r.arrival,
        completion: None,
    };
    Entry::new(req, loc, r.bank as usize)
}

struct Pending {
    req: Req,
    opened_own_row: bool,
}

/// Replays the written rules one cycle at a time. Each cycle every queued
/// read is a candidate if its next command is legal; the chosen one is the
/// candidate no other candidate beats, checked pairwise.
pub fn oracle_order(reqs: &[Req], rules: Rules) -> Vec<ReqId> {
    let mut dram = Dram::new(&small_dram()).unwrap();
    let mut queue: Vec<Pending> = Vec::new();
    let mut hits_past_older = [0u32; 2];
    let mut last_core: Option<usize> = None;
    let mut run = 0u32;
    let mut blacklist = [false; 3];
    let mut order = Vec::new();
    for now in 0..HORIZON {
        for r in reqs.iter().filter(|r| r.arrival == now) {
            queue.push(Pending { req: *r, opened_own_row: false });
        }
        if let Rules::Bliss { interval, .. } = rules {
            if now > 0 && now % interval == 0 {
                blacklist = [false; 3];
            }
        }
        // (queue position, command, row hit)
        let mut cands = Vec::new();
        for (pos, p) in queue.iter().enumerate() {
            let cmd = match dram.channel(0).banks[p.req.bank as usize].open_row {
                Some(row) if row == p.req.row => Command::Rd,
                Some(_) => Command::Pre,
                None => Command::Act,
            };
            if !dram.can_issue(cmd, 0, p.req.bank as usize, now) {
                continue;
            }
            let hit = cmd == Command::Rd;
            if let Rules::Cap { cap } = rules {
                if hit && pos > 0 && hits_past_older[p.req.bank as usize] >= cap {
                    continue;
                }
            }
            cands.push((pos, cmd, hit));
        }
        let beats = |a: &(usize, Command, bool), b: &(usize, Command, bool)| -> bool {
            let listed = |c: &(usize, Command, bool)| blacklist[queue[c.0].req.core];
            if let Rules::Bliss { .. } = rules {
                if listed(a) != listed(b) {
                    return !listed(a);
                }
            }
            if a.2 != b.2 {
                return a.2;
            }
            a.0 < b.0
        };
        let winners: Vec<_> =
            cands.iter().filter(|a| cands.iter().all(|b| std::ptr::eq(*a, b) || beats(a, b))).copied().collect();
        assert!(winners.len() <= 1, "rules must pick at most one request");
        let Some((pos, cmd, hit)) = winners.first().copied() else {
            continue;
        };
        let bank = queue[pos].req.bank as usize;
        dram.issue(cmd, 0, bank, queue[pos].req.row, now);
        match cmd {
            Command::Act => {
                queue[pos].opened_own_row = true;
                hits_past_older[bank] = 0;
            }
            Command::Rd => {
                if hit && !queue[pos].opened_own_row && pos > 0 {
                    hits_past_older[bank] += 1;
                }
                let p = queue.remove(pos);
                order.push(p.req.id);
                if let Rules::Bliss { threshold, .. } = rules {
                    if last_core == Some(p.req.core) {
                        run += 1;
                    } else {
                        last_core = Some(p.req.core);
                        run = 1;
                    }
                    if run >= threshold {
                        blacklist[p.req.core] = true;
                    }
                }
            }
            _ => {}
        }
        if order.len() == reqs.len() {
            break;
        }
    }
    order
}
