//! The memory system (controllers, DRAM, TRNG, buffer, predictors) and the
//! cycle loop that couples it to the cores.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::buffer::{RandomNumberBuffer, ServeOutcome};
use crate::cpu::{Core, CoreConfig, CoreStats, MemoryPort, PortOutcome};
use crate::dram::{ChannelMode, Command, Cycle, Dram, DramConfig};
use crate::error::{ConfigError, Error};
use crate::memctrl::{
    ChannelController, Entry, MemRequest, QueueSel, ReqId, ReqKind, SchedContext, SchedulerConfig, Serviced,
};
use crate::predictor::{Action, FillPolicy, IdleClass, PredictionStats, PredictorConfig, QAgent, SimplePredictor};
use crate::trng::{RngOperation, TrngConfig, TrngEngine, TrngModel, WORD_BITS};
use crate::workloads::{Trace, TraceOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferConfig {
    /// 64-bit entries; 0 disables the buffer.
    pub entries: u32,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig { entries: 16 }
    }
}

impl BufferConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.entries > 256 {
            return Err(ConfigError::invalid("buffer.entries must be in 0..=256"));
        }
        Ok(())
    }
}

fn default_max_core_cycles() -> u64 {
    4_000_000_000
}

/// Every parameter of the simulated machine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default)]
    pub dram: DramConfig,
    #[serde(default)]
    pub core: CoreConfig,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub trng: TrngConfig,
    #[serde(default)]
    pub buffer: BufferConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
    /// Abort a run that has not finished after this many core cycles.
    #[serde(default = "default_max_core_cycles")]
    pub max_core_cycles: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            dram: DramConfig::default(),
            core: CoreConfig::default(),
            scheduler: SchedulerConfig::default(),
            trng: TrngConfig::default(),
            buffer: BufferConfig::default(),
            predictor: PredictorConfig::default(),
            max_core_cycles: default_max_core_cycles(),
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.dram.validate()?;
        self.core.validate(self.dram.bus_frequency)?;
        self.scheduler.validate()?;
        TrngModel::from_config(&self.trng)?;
        self.buffer.validate()?;
        self.predictor.validate()?;
        if self.max_core_cycles == 0 {
            return Err(ConfigError::invalid("max_core_cycles must be >= 1"));
        }
        Ok(())
    }

    pub fn clock_ratio(&self) -> u64 {
        self.core.clock_ratio(self.dram.bus_frequency)
    }
}

/// Per-channel idleness tracking and predictor state.
#[derive(Clone, Debug)]
struct IdleTracker {
    simple: SimplePredictor,
    agent: QAgent,
    in_period: bool,
    idle_len: Cycle,
    predicted: IdleClass,
    rl_state: usize,
    rl_action: Action,
    low_util_armed: bool,
    stats: PredictionStats,
}

impl IdleTracker {
    fn new(cfg: &PredictorConfig) -> Self {
        IdleTracker {
            simple: SimplePredictor::new(cfg.table_entries, cfg.period_threshold),
            agent: QAgent::new(cfg.rl_alpha, cfg.period_threshold),
            in_period: false,
            idle_len: 0,
            predicted: IdleClass::Short,
            rl_state: 0,
            rl_action: Action::Wait,
            low_util_armed: true,
            stats: PredictionStats::default(),
        }
    }
}

/// One completed idle period, for predictor studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IdlePeriod {
    pub channel: usize,
    pub length: Cycle,
    pub predicted: IdleClass,
    /// Address of the last regular request before the period.
    pub context: u64,
}

/// Counters kept by the memory system.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemStats {
    pub busy_cycles: Vec<u64>,
    pub rng_mode_cycles: Vec<u64>,
    pub idle_cycles: Vec<u64>,
    pub ondemand_ops: u64,
    pub idle_batches: u64,
    pub greedy_credits: u64,
    pub reads_serviced: u64,
    pub writes_serviced: u64,
    pub bits_to_requesters: u64,
    pub max_queue_wait: u64,
}

#[derive(Clone, Debug)]
pub struct MemorySystem {
    cfg: SystemConfig,
    dram: Dram,
    ctrls: Vec<ChannelController>,
    engine: TrngEngine,
    buffer: RandomNumberBuffer,
    trackers: Vec<IdleTracker>,
    batches: Vec<Option<RngOperation>>,
    ondemand: Option<(RngOperation, usize)>,
    completions: BinaryHeap<Reverse<(Cycle, ReqId, usize)>>,
    rng_apps: Vec<bool>,
    priorities: Vec<u32>,
    next_id: ReqId,
    clock_ratio: u64,
    now: Cycle,
    stats: MemStats,
    period_log: Option<Vec<IdlePeriod>>,
}

impl MemorySystem {
    pub fn new(cfg: &SystemConfig, cores: usize) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let dram = Dram::new(&cfg.dram)?;
        let channels = dram.num_channels();
        let banks = cfg.dram.banks_per_channel();
        let mut priorities = cfg.scheduler.priorities.clone();
        priorities.resize(cores.max(priorities.len()), 0);
        Ok(MemorySystem {
            ctrls: (0..channels).map(|c| ChannelController::new(c, &cfg.scheduler, banks)).collect(),
            engine: TrngEngine::new(TrngModel::from_config(&cfg.trng)?),
            buffer: RandomNumberBuffer::new(cfg.buffer.entries),
            trackers: (0..channels).map(|_| IdleTracker::new(&cfg.predictor)).collect(),
            batches: vec![None; channels],
            ondemand: None,
            completions: BinaryHeap::new(),
            rng_apps: vec![false; cores],
            priorities,
            next_id: 0,
            clock_ratio: cfg.clock_ratio(),
            now: 0,
            stats: MemStats {
                busy_cycles: vec![0; channels],
                rng_mode_cycles: vec![0; channels],
                idle_cycles: vec![0; channels],
                ..Default::default()
            },
            period_log: None,
            dram,
            cfg: cfg.clone(),
        })
    }

    pub fn dram(&self) -> &Dram {
        &self.dram
    }

    pub fn controller(&self, ch: usize) -> &ChannelController {
        &self.ctrls[ch]
    }

    pub fn buffer(&self) -> &RandomNumberBuffer {
        &self.buffer
    }

    pub fn engine(&self) -> &TrngEngine {
        &self.engine
    }

    pub fn stats(&self) -> &MemStats {
        &self.stats
    }

    pub fn now(&self) -> Cycle {
        self.now
    }

    pub fn is_rng_app(&self, core: usize) -> bool {
        self.rng_apps.get(core).copied().unwrap_or(false)
    }

    pub fn prediction_stats(&self) -> PredictionStats {
        let mut s = PredictionStats::default();
        for t in &self.trackers {
            s.merge(&t.stats);
        }
        s
    }

    /// Start recording every completed idle period.
    pub fn log_idle_periods(&mut self) {
        self.period_log = Some(Vec::new());
    }

    pub fn idle_periods(&self) -> &[IdlePeriod] {
        self.period_log.as_deref().unwrap_or(&[])
    }

    pub fn set_priorities(&mut self, priorities: &[u32]) {
        self.priorities = priorities.to_vec();
        for c in &mut self.ctrls {
            c.set_priorities(priorities);
        }
    }

    /// Overwrite one simple-predictor counter on channel `ch`.
    pub fn set_predictor_counter(&mut self, ch: usize, addr: u64, value: u8) {
        self.trackers[ch].simple.set_counter(addr, value);
    }

    /// Pre-load random bits into the buffer.
    pub fn seed_buffer(&mut self, bits: u32) {
        let b = self.engine.free_bits(bits);
        self.buffer.push(&b);
    }

    fn regular_idle(&self, ch: usize) -> bool {
        self.ctrls[ch].queues.regular_empty() && self.dram.data_bus_free(ch, self.now)
    }

    fn rng_pending(&self, ch: usize) -> bool {
        let q = &self.ctrls[ch].queues;
        !q.rng_q.is_empty() || q.read_q.oldest_rng().is_some()
    }

    /// Bus cycle at which a request sent at `core_cycle` is first seen.
    fn arrival_cycle(&self, core_cycle: u64) -> Cycle {
        core_cycle / self.clock_ratio + 1
    }

    fn end_idle_period(&mut self, ch: usize, addr: u64) {
        let threshold = self.cfg.predictor.period_threshold;
        let t = &mut self.trackers[ch];
        if !t.in_period {
            t.simple.last_addr = addr;
            t.agent.last_addr = addr;
            return;
        }
        t.in_period = false;
        let observed = t.idle_len;
        let actual = IdleClass::of(observed, threshold);
        let predicted = t.predicted;
        let context = t.simple.last_addr;
        t.stats.record(predicted, actual);
        t.simple.update(observed, addr);
        t.agent.update(t.rl_state, t.rl_action, observed, addr);
        t.idle_len = 0;
        if let Some(log) = &mut self.period_log {
            log.push(IdlePeriod { channel: ch, length: observed, predicted, context });
        }
    }

    fn send_regular(&mut self, core: usize, kind: ReqKind, addr: u64, core_cycle: u64) -> PortOutcome {
        let loc = self.dram.decode_address(addr).expect("trace addresses are checked at load");
        let ch = loc.channel as usize;
        if !self.ctrls[ch].has_room(kind) {
            return PortOutcome::Backpressure;
        }
        let id = self.next_id;
        self.next_id += 1;
        let req = MemRequest {
            id,
            core,
            kind,
            addr: Some(addr),
            arrival: core_cycle,
            enqueue_cycle: self.arrival_cycle(core_cycle),
            completion: None,
        };
        let bank = loc.bank_index(self.dram.layout().banks_per_rank());
        let ok = self.ctrls[ch].enqueue(Entry::new(req, loc, bank));
        debug_assert!(ok);
        self.end_idle_period(ch, addr);
        PortOutcome::Accepted(id)
    }

    fn send_rng(&mut self, core: usize, core_cycle: u64) -> PortOutcome {
        if self.ctrls.iter().any(|c| !c.has_room(ReqKind::RngRead)) {
            return PortOutcome::Backpressure;
        }
        if let Some(m) = self.rng_apps.get_mut(core) {
            *m = true;
        }
        let id = self.next_id;
        self.next_id += 1;
        let arrival = self.arrival_cycle(core_cycle);
        if let ServeOutcome::Served(_) = self.buffer.serve() {
            self.completions.push(Reverse((arrival, id, core)));
            return PortOutcome::Accepted(id);
        }
        let req = MemRequest {
            id,
            core,
            kind: ReqKind::RngRead,
            addr: None,
            arrival: core_cycle,
            enqueue_cycle: arrival,
            completion: None,
        };
        for c in &mut self.ctrls {
            let ok = c.enqueue(Entry::rng(req));
            debug_assert!(ok);
        }
        PortOutcome::Accepted(id)
    }

    /// Advance one bus cycle. Returns requests completing at `now` as
    /// `(core, id)`.
    pub fn tick(&mut self, now: Cycle) -> Vec<(usize, ReqId)> {
        self.now = now;
        self.finish_rng_ops(now);
        for ch in 0..self.ctrls.len() {
            self.dram.tick_refresh(ch, now);
            self.ctrls[ch].begin_cycle(now);
            self.track_idle(ch);
            self.maybe_fill(ch, now);
        }
        let ctx = SchedContext {
            priorities: &self.priorities,
            rng_apps: &self.rng_apps,
            rng_start_ok: self.batches.iter().all(Option::is_none),
        };
        for (ch, ctrl) in self.ctrls.iter_mut().enumerate() {
            let Some(Serviced::Issued { cmd, entry, done_at, queue }) = ctrl.tick(&mut self.dram, now, &ctx) else {
                continue;
            };
            match cmd {
                Command::Rd => {
                    self.stats.reads_serviced += 1;
                    self.trackers[ch].low_util_armed = true;
                    self.completions.push(Reverse((done_at, entry.id(), entry.req.core)));
                }
                Command::Wr => {
                    debug_assert_eq!(queue, QueueSel::Write);
                    self.stats.writes_serviced += 1;
                }
                Command::Act | Command::Pre => {}
            }
        }
        self.maybe_start_ondemand(now);
        self.account(now);
        let mut done = Vec::new();
        while let Some(&Reverse((at, id, core))) = self.completions.peek() {
            if at > now {
                break;
            }
            self.completions.pop();
            done.push((core, id));
        }
        done
    }

    fn finish_rng_ops(&mut self, now: Cycle) {
        for ch in 0..self.batches.len() {
            if let Some(op) = self.batches[ch] {
                if op.finish <= now {
                    self.dram.exit_rng_mode(ch, now);
                    let bits = self.engine.harvest_bits(&op);
                    self.buffer.fill_reserved(&bits);
                    self.batches[ch] = None;
                }
            }
        }
        if let Some((op, core)) = self.ondemand {
            if op.finish <= now {
                for ch in 0..self.ctrls.len() {
                    self.dram.exit_rng_mode(ch, now);
                }
                let bits = self.engine.harvest_bits(&op);
                self.buffer.fill_reserved(&bits[WORD_BITS as usize..]);
                self.stats.bits_to_requesters += WORD_BITS as u64;
                let crate::trng::RngOpKind::OnDemand { request, .. } = op.kind else { unreachable!() };
                self.completions.push(Reverse((now, request, core)));
                self.ondemand = None;
            }
        }
    }

    fn track_idle(&mut self, ch: usize) {
        let idle = self.regular_idle(ch);
        let policy = self.cfg.predictor.policy;
        let threshold = self.cfg.predictor.period_threshold;
        let t = &mut self.trackers[ch];
        if !t.in_period {
            if !idle {
                return;
            }
            t.in_period = true;
            t.idle_len = 0;
            t.rl_state = t.agent.state();
            t.rl_action = t.agent.act(t.rl_state);
            t.predicted = match policy {
                FillPolicy::RlAgent => t.rl_action.as_class(),
                _ => t.simple.predict(),
            };
        }
        if !idle {
            return;
        }
        t.idle_len += 1;
        if policy == FillPolicy::GreedyOracle && t.idle_len.is_multiple_of(threshold) {
            let n = (self.cfg.predictor.greedy_bits as usize).min(self.buffer.unclaimed()) as u32;
            if n > 0 {
                let bits = self.engine.free_bits(n);
                self.buffer.push(&bits);
                self.stats.greedy_credits += 1;
            }
        }
    }

    fn maybe_fill(&mut self, ch: usize, now: Cycle) {
        let policy = self.cfg.predictor.policy;
        if matches!(policy, FillPolicy::None | FillPolicy::GreedyOracle) {
            return;
        }
        let batch_bits = self.engine.model().batch_bits_per_channel as usize;
        if self.ctrls[ch].committed().is_some()
            || self.dram.channel(ch).blocked(now)
            || !self.dram.data_bus_free(ch, now)
            || self.rng_pending(ch)
            || self.buffer.unclaimed() < batch_bits
        {
            return;
        }
        let idle = self.regular_idle(ch);
        let t = &self.trackers[ch];
        let go = match policy {
            FillPolicy::SimpleBuffering => idle,
            FillPolicy::SimplePredictor => {
                let in_long = idle && t.in_period && t.predicted == IdleClass::Long;
                let thr = self.cfg.predictor.low_util_threshold;
                let low_util = thr > 0
                    && t.low_util_armed
                    && t.simple.low_util_trigger(self.ctrls[ch].queues.regular_reads(), thr);
                if low_util && !in_long {
                    self.trackers[ch].low_util_armed = false;
                }
                in_long || low_util
            }
            FillPolicy::RlAgent => idle && t.in_period && t.rl_action == Action::Generate,
            FillPolicy::None | FillPolicy::GreedyOracle => false,
        };
        if !go {
            return;
        }
        let op = self.engine.begin_idle_batch(ch, now);
        let reserved = self.buffer.reserve(op.bits_yield as usize);
        debug_assert!(reserved);
        self.dram.enter_rng_mode(ch, now, op.finish);
        self.batches[ch] = Some(op);
        self.stats.idle_batches += 1;
    }

    fn maybe_start_ondemand(&mut self, now: Cycle) {
        if self.ondemand.is_some() {
            return;
        }
        let Some(id) = self.ctrls[0].committed() else {
            return;
        };
        for (ch, c) in self.ctrls.iter().enumerate() {
            if c.committed() != Some(id) || !self.dram.data_bus_free(ch, now) || self.dram.channel(ch).refreshing(now) {
                return;
            }
        }
        let mut entry = None;
        for c in &mut self.ctrls {
            entry = Some(c.release_rng(&mut self.dram, id));
        }
        let core = entry.expect("at least one channel").req.core;
        if self.buffer.serve_queued().is_some() {
            self.completions.push(Reverse((now + 1, id, core)));
            return;
        }
        let model = *self.engine.model();
        let room = self.buffer.unclaimed() as u32;
        let bits_yield = model.ondemand_bits.min(WORD_BITS + room);
        let reserved = self.buffer.reserve((bits_yield - WORD_BITS) as usize);
        debug_assert!(reserved);
        let op = self.engine.begin_ondemand(id, core, now, bits_yield);
        for ch in 0..self.ctrls.len() {
            self.dram.enter_rng_mode(ch, now, op.finish);
        }
        self.ondemand = Some((op, core));
        self.stats.ondemand_ops += 1;
    }

    fn account(&mut self, now: Cycle) {
        for ch in 0..self.ctrls.len() {
            let queues_empty = self.ctrls[ch].queues.all_empty();
            if self.dram.channel_idle(ch, now, queues_empty) {
                self.stats.idle_cycles[ch] += 1;
            } else {
                self.stats.busy_cycles[ch] += 1;
            }
            if self.dram.channel(ch).mode == ChannelMode::RngMode {
                self.stats.rng_mode_cycles[ch] += 1;
            }
            self.stats.max_queue_wait = self.stats.max_queue_wait.max(self.ctrls[ch].max_wait());
        }
    }
}

impl MemoryPort for MemorySystem {
    fn send(&mut self, core: usize, op: TraceOp, core_cycle: u64) -> PortOutcome {
        match op {
            TraceOp::Read(a) => self.send_regular(core, ReqKind::Read, a, core_cycle),
            TraceOp::Write(a) => self.send_regular(core, ReqKind::Write, a, core_cycle),
            TraceOp::Rng => self.send_rng(core, core_cycle),
        }
    }
}

/// Raw outcome of one simulation.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub cores: Vec<CoreStats>,
    pub mem: MemStats,
    pub prediction: PredictionStats,
    pub buffer_served: u64,
    pub buffer_requests: u64,
    pub bits_harvested: u64,
    pub buffer_bits_in: u64,
    pub bus_cycles: Cycle,
    pub core_cycles: u64,
}

/// Cores plus memory system, advanced in lock step.
pub struct Simulation {
    pub cores: Vec<Core>,
    pub mem: MemorySystem,
    ratio: u64,
    max_core_cycles: u64,
    cycle: u64,
}

impl Simulation {
    /// `budgets[i]` overrides the configured instruction budget of core `i`.
    pub fn new(cfg: &SystemConfig, traces: Vec<Trace>, budgets: &[Option<u64>]) -> Result<Self, Error> {
        cfg.validate()?;
        if traces.is_empty() {
            return Err(ConfigError::invalid("at least one core is required").into());
        }
        let cores = traces
            .into_iter()
            .enumerate()
            .map(|(i, t)| Core::new(i, t, &cfg.core, budgets.get(i).copied().flatten()))
            .collect::<Vec<_>>();
        let mem = MemorySystem::new(cfg, cores.len())?;
        Ok(Simulation { cores, mem, ratio: cfg.clock_ratio(), max_core_cycles: cfg.max_core_cycles, cycle: 0 })
    }

    pub fn core_cycle(&self) -> u64 {
        self.cycle
    }

    /// One core cycle; the memory system ticks on every `ratio`-th.
    pub fn step(&mut self) {
        let cc = self.cycle;
        if cc.is_multiple_of(self.ratio) {
            for (core, id) in self.mem.tick(cc / self.ratio) {
                self.cores[core].complete(id);
            }
        }
        // Who goes first follows a Weyl sequence, so no core always wins the
        // queue slots freed by a periodic service pattern.
        let n = self.cores.len();
        let first = (((cc.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 32) * n as u64) >> 32) as usize;
        for i in 0..n {
            self.cores[(first + i) % n].tick(cc, &mut self.mem);
        }
        self.cycle += 1;
    }

    pub fn run(mut self) -> Result<SimOutput, Error> {
        while !self.cores.iter().all(Core::finished) {
            if self.cycle >= self.max_core_cycles {
                return Err(Error::CycleLimit(self.max_core_cycles));
            }
            self.step();
        }
        Ok(self.output())
    }

    pub fn output(&self) -> SimOutput {
        SimOutput {
            cores: self.cores.iter().map(Core::stats).collect(),
            mem: self.mem.stats().clone(),
            prediction: self.mem.prediction_stats(),
            buffer_served: self.mem.buffer().served_from_buffer(),
            buffer_requests: self.mem.buffer().total_rng_requests(),
            bits_harvested: self.mem.engine().bits_harvested(),
            buffer_bits_in: self.mem.buffer().bits_in(),
            bus_cycles: self.mem.now() + 1,
            core_cycles: self.cycle,
        }
    }
}
