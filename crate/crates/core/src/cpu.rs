//! Trace-driven core with a bounded in-order-retire instruction window.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::memctrl::ReqId;
use crate::workloads::{Trace, TraceOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoreConfig {
    /// Hz.
    pub frequency: u64,
    pub issue_width: u32,
    pub window_entries: u32,
    /// Instructions per core after which its statistics freeze.
    pub instruction_budget: u64,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig { frequency: 4_000_000_000, issue_width: 3, window_entries: 128, instruction_budget: 5_000_000 }
    }
}

impl CoreConfig {
    pub fn validate(&self, bus_frequency: u64) -> Result<(), ConfigError> {
        if self.issue_width == 0 || self.window_entries == 0 || self.instruction_budget == 0 {
            return Err(ConfigError::invalid("core issue_width, window_entries and instruction_budget must be >= 1"));
        }
        if bus_frequency == 0 || self.frequency < bus_frequency || !self.frequency.is_multiple_of(bus_frequency) {
            return Err(ConfigError::invalid(format!(
                "core.frequency {} must be an integral multiple of the bus frequency {bus_frequency}",
                self.frequency
            )));
        }
        Ok(())
    }

    pub fn clock_ratio(&self, bus_frequency: u64) -> u64 {
        self.frequency / bus_frequency
    }
}

/// Result of handing one memory op to the memory system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PortOutcome {
    /// Queued; completion arrives later through [`Core::complete`].
    Accepted(ReqId),
    /// Done already (writes, or an ideal memory).
    Completed,
    /// Queue full; the core retries next cycle.
    Backpressure,
}

pub trait MemoryPort {
    fn send(&mut self, core: usize, op: TraceOp, core_cycle: u64) -> PortOutcome;
}

/// Memory that completes everything instantly.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdealMemory {
    pub sent: u64,
    pub rng_sent: u64,
}

impl MemoryPort for IdealMemory {
    fn send(&mut self, _core: usize, op: TraceOp, _core_cycle: u64) -> PortOutcome {
        self.sent += 1;
        if op == TraceOp::Rng {
            self.rng_sent += 1;
        }
        PortOutcome::Completed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Bubbles(u64),
    Mem { id: Option<ReqId>, done: bool },
}

/// Statistics of one core, frozen when it reaches its budget.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CoreStats {
    pub retired: u64,
    pub mem_stall_cycles: u64,
    pub cycles: u64,
    pub reads: u64,
    pub writes: u64,
    pub rng_requests: u64,
}

#[derive(Clone, Debug)]
pub struct Core {
    pub id: usize,
    trace: Trace,
    budget: u64,
    issue_width: u64,
    window_cap: u64,
    window: VecDeque<Slot>,
    occupancy: u64,
    record: usize,
    /// Bubbles of the current record already placed in the window.
    fetched_bubbles: u64,
    live: CoreStats,
    frozen: Option<CoreStats>,
}

impl Core {
    pub fn new(id: usize, trace: Trace, cfg: &CoreConfig, budget: Option<u64>) -> Self {
        assert!(trace.instructions() > 0, "core {id} has an empty trace");
        Core {
            id,
            trace,
            budget: budget.unwrap_or(cfg.instruction_budget),
            issue_width: cfg.issue_width as u64,
            window_cap: cfg.window_entries as u64,
            window: VecDeque::new(),
            occupancy: 0,
            record: 0,
            fetched_bubbles: 0,
            live: CoreStats::default(),
            frozen: None,
        }
    }

    pub fn finished(&self) -> bool {
        self.frozen.is_some()
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn occupancy(&self) -> u64 {
        self.occupancy
    }

    /// Statistics at the budget, or the live values before reaching it.
    pub fn stats(&self) -> CoreStats {
        self.frozen.unwrap_or(self.live)
    }

    pub fn mcpi(&self) -> Option<f64> {
        let s = self.stats();
        (s.retired > 0).then(|| s.mem_stall_cycles as f64 / s.retired as f64)
    }

    /// Mark request `id` complete.
    pub fn complete(&mut self, id: ReqId) {
        for slot in self.window.iter_mut() {
            if let Slot::Mem { id: Some(sid), done } = slot {
                if *sid == id {
                    *done = true;
                    return;
                }
            }
        }
        panic!("core {} got completion for unknown request {id}", self.id);
    }

    /// One core cycle: retire from the head, then fetch into the tail.
    pub fn tick(&mut self, now: u64, port: &mut impl MemoryPort) {
        let retired = self.retire();
        if retired == 0 && matches!(self.window.front(), Some(Slot::Mem { done: false, .. })) {
            self.live.mem_stall_cycles += 1;
        }
        self.live.retired += retired;
        self.live.cycles = now + 1;
        if self.frozen.is_none() && self.live.retired >= self.budget {
            let mut s = self.live;
            s.retired = self.budget;
            self.frozen = Some(s);
        }
        self.fetch(now, port);
    }

    fn retire(&mut self) -> u64 {
        let mut left = self.issue_width;
        while left > 0 {
            match self.window.front_mut() {
                Some(Slot::Bubbles(n)) => {
                    let k = (*n).min(left);
                    *n -= k;
                    left -= k;
                    self.occupancy -= k;
                    if *n == 0 {
                        self.window.pop_front();
                    }
                }
                Some(Slot::Mem { done: true, .. }) => {
                    self.window.pop_front();
                    self.occupancy -= 1;
                    left -= 1;
                }
                _ => break,
            }
        }
        self.issue_width - left
    }

    fn fetch(&mut self, now: u64, port: &mut impl MemoryPort) {
        let mut left = self.issue_width;
        while left > 0 && self.occupancy < self.window_cap {
            let rec = self.trace.records[self.record];
            if self.fetched_bubbles < rec.bubbles {
                let k = (rec.bubbles - self.fetched_bubbles).min(left).min(self.window_cap - self.occupancy);
                match self.window.back_mut() {
                    Some(Slot::Bubbles(n)) => *n += k,
                    _ => self.window.push_back(Slot::Bubbles(k)),
                }
                self.occupancy += k;
                self.fetched_bubbles += k;
                left -= k;
                continue;
            }
            let slot = match port.send(self.id, rec.op, now) {
                PortOutcome::Backpressure => return,
                PortOutcome::Accepted(id) => Slot::Mem { id: Some(id), done: matches!(rec.op, TraceOp::Write(_)) },
                PortOutcome::Completed => Slot::Mem { id: None, done: true },
            };
            if self.frozen.is_none() {
                match rec.op {
                    TraceOp::Read(_) => self.live.reads += 1,
                    TraceOp::Write(_) => self.live.writes += 1,
                    TraceOp::Rng => self.live.rng_requests += 1,
                }
            }
            self.window.push_back(slot);
            self.occupancy += 1;
            left -= 1;
            self.fetched_bubbles = 0;
            self.record = (self.record + 1) % self.trace.records.len();
        }
    }
}
