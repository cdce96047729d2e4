//! Per-channel memory controller: request queues, scheduling policies,
//! write draining and starvation prevention.

mod queue;
pub mod scheduler;

pub use queue::*;

use serde::{Deserialize, Serialize};

use crate::dram::{Command, Cycle, Dram};
use crate::error::ConfigError;
use scheduler::{candidate, pick_bliss, pick_frfcfs_cap, Pick, PickAction};

const WRITE_HIGH_WATERMARK: f64 = 0.8;
const WRITE_LOW_WATERMARK: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    FrFcfsCap,
    Bliss,
    RngAware,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    pub kind: SchedulerKind,
    pub column_cap: u32,
    pub bliss_blacklist_threshold: u32,
    pub bliss_clearing_interval: Cycle,
    pub stall_limit: u64,
    /// Priority level per core id; missing cores get 0.
    pub priorities: Vec<u32>,
    pub read_queue_entries: usize,
    pub write_queue_entries: usize,
    pub rng_queue_entries: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            kind: SchedulerKind::FrFcfsCap,
            column_cap: 16,
            bliss_blacklist_threshold: 4,
            bliss_clearing_interval: 10_000,
            stall_limit: 100,
            priorities: Vec::new(),
            read_queue_entries: 32,
            write_queue_entries: 32,
            rng_queue_entries: 32,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.column_cap == 0 {
            return Err(ConfigError::invalid("scheduler.column_cap must be >= 1"));
        }
        if self.stall_limit == 0 {
            return Err(ConfigError::invalid("scheduler.stall_limit must be >= 1"));
        }
        if self.bliss_blacklist_threshold == 0 || self.bliss_clearing_interval == 0 {
            return Err(ConfigError::invalid("scheduler BLISS threshold and clearing interval must be >= 1"));
        }
        if self.read_queue_entries == 0 || self.write_queue_entries == 0 || self.rng_queue_entries == 0 {
            return Err(ConfigError::invalid("scheduler queue sizes must be >= 1"));
        }
        Ok(())
    }

    pub fn priority(&self, core: usize) -> u32 {
        self.priorities.get(core).copied().unwrap_or(0)
    }

    /// RNG requests live in their own queue only under the RNG-aware policy.
    pub fn separate_rng_queue(&self) -> bool {
        self.kind == SchedulerKind::RngAware
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QueueSel {
    Read,
    Write,
    Rng,
}

impl QueueSel {
    fn other(self) -> QueueSel {
        match self {
            QueueSel::Read => QueueSel::Rng,
            QueueSel::Rng => QueueSel::Read,
            QueueSel::Write => QueueSel::Write,
        }
    }
}

/// Per-cycle inputs owned by the memory system.
#[derive(Clone, Copy, Debug)]
pub struct SchedContext<'a> {
    pub priorities: &'a [u32],
    pub rng_apps: &'a [bool],
    /// False while some channel is still busy with a buffer-fill batch; an
    /// on-demand RNG request then waits without holding this channel.
    pub rng_start_ok: bool,
}

impl SchedContext<'_> {
    fn priority(&self, core: usize) -> u32 {
        self.priorities.get(core).copied().unwrap_or(0)
    }

    fn is_rng_app(&self, core: usize) -> bool {
        self.rng_apps.get(core).copied().unwrap_or(false)
    }
}

/// What the controller did this cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Serviced {
    Issued {
        queue: QueueSel,
        cmd: Command,
        entry: Entry,
        /// Data-transfer end for column commands.
        done_at: Cycle,
    },
    /// The channel joined the on-demand operation for this request and now
    /// holds until every channel has joined.
    Committed { queue: QueueSel, entry: Entry },
}

#[derive(Clone, Debug, Default)]
struct BlissState {
    last_core: Option<usize>,
    streak: u32,
    blacklist: Vec<bool>,
}

impl BlissState {
    fn record(&mut self, core: usize, threshold: u32) {
        if self.last_core == Some(core) {
            self.streak += 1;
        } else {
            self.last_core = Some(core);
            self.streak = 1;
        }
        if self.streak >= threshold {
            if self.blacklist.len() <= core {
                self.blacklist.resize(core + 1, false);
            }
            self.blacklist[core] = true;
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChannelController {
    pub channel: usize,
    pub queues: QueueSet,
    cfg: SchedulerConfig,
    hit_streak: Vec<u32>,
    bliss: BlissState,
    draining_writes: bool,
    /// Writes the current drain may still issue.
    drain_left: usize,
    /// A drain ended on its bound while reads waited; serve one first.
    reads_owed: bool,
    committed: Option<ReqId>,
    rng_drain: bool,
    older_rng_bound: Option<ReqId>,
    stall_counter: u64,
    stalled_queue: Option<QueueSel>,
    forced: Option<QueueSel>,
    read_wait: u64,
    rng_wait: u64,
    max_wait: u64,
}

impl ChannelController {
    pub fn new(channel: usize, cfg: &SchedulerConfig, banks: usize) -> Self {
        ChannelController {
            channel,
            queues: QueueSet::new(cfg.read_queue_entries, cfg.write_queue_entries, cfg.rng_queue_entries),
            cfg: cfg.clone(),
            hit_streak: vec![0; banks],
            bliss: BlissState::default(),
            draining_writes: false,
            drain_left: 0,
            reads_owed: false,
            committed: None,
            rng_drain: false,
            older_rng_bound: None,
            stall_counter: 0,
            stalled_queue: None,
            forced: None,
            read_wait: 0,
            rng_wait: 0,
            max_wait: 0,
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    pub fn stall_counter(&self) -> u64 {
        self.stall_counter
    }

    pub fn forced(&self) -> Option<QueueSel> {
        self.forced
    }

    pub fn draining_writes(&self) -> bool {
        self.draining_writes
    }

    pub fn committed(&self) -> Option<ReqId> {
        self.committed
    }

    pub fn blacklisted(&self, core: usize) -> bool {
        self.bliss.blacklist.get(core).copied().unwrap_or(false)
    }

    /// Longest run of decision cycles in which a queue held an issuable
    /// request but was not serviced.
    pub fn max_wait(&self) -> u64 {
        self.max_wait
    }

    fn queue(&self, q: QueueSel) -> &RequestQueue {
        match q {
            QueueSel::Read => &self.queues.read_q,
            QueueSel::Write => &self.queues.write_q,
            QueueSel::Rng => &self.queues.rng_q,
        }
    }

    fn queue_mut(&mut self, q: QueueSel) -> &mut RequestQueue {
        match q {
            QueueSel::Read => &mut self.queues.read_q,
            QueueSel::Write => &mut self.queues.write_q,
            QueueSel::Rng => &mut self.queues.rng_q,
        }
    }

    /// Queue a request would be placed in.
    pub fn target_queue(&self, kind: ReqKind) -> QueueSel {
        match kind {
            ReqKind::Read => QueueSel::Read,
            ReqKind::Write => QueueSel::Write,
            ReqKind::RngRead if self.cfg.separate_rng_queue() => QueueSel::Rng,
            ReqKind::RngRead => QueueSel::Read,
        }
    }

    pub fn has_room(&self, kind: ReqKind) -> bool {
        !self.queue(self.target_queue(kind)).is_full()
    }

    /// Place an entry; `false` means backpressure.
    pub fn enqueue(&mut self, e: Entry) -> bool {
        let q = self.target_queue(e.req.kind);
        let queue = self.queue_mut(q);
        if queue.is_full() {
            return false;
        }
        queue.push(e);
        true
    }

    /// Reset priority-dependent state after the priority map changed.
    pub fn set_priorities(&mut self, priorities: &[u32]) {
        self.cfg.priorities = priorities.to_vec();
        self.stall_counter = 0;
        self.stalled_queue = None;
        self.forced = None;
        self.rng_drain = false;
        self.older_rng_bound = None;
    }

    /// Remove the committed RNG request once its operation has begun.
    pub fn release_rng(&mut self, dram: &mut Dram, id: ReqId) -> Entry {
        debug_assert_eq!(self.committed, Some(id));
        self.committed = None;
        dram.set_held(self.channel, false);
        let q = self.target_queue(ReqKind::RngRead);
        self.queue_mut(q).remove_id(id).expect("committed RNG request missing")
    }

    /// Per-cycle bookkeeping that runs whether or not the channel can issue.
    pub fn begin_cycle(&mut self, now: Cycle) {
        if self.cfg.kind == SchedulerKind::Bliss && now > 0 && now.is_multiple_of(self.cfg.bliss_clearing_interval) {
            self.bliss.blacklist.iter_mut().for_each(|b| *b = false);
        }
        if self.queues.rng_q.is_empty() {
            self.rng_drain = false;
            self.older_rng_bound = None;
        }
        if self.forced.is_some_and(|q| self.queue(q).is_empty()) {
            self.forced = None;
        }
    }

    fn reads_empty(&self) -> bool {
        self.queues.read_q.is_empty() && self.queues.rng_q.is_empty()
    }

    /// Drains start at the high watermark (or when no reads wait) and end at
    /// the low watermark or after the writes queued above it at entry.
    fn update_write_mode(&mut self) {
        let w = self.queues.write_q.len();
        let cap = self.queues.write_q.capacity() as f64;
        let low = (WRITE_LOW_WATERMARK * cap) as usize;
        if self.draining_writes && (w == 0 || w <= low || self.drain_left == 0) {
            self.draining_writes = false;
            self.reads_owed = self.drain_left == 0 && !self.reads_empty();
        }
        let high = w as f64 >= WRITE_HIGH_WATERMARK * cap && !self.reads_owed;
        if !self.draining_writes && w > 0 && (high || self.reads_empty()) {
            self.draining_writes = true;
            self.drain_left = w.saturating_sub(low).max(1);
        }
    }

    /// A read has opened its row and still waits for its column command.
    fn activation_pending(&self) -> bool {
        self.queues.read_q.entries().iter().any(|e| e.activated)
    }

    fn has_issuable(&self, dram: &Dram, q: QueueSel, now: Cycle, rng_ok: bool) -> bool {
        self.queue(q).entries().iter().any(|e| candidate(dram, self.channel, e, now, rng_ok).is_some())
    }

    /// Make at most one scheduling decision for this channel.
    pub fn tick(&mut self, dram: &mut Dram, now: Cycle, ctx: &SchedContext) -> Option<Serviced> {
        if self.committed.is_some() || dram.channel(self.channel).blocked(now) {
            if self.cfg.kind == SchedulerKind::RngAware {
                self.advance_stall(ctx, true, None);
            }
            return None;
        }
        self.update_write_mode();
        if self.draining_writes {
            let pick = pick_frfcfs_cap(
                &self.queues.write_q,
                dram,
                self.channel,
                now,
                &self.hit_streak,
                self.cfg.column_cap,
                false,
            );
            return pick.map(|p| self.apply(dram, QueueSel::Write, p, now));
        }
        let rng_ok = ctx.rng_start_ok && !self.activation_pending();
        let read_ready = self.has_issuable(dram, QueueSel::Read, now, rng_ok);
        let rng_ready = self.has_issuable(dram, QueueSel::Rng, now, rng_ok);
        let out = match self.cfg.kind {
            SchedulerKind::FrFcfsCap => {
                self.pick_read_regular(dram, now, rng_ok).map(|p| self.apply(dram, QueueSel::Read, p, now))
            }
            SchedulerKind::Bliss => {
                pick_bliss(&self.queues.read_q, dram, self.channel, now, &self.bliss.blacklist, rng_ok)
                    .map(|p| self.apply(dram, QueueSel::Read, p, now))
            }
            SchedulerKind::RngAware => self.tick_rng_aware(dram, now, ctx, rng_ok),
        };
        let served = match out {
            Some(Serviced::Issued { queue, .. }) | Some(Serviced::Committed { queue, .. }) => Some(queue),
            None => None,
        };
        if self.cfg.kind == SchedulerKind::RngAware {
            self.advance_stall(ctx, false, served);
        }
        self.read_wait = if read_ready && served != Some(QueueSel::Read) { self.read_wait + 1 } else { 0 };
        self.rng_wait = if rng_ready && served != Some(QueueSel::Rng) { self.rng_wait + 1 } else { 0 };
        self.max_wait = self.max_wait.max(self.read_wait).max(self.rng_wait);
        out
    }

    fn pick_read_regular(&self, dram: &Dram, now: Cycle, rng_ok: bool) -> Option<Pick> {
        pick_frfcfs_cap(&self.queues.read_q, dram, self.channel, now, &self.hit_streak, self.cfg.column_cap, rng_ok)
    }

    fn tick_rng_aware(&mut self, dram: &mut Dram, now: Cycle, ctx: &SchedContext, rng_ok: bool) -> Option<Serviced> {
        let read_has = !self.queues.read_q.is_empty();
        let rng_has = !self.queues.rng_q.is_empty();
        let chosen = match (read_has, rng_has) {
            (false, false) => return None,
            (true, false) => QueueSel::Read,
            (false, true) => QueueSel::Rng,
            (true, true) => match self.forced {
                Some(q) => q,
                None => self.arbitrate(ctx),
            },
        };
        let (queue, pick) = match chosen {
            QueueSel::Read => (QueueSel::Read, self.pick_read_regular(dram, now, rng_ok)?),
            _ if !rng_ok => {
                // finish the read whose row is already open before committing
                match self.queues.read_q.entries().iter().position(|e| e.activated) {
                    Some(i) => {
                        let (action, hit) =
                            candidate(dram, self.channel, &self.queues.read_q.entries()[i], now, false)?;
                        (QueueSel::Read, Pick { index: i, action, hit })
                    }
                    None => (QueueSel::Read, self.pick_read_regular(dram, now, false)?),
                }
            }
            _ => {
                let (action, hit) = candidate(dram, self.channel, self.queues.rng_q.front()?, now, true)?;
                (QueueSel::Rng, Pick { index: 0, action, hit })
            }
        };
        Some(self.apply(dram, queue, pick, now))
    }

    /// Count one cycle against the queue the priority rules hold back. While
    /// the channel is occupied by RNG work, that is the read queue.
    fn advance_stall(&mut self, ctx: &SchedContext, blocked: bool, served: Option<QueueSel>) {
        if self.forced.is_some() || self.draining_writes {
            return;
        }
        let read_has = !self.queues.read_q.is_empty();
        let starving = if blocked {
            read_has.then_some(QueueSel::Read)
        } else if read_has && !self.queues.rng_q.is_empty() {
            Some(self.arbitrate(ctx).other())
        } else {
            None
        };
        let Some(q) = starving else { return };
        if served == Some(q) {
            return;
        }
        if self.stalled_queue != Some(q) {
            self.stalled_queue = Some(q);
            self.stall_counter = 0;
        }
        self.stall_counter += 1;
        if self.stall_counter >= self.cfg.stall_limit {
            self.forced = Some(q);
        }
    }

    /// Which of two non-empty queues (read, RNG) the priority rules favor.
    fn arbitrate(&mut self, ctx: &SchedContext) -> QueueSel {
        if self.rng_drain {
            return QueueSel::Rng;
        }
        let oldest_rng = self.queues.rng_q.front().expect("rng queue non-empty");
        if let Some(bound) = self.older_rng_bound {
            if oldest_rng.id() < bound {
                return QueueSel::Rng;
            }
            self.older_rng_bound = None;
        }
        let p_rng = self.queues.rng_q.entries().iter().map(|e| ctx.priority(e.req.core)).max().unwrap_or(0);
        let p_other = self
            .queues
            .read_q
            .entries()
            .iter()
            .filter(|e| !ctx.is_rng_app(e.req.core))
            .map(|e| ctx.priority(e.req.core))
            .max();
        let Some(p_other) = p_other else {
            // Only RNG applications have regular reads queued.
            let p_read = self.queues.read_q.entries().iter().map(|e| ctx.priority(e.req.core)).max().unwrap_or(0);
            return if p_read > p_rng { QueueSel::Read } else { QueueSel::Rng };
        };
        if p_rng > p_other {
            self.rng_drain = true;
            return QueueSel::Rng;
        }
        if p_other > p_rng {
            let oldest_reg = self.queues.read_q.front().expect("read queue non-empty");
            if ctx.is_rng_app(oldest_reg.req.core) && oldest_reg.id() > oldest_rng.id() {
                self.older_rng_bound = Some(oldest_reg.id());
                return QueueSel::Rng;
            }
            return QueueSel::Read;
        }
        QueueSel::Rng
    }

    fn apply(&mut self, dram: &mut Dram, q: QueueSel, pick: Pick, now: Cycle) -> Serviced {
        if self.stalled_queue == Some(q) {
            self.stall_counter = 0;
        }
        match pick.action {
            PickAction::CommitRng => {
                let entry = self.queue(q).entries()[pick.index];
                self.committed = Some(entry.id());
                dram.set_held(self.channel, true);
                self.reads_owed = false;
                self.bliss.record(entry.req.core, self.cfg.bliss_blacklist_threshold);
                if self.forced == Some(q) {
                    self.forced = None;
                }
                Serviced::Committed { queue: q, entry }
            }
            PickAction::Cmd(cmd) => {
                let channel = self.channel;
                let e = *self.queue(q).entries().get(pick.index).expect("pick index");
                let done_at = dram.issue(cmd, channel, e.bank, e.loc.row, now);
                match cmd {
                    Command::Act => {
                        self.queue_mut(q).get_mut(pick.index).activated = true;
                        self.hit_streak[e.bank] = 0;
                    }
                    Command::Pre => {}
                    Command::Rd | Command::Wr => {
                        if !e.activated && self.queue(q).has_older_than(e.id()) {
                            self.hit_streak[e.bank] += 1;
                        }
                        self.queue_mut(q).remove(pick.index);
                        if q == QueueSel::Write {
                            self.drain_left = self.drain_left.saturating_sub(1);
                        } else {
                            self.reads_owed = false;
                        }
                        self.bliss.record(e.req.core, self.cfg.bliss_blacklist_threshold);
                        if self.forced == Some(q) {
                            self.forced = None;
                        }
                    }
                }
                Serviced::Issued { queue: q, cmd, entry: e, done_at }
            }
        }
    }
}
