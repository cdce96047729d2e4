use crate::dram::{Cycle, Location};

pub type ReqId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReqKind {
    Read,
    Write,
    RngRead,
}

/// A core-issued request as seen by the memory controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemRequest {
    pub id: ReqId,
    pub core: usize,
    pub kind: ReqKind,
    pub addr: Option<u64>,
    /// Core cycle at which the core sent the request.
    pub arrival: u64,
    pub enqueue_cycle: Cycle,
    pub completion: Option<Cycle>,
}

/// A queued request with its decoded target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Entry {
    pub req: MemRequest,
    pub loc: Location,
    pub bank: usize,
    /// This request issued the ACT that opened its row.
    pub activated: bool,
}

impl Entry {
    pub fn new(req: MemRequest, loc: Location, bank: usize) -> Self {
        Entry { req, loc, bank, activated: false }
    }

    pub fn rng(req: MemRequest) -> Self {
        Entry { req, loc: Location::default(), bank: 0, activated: false }
    }

    pub fn id(&self) -> ReqId {
        self.req.id
    }

    pub fn is_rng(&self) -> bool {
        self.req.kind == ReqKind::RngRead
    }
}

/// Bounded queue kept in arrival (id) order.
#[derive(Clone, Debug)]
pub struct RequestQueue {
    entries: Vec<Entry>,
    capacity: usize,
}

impl RequestQueue {
    pub fn new(capacity: usize) -> Self {
        RequestQueue { entries: Vec::with_capacity(capacity), capacity }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, e: Entry) {
        assert!(!self.is_full(), "queue overflow");
        debug_assert!(self.entries.last().is_none_or(|l| l.id() < e.id()));
        self.entries.push(e);
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Entry {
        &mut self.entries[i]
    }

    pub fn remove(&mut self, i: usize) -> Entry {
        self.entries.remove(i)
    }

    pub fn remove_id(&mut self, id: ReqId) -> Option<Entry> {
        let i = self.entries.iter().position(|e| e.id() == id)?;
        Some(self.entries.remove(i))
    }

    pub fn front(&self) -> Option<&Entry> {
        self.entries.first()
    }

    pub fn oldest_rng(&self) -> Option<&Entry> {
        self.entries.iter().find(|e| e.is_rng())
    }

    pub fn has_older_than(&self, id: ReqId) -> bool {
        self.entries.first().is_some_and(|e| e.id() < id)
    }
}

/// The three per-channel queues.
#[derive(Clone, Debug)]
pub struct QueueSet {
    pub read_q: RequestQueue,
    pub write_q: RequestQueue,
    pub rng_q: RequestQueue,
}

impl QueueSet {
    pub fn new(read: usize, write: usize, rng: usize) -> Self {
        QueueSet { read_q: RequestQueue::new(read), write_q: RequestQueue::new(write), rng_q: RequestQueue::new(rng) }
    }

    /// No queued regular work (RNG requests do not count).
    pub fn regular_empty(&self) -> bool {
        self.read_q.entries.iter().all(|e| e.is_rng()) && self.write_q.is_empty()
    }

    pub fn all_empty(&self) -> bool {
        self.read_q.is_empty() && self.write_q.is_empty() && self.rng_q.is_empty()
    }

    /// Regular reads waiting, excluding RNG requests sharing the read queue.
    pub fn regular_reads(&self) -> usize {
        self.read_q.entries.iter().filter(|e| !e.is_rng()).count()
    }
}
