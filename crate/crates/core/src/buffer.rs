use std::collections::VecDeque;

use crate::trng::{pack_word, WORD_BITS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServeOutcome {
    Served(u64),
    Miss,
}

/// Bit FIFO of pre-generated random bits held in the memory controller.
#[derive(Clone, Debug)]
pub struct RandomNumberBuffer {
    bits: VecDeque<bool>,
    capacity: usize,
    /// Bits promised by batches that are still running.
    incoming: usize,
    served_from_buffer: u64,
    total_rng_requests: u64,
    bits_in: u64,
    bits_out: u64,
}

impl RandomNumberBuffer {
    pub fn new(entries: u32) -> Self {
        let capacity = entries as usize * WORD_BITS as usize;
        RandomNumberBuffer {
            bits: VecDeque::with_capacity(capacity),
            capacity,
            incoming: 0,
            served_from_buffer: 0,
            total_rng_requests: 0,
            bits_in: 0,
            bits_out: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.bits.len()
    }

    /// Space not yet claimed by stored or in-flight bits.
    pub fn unclaimed(&self) -> usize {
        self.capacity - self.bits.len() - self.incoming
    }

    pub fn served_from_buffer(&self) -> u64 {
        self.served_from_buffer
    }

    pub fn total_rng_requests(&self) -> u64 {
        self.total_rng_requests
    }

    pub fn bits_in(&self) -> u64 {
        self.bits_in
    }

    pub fn bits_out(&self) -> u64 {
        self.bits_out
    }

    pub fn serve_rate(&self) -> Option<f64> {
        (self.total_rng_requests > 0).then(|| self.served_from_buffer as f64 / self.total_rng_requests as f64)
    }

    /// Called once per arriving RNG request. All-or-nothing: a miss leaves
    /// the stored bits in place.
    pub fn serve(&mut self) -> ServeOutcome {
        self.total_rng_requests += 1;
        match self.take_word() {
            Some(w) => {
                self.served_from_buffer += 1;
                ServeOutcome::Served(w)
            }
            None => ServeOutcome::Miss,
        }
    }

    /// Serve a request that missed on arrival but found enough bits before
    /// its on-demand generation began.
    pub fn serve_queued(&mut self) -> Option<u64> {
        let w = self.take_word()?;
        self.served_from_buffer += 1;
        Some(w)
    }

    fn take_word(&mut self) -> Option<u64> {
        if self.bits.len() < WORD_BITS as usize {
            return None;
        }
        let word: Vec<bool> = self.bits.drain(..WORD_BITS as usize).collect();
        self.bits_out += WORD_BITS as u64;
        Some(pack_word(&word))
    }

    /// Claim space for `n` bits that a batch will deliver later.
    pub fn reserve(&mut self, n: usize) -> bool {
        if self.unclaimed() < n {
            return false;
        }
        self.incoming += n;
        true
    }

    /// Deliver bits previously claimed with [`reserve`](Self::reserve).
    pub fn fill_reserved(&mut self, bits: &[bool]) {
        assert!(bits.len() <= self.incoming, "delivering unreserved bits");
        self.incoming -= bits.len();
        self.push(bits);
    }

    /// Append unclaimed bits, e.g. the surplus of an on-demand operation.
    /// Returns how many fit.
    pub fn push(&mut self, bits: &[bool]) -> usize {
        let room = self.capacity - self.bits.len() - self.incoming;
        let n = bits.len().min(room);
        self.bits.extend(&bits[..n]);
        self.bits_in += n as u64;
        n
    }

    pub fn is_full(&self) -> bool {
        self.bits.len() + self.incoming >= self.capacity
    }
}
