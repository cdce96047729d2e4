//! DRAM TRNG modeled as channel occupancy that yields random bits.
//!
//! Two operation shapes exist: an on-demand operation that occupies every
//! channel for `ondemand_word_latency` cycles, and an idle batch that occupies
//! one channel for `batch_latency` cycles and yields `batch_bits_per_channel`
//! bits. The bits themselves come from a counter-keyed ChaCha stream so runs
//! are reproducible.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dram::Cycle;
use crate::error::ConfigError;
use crate::memctrl::ReqId;

/// Bits delivered to a core per RNG request.
pub const WORD_BITS: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrngPreset {
    Drange,
    Quac,
    Custom,
}

/// Config-file view of the TRNG; unset fields fall back to the preset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrngConfig {
    pub preset: TrngPreset,
    pub batch_bits_per_channel: Option<u32>,
    pub batch_latency: Option<Cycle>,
    pub ondemand_word_latency: Option<Cycle>,
    pub ondemand_bits: Option<u32>,
    pub seed: u64,
}

impl Default for TrngConfig {
    fn default() -> Self {
        TrngConfig {
            preset: TrngPreset::Drange,
            batch_bits_per_channel: None,
            batch_latency: None,
            ondemand_word_latency: None,
            ondemand_bits: None,
            seed: 0x5eed_0f_d7a3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TrngModel {
    pub preset: TrngPreset,
    pub batch_bits_per_channel: u32,
    pub batch_latency: Cycle,
    pub ondemand_word_latency: Cycle,
    /// Bits produced by one on-demand operation; anything beyond the 64
    /// returned to the requester goes to the random number buffer.
    pub ondemand_bits: u32,
    pub bits_source_seed: u64,
}

impl TrngModel {
    pub fn drange(seed: u64) -> Self {
        TrngModel {
            preset: TrngPreset::Drange,
            batch_bits_per_channel: 8,
            batch_latency: 40,
            ondemand_word_latency: 198,
            ondemand_bits: WORD_BITS,
            bits_source_seed: seed,
        }
    }

    /// 1024 bits per 238-cycle operation (~3.44 Gb/s at 800 MHz). An idle
    /// batch is one channel's quarter of that operation.
    pub fn quac(seed: u64) -> Self {
        TrngModel {
            preset: TrngPreset::Quac,
            batch_bits_per_channel: 256,
            batch_latency: 238,
            ondemand_word_latency: 238,
            ondemand_bits: 1024,
            bits_source_seed: seed,
        }
    }

    pub fn from_config(cfg: &TrngConfig) -> Result<Self, ConfigError> {
        let base = match cfg.preset {
            TrngPreset::Drange | TrngPreset::Custom => TrngModel::drange(cfg.seed),
            TrngPreset::Quac => TrngModel::quac(cfg.seed),
        };
        let m = TrngModel {
            preset: cfg.preset,
            batch_bits_per_channel: cfg.batch_bits_per_channel.unwrap_or(base.batch_bits_per_channel),
            batch_latency: cfg.batch_latency.unwrap_or(base.batch_latency),
            ondemand_word_latency: cfg.ondemand_word_latency.unwrap_or(base.ondemand_word_latency),
            ondemand_bits: cfg.ondemand_bits.unwrap_or(base.ondemand_bits),
            bits_source_seed: cfg.seed,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_bits_per_channel == 0 {
            return Err(ConfigError::invalid("trng.batch_bits_per_channel must be >= 1"));
        }
        if self.batch_latency == 0 || self.ondemand_word_latency == 0 {
            return Err(ConfigError::invalid("trng latencies must be >= 1"));
        }
        if self.ondemand_word_latency < self.batch_latency {
            return Err(ConfigError::invalid("trng.ondemand_word_latency must be >= batch_latency"));
        }
        if self.ondemand_bits < WORD_BITS {
            return Err(ConfigError::invalid("trng.ondemand_bits must cover one 64-bit word"));
        }
        Ok(())
    }

    /// Sustained idle-batch throughput of one channel, in bits per bus cycle.
    pub fn batch_throughput(&self) -> f64 {
        self.batch_bits_per_channel as f64 / self.batch_latency as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RngOpKind {
    /// Full-width generation for a queued request; spans all channels.
    OnDemand { request: ReqId, core: usize },
    /// Buffer-fill generation on one idle channel.
    IdleBatch { channel: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngOperation {
    pub seq: u64,
    pub kind: RngOpKind,
    pub start: Cycle,
    pub finish: Cycle,
    pub bits_yield: u32,
}

impl RngOperation {
    pub fn duration(&self) -> Cycle {
        self.finish - self.start
    }
}

/// Starts operations and hands out their bits.
#[derive(Clone, Debug)]
pub struct TrngEngine {
    model: TrngModel,
    next_seq: u64,
    bits_harvested: u64,
}

impl TrngEngine {
    pub fn new(model: TrngModel) -> Self {
        TrngEngine { model, next_seq: 0, bits_harvested: 0 }
    }

    pub fn model(&self) -> &TrngModel {
        &self.model
    }

    pub fn bits_harvested(&self) -> u64 {
        self.bits_harvested
    }

    /// `bits_yield` is capped by the caller to what can actually be consumed
    /// (64 for the requester plus free buffer space).
    pub fn begin_ondemand(&mut self, request: ReqId, core: usize, now: Cycle, bits_yield: u32) -> RngOperation {
        debug_assert!(bits_yield >= WORD_BITS && bits_yield <= self.model.ondemand_bits);
        let op = RngOperation {
            seq: self.next_seq,
            kind: RngOpKind::OnDemand { request, core },
            start: now,
            finish: now + self.model.ondemand_word_latency,
            bits_yield,
        };
        self.next_seq += 1;
        op
    }

    pub fn begin_idle_batch(&mut self, channel: usize, now: Cycle) -> RngOperation {
        let op = RngOperation {
            seq: self.next_seq,
            kind: RngOpKind::IdleBatch { channel },
            start: now,
            finish: now + self.model.batch_latency,
            bits_yield: self.model.batch_bits_per_channel,
        };
        self.next_seq += 1;
        op
    }

    /// Bits credited without occupying any channel (greedy oracle).
    pub fn free_bits(&mut self, n: u32) -> Vec<bool> {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.bits_harvested += n as u64;
        generate_bits(self.model.bits_source_seed, seq, n as usize)
    }

    pub fn harvest_bits(&mut self, op: &RngOperation) -> Vec<bool> {
        self.bits_harvested += op.bits_yield as u64;
        generate_bits(self.model.bits_source_seed, op.seq, op.bits_yield as usize)
    }
}

/// Deterministic bits keyed by `(seed, seq)`.
pub fn generate_bits(seed: u64, seq: u64, n: usize) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(seq);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = rng.next_u64();
        let take = (n - out.len()).min(64);
        out.extend((0..take).map(|i| (w >> i) & 1 == 1));
    }
    out
}

/// Pack up to 64 bits, first bit least significant.
pub fn pack_word(bits: &[bool]) -> u64 {
    bits.iter().take(64).enumerate().fold(0u64, |w, (i, &b)| w | ((b as u64) << i))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let d = TrngModel::from_config(&TrngConfig::default()).unwrap();
        assert_eq!((d.batch_bits_per_channel, d.batch_latency, d.ondemand_word_latency), (8, 40, 198));
        let q = TrngModel::from_config(&TrngConfig { preset: TrngPreset::Quac, ..Default::default() }).unwrap();
        assert_eq!((q.ondemand_bits, q.ondemand_word_latency), (1024, 238));
        // 1024 bits per 238 cycles at 1.25 ns
        let gbps: f64 = 1024.0 / (238.0 * 1.25);
        assert!((gbps - 3.44).abs() < 0.01, "{gbps}");
    }

    #[test]
    fn custom_overrides_and_validation() {
        let cfg = TrngConfig { preset: TrngPreset::Custom, ondemand_word_latency: Some(300), ..Default::default() };
        assert_eq!(TrngModel::from_config(&cfg).unwrap().ondemand_word_latency, 300);
        let bad = TrngConfig { batch_latency: Some(500), ..Default::default() };
        assert!(TrngModel::from_config(&bad).is_err());
        let bad = TrngConfig { batch_bits_per_channel: Some(0), ..Default::default() };
        assert!(TrngModel::from_config(&bad).is_err());
    }

    #[test]
    fn ondemand_and_batch_timing() {
        let mut e = TrngEngine::new(TrngModel::drange(1));
        let op = e.begin_ondemand(7, 0, 0, 64);
        assert_eq!(op.finish, 198);
        let b = e.begin_idle_batch(2, 100);
        assert_eq!((b.finish, b.bits_yield), (140, 8));
        assert_eq!(e.harvest_bits(&b).len(), 8);
        assert_eq!(e.bits_harvested(), 8);
    }

    #[test]
    fn bits_are_deterministic_and_distinct_per_op() {
        assert_eq!(generate_bits(9, 3, 200), generate_bits(9, 3, 200));
        assert_ne!(generate_bits(9, 3, 64), generate_bits(9, 4, 64));
        assert_ne!(generate_bits(9, 3, 64), generate_bits(10, 3, 64));
    }

    #[test]
    fn ones_fraction_is_balanced() {
        let n = 1_000_000;
        let ones = (0..(n / 1000) as u64).flat_map(|seq| generate_bits(42, seq, 1000)).filter(|&b| b).count();
        let frac = ones as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.01, "{frac}");
    }

    #[test]
    fn pack_word_order() {
        let mut bits = vec![false; 64];
        bits[0] = true;
        bits[63] = true;
        assert_eq!(pack_word(&bits), 1 | (1 << 63));
    }
}
