//! Trace files, synthetic trace generators and memory-intensity classes.
//!
//! Text format, one record per line, `#` starts a comment:
//!
//! ```text
//! 5 R 0x1f40
//! 0 W 0x2000
//! 149 G
//! ```

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dram::{AddressLayout, Location, LINE_BYTES};
use crate::error::{ConfigError, Error, TraceParseError};
use crate::trng::WORD_BITS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceOp {
    Read(u64),
    Write(u64),
    Rng,
}

impl TraceOp {
    pub fn addr(self) -> Option<u64> {
        match self {
            TraceOp::Read(a) | TraceOp::Write(a) => Some(a),
            TraceOp::Rng => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub bubbles: u64,
    pub op: TraceOp,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op {
            TraceOp::Read(a) => write!(f, "{} R 0x{a:x}", self.bubbles),
            TraceOp::Write(a) => write!(f, "{} W 0x{a:x}", self.bubbles),
            TraceOp::Rng => write!(f, "{} G", self.bubbles),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(records: Vec<TraceRecord>) -> Self {
        Trace { records }
    }

    /// Bubbles plus one instruction per memory or RNG op.
    pub fn instructions(&self) -> u64 {
        self.records.iter().map(|r| r.bubbles + 1).sum()
    }

    /// Regular DRAM requests (reads and writes).
    pub fn memory_requests(&self) -> u64 {
        self.records.iter().filter(|r| r.op != TraceOp::Rng).count() as u64
    }

    pub fn rng_requests(&self) -> u64 {
        self.records.iter().filter(|r| r.op == TraceOp::Rng).count() as u64
    }

    pub fn parse_str(text: &str) -> Result<Self, TraceParseError> {
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            records.push(parse_line(line).map_err(|message| TraceParseError { line: i + 1, message })?);
        }
        Ok(Trace { records })
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path)?;
        Trace::parse_str(&text).map_err(|source| Error::Trace { path: path.to_path_buf(), source })
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        fs::write(path, self.to_string())?;
        Ok(())
    }

    /// Every regular address must decode to a usable DRAM location.
    pub fn check_addresses(&self, layout: &AddressLayout) -> Result<(), ConfigError> {
        for r in &self.records {
            if let Some(a) = r.op.addr() {
                layout.decode(a)?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.records {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

fn parse_line(line: &str) -> Result<TraceRecord, String> {
    let mut tok = line.split_whitespace();
    let b = tok.next().ok_or("empty record")?;
    let bubbles = b.parse::<u64>().map_err(|_| format!("bad bubble count `{b}`"))?;
    let kind = tok.next().ok_or("missing op")?;
    let op = match kind {
        "R" | "W" => {
            let a = tok.next().ok_or_else(|| format!("missing address after `{kind}`"))?;
            let hex = a.strip_prefix("0x").ok_or_else(|| format!("address `{a}` must start with 0x"))?;
            let addr = u64::from_str_radix(hex, 16).map_err(|_| format!("bad address `{a}`"))?;
            if kind == "R" {
                TraceOp::Read(addr)
            } else {
                TraceOp::Write(addr)
            }
        }
        "G" => TraceOp::Rng,
        other => return Err(format!("unknown op `{other}`")),
    };
    if let Some(extra) = tok.next() {
        return Err(format!("unexpected token `{extra}`"));
    }
    Ok(TraceRecord { bubbles, op })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MpkiClass {
    L,
    M,
    H,
}

impl MpkiClass {
    pub fn of(mpki: f64) -> Self {
        if mpki < 1.0 {
            MpkiClass::L
        } else if mpki < 10.0 {
            MpkiClass::M
        } else {
            MpkiClass::H
        }
    }
}

impl fmt::Display for MpkiClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MpkiClass::L => "L",
            MpkiClass::M => "M",
            MpkiClass::H => "H",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkloadStats {
    pub instructions: u64,
    pub requests: u64,
    pub rng_requests: u64,
    pub mpki: f64,
    pub class: MpkiClass,
}

pub fn classify(trace: &Trace) -> WorkloadStats {
    let instructions = trace.instructions();
    let requests = trace.memory_requests();
    let mpki = if instructions == 0 { 0.0 } else { requests as f64 * 1000.0 / instructions as f64 };
    WorkloadStats { instructions, requests, rng_requests: trace.rng_requests(), mpki, class: MpkiClass::of(mpki) }
}

/// Bubbles between 64-bit RNG requests so a core retiring `issue_width`
/// instructions per cycle at `core_hz` asks for `throughput_bps` bits/s.
pub fn rng_bubbles(throughput_bps: u64, core_hz: u64, issue_width: u32) -> u64 {
    let slots = (WORD_BITS as u128 * core_hz as u128 * issue_width as u128) / throughput_bps as u128;
    (slots as u64).saturating_sub(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessPattern {
    Stream,
    RandomUniform,
    RowLocal,
}

fn default_regular_every() -> u32 {
    10
}
fn default_rng_length() -> u64 {
    1_500_000
}
fn default_length() -> u64 {
    1_000_000
}
fn default_write_fraction() -> f64 {
    0.2
}

/// How to obtain one core's trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSpec {
    File {
        path: String,
    },
    Rng {
        throughput_mbps: u64,
        /// One striding regular read per this many RNG requests; 0 disables.
        #[serde(default = "default_regular_every")]
        regular_every: u32,
        #[serde(default = "default_rng_length")]
        length: u64,
    },
    Synthetic {
        pattern: AccessPattern,
        mpki: f64,
        #[serde(default = "default_length")]
        length: u64,
        #[serde(default = "default_write_fraction")]
        write_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl TraceSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match *self {
            TraceSpec::File { .. } => Ok(()),
            TraceSpec::Rng { throughput_mbps, length, .. } => {
                if throughput_mbps == 0 {
                    return Err(ConfigError::invalid("rng trace throughput_mbps must be > 0"));
                }
                if length == 0 {
                    return Err(ConfigError::invalid("trace length must be > 0"));
                }
                Ok(())
            }
            TraceSpec::Synthetic { mpki, length, write_fraction, .. } => {
                if !(mpki > 0.0 && mpki <= 1000.0) {
                    return Err(ConfigError::invalid("synthetic trace mpki must be in (0, 1000]"));
                }
                if length == 0 {
                    return Err(ConfigError::invalid("trace length must be > 0"));
                }
                if !(0.0..=1.0).contains(&write_fraction) {
                    return Err(ConfigError::invalid("write_fraction must be in [0, 1]"));
                }
                Ok(())
            }
        }
    }

    pub fn is_rng(&self) -> bool {
        matches!(self, TraceSpec::Rng { .. })
    }

    /// Build the trace. File paths are resolved relative to `base_dir`.
    pub fn build(
        &self,
        layout: &AddressLayout,
        core_hz: u64,
        issue_width: u32,
        base_dir: &Path,
    ) -> Result<Trace, Error> {
        self.validate()?;
        let trace = match *self {
            TraceSpec::File { ref path } => Trace::load(&base_dir.join(path))?,
            TraceSpec::Rng { throughput_mbps, regular_every, length } => {
                let bubbles = rng_bubbles(throughput_mbps * 1_000_000, core_hz, issue_width);
                gen_rng_trace(bubbles, regular_every, length, layout)
            }
            TraceSpec::Synthetic { pattern, mpki, length, write_fraction, seed } => {
                gen_nonrng_trace(pattern, mpki, length, write_fraction, seed, layout)
            }
        };
        if trace.instructions() == 0 {
            return Err(ConfigError::invalid("trace contains no instructions").into());
        }
        let path = match self {
            TraceSpec::File { path } => base_dir.join(path),
            _ => "<generated>".into(),
        };
        trace.check_addresses(layout).map_err(|source| Error::TraceAddress { path, source })?;
        Ok(trace)
    }
}

/// Address of the `i`-th striding read: walks channels first, then banks,
/// then rows, so consecutive reads land on different banks.
fn striding_addr(i: u64, layout: &AddressLayout) -> u64 {
    let (ch, banks, ranks, rows) = layout.shape();
    let loc = Location {
        channel: (i % ch as u64) as u32,
        bank: ((i / ch as u64) % banks as u64) as u32,
        rank: ((i / (ch * banks) as u64) % ranks as u64) as u32,
        row: ((i / (ch * banks * ranks) as u64) % rows as u64) as u32,
        column: 0,
    };
    layout.encode(&loc)
}

/// RNG benchmark: `bubbles` non-memory instructions between RNG requests.
/// Every `regular_every`-th period carries one regular read in place of a
/// bubble, so the RNG request rate is unchanged.
pub fn gen_rng_trace(bubbles: u64, regular_every: u32, length: u64, layout: &AddressLayout) -> Trace {
    let period = bubbles + 1;
    let periods = length.div_ceil(period).max(1);
    let mut records = Vec::new();
    let mut reads = 0;
    for p in 0..periods {
        if regular_every > 0 && bubbles > 0 && (p + 1) % regular_every as u64 == 0 {
            records.push(TraceRecord { bubbles: 0, op: TraceOp::Read(striding_addr(reads, layout)) });
            records.push(TraceRecord { bubbles: bubbles - 1, op: TraceOp::Rng });
            reads += 1;
        } else {
            records.push(TraceRecord { bubbles, op: TraceOp::Rng });
        }
    }
    Trace { records }
}

/// Non-RNG trace with `mpki` regular requests per kilo-instruction over
/// `length` instructions. Bubbles are spread evenly between requests.
pub fn gen_nonrng_trace(
    pattern: AccessPattern,
    mpki: f64,
    length: u64,
    write_fraction: f64,
    seed: u64,
    layout: &AddressLayout,
) -> Trace {
    let n = ((mpki * length as f64 / 1000.0).round() as u64).clamp(1, length);
    let total_bubbles = length - n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // request positions uniform over the trace, so gaps are irregular
    let mut timing = ChaCha8Rng::seed_from_u64(seed);
    timing.set_stream(1);
    let mut cuts: Vec<u64> = (1..n).map(|_| timing.random_range(0..=total_bubbles)).collect();
    cuts.sort_unstable();
    cuts.push(total_bubbles);
    let (channels, banks, ranks, rows) = layout.shape();
    let columns = layout.columns();
    let lines = layout.capacity_bytes() / LINE_BYTES;
    let stream_base = rng.random_range(0..lines);
    let mut burst_loc = Location::default();
    let mut records = Vec::with_capacity(n as usize);
    for i in 0..n {
        let bubbles = cuts[i as usize] - if i == 0 { 0 } else { cuts[i as usize - 1] };
        let addr = match pattern {
            AccessPattern::Stream => layout.clamp_to_usable(((stream_base + i) % lines) * LINE_BYTES),
            AccessPattern::RandomUniform => layout.encode(&Location {
                channel: rng.random_range(0..channels),
                rank: rng.random_range(0..ranks),
                bank: rng.random_range(0..banks),
                row: rng.random_range(0..rows),
                column: rng.random_range(0..columns),
            }),
            AccessPattern::RowLocal => {
                const BURST: u64 = 8;
                if i % BURST == 0 {
                    burst_loc = Location {
                        channel: rng.random_range(0..channels),
                        rank: rng.random_range(0..ranks),
                        bank: rng.random_range(0..banks),
                        row: rng.random_range(0..rows),
                        column: rng.random_range(0..columns),
                    };
                }
                let column = (burst_loc.column + (i % BURST) as u32) % columns;
                layout.encode(&Location { column, ..burst_loc })
            }
        };
        let op = if rng.random_bool(write_fraction) { TraceOp::Write(addr) } else { TraceOp::Read(addr) };
        records.push(TraceRecord { bubbles, op });
    }
    Trace { records }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::DramConfig;

    fn layout() -> AddressLayout {
        AddressLayout::new(&DramConfig::default()).unwrap()
    }

    #[test]
    fn parse_examples() {
        let t = Trace::parse_str("5 R 0x1f40\n149 G # rng\n\n# only a comment\n0 W 0xABC\n").unwrap();
        assert_eq!(
            t.records,
            vec![
                TraceRecord { bubbles: 5, op: TraceOp::Read(0x1f40) },
                TraceRecord { bubbles: 149, op: TraceOp::Rng },
                TraceRecord { bubbles: 0, op: TraceOp::Write(0xabc) },
            ]
        );
        let err = Trace::parse_str("1 G\nx y z\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("`x`"));
        assert!(Trace::parse_str("1 R 1f40").is_err());
        assert!(Trace::parse_str("1 G extra").is_err());
        assert!(Trace::parse_str("-1 G").is_err());
    }

    #[test]
    fn rng_bubble_counts() {
        assert_eq!(rng_bubbles(5_120_000_000, 4_000_000_000, 3), 149);
        assert_eq!(rng_bubbles(640_000_000, 4_000_000_000, 3), 1199);
        assert_eq!(rng_bubbles(10_000_000_000, 4_000_000_000, 3), 75);
    }

    #[test]
    fn rng_trace_keeps_request_spacing() {
        let t = gen_rng_trace(149, 10, 15_000, &layout());
        assert_eq!(t.instructions(), 15_000);
        assert_eq!(t.rng_requests(), 100);
        assert_eq!(t.memory_requests(), 10);
    }

    #[test]
    fn striding_reads_cover_all_channels_and_banks() {
        let l = layout();
        let mut seen = std::collections::HashSet::new();
        for i in 0..32 {
            let loc = l.decode(striding_addr(i, &l)).unwrap();
            seen.insert((loc.channel, loc.bank));
        }
        assert_eq!(seen.len(), 32);
    }

    #[test]
    fn nonrng_mpki_and_patterns() {
        let l = layout();
        let t = gen_nonrng_trace(AccessPattern::RandomUniform, 20.0, 100_000, 0.2, 3, &l);
        assert_eq!(t.memory_requests(), 2000);
        assert_eq!(t.instructions(), 100_000);
        t.check_addresses(&l).unwrap();

        let t = gen_nonrng_trace(AccessPattern::Stream, 5.0, 100_000, 0.0, 1, &l);
        let addrs: Vec<u64> = t.records.iter().filter_map(|r| r.op.addr()).collect();
        assert!(addrs.windows(2).all(|w| w[1] - w[0] == 64 || w[1] < w[0]));
        assert_eq!(classify(&t).class, MpkiClass::M);

        let t = gen_nonrng_trace(AccessPattern::RowLocal, 2.0, 100_000, 0.0, 1, &l);
        t.check_addresses(&l).unwrap();
    }

    #[test]
    fn classify_boundaries() {
        assert_eq!(MpkiClass::of(0.5), MpkiClass::L);
        assert_eq!(MpkiClass::of(1.0), MpkiClass::M);
        assert_eq!(MpkiClass::of(10.0), MpkiClass::H);
        let t = Trace::new(vec![TraceRecord { bubbles: 1999, op: TraceOp::Read(0) }; 500]);
        let s = classify(&t);
        assert_eq!((s.mpki, s.class), (0.5, MpkiClass::L));
    }

    #[test]
    fn spec_parses_from_toml() {
        let s: TraceSpec = toml::from_str("kind = \"rng\"\nthroughput_mbps = 5120\n").unwrap();
        assert!(s.is_rng());
        let s: TraceSpec = toml::from_str("kind = \"synthetic\"\npattern = \"row_local\"\nmpki = 4.0\n").unwrap();
        assert!(matches!(s, TraceSpec::Synthetic { pattern: AccessPattern::RowLocal, .. }));
        assert!(toml::from_str::<TraceSpec>("kind = \"rng\"\n").is_err());
    }
}
