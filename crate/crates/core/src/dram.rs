//! DRAM channel/bank timing model.
//!
//! Every channel keeps per-bank open-row state plus the earliest bus cycle at
//! which each command kind becomes legal. Legality checks are pure queries;
//! issuing a command folds its constraints into the earliest-legal tables.
//! A channel can also be occupied by the TRNG (`ChannelMode::Rng`) or held
//! for a pending RNG operation, during which no regular command is legal.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Bus cycle timestamp.
pub type Cycle = u64;

/// Read-to-write bus turnaround added on top of the burst length.
const RD_TO_WR_TURNAROUND: Cycle = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSet {
    #[serde(rename = "tRCD")]
    pub t_rcd: Cycle,
    #[serde(rename = "tRP")]
    pub t_rp: Cycle,
    #[serde(rename = "tCL")]
    pub t_cl: Cycle,
    #[serde(rename = "tRAS")]
    pub t_ras: Cycle,
    #[serde(rename = "tRC")]
    pub t_rc: Cycle,
    #[serde(rename = "tBL")]
    pub t_bl: Cycle,
    #[serde(rename = "tCCD")]
    pub t_ccd: Cycle,
    #[serde(rename = "tRTP")]
    pub t_rtp: Cycle,
    #[serde(rename = "tWR")]
    pub t_wr: Cycle,
    #[serde(rename = "tWTR")]
    pub t_wtr: Cycle,
    #[serde(rename = "tRRD")]
    pub t_rrd: Cycle,
    #[serde(rename = "tFAW")]
    pub t_faw: Cycle,
}

impl Default for TimingSet {
    /// DDR3-1600 11-11-11-28.
    fn default() -> Self {
        TimingSet {
            t_rcd: 11,
            t_rp: 11,
            t_cl: 11,
            t_ras: 28,
            t_rc: 39,
            t_bl: 4,
            t_ccd: 4,
            t_rtp: 6,
            t_wr: 12,
            t_wtr: 6,
            t_rrd: 5,
            t_faw: 24,
        }
    }
}

impl TimingSet {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = [
            ("tRCD", self.t_rcd),
            ("tRP", self.t_rp),
            ("tCL", self.t_cl),
            ("tRAS", self.t_ras),
            ("tRC", self.t_rc),
            ("tBL", self.t_bl),
            ("tCCD", self.t_ccd),
            ("tRTP", self.t_rtp),
            ("tWR", self.t_wr),
            ("tWTR", self.t_wtr),
            ("tRRD", self.t_rrd),
            ("tFAW", self.t_faw),
        ];
        for (name, v) in all {
            if v == 0 {
                return Err(ConfigError::invalid(format!("timing.{name} must be >= 1")));
            }
        }
        if self.t_rc < self.t_ras + self.t_rp {
            return Err(ConfigError::invalid(format!(
                "timing.tRC ({}) must be >= tRAS + tRP ({})",
                self.t_rc,
                self.t_ras + self.t_rp
            )));
        }
        if self.t_ccd < self.t_bl {
            return Err(ConfigError::invalid("timing.tCCD must be >= tBL (data bus overlap)"));
        }
        Ok(())
    }

    /// Minimum gap between a WR and a following RD on the same channel
    /// (write latency is taken equal to tCL).
    pub fn write_to_read(&self) -> Cycle {
        self.t_cl + self.t_bl + self.t_wtr
    }

    pub fn read_to_write(&self) -> Cycle {
        self.t_bl + RD_TO_WR_TURNAROUND
    }

    pub fn write_recovery(&self) -> Cycle {
        self.t_cl + self.t_bl + self.t_wr
    }
}

/// One named field of a physical address.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AddrField {
    Offset,
    Channel,
    Column,
    Bank,
    Rank,
    Row,
}

/// Bit-field order from least significant upward. Field widths follow from
/// the geometry in [`DramConfig`]; the offset is always 6 bits (64-byte lines).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AddressMap {
    pub order: Vec<AddrField>,
}

impl Default for AddressMap {
    fn default() -> Self {
        AddressMap {
            order: vec![
                AddrField::Offset,
                AddrField::Channel,
                AddrField::Column,
                AddrField::Bank,
                AddrField::Rank,
                AddrField::Row,
            ],
        }
    }
}

pub const LINE_BITS: u32 = 6;
pub const LINE_BYTES: u64 = 1 << LINE_BITS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefreshConfig {
    pub enabled: bool,
    /// tREFI in bus cycles.
    pub interval: Cycle,
    /// tRFC in bus cycles.
    pub duration: Cycle,
}

impl Default for RefreshConfig {
    fn default() -> Self {
        // 7.8 us / 260 ns at 800 MHz
        RefreshConfig { enabled: false, interval: 6240, duration: 208 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DramConfig {
    pub channels: u32,
    pub ranks_per_channel: u32,
    pub banks_per_rank: u32,
    pub rows_per_bank: u32,
    pub columns_per_row: u32,
    /// Hz.
    pub bus_frequency: u64,
    /// Rows per bank set aside for RNG cells; never addressable.
    pub reserved_rows_per_bank: u32,
    pub timing: TimingSet,
    pub address_map: AddressMap,
    pub refresh: RefreshConfig,
}

impl Default for DramConfig {
    fn default() -> Self {
        DramConfig {
            channels: 4,
            ranks_per_channel: 1,
            banks_per_rank: 8,
            rows_per_bank: 65536,
            columns_per_row: 128,
            bus_frequency: 800_000_000,
            reserved_rows_per_bank: 4,
            timing: TimingSet::default(),
            address_map: AddressMap::default(),
            refresh: RefreshConfig::default(),
        }
    }
}

impl DramConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("dram.channels", self.channels),
            ("dram.ranks_per_channel", self.ranks_per_channel),
            ("dram.banks_per_rank", self.banks_per_rank),
            ("dram.rows_per_bank", self.rows_per_bank),
            ("dram.columns_per_row", self.columns_per_row),
        ];
        for (name, v) in counts {
            if v == 0 || !v.is_power_of_two() {
                return Err(ConfigError::invalid(format!("{name} = {v} is not a power of two")));
            }
        }
        if self.bus_frequency == 0 {
            return Err(ConfigError::invalid("dram.bus_frequency must be > 0"));
        }
        if self.reserved_rows_per_bank >= self.rows_per_bank {
            return Err(ConfigError::invalid("dram.reserved_rows_per_bank leaves no usable rows"));
        }
        if self.refresh.enabled && (self.refresh.interval == 0 || self.refresh.duration == 0) {
            return Err(ConfigError::invalid("dram.refresh interval and duration must be >= 1"));
        }
        self.timing.validate()?;
        AddressLayout::new(self).map(|_| ())
    }

    pub fn banks_per_channel(&self) -> usize {
        (self.ranks_per_channel * self.banks_per_rank) as usize
    }

    pub fn usable_rows(&self) -> u32 {
        self.rows_per_bank - self.reserved_rows_per_bank
    }
}

/// Decoded DRAM coordinates of one cache line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Location {
    pub channel: u32,
    pub rank: u32,
    pub bank: u32,
    pub row: u32,
    pub column: u32,
}

impl Location {
    /// Bank index flattened across ranks, as used by [`ChannelState::banks`].
    pub fn bank_index(&self, banks_per_rank: u32) -> usize {
        (self.rank * banks_per_rank + self.bank) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Slice {
    field: AddrField,
    shift: u32,
    width: u32,
}

/// Concrete bit positions resolved from an [`AddressMap`] and a geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AddressLayout {
    slices: Vec<Slice>,
    total_bits: u32,
    usable_rows: u32,
    banks_per_rank: u32,
}

impl AddressLayout {
    pub fn new(cfg: &DramConfig) -> Result<Self, ConfigError> {
        let width_of = |f: AddrField| -> u32 {
            match f {
                AddrField::Offset => LINE_BITS,
                AddrField::Channel => cfg.channels.trailing_zeros(),
                AddrField::Column => cfg.columns_per_row.trailing_zeros(),
                AddrField::Bank => cfg.banks_per_rank.trailing_zeros(),
                AddrField::Rank => cfg.ranks_per_channel.trailing_zeros(),
                AddrField::Row => cfg.rows_per_bank.trailing_zeros(),
            }
        };
        let order = &cfg.address_map.order;
        for f in [AddrField::Offset, AddrField::Channel, AddrField::Column, AddrField::Bank, AddrField::Row] {
            let n = order.iter().filter(|&&g| g == f).count();
            if n != 1 {
                return Err(ConfigError::invalid(format!(
                    "dram.address_map must contain {f:?} exactly once (found {n})"
                )));
            }
        }
        let ranks = order.iter().filter(|&&g| g == AddrField::Rank).count();
        if ranks > 1 || (ranks == 0 && cfg.ranks_per_channel > 1) {
            return Err(ConfigError::invalid("dram.address_map must contain rank once when ranks_per_channel > 1"));
        }
        if order.first() != Some(&AddrField::Offset) {
            return Err(ConfigError::invalid("dram.address_map must start with offset"));
        }
        let mut shift = 0;
        let mut slices = Vec::with_capacity(order.len());
        for &field in order {
            let width = width_of(field);
            slices.push(Slice { field, shift, width });
            shift += width;
        }
        if shift > 63 {
            return Err(ConfigError::invalid(format!("address space of {shift} bits is too large")));
        }
        Ok(AddressLayout {
            slices,
            total_bits: shift,
            usable_rows: cfg.usable_rows(),
            banks_per_rank: cfg.banks_per_rank,
        })
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    /// Number of addressable bytes, reserved rows included.
    pub fn capacity_bytes(&self) -> u64 {
        1u64 << self.total_bits
    }

    pub fn banks_per_rank(&self) -> u32 {
        self.banks_per_rank
    }

    fn field_count(&self, field: AddrField) -> u32 {
        self.slices.iter().find(|s| s.field == field).map_or(1, |s| 1 << s.width)
    }

    /// `(channels, banks per rank, ranks, usable rows)`.
    pub fn shape(&self) -> (u32, u32, u32, u32) {
        (self.field_count(AddrField::Channel), self.banks_per_rank, self.field_count(AddrField::Rank), self.usable_rows)
    }

    pub fn columns(&self) -> u32 {
        self.field_count(AddrField::Column)
    }

    /// Map any in-range address onto a usable row, keeping the other fields.
    pub fn clamp_to_usable(&self, addr: u64) -> u64 {
        let addr = addr & (self.capacity_bytes() - 1);
        match self.decode(addr) {
            Ok(_) => addr,
            Err(_) => {
                let mut loc = self.decode_unchecked(addr);
                loc.row %= self.usable_rows;
                self.encode(&loc) | (addr & (LINE_BYTES - 1))
            }
        }
    }

    pub fn decode(&self, addr: u64) -> Result<Location, ConfigError> {
        if addr >> self.total_bits != 0 {
            return Err(ConfigError::AddressOutOfRange { addr, bits: self.total_bits });
        }
        let loc = self.decode_unchecked(addr);
        if loc.row >= self.usable_rows {
            return Err(ConfigError::ReservedRow { addr, row: loc.row });
        }
        Ok(loc)
    }

    fn decode_unchecked(&self, addr: u64) -> Location {
        let mut loc = Location::default();
        for s in &self.slices {
            let v = ((addr >> s.shift) & ((1u64 << s.width) - 1)) as u32;
            match s.field {
                AddrField::Offset => {}
                AddrField::Channel => loc.channel = v,
                AddrField::Column => loc.column = v,
                AddrField::Bank => loc.bank = v,
                AddrField::Rank => loc.rank = v,
                AddrField::Row => loc.row = v,
            }
        }
        loc
    }

    /// Inverse of [`decode`](Self::decode) with a zero line offset.
    pub fn encode(&self, loc: &Location) -> u64 {
        let mut addr = 0u64;
        for s in &self.slices {
            let v = match s.field {
                AddrField::Offset => 0,
                AddrField::Channel => loc.channel,
                AddrField::Column => loc.column,
                AddrField::Bank => loc.bank,
                AddrField::Rank => loc.rank,
                AddrField::Row => loc.row,
            } as u64;
            debug_assert!(v < (1u64 << s.width) || s.width == 0 && v == 0);
            addr |= (v & ((1u64 << s.width) - 1)) << s.shift;
        }
        addr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Command {
    Act,
    Pre,
    Rd,
    Wr,
}

impl Command {
    const COUNT: usize = 4;

    fn idx(self) -> usize {
        self as usize
    }

    pub fn is_column(self) -> bool {
        matches!(self, Command::Rd | Command::Wr)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BankState {
    pub open_row: Option<u32>,
    earliest_legal: [Cycle; Command::COUNT],
    pub busy_until: Cycle,
}

impl BankState {
    fn new() -> Self {
        BankState { open_row: None, earliest_legal: [0; Command::COUNT], busy_until: 0 }
    }

    pub fn earliest(&self, cmd: Command) -> Cycle {
        self.earliest_legal[cmd.idx()]
    }

    fn push(&mut self, cmd: Command, at: Cycle) {
        let slot = &mut self.earliest_legal[cmd.idx()];
        *slot = (*slot).max(at);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelMode {
    RegularExecution,
    RngMode,
}

#[derive(Clone, Debug)]
pub struct ChannelState {
    pub banks: Vec<BankState>,
    pub mode: ChannelMode,
    pub rng_busy_until: Cycle,
    pub data_bus_busy_until: Cycle,
    /// Set while the channel waits for the other channels to join an
    /// on-demand RNG operation; regular commands are blocked.
    pub held: bool,
    next_rd: Cycle,
    next_wr: Cycle,
    next_act: Cycle,
    recent_acts: VecDeque<Cycle>,
    refresh_pending: bool,
    refresh_until: Cycle,
}

impl ChannelState {
    fn new(banks: usize) -> Self {
        ChannelState {
            banks: (0..banks).map(|_| BankState::new()).collect(),
            mode: ChannelMode::RegularExecution,
            rng_busy_until: 0,
            data_bus_busy_until: 0,
            held: false,
            next_rd: 0,
            next_wr: 0,
            next_act: 0,
            recent_acts: VecDeque::with_capacity(4),
            refresh_pending: false,
            refresh_until: 0,
        }
    }

    /// True while refresh is pending or in progress.
    pub fn refreshing(&self, now: Cycle) -> bool {
        self.refresh_pending || self.refresh_until > now
    }

    /// Regular commands are blocked (RNG occupancy, hold, or refresh).
    pub fn blocked(&self, now: Cycle) -> bool {
        self.mode == ChannelMode::RngMode || self.held || self.refreshing(now)
    }
}

/// Timing state of every channel in the system.
#[derive(Clone, Debug)]
pub struct Dram {
    timing: TimingSet,
    refresh: RefreshConfig,
    layout: AddressLayout,
    channels: Vec<ChannelState>,
}

impl Dram {
    pub fn new(cfg: &DramConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Dram {
            timing: cfg.timing,
            refresh: cfg.refresh,
            layout: AddressLayout::new(cfg)?,
            channels: (0..cfg.channels).map(|_| ChannelState::new(cfg.banks_per_channel())).collect(),
        })
    }

    pub fn timing(&self) -> &TimingSet {
        &self.timing
    }

    pub fn layout(&self) -> &AddressLayout {
        &self.layout
    }

    pub fn decode_address(&self, addr: u64) -> Result<Location, ConfigError> {
        self.layout.decode(addr)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, ch: usize) -> &ChannelState {
        &self.channels[ch]
    }

    pub fn can_issue(&self, cmd: Command, channel: usize, bank: usize, now: Cycle) -> bool {
        let ch = &self.channels[channel];
        if ch.blocked(now) {
            return false;
        }
        let b = &ch.banks[bank];
        if now < b.earliest(cmd) {
            return false;
        }
        match cmd {
            Command::Act => {
                b.open_row.is_none()
                    && now >= ch.next_act
                    && (ch.recent_acts.len() < 4 || now >= ch.recent_acts[0] + self.timing.t_faw)
            }
            Command::Pre => b.open_row.is_some(),
            Command::Rd => b.open_row.is_some() && now >= ch.next_rd,
            Command::Wr => b.open_row.is_some() && now >= ch.next_wr,
        }
    }

    /// Issue `cmd`. Returns the cycle its effect completes: data transfer end
    /// for column commands, the bank-ready cycle for ACT/PRE.
    ///
    /// Panics if the command is not legal at `now`; callers must check
    /// [`can_issue`](Self::can_issue) first.
    pub fn issue(&mut self, cmd: Command, channel: usize, bank: usize, row: u32, now: Cycle) -> Cycle {
        assert!(
            self.can_issue(cmd, channel, bank, now),
            "illegal {cmd:?} on channel {channel} bank {bank} at cycle {now}"
        );
        let t = self.timing;
        let ch = &mut self.channels[channel];
        match cmd {
            Command::Act => {
                let b = &mut ch.banks[bank];
                b.open_row = Some(row);
                b.push(Command::Rd, now + t.t_rcd);
                b.push(Command::Wr, now + t.t_rcd);
                b.push(Command::Pre, now + t.t_ras);
                b.push(Command::Act, now + t.t_rc);
                b.busy_until = b.busy_until.max(now + t.t_rcd);
                ch.next_act = ch.next_act.max(now + t.t_rrd);
                if ch.recent_acts.len() == 4 {
                    ch.recent_acts.pop_front();
                }
                ch.recent_acts.push_back(now);
                now + t.t_rcd
            }
            Command::Pre => {
                let b = &mut ch.banks[bank];
                b.open_row = None;
                b.push(Command::Act, now + t.t_rp);
                b.busy_until = b.busy_until.max(now + t.t_rp);
                now + t.t_rp
            }
            Command::Rd => {
                let done = now + t.t_cl + t.t_bl;
                debug_assert!(now + t.t_cl >= ch.data_bus_busy_until);
                ch.next_rd = ch.next_rd.max(now + t.t_ccd);
                ch.next_wr = ch.next_wr.max(now + t.t_ccd.max(t.read_to_write()));
                ch.data_bus_busy_until = done;
                let b = &mut ch.banks[bank];
                b.push(Command::Pre, now + t.t_rtp);
                b.busy_until = b.busy_until.max(done);
                done
            }
            Command::Wr => {
                let done = now + t.t_cl + t.t_bl;
                debug_assert!(now + t.t_cl >= ch.data_bus_busy_until);
                ch.next_wr = ch.next_wr.max(now + t.t_ccd);
                ch.next_rd = ch.next_rd.max(now + t.write_to_read());
                ch.data_bus_busy_until = done;
                let b = &mut ch.banks[bank];
                b.push(Command::Pre, now + t.write_recovery());
                b.busy_until = b.busy_until.max(done);
                done
            }
        }
    }

    /// True iff the channel has no in-flight work of its own. `queues_empty`
    /// is supplied by the controller that owns the request queues.
    pub fn channel_idle(&self, channel: usize, now: Cycle, queues_empty: bool) -> bool {
        let ch = &self.channels[channel];
        queues_empty && !ch.blocked(now) && ch.rng_busy_until <= now && ch.data_bus_busy_until <= now
    }

    /// No regular data transfer is in flight on the channel.
    pub fn data_bus_free(&self, channel: usize, now: Cycle) -> bool {
        self.channels[channel].data_bus_busy_until <= now
    }

    pub fn set_held(&mut self, channel: usize, held: bool) {
        self.channels[channel].held = held;
    }

    /// Occupy the channel with an RNG operation until `until`.
    pub fn enter_rng_mode(&mut self, channel: usize, now: Cycle, until: Cycle) {
        let ch = &mut self.channels[channel];
        assert!(ch.data_bus_busy_until <= now, "RNG mode entered on channel {channel} with a transfer in flight");
        assert!(ch.mode == ChannelMode::RegularExecution && ch.rng_busy_until <= now);
        ch.mode = ChannelMode::RngMode;
        ch.held = false;
        ch.rng_busy_until = until;
    }

    /// Leave RNG mode. The operation touched reserved rows in every bank, so
    /// all row buffers are closed afterwards.
    pub fn exit_rng_mode(&mut self, channel: usize, now: Cycle) {
        let ch = &mut self.channels[channel];
        debug_assert_eq!(ch.mode, ChannelMode::RngMode);
        debug_assert!(ch.rng_busy_until <= now);
        ch.mode = ChannelMode::RegularExecution;
        for b in &mut ch.banks {
            b.open_row = None;
            b.push(Command::Act, now);
        }
    }

    /// Advance periodic refresh; a no-op unless refresh is enabled.
    pub fn tick_refresh(&mut self, channel: usize, now: Cycle) {
        if !self.refresh.enabled {
            return;
        }
        let t_rp = self.timing.t_rp;
        let (interval, duration) = (self.refresh.interval, self.refresh.duration);
        let ch = &mut self.channels[channel];
        if now > 0 && now.is_multiple_of(interval) {
            ch.refresh_pending = true;
        }
        if !ch.refresh_pending
            || ch.mode == ChannelMode::RngMode
            || ch.data_bus_busy_until > now
            || ch.banks.iter().any(|b| b.open_row.is_some() && b.earliest(Command::Pre) > now)
        {
            return;
        }
        let start = if ch.banks.iter().any(|b| b.open_row.is_some()) { now + t_rp } else { now };
        let until = start + duration;
        for b in &mut ch.banks {
            b.open_row = None;
            b.push(Command::Act, until);
        }
        ch.refresh_pending = false;
        ch.refresh_until = until;
    }
}
