//! DRAM idleness predictors and buffer-fill policies.
//!
//! Idle periods are classified as long (`>= period_threshold` cycles) or
//! short. The simple predictor keeps a per-channel table of 2-bit saturating
//! counters indexed by the last accessed line; the Q-learning agent keys a
//! two-action table on that line XOR'd with the classes of the last ten
//! periods.

use serde::{Deserialize, Serialize};

use crate::dram::{Cycle, LINE_BITS};
use crate::error::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    /// No buffer filling.
    None,
    /// Fill during every idle cycle.
    SimpleBuffering,
    /// Fill in predicted-long idle periods (plus low-utilization windows).
    SimplePredictor,
    /// Fill when the Q-learning agent chooses to generate.
    RlAgent,
    /// Zero-cost credit of bits per elapsed threshold of idleness.
    GreedyOracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub policy: FillPolicy,
    pub period_threshold: Cycle,
    /// 0 disables the low-utilization trigger.
    pub low_util_threshold: usize,
    pub table_entries: usize,
    pub rl_alpha: f64,
    /// Bits credited per threshold by the greedy oracle.
    pub greedy_bits: u32,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            policy: FillPolicy::None,
            period_threshold: 40,
            low_util_threshold: 4,
            table_entries: 256,
            rl_alpha: 0.05,
            greedy_bits: 8,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.period_threshold == 0 {
            return Err(ConfigError::invalid("predictor.period_threshold must be >= 1"));
        }
        if self.table_entries == 0 {
            return Err(ConfigError::invalid("predictor.table_entries must be >= 1"));
        }
        if !(self.rl_alpha > 0.0 && self.rl_alpha <= 1.0) {
            return Err(ConfigError::invalid("predictor.rl_alpha must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IdleClass {
    Long,
    Short,
}

impl IdleClass {
    pub fn of(len: Cycle, threshold: Cycle) -> Self {
        if len >= threshold {
            IdleClass::Long
        } else {
            IdleClass::Short
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Generate,
    Wait,
}

impl Action {
    fn idx(self) -> usize {
        match self {
            Action::Generate => 0,
            Action::Wait => 1,
        }
    }

    pub fn as_class(self) -> IdleClass {
        match self {
            Action::Generate => IdleClass::Long,
            Action::Wait => IdleClass::Short,
        }
    }
}

/// Per-channel 2-bit saturating-counter predictor.
#[derive(Clone, Debug)]
pub struct SimplePredictor {
    counters: Vec<u8>,
    pub last_addr: u64,
    pub idle_len: Cycle,
    threshold: Cycle,
}

impl SimplePredictor {
    pub fn new(table_entries: usize, threshold: Cycle) -> Self {
        SimplePredictor { counters: vec![0; table_entries], last_addr: 0, idle_len: 0, threshold }
    }

    pub fn index(&self, addr: u64) -> usize {
        ((addr >> LINE_BITS) % self.counters.len() as u64) as usize
    }

    pub fn counter(&self, addr: u64) -> u8 {
        self.counters[self.index(addr)]
    }

    pub fn set_counter(&mut self, addr: u64, v: u8) {
        let i = self.index(addr);
        self.counters[i] = v.min(3);
    }

    pub fn counters(&self) -> &[u8] {
        &self.counters
    }

    pub fn predict(&self) -> IdleClass {
        if self.counter(self.last_addr) >= 2 {
            IdleClass::Long
        } else {
            IdleClass::Short
        }
    }

    /// A regular request to `new_addr` ended an idle period of `observed` cycles.
    pub fn update(&mut self, observed: Cycle, new_addr: u64) {
        let i = self.index(self.last_addr);
        let c = &mut self.counters[i];
        if observed >= self.threshold {
            *c = (*c + 1).min(3);
        } else {
            *c = c.saturating_sub(1);
        }
        self.idle_len = 0;
        self.last_addr = new_addr;
    }

    /// Low-utilization trigger: a nearly empty read queue whose context
    /// predicts a long quiet stretch.
    pub fn low_util_trigger(&self, read_q_occupancy: usize, low_util_threshold: usize) -> bool {
        read_q_occupancy > 0 && read_q_occupancy < low_util_threshold && self.predict() == IdleClass::Long
    }
}

pub const RL_HISTORY_BITS: u32 = 10;
pub const RL_STATES: usize = 1 << RL_HISTORY_BITS;
const RL_MASK: u64 = (1 << RL_HISTORY_BITS) - 1;
pub const REWARD_CORRECT: f64 = 1.0;
pub const REWARD_INCORRECT: f64 = -1.0;

/// Per-channel Q-learning idleness agent.
#[derive(Clone, Debug)]
pub struct QAgent {
    q: Vec<[f64; 2]>,
    alpha: f64,
    history: u16,
    periods_seen: u32,
    pub last_addr: u64,
    threshold: Cycle,
}

impl QAgent {
    pub fn new(alpha: f64, threshold: Cycle) -> Self {
        QAgent { q: vec![[0.0; 2]; RL_STATES], alpha, history: 0, periods_seen: 0, last_addr: 0, threshold }
    }

    pub fn history(&self) -> u16 {
        self.history
    }

    /// Line-address bits [15:6] XOR the long/short history register.
    pub fn state_for(addr: u64, history: u16) -> usize {
        (((addr >> LINE_BITS) & RL_MASK) ^ history as u64) as usize
    }

    pub fn state(&self) -> usize {
        Self::state_for(self.last_addr, self.history)
    }

    pub fn q(&self, state: usize, action: Action) -> f64 {
        self.q[state][action.idx()]
    }

    pub fn set_q(&mut self, state: usize, action: Action, v: f64) {
        self.q[state][action.idx()] = v;
    }

    /// Greedy argmax; ties go to `Generate`.
    pub fn act(&self, state: usize) -> Action {
        let [g, w] = self.q[state];
        if g >= w {
            Action::Generate
        } else {
            Action::Wait
        }
    }

    pub fn reward(action: Action, observed: Cycle, threshold: Cycle) -> f64 {
        let long = observed >= threshold;
        match (action, long) {
            (Action::Generate, true) | (Action::Wait, false) => REWARD_CORRECT,
            _ => REWARD_INCORRECT,
        }
    }

    /// The idle period that started in `state` with `action` ended after
    /// `observed` cycles; `new_addr` is the request that ended it.
    pub fn update(&mut self, state: usize, action: Action, observed: Cycle, new_addr: u64) {
        let r = Self::reward(action, observed, self.threshold);
        let q = &mut self.q[state][action.idx()];
        *q = (1.0 - self.alpha) * *q + self.alpha * r;
        let bit = (observed >= self.threshold) as u16;
        self.history = ((self.history << 1) | bit) & RL_MASK as u16;
        self.periods_seen = self.periods_seen.saturating_add(1);
        self.last_addr = new_addr;
    }

    pub fn max_abs_q(&self) -> f64 {
        self.q.iter().flat_map(|a| a.iter()).fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Bits the greedy oracle credits for an idle stretch of `idle_len` cycles.
pub fn greedy_fill(idle_len: Cycle, threshold: Cycle, bits_per_threshold: u32) -> u64 {
    (idle_len / threshold) * bits_per_threshold as u64
}

/// Prediction outcomes over completed idle periods.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PredictionStats {
    pub true_long: u64,
    pub true_short: u64,
    pub false_long: u64,
    pub false_short: u64,
}

impl PredictionStats {
    pub fn record(&mut self, predicted: IdleClass, actual: IdleClass) {
        match (predicted, actual) {
            (IdleClass::Long, IdleClass::Long) => self.true_long += 1,
            (IdleClass::Short, IdleClass::Short) => self.true_short += 1,
            (IdleClass::Long, IdleClass::Short) => self.false_long += 1,
            (IdleClass::Short, IdleClass::Long) => self.false_short += 1,
        }
    }

    pub fn periods(&self) -> u64 {
        self.true_long + self.true_short + self.false_long + self.false_short
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.periods();
        (n > 0).then(|| (self.true_long + self.true_short) as f64 / n as f64)
    }

    /// Share of periods predicted long that were short.
    pub fn false_positive_rate(&self) -> Option<f64> {
        let n = self.periods();
        (n > 0).then(|| self.false_long as f64 / n as f64)
    }

    pub fn false_negative_rate(&self) -> Option<f64> {
        let n = self.periods();
        (n > 0).then(|| self.false_short as f64 / n as f64)
    }

    pub fn merge(&mut self, o: &PredictionStats) {
        self.true_long += o.true_long;
        self.true_short += o.true_short;
        self.false_long += o.false_long;
        self.false_short += o.false_short;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_threshold_on_counter() {
        let mut p = SimplePredictor::new(256, 40);
        p.last_addr = 0x1000;
        for (c, want) in [(0, IdleClass::Short), (1, IdleClass::Short), (2, IdleClass::Long), (3, IdleClass::Long)] {
            p.set_counter(0x1000, c);
            assert_eq!(p.predict(), want, "counter {c}");
        }
    }

    #[test]
    fn update_saturates() {
        let mut p = SimplePredictor::new(256, 40);
        p.set_counter(0, 1);
        p.update(50, 0);
        assert_eq!(p.counter(0), 2);
        p.set_counter(0, 3);
        p.update(30, 0);
        assert_eq!(p.counter(0), 2);
        p.set_counter(0, 0);
        p.update(10, 0);
        assert_eq!(p.counter(0), 0);
        p.set_counter(0, 3);
        p.update(40, 0);
        assert_eq!(p.counter(0), 3);
    }

    #[test]
    fn update_moves_context_and_resets_length() {
        let mut p = SimplePredictor::new(256, 40);
        p.idle_len = 77;
        p.update(77, 0x40 * 5);
        assert_eq!(p.idle_len, 0);
        assert_eq!(p.last_addr, 0x140);
        assert_eq!(p.counter(0), 1);
        assert_eq!(p.counter(0x140), 0);
    }

    #[test]
    fn table_index_is_line_modulo_entries() {
        let p = SimplePredictor::new(256, 40);
        assert_eq!(p.index(0x40 * 3), 3);
        assert_eq!(p.index(0x40 * 259), 3);
        assert_eq!(p.index(0x3f), 0);
    }

    #[test]
    fn low_util_cases() {
        let mut p = SimplePredictor::new(256, 40);
        p.set_counter(0, 2);
        assert!(p.low_util_trigger(3, 4));
        assert!(!p.low_util_trigger(4, 4));
        assert!(!p.low_util_trigger(0, 4));
        p.set_counter(0, 1);
        assert!(!p.low_util_trigger(2, 4));
    }

    #[test]
    fn rl_state_encoding() {
        assert_eq!(QAgent::state_for(0, 0), 0);
        assert_eq!(QAgent::state_for(0b11_1111_1111 << 6, 0b11_1111_1111), 0);
        assert_eq!(QAgent::state_for(0b10_1010_1010 << 6, 0b00_0000_0001), 0b10_1010_1011);
        // bits above 15 and below 6 do not matter
        assert_eq!(QAgent::state_for((1 << 20) | 0x3f | (5 << 6), 0), 5);
    }

    #[test]
    fn rl_argmax_and_tie_break() {
        let mut a = QAgent::new(0.05, 40);
        assert_eq!(a.act(3), Action::Generate);
        a.set_q(3, Action::Generate, 0.3);
        a.set_q(3, Action::Wait, 0.1);
        assert_eq!(a.act(3), Action::Generate);
        a.set_q(3, Action::Wait, 0.31);
        assert_eq!(a.act(3), Action::Wait);
    }

    #[test]
    fn rl_update_formula() {
        let mut a = QAgent::new(0.05, 40);
        a.update(0, Action::Generate, 50, 0);
        assert!((a.q(0, Action::Generate) - 0.05).abs() < 1e-12);
        a.set_q(1, Action::Wait, 0.5);
        a.update(1, Action::Wait, 50, 0);
        assert!((a.q(1, Action::Wait) - 0.425).abs() < 1e-12);
    }

    #[test]
    fn rl_converges_to_one_from_below() {
        let mut a = QAgent::new(0.05, 40);
        let mut prev = 0.0;
        for _ in 0..2000 {
            a.update(9, Action::Wait, 1, 0);
            let q = a.q(9, Action::Wait);
            assert!(q >= prev && q <= 1.0);
            prev = q;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn rl_history_keeps_last_ten() {
        let mut a = QAgent::new(0.05, 40);
        for i in 0..25 {
            a.update(0, Action::Wait, if i % 2 == 0 { 100 } else { 0 }, 0);
        }
        // periods 15..25: 1 at even i, most recent (i = 24) in bit 0
        assert_eq!(a.history(), 0b01_0101_0101);
    }

    #[test]
    fn greedy_fill_examples() {
        assert_eq!(greedy_fill(40, 40, 8), 8);
        assert_eq!(greedy_fill(39, 40, 8), 0);
        assert_eq!(greedy_fill(120, 40, 8), 24);
    }

    #[test]
    fn stats_rates() {
        let mut s = PredictionStats::default();
        s.record(IdleClass::Long, IdleClass::Long);
        s.record(IdleClass::Long, IdleClass::Short);
        s.record(IdleClass::Short, IdleClass::Short);
        s.record(IdleClass::Short, IdleClass::Long);
        assert_eq!(s.accuracy(), Some(0.5));
        assert_eq!(s.false_positive_rate(), Some(0.25));
        assert_eq!(s.false_negative_rate(), Some(0.25));
        assert_eq!(PredictionStats::default().accuracy(), None);
    }
}
