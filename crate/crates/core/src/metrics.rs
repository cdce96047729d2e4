//! Slowdown, fairness and throughput metrics.

use crate::cpu::CoreStats;
use crate::error::MetricError;

/// Memory stall cycles per retired instruction.
pub fn mcpi(s: &CoreStats, core: usize) -> Result<f64, MetricError> {
    if s.retired == 0 {
        return Err(MetricError::NoInstructions(core));
    }
    Ok(s.mem_stall_cycles as f64 / s.retired as f64)
}

pub fn ipc(s: &CoreStats, core: usize) -> Result<f64, MetricError> {
    if s.retired == 0 || s.cycles == 0 {
        return Err(MetricError::NoInstructions(core));
    }
    Ok(s.retired as f64 / s.cycles as f64)
}

/// MCPI shared over MCPI alone.
pub fn mem_slowdown(shared_mcpi: f64, alone_mcpi: f64, core: usize) -> Result<f64, MetricError> {
    if alone_mcpi == 0.0 {
        return Err(MetricError::ZeroAloneMcpi(core));
    }
    Ok(shared_mcpi / alone_mcpi)
}

/// Largest over smallest slowdown.
pub fn unfairness(slowdowns: &[f64]) -> Result<f64, MetricError> {
    if slowdowns.len() < 2 {
        return Err(MetricError::TooFewSlowdowns(slowdowns.len()));
    }
    let max = slowdowns.iter().copied().fold(f64::MIN, f64::max);
    let min = slowdowns.iter().copied().fold(f64::MAX, f64::min);
    Ok(max / min)
}

/// Sum of shared-over-alone IPC ratios. `pairs` holds `(core, shared, alone)`.
pub fn weighted_speedup(pairs: &[(usize, f64, Option<f64>)]) -> Result<f64, MetricError> {
    pairs.iter().try_fold(0.0, |acc, &(core, shared, alone)| match alone {
        Some(a) => Ok(acc + shared / a),
        None => Err(MetricError::MissingAloneRun(core)),
    })
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Result for one core of a shared run.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreResult {
    pub core: usize,
    pub is_rng: bool,
    pub shared: CoreStats,
    pub alone: Option<CoreStats>,
    pub mcpi: Option<f64>,
    pub alone_mcpi: Option<f64>,
    pub slowdown: Option<f64>,
    pub exec_slowdown: Option<f64>,
    pub ipc: Option<f64>,
}

/// Everything measured for one configuration point.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunResult {
    pub cores: Vec<CoreResult>,
    pub unfairness: Option<f64>,
    pub weighted_speedup: Option<f64>,
    pub buffer_serve_rate: Option<f64>,
    pub predictor_accuracy: Option<f64>,
    pub predictor_false_positive: Option<f64>,
    pub predictor_false_negative: Option<f64>,
    pub idle_periods: u64,
    pub busy_cycles: u64,
    pub rng_mode_cycles: u64,
    pub idle_cycles: u64,
    pub ondemand_ops: u64,
    pub idle_batches: u64,
    pub max_queue_wait: u64,
    pub bus_cycles: u64,
}

impl RunResult {
    /// Memory slowdowns of the RNG (or non-RNG) cores that have one.
    pub fn slowdowns(&self, rng: bool) -> Vec<f64> {
        self.cores.iter().filter(|c| c.is_rng == rng).filter_map(|c| c.slowdown).collect()
    }

    /// Execution-time slowdowns of the RNG (or non-RNG) cores.
    pub fn exec_slowdowns(&self, rng: bool) -> Vec<f64> {
        self.cores.iter().filter(|c| c.is_rng == rng).filter_map(|c| c.exec_slowdown).collect()
    }

    /// `(metric, value)` pairs at system scope, in a fixed order.
    pub fn system_metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("unfairness", self.unfairness),
            ("weighted_speedup", self.weighted_speedup),
            ("mean_nonrng_slowdown", mean(&self.slowdowns(false))),
            ("mean_rng_slowdown", mean(&self.slowdowns(true))),
            ("mean_nonrng_exec_slowdown", mean(&self.exec_slowdowns(false))),
            ("mean_rng_exec_slowdown", mean(&self.exec_slowdowns(true))),
            ("buffer_serve_rate", self.buffer_serve_rate),
            ("predictor_accuracy", self.predictor_accuracy),
            ("predictor_false_positive", self.predictor_false_positive),
            ("predictor_false_negative", self.predictor_false_negative),
            ("idle_periods", Some(self.idle_periods as f64)),
            ("busy_cycles", Some(self.busy_cycles as f64)),
            ("rng_mode_cycles", Some(self.rng_mode_cycles as f64)),
            ("idle_cycles", Some(self.idle_cycles as f64)),
            ("ondemand_ops", Some(self.ondemand_ops as f64)),
            ("idle_batches", Some(self.idle_batches as f64)),
            ("max_queue_wait", Some(self.max_queue_wait as f64)),
            ("bus_cycles", Some(self.bus_cycles as f64)),
        ]
    }
}

impl CoreResult {
    pub fn metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("is_rng", Some(self.is_rng as u8 as f64)),
            ("retired", Some(self.shared.retired as f64)),
            ("cycles", Some(self.shared.cycles as f64)),
            ("mem_stall_cycles", Some(self.shared.mem_stall_cycles as f64)),
            ("mcpi", self.mcpi),
            ("alone_mcpi", self.alone_mcpi),
            ("ipc", self.ipc),
            ("mem_slowdown", self.slowdown),
            ("exec_slowdown", self.exec_slowdown),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slowdown_examples() {
        assert_eq!(mem_slowdown(2.0, 1.0, 0), Ok(2.0));
        assert_eq!(mem_slowdown(1.3, 1.3, 0), Ok(1.0));
        assert!(mem_slowdown(0.5, 1.0, 0).unwrap() < 1.0);
        assert_eq!(mem_slowdown(1.0, 0.0, 3), Err(MetricError::ZeroAloneMcpi(3)));
    }

    #[test]
    fn unfairness_examples() {
        assert_eq!(unfairness(&[2.0, 1.25]), Ok(1.6));
        assert_eq!(unfairness(&[1.7, 1.7]), Ok(1.0));
        assert_eq!(unfairness(&[3.0, 1.5, 1.0]), Ok(3.0));
        assert!(unfairness(&[2.0]).is_err());
    }

    #[test]
    fn weighted_speedup_examples() {
        assert_eq!(weighted_speedup(&[(0, 1.0, Some(1.0)), (1, 2.0, Some(2.0))]), Ok(2.0));
        assert_eq!(weighted_speedup(&[(0, 0.5, Some(1.0)), (1, 2.0, Some(2.0))]), Ok(1.5));
        assert_eq!(weighted_speedup(&[(0, 1.0, None)]), Err(MetricError::MissingAloneRun(0)));
    }

    #[test]
    fn mcpi_examples() {
        let s = CoreStats { retired: 1000, mem_stall_cycles: 2000, cycles: 3000, ..Default::default() };
        assert_eq!(mcpi(&s, 0), Ok(2.0));
        assert!(mcpi(&CoreStats::default(), 0).is_err());
        let s = CoreStats { retired: 10, ..Default::default() };
        assert_eq!(mcpi(&s, 0), Ok(0.0));
    }
}
