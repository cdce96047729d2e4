//! Experiment files: machine parameters, workload mixes and sweep axes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error};
use crate::memctrl::SchedulerKind;
use crate::predictor::FillPolicy;
use crate::system::SystemConfig;
use crate::trng::TrngPreset;
use crate::workloads::TraceSpec;

/// Which machine the alone runs use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AloneReference {
    /// FR-FCFS+Cap, no buffer, no filling; everything else as the point.
    #[default]
    Baseline,
    /// Exactly the point's machine.
    Same,
}

/// One core of a mix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreSlot {
    pub trace: TraceSpec,
    #[serde(default)]
    pub priority: u32,
    /// Overrides `system.core.instruction_budget` for this core.
    #[serde(default)]
    pub instruction_budget: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    #[serde(default)]
    pub name: String,
    pub cores: Vec<CoreSlot>,
}

/// Lists of values to take the Cartesian product over. An empty list keeps
/// the value from `system` (or, for throughput, the one in each trace).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    pub scheduler: Vec<SchedulerKind>,
    pub policy: Vec<FillPolicy>,
    pub buffer_entries: Vec<u32>,
    pub trng_preset: Vec<TrngPreset>,
    pub throughput_mbps: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Mixed into the TRNG seed and every synthetic trace seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub alone_reference: AloneReference,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default, rename = "workload")]
    pub workloads: Vec<Workload>,
    #[serde(default)]
    pub sweep: SweepAxes,
}

/// One element of the sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Point {
    pub workload: usize,
    pub scheduler: SchedulerKind,
    pub policy: FillPolicy,
    pub buffer_entries: u32,
    pub trng_preset: TrngPreset,
    pub throughput_mbps: Option<u64>,
}

/// A fully resolved simulation: machine, traces and budgets.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub system: SystemConfig,
    pub traces: Vec<TraceSpec>,
    pub budgets: Vec<Option<u64>>,
}

impl RunSpec {
    /// Single-core spec for core `i`, used for the alone runs.
    pub fn alone(&self, i: usize, reference: AloneReference) -> RunSpec {
        let mut system = self.system.clone();
        if reference == AloneReference::Baseline {
            system.scheduler.kind = SchedulerKind::FrFcfsCap;
            system.predictor.policy = FillPolicy::None;
            system.buffer.entries = 0;
        }
        system.scheduler.priorities = vec![system.scheduler.priority(i)];
        RunSpec { system, traces: vec![self.traces[i].clone()], budgets: vec![self.budgets[i]] }
    }

    /// Exact identity of the run, used as the alone-run cache key.
    pub fn key(&self) -> String {
        format!("{self:?}")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    /// Checks everything that can be checked without building traces, so
    /// errors surface before any simulation starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system.validate()?;
        if self.workloads.is_empty() {
            return Err(ConfigError::invalid("at least one [[workload]] is required"));
        }
        for (w, wl) in self.workloads.iter().enumerate() {
            if wl.cores.is_empty() {
                return Err(ConfigError::invalid(format!("workload {w} has no cores")));
            }
            for (c, slot) in wl.cores.iter().enumerate() {
                slot.trace.validate().map_err(|e| ConfigError::invalid(format!("workload {w} core {c}: {e}")))?;
                if slot.instruction_budget == Some(0) {
                    return Err(ConfigError::invalid(format!(
                        "workload {w} core {c}: instruction_budget must be >= 1"
                    )));
                }
            }
        }
        let ax = &self.sweep;
        if ax.throughput_mbps.contains(&0) {
            return Err(ConfigError::invalid("sweep.throughput_mbps values must be > 0"));
        }
        // every point must be a valid machine
        for p in self.points() {
            self.point_system(&p).validate()?;
        }
        Ok(())
    }

    /// Cartesian product of the axes, workloads outermost.
    pub fn points(&self) -> Vec<Point> {
        fn axis<T: Copy>(v: &[T], fallback: T) -> Vec<T> {
            if v.is_empty() {
                vec![fallback]
            } else {
                v.to_vec()
            }
        }
        let ax = &self.sweep;
        let s = &self.system;
        let throughputs: Vec<Option<u64>> = if ax.throughput_mbps.is_empty() {
            vec![None]
        } else {
            ax.throughput_mbps.iter().map(|&t| Some(t)).collect()
        };
        let mut out = Vec::new();
        for workload in 0..self.workloads.len() {
            for &scheduler in &axis(&ax.scheduler, s.scheduler.kind) {
                for &policy in &axis(&ax.policy, s.predictor.policy) {
                    for &buffer_entries in &axis(&ax.buffer_entries, s.buffer.entries) {
                        for &trng_preset in &axis(&ax.trng_preset, s.trng.preset) {
                            for &throughput_mbps in &throughputs {
                                out.push(Point {
                                    workload,
                                    scheduler,
                                    policy,
                                    buffer_entries,
                                    trng_preset,
                                    throughput_mbps,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// The point's machine, without the workload's priorities.
    fn point_system(&self, p: &Point) -> SystemConfig {
        let mut s = self.system.clone();
        s.scheduler.kind = p.scheduler;
        s.predictor.policy = p.policy;
        s.buffer.entries = p.buffer_entries;
        s.trng.preset = p.trng_preset;
        s.trng.seed ^= self.seed;
        s
    }

    pub fn run_spec(&self, p: &Point) -> RunSpec {
        let wl = &self.workloads[p.workload];
        let mut system = self.point_system(p);
        system.scheduler.priorities = wl.cores.iter().map(|c| c.priority).collect();
        let traces = wl
            .cores
            .iter()
            .map(|c| {
                let mut t = c.trace.clone();
                match &mut t {
                    TraceSpec::Rng { throughput_mbps, .. } => {
                        if let Some(tp) = p.throughput_mbps {
                            *throughput_mbps = tp;
                        }
                    }
                    TraceSpec::Synthetic { seed, .. } => *seed = seed.wrapping_add(self.seed),
                    TraceSpec::File { .. } => {}
                }
                t
            })
            .collect();
        RunSpec { system, traces, budgets: wl.cores.iter().map(|c| c.instruction_budget).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3

[system.buffer]
entries = 8

[[workload]]
name = "pair"
[[workload.cores]]
trace = { kind = "synthetic", pattern = "random_uniform", mpki = 20.0, length = 1000, seed = 1 }
[[workload.cores]]
trace = { kind = "rng", throughput_mbps = 640 }
priority = 1
instruction_budget = 500

[sweep]
scheduler = ["fr_fcfs_cap", "rng_aware"]
throughput_mbps = [640, 5120]
"#;

    #[test]
    fn parses_and_expands() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let pts = cfg.points();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[0].buffer_entries, 8);
        assert_eq!(pts[1].throughput_mbps, Some(5120));
        assert_eq!(pts[2].scheduler, SchedulerKind::RngAware);
        let spec = cfg.run_spec(&pts[1]);
        assert_eq!(spec.system.scheduler.priorities, vec![0, 1]);
        assert_eq!(spec.budgets, vec![None, Some(500)]);
        assert!(matches!(spec.traces[1], TraceSpec::Rng { throughput_mbps: 5120, .. }));
        assert!(matches!(spec.traces[0], TraceSpec::Synthetic { seed: 4, .. }));
    }

    #[test]
    fn alone_reference_strips_mechanisms() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let spec = cfg.run_spec(&cfg.points()[3]);
        let a = spec.alone(1, AloneReference::Baseline);
        assert_eq!(a.system.scheduler.kind, SchedulerKind::FrFcfsCap);
        assert_eq!(a.system.buffer.entries, 0);
        assert_eq!(a.traces.len(), 1);
        assert_eq!(a.system.scheduler.priorities, vec![1]);
        let same = spec.alone(1, AloneReference::Same);
        assert_eq!(same.system.scheduler.kind, SchedulerKind::RngAware);
        assert_ne!(a.key(), same.key());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_toml("").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        let bad = SAMPLE.replace("entries = 8", "entries = 9999");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = SAMPLE.replace("mpki = 20.0", "mpki = -1.0");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }
}
