//! Runs experiments: alone and shared simulations, metrics, CSV output.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, Point, RunSpec};
use crate::cpu::CoreStats;
use crate::dram::AddressLayout;
use crate::error::Error;
use crate::metrics::{self, CoreResult, RunResult};
use crate::system::{SimOutput, Simulation};
use crate::workloads::Trace;

/// How independent simulations are spread over threads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    /// Uses rayon when the `parallel` feature is on, otherwise sequential.
    #[default]
    Parallel,
    Sequential,
}

#[cfg(feature = "parallel")]
fn map_all<T: Sync, R: Send>(items: &[T], exec: Execution, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    match exec {
        Execution::Parallel => items.par_iter().map(f).collect(),
        Execution::Sequential => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn map_all<T: Sync, R: Send>(items: &[T], _exec: Execution, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Builds the traces of `spec` and simulates them to completion.
pub fn simulate(spec: &RunSpec, base_dir: &Path) -> Result<SimOutput, Error> {
    let traces = build_traces(spec, base_dir)?;
    Simulation::new(&spec.system, traces, &spec.budgets)?.run()
}

pub fn build_traces(spec: &RunSpec, base_dir: &Path) -> Result<Vec<Trace>, Error> {
    spec.system.validate()?;
    let layout = AddressLayout::new(&spec.system.dram)?;
    let core = &spec.system.core;
    spec.traces.iter().map(|t| t.build(&layout, core.frequency, core.issue_width, base_dir)).collect()
}

/// Metrics of a shared run given each core's alone statistics.
pub fn evaluate(shared: &SimOutput, alone: &[CoreStats], rng_cores: &[bool]) -> RunResult {
    let cores: Vec<CoreResult> = shared
        .cores
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let a = alone.get(i).copied();
            let mcpi = metrics::mcpi(s, i).ok();
            let alone_mcpi = a.and_then(|a| metrics::mcpi(&a, i).ok());
            let slowdown = match (mcpi, alone_mcpi) {
                (Some(m), Some(am)) => metrics::mem_slowdown(m, am, i).ok(),
                _ => None,
            };
            let exec_slowdown = a.filter(|a| a.cycles > 0).map(|a| s.cycles as f64 / a.cycles as f64);
            CoreResult {
                core: i,
                is_rng: rng_cores.get(i).copied().unwrap_or(false),
                shared: *s,
                alone: a,
                mcpi,
                alone_mcpi,
                slowdown,
                exec_slowdown,
                ipc: metrics::ipc(s, i).ok(),
            }
        })
        .collect();
    let slowdowns: Vec<f64> = cores.iter().filter_map(|c| c.slowdown).collect();
    let unfairness = if slowdowns.len() == cores.len() { metrics::unfairness(&slowdowns).ok() } else { None };
    let pairs: Vec<(usize, f64, Option<f64>)> = cores
        .iter()
        .filter(|c| !c.is_rng)
        .map(|c| (c.core, c.ipc.unwrap_or(0.0), c.alone.and_then(|a| metrics::ipc(&a, c.core).ok())))
        .collect();
    let weighted_speedup = if pairs.is_empty() { None } else { metrics::weighted_speedup(&pairs).ok() };
    let m = &shared.mem;
    RunResult {
        cores,
        unfairness,
        weighted_speedup,
        buffer_serve_rate: (shared.buffer_requests > 0)
            .then(|| shared.buffer_served as f64 / shared.buffer_requests as f64),
        predictor_accuracy: shared.prediction.accuracy(),
        predictor_false_positive: shared.prediction.false_positive_rate(),
        predictor_false_negative: shared.prediction.false_negative_rate(),
        idle_periods: shared.prediction.periods(),
        busy_cycles: m.busy_cycles.iter().sum(),
        rng_mode_cycles: m.rng_mode_cycles.iter().sum(),
        idle_cycles: m.idle_cycles.iter().sum(),
        ondemand_ops: m.ondemand_ops,
        idle_batches: m.idle_batches,
        max_queue_wait: m.max_queue_wait,
        bus_cycles: shared.bus_cycles,
    }
}

/// Outcome of one sweep point; failures are kept, not propagated.
#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub point: Point,
    pub workload: String,
    pub result: Result<RunResult, String>,
}

/// Runs every point of an experiment. Alone runs are shared between points
/// whose alone spec is identical.
pub struct Harness {
    cfg: ExperimentConfig,
    base_dir: PathBuf,
    exec: Execution,
}

impl Harness {
    pub fn new(cfg: ExperimentConfig, base_dir: impl Into<PathBuf>) -> Self {
        Harness { cfg, base_dir: base_dir.into(), exec: Execution::default() }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Every sweep point, in point order.
    pub fn sweep(&self) -> Vec<PointResult> {
        self.run_points(&self.cfg.points())
    }

    /// The configured machine over each workload, ignoring the sweep axes.
    pub fn run_base(&self) -> Vec<PointResult> {
        let s = &self.cfg.system;
        let points: Vec<Point> = (0..self.cfg.workloads.len())
            .map(|workload| Point {
                workload,
                scheduler: s.scheduler.kind,
                policy: s.predictor.policy,
                buffer_entries: s.buffer.entries,
                trng_preset: s.trng.preset,
                throughput_mbps: None,
            })
            .collect();
        self.run_points(&points)
    }

    pub fn run_points(&self, points: &[Point]) -> Vec<PointResult> {
        let specs: Vec<RunSpec> = points.iter().map(|p| self.cfg.run_spec(p)).collect();

        // unique alone runs, in first-use order
        let mut alone_specs: Vec<RunSpec> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let alone_ids: Vec<Vec<usize>> = specs
            .iter()
            .map(|s| {
                (0..s.traces.len())
                    .map(|i| {
                        let a = s.alone(i, self.cfg.alone_reference);
                        *index.entry(a.key()).or_insert_with(|| {
                            alone_specs.push(a);
                            alone_specs.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();
        let alone: Vec<Result<CoreStats, String>> = map_all(&alone_specs, self.exec, |a| {
            simulate(a, &self.base_dir).map(|o| o.cores[0]).map_err(|e| format!("alone run: {e}"))
        });

        let jobs: Vec<usize> = (0..points.len()).collect();
        map_all(&jobs, self.exec, |&k| {
            let spec = &specs[k];
            let result = (|| {
                let alone_stats = alone_ids[k].iter().map(|&j| alone[j].clone()).collect::<Result<Vec<_>, String>>()?;
                let traces = build_traces(spec, &self.base_dir).map_err(|e| e.to_string())?;
                let rng: Vec<bool> = traces.iter().map(|t| t.rng_requests() > 0).collect();
                let out = Simulation::new(&spec.system, traces, &spec.budgets)
                    .and_then(Simulation::run)
                    .map_err(|e| e.to_string())?;
                Ok(evaluate(&out, &alone_stats, &rng))
            })();
            PointResult { point: points[k], workload: workload_label(&self.cfg, points[k].workload), result }
        })
    }
}

fn workload_label(cfg: &ExperimentConfig, w: usize) -> String {
    let name = &cfg.workloads[w].name;
    if name.is_empty() {
        format!("w{w}")
    } else {
        name.clone()
    }
}

/// Column set of the long-format results CSV.
pub const CSV_HEADER: [&str; 10] = [
    "workload",
    "scheduler",
    "policy",
    "buffer_entries",
    "trng",
    "throughput_mbps",
    "scope",
    "metric",
    "value",
    "error",
];

/// Config-file name of a unit enum variant.
fn enum_name<T: serde::Serialize>(v: &T) -> String {
    match toml::Value::try_from(v) {
        Ok(toml::Value::String(s)) => s,
        other => panic!("not a unit variant: {other:?}"),
    }
}

fn fmt_value(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// One row per (point, scope, metric). Undefined metrics have an empty value.
pub fn write_csv(results: &[PointResult], out: impl Write) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in results {
        let p = &r.point;
        let prefix = [
            r.workload.clone(),
            enum_name(&p.scheduler),
            enum_name(&p.policy),
            p.buffer_entries.to_string(),
            enum_name(&p.trng_preset),
            p.throughput_mbps.map(|t| t.to_string()).unwrap_or_default(),
        ];
        let mut row = |scope: &str, metric: &str, value: String, error: &str| {
            let mut rec: Vec<&str> = prefix.iter().map(String::as_str).collect();
            rec.extend([scope, metric, &value, error]);
            w.write_record(&rec)
        };
        match &r.result {
            Err(e) => row("system", "error", String::new(), e)?,
            Ok(res) => {
                for (m, v) in res.system_metrics() {
                    row("system", m, fmt_value(v), "")?;
                }
                for c in &res.cores {
                    let scope = format!("core{}", c.core);
                    for (m, v) in c.metrics() {
                        row(&scope, m, fmt_value(v), "")?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Summary of a results CSV: for every configuration (all point columns
/// except the workload) and system metric, count/mean/min/max over the
/// workloads where the metric is defined.
pub fn report(input: impl Read, out: impl Write) -> Result<(), Error> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Io(std::io::Error::other(format!("missing column {name}"))))
    };
    let keys = [col("scheduler")?, col("policy")?, col("buffer_entries")?, col("trng")?, col("throughput_mbps")?];
    let (scope, metric, value, error) = (col("scope")?, col("metric")?, col("value")?, col("error")?);

    let mut groups: BTreeMap<(Vec<String>, String), (Vec<f64>, u64)> = BTreeMap::new();
    let mut order: Vec<(Vec<String>, String)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if &rec[scope] != "system" {
            continue;
        }
        let key = (keys.iter().map(|&k| rec[k].to_string()).collect::<Vec<_>>(), rec[metric].to_string());
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (Vec::new(), 0)
        });
        if !rec[error].is_empty() {
            entry.1 += 1;
            continue;
        }
        if let Ok(v) = rec[value].parse::<f64>() {
            entry.0.push(v);
        }
    }

    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scheduler",
        "policy",
        "buffer_entries",
        "trng",
        "throughput_mbps",
        "metric",
        "count",
        "failed",
        "mean",
        "min",
        "max",
    ])?;
    for key in order {
        let (vals, failed) = &groups[&key];
        let min = vals.iter().copied().reduce(f64::min);
        let max = vals.iter().copied().reduce(f64::max);
        let mut rec = key.0.clone();
        rec.extend([
            key.1.clone(),
            vals.len().to_string(),
            failed.to_string(),
            fmt_value(metrics::mean(vals)),
            fmt_value(min),
            fmt_value(max),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memctrl::SchedulerKind;
    use crate::predictor::FillPolicy;

    const SMALL: &str = r#"
[system.core]
instruction_budget = 20000

[[workload]]
[[workload.cores]]
trace = { kind = "synthetic", pattern = "random_uniform", mpki = 20.0, length = 5000, seed = 1 }
[[workload.cores]]
trace = { kind = "rng", throughput_mbps = 640, length = 2000 }

[sweep]
scheduler = ["fr_fcfs_cap", "rng_aware"]
"#;

    #[test]
    fn enum_names_are_config_names() {
        assert_eq!(enum_name(&SchedulerKind::FrFcfsCap), "fr_fcfs_cap");
        assert_eq!(enum_name(&FillPolicy::SimplePredictor), "simple_predictor");
    }

    #[test]
    fn sweep_is_ordered_and_sequential_matches_parallel() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let par = Harness::new(cfg.clone(), ".").sweep();
        let seq = Harness::new(cfg, ".").with_execution(Execution::Sequential).sweep();
        assert_eq!(par, seq);
        assert_eq!(par[1].point.scheduler, SchedulerKind::RngAware);
        let r = par[0].result.as_ref().unwrap();
        assert!(r.cores[1].is_rng && !r.cores[0].is_rng);
        assert!(r.unfairness.unwrap() >= 1.0);
    }

    #[test]
    fn failures_are_recorded_per_point() {
        let text = SMALL.replace(
            r#"trace = { kind = "rng", throughput_mbps = 640, length = 2000 }"#,
            r#"trace = { kind = "file", path = "does/not/exist.trace" }"#,
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let res = Harness::new(cfg, ".").sweep();
        assert_eq!(res.len(), 2);
        assert!(res.iter().all(|r| r.result.is_err()));
        let mut buf = Vec::new();
        write_csv(&res, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().contains(",system,error,,"));
    }

    #[test]
    fn csv_and_report_shapes() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let res = Harness::new(cfg, ".").sweep();
        let mut buf = Vec::new();
        write_csv(&res, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&CSV_HEADER.join(",")));
        assert!(text.contains(",system,unfairness,"));
        assert!(text.contains(",core1,mem_slowdown,"));
        let mut rep = Vec::new();
        report(&buf[..], &mut rep).unwrap();
        let rep = String::from_utf8(rep).unwrap();
        assert!(rep.lines().any(|l| l.starts_with("rng_aware,none,16,drange,,unfairness,1,0,")));
    }
}
