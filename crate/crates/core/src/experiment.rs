//! Experiment runner: single runs, sweeps, and three-scenario comparisons
//! with deterministic seed management, run parallelism, and fixed-schema CSV
//! output.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::channel::RadioConfig;
use crate::deployment::{generate, realize, DeploymentKind, ScenarioParams};
use crate::metrics::{aggregate_runs, RunMetrics};
use crate::scheduler::FrameConfig;
use crate::topology::{PolicyConfig, PolicyKind};
use crate::traffic::{CbrConfig, DashConfig, HttpConfig, TransportConfig};
use crate::world::{prepare, run_one, RunOutcome, RunSpec, TrafficModel};
use crate::engine::SimTime;
use crate::forwarding::DEFAULT_BUFFER_BYTES;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrafficKind {
    Cbr,
    Dash,
    Http,
}

impl TrafficKind {
    pub fn label(self) -> &'static str {
        match self {
            TrafficKind::Cbr => "cbr",
            TrafficKind::Dash => "dash",
            TrafficKind::Http => "http",
        }
    }
}

/// Everything an experiment needs; flag and file parsing layer on top.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub density_gnb_km2: f64,
    pub donor_fraction: f64,
    pub area_km2: f64,
    pub ue_density_factor: f64,
    pub scenario: DeploymentKind,
    pub policy: PolicyConfig,
    pub traffic: TrafficKind,
    pub cbr: CbrConfig,
    pub dash: DashConfig,
    pub http: HttpConfig,
    pub transport: TransportConfig,
    pub radio: RadioConfig,
    pub frame: FrameConfig,
    pub buffer_bytes: u64,
    pub sim_duration_s: f64,
    pub warmup_s: f64,
    pub runs: usize,
    pub base_seed: u64,
    /// Run parallelism; `None` falls back to IAB_SIM_THREADS, then to the
    /// machine's core count.
    pub threads: Option<usize>,
    pub check_half_duplex: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            density_gnb_km2: 45.0,
            donor_fraction: 0.5,
            area_km2: 1.0,
            ue_density_factor: 10.0,
            scenario: DeploymentKind::Iab,
            policy: PolicyConfig::default(),
            traffic: TrafficKind::Cbr,
            cbr: CbrConfig::default(),
            dash: DashConfig::default(),
            http: HttpConfig::default(),
            transport: TransportConfig::default(),
            radio: RadioConfig::default(),
            frame: FrameConfig::default(),
            buffer_bytes: DEFAULT_BUFFER_BYTES,
            sim_duration_s: 10.0,
            warmup_s: 1.0,
            runs: 20,
            base_seed: 1,
            threads: None,
            check_half_duplex: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no valid runs: {0}")]
    NoValidRuns(String),
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let err = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if !(self.donor_fraction > 0.0 && self.donor_fraction <= 1.0) {
            return err("donor fraction must be in (0, 1]");
        }
        if self.density_gnb_km2 < 0.0 || self.area_km2 <= 0.0 {
            return err("density must be >= 0 and area > 0");
        }
        if self.sim_duration_s <= self.warmup_s {
            return err("duration must exceed warmup");
        }
        if self.runs < 1 {
            return err("runs must be >= 1");
        }
        if self.dash.representations_bps.is_empty() {
            return err("DASH representation set must be non-empty");
        }
        let mut sorted = self.dash.representations_bps.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted != self.dash.representations_bps {
            return err("DASH representations must be ascending");
        }
        Ok(())
    }

    fn scenario_params(&self, p: f64) -> ScenarioParams {
        ScenarioParams {
            density_gnb_km2: self.density_gnb_km2,
            donor_fraction: p,
            area_km2: self.area_km2,
            ue_density_factor: self.ue_density_factor,
        }
    }

    fn traffic_model(&self) -> TrafficModel {
        match self.traffic {
            TrafficKind::Cbr => TrafficModel::Cbr(self.cbr),
            TrafficKind::Dash => TrafficModel::Dash(self.dash.clone()),
            TrafficKind::Http => TrafficModel::Http(self.http),
        }
    }

    /// Builds the run spec for one (kind, policy, p, seed) cell member.
    pub fn run_spec(
        &self,
        kind: DeploymentKind,
        policy: PolicyConfig,
        p: f64,
        seed: u64,
    ) -> Result<RunSpec, ExperimentError> {
        let base = generate(&self.scenario_params(p), seed)
            .map_err(|e| ExperimentError::NoValidRuns(e.to_string()))?;
        Ok(RunSpec {
            scenario: realize(&base, kind),
            kind,
            policy,
            radio: self.radio,
            frame: self.frame,
            traffic: self.traffic_model(),
            transport: self.transport,
            buffer_bytes: self.buffer_bytes,
            duration: SimTime::from_secs_f64(self.sim_duration_s),
            warmup: SimTime::from_secs_f64(self.warmup_s),
            seed,
            check_half_duplex: self.check_half_duplex,
            frame_trace: false,
            packet_trace: false,
        })
    }
}

/// One sweep/compare cell: a deployment kind, policy and donor fraction with
/// the seeds its runs will use.
#[derive(Clone, Debug)]
pub struct CellPlan {
    pub kind: DeploymentKind,
    pub policy: PolicyConfig,
    pub p: f64,
    pub seeds: Vec<u64>,
}

fn seed_valid(cfg: &ExperimentConfig, kinds: &[DeploymentKind], p: f64, seed: u64) -> bool {
    let Ok(base) = generate(&cfg.scenario_params(p), seed) else {
        return false;
    };
    kinds.iter().all(|&kind| {
        let spec = RunSpec {
            scenario: realize(&base, kind),
            kind,
            policy: cfg.policy,
            radio: cfg.radio,
            frame: cfg.frame,
            traffic: cfg.traffic_model(),
            transport: cfg.transport,
            buffer_bytes: cfg.buffer_bytes,
            duration: SimTime::from_secs_f64(cfg.sim_duration_s),
            warmup: SimTime::from_secs_f64(cfg.warmup_s),
            seed,
            check_half_duplex: false,
            frame_trace: false,
            packet_trace: false,
        };
        prepare(&spec).is_ok()
    })
}

/// Scans seeds from `base_seed` upward and keeps the first `runs` that are
/// valid under every kind in `kinds` (paired validity). Attachment success
/// is policy-independent, so the same seed list serves every policy cell.
fn select_seeds(
    cfg: &ExperimentConfig,
    kinds: &[DeploymentKind],
    p: f64,
) -> Result<Vec<u64>, ExperimentError> {
    let budget = (cfg.runs as u64).saturating_mul(50).max(1000);
    let mut seeds = Vec::with_capacity(cfg.runs);
    for offset in 0..budget {
        let seed = cfg.base_seed.wrapping_add(offset);
        if seed_valid(cfg, kinds, p, seed) {
            seeds.push(seed);
            if seeds.len() == cfg.runs {
                return Ok(seeds);
            }
        }
    }
    Err(ExperimentError::NoValidRuns(format!(
        "found {} of {} valid seeds for p={} within {} candidates",
        seeds.len(),
        cfg.runs,
        p,
        budget
    )))
}

pub fn plan_run(cfg: &ExperimentConfig) -> Result<Vec<CellPlan>, ExperimentError> {
    cfg.validate()?;
    let seeds = select_seeds(cfg, &[cfg.scenario], cfg.donor_fraction)?;
    Ok(vec![CellPlan {
        kind: cfg.scenario,
        policy: cfg.policy,
        p: cfg.donor_fraction,
        seeds,
    }])
}

/// Cartesian product of `p_values` and `policies` over the configured
/// scenario; cells of one `p` share seeds (common random numbers).
pub fn plan_sweep(
    cfg: &ExperimentConfig,
    p_values: &[f64],
    policies: &[PolicyKind],
) -> Result<Vec<CellPlan>, ExperimentError> {
    cfg.validate()?;
    if p_values.is_empty() {
        return Err(ExperimentError::Config("empty p-value list".into()));
    }
    if policies.is_empty() {
        return Err(ExperimentError::Config("empty policy list".into()));
    }
    let mut cells = Vec::new();
    for &p in p_values {
        if !(p > 0.0 && p <= 1.0) {
            return Err(ExperimentError::Config(format!("p={p} outside (0, 1]")));
        }
        let seeds = select_seeds(cfg, &[cfg.scenario], p)?;
        for &kind in policies {
            let policy = PolicyConfig {
                kind,
                ..cfg.policy
            };
            cells.push(CellPlan {
                kind: cfg.scenario,
                policy,
                p,
                seeds: seeds.clone(),
            });
        }
    }
    Ok(cells)
}

/// The three deployment scenarios at one `p`, with identical seeds and
/// deployment draws (paired design).
pub fn plan_compare(cfg: &ExperimentConfig, p: f64) -> Result<Vec<CellPlan>, ExperimentError> {
    cfg.validate()?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(ExperimentError::Config(format!("p={p} outside (0, 1]")));
    }
    let kinds = [
        DeploymentKind::AllWired,
        DeploymentKind::Iab,
        DeploymentKind::OnlyDonors,
    ];
    let seeds = select_seeds(cfg, &kinds, p)?;
    Ok(kinds
        .iter()
        .map(|&kind| CellPlan {
            kind,
            policy: cfg.policy,
            p,
            seeds: seeds.clone(),
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct RunRow {
    pub run_idx: usize,
    pub seed: u64,
    pub metrics: RunMetrics,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub kind: DeploymentKind,
    pub policy: PolicyConfig,
    pub p: f64,
    pub runs: Vec<RunRow>,
}

fn thread_count(cfg: &ExperimentConfig) -> usize {
    cfg.threads
        .or_else(|| {
            std::env::var("IAB_SIM_THREADS")
                .ok()
                .and_then(|s| s.parse::<usize>().ok())
        })
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Executes every run of every cell, in parallel across runs. Results are
/// deterministic and independent of the thread count.
pub fn execute(
    cfg: &ExperimentConfig,
    cells: &[CellPlan],
) -> Result<Vec<CellResult>, ExperimentError> {
    let jobs: Vec<(usize, usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, cell)| {
            cell.seeds
                .iter()
                .enumerate()
                .map(move |(ri, &seed)| (ci, ri, seed))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(cfg))
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let outcomes: Vec<(usize, usize, u64, RunMetrics)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(ci, ri, seed)| {
                let cell = &cells[ci];
                let spec = cfg
                    .run_spec(cell.kind, cell.policy, cell.p, seed)
                    .expect("planned seed must generate");
                match run_one(&spec) {
                    RunOutcome::Valid(out) => (ci, ri, seed, out.metrics),
                    RunOutcome::Invalid(reason) => {
                        panic!("planned seed {seed} became invalid: {reason:?}")
                    }
                }
            })
            .collect()
    });
    let mut results: Vec<CellResult> = cells
        .iter()
        .map(|c| CellResult {
            kind: c.kind,
            policy: c.policy,
            p: c.p,
            runs: Vec::with_capacity(c.seeds.len()),
        })
        .collect();
    let mut sorted = outcomes;
    sorted.sort_by_key(|&(ci, ri, _, _)| (ci, ri));
    for (ci, ri, seed, metrics) in sorted {
        results[ci].runs.push(RunRow {
            run_idx: ri,
            seed,
            metrics,
        });
    }
    Ok(results)
}

/// The five CSV files of one experiment, assembled in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvBundle {
    pub per_ue: String,
    pub latency: String,
    pub dash: String,
    pub http: String,
    pub summary: String,
}

fn kind_rank(k: DeploymentKind) -> u8 {
    match k {
        DeploymentKind::AllWired => 0,
        DeploymentKind::Iab => 1,
        DeploymentKind::OnlyDonors => 2,
    }
}

fn policy_rank(p: PolicyKind) -> u8 {
    match p {
        PolicyKind::Hqf => 0,
        PolicyKind::Wf => 1,
        PolicyKind::HqfBiased => 2,
    }
}

/// Assembles the fixed-schema CSVs; rows ordered by (run, scenario, p),
/// then policy and entity id.
pub fn to_csvs(cfg: &ExperimentConfig, results: &[CellResult]) -> CsvBundle {
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = &results[a];
        let cb = &results[b];
        kind_rank(ca.kind)
            .cmp(&kind_rank(cb.kind))
            .then(ca.p.total_cmp(&cb.p))
            .then(policy_rank(ca.policy.kind).cmp(&policy_rank(cb.policy.kind)))
    });

    let mut per_ue = String::from(
        "run,seed,scenario,policy,p,density,ue_id,target_cell,attached_gnb,hops,throughput_bps,drops\n",
    );
    let mut latency = String::from("run,scenario,policy,p,pctl50_us,pctl95_us,mean_us\n");
    let mut dash = String::from("run,scenario,p,ue_id,stall_count,mean_stall_s,total_stall_s\n");
    let mut http = String::from("run,scenario,p,ue_id,pages,mean_page_time_s\n");
    let mut summary = String::from("scenario,policy,p,metric,mean,ci95\n");

    let max_runs = results.iter().map(|c| c.runs.len()).max().unwrap_or(0);
    for run_idx in 0..max_runs {
        for &ci in &order {
            let cell = &results[ci];
            let Some(row) = cell.runs.get(run_idx) else {
                continue;
            };
            let m = &row.metrics;
            let scenario = cell.kind.label();
            let policy = cell.policy.kind.label();
            for ue in &m.per_ue {
                let attached = ue.attached_gnb.map_or(-1, |g| g as i64);
                let _ = writeln!(
                    per_ue,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    run_idx,
                    row.seed,
                    scenario,
                    policy,
                    cell.p,
                    cfg.density_gnb_km2,
                    ue.ue_id,
                    m.target_cell,
                    attached,
                    ue.hops,
                    ue.throughput_bps,
                    ue.drops
                );
            }
            let (p50, p95, mean) = m
                .latency
                .map_or((0.0, 0.0, 0.0), |l| (l.pctl50_us, l.pctl95_us, l.mean_us));
            let _ = writeln!(
                latency,
                "{},{},{},{},{},{},{}",
                run_idx, scenario, policy, cell.p, p50, p95, mean
            );
            for d in &m.dash {
                let _ = writeln!(
                    dash,
                    "{},{},{},{},{},{},{}",
                    run_idx, scenario, cell.p, d.ue_id, d.stall_count, d.mean_stall_s, d.total_stall_s
                );
            }
            for h in &m.http {
                let _ = writeln!(
                    http,
                    "{},{},{},{},{},{}",
                    run_idx, scenario, cell.p, h.ue_id, h.pages, h.mean_page_time_s
                );
            }
        }
    }

    for &ci in &order {
        let cell = &results[ci];
        let scenario = cell.kind.label();
        let policy = cell.policy.kind.label();
        let mut emit = |metric: &str, values: Vec<f64>| {
            if values.is_empty() {
                return;
            }
            let s = aggregate_runs(&values);
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{}",
                scenario, policy, cell.p, metric, s.mean, s.ci95
            );
        };
        emit(
            "pctl5_throughput_bps",
            cell.runs
                .iter()
                .filter_map(|r| r.metrics.pctl5_target_throughput_bps().ok())
                .collect(),
        );
        emit(
            "mean_throughput_bps",
            cell.runs
                .iter()
                .map(|r| {
                    let v: Vec<f64> = r.metrics.target_ues().map(|u| u.throughput_bps).collect();
                    v.iter().sum::<f64>() / v.len().max(1) as f64
                })
                .collect(),
        );
        emit(
            "total_throughput_target_bps",
            cell.runs
                .iter()
                .map(|r| r.metrics.total_target_throughput_bps())
                .collect(),
        );
        emit(
            "total_throughput_all_bps",
            cell.runs
                .iter()
                .map(|r| r.metrics.total_throughput_bps())
                .collect(),
        );
        emit(
            "mean_ran_latency_us",
            cell.runs
                .iter()
                .filter_map(|r| r.metrics.latency.map(|l| l.mean_us))
                .collect(),
        );
        emit(
            "mean_ran_latency_all_us",
            cell.runs
                .iter()
                .filter_map(|r| r.metrics.mean_ran_latency_all_us)
                .collect(),
        );
        emit(
            "mean_hop_count",
            cell.runs
                .iter()
                .map(|r| r.metrics.mean_iab_hop_count)
                .collect(),
        );
        if cfg.traffic == TrafficKind::Dash {
            emit(
                "mean_stall_s",
                cell.runs
                    .iter()
                    .map(|r| r.metrics.mean_stall_s_target())
                    .collect(),
            );
        }
        if cfg.traffic == TrafficKind::Http {
            emit(
                "mean_page_time_s",
                cell.runs
                    .iter()
                    .filter_map(|r| r.metrics.mean_page_time_s_target())
                    .collect(),
            );
        }
    }

    CsvBundle {
        per_ue,
        latency,
        dash,
        http,
        summary,
    }
}

/// Executes `runs` independent simulations of the configured cell.
pub fn run(cfg: &ExperimentConfig) -> Result<CsvBundle, ExperimentError> {
    let cells = plan_run(cfg)?;
    let results = execute(cfg, &cells)?;
    Ok(to_csvs(cfg, &results))
}

/// Cartesian (p, policy) sweep with shared seeds per p.
pub fn sweep(
    cfg: &ExperimentConfig,
    p_values: &[f64],
    policies: &[PolicyKind],
) -> Result<CsvBundle, ExperimentError> {
    let cells = plan_sweep(cfg, p_values, policies)?;
    let results = execute(cfg, &cells)?;
    Ok(to_csvs(cfg, &results))
}

/// Paired three-scenario comparison at one p.
pub fn compare(cfg: &ExperimentConfig, p: f64) -> Result<CsvBundle, ExperimentError> {
    let cells = plan_compare(cfg, p)?;
    let results = execute(cfg, &cells)?;
    Ok(to_csvs(cfg, &results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            density_gnb_km2: 20.0,
            donor_fraction: 0.5,
            sim_duration_s: 1.0,
            warmup_s: 0.2,
            runs: 2,
            base_seed: 10,
            traffic: TrafficKind::Cbr,
            cbr: CbrConfig {
                rate_bps: 20e6,
                packet_bytes: 1400,
            },
            threads: Some(1),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let mut cfg = small_cfg();
        cfg.donor_fraction = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.warmup_s = 2.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.runs = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sweep_rejects_empty_lists() {
        let cfg = small_cfg();
        assert!(matches!(
            plan_sweep(&cfg, &[0.3], &[]),
            Err(ExperimentError::Config(_))
        ));
        assert!(matches!(
            plan_sweep(&cfg, &[], &[PolicyKind::Hqf]),
            Err(ExperimentError::Config(_))
        ));
    }

    #[test]
    fn compare_shares_seeds_across_scenarios() {
        let cfg = small_cfg();
        let cells = plan_compare(&cfg, 0.5).unwrap();
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[0].seeds, cells[1].seeds);
        assert_eq!(cells[1].seeds, cells[2].seeds);
    }

    #[test]
    fn sweep_shares_seeds_across_policies() {
        let cfg = small_cfg();
        let cells = plan_sweep(&cfg, &[0.4, 0.5], &[PolicyKind::Hqf, PolicyKind::Wf]).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].seeds, cells[1].seeds); // same p, different policy
        assert_eq!(cells[2].seeds, cells[3].seeds);
    }

    #[test]
    fn run_twice_is_byte_identical() {
        let cfg = small_cfg();
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_headers_are_fixed() {
        let cfg = small_cfg();
        let out = run(&cfg).unwrap();
        assert!(out.per_ue.starts_with(
            "run,seed,scenario,policy,p,density,ue_id,target_cell,attached_gnb,hops,throughput_bps,drops\n"
        ));
        assert!(out
            .latency
            .starts_with("run,scenario,policy,p,pctl50_us,pctl95_us,mean_us\n"));
        assert!(out
            .dash
            .starts_with("run,scenario,p,ue_id,stall_count,mean_stall_s,total_stall_s\n"));
        assert!(out
            .http
            .starts_with("run,scenario,p,ue_id,pages,mean_page_time_s\n"));
        assert!(out.summary.starts_with("scenario,policy,p,metric,mean,ci95\n"));
    }
}
