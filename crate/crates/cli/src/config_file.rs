//! Flat key-value config files: one `key = value` per line, `#` comments.
//! CLI flags override file values.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use iab_sim_core::experiment::{ExperimentConfig, TrafficKind};
use iab_sim_core::{DeploymentKind, PolicyKind};

/// File config plus runner extras that are not part of the core experiment
/// configuration.
#[derive(Clone, Debug)]
pub struct FileConfig {
    pub cfg: ExperimentConfig,
    pub out_dir: PathBuf,
    pub sweep_p_values: Vec<f64>,
    pub sweep_policies: Vec<PolicyKind>,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            cfg: ExperimentConfig::default(),
            out_dir: PathBuf::from("out"),
            sweep_p_values: vec![0.2, 0.3, 0.4, 0.5],
            sweep_policies: vec![PolicyKind::Hqf, PolicyKind::Wf, PolicyKind::HqfBiased],
        }
    }
}

pub fn parse_scenario(s: &str) -> Result<DeploymentKind> {
    match s {
        "all-wired" => Ok(DeploymentKind::AllWired),
        "iab" => Ok(DeploymentKind::Iab),
        "only-donors" => Ok(DeploymentKind::OnlyDonors),
        other => bail!("unknown scenario '{other}' (all-wired|iab|only-donors)"),
    }
}

pub fn parse_policy(s: &str) -> Result<PolicyKind> {
    match s {
        "hqf" => Ok(PolicyKind::Hqf),
        "wf" => Ok(PolicyKind::Wf),
        "biased" => Ok(PolicyKind::HqfBiased),
        other => bail!("unknown policy '{other}' (hqf|wf|biased)"),
    }
}

pub fn parse_traffic(s: &str) -> Result<TrafficKind> {
    match s {
        "cbr" => Ok(TrafficKind::Cbr),
        "dash" => Ok(TrafficKind::Dash),
        "http" => Ok(TrafficKind::Http),
        other => bail!("unknown traffic '{other}' (cbr|dash|http)"),
    }
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad number '{v}'")))
        .collect()
}

pub fn parse_policy_list(s: &str) -> Result<Vec<PolicyKind>> {
    s.split(',').map(|v| parse_policy(v.trim())).collect()
}

/// Parses the config file text. Unknown keys are errors so typos fail fast.
pub fn parse(text: &str) -> Result<FileConfig> {
    let mut fc = FileConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {line_no}: expected 'key = value', got '{line}'");
        };
        let key = key.trim();
        let value = value.trim();
        apply(&mut fc, key, value).with_context(|| format!("line {line_no}: key '{key}'"))?;
    }
    Ok(fc)
}

fn apply(fc: &mut FileConfig, key: &str, value: &str) -> Result<()> {
    let f = || -> Result<f64> { Ok(value.parse::<f64>()?) };
    let u = || -> Result<u64> { Ok(value.parse::<u64>()?) };
    let cfg = &mut fc.cfg;
    match key {
        "density_gnb_km2" => cfg.density_gnb_km2 = f()?,
        "donor_fraction" => cfg.donor_fraction = f()?,
        "area_km2" => cfg.area_km2 = f()?,
        "ue_density_factor" => cfg.ue_density_factor = f()?,
        "scenario" => cfg.scenario = parse_scenario(value)?,
        "policy" => cfg.policy.kind = parse_policy(value)?,
        "beta_db_per_hop" => cfg.policy.beta_db_per_hop = f()?,
        "min_snr_db" => cfg.policy.min_snr_db = f()?,
        "traffic" => cfg.traffic = parse_traffic(value)?,
        "cbr_rate_bps" => cfg.cbr.rate_bps = f()?,
        "packet_bytes" => {
            cfg.cbr.packet_bytes = u()? as u32;
            cfg.transport.packet_bytes = u()? as u32;
        }
        "dash_representations_mbps" => {
            cfg.dash.representations_bps =
                parse_f64_list(value)?.into_iter().map(|m| m * 1e6).collect()
        }
        "dash_segment_s" => cfg.dash.segment_s = f()?,
        "dash_safety_margin" => cfg.dash.safety_margin = f()?,
        "dash_ewma_alpha" => cfg.dash.ewma_alpha = f()?,
        "dash_startup_buffer_s" => cfg.dash.startup_buffer_s = f()?,
        "dash_max_buffer_s" => cfg.dash.max_buffer_s = f()?,
        "http_reading_mean_s" => cfg.http.reading_mean_s = f()?,
        "window_bytes" => cfg.transport.window_bytes = u()?,
        "buffer_bytes" => cfg.buffer_bytes = u()?,
        "carrier_ghz" => cfg.radio.carrier_ghz = f()?,
        "bandwidth_hz" => cfg.radio.bandwidth_hz = f()?,
        "tx_power_dbm" => cfg.radio.tx_power_dbm = f()?,
        "noise_figure_db" => cfg.radio.noise_figure_db = f()?,
        "gnb_elements" => cfg.radio.gnb_elements = u()? as u32,
        "ue_elements" => cfg.radio.ue_elements = u()? as u32,
        "se_cap_bps_hz" => cfg.radio.se_cap_bps_hz = f()?,
        "slot_us" => cfg.frame.slot = iab_sim_core::SimTime::from_micros(u()?),
        "slots_per_frame" => cfg.frame.n_slots = u()? as usize,
        "sim_duration_s" => cfg.sim_duration_s = f()?,
        "warmup_s" => cfg.warmup_s = f()?,
        "runs" => cfg.runs = u()? as usize,
        "base_seed" => cfg.base_seed = u()?,
        "threads" => {
            let n = u()? as usize;
            cfg.threads = (n > 0).then_some(n);
        }
        "out_dir" => fc.out_dir = PathBuf::from(value),
        "sweep_p_values" => fc.sweep_p_values = parse_f64_list(value)?,
        "sweep_policies" => fc.sweep_policies = parse_policy_list(value)?,
        other => bail!("unknown config key '{other}'"),
    }
    Ok(())
}
