//! Static per-link radio model: LOS draw, UMi street-canyon pathloss,
//! lognormal shadowing, array gain, SNR and capped-Shannon capacity.
//!
//! Link state is drawn once per node pair and frozen for the whole run; every
//! query afterwards is a read of the immutable cache.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::deployment::{distance_m, Scenario};
use crate::rng::{stream_rng, SALT_CHANNEL};

pub const SHADOW_SIGMA_LOS_DB: f64 = 4.0;
pub const SHADOW_SIGMA_NLOS_DB: f64 = 7.82;

/// Radio-layer configuration; defaults are typical NR FR2 figures.
#[derive(Clone, Copy, Debug)]
pub struct RadioConfig {
    pub carrier_ghz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    pub gnb_elements: u32,
    pub ue_elements: u32,
    pub se_cap_bps_hz: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            carrier_ghz: 28.0,
            bandwidth_hz: 400e6,
            tx_power_dbm: 30.0,
            noise_figure_db: 5.0,
            gnb_elements: 64,
            ue_elements: 16,
            se_cap_bps_hz: 7.406,
        }
    }
}

impl RadioConfig {
    /// Thermal noise floor in dBm over the configured bandwidth.
    pub fn noise_floor_dbm(&self) -> f64 {
        -174.0 + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }
}

/// Frozen state of one radio link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkState {
    pub distance_m: f64,
    pub los: bool,
    pub shadowing_db: f64,
    pub pathloss_db: f64,
    pub snr_db: f64,
    pub capacity_bps: f64,
}

/// LOS probability of the UMi street-canyon model.
pub fn los_probability(d_m: f64) -> f64 {
    assert!(d_m >= 0.0);
    if d_m <= 18.0 {
        1.0
    } else {
        (18.0 / d_m) * (1.0 - (-d_m / 36.0).exp()) + (-d_m / 36.0).exp()
    }
}

/// UMi street-canyon pathloss in dB. Distances below 1 m are clamped.
pub fn pathloss_db(d_m: f64, los: bool, f_ghz: f64) -> f64 {
    let d = d_m.max(1.0);
    let pl_los = 32.4 + 21.0 * d.log10() + 20.0 * f_ghz.log10();
    if los {
        pl_los
    } else {
        let pl_nlos = 22.4 + 35.3 * d.log10() + 21.3 * f_ghz.log10();
        pl_nlos.max(pl_los)
    }
}

/// Array gain of an `n`-element array with perfectly aligned beams.
pub fn beamforming_gain_db(n_elements: u32) -> f64 {
    assert!(n_elements >= 1);
    10.0 * f64::from(n_elements).log10()
}

/// Link-budget SNR in dB.
pub fn snr_db(cfg: &RadioConfig, pl_db: f64, shadow_db: f64, g_tx_db: f64, g_rx_db: f64) -> f64 {
    cfg.tx_power_dbm - pl_db - shadow_db + g_tx_db + g_rx_db - cfg.noise_floor_dbm()
}

/// Shannon capacity with a spectral-efficiency cap.
pub fn capacity_bps(snr_db: f64, bandwidth_hz: f64, se_cap_bps_hz: f64) -> f64 {
    let snr_lin = 10f64.powf(snr_db / 10.0);
    bandwidth_hz * (1.0 + snr_lin).log2().min(se_cap_bps_hz)
}

fn draw_link<R: Rng>(cfg: &RadioConfig, d_m: f64, g_tx: f64, g_rx: f64, rng: &mut R) -> LinkState {
    let los = rng.gen::<f64>() < los_probability(d_m);
    let sigma = if los { SHADOW_SIGMA_LOS_DB } else { SHADOW_SIGMA_NLOS_DB };
    let shadowing_db = Normal::new(0.0, sigma).expect("valid sigma").sample(rng);
    let pathloss = pathloss_db(d_m, los, cfg.carrier_ghz);
    let snr = snr_db(cfg, pathloss, shadowing_db, g_tx, g_rx);
    LinkState {
        distance_m: d_m,
        los,
        shadowing_db,
        pathloss_db: pathloss,
        snr_db: snr,
        capacity_bps: capacity_bps(snr, cfg.bandwidth_hz, cfg.se_cap_bps_hz),
    }
}

/// Immutable per-run cache of every gNB-gNB and gNB-UE link.
///
/// Each link's randomness is keyed by `(seed, kind, low id, high id)`, so a
/// pair's draw does not depend on which other sites exist. This keeps link
/// states identical across the all-wired / IAB / only-donors variants of one
/// seed.
pub struct LinkCache {
    gnb_gnb: Vec<Vec<LinkState>>,
    gnb_ue: Vec<Vec<LinkState>>,
    gnb_present: Vec<bool>,
    n_gnb_ids: usize,
    n_ues: usize,
}

const LINK_GNB_GNB: u64 = 0;
const LINK_GNB_UE: u64 = 1;

impl LinkCache {
    pub fn build(scenario: &Scenario, cfg: &RadioConfig, seed: u64) -> LinkCache {
        let n_ids = scenario.gnb_id_bound();
        let n_ues = scenario.ues.len();
        let g_gnb = beamforming_gain_db(cfg.gnb_elements);
        let g_ue = beamforming_gain_db(cfg.ue_elements);
        let absent = LinkState {
            distance_m: 0.0,
            los: false,
            shadowing_db: 0.0,
            pathloss_db: 0.0,
            snr_db: f64::NEG_INFINITY,
            capacity_bps: 0.0,
        };
        let mut gnb_gnb = vec![vec![absent; n_ids]; n_ids];
        let mut gnb_ue = vec![vec![absent; n_ues]; n_ids];
        let mut gnb_present = vec![false; n_ids];
        for g in &scenario.gnbs {
            gnb_present[g.id] = true;
        }
        for (i, a) in scenario.gnbs.iter().enumerate() {
            for b in scenario.gnbs.iter().skip(i + 1) {
                let (lo, hi) = (a.id.min(b.id), a.id.max(b.id));
                let mut rng =
                    stream_rng(seed, &[SALT_CHANNEL, LINK_GNB_GNB, lo as u64, hi as u64]);
                let d = distance_m(a.pos, a.height_m, b.pos, b.height_m);
                let link = draw_link(cfg, d, g_gnb, g_gnb, &mut rng);
                gnb_gnb[a.id][b.id] = link;
                gnb_gnb[b.id][a.id] = link;
            }
            for u in &scenario.ues {
                let mut rng =
                    stream_rng(seed, &[SALT_CHANNEL, LINK_GNB_UE, a.id as u64, u.id as u64]);
                let d = distance_m(a.pos, a.height_m, u.pos, u.height_m);
                gnb_ue[a.id][u.id] = draw_link(cfg, d, g_gnb, g_ue, &mut rng);
            }
        }
        LinkCache {
            gnb_gnb,
            gnb_ue,
            gnb_present,
            n_gnb_ids: n_ids,
            n_ues,
        }
    }

    /// Builds a cache from explicit link states; used by hand-built
    /// topologies in tests and benchmarks.
    pub fn from_explicit(
        n_gnb_ids: usize,
        n_ues: usize,
        gnb_gnb: Vec<(usize, usize, LinkState)>,
        gnb_ue: Vec<(usize, usize, LinkState)>,
    ) -> LinkCache {
        let absent = LinkState {
            distance_m: 0.0,
            los: false,
            shadowing_db: 0.0,
            pathloss_db: 0.0,
            snr_db: f64::NEG_INFINITY,
            capacity_bps: 0.0,
        };
        let mut cache = LinkCache {
            gnb_gnb: vec![vec![absent; n_gnb_ids]; n_gnb_ids],
            gnb_ue: vec![vec![absent; n_ues]; n_gnb_ids],
            gnb_present: vec![true; n_gnb_ids],
            n_gnb_ids,
            n_ues,
        };
        for (a, b, l) in gnb_gnb {
            cache.gnb_gnb[a][b] = l;
            cache.gnb_gnb[b][a] = l;
        }
        for (g, u, l) in gnb_ue {
            cache.gnb_ue[g][u] = l;
        }
        cache
    }

    pub fn gnb_gnb(&self, a: usize, b: usize) -> &LinkState {
        &self.gnb_gnb[a][b]
    }

    pub fn gnb_ue(&self, g: usize, u: usize) -> &LinkState {
        &self.gnb_ue[g][u]
    }

    pub fn gnb_present(&self, g: usize) -> bool {
        self.gnb_present.get(g).copied().unwrap_or(false)
    }

    pub fn n_gnb_ids(&self) -> usize {
        self.n_gnb_ids
    }

    pub fn n_ues(&self) -> usize {
        self.n_ues
    }
}
