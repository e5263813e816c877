//! Per-run statistics, percentiles/CDFs, and cross-run Monte Carlo
//! aggregation.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("percentile of empty sample set")]
    EmptySamples,
}

/// Nearest-rank percentile over a sorted slice: the value at index
/// `ceil(q/100 * n) - 1`, clamped to the valid range.
pub fn percentile(sorted: &[f64], q: f64) -> Result<f64, MetricsError> {
    if sorted.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    debug_assert!((0.0..=100.0).contains(&q));
    let n = sorted.len();
    let rank = (q / 100.0 * n as f64).ceil() as isize - 1;
    let idx = rank.clamp(0, n as isize - 1) as usize;
    Ok(sorted[idx])
}

/// Empirical CDF: sorted distinct values with strictly increasing cumulative
/// fractions ending at 1.0.
pub fn cdf_points(samples: &[f64]) -> Vec<(f64, f64)> {
    if samples.is_empty() {
        return Vec::new();
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => points.push((*v, frac)),
        }
    }
    points
}

/// Cross-run mean with 95% normal-approximation confidence half-width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub ci95: f64,
}

/// Aggregates one per-run statistic across Monte Carlo runs.
pub fn aggregate_runs(values: &[f64]) -> Summary {
    assert!(!values.is_empty(), "aggregate of zero runs");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Summary { mean, ci95: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Summary {
        mean,
        ci95: 1.96 * (var / n).sqrt(),
    }
}

/// Per-UE record of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct UeRecord {
    pub ue_id: usize,
    /// Serving gNB; `None` for UEs in outage.
    pub attached_gnb: Option<usize>,
    /// Radio hops donor -> UE on the serving path (access link counts as 1).
    pub hops: u32,
    /// Delivered bytes x 8 / measurement window.
    pub throughput_bps: f64,
    /// Packets dropped for this UE's flow inside the measurement window.
    pub drops: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyStats {
    pub pctl50_us: f64,
    pub pctl95_us: f64,
    pub mean_us: f64,
}

/// RAN latency statistics from raw microsecond samples.
pub fn latency_stats(samples_us: &mut [u64]) -> Option<LatencyStats> {
    if samples_us.is_empty() {
        return None;
    }
    samples_us.sort_unstable();
    let sorted: Vec<f64> = samples_us.iter().map(|&v| v as f64).collect();
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Some(LatencyStats {
        pctl50_us: percentile(&sorted, 50.0).unwrap(),
        pctl95_us: percentile(&sorted, 95.0).unwrap(),
        mean_us: mean,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DashRecord {
    pub ue_id: usize,
    pub stall_count: u64,
    pub mean_stall_s: f64,
    pub total_stall_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HttpRecord {
    pub ue_id: usize,
    pub pages: u64,
    pub mean_page_time_s: f64,
}

/// Everything one run reports.
#[derive(Clone, Debug, Default)]
pub struct RunMetrics {
    pub target_cell: usize,
    pub per_ue: Vec<UeRecord>,
    /// Target-cell RAN latency (delivered_at - donor_ingress_at) over the
    /// measurement window; `None` when no packet was delivered.
    pub latency: Option<LatencyStats>,
    /// Whole-network pooled mean RAN latency over the window, labeled
    /// separately from the target-cell headline statistic.
    pub mean_ran_latency_all_us: Option<f64>,
    pub dash: Vec<DashRecord>,
    pub http: Vec<HttpRecord>,
    /// Mean hop count over attached IAB-nodes (0 without IAB-nodes).
    pub mean_iab_hop_count: f64,
    pub half_duplex_violations: u64,
}

impl RunMetrics {
    pub fn target_ues(&self) -> impl Iterator<Item = &UeRecord> {
        self.per_ue
            .iter()
            .filter(move |u| u.attached_gnb == Some(self.target_cell))
    }

    /// Per-run 5th-percentile throughput over target-cell UEs.
    pub fn pctl5_target_throughput_bps(&self) -> Result<f64, MetricsError> {
        let mut v: Vec<f64> = self.target_ues().map(|u| u.throughput_bps).collect();
        v.sort_by(f64::total_cmp);
        percentile(&v, 5.0)
    }

    pub fn total_target_throughput_bps(&self) -> f64 {
        self.target_ues().map(|u| u.throughput_bps).sum()
    }

    pub fn total_throughput_bps(&self) -> f64 {
        self.per_ue.iter().map(|u| u.throughput_bps).sum()
    }

    /// Pooled mean rebuffering-event duration over target-cell DASH clients;
    /// 0 when they recorded no events.
    pub fn mean_stall_s_target(&self) -> f64 {
        let mut events = 0u64;
        let mut total = 0.0;
        for d in &self.dash {
            if self.is_target_ue(d.ue_id) {
                events += d.stall_count;
                total += d.total_stall_s;
            }
        }
        if events == 0 {
            0.0
        } else {
            total / events as f64
        }
    }

    /// Pooled mean page-load time over target-cell HTTP sessions; `None`
    /// when no page completed.
    pub fn mean_page_time_s_target(&self) -> Option<f64> {
        let mut pages = 0u64;
        let mut total = 0.0;
        for h in &self.http {
            if self.is_target_ue(h.ue_id) {
                pages += h.pages;
                total += h.mean_page_time_s * h.pages as f64;
            }
        }
        (pages > 0).then(|| total / pages as f64)
    }

    fn is_target_ue(&self, ue: usize) -> bool {
        self.per_ue
            .iter()
            .find(|u| u.ue_id == ue)
            .is_some_and(|u| u.attached_gnb == Some(self.target_cell))
    }
}
