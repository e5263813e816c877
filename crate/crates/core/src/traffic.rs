//! Application models generating downlink load per UE: saturating CBR/UDP,
//! a DASH adaptive-streaming client, the 3GPP-style HTTP page model, and the
//! idealized windowed transport they ride on.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};

use crate::engine::SimTime;
use crate::forwarding::Packet;

/// Client-side request delay standing in for the uplink path.
pub const REQUEST_DELAY: SimTime = SimTime::from_micros(2_000);
/// One-way wired/core/Internet delay, server to donor.
pub const CORE_DELAY: SimTime = SimTime::from_micros(10_000);

// ---------------------------------------------------------------------------
// CBR
// ---------------------------------------------------------------------------

/// Constant-bitrate UDP download.
#[derive(Clone, Copy, Debug)]
pub struct CbrConfig {
    pub rate_bps: f64,
    pub packet_bytes: u32,
}

impl Default for CbrConfig {
    fn default() -> Self {
        CbrConfig {
            rate_bps: 220e6,
            packet_bytes: 1400,
        }
    }
}

/// Deterministic packet arrival process: packet `k` (1-based) is created at
/// `start + floor(k * packet_bits / rate)`. Computing each arrival from the
/// flow start avoids cumulative rounding drift, so the long-run rate is
/// exact.
#[derive(Clone, Debug)]
pub struct CbrStream {
    start: SimTime,
    rate_bps: u64,
    packet_bits: u64,
    pub packet_bytes: u32,
    k: u64,
}

impl CbrStream {
    /// Returns `None` for a zero rate (no packets, ever).
    pub fn new(cfg: &CbrConfig, start: SimTime) -> Option<CbrStream> {
        let rate = cfg.rate_bps.round() as u64;
        (rate > 0).then(|| CbrStream {
            start,
            rate_bps: rate,
            packet_bits: u64::from(cfg.packet_bytes) * 8,
            packet_bytes: cfg.packet_bytes,
            k: 0,
        })
    }

    pub fn creation_time(&self, k: u64) -> SimTime {
        let us = (u128::from(k) * u128::from(self.packet_bits) * 1_000_000)
            / u128::from(self.rate_bps);
        self.start + SimTime::from_micros(us as u64)
    }

    /// Creation time of the next packet without consuming it.
    pub fn peek(&self) -> SimTime {
        self.creation_time(self.k + 1)
    }

    /// Consumes and returns the next packet's creation time.
    pub fn advance(&mut self) -> SimTime {
        self.k += 1;
        self.creation_time(self.k)
    }
}

// ---------------------------------------------------------------------------
// Idealized windowed transport
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct TransportConfig {
    pub window_bytes: u64,
    pub packet_bytes: u32,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            window_bytes: 262_144,
            packet_bytes: 1400,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ObjectSpec {
    id: u32,
    size_bytes: u64,
}

/// Fixed-window backpressure transport: the source keeps at most
/// `window_bytes` in flight, refilled on delivery. Objects are sent
/// back-to-back as one byte stream; per-object completion is signalled by
/// the delivery of the object's last packet.
#[derive(Clone, Debug)]
pub struct TransportStream {
    ue: u32,
    cfg: TransportConfig,
    objects: VecDeque<ObjectSpec>,
    head_released: u64,
    in_flight: u64,
}

impl TransportStream {
    pub fn new(ue: u32, cfg: TransportConfig) -> TransportStream {
        TransportStream {
            ue,
            cfg,
            objects: VecDeque::new(),
            head_released: 0,
            in_flight: 0,
        }
    }

    pub fn push_object(&mut self, id: u32, size_bytes: u64) {
        debug_assert!(size_bytes > 0);
        self.objects.push_back(ObjectSpec { id, size_bytes });
    }

    /// Releases as many packets as the window allows, created at `now`.
    /// The caller schedules their donor arrival one core delay later.
    pub fn release(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        while let Some(head) = self.objects.front() {
            let remaining = head.size_bytes - self.head_released;
            let size = remaining.min(u64::from(self.cfg.packet_bytes)) as u32;
            if self.in_flight + u64::from(size) > self.cfg.window_bytes {
                return;
            }
            out.push(Packet {
                ue: self.ue,
                object: head.id,
                last_of_object: remaining == u64::from(size),
                size_bytes: size,
                created_at: now,
                donor_ingress_at: now + CORE_DELAY,
                delivered_at: None,
            });
            self.in_flight += u64::from(size);
            self.head_released += u64::from(size);
            if self.head_released == head.size_bytes {
                self.objects.pop_front();
                self.head_released = 0;
            }
        }
    }

    /// Frees window on delivery; returns the completed object id when the
    /// delivered packet was its object's last.
    pub fn on_delivered(&mut self, packet: &Packet) -> Option<u32> {
        debug_assert!(self.in_flight >= u64::from(packet.size_bytes));
        self.in_flight -= u64::from(packet.size_bytes);
        packet.last_of_object.then_some(packet.object)
    }

    pub fn in_flight_bytes(&self) -> u64 {
        self.in_flight
    }
}

// ---------------------------------------------------------------------------
// DASH
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct DashConfig {
    /// Available representations, ascending bps.
    pub representations_bps: Vec<f64>,
    pub segment_s: f64,
    pub safety_margin: f64,
    pub ewma_alpha: f64,
    /// Playback starts once this much buffer has accumulated.
    pub startup_buffer_s: f64,
    /// The client stops requesting above this buffer level.
    pub max_buffer_s: f64,
}

impl Default for DashConfig {
    fn default() -> Self {
        DashConfig {
            representations_bps: vec![1e6, 2.5e6, 5e6, 8e6, 16e6, 35e6],
            segment_s: 2.0,
            safety_margin: 0.8,
            ewma_alpha: 0.5,
            startup_buffer_s: 4.0,
            max_buffer_s: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DashState {
    Buffering,
    Playing,
    Stalled,
}

/// Next segment to fetch: the client issues the request at `request_at`
/// (throttled while the buffer is near full).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentRequest {
    pub seq: u32,
    pub size_bytes: u64,
    pub request_at: SimTime,
}

/// Throughput-driven adaptive streaming client.
///
/// Playback drains the buffer in real time (evaluated lazily); hitting zero
/// while playing opens a stall that closes when the next segment completes.
/// Initial buffering before first play is not a stall.
#[derive(Clone, Debug)]
pub struct DashClient {
    cfg: DashConfig,
    pub state: DashState,
    buffer_s: f64,
    last_update: SimTime,
    estimate_bps: Option<f64>,
    stall_started: Option<SimTime>,
    /// Closed rebuffering events as (start, end).
    pub stalls: Vec<(SimTime, SimTime)>,
    requested_at: SimTime,
    pending_bits: f64,
    next_seq: u32,
}

impl DashClient {
    /// Creates the client and its first request (lowest representation),
    /// issued at `start`.
    pub fn new(cfg: DashConfig, start: SimTime) -> (DashClient, SegmentRequest) {
        let lowest = cfg.representations_bps[0];
        let size = (lowest * cfg.segment_s / 8.0).round() as u64;
        let client = DashClient {
            cfg,
            state: DashState::Buffering,
            buffer_s: 0.0,
            last_update: start,
            estimate_bps: None,
            stall_started: None,
            stalls: Vec::new(),
            requested_at: start,
            pending_bits: size as f64 * 8.0,
            next_seq: 1,
        };
        let request = SegmentRequest {
            seq: 0,
            size_bytes: size,
            request_at: start,
        };
        (client, request)
    }

    /// Highest representation sustainable at `safety_margin x` the estimate;
    /// the lowest when none is, or when no estimate exists yet.
    pub fn select_representation(&self) -> f64 {
        let reps = &self.cfg.representations_bps;
        match self.estimate_bps {
            None => reps[0],
            Some(est) => reps
                .iter()
                .rev()
                .find(|&&r| r <= self.cfg.safety_margin * est)
                .copied()
                .unwrap_or(reps[0]),
        }
    }

    pub fn throughput_estimate_bps(&self) -> Option<f64> {
        self.estimate_bps
    }

    pub fn buffer_s(&self) -> f64 {
        self.buffer_s
    }

    fn advance(&mut self, now: SimTime) {
        let dt = (now - self.last_update).as_secs_f64();
        if self.state == DashState::Playing {
            if self.buffer_s >= dt {
                self.buffer_s -= dt;
            } else {
                self.stall_started = Some(SimTime::from_secs_f64(
                    self.last_update.as_secs_f64() + self.buffer_s,
                ));
                self.buffer_s = 0.0;
                self.state = DashState::Stalled;
            }
        }
        self.last_update = now;
    }

    /// A segment download just finished. Updates buffer, state, stall record
    /// and throughput estimate, then plans the next request.
    pub fn on_segment_complete(&mut self, now: SimTime) -> SegmentRequest {
        self.advance(now);
        let download_s = (now - self.requested_at).as_secs_f64().max(1e-6);
        let sample = self.pending_bits / download_s;
        self.estimate_bps = Some(match self.estimate_bps {
            None => sample,
            Some(prev) => self.cfg.ewma_alpha * sample + (1.0 - self.cfg.ewma_alpha) * prev,
        });
        self.buffer_s += self.cfg.segment_s;
        match self.state {
            DashState::Stalled => {
                let start = self.stall_started.take().expect("stalled without start mark");
                self.stalls.push((start, now));
                self.state = DashState::Playing;
            }
            DashState::Buffering => {
                if self.buffer_s >= self.cfg.startup_buffer_s {
                    self.state = DashState::Playing;
                }
            }
            DashState::Playing => {}
        }
        let rep = self.select_representation();
        let size = (rep * self.cfg.segment_s / 8.0).round() as u64;
        let wait_s = (self.buffer_s - (self.cfg.max_buffer_s - self.cfg.segment_s)).max(0.0);
        let request_at = now + SimTime::from_secs_f64(wait_s);
        self.requested_at = request_at;
        self.pending_bits = size as f64 * 8.0;
        let request = SegmentRequest {
            seq: self.next_seq,
            size_bytes: size,
            request_at,
        };
        self.next_seq += 1;
        request
    }

    /// Closes a stall still open at the end of the run. A client whose start
    /// never arrived has nothing to close.
    pub fn finalize(&mut self, end: SimTime) {
        if end < self.last_update {
            return;
        }
        self.advance(end);
        if let Some(start) = self.stall_started.take() {
            self.stalls.push((start, end));
        }
    }
}

// ---------------------------------------------------------------------------
// HTTP page model
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct HttpConfig {
    pub main_mean_bytes: f64,
    pub main_sigma_log: f64,
    pub main_min_bytes: f64,
    pub main_max_bytes: f64,
    pub embedded_mean_bytes: f64,
    pub embedded_sigma_log: f64,
    pub embedded_min_bytes: f64,
    pub embedded_max_bytes: f64,
    pub count_pareto_alpha: f64,
    pub count_pareto_k: f64,
    pub count_pareto_m: f64,
    pub reading_mean_s: f64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            main_mean_bytes: 10_710.0,
            main_sigma_log: 1.37,
            main_min_bytes: 100.0,
            main_max_bytes: 2e6,
            embedded_mean_bytes: 7_758.0,
            embedded_sigma_log: 2.36,
            embedded_min_bytes: 50.0,
            embedded_max_bytes: 2e6,
            count_pareto_alpha: 1.1,
            count_pareto_k: 2.0,
            count_pareto_m: 55.0,
            reading_mean_s: 30.0,
        }
    }
}

/// Truncated lognormal parameterized by its (untruncated) mean and log-space
/// sigma; draws are clamped to the truncation bounds.
fn trunc_lognormal<R: Rng>(rng: &mut R, mean: f64, sigma_log: f64, min: f64, max: f64) -> f64 {
    let mu = mean.ln() - sigma_log * sigma_log / 2.0;
    let d = LogNormal::new(mu, sigma_log).expect("valid lognormal");
    d.sample(rng).clamp(min, max)
}

/// Embedded-object count: truncated Pareto (point mass at the cap), shifted
/// down by k.
fn embedded_count<R: Rng>(rng: &mut R, cfg: &HttpConfig) -> u32 {
    let u: f64 = rng.gen();
    let x = (cfg.count_pareto_k * (1.0 - u).powf(-1.0 / cfg.count_pareto_alpha))
        .min(cfg.count_pareto_m);
    (x.round() - cfg.count_pareto_k) as u32
}

#[derive(Clone, Debug, PartialEq)]
pub struct PageSpec {
    pub main_bytes: u64,
    pub embedded_bytes: Vec<u64>,
}

/// Draws one page: main object size, embedded-object count, embedded sizes.
pub fn http_generate_page<R: Rng>(rng: &mut R, cfg: &HttpConfig) -> PageSpec {
    let main = trunc_lognormal(
        rng,
        cfg.main_mean_bytes,
        cfg.main_sigma_log,
        cfg.main_min_bytes,
        cfg.main_max_bytes,
    )
    .round() as u64;
    let n = embedded_count(rng, cfg);
    let embedded = (0..n)
        .map(|_| {
            trunc_lognormal(
                rng,
                cfg.embedded_mean_bytes,
                cfg.embedded_sigma_log,
                cfg.embedded_min_bytes,
                cfg.embedded_max_bytes,
            )
            .round() as u64
        })
        .collect();
    PageSpec {
        main_bytes: main,
        embedded_bytes: embedded,
    }
}

/// Reading time before the next page request.
pub fn reading_time_s<R: Rng>(rng: &mut R, cfg: &HttpConfig) -> f64 {
    Exp::new(1.0 / cfg.reading_mean_s).expect("valid rate").sample(rng)
}
