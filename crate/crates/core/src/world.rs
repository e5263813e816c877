//! One simulation run: wires deployment, channel, topology, scheduler,
//! forwarding and traffic onto the event engine and collects metrics.
//!
//! Downlink only: uplink requests are a fixed 2 ms control delay, the wired
//! core is a constant 10 ms one-way delay, and links at or above the SNR
//! floor are error-free.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{LinkCache, RadioConfig};
use crate::deployment::{select_target_cell, DeploymentKind, Scenario};
use crate::engine::{Engine, EventSink, SimTime};
use crate::forwarding::{DataPlane, IngressOutcome, Packet, RouteTable};
use crate::metrics::{
    latency_stats, DashRecord, HttpRecord, RunMetrics, UeRecord,
};
use crate::rng::{stream_rng, SALT_TRAFFIC};
use crate::scheduler::{
    build_frame, validate_half_duplex, Bearer, BearerKind, Endpoint, FrameAllocation, FrameConfig,
};
use crate::topology::{
    associate_ues, downstream_ue_count, form_topology, IabTree, PolicyConfig, UeAssociation,
};
use crate::traffic::{
    http_generate_page, reading_time_s, CbrConfig, CbrStream, DashClient, DashConfig, HttpConfig,
    TransportConfig, TransportStream, CORE_DELAY, REQUEST_DELAY,
};

/// Application model driving every UE of a run.
#[derive(Clone, Debug)]
pub enum TrafficModel {
    Cbr(CbrConfig),
    Dash(DashConfig),
    Http(HttpConfig),
}

/// Full specification of one simulation run.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub scenario: Scenario,
    pub kind: DeploymentKind,
    pub policy: PolicyConfig,
    pub radio: RadioConfig,
    pub frame: FrameConfig,
    pub traffic: TrafficModel,
    pub transport: TransportConfig,
    pub buffer_bytes: u64,
    pub duration: SimTime,
    pub warmup: SimTime,
    pub seed: u64,
    /// Re-validate every generated frame against the half-duplex constraint.
    pub check_half_duplex: bool,
    /// Record slot-by-slot frame allocations as plain text.
    pub frame_trace: bool,
    /// Record one CSV row per delivered packet.
    pub packet_trace: bool,
}

/// Why a run (seed) is invalid and must be resampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvalidReason {
    NoGnbs,
    NoAttachedIabNodes,
    EmptyTargetCell,
}

/// Per-UE packet accounting for the conservation invariant.
#[derive(Clone, Debug, Default)]
pub struct ConservationRow {
    pub generated: u64,
    pub arrived_at_donor: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub resident_at_end: u64,
}

impl ConservationRow {
    /// `generated = delivered + dropped + in_flight` with in-flight split
    /// into core-pipe and queued packets.
    pub fn exact(&self) -> bool {
        let in_core = self.generated - self.arrived_at_donor;
        self.generated == self.delivered + self.dropped + self.resident_at_end + in_core
            && self.arrived_at_donor == self.delivered + self.dropped + self.resident_at_end
    }
}

pub struct RunOutput {
    pub metrics: RunMetrics,
    pub conservation: Vec<ConservationRow>,
    pub frame_trace: Option<String>,
    pub packet_trace: Option<String>,
}

pub enum RunOutcome {
    Valid(Box<RunOutput>),
    Invalid(InvalidReason),
}

/// Immutable per-run structures shared by validity checks and the run
/// itself.
pub struct Prepared {
    pub links: LinkCache,
    pub tree: IabTree,
    pub assoc: UeAssociation,
    pub target_cell: usize,
    pub bearers: Vec<Bearer>,
    pub donors: Vec<usize>,
    pub tree_members: Vec<Vec<usize>>,
}

/// Builds links, topology, association, target cell, bearers and routes for
/// the spec's scenario, or reports why the seed is invalid.
pub fn prepare(spec: &RunSpec) -> Result<Prepared, InvalidReason> {
    let links = LinkCache::build(&spec.scenario, &spec.radio, spec.seed);
    prepare_with_links(spec, links)
}

/// Same as [`prepare`] with an externally built link cache (hand-built
/// topologies in tests).
pub fn prepare_with_links(spec: &RunSpec, links: LinkCache) -> Result<Prepared, InvalidReason> {
    let scenario = &spec.scenario;
    if scenario.gnbs.is_empty() {
        return Err(InvalidReason::NoGnbs);
    }
    let tree = form_topology(scenario, &links, &spec.policy);
    let has_iab_nodes = scenario.gnbs.iter().any(|g| !g.is_donor);
    if spec.kind == DeploymentKind::Iab && has_iab_nodes && tree.attach_order.is_empty() {
        return Err(InvalidReason::NoAttachedIabNodes);
    }
    let assoc = associate_ues(scenario, &tree, &links, spec.policy.min_snr_db);
    let target_cell = select_target_cell(scenario, &tree, spec.kind)
        .ok_or(InvalidReason::NoAttachedIabNodes)?;
    if !assoc.serving.contains(&Some(target_cell)) {
        return Err(InvalidReason::EmptyTargetCell);
    }

    // One access bearer per associated UE, one backhaul bearer per tree
    // edge, created donor by donor in BFS order.
    let n_ids = scenario.gnb_id_bound();
    let mut ues_of: Vec<Vec<usize>> = vec![Vec::new(); n_ids];
    for (ue, serving) in assoc.serving.iter().enumerate() {
        if let Some(g) = serving {
            ues_of[*g].push(ue);
        }
    }
    let donors: Vec<usize> = {
        let mut d = scenario.donor_ids();
        d.sort_unstable();
        d
    };
    let mut bearers: Vec<Bearer> = Vec::new();
    let mut tree_members: Vec<Vec<usize>> = Vec::with_capacity(donors.len());
    for &donor in &donors {
        let mut members = Vec::new();
        let mut queue = std::collections::VecDeque::from([donor]);
        while let Some(g) = queue.pop_front() {
            for &ue in &ues_of[g] {
                let id = bearers.len();
                bearers.push(Bearer {
                    id,
                    tx: g,
                    rx: Endpoint::Ue(ue),
                    kind: BearerKind::Access,
                    weight: 1,
                    capacity_bps: links.gnb_ue(g, ue).capacity_bps,
                });
                members.push(id);
            }
            for &child in &tree.children[g] {
                let id = bearers.len();
                bearers.push(Bearer {
                    id,
                    tx: g,
                    rx: Endpoint::Gnb(child),
                    kind: BearerKind::Backhaul,
                    weight: downstream_ue_count(&tree, &assoc, child).max(1) as u32,
                    capacity_bps: links.gnb_gnb(g, child).capacity_bps,
                });
                members.push(id);
                queue.push_back(child);
            }
        }
        tree_members.push(members);
    }
    Ok(Prepared {
        links,
        tree,
        assoc,
        target_cell,
        bearers,
        donors,
        tree_members,
    })
}

enum Ev {
    FrameStart,
    SlotStart,
    CoreArrival(Packet),
    DashServerStart { ue: u32, object: u32, size: u64 },
    HttpServerMain { ue: u32 },
    HttpServerEmbedded { ue: u32 },
}

#[allow(clippy::large_enum_variant)]
enum UeApp {
    Idle,
    Cbr,
    Dash(DashClient),
    Http(HttpState),
}

struct HttpState {
    rng: ChaCha8Rng,
    first_request_at: SimTime,
    embedded_sizes: Vec<u64>,
    last_object: u32,
    /// (completed_at, page_time_s)
    pages: Vec<(SimTime, f64)>,
}

/// Open-loop arrival pump: CBR packet arrival times do not depend on network
/// state, so they are materialized lazily at slot boundaries (with exact
/// per-packet timestamps) instead of one engine event per packet.
struct CbrPump {
    heap: BinaryHeap<Reverse<(u64, u32)>>,
    streams: Vec<Option<CbrStream>>,
}

struct World {
    frame: FrameConfig,
    http_cfg: HttpConfig,
    warmup: SimTime,
    n_gnb_ids: usize,
    n_ues: usize,

    bearers: Vec<Bearer>,
    tree_members: Vec<Vec<usize>>,
    deficits: Vec<f64>,
    backlog: Vec<u64>,
    allocation: FrameAllocation,
    slot_index: usize,
    frame_index: u64,
    plane: DataPlane,

    apps: Vec<UeApp>,
    transports: Vec<Option<TransportStream>>,
    pump: Option<CbrPump>,

    is_target_ue: Vec<bool>,
    hops_of_ue: Vec<u32>,
    delivered_window_bytes: Vec<u64>,
    drops_window: Vec<u64>,
    latency_samples_us: Vec<u64>,
    latency_sum_all_us: u64,
    latency_count_all: u64,
    conservation: Vec<ConservationRow>,
    hd_violations: u64,
    check_half_duplex: bool,
    frame_trace: Option<String>,
    packet_trace: Option<String>,

    scratch_delivered: Vec<Packet>,
    scratch_dropped: Vec<Packet>,
    scratch_released: Vec<Packet>,
    scratch_slot: Vec<usize>,
}

impl World {
    fn in_window(&self, t: SimTime) -> bool {
        t > self.warmup
    }

    fn handle_frame_start(&mut self, engine: &mut Engine<Ev>, now: SimTime) {
        self.slot_index = 0;
        for slot in &mut self.allocation.slots {
            slot.clear();
        }
        for members in &self.tree_members {
            for &b in members {
                self.backlog[b] = self.plane.queues[b].demand_bytes();
            }
            build_frame(
                &self.bearers,
                members,
                &mut self.deficits,
                &mut self.backlog,
                &self.frame,
                self.n_gnb_ids,
                self.n_ues,
                &mut self.allocation,
            );
        }
        if self.check_half_duplex {
            self.hd_violations +=
                validate_half_duplex(&self.allocation, &self.bearers).len() as u64;
        }
        if let Some(trace) = &mut self.frame_trace {
            let _ = writeln!(trace, "frame {}", self.frame_index);
            for (s, active) in self.allocation.slots.iter().enumerate() {
                if active.is_empty() {
                    continue;
                }
                let _ = write!(trace, "slot {s}:");
                for &b in active {
                    let bearer = &self.bearers[b];
                    match bearer.rx {
                        Endpoint::Ue(u) => {
                            let _ = write!(trace, " {}->ue{}", bearer.tx, u);
                        }
                        Endpoint::Gnb(g) => {
                            let _ = write!(trace, " {}->{}", bearer.tx, g);
                        }
                    }
                }
                let _ = writeln!(trace);
            }
        }
        self.frame_index += 1;
        engine.schedule(now + self.frame.frame_duration(), Ev::FrameStart);
    }

    fn handle_slot_start(&mut self, engine: &mut Engine<Ev>, now: SimTime) {
        self.pump_cbr(now);
        debug_assert!(self.slot_index < self.frame.n_slots);
        self.scratch_slot.clear();
        self.scratch_slot
            .extend_from_slice(&self.allocation.slots[self.slot_index]);
        let mut delivered = std::mem::take(&mut self.scratch_delivered);
        let mut dropped = std::mem::take(&mut self.scratch_dropped);
        for i in 0..self.scratch_slot.len() {
            let b = self.scratch_slot[i];
            self.plane.serve_slot(
                &self.bearers[b],
                self.frame.slot,
                now,
                &mut delivered,
                &mut dropped,
            );
        }
        for p in dropped.drain(..) {
            let ue = p.ue as usize;
            self.conservation[ue].dropped += 1;
            if now > self.warmup {
                self.drops_window[ue] += 1;
            }
        }
        for p in delivered.drain(..) {
            self.on_delivered(engine, now, p);
        }
        self.scratch_delivered = delivered;
        self.scratch_dropped = dropped;
        self.slot_index += 1;
        engine.schedule(now + self.frame.slot, Ev::SlotStart);
    }

    fn pump_cbr(&mut self, now: SimTime) {
        let Some(pump) = &mut self.pump else { return };
        while let Some(&Reverse((t_us, ue))) = pump.heap.peek() {
            if t_us > now.micros() {
                break;
            }
            pump.heap.pop();
            let stream = pump.streams[ue as usize].as_mut().expect("pumped idle ue");
            let arrival = SimTime::from_micros(t_us);
            let packet = Packet {
                ue,
                object: 0,
                last_of_object: false,
                size_bytes: stream.packet_bytes,
                created_at: arrival - CORE_DELAY,
                donor_ingress_at: arrival,
                delivered_at: None,
            };
            let row = &mut self.conservation[ue as usize];
            row.generated += 1;
            row.arrived_at_donor += 1;
            match self.plane.ingress_at_donor(packet) {
                IngressOutcome::Dropped => {
                    row.dropped += 1;
                    if arrival > self.warmup {
                        self.drops_window[ue as usize] += 1;
                    }
                }
                IngressOutcome::Queued | IngressOutcome::Parked => {}
            }
            let next = stream.advance() + CORE_DELAY;
            pump.heap.push(Reverse((next.micros(), ue)));
        }
    }

    fn on_delivered(&mut self, engine: &mut Engine<Ev>, now: SimTime, packet: Packet) {
        let ue = packet.ue as usize;
        self.conservation[ue].delivered += 1;
        if self.in_window(now) {
            self.delivered_window_bytes[ue] += u64::from(packet.size_bytes);
            let latency_us = (now - packet.donor_ingress_at).micros();
            self.latency_sum_all_us += latency_us;
            self.latency_count_all += 1;
            if self.is_target_ue[ue] {
                self.latency_samples_us.push(latency_us);
            }
        }
        if let Some(trace) = &mut self.packet_trace {
            let _ = writeln!(
                trace,
                "{},{},{},{},{}",
                ue,
                packet.created_at.micros(),
                packet.donor_ingress_at.micros(),
                now.micros(),
                self.hops_of_ue[ue]
            );
        }
        let completed = match &mut self.transports[ue] {
            Some(t) => t.on_delivered(&packet),
            None => None,
        };
        if let Some(object) = completed {
            match &mut self.apps[ue] {
                UeApp::Dash(client) => {
                    let req = client.on_segment_complete(now);
                    engine.schedule(
                        req.request_at + REQUEST_DELAY,
                        Ev::DashServerStart {
                            ue: packet.ue,
                            object: req.seq,
                            size: req.size_bytes,
                        },
                    );
                }
                UeApp::Http(state) => {
                    if object == state.last_object {
                        let page_time = (now - state.first_request_at).as_secs_f64();
                        state.pages.push((now, page_time));
                        let reading = reading_time_s(&mut state.rng, &self.http_cfg);
                        let next_at = now + SimTime::from_secs_f64(reading);
                        state.first_request_at = next_at;
                        engine.schedule(next_at + REQUEST_DELAY, Ev::HttpServerMain { ue: packet.ue });
                    } else if object == 0 {
                        engine.schedule(now + REQUEST_DELAY, Ev::HttpServerEmbedded { ue: packet.ue });
                    }
                }
                UeApp::Cbr | UeApp::Idle => {}
            }
        }
        if self.transports[ue].is_some() {
            self.release_transport(engine, now, ue);
        }
    }

    fn release_transport(&mut self, engine: &mut Engine<Ev>, now: SimTime, ue: usize) {
        let mut released = std::mem::take(&mut self.scratch_released);
        if let Some(t) = &mut self.transports[ue] {
            t.release(now, &mut released);
        }
        for p in released.drain(..) {
            self.conservation[ue].generated += 1;
            engine.schedule(p.donor_ingress_at, Ev::CoreArrival(p));
        }
        self.scratch_released = released;
    }

    fn handle_core_arrival(&mut self, now: SimTime, packet: Packet) {
        let ue = packet.ue as usize;
        self.conservation[ue].arrived_at_donor += 1;
        match self.plane.ingress_at_donor(packet) {
            IngressOutcome::Dropped => {
                // Unroutable (outage) only; windowed ingress never drops.
                self.conservation[ue].dropped += 1;
                if now > self.warmup {
                    self.drops_window[ue] += 1;
                }
            }
            IngressOutcome::Queued | IngressOutcome::Parked => {}
        }
    }

    fn handle_dash_server_start(
        &mut self,
        engine: &mut Engine<Ev>,
        now: SimTime,
        ue: u32,
        object: u32,
        size: u64,
    ) {
        if let Some(t) = &mut self.transports[ue as usize] {
            t.push_object(object, size);
        }
        self.release_transport(engine, now, ue as usize);
    }

    fn handle_http_server_main(&mut self, engine: &mut Engine<Ev>, now: SimTime, ue: u32) {
        let UeApp::Http(state) = &mut self.apps[ue as usize] else {
            return;
        };
        let page = http_generate_page(&mut state.rng, &self.http_cfg);
        state.last_object = page.embedded_bytes.len() as u32;
        state.embedded_sizes = page.embedded_bytes;
        if let Some(t) = &mut self.transports[ue as usize] {
            t.push_object(0, page.main_bytes);
        }
        self.release_transport(engine, now, ue as usize);
    }

    fn handle_http_server_embedded(&mut self, engine: &mut Engine<Ev>, now: SimTime, ue: u32) {
        let UeApp::Http(state) = &mut self.apps[ue as usize] else {
            return;
        };
        let sizes = state.embedded_sizes.clone();
        if let Some(t) = &mut self.transports[ue as usize] {
            for (i, size) in sizes.iter().enumerate() {
                t.push_object(i as u32 + 1, *size);
            }
        }
        self.release_transport(engine, now, ue as usize);
    }
}

impl EventSink<Ev> for World {
    fn handle(&mut self, engine: &mut Engine<Ev>, at: SimTime, event: Ev) {
        match event {
            Ev::FrameStart => self.handle_frame_start(engine, at),
            Ev::SlotStart => self.handle_slot_start(engine, at),
            Ev::CoreArrival(p) => self.handle_core_arrival(at, p),
            Ev::DashServerStart { ue, object, size } => {
                self.handle_dash_server_start(engine, at, ue, object, size)
            }
            Ev::HttpServerMain { ue } => self.handle_http_server_main(engine, at, ue),
            Ev::HttpServerEmbedded { ue } => self.handle_http_server_embedded(engine, at, ue),
        }
    }
}

/// Runs one simulation to completion.
pub fn run_one(spec: &RunSpec) -> RunOutcome {
    match prepare(spec) {
        Ok(p) => RunOutcome::Valid(Box::new(run_prepared(spec, p))),
        Err(reason) => RunOutcome::Invalid(reason),
    }
}

/// Runs one simulation over an externally prepared state (e.g. hand-built
/// link states).
pub fn run_with_links(spec: &RunSpec, links: LinkCache) -> RunOutcome {
    match prepare_with_links(spec, links) {
        Ok(p) => RunOutcome::Valid(Box::new(run_prepared(spec, p))),
        Err(reason) => RunOutcome::Invalid(reason),
    }
}

fn run_prepared(spec: &RunSpec, prepared: Prepared) -> RunOutput {
    let Prepared {
        links: _links,
        tree,
        assoc,
        target_cell,
        bearers,
        donors: _,
        tree_members,
    } = prepared;
    let scenario = &spec.scenario;
    let n_gnb_ids = scenario.gnb_id_bound();
    let n_ues = scenario.ues.len();
    let routes = RouteTable::build(&tree, &assoc, &bearers, n_gnb_ids);
    let windowed = matches!(spec.traffic, TrafficModel::Dash(_) | TrafficModel::Http(_));
    let plane = DataPlane::new(bearers.len(), spec.buffer_bytes, routes, windowed);

    let mut is_target_ue = vec![false; n_ues];
    let mut hops_of_ue = vec![0u32; n_ues];
    for (ue, serving) in assoc.serving.iter().enumerate() {
        if let Some(g) = serving {
            is_target_ue[ue] = *g == target_cell;
            hops_of_ue[ue] = tree.hop_count[*g].expect("serving gNB attached") + 1;
        }
    }

    let n_bearers = bearers.len();
    let mut world = World {
        frame: spec.frame,
        http_cfg: match &spec.traffic {
            TrafficModel::Http(cfg) => *cfg,
            _ => HttpConfig::default(),
        },
        warmup: spec.warmup,
        n_gnb_ids,
        n_ues,
        bearers,
        tree_members,
        deficits: vec![0.0; n_bearers],
        backlog: vec![0; n_bearers],
        allocation: FrameAllocation::empty(spec.frame.n_slots),
        slot_index: 0,
        frame_index: 0,
        plane,
        apps: Vec::with_capacity(n_ues),
        transports: (0..n_ues).map(|_| None).collect(),
        pump: None,
        is_target_ue,
        hops_of_ue,
        delivered_window_bytes: vec![0; n_ues],
        drops_window: vec![0; n_ues],
        latency_samples_us: Vec::new(),
        latency_sum_all_us: 0,
        latency_count_all: 0,
        conservation: vec![ConservationRow::default(); n_ues],
        hd_violations: 0,
        check_half_duplex: spec.check_half_duplex,
        frame_trace: spec.frame_trace.then(String::new),
        packet_trace: spec
            .packet_trace
            .then(|| String::from("flow,created_us,donor_ingress_us,delivered_us,hops\n")),
        scratch_delivered: Vec::with_capacity(64),
        scratch_dropped: Vec::with_capacity(16),
        scratch_released: Vec::with_capacity(256),
        scratch_slot: Vec::with_capacity(64),
    };

    let mut engine: Engine<Ev> = Engine::new();
    engine.schedule(SimTime::ZERO, Ev::FrameStart);
    engine.schedule(SimTime::ZERO, Ev::SlotStart);

    // Per-UE traffic, keyed streams so paired scenario variants see the same
    // draws. UEs in outage stay idle.
    match &spec.traffic {
        TrafficModel::Cbr(cfg) => {
            let mut pump = CbrPump {
                heap: BinaryHeap::with_capacity(n_ues),
                streams: (0..n_ues).map(|_| None).collect(),
            };
            for ue in 0..n_ues {
                if assoc.serving[ue].is_none() {
                    world.apps.push(UeApp::Idle);
                    continue;
                }
                let mut rng = stream_rng(spec.seed, &[SALT_TRAFFIC, ue as u64]);
                let Some(stream) = CbrStream::new(cfg, SimTime::ZERO) else {
                    world.apps.push(UeApp::Idle);
                    continue;
                };
                let interval_us = (stream.creation_time(1) - stream.creation_time(0)).micros().max(1);
                let start = SimTime::from_micros(rng.gen_range(0..interval_us));
                let mut stream = CbrStream::new(cfg, start).expect("nonzero rate");
                let first = stream.advance() + CORE_DELAY;
                pump.heap.push(Reverse((first.micros(), ue as u32)));
                pump.streams[ue] = Some(stream);
                world.apps.push(UeApp::Cbr);
            }
            world.pump = Some(pump);
        }
        TrafficModel::Dash(cfg) => {
            let jitter_us = spec.duration.micros().clamp(1, 1_000_000);
            for ue in 0..n_ues {
                if assoc.serving[ue].is_none() {
                    world.apps.push(UeApp::Idle);
                    continue;
                }
                let mut rng = stream_rng(spec.seed, &[SALT_TRAFFIC, ue as u64]);
                let start = SimTime::from_micros(rng.gen_range(0..jitter_us));
                let (client, req) = DashClient::new(cfg.clone(), start);
                engine.schedule(
                    req.request_at + REQUEST_DELAY,
                    Ev::DashServerStart {
                        ue: ue as u32,
                        object: req.seq,
                        size: req.size_bytes,
                    },
                );
                world.apps.push(UeApp::Dash(client));
                world.transports[ue] = Some(TransportStream::new(ue as u32, spec.transport));
            }
        }
        TrafficModel::Http(_) => {
            let jitter_us = spec.duration.micros().clamp(1, 1_000_000);
            for ue in 0..n_ues {
                if assoc.serving[ue].is_none() {
                    world.apps.push(UeApp::Idle);
                    continue;
                }
                let mut rng = stream_rng(spec.seed, &[SALT_TRAFFIC, ue as u64]);
                let start = SimTime::from_micros(rng.gen_range(0..jitter_us));
                engine.schedule(start + REQUEST_DELAY, Ev::HttpServerMain { ue: ue as u32 });
                world.apps.push(UeApp::Http(HttpState {
                    rng,
                    first_request_at: start,
                    embedded_sizes: Vec::new(),
                    last_object: 0,
                    pages: Vec::new(),
                }));
                world.transports[ue] = Some(TransportStream::new(ue as u32, spec.transport));
            }
        }
    }

    engine.run_until(spec.duration, &mut world);

    // Wrap up: close open stalls, clip per-event records to the measurement
    // window, assemble per-UE records.
    let window_s = (spec.duration - spec.warmup).as_secs_f64();
    let mut metrics = RunMetrics {
        target_cell,
        mean_iab_hop_count: tree.mean_iab_hop_count(),
        half_duplex_violations: world.hd_violations,
        ..Default::default()
    };
    for ue in 0..n_ues {
        metrics.per_ue.push(UeRecord {
            ue_id: ue,
            attached_gnb: assoc.serving[ue],
            hops: world.hops_of_ue[ue],
            throughput_bps: world.delivered_window_bytes[ue] as f64 * 8.0 / window_s,
            drops: world.drops_window[ue],
        });
    }
    metrics.latency = latency_stats(&mut world.latency_samples_us);
    metrics.mean_ran_latency_all_us = (world.latency_count_all > 0)
        .then(|| world.latency_sum_all_us as f64 / world.latency_count_all as f64);
    for (ue, app) in world.apps.iter_mut().enumerate() {
        match app {
            UeApp::Dash(client) => {
                client.finalize(spec.duration);
                let mut count = 0u64;
                let mut total = 0.0;
                for &(s, e) in &client.stalls {
                    let start = s.max(spec.warmup);
                    let end = e.min(spec.duration);
                    if end > start {
                        count += 1;
                        total += (end - start).as_secs_f64();
                    }
                }
                metrics.dash.push(DashRecord {
                    ue_id: ue,
                    stall_count: count,
                    mean_stall_s: if count == 0 { 0.0 } else { total / count as f64 },
                    total_stall_s: total,
                });
            }
            UeApp::Http(state) => {
                let times: Vec<f64> = state
                    .pages
                    .iter()
                    .filter(|(done, _)| *done > spec.warmup)
                    .map(|(_, t)| *t)
                    .collect();
                metrics.http.push(HttpRecord {
                    ue_id: ue,
                    pages: times.len() as u64,
                    mean_page_time_s: if times.is_empty() {
                        0.0
                    } else {
                        times.iter().sum::<f64>() / times.len() as f64
                    },
                });
            }
            UeApp::Cbr | UeApp::Idle => {}
        }
    }

    let resident = world.plane.resident_per_ue(n_ues);
    for (ue, row) in world.conservation.iter_mut().enumerate() {
        row.resident_at_end = resident[ue];
    }

    RunOutput {
        metrics,
        conservation: world.conservation,
        frame_trace: world.frame_trace,
        packet_trace: world.packet_trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{LinkCache, LinkState};
    use crate::deployment::{GnbSite, UeSite, GNB_HEIGHT_M, UE_HEIGHT_M};
    use crate::topology::PolicyKind;

    fn link(snr: f64, cap: f64) -> LinkState {
        LinkState {
            distance_m: 30.0,
            los: true,
            shadowing_db: 0.0,
            pathloss_db: 90.0,
            snr_db: snr,
            capacity_bps: cap,
        }
    }

    fn chain_spec(traffic: TrafficModel) -> (RunSpec, LinkCache) {
        let scenario = Scenario {
            area_km2: 1.0,
            gnbs: vec![
                GnbSite {
                    id: 0,
                    pos: (0.0, 0.0),
                    height_m: GNB_HEIGHT_M,
                    is_donor: true,
                },
                GnbSite {
                    id: 1,
                    pos: (100.0, 0.0),
                    height_m: GNB_HEIGHT_M,
                    is_donor: false,
                },
            ],
            ues: vec![UeSite {
                id: 0,
                pos: (110.0, 0.0),
                height_m: UE_HEIGHT_M,
            }],
            rng_seed: 1,
        };
        let cap = 1e9;
        let links = LinkCache::from_explicit(
            2,
            1,
            vec![(0, 1, link(30.0, cap))],
            vec![(0, 0, link(-2.0, cap)), (1, 0, link(25.0, cap))],
        );
        let spec = RunSpec {
            scenario,
            kind: DeploymentKind::Iab,
            policy: PolicyConfig {
                kind: PolicyKind::Hqf,
                beta_db_per_hop: 0.0,
                min_snr_db: -5.0,
            },
            radio: RadioConfig::default(),
            frame: FrameConfig::default(),
            traffic,
            transport: TransportConfig::default(),
            buffer_bytes: 5_000_000,
            duration: SimTime::from_secs(2),
            warmup: SimTime::from_millis(500),
            seed: 1,
            check_half_duplex: true,
            frame_trace: false,
            packet_trace: false,
        };
        (spec, links)
    }

    #[test]
    fn saturated_chain_goodput_is_half_capacity() {
        let (spec, links) = chain_spec(TrafficModel::Cbr(CbrConfig {
            rate_bps: 2e9,
            packet_bytes: 1400,
        }));
        let RunOutcome::Valid(out) = run_with_links(&spec, links) else {
            panic!("chain run invalid");
        };
        let tput = out.metrics.per_ue[0].throughput_bps;
        let expected = 1e9 / 2.0;
        assert!(
            (tput - expected).abs() <= expected * 0.05,
            "goodput {tput} vs {expected}"
        );
        assert_eq!(out.metrics.half_duplex_violations, 0);
        assert!(out.conservation.iter().all(|c| c.exact()));
    }

    #[test]
    fn conservation_holds_for_windowed_traffic() {
        let (spec, links) = chain_spec(TrafficModel::Dash(DashConfig::default()));
        let RunOutcome::Valid(out) = run_with_links(&spec, links) else {
            panic!("chain run invalid");
        };
        assert!(out.conservation.iter().all(|c| c.exact()));
        // Backpressure property: windowed flows never drop.
        assert!(out.conservation.iter().all(|c| c.dropped == 0));
        assert_eq!(out.metrics.per_ue[0].drops, 0);
    }

    #[test]
    fn ran_latency_at_least_transmission_time() {
        let (spec, links) = chain_spec(TrafficModel::Cbr(CbrConfig {
            rate_bps: 50e6,
            packet_bytes: 1400,
        }));
        let RunOutcome::Valid(out) = run_with_links(&spec, links) else {
            panic!("chain run invalid");
        };
        // Two hops at 1 Gbps: at least 2 x 1400 x 8 / 1e9 = 22.4 us.
        let lat = out.metrics.latency.expect("delivered packets");
        assert!(lat.pctl50_us >= 22.0, "p50 {}", lat.pctl50_us);
    }

    #[test]
    fn reruns_are_identical() {
        let (spec, links) = chain_spec(TrafficModel::Dash(DashConfig::default()));
        let RunOutcome::Valid(a) = run_with_links(&spec, links) else {
            panic!();
        };
        let (spec2, links2) = chain_spec(TrafficModel::Dash(DashConfig::default()));
        let RunOutcome::Valid(b) = run_with_links(&spec2, links2) else {
            panic!();
        };
        assert_eq!(a.metrics.per_ue, b.metrics.per_ue);
        assert_eq!(a.metrics.dash, b.metrics.dash);
    }

    #[test]
    fn invalid_when_no_iab_node_attaches() {
        let (mut spec, _) = chain_spec(TrafficModel::Cbr(CbrConfig::default()));
        let links = LinkCache::from_explicit(
            2,
            1,
            vec![(0, 1, link(-20.0, 1e9))],
            vec![(0, 0, link(-2.0, 1e9)), (1, 0, link(25.0, 1e9))],
        );
        spec.kind = DeploymentKind::Iab;
        match run_with_links(&spec, links) {
            RunOutcome::Invalid(InvalidReason::NoAttachedIabNodes) => {}
            _ => panic!("expected invalid run"),
        }
    }

    #[test]
    fn empty_target_cell_is_invalid() {
        let (mut spec, _) = chain_spec(TrafficModel::Cbr(CbrConfig::default()));
        // UE hears only the donor; the target (first-attached node 1) is empty.
        let links = LinkCache::from_explicit(
            2,
            1,
            vec![(0, 1, link(30.0, 1e9))],
            vec![(0, 0, link(20.0, 1e9)), (1, 0, link(-30.0, 1e9))],
        );
        spec.kind = DeploymentKind::Iab;
        match run_with_links(&spec, links) {
            RunOutcome::Invalid(InvalidReason::EmptyTargetCell) => {}
            _ => panic!("expected invalid run"),
        }
    }
}
