use criterion::{black_box, criterion_group, criterion_main, Criterion};

use iab_sim_core::channel::LinkCache;
use iab_sim_core::deployment::{generate, DeploymentKind, ScenarioParams};
use iab_sim_core::scheduler::{build_frame, Bearer, BearerKind, Endpoint, FrameAllocation, FrameConfig};
use iab_sim_core::topology::{form_topology, PolicyConfig};
use iab_sim_core::traffic::CbrConfig;
use iab_sim_core::world::{run_one, RunOutcome};
use iab_sim_core::{ExperimentConfig, RadioConfig, TrafficKind};

fn dense_params() -> ScenarioParams {
    ScenarioParams {
        density_gnb_km2: 45.0,
        donor_fraction: 0.5,
        area_km2: 1.0,
        ue_density_factor: 10.0,
    }
}

fn bench_link_cache(c: &mut Criterion) {
    let scenario = generate(&dense_params(), 3).unwrap();
    let radio = RadioConfig::default();
    c.bench_function("link_cache_build_45gnb", |b| {
        b.iter(|| LinkCache::build(black_box(&scenario), &radio, 3))
    });
}

fn bench_topology(c: &mut Criterion) {
    let scenario = generate(&dense_params(), 3).unwrap();
    let links = LinkCache::build(&scenario, &RadioConfig::default(), 3);
    let policy = PolicyConfig::default();
    c.bench_function("form_topology_45gnb", |b| {
        b.iter(|| form_topology(black_box(&scenario), &links, &policy))
    });
}

fn bench_build_frame(c: &mut Criterion) {
    // A saturated star: donor with 16 access bearers and 4 weighted backhauls.
    let mut bearers = Vec::new();
    for u in 0..16 {
        bearers.push(Bearer {
            id: u,
            tx: 0,
            rx: Endpoint::Ue(u),
            kind: BearerKind::Access,
            weight: 1,
            capacity_bps: 1e9,
        });
    }
    for child in 1..5 {
        bearers.push(Bearer {
            id: 15 + child,
            tx: 0,
            rx: Endpoint::Gnb(child),
            kind: BearerKind::Backhaul,
            weight: 4,
            capacity_bps: 2e9,
        });
    }
    let members: Vec<usize> = (0..bearers.len()).collect();
    let frame = FrameConfig::default();
    c.bench_function("build_frame_saturated_20_bearers", |b| {
        b.iter(|| {
            let mut deficits = vec![0.0; bearers.len()];
            let mut backlog = vec![u64::MAX / 2; bearers.len()];
            let mut alloc = FrameAllocation::empty(frame.n_slots);
            build_frame(
                black_box(&bearers),
                &members,
                &mut deficits,
                &mut backlog,
                &frame,
                5,
                16,
                &mut alloc,
            );
            alloc
        })
    });
}

fn bench_short_run(c: &mut Criterion) {
    let cfg = ExperimentConfig {
        density_gnb_km2: 10.0,
        sim_duration_s: 0.5,
        warmup_s: 0.1,
        traffic: TrafficKind::Cbr,
        cbr: CbrConfig {
            rate_bps: 50e6,
            packet_bytes: 1400,
        },
        ..ExperimentConfig::default()
    };
    let spec = cfg.run_spec(DeploymentKind::Iab, cfg.policy, 0.5, 11).unwrap();
    let mut group = c.benchmark_group("end_to_end");
    group.sample_size(10);
    group.bench_function("half_second_cbr_run_10gnb", |b| {
        b.iter(|| match run_one(black_box(&spec)) {
            RunOutcome::Valid(out) => out.metrics.per_ue.len(),
            RunOutcome::Invalid(_) => 0,
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_link_cache,
    bench_topology,
    bench_build_frame,
    bench_short_run
);
criterion_main!(benches);
