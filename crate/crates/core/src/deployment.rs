//! Scenario generation: gNB and UE placement via a Poisson point process,
//! donor designation, deployment variants, and target-cell selection.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::rng::{self, SALT_DEPLOYMENT};
use crate::topology::IabTree;

pub const GNB_HEIGHT_M: f64 = 10.0;
pub const UE_HEIGHT_M: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum DeploymentError {
    #[error("donor fraction must be in (0, 1], got {0}")]
    InvalidDonorFraction(f64),
    #[error("cannot designate donors with no gNBs")]
    NoGnbs,
    #[error("scenario parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// A base-station site. `id` is the deployment order and never changes, even
/// when a deployment variant drops other sites.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GnbSite {
    pub id: usize,
    pub pos: (f64, f64),
    pub height_m: f64,
    pub is_donor: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UeSite {
    pub id: usize,
    pub pos: (f64, f64),
    pub height_m: f64,
}

/// The deployed world: gNB sites, UE sites, geometry and the seed that
/// produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub area_km2: f64,
    pub gnbs: Vec<GnbSite>,
    pub ues: Vec<UeSite>,
    pub rng_seed: u64,
}

impl Scenario {
    /// Upper bound (exclusive) on gNB ids present in this scenario. Variants
    /// that drop sites keep the original id space, so dense per-id vectors
    /// are sized with this.
    pub fn gnb_id_bound(&self) -> usize {
        self.gnbs.iter().map(|g| g.id + 1).max().unwrap_or(0)
    }

    pub fn donor_ids(&self) -> Vec<usize> {
        self.gnbs.iter().filter(|g| g.is_donor).map(|g| g.id).collect()
    }
}

/// Which of the three deployments a run realizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeploymentKind {
    AllWired,
    Iab,
    OnlyDonors,
}

impl DeploymentKind {
    pub fn label(self) -> &'static str {
        match self {
            DeploymentKind::AllWired => "all-wired",
            DeploymentKind::Iab => "iab",
            DeploymentKind::OnlyDonors => "only-donors",
        }
    }
}

/// Draws a Poisson(density * area) count of positions, i.i.d. uniform over a
/// square of `area_km2`.
pub fn sample_ppp<R: Rng>(density_per_km2: f64, area_km2: f64, rng: &mut R) -> Vec<(f64, f64)> {
    assert!(density_per_km2 >= 0.0 && area_km2 > 0.0);
    let mean = density_per_km2 * area_km2;
    let count = if mean > 0.0 {
        Poisson::new(mean).expect("valid Poisson mean").sample(rng) as usize
    } else {
        0
    };
    let side_m = (area_km2).sqrt() * 1000.0;
    (0..count)
        .map(|_| (rng.gen_range(0.0..side_m), rng.gen_range(0.0..side_m)))
        .collect()
}

/// Marks exactly `max(1, round(p * N))` gNBs as donors, chosen uniformly
/// without replacement.
pub fn designate_donors<R: Rng>(
    gnbs: &mut [GnbSite],
    p: f64,
    rng: &mut R,
) -> Result<(), DeploymentError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(DeploymentError::InvalidDonorFraction(p));
    }
    let n = gnbs.len();
    if n == 0 {
        return Err(DeploymentError::NoGnbs);
    }
    let donors = ((p * n as f64).round() as usize).clamp(1, n);
    // Partial Fisher-Yates over the id range; selection order is irrelevant,
    // only the chosen set matters.
    let mut ids: Vec<usize> = (0..n).collect();
    for i in 0..donors {
        let j = rng.gen_range(i..n);
        ids.swap(i, j);
    }
    for g in gnbs.iter_mut() {
        g.is_donor = false;
    }
    for &i in &ids[..donors] {
        gnbs[i].is_donor = true;
    }
    Ok(())
}

/// Generation parameters for one scenario draw.
#[derive(Clone, Copy, Debug)]
pub struct ScenarioParams {
    pub density_gnb_km2: f64,
    pub donor_fraction: f64,
    pub area_km2: f64,
    pub ue_density_factor: f64,
}

/// Draws the full scenario for `seed`: gNB PPP, UE PPP (density
/// `ue_density_factor * density_gnb_km2`), donor designation.
///
/// Returns an error when the draw yields zero gNBs; callers treat that seed
/// as invalid and move to the next one.
pub fn generate(params: &ScenarioParams, seed: u64) -> Result<Scenario, DeploymentError> {
    let mut rng = rng::stream_rng(seed, &[SALT_DEPLOYMENT]);
    let gnb_pos = sample_ppp(params.density_gnb_km2, params.area_km2, &mut rng);
    let ue_pos = sample_ppp(
        params.density_gnb_km2 * params.ue_density_factor,
        params.area_km2,
        &mut rng,
    );
    let mut gnbs: Vec<GnbSite> = gnb_pos
        .into_iter()
        .enumerate()
        .map(|(id, pos)| GnbSite {
            id,
            pos,
            height_m: GNB_HEIGHT_M,
            is_donor: false,
        })
        .collect();
    designate_donors(&mut gnbs, params.donor_fraction, &mut rng)?;
    let ues = ue_pos
        .into_iter()
        .enumerate()
        .map(|(id, pos)| UeSite {
            id,
            pos,
            height_m: UE_HEIGHT_M,
        })
        .collect();
    Ok(Scenario {
        area_km2: params.area_km2,
        gnbs,
        ues,
        rng_seed: seed,
    })
}

/// Realizes a deployment variant from a base scenario draw.
///
/// All variants keep identical gNB/UE coordinates and ids, which is what
/// makes paired comparisons across scenarios meaningful:
/// * all-wired: every gNB becomes a donor,
/// * IAB: the draw as-is,
/// * only-donors: non-donor sites are discarded (original ids retained).
pub fn realize(base: &Scenario, kind: DeploymentKind) -> Scenario {
    let mut s = base.clone();
    match kind {
        DeploymentKind::AllWired => {
            for g in &mut s.gnbs {
                g.is_donor = true;
            }
        }
        DeploymentKind::Iab => {}
        DeploymentKind::OnlyDonors => {
            s.gnbs.retain(|g| g.is_donor);
        }
    }
    s
}

/// Picks the measurement cell.
///
/// * all-wired: the first gNB deployed (id 0);
/// * IAB: the first IAB-node that performed initial access (the head of the
///   attach order); with zero IAB-nodes deployed the scenario degenerates to
///   all-wired and gNB 0 is used;
/// * only-donors: the first deployed donor (lowest donor id).
///
/// Returns `None` for an IAB scenario in which IAB-nodes exist but none
/// attached; such a run is invalid and gets resampled with the next seed.
pub fn select_target_cell(
    scenario: &Scenario,
    tree: &IabTree,
    kind: DeploymentKind,
) -> Option<usize> {
    match kind {
        DeploymentKind::AllWired => scenario.gnbs.first().map(|g| g.id),
        DeploymentKind::OnlyDonors => {
            scenario.gnbs.iter().filter(|g| g.is_donor).map(|g| g.id).min()
        }
        DeploymentKind::Iab => {
            let has_iab_nodes = scenario.gnbs.iter().any(|g| !g.is_donor);
            if !has_iab_nodes {
                return scenario.gnbs.first().map(|g| g.id);
            }
            tree.attach_order.first().copied()
        }
    }
}

/// Serializes a scenario as a versioned plain-text record, one entity per
/// line, for reproducibility audits.
pub fn dump(scenario: &Scenario) -> String {
    let mut out = String::new();
    out.push_str("iab-scenario v1\n");
    out.push_str(&format!("area_km2 {}\n", scenario.area_km2));
    out.push_str(&format!("seed {}\n", scenario.rng_seed));
    for g in &scenario.gnbs {
        out.push_str(&format!(
            "gnb {} {} {} {} {}\n",
            g.id,
            g.pos.0,
            g.pos.1,
            g.height_m,
            if g.is_donor { 1 } else { 0 }
        ));
    }
    for u in &scenario.ues {
        out.push_str(&format!("ue {} {} {} {}\n", u.id, u.pos.0, u.pos.1, u.height_m));
    }
    out
}

/// Parses the plain-text record produced by [`dump`].
pub fn parse(text: &str) -> Result<Scenario, DeploymentError> {
    let err = |line: usize, reason: &str| DeploymentError::Parse {
        line,
        reason: reason.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty input"))?;
    if header.trim() != "iab-scenario v1" {
        return Err(err(1, "unknown header or version"));
    }
    let mut scenario = Scenario {
        area_km2: 0.0,
        gnbs: Vec::new(),
        ues: Vec::new(),
        rng_seed: 0,
    };
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let kind = parts.next().unwrap();
        let next_f64 = |parts: &mut std::str::SplitWhitespace| -> Result<f64, DeploymentError> {
            parts
                .next()
                .ok_or_else(|| err(line_no, "missing field"))?
                .parse()
                .map_err(|_| err(line_no, "bad number"))
        };
        match kind {
            "area_km2" => scenario.area_km2 = next_f64(&mut parts)?,
            "seed" => {
                scenario.rng_seed = parts
                    .next()
                    .ok_or_else(|| err(line_no, "missing seed"))?
                    .parse()
                    .map_err(|_| err(line_no, "bad seed"))?
            }
            "gnb" => {
                let id = next_f64(&mut parts)? as usize;
                let x = next_f64(&mut parts)?;
                let y = next_f64(&mut parts)?;
                let h = next_f64(&mut parts)?;
                let donor = next_f64(&mut parts)? as u64;
                scenario.gnbs.push(GnbSite {
                    id,
                    pos: (x, y),
                    height_m: h,
                    is_donor: donor == 1,
                });
            }
            "ue" => {
                let id = next_f64(&mut parts)? as usize;
                let x = next_f64(&mut parts)?;
                let y = next_f64(&mut parts)?;
                let h = next_f64(&mut parts)?;
                scenario.ues.push(UeSite {
                    id,
                    pos: (x, y),
                    height_m: h,
                });
            }
            other => return Err(err(line_no, &format!("unknown entity kind '{other}'"))),
        }
    }
    Ok(scenario)
}

/// 3D distance between two positions at the given heights.
pub fn distance_m(a: (f64, f64), ha: f64, b: (f64, f64), hb: f64) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    let dz = ha - hb;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn zero_density_empty() {
        let mut rng = stream_rng(1, &[9]);
        assert!(sample_ppp(0.0, 1.0, &mut rng).is_empty());
    }

    #[test]
    fn ppp_count_mean_matches_poisson() {
        // Statistical oracle: sample mean over 1e4 draws of Poisson(45).
        let mut rng = stream_rng(11, &[1]);
        let draws = 10_000;
        let mut total = 0usize;
        for _ in 0..draws {
            total += sample_ppp(45.0, 1.0, &mut rng).len();
        }
        let mean = total as f64 / draws as f64;
        assert!((44.5..=45.5).contains(&mean), "mean {mean}");
    }

    #[test]
    fn ppp_count_variance_matches_poisson() {
        // Poisson variance oracle: Var ~ 30 within 5% over 1e4 draws.
        let mut rng = stream_rng(12, &[1]);
        let draws = 10_000;
        let counts: Vec<f64> = (0..draws)
            .map(|_| sample_ppp(30.0, 1.0, &mut rng).len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / draws as f64;
        let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (draws - 1) as f64;
        assert!(
            (var - 30.0).abs() <= 30.0 * 0.05,
            "variance {var} out of tolerance"
        );
    }

    #[test]
    fn positions_inside_area() {
        let mut rng = stream_rng(13, &[1]);
        let side = (4.0f64).sqrt() * 1000.0;
        for pos in sample_ppp(50.0, 4.0, &mut rng) {
            assert!(pos.0 >= 0.0 && pos.0 < side);
            assert!(pos.1 >= 0.0 && pos.1 < side);
        }
    }

    fn mk_gnbs(n: usize) -> Vec<GnbSite> {
        (0..n)
            .map(|id| GnbSite {
                id,
                pos: (id as f64, 0.0),
                height_m: GNB_HEIGHT_M,
                is_donor: false,
            })
            .collect()
    }

    #[test]
    fn donor_count_exact() {
        let mut rng = stream_rng(2, &[2]);
        let mut gnbs = mk_gnbs(10);
        designate_donors(&mut gnbs, 0.3, &mut rng).unwrap();
        assert_eq!(gnbs.iter().filter(|g| g.is_donor).count(), 3);
    }

    #[test]
    fn p_one_all_donors() {
        let mut rng = stream_rng(3, &[2]);
        let mut gnbs = mk_gnbs(7);
        designate_donors(&mut gnbs, 1.0, &mut rng).unwrap();
        assert!(gnbs.iter().all(|g| g.is_donor));
    }

    #[test]
    fn donor_count_clamps_to_one() {
        let mut rng = stream_rng(4, &[2]);
        let mut gnbs = mk_gnbs(2);
        designate_donors(&mut gnbs, 0.1, &mut rng).unwrap();
        assert_eq!(gnbs.iter().filter(|g| g.is_donor).count(), 1);
    }

    #[test]
    fn invalid_fraction_rejected() {
        let mut rng = stream_rng(5, &[2]);
        let mut gnbs = mk_gnbs(3);
        assert_eq!(
            designate_donors(&mut gnbs, 0.0, &mut rng),
            Err(DeploymentError::InvalidDonorFraction(0.0))
        );
        assert_eq!(
            designate_donors(&mut gnbs, 1.5, &mut rng),
            Err(DeploymentError::InvalidDonorFraction(1.5))
        );
    }

    #[test]
    fn generation_is_reproducible() {
        let params = ScenarioParams {
            density_gnb_km2: 45.0,
            donor_fraction: 0.5,
            area_km2: 1.0,
            ue_density_factor: 10.0,
        };
        let a = generate(&params, 77).unwrap();
        let b = generate(&params, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ue_gnb_ratio_near_factor() {
        let params = ScenarioParams {
            density_gnb_km2: 30.0,
            donor_fraction: 0.5,
            area_km2: 1.0,
            ue_density_factor: 10.0,
        };
        let mut gnb_total = 0usize;
        let mut ue_total = 0usize;
        for seed in 0..200 {
            let s = generate(&params, seed).unwrap();
            gnb_total += s.gnbs.len();
            ue_total += s.ues.len();
        }
        let ratio = ue_total as f64 / gnb_total as f64;
        assert!((9.5..=10.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn realize_variants_share_geometry() {
        let params = ScenarioParams {
            density_gnb_km2: 45.0,
            donor_fraction: 0.3,
            area_km2: 1.0,
            ue_density_factor: 10.0,
        };
        let base = generate(&params, 5).unwrap();
        let aw = realize(&base, DeploymentKind::AllWired);
        let iab = realize(&base, DeploymentKind::Iab);
        let od = realize(&base, DeploymentKind::OnlyDonors);
        assert_eq!(aw.ues, base.ues);
        assert_eq!(iab, base);
        assert!(aw.gnbs.iter().all(|g| g.is_donor));
        assert_eq!(aw.gnbs.len(), base.gnbs.len());
        assert!(od.gnbs.iter().all(|g| g.is_donor));
        // Discarded sites keep the survivors' original ids and coordinates.
        for g in &od.gnbs {
            let orig = base.gnbs.iter().find(|b| b.id == g.id).unwrap();
            assert_eq!(orig.pos, g.pos);
            assert!(orig.is_donor);
        }
    }

    #[test]
    fn dump_parse_round_trip() {
        let params = ScenarioParams {
            density_gnb_km2: 20.0,
            donor_fraction: 0.4,
            area_km2: 1.0,
            ue_density_factor: 10.0,
        };
        let s = generate(&params, 9).unwrap();
        let parsed = parse(&dump(&s)).unwrap();
        assert_eq!(s, parsed);
    }

    #[test]
    fn parse_rejects_unknown_header() {
        assert!(matches!(
            parse("iab-scenario v9\n"),
            Err(DeploymentError::Parse { line: 1, .. })
        ));
    }
}
