//! IAB network formation: parent selection policies, attachment of IAB-nodes
//! into a forest rooted at donors, and UE association.
//!
//! IAB-nodes attach in ascending deployment-id order; a node's candidate set
//! is every already-attached gNB whose link clears the usability floor.
//! Restricting candidates to attached nodes guarantees acyclicity by
//! construction. A single retry pass gives nodes that found no candidate a
//! second chance, since later attachments may have created one.

use crate::channel::LinkCache;
use crate::deployment::Scenario;

/// Parent-selection policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    /// Highest-quality-first: attach to the candidate with the highest SNR.
    Hqf,
    /// Wired-first: attach to the best donor if any donor clears the floor,
    /// even if an IAB-node with a better channel is available.
    Wf,
    /// HQF with a per-hop SNR penalty steering selection towards donors.
    HqfBiased,
}

impl PolicyKind {
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Hqf => "hqf",
            PolicyKind::Wf => "wf",
            PolicyKind::HqfBiased => "biased",
        }
    }
}

/// Policy parameters. `beta_db_per_hop` is the bias slope used by
/// [`PolicyKind::HqfBiased`]; `min_snr_db` is both the WF minimum-quality
/// threshold and the global link-usability floor.
#[derive(Clone, Copy, Debug)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub beta_db_per_hop: f64,
    pub min_snr_db: f64,
}

/// Conservative per-hop bias preset.
pub const BETA_CONSERVATIVE_DB: f64 = 3.0;
/// Aggressive per-hop bias preset; behaves close to wired-first.
pub const BETA_AGGRESSIVE_DB: f64 = 10.0;

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: PolicyKind::Wf,
            beta_db_per_hop: BETA_CONSERVATIVE_DB,
            min_snr_db: -5.0,
        }
    }
}

/// One attachment candidate as seen by `select_parent`.
#[derive(Clone, Copy, Debug)]
pub struct Candidate {
    pub gnb: usize,
    pub snr_db: f64,
    pub hop_count: u32,
    pub is_donor: bool,
}

/// Parent/child structure rooted at donors; the routing substrate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IabTree {
    /// Parent gNB per id; `None` for donors, detached nodes, and absent ids.
    pub parent: Vec<Option<usize>>,
    /// Children per id, ascending.
    pub children: Vec<Vec<usize>>,
    /// Hops to the donor; donors have 0, detached and absent ids `None`.
    pub hop_count: Vec<Option<u32>>,
    /// IAB-node ids in the order they successfully attached.
    pub attach_order: Vec<usize>,
    /// IAB-node ids that failed to attach, ascending.
    pub detached: Vec<usize>,
}

impl IabTree {
    pub fn is_attached(&self, gnb: usize) -> bool {
        self.hop_count.get(gnb).is_some_and(|h| h.is_some())
    }

    /// Donor id at the root of `gnb`'s tree, or `None` when detached/absent.
    pub fn donor_of(&self, gnb: usize) -> Option<usize> {
        let mut cur = gnb;
        self.hop_count.get(gnb)?.as_ref()?;
        while let Some(p) = self.parent[cur] {
            cur = p;
        }
        Some(cur)
    }

    /// Mean hop count over attached IAB-nodes (hop > 0); 0 when there are
    /// none.
    pub fn mean_iab_hop_count(&self) -> f64 {
        let hops: Vec<u32> = self
            .hop_count
            .iter()
            .filter_map(|h| h.filter(|&v| v > 0))
            .collect();
        if hops.is_empty() {
            0.0
        } else {
            hops.iter().map(|&h| f64::from(h)).sum::<f64>() / hops.len() as f64
        }
    }
}

/// Picks a parent among non-empty `candidates`, all of which clear the
/// usability floor. Ties break towards the lowest gNB id.
pub fn select_parent(candidates: &[Candidate], policy: &PolicyConfig) -> usize {
    assert!(!candidates.is_empty(), "select_parent on empty candidate list");
    let argmax = |iter: &mut dyn Iterator<Item = &Candidate>, metric: &dyn Fn(&Candidate) -> f64| {
        let mut best: Option<(f64, usize)> = None;
        for c in iter {
            let m = metric(c);
            let better = match best {
                None => true,
                Some((bm, bid)) => m > bm || (m == bm && c.gnb < bid),
            };
            if better {
                best = Some((m, c.gnb));
            }
        }
        best.expect("non-empty candidates").1
    };
    match policy.kind {
        PolicyKind::Hqf => argmax(&mut candidates.iter(), &|c| c.snr_db),
        PolicyKind::Wf => {
            if candidates.iter().any(|c| c.is_donor) {
                argmax(&mut candidates.iter().filter(|c| c.is_donor), &|c| c.snr_db)
            } else {
                argmax(&mut candidates.iter(), &|c| c.snr_db)
            }
        }
        PolicyKind::HqfBiased => argmax(&mut candidates.iter(), &|c| {
            c.snr_db - policy.beta_db_per_hop * f64::from(c.hop_count)
        }),
    }
}

/// Attaches every IAB-node of `scenario` per `policy` and returns the forest.
///
/// Donors are attached from the start with hop 0. Nodes are processed in
/// ascending id; a node with an empty candidate set is retried once after the
/// main pass. Detachment is a legal outcome and is recorded.
pub fn form_topology(scenario: &Scenario, links: &LinkCache, policy: &PolicyConfig) -> IabTree {
    let n = scenario.gnb_id_bound();
    let mut tree = IabTree {
        parent: vec![None; n],
        children: vec![Vec::new(); n],
        hop_count: vec![None; n],
        attach_order: Vec::new(),
        detached: Vec::new(),
    };
    let mut is_donor = vec![false; n];
    for g in &scenario.gnbs {
        if g.is_donor {
            is_donor[g.id] = true;
            tree.hop_count[g.id] = Some(0);
        }
    }
    let node_ids: Vec<usize> = scenario
        .gnbs
        .iter()
        .filter(|g| !g.is_donor)
        .map(|g| g.id)
        .collect();

    let attach_one = |tree: &mut IabTree, node: usize| -> bool {
        let candidates: Vec<Candidate> = scenario
            .gnbs
            .iter()
            .filter(|g| g.id != node && tree.hop_count[g.id].is_some())
            .filter_map(|g| {
                let snr = links.gnb_gnb(node, g.id).snr_db;
                (snr >= policy.min_snr_db).then(|| Candidate {
                    gnb: g.id,
                    snr_db: snr,
                    hop_count: tree.hop_count[g.id].unwrap(),
                    is_donor: is_donor[g.id],
                })
            })
            .collect();
        if candidates.is_empty() {
            return false;
        }
        let parent = select_parent(&candidates, policy);
        tree.parent[node] = Some(parent);
        tree.children[parent].push(node);
        tree.hop_count[node] = Some(tree.hop_count[parent].unwrap() + 1);
        tree.attach_order.push(node);
        true
    };

    let mut pending = Vec::new();
    for &node in &node_ids {
        if !attach_one(&mut tree, node) {
            pending.push(node);
        }
    }
    // Retry pass: later attachments may have created candidates.
    for &node in &pending {
        if !attach_one(&mut tree, node) {
            tree.detached.push(node);
        }
    }
    for children in &mut tree.children {
        children.sort_unstable();
    }
    tree
}

/// UE association result.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UeAssociation {
    /// Serving gNB per UE id; `None` for UEs in outage.
    pub serving: Vec<Option<usize>>,
    /// UE ids with no attached gNB above the floor, ascending.
    pub outage: Vec<usize>,
}

/// Associates every UE with the attached gNB of maximum SNR; ties break to
/// the lowest gNB id. Detached IAB-nodes do not serve UEs.
pub fn associate_ues(
    scenario: &Scenario,
    tree: &IabTree,
    links: &LinkCache,
    min_snr_db: f64,
) -> UeAssociation {
    let mut assoc = UeAssociation {
        serving: vec![None; scenario.ues.len()],
        outage: Vec::new(),
    };
    for ue in &scenario.ues {
        let mut best: Option<(f64, usize)> = None;
        for g in &scenario.gnbs {
            if !tree.is_attached(g.id) {
                continue;
            }
            let snr = links.gnb_ue(g.id, ue.id).snr_db;
            if snr < min_snr_db {
                continue;
            }
            let better = match best {
                None => true,
                Some((bs, bid)) => snr > bs || (snr == bs && g.id < bid),
            };
            if better {
                best = Some((snr, g.id));
            }
        }
        match best {
            Some((_, g)) => assoc.serving[ue.id] = Some(g),
            None => assoc.outage.push(ue.id),
        }
    }
    assoc
}

/// Number of UEs served by `gnb`'s subtree: its own UEs plus all
/// descendants'.
pub fn downstream_ue_count(tree: &IabTree, assoc: &UeAssociation, gnb: usize) -> usize {
    let own = assoc.serving.iter().filter(|s| **s == Some(gnb)).count();
    own + tree.children[gnb]
        .iter()
        .map(|&c| downstream_ue_count(tree, assoc, c))
        .sum::<usize>()
}

/// Plain-text edge list `(child, parent, hop, snr_db)` for debugging and
/// test fixtures.
pub fn dump_tree(tree: &IabTree, links: &LinkCache) -> String {
    let mut out = String::from("iab-tree v1\n");
    for (child, parent) in tree.parent.iter().enumerate() {
        if let Some(p) = parent {
            out.push_str(&format!(
                "{} {} {} {}\n",
                child,
                p,
                tree.hop_count[child].unwrap(),
                links.gnb_gnb(child, *p).snr_db
            ));
        }
    }
    out
}
