//! Data plane: per-bearer FIFO queues, slot-driven byte-stream transmission,
//! multi-hop tree routing, drop and delivery accounting.
//!
//! Buffers are drop-tail for open-loop (UDP-like) flows at every hop: a
//! backhaul completion that finds the child's queue full is dropped, like
//! any other enqueue. Windowed flows are never dropped: at the donor ingress
//! they park in an unbounded staging area until the queue has room, and on
//! backhaul hops the sender checks the next-hop queue before starting a
//! packet (the hop-by-hop flow-control stand-in). Interior queues are fed
//! only by their node's single parent link, so a start-of-packet admission
//! check cannot be invalidated later.

use std::collections::VecDeque;

use thiserror::Error;

use crate::engine::SimTime;
use crate::scheduler::{Bearer, BearerKind, Endpoint};
use crate::topology::{IabTree, UeAssociation};

pub const DEFAULT_PACKET_BYTES: u32 = 1400;
pub const DEFAULT_BUFFER_BYTES: u64 = 5_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum RoutingError {
    #[error("gNB {at} has no route towards UE {dst}")]
    NoRoute { at: usize, dst: usize },
}

/// One downlink packet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Packet {
    /// Flow id; one application flow per UE, so this is the UE id.
    pub ue: u32,
    /// Object (segment, page object) this packet belongs to; open-loop flows
    /// use 0.
    pub object: u32,
    /// Last packet of its object.
    pub last_of_object: bool,
    pub size_bytes: u32,
    /// Creation at the traffic source (server side).
    pub created_at: SimTime,
    /// Arrival at the donor, after the wired/core segment.
    pub donor_ingress_at: SimTime,
    /// Delivery at the UE; set by the access hop.
    pub delivered_at: Option<SimTime>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    Dropped,
}

/// FIFO byte queue of one bearer with drop-tail cap and a parking area for
/// windowed ingress.
#[derive(Clone, Debug)]
pub struct BearerQueue {
    fifo: VecDeque<Packet>,
    bytes: u64,
    capacity_bytes: u64,
    /// Bytes of the head packet already transmitted in earlier slots.
    head_sent: u32,
    pending: VecDeque<Packet>,
    pending_bytes: u64,
}

impl BearerQueue {
    pub fn new(capacity_bytes: u64) -> Self {
        BearerQueue {
            fifo: VecDeque::new(),
            bytes: 0,
            capacity_bytes,
            head_sent: 0,
            pending: VecDeque::new(),
            pending_bytes: 0,
        }
    }

    pub fn can_accept(&self, size_bytes: u32) -> bool {
        self.bytes + u64::from(size_bytes) <= self.capacity_bytes
    }

    /// Drop-tail enqueue: drops exactly when the packet would push the queue
    /// over capacity.
    pub fn try_enqueue(&mut self, packet: Packet) -> EnqueueOutcome {
        if !self.can_accept(packet.size_bytes) {
            return EnqueueOutcome::Dropped;
        }
        self.bytes += u64::from(packet.size_bytes);
        self.fifo.push_back(packet);
        EnqueueOutcome::Accepted
    }

    /// Windowed-flow ingress: admit when there is room and nothing parked
    /// ahead, otherwise park. FIFO order is preserved across the two stages.
    pub fn enqueue_or_park(&mut self, packet: Packet) {
        self.admit_pending();
        if self.pending.is_empty() && self.can_accept(packet.size_bytes) {
            self.bytes += u64::from(packet.size_bytes);
            self.fifo.push_back(packet);
        } else {
            self.pending_bytes += u64::from(packet.size_bytes);
            self.pending.push_back(packet);
        }
    }

    fn admit_pending(&mut self) {
        while let Some(head) = self.pending.front() {
            if !self.can_accept(head.size_bytes) {
                break;
            }
            let p = self.pending.pop_front().unwrap();
            self.pending_bytes -= u64::from(p.size_bytes);
            self.bytes += u64::from(p.size_bytes);
            self.fifo.push_back(p);
        }
    }

    fn pop_head(&mut self) -> Packet {
        let p = self.fifo.pop_front().expect("pop on empty queue");
        self.bytes -= u64::from(p.size_bytes);
        self.head_sent = 0;
        self.admit_pending();
        p
    }

    pub fn bytes_queued(&self) -> u64 {
        self.bytes
    }

    /// Demand visible to the frame scheduler: queued plus parked bytes.
    pub fn demand_bytes(&self) -> u64 {
        self.bytes + self.pending_bytes
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn packets_resident(&self) -> usize {
        self.fifo.len() + self.pending.len()
    }

    pub fn iter_resident(&self) -> impl Iterator<Item = &Packet> {
        self.fifo.iter().chain(self.pending.iter())
    }
}

/// Next-hop bearer per (gNB, UE), derived from the tree and the association.
#[derive(Clone, Debug)]
pub struct RouteTable {
    next_hop: Vec<u32>,
    first_hop: Vec<u32>,
    n_ues: usize,
}

const NO_ROUTE: u32 = u32::MAX;

impl RouteTable {
    /// Builds downlink routes for every associated UE: the access bearer at
    /// its serving gNB and the backhaul bearer towards it at every ancestor.
    pub fn build(
        tree: &IabTree,
        assoc: &UeAssociation,
        bearers: &[Bearer],
        n_gnb_ids: usize,
    ) -> RouteTable {
        let n_ues = assoc.serving.len();
        let mut table = RouteTable {
            next_hop: vec![NO_ROUTE; n_gnb_ids * n_ues],
            first_hop: vec![NO_ROUTE; n_ues],
            n_ues,
        };
        let mut access = vec![NO_ROUTE; n_ues];
        let mut backhaul = vec![NO_ROUTE; n_gnb_ids]; // keyed by child id
        for b in bearers {
            match (b.kind, b.rx) {
                (BearerKind::Access, Endpoint::Ue(u)) => access[u] = b.id as u32,
                (BearerKind::Backhaul, Endpoint::Gnb(c)) => backhaul[c] = b.id as u32,
                _ => unreachable!("bearer kind/endpoint mismatch"),
            }
        }
        for (ue, serving) in assoc.serving.iter().enumerate() {
            let Some(serving) = *serving else { continue };
            table.next_hop[serving * n_ues + ue] = access[ue];
            let mut child = serving;
            let mut donor = serving;
            while let Some(parent) = tree.parent[child] {
                table.next_hop[parent * n_ues + ue] = backhaul[child];
                child = parent;
                donor = parent;
            }
            table.first_hop[ue] = table.next_hop[donor * n_ues + ue];
        }
        table
    }

    /// The unique child/access bearer towards `dst` at `at`.
    pub fn next_hop(&self, at: usize, dst: usize) -> Result<usize, RoutingError> {
        match self.next_hop[at * self.n_ues + dst] {
            NO_ROUTE => Err(RoutingError::NoRoute { at, dst }),
            b => Ok(b as usize),
        }
    }

    /// First bearer on the donor-to-UE path (the donor's queue fed by core
    /// ingress), or an error for UEs in outage.
    pub fn first_hop(&self, ue: usize) -> Result<usize, RoutingError> {
        match self.first_hop[ue] {
            NO_ROUTE => Err(RoutingError::NoRoute { at: usize::MAX, dst: ue }),
            b => Ok(b as usize),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IngressOutcome {
    Queued,
    Parked,
    Dropped,
}

/// Per-run mutable forwarding state: one queue per bearer plus the routes.
///
/// `windowed_flows` selects the hop-by-hop discipline for the whole run (one
/// application model per run): windowed flows get backpressure, open-loop
/// flows get drop-tail at every hop.
pub struct DataPlane {
    pub queues: Vec<BearerQueue>,
    pub routes: RouteTable,
    windowed_flows: bool,
}

impl DataPlane {
    pub fn new(
        n_bearers: usize,
        buffer_bytes: u64,
        routes: RouteTable,
        windowed_flows: bool,
    ) -> DataPlane {
        DataPlane {
            queues: (0..n_bearers).map(|_| BearerQueue::new(buffer_bytes)).collect(),
            routes,
            windowed_flows,
        }
    }

    /// Packet arrival at the donor after the core segment. Open-loop packets
    /// are drop-tail; windowed packets park when the queue is full.
    pub fn ingress_at_donor(&mut self, packet: Packet) -> IngressOutcome {
        let Ok(first) = self.routes.first_hop(packet.ue as usize) else {
            return IngressOutcome::Dropped;
        };
        if self.windowed_flows {
            let q = &mut self.queues[first];
            let parked = !(q.pending.is_empty() && q.can_accept(packet.size_bytes));
            q.enqueue_or_park(packet);
            if parked {
                IngressOutcome::Parked
            } else {
                IngressOutcome::Queued
            }
        } else {
            match self.queues[first].try_enqueue(packet) {
                EnqueueOutcome::Accepted => IngressOutcome::Queued,
                EnqueueOutcome::Dropped => IngressOutcome::Dropped,
            }
        }
    }

    /// Serves one allocated slot of `bearer`: transmits up to
    /// `capacity x slot` bytes as a byte stream. Packets complete when their
    /// last byte is sent; access completions are appended to `delivered`
    /// with `delivered_at = now`, backhaul completions move to the child's
    /// next-hop queue (drop-tail for open-loop flows, appended to `dropped`).
    /// For windowed flows a backhaul bearer instead stops for the slot when
    /// the head packet's next-hop queue cannot take it (hop-by-hop
    /// backpressure), so windowed packets are never dropped mid-path.
    pub fn serve_slot(
        &mut self,
        bearer: &Bearer,
        slot: SimTime,
        now: SimTime,
        delivered: &mut Vec<Packet>,
        dropped: &mut Vec<Packet>,
    ) {
        let mut budget = bearer.bytes_per_slot(slot);
        loop {
            if budget == 0 {
                return;
            }
            self.queues[bearer.id].admit_pending();
            let Some(head) = self.queues[bearer.id].fifo.front() else {
                return;
            };
            let head = *head;
            let next = match bearer.kind {
                BearerKind::Access => None,
                BearerKind::Backhaul => {
                    let Endpoint::Gnb(child) = bearer.rx else {
                        unreachable!("backhaul bearer with UE endpoint")
                    };
                    let nb = self
                        .routes
                        .next_hop(child, head.ue as usize)
                        .expect("tree/route inconsistency on backhaul path");
                    if self.windowed_flows
                        && self.queues[bearer.id].head_sent == 0
                        && !self.queues[nb].can_accept(head.size_bytes)
                    {
                        return; // backpressure: blocked for this slot
                    }
                    Some(nb)
                }
            };
            let remaining = head.size_bytes - self.queues[bearer.id].head_sent;
            let sent = remaining.min(budget.min(u64::from(u32::MAX)) as u32);
            self.queues[bearer.id].head_sent += sent;
            budget -= u64::from(sent);
            if self.queues[bearer.id].head_sent == head.size_bytes {
                let mut p = self.queues[bearer.id].pop_head();
                match next {
                    None => {
                        p.delivered_at = Some(now);
                        delivered.push(p);
                    }
                    Some(nb) => {
                        if self.windowed_flows {
                            debug_assert!(self.queues[nb].can_accept(p.size_bytes));
                        }
                        if self.queues[nb].try_enqueue(p) == EnqueueOutcome::Dropped {
                            dropped.push(p);
                        }
                    }
                }
            }
        }
    }

    /// Packets resident anywhere in the data plane, per UE; used by the
    /// conservation audit.
    pub fn resident_per_ue(&self, n_ues: usize) -> Vec<u64> {
        let mut counts = vec![0u64; n_ues];
        for q in &self.queues {
            for p in q.iter_resident() {
                counts[p.ue as usize] += 1;
            }
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(ue: u32, size: u32) -> Packet {
        Packet {
            ue,
            object: 0,
            last_of_object: false,
            size_bytes: size,
            created_at: SimTime::ZERO,
            donor_ingress_at: SimTime::from_millis(10),
            delivered_at: None,
        }
    }

    fn access(id: usize, tx: usize, ue: usize, cap: f64) -> Bearer {
        Bearer {
            id,
            tx,
            rx: Endpoint::Ue(ue),
            kind: BearerKind::Access,
            weight: 1,
            capacity_bps: cap,
        }
    }

    fn backhaul(id: usize, tx: usize, child: usize, cap: f64) -> Bearer {
        Bearer {
            id,
            tx,
            rx: Endpoint::Gnb(child),
            kind: BearerKind::Backhaul,
            weight: 1,
            capacity_bps: cap,
        }
    }

    #[test]
    fn enqueue_accepts_then_drops_at_cap() {
        let mut q = BearerQueue::new(DEFAULT_BUFFER_BYTES);
        assert_eq!(q.try_enqueue(pkt(0, 1400)), EnqueueOutcome::Accepted);
        let mut q = BearerQueue::new(DEFAULT_BUFFER_BYTES);
        // Fill to 4,999,000 bytes; the next 1400 B packet must drop.
        for _ in 0..3571 {
            assert_eq!(q.try_enqueue(pkt(0, 1400)), EnqueueOutcome::Accepted);
        }
        assert_eq!(q.bytes_queued(), 4_999_400);
        assert_eq!(q.try_enqueue(pkt(0, 1400)), EnqueueOutcome::Dropped);
        // 4,999,000 + 1400 > 5,000,000 exactly per the cap arithmetic.
        let mut q = BearerQueue::new(5_000_000);
        q.try_enqueue(pkt(0, 1000));
        q.bytes = 4_999_000;
        assert_eq!(q.try_enqueue(pkt(0, 1400)), EnqueueOutcome::Dropped);
        assert_eq!(q.try_enqueue(pkt(0, 1000)), EnqueueOutcome::Accepted);
    }

    fn chain_plane(cap: f64) -> (Vec<Bearer>, DataPlane) {
        // gNB 0 (donor) -> gNB 1 (relay) -> UE 0.
        let bearers = vec![backhaul(0, 0, 1, cap), access(1, 1, 0, cap)];
        let mut tree = IabTree {
            parent: vec![None, Some(0)],
            children: vec![vec![1], vec![]],
            hop_count: vec![Some(0), Some(1)],
            attach_order: vec![1],
            detached: vec![],
        };
        tree.children[0] = vec![1];
        let assoc = UeAssociation {
            serving: vec![Some(1)],
            outage: vec![],
        };
        let routes = RouteTable::build(&tree, &assoc, &bearers, 2);
        let plane = DataPlane::new(bearers.len(), DEFAULT_BUFFER_BYTES, routes, false);
        (bearers, plane)
    }

    #[test]
    fn routes_follow_the_tree() {
        let (_, plane) = chain_plane(1e9);
        assert_eq!(plane.routes.first_hop(0), Ok(0));
        assert_eq!(plane.routes.next_hop(0, 0), Ok(0));
        assert_eq!(plane.routes.next_hop(1, 0), Ok(1));
    }

    #[test]
    fn sibling_subtree_is_a_routing_error() {
        // Donor 0 with children 1 and 2; UE 0 behind 2. Node 1 has no route.
        let bearers = vec![backhaul(0, 0, 1, 1e9), backhaul(1, 0, 2, 1e9), access(2, 2, 0, 1e9)];
        let tree = IabTree {
            parent: vec![None, Some(0), Some(0)],
            children: vec![vec![1, 2], vec![], vec![]],
            hop_count: vec![Some(0), Some(1), Some(1)],
            attach_order: vec![1, 2],
            detached: vec![],
        };
        let assoc = UeAssociation {
            serving: vec![Some(2)],
            outage: vec![],
        };
        let routes = RouteTable::build(&tree, &assoc, &bearers, 3);
        assert_eq!(routes.next_hop(1, 0), Err(RoutingError::NoRoute { at: 1, dst: 0 }));
        assert_eq!(routes.next_hop(2, 0), Ok(2));
    }

    #[test]
    fn slot_serves_whole_and_partial_packets() {
        // 1 Gbps x 125 us = 15,625 bytes: 11 full 1400 B packets complete,
        // the 12th is left 225 bytes in and resumes next slot.
        let bearers = vec![access(0, 0, 0, 1e9)];
        let tree = IabTree {
            parent: vec![None],
            children: vec![vec![]],
            hop_count: vec![Some(0)],
            attach_order: vec![],
            detached: vec![],
        };
        let assoc = UeAssociation {
            serving: vec![Some(0)],
            outage: vec![],
        };
        let routes = RouteTable::build(&tree, &assoc, &bearers, 1);
        let mut plane = DataPlane::new(1, DEFAULT_BUFFER_BYTES, routes, false);
        for _ in 0..30 {
            plane.ingress_at_donor(pkt(0, 1400));
        }
        let slot = SimTime::from_micros(125);
        let mut delivered = Vec::new();
        let mut dropped = Vec::new();
        plane.serve_slot(&bearers[0], slot, SimTime::from_micros(125), &mut delivered, &mut dropped);
        assert_eq!(delivered.len(), 11);
        assert_eq!(plane.queues[0].head_sent, 15_625 - 11 * 1400);
        plane.serve_slot(&bearers[0], slot, SimTime::from_micros(250), &mut delivered, &mut dropped);
        assert_eq!(delivered.len(), 22);
        assert!(delivered.iter().all(|p| p.delivered_at.is_some()));
    }

    #[test]
    fn empty_queue_slot_is_noop() {
        let (bearers, mut plane) = chain_plane(1e9);
        let mut delivered = Vec::new();
        let mut dropped = Vec::new();
        plane.serve_slot(&bearers[1], SimTime::from_micros(125), SimTime::ZERO, &mut delivered, &mut dropped);
        assert!(delivered.is_empty());
    }

    #[test]
    fn backhaul_moves_packets_to_child_queue() {
        let (bearers, mut plane) = chain_plane(1e9);
        plane.ingress_at_donor(pkt(0, 1400));
        let mut delivered = Vec::new();
        let mut dropped = Vec::new();
        plane.serve_slot(&bearers[0], SimTime::from_micros(125), SimTime::ZERO, &mut delivered, &mut dropped);
        assert!(delivered.is_empty());
        assert_eq!(plane.queues[1].bytes_queued(), 1400);
        plane.serve_slot(&bearers[1], SimTime::from_micros(125), SimTime::from_micros(125), &mut delivered, &mut dropped);
        assert_eq!(delivered.len(), 1);
        assert_eq!(delivered[0].delivered_at, Some(SimTime::from_micros(125)));
    }

    #[test]
    fn full_next_hop_blocks_windowed_backhaul() {
        let (bearers, mut plane) = chain_plane(1e9);
        plane.windowed_flows = true;
        plane.queues[1] = BearerQueue::new(1000); // child queue too small for one packet
        plane.ingress_at_donor(pkt(0, 1400));
        let mut delivered = Vec::new();
        let mut dropped = Vec::new();
        plane.serve_slot(&bearers[0], SimTime::from_micros(125), SimTime::ZERO, &mut delivered, &mut dropped);
        // Blocked: nothing moved, head untouched, nothing dropped.
        assert_eq!(plane.queues[0].bytes_queued(), 1400);
        assert_eq!(plane.queues[0].head_sent, 0);
        assert_eq!(plane.queues[1].bytes_queued(), 0);
        assert!(dropped.is_empty());
    }

    #[test]
    fn full_next_hop_drops_open_loop_backhaul() {
        let (bearers, mut plane) = chain_plane(1e9);
        plane.queues[1] = BearerQueue::new(1000);
        plane.ingress_at_donor(pkt(0, 1400));
        let mut delivered = Vec::new();
        let mut dropped = Vec::new();
        plane.serve_slot(&bearers[0], SimTime::from_micros(125), SimTime::ZERO, &mut delivered, &mut dropped);
        // Transmitted and dropped at the full child queue.
        assert_eq!(plane.queues[0].bytes_queued(), 0);
        assert_eq!(plane.queues[1].bytes_queued(), 0);
        assert_eq!(dropped.len(), 1);
        assert!(delivered.is_empty());
    }

    #[test]
    fn parked_packets_admit_in_fifo_order() {
        let mut q = BearerQueue::new(3000);
        q.enqueue_or_park(pkt(1, 1400));
        q.enqueue_or_park(pkt(2, 1400));
        q.enqueue_or_park(pkt(3, 1400)); // parks: 4200 > 3000
        q.enqueue_or_park(pkt(4, 1400)); // parks behind 3
        assert_eq!(q.packets_resident(), 4);
        assert_eq!(q.bytes_queued(), 2800);
        q.pop_head();
        assert_eq!(q.fifo.iter().map(|p| p.ue).collect::<Vec<_>>(), vec![2, 3]);
        q.pop_head();
        assert_eq!(q.fifo.iter().map(|p| p.ue).collect::<Vec<_>>(), vec![3, 4]);
    }

    #[test]
    fn fifo_order_preserved_end_to_end() {
        let (bearers, mut plane) = chain_plane(1e9);
        for i in 0..5 {
            let mut p = pkt(0, 1400);
            p.object = i;
            plane.ingress_at_donor(p);
        }
        let mut delivered = Vec::new();
        let mut dropped = Vec::new();
        let slot = SimTime::from_micros(125);
        plane.serve_slot(&bearers[0], slot, SimTime::ZERO, &mut delivered, &mut dropped);
        plane.serve_slot(&bearers[1], slot, SimTime::from_micros(125), &mut delivered, &mut dropped);
        assert_eq!(delivered.iter().map(|p| p.object).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn outage_ue_ingress_is_dropped() {
        let (_, mut plane) = chain_plane(1e9);
        let mut p = pkt(0, 1400);
        p.ue = 0;
        // Rebuild a route table with the UE unassociated.
        let tree = IabTree {
            parent: vec![None, Some(0)],
            children: vec![vec![1], vec![]],
            hop_count: vec![Some(0), Some(1)],
            attach_order: vec![1],
            detached: vec![],
        };
        let assoc = UeAssociation {
            serving: vec![None],
            outage: vec![0],
        };
        plane.routes = RouteTable::build(&tree, &assoc, &[], 2);
        assert_eq!(plane.ingress_at_donor(p), IngressOutcome::Dropped);
    }
}
