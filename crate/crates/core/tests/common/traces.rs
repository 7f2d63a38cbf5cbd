//! Message sequences of every protocol on tiny static topologies, with
//! light times chosen so every timestamp can be summed by hand. Each case
//! panics on mismatch.

use ipnsim::astro::C_KM_S;
use ipnsim::experiments::World;
use ipnsim::pki::{CaDirectory, CaModel, Decision, MessageKind, Pki, PkiConfig, Protocol};
use ipnsim::routing::{CachedRouter, ContactPlan, Geometry, Router};
use ipnsim::topology::NodeId;

use MessageKind::*;

const STEPS: u32 = 10;
const DT: f64 = 10.0;

/// Fixed pairwise distances given in light-seconds.
struct Static(Vec<Vec<f64>>);

impl Geometry for Static {
    fn distance_km(&self, a: NodeId, b: NodeId, _t: f64) -> f64 {
        self.0[a.idx()][b.idx()] * C_KM_S
    }
}

struct Net {
    geom: Static,
    plan: ContactPlan,
}

/// Three nodes with always-on links between the listed pairs.
fn net(links: &[(u32, u32, f64)]) -> Net {
    let mut d = vec![vec![0.0; 3]; 3];
    let mut samples = Vec::new();
    for &(a, b, ls) in links {
        d[a as usize][b as usize] = ls;
        d[b as usize][a as usize] = ls;
        samples.extend((0..STEPS).map(|k| (NodeId(a), NodeId(b), k)));
    }
    Net {
        geom: Static(d),
        plan: ContactPlan::from_samples(3, DT, STEPS as f64 * DT, samples),
    }
}

struct Outcome {
    trace: Vec<(MessageKind, u32, u32, f64)>,
    decision: Option<(Decision, f64)>,
    control: usize,
}

/// Node 0 sends to node 1 at t = 0.
fn run(n: &Net, cfg: PkiConfig, dir: CaDirectory, prepare: impl FnOnce(&mut Pki)) -> Outcome {
    let mut router = CachedRouter::new(Router::new(&n.plan, &n.geom), false);
    let mut pki = Pki::new(cfg, dir).unwrap();
    prepare(&mut pki);
    let mut world = World::new(pki, &mut router).with_trace();
    if cfg.protocol == Protocol::CrlBroadcast {
        world.schedule_broadcasts(vec![NodeId(1)]).unwrap();
    }
    world.schedule_initiate(7, NodeId(0), NodeId(1), 0.0).unwrap();
    world.run().unwrap();
    let decision = world.verdict(7).map(|v| (v.decision, v.time));
    let trace = world
        .trace
        .as_ref()
        .unwrap()
        .iter()
        .map(|r| (r.kind, r.from.0, r.to.0, r.time))
        .collect();
    Outcome {
        trace,
        decision,
        control: world.control_messages,
    }
}

/// One segment whose CA sits on `ca`.
fn one_segment(model: CaModel, ca: u32) -> CaDirectory {
    CaDirectory::new(model, vec![0, 0, 0], &[NodeId(ca)], &[], false).unwrap()
}

pub fn ocsp_chain_latency_seven_overhead_two() {
    // A -5- B -1- CA
    let n = net(&[(0, 1, 5.0), (1, 2, 1.0)]);
    let cfg = PkiConfig::new(Protocol::Ocsp, CaModel::Centralized);
    let out = run(&n, cfg, one_segment(CaModel::Centralized, 2), |_| {});
    assert_eq!(
        out.trace,
        vec![
            (SignedMessage, 0, 1, 5.0),
            (CertificateQueryMessage, 1, 2, 6.0),
            (CertificateStatusMessage, 2, 1, 7.0),
        ]
    );
    assert_eq!(out.decision, Some((Decision::Accept, 7.0)));
    // plain delivery takes 5 s
    assert_eq!(out.decision.unwrap().1 - 5.0, 2.0);
}

pub fn ocsp_recipient_hosting_its_ca_has_no_overhead() {
    let n = net(&[(0, 1, 5.0), (1, 2, 1.0)]);
    let cfg = PkiConfig::new(Protocol::Ocsp, CaModel::Centralized);
    let out = run(&n, cfg, one_segment(CaModel::Centralized, 1), |_| {});
    assert_eq!(out.decision, Some((Decision::Accept, 5.0)));
    assert_eq!(
        out.trace,
        vec![
            (SignedMessage, 0, 1, 5.0),
            (CertificateQueryMessage, 1, 1, 5.0),
            (CertificateStatusMessage, 1, 1, 5.0),
        ]
    );
}

pub fn stapling_accepts_at_seven() {
    // CA -1- A -5- B
    let n = net(&[(0, 2, 1.0), (0, 1, 5.0)]);
    let cfg = PkiConfig::new(Protocol::OcspStapling, CaModel::Centralized);
    let out = run(&n, cfg, one_segment(CaModel::Centralized, 2), |_| {});
    assert_eq!(
        out.trace,
        vec![
            (CertificateQueryMessage, 0, 2, 1.0),
            (CertificateStatusMessage, 2, 0, 2.0),
            (StapledMessage, 0, 1, 7.0),
        ]
    );
    assert_eq!(out.decision, Some((Decision::Accept, 7.0)));
}

pub fn validator_wraps_and_forwards() {
    // V -1- A -5- B; the stapled message goes back through A
    let n = net(&[(0, 2, 1.0), (0, 1, 5.0)]);
    let cfg = PkiConfig::new(Protocol::OcspValidator, CaModel::Centralized);
    let out = run(&n, cfg, one_segment(CaModel::Centralized, 2), |_| {});
    assert_eq!(
        out.trace,
        vec![(ValidatorQueryMessage, 0, 2, 1.0), (StapledMessage, 2, 1, 7.0)]
    );
    assert_eq!(out.decision, Some((Decision::Accept, 7.0)));
    assert_eq!(out.control, 0);
}

pub fn hybrid_within_a_segment_traces_like_stapling() {
    let n = net(&[(0, 2, 1.0), (0, 1, 5.0)]);
    let dir = || CaDirectory::new(CaModel::Distributed, vec![0, 0, 0], &[NodeId(2)], &[], true).unwrap();
    let stapling = run(&n, PkiConfig::new(Protocol::OcspStapling, CaModel::Distributed), dir(), |_| {});
    let hybrid = run(&n, PkiConfig::new(Protocol::OcspHybrid, CaModel::Distributed), dir(), |_| {});
    assert_eq!(hybrid.trace, stapling.trace);
    assert_eq!(hybrid.decision, stapling.decision);
}

pub fn hybrid_across_segments_validates_at_the_relay() {
    // A (segment 0, its CA) -2- R (relay of segment 1) -3- B (segment 1 CA)
    let n = net(&[(0, 2, 2.0), (2, 1, 3.0)]);
    let dir = CaDirectory::new(CaModel::Distributed, vec![0, 1, 1], &[NodeId(0), NodeId(1)], &[(NodeId(2), 1)], true).unwrap();
    let out = run(&n, PkiConfig::new(Protocol::OcspHybrid, CaModel::Distributed), dir, |_| {});
    assert_eq!(
        out.trace,
        vec![(ValidatorQueryMessage, 0, 2, 2.0), (StapledMessage, 2, 1, 5.0)]
    );
    assert_eq!(out.decision, Some((Decision::Accept, 5.0)));
}

pub fn crl_asks_the_senders_issuer() {
    // A -5- B -1- CA_A
    let n = net(&[(0, 1, 5.0), (1, 2, 1.0)]);
    let cfg = PkiConfig::new(Protocol::Crl, CaModel::Centralized);
    let out = run(&n, cfg, one_segment(CaModel::Centralized, 2), |_| {});
    assert_eq!(
        out.trace,
        vec![
            (SignedMessage, 0, 1, 5.0),
            (CRLRequestMessage, 1, 2, 6.0),
            (CRLDirectMessage, 2, 1, 7.0),
        ]
    );
    assert_eq!(out.decision, Some((Decision::Accept, 7.0)));
}

pub fn crl_broadcast_decides_from_the_held_list() {
    let n = net(&[(0, 1, 5.0), (1, 2, 1.0)]);
    let cfg = PkiConfig::new(Protocol::CrlBroadcast, CaModel::Centralized);
    let out = run(&n, cfg, one_segment(CaModel::Centralized, 2), |p| p.seed_crl(NodeId(1), 0, 0.0));
    assert_eq!(out.trace[0], (SignedMessage, 0, 1, 5.0));
    assert!(out.trace[1..].iter().all(|r| r.0 == CRLBroadcastMessage));
    assert_eq!(out.decision, Some((Decision::Accept, 5.0)));
    assert_eq!(out.control, 0);
}

pub fn crl_broadcast_without_a_list_waits_for_the_next_round() {
    let n = net(&[(0, 1, 5.0), (1, 2, 1.0)]);
    let mut cfg = PkiConfig::new(Protocol::CrlBroadcast, CaModel::Centralized);
    cfg.broadcast_interval_s = 20.0;
    let out = run(&n, cfg, one_segment(CaModel::Centralized, 2), |_| {});
    assert_eq!(
        out.trace[..2],
        [(SignedMessage, 0, 1, 5.0), (CRLBroadcastMessage, 2, 1, 21.0)]
    );
    assert_eq!(out.decision, Some((Decision::Accept, 21.0)));
    assert_eq!(out.control, 0);
}

pub fn broadcast_staleness_is_bounded_by_interval_plus_delay() {
    // revoked at t = 3; the next round at 20 carries it, arriving at 21
    let n = net(&[(0, 1, 5.0), (1, 2, 1.0)]);
    let mut cfg = PkiConfig::new(Protocol::CrlBroadcast, CaModel::Centralized);
    cfg.broadcast_interval_s = 20.0;
    let mut router = CachedRouter::new(Router::new(&n.plan, &n.geom), false);
    let mut pki = Pki::new(cfg, one_segment(CaModel::Centralized, 2)).unwrap();
    pki.seed_crl(NodeId(1), 0, 0.0);
    let mut world = World::new(pki, &mut router);
    world.schedule_broadcasts(vec![NodeId(1)]).unwrap();
    world.schedule_revocation(0, 0, 3.0).unwrap();
    // arrives at 20.5 with the stale list, at 21.5 with the fresh one
    world.schedule_initiate(1, NodeId(0), NodeId(1), 15.5).unwrap();
    world.schedule_initiate(2, NodeId(0), NodeId(1), 16.5).unwrap();
    world.run().unwrap();
    assert_eq!(world.verdict(1).unwrap().decision, Decision::Accept);
    assert_eq!(world.verdict(2).unwrap().decision, Decision::Reject);
    assert!(21.0 - 3.0 <= cfg.broadcast_interval_s + 1.0);
}

pub fn unreachable_ca_drops_the_query() {
    // CA has no links at all
    let n = net(&[(0, 1, 5.0)]);
    let cfg = PkiConfig::new(Protocol::Ocsp, CaModel::Centralized);
    let out = run(&n, cfg, one_segment(CaModel::Centralized, 2), |_| {});
    assert_eq!(out.decision, None);
    assert_eq!(out.trace.last().unwrap().0, CertificateQueryMessage);
}

pub fn firewall_drops_revoked_traffic_at_the_relay() {
    // A (segment 0) -2- R (relay CA, segment 1) -3- B; R already knows
    let n = net(&[(0, 2, 2.0), (2, 1, 3.0)]);
    let mut cfg = PkiConfig::new(Protocol::Ocsp, CaModel::Distributed);
    cfg.firewall = true;
    let dir = || CaDirectory::new(CaModel::Distributed, vec![0, 1, 1], &[NodeId(0), NodeId(1)], &[(NodeId(2), 1)], true).unwrap();
    let mut router = CachedRouter::new(Router::new(&n.plan, &n.geom), false);
    let mut pki = Pki::new(cfg, dir()).unwrap();
    let relay_ca = pki.dir.ca_at(NodeId(2)).unwrap();
    pki.revoke(relay_ca, 0, 0.0).unwrap();
    let mut world = World::new(pki, &mut router).with_trace();
    world.schedule_initiate(1, NodeId(0), NodeId(1), 0.0).unwrap();
    world.run().unwrap();
    assert!(world.verdict(1).is_none());
    let trace = world.trace.unwrap();
    assert_eq!(trace.len(), 1);
    assert_eq!((trace[0].kind, trace[0].decision.as_str(), trace[0].time), (SignedMessage, "firewall", 2.0));

    // an unrevoked sender passes with unchanged timing
    let mut router = CachedRouter::new(Router::new(&n.plan, &n.geom), false);
    let pki = Pki::new(cfg, dir()).unwrap();
    let mut world = World::new(pki, &mut router);
    world.schedule_initiate(1, NodeId(0), NodeId(1), 0.0).unwrap();
    world.run().unwrap();
    let v = world.verdict(1).unwrap();
    assert_eq!(v.decision, Decision::Accept);
    assert_eq!(v.payload.hops, 2);
}

pub fn firewall_drops_messages_queued_at_the_relay() {
    // A (segment 1) -2- R (A's relay) -3- B (segment 0); R-B opens at t = 50
    let mut samples: Vec<(NodeId, NodeId, u32)> = (0..STEPS).map(|k| (NodeId(0), NodeId(2), k)).collect();
    samples.extend((5..STEPS).map(|k| (NodeId(2), NodeId(1), k)));
    let n = Net {
        geom: Static(vec![vec![0.0, 0.0, 2.0], vec![0.0, 0.0, 3.0], vec![2.0, 3.0, 0.0]]),
        plan: ContactPlan::from_samples(3, DT, STEPS as f64 * DT, samples),
    };
    let go = |firewall: bool| {
        let mut cfg = PkiConfig::new(Protocol::OcspHybrid, CaModel::Distributed);
        cfg.firewall = firewall;
        let dir = CaDirectory::new(CaModel::Distributed, vec![1, 0, 1], &[NodeId(1), NodeId(0)], &[(NodeId(2), 1)], true).unwrap();
        let mut router = CachedRouter::new(Router::new(&n.plan, &n.geom), false);
        let pki = Pki::new(cfg, dir).unwrap();
        let relay_ca = pki.dir.ca_at(NodeId(2)).unwrap();
        let mut world = World::new(pki, &mut router).with_trace();
        world.schedule_initiate(1, NodeId(0), NodeId(1), 0.0).unwrap();
        // validated at t = 2, revoked while waiting for the link
        world.schedule_revocation(relay_ca, 0, 20.0).unwrap();
        world.run().unwrap();
        let trace: Vec<_> = world
            .trace
            .unwrap()
            .iter()
            .filter(|r| r.serial == Some(0) && r.kind != CertificateStatusMessage)
            .map(|r| (r.kind, r.from.0, r.to.0, r.time, r.decision.clone()))
            .collect();
        (world.verdicts.first().map(|v| (v.decision, v.time)), trace)
    };
    let (open, trace) = go(false);
    assert_eq!(open, Some((Decision::Accept, 53.0)));
    assert_eq!(trace[0], (ValidatorQueryMessage, 0, 2, 2.0, String::new()));
    let (closed, trace) = go(true);
    assert_eq!(closed, None);
    assert_eq!(trace.last().unwrap(), &(StapledMessage, 2, 1, 50.0, "firewall".to_string()));
}

pub const CASES: &[(&str, fn())] = &[
    ("ocsp_chain_latency_seven_overhead_two", ocsp_chain_latency_seven_overhead_two),
    ("ocsp_recipient_hosting_its_ca_has_no_overhead", ocsp_recipient_hosting_its_ca_has_no_overhead),
    ("stapling_accepts_at_seven", stapling_accepts_at_seven),
    ("validator_wraps_and_forwards", validator_wraps_and_forwards),
    ("hybrid_within_a_segment_traces_like_stapling", hybrid_within_a_segment_traces_like_stapling),
    ("hybrid_across_segments_validates_at_the_relay", hybrid_across_segments_validates_at_the_relay),
    ("crl_asks_the_senders_issuer", crl_asks_the_senders_issuer),
    ("crl_broadcast_decides_from_the_held_list", crl_broadcast_decides_from_the_held_list),
    ("crl_broadcast_without_a_list_waits_for_the_next_round", crl_broadcast_without_a_list_waits_for_the_next_round),
    ("broadcast_staleness_is_bounded_by_interval_plus_delay", broadcast_staleness_is_bounded_by_interval_plus_delay),
    ("unreachable_ca_drops_the_query", unreachable_ca_drops_the_query),
    ("firewall_drops_revoked_traffic_at_the_relay", firewall_drops_revoked_traffic_at_the_relay),
    ("firewall_drops_messages_queued_at_the_relay", firewall_drops_messages_queued_at_the_relay),
];
