//! Experiment harnesses: the message-level world that ties the PKI state
//! machines to the event queue and router, then connection establishment,
//! key revocation and the relay/partition timelines.

use std::collections::BTreeMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pki::{CaDirectory, CaId, CaModel, CaRole, Decision, Message, MessageKind, Pki, PkiConfig, PkiError, Protocol, Verdict};
use crate::routing::{CachedRouter, ContactPlan, Geometry, Route, Router};
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{EventQueue, SimError, SimTime};
use crate::topology::{Network, NodeId, NodeKind};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Pki(#[from] PkiError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Invalid(String),
}

/// One line of the message trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: f64,
    pub kind: MessageKind,
    pub from: NodeId,
    pub to: NodeId,
    pub serial: Option<u32>,
    /// `accept`/`reject` for deliveries that decided something, `dropped`
    /// when no route exists, `firewall` when a relay filtered it.
    pub decision: String,
}

#[derive(Debug)]
enum Ev {
    /// Message in flight; `next` indexes the next hop to check at a firewall.
    Leg { msg: Message, route: Rc<Route>, next: usize },
    Deliver { msg: Message, hops: u32 },
    Initiate { id: u64, src: NodeId, dst: NodeId },
    Revoke { ca: CaId, serial: u32 },
    Broadcast { ca: CaId },
}

/// PKI state plus in-flight messages over one contact plan.
pub struct World<'r, 'a, G> {
    pub pki: Pki,
    router: &'r mut CachedRouter<'a, G>,
    queue: EventQueue<Ev>,
    horizon: f64,
    firewall_at: Vec<bool>,
    broadcast_targets: Rc<Vec<NodeId>>,
    pub verdicts: Vec<Verdict>,
    /// Messages other than the authenticated payload and periodic CRL broadcasts.
    pub control_messages: usize,
    pub trace: Option<Vec<TraceRow>>,
}

impl<'r, 'a, G: Geometry> World<'r, 'a, G> {
    pub fn new(pki: Pki, router: &'r mut CachedRouter<'a, G>) -> Self {
        let plan = router.router().plan();
        let horizon = plan.horizon();
        let mut firewall_at = vec![false; plan.node_count()];
        if pki.config.firewall {
            for ca in pki.dir.cas() {
                if matches!(ca.role, CaRole::Relay(_)) {
                    firewall_at[ca.host.idx()] = true;
                }
            }
        }
        World {
            pki,
            router,
            queue: EventQueue::new(),
            horizon,
            firewall_at,
            broadcast_targets: Rc::new(Vec::new()),
            verdicts: Vec::new(),
            control_messages: 0,
            trace: None,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Schedules CRL broadcast rounds every interval after t = 0 from each
    /// segment CA to `targets`.
    pub fn schedule_broadcasts(&mut self, targets: Vec<NodeId>) -> Result<(), ExperimentError> {
        self.broadcast_targets = Rc::new(targets);
        let step = self.pki.config.broadcast_interval_s;
        for ca in self.pki.broadcasters() {
            let mut k = 1.0;
            while k * step <= self.horizon {
                self.queue.schedule(SimTime(k * step), 0, Ev::Broadcast { ca })?;
                k += 1.0;
            }
        }
        Ok(())
    }

    pub fn schedule_initiate(&mut self, id: u64, src: NodeId, dst: NodeId, t: f64) -> Result<(), ExperimentError> {
        self.queue.schedule(SimTime(t), src.0, Ev::Initiate { id, src, dst })?;
        Ok(())
    }

    pub fn schedule_revocation(&mut self, ca: CaId, serial: u32, t: f64) -> Result<(), ExperimentError> {
        self.queue.schedule(SimTime(t), 0, Ev::Revoke { ca, serial })?;
        Ok(())
    }

    /// Starts an authenticated send right now (at the queue clock `t`).
    pub fn initiate(&mut self, id: u64, src: NodeId, dst: NodeId, t: f64) -> Result<(), ExperimentError> {
        for m in self.pki.initiate(id, src, dst, t)? {
            self.send(m, t)?;
        }
        Ok(())
    }

    fn log(&mut self, time: f64, msg: &Message, decision: &str) {
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRow {
                time,
                kind: msg.body.kind(),
                from: msg.from,
                to: msg.to,
                serial: msg.body.serial(),
                decision: decision.to_string(),
            });
        }
    }

    /// Routes `msg` from `msg.from` at `t`, falling back to alternate CA hosts.
    pub fn send(&mut self, mut msg: Message, t: f64) -> Result<(), ExperimentError> {
        if msg.body.payload().is_none() && msg.body.kind() != MessageKind::CRLBroadcastMessage {
            self.control_messages += 1;
        }
        if msg.from == msg.to {
            self.queue.schedule(SimTime(t), msg.to.0, Ev::Deliver { msg, hops: 0 })?;
            return Ok(());
        }
        let candidates: Vec<NodeId> = std::iter::once(msg.to).chain(msg.fallbacks.iter().copied()).collect();
        for to in candidates {
            if let Some(route) = self.router.route(msg.from, to, t) {
                msg.to = to;
                return self.dispatch(msg, Rc::new(route), 0);
            }
        }
        self.log(t, &msg, "dropped");
        Ok(())
    }

    fn dispatch(&mut self, msg: Message, route: Rc<Route>, from: usize) -> Result<(), ExperimentError> {
        if let Some(p) = msg.body.payload() {
            // a relay forwarding the message it just validated still filters
            // it when the link opens; only the author's own send is exempt
            let sender = p.sender;
            let last = route.hops.len() - 1;
            if let Some(j) = (from..last).find(|&j| {
                let n = route.hops[j].node;
                self.firewall_at[n.idx()] && n != sender
            }) {
                let at = route.hops[j].depart;
                let node = route.hops[j].node.0;
                self.queue.schedule(SimTime(at), node, Ev::Leg { msg, route, next: j })?;
                return Ok(());
            }
        }
        let hops = route.hop_count as u32;
        let at = route.arrival();
        self.queue.schedule(SimTime(at), msg.to.0, Ev::Deliver { msg, hops })?;
        Ok(())
    }

    fn deliver(&mut self, mut msg: Message, hops: u32, now: f64) -> Result<(), ExperimentError> {
        if let Some(p) = msg.body.payload_mut() {
            p.hops += hops;
        }
        let logged = self.trace.is_some().then(|| msg.clone());
        let out = self.pki.handle(msg, now)?;
        if let Some(m) = logged {
            let d: Vec<String> = out.verdicts.iter().map(|v| v.decision.to_string()).collect();
            self.log(now, &m, &d.join("|"));
        }
        self.verdicts.extend(out.verdicts);
        for m in out.outbound {
            self.send(m, now)?;
        }
        Ok(())
    }

    fn broadcast(&mut self, ca: CaId, now: f64) -> Result<(), ExperimentError> {
        let targets = self.broadcast_targets.clone();
        if targets.len() > 4 {
            self.router.prefetch_tree(self.pki.dir.ca(ca).host, now);
        }
        for m in self.pki.broadcast(ca, &targets, now) {
            self.send(m, now)?;
        }
        Ok(())
    }

    /// Processes every event up to the horizon.
    pub fn run(&mut self) -> Result<(), ExperimentError> {
        while let Some(ev) = self.queue.pop_until(SimTime(self.horizon)) {
            let now = ev.time.0;
            match ev.payload {
                Ev::Leg { msg, route, next } => {
                    let node = route.hops[next].node;
                    if self.pki.firewall_filter(node, &msg) {
                        self.dispatch(msg, route, next + 1)?;
                    } else {
                        self.log(now, &msg, "firewall");
                    }
                }
                Ev::Deliver { msg, hops } => self.deliver(msg, hops, now)?,
                Ev::Initiate { id, src, dst } => self.initiate(id, src, dst, now)?,
                Ev::Revoke { ca, serial } => {
                    for m in self.pki.revoke(ca, serial, now)? {
                        self.send(m, now)?;
                    }
                }
                Ev::Broadcast { ca } => self.broadcast(ca, now)?,
            }
        }
        Ok(())
    }

    /// The verdict on payload `id` at its recipient, if one was reached.
    pub fn verdict(&self, id: u64) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.payload.id == id)
    }
}

// ---- scenario glue ----

/// A scenario shifted to one epoch offset, with its contact plan.
pub struct Epoch {
    pub scenario: Scenario,
    pub offset: f64,
    pub plan: ContactPlan,
}

impl Epoch {
    pub fn new(scenario: &Scenario, offset: f64) -> Self {
        let mut scenario = scenario.clone();
        scenario.set_epoch_offset(offset);
        let plan = ContactPlan::build(&scenario.network, scenario.spec.horizon_s, scenario.spec.dt_s);
        Epoch { scenario, offset, plan }
    }

    pub fn network(&self) -> &Network {
        &self.scenario.network
    }

    pub fn router(&self, memoize_points: bool) -> CachedRouter<'_, Network> {
        let net = self.network();
        CachedRouter::new(Router::with_forwarders(&self.plan, net, net.forwarders()), memoize_points)
    }
}

pub fn ca_directory(scenario: &Scenario, config: &PkiConfig) -> Result<CaDirectory, PkiError> {
    let net = &scenario.network;
    let segs = net.nodes.iter().map(|n| n.segment).collect();
    let relays: Vec<(NodeId, usize)> = net
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Relay)
        .map(|n| (n.id, n.segment))
        .collect();
    CaDirectory::new(config.ca_model, segs, &scenario.ca_hosts, &relays, config.relay_cas())
}

pub fn non_relay(net: &Network) -> Vec<NodeId> {
    net.nodes.iter().filter(|n| n.kind != NodeKind::Relay).map(|n| n.id).collect()
}

fn segment_index(net: &Network, name: &str) -> Result<usize, ExperimentError> {
    net.segment_index(name)
        .ok_or_else(|| ExperimentError::Invalid(format!("unknown segment '{name}'")))
}

/// Start-time offsets: the scenario's own, or one per distinct relay-state
/// vector (midpoint of its first run lasting at least `min_run_s`).
pub fn epoch_offsets(scenario: &Scenario, min_run_s: f64) -> Vec<f64> {
    if let Some(o) = &scenario.spec.epoch_offsets_s {
        return o.clone();
    }
    if !scenario.has_relays() {
        return vec![0.0];
    }
    let mut sc = scenario.clone();
    sc.set_epoch_offset(0.0);
    let dt = sc.spec.dt_s;
    let steps = (sc.spec.horizon_s / dt).floor() as usize;
    let states: Vec<Vec<bool>> = (0..steps)
        .map(|k| sc.network.relay_states(k as f64 * dt).into_iter().map(|r| r.1).collect())
        .collect();
    let mut chosen: Vec<(Vec<bool>, f64)> = Vec::new();
    let mut k = 0;
    while k < steps {
        let mut end = k;
        while end + 1 < steps && states[end + 1] == states[k] {
            end += 1;
        }
        let len = (end + 1 - k) as f64 * dt;
        if len >= min_run_s && !chosen.iter().any(|c| c.0 == states[k]) {
            let mid = ((k + end + 1) / 2) as f64 * dt;
            chosen.push((states[k].clone(), mid));
        }
        k = end + 1;
    }
    chosen.into_iter().map(|c| c.1).collect()
}

// ---- establishment ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Delivered,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstablishmentRecord {
    pub src: NodeId,
    pub dst: NodeId,
    pub epoch_offset: f64,
    pub t_send: f64,
    pub outcome: Outcome,
    pub latency: Option<f64>,
    /// Not applicable for CRL broadcast, where nothing is fetched on demand.
    pub overhead: Option<f64>,
    pub hops: Option<u32>,
    pub plain_latency: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct EstablishmentRun {
    pub records: Vec<EstablishmentRecord>,
    /// Control messages emitted in response to the authenticated sends.
    pub control_messages: usize,
    pub trace: Option<Vec<TraceRow>>,
}

/// Every ordered pair of `nodes` sends at `t_send`, all in one engine run.
pub fn establish_pairs<G: Geometry>(
    router: &mut CachedRouter<'_, G>,
    mut pki: Pki,
    nodes: &[NodeId],
    t_send: f64,
    epoch_offset: f64,
    trace: bool,
) -> Result<EstablishmentRun, ExperimentError> {
    let protocol = pki.config.protocol;
    if protocol == Protocol::CrlBroadcast {
        // every node holds the CRL of the latest round
        for &n in nodes {
            let ca = pki.dir.home_ca(n);
            pki.seed_crl(n, ca, t_send);
        }
    }
    let mut plain = BTreeMap::new();
    let mut world = World::new(pki, router);
    if trace {
        world.trace = Some(Vec::new());
    }
    if protocol == Protocol::CrlBroadcast {
        world.schedule_broadcasts(nodes.to_vec())?;
    }
    let mut id = 0u64;
    let mut ids = Vec::new();
    for &src in nodes {
        let tree = world.router.prefetch_tree(src, t_send);
        for &dst in nodes {
            if dst == src {
                continue;
            }
            let r = tree.route(dst);
            plain.insert(id, r.map(|r| (r.latency, r.hop_count)));
            if plain[&id].is_some() {
                world.initiate(id, src, dst, t_send)?;
            }
            ids.push((id, src, dst));
            id += 1;
        }
        world.router.clear_trees();
    }
    world.run()?;
    let mut by_id: BTreeMap<u64, &Verdict> = BTreeMap::new();
    for v in &world.verdicts {
        by_id.entry(v.payload.id).or_insert(v);
    }
    let records = ids
        .into_iter()
        .map(|(id, src, dst)| {
            let base = plain[&id].map(|p| p.0);
            let accepted = by_id.get(&id).filter(|v| v.decision == Decision::Accept);
            match (base, accepted) {
                (Some(pl), Some(v)) => {
                    let latency = v.time - t_send;
                    EstablishmentRecord {
                        src,
                        dst,
                        epoch_offset,
                        t_send,
                        outcome: Outcome::Delivered,
                        latency: Some(latency),
                        overhead: (protocol != Protocol::CrlBroadcast).then_some(latency - pl),
                        hops: Some(v.payload.hops),
                        plain_latency: Some(pl),
                    }
                }
                _ => EstablishmentRecord {
                    src,
                    dst,
                    epoch_offset,
                    t_send,
                    outcome: Outcome::Dropped,
                    latency: None,
                    overhead: None,
                    hops: None,
                    plain_latency: base,
                },
            }
        })
        .collect();
    Ok(EstablishmentRun {
        records,
        control_messages: world.control_messages,
        trace: world.trace.take(),
    })
}

/// Establishment over all non-relay pairs at t = 0 of each epoch offset
/// (`offsets` overrides the scenario's).
pub fn run_establishment(
    scenario: &Scenario,
    config: &PkiConfig,
    offsets: Option<&[f64]>,
) -> Result<EstablishmentRun, ExperimentError> {
    run_establishment_traced(scenario, config, offsets, false)
}

pub fn run_establishment_traced(
    scenario: &Scenario,
    config: &PkiConfig,
    offsets: Option<&[f64]>,
    trace: bool,
) -> Result<EstablishmentRun, ExperimentError> {
    config.validate()?;
    let offsets = match offsets {
        Some(o) => o.to_vec(),
        None => epoch_offsets(scenario, 120.0),
    };
    let mut all = EstablishmentRun::default();
    for off in offsets {
        let epoch = Epoch::new(scenario, off);
        let pki = Pki::new(*config, ca_directory(&epoch.scenario, config)?)?;
        let nodes = non_relay(epoch.network());
        let mut router = epoch.router(true);
        eprintln!(
            "establishment {} {} {} offset {off}: {} pairs",
            scenario.spec.name,
            config.protocol,
            config.ca_model,
            nodes.len() * nodes.len().saturating_sub(1)
        );
        let run = establish_pairs(&mut router, pki, &nodes, 0.0, off, trace)?;
        all.records.extend(run.records);
        all.control_messages += run.control_messages;
        if let Some(rows) = run.trace {
            all.trace.get_or_insert_with(Vec::new).extend(rows);
        }
    }
    Ok(all)
}

// ---- revocation ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevocationSpec {
    pub attacker_segment: String,
    pub origin_segment: String,
    pub cached: bool,
    /// Time of the revocation past the scenario epoch. The probe window is
    /// centred on it, so this picks the relay states the revocation meets.
    pub epoch_offset: f64,
    /// Bisection tolerance on the attacker's send time.
    pub tolerance_s: f64,
    /// False skips the coverage bisection (penetration only).
    pub coverage: bool,
}

impl RevocationSpec {
    pub fn new(attacker_segment: &str, origin_segment: &str, cached: bool) -> Self {
        RevocationSpec {
            attacker_segment: attacker_segment.to_string(),
            origin_segment: origin_segment.to_string(),
            cached,
            epoch_offset: 0.0,
            tolerance_s: 1e-3,
            coverage: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResult {
    pub segment: String,
    pub victims: usize,
    /// Latest accepted send time minus t0, over the segment's nodes. `None`
    /// when some node still accepts at the end of the window or coverage was skipped.
    pub coverage_s: Option<f64>,
    /// `None` when coverage was not measured.
    pub not_covered: Option<bool>,
    /// Nodes that accepted nothing anywhere in the window.
    pub fully_protected: usize,
    pub penetration: Option<f64>,
    pub penetration_attacker: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaReceipt {
    pub ca: CaId,
    pub host: NodeId,
    pub learned_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevocationRecord {
    pub scenario: String,
    pub config: PkiConfig,
    pub spec: RevocationSpec,
    pub attacker: NodeId,
    pub t0: f64,
    pub segments: Vec<SegmentResult>,
    /// When each CA learned of the revocation, for post-hoc coverage formulas.
    pub ca_receipts: Vec<CaReceipt>,
    /// Pairs whose acceptance was not monotone non-increasing in send time.
    pub monotonicity_violations: usize,
    pub probes: usize,
}

/// Runs isolated single-message worlds against one revocation.
pub struct Prober<'e, G> {
    router: CachedRouter<'e, G>,
    config: PkiConfig,
    dir: CaDirectory,
    origin: CaId,
    t0: f64,
    cached: bool,
    pub probes: usize,
}

impl<'e, G: Geometry> Prober<'e, G> {
    pub fn new(router: CachedRouter<'e, G>, config: PkiConfig, dir: CaDirectory, origin: CaId, t0: f64, cached: bool) -> Self {
        Prober {
            router,
            config,
            dir,
            origin,
            t0,
            cached,
            probes: 0,
        }
    }

    fn fresh_pki(&self, attacker: NodeId, victim: NodeId) -> Result<Pki, ExperimentError> {
        let mut pki = Pki::new(self.config, self.dir.clone())?;
        let p = self.config.protocol;
        if p == Protocol::CrlBroadcast {
            let ca = self.dir.home_ca(victim);
            pki.seed_crl(victim, ca, 0.0);
        }
        if self.cached {
            if matches!(p, Protocol::Crl | Protocol::CrlBroadcast) {
                let ca = self.dir.crl_authority(p, attacker, victim);
                pki.seed_crl(victim, ca, self.t0);
            } else {
                let ca = self.dir.answering_ca(p, attacker, victim);
                pki.seed_cached(victim, attacker.0, self.t0, ca);
            }
        }
        Ok(pki)
    }

    /// Whether `victim` accepts a message `attacker` sends at `t`.
    pub fn accepts(&mut self, attacker: NodeId, victim: NodeId, t: f64) -> Result<bool, ExperimentError> {
        self.probes += 1;
        let pki = self.fresh_pki(attacker, victim)?;
        let broadcast = self.config.protocol == Protocol::CrlBroadcast;
        let (origin, t0) = (self.origin, self.t0);
        let mut world = World::new(pki, &mut self.router);
        if broadcast {
            world.schedule_broadcasts(vec![victim])?;
        }
        world.schedule_revocation(origin, attacker.0, t0)?;
        world.schedule_initiate(1, attacker, victim, t)?;
        world.run()?;
        Ok(world.verdict(1).is_some_and(|v| v.decision == Decision::Accept))
    }

    /// When each CA learns of the revocation.
    pub fn ca_receipts(&mut self, serial: u32) -> Result<Vec<CaReceipt>, ExperimentError> {
        let pki = Pki::new(self.config, self.dir.clone())?;
        let mut world = World::new(pki, &mut self.router);
        world.schedule_revocation(self.origin, serial, self.t0)?;
        world.run()?;
        Ok(world
            .pki
            .dir
            .cas()
            .iter()
            .map(|c| CaReceipt {
                ca: c.id,
                host: c.host,
                learned_at: world.pki.ca_state(c.id).revoked.get(&serial).copied(),
            })
            .collect())
    }
}

/// Outcome of the threshold search for one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    /// Largest threshold found, absolute time; `None` when some victim
    /// still accepts at `t_max`.
    pub threshold: Option<f64>,
    pub fully_protected: usize,
    pub violations: usize,
}

/// Largest `sup{t : accepted}` over `victims`, bisecting on `[t_min, t_max]`.
/// A victim is only bisected when it accepts just above the best threshold
/// found so far, which leaves the maximum unchanged.
pub fn segment_coverage<G: Geometry>(
    prober: &mut Prober<'_, G>,
    attacker: NodeId,
    victims: &[NodeId],
    t_min: f64,
    t_max: f64,
    tol: f64,
) -> Result<Coverage, ExperimentError> {
    let mut best: Option<f64> = None;
    let mut fully_protected = 0;
    let mut violations = 0;
    for &v in victims {
        let at_min = prober.accepts(attacker, v, t_min)?;
        let at_max = prober.accepts(attacker, v, t_max)?;
        if at_max {
            if !at_min {
                violations += 1;
            }
            return Ok(Coverage {
                threshold: None,
                fully_protected,
                violations,
            });
        }
        if !at_min {
            fully_protected += 1;
            best = Some(best.map_or(t_min, |b: f64| b.max(t_min)));
            continue;
        }
        let mut lo = t_min;
        if let Some(b) = best {
            if b > t_min {
                if !prober.accepts(attacker, v, b + tol)? {
                    continue;
                }
                lo = b + tol;
            }
        }
        let mut hi = t_max;
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if prober.accepts(attacker, v, mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best = Some(best.map_or(lo, |b: f64| b.max(lo)));
    }
    Ok(Coverage {
        threshold: best,
        fully_protected,
        violations,
    })
}

fn ca_hosts(scenario: &Scenario) -> Vec<NodeId> {
    scenario.ca_hosts.clone()
}

/// First non-relay node of `segment` that hosts no CA.
pub fn coverage_attacker(scenario: &Scenario, segment: usize) -> Option<NodeId> {
    let hosts = ca_hosts(scenario);
    scenario
        .network
        .nodes
        .iter()
        .find(|n| n.segment == segment && n.kind != NodeKind::Relay && !hosts.contains(&n.id))
        .map(|n| n.id)
}

/// The node of `attacker_segment` farthest from the CA of `victim_segment` at `t`.
pub fn penetration_attacker(scenario: &Scenario, attacker_segment: usize, victim_segment: usize, t: f64) -> Option<NodeId> {
    let hosts = ca_hosts(scenario);
    let ca = hosts[victim_segment];
    let net = &scenario.network;
    let mut best: Option<(f64, NodeId)> = None;
    for n in &net.nodes {
        if n.segment != attacker_segment || n.kind == NodeKind::Relay || hosts.contains(&n.id) {
            continue;
        }
        let d = net.distance_km(ca, n.id, t);
        if best.map_or(true, |b| d > b.0) {
            best = Some((d, n.id));
        }
    }
    best.map(|b| b.1)
}

/// Revocation at t0 = horizon / 2 and the attacker's send time searched over
/// `[t0 - horizon/2, t0 + horizon/2]`.
pub fn run_revocation(scenario: &Scenario, config: &PkiConfig, spec: &RevocationSpec) -> Result<RevocationRecord, ExperimentError> {
    config.validate()?;
    let horizon = scenario.spec.horizon_s;
    let t0 = horizon / 2.0;
    let epoch = Epoch::new(scenario, spec.epoch_offset - t0);
    let sc = &epoch.scenario;
    let net = epoch.network();
    let att_seg = segment_index(net, &spec.attacker_segment)?;
    let origin_seg = segment_index(net, &spec.origin_segment)?;
    let dir = ca_directory(sc, config)?;
    let origin = dir.segment_ca(origin_seg);
    let attacker = coverage_attacker(sc, att_seg)
        .ok_or_else(|| ExperimentError::Invalid(format!("segment '{}' has no eligible attacker", spec.attacker_segment)))?;
    let mut prober = Prober::new(epoch.router(true), *config, dir, origin, t0, spec.cached);
    let ca_receipts = prober.ca_receipts(attacker.0)?;
    let mut segments = Vec::new();
    let mut violations = 0;
    for (s, name) in net.segment_names.iter().enumerate() {
        let victims: Vec<NodeId> = non_relay(net)
            .into_iter()
            .filter(|&n| net.node(n).segment == s && n != attacker)
            .collect();
        eprintln!(
            "revocation {} {} attacker {} origin {}: segment {name}, {} victims",
            sc.spec.name,
            config.protocol,
            spec.attacker_segment,
            spec.origin_segment,
            victims.len()
        );
        let cov = if spec.coverage {
            Some(segment_coverage(&mut prober, attacker, &victims, t0 - horizon / 2.0, t0 + horizon / 2.0, spec.tolerance_s)?)
        } else {
            None
        };
        violations += cov.as_ref().map_or(0, |c| c.violations);
        let (penetration, pen_attacker) = if spec.cached {
            let pa = penetration_attacker(sc, att_seg, s, t0)
                .ok_or_else(|| ExperimentError::Invalid(format!("segment '{}' has no eligible attacker", spec.attacker_segment)))?;
            let mut accepted = 0usize;
            let mut total = 0usize;
            for n in non_relay(net) {
                if net.node(n).segment != s || n == pa {
                    continue;
                }
                total += 1;
                if prober.accepts(pa, n, t0)? {
                    accepted += 1;
                }
            }
            (Some(if total == 0 { 0.0 } else { accepted as f64 / total as f64 }), Some(pa))
        } else {
            (None, None)
        };
        segments.push(SegmentResult {
            segment: name.clone(),
            victims: victims.len(),
            coverage_s: cov.as_ref().and_then(|c| c.threshold).map(|t| t - t0),
            not_covered: cov.as_ref().map(|c| c.threshold.is_none()),
            fully_protected: cov.as_ref().map_or(0, |c| c.fully_protected),
            penetration,
            penetration_attacker: pen_attacker,
        });
    }
    Ok(RevocationRecord {
        scenario: sc.spec.name.clone(),
        config: *config,
        spec: spec.clone(),
        attacker,
        t0,
        segments,
        ca_receipts,
        monotonicity_violations: violations,
        probes: prober.probes,
    })
}

// ---- sweeps ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Establishment,
    Revocation,
}

fn one_false() -> Vec<bool> {
    vec![false]
}

/// A grid of configurations; every combination is run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub scenario: String,
    pub experiment: ExperimentKind,
    pub protocols: Vec<Protocol>,
    pub ca_models: Vec<CaModel>,
    #[serde(default = "one_false")]
    pub subscribe: Vec<bool>,
    #[serde(default = "one_false")]
    pub firewall: Vec<bool>,
    #[serde(default = "one_false")]
    pub cached: Vec<bool>,
    /// Defaults to every segment.
    #[serde(default)]
    pub attacker_segments: Vec<String>,
    #[serde(default)]
    pub origin_segments: Vec<String>,
    /// Establishment: send-time offsets (default: the scenario's). Revocation:
    /// one run per offset (default: 0).
    #[serde(default)]
    pub epoch_offsets: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum SweepCell {
    Establishment { config: PkiConfig, run: EstablishmentRun },
    Revocation(RevocationRecord),
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// Combinations rejected by configuration invariants, with the reason.
    pub skipped: Vec<String>,
}

pub fn sweep(scenario: &Scenario, grid: &SweepGrid) -> Result<SweepResult, ExperimentError> {
    let mut out = SweepResult::default();
    let all_segments = scenario.network.segment_names.clone();
    let attackers = if grid.attacker_segments.is_empty() { all_segments.clone() } else { grid.attacker_segments.clone() };
    let origins = if grid.origin_segments.is_empty() { all_segments } else { grid.origin_segments.clone() };
    for &protocol in &grid.protocols {
        for &ca_model in &grid.ca_models {
            for &subscribe in &grid.subscribe {
                for &firewall in &grid.firewall {
                    let mut config = PkiConfig::new(protocol, ca_model);
                    config.subscribe = subscribe;
                    config.firewall = firewall;
                    if let Err(e) = config.validate() {
                        let msg = format!("{protocol} {ca_model} subscribe={subscribe} firewall={firewall}: {e}");
                        eprintln!("skipping {msg}");
                        out.skipped.push(msg);
                        continue;
                    }
                    match grid.experiment {
                        ExperimentKind::Establishment => {
                            let offs = (!grid.epoch_offsets.is_empty()).then_some(&grid.epoch_offsets[..]);
                            let run = run_establishment(scenario, &config, offs)?;
                            out.cells.push(SweepCell::Establishment { config, run });
                        }
                        ExperimentKind::Revocation => {
                            let offs = if grid.epoch_offsets.is_empty() { vec![0.0] } else { grid.epoch_offsets.clone() };
                            for &cached in &grid.cached {
                                for a in &attackers {
                                    for o in &origins {
                                        for &off in &offs {
                                            let mut spec = RevocationSpec::new(a, o, cached);
                                            spec.epoch_offset = off;
                                            out.cells.push(SweepCell::Revocation(run_revocation(scenario, &config, &spec)?));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

// ---- timelines ----

/// Relay-state samples on the grid: `states[k][r]` says whether relay `r`
/// links outside its segment at `k * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayTimeline {
    pub relays: Vec<NodeId>,
    pub dt: f64,
    pub states: Vec<Vec<bool>>,
}

pub fn relay_timeline(network: &Network, horizon: f64, dt: f64) -> RelayTimeline {
    let steps = (horizon / dt).ceil() as usize;
    let mut relays = Vec::new();
    let mut states = Vec::with_capacity(steps);
    for k in 0..steps {
        let s = network.relay_states(k as f64 * dt);
        if k == 0 {
            relays = s.iter().map(|r| r.0).collect();
        }
        states.push(s.into_iter().map(|r| r.1).collect());
    }
    RelayTimeline { relays, dt, states }
}

impl RelayTimeline {
    pub fn series(&self, relay: usize) -> Vec<bool> {
        self.states.iter().map(|s| s[relay]).collect()
    }
}

/// Lag in `[lo_s, hi_s]` maximizing the autocorrelation of the centred series.
pub fn autocorrelation_period(series: &[bool], dt: f64, lo_s: f64, hi_s: f64) -> Option<f64> {
    let n = series.len();
    let mean = series.iter().filter(|&&b| b).count() as f64 / n as f64;
    let x: Vec<f64> = series.iter().map(|&b| if b { 1.0 } else { 0.0 } - mean).collect();
    let lo = (lo_s / dt).ceil() as usize;
    let hi = ((hi_s / dt).floor() as usize).min(n.saturating_sub(1));
    let mut best: Option<(f64, usize)> = None;
    for lag in lo.max(1)..=hi {
        let m = n - lag;
        let r = (0..m).map(|i| x[i] * x[i + lag]).sum::<f64>() / m as f64;
        if best.map_or(true, |b| r > b.0) {
            best = Some((r, lag));
        }
    }
    best.map(|b| b.1 as f64 * dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionChange {
    Start,
    Merge,
    Split,
    Regroup,
}

/// Grid instants where the grouping of segments into connected components
/// changes, with the grouping after the change.
pub fn partition_timeline<G: Geometry>(plan: &ContactPlan, network: &Network, geom: &G) -> Vec<(f64, PartitionChange, Vec<Vec<String>>)> {
    let mut out: Vec<(f64, PartitionChange, Vec<Vec<String>>)> = Vec::new();
    for k in 0..plan.steps() {
        let part = network.partition_of(&plan.snapshot(k, geom));
        let groups = segment_groups(&part.labels, &network.segment_names);
        let change = match out.last() {
            None => PartitionChange::Start,
            Some(prev) if prev.2 == groups => continue,
            Some(prev) if groups.len() < prev.2.len() => PartitionChange::Merge,
            Some(prev) if groups.len() > prev.2.len() => PartitionChange::Split,
            Some(_) => PartitionChange::Regroup,
        };
        out.push((k as f64 * plan.dt(), change, groups));
    }
    out
}

// Segments joined whenever some component holds nodes of both.
fn segment_groups(labels: &BTreeMap<u32, BTreeMap<String, usize>>, names: &[String]) -> Vec<Vec<String>> {
    let mut parent: Vec<usize> = (0..names.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for segs in labels.values() {
        let idx: Vec<usize> = segs.keys().filter_map(|s| names.iter().position(|n| n == s)).collect();
        for w in idx.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for i in 0..names.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(names[i].clone());
    }
    groups.into_values().collect()
}
