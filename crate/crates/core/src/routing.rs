//! Oracle earliest-arrival routing over a gridded contact plan.
//!
//! Link availability is sampled on a fixed grid and held constant across each
//! grid step. Flight time over a link is the node separation at the departure
//! instant divided by `c`, so waiting is only ever useful when the link is
//! down. Ties in arrival time go to fewer hops, then to the lexicographically
//! smallest node sequence; a multi-label search keeps every
//! `(arrival, hops)`-Pareto label per node so the tie-break is exact.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::astro::C_KM_S;
use crate::topology::{AdjacencySnapshot, Link, Network, NodeId};

/// Node separation as a function of simulation time.
pub trait Geometry {
    fn distance_km(&self, a: NodeId, b: NodeId, t: f64) -> f64;
}

impl Geometry for Network {
    fn distance_km(&self, a: NodeId, b: NodeId, t: f64) -> f64 {
        self.ephemeris.distance(a.idx(), b.idx(), t + self.time_shift)
    }
}

#[derive(Debug, Clone)]
struct Edge {
    a: u32,
    b: u32,
    // half-open runs of active grid steps
    windows: Vec<(u32, u32)>,
}

/// Gridded link availability over `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct ContactPlan {
    dt: f64,
    horizon: f64,
    steps: u32,
    n_nodes: usize,
    edges: Vec<Edge>,
    adj_start: Vec<u32>,
    adj: Vec<(u32, u32)>,
}

impl ContactPlan {
    /// Builds a plan from `(a, b, step)` activity samples (any order, duplicates allowed).
    pub fn from_samples<I>(n_nodes: usize, dt: f64, horizon: f64, samples: I) -> Self
    where
        I: IntoIterator<Item = (NodeId, NodeId, u32)>,
    {
        assert!(dt > 0.0 && horizon > 0.0, "grid spacing and horizon must be positive");
        let steps = (horizon / dt).ceil() as u32;
        let mut raw: Vec<(u32, u32, u32)> = samples
            .into_iter()
            .filter(|&(a, b, k)| a != b && k < steps)
            .map(|(a, b, k)| if a.0 < b.0 { (a.0, b.0, k) } else { (b.0, a.0, k) })
            .collect();
        raw.sort_unstable();
        raw.dedup();
        let mut edges: Vec<Edge> = Vec::new();
        for (a, b, k) in raw {
            match edges.last_mut() {
                Some(e) if e.a == a && e.b == b => {
                    let last = e.windows.last_mut().expect("edges start with a window");
                    if last.1 == k {
                        last.1 = k + 1;
                    } else {
                        e.windows.push((k, k + 1));
                    }
                }
                _ => edges.push(Edge {
                    a,
                    b,
                    windows: vec![(k, k + 1)],
                }),
            }
        }
        let mut degree = vec![0u32; n_nodes + 1];
        for e in &edges {
            degree[e.a as usize] += 1;
            degree[e.b as usize] += 1;
        }
        let mut adj_start = vec![0u32; n_nodes + 1];
        for i in 0..n_nodes {
            adj_start[i + 1] = adj_start[i] + degree[i];
        }
        let mut fill = adj_start.clone();
        let mut adj = vec![(0u32, 0u32); adj_start[n_nodes] as usize];
        for (ei, e) in edges.iter().enumerate() {
            adj[fill[e.a as usize] as usize] = (e.b, ei as u32);
            fill[e.a as usize] += 1;
            adj[fill[e.b as usize] as usize] = (e.a, ei as u32);
            fill[e.b as usize] += 1;
        }
        ContactPlan {
            dt,
            horizon,
            steps,
            n_nodes,
            edges,
            adj_start,
            adj,
        }
    }

    /// Samples `network` at every grid point of `[0, horizon)`.
    pub fn build(network: &Network, horizon: f64, dt: f64) -> Self {
        let steps = (horizon / dt).ceil() as u32;
        let mut samples = Vec::new();
        for k in 0..steps {
            let snap = network.links_at(k as f64 * dt);
            samples.extend(snap.links.iter().map(|l| (l.a, l.b, k)));
        }
        Self::from_samples(network.len(), dt, horizon, samples)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn node_count(&self) -> usize {
        self.n_nodes
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn neighbors(&self, n: u32) -> &[(u32, u32)] {
        &self.adj[self.adj_start[n as usize] as usize..self.adj_start[n as usize + 1] as usize]
    }

    /// Grid step containing `t`.
    pub fn step_of(&self, t: f64) -> u32 {
        (t / self.dt).floor().max(0.0) as u32
    }

    pub fn is_active(&self, a: NodeId, b: NodeId, step: u32) -> bool {
        self.neighbors(a.0)
            .iter()
            .filter(|(v, _)| *v == b.0)
            .any(|(_, e)| self.edges[*e as usize].windows.iter().any(|w| w.0 <= step && step < w.1))
    }

    /// Earliest instant `>= t` at which edge `e` is up, if before the horizon.
    fn next_departure(&self, e: u32, t: f64) -> Option<f64> {
        if t >= self.horizon {
            return None;
        }
        let k = self.step_of(t);
        let windows = &self.edges[e as usize].windows;
        let i = windows.partition_point(|w| w.1 <= k);
        let w = windows.get(i)?;
        if w.0 <= k {
            Some(t)
        } else {
            Some(w.0 as f64 * self.dt)
        }
    }

    /// Active links at grid step `k` without distances.
    pub fn active_pairs(&self, k: u32) -> Vec<(NodeId, NodeId)> {
        self.edges
            .iter()
            .filter(|e| e.windows.iter().any(|w| w.0 <= k && k < w.1))
            .map(|e| (NodeId(e.a), NodeId(e.b)))
            .collect()
    }

    /// Snapshot at grid step `k` with distances from `geom`.
    pub fn snapshot<G: Geometry>(&self, k: u32, geom: &G) -> AdjacencySnapshot {
        let t = k as f64 * self.dt;
        AdjacencySnapshot {
            time: t,
            links: self
                .active_pairs(k)
                .into_iter()
                .map(|(a, b)| Link {
                    a,
                    b,
                    distance_km: geom.distance_km(a, b, t),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub node: NodeId,
    pub arrive: f64,
    pub depart: f64,
}

/// A timed path; the first hop's `arrive` is the send time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub hops: Vec<Hop>,
    pub latency: f64,
    pub hop_count: usize,
}

impl Route {
    pub fn trivial(node: NodeId, t: f64) -> Self {
        Route {
            hops: vec![Hop {
                node,
                arrive: t,
                depart: t,
            }],
            latency: 0.0,
            hop_count: 0,
        }
    }

    pub fn send_time(&self) -> f64 {
        self.hops[0].arrive
    }

    pub fn arrival(&self) -> f64 {
        self.hops.last().expect("routes are nonempty").arrive
    }

    pub fn source(&self) -> NodeId {
        self.hops[0].node
    }

    pub fn destination(&self) -> NodeId {
        self.hops.last().expect("routes are nonempty").node
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        self.hops.iter().map(|h| h.node).collect()
    }

    /// Appends `next`, which must start where and when `self` ends.
    pub fn concat(mut self, next: Route) -> Route {
        debug_assert_eq!(self.destination(), next.source());
        let send = self.send_time();
        let last = self.hops.last_mut().expect("routes are nonempty");
        last.depart = next.hops[0].depart;
        self.hops.extend_from_slice(&next.hops[1..]);
        self.hop_count += next.hop_count;
        self.latency = self.arrival() - send;
        self
    }
}

#[derive(Debug, Clone, Copy)]
struct Label {
    node: u32,
    hops: u32,
    parent: u32,
    arrival: f64,
    // departure instant from the parent node
    depart_parent: f64,
    alive: bool,
}

const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct HeapItem {
    arrival: f64,
    hops: u32,
    idx: u32,
}

impl PartialEq for HeapItem {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, o: &Self) -> Ordering {
        o.arrival
            .total_cmp(&self.arrival)
            .then_with(|| o.hops.cmp(&self.hops))
            .then_with(|| o.idx.cmp(&self.idx))
    }
}

/// Result of a one-to-all search.
#[derive(Debug, Clone)]
pub struct ArrivalTree {
    source: NodeId,
    send_time: f64,
    labels: Vec<Label>,
    best: Vec<u32>,
}

impl ArrivalTree {
    pub fn source(&self) -> NodeId {
        self.source
    }

    pub fn send_time(&self) -> f64 {
        self.send_time
    }

    pub fn arrival(&self, dst: NodeId) -> Option<f64> {
        match self.best.get(dst.idx()) {
            Some(&i) if i != NO_PARENT => Some(self.labels[i as usize].arrival),
            _ => None,
        }
    }

    pub fn route(&self, dst: NodeId) -> Option<Route> {
        let &best = self.best.get(dst.idx())?;
        if best == NO_PARENT {
            return None;
        }
        let mut chain = Vec::new();
        let mut i = best;
        while i != NO_PARENT {
            chain.push(self.labels[i as usize]);
            i = self.labels[i as usize].parent;
        }
        chain.reverse();
        let mut hops: Vec<Hop> = chain
            .iter()
            .map(|l| Hop {
                node: NodeId(l.node),
                arrive: l.arrival,
                depart: l.arrival,
            })
            .collect();
        for k in 1..chain.len() {
            hops[k - 1].depart = chain[k].depart_parent;
        }
        let arrival = hops.last().map(|h| h.arrive).unwrap_or(self.send_time);
        Some(Route {
            hop_count: hops.len() - 1,
            latency: arrival - self.send_time,
            hops,
        })
    }
}

// Node sequences from the source; both labels must have the same hop count,
// so walking up in lockstep meets at the common ancestor and the last
// differing pair seen is the first difference from the source.
fn path_cmp(labels: &[Label], a: u32, b: u32) -> Ordering {
    debug_assert_eq!(labels[a as usize].hops, labels[b as usize].hops);
    let (mut a, mut b) = (a, b);
    let mut first = Ordering::Equal;
    while a != b && a != NO_PARENT && b != NO_PARENT {
        let (la, lb) = (labels[a as usize], labels[b as usize]);
        if la.node != lb.node {
            first = la.node.cmp(&lb.node);
        }
        a = la.parent;
        b = lb.parent;
    }
    first
}

pub struct Router<'a, G> {
    plan: &'a ContactPlan,
    geom: &'a G,
    forwards: Vec<bool>,
}

impl<'a, G: Geometry> Router<'a, G> {
    /// Every node may forward.
    pub fn new(plan: &'a ContactPlan, geom: &'a G) -> Self {
        Router {
            plan,
            geom,
            forwards: vec![true; plan.node_count()],
        }
    }

    /// Only nodes flagged in `forwards` relay traffic for others.
    pub fn with_forwarders(plan: &'a ContactPlan, geom: &'a G, forwards: Vec<bool>) -> Self {
        assert_eq!(forwards.len(), plan.node_count());
        Router { plan, geom, forwards }
    }

    pub fn plan(&self) -> &ContactPlan {
        self.plan
    }

    fn search(&self, src: NodeId, t_send: f64, target: Option<NodeId>) -> ArrivalTree {
        let n = self.plan.node_count();
        let mut labels: Vec<Label> = Vec::with_capacity(4 * n);
        let mut at_node: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut best = vec![NO_PARENT; n];
        let mut heap = BinaryHeap::new();
        if t_send <= self.plan.horizon {
            labels.push(Label {
                node: src.0,
                hops: 0,
                parent: NO_PARENT,
                arrival: t_send,
                depart_parent: t_send,
                alive: true,
            });
            at_node[src.idx()].push(0);
            heap.push(HeapItem {
                arrival: t_send,
                hops: 0,
                idx: 0,
            });
        }
        while let Some(item) = heap.pop() {
            let cur = labels[item.idx as usize];
            if !cur.alive {
                continue;
            }
            let u = cur.node;
            if best[u as usize] == NO_PARENT {
                best[u as usize] = item.idx;
            }
            if Some(NodeId(u)) == target {
                break;
            }
            if u != src.0 && !self.forwards[u as usize] {
                continue;
            }
            for &(v, e) in self.plan.neighbors(u) {
                if v == src.0 {
                    continue;
                }
                // a point query only needs labels at forwarders and the target
                if target.is_some_and(|t| t.0 != v) && !self.forwards[v as usize] {
                    continue;
                }
                let Some(dep) = self.plan.next_departure(e, cur.arrival) else {
                    continue;
                };
                let arr = dep + self.geom.distance_km(NodeId(u), NodeId(v), dep) / C_KM_S;
                if arr > self.plan.horizon {
                    continue;
                }
                let hops = cur.hops + 1;
                let new_idx = labels.len() as u32;
                labels.push(Label {
                    node: v,
                    hops,
                    parent: item.idx,
                    arrival: arr,
                    depart_parent: dep,
                    alive: true,
                });
                let mut dominated = false;
                let mut killed = Vec::new();
                for (pos, &li) in at_node[v as usize].iter().enumerate() {
                    let l = labels[li as usize];
                    if l.arrival <= arr
                        && (l.hops < hops || (l.hops == hops && path_cmp(&labels, li, new_idx) != Ordering::Greater))
                    {
                        dominated = true;
                        break;
                    }
                    if arr <= l.arrival
                        && (hops < l.hops || (hops == l.hops && path_cmp(&labels, new_idx, li) == Ordering::Less))
                    {
                        killed.push(pos);
                    }
                }
                if dominated {
                    labels.pop();
                    continue;
                }
                for pos in killed.into_iter().rev() {
                    let li = at_node[v as usize].swap_remove(pos);
                    labels[li as usize].alive = false;
                }
                at_node[v as usize].push(new_idx);
                heap.push(HeapItem {
                    arrival: arr,
                    hops,
                    idx: new_idx,
                });
            }
        }
        ArrivalTree {
            source: src,
            send_time: t_send,
            labels,
            best,
        }
    }

    /// Earliest-arrival route, or `None` when nothing arrives by the horizon.
    pub fn earliest_arrival(&self, src: NodeId, dst: NodeId, t_send: f64) -> Option<Route> {
        if src == dst {
            return (t_send <= self.plan.horizon).then(|| Route::trivial(src, t_send));
        }
        self.search(src, t_send, Some(dst)).route(dst)
    }

    pub fn earliest_arrival_all(&self, src: NodeId, t_send: f64) -> ArrivalTree {
        self.search(src, t_send, None)
    }

    /// Route through `waypoint`: the second leg leaves when the first arrives.
    pub fn route_via(&self, src: NodeId, waypoint: NodeId, dst: NodeId, t_send: f64) -> Option<Route> {
        let first = self.earliest_arrival(src, waypoint, t_send)?;
        let second = self.earliest_arrival(waypoint, dst, first.arrival())?;
        Some(first.concat(second))
    }
}

/// Router with memoized answers, for workloads that repeat queries.
pub struct CachedRouter<'a, G> {
    router: Router<'a, G>,
    trees: HashMap<(u32, u64), Rc<ArrivalTree>>,
    points: Option<HashMap<(u32, u32, u64), Option<Route>>>,
}

impl<'a, G: Geometry> CachedRouter<'a, G> {
    pub fn new(router: Router<'a, G>, memoize_points: bool) -> Self {
        CachedRouter {
            router,
            trees: HashMap::new(),
            points: memoize_points.then(HashMap::new),
        }
    }

    pub fn router(&self) -> &Router<'a, G> {
        &self.router
    }

    /// Computes and keeps the one-to-all tree for `(src, t)`.
    pub fn prefetch_tree(&mut self, src: NodeId, t: f64) -> Rc<ArrivalTree> {
        self.trees
            .entry((src.0, t.to_bits()))
            .or_insert_with(|| Rc::new(self.router.earliest_arrival_all(src, t)))
            .clone()
    }

    pub fn clear_trees(&mut self) {
        self.trees.clear();
    }

    pub fn route(&mut self, src: NodeId, dst: NodeId, t: f64) -> Option<Route> {
        if src == dst {
            return self.router.earliest_arrival(src, dst, t);
        }
        if let Some(tree) = self.trees.get(&(src.0, t.to_bits())) {
            return tree.route(dst);
        }
        let key = (src.0, dst.0, t.to_bits());
        if let Some(points) = &self.points {
            if let Some(r) = points.get(&key) {
                return r.clone();
            }
        }
        let r = self.router.earliest_arrival(src, dst, t);
        if let Some(points) = &mut self.points {
            points.insert(key, r.clone());
        }
        r
    }
}
