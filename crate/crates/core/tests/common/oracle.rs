//! Small random contact plans and an exhaustive earliest-arrival search.

use ipnsim::astro::C_KM_S;
use ipnsim::routing::{ContactPlan, Geometry, Router};
use ipnsim::topology::NodeId;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const DT: f64 = 10.0;

pub struct Linear {
    p0: Vec<[f64; 3]>,
    v: Vec<[f64; 3]>,
}

impl Geometry for Linear {
    fn distance_km(&self, a: NodeId, b: NodeId, t: f64) -> f64 {
        let pa = self.p0[a.idx()];
        let pb = self.p0[b.idx()];
        let va = self.v[a.idx()];
        let vb = self.v[b.idx()];
        let mut s = 0.0;
        for k in 0..3 {
            let d = (pa[k] + va[k] * t) - (pb[k] + vb[k] * t);
            s += d * d;
        }
        s.sqrt()
    }
}

pub struct Instance {
    pub n: usize,
    pub steps: u32,
    pub geom: Linear,
    // active[a][b] = sorted active steps
    pub active: Vec<Vec<Vec<u32>>>,
    pub forwards: Vec<bool>,
}

impl Instance {
    pub fn horizon(&self) -> f64 {
        self.steps as f64 * DT
    }

    pub fn plan(&self) -> ContactPlan {
        let mut samples = Vec::new();
        for a in 0..self.n {
            for b in a + 1..self.n {
                for &k in &self.active[a][b] {
                    samples.push((NodeId(a as u32), NodeId(b as u32), k));
                }
            }
        }
        ContactPlan::from_samples(self.n, DT, self.horizon(), samples)
    }

    pub fn router<'a>(&'a self, plan: &'a ContactPlan) -> Router<'a, Linear> {
        Router::with_forwarders(plan, &self.geom, self.forwards.clone())
    }
}

/// Up to six nodes; with `endpoints`, roughly a third of them do not forward.
pub fn random_instance(rng: &mut ChaCha8Rng, steps: u32, endpoints: bool) -> Instance {
    let n = rng.gen_range(2..=6);
    let mut p0 = Vec::new();
    let mut v = Vec::new();
    for _ in 0..n {
        p0.push([0, 1, 2].map(|_| rng.gen_range(-1.5e6..1.5e6)));
        v.push([0, 1, 2].map(|_| rng.gen_range(-50.0..50.0)));
    }
    let mut active = vec![vec![Vec::new(); n]; n];
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(0.4) {
                continue;
            }
            let runs = rng.gen_range(1..=5);
            let mut ks = Vec::new();
            for _ in 0..runs {
                let start = rng.gen_range(0..steps);
                let len = rng.gen_range(1..=3);
                ks.extend(start..(start + len).min(steps));
            }
            ks.sort_unstable();
            ks.dedup();
            active[a][b] = ks.clone();
            active[b][a] = ks;
        }
    }
    let forwards = (0..n).map(|_| !endpoints || rng.gen_bool(0.66)).collect();
    Instance {
        n,
        steps,
        geom: Linear { p0, v },
        active,
        forwards,
    }
}

/// Best (arrival, hops, path) over every simple path and every departure choice.
pub fn brute_force(inst: &Instance, src: usize, dst: usize, t0: f64) -> Option<(f64, usize, Vec<usize>)> {
    let mut best = None;
    let mut path = vec![src];
    rec(inst, dst, t0, &mut path, &mut best);
    best
}

fn rec(inst: &Instance, dst: usize, t: f64, path: &mut Vec<usize>, best: &mut Option<(f64, usize, Vec<usize>)>) {
    let horizon = inst.horizon();
    let u = *path.last().unwrap();
    if u == dst {
        let cand = (t, path.len() - 1, path.clone());
        let better = match best {
            None => true,
            Some(b) => cand.0 < b.0 || (cand.0 == b.0 && (cand.1 < b.1 || (cand.1 == b.1 && cand.2 < b.2))),
        };
        if better {
            *best = Some(cand);
        }
        return;
    }
    if path.len() > 1 && !inst.forwards[u] {
        return;
    }
    for v in 0..inst.n {
        if path.contains(&v) || inst.active[u][v].is_empty() {
            continue;
        }
        let ks = &inst.active[u][v];
        let mut departures = Vec::new();
        let k_now = (t / DT).floor() as u32;
        if t < horizon && ks.contains(&k_now) {
            departures.push(t);
        }
        for &k in ks {
            let start = k as f64 * DT;
            if start > t {
                departures.push(start);
            }
        }
        for dep in departures {
            let arr = dep + inst.geom.distance_km(NodeId(u as u32), NodeId(v as u32), dep) / C_KM_S;
            if arr > horizon {
                continue;
            }
            path.push(v);
            rec(inst, dst, arr, path, best);
            path.pop();
        }
    }
}

pub struct OracleStats {
    pub instances: usize,
    pub delivered: usize,
    pub waited: usize,
    pub mismatches: Vec<String>,
}

/// Runs `count` seeded instances and compares router and oracle on one random query each.
pub fn check_router(seed: u64, count: usize, steps: u32, endpoints: bool) -> OracleStats {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = OracleStats {
        instances: count,
        delivered: 0,
        waited: 0,
        mismatches: Vec::new(),
    };
    for i in 0..count {
        let inst = random_instance(&mut rng, steps, endpoints);
        let plan = inst.plan();
        let router = inst.router(&plan);
        let src = rng.gen_range(0..inst.n);
        let mut dst = rng.gen_range(0..inst.n);
        if dst == src {
            dst = (src + 1) % inst.n;
        }
        let t0 = rng.gen_range(0.0..inst.horizon() * 0.8);
        let expected = brute_force(&inst, src, dst, t0);
        let got = router.earliest_arrival(NodeId(src as u32), NodeId(dst as u32), t0);
        match (&expected, &got) {
            (None, None) => {}
            (Some((arr, hops, path)), Some(route)) => {
                st.delivered += 1;
                let nodes: Vec<usize> = route.nodes().iter().map(|n| n.idx()).collect();
                if route.arrival() != *arr || route.hop_count != *hops || &nodes != path {
                    st.mismatches.push(format!("instance {i}: router {nodes:?} at {} vs {path:?} at {arr}", route.arrival()));
                }
                if route.hops.iter().any(|h| h.depart > h.arrive) {
                    st.waited += 1;
                }
            }
            _ => st.mismatches.push(format!("instance {i}: router {got:?} vs exhaustive {expected:?}")),
        }
    }
    st
}
