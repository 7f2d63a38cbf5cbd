//! Link availability (range, elevation, occlusion), adjacency snapshots and
//! segment partitions.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::astro::{Ephemeris, Placement, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Ground,
    Satellite,
    Relay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub body: usize,
    pub segment: usize,
    pub group: usize,
    /// Whether the node forwards traffic it neither sent nor receives.
    pub forwards: bool,
}

/// Allows links between members of two node groups (the same group for ISLs).
#[derive(Debug, Clone, PartialEq)]
pub struct LinkRule {
    pub group_a: usize,
    pub group_b: usize,
    pub max_range_km: Option<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("satellite position coincides with the ground station")]
    DegeneratePosition,
    #[error("invalid link rule: {0}")]
    InvalidRule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub distance_km: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencySnapshot {
    pub time: f64,
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPartition {
    pub time: f64,
    /// Component id per node; ids are the smallest node index in the component.
    pub component: Vec<u32>,
    /// Segment-label multiset per component id.
    pub labels: BTreeMap<u32, BTreeMap<String, usize>>,
}

impl SegmentPartition {
    pub fn component_count(&self) -> usize {
        self.labels.len()
    }

    /// True if some component holds nodes from every listed segment.
    pub fn spans(&self, segments: &[&str]) -> bool {
        self.labels
            .values()
            .any(|l| segments.iter().all(|s| l.contains_key(*s)))
    }
}

/// Elevation of `sat` above the local horizon of `ground`, degrees.
pub fn elevation_angle(ground: Vec3, sat: Vec3, body_center: Vec3) -> Result<f64, TopologyError> {
    let los = sat - ground;
    let range = los.norm();
    if range <= 1e-9 {
        return Err(TopologyError::DegeneratePosition);
    }
    let zenith = (ground - body_center).normalized();
    let s = (zenith.dot(los) / range).clamp(-1.0, 1.0);
    Ok(s.asin().to_degrees())
}

/// False iff the open segment `p1`-`p2` passes strictly within some occluder sphere.
pub fn line_of_sight<I>(p1: Vec3, p2: Vec3, occluders: I) -> bool
where
    I: IntoIterator<Item = (Vec3, f64)>,
{
    let d = p2 - p1;
    let len2 = d.dot(d);
    for (center, radius) in occluders {
        let s = if len2 > 0.0 {
            ((center - p1).dot(d) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let closest = p1 + d * s;
        if closest.distance(center) < radius {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub ephemeris: Ephemeris,
    pub rules: Vec<LinkRule>,
    pub segment_names: Vec<String>,
    pub group_names: Vec<String>,
    /// Added to simulation time before evaluating positions (epoch + offset).
    pub time_shift: f64,
    candidates: Vec<(u32, u32, u32)>,
}

impl Network {
    pub fn new(
        nodes: Vec<Node>,
        ephemeris: Ephemeris,
        rules: Vec<LinkRule>,
        segment_names: Vec<String>,
        group_names: Vec<String>,
    ) -> Result<Self, TopologyError> {
        let mut by_group: Vec<Vec<u32>> = vec![Vec::new(); group_names.len()];
        for n in &nodes {
            by_group[n.group].push(n.id.0);
        }
        let mut candidates = Vec::new();
        for (ri, r) in rules.iter().enumerate() {
            if r.group_a >= group_names.len() || r.group_b >= group_names.len() {
                return Err(TopologyError::InvalidRule(format!("rule {ri} names an unknown group")));
            }
            if let Some(m) = r.max_range_km {
                if !(m > 0.0) {
                    return Err(TopologyError::InvalidRule(format!("rule {ri}: max range must be positive")));
                }
            }
            let ground = |g: usize| {
                by_group[g]
                    .first()
                    .map(|&i| ephemeris.placements[i as usize].is_ground())
                    .unwrap_or(false)
            };
            if ground(r.group_a) && ground(r.group_b) {
                return Err(TopologyError::InvalidRule(format!(
                    "rule {ri}: ground-to-ground links are not allowed"
                )));
            }
            for &a in &by_group[r.group_a] {
                for &b in &by_group[r.group_b] {
                    if a == b || (r.group_a == r.group_b && a > b) {
                        continue;
                    }
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    candidates.push((lo, hi, ri as u32));
                }
            }
        }
        candidates.sort_unstable();
        candidates.dedup_by(|x, y| x.0 == y.0 && x.1 == y.1);
        Ok(Network {
            nodes,
            ephemeris,
            rules,
            segment_names,
            group_names,
            time_shift: 0.0,
            candidates,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.idx()]
    }

    pub fn segment_of(&self, id: NodeId) -> &str {
        &self.segment_names[self.nodes[id.idx()].segment]
    }

    pub fn segment_index(&self, name: &str) -> Option<usize> {
        self.segment_names.iter().position(|s| s == name)
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn candidate_pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.candidates.iter().map(|&(a, b, _)| (NodeId(a), NodeId(b)))
    }

    pub fn forwarders(&self) -> Vec<bool> {
        self.nodes.iter().map(|n| n.forwards).collect()
    }

    /// Root-frame positions of every node at simulation time `t`.
    pub fn positions(&self, t: f64) -> Vec<Vec3> {
        let abs = t + self.time_shift;
        let centers: Vec<Vec3> = (0..self.ephemeris.bodies.bodies().len())
            .map(|b| self.ephemeris.bodies.position(b, abs))
            .collect();
        (0..self.nodes.len())
            .map(|i| centers[self.ephemeris.placements[i].body()] + self.ephemeris.relative_position(i, abs))
            .collect()
    }

    fn body_spheres(&self, t: f64) -> Vec<(Vec3, f64)> {
        let abs = t + self.time_shift;
        self.ephemeris
            .bodies
            .bodies()
            .iter()
            .enumerate()
            .map(|(i, b)| (self.ephemeris.bodies.position(i, abs), b.radius_km))
            .collect()
    }

    fn pair_link(&self, a: usize, b: usize, rule: usize, pos: &[Vec3], spheres: &[(Vec3, f64)]) -> Option<f64> {
        let (pa, pb) = (pos[a], pos[b]);
        let dist = pa.distance(pb);
        if let Some(max) = self.rules[rule].max_range_km {
            if dist > max {
                return None;
            }
        }
        let mut skip = [usize::MAX; 2];
        for (k, (n, p, q)) in [(a, pa, pb), (b, pb, pa)].into_iter().enumerate() {
            if let Placement::Ground {
                body,
                min_elevation_deg,
                ..
            } = self.ephemeris.placements[n]
            {
                let elev = elevation_angle(p, q, spheres[body].0).ok()?;
                if elev < min_elevation_deg {
                    return None;
                }
                skip[k] = body;
            }
        }
        let occluders = spheres
            .iter()
            .enumerate()
            .filter(|(i, _)| !skip.contains(i))
            .map(|(_, s)| *s);
        line_of_sight(pa, pb, occluders).then_some(dist)
    }

    /// Links active at `t` among candidate pairs accepted by `filter`.
    pub fn links_at_where<F>(&self, t: f64, mut filter: F) -> AdjacencySnapshot
    where
        F: FnMut(NodeId, NodeId) -> bool,
    {
        let pos = self.positions(t);
        let spheres = self.body_spheres(t);
        let links = self
            .candidates
            .iter()
            .filter(|&&(a, b, _)| filter(NodeId(a), NodeId(b)))
            .filter_map(|&(a, b, r)| {
                self.pair_link(a as usize, b as usize, r as usize, &pos, &spheres)
                    .map(|d| Link {
                        a: NodeId(a),
                        b: NodeId(b),
                        distance_km: d,
                    })
            })
            .collect();
        AdjacencySnapshot { time: t, links }
    }

    pub fn links_at(&self, t: f64) -> AdjacencySnapshot {
        self.links_at_where(t, |_, _| true)
    }

    pub fn partition_of(&self, snap: &AdjacencySnapshot) -> SegmentPartition {
        let n = self.nodes.len();
        let mut parent: Vec<u32> = (0..n as u32).collect();
        fn find(p: &mut [u32], mut x: u32) -> u32 {
            while p[x as usize] != x {
                p[x as usize] = p[p[x as usize] as usize];
                x = p[x as usize];
            }
            x
        }
        for l in &snap.links {
            let (ra, rb) = (find(&mut parent, l.a.0), find(&mut parent, l.b.0));
            if ra != rb {
                // smaller index wins so ids are canonical
                let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                parent[hi as usize] = lo;
            }
        }
        let component: Vec<u32> = (0..n as u32).map(|i| find(&mut parent, i)).collect();
        let mut labels: BTreeMap<u32, BTreeMap<String, usize>> = BTreeMap::new();
        for (i, c) in component.iter().enumerate() {
            *labels
                .entry(*c)
                .or_default()
                .entry(self.segment_names[self.nodes[i].segment].clone())
                .or_default() += 1;
        }
        SegmentPartition {
            time: snap.time,
            component,
            labels,
        }
    }

    pub fn partition_at(&self, t: f64) -> SegmentPartition {
        self.partition_of(&self.links_at(t))
    }

    /// Relay nodes paired with whether each currently links outside its own segment.
    pub fn relay_states(&self, t: f64) -> Vec<(NodeId, bool)> {
        let relays: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Relay)
            .map(|n| n.id)
            .collect();
        let is_relay = |x: NodeId| self.nodes[x.idx()].kind == NodeKind::Relay;
        let snap = self.links_at_where(t, |a, b| {
            (is_relay(a) || is_relay(b)) && self.nodes[a.idx()].segment != self.nodes[b.idx()].segment
        });
        relays
            .into_iter()
            .map(|r| (r, snap.links.iter().any(|l| l.a == r || l.b == r)))
            .collect()
    }
}

/// Writes snapshots as `time,node_a,node_b,distance_km`.
pub fn write_contacts_csv<W: Write>(out: W, snapshots: &[AdjacencySnapshot]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "time,node_a,node_b,distance_km")?;
    for s in snapshots {
        for l in &s.links {
            writeln!(w, "{:.6},{},{},{:.6}", s.time, l.a.0, l.b.0, l.distance_km)?;
        }
    }
    w.flush()
}
