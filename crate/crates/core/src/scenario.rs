//! Scenario files: bodies, node groups, segments and link rules.
//!
//! Files are TOML with an optional `include = [...]` list. Included files are
//! merged first; the including file then overrides scalars and appends to
//! arrays of tables (`bodies`, `segments`, `groups`, `links`). Loading
//! expands every generator (Walker patterns, seeded placements, swarms,
//! relay periods) into explicit orbits and coordinates, so an expanded spec
//! serializes and reloads to the same value. The grammar is documented in
//! `docs/scenario-format.md`.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::astro::{
    generate_walker, kepler_semi_major_axis, Body, BodySystem, CircularOrbit, Ephemeris, GroundStationSpec,
    Placement, WalkerPattern, WalkerSpec,
};
use crate::topology::{LinkRule, Network, Node, NodeId, NodeKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{source_name}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        source_name: String,
        line: Option<usize>,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Validation(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub radius_km: f64,
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbit_radius_km: Option<f64>,
    #[serde(default)]
    pub phase_deg: f64,
    /// Defaults to the orbital period (tidal locking).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_period_s: Option<f64>,
    #[serde(default)]
    pub rotation_phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDef {
    pub name: String,
    /// Node (`group/index`) hosting the segment's certificate authority.
    pub ca_host: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum PlacementDef {
    SeededUniformSphere { count: usize, seed: u64 },
    /// `[latitude_deg, longitude_deg]` pairs.
    Explicit { count: usize, coordinates: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkerDef {
    pub total: usize,
    pub planes: usize,
    pub phasing: usize,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    pub pattern: WalkerPattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub altitude_km: Option<f64>,
    pub inclination_deg: f64,
    #[serde(default)]
    pub raan_deg: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

/// Seeded random circular orbits with uniform altitude and inclination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmDef {
    pub count: usize,
    pub seed: u64,
    pub altitude_km: [f64; 2],
    pub inclination_deg: [f64; 2],
}

/// A single orbit given by its period. With `align_with`, the ascending node
/// points at that body at the scenario epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelayDef {
    pub period_s: f64,
    #[serde(default)]
    pub inclination_deg: f64,
    #[serde(default)]
    pub raan_deg: f64,
    #[serde(default)]
    pub phase_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub align_with: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDef {
    pub name: String,
    pub segment: String,
    pub kind: NodeKind,
    pub body: String,
    /// Declared node count, checked after expansion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_elevation_deg: Option<f64>,
    /// Ground stations default to endpoints only; satellites and relays forward.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forwards: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<PlacementDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walker: Option<WalkerDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swarm: Option<SwarmDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relay: Option<RelayDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbits: Option<Vec<OrbitDef>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDef {
    pub between: [String; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_range_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub schema: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub epoch_s: f64,
    pub horizon_s: f64,
    pub dt_s: f64,
    /// Start-time shifts for establishment runs; derived from relay states when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_offsets_s: Option<Vec<f64>>,
    #[serde(default)]
    pub bodies: Vec<BodyDef>,
    #[serde(default)]
    pub segments: Vec<SegmentDef>,
    #[serde(default)]
    pub groups: Vec<GroupDef>,
    #[serde(default)]
    pub links: Vec<LinkDef>,
}

// ---- loading ----

const BUILTIN_FILES: &[(&str, &str)] = &[
    ("bodies.toml", include_str!("../scenarios/bodies.toml")),
    ("earth.toml", include_str!("../scenarios/earth.toml")),
    ("earth-gs.toml", include_str!("../scenarios/earth-gs.toml")),
    ("starlink-sats.toml", include_str!("../scenarios/starlink-sats.toml")),
    ("mpower-sats.toml", include_str!("../scenarios/mpower-sats.toml")),
    ("viasat-sats.toml", include_str!("../scenarios/viasat-sats.toml")),
    ("iridium-sats.toml", include_str!("../scenarios/iridium-sats.toml")),
    ("dsn.toml", include_str!("../scenarios/dsn.toml")),
    ("moon.toml", include_str!("../scenarios/moon.toml")),
    ("mars.toml", include_str!("../scenarios/mars.toml")),
    ("earth-moon-mars.toml", include_str!("../scenarios/earth-moon-mars.toml")),
    ("earth-mars.toml", include_str!("../scenarios/earth-mars.toml")),
    ("earth-moon.toml", include_str!("../scenarios/earth-moon.toml")),
    ("iridium.toml", include_str!("../scenarios/iridium.toml")),
    ("starlink.toml", include_str!("../scenarios/starlink.toml")),
    ("cubesat.toml", include_str!("../scenarios/cubesat.toml")),
    ("leo-leo.toml", include_str!("../scenarios/leo-leo.toml")),
    ("leo-meo.toml", include_str!("../scenarios/leo-meo.toml")),
    ("leo-geo.toml", include_str!("../scenarios/leo-geo.toml")),
    ("leo-meo-geo.toml", include_str!("../scenarios/leo-meo-geo.toml")),
];

/// Names of the built-in scenarios.
pub const BUILTIN_SCENARIOS: &[&str] = &[
    "earth-moon-mars",
    "earth-mars",
    "earth-moon",
    "iridium",
    "starlink",
    "cubesat",
    "leo-leo",
    "leo-meo",
    "leo-geo",
    "leo-meo-geo",
];

fn builtin_file(name: &str) -> Option<&'static str> {
    BUILTIN_FILES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

fn parse_error(source_name: &str, text: &str, err: toml::de::Error) -> ScenarioError {
    let line = err
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    ScenarioError::Parse {
        source_name: source_name.to_string(),
        line,
        message: err.message().to_string(),
    }
}

/// Merges `over` into `base`: tables recursively, arrays of tables appended, anything else replaced.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (Some(toml::Value::Array(b)), toml::Value::Array(o))
                if b.iter().chain(o.iter()).all(|x| x.is_table()) =>
            {
                b.extend(o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

enum Origin<'a> {
    Builtin,
    Dir(&'a Path),
}

fn resolve_include(name: &str, origin: &Origin) -> Result<(String, String), ScenarioError> {
    if let Origin::Dir(dir) = origin {
        let path = dir.join(name);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| ScenarioError::Io {
                path: path.clone(),
                source: e,
            })?;
            return Ok((path.display().to_string(), text));
        }
    }
    builtin_file(name)
        .map(|t| (name.to_string(), t.to_string()))
        .ok_or_else(|| ScenarioError::Validation(format!("include '{name}' not found")))
}

fn load_table(source_name: &str, text: &str, origin: &Origin, depth: usize) -> Result<toml::Table, ScenarioError> {
    if depth > 16 {
        return invalid(format!("{source_name}: include nesting too deep"));
    }
    let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_error(source_name, text, e))?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(toml::Value::Array(a)) => a
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                _ => invalid(format!("{source_name}: include entries must be strings")),
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return invalid(format!("{source_name}: include must be an array of file names")),
    };
    let mut merged = toml::Table::new();
    for inc in includes {
        let (name, inc_text) = resolve_include(&inc, origin)?;
        merge(&mut merged, load_table(&name, &inc_text, origin, depth + 1)?);
    }
    merge(&mut merged, table);
    Ok(merged)
}

fn parse_spec(source_name: &str, text: &str, origin: &Origin) -> Result<ScenarioSpec, ScenarioError> {
    let table = load_table(source_name, text, origin, 0)?;
    let raw: toml::Table = toml::from_str(text).map_err(|e| parse_error(source_name, text, e))?;
    if !raw.contains_key("include") {
        // no includes: deserialize the original text so errors point at its lines
        return toml::from_str(text).map_err(|e| parse_error(source_name, text, e));
    }
    table.try_into().map_err(|e: toml::de::Error| ScenarioError::Parse {
        source_name: source_name.to_string(),
        line: None,
        message: format!("{} (after includes)", e.message()),
    })
}

/// Parses and expands a scenario from text. Includes resolve against the
/// built-in files.
pub fn load_scenario_str(source_name: &str, text: &str) -> Result<ScenarioSpec, ScenarioError> {
    parse_spec(source_name, text, &Origin::Builtin)?.expand()
}

/// Parses and expands a scenario file. Includes resolve relative to the file,
/// then against the built-in files.
pub fn load_scenario_file(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_spec(&path.display().to_string(), &text, &Origin::Dir(dir))?.expand()
}

/// A built-in scenario by name, or a scenario file path.
pub fn load_scenario(name_or_path: &str) -> Result<ScenarioSpec, ScenarioError> {
    if BUILTIN_SCENARIOS.contains(&name_or_path) {
        let file = format!("{name_or_path}.toml");
        let text = builtin_file(&file).expect("every built-in scenario has a file");
        return load_scenario_str(&file, text);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return load_scenario_file(path);
    }
    Err(ScenarioError::UnknownScenario(name_or_path.to_string()))
}

// ---- expansion ----

fn check_unique<'a>(what: &str, names: impl Iterator<Item = &'a str>) -> Result<(), ScenarioError> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return invalid(format!("duplicate {what} name '{n}'"));
        }
    }
    Ok(())
}

fn orbit_def(o: &CircularOrbit) -> OrbitDef {
    OrbitDef {
        radius_km: Some(o.semi_major_axis_km),
        altitude_km: None,
        inclination_deg: o.inclination_rad.to_degrees(),
        raan_deg: o.raan_rad.to_degrees(),
        phase_deg: o.phase_rad.to_degrees(),
    }
}

impl ScenarioSpec {
    fn body_index(&self, name: &str) -> Result<usize, ScenarioError> {
        self.bodies
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| ScenarioError::Validation(format!("unknown body '{name}'")))
    }

    pub fn body_system(&self) -> Result<BodySystem, ScenarioError> {
        let mut bodies = Vec::with_capacity(self.bodies.len());
        for b in &self.bodies {
            let parent = b.parent.as_deref().map(|p| self.body_index(p)).transpose()?;
            let orbit = match (parent, b.orbit_radius_km) {
                (Some(p), Some(r)) => Some(CircularOrbit::new(
                    r,
                    0.0,
                    0.0,
                    b.phase_deg.to_radians(),
                    self.bodies[p].mu,
                )),
                (Some(_), None) => return invalid(format!("body '{}' has a parent but no orbit_radius_km", b.name)),
                (None, Some(_)) => return invalid(format!("body '{}' has an orbit but no parent", b.name)),
                (None, None) => None,
            };
            let rotation_period_s = match (b.rotation_period_s, &orbit) {
                (Some(p), _) => p,
                (None, Some(o)) => o.period_s,
                (None, None) => return invalid(format!("body '{}' needs rotation_period_s", b.name)),
            };
            bodies.push(Body {
                name: b.name.clone(),
                radius_km: b.radius_km,
                mu: b.mu,
                parent,
                orbit,
                rotation_period_s,
                rotation_phase_rad: b.rotation_phase_deg.to_radians(),
            });
        }
        BodySystem::new(bodies).map_err(|e| ScenarioError::Validation(e.to_string()))
    }

    fn expand_group(&self, g: &GroupDef, system: &BodySystem) -> Result<GroupDef, ScenarioError> {
        let body_idx = self.body_index(&g.body)?;
        let body = system.get(body_idx);
        let generators = [g.placement.is_some(), g.walker.is_some(), g.swarm.is_some(), g.relay.is_some(), g.orbits.is_some()]
            .iter()
            .filter(|x| **x)
            .count();
        if generators != 1 {
            return invalid(format!(
                "group '{}' needs exactly one of placement, walker, swarm, relay, orbits",
                g.name
            ));
        }
        let mut out = GroupDef {
            placement: None,
            walker: None,
            swarm: None,
            relay: None,
            orbits: None,
            ..g.clone()
        };
        let produced = if g.kind == NodeKind::Ground {
            let Some(placement) = &g.placement else {
                return invalid(format!("ground group '{}' needs a placement", g.name));
            };
            match g.min_elevation_deg {
                Some(e) if (0.0..90.0).contains(&e) => {}
                _ => return invalid(format!("ground group '{}' needs min_elevation_deg in [0, 90)", g.name)),
            }
            let coordinates = match placement {
                PlacementDef::Explicit { count, coordinates } => {
                    if *count != coordinates.len() {
                        return invalid(format!(
                            "group '{}' declares {count} stations but lists {} coordinates",
                            g.name,
                            coordinates.len()
                        ));
                    }
                    if let Some(c) = coordinates.iter().find(|c| !(c[0].abs() <= 90.0) || !c[1].is_finite()) {
                        return invalid(format!("group '{}': bad coordinate {:?}", g.name, c));
                    }
                    coordinates.clone()
                }
                PlacementDef::SeededUniformSphere { count, seed } => seeded_sphere(*count, *seed),
            };
            let n = coordinates.len();
            out.placement = Some(PlacementDef::Explicit { count: n, coordinates });
            n
        } else {
            if g.placement.is_some() || g.min_elevation_deg.is_some() {
                return invalid(format!("orbiting group '{}' cannot have a placement or elevation mask", g.name));
            }
            let orbits: Vec<OrbitDef> = if let Some(w) = &g.walker {
                let spec = WalkerSpec {
                    total: w.total,
                    planes: w.planes,
                    phasing: w.phasing,
                    altitude_km: w.altitude_km,
                    inclination_rad: w.inclination_deg.to_radians(),
                    pattern: w.pattern,
                };
                generate_walker(&spec, body)
                    .map_err(|e| ScenarioError::Validation(format!("group '{}': {e}", g.name)))?
                    .iter()
                    .map(orbit_def)
                    .collect()
            } else if let Some(s) = &g.swarm {
                if !(s.altitude_km[0] > 0.0 && s.altitude_km[0] <= s.altitude_km[1])
                    || !(s.inclination_deg[0] <= s.inclination_deg[1])
                {
                    return invalid(format!("group '{}': swarm ranges must be ordered and positive", g.name));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                (0..s.count)
                    .map(|_| {
                        let alt = rng.gen_range(s.altitude_km[0]..=s.altitude_km[1]);
                        let inc = rng.gen_range(s.inclination_deg[0]..=s.inclination_deg[1]);
                        let raan = rng.gen_range(0.0..360.0);
                        let phase = rng.gen_range(0.0..360.0);
                        OrbitDef {
                            radius_km: Some(body.radius_km + alt),
                            altitude_km: None,
                            inclination_deg: inc,
                            raan_deg: raan,
                            phase_deg: phase,
                        }
                    })
                    .collect()
            } else if let Some(r) = &g.relay {
                if !(r.period_s > 0.0) {
                    return invalid(format!("group '{}': relay period must be positive", g.name));
                }
                let raan_deg = match &r.align_with {
                    None => r.raan_deg,
                    Some(target) => {
                        let ti = self.body_index(target)?;
                        let d = system.position(ti, self.epoch_s) - system.position(body_idx, self.epoch_s);
                        d.y.atan2(d.x).to_degrees()
                    }
                };
                vec![OrbitDef {
                    radius_km: Some(kepler_semi_major_axis(r.period_s, body.mu)),
                    altitude_km: None,
                    inclination_deg: r.inclination_deg,
                    raan_deg,
                    phase_deg: r.phase_deg,
                }]
            } else {
                let explicit = g.orbits.as_ref().expect("one generator is present");
                explicit
                    .iter()
                    .map(|o| {
                        let radius = match (o.radius_km, o.altitude_km) {
                            (Some(r), None) => r,
                            (None, Some(a)) => body.radius_km + a,
                            _ => return invalid(format!("group '{}': give radius_km or altitude_km", g.name)),
                        };
                        Ok(OrbitDef {
                            radius_km: Some(radius),
                            altitude_km: None,
                            ..o.clone()
                        })
                    })
                    .collect::<Result<_, _>>()?
            };
            for o in &orbits {
                let r = o.radius_km.expect("expanded orbits carry a radius");
                if !(r > body.radius_km) {
                    return invalid(format!("group '{}': orbit radius {r} km is inside {}", g.name, body.name));
                }
            }
            let n = orbits.len();
            out.orbits = Some(orbits);
            n
        };
        if let Some(c) = g.count {
            if c != produced {
                return invalid(format!("group '{}' declares {c} nodes but expands to {produced}", g.name));
            }
        }
        out.count = Some(produced);
        Ok(out)
    }

    /// Checks every invariant and instantiates all generators.
    pub fn expand(&self) -> Result<ScenarioSpec, ScenarioError> {
        if self.schema != SCHEMA_VERSION {
            return invalid(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema));
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return invalid("horizon_s must be positive");
        }
        if !(self.dt_s > 0.0 && self.dt_s <= self.horizon_s) {
            return invalid("dt_s must be positive and no longer than the horizon");
        }
        if !self.epoch_s.is_finite() {
            return invalid("epoch_s must be finite");
        }
        if let Some(offs) = &self.epoch_offsets_s {
            if offs.is_empty() || offs.iter().any(|o| !o.is_finite()) {
                return invalid("epoch_offsets_s must be a nonempty list of finite values");
            }
        }
        check_unique("body", self.bodies.iter().map(|b| b.name.as_str()))?;
        check_unique("segment", self.segments.iter().map(|s| s.name.as_str()))?;
        check_unique("group", self.groups.iter().map(|g| g.name.as_str()))?;
        if self.groups.is_empty() {
            return invalid("scenario has no node groups");
        }
        let system = self.body_system()?;
        let mut groups = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            if !self.segments.iter().any(|s| s.name == g.segment) {
                return invalid(format!("group '{}' names unknown segment '{}'", g.name, g.segment));
            }
            groups.push(self.expand_group(g, &system)?);
        }
        for s in &self.segments {
            let (group, idx) = split_node_name(&s.ca_host)
                .ok_or_else(|| ScenarioError::Validation(format!("ca_host '{}' is not 'group/index'", s.ca_host)))?;
            let Some(g) = groups.iter().find(|g| g.name == group) else {
                return invalid(format!("ca_host '{}' names unknown group", s.ca_host));
            };
            if idx >= g.count.unwrap_or(0) {
                return invalid(format!("ca_host '{}' is out of range", s.ca_host));
            }
            if g.segment != s.name {
                return invalid(format!("ca_host '{}' is not in segment '{}'", s.ca_host, s.name));
            }
        }
        for l in &self.links {
            for end in &l.between {
                if !self.groups.iter().any(|g| &g.name == end) {
                    return invalid(format!("link names unknown group '{end}'"));
                }
            }
        }
        let expanded = ScenarioSpec {
            groups,
            ..self.clone()
        };
        // topology invariants (ground-to-ground rules, ranges)
        expanded.build_network()?;
        Ok(expanded)
    }

    fn build_network(&self) -> Result<Network, ScenarioError> {
        let system = self.body_system()?;
        let mut nodes = Vec::new();
        let mut placements = Vec::new();
        for (gi, g) in self.groups.iter().enumerate() {
            let body_idx = self.body_index(&g.body)?;
            let body = system.get(body_idx);
            let segment = self
                .segments
                .iter()
                .position(|s| s.name == g.segment)
                .ok_or_else(|| ScenarioError::Validation(format!("unknown segment '{}'", g.segment)))?;
            let forwards = g.forwards.unwrap_or(g.kind != NodeKind::Ground);
            let mut push = |placement: Placement, k: usize| {
                nodes.push(Node {
                    id: NodeId(nodes.len() as u32),
                    name: format!("{}/{}", g.name, k),
                    kind: g.kind,
                    body: body_idx,
                    segment,
                    group: gi,
                    forwards,
                });
                placements.push(placement);
            };
            match (&g.placement, &g.orbits) {
                (Some(PlacementDef::Explicit { coordinates, .. }), None) => {
                    for (k, c) in coordinates.iter().enumerate() {
                        let gs = GroundStationSpec {
                            body: body_idx,
                            latitude_rad: c[0].to_radians(),
                            longitude_rad: c[1].to_radians(),
                            min_elevation_deg: g.min_elevation_deg.unwrap_or(0.0),
                        };
                        push(Placement::ground(&gs, body.radius_km), k);
                    }
                }
                (None, Some(orbits)) => {
                    for (k, o) in orbits.iter().enumerate() {
                        let r = o
                            .radius_km
                            .ok_or_else(|| ScenarioError::Validation(format!("group '{}' is not expanded", g.name)))?;
                        let orbit = CircularOrbit::new(
                            r,
                            o.inclination_deg.to_radians(),
                            o.raan_deg.to_radians(),
                            o.phase_deg.to_radians(),
                            body.mu,
                        );
                        push(Placement::Orbit { body: body_idx, orbit }, k);
                    }
                }
                _ => return invalid(format!("group '{}' is not expanded", g.name)),
            }
        }
        let group_idx = |n: &str| self.groups.iter().position(|g| g.name == n);
        let rules = self
            .links
            .iter()
            .map(|l| {
                Ok(LinkRule {
                    group_a: group_idx(&l.between[0])
                        .ok_or_else(|| ScenarioError::Validation(format!("unknown group '{}'", l.between[0])))?,
                    group_b: group_idx(&l.between[1])
                        .ok_or_else(|| ScenarioError::Validation(format!("unknown group '{}'", l.between[1])))?,
                    max_range_km: l.max_range_km,
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let mut net = Network::new(
            nodes,
            Ephemeris::new(system, placements),
            rules,
            self.segments.iter().map(|s| s.name.clone()).collect(),
            self.groups.iter().map(|g| g.name.clone()).collect(),
        )
        .map_err(|e| ScenarioError::Validation(e.to_string()))?;
        net.time_shift = self.epoch_s;
        Ok(net)
    }

    /// Serializes the expanded scenario as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario specs always serialize")
    }

    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        let spec = self.expand()?;
        let network = spec.build_network()?;
        let ca_hosts = spec
            .segments
            .iter()
            .map(|s| network.node_by_name(&s.ca_host).expect("validated ca_host"))
            .collect();
        Ok(Scenario { spec, network, ca_hosts })
    }
}

fn split_node_name(name: &str) -> Option<(&str, usize)> {
    let (g, i) = name.rsplit_once('/')?;
    Some((g, i.parse().ok()?))
}

/// `count` points uniform on the sphere as `[latitude_deg, longitude_deg]`.
pub fn seeded_sphere(count: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let lon: f64 = rng.gen_range(0.0..TAU);
            [z.asin().to_degrees(), lon.to_degrees() - 180.0]
        })
        .collect()
}

/// An expanded scenario with its network.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub network: Network,
    /// CA host per segment, in segment order.
    pub ca_hosts: Vec<NodeId>,
}

impl Scenario {
    pub fn set_epoch_offset(&mut self, offset_s: f64) {
        self.network.time_shift = self.spec.epoch_s + offset_s;
    }

    pub fn segment_names(&self) -> &[String] {
        &self.network.segment_names
    }

    /// Node counts keyed by `(segment, kind)`.
    pub fn census(&self) -> BTreeMap<(String, NodeKind), usize> {
        let mut out = BTreeMap::new();
        for n in &self.network.nodes {
            *out.entry((self.network.segment_names[n.segment].clone(), n.kind)).or_insert(0) += 1;
        }
        out
    }

    pub fn has_relays(&self) -> bool {
        self.network.nodes.iter().any(|n| n.kind == NodeKind::Relay)
    }
}
