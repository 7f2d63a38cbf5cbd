//! Body ephemerides, circular orbits, Walker constellations and ground stations.
//!
//! Everything is expressed in one inertial Cartesian frame (km) with the root
//! body at the origin. Every body spins about the frame's z axis; orbit
//! inclinations are measured from the xy plane.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light, km/s.
pub const C_KM_S: f64 = 299_792.458;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AstroError {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("unknown body {0}")]
    UnknownBody(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Rotation about +z by `angle` radians.
    pub fn rotate_z(self, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Period of a circular orbit of radius `a_km` about a body with parameter `mu`.
pub fn kepler_period(a_km: f64, mu: f64) -> f64 {
    TAU * (a_km.powi(3) / mu).sqrt()
}

/// Orbit radius giving `period_s` about a body with parameter `mu`.
pub fn kepler_semi_major_axis(period_s: f64, mu: f64) -> f64 {
    (mu * period_s * period_s / (4.0 * PI * PI)).cbrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircularOrbit {
    pub semi_major_axis_km: f64,
    pub inclination_rad: f64,
    pub raan_rad: f64,
    pub phase_rad: f64,
    pub period_s: f64,
    // in-plane basis: p toward the ascending node, q 90 degrees ahead
    p: Vec3,
    q: Vec3,
}

impl CircularOrbit {
    pub fn new(
        semi_major_axis_km: f64,
        inclination_rad: f64,
        raan_rad: f64,
        phase_rad: f64,
        parent_mu: f64,
    ) -> Self {
        let (si, ci) = inclination_rad.sin_cos();
        let (so, co) = raan_rad.sin_cos();
        CircularOrbit {
            semi_major_axis_km,
            inclination_rad,
            raan_rad,
            phase_rad,
            period_s: kepler_period(semi_major_axis_km, parent_mu),
            p: Vec3::new(co, so, 0.0),
            q: Vec3::new(-so * ci, co * ci, si),
        }
    }

    pub fn mean_motion(&self) -> f64 {
        TAU / self.period_s
    }

    /// Position relative to the parent body's centre.
    pub fn position(&self, t: f64) -> Vec3 {
        let u = self.phase_rad + self.mean_motion() * t;
        let (s, c) = u.sin_cos();
        (self.p * c + self.q * s) * self.semi_major_axis_km
    }

    /// Unit normal of the orbital plane.
    pub fn normal(&self) -> Vec3 {
        self.p.cross(self.q)
    }

    pub fn check(&self, parent_radius: f64, parent_mu: f64) -> Result<(), AstroError> {
        if !(self.semi_major_axis_km > parent_radius) {
            return Err(AstroError::InvalidSpec(format!(
                "orbit radius {} km is inside the parent body (radius {} km)",
                self.semi_major_axis_km, parent_radius
            )));
        }
        let expected = kepler_period(self.semi_major_axis_km, parent_mu);
        if !(self.period_s > 0.0) || ((self.period_s - expected) / expected).abs() > 1e-6 {
            return Err(AstroError::InvalidSpec(format!(
                "period {} s inconsistent with radius {} km",
                self.period_s, self.semi_major_axis_km
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub name: String,
    pub radius_km: f64,
    pub mu: f64,
    pub parent: Option<usize>,
    pub orbit: Option<CircularOrbit>,
    pub rotation_period_s: f64,
    pub rotation_phase_rad: f64,
}

impl Body {
    pub fn rotation_angle(&self, t: f64) -> f64 {
        self.rotation_phase_rad + TAU * t / self.rotation_period_s
    }
}

/// A validated tree of bodies rooted at index 0's ancestor.
#[derive(Debug, Clone, PartialEq)]
pub struct BodySystem {
    bodies: Vec<Body>,
}

impl BodySystem {
    pub fn new(bodies: Vec<Body>) -> Result<Self, AstroError> {
        let roots = bodies.iter().filter(|b| b.parent.is_none()).count();
        if roots != 1 {
            return Err(AstroError::InvalidSpec(format!(
                "expected exactly one root body, found {roots}"
            )));
        }
        for (i, b) in bodies.iter().enumerate() {
            if !(b.radius_km > 0.0) || !(b.mu > 0.0) {
                return Err(AstroError::InvalidSpec(format!(
                    "body {} needs positive radius and mu",
                    b.name
                )));
            }
            if !(b.rotation_period_s > 0.0) {
                return Err(AstroError::InvalidSpec(format!(
                    "body {} needs a positive rotation period",
                    b.name
                )));
            }
            // walk the parent chain; more than n steps means a cycle
            let mut cur = i;
            let mut steps = 0;
            while let Some(p) = bodies[cur].parent {
                if p >= bodies.len() {
                    return Err(AstroError::InvalidSpec(format!("body {} has a bad parent", b.name)));
                }
                cur = p;
                steps += 1;
                if steps > bodies.len() {
                    return Err(AstroError::InvalidSpec(format!(
                        "parent chain of {} is cyclic",
                        b.name
                    )));
                }
            }
            match (b.parent, &b.orbit) {
                (Some(p), Some(o)) => o.check(bodies[p].radius_km, bodies[p].mu)?,
                (Some(_), None) => {
                    return Err(AstroError::InvalidSpec(format!("body {} has a parent but no orbit", b.name)))
                }
                (None, Some(_)) => {
                    return Err(AstroError::InvalidSpec(format!("root body {} cannot orbit", b.name)))
                }
                (None, None) => {}
            }
        }
        Ok(BodySystem { bodies })
    }

    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    pub fn get(&self, i: usize) -> &Body {
        &self.bodies[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.name == name)
    }

    /// Centre of body `i` in the root frame.
    pub fn position(&self, i: usize, t: f64) -> Vec3 {
        let mut pos = Vec3::ZERO;
        let mut cur = i;
        while let (Some(p), Some(o)) = (self.bodies[cur].parent, &self.bodies[cur].orbit) {
            pos = pos + o.position(t);
            cur = p;
        }
        pos
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WalkerPattern {
    Delta,
    Star,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkerSpec {
    pub total: usize,
    pub planes: usize,
    pub phasing: usize,
    pub altitude_km: f64,
    pub inclination_rad: f64,
    pub pattern: WalkerPattern,
}

impl WalkerSpec {
    pub fn validate(&self) -> Result<(), AstroError> {
        if self.planes == 0 || self.total == 0 || self.total % self.planes != 0 {
            return Err(AstroError::InvalidSpec(format!(
                "walker: {} planes do not divide {} satellites",
                self.planes, self.total
            )));
        }
        if self.phasing >= self.planes {
            return Err(AstroError::InvalidSpec(format!(
                "walker: phasing {} must be below the plane count {}",
                self.phasing, self.planes
            )));
        }
        if !(self.altitude_km > 0.0) {
            return Err(AstroError::InvalidSpec("walker: altitude must be positive".into()));
        }
        Ok(())
    }
}

/// Expands a Walker pattern into `total` circular orbits, plane by plane.
pub fn generate_walker(spec: &WalkerSpec, parent: &Body) -> Result<Vec<CircularOrbit>, AstroError> {
    spec.validate()?;
    let per_plane = spec.total / spec.planes;
    let raan_spread = match spec.pattern {
        WalkerPattern::Delta => TAU,
        WalkerPattern::Star => PI,
    };
    let raan_step = raan_spread / spec.planes as f64;
    let slot_step = TAU / per_plane as f64;
    let plane_offset = spec.phasing as f64 * TAU / spec.total as f64;
    let a = parent.radius_km + spec.altitude_km;
    let mut out = Vec::with_capacity(spec.total);
    for plane in 0..spec.planes {
        for slot in 0..per_plane {
            let phase = (slot as f64 * slot_step + plane as f64 * plane_offset).rem_euclid(TAU);
            out.push(CircularOrbit::new(
                a,
                spec.inclination_rad,
                plane as f64 * raan_step,
                phase,
                parent.mu,
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundStationSpec {
    pub body: usize,
    pub latitude_rad: f64,
    pub longitude_rad: f64,
    pub min_elevation_deg: f64,
}

impl GroundStationSpec {
    pub fn body_fixed_unit(&self) -> Vec3 {
        let (sl, cl) = self.latitude_rad.sin_cos();
        let (so, co) = self.longitude_rad.sin_cos();
        Vec3::new(cl * co, cl * so, sl)
    }
}

/// Where a node lives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    Ground {
        body: usize,
        // body-fixed position, km
        fixed: Vec3,
        min_elevation_deg: f64,
    },
    Orbit {
        body: usize,
        orbit: CircularOrbit,
    },
}

impl Placement {
    pub fn ground(gs: &GroundStationSpec, radius_km: f64) -> Self {
        Placement::Ground {
            body: gs.body,
            fixed: gs.body_fixed_unit() * radius_km,
            min_elevation_deg: gs.min_elevation_deg,
        }
    }

    pub fn body(&self) -> usize {
        match self {
            Placement::Ground { body, .. } | Placement::Orbit { body, .. } => *body,
        }
    }

    pub fn is_ground(&self) -> bool {
        matches!(self, Placement::Ground { .. })
    }
}

/// Body system plus the placement of every node; answers position queries.
#[derive(Debug, Clone)]
pub struct Ephemeris {
    pub bodies: BodySystem,
    pub placements: Vec<Placement>,
}

impl Ephemeris {
    pub fn new(bodies: BodySystem, placements: Vec<Placement>) -> Self {
        Ephemeris { bodies, placements }
    }

    /// Position of `node` relative to its host body's centre.
    pub fn relative_position(&self, node: usize, t: f64) -> Vec3 {
        match &self.placements[node] {
            Placement::Ground { body, fixed, .. } => fixed.rotate_z(self.bodies.get(*body).rotation_angle(t)),
            Placement::Orbit { orbit, .. } => orbit.position(t),
        }
    }

    /// Position of `node` in the root frame.
    pub fn position_of(&self, node: usize, t: f64) -> Result<Vec3, AstroError> {
        let pl = self.placements.get(node).ok_or(AstroError::UnknownNode(node))?;
        Ok(self.bodies.position(pl.body(), t) + self.relative_position(node, t))
    }

    /// Euclidean distance between two nodes. Nodes sharing a host body are
    /// differenced in that body's frame to avoid heliocentric cancellation.
    pub fn distance(&self, a: usize, b: usize, t: f64) -> f64 {
        let (ba, bb) = (self.placements[a].body(), self.placements[b].body());
        if ba == bb {
            self.relative_position(a, t).distance(self.relative_position(b, t))
        } else {
            let pa = self.bodies.position(ba, t) + self.relative_position(a, t);
            let pb = self.bodies.position(bb, t) + self.relative_position(b, t);
            pa.distance(pb)
        }
    }
}
