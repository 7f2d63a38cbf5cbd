#![allow(dead_code)]

pub mod oracle;
pub mod traces;

/// 4 ground stations under 24 satellites; two start offsets.
pub const TINY: &str = r#"
schema = 1
name = "tiny"
include = ["earth.toml"]
seed = 3
horizon_s = 600.0
dt_s = 10.0
epoch_offsets_s = [0.0, 120.0]

[[groups]]
name = "earth-gs"
segment = "earth"
kind = "ground"
body = "earth"
count = 4
min_elevation_deg = 8.2
placement = { mode = "explicit", count = 4, coordinates = [[0.0, 0.0], [10.0, 20.0], [-15.0, 40.0], [30.0, -30.0]] }

[[groups]]
name = "earth-sats"
segment = "earth"
kind = "satellite"
body = "earth"
count = 24
walker = { total = 24, planes = 4, phasing = 1, altitude_km = 1200.0, inclination_deg = 60.0, pattern = "delta" }

[[links]]
between = ["earth-sats", "earth-sats"]
max_range_km = 6000.0

[[links]]
between = ["earth-gs", "earth-sats"]
"#;
