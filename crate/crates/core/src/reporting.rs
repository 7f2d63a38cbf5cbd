//! Summary statistics and the files the analysis scripts read:
//! `records.csv`, `summary.json`, `revocation.csv`, `trace.csv`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::{EstablishmentRecord, EstablishmentRun, Outcome, RevocationRecord, TraceRow};
use crate::pki::PkiConfig;
use crate::topology::NodeId;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const RECORDS_HEADER: &str = "src,dst,epoch_offset,t_send,outcome,latency,overhead,hops,plain_latency";
pub const REVOCATION_HEADER: &str =
    "protocol,ca_model,subscribe,firewall,cached,attacker_segment,origin_segment,epoch_offset,attacker,segment,victims,coverage_s,not_covered,fully_protected,penetration";
pub const TRACE_HEADER: &str = "time,kind,from,to,serial,decision";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to summarize")]
    EmptyInput,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Min, max, mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Stat {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            // clamp against rounding so min <= mean <= max always holds
            mean: mean.clamp(
                values.iter().copied().fold(f64::INFINITY, f64::min),
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
            std: var.max(0.0).sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub records: usize,
    pub delivered: usize,
    pub dropped_pct: f64,
    pub latency: Option<Stat>,
    /// `None` when overhead does not apply (CRL broadcast).
    pub overhead: Option<Stat>,
    pub hops: Option<Stat>,
}

/// Statistics over delivered records; dropped share over all.
pub fn summarize(records: &[EstablishmentRecord]) -> Result<SummaryStats, ReportError> {
    if records.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let delivered: Vec<&EstablishmentRecord> = records.iter().filter(|r| r.outcome == Outcome::Delivered).collect();
    let latency: Vec<f64> = delivered.iter().filter_map(|r| r.latency).collect();
    let overhead: Vec<f64> = delivered.iter().filter_map(|r| r.overhead).collect();
    let hops: Vec<f64> = delivered.iter().filter_map(|r| r.hops.map(f64::from)).collect();
    Ok(SummaryStats {
        records: records.len(),
        delivered: delivered.len(),
        dropped_pct: 100.0 * (records.len() - delivered.len()) as f64 / records.len() as f64,
        latency: Stat::of(&latency),
        overhead: Stat::of(&overhead),
        hops: Stat::of(&hops),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn round6(v: f64) -> f64 {
    format!("{v:.6}").parse().expect("formatted float parses")
}

/// The record as it reads back from CSV.
pub fn rounded(r: &EstablishmentRecord) -> EstablishmentRecord {
    EstablishmentRecord {
        epoch_offset: round6(r.epoch_offset),
        t_send: round6(r.t_send),
        latency: r.latency.map(round6),
        overhead: r.overhead.map(round6),
        plain_latency: r.plain_latency.map(round6),
        ..r.clone()
    }
}

pub fn write_records_csv<W: Write>(out: W, records: &[EstablishmentRecord]) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RECORDS_HEADER.split(','))?;
    for r in records {
        w.write_record([
            r.src.0.to_string(),
            r.dst.0.to_string(),
            format!("{:.6}", r.epoch_offset),
            format!("{:.6}", r.t_send),
            match r.outcome {
                Outcome::Delivered => "delivered".into(),
                Outcome::Dropped => "dropped".into(),
            },
            fmt_opt(r.latency),
            fmt_opt(r.overhead),
            r.hops.map(|h| h.to_string()).unwrap_or_default(),
            fmt_opt(r.plain_latency),
        ])?;
    }
    w.flush()
}

pub fn read_records_csv(path: &Path) -> Result<Vec<EstablishmentRecord>, ReportError> {
    let bad = |message: String| ReportError::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
    if header.join(",") != RECORDS_HEADER {
        return Err(bad(format!("unexpected header '{}'", header.join(","))));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        let num = |k: usize| -> Result<Option<f64>, ReportError> {
            let s = &row[k];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| bad(format!("line {line}: bad number '{s}'")))
        };
        let int = |k: usize| -> Result<u32, ReportError> {
            row[k].parse().map_err(|_| bad(format!("line {line}: bad integer '{}'", &row[k])))
        };
        let outcome = match &row[4] {
            "delivered" => Outcome::Delivered,
            "dropped" => Outcome::Dropped,
            o => return Err(bad(format!("line {line}: bad outcome '{o}'"))),
        };
        out.push(EstablishmentRecord {
            src: NodeId(int(0)?),
            dst: NodeId(int(1)?),
            epoch_offset: num(2)?.unwrap_or(0.0),
            t_send: num(3)?.unwrap_or(0.0),
            outcome,
            latency: num(5)?,
            overhead: num(6)?,
            hops: if row[7].is_empty() { None } else { Some(int(7)?) },
            plain_latency: num(8)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub tool_version: String,
    pub scenario: String,
    pub seed: u64,
}

impl RunInfo {
    pub fn new(scenario: &str, seed: u64) -> Self {
        RunInfo {
            tool_version: TOOL_VERSION.to_string(),
            scenario: scenario.to_string(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstablishmentSummary {
    #[serde(flatten)]
    pub info: RunInfo,
    pub experiment: String,
    pub config: PkiConfig,
    pub empty: bool,
    pub control_messages: usize,
    pub stats: Option<SummaryStats>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(value).expect("summaries serialize");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Writes `records.csv` (unless there are no records) and `summary.json`.
pub fn write_establishment(dir: &Path, info: RunInfo, config: PkiConfig, run: &EstablishmentRun) -> Result<EstablishmentSummary, ReportError> {
    ensure_dir(dir)?;
    let records: Vec<EstablishmentRecord> = run.records.iter().map(rounded).collect();
    let stats = if records.is_empty() {
        None
    } else {
        let path = dir.join("records.csv");
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        write_records_csv(f, &records).map_err(io_err(&path))?;
        Some(summarize(&records)?)
    };
    let summary = EstablishmentSummary {
        info,
        experiment: "establishment".into(),
        config,
        empty: records.is_empty(),
        control_messages: run.control_messages,
        stats,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevocationSummary {
    #[serde(flatten)]
    pub info: RunInfo,
    pub experiment: String,
    pub empty: bool,
    pub records: Vec<RevocationRecord>,
}

pub fn write_revocation_csv<W: Write>(out: W, records: &[RevocationRecord]) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(REVOCATION_HEADER.split(','))?;
    for r in records {
        for s in &r.segments {
            w.write_record([
                r.config.protocol.to_string(),
                r.config.ca_model.to_string(),
                r.config.subscribe.to_string(),
                r.config.firewall.to_string(),
                r.spec.cached.to_string(),
                r.spec.attacker_segment.clone(),
                r.spec.origin_segment.clone(),
                format!("{:.6}", r.spec.epoch_offset),
                r.attacker.0.to_string(),
                s.segment.clone(),
                s.victims.to_string(),
                fmt_opt(s.coverage_s),
                s.not_covered.map_or(String::new(), |b| b.to_string()),
                s.fully_protected.to_string(),
                fmt_opt(s.penetration),
            ])?;
        }
    }
    w.flush()
}

/// Writes `revocation.csv` (unless empty) and `summary.json` with the full records.
pub fn write_revocation(dir: &Path, info: RunInfo, records: &[RevocationRecord]) -> Result<(), ReportError> {
    ensure_dir(dir)?;
    if !records.is_empty() {
        let path = dir.join("revocation.csv");
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        write_revocation_csv(f, records).map_err(io_err(&path))?;
    }
    write_json(
        &dir.join("summary.json"),
        &RevocationSummary {
            info,
            experiment: "revocation".into(),
            empty: records.is_empty(),
            records: records.to_vec(),
        },
    )
}

pub fn write_trace_csv<W: Write>(out: W, rows: &[TraceRow]) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TRACE_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            format!("{:.6}", r.time),
            r.kind.to_string(),
            r.from.0.to_string(),
            r.to.0.to_string(),
            r.serial.map(|s| s.to_string()).unwrap_or_default(),
            r.decision.clone(),
        ])?;
    }
    w.flush()
}
