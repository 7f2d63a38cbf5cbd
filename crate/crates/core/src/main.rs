use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ipnsim::experiments::{self, RevocationSpec, SweepCell, SweepGrid};
use ipnsim::pki::{CaModel, PkiConfig, Protocol};
use ipnsim::reporting::{self, RunInfo};
use ipnsim::routing::ContactPlan;
use ipnsim::scenario::{load_scenario, Scenario, BUILTIN_SCENARIOS};
use ipnsim::topology::write_contacts_csv;

#[derive(Parser)]
#[command(name = "ipnsim", version, about = "PKI protocols over interplanetary satellite networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the built-in scenario names.
    ListScenarios,
    /// Every ordered pair of non-relay nodes authenticates one message.
    RunEstablishment {
        #[command(flatten)]
        pki: PkiArgs,
        /// Only run the k-th start-time offset of the scenario.
        #[arg(long)]
        epoch_offset: Option<usize>,
        /// Also write every message to trace.csv.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Revoke the attacker's key and measure coverage (and penetration with --cached).
    RunRevocation {
        #[command(flatten)]
        pki: PkiArgs,
        #[arg(long)]
        cached: bool,
        #[arg(long)]
        attacker_segment: String,
        #[arg(long)]
        origin_segment: String,
        /// Revocation time in seconds past the scenario epoch.
        #[arg(long, default_value_t = 0.0)]
        epoch_offset: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every combination in a TOML grid file.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the links active at each grid step.
    DumpContacts {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0.0)]
        epoch_offset: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PkiArgs {
    /// Built-in scenario name or path to a scenario file.
    #[arg(long)]
    scenario: String,
    #[arg(long, value_parser = parse_protocol)]
    protocol: Protocol,
    #[arg(long, value_parser = parse_model)]
    ca_model: CaModel,
    #[arg(long)]
    subscribe: bool,
    #[arg(long)]
    firewall: bool,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Protocol::ALL.iter().map(|p| p.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_model(s: &str) -> Result<CaModel, String> {
    s.parse().map_err(|_| "expected centralized or distributed".to_string())
}

impl PkiArgs {
    fn load(&self) -> Result<(Scenario, PkiConfig), String> {
        let mut config = PkiConfig::new(self.protocol, self.ca_model);
        config.subscribe = self.subscribe;
        config.firewall = self.firewall;
        config.validate().map_err(|e| e.to_string())?;
        let scenario = build(&self.scenario)?;
        Ok((scenario, config))
    }
}

fn build(name: &str) -> Result<Scenario, String> {
    load_scenario(name).and_then(|s| s.build()).map_err(|e| e.to_string())
}

fn cell_dir(c: &PkiConfig) -> String {
    let mut s = format!("{}-{}", c.protocol, c.ca_model);
    if c.subscribe {
        s += "-subscribe";
    }
    if c.firewall {
        s += "-firewall";
    }
    s
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::ListScenarios => {
            for name in BUILTIN_SCENARIOS {
                println!("{name}");
            }
        }
        Cmd::RunEstablishment {
            pki,
            epoch_offset,
            trace,
            out,
        } => {
            let (scenario, config) = pki.load()?;
            let all = experiments::epoch_offsets(&scenario, 120.0);
            let offsets = match epoch_offset {
                Some(k) => vec![*all
                    .get(k)
                    .ok_or_else(|| format!("epoch offset index {k} out of range (scenario has {})", all.len()))?],
                None => all,
            };
            let run = experiments::run_establishment_traced(&scenario, &config, Some(&offsets), trace).map_err(|e| e.to_string())?;
            let info = RunInfo::new(&scenario.spec.name, scenario.spec.seed);
            let summary = reporting::write_establishment(&out, info, config, &run).map_err(|e| e.to_string())?;
            if let Some(rows) = &run.trace {
                let path = out.join("trace.csv");
                let f = fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                reporting::write_trace_csv(f, rows).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            println!("{}", serde_json::to_string_pretty(&summary.stats).expect("stats serialize"));
        }
        Cmd::RunRevocation {
            pki,
            cached,
            attacker_segment,
            origin_segment,
            epoch_offset,
            out,
        } => {
            let (scenario, config) = pki.load()?;
            let mut spec = RevocationSpec::new(&attacker_segment, &origin_segment, cached);
            spec.epoch_offset = epoch_offset;
            let rec = experiments::run_revocation(&scenario, &config, &spec).map_err(|e| e.to_string())?;
            let info = RunInfo::new(&scenario.spec.name, scenario.spec.seed);
            reporting::write_revocation(&out, info, std::slice::from_ref(&rec)).map_err(|e| e.to_string())?;
            for s in &rec.segments {
                let cov = s.coverage_s.map_or("not covered".to_string(), |c| format!("{c:.6} s"));
                let pen = s.penetration.map_or(String::new(), |p| format!(", penetration {:.2}%", 100.0 * p));
                println!("{}: coverage {cov}{pen}", s.segment);
            }
        }
        Cmd::Sweep { grid, out } => {
            let text = fs::read_to_string(&grid).map_err(|e| format!("{}: {e}", grid.display()))?;
            let grid: SweepGrid = toml::from_str(&text).map_err(|e| format!("{}: {e}", grid.display()))?;
            let scenario = build(&grid.scenario)?;
            let res = experiments::sweep(&scenario, &grid).map_err(|e| e.to_string())?;
            let info = RunInfo::new(&scenario.spec.name, scenario.spec.seed);
            let mut revocations = Vec::new();
            for cell in res.cells {
                match cell {
                    SweepCell::Establishment { config, run } => {
                        reporting::write_establishment(&out.join(cell_dir(&config)), info.clone(), config, &run)
                            .map_err(|e| e.to_string())?;
                    }
                    SweepCell::Revocation(r) => revocations.push(r),
                }
            }
            if grid.experiment == experiments::ExperimentKind::Revocation {
                reporting::write_revocation(&out, info, &revocations).map_err(|e| e.to_string())?;
            }
            if !res.skipped.is_empty() {
                fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
                let path = out.join("skipped.txt");
                fs::write(&path, res.skipped.join("\n") + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
            }
        }
        Cmd::DumpContacts {
            scenario,
            epoch_offset,
            out,
        } => {
            let mut sc = build(&scenario)?;
            sc.set_epoch_offset(epoch_offset);
            let plan = ContactPlan::build(&sc.network, sc.spec.horizon_s, sc.spec.dt_s);
            let snaps: Vec<_> = (0..plan.steps()).map(|k| plan.snapshot(k, &sc.network)).collect();
            let f = fs::File::create(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            write_contacts_csv(f, &snaps).map_err(|e| format!("{}: {e}", out.display()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
