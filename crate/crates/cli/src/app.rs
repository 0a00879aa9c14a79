//! Argument parsing and subcommand dispatch.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use gated_apd::linkbudget::{Criterion, Source};
use serde_json::json;

use crate::config::{Config, DeviceFields, DeviceSection};
use crate::error::{CliError, CliResult};
use crate::experiments;
use crate::output::RunDir;

#[derive(Debug, Parser)]
#[command(
    name = "gated-apd",
    version,
    about = "Gated dual-APD single-photon detector experiments"
)]
pub struct Cli {
    /// JSON run document; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parent directory of the run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Gates per run (pairs for `afterpulse`).
    #[arg(long, global = true)]
    pub gates: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spike residual of the balanced readout over one dark gate.
    SpikeDemo {
        #[arg(long)]
        gain_mismatch: Option<f64>,
        #[arg(long)]
        gate_amplitude: Option<f64>,
    },
    /// Efficiency and dark-count fit over an overbias grid.
    SweepBias {
        /// Pick the device1 preset by temperature in kelvin.
        #[arg(long, conflicts_with = "preset")]
        temperature: Option<f64>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, value_delimiter = ',')]
        overbias: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        mu: Option<Vec<f64>>,
        #[arg(long)]
        dark_gates: Option<u64>,
        /// Fix P_d to the dark-run rate.
        #[arg(long)]
        fixed_pd: bool,
    },
    /// Double-pulse afterpulse measurement over an interval grid.
    Afterpulse {
        /// Pulse intervals in seconds.
        #[arg(long = "interval", value_delimiter = ',')]
        intervals: Option<Vec<f64>>,
        #[arg(long)]
        first_gate_mu: Option<f64>,
    },
    /// Which-path counts of the coupler experiment over a μ grid.
    WhichPath {
        #[arg(long, value_delimiter = ',')]
        mu: Option<Vec<f64>>,
        #[arg(long)]
        eta1: Option<f64>,
        #[arg(long)]
        eta2: Option<f64>,
        #[arg(long)]
        splitter_ratio: Option<f64>,
    },
    /// Maximum QKD range for the given detector figures.
    LinkRange {
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        pd: Option<f64>,
        /// Fiber attenuation in dB/km.
        #[arg(long)]
        alpha: Option<f64>,
        /// Dark-to-signal ratio bound.
        #[arg(long, conflicts_with = "max_qber")]
        ratio: Option<f64>,
        #[arg(long)]
        max_qber: Option<f64>,
        /// Weak coherent source with this mean photon number.
        #[arg(long)]
        mu: Option<f64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SpikeDemo { .. } => "spike-demo",
            Command::SweepBias { .. } => "sweep-bias",
            Command::Afterpulse { .. } => "afterpulse",
            Command::WhichPath { .. } => "which-path",
            Command::LinkRange { .. } => "link-range",
        }
    }
}

fn set_efficiency(section: &mut DeviceSection, eta: f64) {
    section.0.efficiency = Some(eta);
    section.0.overbias = None;
}

/// The run document after applying command-line overrides.
pub fn effective_config(cli: &Cli) -> CliResult<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::from_path(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(g) = cli.gates {
        match cli.command {
            Command::Afterpulse { .. } => cfg.afterpulse.n_pairs = g,
            _ => cfg.run.n_gates = g,
        }
    }
    match &cli.command {
        Command::SpikeDemo {
            gain_mismatch,
            gate_amplitude,
        } => {
            if let Some(e) = gain_mismatch {
                cfg.chain.gain_mismatch = *e;
            }
            if let Some(a) = gate_amplitude {
                cfg.chain.gate_amplitude = *a;
            }
        }
        Command::SweepBias {
            temperature,
            preset,
            overbias,
            mu,
            dark_gates,
            fixed_pd,
        } => {
            if let Some(t) = temperature {
                cfg.device1 = DeviceSection(DeviceFields {
                    temperature_k: Some(*t),
                    ..DeviceFields::default()
                });
            }
            if let Some(p) = preset {
                cfg.device1 = DeviceSection::preset(p);
            }
            if let Some(g) = overbias {
                cfg.sweep.overbias_grid = Some(g.clone());
            }
            if let Some(m) = mu {
                cfg.sweep.mu_grid = m.clone();
            }
            if let Some(d) = dark_gates {
                cfg.sweep.dark_gates = *d;
            }
            cfg.sweep.fixed_pd |= *fixed_pd;
        }
        Command::Afterpulse {
            intervals,
            first_gate_mu,
        } => {
            if let Some(i) = intervals {
                cfg.afterpulse.intervals_s = i.clone();
            }
            if let Some(m) = first_gate_mu {
                cfg.afterpulse.first_gate_mu = *m;
            }
        }
        Command::WhichPath {
            mu,
            eta1,
            eta2,
            splitter_ratio,
        } => {
            if let Some(m) = mu {
                cfg.which_path.mu_grid = m.clone();
            }
            if let Some(e) = eta1 {
                set_efficiency(&mut cfg.device1, *e);
            }
            if let Some(e) = eta2 {
                set_efficiency(&mut cfg.device2, *e);
            }
            if let Some(s) = splitter_ratio {
                cfg.run.splitter_ratio = *s;
            }
        }
        Command::LinkRange {
            eta,
            pd,
            alpha,
            ratio,
            max_qber,
            mu,
        } => {
            let l = &mut cfg.link;
            l.eta = eta.or(l.eta);
            l.pd = pd.or(l.pd);
            if let Some(a) = alpha {
                l.attenuation_db_per_km = *a;
            }
            if let Some(r) = ratio {
                l.criterion = Criterion::DarkSignalRatio { r: *r };
            }
            if let Some(q) = max_qber {
                l.criterion = Criterion::MaxQber { q: *q };
            }
            if let Some(m) = mu {
                l.source = Source::WeakCoherent { mu: *m };
            }
        }
    }
    Ok(cfg)
}

/// What a finished subcommand reports on stdout.
pub struct Finished {
    pub run_dir: PathBuf,
    pub stdout: serde_json::Value,
}

/// Runs the selected subcommand and writes its run directory.
pub fn run(cli: &Cli) -> CliResult<Finished> {
    let cfg = effective_config(cli)?;
    let name = cli.command.name();
    if !matches!(cli.command, Command::LinkRange { .. }) {
        cfg.validate()?;
    }
    let now = chrono::Utc::now();
    let stamp = now.format("%Y%m%dT%H%M%S%.3fZ").to_string();
    // link-range fails fast, before a directory exists
    let link = match cli.command {
        Command::LinkRange { .. } => Some(experiments::link_range(&cfg)?),
        _ => None,
    };
    let mut dir = RunDir::create(&cli.out, &stamp, &cfg.hash())?;
    let mut deferred: Option<CliError> = None;

    let stdout = match &cli.command {
        Command::SpikeDemo { .. } => {
            let demo = experiments::spike_demo(&cfg.chain)?;
            dir.write_waveform("arm1.csv", &demo.traces.arm1)?;
            dir.write_waveform("arm2.csv", &demo.traces.arm2)?;
            dir.write_waveform("differential.csv", &demo.traces.differential)?;
            dir.write_json("summary.json", &demo.summary)?;
            serde_json::to_value(&demo.summary).expect("summary serializes")
        }
        Command::SweepBias { .. } => {
            let out = experiments::sweep_bias(&cfg)?;
            dir.write_csv("sweep.csv", &out.rows)?;
            dir.write_csv("counts.csv", &out.counts)?;
            let summary = json!({
                "device": out.device,
                "fits": out.rows.iter().zip(&out.fits).map(|(r, f)| json!({"overbias": r.overbias, "fit": f})).collect::<Vec<_>>(),
                "best": out.best(),
            });
            dir.write_json("summary.json", &summary)?;
            if !out.all_converged() {
                deferred = Some(CliError::Runtime(
                    "efficiency fit did not converge at every grid point".into(),
                ));
            }
            summary
        }
        Command::Afterpulse { .. } => {
            let out = experiments::afterpulse(&cfg)?;
            dir.write_csv("afterpulse.csv", &out.rows)?;
            let summary = json!({
                "device": out.device,
                "points": out.rows,
                "decay": out.decay,
                "unconditional": out.unconditional,
            });
            dir.write_json("summary.json", &summary)?;
            summary
        }
        Command::WhichPath { .. } => {
            let out = experiments::which_path(&cfg)?;
            dir.write_csv("which_path.csv", &out.rows)?;
            dir.write_csv("events.csv", &out.raster)?;
            let summary = json!({
                "points": out.points,
                "raster_mu": out.raster_mu,
                "raster_gates": out.raster.len(),
            });
            dir.write_json("summary.json", &summary)?;
            summary
        }
        Command::LinkRange { .. } => {
            let (params, report) = link.expect("computed above");
            dir.write_json("summary.json", &json!({"params": params, "report": report}))?;
            serde_json::to_value(&report).expect("report serializes")
        }
    };
    dir.write_manifest(name, &cfg, now.to_rfc3339())?;
    match deferred {
        Some(e) => Err(e),
        None => Ok(Finished {
            run_dir: dir.path,
            stdout,
        }),
    }
}
