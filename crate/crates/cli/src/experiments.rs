//! The detector experiments, bound to a [`Config`].
//!
//! Each function returns plain rows ready for CSV plus whatever the summary
//! needs. Nothing here touches the filesystem.

use gated_apd::estimator::{
    estimate_afterpulse, estimate_unconditional_afterpulse, fit_afterpulse_decay, fit_poisson_model,
    fit_poisson_model_fixed_pd, AfterpulseData, AfterpulseEstimate, CountSample, DecayFit, FitResult,
};
use gated_apd::io::OutcomeRow;
use gated_apd::linkbudget::{range_report, LinkParams, RangeReport};
use gated_apd::montecarlo::{
    double_pulse_run, par_map, replica_seed, run_experiment, which_path_sweep, ApdSetup, RunConfig, WhichPathPoint,
};
use gated_apd::signalchain::{spike_cancellation, synth_gate_spike, ChainParams, SpikeCancellation};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{CliError, CliResult};

pub struct SpikeDemo {
    pub traces: SpikeCancellation,
    pub summary: SpikeSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpikeSummary {
    pub gain_mismatch: f64,
    pub residual_ratio: f64,
    pub residual_peak_v: f64,
    pub single_arm_peak_v: f64,
    pub raw_spike_peak_v: f64,
}

pub fn spike_demo(chain: &ChainParams) -> CliResult<SpikeDemo> {
    chain.validate()?;
    let traces = spike_cancellation(chain)?;
    let summary = SpikeSummary {
        gain_mismatch: chain.gain_mismatch,
        residual_ratio: traces.residual_ratio(),
        residual_peak_v: traces.differential.peak_abs(),
        single_arm_peak_v: traces.single_arm_output.peak_abs(),
        raw_spike_peak_v: synth_gate_spike(chain)?.peak_abs(),
    };
    Ok(SpikeDemo { traces, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub overbias: f64,
    pub eta_true: f64,
    pub eta_hat: f64,
    pub pd_true: f64,
    pub pd_hat: f64,
    pub pd_over_eta: f64,
    pub eta_stderr: f64,
    pub pd_stderr: f64,
    pub pd_over_eta_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub overbias: f64,
    pub mu: f64,
    pub clicks: u64,
    pub gates: u64,
}

pub struct SweepOutcome {
    pub device: String,
    pub rows: Vec<SweepRow>,
    pub counts: Vec<CountRow>,
    pub fits: Vec<FitResult>,
}

impl SweepOutcome {
    /// Grid point with the smallest fitted P_d/η.
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .zip(&self.fits)
            .filter(|(r, f)| f.converged && r.pd_over_eta.is_finite())
            .map(|(r, _)| r)
            .min_by(|a, b| a.pd_over_eta.total_cmp(&b.pd_over_eta))
    }

    pub fn all_converged(&self) -> bool {
        self.fits.iter().all(|f| f.converged)
    }
}

/// Ratio and its delta-method error, ignoring the η/P_d covariance.
fn ratio_with_error(f: &FitResult) -> (f64, f64) {
    let r = f.pd_hat / f.eta_hat;
    let rel = if f.pd_hat > 0.0 {
        ((f.pd_stderr / f.pd_hat).powi(2) + (f.eta_stderr / f.eta_hat).powi(2)).sqrt()
    } else {
        f64::NAN
    };
    let se = if f.pd_hat > 0.0 {
        r * rel
    } else {
        f.pd_stderr / f.eta_hat
    };
    (r, se)
}

/// Efficiency and dark-count sweep of device1 over overbias. Job `j` of the
/// (overbias, μ) grid, in row-major order, runs with `replica_seed(seed, j)`.
pub fn sweep_bias(cfg: &Config) -> CliResult<SweepOutcome> {
    cfg.validate()?;
    let dev = cfg.device1.characteristic()?;
    let grid: Vec<f64> = match &cfg.sweep.overbias_grid {
        Some(g) => g.clone(),
        None => dev
            .bias_table
            .iter()
            .map(|p| p.overbias)
            .filter(|&ob| ob > 0.0)
            .collect(),
    };
    let base = cfg.run_config()?;
    let amp = cfg.chain.gate_amplitude;
    let mus = &cfg.sweep.mu_grid;
    let mut jobs = Vec::with_capacity(grid.len() * mus.len());
    for (i, &ob) in grid.iter().enumerate() {
        for (j, &mu) in mus.iter().enumerate() {
            let run = RunConfig {
                n_gates: if mu == 0.0 { cfg.sweep.dark_gates } else { base.n_gates },
                mean_photons: mu,
                seed: replica_seed(base.seed, (i * mus.len() + j) as u64),
                ..RunConfig::single_apd(ApdSetup::at_overbias(dev.clone(), ob, amp))
            };
            jobs.push(RunConfig {
                clock_rate: base.clock_rate,
                chain: base.chain.clone(),
                waveform_mode: base.waveform_mode,
                record_gates: 0,
                ..run
            });
        }
    }
    let results: Vec<_> = par_map(jobs, |c| run_experiment(&c).map(|r| (c, r.counts.apd1)));
    let mut counts = Vec::with_capacity(results.len());
    for r in results {
        let (c, clicks) = r?;
        counts.push(CountRow {
            overbias: c.apd1.overbias,
            mu: c.mean_photons,
            clicks,
            gates: c.n_gates,
        });
    }

    let mut rows = Vec::with_capacity(grid.len());
    let mut fits = Vec::with_capacity(grid.len());
    for (i, &ob) in grid.iter().enumerate() {
        let point = &counts[i * mus.len()..(i + 1) * mus.len()];
        let samples = point
            .iter()
            .map(|c| CountSample::new(c.mu, c.clicks, c.gates))
            .collect::<Result<Vec<_>, _>>()?;
        let fit = match point.iter().find(|c| c.mu == 0.0) {
            Some(dark) if cfg.sweep.fixed_pd => {
                let mut f = fit_poisson_model_fixed_pd(&samples, dark.clicks as f64 / dark.gates as f64)?;
                f.pd_stderr = binomial_se(dark.clicks, dark.gates);
                f
            }
            _ => fit_poisson_model(&samples)?,
        };
        let (ratio, ratio_se) = ratio_with_error(&fit);
        rows.push(SweepRow {
            overbias: ob,
            eta_true: dev.efficiency_at(ob),
            eta_hat: fit.eta_hat,
            pd_true: dev.dark_prob_at(ob),
            pd_hat: fit.pd_hat,
            pd_over_eta: ratio,
            eta_stderr: fit.eta_stderr,
            pd_stderr: fit.pd_stderr,
            pd_over_eta_stderr: ratio_se,
        });
        fits.push(fit);
    }
    Ok(SweepOutcome {
        device: dev.name,
        rows,
        counts,
        fits,
    })
}

fn binomial_se(k: u64, n: u64) -> f64 {
    let p = k as f64 / n as f64;
    (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfterpulseRow {
    pub interval_s: f64,
    pub p_after: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unconditional {
    pub prior_click_rate: f64,
    pub first_gate_mu: f64,
    pub interval_s: f64,
    pub p_error: f64,
    pub stderr: f64,
}

pub struct AfterpulseOutcome {
    pub device: String,
    pub rows: Vec<AfterpulseRow>,
    pub data: Vec<AfterpulseData>,
    /// Absent when fewer than two intervals show a positive excess.
    pub decay: Option<DecayFit>,
    pub unconditional: Option<Unconditional>,
}

/// Double-pulse protocol on device1. Interval `i` runs with
/// `replica_seed(seed, i)`; the unconditional run takes the next index.
pub fn afterpulse(cfg: &Config) -> CliResult<AfterpulseOutcome> {
    cfg.validate()?;
    let ap = &cfg.afterpulse;
    let base = RunConfig {
        apd2: ApdSetup::disabled(),
        splitter_ratio: 1.0,
        ..cfg.run_config()?
    };
    let n_pairs = ap.n_pairs;
    let jobs: Vec<(u64, f64)> = ap
        .intervals_s
        .iter()
        .copied()
        .enumerate()
        .map(|(i, t)| (i as u64, t))
        .collect();
    let data = par_map(jobs, |(i, dt)| {
        let c = RunConfig {
            seed: replica_seed(base.seed, i),
            ..base.clone()
        };
        double_pulse_run(&c, dt, n_pairs).map(|mut d| {
            d.baseline = ap.baseline;
            d
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::with_capacity(data.len());
    let mut points = Vec::with_capacity(data.len());
    for d in &data {
        let est = estimate_afterpulse(d).map_err(|e| CliError::Runtime(e.to_string()))?;
        rows.push(AfterpulseRow {
            interval_s: d.interval_s,
            p_after: est.p_after,
            stderr: est.stderr,
        });
        points.push((d.interval_s, est));
    }
    let decay = fit_afterpulse_decay(&points).ok();

    let unconditional = match ap.unconditional_click_rate {
        None => None,
        Some(rate) => {
            let (eta, pd) = (base.apd1.efficiency(), base.apd1.dark_prob());
            if !(eta > 0.0) {
                return Err(CliError::Config(
                    "unconditional run needs a device with efficiency > 0".into(),
                ));
            }
            // solves 1 - (1 - pd) exp(-eta mu) = rate
            let mu = (((1.0 - pd) / (1.0 - rate)).ln() / eta).max(0.0);
            let c = RunConfig {
                first_gate_mu: mu,
                seed: replica_seed(base.seed, ap.intervals_s.len() as u64),
                ..base.clone()
            };
            let d = double_pulse_run(&c, ap.unconditional_interval_s, n_pairs)?;
            let AfterpulseEstimate { p_after, stderr } = estimate_unconditional_afterpulse(&d)?;
            Some(Unconditional {
                prior_click_rate: rate,
                first_gate_mu: mu,
                interval_s: ap.unconditional_interval_s,
                p_error: p_after,
                stderr,
            })
        }
    };
    Ok(AfterpulseOutcome {
        device: base.apd1.device.name.clone(),
        rows,
        data,
        decay,
        unconditional,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhichPathRow {
    pub mu: f64,
    pub n1: u64,
    pub n2: u64,
    pub none: u64,
    pub ambiguous: u64,
    pub frac_apd1: f64,
}

pub struct WhichPathOutcome {
    pub rows: Vec<WhichPathRow>,
    pub points: Vec<WhichPathPoint>,
    pub raster_mu: f64,
    /// Leading gates of the lowest-μ run.
    pub raster: Vec<OutcomeRow>,
}

/// Coupler experiment over `which_path.mu_grid`, waveform pipeline on.
pub fn which_path(cfg: &Config) -> CliResult<WhichPathOutcome> {
    cfg.validate()?;
    let points = which_path_sweep(&cfg.run_config()?, &cfg.which_path.mu_grid)?;
    let rows = points
        .iter()
        .map(|p| WhichPathRow {
            mu: p.mu,
            n1: p.counts.apd1,
            n2: p.counts.apd2,
            none: p.counts.none,
            ambiguous: p.counts.ambiguous,
            frac_apd1: p.counts.frac_apd1(),
        })
        .collect();
    let lowest = points
        .iter()
        .min_by(|a, b| a.mu.total_cmp(&b.mu))
        .expect("validated grid is non-empty");
    Ok(WhichPathOutcome {
        rows,
        raster_mu: lowest.mu,
        raster: lowest.records.iter().map(OutcomeRow::from).collect(),
        points,
    })
}

pub fn link_range(cfg: &Config) -> CliResult<(LinkParams, RangeReport)> {
    let p = cfg.link_params()?;
    Ok((p, range_report(&p)?))
}
