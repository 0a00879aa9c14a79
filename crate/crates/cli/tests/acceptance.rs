//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Tolerances are fixed here, not configurable.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use gated_apd::estimator::click_probability;
use gated_apd::io::{read_csv, read_waveform_csv, OutcomeRow, WaveformRow};
use gated_apd::linkbudget::{max_range, LinkParams};
use gated_apd::montecarlo::{replica_seed, run_experiment, ApdSetup, RunConfig};
use gated_apd::signalchain::{
    avalanche_peak_gain, compose_arm, discriminate, hybrid_subtract, synth_avalanche_pulse, synth_gate_spike,
    ChainParams, Classification, LOAD_POLARITY,
};
use gated_apd_cli::config::{Config, DeviceFields, DeviceSection};
use gated_apd_cli::experiments::{self, AfterpulseRow, CountRow, SweepRow, WhichPathRow};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn sigma_binomial(p: f64, n: f64) -> f64 {
    (n * p * (1.0 - p)).sqrt()
}

fn nominal_178k() -> ApdSetup {
    RunConfig::standard().apd1
}

fn dark_count_floor() -> Verdict {
    const GATES: u64 = 100_000_000;
    const PD: f64 = 7e-7;
    let cfg = RunConfig {
        n_gates: GATES,
        mean_photons: 0.0,
        seed: 20_070,
        ..RunConfig::single_apd(nominal_178k())
    };
    let t = Instant::now();
    let r = run_experiment(&cfg).expect("dark run");
    let secs = t.elapsed().as_secs_f64();
    let k = r.counts.apd1 as f64;
    let (mean, sd) = (PD * GATES as f64, sigma_binomial(PD, GATES as f64));
    let pass = (k - mean).abs() <= 3.0 * sd && secs < 120.0;
    verdict(
        pass,
        format!(
            "{k} dark clicks in 1e8 gates (p = {:.3e}), expected {mean} ± {:.1} at 3σ; {secs:.1} s",
            k / GATES as f64,
            3.0 * sd
        ),
    )
}

fn efficiency_fit() -> Verdict {
    let mut cfg = Config::default();
    cfg.run.seed = 20_011;
    cfg.run.n_gates = 10_000_000;
    cfg.sweep.overbias_grid = Some(vec![nominal_178k().overbias]);
    cfg.sweep.mu_grid = vec![0.0, 0.1, 0.5, 1.0, 2.0];
    cfg.sweep.dark_gates = 100_000_000;
    let out = experiments::sweep_bias(&cfg).expect("sweep");
    let row = &out.rows[0];
    let eta_ok = (row.eta_hat - 0.11).abs() <= 0.02 * 0.11;
    let ratio_ok = row.pd_over_eta >= 6e-6 / 1.5 && row.pd_over_eta <= 6e-6 * 1.5;
    verdict(
        eta_ok && ratio_ok && out.fits[0].converged,
        format!(
            "eta_hat = {:.5} ± {:.5} (target 0.11 ± 2 %), pd/eta = {:.3e} ± {:.2e} (target 6e-6 within x1.5)",
            row.eta_hat, row.eta_stderr, row.pd_over_eta, row.pd_over_eta_stderr
        ),
    )
}

fn range_arithmetic() -> Verdict {
    let t = Instant::now();
    let a = max_range(&LinkParams::new(0.11, 0.11e-3)).expect("range").km();
    let b = max_range(&LinkParams::new(0.11, 0.11 * 6e-6)).expect("range").km();
    let ms = t.elapsed().as_secs_f64() * 1e3;
    let pass = (a - 100.0).abs() < 1e-9 && (b - 220.0).abs() <= 0.10 * 220.0 && ms < 100.0;
    verdict(
        pass,
        format!("pd/eta = 1e-3 -> {a:.9} km; 6e-6 -> {b:.2} km (220 km ± 10 %); {ms:.3} ms"),
    )
}

fn afterpulse_point() -> Verdict {
    let mut cfg = Config::default();
    cfg.run.seed = 20_004;
    cfg.afterpulse.intervals_s = vec![1e-6];
    cfg.afterpulse.n_pairs = 10_000_000;
    cfg.afterpulse.unconditional_click_rate = Some(0.1);
    cfg.afterpulse.unconditional_interval_s = 1e-6;
    let out = experiments::afterpulse(&cfg).expect("afterpulse");
    let c = &out.rows[0];
    let u = out.unconditional.expect("unconditional run");
    let cond_ok = (c.p_after - 1e-4).abs() <= 3.0 * c.stderr;
    let uncond_ok = (u.p_error - 1e-5).abs() <= 3.0 * u.stderr;
    verdict(
        cond_ok && uncond_ok,
        format!(
            "conditional {:.3e} ± {:.2e} (target 1e-4 at 3σ); unconditional at 10 % prior clicks {:.3e} ± {:.2e} (target 1e-5 at 3σ)",
            c.p_after, c.stderr, u.p_error, u.stderr
        ),
    )
}

fn spike_cancellation() -> Verdict {
    let sym = ChainParams {
        gain_mismatch: 0.0,
        ..ChainParams::default()
    };
    let r0 = experiments::spike_demo(&sym)
        .expect("spike demo")
        .summary
        .residual_ratio;
    let p = ChainParams {
        gain_mismatch: 0.05,
        ..ChainParams::default()
    };
    let r5 = experiments::spike_demo(&p).expect("spike demo").summary.residual_ratio;

    // threshold at a quarter of the band-limited avalanche peak
    let apd = nominal_178k();
    let amp = apd.amplitude();
    let peak = amp * avalanche_peak_gain(&p).expect("gain");
    let low = ChainParams {
        threshold: 0.25 * peak,
        ..p.clone()
    };
    let spike = synth_gate_spike(&low).expect("spike");
    let quiet = compose_arm(&spike, None, LOAD_POLARITY, 1.0).expect("arm");
    let window = low.detection_window();
    let dark_ok =
        discriminate(&low, &hybrid_subtract(&low, &quiet, &quiet).expect("hybrid"), window) == Classification::NoClick;
    let mut aval_ok = true;
    let (lo, hi) = (low.gate_edge_time, low.gate_width - low.gate_edge_time);
    for i in 0..=20 {
        let t = lo + (hi - lo) * i as f64 / 20.0;
        let pulse = synth_avalanche_pulse(&low, amp, t).expect("pulse");
        let hot = compose_arm(&spike, Some(&pulse), LOAD_POLARITY, 1.0).expect("arm");
        let c1 = discriminate(&low, &hybrid_subtract(&low, &hot, &quiet).expect("hybrid"), window);
        let c2 = discriminate(&low, &hybrid_subtract(&low, &quiet, &hot).expect("hybrid"), window);
        aval_ok &= matches!(c1, Classification::Apd1 { .. }) && matches!(c2, Classification::Apd2 { .. });
    }
    let pass = r0 <= 0.02 && (r5 - 0.05).abs() <= 0.01 && dark_ok && aval_ok;
    verdict(
        pass,
        format!(
            "ratio {r0:.2e} at eps = 0 (<= 2 %), {r5:.4} at eps = 0.05 (0.05 ± 0.01); V_th = {:.4} V (25 % of {peak:.4} V): dark gate quiet {dark_ok}, avalanches on either arm resolved {aval_ok}",
            0.25 * peak
        ),
    )
}

fn which_path_config(eta1: f64, eta2: f64, mu: f64, gates: u64, seed: u64) -> Config {
    let mut cfg = Config::default();
    let at = |eta| {
        DeviceSection(DeviceFields {
            efficiency: Some(eta),
            ..DeviceFields::default()
        })
    };
    cfg.device1 = at(eta1);
    cfg.device2 = at(eta2);
    cfg.run.n_gates = gates;
    cfg.run.seed = seed;
    cfg.run.record_gates = 0;
    cfg.which_path.mu_grid = vec![mu];
    cfg
}

fn which_path() -> Verdict {
    let eq = experiments::which_path(&which_path_config(0.11, 0.11, 0.2, 1_000_000, 20_005)).expect("which path");
    let r = &eq.rows[0];
    let n = (r.n1 + r.n2) as f64;
    let equal_ok = (r.n1 as f64 - r.n2 as f64).abs() <= 3.0 * 0.5 * n.sqrt();

    // sized so neighbouring fractions differ by several standard errors
    let grid = [(0.2, 80_000_000u64), (1.0, 16_000_000), (5.0, 2_000_000)];
    let mut fracs = Vec::new();
    for (i, &(mu, gates)) in grid.iter().enumerate() {
        let cfg = which_path_config(0.132, 0.11, mu, gates, replica_seed(20_006, i as u64));
        let row = experiments::which_path(&cfg).expect("which path").rows[0].clone();
        let se = (row.frac_apd1 * (1.0 - row.frac_apd1) / (row.n1 + row.n2) as f64).sqrt();
        fracs.push((mu, row.frac_apd1, se));
    }
    let rising = fracs.windows(2).all(|w| w[1].1 > w[0].1);
    let shown: Vec<String> = fracs
        .iter()
        .map(|(m, f, s)| format!("mu {m}: {f:.5} ± {s:.5}"))
        .collect();
    verdict(
        equal_ok && rising,
        format!(
            "equal eta: n1 = {}, n2 = {} (|diff| <= {:.0} at 3σ); eta1/eta2 = 1.2: {}",
            r.n1,
            r.n2,
            1.5 * n.sqrt(),
            shown.join(", ")
        ),
    )
}

fn oracle_grid() -> Verdict {
    const GATES: u64 = 1_000_000;
    let mut worst = (0.0f64, String::new());
    let mut idx = 0;
    for &eta in &[0.05, 0.11, 0.2] {
        for &pd in &[1e-6, 1e-4, 1e-2] {
            for &mu in &[0.1, 1.0, 5.0] {
                let cfg = RunConfig {
                    n_gates: GATES,
                    mean_photons: mu,
                    seed: replica_seed(20_007, idx),
                    ..RunConfig::single_apd(ApdSetup::fixed(eta, pd).expect("apd"))
                };
                idx += 1;
                let k = run_experiment(&cfg).expect("run").counts.apd1 as f64;
                let p = click_probability(eta, pd, mu);
                let z = (k - p * GATES as f64) / sigma_binomial(p, GATES as f64);
                if z.abs() > worst.0.abs() {
                    worst = (z, format!("eta {eta}, pd {pd}, mu {mu}"));
                }
            }
        }
    }
    verdict(
        worst.0.abs() <= 4.0,
        format!(
            "27 points at 1e6 gates, largest |z| = {:.2} at {}",
            worst.0.abs(),
            worst.1
        ),
    )
}

fn run_binary(out: &Path, config: &Path, args: &[&str]) -> Result<PathBuf, String> {
    let before: Vec<PathBuf> = list_dir(out);
    let status = Command::new(env!("CARGO_BIN_EXE_gated-apd"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&status.stderr)));
    }
    list_dir(out)
        .into_iter()
        .find(|p| !before.contains(p))
        .ok_or_else(|| format!("{args:?}: no run directory"))
}

fn list_dir(p: &Path) -> Vec<PathBuf> {
    std::fs::read_dir(p)
        .map(|it| it.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default()
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = list_dir(dir)
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    v.sort();
    v
}

/// The tool's own readers must accept every CSV it writes.
fn parses_back(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    match name {
        "arm1.csv" | "arm2.csv" | "differential.csv" => read_waveform_csv(path).is_ok(),
        "sweep.csv" => read_csv::<SweepRow>(path).is_ok(),
        "counts.csv" => read_csv::<CountRow>(path).is_ok(),
        "afterpulse.csv" => read_csv::<AfterpulseRow>(path).is_ok(),
        "which_path.csv" => read_csv::<WhichPathRow>(path).is_ok(),
        "events.csv" => read_csv::<OutcomeRow>(path).is_ok(),
        _ => read_csv::<WaveformRow>(path).is_ok(),
    }
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().expect("tempdir");
    let config = tmp.path().join("config.json");
    let doc = serde_json::json!({
        "run": {"n_gates": 20000, "record_gates": 500},
        "sweep": {"dark_gates": 50000, "overbias_grid": [1.0, 2.0]},
        "afterpulse": {"n_pairs": 20000},
    });
    std::fs::write(&config, doc.to_string()).expect("write config");
    let commands: [&[&str]; 5] = [
        &["spike-demo"],
        &["sweep-bias"],
        &["afterpulse"],
        &["which-path"],
        &["link-range", "--eta", "0.11", "--pd", "7e-7"],
    ];
    let mut problems = Vec::new();
    let mut compared = 0;
    for args in commands {
        let args: Vec<&str> = args.iter().copied().chain(["--seed", "8"]).collect();
        let runs: Vec<_> = ["a", "b"]
            .iter()
            .map(|sub| run_binary(&tmp.path().join(sub), &config, &args))
            .collect();
        let (a, b) = match (&runs[0], &runs[1]) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                problems.push(e.clone());
                continue;
            }
        };
        if !a.join("manifest.json").exists() {
            problems.push(format!("{}: no manifest", args[0]));
        }
        let (fa, fb) = (csv_files(a), csv_files(b));
        if fa.len() != fb.len() {
            problems.push(format!("{}: artifact lists differ", args[0]));
        }
        for (x, y) in fa.iter().zip(&fb) {
            compared += 1;
            if std::fs::read(x).ok() != std::fs::read(y).ok() {
                problems.push(format!("{} differs", x.display()));
            }
            if !parses_back(x) {
                problems.push(format!("{} does not parse back", x.display()));
            }
        }
    }
    verdict(
        problems.is_empty() && compared >= 8,
        if problems.is_empty() {
            format!("5 subcommands rerun with seed 8: {compared} CSV artifacts byte-identical and readable")
        } else {
            problems.join("; ")
        },
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 8] = [
        ("dark-count floor", dark_count_floor),
        ("efficiency fit", efficiency_fit),
        ("range arithmetic", range_arithmetic),
        ("afterpulse point", afterpulse_point),
        ("spike cancellation", spike_cancellation),
        ("which-path", which_path),
        ("oracle equivalence", oracle_grid),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = check();
        failed += !v.pass as u32;
        println!(
            "criterion {} {:<20} {}  {} [{:.1} s]",
            i + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed as usize,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
