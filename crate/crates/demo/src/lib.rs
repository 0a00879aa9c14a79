//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export returns a JSON string; the plain `*_json` functions behind them
//! are ordinary Rust and tested natively.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use gated_apd::device;
use gated_apd::linkbudget::{dark_signal_ratio, max_range, qber, LinkParams, MaxRange};
use gated_apd::montecarlo::{which_path_sweep, ApdSetup, RunConfig};
use gated_apd::signalchain::{
    avalanche_peak_gain, compose_arm, discriminate, hybrid_subtract, spike_cancellation, synth_avalanche_pulse,
    ChainParams, Waveform, LOAD_POLARITY,
};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest which-path run the page may request.
pub const MAX_DEMO_GATES: u64 = 2_000_000;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn ns(w: &Waveform) -> Vec<f64> {
    w.times().map(|t| t * 1e9).collect()
}

/// Dark-gate residual and one arm-1 avalanche at the gate centre, with the
/// threshold set to `threshold_fraction` of the avalanche peak.
pub fn spike_traces_json(gain_mismatch: f64, gate_amplitude: f64, threshold_fraction: f64) -> Result<String, String> {
    let mut p = ChainParams {
        gain_mismatch,
        gate_amplitude,
        ..ChainParams::default()
    };
    p.validate().map_err(err)?;
    let apd = RunConfig::standard().apd1;
    let peak = apd.amplitude() * avalanche_peak_gain(&p).map_err(err)?;
    if !(threshold_fraction > 0.0) {
        return Err("threshold fraction must be > 0".into());
    }
    p.threshold = threshold_fraction * peak;
    let sc = spike_cancellation(&p).map_err(err)?;
    let pulse = synth_avalanche_pulse(&p, apd.amplitude(), p.gate_center()).map_err(err)?;
    let spike = sc.arm1.clone();
    let hot = compose_arm(&spike, Some(&pulse), LOAD_POLARITY, 1.0).map_err(err)?;
    let with_avalanche = hybrid_subtract(&p, &hot, &sc.arm2).map_err(err)?;
    let window = p.detection_window();
    Ok(json!({
        "t_ns": ns(&sc.arm1),
        "arm": sc.arm1.samples,
        "single_arm_output": sc.single_arm_output.samples,
        "differential": sc.differential.samples,
        "with_avalanche": with_avalanche.samples,
        "threshold_v": p.threshold,
        "residual_ratio": sc.residual_ratio(),
        "dark_class": discriminate(&p, &sc.differential, window).label(),
        "avalanche_class": discriminate(&p, &with_avalanche, window).label(),
    })
    .to_string())
}

/// Dark-to-signal ratio and QBER against fiber length, plus the range.
pub fn range_curve_json(eta: f64, pd: f64, alpha: f64, r: f64) -> Result<String, String> {
    let p = LinkParams {
        attenuation_db_per_km: alpha,
        criterion: gated_apd::linkbudget::Criterion::DarkSignalRatio { r },
        ..LinkParams::new(eta, pd)
    };
    let range = max_range(&p).map_err(err)?;
    let span = match range {
        MaxRange::Km(l) if l > 0.0 => 1.5 * l,
        _ => 300.0,
    };
    let lengths: Vec<f64> = (0..=200).map(|i| span * i as f64 / 200.0).collect();
    Ok(json!({
        "length_km": lengths,
        "dark_signal_ratio": lengths.iter().map(|&l| dark_signal_ratio(&p, l)).collect::<Vec<_>>(),
        "qber": lengths.iter().map(|&l| qber(&p, l)).collect::<Vec<_>>(),
        "range_km": match range { MaxRange::Unbounded => None, r => Some(r.km()) },
    })
    .to_string())
}

/// Which-path counts for two 178 K APDs set to efficiencies `eta1`, `eta2`.
pub fn which_path_json(eta1: f64, eta2: f64, mu: f64, gates: u64, seed: u64) -> Result<String, String> {
    if !(1..=MAX_DEMO_GATES).contains(&gates) {
        return Err(format!("gates must lie in 1..={MAX_DEMO_GATES}"));
    }
    let dev = device::preset("EPM239BA-178K").map_err(err)?;
    let chain = ChainParams::default();
    let cfg = RunConfig {
        apd1: ApdSetup::at_efficiency(dev.clone(), eta1, chain.gate_amplitude).map_err(err)?,
        apd2: ApdSetup::at_efficiency(dev, eta2, chain.gate_amplitude).map_err(err)?,
        n_gates: gates,
        seed,
        ..RunConfig::standard()
    };
    let pt = which_path_sweep(&cfg, &[mu]).map_err(err)?.remove(0);
    Ok(json!({
        "mu": mu,
        "n1": pt.counts.apd1,
        "n2": pt.counts.apd2,
        "none": pt.counts.none,
        "ambiguous": pt.counts.ambiguous,
        "frac_apd1": if pt.counts.apd1 + pt.counts.apd2 > 0 { Some(pt.counts.frac_apd1()) } else { None },
        "coincident": pt.stats.coincident,
    })
    .to_string())
}

#[wasm_bindgen(js_name = spikeTraces)]
pub fn spike_traces(gain_mismatch: f64, gate_amplitude: f64, threshold_fraction: f64) -> Result<String, JsError> {
    spike_traces_json(gain_mismatch, gate_amplitude, threshold_fraction).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = rangeCurve)]
pub fn range_curve(eta: f64, pd: f64, alpha: f64, r: f64) -> Result<String, JsError> {
    range_curve_json(eta, pd, alpha, r).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = whichPath)]
pub fn which_path(eta1: f64, eta2: f64, mu: f64, gates: u32, seed: u32) -> Result<String, JsError> {
    which_path_json(eta1, eta2, mu, gates as u64, seed as u64).map_err(|e| JsError::new(&e))
}
