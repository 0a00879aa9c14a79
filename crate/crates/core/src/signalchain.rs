//! Sampled model of the analog readout.
//!
//! Each arm sees the gate pulse through its load's RC differentiator (the
//! transient spike) plus, when the APD fires, an avalanche pulse. The 180°
//! hybrid takes the difference of the two arms with a fractional gain
//! mismatch, band-limits it, and two discriminators of opposite polarity
//! decide which APD fired.
//!
//! Time axis: the gate opens at t = 0 and closes at `gate_width`. Traces start
//! `window_margin` before the gate and end `window_margin` after it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Avalanche pulse polarity at the APD load. Both arms use the same polarity
/// so that coincident avalanches are common-mode at the hybrid.
pub const LOAD_POLARITY: f64 = -1.0;

/// Uniformly sampled voltage trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub dt: f64,
    pub t0: f64,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(dt: f64, t0: f64, samples: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::argument(format!("waveform dt must be > 0, got {dt}")));
        }
        if !t0.is_finite() || samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("waveform contains non-finite values"));
        }
        Ok(Waveform { dt, t0, samples })
    }

    pub fn zeros(dt: f64, t0: f64, len: usize) -> Self {
        Waveform {
            dt,
            t0,
            samples: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.time(i))
    }

    /// Largest absolute sample value.
    pub fn peak_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Rectangle-rule integral in volt-seconds.
    pub fn integral(&self) -> f64 {
        self.samples.iter().sum::<f64>() * self.dt
    }

    pub fn is_aligned(&self, other: &Waveform) -> bool {
        self.len() == other.len()
            && (self.dt - other.dt).abs() <= 1e-9 * self.dt
            && (self.t0 - other.t0).abs() <= 1e-6 * self.dt
    }

    fn check_aligned(&self, other: &Waveform) -> Result<()> {
        if self.is_aligned(other) {
            Ok(())
        } else {
            Err(Error::argument(format!(
                "misaligned waveforms: (dt {}, t0 {}, n {}) vs (dt {}, t0 {}, n {})",
                self.dt,
                self.t0,
                self.len(),
                other.dt,
                other.t0,
                other.len()
            )))
        }
    }

    /// `a·self + b·other` sample-wise.
    pub fn combine(&self, a: f64, other: &Waveform, b: f64) -> Result<Waveform> {
        self.check_aligned(other)?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Waveform {
            dt: self.dt,
            t0: self.t0,
            samples,
        })
    }

    pub fn scaled(&self, k: f64) -> Waveform {
        Waveform {
            dt: self.dt,
            t0: self.t0,
            samples: self.samples.iter().map(|x| k * x).collect(),
        }
    }
}

/// Analog chain parameters. Times in seconds, frequencies in hertz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainParams {
    pub gate_amplitude: f64,
    pub gate_width: f64,
    pub gate_edge_time: f64,
    /// R·C of the load differentiator (51 Ω × 1 pF by default).
    pub coupling_time_constant: f64,
    pub avalanche_rise: f64,
    pub avalanche_fall: f64,
    /// Fractional gain imbalance ε between the two hybrid inputs.
    pub gain_mismatch: f64,
    pub passband_low: f64,
    pub passband_high: f64,
    pub threshold: f64,
    pub sample_dt: f64,
    pub window_margin: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            gate_amplitude: 2.5,
            gate_width: 750e-12,
            gate_edge_time: 100e-12,
            coupling_time_constant: 51e-12,
            avalanche_rise: 100e-12,
            avalanche_fall: 300e-12,
            gain_mismatch: 0.05,
            passband_low: 2e6,
            passband_high: 2e9,
            threshold: DEFAULT_THRESHOLD,
            sample_dt: 10e-12,
            window_margin: 1e-9,
        }
    }
}

/// Half the chain-output peak of a nominal (1.5 V overbias) avalanche at the
/// default gain slope and ε = 0.05.
pub const DEFAULT_THRESHOLD: f64 = 0.137;

impl ChainParams {
    pub fn validate(&self) -> Result<()> {
        let times = [
            ("gate_width", self.gate_width),
            ("gate_edge_time", self.gate_edge_time),
            ("coupling_time_constant", self.coupling_time_constant),
            ("avalanche_rise", self.avalanche_rise),
            ("avalanche_fall", self.avalanche_fall),
            ("sample_dt", self.sample_dt),
            ("passband_low", self.passband_low),
            ("passband_high", self.passband_high),
            ("threshold", self.threshold),
        ];
        for (name, v) in times {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("chain.{name} must be > 0, got {v}")));
            }
        }
        if !(self.window_margin >= 0.0) {
            return Err(Error::config("chain.window_margin must be >= 0"));
        }
        if !(self.gate_amplitude >= 0.0) {
            return Err(Error::config("chain.gate_amplitude must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.gain_mismatch) {
            return Err(Error::config(format!(
                "chain.gain_mismatch must lie in [0, 1), got {}",
                self.gain_mismatch
            )));
        }
        if self.passband_low >= self.passband_high {
            return Err(Error::config("chain.passband_low must be below passband_high"));
        }
        if self.avalanche_rise >= self.avalanche_fall {
            return Err(Error::config(
                "chain.avalanche_rise must be shorter than avalanche_fall",
            ));
        }
        if self.gate_width < 2.0 * self.gate_edge_time {
            return Err(Error::config("chain.gate_width must cover both gate edges"));
        }
        if self.sample_dt >= self.gate_edge_time {
            return Err(Error::Resolution(format!(
                "sample_dt {} must be finer than gate_edge_time {}",
                self.sample_dt, self.gate_edge_time
            )));
        }
        Ok(())
    }

    pub fn gate_window(&self) -> (f64, f64) {
        (0.0, self.gate_width)
    }

    /// Window the discriminators watch: gate opening to trace end.
    pub fn detection_window(&self) -> (f64, f64) {
        (0.0, self.gate_width + self.window_margin)
    }

    /// Center of the gate, where the optical pulse is aimed.
    pub fn gate_center(&self) -> f64 {
        0.5 * self.gate_width
    }

    pub fn trace_start(&self) -> f64 {
        -self.window_margin
    }

    pub fn trace_len(&self) -> usize {
        let span = self.gate_width + 2.0 * self.window_margin;
        (span / self.sample_dt).round() as usize + 1
    }

    pub fn empty_trace(&self) -> Waveform {
        Waveform::zeros(self.sample_dt, self.trace_start(), self.trace_len())
    }

    /// Trapezoidal gate voltage at time `t`.
    fn gate_level(&self, t: f64) -> f64 {
        let e = self.gate_edge_time;
        let w = self.gate_width;
        let a = self.gate_amplitude;
        if t <= 0.0 || t >= w {
            0.0
        } else if t < e {
            a * t / e
        } else if t > w - e {
            a * (w - t) / e
        } else {
            a
        }
    }
}

/// Discretized first-order section (bilinear transform).
#[derive(Debug, Clone, Copy)]
enum FirstOrder {
    HighPass { b: f64, a: f64 },
    LowPass { b: f64, a: f64 },
}

impl FirstOrder {
    fn high_pass(corner_hz: f64, dt: f64) -> Self {
        let (k, w) = (2.0 / dt, 2.0 * std::f64::consts::PI * corner_hz);
        FirstOrder::HighPass {
            b: k / (k + w),
            a: (k - w) / (k + w),
        }
    }

    fn high_pass_tau(tau: f64, dt: f64) -> Self {
        let (k, w) = (2.0 / dt, 1.0 / tau);
        FirstOrder::HighPass {
            b: k / (k + w),
            a: (k - w) / (k + w),
        }
    }

    fn low_pass(corner_hz: f64, dt: f64) -> Self {
        let (k, w) = (2.0 / dt, 2.0 * std::f64::consts::PI * corner_hz);
        FirstOrder::LowPass {
            b: w / (k + w),
            a: (k - w) / (k + w),
        }
    }

    /// Filters in place, assuming the input held its first value forever
    /// before the trace began.
    fn apply(self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let mut x_prev = first;
        let mut y_prev = match self {
            FirstOrder::HighPass { .. } => 0.0,
            FirstOrder::LowPass { .. } => first,
        };
        for v in x.iter_mut() {
            let xn = *v;
            let y = match self {
                FirstOrder::HighPass { b, a } => b * (xn - x_prev) + a * y_prev,
                FirstOrder::LowPass { b, a } => b * (xn + x_prev) + a * y_prev,
            };
            x_prev = xn;
            y_prev = y;
            *v = y;
        }
    }
}

/// Gate pulse seen through the load differentiator: a positive spike on the
/// rising edge and a negative one on the falling edge.
pub fn synth_gate_spike(p: &ChainParams) -> Result<Waveform> {
    p.validate()?;
    let mut w = p.empty_trace();
    for i in 0..w.len() {
        let t = w.time(i);
        w.samples[i] = p.gate_level(t);
    }
    FirstOrder::high_pass_tau(p.coupling_time_constant, p.sample_dt).apply(&mut w.samples);
    Ok(w)
}

/// Normalization so the double exponential peaks at 1.
fn double_exp_norm(rise: f64, fall: f64) -> f64 {
    let t_peak = rise * fall / (fall - rise) * (fall / rise).ln();
    1.0 / ((-t_peak / fall).exp() - (-t_peak / rise).exp())
}

/// Positive double-exponential avalanche pulse triggered at `t_trigger`.
pub fn synth_avalanche_pulse(p: &ChainParams, amplitude: f64, t_trigger: f64) -> Result<Waveform> {
    p.validate()?;
    let (open, close) = p.gate_window();
    if !(open..=close).contains(&t_trigger) {
        return Err(Error::argument(format!(
            "trigger time {t_trigger} outside gate window [{open}, {close}]"
        )));
    }
    if !(amplitude >= 0.0) {
        return Err(Error::argument(format!(
            "avalanche amplitude must be >= 0, got {amplitude}"
        )));
    }
    let mut w = p.empty_trace();
    if amplitude == 0.0 {
        return Ok(w);
    }
    let (rise, fall) = (p.avalanche_rise, p.avalanche_fall);
    let scale = amplitude * double_exp_norm(rise, fall);
    let first = ((t_trigger - w.t0) / w.dt).floor() as usize + 1;
    if first < w.len() {
        let s0 = w.time(first) - t_trigger;
        let (mut ef, mut er) = ((-s0 / fall).exp(), (-s0 / rise).exp());
        let (kf, kr) = ((-w.dt / fall).exp(), (-w.dt / rise).exp());
        for v in &mut w.samples[first..] {
            *v = scale * (ef - er);
            ef *= kf;
            er *= kr;
        }
    }
    Ok(w)
}

/// One hybrid input: `arm_gain · (spike + polarity · avalanche)`.
pub fn compose_arm(spike: &Waveform, avalanche: Option<&Waveform>, polarity: f64, arm_gain: f64) -> Result<Waveform> {
    match avalanche {
        Some(a) => spike.combine(arm_gain, a, arm_gain * polarity),
        None => Ok(spike.scaled(arm_gain)),
    }
}

/// Band-limited difference `(1+ε/2)·w1 − (1−ε/2)·w2`.
pub fn hybrid_subtract(p: &ChainParams, w1: &Waveform, w2: &Waveform) -> Result<Waveform> {
    let eps = p.gain_mismatch;
    let mut out = w1.combine(1.0 + 0.5 * eps, w2, -(1.0 - 0.5 * eps))?;
    band_limit(p, &mut out);
    Ok(out)
}

/// Applies the hybrid's passband to a trace in place.
pub fn band_limit(p: &ChainParams, w: &mut Waveform) {
    FirstOrder::high_pass(p.passband_low, w.dt).apply(&mut w.samples);
    FirstOrder::low_pass(p.passband_high, w.dt).apply(&mut w.samples);
}

/// Discriminator decision for one gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Classification {
    Apd1 { crossing_time: f64 },
    Apd2 { crossing_time: f64 },
    NoClick,
    Ambiguous,
}

impl Classification {
    pub fn label(&self) -> ClassLabel {
        match self {
            Classification::Apd1 { .. } => ClassLabel::Apd1,
            Classification::Apd2 { .. } => ClassLabel::Apd2,
            Classification::NoClick => ClassLabel::None,
            Classification::Ambiguous => ClassLabel::Ambiguous,
        }
    }

    pub fn crossing_time(&self) -> Option<f64> {
        match *self {
            Classification::Apd1 { crossing_time } | Classification::Apd2 { crossing_time } => Some(crossing_time),
            _ => None,
        }
    }
}

/// Time-free classification label used in counts and CSV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Apd1,
    Apd2,
    None,
    Ambiguous,
}

/// Sign-resolving discrimination: APD 1 pulses are negative at the output,
/// APD 2 pulses positive.
pub fn discriminate(p: &ChainParams, w: &Waveform, gate_window: (f64, f64)) -> Classification {
    let vth = p.threshold;
    let (start, stop) = gate_window;
    let mut neg = None;
    let mut pos = None;
    for (i, &v) in w.samples.iter().enumerate() {
        let t = w.time(i);
        if t < start - 0.5 * w.dt {
            continue;
        }
        if t > stop + 0.5 * w.dt {
            break;
        }
        if neg.is_none() && v <= -vth {
            neg = Some(t);
        }
        if pos.is_none() && v >= vth {
            pos = Some(t);
        }
    }
    match (neg, pos) {
        (Some(crossing_time), None) => Classification::Apd1 { crossing_time },
        (None, Some(crossing_time)) => Classification::Apd2 { crossing_time },
        (Some(_), Some(_)) => Classification::Ambiguous,
        (None, None) => Classification::NoClick,
    }
}

/// Output peak of a unit avalanche pulse triggered at the gate center,
/// through the band limit alone. Used by the fast analytic classifier.
pub fn avalanche_peak_gain(p: &ChainParams) -> Result<f64> {
    let mut w = synth_avalanche_pulse(p, 1.0, p.gate_center())?;
    band_limit(p, &mut w);
    Ok(w.peak_abs())
}

/// Residual and single-arm spike traces for one gate with no photons.
#[derive(Debug, Clone)]
pub struct SpikeCancellation {
    pub arm1: Waveform,
    pub arm2: Waveform,
    pub differential: Waveform,
    /// One arm alone through the same chain with ideal gains.
    pub single_arm_output: Waveform,
}

impl SpikeCancellation {
    /// Peak residual relative to the peak a single arm would produce.
    pub fn residual_ratio(&self) -> f64 {
        let single = self.single_arm_output.peak_abs();
        if single == 0.0 {
            0.0
        } else {
            self.differential.peak_abs() / single
        }
    }
}

pub fn spike_cancellation(p: &ChainParams) -> Result<SpikeCancellation> {
    let spike = synth_gate_spike(p)?;
    let arm1 = compose_arm(&spike, None, LOAD_POLARITY, 1.0)?;
    let arm2 = compose_arm(&spike, None, LOAD_POLARITY, 1.0)?;
    let differential = hybrid_subtract(p, &arm1, &arm2)?;
    let mut single_arm_output = arm1.clone();
    band_limit(p, &mut single_arm_output);
    Ok(SpikeCancellation {
        arm1,
        arm2,
        differential,
        single_arm_output,
    })
}
