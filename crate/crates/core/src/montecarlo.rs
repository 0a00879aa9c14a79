//! Gate-by-gate stochastic engine.
//!
//! Every gate draws a Poisson photon number, routes each photon through the
//! coupler, and lets each APD fire on any of three independent triggers:
//! photon absorption, a dark count, or release of a trapped carrier. When at
//! least one APD fires, the gate is classified either through the full
//! waveform pipeline (spikes + avalanche pulses → hybrid → discriminators) or
//! through an analytic peak-amplitude shortcut.
//!
//! Randomness comes from one ChaCha8 stream per run, seeded with
//! `ChaCha8Rng::seed_from_u64(seed)`. Replica `i` of a batch uses seed
//! `base_seed.wrapping_add(i)`. Results are bit-exact for a given seed, config
//! and crate version.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::device::{self, afterpulse_prob, trap_capture, trap_decay, DeviceCharacteristic, TrapState};
use crate::error::{Error, Result};
use crate::estimator::{AfterpulseData, PairTable};
use crate::signalchain::{
    self, compose_arm, discriminate, hybrid_subtract, synth_avalanche_pulse, synth_gate_spike, ChainParams, ClassLabel,
    Classification, Waveform, LOAD_POLARITY,
};

/// Duration of the laser pulse; photon arrival times spread uniformly over it.
pub const OPTICAL_PULSE_WIDTH: f64 = 100e-12;

/// One APD and its operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApdSetup {
    pub device: DeviceCharacteristic,
    pub overbias: f64,
    /// DC share of the total bias during the gate, in [0, 1].
    pub dc_fraction: f64,
}

impl ApdSetup {
    /// Operating point at `overbias`, with the DC bias making up whatever the
    /// gate pulse of `gate_amplitude` does not.
    pub fn at_overbias(device: DeviceCharacteristic, overbias: f64, gate_amplitude: f64) -> Self {
        let total = device.breakdown_voltage + overbias;
        let dc_fraction = if total > 0.0 {
            ((total - gate_amplitude) / total).clamp(0.0, 1.0)
        } else {
            0.0
        };
        ApdSetup {
            device,
            overbias,
            dc_fraction,
        }
    }

    pub fn nominal(device: DeviceCharacteristic, gate_amplitude: f64) -> Self {
        let ob = device.default_overbias();
        Self::at_overbias(device, ob, gate_amplitude)
    }

    /// Operating point whose efficiency equals `eta`.
    pub fn at_efficiency(device: DeviceCharacteristic, eta: f64, gate_amplitude: f64) -> Result<Self> {
        let ob = device.overbias_for_efficiency(eta)?;
        Ok(Self::at_overbias(device, ob, gate_amplitude))
    }

    /// Trap-free APD with exactly the given efficiency and dark probability,
    /// operated at the 178 K preset's nominal overbias.
    pub fn fixed(eta: f64, pd: f64) -> Result<Self> {
        let device = DeviceCharacteristic::fixed("fixed", 1.5, eta, pd)?;
        Ok(Self::at_overbias(device, 1.5, ChainParams::default().gate_amplitude))
    }

    /// An APD that never fires.
    pub fn disabled() -> Self {
        Self::fixed(0.0, 0.0).expect("zero table is valid")
    }

    pub fn efficiency(&self) -> f64 {
        self.device.efficiency_at(self.overbias)
    }

    pub fn dark_prob(&self) -> f64 {
        self.device.dark_prob_at(self.overbias)
    }

    pub fn amplitude(&self) -> f64 {
        self.device.avalanche_amplitude(self.overbias)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub clock_rate: f64,
    pub n_gates: u64,
    pub mean_photons: f64,
    /// Probability that a photon is routed to APD 1.
    pub splitter_ratio: f64,
    pub apd1: ApdSetup,
    pub apd2: ApdSetup,
    pub chain: ChainParams,
    pub seed: u64,
    pub waveform_mode: bool,
    /// Mean photon number of the first gate in double-pulse runs.
    pub first_gate_mu: f64,
    /// Number of leading gates whose outcomes are kept in the result.
    pub record_gates: u64,
}

impl RunConfig {
    /// Two 178 K APDs at the nominal point, weak light through a 3 dB coupler.
    pub fn standard() -> Self {
        let chain = ChainParams::default();
        let dev = device::preset("EPM239BA-178K").expect("built-in preset");
        RunConfig {
            clock_rate: 1e5,
            n_gates: 1_000_000,
            mean_photons: 0.2,
            splitter_ratio: 0.5,
            apd1: ApdSetup::nominal(dev.clone(), chain.gate_amplitude),
            apd2: ApdSetup::nominal(dev, chain.gate_amplitude),
            chain,
            seed: 0,
            waveform_mode: false,
            first_gate_mu: 100.0,
            record_gates: 0,
        }
    }

    /// APD 1 alone: APD 2 disabled and every photon routed to APD 1.
    pub fn single_apd(apd: ApdSetup) -> Self {
        RunConfig {
            apd1: apd,
            apd2: ApdSetup::disabled(),
            splitter_ratio: 1.0,
            ..Self::standard()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_gates < 1 {
            return Err(Error::config("n_gates must be >= 1"));
        }
        if !(self.clock_rate > 0.0) || !self.clock_rate.is_finite() {
            return Err(Error::config("clock_rate must be > 0"));
        }
        if !(self.mean_photons >= 0.0) || !self.mean_photons.is_finite() {
            return Err(Error::config("mean_photons must be >= 0"));
        }
        if !(self.first_gate_mu >= 0.0) || !self.first_gate_mu.is_finite() {
            return Err(Error::config("first_gate_mu must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.splitter_ratio) {
            return Err(Error::config("splitter_ratio must lie in [0, 1]"));
        }
        for (i, apd) in [&self.apd1, &self.apd2].into_iter().enumerate() {
            if !(apd.overbias >= 0.0) || !(0.0..=1.0).contains(&apd.dc_fraction) {
                return Err(Error::config(format!("apd{}: invalid operating point", i + 1)));
            }
        }
        self.chain.validate()
    }
}

/// Poisson photon source with its distribution prepared once.
#[derive(Debug, Clone, Copy)]
pub struct PhotonSource {
    dist: Option<Poisson<f64>>,
}

impl PhotonSource {
    pub fn new(mu: f64) -> Result<Self> {
        if mu == 0.0 {
            return Ok(PhotonSource { dist: None });
        }
        let dist = Poisson::new(mu).map_err(|e| Error::config(format!("mean photon number {mu}: {e}")))?;
        Ok(PhotonSource { dist: Some(dist) })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match &self.dist {
            Some(d) => d.sample(rng) as u32,
            None => 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Illumination<'a> {
    Dark,
    Pulse(&'a PhotonSource),
    /// Fixed photon numbers delivered to (APD 1, APD 2), bypassing the coupler.
    Forced([u32; 2]),
}

/// Ground truth of what happened inside one gate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateTruth {
    pub photons_sent: u32,
    /// Photons incident on each APD after the coupler.
    pub photons_in: [u32; 2],
    /// Which triggers fired on each APD.
    pub photon: [bool; 2],
    pub dark: [bool; 2],
    pub afterpulse: [bool; 2],
}

impl GateTruth {
    pub fn avalanche(&self, k: usize) -> bool {
        self.photon[k] || self.dark[k] || self.afterpulse[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub gate_index: u64,
    pub classification: Classification,
    pub truth: GateTruth,
    /// Both APDs avalanched.
    pub coincident: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub apd1: u64,
    pub apd2: u64,
    pub none: u64,
    pub ambiguous: u64,
}

impl ClassCounts {
    pub fn add(&mut self, c: &Classification) {
        match c.label() {
            ClassLabel::Apd1 => self.apd1 += 1,
            ClassLabel::Apd2 => self.apd2 += 1,
            ClassLabel::None => self.none += 1,
            ClassLabel::Ambiguous => self.ambiguous += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.apd1 + self.apd2 + self.none + self.ambiguous
    }

    /// APD 1 share of the sign-resolved clicks.
    pub fn frac_apd1(&self) -> f64 {
        let n = self.apd1 + self.apd2;
        if n == 0 {
            f64::NAN
        } else {
            self.apd1 as f64 / n as f64
        }
    }
}

/// Per-run tallies of the ground-truth flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub gates: u64,
    pub photons_sent: u64,
    pub photon_triggers: [u64; 2],
    pub dark_triggers: [u64; 2],
    pub afterpulse_triggers: [u64; 2],
    pub avalanches: [u64; 2],
    pub coincident: u64,
}

impl RunStats {
    fn add(&mut self, o: &GateOutcome) {
        self.gates += 1;
        self.photons_sent += o.truth.photons_sent as u64;
        for k in 0..2 {
            self.photon_triggers[k] += o.truth.photon[k] as u64;
            self.dark_triggers[k] += o.truth.dark[k] as u64;
            self.afterpulse_triggers[k] += o.truth.afterpulse[k] as u64;
            self.avalanches[k] += o.truth.avalanche(k) as u64;
        }
        self.coincident += o.coincident as u64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub counts: ClassCounts,
    #[serde(skip)]
    pub click_records: Vec<GateOutcome>,
    pub stats: RunStats,
    pub config: RunConfig,
    pub seed: u64,
}

/// Prepared per-run quantities shared by every gate.
pub struct GateEngine {
    chain: ChainParams,
    splitter: f64,
    eta: [f64; 2],
    pd: [f64; 2],
    amplitude: [f64; 2],
    apds: [ApdSetup; 2],
    waveform_mode: bool,
    peak_gain: f64,
    spike: Waveform,
    idle: Classification,
}

impl GateEngine {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let chain = config.chain.clone();
        let spike = synth_gate_spike(&chain)?;
        let idle = {
            let arm = compose_arm(&spike, None, LOAD_POLARITY, 1.0)?;
            discriminate(&chain, &hybrid_subtract(&chain, &arm, &arm)?, chain.detection_window())
        };
        let apds = [config.apd1.clone(), config.apd2.clone()];
        Ok(GateEngine {
            peak_gain: signalchain::avalanche_peak_gain(&chain)?,
            eta: [apds[0].efficiency(), apds[1].efficiency()],
            pd: [apds[0].dark_prob(), apds[1].dark_prob()],
            amplitude: [apds[0].amplitude(), apds[1].amplitude()],
            splitter: config.splitter_ratio,
            waveform_mode: config.waveform_mode,
            apds,
            chain,
            spike,
            idle,
        })
    }

    pub fn efficiency(&self) -> [f64; 2] {
        self.eta
    }

    pub fn dark_prob(&self) -> [f64; 2] {
        self.pd
    }

    /// Simulates one gate. Trap states must already be decayed to this gate.
    pub fn simulate_gate<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        traps: [TrapState; 2],
        illumination: Illumination<'_>,
    ) -> Result<(GateOutcome, [TrapState; 2])> {
        let mut truth = GateTruth::default();
        match illumination {
            Illumination::Dark => {}
            Illumination::Forced(n) => {
                truth.photons_sent = n[0] + n[1];
                truth.photons_in = n;
            }
            Illumination::Pulse(src) => {
                let n = src.sample(rng);
                truth.photons_sent = n;
                let n1 = if n == 0 || self.splitter >= 1.0 {
                    n
                } else if self.splitter <= 0.0 {
                    0
                } else {
                    Binomial::new(n as u64, self.splitter)
                        .expect("splitter ratio validated")
                        .sample(rng) as u32
                };
                truth.photons_in = [n1, n - n1];
            }
        }

        for k in 0..2 {
            let n = truth.photons_in[k];
            if n > 0 && self.eta[k] > 0.0 {
                let p = -((n as f64) * (-self.eta[k]).ln_1p()).exp_m1();
                truth.photon[k] = rng.random::<f64>() < p;
            }
            if self.pd[k] > 0.0 {
                truth.dark[k] = rng.random::<f64>() < self.pd[k];
            }
            let pap = afterpulse_prob(traps[k], &self.apds[k].device.trap);
            if pap > 0.0 {
                truth.afterpulse[k] = rng.random::<f64>() < pap;
            }
        }

        // trigger instants: photons share the optical pulse, thermal and
        // trap triggers fall anywhere on the gate plateau
        let mut trigger: [Option<f64>; 2] = [None, None];
        if truth.photon[0] || truth.photon[1] {
            let t = self.chain.gate_center() + (rng.random::<f64>() - 0.5) * OPTICAL_PULSE_WIDTH;
            for k in 0..2 {
                if truth.photon[k] {
                    trigger[k] = Some(t);
                }
            }
        }
        let (lo, hi) = (
            self.chain.gate_edge_time,
            self.chain.gate_width - self.chain.gate_edge_time,
        );
        for k in 0..2 {
            for fired in [truth.dark[k], truth.afterpulse[k]] {
                if fired {
                    let t = lo + rng.random::<f64>() * (hi - lo);
                    trigger[k] = Some(trigger[k].map_or(t, |t0: f64| t0.min(t)));
                }
            }
        }

        let classification = if trigger.iter().all(Option::is_none) {
            self.idle
        } else if self.waveform_mode {
            self.classify_waveform(trigger)?
        } else {
            self.classify_analytic(trigger)
        };

        let mut next = traps;
        for k in 0..2 {
            if trigger[k].is_some() {
                let apd = &self.apds[k];
                next[k] = trap_capture(next[k], &apd.device.trap, apd.overbias, apd.dc_fraction)?;
            }
        }
        let outcome = GateOutcome {
            gate_index: 0,
            classification,
            coincident: trigger[0].is_some() && trigger[1].is_some(),
            truth,
        };
        Ok((outcome, next))
    }

    fn classify_waveform(&self, trigger: [Option<f64>; 2]) -> Result<Classification> {
        let mut arms = Vec::with_capacity(2);
        for k in 0..2 {
            let arm = match trigger[k] {
                Some(t) => {
                    let pulse = synth_avalanche_pulse(&self.chain, self.amplitude[k], t)?;
                    compose_arm(&self.spike, Some(&pulse), LOAD_POLARITY, 1.0)?
                }
                None => compose_arm(&self.spike, None, LOAD_POLARITY, 1.0)?,
            };
            arms.push(arm);
        }
        let out = hybrid_subtract(&self.chain, &arms[0], &arms[1])?;
        Ok(discriminate(&self.chain, &out, self.chain.detection_window()))
    }

    /// Peak-amplitude classification; crossing times are the trigger instants.
    fn classify_analytic(&self, trigger: [Option<f64>; 2]) -> Classification {
        let eps = self.chain.gain_mismatch;
        let vth = self.chain.threshold;
        let out1 = (1.0 + 0.5 * eps) * self.peak_gain * self.amplitude[0];
        let out2 = (1.0 - 0.5 * eps) * self.peak_gain * self.amplitude[1];
        match trigger {
            [Some(t1), Some(t2)] if (t1 - t2).abs() < 0.5 * self.chain.sample_dt => {
                let d = out1 - out2;
                if d >= vth {
                    Classification::Apd1 { crossing_time: t1 }
                } else if -d >= vth {
                    Classification::Apd2 { crossing_time: t2 }
                } else {
                    Classification::NoClick
                }
            }
            [Some(t1), Some(t2)] => match (out1 >= vth, out2 >= vth) {
                (true, true) => Classification::Ambiguous,
                (true, false) => Classification::Apd1 { crossing_time: t1 },
                (false, true) => Classification::Apd2 { crossing_time: t2 },
                (false, false) => Classification::NoClick,
            },
            [Some(t1), None] if out1 >= vth => Classification::Apd1 { crossing_time: t1 },
            [None, Some(t2)] if out2 >= vth => Classification::Apd2 { crossing_time: t2 },
            _ => Classification::NoClick,
        }
    }
}

fn decay_pair(traps: [TrapState; 2], apds: &[ApdSetup; 2], dt: f64) -> Result<[TrapState; 2]> {
    let mut out = traps;
    for k in 0..2 {
        out[k] = trap_decay(traps[k], &apds[k].device.trap, dt)?;
    }
    Ok(out)
}

/// Runs `n_gates` illuminated gates at the configured clock rate.
pub fn run_experiment(config: &RunConfig) -> Result<RunResult> {
    let engine = GateEngine::new(config)?;
    let source = PhotonSource::new(config.mean_photons)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let period = 1.0 / config.clock_rate;
    let mut traps = [TrapState::EMPTY; 2];
    let mut counts = ClassCounts::default();
    let mut stats = RunStats::default();
    let mut click_records = Vec::with_capacity(config.record_gates.min(config.n_gates) as usize);
    for i in 0..config.n_gates {
        if i > 0 {
            traps = decay_pair(traps, &engine.apds, period)?;
        }
        let (mut outcome, next) = engine.simulate_gate(&mut rng, traps, Illumination::Pulse(&source))?;
        traps = next;
        outcome.gate_index = i;
        counts.add(&outcome.classification);
        stats.add(&outcome);
        if i < config.record_gates {
            click_records.push(outcome);
        }
    }
    Ok(RunResult {
        counts,
        click_records,
        stats,
        config: config.clone(),
        seed: config.seed,
    })
}

/// Seed of replica `index` in a batch started from `base_seed`.
pub fn replica_seed(base_seed: u64, index: u64) -> u64 {
    base_seed.wrapping_add(index)
}

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Independent replicas of `config`, replica `i` seeded by [`replica_seed`].
pub fn batch_replicate(config: &RunConfig, n_replicas: u64, base_seed: u64) -> Result<Vec<RunResult>> {
    if n_replicas < 1 {
        return Err(Error::argument("n_replicas must be >= 1"));
    }
    let configs: Vec<RunConfig> = (0..n_replicas)
        .map(|i| RunConfig {
            seed: replica_seed(base_seed, i),
            ..config.clone()
        })
        .collect();
    par_map(configs, |c| run_experiment(&c)).into_iter().collect()
}

/// Double-gate afterpulse measurement on APD 1.
///
/// Each of the `n_pairs` illuminated pairs fires a gate at `first_gate_mu`
/// and, `interval` seconds later, a dark gate. Each is followed by a reference
/// pair whose first gate is dark. Traps start empty for every pair, standing
/// in for the long dead time between pairs. A click is an APD 1
/// classification at the discriminator.
pub fn double_pulse_run(config: &RunConfig, interval: f64, n_pairs: u64) -> Result<AfterpulseData> {
    if !(interval >= config.chain.gate_width) {
        return Err(Error::argument(format!(
            "pulse interval {interval} s is shorter than the gate width {} s",
            config.chain.gate_width
        )));
    }
    let engine = GateEngine::new(config)?;
    let bright = PhotonSource::new(config.first_gate_mu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut illuminated = PairTable::default();
    let mut reference = PairTable::default();
    let is_click = |o: &GateOutcome| o.classification.label() == ClassLabel::Apd1;
    for _ in 0..n_pairs {
        for (first, table) in [
            (Illumination::Pulse(&bright), &mut illuminated),
            (Illumination::Dark, &mut reference),
        ] {
            let (a, traps) = engine.simulate_gate(&mut rng, [TrapState::EMPTY; 2], first)?;
            let traps = decay_pair(traps, &engine.apds, interval)?;
            let (b, _) = engine.simulate_gate(&mut rng, traps, Illumination::Dark)?;
            table.record(is_click(&a), is_click(&b));
        }
    }
    Ok(AfterpulseData {
        interval_s: interval,
        illuminated,
        reference,
        baseline: None,
    })
}

/// Counts at one photon flux of a which-path run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhichPathPoint {
    pub mu: f64,
    pub counts: ClassCounts,
    pub stats: RunStats,
    #[serde(skip)]
    pub records: Vec<GateOutcome>,
}

/// Runs the coupler experiment over a photon-flux grid with the waveform
/// pipeline forced on. Grid point `i` uses seed `replica_seed(config.seed, i)`.
pub fn which_path_sweep(config: &RunConfig, mu_grid: &[f64]) -> Result<Vec<WhichPathPoint>> {
    let jobs: Vec<(usize, f64)> = mu_grid.iter().copied().enumerate().collect();
    par_map(jobs, |(i, mu)| {
        let cfg = RunConfig {
            mean_photons: mu,
            waveform_mode: true,
            seed: replica_seed(config.seed, i as u64),
            ..config.clone()
        };
        run_experiment(&cfg).map(|r| WhichPathPoint {
            mu,
            counts: r.counts,
            stats: r.stats,
            records: r.click_records,
        })
    })
    .into_iter()
    .collect()
}
