//! Parameter recovery from click counts.
//!
//! The click model for a gate with Poisson-distributed incident photons of
//! mean μ is
//!
//! ```text
//! P(click) = 1 − (1 − P_d) · exp(−η μ)
//! ```
//!
//! and [`fit_poisson_model`] maximizes the binomial likelihood of a set of
//! (μ, clicks, gates) samples over (η, P_d). Afterpulsing is estimated from
//! double-gate data as the excess of second-gate clicks after a first-gate
//! click over the rate after no first-gate click.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clicks observed over `gates` gates at mean photon number `mean_photons`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountSample {
    #[serde(rename = "mu")]
    pub mean_photons: f64,
    pub clicks: u64,
    pub gates: u64,
}

impl CountSample {
    pub fn new(mean_photons: f64, clicks: u64, gates: u64) -> Result<Self> {
        let s = CountSample {
            mean_photons,
            clicks,
            gates,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if !(self.mean_photons >= 0.0) || !self.mean_photons.is_finite() {
            return Err(Error::argument(format!("mu must be >= 0, got {}", self.mean_photons)));
        }
        if self.clicks > self.gates {
            return Err(Error::argument(format!(
                "{} clicks exceed {} gates",
                self.clicks, self.gates
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub eta_hat: f64,
    pub pd_hat: f64,
    pub eta_stderr: f64,
    pub pd_stderr: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: u32,
    /// Dark probability was held fixed rather than fitted.
    pub pd_fixed: bool,
}

pub fn click_probability(eta: f64, pd: f64, mu: f64) -> f64 {
    -log_no_click(eta, pd, mu).exp_m1()
}

fn log_no_click(eta: f64, pd: f64, mu: f64) -> f64 {
    (-pd).ln_1p() - eta * mu
}

fn log_likelihood(samples: &[CountSample], eta: f64, pd: f64) -> f64 {
    samples
        .iter()
        .map(|s| {
            let (k, n) = (s.clicks as f64, s.gates as f64);
            let lq = log_no_click(eta, pd, s.mean_photons);
            let mut ll = (n - k) * lq;
            if s.clicks > 0 {
                ll += k * (-lq.exp_m1()).ln();
            }
            ll
        })
        .sum()
}

/// Gradient and Hessian of the log-likelihood in (η, P_d).
fn derivatives(samples: &[CountSample], eta: f64, pd: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut g = [0.0; 2];
    let mut h = [[0.0; 2]; 2];
    let one_m_pd = 1.0 - pd;
    for s in samples {
        let (k, n, mu) = (s.clicks as f64, s.gates as f64, s.mean_photons);
        let lq = log_no_click(eta, pd, mu);
        let q = lq.exp();
        let p = -lq.exp_m1();
        // w = k q / p − (n − k), with the k = 0 case kept finite at p = 0
        let (w, kq_p2) = if s.clicks == 0 {
            (-(n - k), 0.0)
        } else {
            (k * q / p - (n - k), k * q / (p * p))
        };
        g[0] += mu * w;
        g[1] += w / one_m_pd;
        h[0][0] -= kq_p2 * mu * mu;
        h[0][1] -= kq_p2 * mu / one_m_pd;
        h[1][1] += (w - kq_p2) / (one_m_pd * one_m_pd);
    }
    h[1][0] = h[0][1];
    (g, h)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

const LOGIT_BOUND: f64 = 40.0;
const LL_TOL: f64 = 1e-10;
const MAX_ITER: u32 = 500;

fn validate_samples(samples: &[CountSample]) -> Result<()> {
    for s in samples {
        s.validate()?;
    }
    if samples.len() < 2 {
        return Err(Error::argument("need at least two samples"));
    }
    let mut mus: Vec<f64> = samples.iter().map(|s| s.mean_photons).collect();
    mus.sort_by(f64::total_cmp);
    if mus.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::argument("sample mean photon numbers must be distinct"));
    }
    if !mus.iter().any(|&m| m > 0.0) {
        return Err(Error::argument("need at least one illuminated sample"));
    }
    Ok(())
}

fn initial_guess(samples: &[CountSample]) -> (f64, f64) {
    let rate = |s: &CountSample| (s.clicks as f64 + 0.5) / (s.gates as f64 + 1.0);
    let darkest = samples
        .iter()
        .min_by(|a, b| a.mean_photons.total_cmp(&b.mean_photons))
        .expect("validated non-empty");
    let brightest = samples
        .iter()
        .max_by(|a, b| a.mean_photons.total_cmp(&b.mean_photons))
        .expect("validated non-empty");
    let pd0 = if darkest.mean_photons == 0.0 {
        rate(darkest)
    } else {
        1e-6
    }
    .clamp(1e-12, 0.5);
    let p = rate(brightest).max(pd0 * 1.0001);
    let eta0 = (-((1.0 - p) / (1.0 - pd0)).ln() / brightest.mean_photons).clamp(1e-6, 1.0 - 1e-6);
    (eta0, pd0)
}

fn inverse_2x2(m: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// Joint maximum-likelihood fit of (η, P_d).
pub fn fit_poisson_model(samples: &[CountSample]) -> Result<FitResult> {
    validate_samples(samples)?;
    if samples.iter().all(|s| s.clicks == 0) {
        return Ok(boundary_result(samples));
    }
    let (eta0, pd0) = initial_guess(samples);
    let mut x = [logit(eta0), logit(pd0)];
    let natural = |x: [f64; 2]| (sigmoid(x[0]), sigmoid(x[1]));
    let mut ll = log_likelihood(samples, eta0, pd0);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITER {
        iterations += 1;
        let (eta, pd) = natural(x);
        let (g, h) = derivatives(samples, eta, pd);
        let j = [eta * (1.0 - eta), pd * (1.0 - pd)];
        let gt = [g[0] * j[0], g[1] * j[1]];
        let ht = [
            [
                h[0][0] * j[0] * j[0] + g[0] * j[0] * (1.0 - 2.0 * eta),
                h[0][1] * j[0] * j[1],
            ],
            [
                h[1][0] * j[0] * j[1],
                h[1][1] * j[1] * j[1] + g[1] * j[1] * (1.0 - 2.0 * pd),
            ],
        ];
        let negative_definite = ht[0][0] < 0.0 && ht[0][0] * ht[1][1] - ht[0][1] * ht[1][0] > 0.0;
        let mut step = match inverse_2x2(ht).filter(|_| negative_definite) {
            Some(inv) => [
                -(inv[0][0] * gt[0] + inv[0][1] * gt[1]),
                -(inv[1][0] * gt[0] + inv[1][1] * gt[1]),
            ],
            None => {
                let norm = (gt[0] * gt[0] + gt[1] * gt[1]).sqrt().max(1e-300);
                [gt[0] / norm, gt[1] / norm]
            }
        };

        let mut accepted = None;
        for _ in 0..60 {
            let cand = [
                (x[0] + step[0]).clamp(-LOGIT_BOUND, LOGIT_BOUND),
                (x[1] + step[1]).clamp(-LOGIT_BOUND, LOGIT_BOUND),
            ];
            let (e, d) = natural(cand);
            let cand_ll = log_likelihood(samples, e, d);
            if cand_ll >= ll {
                accepted = Some((cand, cand_ll));
                break;
            }
            step = [0.5 * step[0], 0.5 * step[1]];
        }
        let Some((next, next_ll)) = accepted else {
            converged = true;
            break;
        };
        let gain = next_ll - ll;
        let moved = (next[0] - x[0]).abs().max((next[1] - x[1]).abs());
        x = next;
        ll = next_ll;
        if gain <= LL_TOL * (1.0 + ll.abs()) && moved < 1e-6 {
            converged = true;
            break;
        }
        // pinned at the lower logit bound: the dark probability MLE is 0
        if x[1] <= -LOGIT_BOUND + 1e-9 && gain <= LL_TOL * (1.0 + ll.abs()) {
            converged = true;
            break;
        }
    }

    let (eta, pd) = natural(x);
    if pd < 1e-15 {
        // MLE sits on the P_d = 0 boundary
        let mut fit = fit_poisson_model_fixed_pd(samples, 0.0)?;
        fit.pd_fixed = false;
        fit.converged &= converged;
        fit.iterations += iterations;
        let (_, h) = derivatives(samples, fit.eta_hat, 0.0);
        if let Some(cov) = inverse_2x2([[-h[0][0], -h[0][1]], [-h[1][0], -h[1][1]]]) {
            fit.pd_stderr = cov[1][1].max(0.0).sqrt();
        }
        return Ok(fit);
    }
    let (_, h) = derivatives(samples, eta, pd);
    let cov = inverse_2x2([[-h[0][0], -h[0][1]], [-h[1][0], -h[1][1]]]);
    let (eta_stderr, pd_stderr) = match cov {
        Some(c) if c[0][0] >= 0.0 && c[1][1] >= 0.0 => (c[0][0].sqrt(), c[1][1].sqrt()),
        _ => {
            converged = false;
            (f64::NAN, f64::NAN)
        }
    };
    Ok(FitResult {
        eta_hat: eta,
        pd_hat: pd,
        eta_stderr,
        pd_stderr,
        log_likelihood: ll,
        converged,
        iterations,
        pd_fixed: false,
    })
}

fn boundary_result(samples: &[CountSample]) -> FitResult {
    FitResult {
        eta_hat: 0.0,
        pd_hat: 0.0,
        eta_stderr: 0.0,
        pd_stderr: 0.0,
        log_likelihood: log_likelihood(samples, 0.0, 0.0),
        converged: false,
        iterations: 0,
        pd_fixed: false,
    }
}

/// Fit of η alone with P_d held at a value measured separately.
pub fn fit_poisson_model_fixed_pd(samples: &[CountSample], pd: f64) -> Result<FitResult> {
    for s in samples {
        s.validate()?;
    }
    if !(0.0..1.0).contains(&pd) {
        return Err(Error::argument(format!("fixed pd must lie in [0, 1), got {pd}")));
    }
    if !samples.iter().any(|s| s.mean_photons > 0.0) {
        return Err(Error::argument("need at least one illuminated sample"));
    }
    let excess: u64 = samples.iter().filter(|s| s.mean_photons > 0.0).map(|s| s.clicks).sum();
    if excess == 0 {
        let mut r = boundary_result(samples);
        r.pd_hat = pd;
        r.pd_fixed = true;
        return Ok(r);
    }
    let brightest = samples
        .iter()
        .max_by(|a, b| a.mean_photons.total_cmp(&b.mean_photons))
        .expect("non-empty");
    let p = ((brightest.clicks as f64 + 0.5) / (brightest.gates as f64 + 1.0)).max(pd * 1.0001 + 1e-12);
    let eta0 = (-((1.0 - p) / (1.0 - pd)).ln() / brightest.mean_photons).clamp(1e-6, 1.0 - 1e-6);
    let mut a = logit(eta0);
    let mut ll = log_likelihood(samples, eta0, pd);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let eta = sigmoid(a);
        let (g, h) = derivatives(samples, eta, pd);
        let j = eta * (1.0 - eta);
        let gt = g[0] * j;
        let ht = h[0][0] * j * j + g[0] * j * (1.0 - 2.0 * eta);
        let mut step = if ht < 0.0 { -gt / ht } else { gt.signum() };
        let mut accepted = None;
        for _ in 0..60 {
            let cand = (a + step).clamp(-LOGIT_BOUND, LOGIT_BOUND);
            let cand_ll = log_likelihood(samples, sigmoid(cand), pd);
            if cand_ll >= ll {
                accepted = Some((cand, cand_ll));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_ll)) = accepted else {
            converged = true;
            break;
        };
        let gain = next_ll - ll;
        let moved = (next - a).abs();
        a = next;
        ll = next_ll;
        if gain <= LL_TOL * (1.0 + ll.abs()) && moved < 1e-8 {
            converged = true;
            break;
        }
    }
    let eta = sigmoid(a);
    let (_, h) = derivatives(samples, eta, pd);
    let eta_stderr = if h[0][0] < 0.0 {
        (-1.0 / h[0][0]).sqrt()
    } else {
        f64::NAN
    };
    Ok(FitResult {
        eta_hat: eta,
        pd_hat: pd,
        eta_stderr,
        pd_stderr: 0.0,
        log_likelihood: ll,
        converged: converged && eta_stderr.is_finite(),
        iterations,
        pd_fixed: true,
    })
}

/// 2×2 table of first-gate/second-gate click outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTable {
    /// `[clickA][clickB]` → count, index 1 meaning a click.
    pub counts: [[u64; 2]; 2],
}

impl PairTable {
    pub fn record(&mut self, click_a: bool, click_b: bool) {
        self.counts[click_a as usize][click_b as usize] += 1;
    }

    pub fn pairs(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn first_clicks(&self) -> u64 {
        self.counts[1][0] + self.counts[1][1]
    }

    pub fn second_clicks(&self) -> u64 {
        self.counts[0][1] + self.counts[1][1]
    }

    pub fn merged(&self, other: &PairTable) -> PairTable {
        let mut out = *self;
        for a in 0..2 {
            for b in 0..2 {
                out.counts[a][b] += other.counts[a][b];
            }
        }
        out
    }
}

/// Double-gate measurement at one pulse interval.
///
/// `illuminated` pairs have a bright first gate; `reference` pairs have a
/// dark first gate and supply the no-prior-click baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfterpulseData {
    pub interval_s: f64,
    pub illuminated: PairTable,
    pub reference: PairTable,
    /// Second-gate click probability to subtract instead of the ¬clickA rate.
    #[serde(default)]
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfterpulseEstimate {
    pub p_after: f64,
    pub stderr: f64,
}

fn rate_and_var(k: u64, n: u64) -> (f64, f64) {
    let p = k as f64 / n as f64;
    (p, p * (1.0 - p) / n as f64)
}

/// Background-subtracted conditional afterpulse probability
/// P(clickB | clickA) − P(clickB | ¬clickA), clamped at zero.
pub fn estimate_afterpulse(data: &AfterpulseData) -> Result<AfterpulseEstimate> {
    let table = data.illuminated.merged(&data.reference);
    let n_a = table.first_clicks();
    if n_a == 0 {
        return Err(Error::Estimation("no first-gate clicks recorded".into()));
    }
    let (p1, v1) = rate_and_var(table.counts[1][1], n_a);
    let (p0, v0) = match data.baseline {
        Some(b) => (b, 0.0),
        None => {
            let n_na = table.counts[0][0] + table.counts[0][1];
            if n_na == 0 {
                return Err(Error::Estimation(
                    "no first-gate misses and no configured baseline".into(),
                ));
            }
            rate_and_var(table.counts[0][1], n_na)
        }
    };
    Ok(AfterpulseEstimate {
        p_after: (p1 - p0).max(0.0),
        stderr: (v1 + v0).sqrt(),
    })
}

/// Afterpulse clicks per pulse in the second gate of illuminated pairs: the
/// second-gate click rate minus the reference (dark first gate) rate.
pub fn estimate_unconditional_afterpulse(data: &AfterpulseData) -> Result<AfterpulseEstimate> {
    let n1 = data.illuminated.pairs();
    if n1 == 0 {
        return Err(Error::Estimation("no illuminated pairs".into()));
    }
    let (p1, v1) = rate_and_var(data.illuminated.second_clicks(), n1);
    let (p0, v0) = match data.baseline {
        Some(b) => (b, 0.0),
        None => {
            let n0 = data.reference.pairs();
            if n0 == 0 {
                return Err(Error::Estimation(
                    "no reference pairs and no configured baseline".into(),
                ));
            }
            rate_and_var(data.reference.second_clicks(), n0)
        }
    };
    Ok(AfterpulseEstimate {
        p_after: (p1 - p0).max(0.0),
        stderr: (v1 + v0).sqrt(),
    })
}

/// Single-exponential fit `p(t) = amplitude · exp(−t / tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub tau_s: f64,
    pub tau_stderr: f64,
    pub points_used: usize,
}

/// Weighted log-linear least squares over points with a positive estimate.
pub fn fit_afterpulse_decay(points: &[(f64, AfterpulseEstimate)]) -> Result<DecayFit> {
    let usable: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|(_, e)| e.p_after > 0.0 && e.stderr > 0.0)
        .map(|&(t, e)| {
            let rel = e.stderr / e.p_after;
            (t, e.p_after.ln(), 1.0 / (rel * rel))
        })
        .collect();
    if usable.len() < 2 {
        return Err(Error::Estimation(
            "need two intervals with a positive afterpulse estimate".into(),
        ));
    }
    let sw: f64 = usable.iter().map(|u| u.2).sum();
    let st: f64 = usable.iter().map(|u| u.2 * u.0).sum::<f64>() / sw;
    let sy: f64 = usable.iter().map(|u| u.2 * u.1).sum::<f64>() / sw;
    let stt: f64 = usable.iter().map(|u| u.2 * (u.0 - st) * (u.0 - st)).sum();
    if stt == 0.0 {
        return Err(Error::Estimation("intervals must be distinct".into()));
    }
    let slope = usable.iter().map(|u| u.2 * (u.0 - st) * (u.1 - sy)).sum::<f64>() / stt;
    if slope >= 0.0 {
        return Err(Error::Estimation(
            "afterpulse estimates do not decay with interval".into(),
        ));
    }
    let intercept = sy - slope * st;
    let slope_se = (1.0 / stt).sqrt();
    Ok(DecayFit {
        amplitude: intercept.exp(),
        tau_s: -1.0 / slope,
        tau_stderr: slope_se / (slope * slope),
        points_used: usable.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn exact_samples(eta: f64, pd: f64, mus: &[f64], gates: u64) -> Vec<CountSample> {
        mus.iter()
            .map(|&mu| CountSample {
                mean_photons: mu,
                clicks: (click_probability(eta, pd, mu) * gates as f64).round() as u64,
                gates,
            })
            .collect()
    }

    #[test]
    fn click_probability_examples() {
        assert_relative_eq!(click_probability(0.11, 7e-7, 0.0), 7e-7, max_relative = 1e-12);
        assert!((click_probability(0.11, 0.0, 0.2) - 0.02176).abs() < 1e-6);
        assert_relative_eq!(
            click_probability(0.11, 0.0, 0.2),
            1.0 - (-0.022f64).exp(),
            max_relative = 1e-12
        );
        assert_eq!(click_probability(1.0, 0.0, 1e6), 1.0);
    }

    #[test]
    fn recovers_exact_data() {
        let s = exact_samples(0.11, 7e-7, &[0.0, 0.1, 0.5, 1.0, 2.0], 100_000_000);
        let f = fit_poisson_model(&s).unwrap();
        assert!(f.converged);
        assert!((f.eta_hat - 0.11).abs() / 0.11 < 0.01, "{f:?}");
        assert!((f.pd_hat - 7e-7).abs() / 7e-7 < 0.10, "{f:?}");
        assert!(f.eta_stderr > 0.0 && f.pd_stderr > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = exact_samples(0.13, 2e-5, &[0.0, 0.3, 1.5], 1_000_000);
        let (eta, pd) = (0.12, 3e-5);
        let (g, h) = derivatives(&s, eta, pd);
        let he = 1e-7;
        let hp = 1e-10;
        let ge = (log_likelihood(&s, eta + he, pd) - log_likelihood(&s, eta - he, pd)) / (2.0 * he);
        let gp = (log_likelihood(&s, eta, pd + hp) - log_likelihood(&s, eta, pd - hp)) / (2.0 * hp);
        assert_relative_eq!(g[0], ge, max_relative = 1e-4);
        assert_relative_eq!(g[1], gp, max_relative = 1e-4);
        let (g_e, _) = derivatives(&s, eta + he, pd);
        let (g_p, _) = derivatives(&s, eta, pd + hp);
        assert_relative_eq!(h[0][0], (g_e[0] - g[0]) / he, max_relative = 1e-3);
        assert_relative_eq!(h[1][1], (g_p[1] - g[1]) / hp, max_relative = 1e-3);
        assert_relative_eq!(h[0][1], (g_p[0] - g[0]) / hp, max_relative = 1e-3);
    }

    #[test]
    fn zero_dark_truth_hits_boundary() {
        let s = exact_samples(0.11, 0.0, &[0.0, 0.5, 2.0], 10_000_000);
        let f = fit_poisson_model(&s).unwrap();
        assert_eq!(f.pd_hat, 0.0);
        assert!(f.pd_hat - 1.96 * f.pd_stderr <= 0.0);
        assert!((f.eta_hat - 0.11).abs() / 0.11 < 0.01);
    }

    #[test]
    fn all_zero_clicks_is_not_converged() {
        let s = [
            CountSample::new(0.0, 0, 1000).unwrap(),
            CountSample::new(1.0, 0, 1000).unwrap(),
        ];
        let f = fit_poisson_model(&s).unwrap();
        assert!(!f.converged);
        assert_eq!((f.eta_hat, f.pd_hat), (0.0, 0.0));
    }

    #[test]
    fn rejects_degenerate_designs() {
        let repeated = [
            CountSample::new(1.0, 10, 1000).unwrap(),
            CountSample::new(1.0, 12, 1000).unwrap(),
        ];
        assert!(matches!(fit_poisson_model(&repeated), Err(Error::Argument(_))));
        let dark = [CountSample::new(0.0, 1, 1000).unwrap()];
        assert!(fit_poisson_model(&dark).is_err());
        assert!(CountSample::new(1.0, 11, 10).is_err());
    }

    #[test]
    fn fixed_pd_fit() {
        let s = exact_samples(0.11, 7e-7, &[0.1, 0.5, 1.0, 2.0], 10_000_000);
        let f = fit_poisson_model_fixed_pd(&s, 7e-7).unwrap();
        assert!(f.converged && f.pd_fixed);
        assert!((f.eta_hat - 0.11).abs() / 0.11 < 1e-3);
        assert_eq!(f.pd_hat, 7e-7);
    }

    fn table(counts: [[u64; 2]; 2]) -> PairTable {
        PairTable { counts }
    }

    #[test]
    fn afterpulse_estimation() {
        let data = AfterpulseData {
            interval_s: 1e-6,
            illuminated: table([[10, 0], [999_000, 100]]),
            reference: table([[999_990, 1], [9, 0]]),
            baseline: None,
        };
        let e = estimate_afterpulse(&data).unwrap();
        let expected = 100.0 / 999_109.0 - 1.0 / 1_000_001.0;
        assert_relative_eq!(e.p_after, expected, max_relative = 1e-12);
        assert!(e.stderr > 0.0);

        let u = estimate_unconditional_afterpulse(&data).unwrap();
        assert_relative_eq!(u.p_after, 100.0 / 999_110.0 - 1.0 / 1_000_000.0, max_relative = 1e-12);

        let none = AfterpulseData {
            illuminated: table([[5, 0], [0, 0]]),
            reference: PairTable::default(),
            ..data
        };
        assert!(matches!(estimate_afterpulse(&none), Err(Error::Estimation(_))));

        let no_baseline = AfterpulseData {
            illuminated: table([[0, 0], [100, 1]]),
            reference: PairTable::default(),
            ..data
        };
        assert!(estimate_afterpulse(&no_baseline).is_err());
        let with_baseline = AfterpulseData {
            baseline: Some(0.0),
            ..no_baseline
        };
        assert_relative_eq!(estimate_afterpulse(&with_baseline).unwrap().p_after, 1.0 / 101.0);
    }

    #[test]
    fn decay_fit_recovers_exact_exponential() {
        let pts: Vec<(f64, AfterpulseEstimate)> = [0.5e-6, 1e-6, 2e-6, 5e-6]
            .iter()
            .map(|&t| {
                let p = 2e-4 * (-t / 2e-6f64).exp();
                (
                    t,
                    AfterpulseEstimate {
                        p_after: p,
                        stderr: 0.05 * p,
                    },
                )
            })
            .collect();
        let fit = fit_afterpulse_decay(&pts).unwrap();
        assert_relative_eq!(fit.tau_s, 2e-6, max_relative = 1e-9);
        assert_relative_eq!(fit.amplitude, 2e-4, max_relative = 1e-9);
        assert!(fit_afterpulse_decay(&pts[..1]).is_err());
    }

    proptest! {
        #[test]
        fn click_probability_monotone(eta in 0.0f64..1.0, pd in 0.0f64..0.5, mu in 0.0f64..20.0,
                                      de in 0.0f64..0.1, dp in 0.0f64..0.1, dm in 0.0f64..1.0) {
            let p = click_probability(eta, pd, mu);
            prop_assert!((pd - 1e-15..=1.0).contains(&p));
            prop_assert!(click_probability((eta + de).min(1.0), pd, mu) >= p);
            prop_assert!(click_probability(eta, pd + dp, mu) >= p);
            prop_assert!(click_probability(eta, pd, mu + dm) >= p);
        }
    }
}
