//! QKD transmission range from detector figures of merit.
//!
//! A fiber of length L passes a fraction 10^(−αL/10) of the light. The signal
//! click probability per pulse is η·T (or η·μ·T for a weak coherent source),
//! dark clicks arrive at P_d per gate independent of L, and half of them land
//! in the wrong basis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    IdealSinglePhoton,
    WeakCoherent { mu: f64 },
}

impl Source {
    fn mean_photons(&self) -> f64 {
        match *self {
            Source::IdealSinglePhoton => 1.0,
            Source::WeakCoherent { mu } => mu,
        }
    }
}

/// Which condition bounds the usable fiber length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Dark-to-signal click ratio must stay at or below `r`.
    DarkSignalRatio { r: f64 },
    /// QBER must stay at or below `q`.
    MaxQber { q: f64 },
}

impl Default for Criterion {
    fn default() -> Self {
        Criterion::DarkSignalRatio { r: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub attenuation_db_per_km: f64,
    pub source: Source,
    pub criterion: Criterion,
    pub eta: f64,
    pub pd: f64,
}

impl LinkParams {
    pub fn new(eta: f64, pd: f64) -> Self {
        LinkParams {
            attenuation_db_per_km: 0.2,
            source: Source::IdealSinglePhoton,
            criterion: Criterion::default(),
            eta,
            pd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.attenuation_db_per_km > 0.0) {
            return Err(Error::config("attenuation must be > 0"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::config(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.pd) {
            return Err(Error::config(format!("pd must lie in [0, 1], got {}", self.pd)));
        }
        if let Source::WeakCoherent { mu } = self.source {
            if !(mu > 0.0) {
                return Err(Error::config("weak coherent source needs mu > 0"));
            }
        }
        match self.criterion {
            Criterion::DarkSignalRatio { r } if !(r > 0.0 && r < 1.0) => {
                Err(Error::config(format!("ratio criterion r must lie in (0, 1), got {r}")))
            }
            Criterion::MaxQber { q } if !(q > 0.0 && q < 0.5) => {
                Err(Error::config(format!("QBER criterion must lie in (0, 0.5), got {q}")))
            }
            _ => Ok(()),
        }
    }

    /// Signal click probability per pulse after `l_km` of fiber.
    pub fn signal(&self, l_km: f64) -> f64 {
        self.eta * self.source.mean_photons() * transmittance(self.attenuation_db_per_km, l_km)
    }
}

pub fn transmittance(alpha_db_per_km: f64, l_km: f64) -> f64 {
    10f64.powf(-alpha_db_per_km * l_km / 10.0)
}

pub fn dark_signal_ratio(p: &LinkParams, l_km: f64) -> f64 {
    p.pd / p.signal(l_km)
}

pub fn qber(p: &LinkParams, l_km: f64) -> f64 {
    0.5 * p.pd / (p.signal(l_km) + p.pd)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxRange {
    Km(f64),
    /// No dark counts: every length satisfies the criterion.
    Unbounded,
    /// The criterion fails already at L = 0.
    Unsatisfiable,
}

impl MaxRange {
    /// Range in km; 0 when unsatisfiable and infinite when unbounded.
    pub fn km(&self) -> f64 {
        match *self {
            MaxRange::Km(l) => l,
            MaxRange::Unbounded => f64::INFINITY,
            MaxRange::Unsatisfiable => 0.0,
        }
    }
}

const BISECTION_TOL_KM: f64 = 1e-9;

pub fn max_range(p: &LinkParams) -> Result<MaxRange> {
    p.validate()?;
    if p.pd == 0.0 {
        return Ok(MaxRange::Unbounded);
    }
    match p.criterion {
        Criterion::DarkSignalRatio { r } => {
            let mu = p.source.mean_photons();
            let l = (10.0 / p.attenuation_db_per_km) * (r * p.eta * mu / p.pd).log10();
            Ok(if l < 0.0 {
                MaxRange::Unsatisfiable
            } else {
                MaxRange::Km(l)
            })
        }
        Criterion::MaxQber { q } => {
            if qber(p, 0.0) > q {
                return Ok(MaxRange::Unsatisfiable);
            }
            // qber rises monotonically toward 1/2 as the signal vanishes
            let mut lo = 0.0;
            let mut hi = 10.0 / p.attenuation_db_per_km;
            while qber(p, hi) <= q {
                lo = hi;
                hi *= 2.0;
            }
            while hi - lo > BISECTION_TOL_KM {
                let mid = 0.5 * (lo + hi);
                if qber(p, mid) <= q {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(MaxRange::Km(lo))
        }
    }
}

/// Result object emitted by the `link-range` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeReport {
    /// `None` when the range is unbounded.
    pub range_km: Option<f64>,
    pub qber_at_range: Option<f64>,
    pub criterion: Criterion,
    pub unbounded: bool,
    pub unsatisfiable: bool,
}

pub fn range_report(p: &LinkParams) -> Result<RangeReport> {
    let r = max_range(p)?;
    Ok(match r {
        MaxRange::Km(l) => RangeReport {
            range_km: Some(l),
            qber_at_range: Some(qber(p, l)),
            criterion: p.criterion,
            unbounded: false,
            unsatisfiable: false,
        },
        MaxRange::Unsatisfiable => RangeReport {
            range_km: Some(0.0),
            qber_at_range: Some(qber(p, 0.0)),
            criterion: p.criterion,
            unbounded: false,
            unsatisfiable: true,
        },
        MaxRange::Unbounded => RangeReport {
            range_km: None,
            qber_at_range: Some(0.0),
            criterion: p.criterion,
            unbounded: true,
            unsatisfiable: false,
        },
    })
}
