//! Phenomenological gated-mode APD model.
//!
//! Efficiency and dark-count probability per gate are tabulated against
//! overbias (total gate-time bias minus breakdown) and interpolated piecewise
//! linearly. Afterpulsing is carried by a [`TrapState`]: every avalanche fills
//! the trap with an expected number of carriers, the population decays with a
//! single detrapping time constant, and each remaining carrier can fire a
//! later gate independently.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a bias table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, f64)", into = "(f64, f64, f64)")]
pub struct BiasPoint {
    pub overbias: f64,
    pub efficiency: f64,
    pub dark_prob: f64,
}

impl From<(f64, f64, f64)> for BiasPoint {
    fn from((overbias, efficiency, dark_prob): (f64, f64, f64)) -> Self {
        BiasPoint {
            overbias,
            efficiency,
            dark_prob,
        }
    }
}

impl From<BiasPoint> for (f64, f64, f64) {
    fn from(p: BiasPoint) -> Self {
        (p.overbias, p.efficiency, p.dark_prob)
    }
}

/// Afterpulse trap parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapParams {
    /// Expected trapped carriers per avalanche.
    pub capture: f64,
    /// Probability that a single trapped carrier fires a gate.
    pub release: f64,
    /// Detrapping time constant in seconds.
    pub tau_s: f64,
    /// Fractional capture increase per volt of overbias.
    #[serde(default)]
    pub k_ob: f64,
    /// Capture reduction per unit DC fraction of the total bias.
    #[serde(default)]
    pub dc_sweep: f64,
}

impl TrapParams {
    /// A trap that never captures anything.
    pub const NONE: TrapParams = TrapParams {
        capture: 0.0,
        release: 0.0,
        tau_s: 1e-6,
        k_ob: 0.0,
        dc_sweep: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("capture", self.capture),
            ("release", self.release),
            ("tau_s", self.tau_s),
            ("k_ob", self.k_ob),
            ("dc_sweep", self.dc_sweep),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("trap.{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.release > 1.0 {
            return Err(Error::config("trap.release must be <= 1"));
        }
        if self.tau_s <= 0.0 {
            return Err(Error::config("trap.tau_s must be > 0"));
        }
        Ok(())
    }
}

/// Expected trapped-carrier population of one APD.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrapState {
    pub population: f64,
    pub last_update_time: f64,
}

impl TrapState {
    pub const EMPTY: TrapState = TrapState {
        population: 0.0,
        last_update_time: 0.0,
    };
}

#[derive(Deserialize)]
struct RawCharacteristic {
    name: String,
    #[serde(rename = "temperature_K")]
    temperature_k: f64,
    breakdown_voltage: f64,
    bias_table: Vec<BiasPoint>,
    trap: TrapParams,
    #[serde(default = "default_gain_slope")]
    avalanche_gain_slope: f64,
    #[serde(default)]
    nominal_overbias: Option<f64>,
}

fn default_gain_slope() -> f64 {
    DEFAULT_GAIN_SLOPE
}

/// Output volts per volt of overbias shared by the built-in presets.
pub const DEFAULT_GAIN_SLOPE: f64 = 0.2;

/// Bias/temperature characteristic of one APD at one temperature.
///
/// Constructed through [`DeviceCharacteristic::new`] or deserialization, both
/// of which enforce table monotonicity and probability ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCharacteristic")]
pub struct DeviceCharacteristic {
    pub name: String,
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    pub breakdown_voltage: f64,
    pub bias_table: Vec<BiasPoint>,
    pub trap: TrapParams,
    pub avalanche_gain_slope: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nominal_overbias: Option<f64>,
}

impl TryFrom<RawCharacteristic> for DeviceCharacteristic {
    type Error = Error;

    fn try_from(raw: RawCharacteristic) -> Result<Self> {
        DeviceCharacteristic::new(
            raw.name,
            raw.temperature_k,
            raw.breakdown_voltage,
            raw.bias_table,
            raw.trap,
            raw.avalanche_gain_slope,
            raw.nominal_overbias,
        )
    }
}

impl DeviceCharacteristic {
    pub fn new(
        name: impl Into<String>,
        temperature_k: f64,
        breakdown_voltage: f64,
        bias_table: Vec<BiasPoint>,
        trap: TrapParams,
        avalanche_gain_slope: f64,
        nominal_overbias: Option<f64>,
    ) -> Result<Self> {
        let name = name.into();
        if bias_table.is_empty() {
            return Err(Error::config(format!("{name}: empty bias table")));
        }
        if !(temperature_k > 0.0) || !(breakdown_voltage >= 0.0) {
            return Err(Error::config(format!(
                "{name}: temperature and breakdown voltage must be positive"
            )));
        }
        if !(avalanche_gain_slope >= 0.0) || !avalanche_gain_slope.is_finite() {
            return Err(Error::config(format!("{name}: avalanche_gain_slope must be >= 0")));
        }
        for (i, p) in bias_table.iter().enumerate() {
            if !(p.overbias >= 0.0) || !p.overbias.is_finite() {
                return Err(Error::config(format!("{name}: row {i} overbias must be >= 0")));
            }
            if !(0.0..=1.0).contains(&p.efficiency) || !(0.0..=1.0).contains(&p.dark_prob) {
                return Err(Error::config(format!(
                    "{name}: row {i} probabilities must lie in [0, 1]"
                )));
            }
            if p.overbias == 0.0 && (p.efficiency != 0.0 || p.dark_prob != 0.0) {
                return Err(Error::config(format!(
                    "{name}: efficiency and dark_prob must be 0 at zero overbias"
                )));
            }
        }
        for (i, w) in bias_table.windows(2).enumerate() {
            if w[1].overbias <= w[0].overbias {
                return Err(Error::config(format!(
                    "{name}: overbias not strictly increasing at row {}",
                    i + 1
                )));
            }
            if w[1].efficiency < w[0].efficiency || w[1].dark_prob < w[0].dark_prob {
                return Err(Error::config(format!(
                    "{name}: efficiency/dark_prob decrease at row {}",
                    i + 1
                )));
            }
        }
        trap.validate()?;
        if let Some(ob) = nominal_overbias {
            if !(ob > 0.0) {
                return Err(Error::config(format!("{name}: nominal_overbias must be > 0")));
            }
        }
        Ok(DeviceCharacteristic {
            name,
            temperature_k,
            breakdown_voltage,
            bias_table,
            trap,
            avalanche_gain_slope,
            nominal_overbias,
        })
    }

    /// Two-row characteristic that yields exactly `efficiency` and `dark_prob`
    /// at `overbias`, with no afterpulsing.
    pub fn fixed(name: impl Into<String>, overbias: f64, efficiency: f64, dark_prob: f64) -> Result<Self> {
        DeviceCharacteristic::new(
            name,
            178.0,
            50.0,
            vec![(0.0, 0.0, 0.0).into(), (overbias, efficiency, dark_prob).into()],
            TrapParams::NONE,
            DEFAULT_GAIN_SLOPE,
            Some(overbias),
        )
    }

    pub fn efficiency_at(&self, ob: f64) -> f64 {
        self.interpolate(ob, |p| p.efficiency)
    }

    pub fn dark_prob_at(&self, ob: f64) -> f64 {
        self.interpolate(ob, |p| p.dark_prob)
    }

    pub fn max_overbias(&self) -> f64 {
        self.bias_table.last().map_or(0.0, |p| p.overbias)
    }

    /// Operating overbias used when none is configured: the preset's nominal
    /// row, or the top of the table.
    pub fn default_overbias(&self) -> f64 {
        self.nominal_overbias.unwrap_or_else(|| self.max_overbias())
    }

    /// Avalanche pulse amplitude at the load for a given overbias.
    pub fn avalanche_amplitude(&self, ob: f64) -> f64 {
        self.avalanche_gain_slope * ob.max(0.0)
    }

    /// Smallest overbias at which the interpolated efficiency reaches `eta`.
    pub fn overbias_for_efficiency(&self, eta: f64) -> Result<f64> {
        if !(eta > 0.0) {
            return Err(Error::argument(format!("target efficiency must be > 0, got {eta}")));
        }
        let mut prev = BiasPoint::from((0.0, 0.0, 0.0));
        for &p in &self.bias_table {
            if p.efficiency >= eta {
                if p.efficiency == prev.efficiency {
                    return Ok(prev.overbias);
                }
                let frac = (eta - prev.efficiency) / (p.efficiency - prev.efficiency);
                return Ok(prev.overbias + frac * (p.overbias - prev.overbias));
            }
            prev = p;
        }
        Err(Error::argument(format!(
            "{}: efficiency {eta} exceeds table maximum {}",
            self.name, prev.efficiency
        )))
    }

    fn interpolate(&self, ob: f64, column: impl Fn(&BiasPoint) -> f64) -> f64 {
        if !(ob > 0.0) {
            return 0.0;
        }
        let mut prev = BiasPoint::from((0.0, 0.0, 0.0));
        for p in &self.bias_table {
            if ob <= p.overbias {
                if p.overbias == prev.overbias {
                    return column(p);
                }
                let frac = (ob - prev.overbias) / (p.overbias - prev.overbias);
                return column(&prev) + frac * (column(p) - column(&prev));
            }
            prev = *p;
        }
        column(&prev)
    }
}

/// Overbias during the gate, clamped at zero.
pub fn overbias(characteristic: &DeviceCharacteristic, v_dc: f64, v_gate: f64) -> f64 {
    (v_dc + v_gate - characteristic.breakdown_voltage).max(0.0)
}

/// Exponential detrapping over `dt` seconds.
pub fn trap_decay(state: TrapState, params: &TrapParams, dt: f64) -> Result<TrapState> {
    if !(dt >= 0.0) {
        return Err(Error::argument(format!("decay interval must be >= 0, got {dt}")));
    }
    let population = if dt == 0.0 || state.population == 0.0 {
        state.population
    } else {
        state.population * (-dt / params.tau_s).exp()
    };
    Ok(TrapState {
        population,
        last_update_time: state.last_update_time + dt,
    })
}

/// Adds the carriers captured by one avalanche at overbias `ob`.
pub fn trap_capture(state: TrapState, params: &TrapParams, ob: f64, dc_fraction: f64) -> Result<TrapState> {
    if !(0.0..=1.0).contains(&dc_fraction) {
        return Err(Error::argument(format!(
            "dc_fraction must lie in [0, 1], got {dc_fraction}"
        )));
    }
    let added = params.capture * (1.0 + params.k_ob * ob.max(0.0)) * (1.0 - params.dc_sweep * dc_fraction);
    Ok(TrapState {
        population: state.population + added.max(0.0),
        last_update_time: state.last_update_time,
    })
}

/// Probability that at least one trapped carrier fires the current gate.
pub fn afterpulse_prob(state: TrapState, params: &TrapParams) -> f64 {
    -(-params.release * state.population).exp_m1()
}

/// Names of the built-in presets.
pub const PRESET_NAMES: [&str; 4] = ["EPM239BA-140K", "EPM239BA-160K", "EPM239BA-178K", "EPM239BA-213K"];

type PresetRow = (f64, f64, f64);

/// Built-in EPM239BA characteristics.
///
/// Anchor rows: 178 K at 1.5 V overbias gives 11 % / 7e-7 and 213 K at its
/// 2.5 V maximum gives 20 % / 3e-5. All other rows, the breakdown voltages and
/// the 140 K / 160 K tables are monotone interpolation scaffolding rather than
/// measured values. Trap parameters are calibrated so one avalanche followed
/// by 1 µs of detrapping leaves an afterpulse probability of 1e-4 at 178 K
/// (8e-5 at 213 K, larger at the colder points).
pub fn preset(name: &str) -> Result<DeviceCharacteristic> {
    let (t, vbr, rows, trap, nominal): (f64, f64, [PresetRow; 6], TrapParams, f64) = match name {
        "EPM239BA-140K" => (
            140.0,
            47.0,
            [
                (0.0, 0.0, 0.0),
                (0.5, 0.03, 2e-8),
                (1.0, 0.06, 6e-8),
                (1.5, 0.09, 1.5e-7),
                (2.0, 0.11, 4e-7),
                (2.5, 0.13, 1e-6),
            ],
            TrapParams {
                capture: 0.11057238722015056,
                release: 0.01,
                tau_s: 10e-6,
                k_ob: 0.0,
                dc_sweep: 0.0,
            },
            2.0,
        ),
        "EPM239BA-160K" => (
            160.0,
            48.5,
            [
                (0.0, 0.0, 0.0),
                (0.5, 0.04, 6e-8),
                (1.0, 0.08, 1.6e-7),
                (1.5, 0.12, 4e-7),
                (2.0, 0.14, 9e-7),
                (2.5, 0.16, 2e-6),
            ],
            TrapParams {
                capture: 0.04886588415491325,
                release: 0.01,
                tau_s: 5e-6,
                k_ob: 0.0,
                dc_sweep: 0.0,
            },
            1.5,
        ),
        "EPM239BA-178K" => (
            178.0,
            50.0,
            [
                (0.0, 0.0, 0.0),
                (0.5, 0.04, 1.5e-7),
                (1.0, 0.075, 3.5e-7),
                (1.5, 0.11, 7e-7),
                (2.0, 0.13, 1.6e-6),
                (2.5, 0.15, 3.5e-6),
            ],
            TrapParams {
                capture: 0.01648803712259813,
                release: 0.01,
                tau_s: 2e-6,
                k_ob: 0.0,
                dc_sweep: 0.0,
            },
            1.5,
        ),
        "EPM239BA-213K" => (
            213.0,
            52.5,
            [
                (0.0, 0.0, 0.0),
                (0.5, 0.06, 2e-6),
                (1.0, 0.10, 5e-6),
                (1.5, 0.14, 1e-5),
                (2.0, 0.17, 1.8e-5),
                (2.5, 0.20, 3e-5),
            ],
            TrapParams {
                capture: 0.02174712452425226,
                release: 0.01,
                tau_s: 1e-6,
                k_ob: 0.0,
                dc_sweep: 0.0,
            },
            1.5,
        ),
        other => return Err(Error::config(format!("unknown device preset {other:?}"))),
    };
    DeviceCharacteristic::new(
        name,
        t,
        vbr,
        rows.iter().copied().map(BiasPoint::from).collect(),
        trap,
        DEFAULT_GAIN_SLOPE,
        Some(nominal),
    )
}

/// Looks up the preset characterized at exactly `temperature_k`.
///
/// Temperatures between presets are rejected rather than interpolated.
pub fn preset_for_temperature(temperature_k: f64) -> Result<DeviceCharacteristic> {
    for name in PRESET_NAMES {
        let p = preset(name)?;
        if (p.temperature_k - temperature_k).abs() < 1e-9 {
            return Ok(p);
        }
    }
    Err(Error::config(format!(
        "no characteristic measured at {temperature_k} K"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn trap(capture: f64, k_ob: f64, dc_sweep: f64) -> TrapParams {
        TrapParams {
            capture,
            release: 0.01,
            tau_s: 1e-6,
            k_ob,
            dc_sweep,
        }
    }

    #[test]
    fn overbias_examples() {
        let d = preset("EPM239BA-178K").unwrap();
        let vbr = d.breakdown_voltage;
        assert_eq!(overbias(&d, vbr - 2.5, 2.5), 0.0);
        assert_relative_eq!(overbias(&d, vbr - 1.5, 2.5), 1.0, epsilon = 1e-12);
        assert_relative_eq!(overbias(&d, vbr - 1.0, 2.5), 1.5, epsilon = 1e-12);
        assert_eq!(overbias(&d, 0.0, 2.5), 0.0);
    }

    #[test]
    fn anchor_rows() {
        let d178 = preset("EPM239BA-178K").unwrap();
        let ob = d178.default_overbias();
        assert_eq!(d178.efficiency_at(ob), 0.11);
        assert_eq!(d178.dark_prob_at(ob), 7e-7);
        assert_eq!(d178.efficiency_at(0.0), 0.0);
        assert_eq!(d178.dark_prob_at(0.0), 0.0);

        let d213 = preset("EPM239BA-213K").unwrap();
        let top = d213.max_overbias();
        assert_eq!(d213.efficiency_at(top), 0.20);
        assert_eq!(d213.dark_prob_at(top), 3e-5);
        // clamped above the table
        assert_eq!(d213.efficiency_at(top + 10.0), 0.20);
    }

    #[test]
    fn interpolation_between_rows() {
        let d = preset("EPM239BA-178K").unwrap();
        assert_relative_eq!(d.efficiency_at(1.25), 0.0925, epsilon = 1e-12);
        assert_relative_eq!(d.efficiency_at(0.25), 0.02, epsilon = 1e-12);
    }

    #[test]
    fn inverse_efficiency() {
        let d = preset("EPM239BA-178K").unwrap();
        assert_relative_eq!(d.overbias_for_efficiency(0.11).unwrap(), 1.5, epsilon = 1e-12);
        let ob = d.overbias_for_efficiency(0.0917).unwrap();
        assert_relative_eq!(d.efficiency_at(ob), 0.0917, epsilon = 1e-12);
        assert!(d.overbias_for_efficiency(0.5).is_err());
    }

    #[test]
    fn rejects_bad_tables() {
        let t = TrapParams::NONE;
        assert!(DeviceCharacteristic::new("x", 178.0, 50.0, vec![], t, 0.2, None).is_err());
        let decreasing = vec![(0.5, 0.1, 1e-6).into(), (1.0, 0.05, 2e-6).into()];
        assert!(DeviceCharacteristic::new("x", 178.0, 50.0, decreasing, t, 0.2, None).is_err());
        let repeated = vec![(0.5, 0.1, 1e-6).into(), (0.5, 0.2, 2e-6).into()];
        assert!(DeviceCharacteristic::new("x", 178.0, 50.0, repeated, t, 0.2, None).is_err());
        let nonzero_origin = vec![(0.0, 0.1, 0.0).into()];
        assert!(DeviceCharacteristic::new("x", 178.0, 50.0, nonzero_origin, t, 0.2, None).is_err());
        let out_of_range = vec![(1.0, 1.5, 0.0).into()];
        assert!(DeviceCharacteristic::new("x", 178.0, 50.0, out_of_range, t, 0.2, None).is_err());
    }

    #[test]
    fn uncharacterized_temperature_is_an_error() {
        assert!(preset_for_temperature(178.0).is_ok());
        assert!(preset_for_temperature(190.0).is_err());
        assert!(preset("EPM239BA-300K").is_err());
    }

    #[test]
    fn decay_examples() {
        let p = trap(0.1, 0.0, 0.0);
        let empty = trap_decay(TrapState::EMPTY, &p, 5e-6).unwrap();
        assert_eq!(empty.population, 0.0);

        let s = TrapState {
            population: 0.7,
            last_update_time: 3.0,
        };
        assert_eq!(trap_decay(s, &p, 0.0).unwrap(), s);

        let one = TrapState {
            population: 1.0,
            last_update_time: 0.0,
        };
        let d = trap_decay(one, &p, p.tau_s).unwrap();
        assert_relative_eq!(d.population, 0.36787944117144233, epsilon = 1e-15);
        assert_relative_eq!(d.last_update_time, p.tau_s);

        assert!(matches!(trap_decay(one, &p, -1e-9), Err(Error::Argument(_))));
    }

    #[test]
    fn capture_examples() {
        let s = TrapState {
            population: 0.3,
            last_update_time: 0.0,
        };
        assert_eq!(trap_capture(s, &trap(0.0, 0.0, 0.0), 1.5, 0.5).unwrap(), s);
        assert_relative_eq!(trap_capture(s, &trap(0.1, 0.0, 0.0), 1.5, 0.5).unwrap().population, 0.4);
        assert_relative_eq!(
            trap_capture(s, &trap(0.1, 0.0, 0.5), 1.5, 1.0).unwrap().population,
            0.35
        );
        // sweep-out stronger than the capture never removes carriers
        assert_relative_eq!(trap_capture(s, &trap(0.1, 0.0, 2.0), 1.5, 1.0).unwrap().population, 0.3);
        assert!(trap_capture(s, &trap(0.1, 0.0, 0.0), 1.5, 1.2).is_err());
        assert!(trap_capture(s, &trap(0.1, 0.0, 0.0), 1.5, -0.1).is_err());
    }

    #[test]
    fn afterpulse_examples() {
        let p = trap(0.1, 0.0, 0.0);
        assert_eq!(afterpulse_prob(TrapState::EMPTY, &p), 0.0);
        let half = TrapState {
            population: std::f64::consts::LN_2 / p.release,
            last_update_time: 0.0,
        };
        assert_relative_eq!(afterpulse_prob(half, &p), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn preset_afterpulse_calibration() {
        let d = preset("EPM239BA-178K").unwrap();
        let ob = d.default_overbias();
        let s = trap_capture(TrapState::EMPTY, &d.trap, ob, 0.9).unwrap();
        let s = trap_decay(s, &d.trap, 1e-6).unwrap();
        assert_relative_eq!(afterpulse_prob(s, &d.trap), 1e-4, max_relative = 1e-9);

        let mut last = 1.0;
        for interval in [0.1e-6, 0.5e-6, 1e-6, 2e-6, 5e-6, 10e-6] {
            let s = trap_capture(TrapState::EMPTY, &d.trap, ob, 0.9).unwrap();
            let ap = afterpulse_prob(trap_decay(s, &d.trap, interval).unwrap(), &d.trap);
            assert!(ap < last);
            last = ap;
        }
    }

    #[test]
    fn json_schema_round_trip() {
        let json = r#"{
            "name": "custom",
            "temperature_K": 178,
            "breakdown_voltage": 50.0,
            "bias_table": [[0, 0, 0], [1.0, 0.1, 1e-6]],
            "trap": {"capture": 0.02, "release": 0.01, "tau_s": 2e-6, "k_ob": 0, "dc_sweep": 0}
        }"#;
        let d: DeviceCharacteristic = serde_json::from_str(json).unwrap();
        assert_eq!(d.efficiency_at(1.0), 0.1);
        assert_eq!(d.avalanche_gain_slope, DEFAULT_GAIN_SLOPE);
        let back: DeviceCharacteristic = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);

        let bad = json.replace("[1.0, 0.1, 1e-6]", "[1.0, 0.1, 2.0]");
        assert!(serde_json::from_str::<DeviceCharacteristic>(&bad).is_err());
    }

    #[test]
    fn all_presets_load() {
        for name in PRESET_NAMES {
            let d = preset(name).unwrap();
            assert_eq!(d.name, name);
            assert!(d.efficiency_at(d.default_overbias()) > 0.0);
        }
    }
}
