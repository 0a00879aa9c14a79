//! The JSON run document and its mapping onto the simulator types.
//!
//! Every section is optional. `device1` and `device2` accept either a preset
//! name or an object naming exactly one of `preset`, `temperature_K` or an
//! inline `characteristic`, plus an optional operating point given as
//! `overbias` or `efficiency`.

use std::path::Path;

use gated_apd::device::{self, DeviceCharacteristic};
use gated_apd::linkbudget::{Criterion, LinkParams, Source};
use gated_apd::montecarlo::{ApdSetup, RunConfig};
use gated_apd::signalchain::ChainParams;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const DEFAULT_PRESET: &str = "EPM239BA-178K";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub device1: DeviceSection,
    pub device2: DeviceSection,
    pub chain: ChainParams,
    pub run: RunSection,
    pub link: LinkSection,
    pub sweep: SweepSection,
    pub afterpulse: AfterpulseSection,
    pub which_path: WhichPathSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceFields {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(rename = "temperature_K", skip_serializing_if = "Option::is_none")]
    pub temperature_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub characteristic: Option<DeviceCharacteristic>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overbias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<f64>,
}

/// A device reference plus its operating point.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DeviceSection(pub DeviceFields);

impl<'de> Deserialize<'de> for DeviceSection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::String(name) => Ok(DeviceSection(DeviceFields {
                preset: Some(name),
                ..DeviceFields::default()
            })),
            other => serde_json::from_value(other)
                .map(DeviceSection)
                .map_err(serde::de::Error::custom),
        }
    }
}

impl DeviceSection {
    pub fn preset(name: &str) -> Self {
        DeviceSection(DeviceFields {
            preset: Some(name.to_string()),
            ..DeviceFields::default()
        })
    }

    pub fn characteristic(&self) -> CliResult<DeviceCharacteristic> {
        let f = &self.0;
        let given = f.preset.is_some() as u8 + f.temperature_k.is_some() as u8 + f.characteristic.is_some() as u8;
        if given > 1 {
            return Err(CliError::Config(
                "a device names at most one of preset, temperature_K and characteristic".into(),
            ));
        }
        Ok(if let Some(name) = &f.preset {
            device::preset(name)?
        } else if let Some(t) = f.temperature_k {
            device::preset_for_temperature(t)?
        } else if let Some(c) = &f.characteristic {
            c.clone()
        } else {
            device::preset(DEFAULT_PRESET)?
        })
    }

    pub fn setup(&self, gate_amplitude: f64) -> CliResult<ApdSetup> {
        let dev = self.characteristic()?;
        match (self.0.overbias, self.0.efficiency) {
            (Some(_), Some(_)) => Err(CliError::Config("give either overbias or efficiency, not both".into())),
            (Some(ob), None) if !(ob >= 0.0) => Err(CliError::Config(format!("overbias must be >= 0, got {ob}"))),
            (Some(ob), None) => Ok(ApdSetup::at_overbias(dev, ob, gate_amplitude)),
            (None, Some(eta)) => Ok(ApdSetup::at_efficiency(dev, eta, gate_amplitude)?),
            (None, None) => Ok(ApdSetup::nominal(dev, gate_amplitude)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub clock_rate: f64,
    pub n_gates: u64,
    pub mean_photons: f64,
    pub splitter_ratio: f64,
    pub seed: u64,
    pub waveform_mode: bool,
    /// Leading gates kept for the event raster.
    pub record_gates: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            clock_rate: 1e5,
            n_gates: 1_000_000,
            mean_photons: 0.2,
            splitter_ratio: 0.5,
            seed: 0,
            waveform_mode: false,
            record_gates: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub attenuation_db_per_km: f64,
    pub source: Source,
    pub criterion: Criterion,
    /// Detector figures; taken from device1 at its operating point when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pd: Option<f64>,
}

impl Default for LinkSection {
    fn default() -> Self {
        LinkSection {
            attenuation_db_per_km: 0.2,
            source: Source::IdealSinglePhoton,
            criterion: Criterion::default(),
            eta: None,
            pd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Defaults to the overbias rows of device1's table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overbias_grid: Option<Vec<f64>>,
    pub mu_grid: Vec<f64>,
    /// Gates of the μ = 0 run at each point; illuminated points use `run.n_gates`.
    pub dark_gates: u64,
    /// Fix P_d to the dark-run rate and fit η alone.
    pub fixed_pd: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            overbias_grid: None,
            mu_grid: vec![0.0, 0.1, 0.5, 1.0, 2.0],
            dark_gates: 100_000_000,
            fixed_pd: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AfterpulseSection {
    pub intervals_s: Vec<f64>,
    pub n_pairs: u64,
    pub first_gate_mu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
    /// First-gate click rate of the extra unconditional run; none skips it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unconditional_click_rate: Option<f64>,
    pub unconditional_interval_s: f64,
}

impl Default for AfterpulseSection {
    fn default() -> Self {
        AfterpulseSection {
            intervals_s: vec![0.5e-6, 1e-6, 2e-6, 5e-6],
            n_pairs: 1_000_000,
            first_gate_mu: 100.0,
            baseline: None,
            unconditional_click_rate: Some(0.1),
            unconditional_interval_s: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhichPathSection {
    pub mu_grid: Vec<f64>,
}

impl Default for WhichPathSection {
    fn default() -> Self {
        WhichPathSection {
            mu_grid: vec![0.2, 1.0, 5.0],
        }
    }
}

fn check_grid(name: &str, grid: &[f64], min: f64) -> CliResult<()> {
    if grid.is_empty() {
        return Err(CliError::Config(format!("{name} is empty")));
    }
    if let Some(v) = grid.iter().find(|v| !(**v >= min) || !v.is_finite()) {
        return Err(CliError::Config(format!(
            "{name}: value {v} is below {min} or not finite"
        )));
    }
    Ok(())
}

impl Config {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Sorted-key JSON form used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_value(self).expect("config serializes").to_string()
    }

    /// First 12 hex digits of SHA-256 over the canonical form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))[..12].to_string()
    }

    pub fn validate(&self) -> CliResult<()> {
        self.chain.validate()?;
        self.run_config()?.validate()?;
        check_grid("sweep.mu_grid", &self.sweep.mu_grid, 0.0)?;
        if let Some(g) = &self.sweep.overbias_grid {
            check_grid("sweep.overbias_grid", g, 0.0)?;
        }
        if !self.sweep.mu_grid.iter().any(|&m| m > 0.0) {
            return Err(CliError::Config("sweep.mu_grid needs a value above 0".into()));
        }
        if self.sweep.dark_gates < 1 {
            return Err(CliError::Config("sweep.dark_gates must be >= 1".into()));
        }
        check_grid("which_path.mu_grid", &self.which_path.mu_grid, 0.0)?;
        check_grid("afterpulse.intervals_s", &self.afterpulse.intervals_s, 0.0)?;
        let w = self.chain.gate_width;
        for &dt in self
            .afterpulse
            .intervals_s
            .iter()
            .chain([&self.afterpulse.unconditional_interval_s])
        {
            if dt < w {
                return Err(CliError::Config(format!(
                    "pulse interval {dt} s is below the gate width {w} s"
                )));
            }
        }
        if self.afterpulse.n_pairs < 1 {
            return Err(CliError::Config("afterpulse.n_pairs must be >= 1".into()));
        }
        if let Some(c) = self.afterpulse.unconditional_click_rate {
            if !(c > 0.0 && c < 1.0) {
                return Err(CliError::Config(format!(
                    "unconditional_click_rate must lie in (0, 1), got {c}"
                )));
            }
        }
        Ok(())
    }

    /// Two-APD run described by `device1`, `device2`, `chain` and `run`.
    pub fn run_config(&self) -> CliResult<RunConfig> {
        let amp = self.chain.gate_amplitude;
        let r = &self.run;
        Ok(RunConfig {
            clock_rate: r.clock_rate,
            n_gates: r.n_gates,
            mean_photons: r.mean_photons,
            splitter_ratio: r.splitter_ratio,
            apd1: self.device1.setup(amp)?,
            apd2: self.device2.setup(amp)?,
            chain: self.chain.clone(),
            seed: r.seed,
            waveform_mode: r.waveform_mode,
            first_gate_mu: self.afterpulse.first_gate_mu,
            record_gates: r.record_gates,
        })
    }

    pub fn link_params(&self) -> CliResult<LinkParams> {
        let l = &self.link;
        let (eta, pd) = match (l.eta, l.pd) {
            (Some(eta), Some(pd)) => (eta, pd),
            (eta, pd) => {
                let apd = self.device1.setup(self.chain.gate_amplitude)?;
                (eta.unwrap_or(apd.efficiency()), pd.unwrap_or(apd.dark_prob()))
            }
        };
        let p = LinkParams {
            attenuation_db_per_km: l.attenuation_db_per_km,
            source: l.source,
            criterion: l.criterion,
            eta,
            pd,
        };
        p.validate()?;
        Ok(p)
    }
}
