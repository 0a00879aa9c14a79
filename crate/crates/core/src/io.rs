//! On-disk artifact formats: headered CSV tables and pretty-printed JSON.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montecarlo::GateOutcome;
use crate::signalchain::{ClassLabel, Waveform};

pub fn write_csv_to<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv_from<R: Read, T: DeserializeOwned>(reader: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    write_csv_to(BufWriter::new(File::create(path)?), rows)
}

pub fn read_csv<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    read_csv_from(File::open(path)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformRow {
    pub time_s: f64,
    pub volts: f64,
}

pub fn waveform_rows(w: &Waveform) -> Vec<WaveformRow> {
    w.times()
        .zip(&w.samples)
        .map(|(time_s, &volts)| WaveformRow { time_s, volts })
        .collect()
}

/// Rebuilds a uniformly sampled waveform from `(time_s, volts)` rows.
pub fn waveform_from_rows(rows: &[WaveformRow]) -> Result<Waveform> {
    if rows.len() < 2 {
        return Err(Error::argument("waveform needs at least two samples"));
    }
    let t0 = rows[0].time_s;
    let dt = (rows[rows.len() - 1].time_s - t0) / (rows.len() - 1) as f64;
    for (i, r) in rows.iter().enumerate() {
        if (r.time_s - (t0 + i as f64 * dt)).abs() > 1e-3 * dt {
            return Err(Error::argument(format!("non-uniform sample spacing at row {i}")));
        }
    }
    Waveform::new(dt, t0, rows.iter().map(|r| r.volts).collect())
}

pub fn write_waveform_csv(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    write_csv(path, &waveform_rows(w))
}

pub fn read_waveform_csv(path: impl AsRef<Path>) -> Result<Waveform> {
    waveform_from_rows(&read_csv::<WaveformRow>(path)?)
}

/// Flat CSV form of a [`GateOutcome`]; flags are 0/1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub gate_index: u64,
    pub class: ClassLabel,
    pub photons_sent: u32,
    pub det1: u32,
    pub det2: u32,
    pub dark1: u8,
    pub dark2: u8,
    pub ap1: u8,
    pub ap2: u8,
    pub coincident: u8,
}

impl From<&GateOutcome> for OutcomeRow {
    fn from(o: &GateOutcome) -> Self {
        let t = &o.truth;
        OutcomeRow {
            gate_index: o.gate_index,
            class: o.classification.label(),
            photons_sent: t.photons_sent,
            det1: t.photons_in[0],
            det2: t.photons_in[1],
            dark1: t.dark[0] as u8,
            dark2: t.dark[1] as u8,
            ap1: t.afterpulse[0] as u8,
            ap2: t.afterpulse[1] as u8,
            coincident: o.coincident as u8,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::CountSample;
    use proptest::prelude::*;

    #[test]
    fn count_samples_from_csv() {
        let text = "mu,clicks,gates\n0,7,10000000\n0.5,540000,10000000\n";
        let rows: Vec<CountSample> = read_csv_from(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].mean_photons, 0.5);
        assert_eq!(rows[0].clicks, 7);
    }

    #[test]
    fn outcome_header() {
        let mut buf = Vec::new();
        let row = OutcomeRow {
            gate_index: 3,
            class: ClassLabel::Apd1,
            photons_sent: 1,
            det1: 1,
            det2: 0,
            dark1: 0,
            dark2: 0,
            ap1: 0,
            ap2: 0,
            coincident: 0,
        };
        write_csv_to(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("gate_index,class,photons_sent,det1,det2,dark1,dark2,ap1,ap2,coincident\n3,apd1,"));
        let back: Vec<OutcomeRow> = read_csv_from(buf.as_slice()).unwrap();
        assert_eq!(back, vec![row]);
    }

    #[test]
    fn rejects_non_uniform_waveform() {
        let rows = [
            WaveformRow {
                time_s: 0.0,
                volts: 0.0,
            },
            WaveformRow {
                time_s: 1.0,
                volts: 0.0,
            },
            WaveformRow {
                time_s: 3.0,
                volts: 0.0,
            },
        ];
        assert!(waveform_from_rows(&rows).is_err());
    }

    proptest! {
        #[test]
        fn waveform_csv_round_trip(samples in prop::collection::vec(-5.0f64..5.0, 2..200),
                                   t0 in -1e-9f64..1e-9, dt in 1e-12f64..1e-10) {
            let w = Waveform::new(dt, t0, samples).unwrap();
            let mut buf = Vec::new();
            write_csv_to(&mut buf, &waveform_rows(&w)).unwrap();
            let rows: Vec<WaveformRow> = read_csv_from(buf.as_slice()).unwrap();
            let back = waveform_from_rows(&rows).unwrap();
            prop_assert_eq!(&back.samples, &w.samples);
            prop_assert!(back.is_aligned(&w));
        }
    }
}
