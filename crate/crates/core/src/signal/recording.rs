use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Eeg,
    Imu,
}

impl Modality {
    pub(crate) fn code(self) -> u8 {
        match self {
            Modality::Eeg => 0,
            Modality::Imu => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Modality::Eeg),
            1 => Some(Modality::Imu),
            _ => None,
        }
    }

    /// Channel count a fully preprocessed recording of this modality carries.
    pub fn standard_channels(self) -> usize {
        match self {
            Modality::Eeg => 32,
            Modality::Imu => 9,
        }
    }

    pub fn default_units(self) -> &'static str {
        match self {
            Modality::Eeg => "uV",
            Modality::Imu => "mixed",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Eeg => "EEG",
            Modality::Imu => "IMU",
        })
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "EEG" | "eeg" => Ok(Modality::Eeg),
            "IMU" | "imu" => Ok(Modality::Imu),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// The 32 10/20-system electrode labels used as the default channel whitelist.
pub const EEG_LABELS: [&str; 32] = [
    "Fp1", "Fp2", "AF3", "AF4", "F7", "F3", "Fz", "F4", "F8", "FC5", "FC1", "FC2", "FC6", "T7", "C3", "Cz",
    "C4", "T8", "CP5", "CP1", "CP2", "CP6", "P7", "P3", "Pz", "P4", "P8", "PO3", "PO4", "O1", "Oz", "O2",
];

/// Accelerometer (m/s²), gyroscope (rad/s), magnetometer (µT), three axes each.
pub const IMU_LABELS: [&str; 9] = [
    "acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z", "mag_x", "mag_y", "mag_z",
];

pub(crate) fn default_labels(modality: Modality, n: usize) -> Vec<String> {
    let std: &[&str] = match modality {
        Modality::Eeg => &EEG_LABELS,
        Modality::Imu => &IMU_LABELS,
    };
    if n == std.len() {
        std.iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("ch{i}")).collect()
    }
}

/// Multichannel time series with a sample rate, unit tag and channel labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    modality: Modality,
    sample_rate_hz: f64,
    units: String,
    labels: Vec<String>,
    data: Vec<Vec<f64>>,
}

impl Recording {
    /// Builds a recording with default labels and units. Rows must have equal length and
    /// contain only finite samples.
    pub fn new(modality: Modality, sample_rate_hz: f64, data: Vec<Vec<f64>>) -> Result<Self> {
        let labels = default_labels(modality, data.len());
        Self::with_meta(modality, sample_rate_hz, modality.default_units(), labels, data)
    }

    pub fn with_meta(
        modality: Modality,
        sample_rate_hz: f64,
        units: &str,
        labels: Vec<String>,
        data: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Validation(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if data.is_empty() {
            return Err(Error::Validation("recording has no channels".into()));
        }
        if labels.len() != data.len() {
            return Err(Error::Validation(format!(
                "{} labels for {} channels",
                labels.len(),
                data.len()
            )));
        }
        let n = data[0].len();
        if let Some(c) = data.iter().position(|r| r.len() != n) {
            return Err(Error::Validation(format!(
                "channel {c} has {} samples, channel 0 has {n}",
                data[c].len()
            )));
        }
        for (c, row) in data.iter().enumerate() {
            if let Some(i) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite sample in channel {c} ({}) at index {i}",
                    labels[c]
                )));
            }
        }
        Ok(Recording {
            modality,
            sample_rate_hz,
            units: units.to_string(),
            labels,
            data,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn units(&self) -> &str {
        &self.units
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn channels(&self) -> usize {
        self.data.len()
    }

    pub fn samples(&self) -> usize {
        self.data[0].len()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples() as f64 / self.sample_rate_hz
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.data
    }

    /// Same metadata, new samples (and possibly a new rate). Used by the filters.
    pub fn map_rows(&self, sample_rate_hz: f64, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let data = self.data.iter().map(|r| f(r)).collect();
        Self::with_meta(self.modality, sample_rate_hz, &self.units, self.labels.clone(), data)
    }

    /// Checks the channel count expected by downstream stages.
    pub fn expect_channels(&self, n: usize) -> Result<()> {
        if self.channels() != n {
            return Err(Error::Validation(format!(
                "{} recording has {} channels, expected {n}",
                self.modality,
                self.channels()
            )));
        }
        Ok(())
    }

    /// Keeps the channels named in `whitelist`, in whitelist order.
    pub fn select_channels(&self, whitelist: &[&str]) -> Result<Self> {
        let mut data = Vec::with_capacity(whitelist.len());
        for name in whitelist {
            let c = self
                .labels
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| Error::Validation(format!("channel `{name}` not present in recording")))?;
            data.push(self.data[c].clone());
        }
        let labels = whitelist.iter().map(|s| s.to_string()).collect();
        Self::with_meta(self.modality, self.sample_rate_hz, &self.units, labels, data)
    }

    /// Converts EEG samples tagged `V`, `mV` or `uV`/`µV` to microvolts.
    pub fn to_microvolts(&self) -> Result<Self> {
        if self.modality != Modality::Eeg {
            return Err(Error::Validation("unit conversion to µV applies to EEG only".into()));
        }
        let scale = match self.units.as_str() {
            "V" => 1e6,
            "mV" => 1e3,
            "uV" | "µV" => 1.0,
            other => return Err(Error::Validation(format!("unknown EEG unit `{other}`"))),
        };
        let mut out = self.map_rows(self.sample_rate_hz, |r| r.iter().map(|v| v * scale).collect())?;
        out.units = "uV".into();
        Ok(out)
    }

    /// Samples `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.samples() {
            return Err(Error::Validation(format!(
                "slice {start}..{end} outside 0..{}",
                self.samples()
            )));
        }
        self.map_rows(self.sample_rate_hz, |r| r[start..end].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_and_nan() {
        assert!(Recording::new(Modality::Imu, 128.0, vec![vec![0.0; 3], vec![0.0; 2]]).is_err());
        let err = Recording::new(Modality::Eeg, 200.0, vec![vec![0.0, f64::NAN]]).unwrap_err();
        assert!(err.to_string().contains("channel 0") && err.to_string().contains("index 1"));
        assert!(Recording::new(Modality::Eeg, 0.0, vec![vec![0.0]]).is_err());
    }

    #[test]
    fn microvolt_conversion() {
        let r = Recording::with_meta(Modality::Eeg, 200.0, "mV", vec!["Cz".into()], vec![vec![0.002]]).unwrap();
        let uv = r.to_microvolts().unwrap();
        assert!((uv.channel(0)[0] - 2.0).abs() < 1e-12);
        assert_eq!(uv.units(), "uV");
    }

    #[test]
    fn whitelist_reorders() {
        let r = Recording::with_meta(
            Modality::Eeg,
            200.0,
            "uV",
            vec!["Cz".into(), "EOG".into(), "Fz".into()],
            vec![vec![1.0], vec![2.0], vec![3.0]],
        )
        .unwrap();
        let s = r.select_channels(&["Fz", "Cz"]).unwrap();
        assert_eq!(s.rows(), &[vec![3.0], vec![1.0]]);
        assert!(r.select_channels(&["O1"]).is_err());
    }
}
