//! Physiological recording files.
//!
//! Two encodings are accepted:
//!
//! * CSV (`.csv`): header `t,<channel>[,<channel>...]`, one row per sample,
//!   `t` in seconds. The sample rate is `(n - 1) / (t_last - t_first)`.
//! * Binary (any other extension): little-endian `f64` rows
//!   `[t, ch_1, ..., ch_k]` with a text sidecar `<file>.meta` holding
//!   `sample_rate_hz = <Hz>` and `channels = <ch_1>,...,<ch_k>`.
//!
//! Channel names are `ecg`, `ppg` and `eda` (`gsr` is read as `eda`).

use std::path::{Path, PathBuf};

use super::trial::{FeatureMatrix, PHYSIO_RATE_HZ, PHYSIO_WIDTH};
use crate::dataset::DatasetTag;
use crate::dsp::{preprocess_channel, Channel, RawSignal, TARGET_RATE_HZ};
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};

/// Simultaneously sampled channels of one session.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysioRecording {
    pub sample_rate_hz: f64,
    pub channels: Vec<RawSignal<f64>>,
}

impl PhysioRecording {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, RawSignal::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[samples, 2]` matrix of (cardiac, EDA). Requires 128 Hz.
    pub fn to_trial_matrix(&self) -> Result<FeatureMatrix> {
        if (self.sample_rate_hz - PHYSIO_RATE_HZ).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "physio sampled at {} Hz; run preprocessing to reach {PHYSIO_RATE_HZ} Hz first",
                self.sample_rate_hz
            )));
        }
        let cardiac = self.channels.iter().find(|c| c.channel.is_cardiac());
        let eda = self.channels.iter().find(|c| c.channel == Channel::Eda);
        match (cardiac, eda) {
            (Some(c), Some(e)) => FeatureMatrix::from_columns(&[c.samples.clone(), e.samples.clone()]),
            _ => Err(Error::Validation("physio recording needs one cardiac (ecg|ppg) and one eda channel".into())),
        }
    }

    /// Runs every channel through the preprocessing chain; the result is
    /// sampled at 128 Hz.
    pub fn preprocess(&self, dataset: DatasetTag) -> Result<Self> {
        let channels = self
            .channels
            .iter()
            .map(|c| preprocess_channel(c, dataset).map(|(y, _)| y))
            .collect::<Result<Vec<_>>>()?;
        let n = channels.first().map_or(0, RawSignal::len);
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Contract("preprocessed channels differ in length".into()));
        }
        Ok(Self { sample_rate_hz: TARGET_RATE_HZ, channels })
    }

    pub fn from_trial_matrix(m: &FeatureMatrix, cardiac: Channel) -> Result<Self> {
        if m.cols() != PHYSIO_WIDTH {
            return Err(Error::Validation(format!("physio width {} != {PHYSIO_WIDTH}", m.cols())));
        }
        Ok(Self {
            sample_rate_hz: PHYSIO_RATE_HZ,
            channels: vec![
                RawSignal::new(m.column(0), PHYSIO_RATE_HZ, cardiac)?,
                RawSignal::new(m.column(1), PHYSIO_RATE_HZ, Channel::Eda)?,
            ],
        })
    }
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn parse_channels(names: &[&str], source: &str) -> Result<Vec<Channel>> {
    names
        .iter()
        .map(|n| {
            Channel::parse(n).ok_or_else(|| Error::Parse { path: source.into(), row: 0, msg: format!("unknown channel '{n}'") })
        })
        .collect()
}

pub fn load_physio(path: &Path) -> Result<PhysioRecording> {
    if is_csv(path) {
        read_physio_csv(&read_to_string(path)?, &path.display().to_string())
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let meta = read_to_string(&meta_path(path))?;
        read_physio_binary(&bytes, &meta, &path.display().to_string())
    }
}

pub fn read_physio_csv(text: &str, source: &str) -> Result<PhysioRecording> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Parse { path: source.into(), row: 0, msg: e.to_string() })?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.first() != Some(&"t") || names.len() < 2 {
        return Err(Error::Schema { path: source.into(), missing: vec!["t".into(), "<channel>".into()] });
    }
    let kinds = parse_channels(&names[1..], source)?;
    let mut columns = vec![Vec::new(); names.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { path: source.into(), row: r + 1, msg: e.to_string() })?;
        for (c, col) in columns.iter_mut().enumerate() {
            let cell = rec.get(c).unwrap_or("");
            let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                path: source.into(),
                row: r + 1,
                msg: format!("column {}: '{cell}' is not a finite number", names[c]),
            })?;
            col.push(v);
        }
    }
    let t = &columns[0];
    if t.len() < 2 || t[t.len() - 1] <= t[0] {
        return Err(Error::Validation(format!("{source}: need >= 2 increasing timestamps to infer the sample rate")));
    }
    let rate = (t.len() - 1) as f64 / (t[t.len() - 1] - t[0]);
    let rate = (rate * 1e6).round() / 1e6;
    let channels = kinds
        .into_iter()
        .zip(columns.into_iter().skip(1))
        .map(|(k, s)| RawSignal::new(s, rate, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhysioRecording { sample_rate_hz: rate, channels })
}

pub fn read_physio_binary(bytes: &[u8], meta: &str, source: &str) -> Result<PhysioRecording> {
    let mut rate = None;
    let mut names = None;
    for line in meta.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { path: format!("{source}.meta"), row: 0, msg: format!("bad line '{line}'") })?;
        match k.trim() {
            "sample_rate_hz" => rate = v.trim().parse::<f64>().ok(),
            "channels" => names = Some(v.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>()),
            other => {
                return Err(Error::Parse { path: format!("{source}.meta"), row: 0, msg: format!("unknown key '{other}'") })
            }
        }
    }
    let missing: Vec<String> = [("sample_rate_hz", rate.is_none()), ("channels", names.is_none())]
        .iter()
        .filter(|(_, m)| *m)
        .map(|(n, _)| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema { path: format!("{source}.meta"), missing });
    }
    let names = names.unwrap_or_default();
    let rate = rate.unwrap_or_default();
    let kinds = parse_channels(&names.iter().map(String::as_str).collect::<Vec<_>>(), source)?;
    let width = kinds.len() + 1;
    if bytes.len() % (8 * width) != 0 {
        return Err(Error::Validation(format!("{source}: {} bytes is not a whole number of {width}-column rows", bytes.len())));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let channels = kinds
        .into_iter()
        .enumerate()
        .map(|(i, k)| RawSignal::new(values.chunks_exact(width).map(|row| row[i + 1]).collect(), rate, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhysioRecording { sample_rate_hz: rate, channels })
}

pub fn physio_csv_string(rec: &PhysioRecording) -> String {
    let mut out = String::from("t");
    for c in &rec.channels {
        out.push(',');
        out.push_str(c.channel.name());
    }
    out.push('\n');
    for i in 0..rec.len() {
        out.push_str(&(i as f64 / rec.sample_rate_hz).to_string());
        for c in &rec.channels {
            out.push(',');
            out.push_str(&c.samples[i].to_string());
        }
        out.push('\n');
    }
    out
}

/// Writes the recording as CSV or binary+sidecar depending on the extension.
pub fn save_physio(path: &Path, rec: &PhysioRecording) -> Result<()> {
    if is_csv(path) {
        return write_atomic(path, physio_csv_string(rec).as_bytes());
    }
    let mut bytes = Vec::with_capacity(rec.len() * (rec.channels.len() + 1) * 8);
    for i in 0..rec.len() {
        bytes.extend_from_slice(&(i as f64 / rec.sample_rate_hz).to_le_bytes());
        for c in &rec.channels {
            bytes.extend_from_slice(&c.samples[i].to_le_bytes());
        }
    }
    let names: Vec<&str> = rec.channels.iter().map(|c| c.channel.name()).collect();
    let meta = format!("sample_rate_hz = {}\nchannels = {}\n", rec.sample_rate_hz, names.join(","));
    write_atomic(&meta_path(path), meta.as_bytes())?;
    write_atomic(path, &bytes)
}
