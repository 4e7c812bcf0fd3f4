//! JSON-lines corpus manifests.
//!
//! One record per line:
//!
//! ```text
//! {"subject_id":"S01","trial_id":"S01_T01","au_csv_path":"au/S01_T01.csv",
//!  "physio_path":"physio/S01_T01.bin","valence_raw":6.2,"arousal_raw":3.1,
//!  "dataset_tag":"synthetic"}
//! ```
//!
//! Relative paths resolve against the manifest's directory. Physio files
//! must already be at 128 Hz (see `mvp preprocess`).

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::au::{au_csv_string, load_au_csv};
use super::physio::{load_physio, save_physio, PhysioRecording};
use super::trial::Trial;
use crate::dataset::DatasetTag;
use crate::dsp::Channel;
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub subject_id: String,
    pub trial_id: String,
    pub au_csv_path: String,
    pub physio_path: String,
    pub valence_raw: f64,
    pub arousal_raw: f64,
    pub dataset_tag: DatasetTag,
}

pub fn parse_manifest(text: &str, source: &str) -> Result<Vec<ManifestRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { path: source.into(), row: i + 1, msg: e.to_string() }))
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    parse_manifest(&read_to_string(path)?, &path.display().to_string())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads and validates every trial listed in the manifest.
pub fn load_corpus(manifest: &Path) -> Result<Vec<Trial>> {
    let records = read_manifest(manifest)?;
    if records.is_empty() {
        return Err(Error::Validation(format!("{}: manifest lists no trials", manifest.display())));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    records
        .par_iter()
        .map(|r| {
            let (video, _) = load_au_csv(&resolve(base, &r.au_csv_path))?;
            let physio = load_physio(&resolve(base, &r.physio_path))?.to_trial_matrix()?;
            let t = Trial {
                subject_id: r.subject_id.clone(),
                trial_id: r.trial_id.clone(),
                video,
                physio,
                valence_raw: r.valence_raw,
                arousal_raw: r.arousal_raw,
                dataset: r.dataset_tag,
            };
            t.validate()?;
            Ok(t)
        })
        .collect()
}

/// Writes `au/<trial>.csv`, `physio/<trial>.bin` and `manifest.jsonl` under
/// `dir`; returns the manifest path. Output is byte-identical for equal input.
pub fn write_corpus(dir: &Path, trials: &[Trial], cardiac: Channel) -> Result<PathBuf> {
    for sub in ["au", "physio"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let records = trials
        .par_iter()
        .map(|t| {
            let au = format!("au/{}.csv", t.trial_id);
            let physio = format!("physio/{}.bin", t.trial_id);
            write_atomic(&dir.join(&au), au_csv_string(&t.video)?.as_bytes())?;
            save_physio(&dir.join(&physio), &PhysioRecording::from_trial_matrix(&t.physio, cardiac)?)?;
            Ok(ManifestRecord {
                subject_id: t.subject_id.clone(),
                trial_id: t.trial_id.clone(),
                au_csv_path: au,
                physio_path: physio,
                valence_raw: t.valence_raw,
                arousal_raw: t.arousal_raw,
                dataset_tag: t.dataset,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::Validation(e.to_string()))?);
        text.push('\n');
    }
    let path = dir.join(MANIFEST_FILE);
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}
