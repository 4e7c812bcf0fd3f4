//! Per-frame action-unit / gaze tables.
//!
//! Column order of the 42-wide video matrix:
//!
//! | index | columns                                   |
//! |-------|-------------------------------------------|
//! | 0-17  | `AU01_c` ... `AU45_c` presence, in {0, 1} |
//! | 18-35 | `AU01_r` ... `AU45_r` intensity, in [0, 5]|
//! | 36-41 | `gaze_0_x gaze_0_y gaze_0_z gaze_1_x gaze_1_y gaze_1_z` |
//!
//! AUs: 1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 28, 45.
//! Names follow the OpenFace CSV convention; header cells are trimmed and
//! extra columns (frame, timestamp, ...) are ignored.

use std::path::Path;

use super::trial::{FeatureMatrix, VIDEO_WIDTH};
use crate::error::{Error, Result};

pub const ACTION_UNITS: [u8; 18] = [1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 28, 45];
pub const GAZE_COLUMNS: [&str; 6] = ["gaze_0_x", "gaze_0_y", "gaze_0_z", "gaze_1_x", "gaze_1_y", "gaze_1_z"];
pub const INTENSITY_MAX: f64 = 5.0;

pub const PRESENCE_OFFSET: usize = 0;
pub const INTENSITY_OFFSET: usize = 18;
pub const GAZE_OFFSET: usize = 36;

/// Column names in matrix order.
pub fn column_names() -> Vec<String> {
    let mut names: Vec<String> = ACTION_UNITS.iter().map(|au| format!("AU{au:02}_c")).collect();
    names.extend(ACTION_UNITS.iter().map(|au| format!("AU{au:02}_r")));
    names.extend(GAZE_COLUMNS.iter().map(|s| s.to_string()));
    debug_assert_eq!(names.len(), VIDEO_WIDTH);
    names
}

/// Matrix column of the intensity of action unit `au`.
pub fn intensity_column(au: u8) -> Option<usize> {
    ACTION_UNITS.iter().position(|&a| a == au).map(|i| INTENSITY_OFFSET + i)
}

/// Counters of value adjustments made at ingestion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AuIngestStats {
    /// Presence cells not already 0 or 1, rounded at 0.5.
    pub presence_rounded: usize,
    /// Intensity cells outside [0, 5], clamped.
    pub intensity_clamped: usize,
}

/// Rounds presence at 0.5 and clamps intensity into [0, 5] in place.
pub fn sanitize_row(row: &mut [f64], stats: &mut AuIngestStats) {
    for v in &mut row[PRESENCE_OFFSET..INTENSITY_OFFSET] {
        if *v != 0.0 && *v != 1.0 {
            stats.presence_rounded += 1;
            *v = if *v >= 0.5 { 1.0 } else { 0.0 };
        }
    }
    for v in &mut row[INTENSITY_OFFSET..GAZE_OFFSET] {
        let c = v.clamp(0.0, INTENSITY_MAX);
        if c != *v {
            stats.intensity_clamped += 1;
            *v = c;
        }
    }
}

/// Reads an AU/gaze CSV into a `[frames, 42]` matrix.
pub fn load_au_csv(path: &Path) -> Result<(FeatureMatrix, AuIngestStats)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_au_csv(file, &path.display().to_string())
}

pub fn read_au_csv<R: std::io::Read>(reader: R, source: &str) -> Result<(FeatureMatrix, AuIngestStats)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { path: source.to_string(), row: 0, msg: e.to_string() })?
        .clone();
    let names = column_names();
    let mut index = Vec::with_capacity(VIDEO_WIDTH);
    let mut missing = Vec::new();
    for name in &names {
        match headers.iter().position(|h| h == name) {
            Some(i) => index.push(i),
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema { path: source.to_string(), missing });
    }
    let mut stats = AuIngestStats::default();
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let row_no = r + 1;
        let record = record.map_err(|e| Error::Parse { path: source.to_string(), row: row_no, msg: e.to_string() })?;
        let mut row = [0.0; VIDEO_WIDTH];
        for (slot, (&col, name)) in row.iter_mut().zip(index.iter().zip(&names)) {
            let cell = record.get(col).unwrap_or("");
            *slot = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                path: source.to_string(),
                row: row_no,
                msg: format!("column {name}: '{cell}' is not a finite number"),
            })?;
        }
        sanitize_row(&mut row, &mut stats);
        data.extend_from_slice(&row);
        rows += 1;
    }
    if stats.presence_rounded > 0 {
        log::warn!("{source}: rounded {} AU presence values to 0/1", stats.presence_rounded);
    }
    Ok((FeatureMatrix::new(rows, VIDEO_WIDTH, data)?, stats))
}

/// Serializes a `[frames, 42]` matrix with the canonical header.
pub fn au_csv_string(m: &FeatureMatrix) -> Result<String> {
    if m.cols() != VIDEO_WIDTH {
        return Err(Error::Validation(format!("AU matrix width {} != {VIDEO_WIDTH}", m.cols())));
    }
    let mut out = column_names().join(",");
    out.push('\n');
    for r in 0..m.rows() {
        let cells: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}
