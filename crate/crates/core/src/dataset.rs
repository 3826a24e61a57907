//! AU trial schema, the fixed 17-entry AU catalog, CSV ingestion and the
//! train-split normalization manifest.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const AU_ROWS: usize = 17;
pub const FRAMES: usize = 87;
/// Duration covered by the preparation interval, in milliseconds.
pub const TRIAL_MS: f64 = 1500.0;

/// Task paradigm: whether the word to speak is known before the go cue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Paradigm {
    Cw,
    Wg,
}

impl Paradigm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Paradigm::Cw => "CW",
            Paradigm::Wg => "WG",
        }
    }

    pub fn parse(s: &str) -> Option<Paradigm> {
        match s {
            "CW" | "cw" => Some(Paradigm::Cw),
            "WG" | "wg" => Some(Paradigm::Wg),
            _ => None,
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Trial outcome label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Fluent,
    Stuttered,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Fluent => "fluent",
            Label::Stuttered => "stuttered",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "fluent" => Some(Label::Fluent),
            "stuttered" => Some(Label::Stuttered),
            _ => None,
        }
    }

    pub fn as_u8(&self) -> u8 {
        match self {
            Label::Fluent => 0,
            Label::Stuttered => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Facial region of an action unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Upper,
    Lower,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Upper => "upper",
            Region::Lower => "lower",
        }
    }
}

/// One catalog entry: FACS id, facial region, display name.
#[derive(Debug, Clone, Copy)]
pub struct AuInfo {
    pub id: u8,
    pub region: Region,
    pub name: &'static str,
}

/// The 17 action units in matrix row order: AUs 1, 2, 4, 5, 6, 7, 9 and 45
/// form the upper facial region; 10, 12, 14, 15, 17, 20, 23, 25 and 26 the
/// lower region.
pub const AU_CATALOG: [AuInfo; AU_ROWS] = [
    AuInfo { id: 1, region: Region::Upper, name: "inner brow raiser" },
    AuInfo { id: 2, region: Region::Upper, name: "outer brow raiser" },
    AuInfo { id: 4, region: Region::Upper, name: "brow lowerer" },
    AuInfo { id: 5, region: Region::Upper, name: "upper lid raiser" },
    AuInfo { id: 6, region: Region::Upper, name: "cheek raiser" },
    AuInfo { id: 7, region: Region::Upper, name: "eyelid tightener" },
    AuInfo { id: 9, region: Region::Upper, name: "nose wrinkler" },
    AuInfo { id: 45, region: Region::Upper, name: "eye blinker" },
    AuInfo { id: 10, region: Region::Lower, name: "upper lip raiser" },
    AuInfo { id: 12, region: Region::Lower, name: "lip corner puller" },
    AuInfo { id: 14, region: Region::Lower, name: "dimpler" },
    AuInfo { id: 15, region: Region::Lower, name: "lip corner depressor" },
    AuInfo { id: 17, region: Region::Lower, name: "chin raiser" },
    AuInfo { id: 20, region: Region::Lower, name: "lip stretcher" },
    AuInfo { id: 23, region: Region::Lower, name: "lip tightener" },
    AuInfo { id: 25, region: Region::Lower, name: "lips part" },
    AuInfo { id: 26, region: Region::Lower, name: "jaw drop" },
];

/// Matrix row of an AU id.
pub fn au_row(id: u8) -> Option<usize> {
    AU_CATALOG.iter().position(|au| au.id == id)
}

/// CSV column name of a catalog row, e.g. "au06" or "au45".
pub fn au_column_name(row: usize) -> String {
    format!("au{:02}", AU_CATALOG[row].id)
}

/// One trial: a 17x87 AU intensity matrix plus metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AUTrial {
    pub trial_id: u64,
    pub subject_id: u32,
    pub session_id: u32,
    pub paradigm: Paradigm,
    pub label: Label,
    /// `[17, 87]` intensities, normalized to [0, 1].
    pub matrix: Tensor,
}

impl AUTrial {
    pub fn value(&self, row: usize, frame: usize) -> f64 {
        self.matrix.data()[row * FRAMES + frame]
    }
}

fn csv_header() -> Vec<String> {
    let mut header = vec![
        "trial_id".to_string(),
        "subject_id".to_string(),
        "session_id".to_string(),
        "paradigm".to_string(),
        "label".to_string(),
        "frame".to_string(),
    ];
    for row in 0..AU_ROWS {
        header.push(au_column_name(row));
    }
    header
}

/// Writes trials as CSV, one row per (trial, frame). Floats use the shortest
/// round-trip formatting, so save -> load is bit-exact.
pub fn save_dataset<W: Write>(trials: &[AUTrial], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(csv_header())?;
    for trial in trials {
        for frame in 0..FRAMES {
            let mut record = vec![
                trial.trial_id.to_string(),
                trial.subject_id.to_string(),
                trial.session_id.to_string(),
                trial.paradigm.to_string(),
                trial.label.to_string(),
                frame.to_string(),
            ];
            for row in 0..AU_ROWS {
                record.push(trial.value(row, frame).to_string());
            }
            out.write_record(record)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset_file(trials: &[AUTrial], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    save_dataset(trials, std::io::BufWriter::new(file))
}

struct PartialTrial {
    subject_id: u32,
    session_id: u32,
    paradigm: Paradigm,
    label: Label,
    frames_seen: Vec<bool>,
    matrix: Tensor,
}

/// Loads and validates a dataset CSV. Every trial must supply each of the 87
/// frames exactly once with 17 finite AU intensities.
pub fn load_dataset(path: &Path) -> Result<Vec<AUTrial>> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Dataset(format!("cannot open {}: {e}", path.display()))
    })?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));

    let expected = csv_header();
    let header = reader.headers()?.clone();
    if header.len() != expected.len() || header.iter().zip(expected.iter()).any(|(a, b)| a != b) {
        return Err(Error::Dataset(format!(
            "unexpected header: expected {:?}, got {:?}",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut order: Vec<u64> = Vec::new();
    let mut partial: HashMap<u64, PartialTrial> = HashMap::new();

    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = row_idx + 2; // header is line 1
        let parse_int = |field: usize, name: &str| -> Result<u64> {
            record[field].parse::<u64>().map_err(|_| {
                Error::Dataset(format!("line {line}: non-numeric {name} '{}'", &record[field]))
            })
        };
        let trial_id = parse_int(0, "trial_id")?;
        let subject_id = parse_int(1, "subject_id")? as u32;
        let session_id = parse_int(2, "session_id")? as u32;
        let paradigm = Paradigm::parse(&record[3]).ok_or_else(|| {
            Error::Dataset(format!("line {line}: unknown paradigm '{}'", &record[3]))
        })?;
        let label = Label::parse(&record[4]).ok_or_else(|| {
            Error::Dataset(format!("line {line}: unknown label '{}'", &record[4]))
        })?;
        let frame = parse_int(5, "frame")? as usize;
        if frame >= FRAMES {
            return Err(Error::Dataset(format!(
                "line {line}: trial {trial_id} frame {frame} out of range 0..{FRAMES}"
            )));
        }

        let entry = partial.entry(trial_id).or_insert_with(|| {
            order.push(trial_id);
            PartialTrial {
                subject_id,
                session_id,
                paradigm,
                label,
                frames_seen: vec![false; FRAMES],
                matrix: Tensor::zeros(&[AU_ROWS, FRAMES]),
            }
        });
        if entry.frames_seen[frame] {
            return Err(Error::Dataset(format!(
                "line {line}: trial {trial_id} repeats frame {frame}"
            )));
        }
        entry.frames_seen[frame] = true;
        for row in 0..AU_ROWS {
            let text = &record[6 + row];
            let value: f64 = text.parse().map_err(|_| {
                Error::Dataset(format!(
                    "line {line}: trial {trial_id} column {} is not numeric: '{text}'",
                    au_column_name(row)
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Dataset(format!(
                    "line {line}: trial {trial_id} column {} is not finite",
                    au_column_name(row)
                )));
            }
            entry.matrix.data_mut()[row * FRAMES + frame] = value;
        }
    }

    let mut trials = Vec::with_capacity(order.len());
    for trial_id in order {
        let p = partial.remove(&trial_id).expect("collected above");
        let seen = p.frames_seen.iter().filter(|&&s| s).count();
        if seen != FRAMES {
            return Err(Error::Dataset(format!(
                "trial {trial_id} has {seen} frames, expected {FRAMES}"
            )));
        }
        trials.push(AUTrial {
            trial_id,
            subject_id: p.subject_id,
            session_id: p.session_id,
            paradigm: p.paradigm,
            label: p.label,
            matrix: p.matrix,
        });
    }
    if trials.is_empty() {
        return Err(Error::Dataset(format!("{} holds no trials", path.display())));
    }
    Ok(trials)
}

/// Per-AU min/max computed on the training split; applied identically to
/// train, validation and test data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationManifest {
    pub version: u32,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Fits per-AU min-max statistics on the training split.
pub fn fit_normalization(trials: &[AUTrial]) -> Result<NormalizationManifest> {
    if trials.is_empty() {
        return Err(Error::Dataset("cannot fit normalization on an empty split".into()));
    }
    let mut min = vec![f64::INFINITY; AU_ROWS];
    let mut max = vec![f64::NEG_INFINITY; AU_ROWS];
    for trial in trials {
        for row in 0..AU_ROWS {
            for frame in 0..FRAMES {
                let v = trial.value(row, frame);
                min[row] = min[row].min(v);
                max[row] = max[row].max(v);
            }
        }
    }
    for row in 0..AU_ROWS {
        if max[row] <= min[row] {
            return Err(Error::Dataset(format!(
                "AU {} ({}) is constant on the training split; cannot scale",
                AU_CATALOG[row].id, AU_CATALOG[row].name
            )));
        }
    }
    Ok(NormalizationManifest { version: 1, min, max })
}

/// Min-max scales every trial with training statistics, clamping values
/// outside the training range to [0, 1].
pub fn apply_normalization(trials: &mut [AUTrial], manifest: &NormalizationManifest) {
    for trial in trials.iter_mut() {
        for row in 0..AU_ROWS {
            let lo = manifest.min[row];
            let inv = 1.0 / (manifest.max[row] - lo);
            for frame in 0..FRAMES {
                let v = &mut trial.matrix.data_mut()[row * FRAMES + frame];
                *v = ((*v - lo) * inv).clamp(0.0, 1.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_trial(trial_id: u64, label: Label, fill: f64) -> AUTrial {
        AUTrial {
            trial_id,
            subject_id: 1,
            session_id: 1,
            paradigm: Paradigm::Cw,
            label,
            matrix: Tensor::filled(&[AU_ROWS, FRAMES], fill),
        }
    }

    #[test]
    fn catalog_region_partition() {
        assert_eq!(AU_CATALOG.len(), 17);
        assert!(AU_CATALOG[..8].iter().all(|a| a.region == Region::Upper));
        assert!(AU_CATALOG[8..].iter().all(|a| a.region == Region::Lower));
        assert_eq!(au_row(6), Some(4));
        assert_eq!(au_row(14), Some(10));
        assert_eq!(AU_CATALOG[au_row(6).unwrap()].name, "cheek raiser");
        assert_eq!(AU_CATALOG[au_row(14).unwrap()].name, "dimpler");
        assert_eq!(au_column_name(7), "au45");
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.csv");
        let mut a = toy_trial(3, Label::Stuttered, 0.0);
        let mut b = toy_trial(9, Label::Fluent, 0.0);
        for (i, v) in a.matrix.data_mut().iter_mut().enumerate() {
            *v = ((i as f64) * 0.001237).sin().abs();
        }
        for (i, v) in b.matrix.data_mut().iter_mut().enumerate() {
            *v = 1.0 / ((i + 3) as f64);
        }
        b.paradigm = Paradigm::Wg;
        let trials = vec![a, b];
        save_dataset_file(&trials, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].trial_id, 3);
        assert_eq!(loaded[1].paradigm, Paradigm::Wg);
        for (orig, back) in trials.iter().zip(loaded.iter()) {
            assert_eq!(orig.matrix.data(), back.matrix.data());
            assert_eq!(orig.label, back.label);
        }
    }

    #[test]
    fn missing_frame_rejected_naming_trial() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.csv");
        let trial = toy_trial(42, Label::Fluent, 0.5);
        let mut text = Vec::new();
        save_dataset(&[trial], &mut text).unwrap();
        let mut lines: Vec<&str> = std::str::from_utf8(&text).unwrap().lines().collect();
        lines.remove(lines.len() - 1); // drop frame 86
        std::fs::write(&path, lines.join("\n")).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("trial 42"), "{err}");
        assert!(err.to_string().contains("86 frames"), "{err}");
    }

    #[test]
    fn unknown_label_rejected_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let trial = toy_trial(1, Label::Fluent, 0.5);
        let mut text = Vec::new();
        save_dataset(&[trial], &mut text).unwrap();
        let patched = std::str::from_utf8(&text).unwrap().replacen("fluent", "flueny", 1);
        std::fs::write(&path, patched).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("flueny"), "{err}");
    }

    #[test]
    fn non_numeric_cell_rejected_with_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        let trial = toy_trial(1, Label::Fluent, 0.25);
        let mut text = Vec::new();
        save_dataset(&[trial], &mut text).unwrap();
        let patched = std::str::from_utf8(&text).unwrap().replacen("0.25", "oops", 1);
        std::fs::write(&path, patched).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("au01"), "{err}");
    }

    #[test]
    fn normalization_midpoint_and_clamping() {
        let mut train = vec![toy_trial(1, Label::Fluent, 0.0), toy_trial(2, Label::Stuttered, 5.0)];
        // Row 0 of trial 1 spans [0,5] via two trials; make one cell 2.5.
        train[0].matrix.data_mut()[0] = 2.5;
        let manifest = fit_normalization(&train).unwrap();
        assert_eq!(manifest.min[0], 0.0);
        assert_eq!(manifest.max[0], 5.0);

        let mut test = vec![toy_trial(3, Label::Fluent, 7.0)];
        test[0].matrix.data_mut()[0] = 2.5;
        apply_normalization(&mut test, &manifest);
        assert_eq!(test[0].matrix.data()[0], 0.5);
        // 7.0 above the training max clamps to 1.
        assert_eq!(test[0].matrix.data()[1], 1.0);

        apply_normalization(&mut train, &manifest);
        assert_eq!(train[0].matrix.data()[1], 0.0);
        assert_eq!(train[1].matrix.data()[0], 1.0);
    }

    #[test]
    fn constant_au_rejected_by_name() {
        let train = vec![toy_trial(1, Label::Fluent, 0.5), toy_trial(2, Label::Stuttered, 0.5)];
        let err = fit_normalization(&train).unwrap_err();
        assert!(err.to_string().contains("AU 1"), "{err}");
    }
}
