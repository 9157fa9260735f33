//! Outpatient medical records: CSV ingestion, cleansing, discretization and
//! segmentation into per-patient day-by-day histories.
//!
//! Four clinical features are kept (systolic BP, diastolic BP, total
//! cholesterol, cigarettes per day). Each is mapped onto three severity levels
//! using the lower edge of each printed range as the threshold:
//!
//! | feature            | L1           | L2                 | L3                 |
//! |--------------------|--------------|--------------------|--------------------|
//! | systolic BP        | < 120        | 120 - 139          | 140+               |
//! | diastolic BP       | < 80         | 80 - 89            | 90+                |
//! | total cholesterol  | < 200        | 200 - 239          | 240+               |
//! | cigarettes / day   | 0 - 10       | 11 - 19            | 20+                |
//!
//! Non-integer readings fall into the range whose lower edge they have passed,
//! so the mapping is total on the non-negative reals.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const RAW_HEADER: [&str; 7] = [
    "patient_id",
    "day",
    "sysbp",
    "diabp",
    "totchol",
    "cigpday",
    "stroke",
];

pub const RECORD_HEADER: [&str; 7] = ["patient_id", "day", "f1", "f2", "f3", "f4", "stroke"];

/// Default observation window in days.
pub const DEFAULT_WINDOW: usize = 30;

#[derive(Debug, thiserror::Error)]
pub enum RecordsError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("line {line}: cannot parse {column} value `{value}`")]
    Parse {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("unknown level `{token}` for feature {feature}")]
    UnknownLevel { feature: Feature, token: String },
}

/// The four clinical features, in column order f1..f4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Feature {
    SystolicBp,
    DiastolicBp,
    TotalCholesterol,
    Smoking,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::SystolicBp,
        Feature::DiastolicBp,
        Feature::TotalCholesterol,
        Feature::Smoking,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Lower edges of L2 and L3.
    fn thresholds(self) -> [f64; 2] {
        match self {
            Feature::SystolicBp => [120.0, 140.0],
            Feature::DiastolicBp => [80.0, 90.0],
            Feature::TotalCholesterol => [200.0, 240.0],
            Feature::Smoking => [11.0, 20.0],
        }
    }

    fn level_names(self) -> [&'static str; 3] {
        match self {
            Feature::SystolicBp | Feature::DiastolicBp => {
                ["Normal", "Pre-hypertension", "High-Hypertension"]
            }
            Feature::TotalCholesterol => ["Optimal", "Normal", "High"],
            Feature::Smoking => ["Light", "Moderate", "Heavy"],
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Feature::SystolicBp => "systolic_bp",
            Feature::DiastolicBp => "diastolic_bp",
            Feature::TotalCholesterol => "total_cholesterol",
            Feature::Smoking => "smoking",
        };
        f.write_str(name)
    }
}

/// Severity level, lowest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureLevel {
    L1,
    L2,
    L3,
}

impl FeatureLevel {
    pub const ALL: [FeatureLevel; 3] = [FeatureLevel::L1, FeatureLevel::L2, FeatureLevel::L3];

    pub fn name(self, feature: Feature) -> &'static str {
        feature.level_names()[self as usize]
    }

    pub fn parse(feature: Feature, token: &str) -> Result<Self, RecordsError> {
        let t = token.trim();
        feature
            .level_names()
            .iter()
            .position(|n| n.eq_ignore_ascii_case(t))
            .map(|i| FeatureLevel::ALL[i])
            .ok_or_else(|| RecordsError::UnknownLevel {
                feature,
                token: token.to_string(),
            })
    }
}

/// One CSV line as read, before any cleansing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecordRow {
    pub patient_id: String,
    pub day: Option<i64>,
    pub systolic_bp: Option<f64>,
    pub diastolic_bp: Option<f64>,
    pub total_cholesterol: Option<f64>,
    pub cigs_per_day: Option<f64>,
    /// Raw indicator; only 0 and 1 survive cleansing.
    pub stroke: Option<f64>,
}

impl RawRecordRow {
    fn clinical(&self) -> [Option<f64>; 4] {
        [
            self.systolic_bp,
            self.diastolic_bp,
            self.total_cholesterol,
            self.cigs_per_day,
        ]
    }
}

/// One discretized patient-day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayEntry {
    pub day: u32,
    pub levels: [FeatureLevel; 4],
    pub stroke: bool,
}

impl DayEntry {
    pub fn level(&self, feature: Feature) -> FeatureLevel {
        self.levels[feature.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MedicalRecord {
    pub patient_id: String,
    pub days: Vec<DayEntry>,
}

impl MedicalRecord {
    pub fn stroke_days(&self) -> usize {
        self.days.iter().filter(|d| d.stroke).count()
    }
}

/// The readings an outpatient reports right now.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurrentState {
    pub levels: [FeatureLevel; 4],
}

impl CurrentState {
    pub fn level(&self, feature: Feature) -> FeatureLevel {
        self.levels[feature.index()]
    }

    /// Parses four level tokens in feature order f1..f4.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self, RecordsError> {
        if tokens.len() != 4 {
            return Err(RecordsError::Csv {
                line: 0,
                message: format!("current state needs 4 level tokens, got {}", tokens.len()),
            });
        }
        let mut levels = [FeatureLevel::L1; 4];
        for (slot, (feature, token)) in levels.iter_mut().zip(Feature::ALL.iter().zip(tokens)) {
            *slot = FeatureLevel::parse(*feature, token.as_ref())?;
        }
        Ok(Self { levels })
    }

    pub fn tokens(&self) -> [&'static str; 4] {
        let mut out = [""; 4];
        for (o, f) in out.iter_mut().zip(Feature::ALL) {
            *o = self.level(f).name(f);
        }
        out
    }
}

fn io_error(path: &Path, source: std::io::Error) -> RecordsError {
    RecordsError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Locates every required header column, in `RAW_HEADER` order.
fn column_positions(
    headers: &csv::StringRecord,
    wanted: &[&'static str],
) -> Result<Vec<usize>, RecordsError> {
    wanted
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or(RecordsError::MissingColumn(name))
        })
        .collect()
}

fn parse_cell<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    pos: usize,
    column: &'static str,
    line: u64,
) -> Result<Option<T>, RecordsError> {
    let raw = rec.get(pos).unwrap_or("").trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    raw.parse::<T>().map(Some).map_err(|_| RecordsError::Parse {
        line,
        column,
        value: raw.to_string(),
    })
}

pub fn read_raw_records<R: Read>(reader: R) -> Result<Vec<RawRecordRow>, RecordsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| RecordsError::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let pos = column_positions(&headers, &RAW_HEADER)?;

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // Header is line 1.
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| RecordsError::Csv {
            line,
            message: e.to_string(),
        })?;
        rows.push(RawRecordRow {
            patient_id: rec.get(pos[0]).unwrap_or("").trim().to_string(),
            day: parse_cell(&rec, pos[1], RAW_HEADER[1], line)?,
            systolic_bp: parse_cell(&rec, pos[2], RAW_HEADER[2], line)?,
            diastolic_bp: parse_cell(&rec, pos[3], RAW_HEADER[3], line)?,
            total_cholesterol: parse_cell(&rec, pos[4], RAW_HEADER[4], line)?,
            cigs_per_day: parse_cell(&rec, pos[5], RAW_HEADER[5], line)?,
            stroke: parse_cell(&rec, pos[6], RAW_HEADER[6], line)?,
        });
    }
    Ok(rows)
}

pub fn load_raw_records(path: &Path) -> Result<Vec<RawRecordRow>, RecordsError> {
    let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    read_raw_records(std::io::BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cleansed {
    pub rows: Vec<RawRecordRow>,
    pub dropped: usize,
}

fn row_is_valid(row: &RawRecordRow) -> bool {
    let finite_non_negative = |v: Option<f64>| matches!(v, Some(x) if x.is_finite() && x >= 0.0);
    !row.patient_id.is_empty()
        && matches!(row.day, Some(d) if d >= 1 && d <= u32::MAX as i64)
        && row.clinical().iter().all(|v| finite_non_negative(*v))
        && matches!(row.stroke, Some(s) if s == 0.0 || s == 1.0)
}

/// Drops incomplete, erroneous and duplicate rows, keeping the first
/// occurrence of each (patient, day) pair. Order is preserved.
pub fn cleanse(rows: &[RawRecordRow]) -> Cleansed {
    let mut seen: HashSet<(&str, i64)> = HashSet::new();
    let mut kept = Vec::with_capacity(rows.len());
    for row in rows {
        if !row_is_valid(row) {
            continue;
        }
        let key = (row.patient_id.as_str(), row.day.unwrap_or_default());
        if seen.insert(key) {
            kept.push(row.clone());
        }
    }
    let dropped = rows.len() - kept.len();
    if dropped > 0 {
        log::info!("cleanse: dropped {dropped} of {} rows", rows.len());
    }
    Cleansed {
        rows: kept,
        dropped,
    }
}

/// Maps one reading onto its severity level. Negative or non-finite input is
/// clamped into L1; cleansed rows never contain it.
pub fn level_of(feature: Feature, value: f64) -> FeatureLevel {
    let [t2, t3] = feature.thresholds();
    if value >= t3 {
        FeatureLevel::L3
    } else if value >= t2 {
        FeatureLevel::L2
    } else {
        FeatureLevel::L1
    }
}

/// Discretizes a cleansed row. Returns `None` if the row was not cleansed.
pub fn generalize(row: &RawRecordRow) -> Option<(String, DayEntry)> {
    if !row_is_valid(row) {
        return None;
    }
    let clinical = row.clinical();
    let mut levels = [FeatureLevel::L1; 4];
    for (slot, (f, v)) in levels.iter_mut().zip(Feature::ALL.iter().zip(clinical)) {
        *slot = level_of(*f, v?);
    }
    Some((
        row.patient_id.clone(),
        DayEntry {
            day: row.day? as u32,
            levels,
            stroke: row.stroke? == 1.0,
        },
    ))
}

/// Groups discretized days by patient, sorts them by day and keeps the first
/// `window` days when a window is given. Patients come out in id order.
pub fn segment(entries: &[(String, DayEntry)], window: Option<usize>) -> Vec<MedicalRecord> {
    let mut by_patient: BTreeMap<&str, Vec<DayEntry>> = BTreeMap::new();
    for (id, entry) in entries {
        by_patient.entry(id.as_str()).or_default().push(*entry);
    }
    by_patient
        .into_iter()
        .map(|(id, mut days)| {
            days.sort_by_key(|d| d.day);
            days.dedup_by_key(|d| d.day);
            if let Some(w) = window {
                days.truncate(w);
            }
            MedicalRecord {
                patient_id: id.to_string(),
                days,
            }
        })
        .filter(|r| !r.days.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub records: Vec<MedicalRecord>,
    pub dropped_rows: usize,
    /// Patients present in the raw input with no valid day left.
    pub excluded_patients: Vec<String>,
}

/// Reduction, cleansing, generalization and segmentation in one pass.
pub fn preprocess(rows: &[RawRecordRow], window: Option<usize>) -> Preprocessed {
    let cleansed = cleanse(rows);
    let entries: Vec<_> = cleansed.rows.iter().filter_map(generalize).collect();
    let records = segment(&entries, window);

    let kept: HashSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
    let mut excluded: Vec<String> = rows
        .iter()
        .map(|r| r.patient_id.as_str())
        .filter(|id| !kept.contains(id))
        .map(str::to_string)
        .collect();
    excluded.sort();
    excluded.dedup();
    for id in &excluded {
        log::warn!("patient `{id}` has no valid days and was excluded");
    }
    Preprocessed {
        records,
        dropped_rows: cleansed.dropped,
        excluded_patients: excluded,
    }
}

pub fn records_to_csv(records: &[MedicalRecord]) -> String {
    let mut out = RECORD_HEADER.join(",");
    out.push('\n');
    for r in records {
        for d in &r.days {
            out.push_str(&r.patient_id);
            out.push_str(&format!(",{}", d.day));
            for f in Feature::ALL {
                out.push(',');
                out.push_str(d.level(f).name(f));
            }
            out.push_str(if d.stroke { ",1\n" } else { ",0\n" });
        }
    }
    out
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<MedicalRecord>, RecordsError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| RecordsError::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let pos = column_positions(&headers, &RECORD_HEADER)?;
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| RecordsError::Csv {
            line,
            message: e.to_string(),
        })?;
        let day: u32 = parse_cell(&rec, pos[1], "day", line)?.ok_or(RecordsError::Parse {
            line,
            column: "day",
            value: String::new(),
        })?;
        let mut levels = [FeatureLevel::L1; 4];
        for (k, f) in Feature::ALL.iter().enumerate() {
            levels[k] = FeatureLevel::parse(*f, rec.get(pos[2 + k]).unwrap_or(""))?;
        }
        let stroke = match rec.get(pos[6]).map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            other => {
                return Err(RecordsError::Parse {
                    line,
                    column: "stroke",
                    value: other.unwrap_or("").to_string(),
                })
            }
        };
        entries.push((
            rec.get(pos[0]).unwrap_or("").trim().to_string(),
            DayEntry { day, levels, stroke },
        ));
    }
    Ok(segment(&entries, None))
}

pub fn load_records(path: &Path) -> Result<Vec<MedicalRecord>, RecordsError> {
    let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    read_records(std::io::BufReader::new(file))
}

/// Synthetic raw rows in the ingestion schema, for demos and tests.
///
/// Readings are drawn around clinically plausible centres; the daily stroke
/// probability grows with how many features sit at their highest level.
pub fn synthesize_raw<R: Rng>(num_patients: usize, days: usize, rng: &mut R) -> Vec<RawRecordRow> {
    let mut rows = Vec::with_capacity(num_patients * days);
    for p in 0..num_patients {
        // Per-patient baseline so patients differ in risk.
        let base_sys = rng.random_range(105.0..150.0);
        let base_dia = rng.random_range(65.0..95.0);
        let base_chol = rng.random_range(170.0..260.0);
        let base_cig: f64 = if rng.random_bool(0.4) {
            0.0
        } else {
            rng.random_range(1.0..30.0)
        };
        for d in 1..=days {
            let sys: f64 = base_sys + rng.random_range(-15.0..15.0);
            let dia: f64 = base_dia + rng.random_range(-10.0..10.0);
            let chol: f64 = base_chol + rng.random_range(-20.0..20.0);
            let cig = (base_cig + rng.random_range(-3.0..3.0)).max(0.0).round();
            let severe = [
                level_of(Feature::SystolicBp, sys),
                level_of(Feature::DiastolicBp, dia),
                level_of(Feature::TotalCholesterol, chol),
                level_of(Feature::Smoking, cig),
            ]
            .iter()
            .filter(|l| **l == FeatureLevel::L3)
            .count();
            let p_stroke = 0.01 + 0.03 * severe as f64;
            rows.push(RawRecordRow {
                patient_id: format!("P{:04}", p + 1),
                day: Some(d as i64),
                systolic_bp: Some(sys.round()),
                diastolic_bp: Some(dia.round()),
                total_cholesterol: Some(chol.round()),
                cigs_per_day: Some(cig),
                stroke: Some(if rng.random_bool(p_stroke) { 1.0 } else { 0.0 }),
            });
        }
    }
    rows
}

pub fn raw_to_csv(rows: &[RawRecordRow]) -> String {
    fn cell(v: Option<f64>) -> String {
        v.map(|x| format!("{x}")).unwrap_or_default()
    }
    let mut out = RAW_HEADER.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.patient_id,
            r.day.map(|d| d.to_string()).unwrap_or_default(),
            cell(r.systolic_bp),
            cell(r.diastolic_bp),
            cell(r.total_cholesterol),
            cell(r.cigs_per_day),
            cell(r.stroke),
        ));
    }
    out
}
