//! Ingestion, sample matching, quality assessment and stratified splitting.
//!
//! Isotherm CSV: `sample_key,lithology,pressure_bar,temperature_K,uptake_mmol_g`.
//! Property CSV: `sample_key,lithology,<property columns>`; empty cells are
//! missing values. Mineral fractions use `mineral_<name>_wt` columns.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::stats;

/// Monotonicity tolerance for uptake decreases along an isotherm (mmol/g).
pub const MONOTONICITY_TOLERANCE: f64 = 1e-6;

pub const PRESSURE_RANGE: (f64, f64) = (0.0, 200.0);
pub const TEMPERATURE_RANGE: (f64, f64) = (20.0, 400.0);

pub const ISOTHERM_COLUMNS: [&str; 5] = [
    "sample_key",
    "lithology",
    "pressure_bar",
    "temperature_K",
    "uptake_mmol_g",
];

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("sample key `{0}` appears with conflicting property values")]
    DuplicateSampleKey(String),
    #[error("lithology {lithology} has {found} samples; at least 3 are required")]
    InsufficientSamples { lithology: Lithology, found: usize },
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("csv error: {0}")]
    Csv(String),
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line());
        match (e.kind(), line) {
            (csv::ErrorKind::Io(_), _) => DataError::Csv(e.to_string()),
            (_, Some(line)) => DataError::Parse {
                line,
                message: e.to_string(),
            },
            _ => DataError::Csv(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lithology {
    Clay,
    Shale,
    Coal,
}

impl Lithology {
    pub const ALL: [Lithology; 3] = [Lithology::Clay, Lithology::Shale, Lithology::Coal];

    pub fn as_str(self) -> &'static str {
        match self {
            Lithology::Clay => "clay",
            Lithology::Shale => "shale",
            Lithology::Coal => "coal",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Lithology::Clay => 0,
            Lithology::Shale => 1,
            Lithology::Coal => 2,
        }
    }
}

impl fmt::Display for Lithology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lithology {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clay" | "clays" => Ok(Lithology::Clay),
            "shale" | "shales" => Ok(Lithology::Shale),
            "coal" | "coals" => Ok(Lithology::Coal),
            other => Err(format!("unknown lithology `{other}`")),
        }
    }
}

/// Lithology saturation capacities in mmol/g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmaxTable {
    pub clay: f64,
    pub shale: f64,
    pub coal: f64,
}

impl Default for QmaxTable {
    fn default() -> Self {
        QmaxTable {
            clay: 1.2,
            shale: 1.0,
            coal: 0.88,
        }
    }
}

impl QmaxTable {
    pub fn get(&self, lithology: Lithology) -> f64 {
        match lithology {
            Lithology::Clay => self.clay,
            Lithology::Shale => self.shale,
            Lithology::Coal => self.coal,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for l in Lithology::ALL {
            let v = self.get(l);
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("q_max for {l} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Lowercase, trim, and collapse runs of non-alphanumerics into one `_`.
/// Leading and trailing separators are dropped.
pub fn normalize_key(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for c in raw.trim().chars() {
        if c.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(c.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsothermRecord {
    pub sample_key: String,
    pub lithology: Lithology,
    /// bar
    pub pressure: f64,
    /// kelvin
    pub temperature: f64,
    /// mmol/g
    pub uptake: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplePropertySet {
    pub sample_key: String,
    pub lithology: Option<Lithology>,
    pub surface_area: Option<f64>,
    pub pore_volume: Option<f64>,
    pub micropore_volume: Option<f64>,
    pub avg_pore_diameter: Option<f64>,
    pub toc: Option<f64>,
    pub fixed_carbon: Option<f64>,
    pub volatile_matter: Option<f64>,
    pub vitrinite_reflectance: Option<f64>,
    pub ash: Option<f64>,
    pub moisture: Option<f64>,
    pub mineral_fractions: BTreeMap<String, f64>,
    pub characteristic_uptake: Option<f64>,
}

/// Scalar property columns: (csv name, is a weight percentage).
pub const PROPERTY_COLUMNS: [(&str, bool); 11] = [
    ("surface_area_m2_g", false),
    ("pore_volume_cm3_g", false),
    ("micropore_volume_cm3_g", false),
    ("avg_pore_diameter_nm", false),
    ("toc_wt", true),
    ("fixed_carbon_wt", true),
    ("volatile_matter_wt", true),
    ("vitrinite_reflectance_pct", false),
    ("ash_wt", true),
    ("moisture_wt", true),
    ("characteristic_uptake_mmol_g", false),
];

impl SamplePropertySet {
    pub fn new(sample_key: impl Into<String>, lithology: Lithology) -> Self {
        SamplePropertySet {
            sample_key: sample_key.into(),
            lithology: Some(lithology),
            ..Default::default()
        }
    }

    /// Value of a scalar property column or a `mineral_<name>_wt` column.
    pub fn get(&self, column: &str) -> Option<f64> {
        match column {
            "surface_area_m2_g" => self.surface_area,
            "pore_volume_cm3_g" => self.pore_volume,
            "micropore_volume_cm3_g" => self.micropore_volume,
            "avg_pore_diameter_nm" => self.avg_pore_diameter,
            "toc_wt" => self.toc,
            "fixed_carbon_wt" => self.fixed_carbon,
            "volatile_matter_wt" => self.volatile_matter,
            "vitrinite_reflectance_pct" => self.vitrinite_reflectance,
            "ash_wt" => self.ash,
            "moisture_wt" => self.moisture,
            "characteristic_uptake_mmol_g" => self.characteristic_uptake,
            other => mineral_name(other).and_then(|m| self.mineral_fractions.get(m).copied()),
        }
    }

    fn slot(&mut self, column: &str) -> Option<&mut Option<f64>> {
        Some(match column {
            "surface_area_m2_g" => &mut self.surface_area,
            "pore_volume_cm3_g" => &mut self.pore_volume,
            "micropore_volume_cm3_g" => &mut self.micropore_volume,
            "avg_pore_diameter_nm" => &mut self.avg_pore_diameter,
            "toc_wt" => &mut self.toc,
            "fixed_carbon_wt" => &mut self.fixed_carbon,
            "volatile_matter_wt" => &mut self.volatile_matter,
            "vitrinite_reflectance_pct" => &mut self.vitrinite_reflectance,
            "ash_wt" => &mut self.ash,
            "moisture_wt" => &mut self.moisture,
            "characteristic_uptake_mmol_g" => &mut self.characteristic_uptake,
            _ => return None,
        })
    }

    /// Names of every column this set can report, minerals included.
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = PROPERTY_COLUMNS.iter().map(|(c, _)| c.to_string()).collect();
        cols.extend(self.mineral_fractions.keys().map(|m| format!("mineral_{m}_wt")));
        cols
    }

    fn check_invariants(&self) -> Result<(), String> {
        for col in self.columns() {
            if let Some(v) = self.get(&col) {
                if !v.is_finite() {
                    return Err(format!("non-finite {col}"));
                }
                if v < 0.0 {
                    return Err(format!("negative {col}"));
                }
                let pct = col.starts_with("mineral_")
                    || PROPERTY_COLUMNS.iter().any(|(c, wt)| *wt && *c == col);
                if pct && v > 100.0 {
                    return Err(format!("{col} exceeds 100 wt%"));
                }
            }
        }
        Ok(())
    }
}

fn mineral_name(column: &str) -> Option<&str> {
    column.strip_prefix("mineral_")?.strip_suffix("_wt")
}

/// A row that failed validation during ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number in the source file (header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ingested<T> {
    pub records: Vec<T>,
    pub rejects: Vec<Reject>,
}

impl<T> Default for Ingested<T> {
    fn default() -> Self {
        Ingested {
            records: Vec::new(),
            rejects: Vec::new(),
        }
    }
}

fn header_index(headers: &csv::StringRecord) -> HashMap<String, usize> {
    headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect()
}

fn parse_number(raw: &str, column: &str, line: u64) -> Result<f64, DataError> {
    raw.trim().parse::<f64>().map_err(|_| DataError::Parse {
        line,
        message: format!("column `{column}`: cannot parse `{raw}` as a number"),
    })
}

pub fn ingest_isotherms(path: impl AsRef<Path>) -> Result<Ingested<IsothermRecord>, DataError> {
    let file = std::fs::File::open(path)?;
    ingest_isotherms_from(file)
}

pub fn ingest_isotherms_from(reader: impl std::io::Read) -> Result<Ingested<IsothermRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(DataError::EmptyFile);
    }
    let idx = header_index(&headers);
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(ISOTHERM_COLUMNS) {
        *slot = *idx.get(name).ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
    }
    let mut out = Ingested::default();
    let mut n_rows = 0usize;
    for row in rdr.records() {
        let row = row?;
        n_rows += 1;
        let line = row.position().map_or(n_rows as u64 + 1, |p| p.line());
        let key = normalize_key(&row[cols[0]]);
        let lithology = match row[cols[1]].parse::<Lithology>() {
            Ok(l) => l,
            Err(reason) => {
                out.rejects.push(Reject { line, reason });
                continue;
            }
        };
        let pressure = parse_number(&row[cols[2]], ISOTHERM_COLUMNS[2], line)?;
        let temperature = parse_number(&row[cols[3]], ISOTHERM_COLUMNS[3], line)?;
        let uptake = parse_number(&row[cols[4]], ISOTHERM_COLUMNS[4], line)?;
        let reason = if key.is_empty() {
            Some("empty sample key".to_string())
        } else if !(pressure.is_finite() && temperature.is_finite() && uptake.is_finite()) {
            Some("non-finite value".to_string())
        } else if uptake < 0.0 {
            Some("negative uptake".to_string())
        } else if pressure < PRESSURE_RANGE.0 || pressure > PRESSURE_RANGE.1 {
            Some("pressure outside accepted range".to_string())
        } else if temperature < TEMPERATURE_RANGE.0 || temperature > TEMPERATURE_RANGE.1 {
            Some("temperature outside accepted range".to_string())
        } else {
            None
        };
        match reason {
            Some(reason) => out.rejects.push(Reject { line, reason }),
            None => out.records.push(IsothermRecord {
                sample_key: key,
                lithology,
                pressure,
                temperature,
                uptake,
            }),
        }
    }
    if n_rows == 0 {
        return Err(DataError::EmptyFile);
    }
    Ok(out)
}

pub fn ingest_properties(path: impl AsRef<Path>) -> Result<Ingested<SamplePropertySet>, DataError> {
    let file = std::fs::File::open(path)?;
    ingest_properties_from(file)
}

pub fn ingest_properties_from(
    reader: impl std::io::Read,
) -> Result<Ingested<SamplePropertySet>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(DataError::EmptyFile);
    }
    let idx = header_index(&headers);
    let key_col = *idx
        .get("sample_key")
        .ok_or_else(|| DataError::MissingColumn("sample_key".into()))?;
    let lith_col = *idx
        .get("lithology")
        .ok_or_else(|| DataError::MissingColumn("lithology".into()))?;
    let mut value_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if i == key_col || i == lith_col {
            continue;
        }
        let known = PROPERTY_COLUMNS.iter().any(|(c, _)| *c == h)
            || mineral_name(h).is_some_and(|m| !m.is_empty());
        if !known {
            return Err(DataError::UnknownColumn(h.to_string()));
        }
        value_cols.push((i, h.to_string()));
    }
    let mut out = Ingested::default();
    let mut n_rows = 0usize;
    for row in rdr.records() {
        let row = row?;
        n_rows += 1;
        let line = row.position().map_or(n_rows as u64 + 1, |p| p.line());
        let key = normalize_key(&row[key_col]);
        let lithology = match row[lith_col].parse::<Lithology>() {
            Ok(l) => l,
            Err(reason) => {
                out.rejects.push(Reject { line, reason });
                continue;
            }
        };
        let mut set = SamplePropertySet::new(key.clone(), lithology);
        for (i, col) in &value_cols {
            let cell = row[*i].trim();
            if cell.is_empty() {
                continue;
            }
            let v = parse_number(cell, col, line)?;
            match set.slot(col) {
                Some(slot) => *slot = Some(v),
                None => {
                    let m = mineral_name(col).expect("validated column");
                    set.mineral_fractions.insert(m.to_string(), v);
                }
            }
        }
        let check = if key.is_empty() {
            Err("empty sample key".to_string())
        } else {
            set.check_invariants()
        };
        match check {
            Ok(()) => out.records.push(set),
            Err(reason) => out.rejects.push(Reject { line, reason }),
        }
    }
    if n_rows == 0 {
        return Err(DataError::EmptyFile);
    }
    Ok(out)
}

/// One joined row: an isotherm point (absent for property-only samples)
/// plus the sample's properties (absent when unmatched).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedRecord {
    pub sample_key: String,
    pub lithology: Lithology,
    pub measurement: Option<Measurement>,
    pub properties: Option<SamplePropertySet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub pressure: f64,
    pub temperature: f64,
    pub uptake: f64,
}

impl IntegratedRecord {
    pub fn from_point(iso: &IsothermRecord, properties: Option<SamplePropertySet>) -> Self {
        IntegratedRecord {
            sample_key: iso.sample_key.clone(),
            lithology: iso.lithology,
            measurement: Some(Measurement {
                pressure: iso.pressure,
                temperature: iso.temperature,
                uptake: iso.uptake,
            }),
            properties,
        }
    }

    /// Target uptake: the measured point, else the characteristic uptake.
    pub fn uptake(&self) -> Option<f64> {
        self.measurement
            .map(|m| m.uptake)
            .or_else(|| self.properties.as_ref().and_then(|p| p.characteristic_uptake))
    }

    pub fn property(&self, column: &str) -> Option<f64> {
        self.properties.as_ref().and_then(|p| p.get(column))
    }
}

/// Joins isotherm points with their sample properties on the normalized key.
///
/// Every isotherm point yields one record; samples that only have properties
/// yield one record without a measurement.
pub fn match_samples(
    props: &[SamplePropertySet],
    isos: &[IsothermRecord],
) -> Result<Vec<IntegratedRecord>, DataError> {
    let mut by_key: BTreeMap<String, &SamplePropertySet> = BTreeMap::new();
    let mut prop_order = Vec::new();
    for p in props {
        let key = normalize_key(&p.sample_key);
        match by_key.get(&key) {
            Some(existing) => {
                let mut a = (*existing).clone();
                let mut b = p.clone();
                a.sample_key.clear();
                b.sample_key.clear();
                if a != b {
                    return Err(DataError::DuplicateSampleKey(key));
                }
            }
            None => {
                by_key.insert(key.clone(), p);
                prop_order.push(key);
            }
        }
    }
    let mut out = Vec::with_capacity(isos.len() + prop_order.len());
    let mut seen = BTreeSet::new();
    for iso in isos {
        let key = normalize_key(&iso.sample_key);
        let properties = by_key.get(&key).map(|p| {
            let mut p = (*p).clone();
            p.sample_key = key.clone();
            p
        });
        let mut rec = IntegratedRecord::from_point(iso, properties);
        rec.sample_key = key.clone();
        seen.insert(key);
        out.push(rec);
    }
    for key in prop_order {
        if seen.contains(&key) {
            continue;
        }
        let p = by_key[&key];
        let mut props = p.clone();
        props.sample_key = key.clone();
        out.push(IntegratedRecord {
            sample_key: key,
            lithology: p.lithology.unwrap_or(Lithology::Clay),
            measurement: None,
            properties: Some(props),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinCoverage {
    pub isotherm_records: usize,
    pub matched_records: usize,
    pub property_only_records: usize,
}

pub fn join_coverage(records: &[IntegratedRecord]) -> JoinCoverage {
    let mut c = JoinCoverage {
        isotherm_records: 0,
        matched_records: 0,
        property_only_records: 0,
    };
    for r in records {
        match (&r.measurement, &r.properties) {
            (Some(_), Some(_)) => {
                c.isotherm_records += 1;
                c.matched_records += 1;
            }
            (Some(_), None) => c.isotherm_records += 1,
            (None, _) => c.property_only_records += 1,
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub sample_key: String,
    pub temperature: f64,
    /// Position within the pressure-sorted isotherm.
    pub pressure_index: usize,
    /// Index into the assessed record list.
    pub record_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub completeness: BTreeMap<String, f64>,
    pub monotonicity_violations: Vec<MonotonicityViolation>,
    pub iqr_outlier_flags: Vec<bool>,
    /// Records flagged by either check.
    pub excluded_count: usize,
}

fn numeric_columns(records: &[IntegratedRecord]) -> Vec<String> {
    let mut cols = vec![
        "pressure_bar".to_string(),
        "temperature_K".to_string(),
        "uptake_mmol_g".to_string(),
    ];
    cols.extend(PROPERTY_COLUMNS.iter().map(|(c, _)| c.to_string()));
    let minerals: BTreeSet<String> = records
        .iter()
        .filter_map(|r| r.properties.as_ref())
        .flat_map(|p| p.mineral_fractions.keys().cloned())
        .collect();
    cols.extend(minerals.into_iter().map(|m| format!("mineral_{m}_wt")));
    cols
}

fn column_value(r: &IntegratedRecord, col: &str) -> Option<f64> {
    match col {
        "pressure_bar" => r.measurement.map(|m| m.pressure),
        "temperature_K" => r.measurement.map(|m| m.temperature),
        "uptake_mmol_g" => r.measurement.map(|m| m.uptake),
        other => r.property(other),
    }
}

/// Temperatures are grouped at millikelvin resolution.
fn temperature_key(t: f64) -> i64 {
    (t * 1000.0).round() as i64
}

pub fn assess_quality(records: &[IntegratedRecord]) -> QualityReport {
    let n = records.len();
    let cols = numeric_columns(records);
    let mut completeness = BTreeMap::new();
    for c in &cols {
        let present = records.iter().filter(|r| column_value(r, c).is_some()).count();
        let frac = if n == 0 { 0.0 } else { present as f64 / n as f64 };
        completeness.insert(c.clone(), frac);
    }

    let mut groups: BTreeMap<(String, i64), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(m) = r.measurement {
            groups
                .entry((r.sample_key.clone(), temperature_key(m.temperature)))
                .or_default()
                .push(i);
        }
    }
    let mut violations = Vec::new();
    for ((key, _), mut idx) in groups {
        idx.sort_by(|&a, &b| {
            let (pa, pb) = (records[a].measurement.unwrap(), records[b].measurement.unwrap());
            pa.pressure.total_cmp(&pb.pressure).then(a.cmp(&b))
        });
        for w in 1..idx.len() {
            let prev = records[idx[w - 1]].measurement.unwrap();
            let cur = records[idx[w]].measurement.unwrap();
            if cur.uptake < prev.uptake - MONOTONICITY_TOLERANCE {
                violations.push(MonotonicityViolation {
                    sample_key: key.clone(),
                    temperature: cur.temperature,
                    pressure_index: w,
                    record_index: idx[w],
                });
            }
        }
    }

    let mut flags = vec![false; n];
    for lith in Lithology::ALL {
        let members: Vec<usize> = (0..n).filter(|&i| records[i].lithology == lith).collect();
        for c in &cols {
            let vals: Vec<(usize, f64)> = members
                .iter()
                .filter_map(|&i| column_value(&records[i], c).map(|v| (i, v)))
                .collect();
            if vals.len() < 4 {
                continue;
            }
            let v: Vec<f64> = vals.iter().map(|x| x.1).collect();
            let (q1, q3) = stats::quartiles(&v);
            let iqr = q3 - q1;
            let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
            for (i, x) in vals {
                if x < lo || x > hi {
                    flags[i] = true;
                }
            }
        }
    }
    let mut excluded: BTreeSet<usize> = violations.iter().map(|v| v.record_index).collect();
    excluded.extend(flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i));
    QualityReport {
        completeness,
        monotonicity_violations: violations,
        iqr_outlier_flags: flags,
        excluded_count: excluded.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub partition: BTreeMap<String, Partition>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn of(&self, sample_key: &str) -> Option<Partition> {
        self.partition.get(sample_key).copied()
    }

    pub fn count(&self, part: Partition) -> usize {
        self.partition.values().filter(|&&p| p == part).count()
    }
}

/// Unique (sample_key, lithology) pairs in first-seen order.
pub fn samples_of(records: &[IntegratedRecord]) -> Vec<(String, Lithology)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in records {
        if seen.insert(r.sample_key.clone()) {
            out.push((r.sample_key.clone(), r.lithology));
        }
    }
    out
}

/// Sample-level split stratified by lithology.
///
/// Within each lithology the keys are sorted, shuffled with the seed, and cut
/// at floor(n·train) and floor(n·validation); the remainder goes to test.
pub fn stratified_split(
    samples: &[(String, Lithology)],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment, DataError> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(DataError::InvalidRatios("ratios must be finite and non-negative".into()));
    }
    if (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidRatios(format!("ratios sum to {}", rt + rv + rs)));
    }
    let mut by_lith: BTreeMap<Lithology, BTreeSet<String>> = BTreeMap::new();
    for (k, l) in samples {
        by_lith.entry(*l).or_default().insert(k.clone());
    }
    let mut partition = BTreeMap::new();
    for (lith, keys) in by_lith {
        if keys.len() < 3 {
            return Err(DataError::InsufficientSamples {
                lithology: lith,
                found: keys.len(),
            });
        }
        let mut keys: Vec<String> = keys.into_iter().collect();
        let mut rng = seed::rng(seed::derive(seed, &["split", lith.as_str()]));
        keys.shuffle(&mut rng);
        let n = keys.len() as f64;
        let n_train = (n * rt + 1e-9).floor() as usize;
        let n_val = (n * rv + 1e-9).floor() as usize;
        for (i, k) in keys.into_iter().enumerate() {
            let p = if i < n_train {
                Partition::Train
            } else if i < n_train + n_val {
                Partition::Validation
            } else {
                Partition::Test
            };
            partition.insert(k, p);
        }
    }
    Ok(SplitAssignment { partition, seed })
}

pub fn write_isotherms(path: impl AsRef<Path>, records: &[IsothermRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ISOTHERM_COLUMNS)?;
    for r in records {
        w.write_record([
            r.sample_key.clone(),
            r.lithology.to_string(),
            fmt_num(r.pressure),
            fmt_num(r.temperature),
            fmt_num(r.uptake),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_properties(path: impl AsRef<Path>, sets: &[SamplePropertySet]) -> Result<(), DataError> {
    let minerals: BTreeSet<String> = sets
        .iter()
        .flat_map(|s| s.mineral_fractions.keys().cloned())
        .collect();
    let mut header: Vec<String> = vec!["sample_key".into(), "lithology".into()];
    header.extend(PROPERTY_COLUMNS.iter().map(|(c, _)| c.to_string()));
    header.extend(minerals.iter().map(|m| format!("mineral_{m}_wt")));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for s in sets {
        let mut row = vec![
            s.sample_key.clone(),
            s.lithology.map(|l| l.to_string()).unwrap_or_default(),
        ];
        for col in &header[2..] {
            row.push(s.get(col).map(fmt_num).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rejects(path: impl AsRef<Path>, rejects: &[Reject]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["line", "reason"])?;
    for r in rejects {
        w.write_record([r.line.to_string(), r.reason.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that round-trips exactly.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(key: &str, p: f64, q: f64) -> IsothermRecord {
        IsothermRecord {
            sample_key: key.into(),
            lithology: Lithology::Clay,
            pressure: p,
            temperature: 298.15,
            uptake: q,
        }
    }

    #[test]
    fn parses_documented_row() {
        let csv = "sample_key,lithology,pressure_bar,temperature_K,uptake_mmol_g\nS1,clay,10.0,298.15,0.05\n";
        let out = ingest_isotherms_from(csv.as_bytes()).unwrap();
        assert_eq!(out.records, vec![IsothermRecord {
            sample_key: "s1".into(),
            lithology: Lithology::Clay,
            pressure: 10.0,
            temperature: 298.15,
            uptake: 0.05,
        }]);
        assert!(out.rejects.is_empty());
    }

    #[test]
    fn negative_uptake_is_rejected_with_reason() {
        let csv = "sample_key,lithology,pressure_bar,temperature_K,uptake_mmol_g\nS1,clay,10.0,298.15,-0.1\nS1,clay,20,298.15,0.1\n";
        let out = ingest_isotherms_from(csv.as_bytes()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejects, vec![Reject { line: 2, reason: "negative uptake".into() }]);
    }

    #[test]
    fn schema_errors() {
        let missing = "sample_key,lithology,pressure_bar,uptake_mmol_g\nS1,clay,1,0.1\n";
        assert!(matches!(
            ingest_isotherms_from(missing.as_bytes()),
            Err(DataError::MissingColumn(c)) if c == "temperature_K"
        ));
        let empty = "sample_key,lithology,pressure_bar,temperature_K,uptake_mmol_g\n";
        assert!(matches!(ingest_isotherms_from(empty.as_bytes()), Err(DataError::EmptyFile)));
        let bad = "sample_key,lithology,pressure_bar,temperature_K,uptake_mmol_g\nS1,clay,1,298,0.1\nS1,clay,abc,298,0.1\n";
        assert!(matches!(
            ingest_isotherms_from(bad.as_bytes()),
            Err(DataError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn properties_parse_with_missing_cells_and_minerals() {
        let csv = "sample_key,lithology,surface_area_m2_g,toc_wt,mineral_pyrite_wt\nA,shale,12.5,,3\n";
        let out = ingest_properties_from(csv.as_bytes()).unwrap();
        let p = &out.records[0];
        assert_eq!(p.surface_area, Some(12.5));
        assert_eq!(p.toc, None);
        assert_eq!(p.mineral_fractions["pyrite"], 3.0);
        let unknown = "sample_key,lithology,colour\nA,shale,red\n";
        assert!(matches!(
            ingest_properties_from(unknown.as_bytes()),
            Err(DataError::UnknownColumn(_))
        ));
        let over = "sample_key,lithology,toc_wt\nA,shale,120\n";
        assert_eq!(ingest_properties_from(over.as_bytes()).unwrap().rejects.len(), 1);
    }

    #[test]
    fn key_normalization() {
        assert_eq!(normalize_key("Ref1 / Sample A"), "ref1_sample_a");
        assert_eq!(normalize_key("ref1/sample_a"), "ref1_sample_a");
        assert_eq!(normalize_key("  --X--  "), "x");
    }

    #[test]
    fn join_cardinality_and_property_only_samples() {
        let props = vec![
            SamplePropertySet::new("a", Lithology::Clay),
            SamplePropertySet::new("b", Lithology::Clay),
            SamplePropertySet {
                characteristic_uptake: Some(0.3),
                ..SamplePropertySet::new("c", Lithology::Clay)
            },
        ];
        let mut isos = Vec::new();
        for k in ["a", "b"] {
            for i in 0..5 {
                isos.push(iso(k, i as f64 + 1.0, 0.1 * i as f64));
            }
        }
        let out = match_samples(&props, &isos).unwrap();
        assert_eq!(out.iter().filter(|r| r.measurement.is_some()).count(), 10);
        let only: Vec<_> = out.iter().filter(|r| r.measurement.is_none()).collect();
        assert_eq!(only.len(), 1);
        assert_eq!(only[0].uptake(), Some(0.3));
        let cov = join_coverage(&out);
        assert_eq!((cov.isotherm_records, cov.matched_records, cov.property_only_records), (10, 10, 1));
    }

    #[test]
    fn normalized_keys_match() {
        let props = vec![SamplePropertySet::new("Ref1 / Sample A", Lithology::Clay)];
        let isos = vec![iso("ref1/sample_a", 1.0, 0.1)];
        let out = match_samples(&props, &isos).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].properties.is_some());
    }

    #[test]
    fn conflicting_duplicates_error() {
        let mut a = SamplePropertySet::new("a", Lithology::Clay);
        let same = a.clone();
        assert!(match_samples(&[a.clone(), same], &[]).is_ok());
        a.surface_area = Some(3.0);
        let b = SamplePropertySet::new("A", Lithology::Clay);
        assert!(matches!(match_samples(&[a, b], &[]), Err(DataError::DuplicateSampleKey(_))));
    }

    #[test]
    fn monotonicity_violation_index() {
        let recs: Vec<IntegratedRecord> = [(1.0, 0.1), (2.0, 0.3), (3.0, 0.2)]
            .iter()
            .map(|&(p, q)| IntegratedRecord::from_point(&iso("s", p, q), None))
            .collect();
        let rep = assess_quality(&recs);
        assert_eq!(rep.monotonicity_violations.len(), 1);
        assert_eq!(rep.monotonicity_violations[0].pressure_index, 2);
        assert_eq!(rep.monotonicity_violations[0].record_index, 2);
    }

    #[test]
    fn iqr_flags_only_the_extreme_value() {
        let mut recs = Vec::new();
        for i in 1..=100 {
            let mut p = SamplePropertySet::new(format!("s{i}"), Lithology::Clay);
            p.surface_area = Some(i as f64);
            recs.push(IntegratedRecord {
                sample_key: format!("s{i}"),
                lithology: Lithology::Clay,
                measurement: None,
                properties: Some(p),
            });
        }
        let mut p = SamplePropertySet::new("x", Lithology::Clay);
        p.surface_area = Some(10_000.0);
        recs.push(IntegratedRecord {
            sample_key: "x".into(),
            lithology: Lithology::Clay,
            measurement: None,
            properties: Some(p),
        });
        let rep = assess_quality(&recs);
        let flagged: Vec<usize> = (0..recs.len()).filter(|&i| rep.iqr_outlier_flags[i]).collect();
        assert_eq!(flagged, vec![100]);
        assert_eq!(rep, assess_quality(&recs));
    }

    fn keys(n: usize, lith: Lithology) -> Vec<(String, Lithology)> {
        (0..n).map(|i| (format!("{lith}{i}"), lith)).collect()
    }

    #[test]
    fn split_counts() {
        let mut s = keys(100, Lithology::Clay);
        s.extend(keys(100, Lithology::Shale));
        s.extend(keys(100, Lithology::Coal));
        let a = stratified_split(&s, (0.7, 0.15, 0.15), 42).unwrap();
        for lith in Lithology::ALL {
            let c = |part| {
                s.iter()
                    .filter(|(k, l)| *l == lith && a.of(k) == Some(part))
                    .count()
            };
            assert_eq!((c(Partition::Train), c(Partition::Validation), c(Partition::Test)), (70, 15, 15));
        }
        assert_eq!(a, stratified_split(&s, (0.7, 0.15, 0.15), 42).unwrap());

        let big = keys(1901, Lithology::Coal);
        let b = stratified_split(&big, (0.7, 0.15, 0.15), 1).unwrap();
        assert_eq!(
            (b.count(Partition::Train), b.count(Partition::Validation), b.count(Partition::Test)),
            (1330, 285, 286)
        );
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            stratified_split(&keys(2, Lithology::Clay), (0.7, 0.15, 0.15), 1),
            Err(DataError::InsufficientSamples { .. })
        ));
        assert!(matches!(
            stratified_split(&keys(10, Lithology::Clay), (0.7, 0.2, 0.2), 1),
            Err(DataError::InvalidRatios(_))
        ));
    }
}
