//! Engineered features, imputation, outlier handling, robust scaling and
//! consensus feature selection.
//!
//! Every parameter of the pipeline (Freundlich exponents, imputation fills,
//! winsorisation limits, scaler, selection) is estimated from training rows
//! only and then applied unchanged to any other row.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::data::{IntegratedRecord, Lithology, SamplePropertySet};
use crate::fit;
use crate::isotherm::{FunctionalForm, Point};
use crate::seed;
use crate::stats;
use crate::GAS_CONSTANT;

/// Critical temperature of hydrogen, K.
pub const T_CRIT: f64 = 33.19;
/// Critical pressure of hydrogen, bar.
pub const P_CRIT: f64 = 13.13;
/// Kinetic diameter of hydrogen, nm.
pub const D_H2: f64 = 0.289;
/// Freundlich 1/n used when no lithology fit is available.
pub const DEFAULT_FREUNDLICH_INV_N: f64 = 1.0 / 1.2;

/// Floor on pressure inside logarithms and reciprocals, bar.
const P_FLOOR: f64 = 1e-3;
/// Floor on the effective Henry constant inside the Gibbs estimate.
const K_EFF_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("record `{0}` lacks pressure or temperature")]
    MissingThermoInputs(String),
    #[error("feature selection needs at least 50 rows, got {0}")]
    TooFewRows(usize),
    #[error("no training rows")]
    Empty,
    #[error("feature width mismatch: expected {expected}, got {got}")]
    Width { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureCategory {
    Thermodynamic,
    PoreStructure,
    SurfaceChemistry,
    Interaction,
    Kinetic,
    Sieving,
    ClassicalInspired,
    /// Measured property carried through unchanged.
    Property,
    /// One-hot lithology indicator.
    Lithology,
}

impl FeatureCategory {
    pub const ENGINEERED: [FeatureCategory; 7] = [
        FeatureCategory::Thermodynamic,
        FeatureCategory::PoreStructure,
        FeatureCategory::SurfaceChemistry,
        FeatureCategory::Interaction,
        FeatureCategory::Kinetic,
        FeatureCategory::Sieving,
        FeatureCategory::ClassicalInspired,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub name: String,
    pub category: FeatureCategory,
    pub inputs: Vec<String>,
    /// Computed from the measured uptake; never used as a model input.
    pub target_derived: bool,
}

use FeatureCategory as C;

const P: &str = "pressure";
const T: &str = "temperature";
const Q: &str = "uptake";
const SA: &str = "surface_area_m2_g";
const PV: &str = "pore_volume_cm3_g";
const MV: &str = "micropore_volume_cm3_g";
const DP: &str = "avg_pore_diameter_nm";
const TOC: &str = "toc_wt";
const FC: &str = "fixed_carbon_wt";
const VM: &str = "volatile_matter_wt";
const RO: &str = "vitrinite_reflectance_pct";
const PYRITE: &str = "mineral_pyrite_wt";

/// Engineered formulas: (name, category, inputs).
const FORMULAS: &[(&str, FeatureCategory, &[&str])] = &[
    ("temperature_k", C::Thermodynamic, &[T]),
    ("pressure_bar", C::Thermodynamic, &[P]),
    ("ln_p", C::Thermodynamic, &[P]),
    ("reduced_temperature", C::Thermodynamic, &[T]),
    ("reduced_pressure", C::Thermodynamic, &[P]),
    ("inverse_temperature", C::Thermodynamic, &[T]),
    ("dg_approx", C::Thermodynamic, &[P, T, Q]),
    ("micropore_fraction", C::PoreStructure, &[MV, PV]),
    ("surface_area_density", C::PoreStructure, &[SA, PV]),
    ("confinement", C::PoreStructure, &[DP]),
    ("log_surface_area", C::PoreStructure, &[SA]),
    ("log_pore_volume", C::PoreStructure, &[PV]),
    ("toc", C::SurfaceChemistry, &[TOC]),
    ("pyrite_toc_ratio", C::SurfaceChemistry, &[PYRITE, TOC]),
    ("maturity_index", C::SurfaceChemistry, &[FC, VM]),
    ("fuel_ratio", C::SurfaceChemistry, &[FC, VM]),
    ("log_vitrinite_reflectance", C::SurfaceChemistry, &[RO]),
    ("surface_area_x_temperature", C::Interaction, &[SA, T]),
    ("pressure_x_pore_volume", C::Interaction, &[P, PV]),
    ("micropore_fraction_x_temperature", C::Interaction, &[MV, PV, T]),
    ("adsorption_driving_force", C::Interaction, &[P, SA, T]),
    ("henry_proxy", C::Interaction, &[SA, P, T]),
    ("knudsen_diffusivity", C::Kinetic, &[DP, T]),
    ("mean_free_path", C::Kinetic, &[T, P]),
    ("diffusion_time", C::Kinetic, &[DP, T]),
    ("sieving_zeta", C::Sieving, &[DP]),
    ("sieving_alpha", C::Sieving, &[DP]),
    ("ultramicropore", C::Sieving, &[DP]),
    ("supermicropore", C::Sieving, &[DP]),
    ("q_langmuir", C::ClassicalInspired, &[P]),
    ("q_freundlich", C::ClassicalInspired, &[P]),
    ("q_temkin", C::ClassicalInspired, &[P]),
];

/// Property columns carried through unchanged. TOC already appears as an
/// engineered feature and the characteristic uptake is a target.
const RAW_PROPERTIES: &[&str] = &[SA, PV, MV, DP, FC, VM, RO, "ash_wt", "moisture_wt"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub entries: Vec<FeatureEntry>,
}

impl FeatureCatalog {
    /// The named formulas plus raw properties, the given mineral columns and
    /// lithology indicators.
    pub fn new(minerals: &[String]) -> Self {
        let mut entries: Vec<FeatureEntry> = FORMULAS
            .iter()
            .map(|(n, c, i)| FeatureEntry {
                name: n.to_string(),
                category: *c,
                inputs: i.iter().map(|s| s.to_string()).collect(),
                target_derived: *n == "dg_approx",
            })
            .collect();
        for col in RAW_PROPERTIES {
            entries.push(FeatureEntry {
                name: col.to_string(),
                category: C::Property,
                inputs: vec![col.to_string()],
                target_derived: false,
            });
        }
        for m in minerals {
            let col = format!("mineral_{m}_wt");
            entries.push(FeatureEntry {
                name: col.clone(),
                category: C::Property,
                inputs: vec![col],
                target_derived: false,
            });
        }
        for l in Lithology::ALL {
            entries.push(FeatureEntry {
                name: format!("is_{l}"),
                category: C::Lithology,
                inputs: vec!["lithology".into()],
                target_derived: false,
            });
        }
        FeatureCatalog { entries }
    }

    /// Catalog covering every mineral present in `records`.
    pub fn for_records(records: &[IntegratedRecord]) -> Self {
        let mut minerals: Vec<String> = records
            .iter()
            .filter_map(|r| r.properties.as_ref())
            .flat_map(|p| p.mineral_fractions.keys().cloned())
            .collect();
        minerals.sort();
        minerals.dedup();
        Self::new(&minerals)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-lithology Freundlich 1/n used by the `q_freundlich` feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreundlichExponents {
    pub clay: f64,
    pub shale: f64,
    pub coal: f64,
}

impl Default for FreundlichExponents {
    fn default() -> Self {
        FreundlichExponents {
            clay: DEFAULT_FREUNDLICH_INV_N,
            shale: DEFAULT_FREUNDLICH_INV_N,
            coal: DEFAULT_FREUNDLICH_INV_N,
        }
    }
}

impl FreundlichExponents {
    pub fn get(&self, l: Lithology) -> f64 {
        match l {
            Lithology::Clay => self.clay,
            Lithology::Shale => self.shale,
            Lithology::Coal => self.coal,
        }
    }

    /// Fits Freundlich to the pooled isotherm points of each lithology.
    pub fn fit(records: &[IntegratedRecord], seed: u64) -> Self {
        let mut out = Self::default();
        for l in Lithology::ALL {
            let pts: Vec<Point> = records
                .iter()
                .filter(|r| r.lithology == l)
                .filter_map(|r| r.measurement.map(|m| Point::new(m.pressure, m.temperature, m.uptake)))
                .collect();
            if let Ok(m) = fit::fit_sample(&pts, FunctionalForm::Freundlich, seed::derive(seed, &["freundlich", l.as_str()])) {
                let inv = 1.0 / m.params.values[1];
                match l {
                    Lithology::Clay => out.clay = inv,
                    Lithology::Shale => out.shale = inv,
                    Lithology::Coal => out.coal = inv,
                }
            }
        }
        out
    }
}

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b != 0.0 => Some(a / b),
        _ => None,
    }
}

fn positive_ln(a: Option<f64>) -> Option<f64> {
    a.filter(|v| *v > 0.0).map(f64::ln)
}

fn formula(
    name: &str,
    p: f64,
    t: f64,
    q: Option<f64>,
    lith: Lithology,
    props: Option<&SamplePropertySet>,
    inv_n: f64,
) -> Option<f64> {
    let g = |c: &str| props.and_then(|s| s.get(c));
    let d = g(DP);
    let v = match name {
        "temperature_k" => t,
        "pressure_bar" => p,
        "ln_p" => p.max(P_FLOOR).ln(),
        "reduced_temperature" => t / T_CRIT,
        "reduced_pressure" => p / P_CRIT,
        "inverse_temperature" => 1.0 / t,
        "dg_approx" => {
            let k_eff = (q? / p.max(P_FLOOR)).max(K_EFF_FLOOR);
            -GAS_CONSTANT * t * k_eff.ln() / 1000.0
        }
        "micropore_fraction" => ratio(g(MV), g(PV))?,
        "surface_area_density" => ratio(g(SA), g(PV))?,
        "confinement" => d? / D_H2,
        "log_surface_area" => positive_ln(g(SA))?,
        "log_pore_volume" => positive_ln(g(PV))?,
        "toc" => g(TOC)?,
        "pyrite_toc_ratio" => ratio(g(PYRITE), g(TOC))?,
        "maturity_index" => {
            let (fc, vm) = (g(FC)?, g(VM)?);
            ratio(Some(fc), Some(fc + vm))?
        }
        "fuel_ratio" => ratio(g(FC), g(VM))?,
        "log_vitrinite_reflectance" => positive_ln(g(RO))?,
        "surface_area_x_temperature" => g(SA)? * t,
        "pressure_x_pore_volume" => p * g(PV)?,
        "micropore_fraction_x_temperature" => ratio(g(MV), g(PV))? * t,
        "adsorption_driving_force" => p * g(SA)? / t,
        "henry_proxy" => g(SA)? * p / t,
        "knudsen_diffusivity" => d? * t.sqrt(),
        "mean_free_path" => t / p.max(P_FLOOR),
        // d² / (d·√T)
        "diffusion_time" => d? / t.sqrt(),
        "sieving_zeta" => (d? / D_H2).min(1.0),
        "sieving_alpha" => {
            let d = d.filter(|v| *v > 0.0)?;
            ((d - D_H2) / d).max(0.0)
        }
        "ultramicropore" => f64::from(u8::from(d? < 0.7)),
        "supermicropore" => f64::from(u8::from((0.7..2.0).contains(&d?))),
        "q_langmuir" => p / (1.0 + p),
        "q_freundlich" => p.powf(inv_n),
        "q_temkin" => p.ln_1p(),
        "is_clay" => f64::from(u8::from(lith == Lithology::Clay)),
        "is_shale" => f64::from(u8::from(lith == Lithology::Shale)),
        "is_coal" => f64::from(u8::from(lith == Lithology::Coal)),
        col => g(col)?,
    };
    v.is_finite().then_some(v)
}

/// Evaluates every catalog entry for one record at its measured pressure.
pub fn engineer_features(
    record: &IntegratedRecord,
    catalog: &FeatureCatalog,
    exponents: &FreundlichExponents,
) -> Result<Vec<Option<f64>>, FeatureError> {
    let m = record
        .measurement
        .ok_or_else(|| FeatureError::MissingThermoInputs(record.sample_key.clone()))?;
    Ok(engineer_at(record, m.pressure, m.temperature, Some(m.uptake), catalog, exponents))
}

fn engineer_at(
    record: &IntegratedRecord,
    p: f64,
    t: f64,
    q: Option<f64>,
    catalog: &FeatureCatalog,
    exponents: &FreundlichExponents,
) -> Vec<Option<f64>> {
    let inv_n = exponents.get(record.lithology);
    catalog
        .entries
        .iter()
        .map(|e| formula(&e.name, p, t, q, record.lithology, record.properties.as_ref(), inv_n))
        .collect()
}

/// Feature rows with imputed cells marked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// True where the cell was imputed.
    pub mask: Vec<Vec<bool>>,
    pub lithology: Vec<Lithology>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImputeTier {
    Complete,
    Knn,
    LithologyMedian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnImputer {
    pub name: String,
    pub tier: ImputeTier,
    pub missing_fraction: f64,
    /// Per-lithology medians of observed values, indexed by `Lithology::index`.
    pub medians: [Option<f64>; 3],
    pub global_median: f64,
    /// Reference rows for the nearest-neighbour tier: (scaled key, value).
    pub reference: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeModel {
    pub columns: Vec<ColumnImputer>,
    /// Indices of fully observed thermodynamic columns used as the kNN key.
    pub key_columns: Vec<usize>,
    pub key_center: Vec<f64>,
    pub key_scale: Vec<f64>,
    /// Columns with no observed value, dropped from the matrix.
    pub dropped: Vec<String>,
    /// Columns where some lithology had no observed value and the global
    /// median was used for it.
    pub global_fallbacks: Vec<String>,
}

pub const KNN_K: usize = 5;

impl ImputeModel {
    /// Chooses a tier per column from its missing fraction: none, below 10%
    /// nearest-neighbour mean over the complete thermodynamic columns,
    /// otherwise the lithology median.
    pub fn fit(names: &[String], categories: &[FeatureCategory], raw: &[Vec<Option<f64>>], liths: &[Lithology]) -> Self {
        let n = raw.len();
        let d = names.len();
        let missing: Vec<usize> = (0..d).map(|j| raw.iter().filter(|r| r[j].is_none()).count()).collect();
        let key_columns: Vec<usize> = (0..d)
            .filter(|&j| categories[j] == FeatureCategory::Thermodynamic && missing[j] == 0 && n > 0)
            .collect();
        let mut key_center = vec![];
        let mut key_scale = vec![];
        for &j in &key_columns {
            let col: Vec<f64> = raw.iter().map(|r| r[j].unwrap_or(0.0)).collect();
            let (q1, q3) = stats::quartiles(&col);
            key_center.push(stats::median(&col));
            key_scale.push(if q3 > q1 { q3 - q1 } else { 1.0 });
        }
        let key_of = |r: &Vec<Option<f64>>| -> Vec<f64> {
            key_columns
                .iter()
                .zip(key_center.iter().zip(&key_scale))
                .map(|(&j, (c, s))| (r[j].unwrap_or(0.0) - c) / s)
                .collect()
        };
        let mut columns = Vec::with_capacity(d);
        let mut dropped = vec![];
        let mut global_fallbacks = vec![];
        for j in 0..d {
            let frac = if n == 0 { 1.0 } else { missing[j] as f64 / n as f64 };
            let observed: Vec<f64> = raw.iter().filter_map(|r| r[j]).collect();
            if observed.is_empty() {
                dropped.push(names[j].clone());
            }
            let mut medians = [None; 3];
            for l in Lithology::ALL {
                let v: Vec<f64> = raw
                    .iter()
                    .zip(liths)
                    .filter(|(_, &ll)| ll == l)
                    .filter_map(|(r, _)| r[j])
                    .collect();
                medians[l.index()] = (!v.is_empty()).then(|| stats::median(&v));
            }
            let global_median = if observed.is_empty() { 0.0 } else { stats::median(&observed) };
            let tier = if missing[j] == 0 {
                ImputeTier::Complete
            } else if frac < 0.10 && !key_columns.is_empty() {
                ImputeTier::Knn
            } else {
                ImputeTier::LithologyMedian
            };
            if tier == ImputeTier::LithologyMedian
                && !observed.is_empty()
                && Lithology::ALL.iter().any(|l| {
                    medians[l.index()].is_none() && liths.iter().zip(raw).any(|(ll, r)| ll == l && r[j].is_none())
                })
            {
                global_fallbacks.push(names[j].clone());
            }
            let reference = if tier == ImputeTier::Knn {
                raw.iter().filter_map(|r| r[j].map(|v| (key_of(r), v))).collect()
            } else {
                vec![]
            };
            columns.push(ColumnImputer {
                name: names[j].clone(),
                tier,
                missing_fraction: frac,
                medians,
                global_median,
                reference,
            });
        }
        ImputeModel {
            columns,
            key_columns,
            key_center,
            key_scale,
            dropped,
            global_fallbacks,
        }
    }

    /// Indices of columns kept after dropping all-missing ones.
    pub fn kept(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&j| !self.dropped.contains(&self.columns[j].name))
            .collect()
    }

    fn key(&self, raw: &[Option<f64>]) -> Vec<f64> {
        self.key_columns
            .iter()
            .zip(self.key_center.iter().zip(&self.key_scale))
            .map(|(&j, (c, s))| (raw[j].unwrap_or(0.0) - c) / s)
            .collect()
    }

    fn fill(&self, j: usize, raw: &[Option<f64>], lith: Lithology) -> f64 {
        let col = &self.columns[j];
        match col.tier {
            ImputeTier::Knn if !col.reference.is_empty() => {
                let key = self.key(raw);
                let mut dist: Vec<(f64, usize)> = col
                    .reference
                    .iter()
                    .enumerate()
                    .map(|(i, (k, _))| (k.iter().zip(&key).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
                    .collect();
                dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let k = KNN_K.min(dist.len());
                dist[..k].iter().map(|&(_, i)| col.reference[i].1).sum::<f64>() / k as f64
            }
            _ => col.medians[lith.index()].unwrap_or(col.global_median),
        }
    }

    /// Fills missing cells of one row over the kept columns.
    pub fn apply_row(&self, raw: &[Option<f64>], lith: Lithology) -> (Vec<f64>, Vec<bool>) {
        let kept = self.kept();
        let mut row = Vec::with_capacity(kept.len());
        let mut mask = Vec::with_capacity(kept.len());
        for j in kept {
            match raw[j] {
                Some(v) => {
                    row.push(v);
                    mask.push(false);
                }
                None => {
                    row.push(self.fill(j, raw, lith));
                    mask.push(true);
                }
            }
        }
        (row, mask)
    }
}

/// Fits an imputer on `raw` and applies it.
pub fn impute(
    names: &[String],
    categories: &[FeatureCategory],
    raw: &[Vec<Option<f64>>],
    liths: &[Lithology],
) -> (FeatureMatrix, ImputeModel) {
    let model = ImputeModel::fit(names, categories, raw, liths);
    let kept = model.kept();
    let mut rows = Vec::with_capacity(raw.len());
    let mut mask = Vec::with_capacity(raw.len());
    for (r, &l) in raw.iter().zip(liths) {
        let (row, m) = model.apply_row(r, l);
        rows.push(row);
        mask.push(m);
    }
    let matrix = FeatureMatrix {
        names: kept.iter().map(|&j| names[j].clone()).collect(),
        rows,
        mask,
        lithology: liths.to_vec(),
    };
    (matrix, model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutlierAction {
    Keep,
    Winsorize,
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub actions: Vec<OutlierAction>,
    pub univariate: Vec<bool>,
    pub multivariate: Vec<bool>,
    pub scores: Vec<f64>,
}

pub const CONTAMINATION: f64 = 0.05;
const FENCE: f64 = 3.0;

/// Expected path length of an unsuccessful binary-search-tree lookup.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let nf = n as f64;
            let harmonic = (nf - 1.0).ln() + 0.577_215_664_901_532_9;
            2.0 * harmonic - 2.0 * (nf - 1.0) / nf
        }
    }
}

enum INode {
    Leaf(usize),
    Split { feature: usize, threshold: f64, left: Box<INode>, right: Box<INode> },
}

fn build_itree(rows: &[Vec<f64>], idx: &[usize], depth: usize, limit: usize, rng: &mut seed::Rng) -> INode {
    if depth >= limit || idx.len() <= 1 {
        return INode::Leaf(idx.len());
    }
    let d = rows[0].len();
    let splittable: Vec<usize> = (0..d)
        .filter(|&f| {
            let first = rows[idx[0]][f];
            idx.iter().any(|&i| rows[i][f] != first)
        })
        .collect();
    if splittable.is_empty() {
        return INode::Leaf(idx.len());
    }
    let feature = splittable[rng.random_range(0..splittable.len())];
    let (lo, hi) = idx
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| (a.min(rows[i][feature]), b.max(rows[i][feature])));
    let threshold = lo + rng.random::<f64>() * (hi - lo);
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][feature] < threshold);
    INode::Split {
        feature,
        threshold,
        left: Box::new(build_itree(rows, &l, depth + 1, limit, rng)),
        right: Box::new(build_itree(rows, &r, depth + 1, limit, rng)),
    }
}

fn path_length(node: &INode, row: &[f64], depth: usize) -> f64 {
    match node {
        INode::Leaf(size) => depth as f64 + average_path_length(*size),
        INode::Split { feature, threshold, left, right } => {
            if row[*feature] < *threshold {
                path_length(left, row, depth + 1)
            } else {
                path_length(right, row, depth + 1)
            }
        }
    }
}

/// Isolation-forest anomaly scores 2^(−E[h]/c(ψ)); higher is more anomalous.
pub fn isolation_scores(rows: &[Vec<f64>], n_trees: usize, seed: u64) -> Vec<f64> {
    let n = rows.len();
    if n < 2 {
        return vec![0.5; n];
    }
    let psi = n.min(256);
    let limit = (psi as f64).log2().ceil() as usize;
    let mut total = vec![0.0; n];
    for t in 0..n_trees {
        let mut rng = seed::rng(seed::derive_indexed(seed, t as u64));
        let mut sub = sample_indices(&mut rng, n, psi).into_vec();
        sub.sort_unstable();
        let tree = build_itree(rows, &sub, 0, limit, &mut rng);
        for (i, r) in rows.iter().enumerate() {
            total[i] += path_length(&tree, r, 0);
        }
    }
    let c = average_path_length(psi);
    total.iter().map(|h| 2f64.powf(-(h / n_trees as f64) / c)).collect()
}

fn fences(col: &[f64]) -> Option<(f64, f64)> {
    let (q1, q3) = stats::quartiles(col);
    let iqr = q3 - q1;
    (iqr > 0.0).then_some((q1 - FENCE * iqr, q3 + FENCE * iqr))
}

/// Univariate 3·IQR fences and the top-5% isolation-forest scores; rows
/// flagged by both are excluded, by one are winsorised.
pub fn detect_outliers(matrix: &FeatureMatrix, seed: u64) -> OutlierReport {
    let n = matrix.rows.len();
    let d = matrix.names.len();
    let mut univariate = vec![false; n];
    for j in 0..d {
        let col: Vec<f64> = matrix.rows.iter().map(|r| r[j]).collect();
        if let Some((lo, hi)) = fences(&col) {
            for (i, v) in col.iter().enumerate() {
                if *v < lo || *v > hi {
                    univariate[i] = true;
                }
            }
        }
    }
    let scores = isolation_scores(&matrix.rows, 100, seed);
    let n_flag = (CONTAMINATION * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut multivariate = vec![false; n];
    for &i in order.iter().take(n_flag.min(n)) {
        multivariate[i] = true;
    }
    let actions = univariate
        .iter()
        .zip(&multivariate)
        .map(|(&u, &m)| match (u, m) {
            (true, true) => OutlierAction::Exclude,
            (false, false) => OutlierAction::Keep,
            _ => OutlierAction::Winsorize,
        })
        .collect();
    OutlierReport {
        actions,
        univariate,
        multivariate,
        scores,
    }
}

/// Drops excluded rows and clips winsorised ones to the column 1st/99th
/// percentiles: only fence-violating cells for univariate flags, every cell
/// for multivariate-only flags. Returns the kept row indices.
pub fn apply_outliers(matrix: &FeatureMatrix, report: &OutlierReport) -> (FeatureMatrix, Vec<usize>) {
    let d = matrix.names.len();
    let mut limits = Vec::with_capacity(d);
    let mut fence = Vec::with_capacity(d);
    for j in 0..d {
        let col = stats::sorted_copy(&matrix.rows.iter().map(|r| r[j]).collect::<Vec<_>>());
        limits.push((stats::quantile_sorted(&col, 0.01), stats::quantile_sorted(&col, 0.99)));
        fence.push(fences(&col));
    }
    let mut out = FeatureMatrix {
        names: matrix.names.clone(),
        rows: vec![],
        mask: vec![],
        lithology: vec![],
    };
    let mut kept = vec![];
    for (i, row) in matrix.rows.iter().enumerate() {
        let mut row = row.clone();
        match report.actions[i] {
            OutlierAction::Exclude => continue,
            OutlierAction::Keep => {}
            OutlierAction::Winsorize => {
                for j in 0..d {
                    let outside = fence[j].is_some_and(|(lo, hi)| row[j] < lo || row[j] > hi);
                    if !report.univariate[i] || outside {
                        row[j] = row[j].clamp(limits[j].0, limits[j].1);
                    }
                }
            }
        }
        out.rows.push(row);
        out.mask.push(matrix.mask[i].clone());
        out.lithology.push(matrix.lithology[i]);
        kept.push(i);
    }
    (out, kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub median: Vec<f64>,
    pub iqr: Vec<f64>,
    /// Columns with zero IQR: centred, not scaled.
    pub constant: Vec<bool>,
}

impl ScalerParams {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let mut s = ScalerParams {
            median: vec![],
            iqr: vec![],
            constant: vec![],
        };
        for j in 0..d {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let (q1, q3) = stats::quartiles(&col);
            s.median.push(stats::median(&col));
            s.iqr.push(q3 - q1);
            s.constant.push(!(q3 - q1 > 0.0));
        }
        s
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| {
                let c = v - self.median[j];
                if self.constant[j] {
                    c
                } else {
                    c / self.iqr[j]
                }
            })
            .collect()
    }

    pub fn unscale(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| {
                if self.constant[j] {
                    v + self.median[j]
                } else {
                    v * self.iqr[j] + self.median[j]
                }
            })
            .collect()
    }
}

/// (x − median)/IQR per column.
pub fn robust_scale(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, ScalerParams) {
    let s = ScalerParams::fit(rows);
    (rows.iter().map(|r| s.apply(r)).collect(), s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<String>,
    pub votes: BTreeMap<String, u8>,
    /// Method name → feature names best first.
    pub rankings: BTreeMap<String, Vec<String>>,
}

pub const MI_BINS: usize = 16;

fn equal_frequency_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let s = stats::sorted_copy(x);
    let edges: Vec<f64> = (1..bins).map(|j| stats::quantile_sorted(&s, j as f64 / bins as f64)).collect();
    x.iter().map(|v| edges.iter().filter(|e| v > e).count()).collect()
}

/// Mutual information (nats) from equal-frequency histograms.
pub fn mutual_information(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let bx = equal_frequency_bins(x, MI_BINS);
    let by = equal_frequency_bins(y, MI_BINS);
    let mut joint = vec![[0.0f64; MI_BINS]; MI_BINS];
    let mut px = [0.0f64; MI_BINS];
    let mut py = [0.0f64; MI_BINS];
    for (&a, &b) in bx.iter().zip(&by) {
        joint[a][b] += 1.0;
        px[a] += 1.0;
        py[b] += 1.0;
    }
    let mut mi = 0.0;
    for a in 0..MI_BINS {
        for b in 0..MI_BINS {
            let pab = joint[a][b] / n;
            if pab > 0.0 {
                mi += pab * (pab / (px[a] / n * py[b] / n)).ln();
            }
        }
    }
    mi.max(0.0)
}

fn rank_by(names: &[String], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Ranks features by |Pearson r|, mutual information, forest importance
/// (100 trees, depth 10) and the univariate F statistic; keeps those in the
/// top `k` of at least three methods, ordered by mean rank.
pub fn select_features(
    names: &[String],
    rows: &[Vec<f64>],
    target: &[f64],
    k: usize,
    seed: u64,
) -> Result<SelectionResult, FeatureError> {
    let n = rows.len();
    if n < 50 {
        return Err(FeatureError::TooFewRows(n));
    }
    let d = names.len();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let r: Vec<f64> = cols.iter().map(|c| stats::pearson(c, target).unwrap_or(0.0)).collect();
    let pearson: Vec<f64> = r.iter().map(|v| v.abs()).collect();
    let f_stat: Vec<f64> = r
        .iter()
        .map(|v| {
            let r2 = (v * v).min(1.0);
            if r2 >= 1.0 {
                f64::INFINITY
            } else {
                r2 / (1.0 - r2) * (n as f64 - 2.0)
            }
        })
        .collect();
    let mi: Vec<f64> = cols.iter().map(|c| mutual_information(c, target)).collect();
    let forest = baselines::fit_forest(rows, target, 100, 10, seed::derive(seed, &["selection"]))
        .map(|f| f.importances)
        .unwrap_or_else(|_| vec![0.0; d]);
    let methods = [("pearson", pearson), ("mutual_information", mi), ("forest", forest), ("f_statistic", f_stat)];
    let mut votes = vec![0u8; d];
    let mut rank_sum = vec![0usize; d];
    let mut rankings = BTreeMap::new();
    for (name, scores) in &methods {
        let order = rank_by(names, scores);
        for (pos, &j) in order.iter().enumerate() {
            rank_sum[j] += pos;
            if pos < k {
                votes[j] += 1;
            }
        }
        rankings.insert(name.to_string(), order.iter().map(|&j| names[j].clone()).collect());
    }
    let mut chosen: Vec<usize> = (0..d).filter(|&j| votes[j] >= 3).collect();
    chosen.sort_by(|&a, &b| rank_sum[a].cmp(&rank_sum[b]).then(a.cmp(&b)));
    chosen.truncate(k);
    Ok(SelectionResult {
        selected: chosen.iter().map(|&j| names[j].clone()).collect(),
        votes: names.iter().cloned().zip(votes).collect(),
        rankings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub select_k: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { select_k: 50, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub n_train_rows: usize,
    pub n_excluded: usize,
    pub n_winsorized: usize,
    pub catalog_size: usize,
    pub n_selected: usize,
    pub dropped_columns: Vec<String>,
    pub global_median_fallbacks: Vec<String>,
    pub excluded_from_inputs: Vec<String>,
}

/// Train-fitted feature transform: catalog → imputation → scaling → selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub catalog: FeatureCatalog,
    pub exponents: FreundlichExponents,
    pub imputer: ImputeModel,
    /// Names of the columns after imputation, before selection.
    pub columns: Vec<String>,
    pub scaler: ScalerParams,
    pub selection: SelectionResult,
    /// Positions of the selected features within `columns`.
    pub selected_index: Vec<usize>,
}

impl FeaturePipeline {
    /// Fits every stage on training records that carry a measurement. Returns
    /// the pipeline, the report, and the indices of the rows kept after
    /// outlier exclusion.
    pub fn fit(train: &[IntegratedRecord], config: &PipelineConfig) -> Result<(Self, PipelineReport, Vec<usize>), FeatureError> {
        let measured: Vec<&IntegratedRecord> = train.iter().filter(|r| r.measurement.is_some()).collect();
        if measured.is_empty() {
            return Err(FeatureError::Empty);
        }
        let owned: Vec<IntegratedRecord> = measured.iter().map(|r| (*r).clone()).collect();
        let exponents = FreundlichExponents::fit(&owned, config.seed);
        let full = FeatureCatalog::for_records(&owned);
        // model inputs never include target-derived formulas
        let excluded_from_inputs: Vec<String> = full.entries.iter().filter(|e| e.target_derived).map(|e| e.name.clone()).collect();
        let catalog = FeatureCatalog {
            entries: full.entries.into_iter().filter(|e| !e.target_derived).collect(),
        };
        let raw: Vec<Vec<Option<f64>>> = owned
            .iter()
            .map(|r| engineer_features(r, &catalog, &exponents))
            .collect::<Result<_, _>>()?;
        let liths: Vec<Lithology> = owned.iter().map(|r| r.lithology).collect();
        let names = catalog.names();
        let cats: Vec<FeatureCategory> = catalog.entries.iter().map(|e| e.category).collect();
        let (matrix, imputer) = impute(&names, &cats, &raw, &liths);
        let outliers = detect_outliers(&matrix, seed::derive(config.seed, &["outliers"]));
        let (clean, kept) = apply_outliers(&matrix, &outliers);
        let (scaled, scaler) = robust_scale(&clean.rows);
        let target: Vec<f64> = kept.iter().map(|&i| owned[i].measurement.map_or(0.0, |m| m.uptake)).collect();
        let selection = select_features(&clean.names, &scaled, &target, config.select_k, config.seed)?;
        let selected_index = selection
            .selected
            .iter()
            .map(|s| clean.names.iter().position(|n| n == s).unwrap_or(0))
            .collect();
        let report = PipelineReport {
            n_train_rows: owned.len(),
            n_excluded: outliers.actions.iter().filter(|a| **a == OutlierAction::Exclude).count(),
            n_winsorized: outliers.actions.iter().filter(|a| **a == OutlierAction::Winsorize).count(),
            catalog_size: catalog.len(),
            n_selected: selection.selected.len(),
            dropped_columns: imputer.dropped.clone(),
            global_median_fallbacks: imputer.global_fallbacks.clone(),
            excluded_from_inputs,
        };
        // kept indices refer to the measured subset, map back to `train`
        let measured_index: Vec<usize> = train
            .iter()
            .enumerate()
            .filter(|(_, r)| r.measurement.is_some())
            .map(|(i, _)| i)
            .collect();
        let kept_train = kept.iter().map(|&i| measured_index[i]).collect();
        Ok((
            FeaturePipeline {
                catalog,
                exponents,
                imputer,
                columns: clean.names,
                scaler,
                selection,
                selected_index,
            },
            report,
            kept_train,
        ))
    }

    pub fn selected_names(&self) -> &[String] {
        &self.selection.selected
    }

    pub fn width(&self) -> usize {
        self.selected_index.len()
    }

    fn finish(&self, imputed: &[f64]) -> Vec<f64> {
        let scaled = self.scaler.apply(imputed);
        self.selected_index.iter().map(|&j| scaled[j]).collect()
    }

    /// Scaled, selected feature vector of a measured record.
    pub fn transform(&self, record: &IntegratedRecord) -> Result<Vec<f64>, FeatureError> {
        let m = record
            .measurement
            .ok_or_else(|| FeatureError::MissingThermoInputs(record.sample_key.clone()))?;
        Ok(self.transform_at(record, m.pressure, m.temperature))
    }

    /// Feature vector of a record's sample at an arbitrary (p, T). Imputed
    /// cells come from the row at the record's own measured condition so
    /// that perturbing p changes only pressure-dependent formulas.
    pub fn transform_at(&self, record: &IntegratedRecord, p: f64, t: f64) -> Vec<f64> {
        let (base_p, base_t) = record.measurement.map_or((p, t), |m| (m.pressure, m.temperature));
        let base_raw = engineer_at(record, base_p, base_t, None, &self.catalog, &self.exponents);
        let (base_row, base_mask) = self.imputer.apply_row(&base_raw, record.lithology);
        if base_p == p && base_t == t {
            return self.finish(&base_row);
        }
        let raw = engineer_at(record, p, t, None, &self.catalog, &self.exponents);
        let (mut row, _) = self.imputer.apply_row(&raw, record.lithology);
        for (j, imputed) in base_mask.iter().enumerate() {
            if *imputed {
                row[j] = base_row[j];
            }
        }
        self.finish(&row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Measurement;

    fn record(lith: Lithology, p: f64, t: f64, q: f64, props: SamplePropertySet) -> IntegratedRecord {
        IntegratedRecord {
            sample_key: props.sample_key.clone(),
            lithology: lith,
            measurement: Some(Measurement { pressure: p, temperature: t, uptake: q }),
            properties: Some(props),
        }
    }

    fn value(cat: &FeatureCatalog, row: &[Option<f64>], name: &str) -> Option<f64> {
        row[cat.names().iter().position(|n| n == name).unwrap()]
    }

    #[test]
    fn catalog_covers_categories_uniquely() {
        let cat = FeatureCatalog::new(&["pyrite".into()]);
        let mut names = cat.names();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        for c in FeatureCategory::ENGINEERED {
            assert!(cat.entries.iter().any(|e| e.category == c), "{c:?}");
        }
        assert_eq!(cat.entries.iter().filter(|e| FeatureCategory::ENGINEERED.contains(&e.category)).count(), FORMULAS.len());
    }

    #[test]
    fn formula_values() {
        let mut props = SamplePropertySet::new("s", Lithology::Clay);
        props.avg_pore_diameter = Some(0.289);
        let cat = FeatureCatalog::new(&[]);
        let rec = record(Lithology::Clay, P_CRIT, 298.15, 0.2, props);
        let row = engineer_features(&rec, &cat, &FreundlichExponents::default()).unwrap();
        assert!((value(&cat, &row, "reduced_temperature").unwrap() - 298.15 / 33.19).abs() < 1e-12);
        assert!((value(&cat, &row, "reduced_temperature").unwrap() - 8.9831).abs() < 1e-4);
        assert_eq!(value(&cat, &row, "reduced_pressure"), Some(1.0));
        assert_eq!(value(&cat, &row, "sieving_zeta"), Some(1.0));
        assert_eq!(value(&cat, &row, "sieving_alpha"), Some(0.0));
        assert_eq!(value(&cat, &row, "toc"), None);
        assert_eq!(value(&cat, &row, "is_clay"), Some(1.0));
        let mut no_meas = rec.clone();
        no_meas.measurement = None;
        assert!(matches!(
            engineer_features(&no_meas, &cat, &FreundlichExponents::default()),
            Err(FeatureError::MissingThermoInputs(_))
        ));
    }

    #[test]
    fn gibbs_estimate_guards_zero_uptake() {
        let cat = FeatureCatalog::new(&[]);
        let rec = record(Lithology::Coal, 10.0, 300.0, 0.0, SamplePropertySet::new("s", Lithology::Coal));
        let row = engineer_features(&rec, &cat, &FreundlichExponents::default()).unwrap();
        let g = value(&cat, &row, "dg_approx").unwrap();
        assert!((g - (-GAS_CONSTANT * 300.0 * K_EFF_FLOOR.ln() / 1000.0)).abs() < 1e-9);
    }

    fn cats(d: usize, thermo: usize) -> Vec<FeatureCategory> {
        (0..d)
            .map(|j| if j < thermo { FeatureCategory::Thermodynamic } else { FeatureCategory::Property })
            .collect()
    }

    #[test]
    fn imputation_tiers() {
        // column 0: complete key; column 1: 5% missing; column 2: 35% missing
        let n = 40;
        let names: Vec<String> = vec!["k".into(), "knn".into(), "med".into()];
        let liths: Vec<Lithology> = (0..n).map(|i| Lithology::ALL[i % 3]).collect();
        let raw: Vec<Vec<Option<f64>>> = (0..n)
            .map(|i| {
                let x = i as f64;
                vec![
                    Some(x),
                    if i == 7 || i == 30 { None } else { Some(10.0 * x) },
                    if i % 3 == 0 && i < 42 && i % 2 == 0 { None } else { Some(100.0 + (i % 3) as f64 * 1000.0 + x) },
                ]
            })
            .collect();
        let (m, model) = impute(&names, &cats(3, 1), &raw, &liths);
        assert_eq!(model.columns[0].tier, ImputeTier::Complete);
        assert_eq!(model.columns[1].tier, ImputeTier::Knn);
        // brute force: nearest observed rows of row 7 on the key are 5,6,8,9,4 (ties → lower index)
        let mut d: Vec<(f64, usize)> = (0..n).filter(|&i| raw[i][1].is_some()).map(|i| (((i as f64) - 7.0).abs(), i)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expect = d[..5].iter().map(|&(_, i)| 10.0 * i as f64).sum::<f64>() / 5.0;
        assert!((m.rows[7][1] - expect).abs() < 1e-12);
        assert!(m.mask[7][1] && !m.mask[8][1]);
        // observed cells untouched
        for i in 0..n {
            for j in 0..3 {
                if let Some(v) = raw[i][j] {
                    assert_eq!(m.rows[i][j], v);
                }
            }
        }
        // stratified median: clay rows are i % 3 == 0
        let col = &model.columns[2];
        assert!(col.missing_fraction > 0.1);
        let clay_obs: Vec<f64> = (0..n).filter(|i| i % 3 == 0).filter_map(|i| raw[i][2]).collect();
        assert_eq!(m.rows[0][2], stats::median(&clay_obs));
    }

    #[test]
    fn all_missing_column_dropped_and_global_fallback() {
        let names: Vec<String> = vec!["k".into(), "gone".into(), "clay_only".into()];
        let liths = vec![Lithology::Clay, Lithology::Clay, Lithology::Shale, Lithology::Shale];
        let raw = vec![
            vec![Some(1.0), None, Some(2.0)],
            vec![Some(2.0), None, Some(4.0)],
            vec![Some(3.0), None, None],
            vec![Some(4.0), None, None],
        ];
        let (m, model) = impute(&names, &cats(3, 1), &raw, &liths);
        assert_eq!(model.dropped, vec!["gone".to_string()]);
        assert_eq!(m.names, vec!["k".to_string(), "clay_only".to_string()]);
        assert_eq!(model.global_fallbacks, vec!["clay_only".to_string()]);
        assert_eq!(m.rows[2][1], 3.0);
    }

    fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        let d = rows[0].len();
        FeatureMatrix {
            names: (0..d).map(|j| format!("c{j}")).collect(),
            mask: rows.iter().map(|_| vec![false; d]).collect(),
            lithology: rows.iter().map(|_| Lithology::Clay).collect(),
            rows,
        }
    }

    #[test]
    fn identical_rows_are_kept() {
        let m = matrix(vec![vec![1.0, 2.0]; 30]);
        let r = detect_outliers(&m, 1);
        assert!(r.actions.iter().all(|a| *a == OutlierAction::Keep) || r.univariate.iter().all(|u| !u));
        assert!(r.actions.iter().all(|a| *a != OutlierAction::Exclude));
        // constant rows: every path ends in a single unsplittable leaf
        assert!(r.scores.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn extreme_row_excluded() {
        let mut rng = seed::rng(4);
        let mut rows: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        rows[42] = vec![100.0, 100.0];
        let m = matrix(rows);
        let r = detect_outliers(&m, 2);
        assert_eq!(r.actions[42], OutlierAction::Exclude);
        assert_eq!(r.multivariate.iter().filter(|v| **v).count(), 5);
        let top = (0..100).max_by(|&a, &b| r.scores[a].total_cmp(&r.scores[b])).unwrap();
        assert_eq!(top, 42);
        let (clean, kept) = apply_outliers(&m, &r);
        assert!(!kept.contains(&42));
        assert_eq!(clean.rows.len(), 99);
    }

    #[test]
    fn path_length_normaliser() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        let c256 = average_path_length(256);
        assert!((c256 - 10.2448).abs() < 1e-3, "{c256}");
    }

    #[test]
    fn robust_scaling() {
        let rows: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0, 5.0].iter().map(|v| vec![*v, 7.0]).collect();
        let (s, p) = robust_scale(&rows);
        let col: Vec<f64> = s.iter().map(|r| r[0]).collect();
        assert_eq!(col, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(p.constant[1] && s.iter().all(|r| r[1] == 0.0));
        for r in &rows {
            assert_eq!(p.unscale(&p.apply(r)), *r);
        }
    }

    #[test]
    fn selection_votes() {
        let mut rng = seed::rng(5);
        let n = 200;
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let rows: Vec<Vec<f64>> = y
            .iter()
            .map(|&v| vec![v, 2.0 * v + 0.05 * rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let names: Vec<String> = vec!["same".into(), "close".into(), "noise".into()];
        let sel = select_features(&names, &rows, &y, 1, 3).unwrap();
        assert_eq!(sel.votes["same"], 4);
        assert_eq!(sel.selected, vec!["same".to_string()]);
        assert_eq!(sel.votes["noise"], 0);
        let all = select_features(&names, &rows, &y, 50, 3).unwrap();
        assert_eq!(all.selected.len(), 3);
        assert!(select_features(&names, &rows[..49], &y[..49], 1, 3).is_err());
    }

    #[test]
    fn noise_feature_rarely_selected() {
        let mut excluded = 0;
        for s in 0..20u64 {
            let mut rng = seed::rng(100 + s);
            let n = 120;
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let rows: Vec<Vec<f64>> = y
                .iter()
                .map(|&v| {
                    let mut r: Vec<f64> = (1..=5).map(|k| v * k as f64 + 0.2 * rng.random::<f64>()).collect();
                    r.push(rng.random::<f64>());
                    r
                })
                .collect();
            let names: Vec<String> = (0..6).map(|j| format!("f{j}")).collect();
            let sel = select_features(&names, &rows, &y, 5, s).unwrap();
            if !sel.selected.contains(&"f5".to_string()) {
                excluded += 1;
            }
        }
        assert!(excluded >= 19, "{excluded}");
    }

    #[test]
    fn mutual_information_orders_dependence() {
        let mut rng = seed::rng(8);
        let x: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let z: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        assert!(mutual_information(&x, &x) > 1.0);
        assert!(mutual_information(&x, &z) < 0.5);
    }
}
