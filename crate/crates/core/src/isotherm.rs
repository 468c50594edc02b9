//! Isotherm functional forms: evaluation, parameter bounds, and physics checks.
//!
//! Pressures are in bar, temperatures in kelvin, uptakes in mmol/g. Only
//! Temkin and Dubinin–Radushkevich use the temperature argument.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::precise::{self, two_prod, two_sum, Dd};
use crate::GAS_CONSTANT as R;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("{form}: outside the form's domain ({reason})")]
    Domain { form: FunctionalForm, reason: &'static str },
    #[error("{form}: expected {expected} parameters, got {got}")]
    ParamCount {
        form: FunctionalForm,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FunctionalForm {
    Henry,
    Langmuir,
    Freundlich,
    #[serde(rename = "BET")]
    Bet,
    Temkin,
    Toth,
    Sips,
    RedlichPeterson,
    DubininRadushkevich,
    Hill,
    Poly2,
    Poly3,
    Poly4,
    ExpSingle,
    ExpDouble,
    PowerStd,
    PowerMod,
    LogStd,
    LogMod,
    Hyperbolic,
    Rational,
    WeibullGrowth,
    Gompertz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    Classical,
    Mathematical,
}

use FunctionalForm as F;

const CAP: (f64, f64) = (0.001, 100.0);
const AFF: (f64, f64) = (1e-6, 100.0);
const COEF: (f64, f64) = (-10.0, 10.0);

impl FunctionalForm {
    pub const ALL: [FunctionalForm; 23] = [
        F::Henry,
        F::Langmuir,
        F::Freundlich,
        F::Bet,
        F::Temkin,
        F::Toth,
        F::Sips,
        F::RedlichPeterson,
        F::DubininRadushkevich,
        F::Hill,
        F::Poly2,
        F::Poly3,
        F::Poly4,
        F::ExpSingle,
        F::ExpDouble,
        F::PowerStd,
        F::PowerMod,
        F::LogStd,
        F::LogMod,
        F::Hyperbolic,
        F::Rational,
        F::WeibullGrowth,
        F::Gompertz,
    ];

    /// The nine forms used for individual-sample fitting (Hill is reserved
    /// for the aggregated study).
    pub const INDIVIDUAL: [FunctionalForm; 9] = [
        F::Henry,
        F::Langmuir,
        F::Freundlich,
        F::Bet,
        F::Temkin,
        F::Toth,
        F::Sips,
        F::RedlichPeterson,
        F::DubininRadushkevich,
    ];

    pub fn classical() -> Vec<FunctionalForm> {
        Self::ALL.iter().copied().filter(|f| f.category() == Category::Classical).collect()
    }

    pub fn mathematical() -> Vec<FunctionalForm> {
        Self::ALL.iter().copied().filter(|f| f.category() == Category::Mathematical).collect()
    }

    pub fn category(self) -> Category {
        match self {
            F::Henry
            | F::Langmuir
            | F::Freundlich
            | F::Bet
            | F::Temkin
            | F::Toth
            | F::Sips
            | F::RedlichPeterson
            | F::DubininRadushkevich
            | F::Hill => Category::Classical,
            _ => Category::Mathematical,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            F::Henry => "Henry",
            F::Langmuir => "Langmuir",
            F::Freundlich => "Freundlich",
            F::Bet => "BET",
            F::Temkin => "Temkin",
            F::Toth => "Toth",
            F::Sips => "Sips",
            F::RedlichPeterson => "RedlichPeterson",
            F::DubininRadushkevich => "DubininRadushkevich",
            F::Hill => "Hill",
            F::Poly2 => "Poly2",
            F::Poly3 => "Poly3",
            F::Poly4 => "Poly4",
            F::ExpSingle => "ExpSingle",
            F::ExpDouble => "ExpDouble",
            F::PowerStd => "PowerStd",
            F::PowerMod => "PowerMod",
            F::LogStd => "LogStd",
            F::LogMod => "LogMod",
            F::Hyperbolic => "Hyperbolic",
            F::Rational => "Rational",
            F::WeibullGrowth => "WeibullGrowth",
            F::Gompertz => "Gompertz",
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            F::Henry => &["K_H"],
            F::Langmuir => &["q_max", "K_L"],
            F::Freundlich => &["K_F", "n"],
            F::Bet => &["Q_m", "C", "p_0"],
            F::Temkin => &["b_T", "K_T"],
            F::Toth => &["q_max", "b", "t"],
            F::Sips => &["q_max", "K_S", "n_s"],
            F::RedlichPeterson => &["K_RP", "A_RP", "beta"],
            F::DubininRadushkevich => &["Q_s", "B"],
            F::Hill => &["q_max", "K", "n"],
            F::Poly2 => &["a0", "a1", "a2"],
            F::Poly3 => &["a0", "a1", "a2", "a3"],
            F::Poly4 => &["a0", "a1", "a2", "a3", "a4"],
            F::ExpSingle => &["a", "b"],
            F::ExpDouble => &["a", "b", "c", "d"],
            F::PowerStd => &["a", "b"],
            F::PowerMod => &["a", "b", "c"],
            F::LogStd => &["a", "b"],
            F::LogMod => &["a", "b", "c"],
            F::Hyperbolic => &["a", "b"],
            F::Rational => &["a", "b", "c"],
            F::WeibullGrowth => &["a", "b", "c"],
            F::Gompertz => &["a", "b", "c"],
        }
    }

    pub fn n_params(self) -> usize {
        self.param_names().len()
    }

    /// Static search box for each parameter, in `param_names` order.
    pub fn bounds(self) -> Vec<(f64, f64)> {
        match self {
            F::Henry => vec![AFF],
            F::Langmuir => vec![CAP, AFF],
            F::Freundlich => vec![AFF, (0.1, 10.0)],
            // p_0 is narrowed to (max p, 10·max p) by `fit_bounds`.
            F::Bet => vec![CAP, (0.01, 1000.0), (1e-3, 2000.0)],
            F::Temkin => vec![(10.0, 1e7), AFF],
            F::Toth => vec![CAP, (1e-6, 1e6), (0.01, 1.0)],
            F::Sips => vec![CAP, AFF, (0.05, 3.0)],
            F::RedlichPeterson => vec![AFF, AFF, (0.01, 1.0)],
            F::DubininRadushkevich => vec![CAP, (1e-10, 1e-5)],
            F::Hill => vec![CAP, (1e-3, 1e4), (0.1, 5.0)],
            F::Poly2 => vec![COEF; 3],
            F::Poly3 => vec![COEF; 4],
            F::Poly4 => vec![COEF; 5],
            F::ExpSingle => vec![CAP, AFF],
            F::ExpDouble => vec![CAP, AFF, CAP, AFF],
            F::PowerStd => vec![AFF, (0.01, 3.0)],
            F::PowerMod => vec![AFF, (0.01, 3.0), (0.0, 10.0)],
            F::LogStd => vec![(1e-6, 10.0), COEF],
            F::LogMod => vec![(1e-6, 10.0), COEF, (1e-3, 100.0)],
            F::Hyperbolic => vec![CAP, (1e-3, 1e6)],
            F::Rational => vec![COEF, COEF, (0.0, 100.0)],
            F::WeibullGrowth => vec![CAP, (1e-3, 1e4), (0.1, 5.0)],
            F::Gompertz => vec![CAP, (1e-3, 100.0), (1e-6, 10.0)],
        }
    }

    /// Bounds adapted to a data set: BET's saturation pressure is searched in
    /// (max p, 10·max p).
    pub fn fit_bounds(self, max_pressure: f64) -> Vec<(f64, f64)> {
        let mut b = self.bounds();
        if self == F::Bet && max_pressure > 0.0 {
            b[2] = (max_pressure * (1.0 + 1e-9), 10.0 * max_pressure);
        }
        b
    }

    /// Index of the saturation-capacity parameter, for forms that have one.
    pub fn capacity_index(self) -> Option<usize> {
        match self {
            F::Langmuir | F::Toth | F::Sips | F::Hill | F::DubininRadushkevich => Some(0),
            _ => None,
        }
    }
}

impl fmt::Display for FunctionalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FunctionalForm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        FunctionalForm::ALL
            .iter()
            .copied()
            .find(|f| f.id().to_lowercase() == norm)
            .or(match norm.as_str() {
                "dr" => Some(F::DubininRadushkevich),
                "rp" => Some(F::RedlichPeterson),
                "weibull" => Some(F::WeibullGrowth),
                _ => None,
            })
            .ok_or_else(|| format!("unknown functional form `{s}`"))
    }
}

/// Parameters bound to their form, with name-based access.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub form: FunctionalForm,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(form: FunctionalForm, values: Vec<f64>) -> Result<Self, ModelError> {
        check_len(form, &values)?;
        Ok(ParamVector { form, values })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let i = self.form.param_names().iter().position(|n| *n == name)?;
        self.values.get(i).copied()
    }

    pub fn named(&self) -> BTreeMap<String, f64> {
        self.form
            .param_names()
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.to_string(), *v))
            .collect()
    }

    pub fn capacity(&self) -> Option<f64> {
        self.form.capacity_index().map(|i| self.values[i])
    }

    /// Langmuir-type affinity (bar⁻¹) where the form defines one.
    pub fn affinity(&self) -> Option<f64> {
        let v = &self.values;
        match self.form {
            F::Henry | F::Freundlich => Some(v[0]),
            F::Langmuir | F::Sips | F::Temkin => Some(v[1]),
            F::Toth => Some(1.0 / v[1]),
            F::RedlichPeterson => Some(v[1]),
            F::Hill => Some(1.0 / v[1]),
            _ => None,
        }
    }

    pub fn eval(&self, p: f64, t: f64) -> Result<f64, ModelError> {
        eval(self.form, &self.values, p, t)
    }

    pub fn in_bounds(&self) -> bool {
        self.values
            .iter()
            .zip(self.form.bounds())
            .all(|(v, (lo, hi))| v.is_finite() && *v >= lo && *v <= hi)
    }
}

fn check_len(form: FunctionalForm, params: &[f64]) -> Result<(), ModelError> {
    if params.len() != form.n_params() {
        return Err(ModelError::ParamCount {
            form,
            expected: form.n_params(),
            got: params.len(),
        });
    }
    Ok(())
}

/// Evaluates a form at pressure `p` (bar) and temperature `t` (K).
pub fn eval(form: FunctionalForm, params: &[f64], p: f64, t: f64) -> Result<f64, ModelError> {
    check_len(form, params)?;
    let domain = |reason| Err(ModelError::Domain { form, reason });
    if !(p.is_finite() && p >= 0.0) {
        return domain("pressure must be finite and non-negative");
    }
    let v = params;
    let q = match form {
        F::Henry => v[0] * p,
        F::Langmuir => {
            let kp = v[1] * p;
            v[0] * kp / (1.0 + kp)
        }
        F::Freundlich => v[0] * p.powf(1.0 / v[1]),
        F::Bet => {
            let (qm, c, p0) = (v[0], v[1], v[2]);
            if p >= p0 {
                return domain("relative pressure must be below 1");
            }
            // Q_m·C·x / ((1−x)(1+(C−1)x)) rewritten with positive terms only
            let gap = p0 - p;
            qm * c * p * p0 / (gap * (gap + c * p))
        }
        F::Temkin => {
            let (bt, kt) = (v[0], v[1]);
            let (hi, lo) = two_prod(kt, p);
            if !(hi > 0.0) {
                return domain("K_T·p must be positive");
            }
            let log = precise::ln(Dd { hi, lo });
            log.mul_f64(R * t / bt).to_f64()
        }
        F::Toth => {
            let (qm, b, tt) = (v[0], v[1], v[2]);
            qm * p / (b + p.powf(tt)).powf(1.0 / tt)
        }
        F::Sips => {
            let x = (v[1] * p).powf(1.0 / v[2]);
            if x.is_infinite() {
                v[0]
            } else {
                v[0] * x / (1.0 + x)
            }
        }
        F::RedlichPeterson => v[0] * p / (1.0 + v[1] * p.powf(v[2])),
        F::DubininRadushkevich => {
            if p == 0.0 {
                0.0
            } else {
                let eps = R * t * (1.0 / p).ln_1p();
                v[0] * (-v[1] * eps * eps).exp()
            }
        }
        F::Hill => {
            if p == 0.0 {
                0.0
            } else {
                v[0] / (1.0 + (v[1] / p).powf(v[2]))
            }
        }
        F::Poly2 | F::Poly3 | F::Poly4 => {
            // compensated Horner
            let mut acc = Dd::from(*v.last().unwrap());
            for &a in v.iter().rev().skip(1) {
                acc = acc.mul_f64(p).add_f64(a);
            }
            acc.to_f64()
        }
        F::ExpSingle => v[0] * -(-v[1] * p).exp_m1(),
        F::ExpDouble => v[0] * -(-v[1] * p).exp_m1() + v[2] * -(-v[3] * p).exp_m1(),
        F::PowerStd => v[0] * p.powf(v[1]),
        F::PowerMod => v[0] * p.powf(v[1]) + v[2],
        F::LogStd => {
            if p <= 0.0 {
                return domain("logarithm needs p > 0");
            }
            precise::ln(Dd::from(p)).mul_f64(v[0]).add_f64(v[1]).to_f64()
        }
        F::LogMod => {
            let (hi, lo) = two_sum(p, v[2]);
            if !(hi > 0.0) {
                return domain("logarithm needs p + c > 0");
            }
            precise::ln(Dd { hi, lo }).mul_f64(v[0]).add_f64(v[1]).to_f64()
        }
        F::Hyperbolic => v[0] * p / (v[1] + p),
        F::Rational => v[1].mul_add(p, v[0]) / v[2].mul_add(p, 1.0),
        F::WeibullGrowth => v[0] * -(-(p / v[1]).powf(v[2])).exp_m1(),
        F::Gompertz => v[0] * (-v[1] * (-v[2] * p).exp()).exp(),
    };
    if !q.is_finite() {
        return domain("non-finite result");
    }
    Ok(q)
}

/// Outcome of the five physics checks; each failed check costs 1/5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsScore {
    pub score: f64,
    pub violated_checks: Vec<String>,
}

pub const PHYSICS_FLAG_THRESHOLD: f64 = 0.7;
const N_CHECKS: f64 = 5.0;

impl PhysicsScore {
    pub fn flagged(&self) -> bool {
        self.score < PHYSICS_FLAG_THRESHOLD
    }
}

/// One isotherm observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub p: f64,
    pub t: f64,
    pub q: f64,
}

impl Point {
    pub fn new(p: f64, t: f64, q: f64) -> Self {
        Point { p, t, q }
    }
}

/// Applies positivity, saturation, curve monotonicity, Freundlich
/// favourability and the BET relative-pressure window.
pub fn validate_physics(form: FunctionalForm, params: &[f64], data: &[Point]) -> PhysicsScore {
    let mut violated = Vec::new();

    if form.category() == Category::Classical && params.iter().any(|v| !(*v > 0.0)) {
        violated.push("positivity");
    }

    if let Some(i) = form.capacity_index() {
        let max_q = data.iter().map(|d| d.q).fold(f64::NEG_INFINITY, f64::max);
        if params[i] < max_q {
            violated.push("saturation");
        }
    }

    if !curve_is_monotone(form, params, data) {
        violated.push("monotonicity");
    }

    if form == F::Freundlich && !(params[1] > 1.0) {
        violated.push("freundlich_favorability");
    }

    if form == F::Bet {
        let p0 = params[2];
        if !data.iter().all(|d| {
            let x = d.p / p0;
            x > 0.05 && x < 0.35
        }) {
            violated.push("bet_window");
        }
    }

    PhysicsScore {
        score: 1.0 - violated.len() as f64 / N_CHECKS,
        violated_checks: violated.into_iter().map(String::from).collect(),
    }
}

fn curve_is_monotone(form: FunctionalForm, params: &[f64], data: &[Point]) -> bool {
    if data.is_empty() {
        return true;
    }
    let pmin = data.iter().map(|d| d.p).fold(f64::INFINITY, f64::min);
    let pmax = data.iter().map(|d| d.p).fold(f64::NEG_INFINITY, f64::max);
    let mut temps: Vec<f64> = data.iter().map(|d| d.t).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup();
    const GRID: usize = 50;
    for t in temps {
        let mut prev: Option<f64> = None;
        for i in 0..GRID {
            let p = pmin + (pmax - pmin) * i as f64 / (GRID - 1) as f64;
            let q = match eval(form, params, p, t) {
                Ok(q) => q,
                Err(_) => return false,
            };
            if let Some(prev) = prev {
                if q < prev - 1e-9 * prev.abs().max(1.0) {
                    return false;
                }
            }
            prev = Some(q);
        }
    }
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterInfo {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormInfo {
    pub id: String,
    pub category: Category,
    pub parameters: Vec<ParameterInfo>,
}

/// Self-describing registry of all forms.
pub fn registry() -> Vec<FormInfo> {
    FunctionalForm::ALL
        .iter()
        .map(|f| FormInfo {
            id: f.id().to_string(),
            category: f.category(),
            parameters: f
                .param_names()
                .iter()
                .zip(f.bounds())
                .map(|(n, (low, high))| ParameterInfo {
                    name: n.to_string(),
                    low,
                    high,
                })
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const T: f64 = 298.15;

    #[test]
    fn langmuir_limits() {
        assert_eq!(eval(F::Langmuir, &[0.5, 0.05], 0.0, T).unwrap(), 0.0);
        let sat = eval(F::Langmuir, &[0.5, 0.05], 1e6, T).unwrap();
        assert!((sat - 0.5).abs() < 1e-4);
        assert_eq!(eval(F::Langmuir, &[0.5, 0.05], 20.0, T).unwrap(), 0.25);
    }

    #[test]
    fn registry_is_complete_and_bounds_valid() {
        assert_eq!(FunctionalForm::ALL.len(), 23);
        assert_eq!(FunctionalForm::classical().len(), 10);
        assert_eq!(FunctionalForm::mathematical().len(), 13);
        for f in FunctionalForm::ALL {
            let b = f.bounds();
            assert_eq!(b.len(), f.n_params(), "{f}");
            assert!(b.iter().all(|(lo, hi)| lo.is_finite() && hi.is_finite() && lo < hi), "{f}");
            assert_eq!(f.id().parse::<FunctionalForm>().unwrap(), f);
        }
        let json = serde_json::to_string(&registry()).unwrap();
        assert!(json.contains("\"RedlichPeterson\""));
    }

    #[test]
    fn classical_parameter_counts() {
        let expect = [
            (F::Henry, 1),
            (F::Langmuir, 2),
            (F::Freundlich, 2),
            (F::Temkin, 2),
            (F::Toth, 3),
            (F::Sips, 3),
            (F::RedlichPeterson, 3),
            (F::DubininRadushkevich, 2),
            // saturation pressure is fitted alongside Q_m and C
            (F::Bet, 3),
        ];
        for (f, n) in expect {
            assert_eq!(f.n_params(), n, "{f}");
        }
    }

    #[test]
    fn documented_bounds() {
        assert_eq!(F::Langmuir.bounds(), vec![(0.001, 100.0), (1e-6, 100.0)]);
        assert_eq!(F::Toth.bounds()[2].1, 1.0);
        assert!(F::Toth.bounds()[2].0 > 0.0);
        assert!(F::Poly4.bounds().iter().all(|&b| b == (-10.0, 10.0)));
        assert_eq!(F::Bet.fit_bounds(50.0)[2].1, 500.0);
    }

    #[test]
    fn domain_errors() {
        assert!(eval(F::Temkin, &[1e4, 0.1], 0.0, T).is_err());
        assert!(eval(F::Bet, &[1.0, 10.0, 50.0], 50.0, T).is_err());
        assert!(eval(F::LogStd, &[1.0, 0.0], 0.0, T).is_err());
        assert!(eval(F::Langmuir, &[1.0, 0.1], -1.0, T).is_err());
        assert_eq!(eval(F::DubininRadushkevich, &[1.0, 1e-7], 0.0, T).unwrap(), 0.0);
        assert!(matches!(eval(F::Sips, &[1.0], 1.0, T), Err(ModelError::ParamCount { .. })));
    }

    #[test]
    fn physics_scores() {
        let data: Vec<Point> = [1.0, 5.0, 20.0, 50.0]
            .iter()
            .map(|&p| Point::new(p, T, 0.4 * p / 50.0))
            .collect();
        let s = validate_physics(F::Langmuir, &[0.5, 0.05], &data);
        assert_eq!(s.score, 1.0);
        let s = validate_physics(F::Freundlich, &[0.1, 0.8], &data);
        assert!((s.score - 0.8).abs() < 1e-12);
        assert_eq!(s.violated_checks, vec!["freundlich_favorability"]);
        let s = validate_physics(F::Langmuir, &[0.3, 0.05], &data);
        assert!(s.violated_checks.contains(&"saturation".to_string()));
    }

    #[test]
    fn langmuir_reductions() {
        for i in 0..50 {
            let p = 0.1 + 4.0 * i as f64;
            let l = eval(F::Langmuir, &[0.7, 0.03], p, T).unwrap();
            let toth = eval(F::Toth, &[0.7, 1.0 / 0.03, 1.0], p, T).unwrap();
            let sips = eval(F::Sips, &[0.7, 0.03, 1.0], p, T).unwrap();
            let rp = eval(F::RedlichPeterson, &[0.7 * 0.03, 0.03, 1.0], p, T).unwrap();
            for v in [toth, sips, rp] {
                assert!((v - l).abs() <= 1e-10 * l.max(1e-300));
            }
        }
    }

    #[test]
    fn low_pressure_slopes_match_henry_coefficients() {
        let h = 1e-7;
        let slope = |f, v: &[f64]| (eval(f, v, 2.0 * h, T).unwrap() - eval(f, v, 0.0, T).unwrap()) / (2.0 * h);
        assert!((slope(F::Langmuir, &[0.6, 0.04]) - 0.6 * 0.04).abs() < 1e-6);
        // Toth's initial slope is q_max / b^(1/t)
        let (q, b, t) = (0.6, 20.0, 0.6);
        assert!((slope(F::Toth, &[q, b, t]) - q / b.powf(1.0 / t)).abs() < 1e-6);
        // Sips with n_s = 1 reduces to Langmuir
        assert!((slope(F::Sips, &[0.6, 0.04, 1.0]) - 0.024).abs() < 1e-6);
    }

    fn draw(f: FunctionalForm, u: &[f64]) -> Vec<f64> {
        f.bounds()
            .iter()
            .zip(u)
            .map(|(&(lo, hi), &u)| {
                if lo > 0.0 && hi / lo > 1e3 {
                    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + u * (hi - lo)
                }
            })
            .collect()
    }

    proptest! {
        #[test]
        fn monotone_families_are_non_decreasing(
            u in proptest::collection::vec(0.0f64..1.0, 3),
            p1 in 0.0f64..200.0,
            dp in 0.0f64..200.0,
        ) {
            for f in [F::Henry, F::Langmuir, F::Freundlich, F::Temkin, F::Toth, F::Sips, F::Hill] {
                let v = draw(f, &u);
                let p1 = if f == F::Temkin { p1.max(1e-3) } else { p1 };
                let a = eval(f, &v, p1, T).unwrap();
                let b = eval(f, &v, p1 + dp, T).unwrap();
                prop_assert!(b >= a - 1e-12 * a.abs().max(1e-300), "{f} {v:?} {p1} {dp}");
            }
        }
    }
}
