//! Van't Hoff regression, isosteric heat and Gibbs-energy classes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::isotherm::ParamVector;
use crate::GAS_CONSTANT as R;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ThermoError {
    #[error("affinity K = {0} is not positive")]
    NonPositiveK(f64),
    #[error("at least two distinct temperatures are required")]
    SingleTemperature,
    #[error("no coverage level could be inverted at every temperature")]
    NoInvertibleLevels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermoParams {
    /// kJ/mol
    pub dh: f64,
    /// J/(mol·K)
    pub ds: f64,
    /// ΔG° in kJ/mol keyed by temperature in kelvin, formatted with `{:?}`.
    pub dg_at: BTreeMap<String, f64>,
    pub r2_fit: f64,
    pub n_temps: usize,
    /// Pre-exponential factor of K(T) = K0·exp(−ΔH°/RT).
    pub k0: f64,
    pub two_point: bool,
}

impl ThermoParams {
    /// ΔG° in kJ/mol at any temperature.
    pub fn dg(&self, t: f64) -> f64 {
        self.dh - t * self.ds / 1000.0
    }
}

/// Least-squares regression of ln K on 1/T.
pub fn vant_hoff(k_by_t: &[(f64, f64)]) -> Result<ThermoParams, ThermoError> {
    if let Some(&(_, k)) = k_by_t.iter().find(|(_, k)| !(*k > 0.0)) {
        return Err(ThermoError::NonPositiveK(k));
    }
    let mut temps: Vec<f64> = k_by_t.iter().map(|(t, _)| *t).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup();
    if temps.len() < 2 {
        return Err(ThermoError::SingleTemperature);
    }
    let x: Vec<f64> = k_by_t.iter().map(|(t, _)| 1.0 / t).collect();
    let y: Vec<f64> = k_by_t.iter().map(|(_, k)| k.ln()).collect();
    let (slope, intercept, r2) = ols(&x, &y);
    let dh = -R * slope / 1000.0;
    let ds = R * intercept;
    let mut out = ThermoParams {
        dh,
        ds,
        dg_at: BTreeMap::new(),
        r2_fit: if k_by_t.len() == 2 { 1.0 } else { r2 },
        n_temps: temps.len(),
        k0: intercept.exp(),
        two_point: temps.len() == 2,
    };
    for t in temps {
        let g = out.dg(t);
        out.dg_at.insert(format!("{t:?}"), g);
    }
    Ok(out)
}

/// Returns (slope, intercept, r²).
fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - (intercept + slope * a);
            e * e
        })
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsostericCurve {
    /// mmol/g
    pub coverage_levels: Vec<f64>,
    /// kJ/mol
    pub q_st: Vec<f64>,
    pub n_levels: usize,
    /// Requested levels that could not be bracketed at every temperature.
    pub omitted: Vec<f64>,
}

impl IsostericCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("coverage,q_st\n");
        for (c, q) in self.coverage_levels.iter().zip(&self.q_st) {
            s.push_str(&format!("{c:?},{q:?}\n"));
        }
        s
    }
}

pub const BRACKET: (f64, f64) = (1e-6, 1e4);

/// Pressure at which the fitted isotherm reaches `q_target`, by bisection
/// over [`BRACKET`].
pub fn invert_pressure(model: &ParamVector, t: f64, q_target: f64) -> Option<f64> {
    let f = |p: f64| model.eval(p, t).ok().map(|q| q - q_target);
    let (mut lo, mut hi) = BRACKET;
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if flo == 0.0 {
        return Some(lo);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-10 * hi {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// q_st at each coverage from the Clausius–Clapeyron slope of ln p on 1/T.
pub fn isosteric_heat(
    isotherms_by_t: &[(f64, ParamVector)],
    coverage_levels: &[f64],
) -> Result<IsostericCurve, ThermoError> {
    let mut temps: Vec<f64> = isotherms_by_t.iter().map(|(t, _)| *t).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup();
    if temps.len() < 2 {
        return Err(ThermoError::SingleTemperature);
    }
    let mut curve = IsostericCurve {
        coverage_levels: vec![],
        q_st: vec![],
        n_levels: 0,
        omitted: vec![],
    };
    for &q in coverage_levels {
        let ps: Option<Vec<f64>> = isotherms_by_t
            .iter()
            .map(|(t, m)| invert_pressure(m, *t, q))
            .collect();
        match ps {
            Some(ps) => {
                let x: Vec<f64> = isotherms_by_t.iter().map(|(t, _)| 1.0 / t).collect();
                let y: Vec<f64> = ps.iter().map(|p| p.ln()).collect();
                let (slope, _, _) = ols(&x, &y);
                curve.coverage_levels.push(q);
                curve.q_st.push(-R * slope / 1000.0);
            }
            None => curve.omitted.push(q),
        }
    }
    curve.n_levels = curve.q_st.len();
    if curve.n_levels == 0 {
        return Err(ThermoError::NoInvertibleLevels);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GibbsClass {
    Strong,
    Moderate,
    Weak,
    NotFavorable,
}

impl fmt::Display for GibbsClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GibbsClass::Strong => "Strong",
            GibbsClass::Moderate => "Moderate",
            GibbsClass::Weak => "Weak",
            GibbsClass::NotFavorable => "NotFavorable",
        })
    }
}

/// Class boundaries belong to the weaker class.
pub fn classify_gibbs(dg: f64) -> GibbsClass {
    if dg < -20.0 {
        GibbsClass::Strong
    } else if dg < -10.0 {
        GibbsClass::Moderate
    } else if dg < 0.0 {
        GibbsClass::Weak
    } else {
        GibbsClass::NotFavorable
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isotherm::FunctionalForm;
    use proptest::prelude::*;

    const TS: [f64; 3] = [298.15, 323.15, 348.15];

    fn k_of(k0: f64, dh_kj: f64, t: f64) -> f64 {
        k0 * (-dh_kj * 1000.0 / (R * t)).exp()
    }

    #[test]
    fn recovers_enthalpy() {
        let pts: Vec<(f64, f64)> = TS.iter().map(|&t| (t, k_of(1e-4, -10.0, t))).collect();
        let tp = vant_hoff(&pts).unwrap();
        assert!((tp.dh + 10.0).abs() < 1e-6);
        assert!(!tp.two_point && tp.n_temps == 3);
        let g = tp.dg_at["298.15"];
        assert_eq!(g, tp.dh - 298.15 * tp.ds / 1000.0);
    }

    #[test]
    fn constant_k_zero_enthalpy_and_errors() {
        let tp = vant_hoff(&[(298.15, 0.5), (323.15, 0.5)]).unwrap();
        assert!(tp.dh.abs() < 1e-12);
        assert!(tp.two_point && tp.r2_fit == 1.0);
        assert_eq!(vant_hoff(&[(300.0, 0.0), (310.0, 1.0)]), Err(ThermoError::NonPositiveK(0.0)));
        assert_eq!(vant_hoff(&[(300.0, 1.0), (300.0, 2.0)]), Err(ThermoError::SingleTemperature));
    }

    #[test]
    fn langmuir_isosteric_heat_matches_enthalpy() {
        let models: Vec<(f64, ParamVector)> = TS
            .iter()
            .map(|&t| (t, ParamVector::new(FunctionalForm::Langmuir, vec![1.0, k_of(1e-3, -10.0, t)]).unwrap()))
            .collect();
        let c = isosteric_heat(&models, &[0.1, 0.3, 0.5, 0.7, 1.5]).unwrap();
        assert_eq!(c.n_levels, 4);
        assert_eq!(c.omitted, vec![1.5]);
        for q in &c.q_st {
            assert!((q - 10.0).abs() < 1e-3, "{q}");
        }
        assert_eq!(
            isosteric_heat(&models[..1], &[0.1]),
            Err(ThermoError::SingleTemperature)
        );
        assert_eq!(isosteric_heat(&models, &[5.0]), Err(ThermoError::NoInvertibleLevels));
    }

    #[test]
    fn gibbs_classes() {
        assert_eq!(classify_gibbs(-16.6), GibbsClass::Moderate);
        assert_eq!(classify_gibbs(-20.0), GibbsClass::Moderate);
        assert_eq!(classify_gibbs(-30.8), GibbsClass::Strong);
        assert_eq!(classify_gibbs(-10.0), GibbsClass::Weak);
        assert_eq!(classify_gibbs(0.0), GibbsClass::NotFavorable);
    }

    proptest! {
        #[test]
        fn vant_hoff_round_trip(lk0 in -12.0f64..0.0, dh in -40.0f64..-2.0) {
            let k0 = 10f64.powf(lk0);
            let pts: Vec<(f64, f64)> = [273.15, 298.15, 323.15, 348.15]
                .iter()
                .map(|&t| (t, k_of(k0, dh, t)))
                .collect();
            let tp = vant_hoff(&pts).unwrap();
            prop_assert!(((tp.dh - dh) / dh).abs() < 1e-6);
            prop_assert!(((tp.k0 - k0) / k0).abs() < 1e-6);
        }

        #[test]
        fn classification_total(dg in -1e6f64..1e6) {
            let c = classify_gibbs(dg);
            prop_assert_eq!(c, classify_gibbs(dg));
        }
    }
}
