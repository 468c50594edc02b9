//! Regression, physics-consistency, uncertainty and residual metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Lithology, QmaxTable, MONOTONICITY_TOLERANCE};
use crate::fit;
use crate::stats;
use crate::uq::{z_for, LEVELS};

/// Rows above this pressure (bar) enter the saturation-consistency rate.
pub const SATURATION_PRESSURE: f64 = 50.0;
/// Penalty steepness of the coverage-width criterion.
pub const CWC_ETA: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("residuals have zero variance")]
    ZeroResidualVariance,
}

fn check(a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub r2: f64,
    pub adj_r2: Option<f64>,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Percent; zero targets are skipped.
    pub mape: Option<f64>,
    pub mape_skipped: usize,
    pub max_error: f64,
    pub explained_variance: f64,
    /// mean(ŷ − y)
    pub mbe: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub kendall: Option<f64>,
}

/// `n_predictors` enters the adjusted r²; it is absent when n ≤ k + 1.
pub fn point_metrics(y: &[f64], pred: &[f64], n_predictors: usize) -> Result<PointMetrics, EvalError> {
    check(y.len(), pred.len())?;
    let n = y.len() as f64;
    let e: Vec<f64> = pred.iter().zip(y).map(|(p, t)| p - t).collect();
    let mse = e.iter().map(|v| v * v).sum::<f64>() / n;
    let r2 = stats::r_squared(y, pred);
    let nonzero: Vec<(f64, f64)> = y.iter().zip(pred).filter(|(t, _)| **t != 0.0).map(|(t, p)| (*t, *p)).collect();
    let var_y = stats::variance(y);
    Ok(PointMetrics {
        r2,
        adj_r2: (n > n_predictors as f64 + 1.0).then(|| 1.0 - (1.0 - r2) * (n - 1.0) / (n - n_predictors as f64 - 1.0)),
        mse,
        rmse: mse.sqrt(),
        mae: e.iter().map(|v| v.abs()).sum::<f64>() / n,
        mape: (!nonzero.is_empty())
            .then(|| 100.0 * nonzero.iter().map(|(t, p)| ((t - p) / t).abs()).sum::<f64>() / nonzero.len() as f64),
        mape_skipped: y.len() - nonzero.len(),
        max_error: e.iter().fold(0.0, |m, v| m.max(v.abs())),
        explained_variance: if var_y > 0.0 {
            1.0 - stats::variance(&e) / var_y
        } else if stats::variance(&e) == 0.0 {
            1.0
        } else {
            0.0
        },
        mbe: stats::mean(&e),
        pearson: stats::pearson(y, pred),
        spearman: stats::spearman(y, pred),
        kendall: stats::kendall(y, pred),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsMetrics {
    pub negative_rate: f64,
    pub upper_violation_rate: f64,
    /// Absent when no sample has two pressures at one temperature.
    pub monotonicity_score: Option<f64>,
    /// Absent when no row lies above the saturation pressure.
    pub saturation_consistency: Option<f64>,
}

/// Row context for physics metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RowContext<'a> {
    pub sample_key: &'a [String],
    pub lithology: &'a [Lithology],
    pub pressure: &'a [f64],
    pub temperature: &'a [f64],
}

/// Monotonicity is evaluated on adjacent pairs after sorting each
/// (sample, temperature) isotherm by pressure.
pub fn physics_metrics(pred: &[f64], ctx: &RowContext<'_>, qmax: &QmaxTable) -> Result<PhysicsMetrics, EvalError> {
    check(pred.len(), ctx.pressure.len())?;
    check(pred.len(), ctx.lithology.len())?;
    check(pred.len(), ctx.sample_key.len())?;
    check(pred.len(), ctx.temperature.len())?;
    let n = pred.len() as f64;
    let q = |i: usize| qmax.get(ctx.lithology[i]);
    let negative = pred.iter().filter(|v| **v < 0.0).count();
    let upper = (0..pred.len()).filter(|&i| pred[i] > q(i)).count();
    let mut groups: BTreeMap<(&str, u64), Vec<usize>> = BTreeMap::new();
    for i in 0..pred.len() {
        groups.entry((ctx.sample_key[i].as_str(), ctx.temperature[i].to_bits())).or_default().push(i);
    }
    let (mut pairs, mut ok) = (0usize, 0usize);
    for idx in groups.values_mut() {
        idx.sort_by(|&a, &b| ctx.pressure[a].total_cmp(&ctx.pressure[b]).then(a.cmp(&b)));
        for w in idx.windows(2) {
            pairs += 1;
            if pred[w[1]] - pred[w[0]] >= -MONOTONICITY_TOLERANCE {
                ok += 1;
            }
        }
    }
    let sat: Vec<usize> = (0..pred.len()).filter(|&i| ctx.pressure[i] > SATURATION_PRESSURE).collect();
    let consistent = sat.iter().filter(|&&i| pred[i] >= 0.7 * q(i) && pred[i] <= q(i)).count();
    Ok(PhysicsMetrics {
        negative_rate: negative as f64 / n,
        upper_violation_rate: upper as f64 / n,
        monotonicity_score: (pairs > 0).then(|| ok as f64 / pairs as f64),
        saturation_consistency: (!sat.is_empty()).then(|| consistent as f64 / sat.len() as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqMetrics {
    pub coverage68: f64,
    pub coverage95: f64,
    pub coverage99: f64,
    /// Mean |coverage − nominal| over the three levels.
    pub calibration_error: f64,
    /// Mean σ.
    pub sharpness: f64,
    /// Mean width of the 95% interval.
    pub mpiw: f64,
    /// Coverage-width criterion at 95% on the range-normalised width.
    pub cwc: f64,
    /// Pearson(σ, |y − mean|).
    pub unc_err_corr: Option<f64>,
}

/// Interval membership `lo ≤ y ≤ hi`.
pub fn interval_coverage(lo: &[f64], hi: &[f64], y: &[f64]) -> f64 {
    let hit = lo.iter().zip(hi).zip(y).filter(|((l, h), v)| **l <= **v && **v <= **h).count();
    hit as f64 / y.len().max(1) as f64
}

pub fn cwc(mpiw_norm: f64, coverage: f64, nominal: f64) -> f64 {
    let penalty = if coverage < nominal { (-CWC_ETA * (coverage - nominal)).exp() } else { 0.0 };
    mpiw_norm * (1.0 + penalty)
}

/// Intervals are mean ± z(level)·σ.
pub fn uq_metrics(mean: &[f64], sigma: &[f64], y: &[f64]) -> Result<UqMetrics, EvalError> {
    check(mean.len(), y.len())?;
    check(sigma.len(), y.len())?;
    let cov = |level: f64| {
        let z = z_for(level);
        let lo: Vec<f64> = mean.iter().zip(sigma).map(|(m, s)| m - z * s).collect();
        let hi: Vec<f64> = mean.iter().zip(sigma).map(|(m, s)| m + z * s).collect();
        interval_coverage(&lo, &hi, y)
    };
    let c = LEVELS.map(cov);
    let z95 = z_for(0.95);
    let mpiw = sigma.iter().map(|s| 2.0 * z95 * s).sum::<f64>() / y.len() as f64;
    let range = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - y.iter().cloned().fold(f64::INFINITY, f64::min);
    let norm = if range > 0.0 { mpiw / range } else { mpiw };
    let abs_err: Vec<f64> = mean.iter().zip(y).map(|(m, v)| (v - m).abs()).collect();
    Ok(UqMetrics {
        coverage68: c[0],
        coverage95: c[1],
        coverage99: c[2],
        calibration_error: c.iter().zip(LEVELS).map(|(c, l)| (c - l).abs()).sum::<f64>() / 3.0,
        sharpness: stats::mean(sigma),
        mpiw,
        cwc: cwc(norm, c[1], 0.95),
        unc_err_corr: stats::pearson(sigma, &abs_err),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualMetrics {
    pub durbin_watson: f64,
    pub jarque_bera: (f64, f64),
    /// Fewer than 8 residuals; the asymptotic p-value is unreliable.
    pub small_sample: bool,
    /// Spearman(|e|, ŷ).
    pub heteroscedasticity_rho: Option<f64>,
}

/// Jarque–Bera statistic from population skewness and kurtosis, with its
/// χ²(2) upper-tail p-value exp(−JB/2).
pub fn jarque_bera(e: &[f64]) -> Result<(f64, f64), EvalError> {
    if e.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if e.iter().all(|v| *v == e[0]) {
        return Err(EvalError::ZeroResidualVariance);
    }
    let n = e.len() as f64;
    let m = stats::mean(e);
    let m2 = e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = e.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    let m4 = e.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    let jb = n / 6.0 * (skew * skew + (kurt - 3.0).powi(2) / 4.0);
    Ok((jb, (-jb / 2.0).exp()))
}

/// `residuals` must already be ordered by pressure.
pub fn residual_tests(residuals: &[f64], pred: &[f64]) -> Result<ResidualMetrics, EvalError> {
    check(residuals.len(), pred.len())?;
    let jb = jarque_bera(residuals)?;
    let abs: Vec<f64> = residuals.iter().map(|e| e.abs()).collect();
    Ok(ResidualMetrics {
        durbin_watson: fit::durbin_watson(residuals).ok_or(EvalError::ZeroResidualVariance)?,
        jarque_bera: jb,
        small_sample: residuals.len() < 8,
        heteroscedasticity_rho: stats::spearman(&abs, pred),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    #[serde(flatten)]
    pub point: PointMetrics,
    pub physics: PhysicsMetrics,
    pub uq: Option<UqMetrics>,
    pub residual: Option<ResidualMetrics>,
    /// Number of scalar metrics reported.
    pub metric_count: usize,
    /// Normality is tested with Jarque–Bera instead of Shapiro–Wilk or
    /// Anderson–Darling.
    pub normality_test: String,
}

/// Full battery. `sigma` enables the uncertainty block; residuals are
/// ordered by pressure (ties by row index) before the residual tests, and
/// that block is absent when residual variance is zero.
pub fn evaluate(
    y: &[f64],
    pred: &[f64],
    sigma: Option<&[f64]>,
    ctx: &RowContext<'_>,
    qmax: &QmaxTable,
    n_predictors: usize,
) -> Result<MetricReport, EvalError> {
    let point = point_metrics(y, pred, n_predictors)?;
    let physics = physics_metrics(pred, ctx, qmax)?;
    let uq = sigma.map(|s| uq_metrics(pred, s, y)).transpose()?;
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| ctx.pressure[a].total_cmp(&ctx.pressure[b]).then(a.cmp(&b)));
    let resid: Vec<f64> = order.iter().map(|&i| y[i] - pred[i]).collect();
    let ordered_pred: Vec<f64> = order.iter().map(|&i| pred[i]).collect();
    let residual = match residual_tests(&resid, &ordered_pred) {
        Ok(r) => Some(r),
        Err(EvalError::ZeroResidualVariance) => None,
        Err(e) => return Err(e),
    };
    // regression and correlation (12), physics (4), uq (8), residual (4)
    let metric_count = 12 + 4 + if uq.is_some() { 8 } else { 0 } + if residual.is_some() { 4 } else { 0 };
    Ok(MetricReport {
        n: y.len(),
        point,
        physics,
        uq,
        residual,
        metric_count,
        normality_test: "jarque_bera".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn perfect_and_mean_predictions() {
        let y = [0.1, 0.4, 0.2, 0.9];
        let m = point_metrics(&y, &y, 1).unwrap();
        assert_eq!((m.r2, m.rmse, m.mae, m.mbe), (1.0, 0.0, 0.0, 0.0));
        assert_relative_eq!(m.pearson.unwrap(), 1.0, epsilon = 1e-12);
        let mean = stats::mean(&y);
        assert_eq!(point_metrics(&y, &[mean; 4], 1).unwrap().r2, 0.0);
        assert_eq!(point_metrics(&y, &y[..3], 1), Err(EvalError::LengthMismatch(4, 3)));
        assert_eq!(point_metrics(&[], &[], 1), Err(EvalError::EmptyInput));
    }

    #[test]
    fn constant_offset() {
        let y = [0.1, 0.4, 0.2, 0.9, 0.0];
        let p: Vec<f64> = y.iter().map(|v| v + 0.01).collect();
        let m = point_metrics(&y, &p, 1).unwrap();
        assert_relative_eq!(m.mbe, 0.01, epsilon = 1e-15);
        assert_relative_eq!(m.mae, 0.01, epsilon = 1e-15);
        let mean = stats::mean(&y);
        let ss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        assert_relative_eq!(m.r2, 1.0 - 5.0 * 1e-4 / ss, epsilon = 1e-12);
        assert_eq!(m.mape_skipped, 1);
        assert_relative_eq!(m.rmse * m.rmse, m.mse, epsilon = 1e-15);
    }

    fn ctx<'a>(keys: &'a [String], lith: &'a [Lithology], p: &'a [f64], t: &'a [f64]) -> RowContext<'a> {
        RowContext {
            sample_key: keys,
            lithology: lith,
            pressure: p,
            temperature: t,
        }
    }

    #[test]
    fn physics_block() {
        let keys: Vec<String> = vec!["a".into(); 4];
        let lith = [Lithology::Clay; 4];
        let p = [60.0, 10.0, 30.0, 80.0];
        let t = [300.0; 4];
        let pred = [0.9, 0.2, 0.5, 1.0];
        let m = physics_metrics(&pred, &ctx(&keys, &lith, &p, &t), &QmaxTable::default()).unwrap();
        assert_eq!(m.monotonicity_score, Some(1.0));
        assert_eq!(m.saturation_consistency, Some(1.0));
        assert_eq!(m.negative_rate, 0.0);
        let bad = [0.5, 0.2, 0.6, 1.3];
        let m = physics_metrics(&bad, &ctx(&keys, &lith, &p, &t), &QmaxTable::default()).unwrap();
        assert_eq!(m.monotonicity_score, Some(2.0 / 3.0));
        assert_eq!(m.upper_violation_rate, 0.25);
        assert_eq!(m.saturation_consistency, Some(0.0));
        let low = [0.1, 0.2, 0.3, 0.4];
        let lp = [1.0, 2.0, 3.0, 4.0];
        let m = physics_metrics(&low, &ctx(&keys, &lith, &lp, &t), &QmaxTable::default()).unwrap();
        assert_eq!(m.saturation_consistency, None);
    }

    #[test]
    fn classical_isotherm_is_monotone() {
        use crate::isotherm::{FunctionalForm, ParamVector};
        let m = ParamVector::new(FunctionalForm::Sips, vec![1.0, 0.05, 1.3]).unwrap();
        let p: Vec<f64> = (1..=20).map(|i| i as f64 * 10.0).collect();
        let pred: Vec<f64> = p.iter().map(|&x| m.eval(x, 300.0).unwrap()).collect();
        let keys = vec!["s".to_string(); 20];
        let lith = [Lithology::Coal; 20];
        let t = [300.0; 20];
        let r = physics_metrics(&pred, &ctx(&keys, &lith, &p, &t), &QmaxTable::default()).unwrap();
        assert_eq!(r.monotonicity_score, Some(1.0));
    }

    #[test]
    fn coverage_conventions() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(interval_coverage(&y, &y, &y), 1.0);
        let u = uq_metrics(&y, &[0.0; 3], &y).unwrap();
        assert_eq!((u.coverage95, u.mpiw), (1.0, 0.0));
        let u = uq_metrics(&y, &[10.0; 3], &y).unwrap();
        assert_eq!((u.coverage68, u.coverage95, u.coverage99), (1.0, 1.0, 1.0));
        assert_eq!(cwc(0.2, 0.96, 0.95), 0.2);
        assert_relative_eq!(cwc(0.2, 0.85, 0.95), 0.2 * (1.0 + 5f64.exp()), epsilon = 1e-12);
    }

    #[test]
    fn gaussian_coverage() {
        let mut rng = crate::seed::rng(1);
        let n = 2000;
        let sigma: Vec<f64> = (0..n).map(|i| 0.05 + 0.1 * (i % 7) as f64 / 7.0).collect();
        let y: Vec<f64> = sigma
            .iter()
            .map(|s| {
                let e: f64 = StandardNormal.sample(&mut rng);
                s * e
            })
            .collect();
        let u = uq_metrics(&vec![0.0; n], &sigma, &y).unwrap();
        assert!((0.93..=0.97).contains(&u.coverage95), "{}", u.coverage95);
        assert!(u.coverage99 >= u.coverage95 && u.coverage95 >= u.coverage68);
    }

    #[test]
    fn residual_examples() {
        assert_eq!(fit::durbin_watson(&[0.5; 6]), Some(0.0));
        assert_eq!(fit::durbin_watson(&[1.0, -1.0, 1.0, -1.0]), Some(3.0));
        assert_eq!(residual_tests(&[0.2; 10], &[1.0; 10]), Err(EvalError::ZeroResidualVariance));
        let r = residual_tests(&[1.0, -1.0, 1.0, -1.0], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(r.small_sample);
    }

    #[test]
    fn jarque_bera_calibrated_on_normal_residuals() {
        let mut pass = 0;
        for s in 0..100 {
            let mut rng = crate::seed::rng(1000 + s);
            let e: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
            if jarque_bera(&e).unwrap().1 > 0.01 {
                pass += 1;
            }
        }
        assert!(pass >= 95, "{pass}");
    }

    #[test]
    fn report_serialises_with_field_names() {
        let y = [0.1, 0.3, 0.5, 0.7, 0.8, 0.85, 0.9, 0.95];
        let p = [0.12, 0.28, 0.52, 0.69, 0.83, 0.84, 0.91, 0.94];
        let keys = vec!["k".to_string(); 8];
        let lith = [Lithology::Shale; 8];
        let pr: Vec<f64> = (1..=8).map(|i| i as f64 * 10.0).collect();
        let t = [300.0; 8];
        let r = evaluate(&y, &p, Some(&[0.02; 8]), &ctx(&keys, &lith, &pr, &t), &QmaxTable::default(), 2).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for k in ["r2", "adj_r2", "mse", "rmse", "mae", "mape", "max_error", "explained_variance", "mbe", "pearson", "spearman", "kendall"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        for k in ["negative_rate", "upper_violation_rate", "monotonicity_score", "saturation_consistency"] {
            assert!(v["physics"].get(k).is_some(), "{k}");
        }
        for k in ["coverage68", "coverage95", "coverage99", "calibration_error", "sharpness", "mpiw", "cwc", "unc_err_corr"] {
            assert!(v["uq"].get(k).is_some(), "{k}");
        }
        for k in ["durbin_watson", "jarque_bera", "heteroscedasticity_rho"] {
            assert!(v["residual"].get(k).is_some(), "{k}");
        }
        assert_eq!(r.metric_count, 28);
    }

    proptest! {
        #[test]
        fn r2_identity_and_dw_range(y in proptest::collection::vec(-5.0f64..5.0, 3..40), noise in proptest::collection::vec(-1.0f64..1.0, 40)) {
            let p: Vec<f64> = y.iter().zip(&noise).map(|(a, b)| a + b).collect();
            let m = point_metrics(&y, &p, 1).unwrap();
            let mean = stats::mean(&y);
            let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            let ss_res: f64 = y.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
            if ss_tot > 1e-9 {
                prop_assert!((m.r2 + ss_res / ss_tot - 1.0).abs() < 1e-12);
            }
            let e: Vec<f64> = y.iter().zip(&p).map(|(a, b)| a - b).collect();
            if let Some(dw) = fit::durbin_watson(&e) {
                prop_assert!((0.0..=4.0).contains(&dw));
            }
        }

        #[test]
        fn coverage_nested(seed in 0u64..200) {
            let mut rng = crate::seed::rng(seed);
            let n = 50;
            let sigma: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
            let u = uq_metrics(&vec![0.0; n], &sigma, &y).unwrap();
            prop_assert!(u.coverage99 >= u.coverage95 && u.coverage95 >= u.coverage68);
        }
    }
}
