//! Differential-evolution fitting, information criteria, model selection,
//! bootstrap intervals, k-fold cross-validation and the aggregated study.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::isotherm::{self, FunctionalForm, ParamVector, PhysicsScore, Point};
use crate::seed;
use crate::stats;

/// Floor applied to residual sums of squares before taking logarithms.
pub const RSS_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("{form}: {n} points cannot identify {k} parameters")]
    InsufficientData { form: FunctionalForm, n: usize, k: usize },
    #[error("{0}: the form cannot be evaluated anywhere in its bounds on these data")]
    AllCostsInfinite(FunctionalForm),
    #[error("no converged fits to rank")]
    NoConvergedFits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeConfig {
    pub population: usize,
    pub max_generations: usize,
    /// Mutation factor.
    pub f: f64,
    /// Crossover rate.
    pub cr: f64,
    pub seed: u64,
    /// Relative improvement of the best cost below which a window counts as
    /// stagnant.
    pub tol: f64,
    pub stagnation_window: usize,
}

impl DeConfig {
    pub fn for_params(n_params: usize, seed: u64) -> Self {
        DeConfig {
            population: (10 * n_params).max(15),
            max_generations: 300,
            f: 0.8,
            cr: 0.9,
            seed,
            tol: 1e-10,
            stagnation_window: 30,
        }
    }

    fn validate(&self, n_params: usize) -> Result<(), FitError> {
        if !(self.f > 0.0 && self.f <= 2.0) {
            return Err(FitError::InvalidConfig(format!("F = {} outside (0, 2]", self.f)));
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return Err(FitError::InvalidConfig(format!("CR = {} outside [0, 1]", self.cr)));
        }
        if self.population < (4 * n_params).max(4) {
            return Err(FitError::InvalidConfig(format!(
                "population {} below 4 x {n_params} parameters",
                self.population
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeResult {
    pub best: Vec<f64>,
    pub cost: f64,
    pub generations: usize,
    /// False when the generation budget ran out before the best cost stagnated.
    pub converged: bool,
    /// Best cost after initialisation and after each generation.
    pub history: Vec<f64>,
}

/// rand/1/bin differential evolution minimising `objective` inside `bounds`.
///
/// Non-finite costs count as +∞. Mutant components that leave the box are
/// redrawn uniformly inside it.
pub fn differential_evolution<F>(
    objective: F,
    bounds: &[(f64, f64)],
    config: &DeConfig,
) -> Result<DeResult, FitError>
where
    F: Fn(&[f64]) -> f64,
{
    let d = bounds.len();
    config.validate(d)?;
    if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return Err(FitError::InvalidConfig("bounds must be finite with low <= high".into()));
    }
    let cost = |x: &[f64]| {
        let c = objective(x);
        if c.is_finite() {
            c
        } else {
            f64::INFINITY
        }
    };
    let mut rng = seed::rng(config.seed);
    let np = config.population;
    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| bounds.iter().map(|&(lo, hi)| lo + rng.random::<f64>() * (hi - lo)).collect())
        .collect();
    let mut costs: Vec<f64> = pop.iter().map(|x| cost(x)).collect();
    let mut best_i = argmin(&costs);
    let mut history = vec![costs[best_i]];
    let mut trial = vec![0.0; d];
    let mut generations = 0;
    let mut converged = false;

    for g in 1..=config.max_generations {
        for i in 0..np {
            let (r1, r2, r3) = distinct_three(&mut rng, np, i);
            let j_rand = rng.random_range(0..d);
            for j in 0..d {
                if j == j_rand || rng.random::<f64>() < config.cr {
                    let v = pop[r1][j] + config.f * (pop[r2][j] - pop[r3][j]);
                    let (lo, hi) = bounds[j];
                    trial[j] = if v < lo || v > hi {
                        lo + rng.random::<f64>() * (hi - lo)
                    } else {
                        v
                    };
                } else {
                    trial[j] = pop[i][j];
                }
            }
            let c = cost(&trial);
            if c <= costs[i] {
                pop[i].copy_from_slice(&trial);
                costs[i] = c;
                if c < costs[best_i] {
                    best_i = i;
                }
            }
        }
        history.push(costs[best_i]);
        generations = g;
        let w = config.stagnation_window;
        if g >= w {
            let old = history[g - w];
            let new = history[g];
            if new.is_finite() && old - new <= config.tol * old.abs() {
                converged = true;
                break;
            }
        }
    }
    Ok(DeResult {
        best: pop[best_i].clone(),
        cost: costs[best_i],
        generations,
        converged,
        history,
    })
}

fn argmin(v: &[f64]) -> usize {
    let mut b = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[b] {
            b = i;
        }
    }
    b
}

fn distinct_three(rng: &mut seed::Rng, n: usize, exclude: usize) -> (usize, usize, usize) {
    let mut pick = |taken: &[usize]| loop {
        let r = rng.random_range(0..n);
        if r != exclude && !taken.contains(&r) {
            return r;
        }
    };
    let a = pick(&[]);
    let b = pick(&[a]);
    let c = pick(&[a, b]);
    (a, b, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoCriteria {
    pub aic: f64,
    pub bic: f64,
    /// Absent when n ≤ k + 1.
    pub aicc: Option<f64>,
}

pub fn information_criteria(rss: f64, n: usize, k: usize) -> InfoCriteria {
    let nf = n as f64;
    let kf = k as f64;
    let base = nf * (rss.max(RSS_FLOOR) / nf).ln();
    let aic = base + 2.0 * kf;
    let bic = base + kf * nf.ln();
    let aicc = (n > k + 1).then(|| aic + 2.0 * kf * (kf + 1.0) / (nf - kf - 1.0));
    InfoCriteria { aic, bic, aicc }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub form: FunctionalForm,
    pub params: ParamVector,
    pub rss: f64,
    pub r2: f64,
    pub rmse: f64,
    pub aic: f64,
    pub bic: f64,
    pub aicc: Option<f64>,
    pub physics: PhysicsScore,
    pub n_points: usize,
    pub generations: usize,
    pub converged: bool,
}

impl FittedModel {
    pub fn predict(&self, p: f64, t: f64) -> Result<f64, isotherm::ModelError> {
        self.params.eval(p, t)
    }
}

/// Parameters spanning more than three decades with a positive lower bound
/// are searched on a log scale.
fn log_scaled(bounds: &[(f64, f64)]) -> Vec<bool> {
    bounds.iter().map(|&(lo, hi)| lo > 0.0 && hi / lo > 1e3).collect()
}

fn to_search(bounds: &[(f64, f64)], logs: &[bool]) -> Vec<(f64, f64)> {
    bounds
        .iter()
        .zip(logs)
        .map(|(&(lo, hi), &l)| if l { (lo.ln(), hi.ln()) } else { (lo, hi) })
        .collect()
}

fn from_search(x: &[f64], bounds: &[(f64, f64)], logs: &[bool]) -> Vec<f64> {
    x.iter()
        .zip(logs)
        .zip(bounds)
        .map(|((&v, &l), &(lo, hi))| if l { v.exp().clamp(lo, hi) } else { v })
        .collect()
}

pub fn rss(form: FunctionalForm, params: &[f64], data: &[Point]) -> f64 {
    let mut s = 0.0;
    for d in data {
        match isotherm::eval(form, params, d.p, d.t) {
            Ok(q) => s += (d.q - q) * (d.q - q),
            Err(_) => return f64::INFINITY,
        }
    }
    s
}

/// Least-squares fit of one form to one isotherm.
pub fn fit_sample(data: &[Point], form: FunctionalForm, seed: u64) -> Result<FittedModel, FitError> {
    let k = form.n_params();
    if data.len() < k + 1 {
        return Err(FitError::InsufficientData { form, n: data.len(), k });
    }
    let mut data = data.to_vec();
    data.sort_by(|a, b| a.p.total_cmp(&b.p));
    let max_p = data.iter().map(|d| d.p).fold(0.0, f64::max);
    let bounds = form.fit_bounds(max_p);
    let logs = log_scaled(&bounds);
    let search = to_search(&bounds, &logs);
    let cfg = DeConfig::for_params(k, seed);
    let de = differential_evolution(
        |x| rss(form, &from_search(x, &bounds, &logs), &data),
        &search,
        &cfg,
    )?;
    if !de.cost.is_finite() {
        return Err(FitError::AllCostsInfinite(form));
    }
    let values = from_search(&de.best, &bounds, &logs);
    Ok(summarize(form, values, &data, de.generations, de.converged))
}

fn summarize(
    form: FunctionalForm,
    values: Vec<f64>,
    data: &[Point],
    generations: usize,
    converged: bool,
) -> FittedModel {
    let n = data.len();
    let k = form.n_params();
    let rss_v = rss(form, &values, data);
    let y: Vec<f64> = data.iter().map(|d| d.q).collect();
    let my = stats::mean(&y);
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - rss_v / ss_tot
    } else if rss_v <= RSS_FLOOR {
        1.0
    } else {
        0.0
    };
    let ic = information_criteria(rss_v, n, k);
    let physics = isotherm::validate_physics(form, &values, data);
    FittedModel {
        form,
        params: ParamVector { form, values },
        rss: rss_v,
        r2,
        rmse: (rss_v / n as f64).sqrt(),
        aic: ic.aic,
        bic: ic.bic,
        aicc: ic.aicc,
        physics,
        n_points: n,
        generations,
        converged,
    }
}

/// Seed for a (sample, form) fitting task.
pub fn task_seed(base: u64, sample_key: &str, form: FunctionalForm) -> u64 {
    seed::derive(base, &[sample_key, form.id()])
}

/// Fits several forms to one isotherm in parallel.
pub fn fit_forms(
    data: &[Point],
    forms: &[FunctionalForm],
    sample_key: &str,
    base_seed: u64,
) -> Vec<Result<FittedModel, FitError>> {
    forms
        .par_iter()
        .map(|&f| fit_sample(data, f, task_seed(base_seed, sample_key, f)))
        .collect()
}

/// Ranks fits: physics-compliant before flagged, then ascending AIC, higher
/// physics score, fewer parameters.
pub fn select_best_model(fits: &[FittedModel]) -> Result<Vec<FittedModel>, FitError> {
    let mut ranked: Vec<FittedModel> = fits.iter().filter(|f| f.aic.is_finite()).cloned().collect();
    if ranked.is_empty() {
        return Err(FitError::NoConvergedFits);
    }
    ranked.sort_by(|a, b| {
        a.physics
            .flagged()
            .cmp(&b.physics.flagged())
            .then(a.aic.total_cmp(&b.aic))
            .then(b.physics.score.total_cmp(&a.physics.score))
            .then(a.form.n_params().cmp(&b.form.n_params()))
    });
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInterval {
    pub name: String,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCis {
    pub form: FunctionalForm,
    pub intervals: Vec<ParamInterval>,
    pub n_boot: usize,
    pub n_success: usize,
    pub seed: u64,
    /// Set when more than 20% of the refits failed.
    pub too_many_failures: bool,
}

/// Percentile bootstrap: resample points with replacement, refit, and take
/// the 2.5 / 97.5 percentiles of each parameter over successful refits.
pub fn bootstrap_ci(
    data: &[Point],
    form: FunctionalForm,
    n_boot: usize,
    seed: u64,
) -> Result<ParamCis, FitError> {
    let full = fit_sample(data, form, seed::derive(seed, &["full"]))?;
    let samples: Vec<Option<Vec<f64>>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let s = seed::derive_indexed(seed, b as u64);
            let mut rng = seed::rng(s);
            let resample: Vec<Point> = (0..data.len()).map(|_| data[rng.random_range(0..data.len())]).collect();
            fit_sample(&resample, form, s).ok().map(|m| m.params.values)
        })
        .collect();
    let ok: Vec<&Vec<f64>> = samples.iter().flatten().collect();
    let intervals = form
        .param_names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = ok.iter().map(|v| v[j]).collect();
            let (lo, hi) = if col.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let s = stats::sorted_copy(&col);
                (stats::quantile_sorted(&s, 0.025), stats::quantile_sorted(&s, 0.975))
            };
            ParamInterval {
                name: name.to_string(),
                estimate: full.params.values[j],
                lo,
                hi,
            }
        })
        .collect();
    Ok(ParamCis {
        form,
        intervals,
        n_boot,
        n_success: ok.len(),
        seed,
        too_many_failures: (ok.len() as f64) < 0.8 * n_boot as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvStats {
    pub k: usize,
    pub mean_r2: f64,
    pub std_r2: f64,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub fold_r2: Vec<Option<f64>>,
    pub fold_rmse: Vec<f64>,
    /// r² of all out-of-fold predictions pooled together.
    pub pooled_r2: f64,
    /// Mean cross-validated r² below zero.
    pub negative: bool,
}

/// Seeded k-fold assignment: shuffled positions dealt round-robin.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Aggregates per-fold out-of-fold predictions.
///
/// Per-fold r² uses the fold's own mean and is undefined for folds whose
/// targets are constant (e.g. single-point folds); the mean over defined folds
/// falls back to the pooled out-of-fold r² when no fold defines it.
pub fn summarize_folds(k: usize, folds: &[(Vec<f64>, Vec<f64>)]) -> CvStats {
    let mut fold_r2 = Vec::with_capacity(k);
    let mut fold_rmse = Vec::with_capacity(k);
    let (mut all_y, mut all_p) = (Vec::new(), Vec::new());
    for (y, p) in folds {
        let m = stats::mean(y);
        let ss: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
        let res: f64 = y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
        fold_r2.push((ss > 0.0).then(|| 1.0 - res / ss));
        fold_rmse.push((res / y.len() as f64).sqrt());
        all_y.extend_from_slice(y);
        all_p.extend_from_slice(p);
    }
    let pooled_r2 = stats::r_squared(&all_y, &all_p);
    let defined: Vec<f64> = fold_r2.iter().flatten().copied().collect();
    let (mean_r2, std_r2) = if defined.is_empty() {
        (pooled_r2, 0.0)
    } else {
        (stats::mean(&defined), stats::sample_std(&defined))
    };
    CvStats {
        k,
        mean_r2,
        std_r2,
        mean_rmse: stats::mean(&fold_rmse),
        std_rmse: stats::sample_std(&fold_rmse),
        fold_r2,
        fold_rmse,
        pooled_r2,
        negative: mean_r2 < 0.0,
    }
}

pub fn kfold_cv(data: &[Point], form: FunctionalForm, k: usize, seed: u64) -> Result<CvStats, FitError> {
    let n = data.len();
    let np = form.n_params();
    if k < 2 || n < k || n - n.div_ceil(k) < np + 1 {
        return Err(FitError::InsufficientData { form, n, k: np });
    }
    let fold = fold_assignment(n, k, seed);
    let results: Vec<Result<(Vec<f64>, Vec<f64>), FitError>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<Point> = (0..n).filter(|&i| fold[i] != f).map(|i| data[i]).collect();
            let test: Vec<Point> = (0..n).filter(|&i| fold[i] == f).map(|i| data[i]).collect();
            let m = fit_sample(&train, form, seed::derive_indexed(seed, f as u64))?;
            let y: Vec<f64> = test.iter().map(|d| d.q).collect();
            let p: Vec<f64> = test
                .iter()
                .map(|d| m.predict(d.p, d.t).unwrap_or(f64::NAN))
                .collect();
            Ok((y, p))
        })
        .collect();
    let folds = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(summarize_folds(k, &folds))
}

/// Residual-bias pressure bins (bar): <10, 10–25, 25–50, 50–100, 100–200, >200.
pub const PRESSURE_BINS: [(f64, f64); 6] = [
    (0.0, 10.0),
    (10.0, 25.0),
    (25.0, 50.0),
    (50.0, 100.0),
    (100.0, 200.0),
    (200.0, f64::INFINITY),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinBias {
    pub lo: f64,
    /// Upper bound; absent for the open last bin.
    pub hi: Option<f64>,
    pub n: usize,
    /// Mean of observed − predicted; absent for empty bins.
    pub mean_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedCell {
    pub group: String,
    pub form: FunctionalForm,
    pub n_points: usize,
    pub train_r2: f64,
    pub params: Vec<f64>,
    pub cv: Option<CvStats>,
    /// 2.5 / 97.5 percentiles of refit r² over bootstrap resamples.
    pub r2_ci: Option<(f64, f64)>,
    pub durbin_watson: Option<f64>,
    pub residual_bias: Vec<BinBias>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedReport {
    pub cells: Vec<Result<AggregatedCell, String>>,
}

impl AggregatedReport {
    /// Highest training r² among successful cells of a group.
    pub fn best_r2(&self, group: &str) -> Option<f64> {
        self.cells
            .iter()
            .flatten()
            .filter(|c| c.group == group)
            .map(|c| c.train_r2)
            .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedConfig {
    pub cv_folds: usize,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for AggregatedConfig {
    fn default() -> Self {
        AggregatedConfig {
            cv_folds: 5,
            n_boot: 1000,
            seed: 42,
        }
    }
}

/// Pools every point of each group and fits each form to the pool.
pub fn fit_aggregated(
    groups: &[(String, Vec<Point>)],
    forms: &[FunctionalForm],
    config: &AggregatedConfig,
) -> AggregatedReport {
    let tasks: Vec<(&String, &Vec<Point>, FunctionalForm)> = groups
        .iter()
        .flat_map(|(g, pts)| forms.iter().map(move |&f| (g, pts, f)))
        .collect();
    let cells = tasks
        .par_iter()
        .map(|&(g, pts, f)| aggregated_cell(g, pts, f, config).map_err(|e| e.to_string()))
        .collect();
    AggregatedReport { cells }
}

fn aggregated_cell(
    group: &str,
    pts: &[Point],
    form: FunctionalForm,
    config: &AggregatedConfig,
) -> Result<AggregatedCell, FitError> {
    let s = task_seed(config.seed, group, form);
    let model = fit_sample(pts, form, s)?;
    let cv = if config.cv_folds >= 2 {
        kfold_cv(pts, form, config.cv_folds, seed::derive(s, &["cv"])).ok()
    } else {
        None
    };
    let r2_ci = if config.n_boot > 0 {
        let r2s: Vec<f64> = (0..config.n_boot)
            .into_par_iter()
            .filter_map(|b| {
                let bs = seed::derive_indexed(seed::derive(s, &["boot"]), b as u64);
                let mut rng = seed::rng(bs);
                let resample: Vec<Point> = (0..pts.len()).map(|_| pts[rng.random_range(0..pts.len())]).collect();
                fit_sample(&resample, form, bs).ok().map(|m| m.r2)
            })
            .collect();
        (!r2s.is_empty()).then(|| {
            let s = stats::sorted_copy(&r2s);
            (stats::quantile_sorted(&s, 0.025), stats::quantile_sorted(&s, 0.975))
        })
    } else {
        None
    };
    let mut sorted = pts.to_vec();
    sorted.sort_by(|a, b| a.p.total_cmp(&b.p));
    let resid: Vec<f64> = sorted
        .iter()
        .map(|d| d.q - model.predict(d.p, d.t).unwrap_or(f64::NAN))
        .collect();
    let durbin_watson = durbin_watson(&resid);
    let residual_bias = PRESSURE_BINS
        .iter()
        .map(|&(lo, hi)| {
            let r: Vec<f64> = sorted
                .iter()
                .zip(&resid)
                .filter(|(d, _)| d.p >= lo && d.p < hi)
                .map(|(_, r)| *r)
                .collect();
            BinBias {
                lo,
                hi: hi.is_finite().then_some(hi),
                n: r.len(),
                mean_residual: (!r.is_empty()).then(|| stats::mean(&r)),
            }
        })
        .collect();
    Ok(AggregatedCell {
        group: group.to_string(),
        form,
        n_points: pts.len(),
        train_r2: model.r2,
        params: model.params.values,
        cv,
        r2_ci,
        durbin_watson,
        residual_bias,
    })
}

/// Σ(eᵢ − eᵢ₋₁)² / Σeᵢ²; absent when every residual is zero.
pub fn durbin_watson(resid: &[f64]) -> Option<f64> {
    let den: f64 = resid.iter().map(|e| e * e).sum();
    if den == 0.0 || !den.is_finite() {
        return None;
    }
    let num: f64 = resid.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
    Some(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isotherm::FunctionalForm as F;

    const T: f64 = 298.15;

    fn grid() -> Vec<f64> {
        (0..20).map(|i| 1.0 + i as f64 * 199.0 / 19.0).collect()
    }

    fn synth(form: F, params: &[f64]) -> Vec<Point> {
        grid()
            .into_iter()
            .map(|p| Point::new(p, T, isotherm::eval(form, params, p, T).unwrap()))
            .collect()
    }

    #[test]
    fn de_solves_convex_quadratic() {
        let cfg = DeConfig::for_params(2, 7);
        let r = differential_evolution(
            |x| (x[0] - 0.3).powi(2) + (x[1] - 0.02).powi(2),
            &[(-10.0, 10.0), (-10.0, 10.0)],
            &cfg,
        )
        .unwrap();
        assert!((r.best[0] - 0.3).abs() < 1e-6 && (r.best[1] - 0.02).abs() < 1e-6);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        let again = differential_evolution(
            |x| (x[0] - 0.3).powi(2) + (x[1] - 0.02).powi(2),
            &[(-10.0, 10.0), (-10.0, 10.0)],
            &cfg,
        )
        .unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn de_rejects_bad_config() {
        let mut cfg = DeConfig::for_params(2, 1);
        cfg.f = 0.0;
        assert!(differential_evolution(|_| 0.0, &[(0.0, 1.0); 2], &cfg).is_err());
        let mut cfg = DeConfig::for_params(2, 1);
        cfg.population = 7;
        assert!(differential_evolution(|_| 0.0, &[(0.0, 1.0); 2], &cfg).is_err());
    }

    #[test]
    fn langmuir_recovery() {
        let data = synth(F::Langmuir, &[0.5, 0.05]);
        let m = fit_sample(&data, F::Langmuir, 3).unwrap();
        assert!(m.r2 >= 1.0 - 1e-9);
        let v = &m.params.values;
        assert!(((v[0] - 0.5) / 0.5).abs() < 1e-3 && ((v[1] - 0.05) / 0.05).abs() < 1e-3);
        assert!(m.aicc.unwrap() >= m.aic);
    }

    #[test]
    fn misspecified_fit_is_imperfect() {
        let data = synth(F::Sips, &[0.445, 0.012, 0.7]);
        let m = fit_sample(&data, F::Langmuir, 3).unwrap();
        assert!(m.r2 < 1.0);
        assert!(m.physics.score > 0.0);
    }

    #[test]
    fn insufficient_and_infinite() {
        let data = synth(F::Sips, &[0.445, 0.012, 0.7]);
        assert!(matches!(
            fit_sample(&data[..2], F::Sips, 1),
            Err(FitError::InsufficientData { .. })
        ));
        let mut with_zero = data.clone();
        with_zero.insert(0, Point::new(0.0, T, 0.0));
        assert!(matches!(
            fit_sample(&with_zero, F::LogStd, 1),
            Err(FitError::AllCostsInfinite(F::LogStd))
        ));
    }

    #[test]
    fn information_criteria_arithmetic() {
        let ic = information_criteria(10.0, 10, 2);
        assert!((ic.aic - 4.0).abs() < 1e-12);
        assert!((ic.bic - 2.0 * 10f64.ln()).abs() < 1e-12);
        assert!((ic.aicc.unwrap() - (4.0 + 12.0 / 7.0)).abs() < 1e-12);
        let ic0 = information_criteria(3.0, 10, 0);
        assert_eq!(ic0.aic, ic0.bic);
        assert!(information_criteria(1.0, 3, 2).aicc.is_none());
    }

    fn fake(form: F, aic: f64, score: f64) -> FittedModel {
        FittedModel {
            form,
            params: ParamVector { form, values: vec![1.0; form.n_params()] },
            rss: 1.0,
            r2: 0.9,
            rmse: 0.1,
            aic,
            bic: aic,
            aicc: None,
            physics: PhysicsScore { score, violated_checks: vec![] },
            n_points: 10,
            generations: 1,
            converged: true,
        }
    }

    #[test]
    fn ranking_rules() {
        let r = select_best_model(&[fake(F::Sips, 6.0, 1.0), fake(F::Langmuir, 4.0, 1.0)]).unwrap();
        assert_eq!(r[0].form, F::Langmuir);
        let r = select_best_model(&[fake(F::Sips, 4.0, 0.6), fake(F::Toth, 4.0, 1.0)]).unwrap();
        assert_eq!(r[0].form, F::Toth);
        let r = select_best_model(&[fake(F::Sips, -100.0, 0.6), fake(F::Toth, 4.0, 0.8)]).unwrap();
        assert_eq!(r[0].form, F::Toth);
        let r = select_best_model(&[fake(F::Sips, 4.0, 1.0), fake(F::Langmuir, 4.0, 1.0)]).unwrap();
        assert_eq!(r[0].form, F::Langmuir);
        assert!(matches!(select_best_model(&[]), Err(FitError::NoConvergedFits)));
    }

    #[test]
    fn sips_data_selects_sips() {
        let data = synth(F::Sips, &[0.445, 0.012, 0.702]);
        let fits: Vec<FittedModel> = fit_forms(&data, &F::INDIVIDUAL, "s", 42)
            .into_iter()
            .flatten()
            .collect();
        let ranked = select_best_model(&fits).unwrap();
        assert_eq!(ranked[0].form, F::Sips);
    }

    #[test]
    fn noiseless_bootstrap_is_tight_and_reproducible() {
        let data = synth(F::Langmuir, &[0.5, 0.05]);
        let a = bootstrap_ci(&data, F::Langmuir, 30, 5).unwrap();
        for iv in &a.intervals {
            assert!(iv.hi - iv.lo < 1e-6, "{iv:?}");
            assert!(iv.lo <= iv.hi);
        }
        assert_eq!(a, bootstrap_ci(&data, F::Langmuir, 30, 5).unwrap());
    }

    #[test]
    fn kfold_noiseless_and_loo() {
        let data = synth(F::Langmuir, &[0.5, 0.05]);
        let cv = kfold_cv(&data, F::Langmuir, 5, 1).unwrap();
        assert!(cv.mean_r2 >= 1.0 - 1e-6);
        let loo = kfold_cv(&data, F::Langmuir, data.len(), 1).unwrap();
        assert_eq!(loo.fold_rmse.len(), data.len());
        assert!(loo.mean_r2 >= 1.0 - 1e-6);
        assert_eq!(fold_assignment(20, 5, 9), fold_assignment(20, 5, 9));
    }

    #[test]
    fn single_sample_group_matches_individual_fit() {
        let data = synth(F::Langmuir, &[0.5, 0.05]);
        let cfg = AggregatedConfig { cv_folds: 0, n_boot: 0, seed: 1 };
        let rep = fit_aggregated(&[("g".into(), data.clone())], &[F::Langmuir], &cfg);
        let cell = rep.cells[0].as_ref().unwrap();
        let single = fit_sample(&data, F::Langmuir, task_seed(1, "g", F::Langmuir)).unwrap();
        assert_eq!(cell.train_r2, single.r2);
        assert_eq!(cell.residual_bias.len(), 6);
        assert_eq!(cell.residual_bias.iter().map(|b| b.n).sum::<usize>(), data.len());
    }

    #[test]
    fn durbin_watson_values() {
        assert_eq!(durbin_watson(&[1.0, -1.0, 1.0, -1.0]), Some(3.0));
        assert_eq!(durbin_watson(&[0.5; 5]), Some(0.0));
        assert_eq!(durbin_watson(&[0.0; 5]), None);
    }
}
