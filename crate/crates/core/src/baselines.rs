//! Linear, ridge and random-forest regressors over feature rows.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fit::{fold_assignment, summarize_folds, CvStats};
use crate::seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("normal equations are singular; use a positive ridge penalty")]
    SingularSystem,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

fn check_xy(x: &[Vec<f64>], y: &[f64], min_rows: usize) -> Result<usize, BaselineError> {
    if x.len() != y.len() {
        return Err(BaselineError::InvalidInput(format!("{} rows but {} targets", x.len(), y.len())));
    }
    if x.len() < min_rows {
        return Err(BaselineError::InvalidInput(format!("need at least {min_rows} rows")));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(BaselineError::InvalidInput("ragged feature rows".into()));
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// 0 is ordinary least squares.
    pub ridge_alpha: f64,
}

impl LinearModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Minimises ‖y − Xw − b‖² + α‖w‖² with an unpenalised intercept.
pub fn fit_linear(x: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<LinearModel, BaselineError> {
    let d = check_xy(x, y, 1)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(BaselineError::InvalidInput(format!("alpha = {alpha}")));
    }
    let n = x.len();
    let mean_x: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| x[i][j] - mean_x[j]);
    let yc = DVector::from_fn(n, |i, _| y[i] - mean_y);
    let mut gram = xc.transpose() * &xc;
    for j in 0..d {
        gram[(j, j)] += alpha;
    }
    let rhs = xc.transpose() * yc;
    let chol = gram.clone().cholesky().ok_or(BaselineError::SingularSystem)?;
    let pivots: Vec<f64> = chol.l().diagonal().iter().map(|v| v * v).collect();
    let pmax = pivots.iter().cloned().fold(0.0, f64::max);
    let pmin = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
    if d > 0 && !(pmin > 1e-12 * pmax) {
        return Err(BaselineError::SingularSystem);
    }
    let w = chol.solve(&rhs);
    let weights: Vec<f64> = w.iter().copied().collect();
    let intercept = mean_y - weights.iter().zip(&mean_x).map(|(a, b)| a * b).sum::<f64>();
    Ok(LinearModel {
        weights,
        intercept,
        ridge_alpha: alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub seed: u64,
    /// Impurity decrease per feature, normalised to sum to 1 when any split
    /// occurred.
    pub importances: Vec<f64>,
}

impl ForestModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    mtry: usize,
    max_depth: usize,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

fn sse(idx: &[usize], y: &[f64]) -> f64 {
    let n = idx.len() as f64;
    let s: f64 = idx.iter().map(|&i| y[i]).sum();
    let s2: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
    (s2 - s * s / n).max(0.0)
}

impl Builder<'_> {
    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut seed::Rng) -> usize {
        let me = self.nodes.len();
        let mean = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(Node::Leaf(mean));
        if depth >= self.max_depth || idx.len() < 2 {
            return me;
        }
        let d = self.x[0].len();
        let mut feats: Vec<usize> = sample_indices(rng, d, self.mtry.min(d)).into_vec();
        feats.sort_unstable();
        let parent = sse(idx, self.y);
        if parent <= 0.0 {
            return me;
        }
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for &f in &feats {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let total: f64 = order.iter().map(|&i| self.y[i]).sum();
            let total2: f64 = order.iter().map(|&i| self.y[i] * self.y[i]).sum();
            let (mut s, mut s2) = (0.0, 0.0);
            let n = order.len();
            for k in 0..n - 1 {
                let yi = self.y[order[k]];
                s += yi;
                s2 += yi * yi;
                let (a, b) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if a == b {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = (n - k - 1) as f64;
                let left = s2 - s * s / nl;
                let right = (total2 - s2) - (total - s) * (total - s) / nr;
                let gain = parent - left.max(0.0) - right.max(0.0);
                if gain > 0.0 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, 0.5 * (a + b)));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return me;
        };
        self.importance[feature] += gain;
        let split = partition(idx, |i| self.x[i][feature] <= threshold);
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

fn partition(idx: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut j = 0;
    for k in 0..idx.len() {
        if pred(idx[k]) {
            idx.swap(j, k);
            j += 1;
        }
    }
    j
}

/// Rows in a canonical order so the forest does not depend on input order.
fn canonical_order(x: &[Vec<f64>], y: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].total_cmp(&y[b]))
    });
    order
}

/// Bootstrap-aggregated regression trees with √d candidate features per
/// split. Tree `i` is seeded from `(seed, i)`.
pub fn fit_forest(
    x: &[Vec<f64>],
    y: &[f64],
    n_estimators: usize,
    max_depth: usize,
    seed: u64,
) -> Result<ForestModel, BaselineError> {
    let d = check_xy(x, y, 2)?;
    if n_estimators == 0 {
        return Err(BaselineError::InvalidInput("n_estimators must be positive".into()));
    }
    let order = canonical_order(x, y);
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mtry = ((d as f64).sqrt().ceil() as usize).max(1);
    let n = xs.len();
    let grown: Vec<(Tree, Vec<f64>)> = (0..n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive_indexed(seed, t as u64));
            let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut b = Builder {
                x: &xs,
                y: &ys,
                mtry,
                max_depth,
                nodes: Vec::new(),
                importance: vec![0.0; d],
            };
            b.grow(&mut idx, 0, &mut rng);
            (Tree { nodes: b.nodes }, b.importance)
        })
        .collect();
    let mut importances = vec![0.0; d];
    for (_, imp) in &grown {
        for (a, b) in importances.iter_mut().zip(imp) {
            *a += b;
        }
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(ForestModel {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        n_estimators,
        max_depth,
        seed,
        importances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Linear { alpha: f64 },
    Forest { n_estimators: usize, max_depth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fitted {
    Linear(LinearModel),
    Forest(ForestModel),
}

impl Fitted {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            Fitted::Linear(m) => m.predict(row),
            Fitted::Forest(m) => m.predict(row),
        }
    }
}

impl ModelSpec {
    pub fn fit(&self, x: &[Vec<f64>], y: &[f64], seed: u64) -> Result<Fitted, BaselineError> {
        match *self {
            ModelSpec::Linear { alpha } => fit_linear(x, y, alpha).map(Fitted::Linear),
            ModelSpec::Forest {
                n_estimators,
                max_depth,
            } => fit_forest(x, y, n_estimators, max_depth, seed).map(Fitted::Forest),
        }
    }
}

/// Seeded k-fold cross-validation over feature rows.
pub fn cross_validate(
    spec: ModelSpec,
    x: &[Vec<f64>],
    y: &[f64],
    k: usize,
    seed: u64,
) -> Result<CvStats, BaselineError> {
    check_xy(x, y, k.max(2))?;
    if k < 2 {
        return Err(BaselineError::InvalidInput("k must be at least 2".into()));
    }
    let fold = fold_assignment(x.len(), k, seed);
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let (mut xt, mut yt, mut xv, mut yv) = (vec![], vec![], vec![], vec![]);
        for i in 0..x.len() {
            if fold[i] == f {
                xv.push(x[i].clone());
                yv.push(y[i]);
            } else {
                xt.push(x[i].clone());
                yt.push(y[i]);
            }
        }
        let m = spec.fit(&xt, &yt, seed::derive_indexed(seed, f as u64))?;
        let p: Vec<f64> = xv.iter().map(|r| m.predict(r)).collect();
        folds.push((yv, p));
    }
    Ok(summarize_folds(k, &folds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(seed);
        (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn ols_exact_line() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 + 1.0).collect();
        let m = fit_linear(&x, &y, 0.0).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-10 && (m.intercept - 1.0).abs() < 1e-10);
    }

    #[test]
    fn heavy_ridge_shrinks_to_mean() {
        let x = noise_rows(50, 3, 1);
        let y: Vec<f64> = x.iter().map(|r| r[0] + 2.0 * r[1] + 5.0).collect();
        let m = fit_linear(&x, &y, 1e9).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-3));
        assert!((m.intercept - stats::mean(&y)).abs() < 1e-3);
    }

    #[test]
    fn collinear_columns() {
        let base = noise_rows(40, 1, 2);
        let x: Vec<Vec<f64>> = base.iter().map(|r| vec![r[0], r[0]]).collect();
        let y: Vec<f64> = base.iter().map(|r| 3.0 * r[0]).collect();
        assert_eq!(fit_linear(&x, &y, 0.0), Err(BaselineError::SingularSystem));
        let m = fit_linear(&x, &y, 1.0).unwrap();
        // closed form for two identical columns: w1 = w2 = s_xy / (2 s_xx + α)
        let mx = stats::mean(&base.iter().map(|r| r[0]).collect::<Vec<_>>());
        let sxx: f64 = base.iter().map(|r| (r[0] - mx) * (r[0] - mx)).sum();
        let w = 3.0 * sxx / (2.0 * sxx + 1.0);
        assert!((m.weights[0] - w).abs() < 1e-9 && (m.weights[1] - w).abs() < 1e-9);
    }

    #[test]
    fn ols_residuals_orthogonal() {
        let x = noise_rows(60, 4, 3);
        let mut rng = seed::rng(9);
        let y: Vec<f64> = x
            .iter()
            .map(|r| r[0] - r[2] + 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let m = fit_linear(&x, &y, 0.0).unwrap();
        for j in 0..4 {
            let dot: f64 = x.iter().zip(&y).map(|(r, v)| r[j] * (v - m.predict(r))).sum();
            assert!(dot.abs() < 1e-8 * 60.0);
        }
    }

    #[test]
    fn ridge_path_shrinks() {
        let x = noise_rows(30, 5, 4);
        let y: Vec<f64> = x.iter().map(|r| r.iter().sum::<f64>()).collect();
        let mut last = f64::INFINITY;
        for alpha in [0.0, 0.1, 1.0, 10.0, 100.0] {
            let m = fit_linear(&x, &y, alpha).unwrap();
            let norm = m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            assert!(norm <= last + 1e-12);
            last = norm;
        }
    }

    #[test]
    fn forest_depth_zero_is_constant_near_mean() {
        let x = noise_rows(200, 2, 5);
        let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
        let f = fit_forest(&x, &y, 200, 0, 1).unwrap();
        let p0 = f.predict(&x[0]);
        assert!(x.iter().all(|r| f.predict(r) == p0));
        // mean of bootstrap means: standard error sd/sqrt(n·trees)
        assert!((p0 - stats::mean(&y)).abs() < 0.02);
        let flat = fit_forest(&x, &vec![1.5; 200], 5, 3, 1).unwrap();
        assert_eq!(flat.predict(&x[0]), 1.5);
        assert!(flat.importances.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forest_step_function() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 - 99.5]).collect();
        let y: Vec<f64> = x.iter().map(|r| if r[0] > 0.0 { 1.0 } else { 0.0 }).collect();
        let f = fit_forest(&x, &y, 50, 2, 3).unwrap();
        let pred: Vec<f64> = x.iter().map(|r| f.predict(r)).collect();
        assert!(stats::r_squared(&y, &pred) >= 0.99, "{} {:?}", stats::r_squared(&y, &pred), pred);
        assert!((f.importances.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forest_row_order_invariant() {
        let x = noise_rows(50, 3, 6);
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[1]).collect();
        let a = fit_forest(&x, &y, 10, 4, 11).unwrap();
        let mut idx: Vec<usize> = (0..50).rev().collect();
        idx.swap(3, 17);
        let xr: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let yr: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let b = fit_forest(&xr, &yr, 10, 4, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cross_validation() {
        let x = noise_rows(50, 2, 7);
        let y: Vec<f64> = x.iter().map(|r| 3.0 * r[0] - r[1] + 2.0).collect();
        let cv = cross_validate(ModelSpec::Linear { alpha: 0.0 }, &x, &y, 5, 1).unwrap();
        assert!((cv.mean_r2 - 1.0).abs() < 1e-9);
        assert_eq!(cv, cross_validate(ModelSpec::Linear { alpha: 0.0 }, &x, &y, 5, 1).unwrap());

        let mut shuffled = y.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut seed::rng(3));
        let cv = cross_validate(ModelSpec::Linear { alpha: 0.0 }, &x, &shuffled, 5, 1).unwrap();
        assert!(cv.mean_r2 <= 0.0 && cv.negative);
    }
}
