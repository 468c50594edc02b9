//! Multi-scale gated regressor with a four-term physics loss, adaptive term
//! weighting and a three-phase training curriculum.
//!
//! The network is small enough that forward and backward passes are written
//! out by hand over `ndarray` matrices; one row per matrix row.

use ndarray::{concatenate, s, Array1, Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{IntegratedRecord, Lithology, QmaxTable};
use crate::features::{FeatureError, FeaturePipeline};
use crate::seed;
use crate::stats::logistic;

/// Relative pressure step of the finite-difference pressure derivative.
pub const FD_STEP: f64 = 1e-3;
/// Rows above this pressure (bar) enter the saturation term.
pub const SATURATION_PRESSURE: f64 = 50.0;
/// Slack below zero tolerated in dQ/dp before it is penalised.
pub const MONO_SLACK: f64 = 1e-6;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;
/// Guard in the adaptive weight denominator.
pub const LAMBDA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PinnError {
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty {0} partition")]
    EmptyPartition(&'static str),
    #[error("non-finite loss in phase {phase}, epoch {epoch}: {detail}")]
    DivergenceDetected { phase: usize, epoch: usize, detail: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub scale_widths: Vec<usize>,
    pub backbone_widths: Vec<usize>,
    pub dropout: f64,
    pub width_mult: f64,
    pub seed: u64,
}

impl ArchSpec {
    pub fn new(input_dim: usize, seed: u64) -> Self {
        ArchSpec {
            input_dim,
            scale_widths: vec![64, 128, 256],
            backbone_widths: vec![256, 512, 256, 128],
            dropout: 0.10,
            width_mult: 1.0,
            seed,
        }
    }

    fn scaled(&self, w: usize) -> usize {
        ((w as f64 * self.width_mult).round() as usize).max(1)
    }

    pub fn effective_scales(&self) -> Vec<usize> {
        self.scale_widths.iter().map(|&w| self.scaled(w)).collect()
    }

    pub fn effective_backbone(&self) -> Vec<usize> {
        self.backbone_widths.iter().map(|&w| self.scaled(w)).collect()
    }

    pub fn validate(&self) -> Result<(), PinnError> {
        let bad = |m: &str| Err(PinnError::InvalidSpec(m.into()));
        if self.input_dim == 0 {
            return bad("input_dim must be at least 1");
        }
        if self.scale_widths.is_empty() || self.backbone_widths.is_empty() {
            return bad("scale and backbone widths must be non-empty");
        }
        if self.scale_widths.iter().chain(&self.backbone_widths).any(|&w| w == 0) {
            return bad("all widths must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.width_mult > 0.0 && self.width_mult.is_finite()) {
            return bad("width_mult must be positive");
        }
        Ok(())
    }
}

/// Mean and standard deviation of raw (p, T) used to standardise the gate
/// input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateScaler {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Default for GateScaler {
    fn default() -> Self {
        GateScaler { mean: [0.0; 2], std: [1.0; 2] }
    }
}

impl GateScaler {
    pub fn fit(pt: &Array2<f64>) -> Self {
        let mut g = GateScaler::default();
        for j in 0..2 {
            let col = pt.column(j);
            let n = col.len().max(1) as f64;
            let m = col.sum() / n;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            g.mean[j] = m;
            g.std[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        g
    }

    fn apply(&self, pt: &Array2<f64>) -> Array2<f64> {
        let mut g = pt.clone();
        for j in 0..2 {
            g.column_mut(j).mapv_inplace(|v| (v - self.mean[j]) / self.std[j]);
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch-norm on batch statistics (unless frozen).
    Train,
    /// No dropout, batch-norm on running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: ArchSpec,
    /// Parameter tensors; biases and batch-norm vectors are 1×n.
    pub params: Vec<Array2<f64>>,
    /// Running (mean, variance) per backbone layer.
    pub running: Vec<(Array1<f64>, Array1<f64>)>,
    /// Skip source per backbone layer: index into the activations list
    /// (0 = gated multi-scale features).
    pub skips: Vec<Option<usize>>,
    pub gate_scaler: GateScaler,
    /// Batch-norm uses running statistics even in training mode.
    pub freeze_bn: bool,
}

fn swish(z: f64) -> f64 {
    z * logistic(z)
}

fn swish_grad(z: f64) -> f64 {
    let s = logistic(z);
    s + z * s * (1.0 - s)
}

pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp()
    } else {
        z.exp().ln_1p()
    }
}

struct LayerCache {
    z: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    u: Array2<f64>,
    mask: Option<Array2<f64>>,
    batch_stats: Option<(Array1<f64>, Array1<f64>)>,
}

pub struct Cache {
    x: Array2<f64>,
    g_in: Array2<f64>,
    zs: Vec<Array2<f64>>,
    h: Array2<f64>,
    gate: Array2<f64>,
    acts: Vec<Array2<f64>>,
    layers: Vec<LayerCache>,
    zo: Array1<f64>,
    pub y: Array1<f64>,
}

/// Gradients in the same layout as [`Network::params`].
pub type Grads = Vec<Array2<f64>>;

fn kaiming(n_in: usize, n_out: usize, rng: &mut seed::Rng) -> Array2<f64> {
    let d = Normal::new(0.0, (2.0 / n_in as f64).sqrt()).expect("positive std");
    Array2::from_shape_fn((n_in, n_out), |_| d.sample(rng))
}

impl Network {
    /// Kaiming-normal hidden weights, Xavier-uniform output weights scaled by
    /// 0.1, zero biases, unit batch-norm scale.
    pub fn new(spec: &ArchSpec) -> Result<Self, PinnError> {
        spec.validate()?;
        let mut rng = seed::rng(seed::derive(spec.seed, &["init"]));
        let scales = spec.effective_scales();
        let backbone = spec.effective_backbone();
        let total: usize = scales.iter().sum();
        let mut params = vec![];
        for &w in &scales {
            params.push(kaiming(spec.input_dim, w, &mut rng));
            params.push(Array2::zeros((1, w)));
        }
        params.push(kaiming(2, total, &mut rng));
        params.push(Array2::zeros((1, total)));
        let mut widths = vec![total];
        let mut running = vec![];
        let mut skips = vec![];
        for &w in &backbone {
            let n_in = *widths.last().expect("non-empty");
            params.push(kaiming(n_in, w, &mut rng));
            params.push(Array2::zeros((1, w)));
            params.push(Array2::ones((1, w)));
            params.push(Array2::zeros((1, w)));
            running.push((Array1::zeros(w), Array1::ones(w)));
            skips.push(widths.iter().rposition(|&v| v == w));
            widths.push(w);
        }
        let last = *widths.last().expect("non-empty");
        let a = (6.0 / (last + 1) as f64).sqrt();
        params.push(Array2::from_shape_fn((last, 1), |_| 0.1 * rng.random_range(-a..a)));
        params.push(Array2::zeros((1, 1)));
        Ok(Network {
            spec: spec.clone(),
            params,
            running,
            skips,
            gate_scaler: GateScaler::default(),
            freeze_bn: false,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    fn n_scales(&self) -> usize {
        self.spec.scale_widths.len()
    }

    fn gate_index(&self) -> usize {
        2 * self.n_scales()
    }

    fn layer_index(&self, l: usize) -> usize {
        self.gate_index() + 2 + 4 * l
    }

    fn output_index(&self) -> usize {
        self.layer_index(self.running.len())
    }

    /// Forward pass over a batch. `x` holds scaled feature rows and `pt` the
    /// raw (p, T) of each row. Dropout draws from `rng` in training mode.
    pub fn forward(
        &self,
        x: &Array2<f64>,
        pt: &Array2<f64>,
        mode: Mode,
        rng: Option<&mut seed::Rng>,
    ) -> Result<Cache, PinnError> {
        if x.ncols() != self.spec.input_dim {
            return Err(PinnError::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.ncols(),
            });
        }
        if pt.ncols() != 2 || pt.nrows() != x.nrows() {
            return Err(PinnError::DimensionMismatch { expected: 2, got: pt.ncols() });
        }
        let n = x.nrows();
        let mut zs = vec![];
        let mut hs = vec![];
        for s in 0..self.n_scales() {
            let z = x.dot(&self.params[2 * s]) + &self.params[2 * s + 1];
            hs.push(z.mapv(swish));
            zs.push(z);
        }
        let views: Vec<_> = hs.iter().map(|h| h.view()).collect();
        let h = concatenate(Axis(1), &views).expect("equal row counts");
        let g_in = self.gate_scaler.apply(pt);
        let gi = self.gate_index();
        let gate = (g_in.dot(&self.params[gi]) + &self.params[gi + 1]).mapv(logistic);
        let mut acts = vec![&h * &gate];
        let mut layers = vec![];
        let batch_bn = mode == Mode::Train && !self.freeze_bn;
        let drop = if mode == Mode::Train { self.spec.dropout } else { 0.0 };
        let mut rng = rng;
        for l in 0..self.running.len() {
            let k = self.layer_index(l);
            let z = acts[l].dot(&self.params[k]) + &self.params[k + 1];
            let (mean, var, batch_stats) = if batch_bn {
                let m = z.sum_axis(Axis(0)) / n as f64;
                let v = z
                    .axis_iter(Axis(0))
                    .fold(Array1::zeros(z.ncols()), |acc, r| acc + (&r - &m).mapv(|d| d * d))
                    / n as f64;
                (m.clone(), v.clone(), Some((m, v)))
            } else {
                (self.running[l].0.clone(), self.running[l].1.clone(), None)
            };
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let xhat = (&z - &mean) * &inv_std;
            let u = &xhat * &self.params[k + 2] + &self.params[k + 3];
            let mut a = u.mapv(swish);
            let mask = if drop > 0.0 {
                let r = rng.as_deref_mut().expect("training mode with dropout needs an rng");
                let keep = 1.0 / (1.0 - drop);
                let m = Array2::from_shape_fn(a.raw_dim(), |_| if r.random::<f64>() < drop { 0.0 } else { keep });
                a *= &m;
                Some(m)
            } else {
                None
            };
            if let Some(j) = self.skips[l] {
                a += &acts[j];
            }
            acts.push(a);
            layers.push(LayerCache {
                z,
                xhat,
                inv_std,
                u,
                mask,
                batch_stats,
            });
        }
        let oi = self.output_index();
        let zo = (acts.last().expect("non-empty").dot(&self.params[oi]) + &self.params[oi + 1]).column(0).to_owned();
        let y = zo.mapv(softplus);
        Ok(Cache {
            x: x.clone(),
            g_in,
            zs,
            h,
            gate,
            acts,
            layers,
            zo,
            y,
        })
    }

    /// Folds the batch statistics of a training pass into the running
    /// averages.
    pub fn update_running(&mut self, cache: &Cache) {
        let n = cache.x.nrows() as f64;
        for (l, lc) in cache.layers.iter().enumerate() {
            if let Some((m, v)) = &lc.batch_stats {
                let unbiased = if n > 1.0 { v * (n / (n - 1.0)) } else { v.clone() };
                let (rm, rv) = &mut self.running[l];
                *rm = &*rm * (1.0 - BN_MOMENTUM) + m * BN_MOMENTUM;
                *rv = &*rv * (1.0 - BN_MOMENTUM) + &unbiased * BN_MOMENTUM;
            }
        }
    }

    /// Backpropagates `dy` (∂L/∂output per row). Returns parameter gradients
    /// and the gradients with respect to `x` and to the raw (p, T) input.
    pub fn backward(&self, cache: &Cache, dy: &Array1<f64>) -> (Grads, Array2<f64>, Array2<f64>) {
        let n = cache.x.nrows();
        let mut grads: Grads = self.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        let dzo = (dy * &cache.zo.mapv(logistic)).insert_axis(Axis(1));
        let oi = self.output_index();
        let n_layers = self.running.len();
        grads[oi] = cache.acts[n_layers].t().dot(&dzo);
        grads[oi + 1] = dzo.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut da: Vec<Array2<f64>> = cache.acts.iter().map(|a| Array2::zeros(a.raw_dim())).collect();
        da[n_layers] = dzo.dot(&self.params[oi].t());
        for l in (0..n_layers).rev() {
            let k = self.layer_index(l);
            let lc = &cache.layers[l];
            let d_out = da[l + 1].clone();
            if let Some(j) = self.skips[l] {
                da[j] += &d_out;
            }
            let mut du = d_out;
            if let Some(m) = &lc.mask {
                du *= m;
            }
            Zip::from(&mut du).and(&lc.u).for_each(|d, &u| *d *= swish_grad(u));
            let gamma = &self.params[k + 2];
            grads[k + 2] = (&du * &lc.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
            grads[k + 3] = du.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dxhat = &du * gamma;
            let dz = if lc.batch_stats.is_some() {
                let nf = n as f64;
                let sum_d = dxhat.sum_axis(Axis(0));
                let sum_dx = (&dxhat * &lc.xhat).sum_axis(Axis(0));
                ((&dxhat * nf - &sum_d) - &lc.xhat * &sum_dx) * &lc.inv_std / nf
            } else {
                &dxhat * &lc.inv_std
            };
            let _ = &lc.z;
            grads[k] = cache.acts[l].t().dot(&dz);
            grads[k + 1] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            da[l] += &dz.dot(&self.params[k].t());
        }
        let dhm = &da[0];
        let dh = dhm * &cache.gate;
        let mut dzg = dhm * &cache.h;
        Zip::from(&mut dzg).and(&cache.gate).for_each(|d, &g| *d *= g * (1.0 - g));
        let gi = self.gate_index();
        grads[gi] = cache.g_in.t().dot(&dzg);
        grads[gi + 1] = dzg.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut dpt = dzg.dot(&self.params[gi].t());
        for j in 0..2 {
            let s = self.gate_scaler.std[j];
            dpt.column_mut(j).mapv_inplace(|v| v / s);
        }
        let mut dx = Array2::zeros(cache.x.raw_dim());
        let mut off = 0;
        for s in 0..self.n_scales() {
            let z = &cache.zs[s];
            let w = z.ncols();
            let mut dz = dh.slice(s![.., off..off + w]).to_owned();
            Zip::from(&mut dz).and(z).for_each(|d, &zz| *d *= swish_grad(zz));
            grads[2 * s] = cache.x.t().dot(&dz);
            grads[2 * s + 1] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            dx += &dz.dot(&self.params[2 * s].t());
            off += w;
        }
        (grads, dx, dpt)
    }

    /// Inference-mode predictions.
    pub fn predict(&self, x: &Array2<f64>, pt: &Array2<f64>) -> Result<Vec<f64>, PinnError> {
        let mut out = Vec::with_capacity(x.nrows());
        let step = 256;
        for start in (0..x.nrows()).step_by(step) {
            let end = (start + step).min(x.nrows());
            let c = self.forward(
                &x.slice(s![start..end, ..]).to_owned(),
                &pt.slice(s![start..end, ..]).to_owned(),
                Mode::Eval,
                None,
            )?;
            out.extend(c.y.iter());
        }
        Ok(out)
    }
}

/// Model-ready rows: scaled features, raw (p, T), targets, capacity limits,
/// and the feature rows at p ± h for the pressure derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub pt: Array2<f64>,
    pub y: Vec<f64>,
    pub qmax: Vec<f64>,
    pub lithology: Vec<Lithology>,
    pub sample_key: Vec<String>,
    pub x_plus: Array2<f64>,
    pub x_minus: Array2<f64>,
    pub pt_plus: Array2<f64>,
    pub pt_minus: Array2<f64>,
}

/// Pressure step for the derivative at `p`: `FD_STEP·max(p, 1)`.
pub fn fd_step(p: f64) -> f64 {
    FD_STEP * p.max(1.0)
}

impl Dataset {
    /// Transforms measured records with a fitted pipeline.
    pub fn from_records(pipeline: &FeaturePipeline, records: &[IntegratedRecord], qmax: &QmaxTable) -> Result<Self, PinnError> {
        let rows = records
            .iter()
            .map(|r| {
                let m = r.measurement.ok_or_else(|| FeatureError::MissingThermoInputs(r.sample_key.clone()))?;
                Ok((r, m.pressure, m.temperature, m.uptake))
            })
            .collect::<Result<Vec<_>, PinnError>>()?;
        Ok(Self::from_conditions(pipeline, &rows, qmax))
    }

    /// Rows at arbitrary (record, p, T, target) conditions. Imputed cells
    /// come from each record's own measured condition.
    pub fn from_conditions(pipeline: &FeaturePipeline, rows: &[(&IntegratedRecord, f64, f64, f64)], qmax: &QmaxTable) -> Self {
        let d = pipeline.width();
        let n = rows.len();
        let mut x = Array2::zeros((n, d));
        let mut xp = Array2::zeros((n, d));
        let mut xm = Array2::zeros((n, d));
        let mut pt = Array2::zeros((n, 2));
        let mut ptp = Array2::zeros((n, 2));
        let mut ptm = Array2::zeros((n, 2));
        for (i, &(r, p, t, _)) in rows.iter().enumerate() {
            let h = fd_step(p);
            let (lo, hi) = ((p - h).max(0.0), p + h);
            x.row_mut(i).assign(&Array1::from(pipeline.transform_at(r, p, t)));
            xp.row_mut(i).assign(&Array1::from(pipeline.transform_at(r, hi, t)));
            xm.row_mut(i).assign(&Array1::from(pipeline.transform_at(r, lo, t)));
            pt.row_mut(i).assign(&Array1::from(vec![p, t]));
            ptp.row_mut(i).assign(&Array1::from(vec![hi, t]));
            ptm.row_mut(i).assign(&Array1::from(vec![lo, t]));
        }
        Dataset {
            x,
            pt,
            y: rows.iter().map(|r| r.3).collect(),
            qmax: rows.iter().map(|r| qmax.get(r.0.lithology)).collect(),
            lithology: rows.iter().map(|r| r.0.lithology).collect(),
            sample_key: rows.iter().map(|r| r.0.sample_key.clone()).collect(),
            x_plus: xp,
            x_minus: xm,
            pt_plus: ptp,
            pt_minus: ptm,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn pressures(&self) -> Vec<f64> {
        self.pt.column(0).to_vec()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            pt: self.pt.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            qmax: idx.iter().map(|&i| self.qmax[i]).collect(),
            lithology: idx.iter().map(|&i| self.lithology[i]).collect(),
            sample_key: idx.iter().map(|&i| self.sample_key[i].clone()).collect(),
            x_plus: self.x_plus.select(Axis(0), idx),
            x_minus: self.x_minus.select(Axis(0), idx),
            pt_plus: self.pt_plus.select(Axis(0), idx),
            pt_minus: self.pt_minus.select(Axis(0), idx),
        }
    }

    fn dp(&self) -> Array1<f64> {
        &self.pt_plus.column(0) - &self.pt_minus.column(0)
    }
}

/// Data-term weight w(y) = σ(5(y − 0.1)) + 0.5.
pub fn data_weight(y: f64) -> f64 {
    logistic(5.0 * (y - 0.1)) + 0.5
}

/// Saturation-term contribution of one row above the pressure threshold.
pub fn physics_contribution(pred: f64, qmax: f64) -> f64 {
    (pred - qmax).max(0.0) + 0.1 * (0.7 * qmax - pred).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub physics: f64,
    pub bounds: f64,
    pub monotonicity: f64,
    pub lambdas: [f64; 4],
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [f64; 4] {
        [self.data, self.physics, self.bounds, self.monotonicity]
    }

    pub fn with_lambdas(mut self, lambdas: [f64; 4]) -> Self {
        self.lambdas = lambdas;
        self.total = self.terms().iter().zip(&lambdas).map(|(t, l)| t * l).sum();
        self
    }
}

/// The four loss terms with unit weights.
pub fn loss_terms(preds: &[f64], targets: &[f64], pressures: &[f64], qmax: &[f64], dqdp: &[f64]) -> LossBreakdown {
    let n = preds.len().max(1) as f64;
    let data = preds
        .iter()
        .zip(targets)
        .map(|(p, y)| data_weight(*y) * (y - p) * (y - p))
        .sum::<f64>()
        / n;
    let sat: Vec<f64> = preds
        .iter()
        .zip(pressures)
        .zip(qmax)
        .filter(|((_, p), _)| **p > SATURATION_PRESSURE)
        .map(|((y, _), q)| physics_contribution(*y, *q))
        .collect();
    let physics = if sat.is_empty() { 0.0 } else { sat.iter().sum::<f64>() / sat.len() as f64 };
    let bounds = preds.iter().zip(qmax).map(|(y, q)| (-y).max(0.0) + (y - q).max(0.0)).sum::<f64>() / n;
    let monotonicity = dqdp.iter().map(|d| (-d - MONO_SLACK).max(0.0)).sum::<f64>() / dqdp.len().max(1) as f64;
    LossBreakdown {
        data,
        physics,
        bounds,
        monotonicity,
        lambdas: [1.0; 4],
        total: 0.0,
    }
    .with_lambdas([1.0; 4])
}

/// ∂term/∂ŷ per row for the data, physics and bounds terms.
fn output_gradients(preds: &[f64], targets: &[f64], pressures: &[f64], qmax: &[f64]) -> [Array1<f64>; 3] {
    let n = preds.len();
    let nf = n.max(1) as f64;
    let n_sat = pressures.iter().filter(|p| **p > SATURATION_PRESSURE).count().max(1) as f64;
    let mut g = [Array1::zeros(n), Array1::zeros(n), Array1::zeros(n)];
    for i in 0..n {
        let (yh, y, q) = (preds[i], targets[i], qmax[i]);
        g[0][i] = -2.0 * data_weight(y) * (y - yh) / nf;
        if pressures[i] > SATURATION_PRESSURE {
            let mut d = 0.0;
            if yh > q {
                d += 1.0;
            }
            if yh < 0.7 * q {
                d -= 0.1;
            }
            g[1][i] = d / n_sat;
        }
        let mut b = 0.0;
        if yh < 0.0 {
            b -= 1.0;
        }
        if yh > q {
            b += 1.0;
        }
        g[2][i] = b / nf;
    }
    g
}

/// Exponential moving average of per-term gradient norms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmaState {
    pub g: Option<[f64; 4]>,
}

/// Updates the EMA with `norms` and returns λ_k = max ḡ / (ḡ_k + ε). The
/// first update initialises the average with `norms`.
pub fn adaptive_lambdas(norms: [f64; 4], state: &mut EmaState, alpha: f64) -> [f64; 4] {
    let g = match state.g {
        None => norms,
        Some(prev) => {
            let mut g = prev;
            for k in 0..4 {
                g[k] = (1.0 - alpha) * prev[k] + alpha * norms[k];
            }
            g
        }
    };
    state.g = Some(g);
    let max = g.iter().cloned().fold(0.0, f64::max);
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = if max == 0.0 { 1.0 } else { max / (g[k] + LAMBDA_EPS) };
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PhaseWeights {
    DataOnly,
    /// Adaptive λ for every term; the physics weight is also multiplied by
    /// e/E when `physics_ramp` is set.
    Adaptive { physics_ramp: bool },
    Fixed([f64; 4]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub epochs: usize,
    pub lr_max: f64,
    /// Equal to `lr_max` for a constant rate; otherwise cosine-annealed.
    pub lr_min: f64,
    pub weights: PhaseWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub phases: Vec<PhaseSpec>,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub tolerance: f64,
    pub ema_alpha: f64,
    /// Term weights of the validation objective in phases after the first.
    pub monitor_weights: [f64; 4],
}

pub const PHASE3_WEIGHTS: [f64; 4] = [1.0, 1.0, 0.1, 0.05];

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            phases: vec![
                PhaseSpec {
                    epochs: 50,
                    lr_max: 1.2e-3,
                    lr_min: 1.2e-3,
                    weights: PhaseWeights::DataOnly,
                },
                PhaseSpec {
                    epochs: 250,
                    lr_max: 5e-4,
                    lr_min: 1e-6,
                    weights: PhaseWeights::Adaptive { physics_ramp: true },
                },
                PhaseSpec {
                    epochs: 100,
                    lr_max: 1e-4,
                    lr_min: 1e-7,
                    weights: PhaseWeights::Fixed(PHASE3_WEIGHTS),
                },
            ],
            batch_size: 64,
            weight_decay: 1e-5,
            clip_norm: 1.0,
            patience: 20,
            tolerance: 1e-5,
            ema_alpha: 0.1,
            monitor_weights: PHASE3_WEIGHTS,
        }
    }
}

impl TrainSchedule {
    /// Learning rate at `epoch` (0-based) of `phase` (0-based).
    pub fn lr_at(&self, phase: usize, epoch: usize) -> f64 {
        let ph = &self.phases[phase];
        if ph.lr_max == ph.lr_min {
            return ph.lr_max;
        }
        let frac = epoch as f64 / ph.epochs as f64;
        ph.lr_min + (ph.lr_max - ph.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0
    }

    /// Copy with every learning rate multiplied by `factor`.
    pub fn scale_lr(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for p in &mut s.phases {
            p.lr_max *= factor;
            p.lr_min *= factor;
        }
        s
    }

    /// Copy with every phase length multiplied by `factor` (at least one epoch).
    pub fn scale_epochs(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for p in &mut s.phases {
            p.epochs = ((p.epochs as f64 * factor).round() as usize).max(1);
        }
        s
    }

    /// Copy with every physics term switched off.
    pub fn unconstrained(&self) -> Self {
        let mut s = self.clone();
        for p in &mut s.phases {
            p.weights = PhaseWeights::DataOnly;
        }
        s.monitor_weights = [1.0, 0.0, 0.0, 0.0];
        s
    }

    pub fn validate(&self) -> Result<(), PinnError> {
        let bad = |m: &str| Err(PinnError::InvalidSpec(m.into()));
        if self.phases.is_empty() || self.phases.iter().any(|p| p.epochs == 0) {
            return bad("every phase needs at least one epoch");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.phases.iter().any(|p| p.lr_max < 0.0 || p.lr_min < 0.0) {
            return bad("learning rates must be non-negative");
        }
        Ok(())
    }
}

/// Patience-based stopping on a monitored loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub tolerance: f64,
    pub best: f64,
    pub wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, tolerance: f64) -> Self {
        EarlyStopping {
            patience,
            tolerance,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Returns (improved, stop).
    pub fn update(&mut self, loss: f64) -> (bool, bool) {
        if loss < self.best - self.tolerance {
            self.best = loss;
            self.wait = 0;
            (true, false)
        } else {
            self.wait += 1;
            (false, self.wait >= self.patience)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: usize,
    pub train: LossBreakdown,
    pub val_loss: f64,
    pub lr: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(
        "epoch,phase,data,physics,bounds,monotonicity,total,lambda_data,lambda_physics,lambda_bounds,lambda_monotonicity,lr,val_loss\n",
    );
    for r in history {
        let t = &r.train;
        s.push_str(&format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.epoch,
            r.phase + 1,
            t.data,
            t.physics,
            t.bounds,
            t.monotonicity,
            t.total,
            t.lambdas[0],
            t.lambdas[1],
            t.lambdas[2],
            t.lambdas[3],
            r.lr,
            r.val_loss
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub net: Network,
    pub history: Vec<EpochRecord>,
    /// Epochs actually run per phase.
    pub phase_epochs: Vec<usize>,
    pub best_val: f64,
}

/// AdamW with decoupled weight decay on every parameter tensor.
#[derive(Debug, Clone)]
struct AdamW {
    m: Grads,
    v: Grads,
    t: i32,
}

impl AdamW {
    fn new(params: &[Array2<f64>]) -> Self {
        AdamW {
            m: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [Array2<f64>], grads: &Grads, lr: f64, wd: f64) {
        self.t += 1;
        let (b1, b2) = ADAM_BETAS;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * wd * *p;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            });
        }
    }
}

fn norm(g: &Grads) -> f64 {
    g.iter().map(|t| t.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

fn axpy(acc: &mut Grads, a: f64, g: &Grads) {
    for (x, y) in acc.iter_mut().zip(g) {
        x.scaled_add(a, y);
    }
}

/// Inference-mode pressure derivative by central differences on the
/// precomputed p ± h rows.
pub fn dqdp_fd(net: &Network, data: &Dataset) -> Result<Vec<f64>, PinnError> {
    let hi = net.predict(&data.x_plus, &data.pt_plus)?;
    let lo = net.predict(&data.x_minus, &data.pt_minus)?;
    let dp = data.dp();
    Ok((0..data.len()).map(|i| (hi[i] - lo[i]) / dp[i]).collect())
}

/// Inference-mode pressure derivative by backpropagation to the inputs,
/// chained with the feature sensitivities ∂x/∂p taken from the p ± h rows.
pub fn dqdp_reverse(net: &Network, data: &Dataset) -> Result<Vec<f64>, PinnError> {
    let cache = net.forward(&data.x, &data.pt, Mode::Eval, None)?;
    let (_, dx, dpt) = net.backward(&cache, &Array1::ones(data.len()));
    let dp = data.dp();
    Ok((0..data.len())
        .map(|i| {
            let sens = (&data.x_plus.row(i) - &data.x_minus.row(i)) / dp[i];
            dx.row(i).dot(&sens) + dpt[[i, 0]]
        })
        .collect())
}

/// Weighted loss and its parameter gradient on a batch. `mode` governs the
/// main pass; the pressure-derivative passes always run in inference mode.
/// With `adaptive` set, per-term gradient norms update the EMA and replace
/// the first three weights (the physics weight keeps `ramp` as a factor).
#[allow(clippy::too_many_arguments)]
fn batch_step(
    net: &Network,
    batch: &Dataset,
    weights: [f64; 4],
    mode: Mode,
    rng: Option<&mut seed::Rng>,
    adaptive: Option<(&mut EmaState, f64, f64)>,
) -> Result<(LossBreakdown, Grads, Cache), PinnError> {
    let cache = net.forward(&batch.x, &batch.pt, mode, rng)?;
    let preds = cache.y.to_vec();
    let pressures = batch.pressures();
    let need_mono = weights[3] != 0.0 || adaptive.is_some();
    let (mono_caches, dqdp) = if need_mono {
        let cp = net.forward(&batch.x_plus, &batch.pt_plus, Mode::Eval, None)?;
        let cm = net.forward(&batch.x_minus, &batch.pt_minus, Mode::Eval, None)?;
        let dp = batch.dp();
        let d: Vec<f64> = (0..batch.len()).map(|i| (cp.y[i] - cm.y[i]) / dp[i]).collect();
        (Some((cp, cm, dp)), d)
    } else {
        (None, vec![0.0; batch.len()])
    };
    let terms = loss_terms(&preds, &batch.y, &pressures, &batch.qmax, &dqdp);
    let out_g = output_gradients(&preds, &batch.y, &pressures, &batch.qmax);
    let zero = || -> Grads { net.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect() };
    let mono_grad = |scale: f64| -> Grads {
        let mut g = zero();
        if let Some((cp, cm, dp)) = &mono_caches {
            let nf = batch.len() as f64;
            let mut dyp = Array1::zeros(batch.len());
            for i in 0..batch.len() {
                if -dqdp[i] - MONO_SLACK > 0.0 {
                    dyp[i] = -scale / (nf * dp[i]);
                }
            }
            if dyp.iter().any(|v| *v != 0.0) {
                let (gp, _, _) = net.backward(cp, &dyp);
                let (gm, _, _) = net.backward(cm, &(-&dyp));
                axpy(&mut g, 1.0, &gp);
                axpy(&mut g, 1.0, &gm);
            }
        }
        g
    };
    let mut lambdas = weights;
    let grads = if let Some((ema, alpha, ramp)) = adaptive {
        let mut per: Vec<Grads> = vec![];
        for g in &out_g {
            per.push(if g.iter().any(|v| *v != 0.0) { net.backward(&cache, g).0 } else { zero() });
        }
        per.push(mono_grad(1.0));
        let norms = [norm(&per[0]), norm(&per[1]), norm(&per[2]), norm(&per[3])];
        let l = adaptive_lambdas(norms, ema, alpha);
        lambdas = [l[0], l[1] * ramp, l[2], l[3]];
        let mut total = zero();
        for (k, g) in per.iter().enumerate() {
            if lambdas[k] != 0.0 {
                axpy(&mut total, lambdas[k], g);
            }
        }
        total
    } else {
        let mut dy = Array1::zeros(batch.len());
        for (k, g) in out_g.iter().enumerate() {
            if weights[k] != 0.0 {
                dy.scaled_add(weights[k], g);
            }
        }
        let mut total = net.backward(&cache, &dy).0;
        if weights[3] != 0.0 {
            axpy(&mut total, 1.0, &mono_grad(weights[3]));
        }
        total
    };
    Ok((terms.with_lambdas(lambdas), grads, cache))
}

/// Loss of the whole dataset in inference mode under fixed weights.
pub fn evaluate_loss(net: &Network, data: &Dataset, weights: [f64; 4]) -> Result<LossBreakdown, PinnError> {
    let preds = net.predict(&data.x, &data.pt)?;
    let dqdp = if weights[3] != 0.0 { dqdp_fd(net, data)? } else { vec![0.0; data.len()] };
    Ok(loss_terms(&preds, &data.y, &data.pressures(), &data.qmax, &dqdp).with_lambdas(weights))
}

/// Total weighted loss and its analytic gradient in inference mode; used by
/// gradient checks.
pub fn loss_and_grad(net: &Network, data: &Dataset, weights: [f64; 4]) -> Result<(f64, Grads), PinnError> {
    let (l, g, _) = batch_step(net, data, weights, Mode::Eval, None, None)?;
    Ok((l.total, g))
}

fn clip(g: &mut Grads, max_norm: f64) -> f64 {
    let n = norm(g);
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        for t in g.iter_mut() {
            t.mapv_inplace(|v| v * s);
        }
    }
    n
}

/// Three-phase training with early stopping per phase. The gate scaler is
/// fitted on `train`. Each phase restores its best-validation parameters
/// before the next begins. The validation objective is the data term in a
/// data-only phase and the `monitor_weights` sum otherwise.
pub fn train(
    mut net: Network,
    train: &Dataset,
    val: &Dataset,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<TrainOutcome, PinnError> {
    schedule.validate()?;
    if train.is_empty() {
        return Err(PinnError::EmptyPartition("training"));
    }
    if val.is_empty() {
        return Err(PinnError::EmptyPartition("validation"));
    }
    net.gate_scaler = GateScaler::fit(&train.pt);
    let mut rng = seed::rng(seed::derive(seed, &["train"]));
    let mut opt = AdamW::new(&net.params);
    let mut ema = EmaState::default();
    let mut history = vec![];
    let mut phase_epochs = vec![];
    let mut global = 0;
    let mut best_val = f64::INFINITY;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for (pi, phase) in schedule.phases.iter().enumerate() {
        let monitor = match phase.weights {
            PhaseWeights::DataOnly => [1.0, 0.0, 0.0, 0.0],
            _ => schedule.monitor_weights,
        };
        let mut stopper = EarlyStopping::new(schedule.patience, schedule.tolerance);
        let mut best = net.clone();
        let mut ran = 0;
        for e in 0..phase.epochs {
            let lr = schedule.lr_at(pi, e);
            order.shuffle(&mut rng);
            let mut sums = [0.0; 4];
            let mut lam_sum = [0.0; 4];
            let mut total_sum = 0.0;
            let mut n_batches = 0.0;
            for chunk in order.chunks(schedule.batch_size) {
                let batch = train.subset(chunk);
                let (weights, adaptive) = match &phase.weights {
                    PhaseWeights::DataOnly => ([1.0, 0.0, 0.0, 0.0], None),
                    PhaseWeights::Fixed(w) => (*w, None),
                    PhaseWeights::Adaptive { physics_ramp } => {
                        let ramp = if *physics_ramp { e as f64 / phase.epochs as f64 } else { 1.0 };
                        ([1.0; 4], Some((&mut ema, schedule.ema_alpha, ramp)))
                    }
                };
                let (loss, mut grads, cache) = batch_step(&net, &batch, weights, Mode::Train, Some(&mut rng), adaptive)?;
                if !loss.total.is_finite() || loss.terms().iter().any(|t| !t.is_finite()) {
                    return Err(PinnError::DivergenceDetected {
                        phase: pi + 1,
                        epoch: e,
                        detail: format!("{loss:?}"),
                    });
                }
                net.update_running(&cache);
                clip(&mut grads, schedule.clip_norm);
                opt.step(&mut net.params, &grads, lr, schedule.weight_decay);
                for k in 0..4 {
                    sums[k] += loss.terms()[k];
                    lam_sum[k] += loss.lambdas[k];
                }
                total_sum += loss.total;
                n_batches += 1.0;
            }
            let val_loss = evaluate_loss(&net, val, monitor)?.total;
            if !val_loss.is_finite() {
                return Err(PinnError::DivergenceDetected {
                    phase: pi + 1,
                    epoch: e,
                    detail: "validation loss is not finite".into(),
                });
            }
            history.push(EpochRecord {
                epoch: global,
                phase: pi,
                train: LossBreakdown {
                    data: sums[0] / n_batches,
                    physics: sums[1] / n_batches,
                    bounds: sums[2] / n_batches,
                    monotonicity: sums[3] / n_batches,
                    lambdas: lam_sum.map(|v| v / n_batches),
                    total: total_sum / n_batches,
                },
                val_loss,
                lr,
            });
            global += 1;
            ran += 1;
            let (improved, stop) = stopper.update(val_loss);
            if improved {
                best = net.clone();
            }
            if stop {
                break;
            }
        }
        net = best;
        best_val = stopper.best;
        phase_epochs.push(ran);
    }
    Ok(TrainOutcome {
        net,
        history,
        phase_epochs,
        best_val,
    })
}

/// JSON checkpoint: architecture, parameters, running statistics and gate
/// scaler.
pub fn to_checkpoint(net: &Network) -> String {
    serde_json::to_string(net).expect("network serialises")
}

pub fn from_checkpoint(s: &str) -> Result<Network, serde_json::Error> {
    serde_json::from_str(s)
}

/// Small fixtures and a finite-difference gradient check.
pub mod check {
    use super::*;

    /// Random dataset whose first feature moves with pressure so the derivative
    /// path is exercised.
    pub fn toy_dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = seed::rng(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let p: Vec<f64> = (0..n).map(|i| 10.0 + 90.0 * i as f64 / n as f64).collect();
        let pt = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { p[i] } else { 300.0 + (i % 3) as f64 * 10.0 });
        let sens = 0.01;
        let mut xp = x.clone();
        let mut xm = x.clone();
        let mut ptp = pt.clone();
        let mut ptm = pt.clone();
        for i in 0..n {
            let h = fd_step(p[i]);
            xp[[i, 0]] += sens * h;
            xm[[i, 0]] -= sens * h;
            ptp[[i, 0]] += h;
            ptm[[i, 0]] -= h;
        }
        Dataset {
            y: (0..n).map(|i| 0.1 + 0.8 * (i as f64 / n as f64)).collect(),
            qmax: (0..n).map(|i| if i % 2 == 0 { 0.3 } else { 1.2 }).collect(),
            lithology: vec![Lithology::Clay; n],
            sample_key: (0..n).map(|i| format!("s{i}")).collect(),
            x,
            pt,
            x_plus: xp,
            x_minus: xm,
            pt_plus: ptp,
            pt_minus: ptm,
        }
    }

    /// Width-4 network with frozen, randomised batch-norm statistics.
    pub fn tiny_network(d: usize) -> Network {
        let mut spec = ArchSpec::new(d, 3);
        spec.scale_widths = vec![4, 4, 4];
        spec.backbone_widths = vec![4, 4, 4];
        spec.dropout = 0.0;
        let mut net = Network::new(&spec).unwrap();
        net.freeze_bn = true;
        let mut rng = seed::rng(11);
        for l in 0..net.running.len() {
            let w = net.running[l].0.len();
            net.running[l] = (
                Array1::from_shape_fn(w, |_| rng.random_range(-0.2..0.2)),
                Array1::from_shape_fn(w, |_| rng.random_range(0.5..2.0)),
            );
        }
        // non-trivial batch-norm affine and biases
        for t in net.params.iter_mut() {
            if t.nrows() == 1 {
                t.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
            }
        }
        net.gate_scaler = GateScaler {
            mean: [50.0, 310.0],
            std: [30.0, 8.0],
        };
        net
    }

    /// Relative error per parameter tensor between analytic and central
    /// finite-difference gradients of the total loss.
    pub fn gradient_check(net: &Network, data: &Dataset, weights: [f64; 4]) -> Vec<f64> {
        let (_, g) = loss_and_grad(net, data, weights).unwrap();
        let mut errs = vec![];
        for k in 0..net.params.len() {
            let mut fd = Array2::zeros(net.params[k].raw_dim());
            for idx in 0..net.params[k].len() {
                let (r, c) = (idx / net.params[k].ncols(), idx % net.params[k].ncols());
                let h = 1e-6 * net.params[k][[r, c]].abs().max(1.0);
                let mut np = net.clone();
                np.params[k][[r, c]] += h;
                let lp = loss_and_grad(&np, data, weights).unwrap().0;
                np.params[k][[r, c]] -= 2.0 * h;
                let lm = loss_and_grad(&np, data, weights).unwrap().0;
                fd[[r, c]] = (lp - lm) / (2.0 * h);
            }
            let diff = (&fd - &g[k]).mapv(|v| v * v).sum().sqrt();
            let scale = fd.mapv(|v| v * v).sum().sqrt() + g[k].mapv(|v| v * v).sum().sqrt();
            errs.push(if scale == 0.0 { 0.0 } else { diff / scale });
        }
        errs
    }
}

#[cfg(test)]
mod tests {
    use super::check::{gradient_check, tiny_network as tiny, toy_dataset as toy};
    use super::*;
    use approx::assert_relative_eq;



    #[test]
    fn default_architecture() {
        let spec = ArchSpec::new(45, 1);
        let net = Network::new(&spec).unwrap();
        // 45·448 + 448 + 2·448 + 448 + (448·256 + 3·256) + (256·512 + 3·512)
        // + (512·256 + 3·256) + (256·128 + 3·128) + 128 + 1
        let expect = 45 * 448 + 448 + 2 * 448 + 448 + 448 * 256 + 768 + 256 * 512 + 1536 + 512 * 256 + 768 + 256 * 128 + 384 + 129;
        assert_eq!(net.param_count(), expect);
        assert_eq!(net.skips, vec![None, None, Some(1), None]);
        assert_eq!(Network::new(&spec).unwrap(), net);
        let mut bad = spec.clone();
        bad.dropout = 1.0;
        assert!(Network::new(&bad).is_err());
    }

    #[test]
    fn zero_weights_give_ln2_and_half_gate() {
        let mut net = Network::new(&ArchSpec::new(3, 1)).unwrap();
        for t in net.params.iter_mut() {
            t.fill(0.0);
        }
        let data = toy(5, 3, 1);
        let c = net.forward(&data.x, &data.pt, Mode::Eval, None).unwrap();
        for y in c.y.iter() {
            assert_relative_eq!(*y, std::f64::consts::LN_2, epsilon = 1e-15);
        }
        assert!(c.gate.iter().all(|g| *g == 0.5));
        assert!(matches!(
            net.forward(&toy(5, 4, 1).x, &data.pt, Mode::Eval, None),
            Err(PinnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn outputs_non_negative() {
        let net = Network::new(&ArchSpec::new(4, 9)).unwrap();
        let mut rng = seed::rng(2);
        let x = Array2::from_shape_fn((2000, 4), |_| rng.random_range(-50.0..50.0));
        let pt = Array2::from_shape_fn((2000, 2), |_| rng.random_range(-1e3..1e3));
        assert!(net.predict(&x, &pt).unwrap().iter().all(|y| *y >= 0.0));
    }

    #[test]
    fn train_and_eval_agree_without_stochastic_layers() {
        let mut spec = ArchSpec::new(3, 5);
        spec.dropout = 0.0;
        let mut net = Network::new(&spec).unwrap();
        net.freeze_bn = true;
        let d = toy(10, 3, 2);
        let mut rng = seed::rng(0);
        let a = net.forward(&d.x, &d.pt, Mode::Train, Some(&mut rng)).unwrap().y;
        let b = net.forward(&d.x, &d.pt, Mode::Eval, None).unwrap().y;
        assert_eq!(a, b);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = tiny(3);
        let d = toy(10, 3, 4);
        let c = net.forward(&d.x, &d.pt, Mode::Eval, None).unwrap();
        let (_, dx, dpt) = net.backward(&c, &Array1::ones(10));
        let h = 1e-4;
        for i in 0..10 {
            for j in 0..3 {
                let mut xp = d.x.clone();
                let mut xm = d.x.clone();
                xp[[i, j]] += h;
                xm[[i, j]] -= h;
                let fp = net.predict(&xp, &d.pt).unwrap()[i];
                let fm = net.predict(&xm, &d.pt).unwrap()[i];
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - dx[[i, j]]).abs() <= 1e-4 * fd.abs().max(1e-3), "{fd} {}", dx[[i, j]]);
            }
            let mut pp = d.pt.clone();
            let mut pm = d.pt.clone();
            pp[[i, 0]] += h;
            pm[[i, 0]] -= h;
            let fd = (net.predict(&d.x, &pp).unwrap()[i] - net.predict(&d.x, &pm).unwrap()[i]) / (2.0 * h);
            assert!((fd - dpt[[i, 0]]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn pressure_derivative_methods_agree() {
        let net = tiny(3);
        let d = toy(20, 3, 6);
        let a = dqdp_fd(&net, &d).unwrap();
        let b = dqdp_reverse(&net, &d).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-3 * x.abs().max(1e-3), "{x} {y}");
        }
    }


    #[test]
    fn parameter_gradients_match_finite_differences() {
        let net = tiny(3);
        let d = toy(16, 3, 8);
        let preds = net.predict(&d.x, &d.pt).unwrap();
        let dq = dqdp_fd(&net, &d).unwrap();
        let terms = loss_terms(&preds, &d.y, &d.pressures(), &d.qmax, &dq);
        assert!(terms.physics > 0.0 && terms.bounds > 0.0, "{terms:?}");
        assert!(terms.monotonicity > 0.0, "{terms:?}");
        for e in gradient_check(&net, &d, [1.0, 1.0, 1.0, 1.0]) {
            assert!(e <= 1e-3, "{e}");
        }
    }

    #[test]
    fn batchnorm_training_gradients() {
        let mut net = tiny(3);
        net.freeze_bn = false;
        let d = toy(12, 3, 9);
        let f = |n: &Network| -> f64 {
            let c = n.forward(&d.x, &d.pt, Mode::Train, None).unwrap();
            loss_terms(&c.y.to_vec(), &d.y, &d.pressures(), &d.qmax, &[]).data
        };
        let c = net.forward(&d.x, &d.pt, Mode::Train, None).unwrap();
        let g = output_gradients(&c.y.to_vec(), &d.y, &d.pressures(), &d.qmax);
        let (grads, _, _) = net.backward(&c, &g[0]);
        for k in 0..net.params.len() {
            for idx in 0..net.params[k].len() {
                let (r, cc) = (idx / net.params[k].ncols(), idx % net.params[k].ncols());
                let h = 1e-6;
                let mut np = net.clone();
                np.params[k][[r, cc]] += h;
                let lp = f(&np);
                np.params[k][[r, cc]] -= 2.0 * h;
                let lm = f(&np);
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - grads[k][[r, cc]]).abs() <= 1e-5 + 1e-3 * fd.abs(), "{k} {fd} {}", grads[k][[r, cc]]);
            }
        }
    }

    #[test]
    fn loss_arithmetic() {
        assert_eq!(data_weight(0.1), 1.0);
        assert_relative_eq!(data_weight(0.3), 1.231_058_578_630_005, epsilon = 1e-12);
        assert_relative_eq!(physics_contribution(1.5, 1.2), 0.3, epsilon = 1e-15);
        let l = loss_terms(&[1.5], &[1.5], &[60.0], &[1.2], &[0.0]);
        assert_relative_eq!(l.physics, 0.3, epsilon = 1e-15);
        assert_relative_eq!(l.bounds, 0.3, epsilon = 1e-15);
        assert_eq!(loss_terms(&[1.5], &[1.0], &[50.0], &[1.2], &[0.0]).physics, 0.0);
        // penalty zero exactly when every derivative clears the slack
        assert_eq!(loss_terms(&[0.5; 2], &[0.5; 2], &[1.0; 2], &[1.0; 2], &[0.0, -1e-6]).monotonicity, 0.0);
        assert!(loss_terms(&[0.5; 2], &[0.5; 2], &[1.0; 2], &[1.0; 2], &[0.0, -2e-6]).monotonicity > 0.0);
        let w = l.with_lambdas([1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(w.total, 2.0 * 0.3 + 3.0 * 0.3, epsilon = 1e-15);
    }

    #[test]
    fn lambdas() {
        let mut s = EmaState::default();
        for l in adaptive_lambdas([3.0; 4], &mut s, 0.1) {
            assert_relative_eq!(l, 1.0, epsilon = 1e-12);
        }
        let mut s = EmaState::default();
        let mut l = [0.0; 4];
        for _ in 0..10 {
            l = adaptive_lambdas([2.0, 1.0, 1.0, 1.0], &mut s, 0.1);
        }
        for (a, b) in l.iter().zip([1.0, 2.0, 2.0, 2.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-9);
        }
        let mut s = EmaState::default();
        let l = adaptive_lambdas([1.0, 0.0, 1.0, 1.0], &mut s, 0.1);
        assert!(l[1].is_finite() && l[1] > 1e11);
    }

    #[test]
    fn learning_rate_schedule() {
        let s = TrainSchedule::default();
        assert_eq!(s.lr_at(0, 17), 1.2e-3);
        assert_eq!(s.lr_at(1, 0), 5e-4);
        assert_relative_eq!(s.lr_at(1, 250), 1e-6, epsilon = 1e-18);
        assert_relative_eq!(s.lr_at(1, 125), 2.505e-4, epsilon = 1e-15);
        assert_eq!(s.lr_at(2, 0), 1e-4);
        assert_relative_eq!(s.lr_at(2, 100), 1e-7, epsilon = 1e-19);
    }

    #[test]
    fn memorises_one_row() {
        let mut spec = ArchSpec::new(3, 2);
        spec.scale_widths = vec![8, 8, 8];
        spec.backbone_widths = vec![16, 16];
        spec.dropout = 0.0;
        let mut net = Network::new(&spec).unwrap();
        net.freeze_bn = true;
        let d = toy(1, 3, 3);
        let sched = TrainSchedule {
            phases: vec![PhaseSpec {
                epochs: 2000,
                lr_max: 1e-2,
                lr_min: 1e-6,
                weights: PhaseWeights::DataOnly,
            }],
            patience: usize::MAX,
            tolerance: 0.0,
            weight_decay: 0.0,
            ..TrainSchedule::default()
        };
        let out = train(net, &d, &d, &sched, 1).unwrap();
        let last = out.history.last().unwrap();
        assert!(out.best_val < 1e-6, "{}", out.best_val);
        assert!(last.train.data < 1e-6 || out.best_val < 1e-6);
    }

    #[test]
    fn stops_exactly_at_patience_when_validation_is_frozen() {
        let mut spec = ArchSpec::new(3, 2);
        spec.scale_widths = vec![4];
        spec.backbone_widths = vec![4];
        let mut net = Network::new(&spec).unwrap();
        net.freeze_bn = true;
        let d = toy(20, 3, 3);
        let sched = TrainSchedule {
            phases: vec![PhaseSpec {
                epochs: 100,
                lr_max: 0.0,
                lr_min: 0.0,
                weights: PhaseWeights::DataOnly,
            }],
            ..TrainSchedule::default()
        };
        let out = train(net, &d, &d, &sched, 1).unwrap();
        assert_eq!(out.phase_epochs, vec![1 + sched.patience]);
        let mut es = EarlyStopping::new(3, 1e-5);
        assert_eq!(es.update(1.0), (true, false));
        assert_eq!(es.update(1.0 - 1e-6), (false, false));
        assert_eq!(es.update(0.5), (true, false));
        assert_eq!(es.update(0.5), (false, false));
        assert_eq!(es.update(0.5), (false, false));
        assert_eq!(es.update(0.5), (false, true));
    }

    #[test]
    fn training_is_deterministic_and_checkpoints_round_trip() {
        let mut spec = ArchSpec::new(3, 4);
        spec.scale_widths = vec![8, 8];
        spec.backbone_widths = vec![8, 8];
        let d = toy(40, 3, 5);
        let sched = TrainSchedule::default().scale_epochs(0.02);
        let a = train(Network::new(&spec).unwrap(), &d, &d, &sched, 9).unwrap();
        let b = train(Network::new(&spec).unwrap(), &d, &d, &sched, 9).unwrap();
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
        assert_eq!(a.net, b.net);
        assert_eq!(a.history.iter().filter(|r| r.phase == 1).count(), 5);
        let back = from_checkpoint(&to_checkpoint(&a.net)).unwrap();
        assert_eq!(back, a.net);
    }

    #[test]
    fn physics_ramp_is_linear() {
        let mut spec = ArchSpec::new(3, 4);
        spec.scale_widths = vec![4];
        spec.backbone_widths = vec![4];
        let d = toy(30, 3, 5);
        let sched = TrainSchedule {
            phases: vec![PhaseSpec {
                epochs: 10,
                lr_max: 1e-3,
                lr_min: 1e-3,
                weights: PhaseWeights::Adaptive { physics_ramp: true },
            }],
            patience: usize::MAX,
            batch_size: 64,
            ..TrainSchedule::default()
        };
        let out = train(Network::new(&spec).unwrap(), &d, &d, &sched, 2).unwrap();
        assert_eq!(out.history[0].train.lambdas[1], 0.0);
        assert!(out.history.iter().all(|r| r.train.total.is_finite()));
    }
}
