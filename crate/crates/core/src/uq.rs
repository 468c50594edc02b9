//! Architecture-diverse ensembles, aggregation and temperature-scaled
//! prediction intervals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pinn::{self, ArchSpec, Dataset, Network, PinnError, TrainOutcome, TrainSchedule};
use crate::stats;

pub const ENSEMBLE_SEEDS: [u64; 10] = [42, 123, 456, 789, 2024, 3141, 1618, 2718, 9999, 7777];
/// Two-sided 95% standard-normal critical value.
pub const Z95: f64 = 1.959964;
pub const TAU_RANGE: (f64, f64) = (1e-3, 1e3);
/// Accepted distance of calibrated coverage from the target.
pub const COVERAGE_TOLERANCE: f64 = 0.005;
pub const LEVELS: [f64; 3] = [0.68, 0.95, 0.99];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UqError {
    #[error("an ensemble needs at least 2 members, got {0}")]
    TooFewMembers(usize),
    #[error("diversity needs at least 10 rows, got {0}")]
    TooFewRows(usize),
    #[error("only {positive} of {n} rows have a positive spread")]
    DegenerateSpread { positive: usize, n: usize },
    #[error("target coverage unreachable; closest {achieved} at tau = {tau}")]
    UnreachableTarget { tau: f64, achieved: f64 },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid ensemble: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Pinn(#[from] PinnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSpec {
    pub seed: u64,
    pub width_mult: f64,
    /// Backbone depth: 3, 4 or 5 layers.
    pub depth: usize,
    pub dropout: f64,
    /// Phase-1 learning rate; later phases scale by the same factor.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub members: Vec<MemberSpec>,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        // (width_mult, depth, dropout, lr)
        const TABLE: [(f64, usize, f64, f64); 10] = [
            (1.0, 4, 0.10, 1.2e-3),
            (0.75, 3, 0.08, 1.0e-3),
            (1.25, 5, 0.12, 1.5e-3),
            (0.75, 4, 0.15, 1.2e-3),
            (1.0, 5, 0.08, 1.0e-3),
            (1.25, 3, 0.10, 1.5e-3),
            (0.75, 5, 0.12, 1.2e-3),
            (1.0, 3, 0.15, 1.5e-3),
            (1.25, 4, 0.08, 1.0e-3),
            (1.0, 4, 0.12, 1.2e-3),
        ];
        EnsembleSpec {
            members: ENSEMBLE_SEEDS
                .iter()
                .zip(TABLE)
                .map(|(&seed, (width_mult, depth, dropout, lr))| MemberSpec {
                    seed,
                    width_mult,
                    depth,
                    dropout,
                    lr,
                })
                .collect(),
        }
    }
}

pub fn backbone_for_depth(depth: usize) -> Option<Vec<usize>> {
    match depth {
        3 => Some(vec![256, 512, 128]),
        4 => Some(vec![256, 512, 256, 128]),
        5 => Some(vec![256, 512, 256, 256, 128]),
        _ => None,
    }
}

pub const BASE_LR: f64 = 1.2e-3;

impl EnsembleSpec {
    /// Members sharing the default architecture, differing only by seed.
    pub fn homogeneous(seeds: &[u64]) -> Self {
        EnsembleSpec {
            members: seeds
                .iter()
                .map(|&seed| MemberSpec {
                    seed,
                    width_mult: 1.0,
                    depth: 4,
                    dropout: 0.10,
                    lr: BASE_LR,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), UqError> {
        if self.members.len() < 2 {
            return Err(UqError::TooFewMembers(self.members.len()));
        }
        for m in &self.members {
            if backbone_for_depth(m.depth).is_none() {
                return Err(UqError::InvalidSpec(format!("unsupported depth {}", m.depth)));
            }
            if !(m.lr > 0.0) || !(m.width_mult > 0.0) || !(0.0..1.0).contains(&m.dropout) {
                return Err(UqError::InvalidSpec(format!("invalid member {m:?}")));
            }
        }
        Ok(())
    }

    /// At least three distinct widths and two distinct depths.
    pub fn is_architecture_diverse(&self) -> bool {
        let mut w: Vec<u64> = self.members.iter().map(|m| m.width_mult.to_bits()).collect();
        let mut d: Vec<usize> = self.members.iter().map(|m| m.depth).collect();
        w.sort_unstable();
        w.dedup();
        d.sort_unstable();
        d.dedup();
        w.len() >= 3 && d.len() >= 2
    }

    pub fn arch(&self, member: &MemberSpec, input_dim: usize) -> ArchSpec {
        ArchSpec {
            input_dim,
            backbone_widths: backbone_for_depth(member.depth).unwrap_or_else(|| vec![256, 512, 256, 128]),
            dropout: member.dropout,
            width_mult: member.width_mult,
            ..ArchSpec::new(input_dim, member.seed)
        }
    }
}

/// Trains every member in parallel; each task owns its seed.
pub fn train_ensemble(
    spec: &EnsembleSpec,
    train: &Dataset,
    val: &Dataset,
    schedule: &TrainSchedule,
) -> Result<Vec<TrainOutcome>, UqError> {
    spec.validate()?;
    let dim = train.x.ncols();
    spec.members
        .par_iter()
        .map(|m| {
            let net = Network::new(&spec.arch(m, dim))?;
            let sched = schedule.scale_lr(m.lr / BASE_LR);
            Ok(pinn::train(net, train, val, &sched, m.seed)?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub mean: f64,
    pub sigma_raw: f64,
    pub sigma_cal: f64,
}

impl EnsemblePrediction {
    /// Central interval mean ± z(level)·σ_cal.
    pub fn interval(&self, level: f64) -> (f64, f64) {
        let z = z_for(level);
        (self.mean - z * self.sigma_cal, self.mean + z * self.sigma_cal)
    }
}

pub fn z_for(level: f64) -> f64 {
    if level == 0.95 {
        Z95
    } else {
        stats::normal_critical(level)
    }
}

/// Mean and population standard deviation across member outputs
/// (`outputs[member][row]`).
pub fn aggregate(outputs: &[Vec<f64>]) -> Result<Vec<EnsemblePrediction>, UqError> {
    if outputs.len() < 2 {
        return Err(UqError::TooFewMembers(outputs.len()));
    }
    let n = outputs[0].len();
    if let Some(o) = outputs.iter().find(|o| o.len() != n) {
        return Err(UqError::LengthMismatch(n, o.len()));
    }
    Ok((0..n)
        .map(|i| {
            let col: Vec<f64> = outputs.iter().map(|o| o[i]).collect();
            let sd = stats::std_dev(&col);
            EnsemblePrediction {
                mean: stats::mean(&col),
                sigma_raw: sd,
                sigma_cal: sd,
            }
        })
        .collect())
}

pub fn member_outputs(members: &[Network], x: &ndarray::Array2<f64>, pt: &ndarray::Array2<f64>) -> Result<Vec<Vec<f64>>, UqError> {
    members.iter().map(|m| Ok(m.predict(x, pt)?)).collect()
}

/// Uncalibrated ensemble prediction per row.
pub fn predict_ensemble(members: &[Network], x: &ndarray::Array2<f64>, pt: &ndarray::Array2<f64>) -> Result<Vec<EnsemblePrediction>, UqError> {
    if members.len() < 2 {
        return Err(UqError::TooFewMembers(members.len()));
    }
    aggregate(&member_outputs(members, x, pt)?)
}

/// Sets σ_cal = τ·σ_raw.
pub fn apply_temperature(preds: &mut [EnsemblePrediction], tau: f64) {
    for p in preds {
        p.sigma_cal = tau * p.sigma_raw;
    }
}

/// Fraction of rows with |y − mean| ≤ z(level)·τ·σ_raw (inclusive bounds).
pub fn coverage(preds: &[EnsemblePrediction], truth: &[f64], tau: f64, level: f64) -> f64 {
    let z = z_for(level);
    let hit = preds
        .iter()
        .zip(truth)
        .filter(|(p, y)| (*y - p.mean).abs() <= z * tau * p.sigma_raw)
        .count();
    hit as f64 / preds.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub tau: f64,
    pub target: f64,
    /// Coverage at 68/95/99% with τ = 1.
    pub coverage_before: [f64; 3],
    pub coverage_after: [f64; 3],
    pub iterations: usize,
}

/// Log-space bisection of τ over [`TAU_RANGE`] until the coverage at
/// `target` lies within [`COVERAGE_TOLERANCE`]. The first probe is τ = 1.
pub fn calibrate_temperature(preds: &[EnsemblePrediction], truth: &[f64], target: f64) -> Result<CalibrationResult, UqError> {
    if preds.len() != truth.len() {
        return Err(UqError::LengthMismatch(preds.len(), truth.len()));
    }
    let n = preds.len();
    let positive = preds.iter().filter(|p| p.sigma_raw > 0.0).count();
    if n == 0 || 2 * positive < n {
        return Err(UqError::DegenerateSpread { positive, n });
    }
    let cov = |tau: f64| coverage(preds, truth, tau, target);
    let report = |tau: f64| LEVELS.map(|l| coverage(preds, truth, tau, l));
    let (mut lo, mut hi) = (TAU_RANGE.0.ln(), TAU_RANGE.1.ln());
    let mut iterations = 0;
    let mut tau = None;
    while iterations < 200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let c = cov(mid.exp());
        if (c - target).abs() <= COVERAGE_TOLERANCE {
            tau = Some(mid.exp());
            break;
        }
        if c < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let tau = match tau {
        Some(t) => t,
        None => {
            let (tl, th) = (lo.exp(), hi.exp());
            let (cl, ch) = (cov(tl), cov(th));
            let (t, c) = if (cl - target).abs() < (ch - target).abs() { (tl, cl) } else { (th, ch) };
            return Err(UqError::UnreachableTarget { tau: t, achieved: c });
        }
    };
    Ok(CalibrationResult {
        tau,
        target,
        coverage_before: report(1.0),
        coverage_after: report(tau),
        iterations,
    })
}

/// Mean pairwise Pearson correlation between member prediction vectors and
/// the mean ensemble spread.
pub fn ensemble_diversity(outputs: &[Vec<f64>]) -> Result<(f64, f64), UqError> {
    let agg = aggregate(outputs)?;
    if agg.len() < 10 {
        return Err(UqError::TooFewRows(agg.len()));
    }
    let mut rs = vec![];
    for i in 0..outputs.len() {
        for j in i + 1..outputs.len() {
            // a constant member has no defined correlation; count it as 0
            rs.push(stats::pearson(&outputs[i], &outputs[j]).unwrap_or(0.0));
        }
    }
    Ok((stats::mean(&rs), stats::mean(&agg.iter().map(|p| p.sigma_raw).collect::<Vec<_>>())))
}

/// Ensemble manifest written next to member checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub version: String,
    pub members: Vec<ManifestMember>,
    pub tau: f64,
    /// Path of the feature pipeline JSON, relative to the manifest.
    pub pipeline: String,
    pub qmax: crate::data::QmaxTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMember {
    pub spec: MemberSpec,
    pub checkpoint: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn default_spec_is_diverse() {
        let s = EnsembleSpec::default();
        assert_eq!(s.members.len(), 10);
        assert!(s.is_architecture_diverse());
        assert!(s.validate().is_ok());
        assert!(!EnsembleSpec::homogeneous(&ENSEMBLE_SEEDS).is_architecture_diverse());
        assert_eq!(s.members.iter().map(|m| m.seed).collect::<Vec<_>>(), ENSEMBLE_SEEDS);
        let one = EnsembleSpec { members: s.members[..1].to_vec() };
        assert_eq!(one.validate(), Err(UqError::TooFewMembers(1)));
    }

    #[test]
    fn aggregation_examples() {
        let p = aggregate(&[vec![0.1], vec![0.3]]).unwrap();
        assert_relative_eq!(p[0].mean, 0.2, epsilon = 1e-15);
        assert_relative_eq!(p[0].sigma_raw, 0.1, epsilon = 1e-15);
        let same = aggregate(&[vec![0.4, 0.5], vec![0.4, 0.5]]).unwrap();
        assert!(same.iter().all(|q| q.sigma_raw == 0.0 && q.interval(0.95) == (q.mean, q.mean)));
        assert_eq!(aggregate(&[vec![1.0]]), Err(UqError::TooFewMembers(1)));
        assert_relative_eq!(z_for(0.99), 2.5758293, epsilon = 1e-6);
    }

    #[test]
    fn calibration_fixed_point_and_guard() {
        // rows with |e|/σ spread so that exactly 95% fall within 1.96σ at τ = 1
        let n = 200;
        let preds: Vec<EnsemblePrediction> = (0..n)
            .map(|_| EnsemblePrediction {
                mean: 0.0,
                sigma_raw: 1.0,
                sigma_cal: 1.0,
            })
            .collect();
        let truth: Vec<f64> = (0..n).map(|i| if i < 190 { 1.0 } else { 3.0 }).collect();
        let c = calibrate_temperature(&preds, &truth, 0.95).unwrap();
        assert_eq!(c.tau, 1.0);
        assert_eq!(c.coverage_before[1], 0.95);
        let flat: Vec<EnsemblePrediction> = preds.iter().map(|p| EnsemblePrediction { sigma_raw: 0.0, ..*p }).collect();
        assert!(matches!(calibrate_temperature(&flat, &truth, 0.95), Err(UqError::DegenerateSpread { .. })));
    }

    #[test]
    fn under_dispersed_spread_recovers_factor_two() {
        let mut rng = crate::seed::rng(3);
        let n = 20000;
        let mut preds = vec![];
        let mut truth = vec![];
        for _ in 0..n {
            let s: f64 = rng.random_range(0.05..0.2);
            let e: f64 = StandardNormal.sample(&mut rng);
            preds.push(EnsemblePrediction {
                mean: 1.0,
                sigma_raw: s,
                sigma_cal: s,
            });
            truth.push(1.0 + 2.0 * s * e);
        }
        let c = calibrate_temperature(&preds, &truth, 0.95).unwrap();
        assert!((c.tau - 2.0).abs() < 0.1, "{}", c.tau);
        assert!((c.coverage_after[1] - 0.95).abs() <= COVERAGE_TOLERANCE);
        let before = preds.iter().map(|p| p.mean).collect::<Vec<_>>();
        apply_temperature(&mut preds, c.tau);
        assert_eq!(before, preds.iter().map(|p| p.mean).collect::<Vec<_>>());
    }

    #[test]
    fn unreachable_target_reports_closest() {
        let preds = vec![
            EnsemblePrediction {
                mean: 0.0,
                sigma_raw: 1.0,
                sigma_cal: 1.0,
            };
            4
        ];
        // half the rows sit far outside any interval with τ ≤ 1e3
        let truth = vec![0.0, 0.0, 1e9, 1e9];
        match calibrate_temperature(&preds, &truth, 0.95) {
            Err(UqError::UnreachableTarget { achieved, .. }) => assert_eq!(achieved, 0.5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn diversity_examples() {
        let mut rng = crate::seed::rng(9);
        let a: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let (r, _) = ensemble_diversity(&[a.clone(), a.clone()]).unwrap();
        assert_relative_eq!(r, 1.0, epsilon = 1e-12);
        let (r, s) = ensemble_diversity(&[a, b]).unwrap();
        assert!(r.abs() < 0.2 && s > 0.0);
        assert_eq!(ensemble_diversity(&[vec![1.0; 5], vec![2.0; 5]]), Err(UqError::TooFewRows(5)));
    }

    proptest! {
        #[test]
        fn coverage_monotone_in_tau(seed in 0u64..500, t1 in 0.001f64..100.0, t2 in 0.001f64..100.0) {
            let mut rng = crate::seed::rng(seed);
            let preds: Vec<EnsemblePrediction> = (0..50).map(|_| {
                let s = rng.random_range(0.0..1.0);
                EnsemblePrediction { mean: rng.random_range(-1.0..1.0), sigma_raw: s, sigma_cal: s }
            }).collect();
            let truth: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (a, b) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(coverage(&preds, &truth, a, 0.95) <= coverage(&preds, &truth, b, 0.95));
        }

        #[test]
        fn aggregation_permutation_invariant(vals in proptest::collection::vec(0.0f64..2.0, 4..12)) {
            let outs: Vec<Vec<f64>> = vals.iter().map(|v| vec![*v]).collect();
            let mut rev = outs.clone();
            rev.reverse();
            let a = aggregate(&outs).unwrap()[0];
            let b = aggregate(&rev).unwrap()[0];
            prop_assert!((a.mean - b.mean).abs() < 1e-15 && (a.sigma_raw - b.sigma_raw).abs() < 1e-15);
            prop_assert!(a.mean >= 0.0);
        }
    }
}
