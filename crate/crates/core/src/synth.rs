//! Seeded synthetic sorbent populations with known generating parameters.
//!
//! Each sample draws a property row, then links its saturation capacity to a
//! lithology driver property (surface area for clays, TOC for shales, fixed
//! carbon for coals) on a log scale. Affinity follows K(T) = K0·exp(−ΔH/RT).
//! The heterogeneity dial multiplies every log-deviation of the parameters
//! from their lithology centre.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{IsothermRecord, Lithology, QmaxTable, SamplePropertySet};
use crate::isotherm::{FunctionalForm, ParamVector};
use crate::seed;
use crate::GAS_CONSTANT;

/// Temperature at which the affinity centre `affinity` is specified.
pub const T_REF: f64 = 298.15;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid population spec: {0}")]
    InvalidSpec(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TruthForm {
    Sips,
    Langmuir,
}

impl TruthForm {
    pub fn form(self) -> FunctionalForm {
        match self {
            TruthForm::Sips => FunctionalForm::Sips,
            TruthForm::Langmuir => FunctionalForm::Langmuir,
        }
    }
}

/// How one lithology's parameters depend on its properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkCoefficients {
    /// Centre of q_max as a fraction of the lithology capacity.
    pub capacity_fraction: f64,
    /// Slope of ln q_max on the driver's position in its log range, in [−1, 1].
    pub capacity_slope: f64,
    /// Standard deviation of the idiosyncratic ln q_max term.
    pub capacity_noise: f64,
    /// Affinity centre at [`T_REF`], 1/bar.
    pub affinity: f64,
    /// Slope of ln K on the driver position.
    pub affinity_slope: f64,
    pub affinity_noise: f64,
    /// Centre of the Sips exponent n_s.
    pub exponent: f64,
    pub exponent_noise: f64,
    /// ΔH° range in kJ/mol; the draw is uniform and the dial widens it about
    /// its midpoint, clamped to [−30, −5].
    pub enthalpy: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkTable {
    pub clay: LinkCoefficients,
    pub shale: LinkCoefficients,
    pub coal: LinkCoefficients,
}

impl LinkTable {
    pub fn get(&self, l: Lithology) -> &LinkCoefficients {
        match l {
            Lithology::Clay => &self.clay,
            Lithology::Shale => &self.shale,
            Lithology::Coal => &self.coal,
        }
    }
}

impl Default for LinkTable {
    fn default() -> Self {
        let base = LinkCoefficients {
            capacity_fraction: 0.35,
            capacity_slope: 0.8,
            capacity_noise: 0.25,
            affinity: 0.03,
            affinity_slope: 0.3,
            affinity_noise: 0.4,
            exponent: 1.3,
            exponent_noise: 0.15,
            enthalpy: (-20.0, -6.0),
        };
        LinkTable {
            clay: base.clone(),
            shale: LinkCoefficients {
                capacity_fraction: 0.3,
                affinity: 0.02,
                ..base.clone()
            },
            coal: LinkCoefficients {
                capacity_fraction: 0.45,
                affinity: 0.05,
                exponent: 1.15,
                enthalpy: (-28.0, -8.0),
                ..base
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub n_per_lithology: usize,
    pub truth_form: TruthForm,
    /// mmol/g
    pub noise_sigma: f64,
    /// kelvin
    pub temperatures: Vec<f64>,
    /// bar, ascending
    pub pressures: Vec<f64>,
    /// Parameter dispersion multiplier; 0 makes every sample of a lithology
    /// identical.
    pub heterogeneity: f64,
    pub links: LinkTable,
    pub qmax: QmaxTable,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            n_per_lithology: 40,
            truth_form: TruthForm::Sips,
            noise_sigma: 0.005,
            temperatures: vec![273.15, 298.15, 323.15],
            pressures: vec![1.0, 2.0, 5.0, 10.0, 20.0, 35.0, 50.0, 75.0, 100.0, 125.0, 150.0, 180.0],
            heterogeneity: 1.0,
            links: LinkTable::default(),
            qmax: QmaxTable::default(),
            seed: 42,
        }
    }
}

pub const PRESETS: [&str; 3] = ["default", "heterogeneous", "pinn_benchmark"];

impl PopulationSpec {
    /// Named configurations.
    ///
    /// `heterogeneous`: 20 samples per lithology on one isotherm each, for
    /// individual-versus-pooled fitting studies.
    /// `pinn_benchmark`: 40 samples per lithology at two temperatures and five
    /// pressures (1,200 rows); capacities sit near the lithology limit and
    /// affinities are high, so uptakes above 50 bar fall within 70–100% of it.
    pub fn preset(name: &str) -> Result<Self, SynthError> {
        match name {
            "default" => Ok(Self::default()),
            "heterogeneous" => Ok(PopulationSpec {
                n_per_lithology: 20,
                noise_sigma: 0.001,
                temperatures: vec![T_REF],
                ..Self::default()
            }),
            "pinn_benchmark" => {
                let near_capacity = LinkCoefficients {
                    capacity_fraction: 0.9,
                    capacity_slope: 0.08,
                    capacity_noise: 0.01,
                    affinity: 0.25,
                    affinity_slope: 0.1,
                    affinity_noise: 0.05,
                    exponent: 1.0,
                    exponent_noise: 0.03,
                    enthalpy: (-14.0, -10.0),
                };
                Ok(PopulationSpec {
                    n_per_lithology: 40,
                    noise_sigma: 0.004,
                    temperatures: vec![273.15, 323.15],
                    pressures: vec![5.0, 20.0, 50.0, 100.0, 180.0],
                    links: LinkTable {
                        clay: near_capacity.clone(),
                        shale: near_capacity.clone(),
                        coal: near_capacity,
                    },
                    ..Self::default()
                })
            }
            other => Err(SynthError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.n_per_lithology == 0 {
            return bad("n_per_lithology must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative");
        }
        if self.temperatures.is_empty() || self.temperatures.iter().any(|t| !(*t > 0.0)) {
            return bad("temperatures must be positive and non-empty");
        }
        if self.pressures.is_empty()
            || self.pressures.iter().any(|p| !(*p >= 0.0))
            || self.pressures.windows(2).any(|w| w[1] < w[0])
        {
            return bad("pressures must be non-negative and ascending");
        }
        if !(self.heterogeneity >= 0.0 && self.heterogeneity.is_finite()) {
            return bad("heterogeneity must be finite and non-negative");
        }
        self.qmax.validate().map_err(SynthError::InvalidSpec)?;
        for l in Lithology::ALL {
            let c = self.links.get(l);
            if !(c.capacity_fraction > 0.0 && c.affinity > 0.0 && c.exponent > 0.0) {
                return bad("link centres must be positive");
            }
            let (lo, hi) = c.enthalpy;
            if !(-30.0 <= lo && lo <= hi && hi <= -5.0) {
                return bad("enthalpy range must lie within [-30, -5] kJ/mol");
            }
        }
        Ok(())
    }
}

/// Generating parameters of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub sample_key: String,
    pub lithology: Lithology,
    pub form: FunctionalForm,
    /// mmol/g
    pub q_max: f64,
    /// Affinity at [`T_REF`], 1/bar.
    pub k_ref: f64,
    /// Sips exponent; 1 for Langmuir truths.
    pub n_s: f64,
    /// kJ/mol
    pub dh: f64,
    /// Pre-exponential factor of K(T) = K0·exp(−ΔH/RT).
    pub k0: f64,
    pub properties: SamplePropertySet,
}

impl SampleTruth {
    pub fn affinity_at(&self, t: f64) -> f64 {
        self.k0 * (-self.dh * 1000.0 / (GAS_CONSTANT * t)).exp()
    }

    pub fn params_at(&self, t: f64) -> ParamVector {
        let k = self.affinity_at(t);
        let values = match self.form {
            FunctionalForm::Langmuir => vec![self.q_max, k],
            _ => vec![self.q_max, k, self.n_s],
        };
        ParamVector {
            form: self.form,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: PopulationSpec,
    pub samples: Vec<SampleTruth>,
}

impl GroundTruth {
    pub fn get(&self, sample_key: &str) -> Option<&SampleTruth> {
        self.samples.iter().find(|s| s.sample_key == sample_key)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub isotherms: Vec<IsothermRecord>,
    pub properties: Vec<SamplePropertySet>,
    pub truth: GroundTruth,
}

fn normal(rng: &mut seed::Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn log_uniform(rng: &mut seed::Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Position of `x` within `[lo, hi]` on a log scale, mapped to [−1, 1].
fn log_position(x: f64, lo: f64, hi: f64) -> f64 {
    2.0 * (x.ln() - lo.ln()) / (hi.ln() - lo.ln()) - 1.0
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Draws a property row and returns it with the driver position in [−1, 1].
fn draw_properties(key: &str, lith: Lithology, rng: &mut seed::Rng) -> (SamplePropertySet, f64) {
    let mut s = SamplePropertySet::new(key, lith);
    let driver;
    match lith {
        Lithology::Clay => {
            let sa = log_uniform(rng, 2.96, 273.1);
            let pv = (0.0012 * sa * (0.25 * normal(rng)).exp()).clamp(0.005, 0.6);
            let micro = pv * rng.random_range(0.05..0.3);
            s.surface_area = Some(round4(sa));
            s.pore_volume = Some(round4(pv));
            s.micropore_volume = Some(round4(micro));
            s.avg_pore_diameter = Some(round4(4000.0 * pv / sa));
            s.moisture = Some(round4(rng.random_range(0.5..8.0)));
            let smectite = (10.0 + 60.0 * (sa.ln() - 2.96f64.ln()) / (273.1f64.ln() - 2.96f64.ln())
                + 5.0 * normal(rng))
            .clamp(0.0, 80.0);
            let kaolinite = rng.random_range(0.0..(90.0 - smectite).max(1.0));
            s.mineral_fractions.insert("smectite".into(), round4(smectite));
            s.mineral_fractions.insert("kaolinite".into(), round4(kaolinite));
            s.mineral_fractions
                .insert("quartz".into(), round4(rng.random_range(0.0..(100.0 - smectite - kaolinite).max(0.0))));
            driver = log_position(sa, 2.96, 273.1);
        }
        Lithology::Shale => {
            let toc = log_uniform(rng, 0.7, 19.4);
            let sa = rng.random_range(0.01..0.05);
            let pv = (0.004 + 0.0015 * toc) * (0.2 * normal(rng)).exp();
            s.surface_area = Some(round4(sa));
            s.toc = Some(round4(toc));
            s.pore_volume = Some(round4(pv));
            s.avg_pore_diameter = Some(round4(rng.random_range(3.0..30.0)));
            s.moisture = Some(round4(rng.random_range(0.2..4.0)));
            let pyrite = (6.0 - 0.25 * toc + 0.8 * normal(rng)).clamp(0.0, 12.0);
            let quartz = (35.0 - toc + 8.0 * normal(rng)).clamp(0.0, 60.0);
            let calcite = rng.random_range(0.0..(100.0 - toc - pyrite - quartz).max(0.0) * 0.6);
            s.mineral_fractions.insert("pyrite".into(), round4(pyrite));
            s.mineral_fractions.insert("quartz".into(), round4(quartz));
            s.mineral_fractions.insert("calcite".into(), round4(calcite));
            driver = log_position(toc, 0.7, 19.4);
        }
        Lithology::Coal => {
            let fc = log_uniform(rng, 35.0, 92.0);
            let ash = rng.random_range(2.0..15.0f64).min(98.0 - fc);
            let vm = (100.0 - fc - ash - rng.random_range(0.5..3.0)).max(2.0);
            let ro = (0.25 * (fc / 35.0).powf(2.6) * (0.1 * normal(rng)).exp()).clamp(0.3, 6.0);
            let sa = log_uniform(rng, 0.05, 30.5);
            let micro = (0.002 + 0.0004 * (fc - 30.0)) * (0.2 * normal(rng)).exp();
            s.fixed_carbon = Some(round4(fc));
            s.volatile_matter = Some(round4(vm));
            s.ash = Some(round4(ash));
            s.vitrinite_reflectance = Some(round4(ro));
            s.surface_area = Some(round4(sa));
            s.micropore_volume = Some(round4(micro));
            s.pore_volume = Some(round4(micro * rng.random_range(2.0..5.0)));
            s.avg_pore_diameter = Some(round4(rng.random_range(0.5..8.0)));
            s.moisture = Some(round4(rng.random_range(0.5..6.0)));
            driver = log_position(fc, 35.0, 92.0);
        }
    }
    (s, driver)
}

fn draw_sample(spec: &PopulationSpec, lith: Lithology, index: usize) -> SampleTruth {
    let key = format!("{}_{:03}", lith.as_str(), index + 1);
    let mut rng = seed::rng(seed::derive(spec.seed, &["synth", &key]));
    let (mut props, z) = draw_properties(&key, lith, &mut rng);
    let c = spec.links.get(lith);
    let h = spec.heterogeneity;
    let cap = spec.qmax.get(lith);
    let (e_q, e_k, e_n, u_h) = (normal(&mut rng), normal(&mut rng), normal(&mut rng), rng.random::<f64>());

    let q_max = (cap * c.capacity_fraction * (h * (c.capacity_slope * z + c.capacity_noise * e_q)).exp()).min(cap);
    let k_ref = c.affinity * (h * (c.affinity_slope * z + c.affinity_noise * e_k)).exp();
    let n_s = match spec.truth_form {
        TruthForm::Langmuir => 1.0,
        TruthForm::Sips => (c.exponent * (h * c.exponent_noise * e_n).exp()).clamp(0.3, 2.5),
    };
    let (lo, hi) = c.enthalpy;
    let mid = 0.5 * (lo + hi);
    let dh = (mid + h * (hi - lo) * (u_h - 0.5)).clamp(-30.0, -5.0);
    let k0 = k_ref * (dh * 1000.0 / (GAS_CONSTANT * T_REF)).exp();

    let mut truth = SampleTruth {
        sample_key: key,
        lithology: lith,
        form: spec.truth_form.form(),
        q_max,
        k_ref,
        n_s,
        dh,
        k0,
        properties: SamplePropertySet::default(),
    };
    // uptake at 50 bar and the reference temperature
    props.characteristic_uptake = Some(round4(truth.params_at(T_REF).eval(50.0, T_REF).unwrap_or(0.0)));
    truth.properties = props;
    truth
}

/// Uptakes of one isotherm on `grid` with i.i.d. Gaussian noise, clipped at 0.
pub fn gen_isotherm(
    truth: &SampleTruth,
    t: f64,
    grid: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Vec<IsothermRecord> {
    let params = truth.params_at(t);
    let mut rng = seed::rng(seed);
    grid.iter()
        .map(|&p| {
            let clean = params.eval(p, t).unwrap_or(0.0);
            let noise = if noise_sigma > 0.0 { noise_sigma * normal(&mut rng) } else { 0.0 };
            IsothermRecord {
                sample_key: truth.sample_key.clone(),
                lithology: truth.lithology,
                pressure: p,
                temperature: t,
                uptake: (clean + noise).max(0.0),
            }
        })
        .collect()
}

pub fn gen_population(spec: &PopulationSpec) -> Result<Population, SynthError> {
    spec.validate()?;
    let jobs: Vec<(Lithology, usize)> = Lithology::ALL
        .iter()
        .flat_map(|&l| (0..spec.n_per_lithology).map(move |i| (l, i)))
        .collect();
    let samples: Vec<SampleTruth> = jobs.par_iter().map(|&(l, i)| draw_sample(spec, l, i)).collect();
    let isotherms: Vec<IsothermRecord> = samples
        .par_iter()
        .flat_map_iter(|s| {
            spec.temperatures
                .iter()
                .flat_map(|&t| {
                    let tl = format!("{t:?}");
                    let sd = seed::derive(spec.seed, &["noise", &s.sample_key, &tl]);
                    gen_isotherm(s, t, &spec.pressures, spec.noise_sigma, sd)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let properties = samples.iter().map(|s| s.properties.clone()).collect();
    Ok(Population {
        isotherms,
        properties,
        truth: GroundTruth {
            spec: spec.clone(),
            samples,
        },
    })
}
