//! The `sorbfit` command line: one subcommand per pipeline stage plus
//! `reproduce`. Each stage reads only artifacts written by earlier stages and
//! echoes its effective configuration into its output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::acceptance::{self, ReproduceConfig, Scale};
use crate::data::{
    self, assess_quality, ingest_isotherms, ingest_properties, match_samples, samples_of, stratified_split,
    write_isotherms, write_properties, write_rejects, DataError, IntegratedRecord, IsothermRecord, Lithology,
    Partition, QmaxTable, SamplePropertySet, SplitAssignment,
};
use crate::eval::{evaluate as evaluate_metrics, RowContext};
use crate::features::{FeaturePipeline, PipelineConfig};
use crate::fit::{bootstrap_ci, fit_aggregated, fit_forms, select_best_model, AggregatedConfig, AggregatedReport, FittedModel, ParamCis};
use crate::isotherm::{FunctionalForm, Point};
use crate::pinn::{self, Dataset, TrainSchedule};
use crate::synth::{gen_population, PopulationSpec};
use crate::thermo::{classify_gibbs, isosteric_heat, vant_hoff, GibbsClass, IsostericCurve, ThermoParams};
use crate::uq::{self, EnsembleManifest, EnsembleSpec, ManifestMember};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Io(_) => EXIT_IO,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Io(_) => "io",
            CliError::Internal(_) => "internal",
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(_) | DataError::Csv(_) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

/// Optional run configuration file; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub qmax: QmaxTable,
    pub schedule: TrainSchedule,
    pub ensemble: EnsembleSpec,
    pub stages: StageToggles,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            threads: None,
            qmax: QmaxTable::default(),
            schedule: TrainSchedule::default(),
            ensemble: EnsembleSpec::default(),
            stages: StageToggles::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageToggles {
    /// Pooled per-lithology fits in `fit`.
    pub aggregated_fits: bool,
    /// Temperature scaling in `train`.
    pub calibrate: bool,
    /// Isosteric heat curves in `thermo`.
    pub isosteric: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            aggregated_fits: true,
            calibrate: true,
            isosteric: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        cfg.qmax.validate().map_err(invalid)?;
        cfg.schedule.validate().map_err(invalid)?;
        cfg.ensemble.validate().map_err(invalid)?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "sorbfit", version, about = "Hydrogen sorption modelling pipeline")]
pub struct Cli {
    /// Base seed for every stochastic stage.
    #[arg(long, global = true, env = "SORBFIT_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON run configuration; unknown keys are errors.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase", tag = "command")]
pub enum Command {
    /// Generate a synthetic population with ground truth.
    Synth(SynthArgs),
    /// Validate and join isotherm and property CSVs, assess quality, split.
    Ingest(IngestArgs),
    /// Fit isotherm forms per sample and temperature, and pooled per lithology.
    Fit(FitArgs),
    /// Van't Hoff parameters and isosteric heats from fits.
    Thermo(ThermoArgs),
    /// Engineer, impute, scale and select features on the training split.
    Featurize(FeaturizeArgs),
    /// Train the physics-constrained ensemble and calibrate it.
    Train(TrainArgs),
    /// Predict uptake with calibrated intervals.
    Predict(PredictArgs),
    /// Score predictions against measured uptakes.
    Evaluate(EvaluateArgs),
    /// Run the acceptance suite and write a pass/fail report.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Preset name (default, heterogeneous, pinn_benchmark) or a JSON spec file.
    #[arg(long, default_value = "default")]
    pub spec: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub isotherms: PathBuf,
    #[arg(long)]
    pub properties: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Directory holding isotherms.csv.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// all, classical, mathematical, individual, or a comma-separated list.
    #[arg(long, default_value = "individual")]
    pub forms: String,
    /// Bootstrap resamples for the best model of each isotherm and for pooled r².
    #[arg(long, default_value_t = 0)]
    pub boot: usize,
    /// Folds of the pooled cross-validation; 0 disables it.
    #[arg(long, default_value_t = 5)]
    pub cv: usize,
    /// Report path; defaults to <in>/fits.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ThermoArgs {
    #[arg(long)]
    pub fits: PathBuf,
    /// Report path; the isosteric CSV is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturizeArgs {
    /// Directory holding isotherms.csv and properties.csv (split.json is used
    /// when present).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub select: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// `default` or a JSON schedule file.
    #[arg(long, default_value = "default")]
    pub schedule: String,
    /// Train only the first N ensemble members (at least 2).
    #[arg(long)]
    pub members: Option<usize>,
    /// Multiply every phase length.
    #[arg(long, default_value_t = 1.0)]
    pub epoch_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    /// Rows in the isotherm CSV schema.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Property CSV; defaults to properties.csv beside the input.
    #[arg(long)]
    pub properties: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub preds: PathBuf,
    /// Measured rows in the isotherm CSV schema.
    #[arg(long)]
    pub truth: PathBuf,
    /// Predictor count for adjusted r².
    #[arg(long, default_value_t = 1)]
    pub n_predictors: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReproduceArgs {
    #[arg(long, value_enum, default_value = "full")]
    pub scale: Scale,
    #[arg(long, default_value = "reproduce")]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            if code != EXIT_OK {
                let msg = e.kind().as_str().unwrap_or("invalid arguments").to_string();
                eprintln!("{}", CliError::Validation(msg).to_json());
            }
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

/// Runs a parsed command. `Ok` carries the exit code: reproduce returns
/// [`EXIT_VALIDATION`] when a criterion fails.
pub fn run(cli: &Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        // a second build in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Synth(a) => synth(a, &cfg, &cli.command),
        Command::Ingest(a) => ingest(a, &cfg, &cli.command),
        Command::Fit(a) => fit(a, &cfg, &cli.command),
        Command::Thermo(a) => thermo(a, &cfg, &cli.command),
        Command::Featurize(a) => featurize(a, &cfg, &cli.command),
        Command::Train(a) => train(a, &cfg, &cli.command),
        Command::Predict(a) => predict(a, &cfg, &cli.command),
        Command::Evaluate(a) => evaluate(a, &cfg, &cli.command),
        Command::Reproduce(a) => reproduce(a, &cfg, &cli.command),
    }?;
    Ok(match &cli.command {
        Command::Reproduce(a) => reproduce_exit(&a.out)?,
        _ => EXIT_OK,
    })
}

#[derive(Serialize)]
struct Echo<'a> {
    tool: &'static str,
    version: &'static str,
    run_config: &'a RunConfig,
    #[serde(flatten)]
    command: &'a Command,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn echo_config(dir: &Path, cfg: &RunConfig, cmd: &Command) -> Result<()> {
    write_json(
        &dir.join("config.json"),
        &Echo {
            tool: "sorbfit",
            version: VERSION,
            run_config: cfg,
            command: cmd,
        },
    )
}

fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn synth(a: &SynthArgs, cfg: &RunConfig, cmd: &Command) -> Result<()> {
    let mut spec = match PopulationSpec::preset(&a.spec) {
        Ok(s) => s,
        Err(_) if Path::new(&a.spec).exists() => read_json(Path::new(&a.spec))?,
        Err(e) => return Err(invalid(e)),
    };
    spec.seed = cfg.seed;
    let pop = gen_population(&spec).map_err(invalid)?;
    ensure_dir(&a.out)?;
    write_isotherms(a.out.join("isotherms.csv"), &pop.isotherms)?;
    write_properties(a.out.join("properties.csv"), &pop.properties)?;
    write_json(&a.out.join("truth.json"), &pop.truth)?;
    echo_config(&a.out, cfg, cmd)?;
    println!(
        "synth: {} isotherm rows, {} samples -> {}",
        pop.isotherms.len(),
        pop.properties.len(),
        a.out.display()
    );
    Ok(())
}

fn ingest(a: &IngestArgs, cfg: &RunConfig, cmd: &Command) -> Result<()> {
    let isos = ingest_isotherms(&a.isotherms)?;
    let props = ingest_properties(&a.properties)?;
    let records = match_samples(&props.records, &isos.records)?;
    let quality = assess_quality(&records);
    let split = stratified_split(&samples_of(&records), (0.7, 0.15, 0.15), cfg.seed)?;
    ensure_dir(&a.out)?;
    write_isotherms(a.out.join("isotherms.csv"), &isos.records)?;
    write_properties(a.out.join("properties.csv"), &props.records)?;
    write_rejects(a.out.join("rejects_isotherms.csv"), &isos.rejects)?;
    write_rejects(a.out.join("rejects_properties.csv"), &props.rejects)?;
    write_json(&a.out.join("quality.json"), &quality)?;
    write_json(&a.out.join("split.json"), &split)?;
    echo_config(&a.out, cfg, cmd)?;
    println!(
        "ingest: {} isotherm rows ({} rejected), {} property rows ({} rejected), {} records flagged",
        isos.records.len(),
        isos.rejects.len(),
        props.records.len(),
        props.rejects.len(),
        quality.excluded_count
    );
    Ok(())
}

/// Parses a `--forms` value.
pub fn parse_forms(spec: &str) -> Result<Vec<FunctionalForm>> {
    Ok(match spec {
        "all" => FunctionalForm::ALL.to_vec(),
        "classical" => FunctionalForm::classical(),
        "mathematical" => FunctionalForm::mathematical(),
        "individual" => FunctionalForm::INDIVIDUAL.to_vec(),
        list => list
            .split(',')
            .map(|s| s.trim().parse::<FunctionalForm>().map_err(invalid))
            .collect::<Result<Vec<_>>>()?,
    })
}

/// Fits of one isotherm (one sample at one temperature).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsothermFit {
    pub sample_key: String,
    pub lithology: Lithology,
    pub temperature: f64,
    pub n_points: usize,
    pub max_pressure: f64,
    pub max_uptake: f64,
    /// Successful fits ranked best first.
    pub ranked: Vec<FittedModel>,
    pub failures: BTreeMap<String, String>,
    /// Bootstrap intervals of the best model.
    pub best_cis: Option<ParamCis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub version: String,
    pub seed: u64,
    pub forms: Vec<FunctionalForm>,
    pub isotherms: Vec<IsothermFit>,
    pub aggregated: Option<AggregatedReport>,
}

/// Groups isotherm rows by (sample, temperature) in first-seen order.
pub fn group_isotherms(rows: &[IsothermRecord]) -> Vec<(String, Lithology, f64, Vec<Point>)> {
    let mut out: Vec<(String, Lithology, f64, Vec<Point>)> = vec![];
    let mut index: BTreeMap<(String, u64), usize> = BTreeMap::new();
    for r in rows {
        let k = (r.sample_key.clone(), r.temperature.to_bits());
        let i = *index.entry(k).or_insert_with(|| {
            out.push((r.sample_key.clone(), r.lithology, r.temperature, vec![]));
            out.len() - 1
        });
        out[i].3.push(Point::new(r.pressure, r.temperature, r.uptake));
    }
    out
}

fn fit(a: &FitArgs, cfg: &RunConfig, cmd: &Command) -> Result<()> {
    let forms = parse_forms(&a.forms)?;
    let isos = ingest_isotherms(a.input.join("isotherms.csv"))?;
    let groups = group_isotherms(&isos.records);
    let mut fits = vec![];
    for (key, lith, t, pts) in &groups {
        let task = format!("{key}@{t:?}");
        let mut ranked = vec![];
        let mut failures = BTreeMap::new();
        for (form, r) in forms.iter().zip(fit_forms(pts, &forms, &task, cfg.seed)) {
            match r {
                Ok(m) => ranked.push(m),
                Err(e) => {
                    failures.insert(form.id().to_string(), e.to_string());
                }
            }
        }
        let ranked = if ranked.is_empty() { ranked } else { select_best_model(&ranked).map_err(invalid)? };
        let best_cis = match (a.boot, ranked.first()) {
            (n, Some(best)) if n > 0 => bootstrap_ci(pts, best.form, n, crate::fit::task_seed(cfg.seed, &task, best.form))
                .ok()
                .filter(|c| c.n_success > 0),
            _ => None,
        };
        fits.push(IsothermFit {
            sample_key: key.clone(),
            lithology: *lith,
            temperature: *t,
            n_points: pts.len(),
            max_pressure: pts.iter().map(|p| p.p).fold(0.0, f64::max),
            max_uptake: pts.iter().map(|p| p.q).fold(0.0, f64::max),
            ranked,
            failures,
            best_cis,
        });
    }
    let aggregated = cfg.stages.aggregated_fits.then(|| {
        let pooled: Vec<(String, Vec<Point>)> = Lithology::ALL
            .iter()
            .map(|l| {
                let pts = isos
                    .records
                    .iter()
                    .filter(|r| r.lithology == *l)
                    .map(|r| Point::new(r.pressure, r.temperature, r.uptake))
                    .collect();
                (l.to_string(), pts)
            })
            .filter(|(_, p): &(String, Vec<Point>)| !p.is_empty())
            .collect();
        fit_aggregated(
            &pooled,
            &forms,
            &AggregatedConfig {
                cv_folds: a.cv,
                n_boot: a.boot,
                seed: cfg.seed,
            },
        )
    });
    let report = FitReport {
        version: VERSION.into(),
        seed: cfg.seed,
        forms,
        isotherms: fits,
        aggregated,
    };
    let out = a.out.clone().unwrap_or_else(|| a.input.join("fits.json"));
    let dir = parent_dir(&out);
    ensure_dir(&dir)?;
    write_json(&out, &report)?;
    echo_config(&dir, cfg, cmd)?;
    let n_ok = report.isotherms.iter().filter(|f| !f.ranked.is_empty()).count();
    println!("fit: {n_ok}/{} isotherms fitted -> {}", report.isotherms.len(), out.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleThermo {
    pub sample_key: String,
    pub lithology: Lithology,
    /// Form whose affinities enter the Van't Hoff regression.
    pub form: FunctionalForm,
    pub params: ThermoParams,
    pub gibbs_class: BTreeMap<String, GibbsClass>,
    pub isosteric: Option<IsostericCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermoReport {
    pub version: String,
    pub samples: Vec<SampleThermo>,
    /// Samples left out, with the reason.
    pub skipped: BTreeMap<String, String>,
}

/// Coverage levels of the isosteric curve as fractions of the smallest
/// maximum uptake across temperatures.
pub const COVERAGE_FRACTIONS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// Van't Hoff and isosteric analysis for one sample. The form used is the one
/// with an affinity, fitted at every temperature, with the lowest summed AIC.
pub fn sample_thermo(fits: &[&IsothermFit], isosteric: bool) -> std::result::Result<SampleThermo, String> {
    let first = fits.first().ok_or("no fits")?;
    let mut best: Option<(f64, FunctionalForm)> = None;
    for form in FunctionalForm::ALL {
        let mut aic = 0.0;
        let mut ok = true;
        for f in fits {
            match f.ranked.iter().find(|m| m.form == form && m.params.affinity().is_some_and(|k| k > 0.0)) {
                Some(m) => aic += m.aic,
                None => ok = false,
            }
        }
        if ok && best.is_none_or(|(b, _)| aic < b) {
            best = Some((aic, form));
        }
    }
    let (_, form) = best.ok_or("no form with an affinity was fitted at every temperature")?;
    let models: Vec<(f64, crate::isotherm::ParamVector)> = fits
        .iter()
        .map(|f| {
            let m = f.ranked.iter().find(|m| m.form == form).expect("checked above");
            (f.temperature, m.params.clone())
        })
        .collect();
    let k_by_t: Vec<(f64, f64)> = models
        .iter()
        .map(|(t, p)| (*t, p.affinity().expect("checked above")))
        .collect();
    let params = vant_hoff(&k_by_t).map_err(|e| e.to_string())?;
    let gibbs_class = params.dg_at.iter().map(|(t, g)| (t.clone(), classify_gibbs(*g))).collect();
    let curve = if isosteric {
        let q_ref = fits.iter().map(|f| f.max_uptake).fold(f64::INFINITY, f64::min);
        let levels: Vec<f64> = COVERAGE_FRACTIONS.iter().map(|c| c * q_ref).collect();
        isosteric_heat(&models, &levels).ok()
    } else {
        None
    };
    Ok(SampleThermo {
        sample_key: first.sample_key.clone(),
        lithology: first.lithology,
        form,
        params,
        gibbs_class,
        isosteric: curve,
    })
}

fn thermo(a: &ThermoArgs, cfg: &RunConfig, cmd: &Command) -> Result<()> {
    let report: FitReport = read_json(&a.fits)?;
    let mut by_sample: BTreeMap<&str, Vec<&IsothermFit>> = BTreeMap::new();
    for f in &report.isotherms {
        by_sample.entry(f.sample_key.as_str()).or_default().push(f);
    }
    let mut out = ThermoReport {
        version: VERSION.into(),
        samples: vec![],
        skipped: BTreeMap::new(),
    };
    for (key, fits) in by_sample {
        match sample_thermo(&fits, cfg.stages.isosteric) {
            Ok(s) => out.samples.push(s),
            Err(e) => {
                out.skipped.insert(key.to_string(), e);
            }
        }
    }
    let dir = parent_dir(&a.out);
    ensure_dir(&dir)?;
    write_json(&a.out, &out)?;
    let mut csv = String::from("sample_key,coverage,q_st\n");
    for s in &out.samples {
        if let Some(c) = &s.isosteric {
            for (q, h) in c.coverage_levels.iter().zip(&c.q_st) {
                csv.push_str(&format!("{},{},{}\n", s.sample_key, data::fmt_num(*q), data::fmt_num(*h)));
            }
        }
    }
    write_text(&dir.join("isosteric.csv"), &csv)?;
    echo_config(&dir, cfg, cmd)?;
    println!(
        "thermo: {} samples analysed, {} skipped -> {}",
        out.samples.len(),
        out.skipped.len(),
        a.out.display()
    );
    Ok(())
}

/// Records of each partition, as written by `featurize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecords {
    pub train: Vec<IntegratedRecord>,
    pub validation: Vec<IntegratedRecord>,
    pub test: Vec<IntegratedRecord>,
}

fn load_records(dir: &Path, seed: u64) -> Result<(Vec<IsothermRecord>, Vec<SamplePropertySet>, Vec<IntegratedRecord>, SplitAssignment)> {
    let isos = ingest_isotherms(dir.join("isotherms.csv"))?.records;
    let props = ingest_properties(dir.join("properties.csv"))?.records;
    let records = match_samples(&props, &isos)?;
    let split_path = dir.join("split.json");
    let split = if split_path.exists() {
        read_json(&split_path)?
    } else {
        stratified_split(&samples_of(&records), (0.7, 0.15, 0.15), seed)?
    };
    Ok((isos, props, records, split))
}

fn feature_csv(pipeline: &FeaturePipeline, records: &[IntegratedRecord]) -> Result<String> {
    let mut s = String::from("sample_key,lithology,pressure_bar,temperature_K,uptake_mmol_g");
    for n in pipeline.selected_names() {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for r in records {
        let Some(m) = r.measurement else { continue };
        let row = pipeline.transform(r).map_err(invalid)?;
        s.push_str(&format!(
            "{},{},{},{},{}",
            r.sample_key,
            r.lithology,
            data::fmt_num(m.pressure),
            data::fmt_num(m.temperature),
            data::fmt_num(m.uptake)
        ));
        for v in row {
            s.push(',');
            s.push_str(&data::fmt_num(v));
        }
        s.push('\n');
    }
    Ok(s)
}

fn featurize(a: &FeaturizeArgs, cfg: &RunConfig, cmd: &Command) -> Result<()> {
    let (isos, props, records, split) = load_records(&a.input, cfg.seed)?;
    let part = |p: Partition| -> Vec<IntegratedRecord> {
        records
            .iter()
            .filter(|r| r.measurement.is_some() && split.of(&r.sample_key) == Some(p))
            .cloned()
            .collect()
    };
    let sr = SplitRecords {
        train: part(Partition::Train),
        validation: part(Partition::Validation),
        test: part(Partition::Test),
    };
    let pcfg = PipelineConfig {
        select_k: a.select,
        seed: cfg.seed,
    };
    let (pipeline, report, _) = FeaturePipeline::fit(&sr.train, &pcfg).map_err(invalid)?;
    ensure_dir(&a.out)?;
    write_json(&a.out.join("pipeline.json"), &pipeline)?;
    write_json(&a.out.join("report.json"), &report)?;
    write_json(&a.out.join("records.json"), &sr)?;
    write_json(&a.out.join("split.json"), &split)?;
    for (name, recs) in [("train", &sr.train), ("validation", &sr.validation), ("test", &sr.test)] {
        write_text(&a.out.join(format!("{name}.csv")), &feature_csv(&pipeline, recs)?)?;
        let keys: std::collections::BTreeSet<&str> = recs.iter().map(|r| r.sample_key.as_str()).collect();
        let rows: Vec<IsothermRecord> = isos.iter().filter(|r| keys.contains(r.sample_key.as_str())).cloned().collect();
        write_isotherms(a.out.join(format!("{name}_isotherms.csv")), &rows)?;
    }
    write_properties(a.out.join("properties.csv"), &props)?;
    echo_config(&a.out, cfg, cmd)?;
    println!(
        "featurize: {} features selected of {}; rows train {} / validation {} / test {} -> {}",
        report.n_selected,
        report.catalog_size,
        sr.train.len(),
        sr.validation.len(),
        sr.test.len(),
        a.out.display()
    );
    Ok(())
}

fn train(a: &TrainArgs, cfg: &RunConfig, cmd: &Command) -> Result<()> {
    let pipeline: FeaturePipeline = read_json(&a.features.join("pipeline.json"))?;
    let sr: SplitRecords = read_json(&a.features.join("records.json"))?;
    let mut schedule = match a.schedule.as_str() {
        "default" => cfg.schedule.clone(),
        path => read_json::<TrainSchedule>(Path::new(path))?,
    };
    if !(a.epoch_scale > 0.0 && a.epoch_scale.is_finite()) {
        return Err(invalid("--epoch-scale must be positive"));
    }
    if a.epoch_scale != 1.0 {
        schedule = schedule.scale_epochs(a.epoch_scale);
    }
    schedule.validate().map_err(invalid)?;
    let mut spec = cfg.ensemble.clone();
    if let Some(n) = a.members {
        spec.members.truncate(n);
    }
    spec.validate().map_err(invalid)?;
    let ds = |r: &[IntegratedRecord]| Dataset::from_records(&pipeline, r, &cfg.qmax).map_err(invalid);
    let (tr, va) = (ds(&sr.train)?, ds(&sr.validation)?);
    // member seeds follow the base seed unless it is the default
    if cfg.seed != 42 {
        for (i, m) in spec.members.iter_mut().enumerate() {
            m.seed = crate::seed::derive_indexed(cfg.seed, i as u64);
        }
    }
    let outcomes = uq::train_ensemble(&spec, &tr, &va, &schedule).map_err(|e| CliError::Internal(e.to_string()))?;
    let nets: Vec<_> = outcomes.iter().map(|o| o.net.clone()).collect();
    let tau = if cfg.stages.calibrate {
        let preds = uq::predict_ensemble(&nets, &va.x, &va.pt).map_err(invalid)?;
        ensure_dir(&a.out)?;
        let path = a.out.join("calibration.json");
        match uq::calibrate_temperature(&preds, &va.y, 0.95) {
            Ok(cal) => {
                write_json(&path, &cal)?;
                cal.tau
            }
            // small validation sets move coverage in coarse steps
            Err(uq::UqError::UnreachableTarget { tau, achieved }) => {
                eprintln!("warning: validation coverage target 0.95 not reached; using tau {tau} (coverage {achieved})");
                write_json(&path, &serde_json::json!({ "tau": tau, "target": 0.95, "achieved": achieved, "reached": false }))?;
                tau
            }
            Err(e) => return Err(invalid(e)),
        }
    } else {
        1.0
    };
    ensure_dir(&a.out)?;
    let mut members = vec![];
    for (i, (m, o)) in spec.members.iter().zip(&outcomes).enumerate() {
        let ck = format!("member_{i}.json");
        write_text(&a.out.join(&ck), &pinn::to_checkpoint(&o.net))?;
        write_text(&a.out.join(format!("history_{i}.csv")), &pinn::history_csv(&o.history))?;
        members.push(ManifestMember {
            spec: m.clone(),
            checkpoint: ck,
        });
    }
    write_json(&a.out.join("pipeline.json"), &pipeline)?;
    let manifest = EnsembleManifest {
        version: VERSION.into(),
        members,
        tau,
        pipeline: "pipeline.json".into(),
        qmax: cfg.qmax,
    };
    write_json(&a.out.join("manifest.json"), &manifest)?;
    write_json(&a.out.join("schedule.json"), &schedule)?;
    echo_config(&a.out, cfg, cmd)?;
    println!(
        "train: {} members, tau {:.4}, best validation losses {:?} -> {}",
        outcomes.len(),
        tau,
        outcomes.iter().map(|o| (o.best_val * 1e6).round() / 1e6).collect::<Vec<_>>(),
        a.out.display()
    );
    Ok(())
}

/// One row of a predictions CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredRow {
    pub sample_key: String,
    pub lithology: Lithology,
    pub pressure_bar: f64,
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    pub mean: f64,
    pub sigma_cal: f64,
    pub lo: f64,
    pub hi: f64,
}

fn predict(a: &PredictArgs, cfg: &RunConfig, cmd: &Command) -> Result<()> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(invalid("--level must lie in (0, 1)"));
    }
    let manifest: EnsembleManifest = read_json(&a.ensemble)?;
    let base = parent_dir(&a.ensemble);
    let pipeline: FeaturePipeline = read_json(&base.join(&manifest.pipeline))?;
    let mut nets = vec![];
    for m in &manifest.members {
        let p = base.join(&m.checkpoint);
        let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
        nets.push(pinn::from_checkpoint(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?);
    }
    let props_path = a.properties.clone().unwrap_or_else(|| parent_dir(&a.input).join("properties.csv"));
    let isos = ingest_isotherms(&a.input)?.records;
    let props = ingest_properties(&props_path)?.records;
    let recs: Vec<IntegratedRecord> = match_samples(&props, &isos)?
        .into_iter()
        .filter(|r| r.measurement.is_some())
        .collect();
    let ds = Dataset::from_records(&pipeline, &recs, &manifest.qmax).map_err(invalid)?;
    let mut preds = uq::predict_ensemble(&nets, &ds.x, &ds.pt).map_err(invalid)?;
    uq::apply_temperature(&mut preds, manifest.tau);
    let dir = parent_dir(&a.out);
    ensure_dir(&dir)?;
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| io_err(&a.out, e))?;
    for (r, p) in recs.iter().zip(&preds) {
        let m = r.measurement.expect("filtered");
        let (lo, hi) = p.interval(a.level);
        w.serialize(PredRow {
            sample_key: r.sample_key.clone(),
            lithology: r.lithology,
            pressure_bar: m.pressure,
            temperature_k: m.temperature,
            mean: p.mean,
            sigma_cal: p.sigma_cal,
            lo,
            hi,
        })
        .map_err(|e| io_err(&a.out, e))?;
    }
    w.flush().map_err(|e| io_err(&a.out, e))?;
    echo_config(&dir, cfg, cmd)?;
    println!("predict: {} rows, {} members, tau {:.4} -> {}", preds.len(), nets.len(), manifest.tau, a.out.display());
    Ok(())
}

fn evaluate(a: &EvaluateArgs, cfg: &RunConfig, cmd: &Command) -> Result<()> {
    let mut rdr = csv::Reader::from_path(&a.preds).map_err(|e| io_err(&a.preds, e))?;
    let preds: Vec<PredRow> = rdr
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| invalid(format!("{}: {e}", a.preds.display())))?;
    let truth = ingest_isotherms(&a.truth)?.records;
    let mut index: BTreeMap<(String, u64, u64), f64> = BTreeMap::new();
    for t in &truth {
        index.insert((t.sample_key.clone(), t.pressure.to_bits(), t.temperature.to_bits()), t.uptake);
    }
    let mut y = vec![];
    let mut rows = vec![];
    for p in &preds {
        let key = (data::normalize_key(&p.sample_key), p.pressure_bar.to_bits(), p.temperature_k.to_bits());
        if let Some(v) = index.get(&key) {
            y.push(*v);
            rows.push(p);
        }
    }
    if rows.is_empty() {
        return Err(invalid("no prediction row matches a truth row"));
    }
    let mean: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let sigma: Vec<f64> = rows.iter().map(|r| r.sigma_cal).collect();
    let keys: Vec<String> = rows.iter().map(|r| r.sample_key.clone()).collect();
    let liths: Vec<Lithology> = rows.iter().map(|r| r.lithology).collect();
    let pressure: Vec<f64> = rows.iter().map(|r| r.pressure_bar).collect();
    let temperature: Vec<f64> = rows.iter().map(|r| r.temperature_k).collect();
    let ctx = RowContext {
        sample_key: &keys,
        lithology: &liths,
        pressure: &pressure,
        temperature: &temperature,
    };
    let report = evaluate_metrics(&y, &mean, Some(&sigma), &ctx, &cfg.qmax, a.n_predictors).map_err(invalid)?;
    let dir = parent_dir(&a.out);
    ensure_dir(&dir)?;
    write_json(&a.out, &report)?;
    echo_config(&dir, cfg, cmd)?;
    println!(
        "evaluate: {} rows, r2 {:.4}, rmse {:.4} -> {}",
        report.n,
        report.point.r2,
        report.point.rmse,
        a.out.display()
    );
    Ok(())
}

fn reproduce(a: &ReproduceArgs, cfg: &RunConfig, cmd: &Command) -> Result<()> {
    let rc = ReproduceConfig {
        seed: cfg.seed,
        scale: a.scale,
    };
    let report = acceptance::reproduce(&rc);
    ensure_dir(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    let mut summary = String::new();
    for c in &report.criteria {
        summary.push_str(&format!("{} {} {}: {}\n", c.id, if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
        println!("{}", c.line());
    }
    summary.push_str(&format!("{}/{} criteria passed\n", report.passed, report.total));
    write_text(&a.out.join("summary.txt"), &summary)?;
    echo_config(&a.out, cfg, cmd)?;
    println!("reproduce: {}/{} criteria passed -> {}", report.passed, report.total, a.out.display());
    Ok(())
}

fn reproduce_exit(out: &Path) -> Result<i32> {
    let report: acceptance::AcceptanceReport = read_json(&out.join("report.json"))?;
    Ok(if report.passed == report.total { EXIT_OK } else { EXIT_VALIDATION })
}
