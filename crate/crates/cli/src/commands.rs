//! Subcommands. Each returns its stdout text; files are written as a side
//! effect.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use countrate::harness::{run_study, CalibrationCache, MethodSpec, SimulationSummary, StudyConfig};
use countrate::meta::{pool_log, pool_natural};
use countrate::simgen::{
    calibrate_with, gen_correlated_nb, parse_config, realized_correlation, scenario,
    CalibrationSettings, OutcomeModel, RngStream,
};
use countrate::{Alternative, HcFlavor, RateRatioResult, ScenarioSpec};

use crate::error::CliError;
use crate::input::{read_strata_csv, read_subject_csv, CsvOptions};
use crate::report::{build_report, render_table, AnalysisReport, AnalyzeOptions, MethodChoice};

#[derive(Debug, Parser)]
#[command(
    name = "countrate",
    version,
    about = "Event-rate estimation for count outcomes in randomized trials"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate arm rates and rate ratios from a subject-level CSV.
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo study from a key = value config file.
    Simulate(SimulateArgs),
    /// Pool per-stratum rate ratios.
    Meta(MetaArgs),
    /// Find the latent copula correlation for a target observed correlation.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Empirical,
    Nb,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HcArg {
    Auto,
    Hc0,
    Hc1,
    Hc3,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlternativeArg {
    TwoSided,
    Less,
    Greater,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    Natural,
    Log,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Subject-level CSV with subject_id, arm, events, exposure.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub method: MethodArg,
    /// Comma-separated covariate columns.
    #[arg(long)]
    pub adjust: Option<String>,
    /// Stratum column; switches the empirical method to ANHECOVA.
    #[arg(long)]
    pub strata: Option<String>,
    /// Column that splits the file into separately analysed periods.
    #[arg(long)]
    pub period: Option<String>,
    /// Arm label to use as the reference (arm 0).
    #[arg(long)]
    pub control: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "auto")]
    pub hc: HcArg,
    #[arg(long, value_enum, default_value = "two-sided")]
    pub alternative: AlternativeArg,
    /// Exposures are divided by this value (365.25 turns days into years).
    #[arg(long, default_value_t = 1.0)]
    pub exposure_divisor: f64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Config file of `key = value` lines.
    pub config: PathBuf,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Overrides a config key, e.g. `--set rho=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory for `<name>.json` and `<name>.csv`.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Output file stem; defaults to the config file stem.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetaArgs {
    /// CSV with stratum, weight and lambda, var_lambda (or log_lambda, var_log).
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "natural")]
    pub scale: ScaleArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub case: String,
    /// Target observed correlation between baseline and outcome counts.
    #[arg(long)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.005)]
    pub tol: f64,
    #[arg(long, default_value_t = 200_000)]
    pub draws: usize,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_cache: bool,
    /// Check the result on a million fresh draws per arm.
    #[arg(long)]
    pub verify: bool,
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path.display().to_string(), e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("serializing output: {e}")))
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "--alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Splits `--adjust a,b`; an empty list or an empty name is a usage error.
pub fn parse_covariate_list(raw: &str) -> Result<Vec<String>, CliError> {
    let names: Vec<String> = raw.split(',').map(|s| s.trim().to_string()).collect();
    if names.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!(
            "--adjust needs comma-separated column names, got '{raw}'"
        )));
    }
    Ok(names)
}

pub fn analyze_report(args: &AnalyzeArgs) -> Result<AnalysisReport, CliError> {
    check_alpha(args.alpha)?;
    let adjust = args
        .adjust
        .as_deref()
        .map(parse_covariate_list)
        .transpose()?
        .unwrap_or_default();
    if args.strata.as_deref() == Some("") {
        return Err(CliError::Usage("--strata needs a column name".into()));
    }
    let opts = AnalyzeOptions {
        method: match args.method {
            MethodArg::Empirical => MethodChoice::Empirical,
            MethodArg::Nb => MethodChoice::Nb,
            MethodArg::Both => MethodChoice::Both,
        },
        adjust: adjust.clone(),
        strata: args.strata.clone(),
        alpha: args.alpha,
        hc: match args.hc {
            HcArg::Auto => None,
            HcArg::Hc0 => Some(HcFlavor::HC0),
            HcArg::Hc1 => Some(HcFlavor::HC1),
            HcArg::Hc3 => Some(HcFlavor::HC3),
        },
        alternative: match args.alternative {
            AlternativeArg::TwoSided => Alternative::TwoSided,
            AlternativeArg::Less => Alternative::Less,
            AlternativeArg::Greater => Alternative::Greater,
        },
        exposure_divisor: args.exposure_divisor,
        control: args.control.clone(),
        period: args.period.clone(),
    };
    let csv_opts = CsvOptions {
        covariates: adjust,
        strata_column: args.strata.clone(),
        period_column: args.period.clone(),
        control: args.control.clone(),
        exposure_divisor: args.exposure_divisor,
    };
    let file = fs::File::open(&args.input)
        .map_err(|e| CliError::io(args.input.display().to_string(), e))?;
    let loaded = read_subject_csv(file, &csv_opts)?;
    Ok(build_report(&loaded, &opts))
}

pub fn analyze(args: &AnalyzeArgs) -> Result<String, CliError> {
    let report = analyze_report(args)?;
    let json = to_json(&report)?;
    if let Some(path) = &args.output {
        write_file(path, json.as_bytes())?;
    }
    Ok(if args.json {
        json + "\n"
    } else {
        render_table(&report)
    })
}

const RUN_KEYS: [&str; 5] = ["reps", "seed", "jobs", "alpha", "calibration_draws"];

fn parse_key<T: std::str::FromStr>(
    pairs: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    pairs
        .get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| CliError::Usage(format!("config key '{key}': invalid value '{v}'")))
        })
        .transpose()
}

/// Scenario and run settings from config text plus command-line overrides.
pub fn simulation_setup(
    text: &str,
    args: &SimulateArgs,
) -> Result<(ScenarioSpec, StudyConfig), CliError> {
    let mut pairs = parse_config(text)?;
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{o}'")))?;
        pairs.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut cfg = StudyConfig::default();
    if let Some(v) = parse_key(&pairs, "reps")? {
        cfg.reps = v;
    }
    if let Some(v) = parse_key(&pairs, "seed")? {
        cfg.seed = v;
    }
    if let Some(v) = parse_key(&pairs, "jobs")? {
        cfg.jobs = v;
    }
    if let Some(v) = parse_key(&pairs, "alpha")? {
        cfg.alpha = v;
    }
    if let Some(v) = parse_key(&pairs, "calibration_draws")? {
        cfg.calibration.draws = v;
    }
    for k in RUN_KEYS {
        pairs.remove(k);
    }
    cfg.reps = args.reps.unwrap_or(cfg.reps);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.jobs = args.jobs.unwrap_or(cfg.jobs);
    cfg.alpha = args.alpha.unwrap_or(cfg.alpha);
    cfg.cache_dir = args.cache_dir.clone();
    check_alpha(cfg.alpha)?;
    if cfg.reps == 0 {
        return Err(CliError::Usage("reps must be at least 1".into()));
    }
    let spec = ScenarioSpec::from_pairs(&pairs)?;
    Ok((spec, cfg))
}

fn summary_table(s: &SimulationSummary) -> String {
    let mut out = format!(
        "case {} n={} rho={} latent={:.4} reps={} seed={} true RR={:.4}\n",
        s.scenario.case_id,
        s.scenario.n_per_arm,
        s.scenario
            .rho()
            .map_or_else(|| "-".to_string(), |r| r.to_string()),
        s.latent_rho,
        s.reps,
        s.seed,
        s.true_rate_ratio,
    );
    out.push_str(&format!(
        "{:<22} {:>9} {:>8} {:>9} {:>9} {:>7} {:>7}\n",
        "method", "reject", "mc_se", "mean_rr", "coverage", "nonconv", "failed"
    ));
    for m in &s.methods {
        out.push_str(&format!(
            "{:<22} {:>9.4} {:>8.4} {:>9.4} {:>9.4} {:>7} {:>7}\n",
            m.method.name,
            m.rejection_rate,
            m.mc_se,
            m.mean_lambda,
            m.coverage,
            m.nonconvergence,
            m.failures
        ));
    }
    out
}

pub fn simulate(args: &SimulateArgs) -> Result<String, CliError> {
    let text = read_file(&args.config)?;
    let (spec, cfg) = simulation_setup(&text, args)?;
    let summary = run_study(&spec, &MethodSpec::standard(), &cfg)?;
    let stem = args.name.clone().unwrap_or_else(|| {
        args.config.file_stem().map_or_else(
            || "simulation".to_string(),
            |s| s.to_string_lossy().into_owned(),
        )
    });
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::io(args.out_dir.display().to_string(), e))?;
    let json_path = args.out_dir.join(format!("{stem}.json"));
    write_file(&json_path, (to_json(&summary)? + "\n").as_bytes())?;
    let csv_path = args.out_dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in summary.rows() {
        w.serialize(row)
            .map_err(|e| CliError::Data(format!("writing CSV: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Data(format!("writing CSV: {e}")))?;
    write_file(&csv_path, &bytes)?;
    Ok(summary_table(&summary))
}

pub fn meta_result(args: &MetaArgs) -> Result<RateRatioResult, CliError> {
    check_alpha(args.alpha)?;
    let file = fs::File::open(&args.input)
        .map_err(|e| CliError::io(args.input.display().to_string(), e))?;
    let strata = read_strata_csv(file)?;
    Ok(match args.scale {
        ScaleArg::Natural => pool_natural(&strata, args.alpha)?,
        ScaleArg::Log => pool_log(&strata, args.alpha)?,
    })
}

pub fn meta(args: &MetaArgs) -> Result<String, CliError> {
    #[derive(Serialize)]
    struct Out {
        schema_version: u32,
        scale: &'static str,
        #[serde(flatten)]
        result: RateRatioResult,
    }
    let result = meta_result(args)?;
    let scale = match args.scale {
        ScaleArg::Natural => "natural",
        ScaleArg::Log => "log",
    };
    Ok(to_json(&Out {
        schema_version: crate::report::SCHEMA_VERSION,
        scale,
        result,
    })? + "\n")
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub schema_version: u32,
    pub case: String,
    pub target_rho: f64,
    pub latent_rho: f64,
    pub cache_hit: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<String>,
    /// Observed correlation per arm on fresh draws, when verified.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realized: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

pub const VERIFY_DRAWS: usize = 1_000_000;
const VERIFY_SEED: u64 = 0xc0ffee;

pub fn calibration_report(args: &CalibrateArgs) -> Result<CalibrationReport, CliError> {
    if !(args.rho >= 0.0 && args.rho < 1.0) {
        return Err(CliError::Usage(format!(
            "--rho must lie in [0, 1), got {}",
            args.rho
        )));
    }
    if !(args.tol > 0.0) || args.draws < 2 {
        return Err(CliError::Usage(
            "--tol must be positive and --draws at least 2".into(),
        ));
    }
    // n does not enter the calibration
    let spec = scenario(&args.case, 100)?.with_rho(args.rho);
    if !matches!(spec.outcome, OutcomeModel::Copula(_)) {
        return Err(CliError::Usage(format!(
            "case {} has no copula to calibrate",
            args.case
        )));
    }
    let settings = CalibrationSettings {
        draws: args.draws,
        tol: args.tol,
        ..CalibrationSettings::default()
    };
    let (latent_rho, cache_hit, cache_path, warning) = match (&args.cache_dir, args.no_cache) {
        (Some(dir), false) => {
            let cache = CalibrationCache::new(dir);
            let path = cache
                .path_for(&spec, &settings)
                .map(|p| p.display().to_string());
            let (c, write_err) = cache.get_or_calibrate(&spec, &settings)?;
            (
                c.latent_rho,
                c.cache_hit,
                path,
                write_err.map(|e| format!("cache not written: {e}")),
            )
        }
        _ => (calibrate_with(&spec, &settings)?, false, None, None),
    };
    let realized = if args.verify {
        let mut rng = RngStream::new(VERIFY_SEED, 0).rng();
        let mut out = [0.0; 2];
        for (arm, r) in out.iter_mut().enumerate() {
            let draws = gen_correlated_nb(&spec, arm, VERIFY_DRAWS, latent_rho, &mut rng)?;
            *r = realized_correlation(&draws);
        }
        Some(out)
    } else {
        None
    };
    Ok(CalibrationReport {
        schema_version: crate::report::SCHEMA_VERSION,
        case: spec.case_id.clone(),
        target_rho: args.rho,
        latent_rho,
        cache_hit,
        cache_path,
        realized,
        warning,
    })
}

pub fn calibrate(args: &CalibrateArgs) -> Result<String, CliError> {
    Ok(to_json(&calibration_report(args)?)? + "\n")
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Meta(a) => meta(a),
        Command::Calibrate(a) => calibrate(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariate_lists() {
        assert_eq!(parse_covariate_list("a, b").unwrap(), ["a", "b"]);
        assert!(parse_covariate_list("").is_err());
        assert!(parse_covariate_list("a,,b").is_err());
    }

    #[test]
    fn run_keys_come_from_config_and_flags() {
        let args = SimulateArgs {
            config: PathBuf::from("x.cfg"),
            reps: None,
            seed: Some(9),
            jobs: None,
            alpha: None,
            overrides: vec!["rho=0.25".into()],
            out_dir: PathBuf::from("."),
            name: None,
            cache_dir: None,
        };
        let (spec, cfg) =
            simulation_setup("case = C\nn = 50\nreps = 12\nseed = 3\n", &args).unwrap();
        assert_eq!((cfg.reps, cfg.seed), (12, 9));
        assert_eq!(spec.rho(), Some(0.25));
        assert!(simulation_setup("case = C\nn = 50\nreps = 0\n", &args).is_err());
        assert!(simulation_setup("case = C\nn = 50\nreps = many\n", &args).is_err());
    }

    #[test]
    fn calibrate_rejects_zinb_cases() {
        let args = CalibrateArgs {
            case: "G".into(),
            rho: 0.5,
            tol: 0.005,
            draws: 1000,
            cache_dir: None,
            no_cache: false,
            verify: false,
        };
        assert!(matches!(calibration_report(&args), Err(CliError::Usage(_))));
    }
}
