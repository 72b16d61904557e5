//! `ssdm`: fit, select, simulate and diagnose semiparametric spatial
//! dynamic models from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use ssdm::diagnostics::residual_diagnostics;
use ssdm::io::{self, DatasetSchema};
use ssdm::profile::ResolvedBandwidths;
use ssdm::selection::select;
use ssdm::simulate::{run_table1, run_table2, MonteCarloReport, Table1Config, Table2Config};
use ssdm::weights::{build_exp_decay_weights_with, load_weights_with};
use ssdm::{
    estimate, standard_errors, Algorithm, Bandwidth, BandwidthPolicy, Criterion, ErrorClass,
    KernelSpec, ModelSpec, SeMode, SelectionSettings, SpatialDataset, SsdmError, WeightMatrix,
};

#[derive(Debug, Parser)]
#[command(name = "ssdm", version, about = "Semiparametric spatial dynamic models")]
struct Cli {
    /// Worker threads (default: all available cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Stderr verbosity: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate α, σ² and the coefficient surfaces for a given model.
    Fit(FitArgs),
    /// Identify constant coefficient components with AIC or BIC.
    Select(SelectArgs),
    /// Run a Monte Carlo study on one of the reference designs.
    Simulate(SimulateArgs),
    /// Residual series, normal Q-Q points, ACF and PACF of a saved fit.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,

    /// n×n weight matrix as headerless CSV (default: exponential-decay weights
    /// built from the locations).
    #[arg(long)]
    weights: Option<PathBuf>,

    /// Allow dense n×n matrices beyond 4096 observations.
    #[arg(long)]
    dense_ok: bool,

    /// Location columns, as `U,V` (default u,v or LON,LAT).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    location: Option<Vec<String>>,

    /// Response column (default y or MEDV).
    #[arg(long)]
    response: Option<String>,

    /// Covariate columns in order (default: all remaining columns).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,

    /// Columns to standardize to mean 0 and sd 1 after loading.
    #[arg(long, value_delimiter = ',')]
    standardize: Vec<String>,

    /// Boston schema: MEDV on CRIM, RM, RAD, TAX, LSTAT at LON/LAT.
    #[arg(long, conflicts_with_all = ["location", "response", "covariates"])]
    boston: bool,

    #[arg(long, default_value = "epanechnikov")]
    kernel: KernelSpec,
}

impl DataArgs {
    fn schema(&self) -> DatasetSchema {
        let mut schema = if self.boston {
            DatasetSchema::boston()
        } else {
            DatasetSchema {
                location: self
                    .location
                    .as_ref()
                    .map(|l| (l[0].clone(), l[1].clone())),
                response: self.response.clone(),
                covariates: self.covariates.clone(),
                ..Default::default()
            }
        };
        schema.standardize = self.standardize.iter().cloned().collect();
        schema
    }

    fn load(&self) -> ssdm::Result<(SpatialDataset, WeightMatrix)> {
        let data = io::read_dataset(&self.data, &self.schema())?;
        let w = load_weight_matrix(self.weights.as_deref(), &data, self.dense_ok)?;
        log::info!("loaded n = {}, p = {} from {}", data.n(), data.p(), self.data.display());
        Ok((data, w))
    }

    fn paths(&self) -> BTreeMap<String, String> {
        let mut paths = BTreeMap::new();
        paths.insert("data".into(), self.data.display().to_string());
        if let Some(w) = &self.weights {
            paths.insert("weights".into(), w.display().to_string());
        }
        paths
    }
}

fn load_weight_matrix(
    path: Option<&Path>,
    data: &SpatialDataset,
    dense_ok: bool,
) -> ssdm::Result<WeightMatrix> {
    match path {
        Some(p) => {
            let m = io::read_weights_csv(p)?;
            if m.nrows() != data.n() {
                return Err(SsdmError::InvalidData(format!(
                    "{}: weight matrix has {} rows but the dataset has {} observations",
                    p.display(),
                    m.nrows(),
                    data.n()
                )));
            }
            load_weights_with(m, dense_ok)
        }
        None => build_exp_decay_weights_with(data.locations(), dense_ok),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SeChoice {
    Normal,
    Sandwich,
    None,
}

impl SeChoice {
    fn mode(self) -> Option<SeMode> {
        match self {
            SeChoice::Normal => Some(SeMode::Normal),
            SeChoice::Sandwich => Some(SeMode::Sandwich),
            SeChoice::None => None,
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    input: DataArgs,

    /// Profile-stage bandwidth.
    #[arg(long, default_value_t = 0.4)]
    h: f64,

    /// Bandwidth of the final surfaces (default 1.5 h).
    #[arg(long)]
    h1: Option<f64>,

    /// Read --h as a fraction of the larger location span.
    #[arg(long)]
    h_frac: bool,

    /// Read --h1 as a fraction of the larger location span.
    #[arg(long)]
    h1_frac: bool,

    /// Constant components, 1-based, e.g. `3,5`.
    #[arg(long, default_value = "")]
    constant: ModelSpec,

    #[arg(long, value_enum, default_value = "normal")]
    se: SeChoice,

    /// Fit output (JSON).
    #[arg(long)]
    out: PathBuf,

    /// Surface table `u,v,beta_j[,se_j]` (CSV).
    #[arg(long)]
    surface: Option<PathBuf>,
}

impl FitArgs {
    fn policy(&self) -> ssdm::Result<BandwidthPolicy> {
        let h = if self.h_frac {
            Bandwidth::FractionOfRange(self.h)
        } else {
            Bandwidth::Absolute(self.h)
        };
        let h1 = match self.h1 {
            Some(v) if self.h1_frac => Bandwidth::FractionOfRange(v),
            Some(v) => Bandwidth::Absolute(v),
            None if self.h1_frac => {
                return Err(SsdmError::InvalidArgument("--h1-frac needs --h1".into()))
            }
            None => match h {
                Bandwidth::Absolute(v) => Bandwidth::Absolute(1.5 * v),
                Bandwidth::FractionOfRange(v) => Bandwidth::FractionOfRange(1.5 * v),
            },
        };
        Ok(BandwidthPolicy {
            h,
            h1,
            selection_h: h,
        })
    }
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    input: DataArgs,

    #[arg(long, default_value = "bic")]
    criterion: Criterion,

    /// backward or ctar.
    #[arg(long, default_value = "backward")]
    algorithm: Algorithm,

    /// Selection bandwidth (default 0.2 for AIC, 0.3 for BIC).
    #[arg(long)]
    sel_h: Option<f64>,

    /// Read --sel-h as a fraction of the larger location span.
    #[arg(long)]
    sel_h_frac: bool,

    /// Re-profile α for every candidate model.
    #[arg(long)]
    strict: bool,

    /// Selection output (JSON), including the full search trace.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// 1: estimation accuracy (Example 1); 2: selection frequencies (Example 2).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    table: u8,

    /// Sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "400,500,600")]
    n: Vec<usize>,

    #[arg(long, default_value_t = 200)]
    reps: usize,

    #[arg(long, default_value_t = 42)]
    seed: u64,

    #[arg(long, default_value = "epanechnikov")]
    kernel: KernelSpec,

    /// Profile-stage bandwidth (table 1).
    #[arg(long, default_value_t = 0.4)]
    h: f64,

    /// Final-surface bandwidth (table 1).
    #[arg(long, default_value_t = 0.6)]
    h1: f64,

    /// Standard errors per replication (table 1).
    #[arg(long, value_enum, default_value = "none")]
    se: SeChoice,

    /// Criterion (table 2).
    #[arg(long, default_value = "bic")]
    criterion: Criterion,

    /// Search algorithm (table 2).
    #[arg(long, default_value = "backward")]
    algorithm: Algorithm,

    /// Selection bandwidth (table 2; default 0.2 for AIC, 0.3 for BIC).
    #[arg(long)]
    sel_h: Option<f64>,

    /// Re-profile α for every candidate model (table 2).
    #[arg(long)]
    strict: bool,

    /// Report output (JSON).
    #[arg(long)]
    out: PathBuf,

    /// Directory for the median run's surfaces (table 1).
    #[arg(long)]
    surfaces_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    /// Fit written by `ssdm fit`.
    #[arg(long)]
    fit: PathBuf,

    /// Dataset the fit came from; checked against the fit's size.
    #[arg(long)]
    data: Option<PathBuf>,

    /// Number of ACF/PACF lags (default min(40, n/4)).
    #[arg(long)]
    lags: Option<usize>,

    #[arg(long)]
    out: PathBuf,
}

/// Fully resolved settings of a run, embedded in every output.
#[derive(Debug, Serialize)]
struct RunConfig {
    tool: &'static str,
    version: &'static str,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    created_unix: u64,
    subcommand: &'static str,
    threads: usize,
    kernel: Option<KernelSpec>,
    seed: Option<u64>,
    bandwidths: Option<ResolvedBandwidths>,
    paths: BTreeMap<String, String>,
    settings: Value,
}

impl RunConfig {
    fn new(subcommand: &'static str) -> Self {
        RunConfig {
            tool: "ssdm",
            version: env!("CARGO_PKG_VERSION"),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            subcommand,
            threads: rayon::current_num_threads(),
            kernel: None,
            seed: None,
            bandwidths: None,
            paths: BTreeMap::new(),
            settings: Value::Null,
        }
    }

    fn provenance(&self) -> Value {
        serde_json::to_value(self).expect("RunConfig serializes")
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Select(a) => run_select(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Diagnose(a) => run_diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}

fn run_fit(a: &FitArgs) -> ssdm::Result<()> {
    let policy = a.policy()?;
    let (data, w) = a.input.load()?;
    a.constant.validate(data.p())?;
    let resolved = policy.resolve(data.max_span())?;
    let mut fit = estimate(&data, &w, &policy, &a.constant, a.input.kernel)?;
    if let Some(mode) = a.se.mode() {
        fit = standard_errors(&fit, &data, &w, mode)?;
    }

    let mut config = RunConfig::new("fit");
    config.kernel = Some(a.input.kernel);
    config.bandwidths = Some(resolved);
    config.paths = a.input.paths();
    config.paths.insert("out".into(), a.out.display().to_string());
    if let Some(s) = &a.surface {
        config.paths.insert("surface".into(), s.display().to_string());
    }
    config.settings = json!({
        "constant": a.constant,
        "se": format!("{:?}", a.se).to_lowercase(),
        "bandwidth_policy": policy,
        "schema": a.input.schema(),
    });
    io::write_fit_with_provenance(&fit, Some(config.provenance()), &a.out)?;
    if let Some(path) = &a.surface {
        io::write_surface_csv(&fit, &data, path)?;
    }

    println!("model      {}", fit.model);
    println!("alpha_hat  {:.6}", fit.alpha_hat);
    if let Some(se) = fit.se_alpha {
        println!("se_alpha   {se:.6}");
    }
    println!("sigma2_hat {:.6}", fit.sigma2_hat);
    for (j, b) in &fit.beta_const {
        println!("beta_{j}     {b:.6}");
    }
    println!("loglik     {:.6}", fit.loglik);
    println!("aic        {:.6}", fit.aic);
    println!("bic        {:.6}", fit.bic);
    if fit.alpha_at_boundary {
        log::warn!("alpha_hat is at the edge of the admissible interval");
    }
    Ok(())
}

fn run_select(a: &SelectArgs) -> ssdm::Result<()> {
    let (data, w) = a.input.load()?;
    let sel = a
        .sel_h
        .unwrap_or_else(|| a.criterion.default_selection_bandwidth());
    let sel_bw = if a.sel_h_frac {
        Bandwidth::FractionOfRange(sel)
    } else {
        Bandwidth::Absolute(sel)
    };
    let policy = BandwidthPolicy {
        h: sel_bw,
        h1: sel_bw,
        selection_h: sel_bw,
    };
    let mut settings = SelectionSettings::new(a.criterion);
    settings.strict = a.strict;
    let result = select(&data, &w, &policy, a.input.kernel, a.algorithm, settings)?;

    let mut config = RunConfig::new("select");
    config.kernel = Some(a.input.kernel);
    config.bandwidths = Some(ResolvedBandwidths {
        h: result.selection_h,
        h1: result.selection_h,
        selection_h: result.selection_h,
    });
    config.paths = a.input.paths();
    config.paths.insert("out".into(), a.out.display().to_string());
    config.settings = json!({
        "criterion": a.criterion,
        "algorithm": a.algorithm,
        "strict": a.strict,
        "grid_points": settings.grid_points,
        "schema": a.input.schema(),
    });
    io::write_json(&json!({ "selection": result }), Some(config.provenance()), &a.out)?;
    println!("chosen     {}", result.chosen);
    println!("criterion  {} at h = {:.6}", result.criterion, result.selection_h);
    println!("alpha_hat  {:.6}", result.alpha_hat);
    Ok(())
}

fn run_simulate(a: &SimulateArgs) -> ssdm::Result<()> {
    if a.n.is_empty() {
        return Err(SsdmError::InvalidArgument("--n needs at least one size".into()));
    }
    let mut config = RunConfig::new("simulate");
    config.kernel = Some(a.kernel);
    config.seed = Some(a.seed);
    config.paths.insert("out".into(), a.out.display().to_string());
    if let Some(d) = &a.surfaces_out {
        config.paths.insert("surfaces_out".into(), d.display().to_string());
    }
    let reports = if a.table == 1 {
        let mut t = Table1Config::new(a.n.clone(), a.reps, a.seed);
        t.kernel = a.kernel;
        t.bandwidths = BandwidthPolicy::absolute(a.h, a.h1, a.h);
        t.standard_errors = a.se.mode();
        config.bandwidths = Some(t.bandwidths.resolve(1.0)?);
        config.settings = json!({ "table": 1, "study": t });
        run_table1(&t)?
    } else {
        let mut t = Table2Config::new(a.n.clone(), a.reps, a.criterion, a.algorithm, a.seed);
        t.kernel = a.kernel;
        t.selection_h = a.sel_h;
        t.strict = a.strict;
        let sel = t.resolved_selection_h();
        config.bandwidths = Some(ResolvedBandwidths {
            h: sel,
            h1: 1.5 * sel,
            selection_h: sel,
        });
        config.settings = json!({ "table": 2, "study": t });
        run_table2(&t)?
    };

    if let Some(dir) = &a.surfaces_out {
        write_median_surfaces(&reports, dir)?;
    }
    io::write_json(&json!({ "reports": reports }), Some(config.provenance()), &a.out)?;
    for r in &reports {
        print_report(r);
    }
    Ok(())
}

fn write_median_surfaces(reports: &[MonteCarloReport], dir: &Path) -> ssdm::Result<()> {
    fs::create_dir_all(dir).map_err(|e| SsdmError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for r in reports {
        let Some(run) = &r.median_run else { continue };
        let p = run.beta_true.ncols();
        for j in 0..p {
            let header = ["u", "v", "beta", "beta_hat"].map(String::from);
            let rows = run.locations.iter().enumerate().map(|(i, s)| {
                vec![s[0], s[1], run.beta_true[(i, j)], run.fit.beta_surface[(i, j)]]
            });
            let path = dir.join(format!("median_n{}_beta{}.csv", r.n, j + 1));
            io::write_table(&header, rows, path)?;
        }
    }
    Ok(())
}

fn print_report(r: &MonteCarloReport) {
    let mut line = format!("n={} reps={} failures={}", r.n, r.reps, r.failures);
    if let Some(mise) = &r.mise_beta {
        for (j, v) in mise.iter().enumerate() {
            line.push_str(&format!(" mise_beta{}={v:.4}", j + 1));
        }
    }
    if let Some(v) = r.mse_alpha {
        line.push_str(&format!(" mse_alpha={v:.4}"));
    }
    if let Some(v) = r.mse_sigma2 {
        line.push_str(&format!(" mse_sigma2={v:.4}"));
    }
    if let Some(counts) = &r.selection_counts {
        let total: usize = counts.values().sum();
        for label in ssdm::simulate::TABLE2_MODELS
            .iter()
            .chain(std::iter::once(&ssdm::simulate::OTHER_BUCKET))
        {
            let c = counts.get(*label).copied().unwrap_or(0);
            line.push_str(&format!(" {label}={:.2}", c as f64 / total.max(1) as f64));
        }
    }
    println!("{line}");
}

fn run_diagnose(a: &DiagnoseArgs) -> ssdm::Result<()> {
    let fit = io::read_fit(&a.fit)?;
    let mut config = RunConfig::new("diagnose");
    config.kernel = Some(fit.kernel);
    config.bandwidths = Some(ResolvedBandwidths {
        h: fit.h,
        h1: fit.h1,
        selection_h: fit.h,
    });
    config.paths.insert("fit".into(), a.fit.display().to_string());
    config.paths.insert("out".into(), a.out.display().to_string());
    if let Some(d) = &a.data {
        let data = io::read_dataset(d, &DatasetSchema::default())
            .or_else(|_| io::read_dataset(d, &DatasetSchema::boston()))?;
        if data.n() != fit.n() {
            return Err(SsdmError::InvalidData(format!(
                "{}: {} observations but the fit has {}",
                d.display(),
                data.n(),
                fit.n()
            )));
        }
        config.paths.insert("data".into(), d.display().to_string());
    }
    let lags = match a.lags {
        Some(l) if l >= fit.n() => {
            return Err(SsdmError::InvalidArgument(format!(
                "--lags {l} must be smaller than n = {}",
                fit.n()
            )))
        }
        other => other,
    };
    let report = residual_diagnostics(&fit, lags)?;
    config.settings = json!({ "lags": report.lags });
    io::write_json(&json!({ "diagnostics": report }), Some(config.provenance()), &a.out)?;
    let outside = report.acf.iter().filter(|r| r.abs() > report.band).count();
    println!(
        "n={} lags={} acf outside ±{:.4}: {}",
        report.n, report.lags, report.band, outside
    );
    Ok(())
}
