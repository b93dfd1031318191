//! Command-line entry points: `simulate`, `fit`, `study`, `asymp`, `curve`
//! and `loglik`, each writing its outputs plus a reproducibility manifest
//! into the chosen directory.
//!
//! Every command is a pure function of its arguments, input files and seed;
//! re-running reproduces the data outputs bit for bit. Exit codes: 0 on
//! success, 1 on input or structural errors, 2 when the fit exhausted its
//! iteration cap without converging.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{loading_ci, asymptotic_variances, variance_curve};
use crate::error::{Error, Result};
use crate::estimator::{fit_with_restarts, FitConfig, Init};
use crate::io;
use crate::model::Dims;
use crate::sampler::{sample, sample_params, FactorDistribution};
use crate::spectral::log_likelihood;
use crate::study::{delta_sweep, run_study, CellResult, StudyConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT_ERROR: u8 = 1;
pub const EXIT_CAP_EXHAUSTED: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "twofm", version, about = "Two-way factor model: simulation, estimation, inference and Monte Carlo studies")]
pub struct Cli {
    /// Base random seed for commands that draw randomness
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Rayon worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Suppress progress output
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic data matrix from the model
    Simulate(SimulateArgs),
    /// Maximum likelihood fit of a data matrix
    Fit(FitArgs),
    /// Monte Carlo study from a JSON configuration
    Study(StudyArgs),
    /// Asymptotic variances and confidence intervals for a fit
    Asymp(AsympArgs),
    /// Loading-variance curve over the variance ratio
    Curve(CurveArgs),
    /// Log-likelihood of a data matrix under given parameters
    Loglik(LoglikArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub q: usize,
    #[arg(long, default_value_t = 1)]
    pub r: usize,
    #[arg(long, default_value_t = 1)]
    pub c: usize,
    /// Row-factor variances, comma separated, strictly decreasing
    #[arg(long = "psiF", value_delimiter = ',', required = true)]
    pub psi_f: Vec<f64>,
    /// Column-factor variances, comma separated, strictly decreasing
    #[arg(long = "psiE", value_delimiter = ',', required = true)]
    pub psi_e: Vec<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub sigma2: f64,
    /// Factor distribution: gaussian | chi2 | chi2:<df>
    #[arg(long, default_value = "gaussian")]
    pub dist: String,
    /// Also write the generating factors, noise and parameters
    #[arg(long)]
    pub bundle: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV (no header by default)
    #[arg(long)]
    pub input: PathBuf,
    /// Skip one header line
    #[arg(long)]
    pub header: bool,
    #[arg(long)]
    pub r: usize,
    #[arg(long)]
    pub c: usize,
    /// Mean-center each column first
    #[arg(long)]
    pub center: bool,
    #[arg(long, default_value_t = 0.01)]
    pub err0: f64,
    #[arg(long, default_value_t = 0.005)]
    pub eps0: f64,
    #[arg(long, default_value_t = 500)]
    pub max_outer: usize,
    #[arg(long, default_value_t = 200)]
    pub max_inner: usize,
    /// Initialization: svd | random:<seed>
    #[arg(long, default_value = "svd")]
    pub init: String,
    /// Extra randomly initialized runs; the best likelihood wins
    #[arg(long, default_value_t = 0)]
    pub restarts: usize,
    /// Output JSON path (relative to --out-dir unless absolute)
    #[arg(long, default_value = "fit.json")]
    pub out: PathBuf,
    /// Base path for the factor score CSVs (writes <base>_F.csv and
    /// <base>_E.csv)
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// JSON study configuration
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct AsympArgs {
    /// Fit JSON produced by the fit command
    #[arg(long = "fit")]
    pub fit_json: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long = "psiF", default_value_t = 1.0)]
    pub psi_f: f64,
    #[arg(long, default_value_t = 1.0)]
    pub y: f64,
    /// Ratio grid as start:end:step
    #[arg(long, default_value = "0:50:0.1")]
    pub grid: String,
}

#[derive(Debug, Args)]
pub struct LoglikArgs {
    /// Parameter JSON
    #[arg(long)]
    pub params: PathBuf,
    /// Input CSV
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub header: bool,
    #[arg(long)]
    pub center: bool,
}

/// Study configuration document: the study itself plus an optional ratio
/// grid that triggers the sweep output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyDocument {
    #[serde(flatten)]
    pub study: StudyConfig,
    #[serde(default)]
    pub delta_grid: Option<Vec<f64>>,
}

/// Parses and runs the process arguments; returns the exit code.
pub fn run() -> u8 {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // A failure here only means a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            EXIT_INPUT_ERROR
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(cli, args),
        Command::Fit(args) => cmd_fit(cli, args),
        Command::Study(args) => cmd_study(cli, args),
        Command::Asymp(args) => cmd_asymp(cli, args),
        Command::Curve(args) => cmd_curve(cli, args),
        Command::Loglik(args) => cmd_loglik(cli, args),
    }
}

fn parse_dist(text: &str) -> Result<FactorDistribution> {
    match text {
        "gaussian" => Ok(FactorDistribution::Gaussian),
        "chi2" => Ok(FactorDistribution::CenteredChiSquare { df: 1 }),
        other => {
            if let Some(df_text) = other.strip_prefix("chi2:") {
                let df: u32 = df_text
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad chi2 degrees of freedom {df_text:?}")))?;
                Ok(FactorDistribution::CenteredChiSquare { df })
            } else {
                Err(Error::InvalidInput(format!(
                    "unknown distribution {text:?}; expected gaussian or chi2[:df]"
                )))
            }
        }
    }
}

fn parse_init(text: &str) -> Result<Init> {
    match text {
        "svd" => Ok(Init::Svd),
        other => {
            if let Some(seed_text) = other.strip_prefix("random:") {
                let seed: u64 = seed_text
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad init seed {seed_text:?}")))?;
                Ok(Init::Random(seed))
            } else {
                Err(Error::InvalidInput(format!("unknown init {text:?}; expected svd or random:<seed>")))
            }
        }
    }
}

fn resolve(out_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        out_dir.join(path)
    }
}

pub fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<u8> {
    let dims = Dims::new(args.p, args.q, args.r, args.c)?;
    let dist = parse_dist(&args.dist)?;
    let seed = cli.seed.unwrap_or(0);
    let params = sample_params(dims, &args.psi_f, &args.psi_e, args.sigma2, seed)?;
    let bundle = sample(&params, dist, seed.wrapping_add(1))?;

    std::fs::create_dir_all(&cli.out_dir)?;
    io::write_csv_matrix(&cli.out_dir.join("X.csv"), bundle.x.values())?;
    if args.bundle {
        let doc = io::BundleDocument::new(&params, &bundle);
        std::fs::write(cli.out_dir.join("bundle.json"), serde_json::to_string_pretty(&doc)?)?;
    }
    let manifest = io::RunManifest::new(
        "simulate",
        serde_json::json!({
            "p": args.p, "q": args.q, "r": args.r, "c": args.c,
            "psiF": args.psi_f, "psiE": args.psi_e, "sigma2": args.sigma2,
            "dist": args.dist, "bundle": args.bundle,
        }),
        Some(seed),
    );
    manifest.finish_and_write(&cli.out_dir)?;
    if !cli.quiet {
        println!("wrote {}", cli.out_dir.join("X.csv").display());
    }
    Ok(EXIT_OK)
}

pub fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<u8> {
    let x = io::load_data_matrix(&args.input, args.header, args.center)?;
    let dims = Dims::new(x.nrows(), x.ncols(), args.r, args.c)?;
    let config = FitConfig {
        err0: args.err0,
        eps0: args.eps0,
        max_outer: args.max_outer,
        max_inner: args.max_inner,
        init: parse_init(&args.init)?,
        ..FitConfig::default()
    };
    let result = fit_with_restarts(&x, dims, &config, args.restarts)?;

    std::fs::create_dir_all(&cli.out_dir)?;
    io::write_fit_json(&resolve(&cli.out_dir, &args.out), &result)?;
    if let Some(base) = &args.scores_out {
        let base = resolve(&cli.out_dir, base);
        let stem = base.to_string_lossy().to_string();
        io::write_csv_matrix(Path::new(&format!("{stem}_F.csv")), &result.scores.row_factors)?;
        io::write_csv_matrix(Path::new(&format!("{stem}_E.csv")), &result.scores.col_factors)?;
    }
    let mut manifest = io::RunManifest::new(
        "fit",
        serde_json::json!({
            "input": args.input.display().to_string(),
            "header": args.header, "center": args.center,
            "r": args.r, "c": args.c, "config": &config, "restarts": args.restarts,
        }),
        cli.seed,
    );
    manifest.add_input(&args.input)?;
    manifest.finish_and_write(&cli.out_dir)?;

    if !cli.quiet {
        println!(
            "fit: converged={} loglik={:.6} outer_iters={} gradient_norm={:.3e}",
            result.converged,
            result.final_loglik(),
            result.loglik_trace.len() - 1,
            result.gradient_norm
        );
        for w in &result.warnings {
            eprintln!("warning: {w}");
        }
    }
    Ok(if result.converged { EXIT_OK } else { EXIT_CAP_EXHAUSTED })
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Writes the per-cell accuracy and variance-error tables.
fn write_study_tables(dir: &Path, cells: &[CellResult]) -> Result<()> {
    let header = vec![
        "q", "p", "psiF", "psiE", "sigma2", "replicates", "failures", "mean_r2_L", "mean_r2_Lambda",
        "sigma2_mae", "sigma2_mse", "mean_outer_iters",
    ];
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|cell| {
            vec![
                cell.q.to_string(),
                cell.p.to_string(),
                join_values(&cell.psi_f),
                join_values(&cell.psi_e),
                fmt(cell.sigma2),
                cell.replicates.to_string(),
                cell.failures.to_string(),
                fmt(cell.mean_r2_l),
                fmt(cell.mean_r2_lambda),
                fmt(cell.sigma2_error.mae),
                fmt(cell.sigma2_error.mse),
                fmt(cell.mean_outer_iters),
            ]
        })
        .collect();
    io::write_csv_table(&dir.join("accuracy_table.csv"), &header, &rows)?;

    let mut var_rows = Vec::new();
    for cell in cells {
        for (j, stats) in cell.psi_f_error.iter().enumerate() {
            var_rows.push(vec![
                cell.q.to_string(),
                cell.p.to_string(),
                "psiF".into(),
                (j + 1).to_string(),
                fmt(cell.psi_f[j]),
                fmt(stats.mae),
                fmt(stats.mse),
            ]);
        }
        for (i, stats) in cell.psi_e_error.iter().enumerate() {
            var_rows.push(vec![
                cell.q.to_string(),
                cell.p.to_string(),
                "psiE".into(),
                (i + 1).to_string(),
                fmt(cell.psi_e[i]),
                fmt(stats.mae),
                fmt(stats.mse),
            ]);
        }
    }
    io::write_csv_table(
        &dir.join("variance_table.csv"),
        &["q", "p", "parameter", "index", "truth", "mae", "mse"],
        &var_rows,
    )?;
    Ok(())
}

fn join_values(values: &[f64]) -> String {
    values.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(";")
}

pub fn cmd_study(cli: &Cli, args: &StudyArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&args.config)?;
    let doc: StudyDocument = serde_json::from_str(&text)?;

    std::fs::create_dir_all(&cli.out_dir)?;
    let result = run_study(&doc.study)?;
    write_study_tables(&cli.out_dir, &result.cells)?;
    std::fs::write(cli.out_dir.join("study.json"), serde_json::to_string_pretty(&result)?)?;

    // Q-Q exports for every cell that collected scaled errors.
    for cell in &result.cells {
        if let Some(scaled) = &cell.scaled_errors {
            let n = scaled.loading_l_col1.len();
            if n > 1 {
                let rows: Vec<Vec<String>> = scaled
                    .loading_l_col1
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        vec![
                            fmt(crate::asymptotics::normal_quantile((k as f64 + 0.5) / n as f64)),
                            fmt(*v),
                        ]
                    })
                    .collect();
                io::write_csv_table(
                    &cli.out_dir.join(format!("qq_loading_L_p{}_q{}.csv", cell.p, cell.q)),
                    &["normal_quantile", "scaled_error"],
                    &rows,
                )?;
            }
            for (label, samples) in [("psiF", &scaled.psi_f[0]), ("psiE", &scaled.psi_e[0])] {
                let n = samples.len();
                if n > 1 {
                    let rows: Vec<Vec<String>> = samples
                        .iter()
                        .enumerate()
                        .map(|(k, v)| {
                            vec![
                                fmt(crate::asymptotics::normal_quantile((k as f64 + 0.5) / n as f64)),
                                fmt(*v),
                            ]
                        })
                        .collect();
                    io::write_csv_table(
                        &cli.out_dir.join(format!("qq_{label}_p{}_q{}.csv", cell.p, cell.q)),
                        &["normal_quantile", "scaled_error"],
                        &rows,
                    )?;
                }
            }
        }
    }

    if let Some(deltas) = &doc.delta_grid {
        let points = delta_sweep(&doc.study, deltas)?;
        let rows: Vec<Vec<String>> = points
            .iter()
            .map(|pt| {
                vec![
                    fmt(pt.delta),
                    pt.perturbed.to_string(),
                    fmt(pt.mean_r2_l),
                    fmt(pt.mean_r2_lambda),
                    pt.failures.to_string(),
                ]
            })
            .collect();
        io::write_csv_table(
            &cli.out_dir.join("delta_sweep.csv"),
            &["delta", "perturbed", "mean_r2_L", "mean_r2_Lambda", "failures"],
            &rows,
        )?;
    }

    let mut manifest = io::RunManifest::new("study", serde_json::to_value(&doc)?, Some(doc.study.base_seed));
    manifest.add_input(&args.config)?;
    manifest.finish_and_write(&cli.out_dir)?;
    if !cli.quiet {
        println!("study finished: {} cell(s)", result.cells.len());
    }
    Ok(EXIT_OK)
}

pub fn cmd_asymp(cli: &Cli, args: &AsympArgs) -> Result<u8> {
    let doc = io::read_fit_json(&args.fit_json)?;
    let theta = doc.theta_hat()?;
    let y = theta.dims.p as f64 / theta.dims.q as f64;
    let variances = asymptotic_variances(&theta, y)?;
    let ci = loading_ci(&theta, args.level)?;

    std::fs::create_dir_all(&cli.out_dir)?;
    std::fs::write(cli.out_dir.join("variances.json"), serde_json::to_string_pretty(&variances)?)?;

    let mut rows = Vec::new();
    for j in 0..theta.dims.r {
        for m in 0..theta.dims.q {
            let (lo, hi) = ci.row_interval(&theta, m, j);
            rows.push(vec![
                "L".to_string(),
                (m + 1).to_string(),
                (j + 1).to_string(),
                fmt(theta.row_loadings[(m, j)]),
                fmt(lo),
                fmt(hi),
                ci.unreliable_row_columns.contains(&j).to_string(),
            ]);
        }
    }
    for i in 0..theta.dims.c {
        for k in 0..theta.dims.p {
            let (lo, hi) = ci.col_interval(&theta, k, i);
            rows.push(vec![
                "Lambda".to_string(),
                (k + 1).to_string(),
                (i + 1).to_string(),
                fmt(theta.col_loadings[(k, i)]),
                fmt(lo),
                fmt(hi),
                ci.unreliable_col_columns.contains(&i).to_string(),
            ]);
        }
    }
    io::write_csv_table(
        &cli.out_dir.join("ci.csv"),
        &["matrix", "row", "column", "estimate", "lower", "upper", "unreliable"],
        &rows,
    )?;

    let mut manifest = io::RunManifest::new(
        "asymp",
        serde_json::json!({"fit": args.fit_json.display().to_string(), "level": args.level}),
        cli.seed,
    );
    manifest.add_input(&args.fit_json)?;
    manifest.finish_and_write(&cli.out_dir)?;
    if !cli.quiet {
        println!("wrote {} and {}", cli.out_dir.join("variances.json").display(), cli.out_dir.join("ci.csv").display());
    }
    Ok(EXIT_OK)
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidInput(format!("grid {text:?} must be start:end:step")));
    }
    let start: f64 = parts[0].parse().map_err(|_| Error::InvalidInput("bad grid start".into()))?;
    let end: f64 = parts[1].parse().map_err(|_| Error::InvalidInput("bad grid end".into()))?;
    let step: f64 = parts[2].parse().map_err(|_| Error::InvalidInput("bad grid step".into()))?;
    if step <= 0.0 || end < start {
        return Err(Error::InvalidInput("grid step must be positive and end >= start".into()));
    }
    let n = ((end - start) / step).round() as usize;
    Ok((0..=n).map(|k| start + step * k as f64).collect())
}

pub fn cmd_curve(cli: &Cli, args: &CurveArgs) -> Result<u8> {
    let deltas = parse_grid(&args.grid)?;
    let points = variance_curve(args.sigma2, args.psi_f, args.y, &deltas);
    std::fs::create_dir_all(&cli.out_dir)?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|pt| vec![fmt(pt.delta), fmt(pt.g), pt.rejected.to_string()])
        .collect();
    io::write_csv_table(&cli.out_dir.join("curve.csv"), &["delta", "g", "rejected"], &rows)?;
    let manifest = io::RunManifest::new(
        "curve",
        serde_json::json!({"sigma2": args.sigma2, "psiF": args.psi_f, "y": args.y, "grid": args.grid}),
        cli.seed,
    );
    manifest.finish_and_write(&cli.out_dir)?;
    if !cli.quiet {
        println!("wrote {}", cli.out_dir.join("curve.csv").display());
    }
    Ok(EXIT_OK)
}

pub fn cmd_loglik(cli: &Cli, args: &LoglikArgs) -> Result<u8> {
    let params = io::read_params_json(&args.params)?;
    let x = io::load_data_matrix(&args.input, args.header, args.center)?;
    let value = log_likelihood(&params, &x)?;
    // Round-trip exact value on stdout.
    println!("{value}");
    std::fs::create_dir_all(&cli.out_dir)?;
    std::fs::write(
        cli.out_dir.join("loglik.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "schema_version": io::SCHEMA_VERSION,
            "loglik": value,
        }))?,
    )?;
    let mut manifest = io::RunManifest::new(
        "loglik",
        serde_json::json!({
            "params": args.params.display().to_string(),
            "input": args.input.display().to_string(),
            "header": args.header, "center": args.center,
        }),
        cli.seed,
    );
    manifest.add_input(&args.params)?;
    manifest.add_input(&args.input)?;
    manifest.finish_and_write(&cli.out_dir)?;
    Ok(EXIT_OK)
}
