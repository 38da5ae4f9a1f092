use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use oprisk::estimate::{self, ConstraintConfig, EstimationProblem, Mode};
use oprisk::exact::{stats_from_chain, ActivationChain, DEFAULT_MAX_BITS};
use oprisk::forecast::{self, Approach, DataSource, Engine, ExperimentConfig, VarianceForm};
use oprisk::gauss::normal_quantile;
use oprisk::io::{self, report, BinningSpec, ParamFile, ProcessTable};
use oprisk::{ensemble_z_moments, simulate, validate_params, ModelParams, Trajectory};

/// Simulation, exact solution, estimation and VaR forecasting for the
/// interacting-process operational loss model.
#[derive(Parser, Debug)]
#[command(name = "oprisk", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a trajectory (or an ensemble's cumulative-loss moments).
    Simulate(SimulateArgs),
    /// Exact stationary statistics by activation-window enumeration.
    Solve(SolveArgs),
    /// Fit parameters to a trajectory by censored maximum likelihood.
    Estimate(EstimateArgs),
    /// Train on prefixes, forecast cumulative losses and VaR.
    Forecast(ForecastArgs),
    /// Gaussian VaR from given moments or from a parameter file.
    Var(VarArgs),
    /// Check a parameter file against the model constraints.
    Validate(ValidateArgs),
    /// Bin a timestamped loss database into a trajectory.
    Ingest(IngestArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trajectory CSV (`-` for stdout).
    #[arg(long, default_value = "-")]
    out: PathBuf,
    /// Write `t,process,loss` rows for positive losses only.
    #[arg(long)]
    sparse: bool,
    /// Instead of one trajectory, write per-step moments of `z` over this
    /// many cold-start runs.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    params: PathBuf,
    /// Horizons for cumulative-loss moments.
    #[arg(long, value_delimiter = ',')]
    t_eval: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_MAX_BITS)]
    max_bits: usize,
    /// Per-process stationary statistics CSV.
    #[arg(long, default_value = "-")]
    out: PathBuf,
    /// CSV of `<z(t)>` and `Var z(t)` at the `--t-eval` horizons.
    #[arg(long)]
    horizons_out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModeArg {
    /// Rates known; fit thresholds and couplings.
    ThetaJ,
    /// Acyclic support known; fit thresholds, couplings and rates.
    Full,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Trajectory CSV, dense or sparse.
    #[arg(long)]
    data: PathBuf,
    /// Parameter file whose `[t_star]` gives the known lags.
    #[arg(long)]
    tstar: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    mode: ModeArg,
    /// Parameter file whose `[lambda]` gives known (theta-j) or starting
    /// (full) rates.
    #[arg(long)]
    lambda_from: Option<PathBuf>,
    /// Also enforce `theta_i + sum_j J_ij t*_ij < 0`.
    #[arg(long)]
    feasibility_bound: bool,
    /// Fitted parameter file.
    #[arg(long, default_value = "-")]
    out: PathBuf,
    /// Fit-report CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum EngineArg {
    Exact,
    Mc,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum VarianceArg {
    /// Includes autocovariances of the per-step loss.
    Acf,
    /// `t Var l`.
    Iid,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    /// Simulate the original trajectory from these parameters.
    #[arg(long, conflicts_with = "data")]
    params_true: Option<PathBuf>,
    /// Observed trajectory; requires `--tstar`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    tstar: Option<PathBuf>,
    #[arg(long)]
    lambda_from: Option<PathBuf>,
    /// Horizon T; defaults to the length of `--data`.
    #[arg(long)]
    horizon: Option<usize>,
    /// Training fractions (repeatable).
    #[arg(long = "f", required = true)]
    fractions: Vec<f64>,
    #[arg(long, value_enum, default_value_t = EngineArg::Exact)]
    engine: EngineArg,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = VarianceArg::Acf)]
    variance: VarianceArg,
    #[command(flatten)]
    level: VarLevel,
    /// VaR horizon; defaults to T.
    #[arg(long)]
    var_horizon: Option<usize>,
    #[arg(long)]
    feasibility_bound: bool,
    /// Directory for `bands.csv`, `summary.csv` and the fitted parameter
    /// files.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Clone, Copy)]
struct VarLevel {
    /// VaR = mean + multiplier * sigma.
    #[arg(long, conflicts_with = "quantile")]
    multiplier: Option<f64>,
    /// Use the standard-Gaussian quantile at this level as the multiplier.
    #[arg(long)]
    quantile: Option<f64>,
}

impl VarLevel {
    fn multiplier(&self) -> Result<f64> {
        match (self.multiplier, self.quantile) {
            (Some(m), _) => Ok(m),
            (None, Some(q)) if q > 0.0 && q < 1.0 => Ok(normal_quantile(q)),
            (None, Some(q)) => Err(Usage(format!("--quantile {q} is outside (0, 1)")).into()),
            (None, None) => Ok(forecast::DEFAULT_MULTIPLIER),
        }
    }
}

#[derive(Args, Debug)]
struct VarArgs {
    #[arg(long, requires = "sigma", conflicts_with = "params")]
    mean: Option<f64>,
    #[arg(long, requires = "mean")]
    sigma: Option<f64>,
    #[arg(long, requires = "horizon")]
    params: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, value_enum, default_value_t = EngineArg::Exact)]
    engine: EngineArg,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = VarianceArg::Acf)]
    variance: VarianceArg,
    #[command(flatten)]
    level: VarLevel,
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    params: PathBuf,
    /// Treat the feasibility bound as a violation rather than a warning.
    #[arg(long)]
    strict_bound: bool,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// CSV with header `timestamp,process_id,amount`.
    #[arg(long)]
    records: PathBuf,
    /// Step length, e.g. `1d`, `6h`, `30m`.
    #[arg(long)]
    step: String,
    /// Start of step 1; defaults to the earliest record.
    #[arg(long)]
    origin: Option<String>,
    /// Process ids in row order; defaults to the sorted distinct ids.
    #[arg(long, value_delimiter = ',')]
    processes: Vec<String>,
    #[arg(long, default_value = "-")]
    out: PathBuf,
    #[arg(long)]
    sparse: bool,
}

/// Misuse of flags detected after parsing; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Var(a) => cmd_var(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Ingest(a) => cmd_ingest(a),
    }
}

fn output(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufWriter::new(std::io::stdout().lock())));
    }
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(Box::new(BufWriter::new(file)))
}

fn read_param_file(path: &Path) -> Result<ParamFile> {
    io::load_params(path).with_context(|| format!("reading {}", path.display()))
}

fn read_params(path: &Path) -> Result<ModelParams> {
    Ok(read_param_file(path)?.to_params()?)
}

fn read_data(path: &Path, n: usize) -> Result<Trajectory> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    io::read_trajectory(BufReader::new(file), Some(n), None)
        .with_context(|| format!("reading {}", path.display()))
}

fn engine(arg: EngineArg, samples: usize) -> Engine {
    match arg {
        EngineArg::Exact => Engine::Exact,
        EngineArg::Mc => Engine::MonteCarlo { n_samples: samples },
    }
}

fn variance(arg: VarianceArg) -> VarianceForm {
    match arg {
        VarianceArg::Acf => VarianceForm::Autocovariance,
        VarianceArg::Iid => VarianceForm::Iid,
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let params = read_params(&a.params)?;
    let mut out = output(&a.out)?;
    match a.samples {
        Some(n) => {
            if a.sparse {
                bail!(Usage("--sparse applies to single trajectories only".into()));
            }
            let m = ensemble_z_moments(&params, a.horizon, n, a.seed)?;
            report::write_ensemble_moments(&mut out, &m)?;
        }
        None => {
            let traj = simulate(&params, a.horizon, a.seed)?;
            if a.sparse {
                io::write_trajectory_sparse(&mut out, &traj)?;
            } else {
                io::write_trajectory_dense(&mut out, &traj)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_solve(a: SolveArgs) -> Result<()> {
    let params = read_params(&a.params)?;
    let width = params.max_lag().max(1);
    let chain = ActivationChain::new(&params, width, a.max_bits)?;
    let stats = stats_from_chain(&chain, &a.t_eval)?;
    let mut out = output(&a.out)?;
    report::write_stationary_stats(&mut out, &stats)?;
    out.flush()?;
    if let Some(path) = &a.horizons_out {
        let mut h = output(path)?;
        report::write_horizon_moments(&mut h, &stats)?;
        h.flush()?;
    }
    Ok(())
}

fn estimation_mode(mode: ModeArg, rates: Option<Vec<f64>>) -> Result<Mode> {
    Ok(match mode {
        ModeArg::ThetaJ => Mode::ThetaJ {
            lambda: rates.ok_or_else(|| Usage("--mode theta-j needs --lambda-from".into()))?,
        },
        ModeArg::Full => Mode::Full {
            initial_lambda: rates,
        },
    })
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let tstar = read_param_file(&a.tstar)?;
    let rates = a.lambda_from.as_deref().map(read_param_file).transpose()?.map(|p| p.lambda);
    let data = read_data(&a.data, tstar.n_processes)?;
    let problem = EstimationProblem::new(
        data,
        tstar.lags,
        estimation_mode(a.mode, rates)?,
        ConstraintConfig {
            feasibility_bound: a.feasibility_bound,
        },
    )?;
    let result = estimate::fit(&problem)?;
    for p in &result.processes {
        for w in &p.warnings {
            eprintln!("warning: process {}: {w}", p.process + 1);
        }
    }
    let mut out = output(&a.out)?;
    out.write_all(io::format_params(&result.params).as_bytes())?;
    out.flush()?;
    if let Some(path) = &a.report {
        let mut r = output(path)?;
        report::write_fit_report(&mut r, &result)?;
        r.flush()?;
    }
    eprintln!(
        "approach: {}; log-likelihood {}",
        result.approach,
        io::fmt_num(result.log_likelihood)
    );
    Ok(())
}

fn cmd_forecast(a: ForecastArgs) -> Result<()> {
    let rates = a.lambda_from.as_deref().map(read_param_file).transpose()?.map(|p| p.lambda);
    let (source, horizon) = match (&a.params_true, &a.data) {
        (Some(p), None) => {
            let horizon = a
                .horizon
                .ok_or_else(|| Usage("--params-true needs --horizon".into()))?;
            (DataSource::Truth(read_params(p)?), horizon)
        }
        (None, Some(d)) => {
            let tstar = a
                .tstar
                .as_deref()
                .ok_or_else(|| Usage("--data needs --tstar".into()))?;
            let tstar = read_param_file(tstar)?;
            let data = read_data(d, tstar.n_processes)?;
            let horizon = a.horizon.unwrap_or(data.horizon());
            (
                DataSource::Observed {
                    data,
                    lags: tstar.lags,
                    lambda: rates.clone(),
                },
                horizon,
            )
        }
        _ => bail!(Usage("give exactly one of --params-true or --data".into())),
    };
    let mut config = ExperimentConfig::new(source, horizon, a.fractions.clone(), a.seed);
    config.engine = engine(a.engine, a.samples);
    config.variance = variance(a.variance);
    config.approach = match a.mode {
        ModeArg::ThetaJ => Approach::ThetaJ,
        ModeArg::Full => Approach::Full,
    };
    if let (ModeArg::ThetaJ, DataSource::Observed { lambda: None, .. }) = (a.mode, &config.source) {
        bail!(Usage("--mode theta-j with --data needs --lambda-from".into()));
    }
    config.constraints.feasibility_bound = a.feasibility_bound;
    config.multiplier = a.level.multiplier()?;
    config.var_horizon = a.var_horizon;

    let report = forecast::run_experiment(&config)?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let mut bands = output(&a.out_dir.join("bands.csv"))?;
    report::write_forecast_bands(&mut bands, &report)?;
    bands.flush()?;
    let mut summary = output(&a.out_dir.join("summary.csv"))?;
    report::write_forecast_summary(&mut summary, &report)?;
    summary.flush()?;
    for run in &report.runs {
        let tag = io::fmt_num(run.f);
        let fitted = a.out_dir.join(format!("fit_f{tag}.cfg"));
        io::save_params(&fitted, &run.fit.params)?;
        let mut r = output(&a.out_dir.join(format!("fit_f{tag}.csv")))?;
        report::write_fit_report(&mut r, &run.fit)?;
        r.flush()?;
    }

    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "engine {} approach {}", config.engine.label(), report.runs[0].fit.approach)?;
    for run in &report.runs {
        let rel = report.relative_var_error(run.f);
        for i in 0..run.var.len() {
            writeln!(
                stdout,
                "f={} process={} VaR={} coverage={}{}",
                io::fmt_num(run.f),
                i + 1,
                io::fmt_num(run.var[i]),
                io::fmt_num(run.coverage[i]),
                rel.as_ref()
                    .map(|r| format!(" rel_var_err_vs_f1={}", io::fmt_num(r[i])))
                    .unwrap_or_default()
            )?;
        }
    }
    Ok(())
}

fn cmd_var(a: VarArgs) -> Result<()> {
    let multiplier = a.level.multiplier()?;
    let mut out = output(&a.out)?;
    match (a.mean, a.sigma, &a.params) {
        (Some(m), Some(s), None) => {
            let v = forecast::var_gaussian(m, s, multiplier)?;
            writeln!(out, "{}", io::fmt_num(v))?;
        }
        (None, None, Some(path)) => {
            let params = read_params(path)?;
            let horizon = a.horizon.expect("clap enforces --horizon");
            let pred = forecast::predict_z(
                &params,
                horizon,
                engine(a.engine, a.samples),
                variance(a.variance),
                a.seed,
            )?;
            writeln!(out, "process,mean_z,sigma_z,var")?;
            for i in 0..params.n_processes() {
                let (m, s) = (pred.mean[i][horizon - 1], pred.sigma[i][horizon - 1]);
                writeln!(
                    out,
                    "{},{},{},{}",
                    i + 1,
                    io::fmt_num(m),
                    io::fmt_num(s),
                    io::fmt_num(forecast::var_gaussian(m, s, multiplier)?)
                )?;
            }
        }
        _ => bail!(Usage("give --mean and --sigma, or --params and --horizon".into())),
    }
    out.flush()?;
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let params = read_params(&a.params)?;
    let report = validate_params(&params, a.strict_bound);
    let mut stdout = std::io::stdout().lock();
    for v in &report.violations {
        writeln!(stdout, "violation: {}: {}", v.field, v.message)?;
    }
    for w in &report.warnings {
        writeln!(stdout, "warning: {}: {}", w.field, w.message)?;
    }
    if !report.is_valid() {
        bail!("{} constraint violation(s)", report.violations.len());
    }
    let graph = params.coupling_graph();
    writeln!(
        stdout,
        "ok: {} processes, {} couplings, {}",
        params.n_processes(),
        graph.edges().len(),
        if graph.has_causal_loops() { "with causal loops" } else { "acyclic" }
    )?;
    Ok(())
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let file = File::open(&a.records).with_context(|| format!("cannot open {}", a.records.display()))?;
    let records = io::read_loss_records(BufReader::new(file))?;
    let step = io::parse_step(&a.step).map_err(|e| Usage(e.to_string()))?;
    let origin = match &a.origin {
        Some(s) => io::parse_timestamp(s).map_err(|e| Usage(e.to_string()))?,
        None => records
            .iter()
            .map(|r| r.timestamp)
            .min()
            .ok_or_else(|| anyhow::anyhow!("ingestion error: empty database"))?,
    };
    let table = if a.processes.is_empty() {
        ProcessTable::from_records(&records)?
    } else {
        ProcessTable::new(a.processes.clone())?
    };
    let traj = io::ingest(&records, &BinningSpec::new(step, origin)?, &table)?;
    let mut out = output(&a.out)?;
    if a.sparse {
        io::write_trajectory_sparse(&mut out, &traj)?;
    } else {
        io::write_trajectory_dense(&mut out, &traj)?;
    }
    out.flush()?;
    eprintln!("process order: {}", table.ids().join(","));
    Ok(())
}
