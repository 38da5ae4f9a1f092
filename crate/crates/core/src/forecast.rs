//! Cumulative-loss forecasting: fit on a prefix, predict `<z>` and `sigma_z`
//! to the full horizon, score the realized path against the `±sigma` band and
//! compute Gaussian VaR.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::{fit, ConstraintConfig, EstimationProblem, EstimationResult, Mode};
use crate::exact::{build_chain, stats_from_chain};
use crate::model::{ModelParams, Trajectory};
use crate::noise::derive_seed;
use crate::simulate::{ensemble_z_moments, simulate};

pub const DEFAULT_MULTIPLIER: f64 = 3.0;
pub const MIN_MC_SAMPLES: usize = 100;

/// First `floor(f T)` steps.
pub fn split_train(trajectory: &Trajectory, f: f64) -> Result<Trajectory> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::InvalidValue(format!("training fraction {f} outside (0, 1]")));
    }
    let steps = (f * trajectory.horizon() as f64).floor() as usize;
    if steps == 0 {
        return Err(Error::InvalidValue(format!(
            "training prefix is empty for f = {f} and T = {}",
            trajectory.horizon()
        )));
    }
    trajectory.prefix(steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Exact,
    MonteCarlo { n_samples: usize },
}

impl Engine {
    pub fn label(&self) -> &'static str {
        match self {
            Engine::Exact => "exact",
            Engine::MonteCarlo { .. } => "mc",
        }
    }

    pub fn n_samples(&self) -> Option<usize> {
        match self {
            Engine::Exact => None,
            Engine::MonteCarlo { n_samples } => Some(*n_samples),
        }
    }
}

/// Which exact-engine variance drives `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceForm {
    /// Includes the stationary autocovariances of `l`.
    #[default]
    Autocovariance,
    /// `t Var l`, treating the summands as independent.
    Iid,
}

/// Predicted moments of `z_i(t)`; rows are processes, column `t - 1` is step `t`.
#[derive(Debug, Clone)]
pub struct ZPrediction {
    pub engine: Engine,
    pub horizon: usize,
    pub mean: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    /// Exact engine: the alternative variance form's `sigma`.
    pub sigma_alt: Option<Vec<Vec<f64>>>,
    /// Monte Carlo: standard error of `mean`.
    pub mean_se: Option<Vec<Vec<f64>>>,
}

pub fn predict_z(
    params: &ModelParams,
    horizon: usize,
    engine: Engine,
    variance: VarianceForm,
    seed: u64,
) -> Result<ZPrediction> {
    if horizon == 0 {
        return Err(Error::Dimension("horizon must be at least 1".into()));
    }
    match engine {
        Engine::Exact => {
            let chain = build_chain(params)?;
            let stats = stats_from_chain(&chain, &[])?;
            let mut mean = Vec::new();
            let mut sigma_acf = Vec::new();
            let mut sigma_iid = Vec::new();
            for s in &stats.processes {
                let (m, a, b): (Vec<f64>, Vec<f64>, Vec<f64>) = (1..=horizon)
                    .map(|t| {
                        let (mz, vz) = s.z_moments(t);
                        (mz, vz.sqrt(), s.z_variance_iid(t).sqrt())
                    })
                    .fold((vec![], vec![], vec![]), |mut acc, (m, a, b)| {
                        acc.0.push(m);
                        acc.1.push(a);
                        acc.2.push(b);
                        acc
                    });
                mean.push(m);
                sigma_acf.push(a);
                sigma_iid.push(b);
            }
            let (sigma, alt) = match variance {
                VarianceForm::Autocovariance => (sigma_acf, sigma_iid),
                VarianceForm::Iid => (sigma_iid, sigma_acf),
            };
            Ok(ZPrediction {
                engine,
                horizon,
                mean,
                sigma,
                sigma_alt: Some(alt),
                mean_se: None,
            })
        }
        Engine::MonteCarlo { n_samples } => {
            if n_samples < MIN_MC_SAMPLES {
                return Err(Error::InvalidValue(format!(
                    "Monte Carlo needs at least {MIN_MC_SAMPLES} samples, got {n_samples}"
                )));
            }
            let m = ensemble_z_moments(params, horizon, n_samples, seed)?;
            let sigma = m
                .variance
                .iter()
                .map(|row| row.iter().map(|v| v.max(0.0).sqrt()).collect())
                .collect();
            Ok(ZPrediction {
                engine,
                horizon,
                mean: m.mean,
                sigma,
                sigma_alt: None,
                mean_se: Some(m.mean_se),
            })
        }
    }
}

/// `mean + multiplier * sigma`.
pub fn var_gaussian(mean_z: f64, sigma_z: f64, multiplier: f64) -> Result<f64> {
    if !(sigma_z >= 0.0) {
        return Err(Error::InvalidValue(format!("sigma must be nonnegative, got {sigma_z}")));
    }
    Ok(mean_z + multiplier * sigma_z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approach {
    ThetaJ,
    Full,
}

#[derive(Debug, Clone)]
pub enum DataSource {
    /// Simulate the original trajectory from these parameters with the
    /// experiment seed.
    Truth(ModelParams),
    /// Observed trajectory with known lags (and rates for [`Approach::ThetaJ`]).
    Observed {
        data: Trajectory,
        lags: Vec<Vec<usize>>,
        lambda: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub horizon: usize,
    pub fractions: Vec<f64>,
    pub engine: Engine,
    pub variance: VarianceForm,
    pub approach: Approach,
    pub constraints: ConstraintConfig,
    pub multiplier: f64,
    /// Horizon of the reported VaR; defaults to the full horizon.
    pub var_horizon: Option<usize>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(source: DataSource, horizon: usize, fractions: Vec<f64>, seed: u64) -> Self {
        Self {
            source,
            horizon,
            fractions,
            engine: Engine::Exact,
            variance: VarianceForm::default(),
            approach: Approach::Full,
            constraints: ConstraintConfig::default(),
            multiplier: DEFAULT_MULTIPLIER,
            var_horizon: None,
            seed,
        }
    }

    /// Seed of the prediction ensembles, distinct from the trajectory seed.
    /// All fractions share it, so their VaR difference is not inflated by
    /// independent sampling noise.
    pub fn prediction_seed(&self) -> u64 {
        derive_seed(self.seed ^ 0xA5A5_5A5A_F00D_CAFE, u64::MAX)
    }
}

#[derive(Debug, Clone)]
pub struct ForecastRun {
    pub f: f64,
    pub train_steps: usize,
    pub fit: EstimationResult,
    pub prediction: ZPrediction,
    /// VaR at the VaR horizon, per process.
    pub var: Vec<f64>,
    /// Fraction of scored steps with `|z* - <z>| <= sigma`, per process. The
    /// scored steps are the holdout, or the whole path when `f = 1`.
    pub coverage: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandRow {
    pub f: f64,
    pub process: usize,
    pub t: usize,
    pub z_realized: f64,
    pub z_mean: f64,
    pub z_sigma: f64,
    pub in_band: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub f: f64,
    pub process: usize,
    pub var: f64,
    pub rel_var_err_vs_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ForecastReport {
    pub horizon: usize,
    pub var_horizon: usize,
    pub engine: Engine,
    pub approach: Approach,
    pub realized: Trajectory,
    pub runs: Vec<ForecastRun>,
}

impl ForecastReport {
    pub fn run(&self, f: f64) -> Option<&ForecastRun> {
        self.runs.iter().find(|r| r.f == f)
    }

    /// `|VaR_1 - VaR_f| / VaR_1` per process, when `f = 1` was run.
    pub fn relative_var_error(&self, f: f64) -> Option<Vec<f64>> {
        let base = self.run(1.0)?;
        let other = self.run(f)?;
        Some(
            base.var
                .iter()
                .zip(&other.var)
                .map(|(a, b)| (a - b).abs() / a.abs())
                .collect(),
        )
    }

    /// One row per `(f, process, t)`, ordered by `f` as configured, then
    /// process, then `t`.
    pub fn band_rows(&self) -> Vec<BandRow> {
        let z = self.realized.cumulative();
        let mut rows = Vec::new();
        for run in &self.runs {
            for (i, zi) in z.iter().enumerate() {
                for t in 0..self.horizon {
                    let mean = run.prediction.mean[i][t];
                    let sigma = run.prediction.sigma[i][t];
                    rows.push(BandRow {
                        f: run.f,
                        process: i,
                        t: t + 1,
                        z_realized: zi[t],
                        z_mean: mean,
                        z_sigma: sigma,
                        in_band: (zi[t] - mean).abs() <= sigma,
                    });
                }
            }
        }
        rows
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.runs
            .iter()
            .flat_map(|run| {
                let rel = self.relative_var_error(run.f);
                run.var.iter().enumerate().map(move |(i, &var)| SummaryRow {
                    f: run.f,
                    process: i,
                    var,
                    rel_var_err_vs_f1: rel.as_ref().map(|r| r[i]),
                })
            })
            .collect()
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ForecastReport> {
    if config.fractions.is_empty() {
        return Err(Error::InvalidValue("fraction list is empty".into()));
    }
    let (realized, lags, lambda) = match &config.source {
        DataSource::Truth(p) => (
            simulate(p, config.horizon, config.seed)?,
            p.lags().to_vec(),
            Some(p.noise_rates().to_vec()),
        ),
        DataSource::Observed { data, lags, lambda } => {
            if data.horizon() != config.horizon {
                return Err(Error::Dimension(format!(
                    "data has {} steps, experiment horizon is {}",
                    data.horizon(),
                    config.horizon
                )));
            }
            (data.clone(), lags.clone(), lambda.clone())
        }
    };
    let mode = match config.approach {
        Approach::ThetaJ => Mode::ThetaJ {
            lambda: lambda.ok_or_else(|| {
                Error::Mode("the known-rate approach needs rates".into())
            })?,
        },
        Approach::Full => Mode::Full { initial_lambda: None },
    };
    let var_horizon = config.var_horizon.unwrap_or(config.horizon);
    if var_horizon == 0 || var_horizon > config.horizon {
        return Err(Error::InvalidValue(format!(
            "VaR horizon {var_horizon} outside 1..={}",
            config.horizon
        )));
    }
    let z = realized.cumulative();
    let prediction_seed = config.prediction_seed();

    let runs = config
        .fractions
        .par_iter()
        .map(|&f| -> Result<ForecastRun> {
            let train = split_train(&realized, f)?;
            let train_steps = train.horizon();
            let problem = EstimationProblem::new(train, lags.clone(), mode.clone(), config.constraints)?;
            let fit = fit(&problem)?;
            let prediction = predict_z(
                &fit.params,
                config.horizon,
                config.engine,
                config.variance,
                prediction_seed,
            )?;
            let var = (0..realized.n_processes())
                .map(|i| {
                    var_gaussian(
                        prediction.mean[i][var_horizon - 1],
                        prediction.sigma[i][var_horizon - 1],
                        config.multiplier,
                    )
                })
                .collect::<Result<Vec<f64>>>()?;
            let scored = if train_steps < config.horizon {
                train_steps..config.horizon
            } else {
                0..config.horizon
            };
            let coverage = z
                .iter()
                .enumerate()
                .map(|(i, zi)| {
                    let hits = scored
                        .clone()
                        .filter(|&t| (zi[t] - prediction.mean[i][t]).abs() <= prediction.sigma[i][t])
                        .count();
                    hits as f64 / scored.len() as f64
                })
                .collect();
            Ok(ForecastRun {
                f,
                train_steps,
                fit,
                prediction,
                var,
                coverage,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ForecastReport {
        horizon: config.horizon,
        var_horizon,
        engine: config.engine,
        approach: config.approach,
        realized,
        runs,
    })
}
