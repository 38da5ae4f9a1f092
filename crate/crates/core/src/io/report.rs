//! Report CSVs. Processes are labeled 1-based.

use std::io::Write;

use super::fmt_num;
use crate::error::Result;
use crate::estimate::EstimationResult;
use crate::exact::StationaryStats;
use crate::forecast::ForecastReport;
use crate::simulate::EnsembleMoments;

/// `process,p_active,mean_l,var_l,mean_z_rate,var_z_rate_exact,var_z_rate_paper`
pub fn write_stationary_stats<W: Write>(out: W, stats: &StationaryStats) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "process",
        "p_active",
        "mean_l",
        "var_l",
        "mean_z_rate",
        "var_z_rate_exact",
        "var_z_rate_paper",
    ])?;
    for (i, s) in stats.processes.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            fmt_num(s.p_active),
            fmt_num(s.mean_loss),
            fmt_num(s.var_loss),
            fmt_num(s.mean_z_rate),
            fmt_num(s.var_z_rate_exact),
            fmt_num(s.var_z_rate_iid),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `t,process,mean_z,var_z_exact,var_z_paper`
pub fn write_horizon_moments<W: Write>(out: W, stats: &StationaryStats) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "process", "mean_z", "var_z_exact", "var_z_paper"])?;
    for h in &stats.horizons {
        w.write_record([
            h.t.to_string(),
            (h.process + 1).to_string(),
            fmt_num(h.mean_z),
            fmt_num(h.var_z_exact),
            fmt_num(h.var_z_iid),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `process,loglik,iterations,grad_norm,identifiable`
pub fn write_fit_report<W: Write>(out: W, result: &EstimationResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["process", "loglik", "iterations", "grad_norm", "identifiable"])?;
    for p in &result.processes {
        w.write_record([
            (p.process + 1).to_string(),
            fmt_num(p.log_likelihood),
            p.iterations.to_string(),
            fmt_num(p.grad_norm),
            p.identifiable.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `f,process,t,z_realized,z_mean,z_sigma,in_band`
pub fn write_forecast_bands<W: Write>(out: W, report: &ForecastReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["f", "process", "t", "z_realized", "z_mean", "z_sigma", "in_band"])?;
    for r in report.band_rows() {
        w.write_record([
            fmt_num(r.f),
            (r.process + 1).to_string(),
            r.t.to_string(),
            fmt_num(r.z_realized),
            fmt_num(r.z_mean),
            fmt_num(r.z_sigma),
            u8::from(r.in_band).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `f,process,var,rel_var_err_vs_f1`; the last column is empty when `f = 1`
/// was not run.
pub fn write_forecast_summary<W: Write>(out: W, report: &ForecastReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["f", "process", "var", "rel_var_err_vs_f1"])?;
    for r in report.summary_rows() {
        w.write_record([
            fmt_num(r.f),
            (r.process + 1).to_string(),
            fmt_num(r.var),
            r.rel_var_err_vs_f1.map(fmt_num).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `t,process,mean_z,var_z,mean_se,var_se`
pub fn write_ensemble_moments<W: Write>(out: W, m: &EnsembleMoments) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "process", "mean_z", "var_z", "mean_se", "var_se"])?;
    for t in 0..m.horizon {
        for i in 0..m.mean.len() {
            w.write_record([
                (t + 1).to_string(),
                (i + 1).to_string(),
                fmt_num(m.mean[i][t]),
                fmt_num(m.variance[i][t]),
                fmt_num(m.mean_se[i][t]),
                fmt_num(m.variance_se[i][t]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
