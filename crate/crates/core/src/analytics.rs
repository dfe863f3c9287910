//! Calendar-year returns and their summary statistics (arithmetic and
//! geometric mean, standard deviation, Sharpe ratio), all in percent.

use std::collections::BTreeMap;

use chrono::Datelike;
use thiserror::Error;

use crate::engine::BacktestResult;

pub const DEFAULT_RISK_FREE: f64 = 1.75;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("backtest has no recorded values")]
    SpanTooShort,
    #[error("need at least two years with non-zero dispersion, got {years} years (sd {sd})")]
    DegenerateSeries { years: usize, sd: f64 },
    #[error("annual return {value}% in {year} is not above -100%")]
    TotalLoss { year: i32, value: f64 },
}

/// Per-year returns plus the four summary rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnualStats {
    pub per_year: BTreeMap<i32, f64>,
    pub arithmetic: f64,
    pub geometric: f64,
    pub sd: f64,
    pub sharpe: f64,
    pub risk_free: f64,
}

/// Percent return for each calendar year, measured between last closes.
/// The first year is measured from the initial capital.
pub fn annual_returns(r: &BacktestResult) -> Result<BTreeMap<i32, f64>, AnalyticsError> {
    if r.daily_values.is_empty() {
        return Err(AnalyticsError::SpanTooShort);
    }
    let mut year_end: BTreeMap<i32, f64> = BTreeMap::new();
    for (date, value) in &r.daily_values {
        year_end.insert(date.year(), *value);
    }
    let mut base = r.initial;
    Ok(year_end
        .into_iter()
        .map(|(year, close)| {
            let ret = (close / base - 1.0) * 100.0;
            base = close;
            (year, ret)
        })
        .collect())
}

pub fn summarize(
    per_year: &BTreeMap<i32, f64>,
    risk_free: f64,
) -> Result<AnnualStats, AnalyticsError> {
    let n = per_year.len();
    if n < 2 {
        return Err(AnalyticsError::DegenerateSeries { years: n, sd: 0.0 });
    }
    if let Some((&year, &value)) = per_year.iter().find(|(_, v)| **v <= -100.0) {
        return Err(AnalyticsError::TotalLoss { year, value });
    }
    let nf = n as f64;
    let arithmetic = per_year.values().sum::<f64>() / nf;
    let var = per_year
        .values()
        .map(|r| (r - arithmetic).powi(2))
        .sum::<f64>()
        / (nf - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(AnalyticsError::DegenerateSeries { years: n, sd });
    }
    // log-sum keeps long products well conditioned
    let log_growth = per_year.values().map(|r| (r / 100.0).ln_1p()).sum::<f64>();
    let geometric = (log_growth / nf).exp_m1() * 100.0;
    Ok(AnnualStats {
        per_year: per_year.clone(),
        arithmetic,
        geometric,
        sd,
        sharpe: sharpe_ratio(arithmetic, sd, risk_free),
        risk_free,
    })
}

/// (mean − risk-free) / sd, expressed in percent like the other statistics.
pub fn sharpe_ratio(arithmetic: f64, sd: f64, risk_free: f64) -> f64 {
    (arithmetic - risk_free) / sd * 100.0
}
