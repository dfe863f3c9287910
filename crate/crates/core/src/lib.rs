//! Deterministic backtesting of equal-weight, cap-weight, size-basket and
//! MaxMedian stock portfolios over CRSP-style daily data, with a per-trade
//! fee model and CPI conversion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod engine;
pub mod fees;
pub mod market_data;
pub mod report;
pub mod strategies;
pub mod synth;

pub use analytics::{annual_returns, summarize, AnnualStats};
pub use engine::{run_backtest, BacktestResult, EngineError, PortfolioState};
pub use fees::{trade_fee, FeeLedgerEntry, FeeModel};
pub use market_data::{
    deflate, load_cpi, load_universe, CpiSeries, MarketUniverse, SecurityId, YearMonth,
};
pub use strategies::{StrategySpec, TargetWeights};
