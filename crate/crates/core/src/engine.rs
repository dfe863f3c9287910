//! Daily portfolio simulation: positions are carried as dollar values and
//! grown by each security's total return; on rebalance dates they are traded
//! toward the strategy's target weights and fees come out of the portfolio.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

use crate::fees::{trade_fee, FeeLedgerEntry, FeeModel};
use crate::market_data::{deflate, CpiSeries, DataError, MarketUniverse, SecurityId, YearMonth};
use crate::strategies::{targets_for, Rebalance, StrategyError, StrategySpec, TargetWeights};

/// Value deltas at or below this fraction of portfolio value are not traded.
/// Keeps a rebalance onto weights the portfolio already holds from paying
/// admin fees on floating-point residue.
pub const TRADE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("security {security} is weighted but has no return")]
    MissingReturn { security: SecurityId },
    #[error("index weights sum to zero")]
    ZeroTotalWeight,
    #[error("fees {fees:.2} on {date} would consume the whole portfolio value {value:.2}")]
    FeesExceedValue {
        date: NaiveDate,
        value: f64,
        fees: f64,
    },
    #[error("{security} has no bar on or before {date}")]
    MissingBar {
        security: SecurityId,
        date: NaiveDate,
    },
    #[error("{date} is not a trading date of the universe")]
    DateNotInCalendar { date: NaiveDate },
    #[error("start {start} is after end {end}")]
    EmptyRange { start: NaiveDate, end: NaiveDate },
    #[error("initial capital must be positive, got {0}")]
    NonPositiveCapital(f64),
    #[error("portfolio value fell to {value} on {date}")]
    NonPositiveValue { date: NaiveDate, value: f64 },
    #[error("backtest aborted on {date} after {days_completed} days (last value {last_value:.2})")]
    Aborted {
        date: NaiveDate,
        days_completed: usize,
        last_value: f64,
        #[source]
        source: Box<EngineError>,
    },
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

/// Holdings after the close of `as_of`.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    pub as_of: NaiveDate,
    /// Dollar value per security; never negative.
    pub positions: BTreeMap<SecurityId, f64>,
    pub cash: f64,
}

impl PortfolioState {
    pub fn all_cash(as_of: NaiveDate, cash: f64) -> Self {
        PortfolioState {
            as_of,
            positions: BTreeMap::new(),
            cash,
        }
    }

    pub fn total_value(&self) -> f64 {
        self.cash + self.positions.values().sum::<f64>()
    }
}

/// Σ wᵢ rᵢ / Σ wᵢ over the weighted securities.
pub fn index_return(
    weights: &BTreeMap<SecurityId, f64>,
    returns: &BTreeMap<SecurityId, f64>,
) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (id, w) in weights {
        let r = returns.get(id).ok_or_else(|| EngineError::MissingReturn {
            security: id.clone(),
        })?;
        num += w * r;
        den += w;
    }
    if den == 0.0 {
        return Err(EngineError::ZeroTotalWeight);
    }
    Ok(num / den)
}

/// Grows every position by its security's total return on `d`. Positions
/// without a bar on `d` keep their value; their ids are returned.
pub fn evolve_day(
    p: &PortfolioState,
    u: &MarketUniverse,
    d: NaiveDate,
) -> Result<(PortfolioState, Vec<SecurityId>)> {
    let bars = u
        .bars_on(d)
        .ok_or(EngineError::DateNotInCalendar { date: d })?;
    let mut frozen = Vec::new();
    let positions = p
        .positions
        .iter()
        .map(|(id, value)| {
            let grown = match bars.get(id) {
                Some(bar) => value * (1.0 + bar.ret_total),
                None => {
                    frozen.push(id.clone());
                    *value
                }
            };
            (id.clone(), grown)
        })
        .collect();
    Ok((
        PortfolioState {
            as_of: d,
            positions,
            cash: p.cash,
        },
        frozen,
    ))
}

/// Trades `p` toward `targets` at the close of `d`.
///
/// Target dollar amounts are taken from the pre-fee value V. Each security
/// whose amount changes is one trade, priced at its close on `d` (or its last
/// close, for a held name with no bar that day, which can only be a sale).
/// Total fees F are then financed by scaling every position by (V - F) / V,
/// so the portfolio ends fully invested with value V - F.
pub fn rebalance(
    p: &PortfolioState,
    targets: &TargetWeights,
    u: &MarketUniverse,
    d: NaiveDate,
    fm: &FeeModel,
    cpi: &CpiSeries,
) -> Result<(PortfolioState, Vec<FeeLedgerEntry>)> {
    let bars = u
        .bars_on(d)
        .ok_or(EngineError::DateNotInCalendar { date: d })?;
    let value = p.total_value();
    let month = YearMonth::of(d);
    let weight_sum = targets.total();

    let names: BTreeSet<&SecurityId> = p
        .positions
        .keys()
        .chain(targets.iter().map(|(id, _)| id))
        .collect();

    let mut desired = BTreeMap::new();
    let mut trades = Vec::new();
    let mut fees = 0.0;
    for id in names {
        let current = p.positions.get(id).copied().unwrap_or(0.0);
        let target = targets.get(id).map_or(0.0, |w| value * w / weight_sum);
        let delta = target - current;
        if delta.abs() > TRADE_EPSILON * value {
            let price = match bars.get(id) {
                Some(bar) => bar.close,
                None if target == 0.0 => {
                    u.last_bar_on_or_before(id, d)
                        .ok_or_else(|| EngineError::MissingBar {
                            security: id.clone(),
                            date: d,
                        })?
                        .close
                }
                None => {
                    return Err(EngineError::MissingBar {
                        security: id.clone(),
                        date: d,
                    })
                }
            };
            let shares = delta / price;
            let fee = trade_fee(fm, shares.abs(), price, month, cpi)?;
            fees += fee.total();
            trades.push(FeeLedgerEntry {
                date: d,
                security: id.clone(),
                shares_traded: shares,
                price,
                admin: fee.admin,
                spread: fee.spread,
            });
        }
        if target > 0.0 {
            desired.insert(id.clone(), target);
        }
    }

    if fees >= value {
        return Err(EngineError::FeesExceedValue {
            date: d,
            value,
            fees,
        });
    }
    let scale = (value - fees) / value;
    let positions = desired.into_iter().map(|(id, v)| (id, v * scale)).collect();
    Ok((
        PortfolioState {
            as_of: d,
            positions,
            cash: 0.0,
        },
        trades,
    ))
}

/// Fee totals in nominal dollars and in reference-month dollars.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeeTotals {
    pub admin_nominal: f64,
    pub spread_nominal: f64,
    pub admin_real: f64,
    pub spread_real: f64,
}

impl FeeTotals {
    pub fn nominal(&self) -> f64 {
        self.admin_nominal + self.spread_nominal
    }

    pub fn real(&self) -> f64 {
        self.admin_real + self.spread_real
    }

    /// Sums a ledger, converting each trade's fees from its trade month into
    /// `reference` dollars.
    pub fn from_ledger(
        trades: &[FeeLedgerEntry],
        reference: YearMonth,
        cpi: &CpiSeries,
    ) -> Result<Self, DataError> {
        let mut t = FeeTotals::default();
        for e in trades {
            t.admin_nominal += e.admin;
            t.spread_nominal += e.spread;
            if e.total_fee() > 0.0 {
                let m = YearMonth::of(e.date);
                t.admin_real += deflate(e.admin, m, reference, cpi)?;
                t.spread_real += deflate(e.spread, m, reference, cpi)?;
            }
        }
        Ok(t)
    }
}

/// A held position that had no bar on a trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPosition {
    pub date: NaiveDate,
    pub security: SecurityId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub strategy: StrategySpec,
    pub initial: f64,
    /// Portfolio value at every close, after that day's rebalance.
    pub daily_values: Vec<(NaiveDate, f64)>,
    pub trades: Vec<FeeLedgerEntry>,
    pub fee_totals: FeeTotals,
    /// Names picked on each rebalance date, for basket and MaxMedian runs.
    pub selections: Vec<(NaiveDate, Vec<SecurityId>)>,
    pub frozen: Vec<FrozenPosition>,
}

impl BacktestResult {
    pub fn final_value(&self) -> f64 {
        self.daily_values.last().map_or(self.initial, |(_, v)| *v)
    }
}

/// Whether `d` (at calendar position `index`) opens a new rebalance period.
pub fn is_rebalance_day(u: &MarketUniverse, index: usize, rebalance: Rebalance) -> bool {
    if index == 0 {
        return true;
    }
    let (prev, d) = (u.calendar()[index - 1], u.calendar()[index]);
    match rebalance {
        Rebalance::Monthly => (prev.year(), prev.month()) != (d.year(), d.month()),
        Rebalance::Annual => prev.year() != d.year(),
    }
}

/// What happened on one simulated day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub value: f64,
    pub rebalanced: bool,
}

/// Step-wise backtest. `run_backtest` drives it to the end; tests can step it
/// and inspect the state between days.
pub struct Simulation<'a> {
    universe: &'a MarketUniverse,
    spec: StrategySpec,
    fees: FeeModel,
    cpi: &'a CpiSeries,
    state: PortfolioState,
    next: usize,
    end: usize,
    result: BacktestResult,
}

impl<'a> Simulation<'a> {
    /// Sets up the portfolio and performs the opening rebalance at `start`'s close.
    pub fn new(
        u: &'a MarketUniverse,
        spec: StrategySpec,
        fm: FeeModel,
        cpi: &'a CpiSeries,
        start: NaiveDate,
        end: NaiveDate,
        initial: f64,
    ) -> Result<Self> {
        if !(initial > 0.0) || !initial.is_finite() {
            return Err(EngineError::NonPositiveCapital(initial));
        }
        let first = u
            .day_index(start)
            .ok_or(EngineError::DateNotInCalendar { date: start })?;
        let last = u
            .day_index(end)
            .ok_or(EngineError::DateNotInCalendar { date: end })?;
        if first > last {
            return Err(EngineError::EmptyRange { start, end });
        }
        let mut sim = Simulation {
            universe: u,
            spec,
            fees: fm,
            cpi,
            state: PortfolioState::all_cash(start, initial),
            next: first + 1,
            end: last,
            result: BacktestResult {
                strategy: spec,
                initial,
                daily_values: Vec::new(),
                trades: Vec::new(),
                fee_totals: FeeTotals::default(),
                selections: Vec::new(),
                frozen: Vec::new(),
            },
        };
        sim.rebalance_on(start)?;
        sim.record(start)?;
        Ok(sim)
    }

    pub fn state(&self) -> &PortfolioState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.next > self.end
    }

    fn rebalance_on(&mut self, d: NaiveDate) -> Result<()> {
        let targets = targets_for(&self.spec, self.universe, d)?;
        let (state, trades) = rebalance(
            &self.state,
            &targets.weights,
            self.universe,
            d,
            &self.fees,
            self.cpi,
        )?;
        self.state = state;
        self.result.trades.extend(trades);
        if let Some(picked) = targets.selection {
            self.result.selections.push((d, picked));
        }
        Ok(())
    }

    fn record(&mut self, d: NaiveDate) -> Result<f64> {
        let value = self.state.total_value();
        if !(value > 0.0) {
            return Err(EngineError::NonPositiveValue { date: d, value });
        }
        self.result.daily_values.push((d, value));
        Ok(value)
    }

    /// Advances one trading day. Returns `None` once past the end date.
    pub fn step(&mut self) -> Result<Option<DayRecord>> {
        if self.is_done() {
            return Ok(None);
        }
        let index = self.next;
        let d = self.universe.calendar()[index];
        let (state, frozen) = evolve_day(&self.state, self.universe, d)?;
        for security in frozen {
            log::warn!("{}: {security} has no bar on {d}; value held", self.spec);
            self.result
                .frozen
                .push(FrozenPosition { date: d, security });
        }
        self.state = state;
        let rebalanced = is_rebalance_day(self.universe, index, self.spec.rebalance);
        if rebalanced {
            self.rebalance_on(d)?;
        }
        let value = self.record(d)?;
        self.next += 1;
        Ok(Some(DayRecord {
            date: d,
            value,
            rebalanced,
        }))
    }

    pub fn finish(mut self) -> Result<BacktestResult> {
        self.result.fee_totals =
            FeeTotals::from_ledger(&self.result.trades, self.fees.reference_month, self.cpi)?;
        Ok(self.result)
    }

    fn abort(&self, error: EngineError) -> EngineError {
        EngineError::Aborted {
            date: self.universe.calendar()[self.next.min(self.end)],
            days_completed: self.result.daily_values.len(),
            last_value: self.state.total_value(),
            source: Box::new(error),
        }
    }
}

pub fn run_backtest(
    u: &MarketUniverse,
    spec: StrategySpec,
    fm: FeeModel,
    cpi: &CpiSeries,
    start: NaiveDate,
    end: NaiveDate,
    initial: f64,
) -> Result<BacktestResult> {
    let mut sim = Simulation::new(u, spec, fm, cpi, start, end, initial)?;
    loop {
        match sim.step() {
            Ok(Some(_)) => {}
            Ok(None) => break,
            Err(e) => return Err(sim.abort(e)),
        }
    }
    sim.finish()
}
