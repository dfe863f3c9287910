//! Reproducible synthetic markets and the brute-force reference
//! implementations the engine is checked against.
//!
//! The random source is ChaCha8 seeded from a `u64`; only uniform draws are
//! used so the generated data depends on nothing but the seed.
//!
//! The oracles here share no code with `engine` or `strategies`: they read
//! bars straight from the universe and do everything else with plain loops,
//! vectors and full sorts.

use std::collections::BTreeMap;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{BacktestResult, EngineError, FeeTotals, FrozenPosition};
use crate::fees::{FeeLedgerEntry, FeeModel};
use crate::market_data::{CpiSeries, MarketUniverse, Membership, PriceBar, SecurityId, YearMonth};
use crate::strategies::{BasketZone, StrategyError, StrategyKind, StrategySpec, Weighting};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_securities: usize,
    pub n_years: usize,
    pub start_year: i32,
    /// Standard deviation of daily capital returns.
    pub daily_vol: f64,
    /// Annual dividend yield, paid evenly every trading day.
    pub dividend_yield: f64,
    /// Per security-day probability of a 2-for-1 split.
    pub split_prob: f64,
    /// Per-security probability of joining late, and separately of leaving
    /// (delisting) before the end of the span.
    pub churn_rate: f64,
    /// Per security-day probability that a bar is missing.
    pub missing_prob: f64,
    /// Per security-day probability of an exactly unchanged close.
    pub flat_prob: f64,
    /// Plant a strict ordering: security 0 has the largest cap and drift,
    /// the last security the smallest.
    pub planted_order: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 42,
            n_securities: 50,
            n_years: 3,
            start_year: 2014,
            daily_vol: 0.015,
            dividend_yield: 0.02,
            split_prob: 0.0005,
            churn_rate: 0.1,
            missing_prob: 0.002,
            flat_prob: 0.03,
            planted_order: false,
        }
    }
}

/// Zero-padded ids sort in generation order.
pub fn synth_id(i: usize) -> SecurityId {
    SecurityId::new(format!("S{i:04}"))
}

fn weekdays(start_year: i32, n_years: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(start_year, 1, 1).expect("valid year");
    let end = NaiveDate::from_ymd_opt(start_year + n_years as i32, 1, 1).expect("valid year");
    let mut out = Vec::new();
    while d < end {
        // Jan 1 is a holiday
        let holiday = d.month() == 1 && d.day() == 1;
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) && !holiday {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Uniform noise scaled to standard deviation `sd`.
fn noise(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    (rng.random::<f64>() - 0.5) * 12f64.sqrt() * sd
}

/// Generates a universe and a monthly CPI series covering both the universe
/// span and December 2016 (the default fee reference month).
pub fn generate(spec: &SynthSpec) -> (MarketUniverse, CpiSeries) {
    assert!(
        spec.n_securities >= 1 && spec.n_years >= 1,
        "empty synthetic spec"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let calendar = weekdays(spec.start_year, spec.n_years);
    let n_days = calendar.len();
    let per_day_dividend = spec.dividend_yield / 252.0;

    let mut bars = Vec::new();
    let mut memberships = Vec::new();
    for i in 0..spec.n_securities {
        let id = synth_id(i);
        let (mut close, shares0, drift) = if spec.planted_order {
            let rank = (spec.n_securities - i) as f64;
            (10.0 * rank, 1.0e6, 0.0001 * rank)
        } else {
            (
                5.0 + 195.0 * rng.random::<f64>(),
                (1.0e6 + 99.0e6 * rng.random::<f64>()).round(),
                noise(&mut rng, 0.0005),
            )
        };
        let mut shares = shares0;

        let first_day = if rng.random::<f64>() < spec.churn_rate {
            rng.random_range(0..n_days)
        } else {
            0
        };
        let last_day = if rng.random::<f64>() < spec.churn_rate {
            rng.random_range(first_day..n_days)
        } else {
            n_days - 1
        };
        memberships.push((
            id.clone(),
            Membership {
                start: calendar[first_day],
                end: (last_day + 1 < n_days).then(|| calendar[last_day]),
            },
        ));

        // growth since the last emitted bar, for days that were skipped
        let mut pending_cap = 1.0;
        let mut pending_tot = 1.0;
        for (t, &date) in calendar
            .iter()
            .enumerate()
            .take(last_day + 1)
            .skip(first_day)
        {
            let flat = rng.random::<f64>() < spec.flat_prob;
            let ret_capital = if flat || t == first_day {
                0.0
            } else {
                (drift + noise(&mut rng, spec.daily_vol)).max(-0.9)
            };
            let ret_total = if t == first_day {
                0.0
            } else {
                ret_capital + per_day_dividend
            };
            close *= 1.0 + ret_capital;
            if rng.random::<f64>() < spec.split_prob {
                close /= 2.0;
                shares *= 2.0;
            }
            pending_cap *= 1.0 + ret_capital;
            pending_tot *= 1.0 + ret_total;

            let missing =
                t != first_day && t != last_day && rng.random::<f64>() < spec.missing_prob;
            if missing {
                continue;
            }
            let (rc, rt) = if pending_cap == 1.0 + ret_capital && pending_tot == 1.0 + ret_total {
                (ret_capital, ret_total)
            } else {
                (pending_cap - 1.0, pending_tot - 1.0)
            };
            bars.push(PriceBar {
                security: id.clone(),
                date,
                close,
                ret_total: rt.max(rc),
                ret_capital: rc,
                shares_out: shares,
            });
            pending_cap = 1.0;
            pending_tot = 1.0;
        }
    }

    let universe = MarketUniverse::from_parts(bars, Some(memberships))
        .expect("generator produces a valid universe");

    let first = YearMonth::new(spec.start_year.min(2016), 1);
    let last = YearMonth::new((spec.start_year + spec.n_years as i32 - 1).max(2016), 12);
    let mut levels = BTreeMap::new();
    let mut level = 30.0;
    let mut m = first;
    while m <= last {
        levels.insert(m, level);
        level *= 1.0 + 0.001 + 0.006 * rng.random::<f64>();
        m = m.succ();
    }
    let cpi = CpiSeries::new(levels).expect("generator produces a valid CPI series");
    (universe, cpi)
}

/// Sort-based MaxMedian: for every security, walk the lookback year, build
/// the ratio list, sort it, drop the ones, take the middle; then sort all
/// candidates and keep the first `k`.
pub fn naive_maxmedian(
    u: &MarketUniverse,
    selection_date: NaiveDate,
    k: usize,
) -> Result<Vec<SecurityId>, StrategyError> {
    if k == 0 {
        return Err(StrategyError::ZeroK);
    }
    let year = selection_date.year() - 1;
    let lookback: Vec<NaiveDate> = u
        .calendar()
        .iter()
        .copied()
        .filter(|d| d.year() == year)
        .collect();
    if lookback.is_empty() {
        return Err(StrategyError::NoLookbackData {
            date: selection_date,
            year,
        });
    }
    let day =
        u.bars_on(selection_date)
            .ok_or(crate::market_data::DataError::DateNotInCalendar {
                date: selection_date,
            })?;

    let mut candidates: Vec<(f64, SecurityId)> = Vec::new();
    for id in day.keys() {
        if !u.is_member(id, selection_date) {
            continue;
        }
        let mut present = 0usize;
        let mut ratios = Vec::new();
        for d in &lookback {
            if let Some(bar) = u.bar(id, *d) {
                present += 1;
                ratios.push((bar.ret_capital, 1.0 + bar.ret_capital));
            }
        }
        // at least 90% of the lookback days
        if present * 10 < lookback.len() * 9 {
            continue;
        }
        ratios.sort_by(|a, b| a.1.total_cmp(&b.1));
        let kept: Vec<f64> = ratios
            .into_iter()
            .filter(|(ret, _)| *ret != 0.0)
            .map(|(_, r)| r)
            .collect();
        if kept.is_empty() {
            continue;
        }
        let n = kept.len();
        let median = if n % 2 == 1 {
            kept[n / 2]
        } else {
            (kept[n / 2 - 1] + kept[n / 2]) / 2.0
        };
        candidates.push((median, id.clone()));
    }

    if candidates.len() < k {
        return Err(StrategyError::InsufficientEligibleSecurities {
            date: selection_date,
            eligible: candidates.len(),
            k,
        });
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(candidates.into_iter().take(k).map(|(_, id)| id).collect())
}

fn naive_members(u: &MarketUniverse, d: NaiveDate) -> Vec<(SecurityId, f64)> {
    let mut out = Vec::new();
    for (id, bar) in u.bars_on(d).expect("calendar date") {
        if u.is_member(id, d) {
            out.push((id.clone(), bar.close * bar.shares_out));
        }
    }
    out
}

/// Target weights plus the ranked selection, if the strategy makes one.
type NaiveTargets = (Vec<(SecurityId, f64)>, Option<Vec<SecurityId>>);

/// Weights (parallel to the returned ids) the strategy wants on `d`.
fn naive_targets(
    u: &MarketUniverse,
    spec: &StrategySpec,
    d: NaiveDate,
) -> Result<NaiveTargets, EngineError> {
    let members = naive_members(u, d);
    if members.is_empty() {
        return Err(StrategyError::EmptyConstituency { date: d }.into());
    }
    let (picked, weighting, selection) = match spec.kind {
        StrategyKind::Equ => (members, Weighting::Equal, None),
        StrategyKind::Mkc => (members, Weighting::MarketCap, None),
        StrategyKind::Basket { zone, weighting } => {
            let n = members.len();
            let k = spec.k;
            if n < 2 * k {
                return Err(StrategyError::UniverseTooSmall {
                    date: d,
                    zone,
                    n,
                    k,
                }
                .into());
            }
            let mut ranked = members;
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let skip = match zone {
                BasketZone::Top => 0,
                BasketZone::Middle => n / 2 - k / 2,
                BasketZone::Bottom => n - k,
            };
            let chosen: Vec<(SecurityId, f64)> = ranked.into_iter().skip(skip).take(k).collect();
            let names = chosen.iter().map(|(id, _)| id.clone()).collect();
            (chosen, weighting, Some(names))
        }
        StrategyKind::MaxMedian => {
            let names = naive_maxmedian(u, d, spec.k)?;
            let chosen = names.iter().map(|id| (id.clone(), 0.0)).collect();
            (chosen, Weighting::Equal, Some(names))
        }
    };
    let weights: Vec<(SecurityId, f64)> = picked
        .into_iter()
        .map(|(id, cap)| match weighting {
            Weighting::Equal => (id, 1.0),
            Weighting::MarketCap => (id, cap),
        })
        .filter(|(_, w)| *w > 0.0)
        .collect();
    if weights.is_empty() {
        return Err(StrategyError::ZeroMarketValue { date: d }.into());
    }
    Ok((weights, selection))
}

fn position_of(book: &[(SecurityId, f64)], id: &SecurityId) -> f64 {
    book.iter().find(|(s, _)| s == id).map_or(0.0, |(_, v)| *v)
}

/// Day-by-day reference backtest over a plain vector of (security, value)
/// holdings. Same rules as `engine::run_backtest`, written out longhand.
pub fn naive_backtest(
    u: &MarketUniverse,
    spec: &StrategySpec,
    fm: &FeeModel,
    cpi: &CpiSeries,
    start: NaiveDate,
    end: NaiveDate,
    initial: f64,
) -> Result<BacktestResult, EngineError> {
    if !(initial > 0.0) {
        return Err(EngineError::NonPositiveCapital(initial));
    }
    let days: Vec<NaiveDate> = u.calendar().to_vec();
    let first = days
        .iter()
        .position(|d| *d == start)
        .ok_or(EngineError::DateNotInCalendar { date: start })?;
    let last = days
        .iter()
        .position(|d| *d == end)
        .ok_or(EngineError::DateNotInCalendar { date: end })?;
    if first > last {
        return Err(EngineError::EmptyRange { start, end });
    }

    let mut book: Vec<(SecurityId, f64)> = Vec::new();
    let mut cash = initial;
    let mut daily_values = Vec::new();
    let mut trades = Vec::new();
    let mut selections = Vec::new();
    let mut frozen = Vec::new();

    for t in first..=last {
        let d = days[t];
        if t > first {
            for (id, value) in book.iter_mut() {
                match u.bar(id, d) {
                    Some(bar) => *value *= 1.0 + bar.ret_total,
                    None => frozen.push(FrozenPosition {
                        date: d,
                        security: id.clone(),
                    }),
                }
            }
        }

        let new_period = t == first
            || match spec.rebalance {
                crate::strategies::Rebalance::Monthly => {
                    days[t - 1].month() != d.month() || days[t - 1].year() != d.year()
                }
                crate::strategies::Rebalance::Annual => days[t - 1].year() != d.year(),
            };
        if new_period {
            let (weights, selection) = naive_targets(u, spec, d)?;
            if let Some(names) = selection {
                selections.push((d, names));
            }
            let total: f64 = cash + book.iter().map(|(_, v)| v).sum::<f64>();
            let weight_sum: f64 = weights.iter().map(|(_, w)| w).sum();

            let mut names: Vec<SecurityId> = book.iter().map(|(id, _)| id.clone()).collect();
            for (id, _) in &weights {
                if !names.contains(id) {
                    names.push(id.clone());
                }
            }
            names.sort();

            let cpi_ratio = if fm.admin_fee > 0.0 {
                let here = cpi.get(YearMonth::of(d))?;
                let there = cpi.get(fm.reference_month)?;
                here / there
            } else {
                0.0
            };

            let mut fees = 0.0;
            let mut next_book = Vec::new();
            for id in names {
                let now = position_of(&book, &id);
                let want = position_of(&weights, &id) * total / weight_sum;
                let change = want - now;
                if change.abs() > 1e-9 * total {
                    let price = match u.bar(&id, d) {
                        Some(bar) => bar.close,
                        None => {
                            // last close before today
                            let mut p = None;
                            for back in (0..t).rev() {
                                if let Some(bar) = u.bar(&id, days[back]) {
                                    p = Some(bar.close);
                                    break;
                                }
                            }
                            p.ok_or(EngineError::MissingBar {
                                security: id.clone(),
                                date: d,
                            })?
                        }
                    };
                    let shares = change / price;
                    let admin = if fm.admin_fee > 0.0 && fm.reference_month == YearMonth::of(d) {
                        fm.admin_fee
                    } else {
                        fm.admin_fee * cpi_ratio
                    };
                    let spread = shares.abs() * price * fm.spread_fraction / 2.0;
                    fees += admin + spread;
                    trades.push(FeeLedgerEntry {
                        date: d,
                        security: id.clone(),
                        shares_traded: shares,
                        price,
                        admin,
                        spread,
                    });
                }
                if want > 0.0 {
                    next_book.push((id, want));
                }
            }
            if fees >= total {
                return Err(EngineError::FeesExceedValue {
                    date: d,
                    value: total,
                    fees,
                });
            }
            for (_, v) in next_book.iter_mut() {
                *v *= (total - fees) / total;
            }
            book = next_book;
            cash = 0.0;
        }

        let value = cash + book.iter().map(|(_, v)| v).sum::<f64>();
        daily_values.push((d, value));
    }

    let mut fee_totals = FeeTotals::default();
    for e in &trades {
        fee_totals.admin_nominal += e.admin;
        fee_totals.spread_nominal += e.spread;
        if e.admin + e.spread > 0.0 {
            let to_ref = cpi.get(fm.reference_month)? / cpi.get(YearMonth::of(e.date))?;
            fee_totals.admin_real += e.admin * to_ref;
            fee_totals.spread_real += e.spread * to_ref;
        }
    }

    Ok(BacktestResult {
        strategy: *spec,
        initial,
        daily_values,
        trades,
        fee_totals,
        selections,
        frozen,
    })
}
