#![allow(dead_code)]

use chrono::NaiveDate;
use indexbt_core::fees::FeeModel;
use indexbt_core::market_data::{CpiSeries, MarketUniverse, Membership, PriceBar, SecurityId};
use indexbt_core::strategies::{BasketZone, StrategySpec, Weighting};
use indexbt_core::synth::{generate, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A synthetic spec drawn from `seed`, within the given size bounds.
pub fn random_spec(
    seed: u64,
    max_securities: usize,
    years: std::ops::RangeInclusive<usize>,
) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    SynthSpec {
        seed,
        n_securities: rng.random_range(5..=max_securities),
        n_years: rng.random_range(years),
        start_year: rng.random_range(2010..=2014),
        daily_vol: rng.random_range(0.0..0.03),
        dividend_yield: if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.0..0.05)
        },
        split_prob: rng.random_range(0.0..0.002),
        churn_rate: rng.random_range(0.0..0.2),
        missing_prob: rng.random_range(0.0..0.004),
        flat_prob: rng.random_range(0.0..0.2),
        planted_order: false,
    }
}

pub fn zero_fees() -> FeeModel {
    FeeModel::zero()
}

/// The four strategy families with sizes that fit an `n`-security universe.
pub fn strategies_for(n: usize, pick: u64) -> Vec<StrategySpec> {
    let k = (n / 5).max(1);
    let zone = match pick % 3 {
        0 => BasketZone::Top,
        1 => BasketZone::Middle,
        _ => BasketZone::Bottom,
    };
    let weighting = if pick.is_multiple_of(2) {
        Weighting::Equal
    } else {
        Weighting::MarketCap
    };
    vec![
        StrategySpec::equ(),
        StrategySpec::mkc(),
        StrategySpec::basket(zone, weighting, k),
        StrategySpec::maxmedian(k),
    ]
}

/// Backtest window: whole calendar, except MaxMedian starts once a full
/// lookback year is available.
pub fn window(u: &MarketUniverse, spec: &StrategySpec) -> (NaiveDate, NaiveDate) {
    let cal = u.calendar();
    let end = *cal.last().unwrap();
    let start = match spec.kind {
        indexbt_core::strategies::StrategyKind::MaxMedian => {
            use chrono::Datelike;
            u.dates_in_year(cal[0].year() + 1)[0]
        }
        _ => cal[0],
    };
    (start, end)
}

pub fn universe(
    seed: u64,
    max_securities: usize,
    years: std::ops::RangeInclusive<usize>,
) -> (SynthSpec, MarketUniverse, CpiSeries) {
    let spec = random_spec(seed, max_securities, years);
    let (u, cpi) = generate(&spec);
    (spec, u, cpi)
}

/// Rebuilds `u` with `copies` extra securities whose bars duplicate existing
/// ones, so their medians tie exactly with the originals.
pub fn with_clones(u: &MarketUniverse, copies: &[(SecurityId, SecurityId)]) -> MarketUniverse {
    let mut bars: Vec<PriceBar> = Vec::new();
    for d in u.calendar() {
        for bar in u.bars_on(*d).unwrap().values() {
            bars.push(bar.clone());
            for (src, dst) in copies {
                if &bar.security == src {
                    bars.push(PriceBar {
                        security: dst.clone(),
                        ..bar.clone()
                    });
                }
            }
        }
    }
    let constituency = u.constituency().map(|map| {
        let mut rows: Vec<(SecurityId, Membership)> = Vec::new();
        for (id, intervals) in map {
            for m in intervals {
                rows.push((id.clone(), *m));
                for (src, dst) in copies {
                    if src == id {
                        rows.push((dst.clone(), *m));
                    }
                }
            }
        }
        rows
    });
    MarketUniverse::from_parts(bars, constituency).unwrap()
}

/// Rebuilds `u` with every bar passed through `f`.
pub fn map_bars(u: &MarketUniverse, mut f: impl FnMut(PriceBar) -> PriceBar) -> MarketUniverse {
    let mut bars = Vec::new();
    for d in u.calendar() {
        for bar in u.bars_on(*d).unwrap().values() {
            bars.push(f(bar.clone()));
        }
    }
    let constituency = u.constituency().map(|map| {
        map.iter()
            .flat_map(|(id, iv)| iv.iter().map(move |m| (id.clone(), *m)))
            .collect()
    });
    MarketUniverse::from_parts(bars, constituency).unwrap()
}

pub fn max_rel_diff(a: &[(NaiveDate, f64)], b: &[(NaiveDate, f64)]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut worst = 0.0f64;
    for ((da, va), (db, vb)) in a.iter().zip(b) {
        if da != db {
            return None;
        }
        worst = worst.max((va - vb).abs() / va.abs().max(vb.abs()));
    }
    Some(worst)
}
