//! Target weights for the equal-weight (EQU), cap-weight (MKC), 20-stock
//! basket and MaxMedian strategies.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

use crate::market_data::{DataError, MarketUniverse, SecurityId};

/// Share of the prior year's trading days a security needs bars on to be
/// ranked by MaxMedian.
pub const MIN_HISTORY_FRACTION: (usize, usize) = (9, 10);

pub const DEFAULT_K: usize = 20;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("no index constituents on {date}")]
    EmptyConstituency { date: NaiveDate },
    #[error("constituents on {date} have zero total market value")]
    ZeroMarketValue { date: NaiveDate },
    #[error("{n} constituents on {date} is too few for a {zone} basket of {k}")]
    UniverseTooSmall {
        date: NaiveDate,
        zone: BasketZone,
        n: usize,
        k: usize,
    },
    #[error("only {eligible} eligible securities on {date}, need {k}")]
    InsufficientEligibleSecurities {
        date: NaiveDate,
        eligible: usize,
        k: usize,
    },
    #[error("no trading days in {year}, the lookback year for a selection on {date}")]
    NoLookbackData { date: NaiveDate, year: i32 },
    #[error("basket size k must be positive")]
    ZeroK,
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = StrategyError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Weighting {
    Equal,
    MarketCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasketZone {
    Top,
    Middle,
    Bottom,
}

impl fmt::Display for BasketZone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasketZone::Top => "top",
            BasketZone::Middle => "middle",
            BasketZone::Bottom => "bottom",
        })
    }
}

impl FromStr for BasketZone {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "top" => Ok(BasketZone::Top),
            "middle" | "mid" => Ok(BasketZone::Middle),
            "bottom" => Ok(BasketZone::Bottom),
            _ => Err(format!("unknown basket zone {s:?}")),
        }
    }
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weighting::Equal => "equ",
            Weighting::MarketCap => "mkc",
        })
    }
}

impl FromStr for Weighting {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "equ" | "equal" => Ok(Weighting::Equal),
            "mkc" | "cap" => Ok(Weighting::MarketCap),
            _ => Err(format!("unknown weighting {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rebalance {
    Monthly,
    Annual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Equ,
    Mkc,
    Basket {
        zone: BasketZone,
        weighting: Weighting,
    },
    MaxMedian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Basket / MaxMedian size; ignored by EQU and MKC.
    pub k: usize,
    pub rebalance: Rebalance,
}

impl StrategySpec {
    pub fn equ() -> Self {
        StrategySpec {
            kind: StrategyKind::Equ,
            k: DEFAULT_K,
            rebalance: Rebalance::Monthly,
        }
    }

    pub fn mkc() -> Self {
        StrategySpec {
            kind: StrategyKind::Mkc,
            ..Self::equ()
        }
    }

    pub fn basket(zone: BasketZone, weighting: Weighting, k: usize) -> Self {
        StrategySpec {
            kind: StrategyKind::Basket { zone, weighting },
            k,
            rebalance: Rebalance::Monthly,
        }
    }

    pub fn maxmedian(k: usize) -> Self {
        StrategySpec {
            kind: StrategyKind::MaxMedian,
            k,
            rebalance: Rebalance::Annual,
        }
    }

    /// Short stable name used for output files.
    pub fn name(&self) -> String {
        match self.kind {
            StrategyKind::Equ => "equ".into(),
            StrategyKind::Mkc => "mkc".into(),
            StrategyKind::Basket { zone, weighting } => format!("basket-{zone}-{weighting}"),
            StrategyKind::MaxMedian => "maxmedian".into(),
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Unnormalized long-only weights; the engine divides by their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetWeights(BTreeMap<SecurityId, f64>);

impl TargetWeights {
    /// Drops zero weights. Returns `None` if nothing positive remains or any
    /// weight is negative or non-finite.
    pub fn new(weights: BTreeMap<SecurityId, f64>) -> Option<Self> {
        if weights.values().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return None;
        }
        let kept: BTreeMap<_, _> = weights.into_iter().filter(|(_, w)| *w > 0.0).collect();
        (!kept.is_empty()).then_some(TargetWeights(kept))
    }

    pub fn equal<'a>(ids: impl IntoIterator<Item = &'a SecurityId>) -> Option<Self> {
        Self::new(ids.into_iter().map(|s| (s.clone(), 1.0)).collect())
    }

    pub fn get(&self, id: &SecurityId) -> Option<f64> {
        self.0.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SecurityId, f64)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    pub fn normalized(&self) -> BTreeMap<SecurityId, f64> {
        let total = self.total();
        self.0.iter().map(|(k, v)| (k.clone(), v / total)).collect()
    }
}

fn non_empty_constituents(u: &MarketUniverse, d: NaiveDate) -> Result<Vec<SecurityId>> {
    let ids = u.constituents_at(d)?;
    if ids.is_empty() {
        return Err(StrategyError::EmptyConstituency { date: d });
    }
    Ok(ids)
}

fn market_value(u: &MarketUniverse, id: &SecurityId, d: NaiveDate) -> f64 {
    u.bar(id, d).map_or(0.0, |b| b.market_value())
}

fn weights_for(
    u: &MarketUniverse,
    d: NaiveDate,
    ids: &[SecurityId],
    weighting: Weighting,
) -> Result<TargetWeights> {
    let weights = ids
        .iter()
        .map(|id| {
            let w = match weighting {
                Weighting::Equal => 1.0,
                Weighting::MarketCap => market_value(u, id, d),
            };
            (id.clone(), w)
        })
        .collect();
    TargetWeights::new(weights).ok_or(StrategyError::ZeroMarketValue { date: d })
}

/// Weight one for every constituent on `d`.
pub fn target_weights_equ(u: &MarketUniverse, d: NaiveDate) -> Result<TargetWeights> {
    let ids = non_empty_constituents(u, d)?;
    weights_for(u, d, &ids, Weighting::Equal)
}

/// Weight equal to market value (close times shares outstanding).
pub fn target_weights_mkc(u: &MarketUniverse, d: NaiveDate) -> Result<TargetWeights> {
    let ids = non_empty_constituents(u, d)?;
    weights_for(u, d, &ids, Weighting::MarketCap)
}

/// 1-based inclusive rank window of a basket among `n` constituents.
pub fn basket_ranks(zone: BasketZone, n: usize, k: usize) -> std::ops::RangeInclusive<usize> {
    let first = match zone {
        BasketZone::Top => 1,
        BasketZone::Middle => n / 2 - k / 2 + 1,
        BasketZone::Bottom => n - k + 1,
    };
    first..=first + k - 1
}

/// Picks `k` constituents by market-value rank (largest first, ties by id).
/// Returned in rank order.
pub fn basket_select(
    u: &MarketUniverse,
    d: NaiveDate,
    zone: BasketZone,
    k: usize,
) -> Result<Vec<SecurityId>> {
    if k == 0 {
        return Err(StrategyError::ZeroK);
    }
    let ids = non_empty_constituents(u, d)?;
    let n = ids.len();
    if n < 2 * k {
        return Err(StrategyError::UniverseTooSmall {
            date: d,
            zone,
            n,
            k,
        });
    }
    let mut ranked: Vec<(f64, SecurityId)> = ids
        .into_iter()
        .map(|id| (market_value(u, &id, d), id))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let ranks = basket_ranks(zone, n, k);
    Ok(ranked[ranks.start() - 1..*ranks.end()]
        .iter()
        .map(|(_, id)| id.clone())
        .collect())
}

/// A security's median daily price ratio over the lookback year.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianScore {
    pub security: SecurityId,
    pub median: f64,
    /// Ratios left after discarding the unchanged days.
    pub ratios_used: usize,
}

/// Median of a non-empty slice; reorders the slice. Even lengths average the
/// two middle values.
fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let below = lower
            .iter()
            .copied()
            .max_by(f64::total_cmp)
            .expect("even n >= 2 leaves a lower half");
        (below + upper) / 2.0
    }
}

fn by_median_desc(a: &MedianScore, b: &MedianScore) -> std::cmp::Ordering {
    b.median
        .total_cmp(&a.median)
        .then_with(|| a.security.cmp(&b.security))
}

/// Median scores of every security eligible for a MaxMedian selection on
/// `selection_date`, in no particular order.
///
/// Lookback is the calendar year before `selection_date`'s year. Daily ratios
/// are `1 + ret_capital`, which is the split-adjusted close-to-close ratio.
/// Days with `ret_capital == 0` exactly are discarded. Eligible securities are
/// constituents on the selection date that have bars on at least 90% of the
/// lookback year's trading days and at least one ratio left after discarding.
pub fn maxmedian_scores(u: &MarketUniverse, selection_date: NaiveDate) -> Result<Vec<MedianScore>> {
    let members = u.constituents_at(selection_date)?;
    let year = selection_date.year() - 1;
    let days = u.dates_in_year(year);
    if days.is_empty() {
        return Err(StrategyError::NoLookbackData {
            date: selection_date,
            year,
        });
    }

    let mut history: HashMap<&SecurityId, (usize, Vec<f64>)> = members
        .iter()
        .map(|id| (id, (0, Vec::with_capacity(days.len()))))
        .collect();
    for d in days {
        let bars = u.bars_on(*d).expect("calendar date");
        for (id, bar) in bars {
            if let Some((count, ratios)) = history.get_mut(id) {
                *count += 1;
                if bar.ret_capital != 0.0 {
                    ratios.push(1.0 + bar.ret_capital);
                }
            }
        }
    }

    let (num, den) = MIN_HISTORY_FRACTION;
    Ok(history
        .into_iter()
        .filter(|(_, (count, ratios))| count * den >= num * days.len() && !ratios.is_empty())
        .map(|(id, (_, mut ratios))| MedianScore {
            security: id.clone(),
            median: median_in_place(&mut ratios),
            ratios_used: ratios.len(),
        })
        .collect())
}

/// All eligible securities ranked by median, largest first, ties by id.
pub fn maxmedian_ranking(
    u: &MarketUniverse,
    selection_date: NaiveDate,
) -> Result<Vec<MedianScore>> {
    let mut scores = maxmedian_scores(u, selection_date)?;
    scores.sort_by(by_median_desc);
    Ok(scores)
}

/// The `k` securities with the largest medians, with their scores, in rank order.
pub fn maxmedian_top(
    u: &MarketUniverse,
    selection_date: NaiveDate,
    k: usize,
) -> Result<Vec<MedianScore>> {
    if k == 0 {
        return Err(StrategyError::ZeroK);
    }
    let mut scores = maxmedian_scores(u, selection_date)?;
    if scores.len() < k {
        return Err(StrategyError::InsufficientEligibleSecurities {
            date: selection_date,
            eligible: scores.len(),
            k,
        });
    }
    if scores.len() > k {
        scores.select_nth_unstable_by(k - 1, by_median_desc);
        scores.truncate(k);
    }
    scores.sort_by(by_median_desc);
    Ok(scores)
}

pub fn maxmedian_select(
    u: &MarketUniverse,
    selection_date: NaiveDate,
    k: usize,
) -> Result<Vec<SecurityId>> {
    Ok(maxmedian_top(u, selection_date, k)?
        .into_iter()
        .map(|s| s.security)
        .collect())
}

/// Targets for a rebalance on `d`, plus the picked names for strategies that
/// select a subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub weights: TargetWeights,
    pub selection: Option<Vec<SecurityId>>,
}

pub fn targets_for(spec: &StrategySpec, u: &MarketUniverse, d: NaiveDate) -> Result<Targets> {
    match spec.kind {
        StrategyKind::Equ => Ok(Targets {
            weights: target_weights_equ(u, d)?,
            selection: None,
        }),
        StrategyKind::Mkc => Ok(Targets {
            weights: target_weights_mkc(u, d)?,
            selection: None,
        }),
        StrategyKind::Basket { zone, weighting } => {
            let picked = basket_select(u, d, zone, spec.k)?;
            Ok(Targets {
                weights: weights_for(u, d, &picked, weighting)?,
                selection: Some(picked),
            })
        }
        StrategyKind::MaxMedian => {
            let picked = maxmedian_select(u, d, spec.k)?;
            Ok(Targets {
                weights: weights_for(u, d, &picked, Weighting::Equal)?,
                selection: Some(picked),
            })
        }
    }
}
