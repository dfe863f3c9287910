//! Per-trade transaction costs: a flat administration fee fixed in
//! reference-month dollars plus half of a proportional bid-ask spread.

use chrono::NaiveDate;

use crate::market_data::{deflate, CpiSeries, DataError, SecurityId, YearMonth};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeeModel {
    /// Flat fee per executed trade, in `reference_month` dollars.
    pub admin_fee: f64,
    /// Full quoted spread as a fraction of price; each side pays half.
    pub spread_fraction: f64,
    pub reference_month: YearMonth,
}

impl Default for FeeModel {
    fn default() -> Self {
        FeeModel {
            admin_fee: 1.0,
            spread_fraction: 0.001,
            reference_month: YearMonth::new(2016, 12),
        }
    }
}

impl FeeModel {
    pub fn zero() -> Self {
        FeeModel {
            admin_fee: 0.0,
            spread_fraction: 0.0,
            ..FeeModel::default()
        }
    }

    /// Builds a model with the spread given in basis points.
    pub fn with_spread_bps(admin_fee: f64, spread_bps: f64) -> Result<Self, String> {
        let model = FeeModel {
            admin_fee,
            spread_fraction: spread_bps / 10_000.0,
            ..FeeModel::default()
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.admin_fee >= 0.0) || !self.admin_fee.is_finite() {
            return Err(format!("admin fee must be >= 0, got {}", self.admin_fee));
        }
        if !(0.0..1.0).contains(&self.spread_fraction) {
            return Err(format!(
                "spread fraction must be in [0, 1), got {}",
                self.spread_fraction
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TradeFee {
    pub admin: f64,
    pub spread: f64,
}

impl TradeFee {
    pub fn total(&self) -> f64 {
        self.admin + self.spread
    }
}

/// One executed trade and what it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeeLedgerEntry {
    pub date: NaiveDate,
    pub security: SecurityId,
    /// Signed: positive buys, negative sells. Fractional shares are allowed.
    pub shares_traded: f64,
    pub price: f64,
    pub admin: f64,
    pub spread: f64,
}

impl FeeLedgerEntry {
    pub fn total_fee(&self) -> f64 {
        self.admin + self.spread
    }
}

/// Cost of trading `shares` (absolute count) at `price` during `trade_month`.
///
/// The admin fee is converted from the model's reference month into
/// `trade_month` dollars; the spread part is `shares * price * spread / 2`.
pub fn trade_fee(
    model: &FeeModel,
    shares: f64,
    price: f64,
    trade_month: YearMonth,
    cpi: &CpiSeries,
) -> Result<TradeFee, DataError> {
    debug_assert!(shares >= 0.0 && price > 0.0);
    if shares == 0.0 {
        return Ok(TradeFee::default());
    }
    let admin = if model.admin_fee == 0.0 {
        0.0
    } else {
        deflate(model.admin_fee, model.reference_month, trade_month, cpi)?
    };
    let spread = shares * price * model.spread_fraction / 2.0;
    Ok(TradeFee { admin, spread })
}
