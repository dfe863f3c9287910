//! Output formats: CSV tables, a plain-text summary and an SVG chart of
//! cumulative portfolio value. Everything here is a pure function of its
//! inputs so reruns are byte-identical.

use std::fmt::Write as _;

use chrono::NaiveDate;

use crate::analytics::AnnualStats;
use crate::engine::BacktestResult;
use crate::strategies::MedianScore;

pub fn values_csv(r: &BacktestResult) -> String {
    let mut out = String::from("date,total_value\n");
    for (d, v) in &r.daily_values {
        writeln!(out, "{d},{v:.2}").unwrap();
    }
    out
}

pub fn trades_csv(r: &BacktestResult) -> String {
    let mut out = String::from("date,security_id,shares_delta,price,admin_fee,spread_fee\n");
    for t in &r.trades {
        writeln!(
            out,
            "{},{},{:.6},{},{:.2},{:.2}",
            t.date, t.security, t.shares_traded, t.price, t.admin, t.spread
        )
        .unwrap();
    }
    out
}

pub fn selections_csv(r: &BacktestResult) -> String {
    let mut out = String::from("date,rank,security_id\n");
    for (d, names) in &r.selections {
        for (i, id) in names.iter().enumerate() {
            writeln!(out, "{d},{},{id}", i + 1).unwrap();
        }
    }
    out
}

fn footer_rows(stats: &[&AnnualStats]) -> Vec<(&'static str, Vec<f64>)> {
    vec![
        ("arithmetic", stats.iter().map(|s| s.arithmetic).collect()),
        ("geometric", stats.iter().map(|s| s.geometric).collect()),
        ("sd", stats.iter().map(|s| s.sd).collect()),
        ("sharpe", stats.iter().map(|s| s.sharpe).collect()),
    ]
}

/// One strategy: a row per year, then the four summary rows.
pub fn annual_csv(stats: &AnnualStats) -> String {
    annual_table_csv(&[("return_pct".to_string(), stats.clone())])
}

/// Several strategies side by side. Years missing for a strategy are blank.
pub fn annual_table_csv(columns: &[(String, AnnualStats)]) -> String {
    let mut out = String::from("period");
    for (name, _) in columns {
        write!(out, ",{name}").unwrap();
    }
    out.push('\n');
    let mut years: Vec<i32> = columns
        .iter()
        .flat_map(|(_, s)| s.per_year.keys().copied())
        .collect();
    years.sort_unstable();
    years.dedup();
    for y in years {
        write!(out, "{y}").unwrap();
        for (_, s) in columns {
            match s.per_year.get(&y) {
                Some(v) => write!(out, ",{v:.2}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    let stats: Vec<&AnnualStats> = columns.iter().map(|(_, s)| s).collect();
    for (label, values) in footer_rows(&stats) {
        out.push_str(label);
        for v in values {
            write!(out, ",{v:.2}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn final_values_csv(results: &[BacktestResult]) -> String {
    let mut out = String::from("strategy,end_date,final_value\n");
    for r in results {
        let end = r
            .daily_values
            .last()
            .map(|(d, _)| d.to_string())
            .unwrap_or_default();
        writeln!(out, "{},{end},{:.2}", r.strategy, r.final_value()).unwrap();
    }
    out
}

pub fn fees_csv(results: &[BacktestResult]) -> String {
    let mut out = String::from(
        "strategy,trades,admin_nominal,spread_nominal,total_nominal,admin_real,spread_real,total_real\n",
    );
    for r in results {
        let f = &r.fee_totals;
        writeln!(
            out,
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}",
            r.strategy,
            r.trades.len(),
            f.admin_nominal,
            f.spread_nominal,
            f.nominal(),
            f.admin_real,
            f.spread_real,
            f.real()
        )
        .unwrap();
    }
    out
}

/// `$172.89 mil` above a million, `$2,748.44` below.
pub fn format_dollars(v: f64) -> String {
    if v.abs() >= 1e6 {
        format!("${:.2} mil", v / 1e6)
    } else {
        let cents = format!("{:.2}", v.abs());
        let (int, frac) = cents.split_once('.').expect("two decimals");
        let mut grouped = String::new();
        for (i, c) in int.chars().enumerate() {
            if i > 0 && (int.len() - i) % 3 == 0 {
                grouped.push(',');
            }
            grouped.push(c);
        }
        let sign = if v < 0.0 { "-" } else { "" };
        format!("{sign}${grouped}.{frac}")
    }
}

/// Human-readable comparison: final values and fee totals.
pub fn summary_text(results: &[BacktestResult], stats: &[Option<AnnualStats>]) -> String {
    let mut out = String::new();
    let width = results
        .iter()
        .map(|r| r.strategy.name().len())
        .max()
        .unwrap_or(8)
        .max(8);
    writeln!(
        out,
        "{:<width$}  {:>16}  {:>14}  {:>14}  {:>9}  {:>9}",
        "strategy", "final value", "fees (nominal)", "fees (real)", "geo %", "sharpe %"
    )
    .unwrap();
    for (r, s) in results.iter().zip(stats) {
        let (geo, sharpe) = match s {
            Some(s) => (format!("{:.2}", s.geometric), format!("{:.2}", s.sharpe)),
            None => ("-".into(), "-".into()),
        };
        writeln!(
            out,
            "{:<width$}  {:>16}  {:>14}  {:>14}  {:>9}  {:>9}",
            r.strategy.name(),
            format_dollars(r.final_value()),
            format_dollars(r.fee_totals.nominal()),
            format_dollars(r.fee_totals.real()),
            geo,
            sharpe
        )
        .unwrap();
    }
    out
}

/// `select` listing: rank, id, median ratio.
pub fn selection_listing(
    selection_date: NaiveDate,
    picks: &[MedianScore],
    eligible: usize,
) -> String {
    let mut out = String::new();
    writeln!(out, "# MaxMedian picks for {selection_date} ({eligible} eligible; ties broken by security id ascending)").unwrap();
    writeln!(out, "rank,security_id,median_ratio,ratios_used").unwrap();
    for (i, s) in picks.iter().enumerate() {
        writeln!(
            out,
            "{},{},{:.8},{}",
            i + 1,
            s.security,
            s.median,
            s.ratios_used
        )
        .unwrap();
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 540.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Mapping between data and pixel coordinates of the plot area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartScale {
    pub x_min: i32,
    pub x_max: i32,
    pub y_min: f64,
    pub y_max: f64,
    pub log: bool,
}

impl ChartScale {
    fn ty(&self, v: f64) -> f64 {
        if self.log {
            v.log10()
        } else {
            v
        }
    }

    pub fn x(&self, d: NaiveDate) -> f64 {
        let span = (self.x_max - self.x_min).max(1) as f64;
        LEFT + (days(d) - self.x_min) as f64 / span * (WIDTH - LEFT - RIGHT)
    }

    pub fn y(&self, v: f64) -> f64 {
        let (lo, hi) = (self.ty(self.y_min), self.ty(self.y_max));
        let frac = if hi > lo {
            (self.ty(v) - lo) / (hi - lo)
        } else {
            0.5
        };
        HEIGHT - BOTTOM - frac * (HEIGHT - TOP - BOTTOM)
    }

    /// Inverse of [`ChartScale::y`].
    pub fn value_at(&self, y: f64) -> f64 {
        let (lo, hi) = (self.ty(self.y_min), self.ty(self.y_max));
        let t = lo + (HEIGHT - BOTTOM - y) / (HEIGHT - TOP - BOTTOM) * (hi - lo);
        if self.log {
            10f64.powf(t)
        } else {
            t
        }
    }
}

fn days(d: NaiveDate) -> i32 {
    use chrono::Datelike;
    d.num_days_from_ce()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Overlays cumulative value series, one polyline each, with a legend.
pub fn cumulative_svg(series: &[(String, Vec<(NaiveDate, f64)>)], log_scale: bool) -> String {
    use chrono::Datelike;
    let points = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x_min, mut x_max) = (i32::MAX, i32::MIN);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (d, v) in points {
        x_min = x_min.min(days(*d));
        x_max = x_max.max(days(*d));
        y_min = y_min.min(*v);
        y_max = y_max.max(*v);
    }
    if x_min > x_max {
        (x_min, x_max, y_min, y_max) = (0, 1, 1.0, 10.0);
    }
    let scale = ChartScale {
        x_min,
        x_max,
        y_min,
        y_max,
        log: log_scale && y_min > 0.0,
    };

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" data-y-min="{y_min}" data-y-max="{y_max}" data-log="{}" font-family="sans-serif" font-size="12">"#,
        scale.log
    )
    .unwrap();
    writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">Cumulative portfolio value{}</text>"#,
        WIDTH / 2.0,
        if scale.log { " (log scale)" } else { "" }
    )
    .unwrap();

    // y grid
    let ticks: Vec<f64> = if scale.log {
        let lo = y_min.log10().floor() as i32;
        let hi = y_max.log10().ceil() as i32;
        (lo..=hi)
            .map(|e| 10f64.powi(e))
            .filter(|v| *v >= y_min && *v <= y_max)
            .collect()
    } else {
        (0..=5)
            .map(|i| y_min + (y_max - y_min) * i as f64 / 5.0)
            .collect()
    };
    for t in ticks {
        let y = scale.y(t);
        writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            WIDTH - RIGHT,
            LEFT - 6.0,
            y + 4.0,
            escape(&format_dollars(t))
        )
        .unwrap();
    }

    // x labels, about ten of them
    if let (Some(first), Some(last)) = (
        NaiveDate::from_num_days_from_ce_opt(x_min),
        NaiveDate::from_num_days_from_ce_opt(x_max),
    ) {
        let years = (last.year() - first.year()).max(1);
        let stride = ((years + 9) / 10).max(1);
        let mut y = first.year() + 1;
        while y <= last.year() {
            let d = NaiveDate::from_ymd_opt(y, 1, 1).expect("valid");
            let x = scale.x(d);
            writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#eeeeee"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{y}</text>"##,
                HEIGHT - BOTTOM,
                HEIGHT - BOTTOM + 18.0
            )
            .unwrap();
            y += stride;
        }
    }
    writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    )
    .unwrap();

    for (i, (name, s)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for (j, (d, v)) in s.iter().enumerate() {
            if j > 0 {
                pts.push(' ');
            }
            write!(pts, "{:.2},{:.3}", scale.x(*d), scale.y(*v)).unwrap();
        }
        writeln!(
            out,
            r#"<polyline data-strategy="{}" fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>"#,
            escape(name)
        )
        .unwrap();
        let ly = TOP + 16.0 + 18.0 * i as f64;
        writeln!(
            out,
            r#"<g class="legend"><rect x="{:.2}" y="{:.2}" width="14" height="4" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            LEFT + 12.0,
            ly - 4.0,
            LEFT + 32.0,
            ly + 2.0,
            escape(name)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
