//! Security price data, index constituency and CPI series.
//!
//! A [`MarketUniverse`] is built once (from CSV or in memory), validated, and
//! then only read. Bars are stored per trading day so that the daily loop of
//! the engine touches one map per date.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use log::warn;
use thiserror::Error;

pub const PRICES_FILE: &str = "prices.csv";
pub const CONSTITUENTS_FILE: &str = "constituents.csv";
pub const CPI_FILE: &str = "cpi.csv";

const PRICE_HEADER: [&str; 6] = [
    "date",
    "security_id",
    "close",
    "ret_total",
    "ret_capital",
    "shares_out",
];
const CONSTITUENT_HEADER: [&str; 3] = ["security_id", "start_date", "end_date"];
const CPI_HEADER: [&str; 2] = ["year_month", "cpi"];

/// Gaps longer than this many calendar days between trading dates are
/// reported as warnings. Weekends plus a holiday give at most four.
const CALENDAR_GAP_DAYS: i64 = 4;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: malformed row: {message}")]
    MalformedRow {
        path: String,
        line: u64,
        message: String,
    },
    #[error("duplicate bar for {security} on {date} (lines {first_line} and {second_line})")]
    DuplicateBar {
        security: SecurityId,
        date: NaiveDate,
        first_line: u64,
        second_line: u64,
    },
    #[error("line {line}: non-positive close {close} for {security} on {date}")]
    NonPositivePrice {
        security: SecurityId,
        date: NaiveDate,
        close: f64,
        line: u64,
    },
    #[error("line {line}: invalid bar for {security} on {date}: {message}")]
    InvalidBar {
        security: SecurityId,
        date: NaiveDate,
        line: u64,
        message: String,
    },
    #[error("overlapping constituency intervals for {security}")]
    OverlappingConstituency { security: SecurityId },
    #[error("constituency interval for {security} ends before it starts")]
    InvertedConstituency { security: SecurityId },
    #[error("{date} is not a trading date of the universe")]
    DateNotInCalendar { date: NaiveDate },
    #[error("CPI has no value for {month}")]
    MonthMissing { month: YearMonth },
    #[error("CPI series is not contiguous: {after} is followed by {next}")]
    CpiGap { after: YearMonth, next: YearMonth },
    #[error("CPI level for {month} must be positive, got {level}")]
    NonPositiveCpi { month: YearMonth, level: f64 },
    #[error("CPI series is empty")]
    EmptyCpi,
    #[error("universe has no price bars")]
    EmptyUniverse,
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Opaque security identifier (a PERMNO, a ticker, ...).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SecurityId(Arc<str>);

impl SecurityId {
    pub fn new(id: impl AsRef<str>) -> Self {
        SecurityId(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SecurityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for SecurityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl From<&str> for SecurityId {
    fn from(s: &str) -> Self {
        SecurityId::new(s)
    }
}

/// Calendar month, used to key the CPI series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Self {
        assert!((1..=12).contains(&month), "month out of range: {month}");
        YearMonth { year, month }
    }

    pub fn of(date: NaiveDate) -> Self {
        YearMonth {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            YearMonth::new(self.year + 1, 1)
        } else {
            YearMonth::new(self.year, self.month + 1)
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (y, m) = s
            .trim()
            .split_once('-')
            .ok_or_else(|| format!("expected YYYY-MM, got {s:?}"))?;
        let year: i32 = y.parse().map_err(|_| format!("bad year in {s:?}"))?;
        let month: u32 = m.parse().map_err(|_| format!("bad month in {s:?}"))?;
        if !(1..=12).contains(&month) {
            return Err(format!("month out of range in {s:?}"));
        }
        Ok(YearMonth { year, month })
    }
}

/// One security-day observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceBar {
    pub security: SecurityId,
    pub date: NaiveDate,
    pub close: f64,
    /// Daily fractional return including dividends.
    pub ret_total: f64,
    /// Daily fractional return excluding dividends.
    pub ret_capital: f64,
    pub shares_out: f64,
}

impl PriceBar {
    pub fn market_value(&self) -> f64 {
        self.close * self.shares_out
    }

    fn check(&self, line: u64) -> Result<()> {
        let invalid = |message: String| DataError::InvalidBar {
            security: self.security.clone(),
            date: self.date,
            line,
            message,
        };
        if !(self.close > 0.0) || !self.close.is_finite() {
            return Err(DataError::NonPositivePrice {
                security: self.security.clone(),
                date: self.date,
                close: self.close,
                line,
            });
        }
        if !self.ret_total.is_finite() || !self.ret_capital.is_finite() {
            return Err(invalid("non-finite return".into()));
        }
        if self.ret_capital < -1.0 {
            return Err(invalid(format!("ret_capital {} < -1", self.ret_capital)));
        }
        if self.ret_total < self.ret_capital {
            return Err(invalid(format!(
                "ret_total {} < ret_capital {}",
                self.ret_total, self.ret_capital
            )));
        }
        if !(self.shares_out >= 0.0) || !self.shares_out.is_finite() {
            return Err(invalid(format!("shares_out {} < 0", self.shares_out)));
        }
        Ok(())
    }
}

/// Index membership interval, inclusive on both ends. `end == None` means
/// the security is still a member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Membership {
    pub start: NaiveDate,
    pub end: Option<NaiveDate>,
}

impl Membership {
    pub fn covers(&self, d: NaiveDate) -> bool {
        d >= self.start && self.end.is_none_or(|e| d <= e)
    }
}

/// Validated, immutable collection of daily bars plus index constituency.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketUniverse {
    calendar: Vec<NaiveDate>,
    day_index: HashMap<NaiveDate, usize>,
    bars: Vec<BTreeMap<SecurityId, PriceBar>>,
    /// `None`: no constituency file, every security with a bar is a member.
    constituency: Option<BTreeMap<SecurityId, Vec<Membership>>>,
}

impl MarketUniverse {
    /// Builds a universe from bars in source order. Bar positions are reported
    /// as 1-based row numbers in errors.
    pub fn from_parts(
        bars: Vec<PriceBar>,
        constituency: Option<Vec<(SecurityId, Membership)>>,
    ) -> Result<Self> {
        let numbered = bars
            .into_iter()
            .enumerate()
            .map(|(i, b)| (i as u64 + 1, b))
            .collect();
        Self::build(numbered, constituency)
    }

    fn build(
        bars: Vec<(u64, PriceBar)>,
        constituency: Option<Vec<(SecurityId, Membership)>>,
    ) -> Result<Self> {
        if bars.is_empty() {
            return Err(DataError::EmptyUniverse);
        }
        let mut by_date: BTreeMap<NaiveDate, BTreeMap<SecurityId, (u64, PriceBar)>> =
            BTreeMap::new();
        for (line, bar) in bars {
            bar.check(line)?;
            let day = by_date.entry(bar.date).or_default();
            if let Some((first_line, _)) = day.get(&bar.security) {
                return Err(DataError::DuplicateBar {
                    security: bar.security.clone(),
                    date: bar.date,
                    first_line: *first_line,
                    second_line: line,
                });
            }
            day.insert(bar.security.clone(), (line, bar));
        }

        let calendar: Vec<NaiveDate> = by_date.keys().copied().collect();
        let day_index = calendar.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let bars = by_date
            .into_values()
            .map(|day| day.into_iter().map(|(k, (_, b))| (k, b)).collect())
            .collect();

        let constituency = match constituency {
            None => None,
            Some(rows) => {
                let mut map: BTreeMap<SecurityId, Vec<Membership>> = BTreeMap::new();
                for (sec, m) in rows {
                    if m.end.is_some_and(|e| e < m.start) {
                        return Err(DataError::InvertedConstituency { security: sec });
                    }
                    map.entry(sec).or_default().push(m);
                }
                for (sec, intervals) in map.iter_mut() {
                    intervals.sort();
                    for pair in intervals.windows(2) {
                        let overlaps = pair[0].end.is_none_or(|e| e >= pair[1].start);
                        if overlaps {
                            return Err(DataError::OverlappingConstituency {
                                security: sec.clone(),
                            });
                        }
                    }
                }
                Some(map)
            }
        };

        let universe = MarketUniverse {
            calendar,
            day_index,
            bars,
            constituency,
        };
        for (a, b) in universe.calendar_gaps() {
            warn!("calendar gap between {a} and {b}");
        }
        Ok(universe)
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn day_index(&self, d: NaiveDate) -> Option<usize> {
        self.day_index.get(&d).copied()
    }

    pub fn contains_date(&self, d: NaiveDate) -> bool {
        self.day_index.contains_key(&d)
    }

    /// All bars on a trading date, keyed by security.
    pub fn bars_on(&self, d: NaiveDate) -> Option<&BTreeMap<SecurityId, PriceBar>> {
        self.day_index(d).map(|i| &self.bars[i])
    }

    pub fn bars_at(&self, index: usize) -> &BTreeMap<SecurityId, PriceBar> {
        &self.bars[index]
    }

    pub fn bar(&self, security: &SecurityId, d: NaiveDate) -> Option<&PriceBar> {
        self.bars_on(d).and_then(|m| m.get(security))
    }

    /// Most recent bar of `security` on or before `d`.
    pub fn last_bar_on_or_before(&self, security: &SecurityId, d: NaiveDate) -> Option<&PriceBar> {
        let end = self.calendar.partition_point(|c| *c <= d);
        self.bars[..end]
            .iter()
            .rev()
            .find_map(|day| day.get(security))
    }

    /// Every security that has at least one bar.
    pub fn securities(&self) -> BTreeSet<SecurityId> {
        self.bars
            .iter()
            .flat_map(|day| day.keys().cloned())
            .collect()
    }

    pub fn constituency(&self) -> Option<&BTreeMap<SecurityId, Vec<Membership>>> {
        self.constituency.as_ref()
    }

    pub fn is_member(&self, security: &SecurityId, d: NaiveDate) -> bool {
        match &self.constituency {
            None => true,
            Some(map) => map
                .get(security)
                .is_some_and(|iv| iv.iter().any(|m| m.covers(d))),
        }
    }

    /// Index constituents on `d` that also have a bar on `d`, ordered by id.
    pub fn constituents_at(&self, d: NaiveDate) -> Result<Vec<SecurityId>> {
        let day = self
            .bars_on(d)
            .ok_or(DataError::DateNotInCalendar { date: d })?;
        Ok(day
            .keys()
            .filter(|s| self.is_member(s, d))
            .cloned()
            .collect())
    }

    /// Trading dates falling in calendar year `year`.
    pub fn dates_in_year(&self, year: i32) -> &[NaiveDate] {
        let lo = self.calendar.partition_point(|d| d.year() < year);
        let hi = self.calendar.partition_point(|d| d.year() <= year);
        &self.calendar[lo..hi]
    }

    /// Consecutive trading dates further apart than a long weekend.
    pub fn calendar_gaps(&self) -> Vec<(NaiveDate, NaiveDate)> {
        self.calendar
            .windows(2)
            .filter(|w| (w[1] - w[0]).num_days() > CALENDAR_GAP_DAYS)
            .map(|w| (w[0], w[1]))
            .collect()
    }

    pub fn bar_count(&self) -> usize {
        self.bars.iter().map(BTreeMap::len).sum()
    }
}

/// Monthly CPI levels over a contiguous span.
#[derive(Debug, Clone, PartialEq)]
pub struct CpiSeries {
    values: BTreeMap<YearMonth, f64>,
}

impl CpiSeries {
    pub fn new(values: BTreeMap<YearMonth, f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(DataError::EmptyCpi);
        }
        for (&month, &level) in &values {
            if !(level > 0.0) || !level.is_finite() {
                return Err(DataError::NonPositiveCpi { month, level });
            }
        }
        let months: Vec<YearMonth> = values.keys().copied().collect();
        for w in months.windows(2) {
            if w[0].succ() != w[1] {
                return Err(DataError::CpiGap {
                    after: w[0],
                    next: w[1],
                });
            }
        }
        Ok(CpiSeries { values })
    }

    pub fn get(&self, month: YearMonth) -> Result<f64> {
        self.values
            .get(&month)
            .copied()
            .ok_or(DataError::MonthMissing { month })
    }

    pub fn first_month(&self) -> YearMonth {
        *self
            .values
            .keys()
            .next()
            .expect("non-empty by construction")
    }

    pub fn last_month(&self) -> YearMonth {
        *self
            .values
            .keys()
            .next_back()
            .expect("non-empty by construction")
    }

    pub fn iter(&self) -> impl Iterator<Item = (YearMonth, f64)> + '_ {
        self.values.iter().map(|(m, v)| (*m, *v))
    }
}

/// Converts `amount` expressed in `from`-month dollars into `to`-month dollars.
pub fn deflate(amount: f64, from: YearMonth, to: YearMonth, cpi: &CpiSeries) -> Result<f64> {
    let from_level = cpi.get(from)?;
    let to_level = cpi.get(to)?;
    if from == to {
        return Ok(amount);
    }
    Ok(amount * to_level / from_level)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> DataError + '_ {
    move |source| DataError::Csv {
        path: path.display().to_string(),
        source,
    }
}

struct RowReader {
    path: String,
    reader: csv::Reader<File>,
}

impl RowReader {
    fn open(path: &Path, expected: &[&str]) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let header = reader.headers().map_err(csv_err(path))?.clone();
        let found: Vec<&str> = header.iter().collect();
        if found != expected {
            return Err(DataError::MalformedRow {
                path: path.display().to_string(),
                line: 1,
                message: format!(
                    "expected header {:?}, found {:?}",
                    expected.join(","),
                    found.join(",")
                ),
            });
        }
        Ok(RowReader {
            path: path.display().to_string(),
            reader,
        })
    }

    fn rows(&mut self) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + '_ {
        let path = self.path.clone();
        self.reader.records().map(move |rec| match rec {
            Ok(r) => {
                let line = r.position().map_or(0, |p| p.line());
                Ok((line, r))
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                Err(DataError::MalformedRow {
                    path: path.clone(),
                    line,
                    message: e.to_string(),
                })
            }
        })
    }

    fn malformed(&self, line: u64, message: impl Into<String>) -> DataError {
        DataError::MalformedRow {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| format!("bad date {s:?}: {e}"))
}

fn parse_f64(name: &str, s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>().map_err(|_| format!("bad {name} {s:?}"))
}

/// Where the three input files live.
#[derive(Debug, Clone)]
pub struct DataPaths {
    pub prices: PathBuf,
    pub constituents: Option<PathBuf>,
}

impl DataPaths {
    /// A directory resolves to `prices.csv` plus an optional
    /// `constituents.csv`; a file path is taken as the prices file alone.
    pub fn resolve(path: &Path) -> Self {
        if path.is_dir() {
            let constituents = path.join(CONSTITUENTS_FILE);
            DataPaths {
                prices: path.join(PRICES_FILE),
                constituents: constituents.exists().then_some(constituents),
            }
        } else {
            DataPaths {
                prices: path.to_path_buf(),
                constituents: None,
            }
        }
    }
}

/// Loads and validates a universe from a data directory or a prices CSV.
pub fn load_universe(path: &Path) -> Result<MarketUniverse> {
    let paths = DataPaths::resolve(path);
    let bars = read_prices(&paths.prices)?;
    let constituency = paths
        .constituents
        .as_deref()
        .map(read_constituents)
        .transpose()?;
    MarketUniverse::build(bars, constituency)
}

fn read_prices(path: &Path) -> Result<Vec<(u64, PriceBar)>> {
    let mut rr = RowReader::open(path, &PRICE_HEADER)?;
    let rows: Vec<_> = rr.rows().collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let parsed = (|| {
            if rec.len() != PRICE_HEADER.len() {
                return Err(format!(
                    "expected {} fields, found {}",
                    PRICE_HEADER.len(),
                    rec.len()
                ));
            }
            let security = rec[1].to_string();
            if security.is_empty() {
                return Err("empty security_id".to_string());
            }
            Ok(PriceBar {
                date: parse_date(&rec[0])?,
                security: SecurityId::new(security),
                close: parse_f64("close", &rec[2])?,
                ret_total: parse_f64("ret_total", &rec[3])?,
                ret_capital: parse_f64("ret_capital", &rec[4])?,
                shares_out: parse_f64("shares_out", &rec[5])?,
            })
        })();
        out.push((line, parsed.map_err(|m| rr.malformed(line, m))?));
    }
    Ok(out)
}

fn read_constituents(path: &Path) -> Result<Vec<(SecurityId, Membership)>> {
    let mut rr = RowReader::open(path, &CONSTITUENT_HEADER)?;
    let rows: Vec<_> = rr.rows().collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let parsed = (|| {
            if rec.len() != CONSTITUENT_HEADER.len() {
                return Err(format!("expected 3 fields, found {}", rec.len()));
            }
            if rec[0].is_empty() {
                return Err("empty security_id".to_string());
            }
            let end = if rec[2].is_empty() {
                None
            } else {
                Some(parse_date(&rec[2])?)
            };
            Ok((
                SecurityId::new(&rec[0]),
                Membership {
                    start: parse_date(&rec[1])?,
                    end,
                },
            ))
        })();
        out.push(parsed.map_err(|m| rr.malformed(line, m))?);
    }
    Ok(out)
}

pub fn load_cpi(path: &Path) -> Result<CpiSeries> {
    let mut rr = RowReader::open(path, &CPI_HEADER)?;
    let rows: Vec<_> = rr.rows().collect::<Result<_>>()?;
    let mut values = BTreeMap::new();
    for (line, rec) in rows {
        let parsed = (|| {
            if rec.len() != 2 {
                return Err(format!("expected 2 fields, found {}", rec.len()));
            }
            let month: YearMonth = rec[0].parse()?;
            Ok((month, parse_f64("cpi", &rec[1])?))
        })();
        let (month, level) = parsed.map_err(|m| rr.malformed(line, m))?;
        if values.insert(month, level).is_some() {
            return Err(rr.malformed(line, format!("duplicate month {month}")));
        }
    }
    CpiSeries::new(values)
}

/// Writes the universe in the loader's schema. `{}` formatting of `f64` is
/// shortest-round-trip, so loading the output reproduces the universe exactly.
pub fn write_universe(u: &MarketUniverse, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let prices = dir.join(PRICES_FILE);
    let mut w = csv::Writer::from_path(&prices).map_err(csv_err(&prices))?;
    w.write_record(PRICE_HEADER).map_err(csv_err(&prices))?;
    for day in &u.bars {
        for bar in day.values() {
            w.write_record([
                bar.date.to_string(),
                bar.security.to_string(),
                bar.close.to_string(),
                bar.ret_total.to_string(),
                bar.ret_capital.to_string(),
                bar.shares_out.to_string(),
            ])
            .map_err(csv_err(&prices))?;
        }
    }
    w.flush().map_err(io_err(&prices))?;

    let constituents = dir.join(CONSTITUENTS_FILE);
    match &u.constituency {
        Some(map) => {
            let mut w = csv::Writer::from_path(&constituents).map_err(csv_err(&constituents))?;
            w.write_record(CONSTITUENT_HEADER)
                .map_err(csv_err(&constituents))?;
            for (sec, intervals) in map {
                for m in intervals {
                    w.write_record([
                        sec.to_string(),
                        m.start.to_string(),
                        m.end.map(|e| e.to_string()).unwrap_or_default(),
                    ])
                    .map_err(csv_err(&constituents))?;
                }
            }
            w.flush().map_err(io_err(&constituents))?;
        }
        None => {
            if constituents.exists() {
                std::fs::remove_file(&constituents).map_err(io_err(&constituents))?;
            }
        }
    }
    Ok(())
}

pub fn write_cpi(cpi: &CpiSeries, path: &Path) -> Result<()> {
    let mut f = File::create(path).map_err(io_err(path))?;
    let mut body = String::from("year_month,cpi\n");
    for (m, v) in cpi.iter() {
        body.push_str(&format!("{m},{v}\n"));
    }
    f.write_all(body.as_bytes()).map_err(io_err(path))
}
