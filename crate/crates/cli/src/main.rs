#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{Datelike, NaiveDate};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use indexbt_core::analytics::{annual_returns, summarize, AnalyticsError, AnnualStats};
use indexbt_core::engine::{run_backtest, BacktestResult, EngineError};
use indexbt_core::fees::FeeModel;
use indexbt_core::market_data::{
    load_cpi, load_universe, write_cpi, write_universe, CpiSeries, DataError, MarketUniverse,
    CPI_FILE,
};
use indexbt_core::report;
use indexbt_core::strategies::{
    maxmedian_ranking, BasketZone, StrategyError, StrategyKind, StrategySpec, Weighting, DEFAULT_K,
};
use indexbt_core::synth::{generate, SynthSpec};

const EXIT_FAILURE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "indexbt",
    version,
    about = "Equal-weight, cap-weight and MaxMedian index backtests"
)]
struct Cli {
    /// Log warnings (frozen positions, calendar gaps) to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more strategies and write tables and a chart.
    Backtest(BacktestArgs),
    /// Print the MaxMedian picks for a year.
    Select(SelectArgs),
    /// Load a data directory (or generate one) and check it round-trips.
    ValidateData(ValidateArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Data directory with prices.csv, optional constituents.csv and cpi.csv.
    #[arg(long, env = "INDEXBT_DATA", conflicts_with = "seed")]
    data: Option<PathBuf>,
    /// CPI file; defaults to <data>/cpi.csv.
    #[arg(long)]
    cpi: Option<PathBuf>,
    /// Use a generated synthetic market with this seed instead of files.
    #[arg(long)]
    seed: Option<u64>,
    /// Securities in the synthetic market.
    #[arg(long, default_value_t = 50, requires = "seed")]
    n_securities: usize,
    /// Years in the synthetic market.
    #[arg(long, default_value_t = 3, requires = "seed")]
    years: usize,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// equ, mkc, basket, maxmedian, or a full basket name like basket-middle-mkc.
    #[arg(long = "strategy", required = true)]
    strategies: Vec<String>,
    #[arg(long, default_value = "top")]
    zone: BasketZone,
    #[arg(long, default_value = "equ")]
    basket_weighting: Weighting,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// First trading date (YYYY-MM-DD). Defaults to the first date in the
    /// data, or the first date of the second year when MaxMedian is run.
    #[arg(long)]
    start: Option<NaiveDate>,
    #[arg(long)]
    end: Option<NaiveDate>,
    #[arg(long, default_value_t = 100_000.0)]
    initial: f64,
    /// Flat fee per trade in reference-month (2016-12) dollars.
    #[arg(long, default_value_t = 1.0)]
    admin_fee: f64,
    /// Full bid-ask spread in basis points; each trade pays half.
    #[arg(long, default_value_t = 10.0)]
    spread_bps: f64,
    /// Annual risk-free rate in percent, for the Sharpe ratio.
    #[arg(long, default_value_t = 1.75)]
    risk_free: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Linear instead of log y-axis on the chart.
    #[arg(long)]
    linear: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Year to select for; the lookback is the year before.
    #[arg(long)]
    year: i32,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Where to write the generated data set (with --seed).
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Market {
    universe: MarketUniverse,
    cpi: CpiSeries,
}

fn load_market(args: &DataArgs, need_cpi: bool) -> Result<(Market, bool)> {
    if let Some(seed) = args.seed {
        let spec = SynthSpec {
            seed,
            n_securities: args.n_securities,
            n_years: args.years,
            ..SynthSpec::default()
        };
        if spec.n_securities == 0 || spec.n_years == 0 {
            bail!("synthetic market needs at least one security and one year");
        }
        let (universe, cpi) = generate(&spec);
        return Ok((Market { universe, cpi }, true));
    }
    let dir = args
        .data
        .as_deref()
        .ok_or_else(|| anyhow!("no data: pass --data DIR, set INDEXBT_DATA, or use --seed"))?;
    let universe = load_universe(dir)?;
    let cpi_path = args.cpi.clone().unwrap_or_else(|| dir.join(CPI_FILE));
    let cpi = if need_cpi || cpi_path.exists() {
        load_cpi(&cpi_path)?
    } else {
        // zero-admin runs never consult CPI; a one-month placeholder keeps types simple
        CpiSeries::new([(indexbt_core::YearMonth::new(2016, 12), 1.0)].into())?
    };
    Ok((Market { universe, cpi }, false))
}

fn parse_strategies(args: &BacktestArgs) -> Result<Vec<StrategySpec>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for raw in &args.strategies {
        let spec = match raw.to_ascii_lowercase().as_str() {
            "equ" => StrategySpec::equ(),
            "mkc" => StrategySpec::mkc(),
            "maxmedian" => StrategySpec::maxmedian(args.k),
            "basket" => StrategySpec::basket(args.zone, args.basket_weighting, args.k),
            other => match other
                .strip_prefix("basket-")
                .and_then(|r| r.split_once('-'))
            {
                Some((zone, weighting)) => StrategySpec::basket(
                    zone.parse().map_err(|e: String| anyhow!(e))?,
                    weighting.parse().map_err(|e: String| anyhow!(e))?,
                    args.k,
                ),
                None => bail!("unknown strategy {raw:?}"),
            },
        };
        if seen.insert(spec.name()) {
            out.push(spec);
        }
    }
    Ok(out)
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn annual_block(r: &BacktestResult, risk_free: f64) -> Result<(Option<AnnualStats>, String)> {
    let per_year = annual_returns(r)?;
    match summarize(&per_year, risk_free) {
        Ok(stats) => {
            let csv = report::annual_csv(&stats);
            Ok((Some(stats), csv))
        }
        Err(AnalyticsError::DegenerateSeries { .. }) => {
            let mut csv = String::from("period,return_pct\n");
            for (y, v) in &per_year {
                csv.push_str(&format!("{y},{v:.2}\n"));
            }
            Ok((None, csv))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_backtest(args: BacktestArgs) -> Result<()> {
    let specs = parse_strategies(&args)?;
    let fees =
        FeeModel::with_spread_bps(args.admin_fee, args.spread_bps).map_err(|e| anyhow!(e))?;
    if !(args.initial > 0.0) {
        bail!("--initial must be positive");
    }
    let (market, _) = load_market(&args.data, fees.admin_fee > 0.0)?;
    let u = &market.universe;
    let cal = u.calendar();

    let needs_lookback = specs.iter().any(|s| s.kind == StrategyKind::MaxMedian);
    let start = match args.start {
        Some(d) => d,
        None if needs_lookback => *u
            .dates_in_year(cal[0].year() + 1)
            .first()
            .ok_or_else(|| anyhow!("MaxMedian needs a full lookback year before the start date"))?,
        None => cal[0],
    };
    let end = args.end.unwrap_or(*cal.last().expect("non-empty calendar"));
    if start >= end {
        bail!("start {start} must be before end {end}");
    }

    let results: Vec<BacktestResult> = specs
        .par_iter()
        .map(|spec| {
            run_backtest(u, *spec, fees, &market.cpi, start, end, args.initial)
                .with_context(|| format!("strategy {spec}"))
        })
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut stats = Vec::new();
    let mut columns = Vec::new();
    for r in &results {
        let name = r.strategy.name();
        write(
            &args.out.join(format!("{name}_values.csv")),
            &report::values_csv(r),
        )?;
        write(
            &args.out.join(format!("{name}_trades.csv")),
            &report::trades_csv(r),
        )?;
        if !r.selections.is_empty() {
            write(
                &args.out.join(format!("{name}_selections.csv")),
                &report::selections_csv(r),
            )?;
        }
        let (s, csv) = annual_block(r, args.risk_free)?;
        write(&args.out.join(format!("{name}_annual.csv")), &csv)?;
        if let Some(s) = &s {
            columns.push((name.clone(), s.clone()));
        }
        stats.push(s);
    }
    if !columns.is_empty() {
        write(
            &args.out.join("annual_returns.csv"),
            &report::annual_table_csv(&columns),
        )?;
    }
    write(
        &args.out.join("final_values.csv"),
        &report::final_values_csv(&results),
    )?;
    write(&args.out.join("fees.csv"), &report::fees_csv(&results))?;
    let summary = report::summary_text(&results, &stats);
    write(&args.out.join("summary.txt"), &summary)?;
    let series: Vec<(String, Vec<(NaiveDate, f64)>)> = results
        .iter()
        .map(|r| (r.strategy.name(), r.daily_values.clone()))
        .collect();
    write(
        &args.out.join("cumulative.svg"),
        &report::cumulative_svg(&series, !args.linear),
    )?;

    print!("{summary}");
    for r in &results {
        if !r.frozen.is_empty() {
            println!(
                "{}: {} position-days held without a bar",
                r.strategy,
                r.frozen.len()
            );
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_select(args: SelectArgs) -> Result<()> {
    let (market, _) = load_market(&args.data, false)?;
    let u = &market.universe;
    let date = *u
        .dates_in_year(args.year)
        .first()
        .ok_or_else(|| anyhow!("no trading dates in {}", args.year))?;
    let ranking = maxmedian_ranking(u, date)?;
    if args.k == 0 || ranking.len() < args.k {
        return Err(StrategyError::InsufficientEligibleSecurities {
            date,
            eligible: ranking.len(),
            k: args.k,
        }
        .into());
    }
    print!(
        "{}",
        report::selection_listing(date, &ranking[..args.k], ranking.len())
    );
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let (market, synthetic) = load_market(&args.data, false)?;
    let u = &market.universe;
    let scratch;
    let dir: &Path = match (&args.out, synthetic) {
        (Some(out), true) => out,
        (Some(_), false) => bail!("--out is only used with --seed"),
        (None, _) => {
            scratch = tempfile::tempdir()?;
            scratch.path()
        }
    };
    write_universe(u, dir)?;
    write_cpi(&market.cpi, &dir.join(CPI_FILE))?;
    let reloaded = load_universe(dir)?;
    let reloaded_cpi = load_cpi(&dir.join(CPI_FILE))?;
    if &reloaded != u || reloaded_cpi != market.cpi {
        bail!("round trip through CSV changed the data");
    }
    let cal = u.calendar();
    println!(
        "ok: {} securities, {} trading dates ({} to {}), {} bars, {} calendar gaps, CPI {} to {}",
        u.securities().len(),
        cal.len(),
        cal[0],
        cal[cal.len() - 1],
        u.bar_count(),
        u.calendar_gaps().len(),
        market.cpi.first_month(),
        market.cpi.last_month(),
    );
    if synthetic {
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn is_infeasible(e: &StrategyError) -> bool {
    !matches!(e, StrategyError::Data(_))
}

/// Exit code and short kind for an error chain.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<StrategyError>() {
            if is_infeasible(e) {
                return (EXIT_INFEASIBLE, "strategy");
            }
        }
        if let Some(e) = cause.downcast_ref::<EngineError>() {
            match e {
                EngineError::Strategy(s) if is_infeasible(s) => {
                    return (EXIT_INFEASIBLE, "strategy")
                }
                EngineError::Aborted { source, .. } => {
                    if let EngineError::Strategy(s) = source.as_ref() {
                        if is_infeasible(s) {
                            return (EXIT_INFEASIBLE, "strategy");
                        }
                    }
                }
                _ => {}
            }
        }
    }
    for cause in err.chain() {
        if cause.downcast_ref::<DataError>().is_some() {
            return (EXIT_DATA, "data");
        }
    }
    (EXIT_FAILURE, "error")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "warn" } else { "error" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::Backtest(a) => cmd_backtest(a),
        Command::Select(a) => cmd_select(a),
        Command::ValidateData(a) => cmd_validate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            let message = format!("{err:#}").replace('\n', " ");
            eprintln!("error: code={code} kind={kind} message={message:?}");
            ExitCode::from(code)
        }
    }
}
