use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use catforecast::backtest::{run_backtest, BacktestConfig, TradeLedger};
use catforecast::categorize::Basis;
use catforecast::market_data::{aggregate_frames, parse_kline_csv_frames, FrameSeries};
use catforecast::pipeline::{
    build_training_dataset, load_corpus, train_all, walk_forward, ExperimentConfig, RunReport, SelectorMode,
    TrainedModels,
};
use catforecast::synth::{generate_synthetic, SynthKind};

#[derive(Parser)]
#[command(name = "catforecast", version, about = "Category-partitioned volatility forecasting and backtesting")]
struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Selector mode: markov, oracle or none.
    #[arg(long, global = true)]
    mode: Option<SelectorMode>,
    /// Frame size in minutes.
    #[arg(long, global = true)]
    frame_minutes: Option<u32>,
    /// Bit basis: volatility_change or price_direction.
    #[arg(long, global = true)]
    basis: Option<Basis>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a kline CSV and write it back in canonical form.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        pair: String,
        #[arg(long, default_value_t = 1)]
        source_minutes: u32,
        #[arg(long)]
        output: PathBuf,
    },
    /// Merge klines into larger frames (default 7 minutes).
    Aggregate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        pair: String,
        #[arg(long, default_value_t = 1)]
        source_minutes: u32,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build and save the categorized training dataset.
    Dataset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train every category model and the selector.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Walk-forward evaluation; trains first unless --models is given.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Also write the trade ledger as CSV.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Re-run the backtest of a report's predictions, optionally with other fees.
    Backtest {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        fee_rate: Option<f64>,
        #[arg(long)]
        initial_quote: Option<f64>,
        /// Keep an open position at the end instead of selling it.
        #[arg(long)]
        no_liquidate: bool,
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Write a synthetic 1-minute kline CSV.
    Synth {
        #[arg(long)]
        kind: SynthKind,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print a summary of a run report.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config: ExperimentConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(mode) = cli.mode {
        config.mode = mode;
    }
    if let Some(m) = cli.frame_minutes {
        config.frame_minutes = m;
    }
    if let Some(b) = cli.basis {
        config.scheme.basis = b;
    }
    config.validate()?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

fn read_series(path: &Path, pair: &str, source_minutes: u32) -> Result<FrameSeries> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(parse_kline_csv_frames(BufReader::new(file), pair, source_minutes)?)
}

fn write_series(series: &FrameSeries, path: &Path) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    series.write_csv(BufWriter::new(file))?;
    Ok(())
}

fn write_ledger(ledger: &TradeLedger, path: &Path) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    ledger.write_csv(BufWriter::new(file))?;
    Ok(())
}

fn replay_backtest(report: &RunReport, config: &BacktestConfig) -> Result<TradeLedger> {
    Ok(run_backtest(&report.directions(), &report.backtest_closes(), config)?)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest {
            input,
            pair,
            source_minutes,
            output,
        } => {
            let series = read_series(input, pair, *source_minutes)?;
            write_series(&series, output)?;
            println!("{}: {} frames of {} min", pair, series.len(), series.frame_minutes());
        }
        Command::Aggregate {
            input,
            pair,
            source_minutes,
            output,
        } => {
            let series = read_series(input, pair, *source_minutes)?;
            let target = cli.frame_minutes.unwrap_or(7);
            let out = aggregate_frames(&series, target)?;
            write_series(&out, output)?;
            println!("{}: {} frames -> {} frames of {} min", pair, series.len(), out.len(), target);
        }
        Command::Dataset { config, output } => {
            let (config, base) = load_config(&cli, config)?;
            let corpus = load_corpus(&config, &base)?;
            let ds = build_training_dataset(&config, &corpus)?;
            ds.save(output)?;
            println!(
                "{} windows in {} categories ({} empty)",
                ds.total_windows(),
                ds.buckets.len(),
                ds.empty_categories().len()
            );
        }
        Command::Train { config, output } => {
            let (config, base) = load_config(&cli, config)?;
            let corpus = load_corpus(&config, &base)?;
            let started = Instant::now();
            let models = train_all(&config, &corpus)?;
            models.save(output)?;
            eprintln!("trained in {:.1}s", started.elapsed().as_secs_f64());
            println!(
                "{} models, {} empty categories, saved to {}",
                models.store.models.len(),
                models.store.empty_categories.len(),
                output.display()
            );
        }
        Command::Evaluate {
            config,
            models,
            output,
            ledger,
        } => {
            let (config, base) = load_config(&cli, config)?;
            let corpus = load_corpus(&config, &base)?;
            let started = Instant::now();
            let models = match models {
                Some(dir) => TrainedModels::load(dir)?,
                None => train_all(&config, &corpus)?,
            };
            let report = walk_forward(&config, &corpus, &models)?;
            fs::write(output, report.to_json()).with_context(|| format!("writing {}", output.display()))?;
            if let Some(path) = ledger {
                write_ledger(&replay_backtest(&report, &config.backtest)?, path)?;
            }
            // timing stays out of the report so reruns compare byte for byte
            eprintln!("evaluated in {:.1}s", started.elapsed().as_secs_f64());
            print_summary(&report);
        }
        Command::Backtest {
            report,
            fee_rate,
            initial_quote,
            no_liquidate,
            ledger,
        } => {
            let text = fs::read_to_string(report).with_context(|| format!("reading {}", report.display()))?;
            let report = RunReport::from_json(&text)?;
            let mut cfg = report.config.backtest.clone();
            if let Some(f) = fee_rate {
                cfg.fee_rate = *f;
            }
            if let Some(q) = initial_quote {
                cfg.initial_quote = *q;
            }
            if *no_liquidate {
                cfg.liquidate_at_end = false;
            }
            let result = replay_backtest(&report, &cfg)?;
            let bh = catforecast::backtest::buy_and_hold(&report.backtest_closes(), &cfg)?;
            if let Some(path) = ledger {
                write_ledger(&result, path)?;
            }
            println!("trades        {}", result.trades.len());
            println!("final value   {}", result.final_value);
            println!("buy and hold  {}", bh);
        }
        Command::Synth { kind, length, output } => {
            let series = generate_synthetic(*kind, *length, cli.seed.unwrap_or(64))?;
            write_series(&series, output)?;
            println!("{}: {} frames", series.pair_id(), series.len());
        }
        Command::Report { input } => {
            let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
            let report = RunReport::from_json(&text)?;
            if report.format_version != catforecast::pipeline::REPORT_FORMAT_VERSION {
                bail!("unsupported report version {}", report.format_version);
            }
            print_summary(&report);
        }
    }
    Ok(())
}

fn print_summary(r: &RunReport) {
    let mut out = std::io::stdout().lock();
    let fmt_opt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    let _ = writeln!(out, "target        {} ({} mode, {} steps)", r.config.target, r.config.mode, r.steps.len());
    let _ = writeln!(out, "accuracy      {}", fmt_opt(r.metrics.accuracy));
    let _ = writeln!(out, "precision     {}", fmt_opt(r.metrics.precision));
    let _ = writeln!(
        out,
        "confusion     tp {} fp {} tn {} fn {}",
        r.metrics.tp, r.metrics.fp, r.metrics.tn, r.metrics.fn_
    );
    if let Some(s) = &r.selector {
        let _ = writeln!(
            out,
            "selector      {:.4} (frozen {:.4}, online {:.4})",
            s.accuracy, s.frozen_accuracy, s.online_accuracy
        );
    }
    let _ = writeln!(out, "fallbacks     {}", r.fallback_count);
    let _ = writeln!(out, "final value   {:.4}", r.backtest.final_value);
    let _ = writeln!(out, "buy and hold  {:.4}", r.backtest.buy_and_hold);
}
