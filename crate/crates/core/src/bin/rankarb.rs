use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rankarb::pipeline::{self, Config};
use rankarb::{Result, Space};

#[derive(Parser)]
#[command(name = "rankarb", version, about = "Statistical arbitrage backtests in name and rank space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic market and write its CSV panels.
    Simulate(Common),
    /// Fit the factor model at one date and write it as JSON.
    Decompose(Common),
    /// Name-space backtest.
    BacktestName(Common),
    /// Rank-space backtest with intraday rebalancing.
    BacktestRank(Common),
    /// Spectra, mean-reversion times, residual densities, strategy map, switching times.
    Diagnose(Common),
    /// Re-run a backtest over several cost factors or rebalance intervals.
    Sweep(SweepArgs),
    /// Write trajectories for an external trainer plus the OU weight stream.
    ExportTrain(Common),
    /// Validate an imported residual-weight stream against the engine universes.
    ImportWeights(Common),
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    daily: Option<String>,
    #[arg(long)]
    intraday: Option<String>,
    #[arg(long)]
    risk_free: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    interval: Option<String>,
    #[arg(long)]
    leverage: Option<String>,
    /// `ou` or `nn`.
    #[arg(long)]
    strategy: Option<String>,
    /// Weight-stream JSONL.
    #[arg(long)]
    weights: Option<String>,
    /// `name` or `rank`.
    #[arg(long)]
    space: Option<String>,
    #[arg(long)]
    as_of: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// `eta` or `interval`.
    #[arg(long)]
    param: Option<String>,
    /// Comma-separated values.
    #[arg(long)]
    values: Option<String>,
}

impl Common {
    fn config(&self) -> Result<Config> {
        let mut c = match &self.config {
            Some(p) => Config::from_file(p)?,
            None => Config::default(),
        };
        for kv in &self.set {
            c.apply_override(kv)?;
        }
        let flags = [
            ("out_dir", &self.out),
            ("seed", &self.seed),
            ("daily", &self.daily),
            ("intraday", &self.intraday),
            ("risk_free", &self.risk_free),
            ("eta", &self.eta),
            ("interval", &self.interval),
            ("leverage", &self.leverage),
            ("strategy", &self.strategy),
            ("weights", &self.weights),
            ("space", &self.space),
            ("as_of", &self.as_of),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                c.set(k, v)?;
            }
        }
        Ok(c)
    }
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let c = a.config()?;
            report(&pipeline::run_simulate(&c)?);
        }
        Command::Decompose(a) => {
            let c = a.config()?;
            let m = pipeline::load_market(&c)?;
            let model = pipeline::run_decompose(&m, &c)?;
            println!("{} space, K={}, as of {}", c.space, model.k, model.as_of);
            report(&[pipeline::write_decompose(&model, &c)?]);
        }
        Command::BacktestName(a) => backtest(a, Space::Name)?,
        Command::BacktestRank(a) => backtest(a, Space::Rank)?,
        Command::Diagnose(a) => {
            let c = a.config()?;
            let m = pipeline::load_market(&c)?;
            let d = pipeline::run_diagnostics(&m, &c)?;
            println!(
                "spectrum: {} eigenvalues, {:.1}% of the bulk outside [{:.3}, {:.3}]",
                d.spectrum.eigenvalues.len(),
                100.0 * d.spectrum.fraction_outside(),
                d.spectrum.mp_lower,
                d.spectrum.mp_upper
            );
            report(&pipeline::write_diagnostics(&d, &c)?);
        }
        Command::Sweep(s) => {
            let mut c = s.common.config()?;
            if let Some(p) = &s.param {
                c.set("sweep", p)?;
            }
            if let Some(v) = &s.values {
                c.set("sweep_values", v)?;
            }
            let space = if s.common.space.is_some() || c.sweep == pipeline::SweepParam::Interval {
                c.space
            } else {
                Space::Name
            };
            let m = pipeline::load_market(&c)?;
            let rows = pipeline::run_sweep(&m, &c, space)?;
            for r in &rows {
                let sharpe = r.summary.and_then(|m| m.sharpe).map(|s| format!("{s:.3}")).unwrap_or("-".into());
                println!("{}={}  V={:.6}  sharpe={sharpe}", c.sweep, r.value, r.terminal_value);
            }
            report(&[pipeline::write_sweep(&rows, &c, space)?]);
        }
        Command::ExportTrain(a) => {
            let c = a.config()?;
            let m = pipeline::load_market(&c)?;
            let (t, w) = pipeline::run_export_train(&m, &c)?;
            report(&[t, w]);
        }
        Command::ImportWeights(a) => {
            let c = a.config()?;
            let m = pipeline::load_market(&c)?;
            let r = pipeline::run_import_weights(&m, &c)?;
            println!(
                "{} records accepted, {} rejected, {} decision dates without weights",
                r.accepted,
                r.rejected.len(),
                r.missing.len()
            );
            for rej in &r.rejected {
                println!("  line {} ({}): {}", rej.line, rej.date, rej.reason);
            }
            report(&[pipeline::write_import_report(&r, &c)?]);
        }
    }
    Ok(())
}

fn backtest(a: Common, space: Space) -> Result<()> {
    let c = a.config()?;
    let m = pipeline::load_market(&c)?;
    for w in &m.warnings {
        eprintln!("warning: line {} ({} {}): {}", w.line, w.date, w.asset, w.message);
    }
    let bt = pipeline::run_backtest(&m, &c, space)?;
    if !bt.run.nn_missing.is_empty() {
        eprintln!("warning: {} decision dates had no imported weights and stayed flat", bt.run.nn_missing.len());
    }
    for r in &bt.rejected {
        eprintln!("warning: rejected weight record at line {}: {}", r.line, r.reason);
    }
    println!("{space} space: terminal value {:.6}", bt.series.terminal());
    for y in &bt.metrics {
        let sharpe = y.sharpe.map(|s| format!("{s:.3}")).unwrap_or("-".into());
        println!("  {}  return {:+.4}  vol {:.4}  sharpe {sharpe}", y.year, y.annual_return, y.annual_vol);
    }
    report(&pipeline::write_backtest(&bt, &c)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
