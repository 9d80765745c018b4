//! Rank-space backtest with intraday rebalancing and its daily cost summary.

use rankarb::pipeline::{self, Config};
use rankarb::Space;

fn main() -> rankarb::Result<()> {
    let mut cfg = Config::default();
    cfg.n_assets = 20;
    cfg.n_days = 360;
    cfg.minutes_per_day = 78;
    cfg.interval = 13;
    let market = pipeline::load_market(&cfg)?;
    let bt = pipeline::run_backtest(&market, &cfg, Space::Rank)?;
    println!("terminal value {:.4}", bt.series.terminal());
    let days = &bt.rank_days;
    let latency: f64 = days.iter().map(|d| d.total_latency).sum();
    let spread: f64 = days.iter().map(|d| d.total_spread).sum();
    let open: f64 = days.iter().map(|d| d.open_cost).sum();
    println!("{} days: open cost {open:.5}, latency {latency:+.5}, spread {spread:.5}", days.len());
    Ok(())
}
