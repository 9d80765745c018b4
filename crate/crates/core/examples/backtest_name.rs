//! Name-space OU backtest on a synthetic factor market.

use rankarb::pipeline::{self, Config, MarketKind};
use rankarb::Space;

fn main() -> rankarb::Result<()> {
    let mut cfg = Config::default();
    cfg.market = MarketKind::FactorOu;
    cfg.n_assets = 30;
    cfg.n_days = 500;
    cfg.n_factors = 5;
    cfg.tau_days = 6.0;
    let market = pipeline::load_market(&cfg)?;
    let bt = pipeline::run_backtest(&market, &cfg, Space::Name)?;
    println!("terminal value {:.4} after {} days", bt.series.terminal(), bt.series.value.len() - 1);
    for y in &bt.metrics {
        println!("  {}: return {:+.3}, vol {:.3}, sharpe {:?}", y.year, y.annual_return, y.annual_vol, y.sharpe);
    }
    Ok(())
}
