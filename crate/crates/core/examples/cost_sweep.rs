//! Terminal value and Sharpe across rebalance intervals.

use rankarb::pipeline::{self, Config, NumList, SweepParam};
use rankarb::Space;

fn main() -> rankarb::Result<()> {
    let mut cfg = Config::default();
    cfg.n_assets = 20;
    cfg.n_days = 360;
    cfg.minutes_per_day = 390;
    cfg.sweep = SweepParam::Interval;
    cfg.sweep_values = NumList(vec![5.0, 30.0, 225.0, 390.0]);
    let market = pipeline::load_market(&cfg)?;
    for row in pipeline::run_sweep(&market, &cfg, Space::Rank)? {
        let sharpe = row.summary.and_then(|m| m.sharpe);
        println!("interval {:4}: V = {:.5}, sharpe {sharpe:?}", row.value, row.terminal_value);
    }
    Ok(())
}
