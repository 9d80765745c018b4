//! One day of rank-to-name rebalancing with its latency and spread ledger.

use rankarb::market_sim::{generate_atlas_market, AtlasConfig};
use rankarb::rebalance_engine::simulate_day;

fn main() -> rankarb::Result<()> {
    let mut cfg = AtlasConfig::new(2, 6, 4);
    cfg.initial_caps = Some(vec![1e9, 1e9]);
    let (_, intraday) = generate_atlas_market(&cfg)?;
    let eta = 2e-4;
    for interval in [5, 30, 195] {
        let (mut latency, mut spread, mut trades) = (0.0, 0.0, 0);
        for day in &intraday {
            let r = simulate_day(&[1.0, -1.0], day, interval, eta)?;
            latency += r.ledger.total_latency();
            spread += r.ledger.total_spread();
            trades += r.ledger.points.iter().filter(|p| p.spread_cost > 0.0).count();
        }
        println!("every {interval:3} min: {trades:4} trades, latency {latency:+.5}, spread {spread:.5}");
    }
    Ok(())
}
