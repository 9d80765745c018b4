//! Generates an Atlas-style market and prints how often the two leaders swap.

use rankarb::market_sim::{generate_atlas_market, AtlasConfig};
use rankarb::rank_view::compute_ranks;

fn main() -> rankarb::Result<()> {
    let mut cfg = AtlasConfig::new(10, 60, 7);
    // the bottom rank drifts up, everyone else is flat
    cfg.rank_drifts[9] = 0.002;
    cfg.factor_loading = 0.3;
    let (daily, intraday) = generate_atlas_market(&cfg)?;
    println!("{} assets x {} dates, {} intraday days", daily.n_assets(), daily.n_dates(), intraday.len());

    let mut swaps = 0;
    let mut leader = compute_ranks(&daily.caps_at(0))?.name_at(0);
    for t in 1..daily.n_dates() {
        let now = compute_ranks(&daily.caps_at(t))?.name_at(0);
        if now != leader {
            swaps += 1;
            leader = now;
        }
    }
    println!("the largest cap changed hands {swaps} times at the daily close");
    let last = daily.n_dates() - 1;
    for (i, a) in daily.assets().iter().enumerate() {
        println!("  {a}: {:.3e} -> {:.3e}", daily.caps()[(i, 0)], daily.caps()[(i, last)]);
    }
    Ok(())
}
