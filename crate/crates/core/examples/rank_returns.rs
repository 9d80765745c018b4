//! Rank returns versus name returns on one date, and the rank-indexed panel.

use rankarb::market_sim::{generate_atlas_market, AtlasConfig};
use rankarb::rank_view::{compute_ranks, rank_panel, rank_returns};

fn main() -> rankarb::Result<()> {
    let (daily, _) = generate_atlas_market(&AtlasConfig::new(6, 30, 1))?;
    let t = 20;
    let prev = compute_ranks(&daily.caps_at(t - 1))?;
    let rr = rank_returns(&daily, t)?;
    println!("date {}", daily.dates()[t]);
    for (k, r) in rr.iter().enumerate() {
        let holder = prev.name_at(k);
        println!(
            "  rank {k}: held by {} yesterday, rank return {:+.5}, its own return {:+.5}",
            daily.assets()[holder],
            r,
            daily.returns()[(holder, t)]
        );
    }
    let ranked = rank_panel(&daily, None)?;
    println!("rank panel: {} ranks x {} dates, rows {:?}", ranked.n_assets(), ranked.n_dates(), ranked.assets());
    Ok(())
}
