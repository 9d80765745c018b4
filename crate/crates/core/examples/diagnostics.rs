//! Spectrum, mean-reversion times and switching times for a simulated market.

use rankarb::pipeline::{self, Config};

fn main() -> rankarb::Result<()> {
    let mut cfg = Config::default();
    cfg.n_assets = 30;
    cfg.n_days = 340;
    cfg.minutes_per_day = 120;
    let market = pipeline::load_market(&cfg)?;
    let d = pipeline::run_diagnostics(&market, &cfg)?;
    let s = &d.spectrum;
    println!(
        "spectrum: largest {:.2}, edges [{:.3}, {:.3}], {:.1}% of the bulk outside",
        s.eigenvalues[0],
        s.mp_lower,
        s.mp_upper,
        100.0 * s.fraction_outside()
    );
    for (space, tau) in [("rank", &d.tau_rank), ("name", &d.tau_name)] {
        println!(
            "{space}: tau mode {:?} days, {:.1}% above 30, {} not mean-reverting",
            tau.histogram.mode(),
            100.0 * tau.frac_above_30,
            tau.non_mean_reverting
        );
    }
    println!("{} strategy-map rows, {} switching gaps", d.strategy_map.len(), d.switching.as_ref().map_or(0, |s| s.n_gaps));
    Ok(())
}
