//! OU fits on cumulative residuals and the threshold rule's positions.

use rankarb::factor_model::DecompositionConfig;
use rankarb::market_sim::{generate_factor_ou_market, FactorOuConfig};
use rankarb::ou_strategy::{evaluate_trajectory, update_positions, FitOutcome, PositionState, ThresholdRule};
use rankarb::residual_panel::{cumulative_residuals, residual_series};

fn main() -> rankarb::Result<()> {
    let panel = generate_factor_ou_market(&FactorOuConfig::new(8, 400, 2.5, 5))?;
    let rows: Vec<usize> = (0..panel.n_assets()).collect();
    let series = residual_series(&panel, &rows, &DecompositionConfig::rank_space())?;
    let l = 60;
    let window = series.window(series.dates.len() - 1, l)?;
    let date = *series.dates.last().unwrap();
    let traj = cumulative_residuals(&window, date)?;
    let fits = evaluate_trajectory(&traj);

    let labels: Vec<String> = series.assets.iter().map(|a| a.to_string()).collect();
    let state = update_positions(&PositionState::flat(labels.clone()), &fits, &ThresholdRule::default(), date)?;
    for ((name, fit), pos) in labels.iter().zip(&fits).zip(&state.w_eps) {
        match fit {
            FitOutcome::Fitted { fit, signal } => println!(
                "{name}: tau {:5.2} days, s {:+.2}, position {pos:+}",
                fit.tau_days,
                signal.unwrap_or(f64::NAN)
            ),
            FitOutcome::Failed => println!("{name}: fit failed"),
        }
    }
    Ok(())
}
