//! PCA decomposition of a factor market: projector identities and residuals.

use nalgebra::DVector;
use rankarb::factor_model::{decompose, residuals, DecompositionConfig};
use rankarb::market_sim::{generate_factor_ou_market, FactorOuConfig};
use rankarb::residual_panel::excess_window;

fn main() -> rankarb::Result<()> {
    let mut cfg = FactorOuConfig::new(30, 300, 4.0, 3);
    cfg.n_factors = 3;
    let panel = generate_factor_ou_market(&cfg)?;
    let rows: Vec<usize> = (0..panel.n_assets()).collect();
    let dcfg = DecompositionConfig { k: 3, ..DecompositionConfig::name_space() };
    let end = panel.n_dates() - 1;
    let window = excess_window(&panel, &rows, end, dcfg.factor_window)?;
    let labels = panel.assets().iter().map(|a| a.to_string()).collect();
    let model = decompose(&window, labels, panel.dates()[end], &dcfg)?;

    println!("top singular values {:?}", model.singular_values);
    println!("max |Phi beta| = {:.2e}", (&model.projector * &model.loadings).amax());
    let today = DVector::from_iterator(rows.len(), window.column(dcfg.factor_window - 1).iter().copied());
    let eps = residuals(&model.projector, &today)?;
    println!("today's return norm {:.4}, residual norm {:.4}", today.norm(), eps.norm());
    Ok(())
}
