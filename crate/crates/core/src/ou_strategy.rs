//! Ornstein-Uhlenbeck fits of cumulative residual paths, s-scores and the
//! threshold position rule.

use std::io::Write;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::residual_panel::CumulativeTrajectory;
use crate::{Error, Result, TRADING_DAYS};

/// AR(1) fit `x_a = a + b x_{a-1}` mapped onto OU parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuFit {
    pub a: f64,
    pub b: f64,
    /// Mean-reversion speed per year, `-ln(b) * 252`.
    pub kappa: f64,
    /// Mean-reversion time in days, `252 / kappa`.
    pub tau_days: f64,
    pub m: f64,
    /// Equilibrium standard deviation `sqrt(resid_var / (1 - b^2))`.
    pub sigma: f64,
    pub resid_var: f64,
    pub r2: f64,
}

impl OuFit {
    pub fn is_mean_reverting(&self) -> bool {
        self.b > 0.0 && self.b < 1.0
    }
}

/// Least-squares AR(1) fit of a cumulative residual path.
///
/// Outside `0 < b < 1` the OU quantities are not defined: `kappa`, `m` and `sigma`
/// are NaN and `tau_days` is infinite.
pub fn fit_ou(x: &[f64]) -> Result<OuFit> {
    let l = x.len();
    if l < 3 {
        return Err(Error::Domain(format!("OU fit needs at least 3 points, got {l}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("OU path contains non-finite values".into()));
    }
    let (prev, next) = (&x[..l - 1], &x[1..]);
    let n = (l - 1) as f64;
    let mx = prev.iter().sum::<f64>() / n;
    let my = next.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (p, q) in prev.iter().zip(next) {
        sxx += (p - mx) * (p - mx);
        sxy += (p - mx) * (q - my);
        syy += (q - my) * (q - my);
    }
    if !(sxx > 0.0) {
        return Err(Error::Fit("OU regressor has zero variance".into()));
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let ssr = prev
        .iter()
        .zip(next)
        .map(|(p, q)| (q - a - b * p).powi(2))
        .sum::<f64>()
        .max(0.0);
    let dof = (n - 2.0).max(1.0);
    let resid_var = ssr / dof;
    let r2 = if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 };

    let mut fit = OuFit {
        a,
        b,
        kappa: f64::NAN,
        tau_days: f64::INFINITY,
        m: f64::NAN,
        sigma: f64::NAN,
        resid_var,
        r2,
    };
    if fit.is_mean_reverting() {
        fit.kappa = -b.ln() * TRADING_DAYS;
        fit.tau_days = TRADING_DAYS / fit.kappa;
        fit.m = a / (1.0 - b);
        fit.sigma = (resid_var / (1.0 - b * b)).sqrt();
    }
    Ok(fit)
}

/// s-score `(x - m) / sigma`; `None` when sigma is zero or undefined.
pub fn signal(fit: &OuFit, x_terminal: f64) -> Option<f64> {
    if fit.sigma > 0.0 && fit.sigma.is_finite() && fit.m.is_finite() {
        Some((x_terminal - fit.m) / fit.sigma)
    } else {
        None
    }
}

/// Open/close bands and the mean-reversion-time filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub open: f64,
    pub close: f64,
    pub max_tau_days: f64,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule {
            open: 1.25,
            close: 0.5,
            max_tau_days: 30.0,
        }
    }
}

impl ThresholdRule {
    /// Next residual-space position for one asset.
    ///
    /// Flat opens short above `open` and long below `-open`; a long is held while
    /// `s < -close`, a short while `s > close`. Slow reversion (`tau >= max_tau_days`),
    /// a non-mean-reverting fit or a missing signal force the position to zero.
    pub fn next_position(&self, prev: i8, s: Option<f64>, tau_days: f64) -> i8 {
        let Some(s) = s else { return 0 };
        if !(tau_days < self.max_tau_days) || !s.is_finite() {
            return 0;
        }
        match prev {
            0 if s > self.open => -1,
            0 if s < -self.open => 1,
            1 if s < -self.close => 1,
            -1 if s > self.close => -1,
            _ => 0,
        }
    }
}

/// Residual-space positions in `{-1, 0, 1}` for an ordered universe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionState {
    pub assets: Vec<String>,
    pub w_eps: Vec<i8>,
    pub opened_at: Vec<Option<NaiveDate>>,
}

impl PositionState {
    pub fn flat(assets: Vec<String>) -> Self {
        let n = assets.len();
        PositionState {
            assets,
            w_eps: vec![0; n],
            opened_at: vec![None; n],
        }
    }

    pub fn is_flat(&self) -> bool {
        self.w_eps.iter().all(|&w| w == 0)
    }

    /// Carries positions over to a new universe by identifier; new members start flat.
    pub fn realign(&self, assets: &[String]) -> PositionState {
        let mut out = PositionState::flat(assets.to_vec());
        for (j, id) in assets.iter().enumerate() {
            if let Some(i) = self.assets.iter().position(|a| a == id) {
                out.w_eps[j] = self.w_eps[i];
                out.opened_at[j] = self.opened_at[i];
            }
        }
        out
    }
}

/// One asset's fit outcome on a date.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FitOutcome {
    Fitted { fit: OuFit, signal: Option<f64> },
    Failed,
}

impl FitOutcome {
    pub fn signal(&self) -> Option<f64> {
        match self {
            FitOutcome::Fitted { fit, signal } if fit.is_mean_reverting() => *signal,
            _ => None,
        }
    }

    pub fn tau_days(&self) -> f64 {
        match self {
            FitOutcome::Fitted { fit, .. } => fit.tau_days,
            FitOutcome::Failed => f64::INFINITY,
        }
    }

    pub fn flag(&self) -> &'static str {
        match self {
            FitOutcome::Failed => "fit_error",
            FitOutcome::Fitted { fit, .. } if !fit.is_mean_reverting() => "non_mean_reverting",
            FitOutcome::Fitted { signal: None, .. } => "zero_sigma",
            FitOutcome::Fitted { .. } => "ok",
        }
    }
}

/// Fits every row of a trajectory and scores its terminal point.
pub fn evaluate_trajectory(x: &CumulativeTrajectory) -> Vec<FitOutcome> {
    x.values
        .row_iter()
        .map(|row| {
            let path: Vec<f64> = row.iter().copied().collect();
            match fit_ou(&path) {
                Ok(fit) => FitOutcome::Fitted {
                    fit,
                    signal: signal(&fit, path[path.len() - 1]),
                },
                Err(_) => FitOutcome::Failed,
            }
        })
        .collect()
}

/// Applies the rule asset by asset. `outcomes` must follow `prev.assets`.
pub fn update_positions(
    prev: &PositionState,
    outcomes: &[FitOutcome],
    rule: &ThresholdRule,
    date: NaiveDate,
) -> Result<PositionState> {
    if outcomes.len() != prev.w_eps.len() {
        return Err(Error::Domain(format!(
            "{} fit outcomes for a universe of {}",
            outcomes.len(),
            prev.w_eps.len()
        )));
    }
    let mut next = prev.clone();
    for (i, o) in outcomes.iter().enumerate() {
        let w = rule.next_position(prev.w_eps[i], o.signal(), o.tau_days());
        next.w_eps[i] = w;
        next.opened_at[i] = match (prev.w_eps[i], w) {
            (_, 0) => None,
            (p, q) if p == q => prev.opened_at[i],
            _ => Some(date),
        };
    }
    Ok(next)
}

/// Equity weights of a residual-space position.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyWeights {
    pub weights: DVector<f64>,
    /// No position open (or the projection vanished); weights are all zero.
    pub flat: bool,
}

/// `Phi^T w_eps / ||Phi^T w_eps||_1`, or zeros with the flat flag.
pub fn project_weights(projector: &DMatrix<f64>, w_eps: &DVector<f64>) -> Result<StrategyWeights> {
    if projector.nrows() != w_eps.len() {
        return Err(Error::Domain(format!(
            "projector is {:?} but residual weights have {} entries",
            projector.shape(),
            w_eps.len()
        )));
    }
    let n = projector.ncols();
    let w = projector.tr_mul(w_eps);
    let l1 = w.lp_norm(1);
    if !(l1 > 1e-12) {
        return Ok(StrategyWeights {
            weights: DVector::zeros(n),
            flat: true,
        });
    }
    Ok(StrategyWeights {
        weights: w / l1,
        flat: false,
    })
}

pub fn strategy_weights(projector: &DMatrix<f64>, state: &PositionState) -> Result<StrategyWeights> {
    let w = DVector::from_iterator(state.w_eps.len(), state.w_eps.iter().map(|&x| x as f64));
    project_weights(projector, &w)
}

/// Writes `date,asset,a,b,kappa,tau_days,m,sigma,r2,flag` rows for one date.
pub fn write_fit_table<W: Write>(
    w: &mut csv::Writer<W>,
    date: NaiveDate,
    assets: &[String],
    outcomes: &[FitOutcome],
) -> Result<()> {
    for (id, o) in assets.iter().zip(outcomes) {
        let date = date.to_string();
        let flag = o.flag();
        match o {
            FitOutcome::Fitted { fit, .. } => {
                let nums = [fit.a, fit.b, fit.kappa, fit.tau_days, fit.m, fit.sigma, fit.r2].map(|v| v.to_string());
                let mut rec = vec![date, id.clone()];
                rec.extend(nums);
                rec.push(flag.to_string());
                w.write_record(&rec)?;
            }
            FitOutcome::Failed => {
                let mut rec = vec![date, id.clone()];
                rec.extend(std::iter::repeat_n(String::new(), 7));
                rec.push(flag.to_string());
                w.write_record(&rec)?;
            }
        }
    }
    Ok(())
}

pub const FIT_TABLE_HEADER: [&str; 10] = ["date", "asset", "a", "b", "kappa", "tau_days", "m", "sigma", "r2", "flag"];
