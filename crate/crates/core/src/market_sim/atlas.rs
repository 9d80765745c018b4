//! Synthetic market generators.
//!
//! [`generate_atlas_market`] drives log-capitalizations with drift and volatility
//! looked up by the asset's current capitalization rank, at minute resolution.
//! [`generate_factor_ou_market`] builds a daily factor market whose idiosyncratic
//! parts are increments of Ornstein-Uhlenbeck processes with a known mean-reversion
//! time, which is what the strategy comparisons need as ground truth.

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{AssetId, IntradayPanel, MarketPanel};
use crate::{Error, Result};

/// Weekday calendar of `n` trading days starting at `start` (weekends skipped).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("calendar overflow");
    }
    out
}

fn asset_ids(n: usize) -> Vec<AssetId> {
    let width = n.saturating_sub(1).to_string().len().max(3);
    (0..n).map(|i| AssetId(format!("A{i:0width$}"))).collect()
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2006, 1, 3).unwrap()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtlasConfig {
    pub n_assets: usize,
    /// Number of dates in the daily panel; the first date holds the initial caps.
    pub n_days: usize,
    pub minutes_per_day: usize,
    /// Log-drift per day for each rank (index 0 = largest cap).
    pub rank_drifts: Vec<f64>,
    /// Log-volatility per square-root day for each rank.
    pub rank_vols: Vec<f64>,
    pub seed: u64,
    /// Starting capitalizations; defaults to a geometric ladder.
    pub initial_caps: Option<Vec<f64>>,
    /// Loading on a common Brownian factor in `[0, 1)`; 0 gives independent motions.
    pub factor_loading: f64,
    pub start: NaiveDate,
    pub risk_free: f64,
}

impl AtlasConfig {
    pub fn new(n_assets: usize, n_days: usize, seed: u64) -> Self {
        AtlasConfig {
            n_assets,
            n_days,
            minutes_per_day: 390,
            rank_drifts: vec![0.0; n_assets],
            rank_vols: vec![0.02; n_assets],
            seed,
            initial_caps: None,
            factor_loading: 0.0,
            start: default_start(),
            risk_free: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_assets < 2 {
            return bad(format!("atlas market needs at least 2 assets, got {}", self.n_assets));
        }
        if self.n_days < 1 {
            return bad("atlas market needs at least one day".into());
        }
        if self.minutes_per_day < 2 {
            return bad(format!("minutes_per_day must be >= 2, got {}", self.minutes_per_day));
        }
        if self.rank_drifts.len() != self.n_assets || self.rank_vols.len() != self.n_assets {
            return bad(format!(
                "rank_drifts ({}) and rank_vols ({}) must have one entry per asset ({})",
                self.rank_drifts.len(),
                self.rank_vols.len(),
                self.n_assets
            ));
        }
        if self.rank_vols.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("rank_vols must be finite and non-negative".into());
        }
        if self.rank_drifts.iter().any(|v| !v.is_finite()) {
            return bad("rank_drifts must be finite".into());
        }
        if !(0.0..1.0).contains(&self.factor_loading) {
            return bad(format!("factor_loading must lie in [0, 1), got {}", self.factor_loading));
        }
        if let Some(c) = &self.initial_caps {
            if c.len() != self.n_assets || c.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return bad("initial_caps must hold one positive cap per asset".into());
            }
        }
        Ok(())
    }
}

/// Simulates an Atlas-style market at minute resolution and samples it at day ends.
///
/// Returns the daily panel and one intraday panel for every date after the first;
/// each intraday panel starts at the prior close and ends exactly on the day's close.
pub fn generate_atlas_market(config: &AtlasConfig) -> Result<(MarketPanel, Vec<IntradayPanel>)> {
    config.validate()?;
    let n = config.n_assets;
    let m = config.minutes_per_day;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut log_caps: Vec<f64> = match &config.initial_caps {
        Some(c) => c.iter().map(|x| x.ln()).collect(),
        None => (0..n).map(|i| (1e10f64).ln() - 0.03 * i as f64).collect(),
    };
    let dates = business_days(config.start, config.n_days);
    let assets = asset_ids(n);
    let mut daily = DMatrix::zeros(n, config.n_days);
    for i in 0..n {
        daily[(i, 0)] = log_caps[i].exp();
    }

    let dt = 1.0 / (m - 1) as f64;
    let sqrt_dt = dt.sqrt();
    let common = config.factor_loading;
    let idio = (1.0 - common * common).sqrt();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shocks = vec![0.0; n];
    let mut intraday = Vec::with_capacity(config.n_days.saturating_sub(1));

    for day in 1..config.n_days {
        let mut minute_caps = DMatrix::zeros(n, m);
        for i in 0..n {
            minute_caps[(i, 0)] = daily[(i, day - 1)];
        }
        for minute in 1..m {
            order.sort_by(|&a, &b| log_caps[b].total_cmp(&log_caps[a]).then(a.cmp(&b)));
            let z_common: f64 = rng.sample(StandardNormal);
            for s in shocks.iter_mut() {
                *s = rng.sample(StandardNormal);
            }
            for (rank, &i) in order.iter().enumerate() {
                let shock = common * z_common + idio * shocks[i];
                log_caps[i] += config.rank_drifts[rank] * dt + config.rank_vols[rank] * sqrt_dt * shock;
            }
            for i in 0..n {
                minute_caps[(i, minute)] = log_caps[i].exp();
            }
        }
        for i in 0..n {
            daily[(i, day)] = minute_caps[(i, m - 1)];
        }
        let minutes = (1..=m as u32).collect();
        intraday.push(IntradayPanel::new(dates[day], minutes, assets.clone(), minute_caps)?);
    }

    let rf = vec![config.risk_free; config.n_days];
    let panel = MarketPanel::from_caps(dates, assets, daily, rf)?;
    Ok((panel, intraday))
}

/// Daily factor market with OU idiosyncratic components.
///
/// Returns are `r_i = sum_k B_ik f_k + (X_i,t - X_i,t-1)` where each `X_i` is a
/// stationary OU process with mean-reversion time `tau_days` and stationary standard
/// deviation `residual_vol`. Factor 0 is a market factor with loadings around 1.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorOuConfig {
    pub n_assets: usize,
    pub n_days: usize,
    pub n_factors: usize,
    pub factor_vol: f64,
    pub loading_dispersion: f64,
    pub tau_days: f64,
    pub residual_vol: f64,
    /// Ratio between consecutive initial capitalizations (> 1 keeps ranks apart).
    pub cap_ratio: f64,
    pub risk_free: f64,
    pub seed: u64,
    pub start: NaiveDate,
}

impl FactorOuConfig {
    pub fn new(n_assets: usize, n_days: usize, tau_days: f64, seed: u64) -> Self {
        FactorOuConfig {
            n_assets,
            n_days,
            n_factors: 1,
            factor_vol: 0.01,
            loading_dispersion: 0.3,
            tau_days,
            residual_vol: 0.02,
            cap_ratio: 1.5,
            risk_free: 0.0,
            seed,
            start: default_start(),
        }
    }
}

pub fn generate_factor_ou_market(config: &FactorOuConfig) -> Result<MarketPanel> {
    let c = config;
    if c.n_assets < 2 || c.n_days < 2 {
        return Err(Error::Config("factor market needs >= 2 assets and >= 2 days".into()));
    }
    if !(c.tau_days > 0.0) || c.residual_vol < 0.0 || c.factor_vol < 0.0 || !(c.cap_ratio > 0.0) {
        return Err(Error::Config(
            "tau_days and cap_ratio must be positive; volatilities non-negative".into(),
        ));
    }
    let (n, t) = (c.n_assets, c.n_days);
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let loadings = DMatrix::from_fn(n, c.n_factors, |_, k| {
        let z: f64 = rng.sample(StandardNormal);
        if k == 0 {
            1.0 + c.loading_dispersion * z
        } else {
            z
        }
    });
    let b = (-1.0 / c.tau_days).exp();
    let innov = c.residual_vol * (1.0 - b * b).sqrt();
    let mut x: Vec<f64> = (0..n)
        .map(|_| c.residual_vol * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut caps = DMatrix::zeros(n, t);
    for i in 0..n {
        caps[(i, 0)] = 1e10 * c.cap_ratio.powi(-(i as i32));
    }
    let mut f = vec![0.0; c.n_factors];
    for day in 1..t {
        for fk in f.iter_mut() {
            *fk = c.factor_vol * rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..n {
            let prev = x[i];
            x[i] = b * prev + innov * rng.sample::<f64, _>(StandardNormal);
            let systematic: f64 = (0..c.n_factors).map(|k| loadings[(i, k)] * f[k]).sum();
            let r = systematic + (x[i] - prev);
            if r <= -1.0 {
                return Err(Error::Degenerate(format!("generated return {r} <= -1; lower the volatilities")));
            }
            caps[(i, day)] = caps[(i, day - 1)] * (1.0 + r);
        }
    }
    let dates = business_days(c.start, t);
    MarketPanel::from_caps(dates, asset_ids(n), caps, vec![c.risk_free; t])
}

/// Log-linear minute paths between consecutive closes, one panel per date after the
/// first. Endpoints are the exact daily closes, so continuity holds bit-for-bit.
pub fn intraday_from_daily(panel: &MarketPanel, minutes_per_day: usize) -> Result<Vec<IntradayPanel>> {
    if minutes_per_day < 2 {
        return Err(Error::Config(format!("minutes_per_day must be >= 2, got {minutes_per_day}")));
    }
    let n = panel.n_assets();
    let last = (minutes_per_day - 1) as f64;
    (1..panel.n_dates())
        .map(|t| {
            let mut caps = DMatrix::zeros(n, minutes_per_day);
            for i in 0..n {
                let (Some(c0), Some(c1)) = (panel.cap(i, t - 1), panel.cap(i, t)) else {
                    return Err(Error::Domain(format!(
                        "cannot interpolate masked cap for {} on {}",
                        panel.assets()[i],
                        panel.dates()[t]
                    )));
                };
                let growth = (c1 / c0).ln();
                for m in 0..minutes_per_day {
                    caps[(i, m)] = c0 * (growth * m as f64 / last).exp();
                }
                caps[(i, 0)] = c0;
                caps[(i, minutes_per_day - 1)] = c1;
            }
            IntradayPanel::new(
                panel.dates()[t],
                (1..=minutes_per_day as u32).collect(),
                panel.assets().to_vec(),
                caps,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> AtlasConfig {
        let mut c = AtlasConfig::new(4, 6, seed);
        c.minutes_per_day = 30;
        c
    }

    #[test]
    fn degenerate_diffusion_is_constant() {
        let mut c = small(1);
        c.rank_vols = vec![0.0; 4];
        let (panel, intraday) = generate_atlas_market(&c).unwrap();
        for t in 1..panel.n_dates() {
            for i in 0..4 {
                assert_eq!(panel.ret(i, t), Some(0.0));
                assert_eq!(panel.cap(i, t), panel.cap(i, 0));
            }
        }
        assert!(intraday.iter().all(|d| d.caps().iter().all(|c| c.is_finite())));
    }

    #[test]
    fn same_seed_same_market() {
        let a = generate_atlas_market(&small(9)).unwrap();
        let b = generate_atlas_market(&small(9)).unwrap();
        assert_eq!(a, b);
        let c = generate_atlas_market(&small(10)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn day_ends_match_daily_panel() {
        let (panel, intraday) = generate_atlas_market(&small(3)).unwrap();
        assert_eq!(intraday.len(), panel.n_dates() - 1);
        for (k, day) in intraday.iter().enumerate() {
            let t = k + 1;
            assert_eq!(day.day(), panel.dates()[t]);
            for i in 0..4 {
                assert_eq!(day.caps()[(i, 0)], panel.caps()[(i, t - 1)]);
                assert_eq!(day.caps()[(i, day.n_minutes() - 1)], panel.caps()[(i, t)]);
                let r = panel.ret(i, t).unwrap();
                let expect = panel.caps()[(i, t)] / panel.caps()[(i, t - 1)] - 1.0;
                assert!((r - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = small(1);
        c.n_assets = 1;
        assert!(matches!(generate_atlas_market(&c), Err(Error::Config(_))));
        let mut c = small(1);
        c.rank_vols.pop();
        assert!(matches!(generate_atlas_market(&c), Err(Error::Config(_))));
    }

    // Two equal-drift diffusions from a common start swap order within a year.
    #[test]
    fn two_asset_paths_cross() {
        let seeds = 1000;
        let mut crossed = 0;
        for seed in 0..seeds {
            let mut c = AtlasConfig::new(2, 253, seed);
            c.initial_caps = Some(vec![1.0e9, 1.0e9]);
            let (_, intraday) = generate_atlas_market(&c).unwrap();
            let gaps = intraday
                .iter()
                .flat_map(|d| (1..d.n_minutes()).map(move |m| d.caps()[(0, m)] - d.caps()[(1, m)]));
            let (mut above, mut below) = (false, false);
            for g in gaps {
                above |= g > 0.0;
                below |= g < 0.0;
            }
            if above && below {
                crossed += 1;
            }
        }
        assert!(crossed as f64 / seeds as f64 > 0.99, "crossed in {crossed}/{seeds} seeds");
    }

    #[test]
    fn interpolated_intraday_is_continuous() {
        let panel = generate_factor_ou_market(&FactorOuConfig::new(3, 5, 2.5, 4)).unwrap();
        let days = intraday_from_daily(&panel, 10).unwrap();
        for (k, d) in days.iter().enumerate() {
            for i in 0..3 {
                assert_eq!(d.caps()[(i, 0)], panel.caps()[(i, k)]);
                assert_eq!(d.caps()[(i, 9)], panel.caps()[(i, k + 1)]);
            }
        }
    }

    #[test]
    fn calendar_skips_weekends() {
        let d = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 3);
        assert_eq!(d[1], NaiveDate::from_ymd_opt(2024, 1, 8).unwrap());
    }
}
