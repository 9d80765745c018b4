//! Market panels and their sources.
//!
//! A [`MarketPanel`] holds end-of-day capitalizations and returns on a trading
//! calendar; an [`IntradayPanel`] holds one day of minute capitalizations. Masked
//! entries (dead assets, missing rows) are stored as `NaN` and surfaced through the
//! `Option`-returning accessors; they are never zero-filled.

mod atlas;
mod io;

pub use atlas::{
    business_days, generate_atlas_market, generate_factor_ou_market, intraday_from_daily,
    AtlasConfig, FactorOuConfig,
};
pub use io::{
    check_continuity, load_daily_panel, load_intraday_checked, load_intraday_panel,
    load_risk_free, write_daily_csv, write_intraday_csv, write_risk_free_csv, DailyLoad,
    LoadWarning,
};

use std::fmt;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Stable asset identifier. Panels keep assets in ascending identifier order, so
/// "lower index" and "lower identifier" coincide for tie-breaking.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AssetId(pub String);

impl AssetId {
    pub fn new(id: impl Into<String>) -> Self {
        AssetId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AssetId {
    fn from(s: &str) -> Self {
        AssetId(s.to_string())
    }
}

/// Daily capitalizations, dividend-adjusted simple returns and the risk-free rate.
///
/// `caps` and `returns` are `n_assets x n_dates`. The return at date `t` is the
/// return earned from close `t-1` to close `t`.
#[derive(Clone, Debug)]
pub struct MarketPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<AssetId>,
    caps: DMatrix<f64>,
    returns: DMatrix<f64>,
    risk_free: Vec<f64>,
}

fn same_cells(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| x == y || (x.is_nan() && y.is_nan()))
}

// Masked cells compare equal to each other.
impl PartialEq for MarketPanel {
    fn eq(&self, other: &Self) -> bool {
        self.dates == other.dates
            && self.assets == other.assets
            && same_cells(&self.caps, &other.caps)
            && same_cells(&self.returns, &other.returns)
            && self.risk_free == other.risk_free
    }
}

impl MarketPanel {
    /// Builds a panel, checking every invariant.
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<AssetId>,
        caps: DMatrix<f64>,
        returns: DMatrix<f64>,
        risk_free: Vec<f64>,
    ) -> Result<Self> {
        let (n, t) = (assets.len(), dates.len());
        if caps.shape() != (n, t) || returns.shape() != (n, t) || risk_free.len() != t {
            return Err(Error::Domain(format!(
                "panel shape mismatch: {n} assets x {t} dates, caps {:?}, returns {:?}, risk-free {}",
                caps.shape(),
                returns.shape(),
                risk_free.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Domain(format!(
                "dates not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        if let Some(w) = assets.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Domain(format!(
                "assets must be unique and ascending ({} then {})",
                w[0], w[1]
            )));
        }
        for i in 0..n {
            for j in 0..t {
                let c = caps[(i, j)];
                if !c.is_nan() && (c <= 0.0 || !c.is_finite()) {
                    return Err(Error::Domain(format!(
                        "non-positive capitalization {c} for {} on {}",
                        assets[i], dates[j]
                    )));
                }
                let r = returns[(i, j)];
                if !r.is_nan() && (!r.is_finite() || r <= -1.0) {
                    return Err(Error::Domain(format!(
                        "invalid return {r} for {} on {}",
                        assets[i], dates[j]
                    )));
                }
            }
        }
        if risk_free.iter().any(|r| !r.is_finite() || *r <= -1.0) {
            return Err(Error::Domain("risk-free series must be finite and > -1".into()));
        }
        Ok(MarketPanel {
            dates,
            assets,
            caps,
            returns,
            risk_free,
        })
    }

    /// Builds a panel whose returns are the capitalization ratios `c_t / c_{t-1} - 1`.
    pub fn from_caps(
        dates: Vec<NaiveDate>,
        assets: Vec<AssetId>,
        caps: DMatrix<f64>,
        risk_free: Vec<f64>,
    ) -> Result<Self> {
        let returns = returns_from_caps(&caps);
        Self::new(dates, assets, caps, returns, risk_free)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[AssetId] {
        &self.assets
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn caps(&self) -> &DMatrix<f64> {
        &self.caps
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn risk_free(&self) -> &[f64] {
        &self.risk_free
    }

    pub fn cap(&self, asset: usize, t: usize) -> Option<f64> {
        let c = self.caps[(asset, t)];
        (!c.is_nan()).then_some(c)
    }

    pub fn ret(&self, asset: usize, t: usize) -> Option<f64> {
        let r = self.returns[(asset, t)];
        (!r.is_nan()).then_some(r)
    }

    /// Capitalization snapshot at `t`; masked assets are `NaN`.
    pub fn caps_at(&self, t: usize) -> Vec<f64> {
        self.caps.column(t).iter().copied().collect()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn asset_index(&self, id: &AssetId) -> Option<usize> {
        self.assets.binary_search(id).ok()
    }

    /// Replaces the risk-free series with one aligned by date.
    pub fn with_risk_free(mut self, series: &[(NaiveDate, f64)]) -> Result<Self> {
        let lookup: std::collections::BTreeMap<_, _> = series.iter().copied().collect();
        let mut rf = Vec::with_capacity(self.dates.len());
        for d in &self.dates {
            match lookup.get(d) {
                Some(r) if r.is_finite() && *r > -1.0 => rf.push(*r),
                Some(r) => return Err(Error::Domain(format!("invalid risk-free rate {r} on {d}"))),
                None => return Err(Error::Domain(format!("risk-free series has no rate for {d}"))),
            }
        }
        self.risk_free = rf;
        Ok(self)
    }
}

pub(crate) fn returns_from_caps(caps: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, t) = caps.shape();
    DMatrix::from_fn(n, t, |i, j| {
        if j == 0 {
            f64::NAN
        } else {
            let (prev, cur) = (caps[(i, j - 1)], caps[(i, j)]);
            if prev.is_nan() || cur.is_nan() {
                f64::NAN
            } else {
                cur / prev - 1.0
            }
        }
    })
}

/// One trading day of minute-resolution capitalizations.
///
/// Minute 1 carries the prior day's closing capitalizations; the last minute is the
/// day's close.
#[derive(Clone, Debug, PartialEq)]
pub struct IntradayPanel {
    day: NaiveDate,
    minutes: Vec<u32>,
    assets: Vec<AssetId>,
    caps: DMatrix<f64>,
}

impl IntradayPanel {
    pub fn new(
        day: NaiveDate,
        minutes: Vec<u32>,
        assets: Vec<AssetId>,
        caps: DMatrix<f64>,
    ) -> Result<Self> {
        if caps.shape() != (assets.len(), minutes.len()) {
            return Err(Error::Domain(format!(
                "intraday shape mismatch on {day}: {} assets x {} minutes vs {:?}",
                assets.len(),
                minutes.len(),
                caps.shape()
            )));
        }
        if minutes.is_empty() {
            return Err(Error::Domain(format!("intraday panel for {day} has no minutes")));
        }
        if let Some(w) = minutes.windows(2).find(|w| w[1] != w[0] + 1) {
            return Err(Error::Domain(format!(
                "minute ticks on {day} must have 1-minute spacing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(w) = assets.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Domain(format!(
                "assets must be unique and ascending ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(c) = caps.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::Domain(format!(
                "intraday capitalization {c} on {day} is not strictly positive"
            )));
        }
        Ok(IntradayPanel {
            day,
            minutes,
            assets,
            caps,
        })
    }

    pub fn day(&self) -> NaiveDate {
        self.day
    }

    pub fn minutes(&self) -> &[u32] {
        &self.minutes
    }

    pub fn assets(&self) -> &[AssetId] {
        &self.assets
    }

    pub fn caps(&self) -> &DMatrix<f64> {
        &self.caps
    }

    pub fn n_minutes(&self) -> usize {
        self.minutes.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// Capitalizations of every asset at minute index `m` (0-based).
    pub fn caps_at(&self, m: usize) -> Vec<f64> {
        self.caps.column(m).iter().copied().collect()
    }
}

/// The assets eligible for trading on one date.
#[derive(Clone, Debug, PartialEq)]
pub struct UniverseSelection {
    pub as_of: NaiveDate,
    /// Members in descending capitalization order.
    pub members: Vec<AssetId>,
    /// Panel row indices of `members`, same order.
    pub indices: Vec<usize>,
}

/// Top-`n` assets by capitalization at date index `as_of`, keeping only assets with a
/// valid return on the following date. Ties go to the lower asset identifier.
pub fn select_universe(panel: &MarketPanel, as_of: usize, n: usize) -> Result<UniverseSelection> {
    if as_of + 1 >= panel.n_dates() {
        return Err(Error::Range(format!(
            "universe date index {as_of} has no following date in a {}-day panel",
            panel.n_dates()
        )));
    }
    let mut live: Vec<(usize, f64)> = (0..panel.n_assets())
        .filter_map(|i| {
            let c = panel.cap(i, as_of)?;
            panel.ret(i, as_of + 1)?;
            Some((i, c))
        })
        .collect();
    live.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    live.truncate(n);
    let indices: Vec<usize> = live.iter().map(|(i, _)| *i).collect();
    Ok(UniverseSelection {
        as_of: panel.dates()[as_of],
        members: indices.iter().map(|&i| panel.assets()[i].clone()).collect(),
        indices,
    })
}
