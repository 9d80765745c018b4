//! Tables behind the market-structure and signal diagnostics: correlation spectra
//! against Marchenko-Pastur, mean-reversion-time histograms, normalized-residual
//! density differences, strategy maps and rank-switching times.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::Write;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::ou_strategy::FitOutcome;
use crate::rank_view::local_crossing_time;
use crate::{AssetId, Error, IntradayPanel, Result};

/// Eigenvalues of a correlation matrix with the Marchenko-Pastur bulk edges.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub as_of: Option<NaiveDate>,
    /// Assets kept (zero-variance rows are dropped).
    pub n: usize,
    pub t: usize,
    /// `N` eigenvalues of the `N x N` correlation matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// Aspect ratio `T / N`.
    pub q: f64,
    pub mp_lower: f64,
    pub mp_upper: f64,
    pub excluded: Vec<usize>,
}

impl SpectrumReport {
    /// Nonzero eigenvalues rescaled by `min(N, T) / N`, so that they average one and
    /// are directly comparable with the bulk edges.
    ///
    /// When `N > T` these are the eigenvalues of the `T x T` dual matrix `Z^T Z / N`.
    pub fn bulk_spectrum(&self) -> Vec<f64> {
        let scale = self.n.min(self.t) as f64 / self.n as f64;
        let cut = 1e-9 * self.eigenvalues.first().copied().unwrap_or(0.0).max(1.0);
        self.eigenvalues
            .iter()
            .filter(|l| **l > cut)
            .map(|l| l * scale)
            .collect()
    }

    /// Share of the bulk spectrum outside `[mp_lower, mp_upper]`.
    pub fn fraction_outside(&self) -> f64 {
        let bulk = self.bulk_spectrum();
        if bulk.is_empty() {
            return 0.0;
        }
        let out = bulk.iter().filter(|l| **l < self.mp_lower || **l > self.mp_upper).count();
        out as f64 / bulk.len() as f64
    }
}

/// Marchenko-Pastur edges `(1 -+ sqrt(r))^2` for the ratio `r = min(N,T)/max(N,T)`,
/// which equals `T / N` whenever `N >= T`.
pub fn mp_edges(n: usize, t: usize) -> (f64, f64) {
    let r = n.min(t) as f64 / n.max(t) as f64;
    ((1.0 - r.sqrt()).powi(2), (1.0 + r.sqrt()).powi(2))
}

/// Spectrum of the empirical correlation matrix of an `N x T` return window.
pub fn eigen_spectrum(window: &DMatrix<f64>, as_of: Option<NaiveDate>) -> Result<SpectrumReport> {
    let t = window.ncols();
    if t < 2 {
        return Err(Error::Domain(format!("spectrum needs at least 2 observations, got {t}")));
    }
    if window.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("spectrum window contains masked entries".into()));
    }
    let mut keep = Vec::new();
    let mut excluded = Vec::new();
    let mut rows = Vec::new();
    for (i, row) in window.row_iter().enumerate() {
        let mean = row.mean();
        let sd = (row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t as f64).sqrt();
        if sd > 0.0 && sd > 1e-14 * mean.abs() {
            keep.push(i);
            rows.push(row.map(|x| (x - mean) / sd));
        } else {
            excluded.push(i);
        }
    }
    let n = keep.len();
    if n == 0 {
        return Err(Error::Domain("no asset with nonzero variance in the spectrum window".into()));
    }
    let z = DMatrix::from_rows(&rows);
    let mut eig: Vec<f64> = if n <= t {
        (&z * z.transpose() / t as f64).symmetric_eigenvalues().iter().copied().collect()
    } else {
        let mut v: Vec<f64> = (z.transpose() * &z / t as f64).symmetric_eigenvalues().iter().copied().collect();
        v.resize(n, 0.0);
        v
    };
    for l in eig.iter_mut() {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    eig.sort_by(|a, b| b.total_cmp(a));
    let (mp_lower, mp_upper) = mp_edges(n, t);
    Ok(SpectrumReport {
        as_of,
        n,
        t,
        eigenvalues: eig,
        q: t as f64 / n as f64,
        mp_lower,
        mp_upper,
        excluded,
    })
}

pub fn write_spectrum_csv<W: Write>(report: &SpectrumReport, mut w: W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["as_of", "index", "eigenvalue", "q", "mp_lower", "mp_upper"])?;
    let as_of = report.as_of.map(|d| d.to_string()).unwrap_or_default();
    for (i, l) in report.eigenvalues.iter().enumerate() {
        out.write_record([
            as_of.clone(),
            i.to_string(),
            l.to_string(),
            report.q.to_string(),
            report.mp_lower.to_string(),
            report.mp_upper.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Fixed-width histogram on `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<usize>,
    /// Observations outside `[lo, hi)`.
    pub outside: usize,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !(hi > lo) {
            return Err(Error::Domain(format!("bad histogram grid [{lo}, {hi}) step {width}")));
        }
        let bins = ((hi - lo) / width - 1e-9).ceil() as usize;
        Ok(Histogram {
            lo,
            width,
            counts: vec![0; bins],
            outside: 0,
        })
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.width * self.counts.len() as f64
    }

    pub fn add(&mut self, x: f64) {
        let pos = (x - self.lo) / self.width;
        if pos >= 0.0 && pos < self.counts.len() as f64 {
            self.counts[pos as usize] += 1;
        } else {
            self.outside += 1;
        }
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lo + (bin as f64 + 0.5) * self.width
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Densities normalized over the in-grid observations.
    pub fn density(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts
            .iter()
            .map(|&c| if total > 0.0 { c as f64 / (total * self.width) } else { 0.0 })
            .collect()
    }

    /// Centre of the fullest bin.
    pub fn mode(&self) -> Option<f64> {
        let (bin, &c) = self.counts.iter().enumerate().max_by_key(|(i, c)| (**c, std::cmp::Reverse(*i)))?;
        (c > 0).then(|| self.center(bin))
    }

    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_lo", "bin_hi", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            let lo = self.lo + i as f64 * self.width;
            out.write_record([lo.to_string(), (lo + self.width).to_string(), c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Histogram of mean-reversion times with the slow and unfit cases counted apart.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TauDistribution {
    pub histogram: Histogram,
    pub mean_reverting: usize,
    pub non_mean_reverting: usize,
    pub failed: usize,
    /// Share of mean-reverting fits with `tau > 30` days.
    pub frac_above_30: f64,
}

pub fn tau_distribution(fits: &[FitOutcome], bin_days: f64, max_days: f64) -> Result<TauDistribution> {
    let mut histogram = Histogram::new(0.0, max_days, bin_days)?;
    let (mut mr, mut nmr, mut failed, mut slow) = (0, 0, 0, 0);
    for f in fits {
        match f {
            FitOutcome::Failed => failed += 1,
            FitOutcome::Fitted { fit, .. } if !fit.is_mean_reverting() => nmr += 1,
            FitOutcome::Fitted { fit, .. } => {
                mr += 1;
                if fit.tau_days > 30.0 {
                    slow += 1;
                }
                histogram.add(fit.tau_days);
            }
        }
    }
    if mr == 0 && nmr == 0 {
        return Err(Error::Domain("no OU fit to summarize".into()));
    }
    Ok(TauDistribution {
        histogram,
        mean_reverting: mr,
        non_mean_reverting: nmr,
        failed,
        frac_above_30: if mr > 0 { slow as f64 / mr as f64 } else { 0.0 },
    })
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Empirical density minus the standard normal density, per trajectory step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityDiff {
    pub centers: Vec<f64>,
    /// Row per step `alpha = 1..L`, column per bin.
    pub diff: Vec<Vec<f64>>,
    /// Observations per step.
    pub pool: Vec<usize>,
    pub warnings: Vec<String>,
}

impl DensityDiff {
    pub fn max_abs(&self) -> f64 {
        self.diff.iter().flatten().fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// Histogram density of each column of `pooled` (rows are trajectories, columns the
/// steps `alpha`) on `[lo, hi)` with bin `width`, minus the normal density at the bin
/// centres. NaN entries are ignored.
pub fn xhat_density_diff(pooled: &DMatrix<f64>, lo: f64, hi: f64, width: f64) -> Result<DensityDiff> {
    let template = Histogram::new(lo, hi, width)?;
    let centers: Vec<f64> = (0..template.counts.len()).map(|b| template.center(b)).collect();
    let mut diff = Vec::with_capacity(pooled.ncols());
    let mut pool = Vec::with_capacity(pooled.ncols());
    let mut warnings = Vec::new();
    for (a, col) in pooled.column_iter().enumerate() {
        let mut h = template.clone();
        let mut n = 0;
        for x in col.iter().filter(|x| !x.is_nan()) {
            h.add(*x);
            n += 1;
        }
        if n < 100 {
            warnings.push(format!("alpha {} pools only {n} observations", a + 1));
        }
        pool.push(n);
        diff.push(h.density().iter().zip(&centers).map(|(d, c)| d - normal_pdf(*c)).collect());
    }
    Ok(DensityDiff {
        centers,
        diff,
        pool,
        warnings,
    })
}

pub fn write_density_csv<W: Write>(d: &DensityDiff, mut w: W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["alpha", "center", "diff"])?;
    for (a, row) in d.diff.iter().enumerate() {
        for (c, v) in d.centers.iter().zip(row) {
            out.write_record([(a + 1).to_string(), c.to_string(), v.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyMapRow {
    pub date: NaiveDate,
    pub asset: String,
    /// `(x - m) / sigma` of the terminal point.
    pub deviation: f64,
    pub tau_days: f64,
    pub w_eps: f64,
}

/// One row per asset with a finite deviation and mean-reversion time.
pub fn strategy_map(date: NaiveDate, assets: &[String], fits: &[FitOutcome], w_eps: &[f64]) -> Result<Vec<StrategyMapRow>> {
    if assets.len() != fits.len() || fits.len() != w_eps.len() {
        return Err(Error::Domain(format!(
            "strategy map inputs disagree: {} assets, {} fits, {} weights",
            assets.len(),
            fits.len(),
            w_eps.len()
        )));
    }
    Ok(assets
        .iter()
        .zip(fits)
        .zip(w_eps)
        .filter_map(|((a, f), w)| {
            let s = f.signal()?;
            let tau = f.tau_days();
            (s.is_finite() && tau.is_finite() && w.is_finite()).then(|| StrategyMapRow {
                date,
                asset: a.clone(),
                deviation: s,
                tau_days: tau,
                w_eps: *w,
            })
        })
        .collect())
}

/// Keys of `rows` with no matching `(date, asset)` in `weights`.
pub fn missing_join_keys(rows: &[StrategyMapRow], weights: &[(NaiveDate, String)]) -> Vec<(NaiveDate, String)> {
    let have: HashSet<(NaiveDate, &str)> = weights.iter().map(|(d, a)| (*d, a.as_str())).collect();
    rows.iter()
        .filter(|r| !have.contains(&(r.date, r.asset.as_str())))
        .map(|r| (r.date, r.asset.clone()))
        .collect()
}

pub fn write_strategy_map_csv<W: Write>(rows: &[StrategyMapRow], mut w: W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["date", "asset", "deviation", "tau_days", "w_eps"])?;
    for r in rows {
        out.write_record([
            r.date.to_string(),
            r.asset.clone(),
            r.deviation.to_string(),
            r.tau_days.to_string(),
            r.w_eps.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Pooled histogram of rank-switching gaps with a log-linear exponential fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SwitchingTimes {
    pub histogram: Histogram,
    pub n_gaps: usize,
    /// Fitted decay rate per minute of `count ~ exp(-rate * gap)`; `None` when empty.
    pub rate: Option<f64>,
    pub r2: Option<f64>,
}

impl SwitchingTimes {
    pub fn is_empty(&self) -> bool {
        self.n_gaps == 0
    }
}

/// Least-squares line through `(x, ln y)` over positive `y`; returns (slope, R^2).
pub fn log_linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(_, y)| **y > 0.0).map(|(x, y)| (*x, y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { slope * sxy / syy } else { 1.0 };
    Some((slope, r2))
}

pub fn switching_time_distribution(
    intraday: &[IntradayPanel],
    pairs: &[(AssetId, AssetId)],
    delta: f64,
    bin_minutes: f64,
    max_minutes: f64,
) -> Result<SwitchingTimes> {
    let mut histogram = Histogram::new(0.0, max_minutes, bin_minutes)?;
    let mut n_gaps = 0;
    for (a, b) in pairs {
        let rec = local_crossing_time(intraday, (a, b), delta)?;
        for g in rec.gaps {
            histogram.add(g as f64);
            n_gaps += 1;
        }
    }
    let centers: Vec<f64> = (0..histogram.counts.len()).map(|b| histogram.center(b)).collect();
    let counts: Vec<f64> = histogram.counts.iter().map(|c| *c as f64).collect();
    let fit = log_linear_fit(&centers, &counts);
    Ok(SwitchingTimes {
        histogram,
        n_gaps,
        rate: fit.map(|f| -f.0),
        r2: fit.map(|f| f.1),
    })
}
