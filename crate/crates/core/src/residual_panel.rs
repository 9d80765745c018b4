//! Residual returns over a panel, cumulative residual trajectories and the
//! training-set export consumed by the external trainer.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::factor_model::{decompose, DecompositionConfig, FactorModel};
use crate::{AssetId, Error, MarketPanel, Result, Space};

/// Default trajectory length in days.
pub const DEFAULT_WINDOW: usize = 60;

/// Residual returns `eps_t = Phi_t (r_t - r_f)` for each date after the factor window fills.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSeries {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<AssetId>,
    /// Index of each column in the source panel.
    pub panel_index: Vec<usize>,
    /// `N x T` residual returns.
    pub epsilon: DMatrix<f64>,
}

impl ResidualSeries {
    /// The `L` residual columns ending at (and including) column `end`.
    pub fn window(&self, end: usize, len: usize) -> Result<DMatrix<f64>> {
        if len == 0 || end + 1 < len || end >= self.epsilon.ncols() {
            return Err(Error::Range(format!(
                "residual window of {len} ending at column {end} is outside 0..{}",
                self.epsilon.ncols()
            )));
        }
        Ok(self.epsilon.columns(end + 1 - len, len).into_owned())
    }
}

/// Excess returns of `rows` over the `len` dates ending at `end` (inclusive).
pub fn excess_window(panel: &MarketPanel, rows: &[usize], end: usize, len: usize) -> Result<DMatrix<f64>> {
    if len == 0 || end + 1 < len || end >= panel.n_dates() {
        return Err(Error::Range(format!(
            "window of {len} days ending at {end} is outside the panel ({} dates)",
            panel.n_dates()
        )));
    }
    let start = end + 1 - len;
    let mut out = DMatrix::zeros(rows.len(), len);
    for (r, &i) in rows.iter().enumerate() {
        for c in 0..len {
            let t = start + c;
            let x = panel.returns()[(i, t)] - panel.risk_free()[t];
            if !x.is_finite() {
                return Err(Error::Range(format!(
                    "asset {} has no return on {}",
                    panel.assets()[i],
                    panel.dates()[t]
                )));
            }
            out[(r, c)] = x;
        }
    }
    Ok(out)
}

/// Refits the decomposition at every date whose factor window is complete and
/// hands `(date index, model, eps_t)` to `visit`. Returns the collected residuals.
///
/// The first usable date is `factor_window` (date 0 carries no return).
pub fn scan_residuals<F>(
    panel: &MarketPanel,
    rows: &[usize],
    config: &DecompositionConfig,
    mut visit: F,
) -> Result<ResidualSeries>
where
    F: FnMut(usize, &FactorModel, &DVector<f64>) -> Result<()>,
{
    let first = config.factor_window;
    let labels: Vec<String> = rows.iter().map(|&i| panel.assets()[i].to_string()).collect();
    let n_out = panel.n_dates().saturating_sub(first);
    let mut epsilon = DMatrix::zeros(rows.len(), n_out);
    let mut dates = Vec::with_capacity(n_out);
    let mut panel_index = Vec::with_capacity(n_out);
    for (col, t) in (first..panel.n_dates()).enumerate() {
        let window = excess_window(panel, rows, t, config.factor_window)?;
        let model = decompose(&window, labels.clone(), panel.dates()[t], config)?;
        let eps = &model.projector * window.column(config.factor_window - 1);
        epsilon.set_column(col, &eps);
        dates.push(panel.dates()[t]);
        panel_index.push(t);
        visit(t, &model, &eps)?;
    }
    Ok(ResidualSeries {
        dates,
        assets: rows.iter().map(|&i| panel.assets()[i].clone()).collect(),
        panel_index,
        epsilon,
    })
}

pub fn residual_series(panel: &MarketPanel, rows: &[usize], config: &DecompositionConfig) -> Result<ResidualSeries> {
    scan_residuals(panel, rows, config, |_, _, _| Ok(()))
}

/// Running sums of residuals along each row: `values[i][a] = sum_{j<=a} eps[i][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulativeTrajectory {
    pub as_of: NaiveDate,
    pub values: DMatrix<f64>,
}

impl CumulativeTrajectory {
    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    /// Last point of each row.
    pub fn terminal(&self) -> DVector<f64> {
        self.values.column(self.values.ncols() - 1).into_owned()
    }
}

pub fn cumulative_residuals(eps_window: &DMatrix<f64>, as_of: NaiveDate) -> Result<CumulativeTrajectory> {
    let l = eps_window.ncols();
    if l < 2 {
        return Err(Error::Domain(format!("trajectory length must be at least 2, got {l}")));
    }
    if eps_window.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("residual window contains masked entries".into()));
    }
    let mut values = eps_window.clone();
    for mut row in values.row_iter_mut() {
        let mut acc = 0.0;
        for x in row.iter_mut() {
            acc += *x;
            *x = acc;
        }
    }
    Ok(CumulativeTrajectory { as_of, values })
}

/// Cumulative residuals scaled by `sigma_hat * sqrt(alpha)`.
///
/// Rows whose residual standard deviation is at most `1e-12` are excluded: their
/// values are NaN and their indices are listed in `excluded`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedTrajectory {
    pub as_of: NaiveDate,
    pub values: DMatrix<f64>,
    pub sigma_hat: Vec<f64>,
    pub excluded: Vec<usize>,
}

/// Sample standard deviation (n - 1 denominator).
pub(crate) fn sample_std(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = xs.clone().sum::<f64>() / n;
    (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub fn normalize_cumulative(x: &CumulativeTrajectory, eps_window: &DMatrix<f64>) -> Result<NormalizedTrajectory> {
    if x.values.shape() != eps_window.shape() {
        return Err(Error::Domain(format!(
            "trajectory {:?} and residual window {:?} differ in shape",
            x.values.shape(),
            eps_window.shape()
        )));
    }
    let (n, l) = x.values.shape();
    let mut values = DMatrix::from_element(n, l, f64::NAN);
    let mut sigma_hat = Vec::with_capacity(n);
    let mut excluded = Vec::new();
    for i in 0..n {
        let s = sample_std(eps_window.row(i).iter().copied());
        sigma_hat.push(s);
        if !(s > 1e-12) {
            excluded.push(i);
            continue;
        }
        for a in 0..l {
            values[(i, a)] = x.values[(i, a)] / (s * ((a + 1) as f64).sqrt());
        }
    }
    Ok(NormalizedTrajectory {
        as_of: x.as_of,
        values,
        sigma_hat,
        excluded,
    })
}

/// One training example: cumulative trajectories of a universe on one date.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub date: NaiveDate,
    pub space: Space,
    pub assets: Vec<String>,
    #[serde(rename = "L")]
    pub l: usize,
    /// `N x L`, row per asset.
    pub x: Vec<Vec<f64>>,
    /// Next-day excess returns, for the trainer's objective only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_next: Option<Vec<f64>>,
}

impl TrainingRecord {
    pub fn new(space: Space, assets: Vec<String>, trajectory: &CumulativeTrajectory) -> Result<Self> {
        if assets.len() != trajectory.values.nrows() {
            return Err(Error::Domain(format!(
                "{} asset labels for {} trajectories",
                assets.len(),
                trajectory.values.nrows()
            )));
        }
        Ok(TrainingRecord {
            date: trajectory.as_of,
            space,
            assets,
            l: trajectory.len(),
            x: trajectory.values.row_iter().map(|r| r.iter().copied().collect()).collect(),
            r_next: None,
        })
    }

    pub fn trajectory(&self) -> Result<CumulativeTrajectory> {
        if self.x.len() != self.assets.len() || self.x.iter().any(|r| r.len() != self.l) {
            return Err(Error::Domain(format!("record for {} has a ragged trajectory matrix", self.date)));
        }
        Ok(CumulativeTrajectory {
            as_of: self.date,
            values: DMatrix::from_row_iterator(self.x.len(), self.l, self.x.iter().flatten().copied()),
        })
    }
}

/// First line of every JSONL artifact written by the crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsonlHeader {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct HeaderLine {
    pub header: JsonlHeader,
}

pub const TRAINING_SCHEMA: &str = "rankarb.training.v1";

pub fn write_training_set<W: Write>(records: &[TrainingRecord], mut w: W, config_hash: Option<&str>) -> Result<()> {
    let header = HeaderLine {
        header: JsonlHeader {
            schema: TRAINING_SCHEMA.into(),
            config_hash: config_hash.map(str::to_string),
        },
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn export_training_set(records: &[TrainingRecord], path: &Path, config_hash: Option<&str>) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_training_set(records, f, config_hash)
}

/// Reads a training set, skipping the header line. Parse errors carry 1-based line numbers.
pub fn read_training_set(path: &Path) -> Result<(Option<JsonlHeader>, Vec<TrainingRecord>)> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut header = None;
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                header = Some(h.header);
                continue;
            }
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok((header, records))
}
