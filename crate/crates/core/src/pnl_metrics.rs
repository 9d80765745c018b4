//! Value processes in name and rank space, annual metrics, dollar neutrality and
//! holding times.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::rebalance_engine::{simulate_day, CostLedger};
use crate::{AssetId, Error, IntradayPanel, MarketPanel, Result, TRADING_DAYS};

/// l1-normalized equity weights decided at the close of each date.
///
/// Column `t` is held from the close of `dates[t]` to the close of the next panel date.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightPanel {
    pub dates: Vec<NaiveDate>,
    /// Asset identifiers (name space) or rank labels (rank space), one per row.
    pub assets: Vec<String>,
    pub weights: DMatrix<f64>,
}

impl WeightPanel {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<String>, weights: DMatrix<f64>) -> Result<Self> {
        if weights.shape() != (assets.len(), dates.len()) {
            return Err(Error::Domain(format!(
                "weights are {:?} for {} assets and {} dates",
                weights.shape(),
                assets.len(),
                dates.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Domain("weights must be finite".into()));
        }
        for (t, col) in weights.column_iter().enumerate() {
            let l1: f64 = col.iter().map(|w| w.abs()).sum();
            if l1 > 1.0 + 1e-9 {
                return Err(Error::Domain(format!("weights on {} have l1 norm {l1}", dates[t])));
            }
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("weight dates must increase strictly".into()));
        }
        Ok(WeightPanel { dates, assets, weights })
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn is_flat(&self, t: usize) -> bool {
        self.weights.column(t).iter().all(|w| *w == 0.0)
    }
}

/// `V_t` with `V_0 = 1` on the first weight date.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PnLSeries {
    pub dates: Vec<NaiveDate>,
    pub value: Vec<f64>,
    /// Risk-free rate earned over the step ending at each date (0 for the first).
    pub risk_free: Vec<f64>,
    pub leverage: f64,
    pub eta: f64,
    /// Set when the value hit zero or below; the series stops at that date.
    pub bankrupt: bool,
}

impl PnLSeries {
    fn start(date: NaiveDate, leverage: f64, eta: f64) -> Self {
        PnLSeries {
            dates: vec![date],
            value: vec![1.0],
            risk_free: vec![0.0],
            leverage,
            eta,
            bankrupt: false,
        }
    }

    /// Appends a value; returns false once bankrupt.
    fn push(&mut self, date: NaiveDate, v: f64, rf: f64) -> bool {
        self.dates.push(date);
        self.value.push(v);
        self.risk_free.push(rf);
        if !(v > 0.0) {
            self.bankrupt = true;
            return false;
        }
        true
    }

    pub fn terminal(&self) -> f64 {
        *self.value.last().expect("series is never empty")
    }

    /// Simple returns `V_t / V_{t-1} - 1`, dated by their end date.
    pub fn returns(&self) -> Vec<(NaiveDate, f64)> {
        self.value
            .windows(2)
            .zip(&self.dates[1..])
            .map(|(v, d)| (*d, v[1] / v[0] - 1.0))
            .collect()
    }
}

fn check_params(eta: f64, leverage: f64) -> Result<()> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::Domain(format!("transaction cost factor must be non-negative, got {eta}")));
    }
    if !(leverage > 0.0) || !leverage.is_finite() {
        return Err(Error::Domain(format!("leverage must be positive, got {leverage}")));
    }
    Ok(())
}

fn start_index(panel: &MarketPanel, weights: &WeightPanel) -> Result<usize> {
    let first = *weights
        .dates
        .first()
        .ok_or_else(|| Error::Domain("weight panel has no dates".into()))?;
    let start = panel
        .date_index(first)
        .ok_or_else(|| Error::Accounting(format!("weight date {first} is not in the market panel")))?;
    for (c, d) in weights.dates.iter().enumerate() {
        if panel.dates().get(start + c) != Some(d) {
            return Err(Error::Accounting(format!(
                "weight dates must be consecutive market dates; {d} breaks the sequence"
            )));
        }
    }
    Ok(start)
}

/// Name-space value process
/// `V_{t+1} = (1 + r_f)(V_t - sum L V_t w - TC) + sum L V_t w (1 + r_{t+1})`
/// with `TC = eta * sum |L V_t w_t - L V_{t-1} w_{t-1} (1 + r_t)|`.
pub fn pnl_name(weights: &WeightPanel, panel: &MarketPanel, eta: f64, leverage: f64) -> Result<PnLSeries> {
    check_params(eta, leverage)?;
    let start = start_index(panel, weights)?;
    let rows: Vec<usize> = weights
        .assets
        .iter()
        .map(|a| {
            panel
                .asset_index(&AssetId::new(a.clone()))
                .ok_or_else(|| Error::Accounting(format!("weighted asset {a} is not in the market panel")))
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    let mut series = PnLSeries::start(weights.dates[0], leverage, eta);
    let mut carried = vec![0.0; n];
    let mut v = 1.0;
    for c in 0..weights.n_dates() {
        let t = start + c;
        if t + 1 >= panel.n_dates() {
            break;
        }
        let rf = panel.risk_free()[t + 1];
        let mut invested = 0.0;
        let mut turnover = 0.0;
        let mut grown = 0.0;
        for (j, &i) in rows.iter().enumerate() {
            let hold = leverage * v * weights.weights[(j, c)];
            turnover += (hold - carried[j]).abs();
            invested += hold;
            if hold == 0.0 {
                carried[j] = 0.0;
                continue;
            }
            let r = panel.returns()[(i, t + 1)];
            if !r.is_finite() {
                return Err(Error::Accounting(format!(
                    "{} has a position on {} but no return on {}",
                    weights.assets[j],
                    panel.dates()[t],
                    panel.dates()[t + 1]
                )));
            }
            carried[j] = hold * (1.0 + r);
            grown += carried[j];
        }
        v = (1.0 + rf) * (v - invested - eta * turnover) + grown;
        if !series.push(panel.dates()[t + 1], v, rf) {
            break;
        }
    }
    Ok(series)
}

/// Per-day cost totals of a rank-space run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankDay {
    pub date: NaiveDate,
    pub open_cost: f64,
    pub total_latency: f64,
    pub total_spread: f64,
    pub max_divergence: f64,
    /// Value at the close of `date`.
    pub end_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankPnL {
    pub series: PnLSeries,
    pub days: Vec<RankDay>,
    pub ledgers: Vec<CostLedger>,
}

/// Rank-space value process realized through intraday rebalancing.
///
/// On each day the dollar rank book `L V_t w` is opened on the names holding each
/// rank at the prior close (paying `eta` on the change from the carried name book),
/// run through [`simulate_day`], and closed:
/// `V_{t+1} = (V_t - sum L V_t w - open)(1 + r_f) + sum(rank book at close) - latency - spread`.
///
/// `daily` supplies the calendar and the risk-free rate; intraday panels are looked
/// up by date and are only required on days with a nonzero book.
pub fn pnl_rank(
    weights: &WeightPanel,
    daily: &MarketPanel,
    intraday: &[IntradayPanel],
    interval: usize,
    eta: f64,
    leverage: f64,
) -> Result<RankPnL> {
    check_params(eta, leverage)?;
    let start = start_index(daily, weights)?;
    let by_day: HashMap<NaiveDate, &IntradayPanel> = intraday.iter().map(|p| (p.day(), p)).collect();
    let mut series = PnLSeries::start(weights.dates[0], leverage, eta);
    let mut days = Vec::new();
    let mut ledgers = Vec::new();
    let mut carried: BTreeMap<AssetId, f64> = BTreeMap::new();
    let mut v = 1.0;
    for c in 0..weights.n_dates() {
        let t = start + c;
        if t + 1 >= daily.n_dates() {
            break;
        }
        let next = daily.dates()[t + 1];
        let rf = daily.risk_free()[t + 1];
        let book: Vec<f64> = weights.weights.column(c).iter().map(|w| leverage * v * w).collect();
        let invested: f64 = book.iter().sum();
        let (open_cost, rank_close, latency, spread, max_div) = if book.iter().all(|x| *x == 0.0) {
            let liquidation: f64 = carried.values().map(|x| x.abs()).sum();
            carried.clear();
            (eta * liquidation, 0.0, 0.0, 0.0, 0.0)
        } else {
            let panel = by_day
                .get(&next)
                .ok_or_else(|| Error::Accounting(format!("no intraday data for {next}")))?;
            let day = simulate_day(&book, panel, interval, eta)?;
            let mut opened: BTreeMap<AssetId, f64> = BTreeMap::new();
            for (id, w) in panel.assets().iter().zip(&day.open_book.name_weights) {
                opened.insert(id.clone(), *w);
            }
            let mut traded = 0.0;
            for (id, w) in &opened {
                traded += (w - carried.get(id).copied().unwrap_or(0.0)).abs();
            }
            for (id, w) in &carried {
                if !opened.contains_key(id) {
                    traded += w.abs();
                }
            }
            carried = panel.assets().iter().cloned().zip(day.book.name_weights.iter().copied()).collect();
            let out = (
                eta * traded,
                day.book.rank_total(),
                day.ledger.total_latency(),
                day.ledger.total_spread(),
                day.ledger.max_divergence(),
            );
            ledgers.push(day.ledger);
            out
        };
        v = (v - invested - open_cost) * (1.0 + rf) + rank_close - latency - spread;
        days.push(RankDay {
            date: next,
            open_cost,
            total_latency: latency,
            total_spread: spread,
            max_divergence: max_div,
            end_value: v,
        });
        if !series.push(next, v, rf) {
            break;
        }
    }
    Ok(RankPnL { series, days, ledgers })
}

/// Which Sharpe ratio to report: excess over the annualized risk-free rate, or raw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum SharpeConvention {
    #[default]
    Excess,
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AnnualMetrics {
    pub year: i32,
    pub n_days: usize,
    pub annual_return: f64,
    pub annual_vol: f64,
    /// `None` when the volatility is zero.
    pub sharpe: Option<f64>,
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Annualized statistics of one block of daily returns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PeriodMetrics {
    pub n_days: usize,
    pub annual_return: f64,
    pub annual_vol: f64,
    pub sharpe: Option<f64>,
}

/// `(prod(1 + r))^(252/N) - 1`, `sqrt(252) * std(r)` and `(r_annual - rf_annual) / vol`.
/// `None` for fewer than two returns.
pub fn period_metrics(r: &[f64], rf: &[f64], convention: SharpeConvention) -> Option<PeriodMetrics> {
    if r.len() < 2 {
        return None;
    }
    let n = r.len() as f64;
    let annualize = |xs: &[f64]| (xs.iter().map(|x| (1.0 + x).ln()).sum::<f64>() * TRADING_DAYS / n).exp() - 1.0;
    let annual_return = annualize(r);
    let annual_vol = TRADING_DAYS.sqrt() * sample_std(r);
    let rf_annual = match convention {
        SharpeConvention::Excess => annualize(rf),
        SharpeConvention::Raw => 0.0,
    };
    let sharpe = (annual_vol > 1e-12).then(|| (annual_return - rf_annual) / annual_vol);
    Some(PeriodMetrics {
        n_days: r.len(),
        annual_return,
        annual_vol,
        sharpe,
    })
}

/// Metrics over the whole series.
pub fn summary_metrics(series: &PnLSeries, convention: SharpeConvention) -> Option<PeriodMetrics> {
    let r: Vec<f64> = series.returns().into_iter().map(|(_, x)| x).collect();
    period_metrics(&r, &series.risk_free[1..], convention)
}

/// Calendar-year [`period_metrics`]. Years with fewer than two returns are skipped.
pub fn annual_metrics(series: &PnLSeries, convention: SharpeConvention) -> Vec<AnnualMetrics> {
    let mut by_year: BTreeMap<i32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for i in 1..series.value.len() {
        let entry = by_year.entry(series.dates[i].year()).or_default();
        entry.0.push(series.value[i] / series.value[i - 1] - 1.0);
        entry.1.push(series.risk_free[i]);
    }
    by_year
        .into_iter()
        .filter_map(|(year, (r, rf))| {
            let p = period_metrics(&r, &rf, convention)?;
            Some(AnnualMetrics {
                year,
                n_days: p.n_days,
                annual_return: p.annual_return,
                annual_vol: p.annual_vol,
                sharpe: p.sharpe,
            })
        })
        .collect()
}

pub const METRICS_HEADER: [&str; 4] = ["year", "return", "vol", "sharpe"];

/// `year,return,vol,sharpe`; an undefined Sharpe ratio is written as an empty field.
pub fn write_metrics_csv<W: Write>(metrics: &[AnnualMetrics], mut w: W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for m in metrics {
        out.write_record([
            m.year.to_string(),
            m.annual_return.to_string(),
            m.annual_vol.to_string(),
            m.sharpe.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Per-day `sum(w) / sum(|w|)` with the long and short masses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Neutrality {
    pub date: NaiveDate,
    /// `None` on an all-zero day.
    pub ratio: Option<f64>,
    pub long: f64,
    pub short: f64,
}

pub fn dollar_neutrality(weights: &WeightPanel) -> Vec<Neutrality> {
    weights
        .weights
        .column_iter()
        .zip(&weights.dates)
        .map(|(col, &date)| {
            let long: f64 = col.iter().filter(|w| **w > 0.0).sum();
            let short: f64 = col.iter().filter(|w| **w < 0.0).sum();
            let gross = long - short;
            Neutrality {
                date,
                ratio: (gross > 0.0).then(|| (long + short) / gross),
                long,
                short,
            }
        })
        .collect()
}

/// Average length in days of maximal runs of nonzero residual weights, grouped by
/// the calendar year in which each run starts. Assets never held contribute nothing.
pub fn holding_time(dates: &[NaiveDate], w_eps: &DMatrix<f64>) -> Result<Vec<(i32, f64)>> {
    if w_eps.ncols() != dates.len() {
        return Err(Error::Domain(format!(
            "{} weight columns for {} dates",
            w_eps.ncols(),
            dates.len()
        )));
    }
    let mut runs: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for row in w_eps.row_iter() {
        let mut t = 0;
        while t < dates.len() {
            if row[t] == 0.0 {
                t += 1;
                continue;
            }
            let begin = t;
            while t < dates.len() && row[t] != 0.0 {
                t += 1;
            }
            let e = runs.entry(dates[begin].year()).or_default();
            e.0 += t - begin;
            e.1 += 1;
        }
    }
    Ok(runs.into_iter().map(|(y, (days, n))| (y, days as f64 / n as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_sim::{business_days, intraday_from_daily};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn market(caps: &[&[f64]], rf: f64) -> MarketPanel {
        let t = caps[0].len();
        let dates = business_days(d(2021, 1, 4), t);
        let assets = (0..caps.len()).map(|i| AssetId::new(format!("A{i}"))).collect();
        let m = DMatrix::from_fn(caps.len(), t, |i, j| caps[i][j]);
        MarketPanel::from_caps(dates, assets, m, vec![rf; t]).unwrap()
    }

    fn weights(panel: &MarketPanel, cols: &[&[f64]]) -> WeightPanel {
        let n = cols[0].len();
        let w = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        WeightPanel::new(
            panel.dates()[..cols.len()].to_vec(),
            panel.assets().iter().map(|a| a.to_string()).collect(),
            w,
        )
        .unwrap()
    }

    #[test]
    fn single_asset_hand_recursion() {
        let p = market(&[&[10.0, 11.0]], 0.0);
        let s = pnl_name(&weights(&p, &[&[1.0]]), &p, 0.0, 1.0).unwrap();
        assert!((s.terminal() - 1.1).abs() < 1e-15);
    }

    #[test]
    fn cash_only_grows_at_risk_free() {
        let p = market(&[&[10.0, 11.0, 9.0, 12.0]], 0.001);
        let s = pnl_name(&weights(&p, &[&[0.0], &[0.0], &[0.0]]), &p, 2e-4, 1.0).unwrap();
        assert!((s.terminal() - 1.001f64.powi(3)).abs() < 1e-15);
    }

    // Three days of the same 50/50 book on flat prices. Day 0 pays eta on the full
    // book; afterwards the book is rescaled to the new V, so only |V_t - V_{t-1}| trades.
    #[test]
    fn renormalization_turnover_oracle() {
        let p = market(&[&[5.0; 4], &[7.0; 4]], 0.0);
        let eta = 0.01;
        let s = pnl_name(&weights(&p, &[&[0.5, -0.5], &[0.5, -0.5], &[0.5, -0.5]]), &p, eta, 1.0).unwrap();
        let v1 = 1.0 - eta * 1.0;
        let v2 = v1 - eta * (v1 - 1.0).abs();
        let v3 = v2 - eta * (v2 - v1).abs();
        for (got, want) in s.value.iter().zip([1.0, v1, v2, v3]) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn missing_return_under_position() {
        let dates = business_days(d(2021, 1, 4), 3);
        let caps = DMatrix::from_row_slice(2, 3, &[1.0, 1.1, 1.2, 2.0, f64::NAN, 2.1]);
        let p = MarketPanel::from_caps(dates, vec!["A0".into(), "A1".into()], caps, vec![0.0; 3]).unwrap();
        let w = weights(&p, &[&[0.5, -0.5]]);
        assert!(matches!(pnl_name(&w, &p, 0.0, 1.0), Err(Error::Accounting(_))));
        let ok = weights(&p, &[&[1.0, 0.0]]);
        assert!(pnl_name(&ok, &p, 0.0, 1.0).is_ok());
    }

    #[test]
    fn overweight_rejected() {
        let p = market(&[&[1.0, 1.0], &[1.0, 1.0]], 0.0);
        let r = WeightPanel::new(p.dates()[..1].to_vec(), vec!["A0".into(), "A1".into()], DMatrix::from_row_slice(2, 1, &[0.7, -0.5]));
        assert!(r.is_err());
    }

    #[test]
    fn bankruptcy_truncates() {
        let p = market(&[&[10.0, 0.5, 0.6]], 0.0);
        let s = pnl_name(&weights(&p, &[&[1.0], &[1.0]]), &p, 0.0, 30.0).unwrap();
        assert!(s.bankrupt);
        assert_eq!(s.value.len(), 2);
    }

    #[test]
    fn no_cost_step_is_weighted_gross_return() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut c = vec![100.0];
                for _ in 0..20 {
                    let r: f64 = rng.random_range(-0.03..0.03);
                    c.push(c.last().unwrap() * (1.0 + r));
                }
                c
            })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let p = market(&refs, 0.0);
        let cols: Vec<[f64; 4]> = (0..20)
            .map(|_| {
                let w: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let l1: f64 = w.iter().map(|x| x.abs()).sum();
                w.map(|x| x / l1)
            })
            .collect();
        let col_refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let wp = weights(&p, &col_refs);
        let s = pnl_name(&wp, &p, 0.0, 1.0).unwrap();
        for t in 0..20 {
            let gross: f64 = (0..4).map(|i| cols[t][i] * p.returns()[(i, t + 1)]).sum();
            assert!((s.value[t + 1] / s.value[t] - (1.0 + gross)).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_book_swap_day_matches_hand_evaluation() {
        // Asset A0 (cap 8) holds rank 0 at the open, A1 (cap 4) rank 1; they swap.
        let p = market(&[&[8.0, 6.0], &[4.0, 10.0]], 0.0);
        let intraday = intraday_from_daily(&p, 2).unwrap();
        let w = weights(&p, &[&[0.625, 0.375]]);
        let eta = 1e-3;
        let out = pnl_rank(&w, &p, &intraday, 1, eta, 1.0).unwrap();
        // dollar book (0.625, 0.375) behaves like the (1.0, 0.6) oracle scaled by 0.625
        let s = 0.625;
        let latency = -0.10 * s;
        let spread = 0.40 * s * eta;
        let open = eta * 1.0;
        let rank_close = 2.15 * s;
        let want = (1.0 - 1.0 - open) + rank_close - latency - spread;
        assert!((out.series.terminal() - want).abs() < 1e-12);
        assert!((out.days[0].total_latency - latency).abs() < 1e-12);
    }

    #[test]
    fn rank_zero_weights_cash_only() {
        let p = market(&[&[8.0, 6.0, 7.0], &[4.0, 10.0, 3.0]], 0.0005);
        let w = weights(&p, &[&[0.0, 0.0], &[0.0, 0.0]]);
        let out = pnl_rank(&w, &p, &[], 30, 2e-4, 1.0).unwrap();
        assert!((out.series.terminal() - 1.0005f64.powi(2)).abs() < 1e-15);
        let live = weights(&p, &[&[0.5, -0.5]]);
        assert!(matches!(pnl_rank(&live, &p, &[], 30, 0.0, 1.0), Err(Error::Accounting(_))));
    }

    #[test]
    fn rank_matches_name_without_switching() {
        let p = market(&[&[20.0, 21.0, 19.5, 22.0, 21.0], &[10.0, 10.4, 10.1, 9.8, 10.5], &[5.0, 4.9, 5.2, 5.1, 5.3]], 0.0002);
        let intraday = intraday_from_daily(&p, 30).unwrap();
        let cols: [&[f64]; 4] = [&[0.5, -0.3, -0.2], &[0.4, -0.4, 0.2], &[0.0, 0.0, 0.0], &[-0.6, 0.2, 0.2]];
        let wp = weights(&p, &cols);
        let name = pnl_name(&wp, &p, 0.0, 1.0).unwrap();
        let rank = pnl_rank(&wp, &p, &intraday, 7, 0.0, 1.0).unwrap();
        for (a, b) in name.value.iter().zip(&rank.series.value) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_return_year() {
        let r: f64 = 0.001;
        let dates = business_days(d(2021, 1, 4), 253);
        let value = (0..253).map(|i| (1.0 + r).powi(i)).collect();
        let s = PnLSeries {
            risk_free: vec![0.0; 253],
            dates,
            value,
            leverage: 1.0,
            eta: 0.0,
            bankrupt: false,
        };
        let m = annual_metrics(&s, SharpeConvention::Excess);
        let total_days: usize = m.iter().map(|x| x.n_days).sum();
        assert_eq!(total_days, 252);
        for x in &m {
            assert!((x.annual_return - ((1.0 + r).powf(252.0) - 1.0)).abs() < 1e-10);
            assert!(x.annual_vol < 1e-12);
            assert!(x.sharpe.is_none());
        }
    }

    #[test]
    fn alternating_year_formula_oracle() {
        let dates = business_days(d(2022, 1, 3), 101);
        let mut value = vec![1.0];
        let mut rets = Vec::new();
        for i in 0..100 {
            let r = if i % 2 == 0 { 0.01 } else { -0.01 };
            rets.push(r);
            value.push(value.last().unwrap() * (1.0 + r));
        }
        let rf = 0.0001;
        let s = PnLSeries {
            risk_free: std::iter::once(0.0).chain(std::iter::repeat_n(rf, 100)).collect(),
            dates,
            value,
            leverage: 1.0,
            eta: 0.0,
            bankrupt: false,
        };
        let m = annual_metrics(&s, SharpeConvention::Excess);
        assert_eq!(m.len(), 1);
        let prod: f64 = rets.iter().map(|r| 1.0 + r).product();
        let ra = prod.powf(252.0 / 100.0) - 1.0;
        let mean = rets.iter().sum::<f64>() / 100.0;
        let var = rets.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / 99.0;
        let vol = 252f64.sqrt() * var.sqrt();
        let rfa = (1.0 + rf).powf(252.0) - 1.0;
        assert!((m[0].annual_return - ra).abs() < 1e-10);
        assert!((m[0].annual_vol - vol).abs() < 1e-10);
        assert!((m[0].sharpe.unwrap() - (ra - rfa) / vol).abs() < 1e-10);
        let raw = annual_metrics(&s, SharpeConvention::Raw);
        assert!((raw[0].sharpe.unwrap() - ra / vol).abs() < 1e-10);
    }

    #[test]
    fn geometric_series_recovers_rate() {
        let g = 0.15;
        let daily = (1.0f64 + g).powf(1.0 / 252.0) - 1.0;
        let dates = business_days(d(2023, 1, 2), 120);
        let s = PnLSeries {
            risk_free: vec![0.0; 120],
            value: (0..120).map(|i| 3.0 * (1.0 + daily).powi(i)).collect(),
            dates,
            leverage: 1.0,
            eta: 0.0,
            bankrupt: false,
        };
        assert!((annual_metrics(&s, SharpeConvention::Excess)[0].annual_return - g).abs() < 1e-10);
    }

    #[test]
    fn metrics_csv_layout() {
        let m = [AnnualMetrics { year: 2020, n_days: 250, annual_return: 0.1, annual_vol: 0.2, sharpe: Some(0.5) }];
        let mut buf = Vec::new();
        write_metrics_csv(&m, &mut buf, Some("strategy=ou-name")).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# strategy=ou-name\nyear,return,vol,sharpe\n2020,0.1,0.2,0.5\n");
    }

    #[test]
    fn neutrality_examples() {
        let p = market(&[&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]], 0.0);
        let w = weights(&p, &[&[0.5, -0.5], &[1.0, 0.0], &[0.0, 0.0]]);
        let n = dollar_neutrality(&w);
        assert_eq!((n[0].ratio, n[0].long, n[0].short), (Some(0.0), 0.5, -0.5));
        assert_eq!(n[1].ratio, Some(1.0));
        assert_eq!(n[2].ratio, None);
    }

    #[test]
    fn holding_examples() {
        let dates = business_days(d(2021, 3, 1), 10);
        let mut w = DMatrix::zeros(2, 10);
        for t in 2..7 {
            w[(0, t)] = 1.0;
        }
        assert_eq!(holding_time(&dates, &w).unwrap(), vec![(2021, 5.0)]);
        assert!(holding_time(&dates, &DMatrix::zeros(2, 10)).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn holding_matches_run_length_encoding(bits in prop::collection::vec(prop::bool::ANY, 1..80)) {
            let dates = business_days(d(2021, 6, 1), bits.len());
            let w = DMatrix::from_fn(1, bits.len(), |_, j| if bits[j] { -1.0 } else { 0.0 });
            let mut runs: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
            let mut cur: Option<(usize, usize)> = None;
            for (i, b) in bits.iter().enumerate() {
                match (b, cur) {
                    (true, None) => cur = Some((i, 1)),
                    (true, Some((s, l))) => cur = Some((s, l + 1)),
                    (false, Some((s, l))) => { runs.entry(dates[s].year()).or_default().push(l); cur = None; }
                    (false, None) => {}
                }
            }
            if let Some((s, l)) = cur { runs.entry(dates[s].year()).or_default().push(l); }
            let want: Vec<(i32, f64)> = runs.into_iter().map(|(y, v)| (y, v.iter().sum::<usize>() as f64 / v.len() as f64)).collect();
            prop_assert_eq!(holding_time(&dates, &w).unwrap(), want);
        }

        #[test]
        fn metrics_are_sane(rets in prop::collection::vec(-0.05f64..0.05, 3..200)) {
            let dates = business_days(d(2020, 1, 2), rets.len() + 1);
            let mut value = vec![1.0];
            for r in &rets { value.push(value.last().unwrap() * (1.0 + r)); }
            let s = PnLSeries { risk_free: vec![0.0; value.len()], dates, value, leverage: 1.0, eta: 0.0, bankrupt: false };
            for m in annual_metrics(&s, SharpeConvention::Excess) {
                prop_assert!(m.annual_vol >= 0.0 && m.annual_return > -1.0);
            }
        }
    }
}
