//! Intraday conversion of rank-space dollar weights into name-space holdings.
//!
//! Rank weights grow with the caps of whichever asset occupies each rank; name
//! weights grow with their own asset's cap. At each rebalance point the name book
//! is traded back onto the rank book. The gap between the two books before trading
//! is the latency cost, and `eta` times the traded dollar volume is the spread cost.

use std::io::Write;

use chrono::NaiveDate;
use serde::Serialize;

use crate::rank_view::{compute_ranks, sorted_caps, RankPermutation};
use crate::{Error, IntradayPanel, Result};

/// Dollar weights per rank and per asset, with the caps they were last reset against.
#[derive(Clone, Debug, PartialEq)]
pub struct IntradayBook {
    /// Weight on rank `k` (0 = largest).
    pub rank_weights: Vec<f64>,
    /// Weight on asset `i` in panel order.
    pub name_weights: Vec<f64>,
    pub minute: usize,
    rank_ref_weights: Vec<f64>,
    name_ref_weights: Vec<f64>,
    rank_ref_caps: Vec<f64>,
    name_ref_caps: Vec<f64>,
}

impl IntradayBook {
    /// Opens a book at `caps`, placing rank `k`'s weight on the asset that holds rank `k`.
    ///
    /// `rank_weights` may cover fewer ranks than there are assets; the rest carry zero.
    pub fn open(rank_weights: &[f64], caps: &[f64]) -> Result<Self> {
        let ranks = compute_ranks(caps)?;
        if rank_weights.len() > ranks.n_live() {
            return Err(Error::Domain(format!(
                "{} rank weights but only {} ranked assets",
                rank_weights.len(),
                ranks.n_live()
            )));
        }
        if rank_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Domain("rank weights must be finite".into()));
        }
        let mut name_weights = vec![0.0; caps.len()];
        for (k, &w) in rank_weights.iter().enumerate() {
            name_weights[ranks.name_at(k)] = w;
        }
        Ok(IntradayBook {
            rank_weights: rank_weights.to_vec(),
            rank_ref_weights: rank_weights.to_vec(),
            name_ref_weights: name_weights.clone(),
            name_weights,
            minute: 0,
            rank_ref_caps: sorted_caps(caps)[..rank_weights.len()].to_vec(),
            name_ref_caps: caps.to_vec(),
        })
    }

    pub fn rank_total(&self) -> f64 {
        self.rank_weights.iter().sum()
    }

    pub fn name_total(&self) -> f64 {
        self.name_weights.iter().sum()
    }

    /// `sum(rank) - sum(name)`.
    pub fn divergence(&self) -> f64 {
        self.rank_total() - self.name_total()
    }

    /// Moves both books to `caps` at `minute` without trading.
    pub fn evolve(&mut self, caps: &[f64], minute: usize) {
        let sorted = sorted_caps(caps);
        for k in 0..self.rank_weights.len() {
            self.rank_weights[k] = self.rank_ref_weights[k] * sorted[k] / self.rank_ref_caps[k];
        }
        for i in 0..self.name_weights.len() {
            self.name_weights[i] = self.name_ref_weights[i] * caps[i] / self.name_ref_caps[i];
        }
        self.minute = minute;
    }

    fn reset_reference(&mut self, caps: &[f64]) {
        let sorted = sorted_caps(caps);
        self.rank_ref_caps = sorted[..self.rank_weights.len()].to_vec();
        self.name_ref_caps = caps.to_vec();
        self.rank_ref_weights = self.rank_weights.clone();
        self.name_ref_weights = self.name_weights.clone();
    }
}

/// Costs booked at one rebalance point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepCost {
    pub latency: f64,
    pub spread: f64,
    /// Dollar volume traded.
    pub traded: f64,
}

/// Trades the name book onto the rank book under `ranks`.
///
/// Latency is `sum(rank) - sum(name)` before trading; spread is `eta` times the
/// traded dollar volume. Reference caps reset to `caps`.
pub fn rebalance_step(book: &mut IntradayBook, caps: &[f64], ranks: &RankPermutation, eta: f64) -> StepCost {
    let latency = book.divergence();
    let mut target = vec![0.0; book.name_weights.len()];
    for (k, &w) in book.rank_weights.iter().enumerate() {
        target[ranks.name_at(k)] = w;
    }
    let traded: f64 = target.iter().zip(&book.name_weights).map(|(a, b)| (a - b).abs()).sum();
    book.name_weights = target;
    book.reset_reference(caps);
    StepCost {
        latency,
        spread: eta * traded,
        traded,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LedgerPoint {
    pub minute: usize,
    pub latency_cost: f64,
    pub spread_cost: f64,
}

/// Every rebalance point of one day plus the pre-trade divergence at each minute.
#[derive(Clone, Debug, PartialEq)]
pub struct CostLedger {
    pub date: NaiveDate,
    pub eta: f64,
    pub interval: usize,
    pub points: Vec<LedgerPoint>,
    /// `sum(rank) - sum(name)` before any trade, indexed by minute (minute 0 is the open).
    pub divergence: Vec<f64>,
}

impl CostLedger {
    pub fn total_latency(&self) -> f64 {
        self.points.iter().map(|p| p.latency_cost).sum()
    }

    pub fn total_spread(&self) -> f64 {
        self.points.iter().map(|p| p.spread_cost).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.total_latency() + self.total_spread()
    }

    pub fn max_divergence(&self) -> f64 {
        self.divergence.iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// Outcome of one simulated day.
#[derive(Clone, Debug, PartialEq)]
pub struct DayResult {
    pub open_book: IntradayBook,
    pub book: IntradayBook,
    pub ledger: CostLedger,
}

impl DayResult {
    /// Closing book value net of the day's costs: `sum(rank at close) - latency - spread`.
    pub fn end_value(&self) -> f64 {
        self.book.rank_total() - self.ledger.total_cost()
    }
}

/// Simulates one day: the book opens on minute 0 (the prior close), then evolves
/// minute by minute and rebalances whenever `minute % interval == 0` and at the
/// final minute.
pub fn simulate_day(w_rank_open: &[f64], intraday: &IntradayPanel, interval: usize, eta: f64) -> Result<DayResult> {
    simulate_day_with(w_rank_open, intraday, interval, eta, |_, _| {})
}

/// As [`simulate_day`], calling `observe(minute, book)` after every minute's
/// evolution and again after each trade.
pub fn simulate_day_with<F>(
    w_rank_open: &[f64],
    intraday: &IntradayPanel,
    interval: usize,
    eta: f64,
    mut observe: F,
) -> Result<DayResult>
where
    F: FnMut(usize, &IntradayBook),
{
    if interval == 0 {
        return Err(Error::Domain("rebalance interval must be at least one minute".into()));
    }
    if !(eta >= 0.0) {
        return Err(Error::Domain(format!("spread factor must be non-negative, got {eta}")));
    }
    let m = intraday.n_minutes();
    if m < 2 {
        return Err(Error::Domain(format!("intraday panel for {} has fewer than two ticks", intraday.day())));
    }
    let open_caps = intraday.caps_at(0);
    let mut book = IntradayBook::open(w_rank_open, &open_caps)?;
    let open_book = book.clone();
    observe(0, &book);
    let mut points = Vec::new();
    let mut divergence = Vec::with_capacity(m);
    divergence.push(0.0);
    for minute in 1..m {
        let caps = intraday.caps_at(minute);
        let ranks = compute_ranks(&caps)?;
        book.evolve(&caps, minute);
        divergence.push(book.divergence());
        observe(minute, &book);
        if minute % interval == 0 || minute == m - 1 {
            let cost = rebalance_step(&mut book, &caps, &ranks, eta);
            points.push(LedgerPoint {
                minute,
                latency_cost: cost.latency,
                spread_cost: cost.spread,
            });
            observe(minute, &book);
        }
    }
    Ok(DayResult {
        open_book,
        book,
        ledger: CostLedger {
            date: intraday.day(),
            eta,
            interval,
            points,
            divergence,
        },
    })
}

pub const LEDGER_HEADER: [&str; 4] = ["date", "minute", "latency_cost", "spread_cost"];
pub const SUMMARY_HEADER: [&str; 4] = ["date", "total_latency", "total_spread", "end_value"];

pub fn write_ledger_rows<W: Write>(w: &mut csv::Writer<W>, ledger: &CostLedger) -> Result<()> {
    for p in &ledger.points {
        w.write_record([
            ledger.date.to_string(),
            p.minute.to_string(),
            p.latency_cost.to_string(),
            p.spread_cost.to_string(),
        ])?;
    }
    Ok(())
}

pub fn write_summary_row<W: Write>(w: &mut csv::Writer<W>, day: &DayResult) -> Result<()> {
    w.write_record([
        day.ledger.date.to_string(),
        day.ledger.total_latency().to_string(),
        day.ledger.total_spread().to_string(),
        day.end_value().to_string(),
    ])?;
    Ok(())
}
