//! Rank permutations, rank returns in the continuous-time limit and pairwise
//! rank-crossing statistics.
//!
//! Ranks are 0-based in code (0 = largest capitalization) and written 1-based in
//! CSV output.

use std::io::Write;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::market_sim::{AssetId, IntradayPanel, MarketPanel};
use crate::{Error, Result};

/// Default relative tolerance for treating two capitalizations as touching.
pub const DEFAULT_CROSSING_DELTA: f64 = 1e-3;

/// Bijection between live assets and capitalization ranks at one instant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankPermutation {
    rank_of: Vec<Option<usize>>,
    name_at: Vec<usize>,
}

impl RankPermutation {
    /// Rank of asset `i` (0 = largest), `None` for masked assets.
    pub fn rank_of(&self, asset: usize) -> Option<usize> {
        self.rank_of[asset]
    }

    /// Asset index occupying rank `k`.
    pub fn name_at(&self, rank: usize) -> usize {
        self.name_at[rank]
    }

    pub fn names(&self) -> &[usize] {
        &self.name_at
    }

    pub fn n_live(&self) -> usize {
        self.name_at.len()
    }
}

/// Ranks a capitalization snapshot indexed by asset. `NaN` marks a masked asset;
/// equal caps are ordered by ascending asset index.
pub fn compute_ranks(caps: &[f64]) -> Result<RankPermutation> {
    let mut name_at = Vec::with_capacity(caps.len());
    for (i, &c) in caps.iter().enumerate() {
        if c.is_nan() {
            continue;
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!("capitalization {c} of asset {i} is not positive")));
        }
        name_at.push(i);
    }
    if name_at.is_empty() {
        return Err(Error::Domain("cannot rank an empty snapshot".into()));
    }
    name_at.sort_by(|&a, &b| caps[b].total_cmp(&caps[a]).then(a.cmp(&b)));
    let mut rank_of = vec![None; caps.len()];
    for (k, &i) in name_at.iter().enumerate() {
        rank_of[i] = Some(k);
    }
    Ok(RankPermutation { rank_of, name_at })
}

/// Live capitalizations sorted in descending order.
pub fn sorted_caps(caps: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = caps.iter().copied().filter(|c| !c.is_nan()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Rank returns `c_(k),t / c_(k),t-1 - 1` at date index `t`, where the k-th largest
/// cap is taken independently on each date.
pub fn rank_returns(panel: &MarketPanel, t: usize) -> Result<Vec<f64>> {
    if t == 0 || t >= panel.n_dates() {
        return Err(Error::Domain(format!(
            "rank returns need dates t-1 and t inside the panel, got t={t}"
        )));
    }
    let prev = sorted_caps(&panel.caps_at(t - 1));
    let cur = sorted_caps(&panel.caps_at(t));
    if prev.len() != cur.len() {
        return Err(Error::Domain(format!(
            "live asset count changes from {} to {} on {}",
            prev.len(),
            cur.len(),
            panel.dates()[t]
        )));
    }
    Ok(cur.iter().zip(&prev).map(|(c, p)| c / p - 1.0).collect())
}

/// Re-indexes a panel by rank: row `k` holds the k-th largest cap on each date and
/// the returns are rank returns. Only the top `n_ranks` ranks (default: the smallest
/// live count over the panel) are kept.
pub fn rank_panel(panel: &MarketPanel, n_ranks: Option<usize>) -> Result<MarketPanel> {
    let min_live = (0..panel.n_dates())
        .map(|t| panel.caps().column(t).iter().filter(|c| !c.is_nan()).count())
        .min()
        .unwrap_or(0);
    let n = n_ranks.unwrap_or(min_live);
    if n == 0 || n > min_live {
        return Err(Error::Domain(format!(
            "requested {n} ranks but only {min_live} assets are live on every date"
        )));
    }
    let t_len = panel.n_dates();
    let mut caps = DMatrix::zeros(n, t_len);
    for t in 0..t_len {
        let sorted = sorted_caps(&panel.caps_at(t));
        for k in 0..n {
            caps[(k, t)] = sorted[k];
        }
    }
    let width = n.to_string().len().max(4);
    let ids = (1..=n).map(|k| AssetId(format!("R{k:0width$}"))).collect();
    MarketPanel::from_caps(panel.dates().to_vec(), ids, caps, panel.risk_free().to_vec())
}

/// Time two capitalization paths spend within a relative band of each other.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossingRecord {
    pub pair: (AssetId, AssetId),
    /// Cumulative touching time in minutes, one entry per sampled minute.
    pub local_time: Vec<f64>,
    /// Minutes between successive touching minutes.
    pub gaps: Vec<u32>,
    /// Global minute index at which each gap ends (same length as `gaps`).
    pub gap_end: Vec<usize>,
}

/// Accumulates the local crossing time of two assets over consecutive intraday
/// panels. A minute counts when `|c1 - c2| <= delta * max(c1, c2)`.
///
/// The first minute of every day after the first repeats the prior close and is
/// skipped, so the minutes form one continuous timeline.
pub fn local_crossing_time(
    intraday: &[IntradayPanel],
    pair: (&AssetId, &AssetId),
    delta: f64,
) -> Result<CrossingRecord> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("crossing tolerance must be positive, got {delta}")));
    }
    let mut local_time = Vec::new();
    let mut gaps = Vec::new();
    let mut gap_end = Vec::new();
    let mut acc = 0.0;
    let mut last_hit: Option<usize> = None;
    let mut minute = 0usize;
    for (d, day) in intraday.iter().enumerate() {
        let find = |id: &AssetId| {
            day.assets().binary_search(id).map_err(|_| {
                Error::Domain(format!("{id} missing from intraday panel {}", day.day()))
            })
        };
        let (a, b) = (find(pair.0)?, find(pair.1)?);
        let start = usize::from(d > 0);
        for m in start..day.n_minutes() {
            let (c1, c2) = (day.caps()[(a, m)], day.caps()[(b, m)]);
            if (c1 - c2).abs() <= delta * c1.max(c2) {
                acc += 1.0;
                if let Some(prev) = last_hit {
                    gaps.push((minute - prev) as u32);
                    gap_end.push(minute);
                }
                last_hit = Some(minute);
            }
            local_time.push(acc);
            minute += 1;
        }
    }
    Ok(CrossingRecord {
        pair: (pair.0.clone(), pair.1.clone()),
        local_time,
        gaps,
        gap_end,
    })
}

/// Writes `pair,minute,lambda_gap` rows for a set of crossing records.
pub fn write_crossings_csv(records: &[CrossingRecord], mut w: impl Write, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "pair,minute,lambda_gap")?;
    for r in records {
        for (gap, end) in r.gaps.iter().zip(&r.gap_end) {
            writeln!(w, "{}|{},{end},{gap}", r.pair.0, r.pair.1)?;
        }
    }
    Ok(())
}

/// Adjacent-rank pairs `(k, k+1)` taken every `step` ranks from the caps on `date`.
pub fn adjacent_rank_pairs(panel: &MarketPanel, date: NaiveDate, step: usize) -> Result<Vec<(AssetId, AssetId)>> {
    let t = panel
        .date_index(date)
        .ok_or_else(|| Error::Domain(format!("{date} not in panel")))?;
    let perm = compute_ranks(&panel.caps_at(t))?;
    let step = step.max(1);
    Ok((0..perm.n_live().saturating_sub(1))
        .step_by(step)
        .map(|k| {
            let (a, b) = (perm.name_at(k), perm.name_at(k + 1));
            (panel.assets()[a].clone(), panel.assets()[b].clone())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_sim::business_days;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn two_day_panel(c0: [f64; 2], c1: [f64; 2]) -> MarketPanel {
        let dates = business_days(NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(), 2);
        let caps = DMatrix::from_row_slice(2, 2, &[c0[0], c1[0], c0[1], c1[1]]);
        MarketPanel::from_caps(dates, vec!["A".into(), "B".into()], caps, vec![0.0; 2]).unwrap()
    }

    #[test]
    fn ranks_by_descending_cap() {
        let p = compute_ranks(&[4.0, 9.0]).unwrap();
        assert_eq!(p.rank_of(1), Some(0));
        assert_eq!(p.rank_of(0), Some(1));
    }

    #[test]
    fn equal_caps_tie_break_on_index() {
        let p = compute_ranks(&[5.0, 5.0]).unwrap();
        assert_eq!(p.rank_of(0), Some(0));
        assert_eq!(p.rank_of(1), Some(1));
    }

    #[test]
    fn empty_or_nonpositive_snapshot_rejected() {
        assert!(compute_ranks(&[]).is_err());
        assert!(compute_ranks(&[f64::NAN]).is_err());
        assert!(compute_ranks(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn masked_assets_have_no_rank() {
        let p = compute_ranks(&[3.0, f64::NAN, 7.0]).unwrap();
        assert_eq!(p.rank_of(1), None);
        assert_eq!(p.names(), &[2, 0]);
    }

    #[test]
    fn large_snapshot_is_a_bijection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let caps: Vec<f64> = (0..500).map(|_| rng.random_range(1.0..1e6)).collect();
        let p = compute_ranks(&caps).unwrap();
        for i in 0..500 {
            assert_eq!(p.name_at(p.rank_of(i).unwrap()), i);
        }
        for k in 0..499 {
            assert!(caps[p.name_at(k)] >= caps[p.name_at(k + 1)]);
        }
    }

    #[test]
    fn rank_return_with_switch() {
        let p = two_day_panel([10.0, 5.0], [4.0, 8.0]);
        let r = rank_returns(&p, 1).unwrap();
        assert!((r[0] - (8.0 / 10.0 - 1.0)).abs() < 1e-15);
        assert!((r[1] - (4.0 / 5.0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn constant_caps_zero_rank_returns() {
        let p = two_day_panel([10.0, 5.0], [10.0, 5.0]);
        assert_eq!(rank_returns(&p, 1).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn no_switch_rank_returns_are_reordered_name_returns() {
        let p = two_day_panel([5.0, 10.0], [5.5, 10.1]);
        let r = rank_returns(&p, 1).unwrap();
        assert!((r[0] - p.ret(1, 1).unwrap()).abs() < 1e-12);
        assert!((r[1] - p.ret(0, 1).unwrap()).abs() < 1e-12);
        assert!(rank_returns(&p, 0).is_err());
    }

    fn day(caps: &[[f64; 2]]) -> IntradayPanel {
        let m = caps.len();
        let flat: Vec<f64> = (0..2).flat_map(|i| caps.iter().map(move |c| c[i])).collect();
        IntradayPanel::new(
            NaiveDate::from_ymd_opt(2021, 3, 2).unwrap(),
            (1..=m as u32).collect(),
            vec!["A".into(), "B".into()],
            DMatrix::from_row_slice(2, m, &flat),
        )
        .unwrap()
    }

    #[test]
    fn equal_constant_caps_touch_every_minute() {
        let d = day(&[[5.0, 5.0]; 6]);
        let r = local_crossing_time(&[d], (&"A".into(), &"B".into()), 1e-3).unwrap();
        assert_eq!(r.local_time, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(r.gaps.iter().all(|&g| g == 1));
        assert_eq!(r.gaps.len(), 5);
    }

    #[test]
    fn separated_caps_never_touch() {
        let d = day(&[[10.0, 5.0]; 6]);
        let r = local_crossing_time(&[d], (&"A".into(), &"B".into()), 0.01).unwrap();
        assert!(r.local_time.iter().all(|&x| x == 0.0));
        assert!(r.gaps.is_empty());
        assert!(local_crossing_time(&[], (&"A".into(), &"B".into()), 0.0).is_err());
    }

    // Independent Brownian log-caps started together: the gap histogram thins out.
    #[test]
    fn brownian_gap_density_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut gaps = Vec::new();
        let sigma = 0.02 / (389f64).sqrt();
        for _ in 0..1000 {
            let (mut x1, mut x2) = (0.0f64, 0.0f64);
            let mut caps = Vec::with_capacity(390);
            for _ in 0..390 {
                caps.push([1e9 * x1.exp(), 1e9 * x2.exp()]);
                x1 += sigma * rng.sample::<f64, _>(StandardNormal);
                x2 += sigma * rng.sample::<f64, _>(StandardNormal);
            }
            let r = local_crossing_time(&[day(&caps)], (&"A".into(), &"B".into()), 1e-3).unwrap();
            gaps.extend(r.gaps);
        }
        // Densities on doubling bins [1], [2,3], [4,7], [8,15], ...
        let mut dens = Vec::new();
        let mut lo = 1u32;
        while lo <= 128 {
            let hi = 2 * lo;
            let c = gaps.iter().filter(|&&g| g >= lo && g < hi).count() as f64;
            dens.push(c / f64::from(hi - lo));
            lo = hi;
        }
        assert!(dens.windows(2).all(|w| w[0] >= w[1]), "{dens:?}");
    }

    proptest! {
        #[test]
        fn ranking_preserves_total_cap(caps in prop::collection::vec(0.1f64..1e6, 1..40)) {
            let sorted = sorted_caps(&caps);
            let direct: f64 = caps.iter().sum();
            let ranked: f64 = compute_ranks(&caps).unwrap().names().iter().map(|&i| caps[i]).sum();
            prop_assert_eq!(sorted.len(), caps.len());
            prop_assert!((direct - ranked).abs() <= 1e-9 * direct);
        }

        #[test]
        fn local_time_is_monotone(path in prop::collection::vec((1.0f64..2.0, 1.0f64..2.0), 2..60)) {
            let caps: Vec<[f64; 2]> = path.iter().map(|(a, b)| [*a, *b]).collect();
            let r = local_crossing_time(&[day(&caps)], (&"A".into(), &"B".into()), 0.05).unwrap();
            prop_assert!(r.local_time.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(r.gaps.iter().all(|&g| g > 0));
        }
    }
}
