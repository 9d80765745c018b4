//! CSV loaders and writers for daily, intraday and risk-free panels.
//!
//! Daily: `date,asset,cap,return`. Intraday: `date,minute,asset,cap`.
//! Risk-free: `date,rate`. Lines starting with `#` are comments, which lets output
//! files carry a config-hash banner and still load.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::Deserialize;

use super::{AssetId, IntradayPanel, MarketPanel};
use crate::{Error, Result};

const RETURN_TOLERANCE: f64 = 1e-9;
const CONTINUITY_TOLERANCE: f64 = 1e-6;

/// A non-fatal inconsistency found while loading.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadWarning {
    pub line: usize,
    pub date: NaiveDate,
    pub asset: AssetId,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct DailyLoad {
    pub panel: MarketPanel,
    pub warnings: Vec<LoadWarning>,
}

#[derive(Debug, Deserialize)]
struct DailyRow {
    date: NaiveDate,
    asset: String,
    cap: Option<f64>,
    #[serde(rename = "return")]
    ret: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct IntradayRow {
    date: NaiveDate,
    minute: u32,
    asset: String,
    cap: f64,
}

#[derive(Debug, Deserialize)]
struct RateRow {
    date: NaiveDate,
    rate: f64,
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?)
}

fn expect_headers(rdr: &mut csv::Reader<std::fs::File>, want: &[&str]) -> Result<()> {
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != want {
        return Err(Error::Load {
            line: 1,
            msg: format!("expected header {:?}, found {:?}", want.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(0)
}

/// Loads a daily panel; the risk-free series defaults to zero.
pub fn load_daily_panel(path: impl AsRef<Path>) -> Result<DailyLoad> {
    let mut rdr = reader(path.as_ref())?;
    expect_headers(&mut rdr, &["date", "asset", "cap", "return"])?;
    let mut rows = Vec::new();
    let mut last_date: Option<NaiveDate> = None;
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let row: DailyRow = rec
            .deserialize(None)
            .map_err(|e| Error::Load { line, msg: e.to_string() })?;
        if let Some(prev) = last_date {
            if row.date < prev {
                return Err(Error::Load {
                    line,
                    msg: format!("date {} precedes {}", row.date, prev),
                });
            }
        }
        last_date = Some(row.date);
        if let Some(c) = row.cap {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Load {
                    line,
                    msg: format!("non-positive capitalization {c} for {}", row.asset),
                });
            }
        }
        if let Some(r) = row.ret {
            if !(r.is_finite() && r > -1.0) {
                return Err(Error::Load {
                    line,
                    msg: format!("return {r} for {} is not finite or <= -1", row.asset),
                });
            }
        }
        rows.push((line, row));
    }

    let dates: Vec<NaiveDate> = rows.iter().map(|(_, r)| r.date).collect::<BTreeSet<_>>().into_iter().collect();
    let assets: Vec<AssetId> = rows
        .iter()
        .map(|(_, r)| AssetId(r.asset.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let date_ix: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let asset_ix: BTreeMap<&str, usize> = assets.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();

    let (n, t) = (assets.len(), dates.len());
    let mut caps = DMatrix::from_element(n, t, f64::NAN);
    let mut rets = DMatrix::from_element(n, t, f64::NAN);
    let mut seen = vec![false; n * t];
    let mut lines = vec![0usize; n * t];
    for (line, row) in &rows {
        let (i, j) = (asset_ix[row.asset.as_str()], date_ix[&row.date]);
        if std::mem::replace(&mut seen[i + j * n], true) {
            return Err(Error::Load {
                line: *line,
                msg: format!("duplicate row for {} on {}", row.asset, row.date),
            });
        }
        lines[i + j * n] = *line;
        caps[(i, j)] = row.cap.unwrap_or(f64::NAN);
        // A return is meaningful only where the asset is alive.
        rets[(i, j)] = match row.cap {
            Some(_) => row.ret.unwrap_or(f64::NAN),
            None => f64::NAN,
        };
    }

    let mut warnings = Vec::new();
    for i in 0..n {
        for j in 1..t {
            let (c0, c1, r) = (caps[(i, j - 1)], caps[(i, j)], rets[(i, j)]);
            if c0.is_nan() || c1.is_nan() || r.is_nan() {
                continue;
            }
            let implied = c1 / c0 - 1.0;
            if (r - implied).abs() > RETURN_TOLERANCE {
                warnings.push(LoadWarning {
                    line: lines[i + j * n],
                    date: dates[j],
                    asset: assets[i].clone(),
                    message: format!("return {r} differs from cap ratio {implied}"),
                });
            }
        }
    }

    let panel = MarketPanel::new(dates, assets, caps, rets, vec![0.0; t])?;
    Ok(DailyLoad { panel, warnings })
}

/// Loads every day contained in an intraday file, one panel per date.
pub fn load_intraday_panel(path: impl AsRef<Path>) -> Result<Vec<IntradayPanel>> {
    let mut rdr = reader(path.as_ref())?;
    expect_headers(&mut rdr, &["date", "minute", "asset", "cap"])?;
    let mut by_day: BTreeMap<NaiveDate, Vec<(usize, IntradayRow)>> = BTreeMap::new();
    let mut last_date: Option<NaiveDate> = None;
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let row: IntradayRow = rec
            .deserialize(None)
            .map_err(|e| Error::Load { line, msg: e.to_string() })?;
        if last_date.is_some_and(|prev| row.date < prev) {
            return Err(Error::Load {
                line,
                msg: format!("date {} out of order", row.date),
            });
        }
        last_date = Some(row.date);
        if !(row.cap.is_finite() && row.cap > 0.0) {
            return Err(Error::Load {
                line,
                msg: format!("non-positive capitalization {} for {}", row.cap, row.asset),
            });
        }
        if row.minute == 0 {
            return Err(Error::Load { line, msg: "minute ticks are 1-based".into() });
        }
        by_day.entry(row.date).or_default().push((line, row));
    }

    by_day
        .into_iter()
        .map(|(day, rows)| {
            let assets: Vec<AssetId> = rows
                .iter()
                .map(|(_, r)| AssetId(r.asset.clone()))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let max_minute = rows.iter().map(|(_, r)| r.minute).max().unwrap_or(0) as usize;
            let first_line = rows.first().map(|(l, _)| *l).unwrap_or(0);
            let (n, m) = (assets.len(), max_minute);
            let mut caps = DMatrix::from_element(n, m, f64::NAN);
            for (line, r) in &rows {
                let i = assets.binary_search(&AssetId(r.asset.clone())).unwrap();
                let slot = &mut caps[(i, r.minute as usize - 1)];
                if !slot.is_nan() {
                    return Err(Error::Load {
                        line: *line,
                        msg: format!("duplicate tick {} for {} on {day}", r.minute, r.asset),
                    });
                }
                *slot = r.cap;
            }
            if let Some(pos) = caps.iter().position(|c| c.is_nan()) {
                let (i, j) = (pos % n, pos / n);
                return Err(Error::Load {
                    line: first_line,
                    msg: format!("missing tick {} for {} on {day}", j + 1, assets[i]),
                });
            }
            IntradayPanel::new(day, (1..=m as u32).collect(), assets, caps)
        })
        .collect()
}

/// Checks that each intraday day opens at the prior daily close (relative 1e-6).
pub fn check_continuity(panels: &[IntradayPanel], daily: &MarketPanel) -> Result<()> {
    for p in panels {
        let day = p.day();
        let t = daily.date_index(day).ok_or_else(|| Error::Continuity {
            day,
            msg: "day missing from the daily panel".into(),
        })?;
        if t == 0 {
            return Err(Error::Continuity {
                day,
                msg: "no prior close for the first daily date".into(),
            });
        }
        for (i, asset) in p.assets().iter().enumerate() {
            let Some(row) = daily.asset_index(asset) else {
                return Err(Error::Continuity {
                    day,
                    msg: format!("{asset} is not in the daily panel"),
                });
            };
            let Some(close) = daily.cap(row, t - 1) else {
                return Err(Error::Continuity {
                    day,
                    msg: format!("{asset} has no prior close"),
                });
            };
            let open = p.caps()[(i, 0)];
            if ((open - close) / close).abs() > CONTINUITY_TOLERANCE {
                return Err(Error::Continuity {
                    day,
                    msg: format!("{asset} opens at {open}, prior close was {close}"),
                });
            }
        }
    }
    Ok(())
}

/// [`load_intraday_panel`] followed by [`check_continuity`].
pub fn load_intraday_checked(path: impl AsRef<Path>, daily: &MarketPanel) -> Result<Vec<IntradayPanel>> {
    let panels = load_intraday_panel(path)?;
    check_continuity(&panels, daily)?;
    Ok(panels)
}

pub fn load_risk_free(path: impl AsRef<Path>) -> Result<Vec<(NaiveDate, f64)>> {
    let mut rdr = reader(path.as_ref())?;
    expect_headers(&mut rdr, &["date", "rate"])?;
    let mut out: Vec<(NaiveDate, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let row: RateRow = rec
            .deserialize(None)
            .map_err(|e| Error::Load { line, msg: e.to_string() })?;
        if out.last().is_some_and(|(d, _)| row.date <= *d) {
            return Err(Error::Load { line, msg: format!("date {} not increasing", row.date) });
        }
        out.push((row.date, row.rate));
    }
    Ok(out)
}

fn banner(w: &mut impl Write, banner: Option<&str>) -> Result<()> {
    if let Some(b) = banner {
        writeln!(w, "# {b}")?;
    }
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `date,asset,cap,return`; masked entries become empty fields.
pub fn write_daily_csv(panel: &MarketPanel, mut w: impl Write, comment: Option<&str>) -> Result<()> {
    banner(&mut w, comment)?;
    writeln!(w, "date,asset,cap,return")?;
    for (t, d) in panel.dates().iter().enumerate() {
        for (i, a) in panel.assets().iter().enumerate() {
            writeln!(w, "{d},{a},{},{}", fmt_opt(panel.cap(i, t)), fmt_opt(panel.ret(i, t)))?;
        }
    }
    Ok(())
}

pub fn write_intraday_csv(panels: &[IntradayPanel], mut w: impl Write, comment: Option<&str>) -> Result<()> {
    banner(&mut w, comment)?;
    writeln!(w, "date,minute,asset,cap")?;
    for p in panels {
        for (m, minute) in p.minutes().iter().enumerate() {
            for (i, a) in p.assets().iter().enumerate() {
                writeln!(w, "{},{minute},{a},{}", p.day(), p.caps()[(i, m)])?;
            }
        }
    }
    Ok(())
}

pub fn write_risk_free_csv(panel: &MarketPanel, mut w: impl Write, comment: Option<&str>) -> Result<()> {
    banner(&mut w, comment)?;
    writeln!(w, "date,rate")?;
    for (d, r) in panel.dates().iter().zip(panel.risk_free()) {
        writeln!(w, "{d},{r}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const GOOD: &str = "date,asset,cap,return\n\
        2020-01-02,A,10,\n2020-01-02,B,5,\n\
        2020-01-03,A,11,0.1\n2020-01-03,B,5,0\n\
        2020-01-06,A,11,0\n2020-01-06,B,4,-0.2\n";

    #[test]
    fn loads_well_formed_daily() {
        let f = file(GOOD);
        let load = load_daily_panel(f.path()).unwrap();
        assert_eq!(load.panel.caps().shape(), (2, 3));
        assert!(load.warnings.is_empty(), "{:?}", load.warnings);
        assert_eq!(load.panel.ret(0, 0), None);
        assert!((load.panel.ret(1, 2).unwrap() + 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_cap_names_the_line() {
        let f = file("date,asset,cap,return\n2020-01-02,A,10,\n2020-01-02,B,0,\n");
        match load_daily_panel(f.path()) {
            Err(Error::Load { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn non_monotonic_dates_rejected() {
        let f = file("date,asset,cap,return\n2020-01-03,A,10,\n2020-01-02,A,10,\n");
        assert!(matches!(load_daily_panel(f.path()), Err(Error::Load { line: 3, .. })));
    }

    #[test]
    fn missing_cap_is_masked() {
        let f = file("date,asset,cap,return\n2020-01-02,A,10,\n2020-01-02,B,,\n");
        let p = load_daily_panel(f.path()).unwrap().panel;
        assert_eq!(p.cap(1, 0), None);
    }

    #[test]
    fn inconsistent_return_warns() {
        let f = file("date,asset,cap,return\n2020-01-02,A,10,\n2020-01-03,A,11,0.1000001\n");
        let load = load_daily_panel(f.path()).unwrap();
        assert_eq!(load.warnings.len(), 1);
        assert_eq!(load.warnings[0].line, 3);
    }

    fn intraday_text(first_a: f64, minutes: u32) -> String {
        let mut s = String::from("# generated\ndate,minute,asset,cap\n");
        for m in 1..=minutes {
            let a = if m == 1 { first_a } else { 11.0 };
            s.push_str(&format!("2020-01-03,{m},A,{a}\n2020-01-03,{m},B,5\n"));
        }
        s
    }

    #[test]
    fn intraday_continuity() {
        let daily = load_daily_panel(file(GOOD).path()).unwrap().panel;
        let ok = file(&intraday_text(10.0, 390));
        let panels = load_intraday_checked(ok.path(), &daily).unwrap();
        assert_eq!(panels.len(), 1);
        assert_eq!(panels[0].minutes().len(), 390);

        let bad = file(&intraday_text(10.001, 5));
        assert!(matches!(load_intraday_checked(bad.path(), &daily), Err(Error::Continuity { .. })));
    }

    #[test]
    fn missing_tick_rejected() {
        let f = file("date,minute,asset,cap\n2020-01-03,1,A,10\n2020-01-03,2,A,10\n2020-01-03,1,B,5\n");
        assert!(matches!(load_intraday_panel(f.path()), Err(Error::Load { .. })));
    }

    #[test]
    fn daily_write_then_load() {
        let p = load_daily_panel(file(GOOD).path()).unwrap().panel;
        let mut buf = Vec::new();
        write_daily_csv(&p, &mut buf, Some("config_hash=abc")).unwrap();
        let q = load_daily_panel(file(std::str::from_utf8(&buf).unwrap()).path()).unwrap().panel;
        assert_eq!(p, q);
    }
}
