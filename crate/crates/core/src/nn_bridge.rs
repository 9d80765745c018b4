//! File contract with the external trainer: residual-weight streams in JSONL.
//!
//! The first line may be a header `{"header": {"schema": ..., "config_hash": ...}}`;
//! every other non-blank line is one [`WeightRecord`].

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ou_strategy::{project_weights, StrategyWeights};
use crate::residual_panel::{HeaderLine, JsonlHeader};
use crate::{Error, Result, Space};

pub const WEIGHT_SCHEMA: &str = "rankarb.weights.v1";

/// Residual-space weights for one date.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub date: NaiveDate,
    pub space: Space,
    pub assets: Vec<String>,
    pub w_eps: Vec<f64>,
}

impl WeightRecord {
    pub fn new(date: NaiveDate, space: Space, assets: Vec<String>, w_eps: Vec<f64>) -> Result<Self> {
        let r = WeightRecord {
            date,
            space,
            assets,
            w_eps,
        };
        r.check().map_err(Error::Domain)?;
        Ok(r)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.assets.len() != self.w_eps.len() {
            return Err(format!("{} assets but {} weights", self.assets.len(), self.w_eps.len()));
        }
        if let Some(i) = self.w_eps.iter().position(|w| !w.is_finite()) {
            return Err(format!("non-finite weight for {}", self.assets[i]));
        }
        Ok(())
    }

    pub fn weights(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w_eps)
    }
}

/// A record dropped at import, with the line it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Rejection {
    pub line: usize,
    pub date: NaiveDate,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStream {
    pub header: Option<JsonlHeader>,
    pub records: Vec<WeightRecord>,
    pub rejected: Vec<Rejection>,
    // source line of each record
    lines: Vec<usize>,
}

impl WeightStream {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, date: NaiveDate) -> Option<&WeightRecord> {
        self.records.iter().find(|r| r.date == date)
    }

    /// Keep only records whose universe matches `universes[date]` exactly and whose
    /// space is `space`. Dropped records move to `rejected`.
    pub fn validate(mut self, space: Space, universes: &BTreeMap<NaiveDate, Vec<String>>) -> WeightStream {
        let mut kept = Vec::with_capacity(self.records.len());
        let lines = std::mem::take(&mut self.lines);
        for (i, r) in std::mem::take(&mut self.records).into_iter().enumerate() {
            let line = lines.get(i).copied().unwrap_or(0);
            let reason = if r.space != space {
                Some(format!("space {} where {} was expected", r.space, space))
            } else {
                match universes.get(&r.date) {
                    None => Some("date outside the engine calendar".to_string()),
                    Some(u) if *u != r.assets => Some(universe_mismatch(u, &r.assets)),
                    Some(_) => None,
                }
            };
            match reason {
                Some(reason) => self.rejected.push(Rejection {
                    line,
                    date: r.date,
                    reason,
                }),
                None => kept.push((line, r)),
            }
        }
        self.lines = kept.iter().map(|(l, _)| *l).collect();
        self.records = kept.into_iter().map(|(_, r)| r).collect();
        self
    }
}

fn universe_mismatch(expected: &[String], got: &[String]) -> String {
    if let Some(extra) = got.iter().find(|a| !expected.contains(a)) {
        return format!("unknown asset {extra}");
    }
    if let Some(missing) = expected.iter().find(|a| !got.contains(a)) {
        return format!("missing asset {missing}");
    }
    if expected.len() != got.len() {
        return "duplicate assets".to_string();
    }
    "assets out of universe order".to_string()
}

pub fn write_weight_stream<W: Write>(records: &[WeightRecord], mut w: W, config_hash: Option<&str>) -> Result<()> {
    let header = HeaderLine {
        header: JsonlHeader {
            schema: WEIGHT_SCHEMA.to_string(),
            config_hash: config_hash.map(str::to_string),
        },
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_weight_stream(records: &[WeightRecord], path: &Path, config_hash: Option<&str>) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_weight_stream(records, f, config_hash)
}

pub fn read_weight_stream<R: BufRead>(reader: R) -> Result<WeightStream> {
    let mut stream = WeightStream::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                stream.header = Some(h.header);
                continue;
            }
        }
        let rec: WeightRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        match rec.check() {
            Ok(()) => {
                stream.records.push(rec);
                stream.lines.push(idx + 1);
            }
            Err(reason) => stream.rejected.push(Rejection {
                line: idx + 1,
                date: rec.date,
                reason,
            }),
        }
    }
    let mut seen = std::collections::HashSet::new();
    for r in &stream.records {
        if !seen.insert((r.date, r.space)) {
            return Err(Error::Domain(format!("two weight records for {} in {} space", r.date, r.space)));
        }
    }
    Ok(stream)
}

/// Parse a weight stream. Malformed lines fail with their 1-based line number;
/// structurally bad records are rejected individually.
pub fn import_weight_stream(path: &Path) -> Result<WeightStream> {
    read_weight_stream(BufReader::new(std::fs::File::open(path)?))
}

/// Equity weights `Phi^T w / |Phi^T w|_1`, flat when the projection vanishes.
pub fn nn_equity_weights(projector: &DMatrix<f64>, w_eps: &DVector<f64>) -> Result<StrategyWeights> {
    project_weights(projector, w_eps)
}
