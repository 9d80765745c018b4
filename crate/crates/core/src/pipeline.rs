//! Configuration and the integrated pipelines behind the command-line tool.
//!
//! A config file is flat `key = value` text; `#` starts a comment. Every key has a
//! default (see [`Config::default`]) and unknown keys are rejected. Outputs carry the
//! hash of the effective configuration in a `# config_hash=...` banner (CSV) or a
//! `config_hash` field (JSON).

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    eigen_spectrum, strategy_map, switching_time_distribution, tau_distribution, write_density_csv,
    write_spectrum_csv, write_strategy_map_csv, xhat_density_diff, DensityDiff, SpectrumReport, StrategyMapRow,
    SwitchingTimes, TauDistribution,
};
use crate::factor_model::{decompose, DecompositionConfig, FactorModel};
use crate::market_sim::{
    generate_atlas_market, generate_factor_ou_market, intraday_from_daily, load_daily_panel, load_intraday_checked,
    load_risk_free, select_universe, write_daily_csv, write_intraday_csv, write_risk_free_csv, AtlasConfig,
    FactorOuConfig, LoadWarning,
};
use crate::nn_bridge::{export_weight_stream, import_weight_stream, nn_equity_weights, Rejection, WeightRecord, WeightStream};
use crate::ou_strategy::{
    evaluate_trajectory, strategy_weights, update_positions, write_fit_table, FitOutcome, PositionState, ThresholdRule,
    FIT_TABLE_HEADER,
};
use crate::pnl_metrics::{
    annual_metrics, dollar_neutrality, holding_time, pnl_name, pnl_rank, summary_metrics, write_metrics_csv,
    AnnualMetrics, PeriodMetrics, PnLSeries, RankDay, SharpeConvention, WeightPanel,
};
use crate::rank_view::{adjacent_rank_pairs, local_crossing_time, rank_panel, write_crossings_csv, CrossingRecord};
use crate::rebalance_engine::{write_ledger_rows, CostLedger, LEDGER_HEADER};
use crate::residual_panel::{
    cumulative_residuals, excess_window, export_training_set, normalize_cumulative, scan_residuals, TrainingRecord,
};
use crate::{Error, IntradayPanel, MarketPanel, Result, Space};

/// Synthetic market family used when no data files are configured.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarketKind {
    Atlas,
    FactorOu,
}

/// Where residual-space weights come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Ou,
    /// Imported weight stream (`weights` key).
    Nn,
}

/// Parameter varied by `sweep`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Eta,
    Interval,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $text:literal),* }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)*
                    other => Err(Error::Config(format!(
                        concat!("expected one of", $(" `", $text, "`",)* ", got `{}`"),
                        other
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self {
                    $($ty::$variant => f.write_str($text),)*
                }
            }
        }
    };
}

keyword_enum!(MarketKind { Atlas => "atlas", FactorOu => "factor_ou" });
keyword_enum!(Strategy { Ou => "ou", Nn => "nn" });
keyword_enum!(SweepParam { Eta => "eta", Interval => "interval" });

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sharpe(pub SharpeConvention);

impl FromStr for Sharpe {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "excess" => Ok(Sharpe(SharpeConvention::Excess)),
            "raw" => Ok(Sharpe(SharpeConvention::Raw)),
            other => Err(Error::Config(format!("sharpe must be `excess` or `raw`, got `{other}`"))),
        }
    }
}

impl fmt::Display for Sharpe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            SharpeConvention::Excess => f.write_str("excess"),
            SharpeConvention::Raw => f.write_str("raw"),
        }
    }
}

/// Comma-separated list of numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct NumList(pub Vec<f64>);

impl FromStr for NumList {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(|x| x.parse().map_err(|_| Error::Config(format!("`{x}` is not a number"))))
            .collect::<Result<_>>()
            .map(NumList)
    }
}

impl fmt::Display for NumList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

macro_rules! config {
    ($($(#[doc = $doc:literal])* $key:ident : $ty:ty = $default:expr;)*) => {
        /// Every tunable of the pipelines. Field names are the config keys.
        #[derive(Clone, Debug, PartialEq)]
        pub struct Config {
            $($(#[doc = $doc])* pub $key: $ty,)*
        }

        impl Default for Config {
            fn default() -> Self {
                Config { $($key: $default,)* }
            }
        }

        impl Config {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => self.$key = parse_value(key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// `(key, value)` pairs in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($key), self.$key.to_string())),*]
            }
        }
    };
}

config! {
    /// Output directory.
    out_dir: String = "out".into();
    /// Daily CSV (`date,asset,cap,return`); empty means simulate.
    daily: String = String::new();
    /// Intraday CSV (`date,minute,asset,cap`).
    intraday: String = String::new();
    /// Risk-free CSV (`date,rate`).
    risk_free: String = String::new();
    market: MarketKind = MarketKind::Atlas;
    seed: u64 = 0;
    n_assets: usize = 20;
    n_days: usize = 340;
    minutes_per_day: usize = 390;
    /// Atlas log-volatility per square-root day, every rank.
    atlas_vol: f64 = 0.02;
    /// Atlas log-drift per day, every rank but the last.
    atlas_drift: f64 = 0.0;
    /// Atlas log-drift per day of the smallest rank.
    atlas_bottom_drift: f64 = 0.001;
    factor_loading: f64 = 0.3;
    n_factors: usize = 1;
    factor_vol: f64 = 0.01;
    tau_days: f64 = 2.5;
    residual_vol: f64 = 0.02;
    cap_ratio: f64 = 1.5;
    /// Simulated daily risk-free rate.
    risk_free_rate: f64 = 0.0;
    factor_window: usize = 252;
    loading_window: usize = 60;
    /// Trajectory length L.
    trajectory_len: usize = 60;
    k_name: usize = 5;
    k_rank: usize = 1;
    /// Universe size; 0 keeps every asset.
    universe: usize = 0;
    open_threshold: f64 = 1.25;
    close_threshold: f64 = 0.5;
    tau_cap: f64 = 30.0;
    strategy: Strategy = Strategy::Ou;
    /// Weight-stream JSONL used when `strategy = nn`.
    weights: String = String::new();
    eta: f64 = 0.0002;
    /// Rebalance interval in minutes.
    interval: usize = 225;
    leverage: f64 = 1.0;
    sharpe: Sharpe = Sharpe(SharpeConvention::Excess);
    space: Space = Space::Rank;
    /// Decomposition date for `decompose`; empty means the last date.
    as_of: String = String::new();
    delta: f64 = 1e-3;
    pair_step: usize = 25;
    switch_bin: f64 = 1.0;
    switch_max: f64 = 390.0;
    value_lo: f64 = -4.0;
    value_hi: f64 = 4.0;
    value_bin: f64 = 0.1;
    tau_bin: f64 = 1.0;
    tau_max: f64 = 60.0;
    sweep: SweepParam = SweepParam::Interval;
    sweep_values: NumList = NumList(vec![5.0, 30.0, 225.0, 390.0]);
}

impl Config {
    /// Reads `key = value` lines over the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Config::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip_prefix(e))))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Config::from_text(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Rendered config, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 over every key except `out_dir`, as lowercase hex.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "out_dir" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn banner(&self) -> String {
        format!("config_hash={}", self.hash())
    }

    pub fn rule(&self) -> Result<ThresholdRule> {
        if !(self.open_threshold > self.close_threshold && self.close_threshold >= 0.0) || !(self.tau_cap > 0.0) {
            return Err(Error::Config(format!(
                "need open_threshold > close_threshold >= 0 and tau_cap > 0, got {} / {} / {}",
                self.open_threshold, self.close_threshold, self.tau_cap
            )));
        }
        Ok(ThresholdRule {
            open: self.open_threshold,
            close: self.close_threshold,
            max_tau_days: self.tau_cap,
        })
    }

    pub fn decomposition(&self, space: Space) -> Result<DecompositionConfig> {
        if self.trajectory_len < 3 || self.loading_window < 2 || self.factor_window < self.loading_window {
            return Err(Error::Config(format!(
                "need trajectory_len >= 3 and factor_window >= loading_window >= 2, got {} / {} / {}",
                self.trajectory_len, self.factor_window, self.loading_window
            )));
        }
        Ok(DecompositionConfig {
            factor_window: self.factor_window,
            loading_window: self.loading_window,
            k: match space {
                Space::Name => self.k_name,
                Space::Rank => self.k_rank,
            },
        })
    }

    fn out_path(&self, parts: &[&str]) -> Result<PathBuf> {
        let mut p = PathBuf::from(&self.out_dir);
        for part in &parts[..parts.len() - 1] {
            p.push(part);
        }
        std::fs::create_dir_all(&p)?;
        p.push(parts[parts.len() - 1]);
        Ok(p)
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_out(path: &Path, banner: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut f = create(path)?;
    writeln!(f, "# {banner}")?;
    Ok(csv::Writer::from_writer(f))
}

/// Daily panel with optional intraday panels.
#[derive(Clone, Debug)]
pub struct Market {
    pub daily: MarketPanel,
    pub intraday: Option<Vec<IntradayPanel>>,
    pub warnings: Vec<LoadWarning>,
}

/// Loads the configured files, or simulates a market when `daily` is empty.
pub fn load_market(cfg: &Config) -> Result<Market> {
    if cfg.daily.is_empty() {
        return simulate_market(cfg).map_err(|e| e.in_stage("simulate"));
    }
    let load = load_daily_panel(&cfg.daily).map_err(|e| e.in_stage("load_daily"))?;
    let mut daily = load.panel;
    if !cfg.risk_free.is_empty() {
        let rf = load_risk_free(&cfg.risk_free).map_err(|e| e.in_stage("load_risk_free"))?;
        daily = daily.with_risk_free(&rf).map_err(|e| e.in_stage("load_risk_free"))?;
    }
    let intraday = if cfg.intraday.is_empty() {
        None
    } else {
        Some(load_intraday_checked(&cfg.intraday, &daily).map_err(|e| e.in_stage("load_intraday"))?)
    };
    Ok(Market {
        daily,
        intraday,
        warnings: load.warnings,
    })
}

pub fn atlas_config(cfg: &Config) -> AtlasConfig {
    let mut a = AtlasConfig::new(cfg.n_assets, cfg.n_days, cfg.seed);
    a.minutes_per_day = cfg.minutes_per_day;
    a.rank_vols = vec![cfg.atlas_vol; cfg.n_assets];
    a.rank_drifts = vec![cfg.atlas_drift; cfg.n_assets];
    if let Some(last) = a.rank_drifts.last_mut() {
        *last = cfg.atlas_bottom_drift;
    }
    a.factor_loading = cfg.factor_loading;
    a.risk_free = cfg.risk_free_rate;
    a
}

pub fn factor_ou_config(cfg: &Config) -> FactorOuConfig {
    let mut f = FactorOuConfig::new(cfg.n_assets, cfg.n_days, cfg.tau_days, cfg.seed);
    f.n_factors = cfg.n_factors;
    f.factor_vol = cfg.factor_vol;
    f.residual_vol = cfg.residual_vol;
    f.cap_ratio = cfg.cap_ratio;
    f.risk_free = cfg.risk_free_rate;
    f
}

pub fn simulate_market(cfg: &Config) -> Result<Market> {
    let (daily, intraday) = match cfg.market {
        MarketKind::Atlas => generate_atlas_market(&atlas_config(cfg))?,
        MarketKind::FactorOu => {
            let daily = generate_factor_ou_market(&factor_ou_config(cfg))?;
            let intraday = intraday_from_daily(&daily, cfg.minutes_per_day)?;
            (daily, intraday)
        }
    };
    Ok(Market {
        daily,
        intraday: Some(intraday),
        warnings: Vec::new(),
    })
}

/// `simulate`: writes `daily.csv`, `risk_free.csv` and `intraday.csv`.
pub fn run_simulate(cfg: &Config) -> Result<Vec<PathBuf>> {
    let m = simulate_market(cfg).map_err(|e| e.in_stage("simulate"))?;
    let banner = cfg.banner();
    let daily = cfg.out_path(&["daily.csv"])?;
    write_daily_csv(&m.daily, create(&daily)?, Some(&banner))?;
    let rf = cfg.out_path(&["risk_free.csv"])?;
    write_risk_free_csv(&m.daily, create(&rf)?, Some(&banner))?;
    let intraday = cfg.out_path(&["intraday.csv"])?;
    write_intraday_csv(m.intraday.as_deref().unwrap_or(&[]), create(&intraday)?, Some(&banner))?;
    Ok(vec![daily, rf, intraday])
}

/// A panel in the requested space with the rows and labels the strategy trades.
pub struct SpaceView {
    pub space: Space,
    pub panel: MarketPanel,
    pub rows: Vec<usize>,
    pub labels: Vec<String>,
}

pub fn space_view(market: &Market, cfg: &Config, space: Space) -> Result<SpaceView> {
    let daily = &market.daily;
    let (panel, rows) = match space {
        Space::Name => {
            let n = if cfg.universe == 0 { daily.n_assets() } else { cfg.universe };
            let as_of = cfg.factor_window.min(daily.n_dates().saturating_sub(2));
            let sel = select_universe(daily, as_of, n)?;
            let mut rows = sel.indices;
            rows.sort_unstable();
            (daily.clone(), rows)
        }
        Space::Rank => {
            let ranks = rank_panel(daily, (cfg.universe > 0).then_some(cfg.universe))?;
            let rows = (0..ranks.n_assets()).collect();
            (ranks, rows)
        }
    };
    let labels = rows.iter().map(|&i| panel.assets()[i].to_string()).collect();
    Ok(SpaceView {
        space,
        panel,
        rows,
        labels,
    })
}

/// Date indices on which a full trajectory exists and a next date follows.
pub fn decision_range(cfg: &Config, n_dates: usize) -> Result<std::ops::Range<usize>> {
    let first = cfg.factor_window + cfg.trajectory_len - 1;
    if first + 1 >= n_dates {
        return Err(Error::Range(format!(
            "{n_dates} dates are too few: the first decision needs {} dates and one more to trade",
            first + 1
        )));
    }
    Ok(first..n_dates - 1)
}

/// Residual and equity weights produced by a strategy over its decision dates.
#[derive(Clone, Debug)]
pub struct StrategyRun {
    pub space: Space,
    pub labels: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// Equity (or rank) weights, one column per decision date.
    pub weights: DMatrix<f64>,
    /// Residual-space weights.
    pub w_eps: DMatrix<f64>,
    pub fits: Vec<Vec<FitOutcome>>,
    /// Normalized trajectory rows pooled over all dates (finite rows only).
    pub normalized: Vec<Vec<f64>>,
    pub training: Vec<TrainingRecord>,
    /// Decision dates with no imported weight record.
    pub nn_missing: Vec<NaiveDate>,
    /// Model of the last decision date.
    pub last_model: Option<FactorModel>,
}

impl StrategyRun {
    pub fn weight_panel(&self) -> Result<WeightPanel> {
        WeightPanel::new(self.dates.clone(), self.labels.clone(), self.weights.clone())
    }

    /// The residual weights in bridge records.
    pub fn weight_records(&self) -> Vec<WeightRecord> {
        self.dates
            .iter()
            .enumerate()
            .map(|(c, d)| WeightRecord {
                date: *d,
                space: self.space,
                assets: self.labels.clone(),
                w_eps: self.w_eps.column(c).iter().copied().collect(),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Collect {
    pub normalized: bool,
    pub training: bool,
}

/// Runs decompose -> trajectories -> weights over every decision date.
pub fn run_strategy(
    view: &SpaceView,
    cfg: &Config,
    nn: Option<&WeightStream>,
    collect: Collect,
) -> Result<StrategyRun> {
    let dcfg = cfg.decomposition(view.space)?;
    let rule = cfg.rule()?;
    let panel = &view.panel;
    let range = decision_range(cfg, panel.n_dates()).map_err(|e| e.in_stage("decompose"))?;
    let l = cfg.trajectory_len;
    let n = view.rows.len();
    let mut buffer: VecDeque<DVector<f64>> = VecDeque::with_capacity(l + 1);
    let mut state = PositionState::flat(view.labels.clone());
    let mut run = StrategyRun {
        space: view.space,
        labels: view.labels.clone(),
        dates: Vec::new(),
        weights: DMatrix::zeros(0, 0),
        w_eps: DMatrix::zeros(0, 0),
        fits: Vec::new(),
        normalized: Vec::new(),
        training: Vec::new(),
        nn_missing: Vec::new(),
        last_model: None,
    };
    let mut w_cols = Vec::new();
    let mut eps_cols = Vec::new();
    let nn_by_date: BTreeMap<NaiveDate, &WeightRecord> =
        nn.map(|s| s.records.iter().map(|r| (r.date, r)).collect()).unwrap_or_default();
    scan_residuals(panel, &view.rows, &dcfg, |t, model, eps| {
        buffer.push_back(eps.clone());
        if buffer.len() > l {
            buffer.pop_front();
        }
        if !range.contains(&t) {
            return Ok(());
        }
        let date = panel.dates()[t];
        let window = DMatrix::from_columns(buffer.make_contiguous());
        let traj = cumulative_residuals(&window, date).map_err(|e| e.in_stage("residuals"))?;
        if collect.normalized {
            let z = normalize_cumulative(&traj, &window).map_err(|e| e.in_stage("residuals"))?;
            for row in z.values.row_iter() {
                if row.iter().all(|x| x.is_finite()) {
                    run.normalized.push(row.iter().copied().collect());
                }
            }
        }
        if collect.training {
            let mut rec = TrainingRecord::new(view.space, view.labels.clone(), &traj)?;
            rec.r_next = Some(
                view.rows
                    .iter()
                    .map(|&i| panel.returns()[(i, t + 1)] - panel.risk_free()[t + 1])
                    .collect(),
            );
            run.training.push(rec);
        }
        let outcomes = evaluate_trajectory(&traj);
        let (w, w_eps) = match nn {
            None => {
                state = update_positions(&state, &outcomes, &rule, date).map_err(|e| e.in_stage("ou_strategy"))?;
                let sw = strategy_weights(&model.projector, &state).map_err(|e| e.in_stage("ou_strategy"))?;
                let w_eps = DVector::from_iterator(n, state.w_eps.iter().map(|&x| x as f64));
                (sw.weights, w_eps)
            }
            Some(_) => match nn_by_date.get(&date) {
                Some(rec) => {
                    let w_eps = rec.weights();
                    let sw = nn_equity_weights(&model.projector, &w_eps).map_err(|e| e.in_stage("nn_weights"))?;
                    (sw.weights, w_eps)
                }
                None => {
                    run.nn_missing.push(date);
                    (DVector::zeros(n), DVector::zeros(n))
                }
            },
        };
        run.dates.push(date);
        run.fits.push(outcomes);
        w_cols.push(w);
        eps_cols.push(w_eps);
        run.last_model = Some(model.clone());
        Ok(())
    })
    .map_err(|e| e.in_stage("decompose"))?;
    run.weights = DMatrix::from_columns(&w_cols);
    run.w_eps = DMatrix::from_columns(&eps_cols);
    Ok(run)
}

/// Outcome of a name- or rank-space backtest.
#[derive(Clone, Debug)]
pub struct Backtest {
    pub run: StrategyRun,
    pub series: PnLSeries,
    pub metrics: Vec<AnnualMetrics>,
    pub summary: Option<PeriodMetrics>,
    pub rank_days: Vec<RankDay>,
    pub ledgers: Vec<CostLedger>,
    pub rejected: Vec<Rejection>,
}

fn load_nn(cfg: &Config, view: &SpaceView, dates: &[NaiveDate]) -> Result<Option<WeightStream>> {
    if cfg.strategy != Strategy::Nn {
        return Ok(None);
    }
    if cfg.weights.is_empty() {
        return Err(Error::Config("strategy = nn needs a `weights` stream".into()));
    }
    let stream = import_weight_stream(Path::new(&cfg.weights)).map_err(|e| e.in_stage("import_weights"))?;
    let universes = dates.iter().map(|d| (*d, view.labels.clone())).collect();
    Ok(Some(stream.validate(view.space, &universes)))
}

fn decision_dates(cfg: &Config, panel: &MarketPanel) -> Result<Vec<NaiveDate>> {
    Ok(decision_range(cfg, panel.n_dates())?.map(|t| panel.dates()[t]).collect())
}

/// Strategy run in `space`, reusable across cost settings.
pub fn prepare(market: &Market, cfg: &Config, space: Space, collect: Collect) -> Result<(SpaceView, StrategyRun, Vec<Rejection>)> {
    let view = space_view(market, cfg, space).map_err(|e| e.in_stage("universe"))?;
    let dates = decision_dates(cfg, &view.panel).map_err(|e| e.in_stage("decompose"))?;
    let nn = load_nn(cfg, &view, &dates)?;
    let run = run_strategy(&view, cfg, nn.as_ref(), collect)?;
    let rejected = nn.map(|s| s.rejected).unwrap_or_default();
    Ok((view, run, rejected))
}

/// Value process of a prepared run for the given costs.
pub fn account(
    market: &Market,
    run: &StrategyRun,
    eta: f64,
    interval: usize,
    leverage: f64,
) -> Result<(PnLSeries, Vec<RankDay>, Vec<CostLedger>)> {
    let weights = run.weight_panel().map_err(|e| e.in_stage("weights"))?;
    match run.space {
        Space::Name => {
            let s = pnl_name(&weights, &market.daily, eta, leverage).map_err(|e| e.in_stage("pnl_name"))?;
            Ok((s, Vec::new(), Vec::new()))
        }
        Space::Rank => {
            let intraday = market.intraday.as_deref().ok_or_else(|| {
                Error::Accounting("rank-space backtest needs intraday panels (set `intraday`)".into())
                    .in_stage("load_intraday")
            })?;
            let r = pnl_rank(&weights, &market.daily, intraday, interval, eta, leverage)
                .map_err(|e| e.in_stage("pnl_rank"))?;
            Ok((r.series, r.days, r.ledgers))
        }
    }
}

pub fn run_backtest(market: &Market, cfg: &Config, space: Space) -> Result<Backtest> {
    let (_, run, rejected) = prepare(market, cfg, space, Collect::default())?;
    let (series, rank_days, ledgers) = account(market, &run, cfg.eta, cfg.interval, cfg.leverage)?;
    let metrics = annual_metrics(&series, cfg.sharpe.0);
    let summary = summary_metrics(&series, cfg.sharpe.0);
    Ok(Backtest {
        run,
        series,
        metrics,
        summary,
        rank_days,
        ledgers,
        rejected,
    })
}

pub fn run_backtest_name(market: &Market, cfg: &Config) -> Result<Backtest> {
    run_backtest(market, cfg, Space::Name)
}

pub fn run_backtest_rank(market: &Market, cfg: &Config) -> Result<Backtest> {
    run_backtest(market, cfg, Space::Rank)
}

/// Writes the backtest tables under `out_dir/<space>/`.
pub fn write_backtest(bt: &Backtest, cfg: &Config) -> Result<Vec<PathBuf>> {
    let banner = cfg.banner();
    let dir = bt.run.space.to_string();
    let mut written = Vec::new();

    let p = cfg.out_path(&[&dir, "pnl.csv"])?;
    let mut w = csv_out(&p, &banner)?;
    w.write_record(["date", "value", "return", "risk_free"])?;
    for (i, d) in bt.series.dates.iter().enumerate() {
        let r = if i == 0 { String::new() } else { (bt.series.value[i] / bt.series.value[i - 1] - 1.0).to_string() };
        w.write_record([d.to_string(), bt.series.value[i].to_string(), r, bt.series.risk_free[i].to_string()])?;
    }
    w.flush()?;
    written.push(p);

    let p = cfg.out_path(&[&dir, "metrics.csv"])?;
    write_metrics_csv(&bt.metrics, create(&p)?, Some(&banner))?;
    written.push(p);

    let p = cfg.out_path(&[&dir, "neutrality.csv"])?;
    let mut w = csv_out(&p, &banner)?;
    w.write_record(["date", "ratio", "long", "short"])?;
    for n in dollar_neutrality(&bt.run.weight_panel()?) {
        w.write_record([
            n.date.to_string(),
            n.ratio.map(|r| r.to_string()).unwrap_or_default(),
            n.long.to_string(),
            n.short.to_string(),
        ])?;
    }
    w.flush()?;
    written.push(p);

    let p = cfg.out_path(&[&dir, "holding_time.csv"])?;
    let mut w = csv_out(&p, &banner)?;
    w.write_record(["year", "avg_days"])?;
    for (y, h) in holding_time(&bt.run.dates, &bt.run.w_eps)? {
        w.write_record([y.to_string(), h.to_string()])?;
    }
    w.flush()?;
    written.push(p);

    let p = cfg.out_path(&[&dir, "fits.csv"])?;
    let mut w = csv_out(&p, &banner)?;
    w.write_record(FIT_TABLE_HEADER)?;
    for (d, fits) in bt.run.dates.iter().zip(&bt.run.fits) {
        write_fit_table(&mut w, *d, &bt.run.labels, fits)?;
    }
    w.flush()?;
    written.push(p);

    if bt.run.space == Space::Rank {
        let p = cfg.out_path(&[&dir, "days.csv"])?;
        let mut w = csv_out(&p, &banner)?;
        w.write_record(["date", "open_cost", "total_latency", "total_spread", "max_divergence", "end_value"])?;
        for d in &bt.rank_days {
            w.write_record([
                d.date.to_string(),
                d.open_cost.to_string(),
                d.total_latency.to_string(),
                d.total_spread.to_string(),
                d.max_divergence.to_string(),
                d.end_value.to_string(),
            ])?;
        }
        w.flush()?;
        written.push(p);

        let p = cfg.out_path(&[&dir, "ledger.csv"])?;
        let mut w = csv_out(&p, &banner)?;
        w.write_record(LEDGER_HEADER)?;
        for l in &bt.ledgers {
            write_ledger_rows(&mut w, l)?;
        }
        w.flush()?;
        written.push(p);
    }
    Ok(written)
}

/// One row of a cost sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub terminal_value: f64,
    pub summary: Option<PeriodMetrics>,
    pub total_spread: f64,
    pub total_latency: f64,
}

/// Re-accounts one strategy run under each value of `cfg.sweep`.
pub fn run_sweep(market: &Market, cfg: &Config, space: Space) -> Result<Vec<SweepRow>> {
    if cfg.sweep == SweepParam::Interval && space == Space::Name {
        return Err(Error::Config("an interval sweep needs space = rank".into()));
    }
    let (_, run, _) = prepare(market, cfg, space, Collect::default())?;
    cfg.sweep_values
        .0
        .iter()
        .map(|&v| {
            let (eta, interval) = match cfg.sweep {
                SweepParam::Eta => (v, cfg.interval),
                SweepParam::Interval => {
                    if !(v >= 1.0 && v.fract() == 0.0) {
                        return Err(Error::Config(format!("rebalance interval {v} is not a positive integer")));
                    }
                    (cfg.eta, v as usize)
                }
            };
            let (series, days, _) = account(market, &run, eta, interval, cfg.leverage)?;
            Ok(SweepRow {
                value: v,
                terminal_value: series.terminal(),
                summary: summary_metrics(&series, cfg.sharpe.0),
                total_spread: days.iter().map(|d| d.total_spread).sum(),
                total_latency: days.iter().map(|d| d.total_latency).sum(),
            })
        })
        .collect()
}

pub fn write_sweep(rows: &[SweepRow], cfg: &Config, space: Space) -> Result<PathBuf> {
    let p = cfg.out_path(&[&format!("sweep_{}_{}.csv", cfg.sweep, space)])?;
    let mut w = csv_out(&p, &cfg.banner())?;
    w.write_record([
        cfg.sweep.to_string().as_str(),
        "terminal_value",
        "annual_return",
        "annual_vol",
        "sharpe",
        "total_spread",
        "total_latency",
    ])?;
    for r in rows {
        let m = r.summary;
        w.write_record([
            r.value.to_string(),
            r.terminal_value.to_string(),
            m.map(|m| m.annual_return.to_string()).unwrap_or_default(),
            m.map(|m| m.annual_vol.to_string()).unwrap_or_default(),
            m.and_then(|m| m.sharpe).map(|s| s.to_string()).unwrap_or_default(),
            r.total_spread.to_string(),
            r.total_latency.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(p)
}

/// `decompose`: the factor model of `space` at `as_of`.
pub fn run_decompose(market: &Market, cfg: &Config) -> Result<FactorModel> {
    let view = space_view(market, cfg, cfg.space).map_err(|e| e.in_stage("universe"))?;
    let dcfg = cfg.decomposition(cfg.space)?;
    let panel = &view.panel;
    let t = if cfg.as_of.is_empty() {
        panel.n_dates() - 1
    } else {
        let d: NaiveDate = parse_value("as_of", &cfg.as_of)?;
        panel
            .date_index(d)
            .ok_or_else(|| Error::Range(format!("as_of {d} is not a panel date")).in_stage("decompose"))?
    };
    if t < dcfg.factor_window {
        return Err(Error::Range(format!(
            "as_of index {t} leaves fewer than {} returns for the factor window",
            dcfg.factor_window
        ))
        .in_stage("decompose"));
    }
    let window = excess_window(panel, &view.rows, t, dcfg.factor_window).map_err(|e| e.in_stage("decompose"))?;
    decompose(&window, view.labels.clone(), panel.dates()[t], &dcfg).map_err(|e| match e {
        Error::Fit(m) if m.starts_with("asset row ") => {
            let idx: Option<usize> = m["asset row ".len()..].split_whitespace().next().and_then(|x| x.parse().ok());
            let name = idx.and_then(|i| view.labels.get(i)).cloned().unwrap_or_default();
            Error::Fit(format!("asset {name}: {m}")).in_stage("decompose")
        }
        other => other.in_stage("decompose"),
    })
}

pub fn write_decompose(model: &FactorModel, cfg: &Config) -> Result<PathBuf> {
    let p = cfg.out_path(&[&format!("factor_model_{}.json", cfg.space)])?;
    let mut f = create(&p)?;
    f.write_all(model.to_json(Some(&cfg.hash()))?.as_bytes())?;
    f.flush()?;
    Ok(p)
}

/// `export-train`: training records and the engine's OU residual weights.
pub fn run_export_train(market: &Market, cfg: &Config) -> Result<(PathBuf, PathBuf)> {
    let mut ou = cfg.clone();
    ou.strategy = Strategy::Ou;
    let (_, run, _) = prepare(market, &ou, cfg.space, Collect { training: true, ..Collect::default() })?;
    let hash = cfg.hash();
    let train = cfg.out_path(&[&format!("training_{}.jsonl", cfg.space)])?;
    export_training_set(&run.training, &train, Some(&hash))?;
    let weights = cfg.out_path(&[&format!("ou_weights_{}.jsonl", cfg.space)])?;
    export_weight_stream(&run.weight_records(), &weights, Some(&hash))?;
    Ok((train, weights))
}

/// Result of validating a weight stream against the engine universes.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportReport {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
    /// Decision dates without a record.
    pub missing: Vec<NaiveDate>,
}

/// `import-weights`: validates the `weights` stream for `space`.
pub fn run_import_weights(market: &Market, cfg: &Config) -> Result<ImportReport> {
    if cfg.weights.is_empty() {
        return Err(Error::Config("import-weights needs a `weights` stream".into()));
    }
    let view = space_view(market, cfg, cfg.space).map_err(|e| e.in_stage("universe"))?;
    let dates = decision_dates(cfg, &view.panel).map_err(|e| e.in_stage("decompose"))?;
    let stream = import_weight_stream(Path::new(&cfg.weights)).map_err(|e| e.in_stage("import_weights"))?;
    let universes: BTreeMap<_, _> = dates.iter().map(|d| (*d, view.labels.clone())).collect();
    let s = stream.validate(cfg.space, &universes);
    let missing = dates.iter().filter(|d| s.get(**d).is_none()).copied().collect();
    Ok(ImportReport {
        accepted: s.records.len(),
        rejected: s.rejected,
        missing,
    })
}

pub fn write_import_report(r: &ImportReport, cfg: &Config) -> Result<PathBuf> {
    let p = cfg.out_path(&[&format!("import_{}.csv", cfg.space)])?;
    let mut w = csv_out(&p, &cfg.banner())?;
    w.write_record(["line", "date", "status", "reason"])?;
    for rej in &r.rejected {
        w.write_record([rej.line.to_string(), rej.date.to_string(), "rejected".into(), rej.reason.clone()])?;
    }
    for d in &r.missing {
        w.write_record([String::new(), d.to_string(), "missing".into(), String::new()])?;
    }
    w.flush()?;
    Ok(p)
}

/// Everything `diagnose` computes.
#[derive(Clone, Debug)]
pub struct Diagnostics {
    pub spectrum: SpectrumReport,
    pub tau_rank: TauDistribution,
    pub tau_name: TauDistribution,
    pub density_rank: DensityDiff,
    pub density_name: DensityDiff,
    pub strategy_map: Vec<StrategyMapRow>,
    pub switching: Option<SwitchingTimes>,
    pub crossings: Vec<CrossingRecord>,
}

fn pooled(rows: &[Vec<f64>], l: usize) -> DMatrix<f64> {
    DMatrix::from_row_iterator(rows.len(), l, rows.iter().flatten().copied())
}

fn all_fits(run: &StrategyRun) -> Vec<FitOutcome> {
    run.fits.iter().flatten().cloned().collect()
}

pub fn run_diagnostics(market: &Market, cfg: &Config) -> Result<Diagnostics> {
    let collect = Collect { normalized: true, ..Collect::default() };
    let (name_view, name_run, _) = prepare(market, cfg, Space::Name, collect)?;
    let (_, rank_run, _) = prepare(market, cfg, Space::Rank, collect)?;
    let last = name_view.panel.n_dates() - 1;
    let window =
        excess_window(&name_view.panel, &name_view.rows, last, cfg.loading_window).map_err(|e| e.in_stage("spectrum"))?;
    let spectrum = eigen_spectrum(&window, Some(name_view.panel.dates()[last])).map_err(|e| e.in_stage("spectrum"))?;
    let tau = |run: &StrategyRun| tau_distribution(&all_fits(run), cfg.tau_bin, cfg.tau_max).map_err(|e| e.in_stage("tau"));
    let density = |run: &StrategyRun| {
        xhat_density_diff(&pooled(&run.normalized, cfg.trajectory_len), cfg.value_lo, cfg.value_hi, cfg.value_bin)
            .map_err(|e| e.in_stage("density"))
    };
    let c = rank_run.dates.len() - 1;
    let w_eps: Vec<f64> = rank_run.w_eps.column(c).iter().copied().collect();
    let map = strategy_map(rank_run.dates[c], &rank_run.labels, &rank_run.fits[c], &w_eps)
        .map_err(|e| e.in_stage("strategy_map"))?;
    let (switching, crossings) = match &market.intraday {
        Some(intraday) if !intraday.is_empty() => {
            let first = market
                .daily
                .date_index(intraday[0].day())
                .map(|t| t.saturating_sub(1))
                .unwrap_or(0);
            let pairs = adjacent_rank_pairs(&market.daily, market.daily.dates()[first], cfg.pair_step)
                .map_err(|e| e.in_stage("switching"))?;
            let s = switching_time_distribution(intraday, &pairs, cfg.delta, cfg.switch_bin, cfg.switch_max)
                .map_err(|e| e.in_stage("switching"))?;
            let recs = pairs
                .iter()
                .map(|(a, b)| local_crossing_time(intraday, (a, b), cfg.delta))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_stage("switching"))?;
            (Some(s), recs)
        }
        _ => (None, Vec::new()),
    };
    Ok(Diagnostics {
        spectrum,
        tau_rank: tau(&rank_run)?,
        tau_name: tau(&name_run)?,
        density_rank: density(&rank_run)?,
        density_name: density(&name_run)?,
        strategy_map: map,
        switching,
        crossings,
    })
}

fn write_tau(d: &TauDistribution, p: &Path, banner: &str) -> Result<()> {
    let summary = format!(
        "{banner} mean_reverting={} non_mean_reverting={} failed={} frac_tau_above_30={}",
        d.mean_reverting, d.non_mean_reverting, d.failed, d.frac_above_30
    );
    d.histogram.write_csv(create(p)?, Some(&summary))
}

pub fn write_diagnostics(d: &Diagnostics, cfg: &Config) -> Result<Vec<PathBuf>> {
    let banner = cfg.banner();
    let dir = "diagnostics";
    let mut out = Vec::new();
    let p = cfg.out_path(&[dir, "spectrum.csv"])?;
    write_spectrum_csv(&d.spectrum, create(&p)?, Some(&banner))?;
    out.push(p);
    for (name, t) in [("tau_rank.csv", &d.tau_rank), ("tau_name.csv", &d.tau_name)] {
        let p = cfg.out_path(&[dir, name])?;
        write_tau(t, &p, &banner)?;
        out.push(p);
    }
    for (name, x) in [("density_rank.csv", &d.density_rank), ("density_name.csv", &d.density_name)] {
        let p = cfg.out_path(&[dir, name])?;
        let mut note = banner.clone();
        for w in &x.warnings {
            note.push_str(&format!("; warning: {w}"));
        }
        write_density_csv(x, create(&p)?, Some(&note))?;
        out.push(p);
    }
    let p = cfg.out_path(&[dir, "strategy_map.csv"])?;
    write_strategy_map_csv(&d.strategy_map, create(&p)?, Some(&banner))?;
    out.push(p);
    if let Some(s) = &d.switching {
        let p = cfg.out_path(&[dir, "switching.csv"])?;
        let note = match (s.is_empty(), s.rate, s.r2) {
            (true, _, _) => format!("{banner} empty: no crossings observed"),
            (false, Some(rate), Some(r2)) => format!("{banner} gaps={} exp_rate={rate} r2={r2}", s.n_gaps),
            _ => format!("{banner} gaps={}", s.n_gaps),
        };
        s.histogram.write_csv(create(&p)?, Some(&note))?;
        out.push(p);
        let p = cfg.out_path(&[dir, "crossings.csv"])?;
        write_crossings_csv(&d.crossings, create(&p)?, Some(&banner))?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Config {
        let mut c = Config::default();
        for kv in [
            "n_assets=8",
            "n_days=140",
            "minutes_per_day=20",
            "factor_window=80",
            "loading_window=30",
            "trajectory_len=30",
            "k_name=2",
            "interval=5",
        ] {
            c.apply_override(kv).unwrap();
        }
        c
    }

    #[test]
    fn config_text_roundtrip() {
        let c = small();
        let back = Config::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(Config::KEYS.len(), c.entries().len());
    }

    #[test]
    fn config_errors() {
        assert!(matches!(Config::from_text("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(Config::from_text("eta = lots"), Err(Error::Config(_))));
        assert!(matches!(Config::from_text("eta"), Err(Error::Config(_))));
        let c = Config::from_text("# comment\n\neta = 0.0005 # five bp\nspace = name\n").unwrap();
        assert_eq!((c.eta, c.space), (0.0005, Space::Name));
        let mut bad = Config::default();
        bad.close_threshold = 2.0;
        assert!(bad.rule().is_err());
    }

    #[test]
    fn hash_ignores_out_dir() {
        let mut a = Config::default();
        let b = a.clone();
        a.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        a.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn short_panel_is_a_range_error() {
        let mut c = small();
        c.n_days = 100;
        let m = load_market(&c).unwrap();
        let e = run_backtest_name(&m, &c).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().starts_with("[decompose]"), "{e}");
    }

    #[test]
    fn name_and_rank_backtests_run() {
        let c = small();
        let m = load_market(&c).unwrap();
        let name = run_backtest_name(&m, &c).unwrap();
        let rank = run_backtest_rank(&m, &c).unwrap();
        let decisions = 140 - 1 - (80 + 30 - 1);
        assert_eq!(name.run.dates.len(), decisions);
        assert_eq!(rank.series.value.len(), decisions + 1);
        assert_eq!(rank.rank_days.len(), decisions);
        assert!(name.series.value.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn nn_stream_of_ou_weights_reproduces_ou_backtest() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small();
        c.out_dir = dir.path().to_string_lossy().into_owned();
        c.space = Space::Name;
        let m = load_market(&c).unwrap();
        let (_, weights) = run_export_train(&m, &c).unwrap();
        let ou = run_backtest_name(&m, &c).unwrap();
        c.strategy = Strategy::Nn;
        c.weights = weights.to_string_lossy().into_owned();
        let report = run_import_weights(&m, &c).unwrap();
        assert!(report.rejected.is_empty() && report.missing.is_empty());
        let nn = run_backtest_name(&m, &c).unwrap();
        assert_eq!(nn.series.value, ou.series.value);
    }

    #[test]
    fn rank_backtest_without_intraday_is_tagged() {
        let c = small();
        let mut m = load_market(&c).unwrap();
        m.intraday = None;
        let e = run_backtest_rank(&m, &c).unwrap_err();
        assert!(e.to_string().starts_with("[load_intraday]"), "{e}");
        assert_eq!(e.exit_code(), 3);
    }
}
