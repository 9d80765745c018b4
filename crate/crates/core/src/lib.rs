//! Statistical arbitrage in capitalization-rank space.
//!
//! The crate is organised around the stages of a rank-space backtest:
//!
//! * [`market_sim`] - panels of capitalizations and returns, synthetic Atlas-style
//!   generators and CSV loaders.
//! * [`rank_view`] - rank permutations, rank returns and rank-crossing local time.
//! * [`factor_model`] - PCA decomposition into factors, loadings and the residual
//!   projector `Phi = I - beta * omega`.
//! * [`residual_panel`] - cumulative and normalized cumulative residual trajectories.
//! * [`ou_strategy`] - Ornstein-Uhlenbeck fits, s-scores and the threshold position rule.
//! * [`rebalance_engine`] - intraday rank-to-name rebalancing with a latency / spread
//!   cost ledger.
//! * [`pnl_metrics`] - value processes in name and rank space and annual metrics.
//! * [`diagnostics`] - eigen-spectra, tau histograms, density differences, strategy
//!   maps and switching-time histograms.
//! * [`nn_bridge`] - JSONL weight streams exchanged with an external trainer.
//! * [`pipeline`] - configuration and the integrated name/rank backtests.

pub mod diagnostics;
pub mod error;
pub mod factor_model;
pub mod market_sim;
pub mod nn_bridge;
pub mod ou_strategy;
pub mod pipeline;
pub mod pnl_metrics;
pub mod rank_view;
pub mod rebalance_engine;
pub mod residual_panel;

pub use error::{Error, Result};
pub use market_sim::{AssetId, IntradayPanel, MarketPanel};

use serde::{Deserialize, Serialize};

/// Whether a panel is indexed by company (name space) or by capitalization rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Name,
    Rank,
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Space::Name => f.write_str("name"),
            Space::Rank => f.write_str("rank"),
        }
    }
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "name" => Ok(Space::Name),
            "rank" => Ok(Space::Rank),
            other => Err(Error::Config(format!("space must be `name` or `rank`, got `{other}`"))),
        }
    }
}

/// Trading days per year used for every annualization in the crate.
pub const TRADING_DAYS: f64 = 252.0;
