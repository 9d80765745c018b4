//! Round-trips OU residual weights through the JSONL weight stream and replays them.

use rankarb::nn_bridge::import_weight_stream;
use rankarb::pipeline::{self, Config, Strategy};
use rankarb::Space;

fn main() -> rankarb::Result<()> {
    let dir = std::env::temp_dir().join("rankarb-nn-bridge");
    let mut cfg = Config::default();
    cfg.out_dir = dir.to_string_lossy().into_owned();
    cfg.n_assets = 15;
    cfg.n_days = 340;
    cfg.minutes_per_day = 60;
    cfg.space = Space::Name;
    let market = pipeline::load_market(&cfg)?;
    let (training, weights) = pipeline::run_export_train(&market, &cfg)?;
    println!("wrote {} and {}", training.display(), weights.display());

    let stream = import_weight_stream(&weights)?;
    println!("{} weight records, header {:?}", stream.records.len(), stream.header);
    let ou = pipeline::run_backtest(&market, &cfg, Space::Name)?;
    cfg.strategy = Strategy::Nn;
    cfg.weights = weights.to_string_lossy().into_owned();
    let nn = pipeline::run_backtest(&market, &cfg, Space::Name)?;
    println!("terminal value: OU {:.6}, replayed {:.6}", ou.series.terminal(), nn.series.terminal());
    Ok(())
}
