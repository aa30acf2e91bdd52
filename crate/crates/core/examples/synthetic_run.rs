//! Trains on a freshly generated synthetic set and prints per-epoch dev metrics.
//!
//! cargo run --release --example synthetic_run -- [n_train] [n_dev] [config.toml]

use dfgn::config::Config;
use dfgn::data::{generate_synthetic, SyntheticSpec};
use dfgn::graph::Gazetteer;
use dfgn::pipeline::{train, EpochLog, TrainOptions};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let n_dev: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let cfg = match args.get(3) {
        Some(p) => Config::parse(&std::fs::read_to_string(p).expect("read config")).expect("config"),
        None => Config::default(),
    };
    let spec = SyntheticSpec {
        n_examples: n_train + n_dev,
        seed: cfg.seed,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).expect("generate");
    let (tr, dev) = data.split_at(n_train);
    let gaz = Gazetteer::new(&spec.entity_surfaces());
    println!("{}", EpochLog::CSV_HEADER);
    let out = train(tr, dev, &cfg, gaz, TrainOptions::default(), &mut |log| println!("{}", log.csv_row()))
        .expect("train");
    println!(
        "selector precision {:.3} recall {:.3} kept {:.2}",
        out.selection.precision, out.selection.recall, out.selection.mean_kept
    );
}
