//! Trains briefly, then scores the test split with multi-clip aggregation
//! and prints the metrics table.

use stateact::config::RunConfig;
use stateact::evaluator::evaluate;
use stateact::ledger::Ledger;
use stateact::net::Model;
use stateact::synthgen::{gen_dataset, Dataset, Split};
use stateact::trainer::train;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let cfg = RunConfig {
        train_count: 540,
        test_count: 90,
        epochs: 10,
        clips: 5,
        ..RunConfig::default()
    };
    gen_dataset(&Ledger::synthetic(), &cfg.gen_spec(), cfg.seed, dir.path(), cfg.entries())?;
    let ds = Dataset::open(dir.path())?;
    let mut model: Model<f32> = Model::new(cfg.model_config(&ds.ledger))?;
    train(&mut model, &ds.ledger, &ds.load_split(Split::Train)?, &cfg.train_config(), |_| {})?;

    let report = evaluate(&model, &ds, Split::Test, cfg.clips, cfg.seed)?;
    print!("{}", report.to_tsv());
    Ok(())
}
