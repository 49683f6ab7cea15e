//! Trains the default model on a reduced generated dataset and prints the
//! per-epoch loss table.

use stateact::config::RunConfig;
use stateact::ledger::Ledger;
use stateact::net::Model;
use stateact::synthgen::{gen_dataset, Dataset, Split};
use stateact::trainer::{format_epoch_log, train};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let cfg = RunConfig {
        train_count: 540,
        test_count: 90,
        epochs: 10,
        ..RunConfig::default()
    };
    gen_dataset(&Ledger::synthetic(), &cfg.gen_spec(), cfg.seed, dir.path(), cfg.entries())?;
    let ds = Dataset::open(dir.path())?;
    let segments = ds.load_split(Split::Train)?;

    let mut model: Model<f32> = Model::new(cfg.model_config(&ds.ledger))?;
    let log = train(&mut model, &ds.ledger, &segments, &cfg.train_config(), |e| {
        eprintln!("epoch {} done, total loss {:.4}", e.epoch, e.loss.total)
    })?;
    print!("{}", format_epoch_log(&log));
    Ok(())
}
