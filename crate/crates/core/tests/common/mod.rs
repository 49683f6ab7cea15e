#![allow(dead_code)]

pub mod oracles;

use std::path::Path;

use stateact::config::RunConfig;
use stateact::ledger::Ledger;
use stateact::synthgen::{gen_dataset, Dataset};

/// A configuration small enough to train in well under a second per epoch.
pub fn small_run() -> RunConfig {
    RunConfig {
        k: 3,
        segment_len: 12,
        image_size: 16,
        train_count: 36,
        test_count: 18,
        epochs: 2,
        batch_size: 8,
        backbone_channels: vec![4, 8, 8],
        shared_channels: 8,
        clips: 2,
        ..RunConfig::default()
    }
}

pub fn small_dataset(dir: &Path, cfg: &RunConfig) -> Dataset {
    gen_dataset(&Ledger::synthetic(), &cfg.gen_spec(), cfg.seed, dir, cfg.entries()).unwrap();
    Dataset::open(dir).unwrap()
}
