//! Writes the noun and state class activation maps of one generated segment
//! as PGM images.
//!
//! cargo run --release --example export_cams [OUT_DIR]

use std::path::PathBuf;

use stateact::config::RunConfig;
use stateact::ledger::Ledger;
use stateact::net::{export_cams, Model};
use stateact::synthgen::{gen_segment, StoredSegment};
use stateact::trainer::{sample_keyframes, Vocabulary};

use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("stateact-cams"));
    let cfg = RunConfig::default();
    let ledger = Ledger::synthetic();
    let label = ledger.label_for_action(ledger.actions.lookup("open square").unwrap_or(0))?;
    let rec = gen_segment(&ledger, &label, cfg.segment_len, cfg.image_size, cfg.noise_sigma, 7)?;
    let seg = StoredSegment::from_record(&rec);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let frames = sample_keyframes(seg.frames, cfg.k, &mut rng);
    let model: Model<f32> = Model::new(cfg.model_config(&ledger))?;
    let outputs = model.forward(&seg.clip(&frames)?)?;
    let vocab = Vocabulary::from_ledger(&ledger);
    let files = export_cams(&outputs, &vocab.nouns, &vocab.states, &out)?;
    println!("keyframes {frames:?}: {} maps in {}", files.len(), out.display());
    Ok(())
}
