//! Saves an untrained model with its vocabulary, reloads it and confirms the
//! forward pass is bitwise identical.

use stateact::config::RunConfig;
use stateact::diffcore::Tensor;
use stateact::ledger::Ledger;
use stateact::net::Model;
use stateact::trainer::{Checkpoint, TrainMeta, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ledger = Ledger::synthetic();
    let run = RunConfig::default();
    let model: Model<f32> = Model::new(run.model_config(&ledger))?;
    let ckpt = Checkpoint {
        run,
        model,
        vocab: Vocabulary::from_ledger(&ledger),
        meta: TrainMeta {
            epochs: 0,
            seed: 0,
            final_loss: f64::NAN,
        },
    };
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.sttr");
    ckpt.save(&path)?;
    let bytes = std::fs::metadata(&path)?.len();
    let back = Checkpoint::load(&path)?;
    println!("{} bytes, {} tensors, {} actions", bytes, back.model.params.len(), back.vocab.actions.len());

    let c = &ckpt.model.config;
    let n = c.k * 3 * c.image_size * c.image_size;
    let clip = Tensor::new(&[c.k, 3, c.image_size, c.image_size], (0..n).map(|i| (i % 251) as f32 / 250.0).collect())?;
    let a = ckpt.model.forward(&clip)?;
    let b = back.model.forward(&clip)?;
    let same = a.action_logits.data().iter().zip(b.action_logits.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("action logits bitwise identical after reload: {same}");

    let mut truncated = ckpt.to_bytes();
    truncated.truncate(truncated.len() / 2);
    println!("truncated file: {}", Checkpoint::from_bytes(&truncated).unwrap_err());
    Ok(())
}
