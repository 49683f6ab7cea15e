//! Renders a small synthetic dataset and writes one segment's keyframes as
//! PPM images.
//!
//! cargo run --release --example generate_data [OUT_DIR]

use std::path::PathBuf;

use stateact::config::RunConfig;
use stateact::ledger::Ledger;
use stateact::synthgen::{gen_dataset, Dataset, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("stateact-data"));
    let cfg = RunConfig {
        train_count: 54,
        test_count: 18,
        ..RunConfig::default()
    };
    let ledger = Ledger::synthetic();
    let manifest = gen_dataset(&ledger, &cfg.gen_spec(), cfg.seed, &out, cfg.entries())?;
    println!("wrote {} segments to {}", manifest.entries.len(), out.display());

    let ds = Dataset::open(&out)?;
    let seg = &ds.load_split(Split::Train)?[0];
    let label = &seg.label;
    println!(
        "first segment: {} ({} frames, {} -> {})",
        ds.ledger.actions.name(label.action).unwrap_or("?"),
        seg.frames,
        ds.ledger.states.name(seg.pre_state).unwrap_or("?"),
        ds.ledger.states.name(seg.post_state).unwrap_or("?")
    );
    let frame_bytes = seg.channels * seg.height * seg.width;
    for t in [0, seg.frames / 2, seg.frames - 1] {
        let chw = &seg.pixels[t * frame_bytes..(t + 1) * frame_bytes];
        let plane = seg.height * seg.width;
        let mut ppm = format!("P6\n{} {}\n255\n", seg.width, seg.height).into_bytes();
        for i in 0..plane {
            ppm.extend((0..3).map(|c| chw[c * plane + i]));
        }
        let path = out.join(format!("frame{t:02}.ppm"));
        std::fs::write(&path, ppm)?;
        println!("  {}", path.display());
    }
    Ok(())
}
