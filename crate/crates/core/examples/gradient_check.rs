//! Checks a hand-built expression against finite differences, then runs the
//! full per-op and tiny-network suite.

use stateact::diffcore::{grad_check, GradCheckOptions, Tensor};
use stateact::suite::{gradient_suite, TOLERANCE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::new(&[2, 5, 5], (0..50).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let w = Tensor::new(&[3, 2, 3, 3], (0..54).map(|i| (i as f64 * 0.11).cos() * 0.5).collect())?;
    let b = Tensor::new(&[3], vec![0.1, -0.2, 0.05])?;
    let report = grad_check(&[x, w, b], &GradCheckOptions::default(), |t, ids| {
        let y = t.conv2d(ids[0], ids[1], ids[2])?;
        let y = t.relu(y)?;
        let y = t.gap(y)?;
        t.softmax_cross_entropy(y, 1)
    })?;
    println!(
        "conv -> relu -> gap -> ce: max rel error {:.2e} over {} coordinates",
        report.max_rel_error, report.checked
    );

    let suite = gradient_suite(0)?;
    print!("\n{suite}");
    println!("tolerance {TOLERANCE:e}: {}", if suite.passes() { "pass" } else { "FAIL" });
    Ok(())
}
