//! Finite-difference gradient suite over every differentiable op and a tiny
//! end-to-end network, in 64-bit precision.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{grad_check, grad_check_params, GradCheckOptions, GradCheckReport, Tensor};
use crate::error::Result;
use crate::net::{LossWeights, Model, ModelConfig, TargetBundle};

/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub rows: Vec<SuiteRow>,
}

impl SuiteResult {
    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| r.report.passes(TOLERANCE))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.rows.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<36} {:>12} {:>8} {:>8}  status", "check", "max_rel_err", "checked", "skipped")?;
        for r in &self.rows {
            let status = if r.report.passes(TOLERANCE) { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<36} {:>12.3e} {:>8} {:>8}  {}",
                r.name, r.report.max_rel_error, r.report.checked, r.report.skipped, status
            )?;
        }
        Ok(())
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("nonzero shape")
}

/// Tiny configuration used for the end-to-end check: two keyframes of
/// 16×16 and two classes in every vocabulary.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        k: 2,
        image_size: 16,
        n_nouns: 2,
        n_states: 2,
        n_verbs: 2,
        n_actions: 2,
        backbone_channels: vec![3, 4, 4],
        shared_channels: 4,
        backbone_frozen: false,
        loss_weights: LossWeights {
            state: 1.0,
            noun: 0.7,
            verb: 1.3,
            action: 0.9,
        },
        init_seed: 11,
    }
}

/// Runs every check. `seed` fixes inputs and coordinate sampling.
pub fn gradient_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradCheckOptions {
        kink_margin: 0.0,
        max_coords: None,
        seed,
    };
    let kinked = GradCheckOptions {
        kink_margin: 1e-3,
        ..opts.clone()
    };
    let mut rows = Vec::new();
    let mut push = |name: &str, report: GradCheckReport| {
        rows.push(SuiteRow {
            name: name.to_string(),
            report,
        })
    };

    let target = random(&[3, 6, 6], &mut rng);
    push(
        "conv2d (C,H,W)",
        grad_check(
            &[random(&[2, 6, 6], &mut rng), random(&[3, 2, 3, 3], &mut rng), random(&[3], &mut rng)],
            &opts,
            |t, ids| {
                let y = t.conv2d(ids[0], ids[1], ids[2])?;
                t.mse(y, target.clone())
            },
        )?,
    );

    let target = random(&[2, 2, 4, 4], &mut rng);
    push(
        "conv2d (N,C,H,W) 1x1",
        grad_check(
            &[random(&[2, 3, 4, 4], &mut rng), random(&[2, 3, 1, 1], &mut rng), random(&[2], &mut rng)],
            &opts,
            |t, ids| {
                let y = t.conv2d(ids[0], ids[1], ids[2])?;
                t.mse(y, target.clone())
            },
        )?,
    );

    let target = random(&[2, 4, 4], &mut rng);
    push(
        "relu",
        grad_check(&[random(&[2, 4, 4], &mut rng)], &kinked, |t, ids| {
            let y = t.relu(ids[0])?;
            t.mse(y, target.clone())
        })?,
    );

    let target = random(&[2, 2, 3], &mut rng);
    push(
        "max_pool2",
        grad_check(&[random(&[2, 4, 6], &mut rng)], &opts, |t, ids| {
            let y = t.max_pool2(ids[0])?;
            t.mse(y, target.clone())
        })?,
    );

    let target = random(&[3], &mut rng);
    push(
        "gap",
        grad_check(&[random(&[3, 4, 5], &mut rng)], &opts, |t, ids| {
            let y = t.gap(ids[0])?;
            t.mse(y, target.clone())
        })?,
    );

    let target = random(&[2, 4], &mut rng);
    push(
        "temporal_pointwise",
        grad_check(
            &[random(&[3, 4], &mut rng), random(&[2, 3], &mut rng), random(&[2], &mut rng)],
            &opts,
            |t, ids| {
                let y = t.temporal_pointwise(ids[0], ids[1], ids[2])?;
                t.mse(y, target.clone())
            },
        )?,
    );

    push(
        "linear + softmax_cross_entropy",
        grad_check(
            &[random(&[5], &mut rng), random(&[4, 5], &mut rng), random(&[4], &mut rng)],
            &opts,
            |t, ids| {
                let y = t.linear(ids[0], ids[1], ids[2])?;
                t.softmax_cross_entropy(y, 2)
            },
        )?,
    );

    let target = random(&[6], &mut rng);
    push(
        "reshape + concat + mse",
        grad_check(&[random(&[2, 2], &mut rng), random(&[1, 2], &mut rng)], &opts, |t, ids| {
            let a = t.reshape(ids[0], &[4])?;
            let y = t.concat(&[a, ids[1]])?;
            t.mse(y, target.clone())
        })?,
    );

    let (ta, tb) = (random(&[3], &mut rng), random(&[3], &mut rng));
    push(
        "weighted_sum",
        grad_check(&[random(&[3], &mut rng), random(&[3], &mut rng)], &opts, |t, ids| {
            let a = t.mse(ids[0], ta.clone())?;
            let b = t.mse(ids[1], tb.clone())?;
            t.weighted_sum(&[(a, 0.3), (b, -1.7)])
        })?,
    );

    let cfg = tiny_config();
    let model: Model<f64> = Model::new(cfg.clone())?;
    let clip = random(&[cfg.k, 3, cfg.image_size, cfg.image_size], &mut rng).map(|v| 0.5 + 0.5 * v);
    let targets = TargetBundle {
        per_frame_states: Tensor::new(&[2, 2], vec![1.0, 0.0, 0.4, 0.6])?,
        noun_multi_hot: Tensor::new(&[2], vec![0.0, 1.0])?,
        verb: 1,
        action: 0,
    };
    let reports = grad_check_params(&model.params, &opts, |t, store| {
        let m = Model::from_params(cfg.clone(), store.clone())?;
        let nodes = m.record(t, clip.clone())?;
        Ok(m.record_loss(t, &nodes, &targets)?.0)
    })?;
    for (name, report) in reports {
        push(&format!("tiny net: {name}"), report);
    }
    Ok(SuiteResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let r = gradient_suite(0).unwrap();
        assert!(r.passes(), "\n{r}");
        assert!(r.rows.iter().any(|row| row.name.starts_with("tiny net: backbone")));
    }
}
