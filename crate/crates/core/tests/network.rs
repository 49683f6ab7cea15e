mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stateact::diffcore::Tensor;
use common::oracles::analytic_param_counts as analytic;
use stateact::net::{param_summary, Model, ModelConfig};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn small() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        backbone_channels: vec![4, 8, 8],
        shared_channels: 8,
        ..ModelConfig::default()
    }
}

#[test]
fn verb_logits_ignore_the_noun_branch() {
    let model: Model<f32> = Model::new(ModelConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = &model.config;
    let states = random(&[c.k, c.n_states], &mut rng);
    let reference = model.forward_heads(&random(&[c.k, c.n_nouns], &mut rng), &states).unwrap();
    for _ in 0..20 {
        let nouns = random(&[c.k, c.n_nouns], &mut rng).map(|v| 50.0 * v - 25.0);
        let out = model.forward_heads(&nouns, &states).unwrap();
        assert_eq!(out.verb_logits.data(), reference.verb_logits.data());
        assert_eq!(out.transition_matrix.data(), reference.transition_matrix.data());
    }
    // The action head does read the nouns.
    let other = model
        .forward_heads(&random(&[c.k, c.n_nouns], &mut rng).map(|v| v + 3.0), &states)
        .unwrap();
    assert_ne!(other.action_logits.data(), reference.action_logits.data());
}

#[test]
fn per_frame_outputs_follow_frame_permutations() {
    let model: Model<f64> = Model::new(small()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (k, s) = (model.config.k, model.config.image_size);
    let clip = random(&[k, 3, s, s], &mut rng).cast::<f64>();
    let perm = [3, 0, 4, 1, 2];
    let frame = 3 * s * s;
    let mut permuted = Vec::with_capacity(clip.len());
    for &p in &perm {
        permuted.extend_from_slice(&clip.data()[p * frame..(p + 1) * frame]);
    }
    let a = model.forward(&clip).unwrap();
    let b = model.forward(&Tensor::new(clip.shape(), permuted).unwrap()).unwrap();
    let n = model.config.n_states;
    for (i, &p) in perm.iter().enumerate() {
        assert_eq!(
            &b.per_frame_states.data()[i * n..(i + 1) * n],
            &a.per_frame_states.data()[p * n..(p + 1) * n]
        );
    }
}

#[test]
fn parameter_accounting_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let depth = rng.random_range(1..4);
        let cfg = ModelConfig {
            k: rng.random_range(2..8),
            image_size: 32,
            n_nouns: rng.random_range(1..10),
            n_states: rng.random_range(2..12),
            n_verbs: rng.random_range(1..10),
            n_actions: rng.random_range(1..40),
            backbone_channels: (0..depth).map(|_| rng.random_range(1..24)).collect(),
            shared_channels: rng.random_range(1..24),
            backbone_frozen: true,
            ..ModelConfig::default()
        };
        let (backbone, total) = analytic(&cfg);
        let frozen = param_summary(&cfg);
        assert_eq!((frozen.total, frozen.frozen, frozen.trainable), (total, backbone, total - backbone));
        let thawed = param_summary(&ModelConfig {
            backbone_frozen: false,
            ..cfg.clone()
        });
        assert_eq!(thawed.trainable - frozen.trainable, backbone);
        assert_eq!(thawed.frozen, 0);

        let mut model: Model<f32> = Model::new(cfg).unwrap();
        assert_eq!(model.params.total_count(), total);
        assert_eq!(model.params.trainable_count(), total - backbone);
        model.set_backbone_frozen(false);
        assert_eq!(model.params.trainable_count(), total);
    }
}
