use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use stateact::evaluator::{PredictionSet, Task};
use stateact::net::ModelConfig;

/// Random predictions with deliberately coarse scores so ties are common.
pub fn random_set(rng: &mut ChaCha8Rng, n: usize, classes: [usize; 3]) -> PredictionSet {
    let mut set = PredictionSet::default();
    for _ in 0..n {
        for (task, c) in Task::ALL.into_iter().zip(classes) {
            let scores = (0..c).map(|_| rng.random_range(0..6) as f64 * 0.5).collect();
            set.task_mut(task).push(scores, rng.random_range(0..c)).unwrap();
        }
    }
    set
}

/// Sorts every class by (score desc, id asc) and looks for the truth.
pub fn brute_topk(set: &PredictionSet, task: Task, k: usize) -> f64 {
    let p = set.task(task);
    let mut hits = 0;
    for (s, &t) in p.scores.iter().zip(&p.truth) {
        let mut ids: Vec<usize> = (0..s.len()).collect();
        ids.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
        if ids[..k.min(ids.len())].contains(&t) {
            hits += 1;
        }
    }
    hits as f64 / p.len() as f64
}

/// Builds the full confusion matrix and averages per-class ratios.
pub fn brute_prf(set: &PredictionSet, classes: &BTreeSet<usize>, task: Task) -> (f64, f64) {
    let p = set.task(task);
    let c = p.classes();
    let mut confusion = vec![vec![0usize; c]; c];
    for (s, &t) in p.scores.iter().zip(&p.truth) {
        let mut best = 0;
        for i in 1..c {
            if s[i] > s[best] {
                best = i;
            }
        }
        confusion[t][best] += 1;
    }
    let (mut prec, mut rec) = (0.0, 0.0);
    for &k in classes {
        let tp = confusion[k][k];
        let predicted: usize = (0..c).map(|t| confusion[t][k]).sum();
        let actual: usize = confusion[k].iter().sum();
        prec += if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        rec += if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
    }
    (prec / classes.len() as f64, rec / classes.len() as f64)
}

/// Closed-form (backbone, total) parameter counts, written independently of
/// the layer table.
pub fn analytic_param_counts(c: &ModelConfig) -> (usize, usize) {
    let mut backbone = 0;
    let mut cin = 3;
    for &cout in &c.backbone_channels {
        backbone += cout * cin * 9 + cout;
        cin = cout;
    }
    let sh = c.shared_channels;
    let heads = sh * cin * 9 + sh
        + (sh + 1) * c.n_nouns
        + (sh + 1) * c.n_states
        + (c.k + 1)
        + 2 * (c.k + 1)
        + c.n_verbs * (2 * c.n_states + 1)
        + c.n_actions * (c.n_verbs + c.n_nouns + 1);
    (backbone, backbone + heads)
}
