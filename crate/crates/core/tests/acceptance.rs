//! Acceptance gates. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::oracles::{analytic_param_counts, brute_prf, brute_topk, random_set};
use stateact::config::RunConfig;
use stateact::diffcore::Tensor;
use stateact::evaluator::{self, aggregate_clips, many_shot_prf, topk_accuracy, ManyShotSet, Task};
use stateact::ledger::{fade_weights, state_target_vector, Ledger, NounPattern, TransitionRule};
use stateact::net::{param_summary, Model, ModelConfig};
use stateact::suite::gradient_suite;
use stateact::synthgen::{gen_dataset, Dataset, Split};
use stateact::trainer::{format_epoch_log, train, Checkpoint, EpochLog, TrainMeta, Vocabulary};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_gate() -> Outcome {
    let start = Instant::now();
    let suite = gradient_suite(0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = suite.rows.iter().max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error));
    check(
        suite.passes() && elapsed < Duration::from_secs(60),
        format!(
            "{} checks, max rel error {:.2e} ({}), {:.2?}",
            suite.rows.len(),
            suite.max_rel_error(),
            worst.map_or("-", |r| r.name.as_str()),
            elapsed
        ),
    )
}

fn fade_gate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let len = rng.random_range(1..1000);
        let pos = rng.random_range(0..len);
        let (pre, post) = fade_weights(pos, len).map_err(|e| e.to_string())?;
        if pre + post != 1.0 {
            return Err(format!("({pos}, {len}) sums to {}", pre + post));
        }
        if pos + 1 < len {
            let (npre, npost) = fade_weights(pos + 1, len).unwrap();
            if npost < post || npre > pre {
                return Err(format!("not monotone at ({pos}, {len})"));
            }
        }
        if len % 2 == 1 && fade_weights(len / 2, len).unwrap() != (0.5, 0.5) {
            return Err(format!("mid-frame of {len} is not (0.5, 0.5)"));
        }
        let n = rng.random_range(3..10);
        let pre_s = rng.random_range(0..n);
        let post_s = (pre_s + rng.random_range(1..n)) % n;
        let statics: BTreeSet<usize> = (0..n).filter(|&s| s != pre_s && s != post_s && rng.random_bool(0.3)).collect();
        let rule = TransitionRule {
            verb: 0,
            noun: NounPattern::Any,
            pre_state: pre_s,
            post_state: post_s,
        };
        let v = state_target_vector(&rule, &statics, pos, len, n).unwrap();
        let mut expected: BTreeSet<usize> = statics.clone();
        expected.extend([pre_s, post_s]);
        // Support is where a value may be non-zero; endpoints may zero pre or post.
        for (s, &x) in v.iter().enumerate() {
            if !expected.contains(&s) && x != 0.0 {
                return Err(format!("state {s} outside support has {x}"));
            }
            if statics.contains(&s) && x != 1.0 {
                return Err(format!("static state {s} has {x}"));
            }
        }
        if v[pre_s] + v[post_s] != 1.0 {
            return Err("pre + post target is not 1".into());
        }
    }
    Ok("10000 random (pos, len): sum 1, monotone, odd mid-frames at (0.5, 0.5), support exact".into())
}

fn information_flow_gate() -> Outcome {
    let model: Model<f32> = Model::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let c = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rand = |shape: &[usize], scale: f32| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| scale * rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    };
    let states = rand(&[c.k, c.n_states], 1.0);
    let reference = model.forward_heads(&rand(&[c.k, c.n_nouns], 1.0), &states).unwrap();
    for trial in 0..100 {
        let nouns = rand(&[c.k, c.n_nouns], 100.0);
        let out = model.forward_heads(&nouns, &states).unwrap();
        if out.verb_logits.data() != reference.verb_logits.data() {
            return Err(format!("verb logits changed with noun content (trial {trial})"));
        }
    }
    Ok("100 noun stacks against one state stack: verb logits bitwise identical".into())
}

struct GateRun {
    log: Vec<EpochLog>,
    detail: String,
    passed: bool,
}

fn learnability_gate(root: &Path) -> Result<(GateRun, Dataset), String> {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let data = root.join("desk");
    gen_dataset(&Ledger::synthetic(), &cfg.gen_spec(), cfg.seed, &data, cfg.entries()).map_err(|e| e.to_string())?;
    let ds = Dataset::open(&data).map_err(|e| e.to_string())?;
    let segs = ds.load_split(Split::Train).map_err(|e| e.to_string())?;
    let mut model: Model<f32> = Model::new(cfg.model_config(&ds.ledger)).map_err(|e| e.to_string())?;
    let log = train(&mut model, &ds.ledger, &segs, &cfg.train_config(), |_| {}).map_err(|e| e.to_string())?;
    let report = evaluator::evaluate(&model, &ds, Split::Test, cfg.clips, cfg.seed).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let passed = report.action.top1 >= 0.90 && report.verb.top1 >= 0.95 && elapsed <= Duration::from_secs(20 * 60);
    let detail = format!(
        "backbone_frozen={}, {} epochs: action top1 {:.4}, verb top1 {:.4}, noun top1 {:.4}, {:.1?} total",
        cfg.backbone_frozen,
        log.len(),
        report.action.top1,
        report.verb.top1,
        report.noun.top1,
        elapsed
    );
    Ok((GateRun { log, detail, passed }, ds))
}

fn loss_descent_gate(first: &[EpochLog], ds: &Dataset) -> Outcome {
    let cfg = RunConfig::default();
    let segs = ds.load_split(Split::Train).map_err(|e| e.to_string())?;
    let ratio = |log: &[EpochLog]| log[4].loss.total / log[0].loss.total;
    let mut ratios = vec![ratio(first)];
    for seed in 1..5u64 {
        let mut run = cfg.clone();
        run.seed = seed;
        run.epochs = 5;
        let mut model: Model<f32> = Model::new(run.model_config(&ds.ledger)).map_err(|e| e.to_string())?;
        let log = train(&mut model, &ds.ledger, &segs, &run.train_config(), |_| {}).map_err(|e| e.to_string())?;
        ratios.push(ratio(&log));
    }
    let good = ratios.iter().filter(|&&r| r <= 0.5).count();
    check(
        good >= 4,
        format!(
            "{good}/5 seeds with epoch5/epoch1 <= 0.5 (ratios {})",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn metric_gate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for instance in 0..20 {
        let classes = [rng.random_range(5..9), rng.random_range(5..8), rng.random_range(5..25)];
        let set = random_set(&mut rng, 50, classes);
        let mut many = ManyShotSet::default();
        for (task, c) in Task::ALL.into_iter().zip(classes) {
            let chosen: BTreeSet<usize> = (0..c).filter(|_| rng.random_bool(0.5)).chain([c - 1]).collect();
            match task {
                Task::Verb => many.verb = chosen,
                Task::Noun => many.noun = chosen,
                Task::Action => many.action = chosen,
            }
        }
        for task in Task::ALL {
            for k in [1, 5] {
                if topk_accuracy(&set, task, k) != brute_topk(&set, task, k) {
                    return Err(format!("top{k} {} differs on instance {instance}", task.as_str()));
                }
            }
            if many_shot_prf(&set, &many, task).unwrap() != brute_prf(&set, many.task(task), task) {
                return Err(format!("many-shot P/R {} differs on instance {instance}", task.as_str()));
            }
        }
    }
    for _ in 0..100 {
        let mut clips: Vec<Vec<f64>> = (0..rng.random_range(1..12))
            .map(|_| (0..18).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let a = aggregate_clips(&clips).unwrap();
        clips.shuffle(&mut rng);
        let b = aggregate_clips(&clips).unwrap();
        if a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-12) {
            return Err("aggregate_clips depends on clip order".into());
        }
    }
    Ok("20 random 50-segment instances match brute force exactly; aggregation order-free".into())
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn determinism_gate(root: &Path) -> Outcome {
    let cfg = RunConfig {
        deterministic: true,
        ..common::small_run()
    };
    let run = |dir: &Path| -> Result<(Vec<u8>, String, Vec<u8>, Checkpoint), String> {
        single_threaded(|| {
            let ds = common::small_dataset(dir, &cfg);
            let segs = ds.load_split(Split::Train).map_err(|e| e.to_string())?;
            let mut model: Model<f32> = Model::new(cfg.model_config(&ds.ledger)).map_err(|e| e.to_string())?;
            let log = train(&mut model, &ds.ledger, &segs, &cfg.train_config(), |_| {}).map_err(|e| e.to_string())?;
            let report = evaluator::evaluate(&model, &ds, Split::Test, cfg.clips, cfg.seed).map_err(|e| e.to_string())?;
            let path = dir.join("report.tsv");
            evaluator::write_report(&report, &path).map_err(|e| e.to_string())?;
            let ckpt = Checkpoint {
                run: cfg.clone(),
                model,
                vocab: Vocabulary::from_ledger(&ds.ledger),
                meta: TrainMeta {
                    epochs: log.len(),
                    seed: cfg.seed,
                    final_loss: log.last().map_or(f64::NAN, |e| e.loss.total),
                },
            };
            Ok((
                std::fs::read(dir.join("manifest.tsv")).map_err(|e| e.to_string())?,
                format_epoch_log(&log),
                std::fs::read(path).map_err(|e| e.to_string())?,
                ckpt,
            ))
        })
    };
    let a = run(&root.join("det_a"))?;
    let b = run(&root.join("det_b"))?;
    if a.0 != b.0 {
        return Err("manifests differ".into());
    }
    if a.1 != b.1 {
        return Err("epoch logs differ".into());
    }
    if a.2 != b.2 {
        return Err("evaluation reports differ".into());
    }
    let ckpt = a.3;
    let path = root.join("round_trip.ckpt");
    ckpt.save(&path).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let bits = |m: &Model<f32>| -> Vec<u32> { m.params.iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect() };
    if bits(&back.model) != bits(&ckpt.model) || ckpt.to_bytes() != b.3.to_bytes() {
        return Err("checkpoint tensors differ after round trip".into());
    }
    let ds = Dataset::open(&root.join("det_a")).map_err(|e| e.to_string())?;
    let seg = &ds.load_split(Split::Test).map_err(|e| e.to_string())?[0];
    let clip = seg.clip(&[1, 5, 9]).map_err(|e| e.to_string())?;
    let (x, y) = (ckpt.model.forward(&clip).unwrap(), back.model.forward(&clip).unwrap());
    let out_bits = |o: &stateact::net::ForwardOutputs<f32>| -> Vec<u32> {
        [&o.per_frame_states, &o.noun_vector, &o.verb_logits, &o.action_logits]
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    check(
        out_bits(&x) == out_bits(&y),
        "manifest, epoch log, report byte-identical across runs; checkpoint and forward outputs bitwise after reload".into(),
    )
}

fn accounting_gate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut notes = Vec::new();
    for _ in 0..5 {
        let depth = rng.random_range(1..4);
        let cfg = ModelConfig {
            k: rng.random_range(2..9),
            image_size: 32,
            n_nouns: rng.random_range(1..12),
            n_states: rng.random_range(2..16),
            n_verbs: rng.random_range(1..12),
            n_actions: rng.random_range(1..60),
            backbone_channels: (0..depth).map(|_| rng.random_range(1..48)).collect(),
            shared_channels: rng.random_range(1..48),
            backbone_frozen: true,
            ..ModelConfig::default()
        };
        let (backbone, total) = analytic_param_counts(&cfg);
        let frozen = param_summary(&cfg);
        let thawed = param_summary(&ModelConfig {
            backbone_frozen: false,
            ..cfg.clone()
        });
        if frozen.total != total || frozen.frozen != backbone || thawed.trainable - frozen.trainable != backbone {
            return Err(format!("config {cfg:?}: summary {} / {} vs analytic {total} / {backbone}", frozen.total, frozen.frozen));
        }
        notes.push(total.to_string());
    }
    let default = param_summary(&ModelConfig::default());
    Ok(format!(
        "5 random configs exact (totals {}); default {} total / {} trainable",
        notes.join(", "),
        default.total,
        default.trainable
    ))
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] criterion {n}: {name}: {detail}");
        results.push((n, name, outcome));
    };

    report(1, "gradient suite", gradient_gate());
    report(2, "fade and ledger properties", fade_gate());
    report(3, "verb logits read only the transition matrix", information_flow_gate());
    let gate = learnability_gate(root.path());
    match gate {
        Ok((run, ds)) => {
            let outcome = if run.passed { Ok(run.detail) } else { Err(run.detail) };
            report(4, "synthetic learnability", outcome);
            report(5, "loss descent over 5 seeds", loss_descent_gate(&run.log, &ds));
        }
        Err(e) => {
            report(4, "synthetic learnability", Err(e.clone()));
            report(5, "loss descent over 5 seeds", Err(format!("no gate run: {e}")));
        }
    }
    report(6, "metric oracles", metric_gate());
    report(7, "determinism and persistence", determinism_gate(root.path()));
    report(8, "parameter accounting", accounting_gate());

    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
