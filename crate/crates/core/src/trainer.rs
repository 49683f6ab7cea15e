//! Keyframe sampling, the minibatch training loop and checkpoint files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{parse_kv_map, RunConfig};
use crate::diffcore::{ParamId, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::fsutil::{self, put_str, put_u32, Reader};
use crate::ledger::{state_target_vector, Ledger};
use crate::net::{LossBreakdown, Model, ModelConfig, TargetBundle};
use crate::synthgen::{mix_seed, StoredSegment};

/// One frame index per sub-segment of `segment_len` frames split into `k`
/// near-equal spans `[floor(i·T/k), floor((i+1)·T/k))`. An empty span (only
/// when `T < k`) repeats the previous index.
pub fn sample_keyframes<R: Rng + ?Sized>(segment_len: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let t = segment_len.max(1);
    let mut out: Vec<usize> = Vec::with_capacity(k);
    for i in 0..k {
        let lo = i * t / k;
        let hi = (i + 1) * t / k;
        let idx = if hi > lo {
            rng.random_range(lo..hi)
        } else {
            out.last().copied().unwrap_or(lo.min(t - 1))
        };
        out.push(idx);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global gradient-norm ceiling per step; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        RunConfig::default().train_config()
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::InvalidValue {
                key: key.into(),
                msg: msg.into(),
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be a finite non-negative number");
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return bad("clip_norm", "must be a finite non-negative number");
        }
        if !self.momentum.is_finite() {
            return bad("momentum", "must be finite");
        }
        Ok(())
    }
}

/// Segment-level supervision resolved through the ledger once.
#[derive(Debug, Clone)]
struct Supervision {
    pre: usize,
    post: usize,
    nouns: Vec<usize>,
    verb: usize,
    action: usize,
}

fn resolve(ledger: &Ledger, seg: &StoredSegment) -> Result<Supervision> {
    let rule = ledger
        .lookup_transition(seg.label.verb, seg.label.primary_noun())
        .map_err(|e| Error::Label(e.to_string()))?;
    if (rule.pre_state, rule.post_state) != (seg.pre_state, seg.post_state) {
        return Err(Error::Label(format!(
            "segment rule ({}, {}) disagrees with ledger ({}, {})",
            seg.pre_state, seg.post_state, rule.pre_state, rule.post_state
        )));
    }
    Ok(Supervision {
        pre: rule.pre_state,
        post: rule.post_state,
        nouns: seg.label.nouns.clone(),
        verb: seg.label.verb,
        action: seg.label.action,
    })
}

/// Targets for a clip sampled at absolute frame positions `frames`.
pub fn targets_for(
    ledger: &Ledger,
    seg: &StoredSegment,
    frames: &[usize],
    cfg: &ModelConfig,
) -> Result<TargetBundle> {
    let sup = resolve(ledger, seg)?;
    build_targets(&sup, seg, frames, cfg)
}

fn build_targets(sup: &Supervision, seg: &StoredSegment, frames: &[usize], cfg: &ModelConfig) -> Result<TargetBundle> {
    let rule = crate::ledger::TransitionRule {
        verb: sup.verb,
        noun: crate::ledger::NounPattern::Any,
        pre_state: sup.pre,
        post_state: sup.post,
    };
    let mut states = Vec::with_capacity(frames.len() * cfg.n_states);
    for &pos in frames {
        states.extend(state_target_vector(&rule, &seg.static_states, pos, seg.frames, cfg.n_states)?);
    }
    let mut nouns = vec![0.0; cfg.n_nouns];
    for &n in &sup.nouns {
        *nouns.get_mut(n).ok_or(Error::IndexOutOfRange {
            index: n,
            len: cfg.n_nouns,
        })? = 1.0;
    }
    Ok(TargetBundle {
        per_frame_states: Tensor::new(&[frames.len(), cfg.n_states], states)?,
        noun_multi_hot: Tensor::new(&[cfg.n_nouns], nouns)?,
        verb: sup.verb,
        action: sup.action,
    })
}

/// Seed of the keyframe draw for `segment` in `epoch`.
pub fn clip_seed(seed: u64, epoch: usize, segment: usize) -> u64 {
    mix_seed(mix_seed(seed, 0x5EED_0000 + epoch as u64), segment as u64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer updates taken during the epoch.
    pub steps: usize,
    pub loss: LossBreakdown,
}

/// Tab-separated epoch log with a header line.
pub fn format_epoch_log(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch\tstate_mse\tnoun_mse\tverb_ce\taction_ce\ttotal\n");
    for e in log {
        let l = e.loss;
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            e.epoch, l.state_mse, l.noun_mse, l.verb_ce, l.action_ce, l.total
        );
    }
    out
}

type SampleGrads = (Vec<(ParamId, Tensor<f32>)>, LossBreakdown);

/// Forward, loss and gradients for one segment.
fn sample_step(
    model: &Model<f32>,
    ledger_sup: &Supervision,
    seg: &StoredSegment,
    frames: &[usize],
) -> Result<SampleGrads> {
    let targets = build_targets(ledger_sup, seg, frames, &model.config)?;
    let clip = seg.clip(frames)?;
    let mut tape = Tape::new();
    let nodes = model.record(&mut tape, clip)?;
    let (total, terms) = model.record_loss(&mut tape, &nodes, &targets)?;
    let v = |id| tape.value(id).item() as f64;
    let loss = LossBreakdown::combine(&model.config.loss_weights, v(terms[0]), v(terms[1]), v(terms[2]), v(terms[3]));
    let grads = tape.backward(total)?.params();
    Ok((grads, loss))
}

fn mean_loss(sum: &LossBreakdown, n: usize) -> LossBreakdown {
    let d = n.max(1) as f64;
    LossBreakdown {
        state_mse: sum.state_mse / d,
        noun_mse: sum.noun_mse / d,
        verb_ce: sum.verb_ce / d,
        action_ce: sum.action_ce / d,
        total: sum.total / d,
    }
}

fn add_loss(acc: &mut LossBreakdown, l: &LossBreakdown) {
    acc.state_mse += l.state_mse;
    acc.noun_mse += l.noun_mse;
    acc.verb_ce += l.verb_ce;
    acc.action_ce += l.action_ce;
    acc.total += l.total;
}

/// Trains `model` in place on `segments`. Per epoch the segment order is a
/// seeded shuffle and every segment contributes one freshly sampled clip;
/// batch gradients are averaged and applied with SGD + momentum. `on_epoch`
/// sees each epoch's mean losses as soon as the epoch ends.
pub fn train(
    model: &mut Model<f32>,
    ledger: &Ledger,
    segments: &[StoredSegment],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if segments.is_empty() {
        return Err(Error::Data("no training segments".into()));
    }
    let sup = segments
        .iter()
        .map(|s| resolve(ledger, s))
        .collect::<Result<Vec<_>>>()?;
    let k = model.config.k;
    let lr = cfg.learning_rate as f32;
    let momentum = cfg.momentum as f32;
    model.params.reset_velocity();

    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..segments.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64)));
        let mut sum = LossBreakdown::default();
        let mut steps = 0;
        for batch in order.chunks(cfg.batch_size) {
            let frozen_model: &Model<f32> = model;
            let results = batch
                .par_iter()
                .map(|&i| {
                    let seg = &segments[i];
                    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(cfg.seed, epoch, i));
                    let frames = sample_keyframes(seg.frames, k, &mut rng);
                    sample_step(frozen_model, &sup[i], seg, &frames)
                })
                .collect::<Result<Vec<_>>>()?;
            model.params.zero_grad();
            let scale = 1.0 / batch.len() as f32;
            for (grads, loss) in &results {
                model.params.accumulate(grads, scale);
                add_loss(&mut sum, loss);
            }
            if cfg.clip_norm > 0.0 {
                model.params.clip_grad_norm(cfg.clip_norm as f32);
            }
            model.params.sgd_step(lr, momentum);
            steps += 1;
        }
        let entry = EpochLog {
            epoch,
            steps,
            loss: mean_loss(&sum, segments.len()),
        };
        if !entry.loss.total.is_finite() {
            return Err(Error::Data(format!("training diverged in epoch {epoch}")));
        }
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STTR";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Class names stored alongside the weights so predictions can be printed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    pub verbs: Vec<String>,
    pub nouns: Vec<String>,
    pub states: Vec<String>,
    pub actions: Vec<String>,
}

impl Vocabulary {
    pub fn from_ledger(l: &Ledger) -> Self {
        Vocabulary {
            verbs: l.verbs.names().to_vec(),
            nouns: l.nouns.names().to_vec(),
            states: l.states.names().to_vec(),
            actions: l.actions.names().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub epochs: usize,
    pub seed: u64,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub model: Model<f32>,
    pub vocab: Vocabulary,
    pub meta: TrainMeta,
}

fn join_names(names: &[String]) -> String {
    names.join("|")
}

fn split_names(s: Option<&String>) -> Vec<String> {
    match s {
        Some(s) if !s.is_empty() => s.split('|').map(str::to_string).collect(),
        _ => Vec::new(),
    }
}

impl Checkpoint {
    /// The config blob: the merged run config followed by the vocabulary
    /// sizes, class names and training metadata, all as `key = value`.
    pub fn config_text(&self) -> String {
        let c = &self.model.config;
        let mut out = self.run.to_text();
        for (k, v) in [
            ("n_nouns", c.n_nouns.to_string()),
            ("n_states", c.n_states.to_string()),
            ("n_verbs", c.n_verbs.to_string()),
            ("n_actions", c.n_actions.to_string()),
            ("init_seed", c.init_seed.to_string()),
            ("verb_names", join_names(&self.vocab.verbs)),
            ("noun_names", join_names(&self.vocab.nouns)),
            ("state_names", join_names(&self.vocab.states)),
            ("action_names", join_names(&self.vocab.actions)),
            ("trained_epochs", self.meta.epochs.to_string()),
            ("train_seed", self.meta.seed.to_string()),
            ("final_loss", format!("{:?}", self.meta.final_loss)),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_str(&mut out, &self.config_text());
        put_u32(&mut out, self.model.params.len() as u32);
        for p in self.model.params.iter() {
            put_str(&mut out, &p.name);
            put_u32(&mut out, p.value.rank() as u32);
            for &d in p.value.shape() {
                put_u32(&mut out, d as u32);
            }
            out.push(p.frozen as u8);
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let text = r.string()?;
        let map = parse_kv_map(&text)?;
        let mut run = RunConfig::default();
        for (k, v) in &map {
            if run.get(k).is_some() {
                run.set(k, v)?;
            }
        }
        let num = |key: &str| -> Result<usize> {
            map.get(key)
                .ok_or_else(|| Error::Format(format!("checkpoint config lacks `{key}`")))?
                .parse()
                .map_err(|_| Error::Format(format!("bad `{key}` in checkpoint config")))
        };
        let mut config = run.model_config(&Ledger::default());
        config.n_nouns = num("n_nouns")?;
        config.n_states = num("n_states")?;
        config.n_verbs = num("n_verbs")?;
        config.n_actions = num("n_actions")?;
        config.init_seed = num("init_seed")? as u64;

        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let frozen = match r.u8()? {
                0 => false,
                1 => true,
                f => return Err(Error::Format(format!("bad frozen flag {f} for `{name}`"))),
            };
            let n: usize = shape.iter().product();
            if n.checked_mul(4).is_none_or(|b| b > bytes.len()) {
                return Err(Error::Format(format!("tensor `{name}` larger than the file")));
            }
            let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            params.add(name, Tensor::new(&shape, data)?, frozen);
        }
        if !r.is_at_end() {
            return Err(Error::Format("trailing bytes after checkpoint tensors".into()));
        }
        let model = Model::from_params(config, params)?;
        let meta = TrainMeta {
            epochs: num("trained_epochs").unwrap_or(0),
            seed: map.get("train_seed").and_then(|v| v.parse().ok()).unwrap_or(run.seed),
            final_loss: map.get("final_loss").and_then(|v| v.parse().ok()).unwrap_or(f64::NAN),
        };
        let vocab = Vocabulary {
            verbs: split_names(map.get("verb_names")),
            nouns: split_names(map.get("noun_names")),
            states: split_names(map.get("state_names")),
            actions: split_names(map.get("action_names")),
        };
        Ok(Checkpoint {
            run,
            model,
            vocab,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fsutil::read(path)?)
    }

    /// Extra `key = value` pairs from the config blob that are not run
    /// settings.
    pub fn extra_settings(&self) -> BTreeMap<String, String> {
        parse_kv_map(&self.config_text())
            .unwrap_or_default()
            .into_iter()
            .filter(|(k, _)| self.run.get(k).is_none())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_spans() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let f = sample_keyframes(50, 5, &mut rng);
            for (i, &x) in f.iter().enumerate() {
                assert!((10 * i..10 * i + 10).contains(&x));
            }
        }
    }

    #[test]
    fn singleton_spans() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_keyframes(5, 5, &mut rng), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn short_segments_repeat() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = sample_keyframes(3, 5, &mut rng);
        assert_eq!(f, vec![0, 0, 0, 1, 2]);
        assert_eq!(sample_keyframes(1, 3, &mut rng), vec![0, 0, 0]);
    }

    #[test]
    fn rejects_bad_train_configs() {
        for cfg in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::InvalidValue { .. })));
        }
    }

    #[test]
    fn epoch_log_format() {
        let log = [EpochLog {
            epoch: 1,
            steps: 3,
            loss: LossBreakdown {
                state_mse: 0.5,
                noun_mse: 0.25,
                verb_ce: 1.0,
                action_ce: 2.0,
                total: 3.75,
            },
        }];
        assert_eq!(
            format_epoch_log(&log),
            "epoch\tstate_mse\tnoun_mse\tverb_ce\taction_ce\ttotal\n1\t0.500000\t0.250000\t1.000000\t2.000000\t3.750000\n"
        );
    }
}
