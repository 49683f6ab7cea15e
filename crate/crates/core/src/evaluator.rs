//! Top-k micro-accuracy, many-shot precision/recall and multi-clip test-time
//! aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::net::Model;
use crate::synthgen::{mix_seed, Dataset, DatasetManifest, Split, StoredSegment};
use crate::trainer::sample_keyframes;

/// Training samples a class needs, strictly exceeded, to count as many-shot.
pub const MANY_SHOT_THRESHOLD: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Verb,
    Noun,
    Action,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Verb, Task::Noun, Task::Action];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Verb => "verb",
            Task::Noun => "noun",
            Task::Action => "action",
        }
    }
}

/// Elementwise mean of per-clip score vectors.
pub fn aggregate_clips(clip_scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = clip_scores
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no clips to aggregate".into()))?;
    let mut out = vec![0.0; first.len()];
    for s in clip_scores {
        if s.len() != out.len() {
            return Err(Error::ShapeMismatch(format!(
                "clip scores of length {} and {}",
                out.len(),
                s.len()
            )));
        }
        for (o, v) in out.iter_mut().zip(s) {
            *o += v;
        }
    }
    let m = clip_scores.len() as f64;
    out.iter_mut().for_each(|o| *o /= m);
    Ok(out)
}

/// 0-based rank of `class`: how many classes outrank it, where a tie goes to
/// the smaller id.
pub fn rank_of(scores: &[f64], class: usize) -> usize {
    let s = scores[class];
    scores
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > s || (v == s && i < class))
        .count()
}

/// Highest-scoring class, smallest id on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskPredictions {
    pub scores: Vec<Vec<f64>>,
    pub truth: Vec<usize>,
}

impl TaskPredictions {
    pub fn push(&mut self, scores: Vec<f64>, truth: usize) -> Result<()> {
        if let Some(first) = self.scores.first() {
            if first.len() != scores.len() {
                return Err(Error::ShapeMismatch(format!(
                    "score vector of length {} among length {}",
                    scores.len(),
                    first.len()
                )));
            }
        }
        if truth >= scores.len() {
            return Err(Error::IndexOutOfRange {
                index: truth,
                len: scores.len(),
            });
        }
        self.scores.push(scores);
        self.truth.push(truth);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    pub verb: TaskPredictions,
    pub noun: TaskPredictions,
    pub action: TaskPredictions,
}

impl PredictionSet {
    pub fn task(&self, task: Task) -> &TaskPredictions {
        match task {
            Task::Verb => &self.verb,
            Task::Noun => &self.noun,
            Task::Action => &self.action,
        }
    }

    pub fn task_mut(&mut self, task: Task) -> &mut TaskPredictions {
        match task {
            Task::Verb => &mut self.verb,
            Task::Noun => &mut self.noun,
            Task::Action => &mut self.action,
        }
    }

    pub fn len(&self) -> usize {
        self.verb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verb.is_empty()
    }
}

/// Fraction of segments whose true class is among the `k` best. With fewer
/// than `k` classes every segment is a hit.
pub fn topk_accuracy(predictions: &PredictionSet, task: Task, k: usize) -> f64 {
    let p = predictions.task(task);
    if p.is_empty() {
        return 0.0;
    }
    let hits = p
        .scores
        .iter()
        .zip(&p.truth)
        .filter(|(s, &t)| rank_of(s, t) < k)
        .count();
    hits as f64 / p.len() as f64
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManyShotSet {
    pub verb: BTreeSet<usize>,
    pub noun: BTreeSet<usize>,
    pub action: BTreeSet<usize>,
}

impl ManyShotSet {
    /// Classes with more than [`MANY_SHOT_THRESHOLD`] samples in the train
    /// split. Nouns count the primary noun only.
    pub fn from_manifest(manifest: &DatasetManifest) -> Self {
        let mut counts: [BTreeMap<usize, usize>; 3] = Default::default();
        for e in manifest.split(Split::Train) {
            *counts[0].entry(e.verb).or_default() += 1;
            if let Some(&n) = e.nouns.first() {
                *counts[1].entry(n).or_default() += 1;
            }
            *counts[2].entry(e.action).or_default() += 1;
        }
        let [v, n, a] = counts.map(|c| Self::above(&c));
        ManyShotSet {
            verb: v,
            noun: n,
            action: a,
        }
    }

    pub fn from_counts(verb: &BTreeMap<usize, usize>, noun: &BTreeMap<usize, usize>, action: &BTreeMap<usize, usize>) -> Self {
        ManyShotSet {
            verb: Self::above(verb),
            noun: Self::above(noun),
            action: Self::above(action),
        }
    }

    fn above(counts: &BTreeMap<usize, usize>) -> BTreeSet<usize> {
        counts
            .iter()
            .filter(|&(_, &c)| c > MANY_SHOT_THRESHOLD)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn task(&self, task: Task) -> &BTreeSet<usize> {
        match task {
            Task::Verb => &self.verb,
            Task::Noun => &self.noun,
            Task::Action => &self.action,
        }
    }
}

/// Unweighted mean (precision, recall) over the many-shot classes of `task`,
/// from top-1 decisions. A class never predicted has precision 0.
pub fn many_shot_prf(predictions: &PredictionSet, many_shot: &ManyShotSet, task: Task) -> Result<(f64, f64)> {
    let classes = many_shot.task(task);
    if classes.is_empty() {
        return Err(Error::EmptyManyShot(task.as_str()));
    }
    let p = predictions.task(task);
    let mut tp: BTreeMap<usize, usize> = BTreeMap::new();
    let mut fp: BTreeMap<usize, usize> = BTreeMap::new();
    let mut fn_: BTreeMap<usize, usize> = BTreeMap::new();
    for (s, &t) in p.scores.iter().zip(&p.truth) {
        let guess = argmax(s);
        if guess == t {
            *tp.entry(t).or_default() += 1;
        } else {
            *fp.entry(guess).or_default() += 1;
            *fn_.entry(t).or_default() += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let (mut prec, mut rec) = (0.0, 0.0);
    for c in classes {
        let t = tp.get(c).copied().unwrap_or(0);
        prec += ratio(t, t + fp.get(c).copied().unwrap_or(0));
        rec += ratio(t, t + fn_.get(c).copied().unwrap_or(0));
    }
    let n = classes.len() as f64;
    Ok((prec / n, rec / n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskMetrics {
    pub top1: f64,
    pub top5: f64,
    /// `None` when the task has no many-shot class.
    pub ms_precision: Option<f64>,
    pub ms_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub verb: TaskMetrics,
    pub noun: TaskMetrics,
    pub action: TaskMetrics,
    pub segments: usize,
    pub clips: usize,
    pub seed: u64,
}

impl MetricsReport {
    pub fn compute(predictions: &PredictionSet, many_shot: &ManyShotSet, clips: usize, seed: u64) -> Result<Self> {
        let metrics = |task| -> Result<TaskMetrics> {
            let (ms_precision, ms_recall) = match many_shot_prf(predictions, many_shot, task) {
                Ok((p, r)) => (Some(p), Some(r)),
                Err(Error::EmptyManyShot(_)) => (None, None),
                Err(e) => return Err(e),
            };
            Ok(TaskMetrics {
                top1: topk_accuracy(predictions, task, 1),
                top5: topk_accuracy(predictions, task, 5),
                ms_precision,
                ms_recall,
            })
        };
        Ok(MetricsReport {
            verb: metrics(Task::Verb)?,
            noun: metrics(Task::Noun)?,
            action: metrics(Task::Action)?,
            segments: predictions.len(),
            clips,
            seed,
        })
    }

    pub fn task(&self, task: Task) -> &TaskMetrics {
        match task {
            Task::Verb => &self.verb,
            Task::Noun => &self.noun,
            Task::Action => &self.action,
        }
    }

    /// Report file text. Metrics without many-shot support print `NA`.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# segments={} clips={} seed={}\n", self.segments, self.clips, self.seed);
        for task in Task::ALL {
            let m = self.task(task);
            let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
            for (name, v) in [
                ("top1", Some(m.top1)),
                ("top5", Some(m.top5)),
                ("ms_precision", m.ms_precision),
                ("ms_recall", m.ms_recall),
            ] {
                let _ = writeln!(out, "{}\t{}\t{}", task.as_str(), name, fmt(v));
            }
        }
        out
    }
}

/// Seed of clip `clip` for the segment at `index` during evaluation.
pub fn eval_clip_seed(seed: u64, index: usize, clip: usize) -> u64 {
    mix_seed(mix_seed(seed ^ 0xE7A1_0000_0000_0000, index as u64), clip as u64)
}

/// Aggregated (verb, noun, action) scores for one segment over `clips`
/// independent keyframe samplings. Noun scores are the noun vector.
pub fn segment_scores(
    model: &Model<f32>,
    seg: &StoredSegment,
    clips: usize,
    seed: u64,
    index: usize,
) -> Result<[Vec<f64>; 3]> {
    if clips == 0 {
        return Err(Error::InvalidValue {
            key: "clips".into(),
            msg: "must be at least 1".into(),
        });
    }
    let mut per_task: [Vec<Vec<f64>>; 3] = Default::default();
    for c in 0..clips {
        let mut rng = ChaCha8Rng::seed_from_u64(eval_clip_seed(seed, index, c));
        let frames = sample_keyframes(seg.frames, model.config.k, &mut rng);
        let out = model.forward(&seg.clip(&frames)?)?;
        let widen = |t: &crate::diffcore::Tensor<f32>| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        per_task[0].push(widen(&out.verb_logits));
        per_task[1].push(widen(&out.noun_vector));
        per_task[2].push(widen(&out.action_logits));
    }
    Ok([
        aggregate_clips(&per_task[0])?,
        aggregate_clips(&per_task[1])?,
        aggregate_clips(&per_task[2])?,
    ])
}

/// Scores every segment, in order. Segments are processed in parallel but
/// each result depends only on its index and `seed`.
pub fn predict_all(model: &Model<f32>, segments: &[StoredSegment], clips: usize, seed: u64) -> Result<PredictionSet> {
    let scored = segments
        .par_iter()
        .enumerate()
        .map(|(i, seg)| segment_scores(model, seg, clips, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let mut set = PredictionSet::default();
    for (seg, [v, n, a]) in segments.iter().zip(scored) {
        set.verb.push(v, seg.label.verb)?;
        set.noun.push(n, seg.label.primary_noun())?;
        set.action.push(a, seg.label.action)?;
    }
    Ok(set)
}

/// Evaluates `model` on one split of `dataset`. Many-shot classes always
/// come from the train split.
pub fn evaluate(model: &Model<f32>, dataset: &Dataset, split: Split, clips: usize, seed: u64) -> Result<MetricsReport> {
    let segments = dataset.load_split(split)?;
    if segments.is_empty() {
        return Err(Error::Data(format!("dataset has no {} segments", split.as_str())));
    }
    let preds = predict_all(model, &segments, clips, seed)?;
    MetricsReport::compute(&preds, &ManyShotSet::from_manifest(&dataset.manifest), clips, seed)
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, report.to_tsv().as_bytes())
}
