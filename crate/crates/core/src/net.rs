//! The keyframe network.
//!
//! Each of the `k` keyframes passes through a frozen convolutional backbone
//! and a shared 3×3 convolution, then splits into a noun branch and a state
//! branch. A 1×1 convolution turns each branch into class activation maps
//! whose global averages are the per-frame noun and state scores. Point-wise
//! convolutions over the frame axis collapse the per-frame stacks into one
//! noun vector and a two-row (pre-state, post-state) transition matrix. The
//! verb is read from the transition matrix alone; the action from the verb
//! logits concatenated with the noun vector.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{self, glorot_uniform, NodeId, ParamId, ParamStore, Real, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub state: f64,
    pub noun: f64,
    pub verb: f64,
    pub action: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            state: 1.0,
            noun: 1.0,
            verb: 1.0,
            action: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub k: usize,
    pub image_size: usize,
    pub n_nouns: usize,
    pub n_states: usize,
    pub n_verbs: usize,
    pub n_actions: usize,
    /// Output channels of each backbone stage (conv3×3 → relu → maxpool2).
    pub backbone_channels: Vec<usize>,
    pub shared_channels: usize,
    pub backbone_frozen: bool,
    pub loss_weights: LossWeights,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 5,
            image_size: 32,
            n_nouns: 3,
            n_states: 8,
            n_verbs: 6,
            n_actions: 18,
            backbone_channels: vec![16, 32, 64],
            shared_channels: 64,
            backbone_frozen: true,
            loss_weights: LossWeights::default(),
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigMismatch(msg));
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        for (name, v) in [
            ("n_nouns", self.n_nouns),
            ("n_states", self.n_states),
            ("n_verbs", self.n_verbs),
            ("n_actions", self.n_actions),
            ("shared_channels", self.shared_channels),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return bad(format!("bad backbone channel plan {:?}", self.backbone_channels));
        }
        let stride = 1usize << self.backbone_channels.len();
        if self.image_size == 0 || !self.image_size.is_multiple_of(stride) {
            return bad(format!(
                "image size {} is not divisible by the backbone stride {stride}",
                self.image_size
            ));
        }
        let w = self.loss_weights;
        if [w.state, w.noun, w.verb, w.action]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("loss weights must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Spatial extent of the class activation maps.
    pub fn cam_size(&self) -> usize {
        self.image_size >> self.backbone_channels.len()
    }
}

/// Name, shape and backbone membership of every parameter tensor, in
/// storage order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, bool)> {
    let mut out = Vec::new();
    let mut cin = 3;
    for (i, &c) in cfg.backbone_channels.iter().enumerate() {
        out.push((format!("backbone.conv{i}.weight"), vec![c, cin, 3, 3], true));
        out.push((format!("backbone.conv{i}.bias"), vec![c], true));
        cin = c;
    }
    let s = cfg.shared_channels;
    out.push(("shared.weight".into(), vec![s, cin, 3, 3], false));
    out.push(("shared.bias".into(), vec![s], false));
    out.push(("noun_cam.weight".into(), vec![cfg.n_nouns, s, 1, 1], false));
    out.push(("noun_cam.bias".into(), vec![cfg.n_nouns], false));
    out.push(("state_cam.weight".into(), vec![cfg.n_states, s, 1, 1], false));
    out.push(("state_cam.bias".into(), vec![cfg.n_states], false));
    out.push(("noun_temporal.weight".into(), vec![1, cfg.k], false));
    out.push(("noun_temporal.bias".into(), vec![1], false));
    out.push(("state_temporal.weight".into(), vec![2, cfg.k], false));
    out.push(("state_temporal.bias".into(), vec![2], false));
    out.push(("verb_fc.weight".into(), vec![cfg.n_verbs, 2 * cfg.n_states], false));
    out.push(("verb_fc.bias".into(), vec![cfg.n_verbs], false));
    out.push(("action_fc.weight".into(), vec![cfg.n_actions, cfg.n_verbs + cfg.n_nouns], false));
    out.push(("action_fc.bias".into(), vec![cfg.n_actions], false));
    out
}

fn fans(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        4 => {
            let rf = shape[2] * shape[3];
            (shape[1] * rf, shape[0] * rf)
        }
        2 => (shape[1], shape[0]),
        _ => (shape[0], shape[0]),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub rows: Vec<ParamRow>,
    pub total: usize,
    pub trainable: usize,
    pub frozen: usize,
}

impl std::fmt::Display for ParamSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<24} {:<16} {:>10}  status", "tensor", "shape", "count")?;
        for r in &self.rows {
            let shape = r
                .shape
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join("x");
            let status = if r.frozen { "frozen" } else { "trainable" };
            writeln!(f, "{:<24} {:<16} {:>10}  {status}", r.name, shape, r.count)?;
        }
        writeln!(f, "total      {}", self.total)?;
        writeln!(f, "trainable  {}", self.trainable)?;
        write!(f, "frozen     {}", self.frozen)
    }
}

pub fn param_summary(cfg: &ModelConfig) -> ParamSummary {
    let rows: Vec<ParamRow> = param_shapes(cfg)
        .into_iter()
        .map(|(name, shape, backbone)| ParamRow {
            count: shape.iter().product(),
            name,
            shape,
            frozen: backbone && cfg.backbone_frozen,
        })
        .collect();
    let total = rows.iter().map(|r| r.count).sum();
    let frozen = rows.iter().filter(|r| r.frozen).map(|r| r.count).sum();
    ParamSummary {
        rows,
        total,
        trainable: total - frozen,
        frozen,
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    backbone: [Option<(ParamId, ParamId)>; 8],
    depth: usize,
    shared: (ParamId, ParamId),
    noun_cam: (ParamId, ParamId),
    state_cam: (ParamId, ParamId),
    noun_temporal: (ParamId, ParamId),
    state_temporal: (ParamId, ParamId),
    verb_fc: (ParamId, ParamId),
    action_fc: (ParamId, ParamId),
}

impl Layout {
    fn resolve<T: Real>(store: &ParamStore<T>, cfg: &ModelConfig) -> Result<Layout> {
        if cfg.backbone_channels.len() > 8 {
            return Err(Error::ConfigMismatch("at most 8 backbone stages".into()));
        }
        let find = |name: &str| -> Result<ParamId> {
            store
                .find(name)
                .ok_or_else(|| Error::ConfigMismatch(format!("missing parameter `{name}`")))
        };
        let pair = |prefix: &str| -> Result<(ParamId, ParamId)> {
            Ok((find(&format!("{prefix}.weight"))?, find(&format!("{prefix}.bias"))?))
        };
        let mut backbone = [None; 8];
        for (i, slot) in backbone.iter_mut().enumerate().take(cfg.backbone_channels.len()) {
            *slot = Some(pair(&format!("backbone.conv{i}"))?);
        }
        Ok(Layout {
            backbone,
            depth: cfg.backbone_channels.len(),
            shared: pair("shared")?,
            noun_cam: pair("noun_cam")?,
            state_cam: pair("state_cam")?,
            noun_temporal: pair("noun_temporal")?,
            state_temporal: pair("state_temporal")?,
            verb_fc: pair("verb_fc")?,
            action_fc: pair("action_fc")?,
        })
    }
}

/// All parameter tensors of the network together with its configuration.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    layout: Layout,
}

/// Node ids of everything a forward pass records.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub noun_cams: NodeId,
    pub state_cams: NodeId,
    pub per_frame_nouns: NodeId,
    pub per_frame_states: NodeId,
    pub heads: HeadNodes,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadNodes {
    pub noun_vector: NodeId,
    pub transition_matrix: NodeId,
    pub verb_logits: NodeId,
    pub action_logits: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutputs<T> {
    /// k × |N|
    pub per_frame_nouns: Tensor<T>,
    /// k × |S|
    pub per_frame_states: Tensor<T>,
    /// |N|
    pub noun_vector: Tensor<T>,
    /// 2 × |S|; row 0 pre-state, row 1 post-state.
    pub transition_matrix: Tensor<T>,
    pub verb_logits: Tensor<T>,
    pub action_logits: Tensor<T>,
    /// k × |N| × h × w
    pub noun_cams: Tensor<T>,
    /// k × |S| × h × w
    pub state_cams: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs<T> {
    pub noun_vector: Tensor<T>,
    pub transition_matrix: Tensor<T>,
    pub verb_logits: Tensor<T>,
    pub action_logits: Tensor<T>,
}

/// Supervision for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBundle {
    /// k × |S| fade targets at each sampled frame.
    pub per_frame_states: Tensor<f64>,
    /// |N| multi-hot of the nouns in the segment.
    pub noun_multi_hot: Tensor<f64>,
    pub verb: usize,
    pub action: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub state_mse: f64,
    pub noun_mse: f64,
    pub verb_ce: f64,
    pub action_ce: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(w: &LossWeights, state_mse: f64, noun_mse: f64, verb_ce: f64, action_ce: f64) -> Self {
        LossBreakdown {
            state_mse,
            noun_mse,
            verb_ce,
            action_ce,
            total: w.state * state_mse + w.noun * noun_mse + w.verb * verb_ce + w.action * action_ce,
        }
    }
}

impl<T: Real> Model<T> {
    /// Deterministic initialization from `config.init_seed`: Glorot-uniform
    /// weights, zero biases.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        for (name, shape, backbone) in param_shapes(&config) {
            let value = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let (fan_in, fan_out) = fans(&shape);
                glorot_uniform(&shape, fan_in, fan_out, &mut rng)
            };
            params.add(name, value, backbone && config.backbone_frozen);
        }
        let layout = Layout::resolve(&params, &config)?;
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    /// Wraps existing tensors, checking names and shapes against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let expected = param_shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::ConfigMismatch(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape, _), p) in expected.iter().zip(params.iter()) {
            if &p.name != name || p.value.shape() != shape.as_slice() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        let layout = Layout::resolve(&params, &config)?;
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout,
        }
    }

    /// Sets the frozen flag on every backbone tensor.
    pub fn set_backbone_frozen(&mut self, frozen: bool) {
        self.config.backbone_frozen = frozen;
        for p in self.params.iter_mut() {
            if p.name.starts_with("backbone.") {
                p.frozen = frozen;
            }
        }
    }

    fn check_clip(&self, clip: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        let want = [c.k, 3, c.image_size, c.image_size];
        if clip.shape() != want {
            return Err(Error::ShapeMismatch(format!(
                "clip shape {:?}, model expects {want:?}",
                clip.shape()
            )));
        }
        Ok(())
    }

    /// Records the per-keyframe branches up to the k×|N| and k×|S| stacks.
    pub fn record_frames(&self, tape: &mut Tape<T>, clip: NodeId) -> Result<(NodeId, NodeId, NodeId, NodeId)> {
        let p = &self.params;
        let l = &self.layout;
        let mut x = clip;
        for (w, b) in l.backbone.iter().take(l.depth).flatten() {
            let (w, b) = (tape.param(p, *w), tape.param(p, *b));
            let y = tape.conv2d(x, w, b)?;
            let y = tape.relu(y)?;
            x = tape.max_pool2(y)?;
        }
        let (w, b) = (tape.param(p, l.shared.0), tape.param(p, l.shared.1));
        let y = tape.conv2d(x, w, b)?;
        let shared = tape.relu(y)?;

        let (w, b) = (tape.param(p, l.noun_cam.0), tape.param(p, l.noun_cam.1));
        let noun_cams = tape.conv2d(shared, w, b)?;
        let (w, b) = (tape.param(p, l.state_cam.0), tape.param(p, l.state_cam.1));
        let state_cams = tape.conv2d(shared, w, b)?;
        let nouns = tape.gap(noun_cams)?;
        let states = tape.gap(state_cams)?;
        Ok((noun_cams, state_cams, nouns, states))
    }

    /// Records the temporal convolutions and the verb and action heads on
    /// top of per-frame noun and state stacks.
    pub fn record_heads(&self, tape: &mut Tape<T>, nouns: NodeId, states: NodeId) -> Result<HeadNodes> {
        let p = &self.params;
        let l = &self.layout;
        let c = &self.config;
        let (w, b) = (tape.param(p, l.noun_temporal.0), tape.param(p, l.noun_temporal.1));
        let noun_row = tape.temporal_pointwise(nouns, w, b)?;
        let noun_vector = tape.reshape(noun_row, &[c.n_nouns])?;
        let (w, b) = (tape.param(p, l.state_temporal.0), tape.param(p, l.state_temporal.1));
        let transition_matrix = tape.temporal_pointwise(states, w, b)?;

        let flat = tape.reshape(transition_matrix, &[2 * c.n_states])?;
        let (w, b) = (tape.param(p, l.verb_fc.0), tape.param(p, l.verb_fc.1));
        let verb_logits = tape.linear(flat, w, b)?;

        let fused = tape.concat(&[verb_logits, noun_vector])?;
        let (w, b) = (tape.param(p, l.action_fc.0), tape.param(p, l.action_fc.1));
        let action_logits = tape.linear(fused, w, b)?;
        Ok(HeadNodes {
            noun_vector,
            transition_matrix,
            verb_logits,
            action_logits,
        })
    }

    /// Records a full forward pass of a `k×3×H×W` clip.
    pub fn record(&self, tape: &mut Tape<T>, clip: Tensor<T>) -> Result<ForwardNodes> {
        self.check_clip(&clip)?;
        let input = tape.constant(clip);
        let (noun_cams, state_cams, per_frame_nouns, per_frame_states) = self.record_frames(tape, input)?;
        let heads = self.record_heads(tape, per_frame_nouns, per_frame_states)?;
        Ok(ForwardNodes {
            noun_cams,
            state_cams,
            per_frame_nouns,
            per_frame_states,
            heads,
        })
    }

    pub fn forward(&self, clip: &Tensor<T>) -> Result<ForwardOutputs<T>> {
        let mut tape = Tape::new();
        let n = self.record(&mut tape, clip.clone())?;
        let v = |id| tape.value(id).clone();
        Ok(ForwardOutputs {
            per_frame_nouns: v(n.per_frame_nouns),
            per_frame_states: v(n.per_frame_states),
            noun_vector: v(n.heads.noun_vector),
            transition_matrix: v(n.heads.transition_matrix),
            verb_logits: v(n.heads.verb_logits),
            action_logits: v(n.heads.action_logits),
            noun_cams: v(n.noun_cams),
            state_cams: v(n.state_cams),
        })
    }

    /// Runs only the heads on given k×|N| and k×|S| stacks.
    pub fn forward_heads(&self, nouns: &Tensor<T>, states: &Tensor<T>) -> Result<HeadOutputs<T>> {
        let c = &self.config;
        if nouns.shape() != [c.k, c.n_nouns] || states.shape() != [c.k, c.n_states] {
            return Err(Error::ShapeMismatch(format!(
                "stacks {:?} and {:?} for k={}, |N|={}, |S|={}",
                nouns.shape(),
                states.shape(),
                c.k,
                c.n_nouns,
                c.n_states
            )));
        }
        let mut tape = Tape::new();
        let n = tape.constant(nouns.clone());
        let s = tape.constant(states.clone());
        let h = self.record_heads(&mut tape, n, s)?;
        Ok(HeadOutputs {
            noun_vector: tape.value(h.noun_vector).clone(),
            transition_matrix: tape.value(h.transition_matrix).clone(),
            verb_logits: tape.value(h.verb_logits).clone(),
            action_logits: tape.value(h.action_logits).clone(),
        })
    }

    fn check_targets(&self, t: &TargetBundle) -> Result<()> {
        let c = &self.config;
        if t.per_frame_states.shape() != [c.k, c.n_states] || t.noun_multi_hot.shape() != [c.n_nouns] {
            return Err(Error::ShapeMismatch(format!(
                "targets {:?} / {:?} for k={}, |S|={}, |N|={}",
                t.per_frame_states.shape(),
                t.noun_multi_hot.shape(),
                c.k,
                c.n_states,
                c.n_nouns
            )));
        }
        Ok(())
    }

    /// Records the weighted four-term loss; returns the total node and the
    /// (state, noun, verb, action) term nodes.
    pub fn record_loss(
        &self,
        tape: &mut Tape<T>,
        nodes: &ForwardNodes,
        targets: &TargetBundle,
    ) -> Result<(NodeId, [NodeId; 4])> {
        self.check_targets(targets)?;
        let state = tape.mse(nodes.per_frame_states, targets.per_frame_states.cast())?;
        let noun = tape.mse(nodes.heads.noun_vector, targets.noun_multi_hot.cast())?;
        let verb = tape.softmax_cross_entropy(nodes.heads.verb_logits, targets.verb)?;
        let action = tape.softmax_cross_entropy(nodes.heads.action_logits, targets.action)?;
        let w = self.config.loss_weights;
        let total = tape.weighted_sum(&[
            (state, T::of(w.state)),
            (noun, T::of(w.noun)),
            (verb, T::of(w.verb)),
            (action, T::of(w.action)),
        ])?;
        Ok((total, [state, noun, verb, action]))
    }

    pub fn loss(&self, outputs: &ForwardOutputs<T>, targets: &TargetBundle) -> Result<LossBreakdown> {
        self.check_targets(targets)?;
        loss(outputs, targets, &self.config.loss_weights)
    }
}

/// The four loss terms of a forward pass and their weighted total.
pub fn loss<T: Real>(
    outputs: &ForwardOutputs<T>,
    targets: &TargetBundle,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let state = diffcore::mse(&outputs.per_frame_states, &targets.per_frame_states.cast())?;
    let noun = diffcore::mse(&outputs.noun_vector, &targets.noun_multi_hot.cast())?;
    let verb = diffcore::softmax_cross_entropy(&outputs.verb_logits, targets.verb)?;
    let action = diffcore::softmax_cross_entropy(&outputs.action_logits, targets.action)?;
    Ok(LossBreakdown::combine(weights, f(state), f(noun), f(verb), f(action)))
}

/// Writes every class activation map as a binary graymap, min-max
/// normalized per map, named `frame<t>_<branch>_<class>.pgm`.
pub fn export_cams<T: Real>(
    outputs: &ForwardOutputs<T>,
    noun_names: &[String],
    state_names: &[String],
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (branch, cams, names) in [
        ("noun", &outputs.noun_cams, noun_names),
        ("state", &outputs.state_cams, state_names),
    ] {
        let s = cams.shape();
        let (k, classes, h, w) = (s[0], s[1], s[2], s[3]);
        if names.len() != classes {
            return Err(Error::ShapeMismatch(format!(
                "{} {branch} names for {classes} maps",
                names.len()
            )));
        }
        for t in 0..k {
            for (c, name) in names.iter().enumerate() {
                let start = (t * classes + c) * h * w;
                let map: Vec<f64> = cams.data()[start..start + h * w]
                    .iter()
                    .map(|v| v.to_f64().unwrap_or(0.0))
                    .collect();
                let path = dir.join(format!("frame{t}_{branch}_{name}.pgm"));
                fs::write(&path, pgm_bytes(&map, w, h)).map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Binary PGM (P5) with min-max normalization; a constant map is all zero.
pub fn pgm_bytes(values: &[f64], width: usize, height: usize) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}
