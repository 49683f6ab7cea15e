//! Run configuration merged from defaults, a `key = value` file,
//! `STATEACT_`-prefixed environment variables and command-line flags, in
//! that order of precedence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ledger::Ledger;
use crate::net::{LossWeights, ModelConfig};
use crate::synthgen::GenSpec;
use crate::trainer::TrainConfig;

pub const ENV_PREFIX: &str = "STATEACT_";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub k: usize,
    pub segment_len: usize,
    pub image_size: usize,
    pub noise_sigma: f64,
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub backbone_channels: Vec<usize>,
    pub shared_channels: usize,
    pub backbone_frozen: bool,
    pub lambda_state: f64,
    pub lambda_noun: f64,
    pub lambda_verb: f64,
    pub lambda_action: f64,
    pub clips: usize,
    /// Worker cap; 0 lets the runtime decide.
    pub threads: usize,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 5,
            segment_len: 30,
            image_size: 32,
            noise_sigma: 0.02,
            train_count: 2000,
            test_count: 400,
            seed: 0,
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            clip_norm: 1.0,
            backbone_channels: vec![16, 32, 64],
            shared_channels: 64,
            backbone_frozen: true,
            lambda_state: 1.0,
            lambda_noun: 1.0,
            lambda_verb: 1.0,
            lambda_action: 1.0,
            clips: 10,
            threads: 0,
            deterministic: false,
        }
    }
}

pub const KEYS: [&str; 22] = [
    "k",
    "segment_len",
    "image_size",
    "noise_sigma",
    "train_count",
    "test_count",
    "seed",
    "epochs",
    "batch_size",
    "learning_rate",
    "momentum",
    "clip_norm",
    "backbone_channels",
    "shared_channels",
    "backbone_frozen",
    "lambda_state",
    "lambda_noun",
    "lambda_verb",
    "lambda_action",
    "clips",
    "threads",
    "deterministic",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::InvalidValue {
        key: key.to_string(),
        msg: format!("cannot parse `{value}`"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::InvalidValue {
            key: key.to_string(),
            msg: format!("expected true or false, got `{other}`"),
        }),
    }
}

impl RunConfig {
    /// Applies one setting; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "k" => self.k = parse_value(key, value)?,
            "segment_len" => self.segment_len = parse_value(key, value)?,
            "image_size" => self.image_size = parse_value(key, value)?,
            "noise_sigma" => self.noise_sigma = parse_value(key, value)?,
            "train_count" => self.train_count = parse_value(key, value)?,
            "test_count" => self.test_count = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "backbone_channels" => {
                self.backbone_channels = value
                    .split(',')
                    .map(|v| parse_value(key, v))
                    .collect::<Result<_>>()?
            }
            "shared_channels" => self.shared_channels = parse_value(key, value)?,
            "backbone_frozen" => self.backbone_frozen = parse_bool(key, value)?,
            "lambda_state" => self.lambda_state = parse_value(key, value)?,
            "lambda_noun" => self.lambda_noun = parse_value(key, value)?,
            "lambda_verb" => self.lambda_verb = parse_value(key, value)?,
            "lambda_action" => self.lambda_action = parse_value(key, value)?,
            "clips" => self.clips = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "threads" => self.threads = parse_value(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Current value of `key` in the same textual form [`RunConfig::set`]
    /// accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "k" => self.k.to_string(),
            "segment_len" => self.segment_len.to_string(),
            "image_size" => self.image_size.to_string(),
            "noise_sigma" => format!("{:?}", self.noise_sigma),
            "train_count" => self.train_count.to_string(),
            "test_count" => self.test_count.to_string(),
            "seed" => self.seed.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => format!("{:?}", self.learning_rate),
            "momentum" => format!("{:?}", self.momentum),
            "backbone_channels" => self
                .backbone_channels
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "shared_channels" => self.shared_channels.to_string(),
            "backbone_frozen" => self.backbone_frozen.to_string(),
            "lambda_state" => format!("{:?}", self.lambda_state),
            "lambda_noun" => format!("{:?}", self.lambda_noun),
            "lambda_verb" => format!("{:?}", self.lambda_verb),
            "lambda_action" => format!("{:?}", self.lambda_action),
            "clips" => self.clips.to_string(),
            "clip_norm" => format!("{:?}", self.clip_norm),
            "threads" => self.threads.to_string(),
            "deterministic" => self.deterministic.to_string(),
            _ => return None,
        })
    }

    /// Every setting as `(key, value)` in canonical order.
    pub fn entries(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .map(|k| (k.to_string(), self.get(k).expect("known key")))
            .collect()
    }

    /// `key = value` lines; parsing them back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Applies `STATEACT_*` variables from `env`, then `flags`.
    pub fn apply_overrides<I>(&mut self, env: I, flags: &[(String, String)]) -> Result<()>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v)))
            .collect();
        env.sort();
        for (k, v) in env.iter().chain(flags) {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (line, key, value) in parse_kv_lines(text)? {
            self.set(&key, &value).map_err(|e| match e {
                Error::InvalidValue { key, msg } => Error::Parse {
                    line,
                    msg: format!("invalid value for `{key}`: {msg}"),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn model_config(&self, ledger: &Ledger) -> ModelConfig {
        ModelConfig {
            k: self.k,
            image_size: self.image_size,
            n_nouns: ledger.nouns.len(),
            n_states: ledger.states.len(),
            n_verbs: ledger.verbs.len(),
            n_actions: ledger.actions.len(),
            backbone_channels: self.backbone_channels.clone(),
            shared_channels: self.shared_channels,
            backbone_frozen: self.backbone_frozen,
            loss_weights: LossWeights {
                state: self.lambda_state,
                noun: self.lambda_noun,
                verb: self.lambda_verb,
                action: self.lambda_action,
            },
            init_seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            clip_norm: self.clip_norm,
            seed: self.seed,
        }
    }

    pub fn gen_spec(&self) -> GenSpec {
        GenSpec {
            train: self.train_count,
            test: self.test_count,
            segment_len: self.segment_len,
            image_size: self.image_size,
            noise_sigma: self.noise_sigma,
        }
    }
}

/// Splits `key = value` text into `(line, key, value)`; `#` starts a comment.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// `key = value` text as a map; later lines win.
pub fn parse_kv_map(text: &str) -> Result<BTreeMap<String, String>> {
    Ok(parse_kv_lines(text)?
        .into_iter()
        .map(|(_, k, v)| (k, v))
        .collect())
}

/// Merges defaults, the optional config file, `STATEACT_*` environment
/// variables and flags, later sources overriding earlier ones.
pub fn load_config<I>(path: Option<&Path>, env: I, flags: &[(String, String)]) -> Result<RunConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut cfg = RunConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    cfg.apply_overrides(env, flags)?;
    Ok(cfg)
}
