//! Command-line front end. Every subcommand routes to the library; this file
//! only parses arguments, merges configuration and maps errors to exit codes.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, ArgMatches, Args, FromArgMatches, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{load_config, RunConfig, KEYS};
use crate::error::{Error, Result};
use crate::evaluator::{self, Task};
use crate::fsutil;
use crate::ledger::{ingest_annotations, Ledger};
use crate::net::{export_cams, param_summary, Model};
use crate::suite::gradient_suite;
use crate::synthgen::{gen_dataset, Dataset, Split, StoredSegment};
use crate::trainer::{self, format_epoch_log, sample_keyframes, Checkpoint, TrainMeta, Vocabulary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Exit status for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Format(_) | Error::Version { .. } | Error::Parse { .. } => EXIT_IO,
        Error::UnknownKey(_) | Error::InvalidValue { .. } => EXIT_USAGE,
        _ => EXIT_FAILED,
    }
}

/// Config keys as flags: `--segment-len 20`, `--deterministic`, ...
#[derive(Debug, Clone, Default)]
pub struct ConfigFlags {
    pub config: Option<PathBuf>,
    pub values: Vec<(String, String)>,
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

impl FromArgMatches for ConfigFlags {
    fn from_arg_matches(m: &ArgMatches) -> std::result::Result<Self, clap::Error> {
        let mut out = ConfigFlags {
            config: m.get_one::<PathBuf>("config").cloned(),
            values: Vec::new(),
        };
        for key in KEYS {
            if key == "deterministic" {
                if m.get_flag(key) {
                    out.values.push((key.into(), "true".into()));
                }
            } else if let Some(v) = m.get_one::<String>(key) {
                out.values.push((key.into(), v.clone()));
            }
        }
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> std::result::Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigFlags {
    fn augment_args(cmd: clap::Command) -> clap::Command {
        let mut cmd = cmd.arg(
            clap::Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("`key = value` settings file"),
        );
        for key in KEYS {
            let arg = clap::Arg::new(key).long(flag_name(key));
            cmd = cmd.arg(if key == "deterministic" {
                arg.action(ArgAction::SetTrue).help("single-threaded, bitwise reproducible run")
            } else {
                arg.value_name("VALUE").help_heading("Settings")
            });
        }
        cmd
    }

    fn augment_args_for_update(cmd: clap::Command) -> clap::Command {
        Self::augment_args(cmd)
    }
}

#[derive(Debug, Parser)]
#[command(name = "stateact", version, about = "Manipulation action recognition from object state transitions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic desk dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Settings file for the generator (same format as --config).
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Ledger file; the built-in synthetic ledger by default.
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Check or print a ledger file.
    Ledger {
        #[command(subcommand)]
        action: LedgerAction,
    },
    /// Convert an action-annotation CSV into a ledger skeleton and segment list.
    IngestEpic {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus its epoch log.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Epoch log path; `<out>.log.tsv` by default.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Score a checkpoint on a dataset split and write the metrics report.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Print the top-5 verbs, nouns and actions for one segment file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        segment: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Write per-keyframe class activation maps as PGM images.
    ExportCams {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        segment: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Print the parameter table of the configured network.
    ModelSummary {
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Run the finite-difference gradient suite.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum LedgerAction {
    Validate { path: PathBuf },
    Show { path: PathBuf },
}

struct Ctx<'a> {
    env: Vec<(String, String)>,
    out: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn config(&self, flags: &ConfigFlags) -> Result<RunConfig> {
        load_config(flags.config.as_deref(), self.env.clone(), &flags.values)
    }

    fn print(&mut self, text: &str) -> Result<()> {
        self.out
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status. Diagnostics go to `err` as single lines.
pub fn run<I, T>(args: I, env: Vec<(String, String)>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    return EXIT_OK;
                }
                _ => EXIT_USAGE,
            };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    let mut ctx = Ctx { env, out };
    match dispatch(cli.command, &mut ctx) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "stateact: {e}");
            exit_code(&e)
        }
    }
}

fn with_pool<R: Send>(cfg: &RunConfig, f: impl FnOnce() -> R + Send) -> Result<R> {
    let threads = if cfg.deterministic { 1 } else { cfg.threads };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidValue {
            key: "threads".into(),
            msg: e.to_string(),
        })?;
    Ok(pool.install(f))
}

fn load_ledger(path: Option<&Path>) -> Result<Ledger> {
    match path {
        Some(p) => Ledger::load(p),
        None => Ok(Ledger::synthetic()),
    }
}

fn comment_block(cfg: &RunConfig) -> String {
    cfg.to_text().lines().map(|l| format!("# {l}\n")).collect()
}

fn dispatch(cmd: Command, ctx: &mut Ctx<'_>) -> Result<i32> {
    match cmd {
        Command::GenData {
            out,
            spec,
            ledger,
            mut flags,
        } => {
            if flags.config.is_none() {
                flags.config = spec;
            }
            let cfg = ctx.config(&flags)?;
            let ledger = load_ledger(ledger.as_deref())?;
            let manifest = with_pool(&cfg, || gen_dataset(&ledger, &cfg.gen_spec(), cfg.seed, &out, cfg.entries()))??;
            ctx.print(&format!(
                "wrote {} segments to {}\n",
                manifest.entries.len(),
                out.display()
            ))?;
            Ok(EXIT_OK)
        }
        Command::Ledger { action } => match action {
            LedgerAction::Validate { path } => {
                let ledger = Ledger::load_unchecked(&path)?;
                let report = ledger.validate();
                let mut text = format!(
                    "{}: {} verbs, {} nouns, {} states, {} actions, {} rules\n",
                    path.display(),
                    report.verb_count,
                    report.noun_count,
                    report.state_count,
                    report.action_count,
                    report.rule_count
                );
                for v in &report.violations {
                    let _ = writeln!(text, "violation: {v}");
                }
                let _ = writeln!(text, "{}", if report.is_valid() { "valid" } else { "invalid" });
                ctx.print(&text)?;
                Ok(if report.is_valid() { EXIT_OK } else { EXIT_FAILED })
            }
            LedgerAction::Show { path } => {
                let ledger = Ledger::load(&path)?;
                ctx.print(&ledger.to_text())?;
                Ok(EXIT_OK)
            }
        },
        Command::IngestEpic { annotations, out } => {
            let file = std::fs::File::open(&annotations).map_err(|e| Error::io(&annotations, e))?;
            let ingested = ingest_annotations(std::io::BufReader::new(file))?;
            let l = &ingested.ledger;
            let mut seg = String::from("video_id\tstart_frame\tstop_frame\tverb\tnouns\taction\n");
            for s in &ingested.segments {
                let nouns: Vec<&str> = s.label.nouns.iter().map(|&n| l.nouns.name(n).unwrap_or("?")).collect();
                let _ = writeln!(
                    seg,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    s.video_id,
                    s.start_frame,
                    s.stop_frame,
                    l.verbs.name(s.label.verb).unwrap_or("?"),
                    nouns.join(","),
                    l.actions.name(s.label.action).unwrap_or("?")
                );
            }
            fsutil::write_atomic(&out.join("ledger.txt"), l.to_text().as_bytes())?;
            fsutil::write_atomic(&out.join("segments.tsv"), seg.as_bytes())?;
            ctx.print(&format!(
                "{} segments, {} verbs, {} nouns, {} actions\n",
                ingested.segments.len(),
                l.verbs.len(),
                l.nouns.len(),
                l.actions.len()
            ))?;
            Ok(EXIT_OK)
        }
        Command::Train { data, out, log, flags } => {
            let cfg = ctx.config(&flags)?;
            let dataset = Dataset::open(&data)?;
            let segments = dataset.load_split(Split::Train)?;
            if let Some(s) = segments.first() {
                if s.height != cfg.image_size || s.width != cfg.image_size {
                    return Err(Error::ConfigMismatch(format!(
                        "image_size is {} but {} holds {}×{} frames",
                        cfg.image_size,
                        data.display(),
                        s.height,
                        s.width
                    )));
                }
            }
            let mut model: Model<f32> = Model::new(cfg.model_config(&dataset.ledger))?;
            let tc = cfg.train_config();
            let epochs = with_pool(&cfg, || {
                trainer::train(&mut model, &dataset.ledger, &segments, &tc, |e| {
                    eprintln!("epoch {:>3}  loss {:.4}", e.epoch, e.loss.total);
                })
            })??;
            let ckpt = Checkpoint {
                run: cfg.clone(),
                model,
                vocab: Vocabulary::from_ledger(&dataset.ledger),
                meta: TrainMeta {
                    epochs: epochs.len(),
                    seed: cfg.seed,
                    final_loss: epochs.last().map_or(f64::NAN, |e| e.loss.total),
                },
            };
            ckpt.save(&out)?;
            let log_path = log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".log.tsv");
                PathBuf::from(p)
            });
            let text = comment_block(&cfg) + &format_epoch_log(&epochs);
            fsutil::write_atomic(&log_path, text.as_bytes())?;
            ctx.print(&format!("wrote {} and {}\n", out.display(), log_path.display()))?;
            Ok(EXIT_OK)
        }
        Command::Eval {
            data,
            model,
            report,
            split,
            flags,
        } => {
            let ckpt = Checkpoint::load(&model)?;
            let cfg = merged_with_checkpoint(ctx, &ckpt, &flags)?;
            let split = Split::parse(&split).ok_or_else(|| Error::InvalidValue {
                key: "split".into(),
                msg: format!("expected train or test, got `{split}`"),
            })?;
            let dataset = Dataset::open(&data)?;
            let metrics = with_pool(&cfg, || evaluator::evaluate(&ckpt.model, &dataset, split, cfg.clips, cfg.seed))??;
            let mut text = metrics.to_tsv();
            text.push_str(&comment_block(&cfg));
            fsutil::write_atomic(&report, text.as_bytes())?;
            ctx.print(&metrics.to_tsv())?;
            Ok(EXIT_OK)
        }
        Command::Predict { model, segment, flags } => {
            let ckpt = Checkpoint::load(&model)?;
            let cfg = merged_with_checkpoint(ctx, &ckpt, &flags)?;
            let seg = StoredSegment::load(&segment)?;
            let scores = evaluator::segment_scores(&ckpt.model, &seg, cfg.clips, cfg.seed, 0)?;
            let mut text = String::new();
            for (task, s) in Task::ALL.iter().zip(&scores) {
                let names = match task {
                    Task::Verb => &ckpt.vocab.verbs,
                    Task::Noun => &ckpt.vocab.nouns,
                    Task::Action => &ckpt.vocab.actions,
                };
                let mut order: Vec<usize> = (0..s.len()).collect();
                order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
                for (rank, &c) in order.iter().take(5).enumerate() {
                    let name = names.get(c).map_or_else(|| c.to_string(), Clone::clone);
                    let _ = writeln!(text, "{}\t{}\t{}\t{:.4}", task.as_str(), rank + 1, name, s[c]);
                }
            }
            ctx.print(&text)?;
            Ok(EXIT_OK)
        }
        Command::ExportCams {
            model,
            segment,
            out,
            flags,
        } => {
            let ckpt = Checkpoint::load(&model)?;
            let cfg = merged_with_checkpoint(ctx, &ckpt, &flags)?;
            let seg = StoredSegment::load(&segment)?;
            let mut rng = ChaCha8Rng::seed_from_u64(evaluator::eval_clip_seed(cfg.seed, 0, 0));
            let frames = sample_keyframes(seg.frames, ckpt.model.config.k, &mut rng);
            let outputs = ckpt.model.forward(&seg.clip(&frames)?)?;
            let files = export_cams(&outputs, &ckpt.vocab.nouns, &ckpt.vocab.states, &out)?;
            ctx.print(&format!(
                "keyframes {:?}: wrote {} maps to {}\n",
                frames,
                files.len(),
                out.display()
            ))?;
            Ok(EXIT_OK)
        }
        Command::ModelSummary { ledger, flags } => {
            let cfg = ctx.config(&flags)?;
            let ledger = load_ledger(ledger.as_deref())?;
            let mc = cfg.model_config(&ledger);
            mc.validate()?;
            ctx.print(&param_summary(&mc).to_string())?;
            Ok(EXIT_OK)
        }
        Command::GradCheck { seed } => {
            let result = gradient_suite(seed)?;
            ctx.print(&result.to_string())?;
            Ok(if result.passes() { EXIT_OK } else { EXIT_FAILED })
        }
    }
}

/// The checkpoint's run config, then an optional config file, environment
/// and flags on top.
fn merged_with_checkpoint(ctx: &Ctx<'_>, ckpt: &Checkpoint, flags: &ConfigFlags) -> Result<RunConfig> {
    let mut cfg = ckpt.run.clone();
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    cfg.apply_overrides(ctx.env.clone(), &flags.values)?;
    Ok(cfg)
}
