//! Command-line surface: argument types, config resolution and dispatch.
//!
//! Every subcommand resolves its settings from an optional `key = value`
//! config file overlaid with command-line flags (flags win), writes the
//! fully resolved settings as `run_manifest.txt` before any other output,
//! and produces its artifacts in a staging directory that is moved into
//! place on success or renamed to `quarantine/` on failure. A manifest is a
//! valid `--config` file, so `roadfuse <cmd> --config out/run_manifest.txt`
//! replays a run.

mod commands;
mod compare;
mod run_dir;

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::evaluation::FnrMode;
use crate::kv::KvMap;
use crate::network::{FusionStrategy, Preset};

pub use compare::{compare_fusion, fusion_table, FusionRun};
pub use run_dir::{QUARANTINE_DIR, RUN_MANIFEST};

#[derive(Debug, Clone, Parser)]
#[command(name = "roadfuse", version, about = "Camera + LiDAR road detection with Siamese FCN fusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic road dataset in KITTI layout.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of frames.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Project every velodyne scan into a LiDAR image (LIMG files).
    Project {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train one fusion network.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// Hold out a stratified validation split and train on this many frames.
        #[arg(long)]
        train_frames: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Score predictions (a checkpoint or probability PNGs) against ground truth.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory of `<frame id>.png` 8-bit road probability maps.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Split file from `train`; only its validation frames are scored.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Write probability maps and TP/FP/FN overlays for every frame.
    Infer {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Road threshold for the overlays.
        #[arg(long)]
        threshold: Option<f32>,
    },
    /// Train early, late and Siamese fusion on one split and compare them.
    CompareFusion {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// Synthetic frames to generate when no --data-root is given.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        train_frames: Option<usize>,
    },
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Dataset root containing `training/`.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Output directory (default `runs/<command>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// paper | tiny
    #[arg(long)]
    pub preset: Option<Preset>,
    /// early | late | siamese
    #[arg(long)]
    pub strategy: Option<FusionStrategy>,
    /// paper (FN/(FN+FP)) | standard (FN/(FN+TP))
    #[arg(long)]
    pub fnr_mode: Option<FnrMode>,
    /// Evaluate in bird's-eye view.
    #[arg(long)]
    pub bev: bool,
    /// `key = value` settings file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub halving_period: Option<usize>,
}

const COMMON_KEYS: &[&str] = &["data_root", "out", "seed", "preset", "strategy", "fnr_mode", "bev"];
const SCHEDULE_KEYS: &[&str] = &["iterations", "initial_lr", "halving_period"];

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Project { .. } => "project",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Infer { .. } => "infer",
            Command::CompareFusion { .. } => "compare-fusion",
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::Synth { common, .. }
            | Command::Project { common }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Infer { common, .. }
            | Command::CompareFusion { common, .. } => common,
        }
    }

    fn extra_keys(&self) -> Vec<&'static str> {
        match self {
            Command::Synth { .. } => vec!["frames"],
            Command::Project { .. } => vec![],
            Command::Train { .. } => [SCHEDULE_KEYS, &["train_frames", "checkpoint_every"]].concat(),
            Command::Eval { .. } => vec!["checkpoint", "predictions", "split"],
            Command::Infer { .. } => vec!["checkpoint", "split", "threshold"],
            Command::CompareFusion { .. } => [SCHEDULE_KEYS, &["frames", "train_frames"]].concat(),
        }
    }

    /// Settings given explicitly on the command line.
    fn flags(&self) -> KvMap {
        let mut kv = KvMap::new();
        let c = self.common();
        let path = |p: &PathBuf| p.display().to_string();
        set_opt(&mut kv, "data_root", c.data_root.as_ref().map(path));
        set_opt(&mut kv, "out", c.out.as_ref().map(path));
        set_opt(&mut kv, "seed", c.seed);
        set_opt(&mut kv, "preset", c.preset);
        set_opt(&mut kv, "strategy", c.strategy);
        set_opt(&mut kv, "fnr_mode", c.fnr_mode);
        if c.bev {
            kv.set("bev", true);
        }
        let schedule = |kv: &mut KvMap, s: &ScheduleArgs| {
            set_opt(kv, "iterations", s.iterations);
            set_opt(kv, "initial_lr", s.lr);
            set_opt(kv, "halving_period", s.halving_period);
        };
        match self {
            Command::Synth { frames, .. } => set_opt(&mut kv, "frames", *frames),
            Command::Project { .. } => {}
            Command::Train { schedule: s, train_frames, checkpoint_every, .. } => {
                schedule(&mut kv, s);
                set_opt(&mut kv, "train_frames", *train_frames);
                set_opt(&mut kv, "checkpoint_every", *checkpoint_every);
            }
            Command::Eval { checkpoint, predictions, split, .. } => {
                set_opt(&mut kv, "checkpoint", checkpoint.as_ref().map(path));
                set_opt(&mut kv, "predictions", predictions.as_ref().map(path));
                set_opt(&mut kv, "split", split.as_ref().map(path));
            }
            Command::Infer { checkpoint, split, threshold, .. } => {
                set_opt(&mut kv, "checkpoint", checkpoint.as_ref().map(path));
                set_opt(&mut kv, "split", split.as_ref().map(path));
                set_opt(&mut kv, "threshold", *threshold);
            }
            Command::CompareFusion { schedule: s, frames, train_frames, .. } => {
                schedule(&mut kv, s);
                set_opt(&mut kv, "frames", *frames);
                set_opt(&mut kv, "train_frames", *train_frames);
            }
        }
        kv
    }

    /// Config file (if any) overlaid with the command-line flags. Unknown
    /// keys and a manifest of a different command are rejected.
    fn resolve(&self) -> Result<KvMap> {
        let mut kv = match &self.common().config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::format(path, format!("cannot read config: {e}")))?;
                KvMap::parse(&text).map_err(|e| Error::format(path, e.to_string()))?
            }
            None => KvMap::new(),
        };
        if let Some(cmd) = kv.get_str("command") {
            if cmd != self.name() {
                return Err(Error::Config(format!("config is for `{cmd}`, not `{}`", self.name())));
            }
        }
        let extra = self.extra_keys();
        if let Some(bad) = kv
            .keys()
            .find(|k| !COMMON_KEYS.contains(k) && !extra.contains(k) && !["command", "version"].contains(k))
        {
            return Err(Error::Config(format!("unknown setting {bad:?} for `{}`", self.name())));
        }
        kv.extend(&self.flags());
        Ok(kv)
    }
}

fn set_opt<T: Display>(kv: &mut KvMap, key: &str, value: Option<T>) {
    if let Some(v) = value {
        kv.set(key, v);
    }
}

/// Resolved settings plus the manifest being built from them: every value
/// read, defaults included, is echoed into the manifest.
pub(crate) struct Settings {
    kv: KvMap,
    manifest: KvMap,
}

impl Settings {
    fn new(command: &str, kv: KvMap) -> Self {
        let mut manifest = KvMap::new();
        manifest.set("command", command).set("version", env!("CARGO_PKG_VERSION"));
        Self { kv, manifest }
    }

    pub(crate) fn value<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.kv.get(key)?.unwrap_or(default);
        self.manifest.set(key, &v);
        Ok(v)
    }

    pub(crate) fn optional<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v: Option<T> = self.kv.get(key)?;
        if let Some(v) = &v {
            self.manifest.set(key, v);
        }
        Ok(v)
    }

    pub(crate) fn path(&mut self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.optional::<String>(key)?.map(PathBuf::from))
    }

    pub(crate) fn required_path(&mut self, key: &str, why: &str) -> Result<PathBuf> {
        self.path(key)?
            .ok_or_else(|| Error::Config(format!("--{} is required {why}", key.replace('_', "-"))))
    }

    pub(crate) fn manifest(&self) -> &KvMap {
        &self.manifest
    }
}

/// Runs one command and returns its report text.
pub fn run(cli: &Cli) -> Result<String> {
    let command = &cli.command;
    let mut settings = Settings::new(command.name(), command.resolve()?);
    match command {
        Command::Synth { .. } => commands::synth(&mut settings),
        Command::Project { .. } => commands::project(&mut settings),
        Command::Train { .. } => commands::train(&mut settings),
        Command::Eval { .. } => commands::eval(&mut settings),
        Command::Infer { .. } => commands::infer(&mut settings),
        Command::CompareFusion { .. } => commands::compare(&mut settings),
    }
}
