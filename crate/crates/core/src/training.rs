//! SGD training with a step-halving learning rate, one frame per iteration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::RoadFrame;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::network::{frame_inputs, Graph, ModelParams, Preset};
use crate::tensor::{sgd_step, Tensor};

pub const DEFAULT_ITERATIONS: usize = 60_000;
pub const DEFAULT_INITIAL_LR: f64 = 1e-5;
pub const HALVING_PERIOD: usize = 5000;
/// Learning rate of the tiny preset: its mean-reduced loss over a 96x312
/// frame needs a far larger step than the full-size setting.
pub const TINY_INITIAL_LR: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub initial_lr: f64,
    pub halving_period: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Save a checkpoint every this many iterations (and at the end).
    pub checkpoint_every: Option<usize>,
    pub preset: Preset,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            initial_lr: DEFAULT_INITIAL_LR,
            halving_period: HALVING_PERIOD,
            batch_size: 1,
            seed: 0,
            checkpoint_every: None,
            preset: Preset::Paper,
        }
    }

    pub fn tiny(iterations: usize) -> Self {
        Self {
            iterations,
            initial_lr: TINY_INITIAL_LR,
            preset: Preset::Tiny,
            ..Self::paper()
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Tiny => Self::tiny(2000),
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr {} must be positive", self.initial_lr)));
        }
        if self.halving_period == 0 {
            return Err(Error::Config("halving_period must be positive".into()));
        }
        if self.batch_size != 1 {
            return Err(Error::Config(format!("batch_size {} unsupported; one frame per step", self.batch_size)));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    pub fn lr(&self, iteration: usize) -> f64 {
        lr_schedule(self.initial_lr, self.halving_period, iteration)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("iterations", self.iterations)
            .set("initial_lr", self.initial_lr)
            .set("halving_period", self.halving_period)
            .set("batch_size", self.batch_size)
            .set("seed", self.seed)
            .set("preset", self.preset);
        if let Some(every) = self.checkpoint_every {
            kv.set("checkpoint_every", every);
        }
        kv
    }

    /// Starts from the preset named by `preset` (default tiny) and applies
    /// any overrides present in `kv`.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let preset: Preset = kv.get("preset")?.unwrap_or(Preset::Tiny);
        let base = Self::preset(preset);
        let config = Self {
            iterations: kv.get("iterations")?.unwrap_or(base.iterations),
            initial_lr: kv.get("initial_lr")?.unwrap_or(base.initial_lr),
            halving_period: kv.get("halving_period")?.unwrap_or(base.halving_period),
            batch_size: kv.get("batch_size")?.unwrap_or(base.batch_size),
            seed: kv.get("seed")?.unwrap_or(base.seed),
            checkpoint_every: kv.get("checkpoint_every")?.or(base.checkpoint_every),
            preset,
        };
        config.validate()?;
        Ok(config)
    }
}

/// `initial_lr * 2^-floor(iteration / halving_period)`.
pub fn lr_schedule(initial_lr: f64, halving_period: usize, iteration: usize) -> f64 {
    let halvings = (iteration / halving_period.max(1)).min(1074) as i32;
    initial_lr * 2f64.powi(-halvings)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LossRecord>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Trailing means over `window` consecutive losses (one per full window).
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        if window == 0 {
            return Vec::new();
        }
        self.losses().windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
    }

    /// `iteration,lr,loss` with full-precision values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,lr,loss\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:e},{:e}", r.iteration, r.lr, r.loss);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

struct Sample {
    id: String,
    rgb: Tensor<f32>,
    lidar: Tensor<f32>,
    target: Vec<u8>,
    valid: Vec<bool>,
}

/// Epoch-cyclic sampler: a fresh seeded permutation of the frames each epoch.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// One forward/backward pass on a frame; returns the loss and leaves the
/// gradients accumulated in `model`.
fn step(model: &mut ModelParams<f32>, sample: &Sample) -> Result<f64> {
    let grads = {
        let mut g = Graph::new(model);
        let rgb = g.input(sample.rgb.clone());
        let lidar = g.input(sample.lidar.clone());
        let logits = g.forward(rgb, lidar)?;
        let loss = g.tape.softmax_ce_loss(logits, &sample.target, &sample.valid)?;
        let value = g.tape.value(loss).data()[0] as f64;
        (g.backward(loss)?, value)
    };
    model.accumulate(&grads.0)?;
    Ok(grads.1)
}

/// Trains `model` in place. Each iteration draws one frame, applies the
/// masked cross-entropy and takes a plain SGD step at the scheduled rate.
/// Checkpoints go to `checkpoint_dir/iter_XXXXXX.ckpt` when configured.
pub fn train(
    model: &mut ModelParams<f32>,
    frames: &[RoadFrame],
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainLog> {
    train_with(model, frames, config, checkpoint_dir, |_| {})
}

/// [`train`] with a callback after every iteration, for progress output.
pub fn train_with(
    model: &mut ModelParams<f32>,
    frames: &[RoadFrame],
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_record: impl FnMut(&LossRecord),
) -> Result<TrainLog> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let expected = model.config().input_size;
    let samples: Vec<Sample> = frames
        .iter()
        .map(|f| {
            if f.size() != expected {
                return Err(Error::shape(format!(
                    "frame {} is {:?}, the network expects {expected:?}",
                    f.frame_id,
                    f.size()
                )));
            }
            let (rgb, lidar) = frame_inputs(f);
            Ok(Sample {
                id: f.frame_id.clone(),
                rgb,
                lidar,
                target: f.target(),
                valid: f.gt_valid.clone(),
            })
        })
        .collect::<Result<_>>()?;
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir)?;
    }

    let mut sampler = Sampler::new(samples.len(), config.seed);
    let mut log = TrainLog::default();
    for iteration in 0..config.iterations {
        let sample = &samples[sampler.next()];
        let lr = config.lr(iteration);
        let diverged = |loss: f64| Error::Diverged {
            iteration,
            frame_id: sample.id.clone(),
            loss,
        };
        let loss = match step(model, sample) {
            Ok(loss) if loss.is_finite() => loss,
            Ok(loss) => return Err(diverged(loss)),
            Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
            Err(e) => return Err(e),
        };
        sgd_step(model.tensors_mut(), lr as f32);
        if !model.is_finite() {
            return Err(diverged(loss));
        }
        let record = LossRecord { iteration, lr, loss };
        on_record(&record);
        log.records.push(record);

        let done = iteration + 1;
        let due = config.checkpoint_every.is_some_and(|e| done % e == 0) || done == config.iterations;
        if let (Some(dir), true) = (checkpoint_dir, due) {
            model.save(dir.join(format!("iter_{done:06}.ckpt")))?;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_breakpoints() {
        assert_eq!(lr_schedule(1e-5, 5000, 0), 1e-5);
        assert_eq!(lr_schedule(1e-5, 5000, 4999), 1e-5);
        assert_eq!(lr_schedule(1e-5, 5000, 5000), 5e-6);
        assert_eq!(lr_schedule(1e-5, 5000, 12499), 2.5e-6);
        assert!(lr_schedule(1.0, 1, 5000) >= 0.0);
    }

    #[test]
    fn sampler_visits_every_frame_each_epoch() {
        let mut s = Sampler::new(5, 3);
        for _ in 0..4 {
            let mut epoch: Vec<usize> = (0..5).map(|_| s.next()).collect();
            epoch.sort();
            assert_eq!(epoch, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn config_kv_roundtrip() {
        let c = TrainConfig { checkpoint_every: Some(100), ..TrainConfig::tiny(300).with_seed(4) };
        assert_eq!(TrainConfig::from_kv(&c.to_kv()).unwrap(), c);
        let mut kv = c.to_kv();
        kv.set("initial_lr", 0);
        assert!(TrainConfig::from_kv(&kv).is_err());
    }
}
