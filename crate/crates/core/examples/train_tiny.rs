//! Trains a tiny-preset model on synthetic frames and reports training
//! accuracy plus MaxF on ten held-out frames.
//!
//! cargo run --release --example train_tiny -- siamese 300 2 [lr] [seed]
//!
//! Set LOSS_CSV=path to keep the loss log.

use std::time::Instant;

use anyhow::Context;
use roadfuse::dataset::{synth_generate, SynthConfig};
use roadfuse::evaluation::{evaluate_frames, pixel_accuracy, FnrMode};
use roadfuse::network::{build_model, FusionStrategy, NetConfig};
use roadfuse::training::{train, TrainConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strategy: FusionStrategy = args.first().map_or(Ok(FusionStrategy::Siamese), |s| s.parse())?;
    let iterations: usize = args.get(1).map_or(Ok(300), |s| s.parse()).context("iterations")?;
    let n_frames: usize = args.get(2).map_or(Ok(2), |s| s.parse()).context("frame count")?;
    let seed: u64 = args.get(4).map_or(Ok(0), |s| s.parse()).context("seed")?;

    let mut config = TrainConfig::tiny(iterations).with_seed(seed);
    if let Some(lr) = args.get(3) {
        config.initial_lr = lr.parse().context("learning rate")?;
    }
    let net = NetConfig::tiny(strategy).with_seed(seed);
    let frames = synth_generate(&SynthConfig::new(n_frames, net.input_size, 0))?;
    let mut model = build_model(&net)?;
    println!("{strategy}: {} parameters, {n_frames} frames, lr {}", model.param_count(), config.initial_lr);

    let start = Instant::now();
    let log = train(&mut model, &frames, &config, None)?;
    let secs = start.elapsed().as_secs_f64();
    for r in log.records.iter().step_by((iterations / 20).max(1)) {
        println!("iter {:5}  loss {:.5}", r.iteration, r.loss);
    }
    if let Ok(path) = std::env::var("LOSS_CSV") {
        log.write_csv(path)?;
    }
    let ma = log.moving_average(50);
    let rises = ma.iter().take(150).zip(ma.iter().skip(1)).filter(|(a, b)| b >= a).count();
    println!("50-iteration moving average rose {rises} times before iteration 200");
    println!("{:.3} s/iteration", secs / iterations as f64);
    println!("training pixel accuracy {:.4}", pixel_accuracy(&model, &frames)?);

    let val = synth_generate(&SynthConfig::new(10, net.input_size, 1))?;
    let report = evaluate_frames(&model, &val)?.report(FnrMode::default());
    println!("held-out MaxF {:.4}", report.max_f.unwrap_or(f64::NAN));
    Ok(())
}
