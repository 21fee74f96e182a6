//! Trains early fusion, late fusion and the Siamese network on the same
//! synthetic split and prints the comparison table.
//!
//! cargo run --release --example compare_fusion -- [iterations] [frames]

use anyhow::Context;
use roadfuse::cli::{compare_fusion, fusion_table};
use roadfuse::dataset::{split_train_val, synth_generate, SplitSpec, SynthConfig};
use roadfuse::evaluation::FnrMode;
use roadfuse::network::{FusionStrategy, NetConfig};
use roadfuse::training::TrainConfig;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map(|s| s.parse()).transpose().context("iterations")?.unwrap_or(300);
    let n: usize = args.next().map(|s| s.parse()).transpose().context("frame count")?.unwrap_or(20);

    let net = NetConfig::tiny(FusionStrategy::Siamese);
    let frames = synth_generate(&SynthConfig::new(n, net.input_size, 0))?;
    let spec = SplitSpec::stratified(&frames, n * 4 / 5, 0)?;
    let (train_set, val) = split_train_val(frames, &spec)?;
    println!("{} training / {} validation frames, {iterations} iterations each", train_set.len(), val.len());

    let runs = compare_fusion(&train_set, &val, &net, &TrainConfig::tiny(iterations), FnrMode::default())?;
    for run in &runs {
        let last = run.log.records.last().map_or(f64::NAN, |r| r.loss);
        println!("{:<18} final loss {last:.4}", run.label());
    }
    print!("\n{}", fusion_table(&runs));
    Ok(())
}
