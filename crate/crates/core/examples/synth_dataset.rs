//! Generates a small synthetic road dataset in KITTI layout and loads it back.
//!
//! cargo run --example synth_dataset -- /tmp/synth 12

use anyhow::Context;
use roadfuse::dataset::{export_synthetic, load_kitti_road, LoadOptions, SynthConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = args.next().unwrap_or_else(|| "synth_data".into());
    let n: usize = args.next().map(|s| s.parse()).transpose().context("frame count")?.unwrap_or(12);

    let config = SynthConfig { n_frames: n, ..SynthConfig::default() };
    let ids = export_synthetic(&root, &config)?;
    println!("wrote {} frames under {root}/training", ids.len());

    for f in load_kitti_road(&root, &LoadOptions::default())? {
        let road = f.gt_road.iter().filter(|&&r| r).count() as f64 / f.gt_road.len() as f64;
        println!(
            "{}  {}  {}x{}  road {:5.1}%  lidar occupancy {:5.2}%",
            f.frame_id,
            f.category,
            f.height(),
            f.width(),
            100.0 * road,
            100.0 * f.lidar.occupancy()
        );
    }
    Ok(())
}
