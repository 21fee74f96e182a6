//! Briefly trains a tiny model, scores it in the image plane and in the
//! bird's-eye view, and writes a colour overlay of the first frame.
//!
//! cargo run --release --example evaluate_overlay -- overlay.png

use roadfuse::dataset::{synth_generate_scenes, SynthConfig, CAMERA_HEIGHT};
use roadfuse::evaluation::{
    evaluate_bev, evaluate_frames, ground_homography, metrics_table, predict_road, render_overlay, BevGrid, FnrMode,
    TABLE_BENCHMARK,
};
use roadfuse::network::{build_model, FusionStrategy, NetConfig};
use roadfuse::training::{train, TrainConfig};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "overlay.png".into());
    let net = NetConfig::tiny(FusionStrategy::Siamese);
    let scenes = synth_generate_scenes(&SynthConfig::new(8, net.input_size, 2))?;
    let frames: Vec<_> = scenes.iter().map(|s| s.frame.clone()).collect();
    let (train_set, val) = frames.split_at(6);

    let mut model = build_model(&net)?;
    train(&mut model, train_set, &TrainConfig::tiny(200), None)?;

    let mode = FnrMode::default();
    let perspective = evaluate_frames(&model, val)?.report(mode);
    let grid = BevGrid::default();
    let f = &val[0];
    let prob = predict_road(&model, f)?;
    let h = ground_homography(&scenes[6].calib.k, CAMERA_HEIGHT, &grid);
    let bev = evaluate_bev(&prob, &f.gt_road, &f.gt_valid, f.size(), &h, &grid, mode)?;
    print!(
        "{}",
        metrics_table(
            "View",
            &[("perspective".into(), perspective), (format!("BEV {}", f.frame_id), bev)],
            TABLE_BENCHMARK
        )
    );

    render_overlay(&f.rgb, &prob, &f.gt_road, &f.gt_valid, 0.5, f.size())?.save(&out)?;
    println!("overlay of {} written to {out}", f.frame_id);
    Ok(())
}
