//! Projects a velodyne scan into the camera and rasterizes the LiDAR image.
//! Without arguments a synthetic scene is used.
//!
//! cargo run --example project_lidar -- [scan.bin calib.txt height width]

use anyhow::Context;
use roadfuse::dataset::{synth_generate_scenes, SynthConfig};
use roadfuse::lidar::{load_velodyne_bin, parse_calib, project_points, rasterize_lidar_image};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (cloud, calib) = if let [scan, calib, h, w] = &args[..] {
        let size = (h.parse().context("height")?, w.parse().context("width")?);
        (load_velodyne_bin(scan)?, parse_calib(calib, size)?)
    } else {
        let scene = synth_generate_scenes(&SynthConfig::new(1, (375, 1242), 7))?.remove(0);
        (scene.cloud, scene.calib)
    };

    let projected = project_points(&cloud, &calib);
    let image = rasterize_lidar_image(&projected, calib.image_size);
    println!(
        "{} points, {} in view, {} of {} pixels hit ({:.2}%)",
        cloud.len(),
        projected.len(),
        image.occupied(),
        image.height() * image.width(),
        100.0 * image.occupancy()
    );

    // nearest depth per 20-column band of the middle row band
    let (h, w) = image.size();
    let band: Vec<String> = (0..w)
        .step_by(w / 20)
        .map(|c| {
            let depth = (h / 2..h)
                .map(|r| image.get(r, c)[2])
                .filter(|&z| z > 0.0)
                .fold(f32::INFINITY, f32::min);
            if depth.is_finite() { format!("{depth:.0}") } else { "-".into() }
        })
        .collect();
    println!("nearest depth (m) across the lower half: {}", band.join(" "));
    Ok(())
}
