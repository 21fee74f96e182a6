//! Prints the layer manifest and parameter count of a fusion network.
//!
//! cargo run --example architecture -- siamese paper

use roadfuse::network::{architecture, render_manifest, trace_architecture, FusionStrategy, NetConfig, Preset};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let strategy: FusionStrategy = args.next().as_deref().unwrap_or("siamese").parse()?;
    let preset: Preset = args.next().as_deref().unwrap_or("paper").parse()?;
    let config = NetConfig::preset(preset, strategy);

    print!("{}", render_manifest(&trace_architecture(&config)?));
    let params: usize = architecture(&config)?.iter().map(|l| l.param_count()).sum();
    println!("\n{strategy} / {preset}: {params} parameters");
    Ok(())
}
