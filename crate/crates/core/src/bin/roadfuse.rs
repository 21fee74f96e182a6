use clap::Parser;
use roadfuse::cli::{run, Cli};

fn main() -> anyhow::Result<()> {
    let report = run(&Cli::parse())?;
    print!("{report}");
    Ok(())
}
