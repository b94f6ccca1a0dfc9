use anyhow::Context;
use clap::Parser;
use facevoice::cli::{run, Cli};

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    run(&cli, &mut stdout.lock()).context("facevoice failed")?;
    Ok(())
}
