//! `pack`: convert a JSON checkpoint dump into the TELLME01 weight
//! container, packing ternary tensors into grouped base-3 indices.

use clap::Parser;
use tellme::container::write_weights;
use tellme::dump::parse_dump;
use tellme::error::Error;

#[derive(Parser)]
#[command(name = "pack", about = "Pack a checkpoint dump into a TELLME01 weight file")]
struct Cli {
    /// Input dump: JSON with config and fp32-or-trit tensors.
    #[arg(long = "in")]
    input: String,
    /// Output weight container path.
    #[arg(long)]
    out: String,
    /// Lookup group size G.
    #[arg(long, default_value_t = 3)]
    group: usize,
    /// Lookup tables per block T.
    #[arg(long, default_value_t = 32)]
    tables: usize,
}

fn run(cli: Cli) -> Result<(), Error> {
    let json = std::fs::read_to_string(&cli.input)?;
    let record = parse_dump(&json, cli.group, cli.tables)?;
    write_weights(&cli.out, &record)?;
    println!(
        "packed {} tensors (G={}, T={}) into {}",
        record.tensors.len(),
        cli.group,
        cli.tables,
        cli.out
    );
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        let code = match err {
            Error::ContextOverflow { .. } => 3,
            Error::Config(_) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}
