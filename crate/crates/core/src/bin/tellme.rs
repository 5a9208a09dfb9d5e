//! `tellme`: run greedy inference, mint toy checkpoints, and sweep the
//! attention-schedule cost model.

use clap::{Parser, Subcommand};
use tellme::container::{read_weights, write_weights};
use tellme::error::Error;
use tellme::model::{make_toy_record, Model};
use tellme::runtime::{Engine, GenerationRequest};
use tellme::sched::{emit_csv, sweep};

#[derive(Parser)]
#[command(name = "tellme", about = "Ternary-LLM inference engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate tokens greedily from a weight file.
    Run {
        /// Weight container path.
        #[arg(long)]
        weights: String,
        /// Comma-separated token ids, or @file containing them.
        #[arg(long = "prompt-ids")]
        prompt_ids: String,
        /// Maximum new tokens to generate.
        #[arg(long = "max-new")]
        max_new: usize,
        /// Prefill schedule parallelism override.
        #[arg(long)]
        p: Option<usize>,
        /// Report format.
        #[arg(long, default_value = "text", value_parser = ["json", "text"])]
        report: String,
    },
    /// Write a deterministic random toy checkpoint.
    MakeToy {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: String,
    },
    /// Emit the schedule cost table as CSV.
    Sched {
        /// Sequence lengths, comma separated.
        #[arg(long = "N", value_delimiter = ',')]
        n: Vec<usize>,
        /// Parallelism.
        #[arg(long, default_value_t = 4)]
        p: usize,
        /// Output CSV path.
        #[arg(long)]
        out: String,
    },
}

fn parse_prompt(spec: &str) -> Result<Vec<u32>, Error> {
    let text = if let Some(path) = spec.strip_prefix('@') {
        std::fs::read_to_string(path)?
    } else {
        spec.to_string()
    };
    text.split([',', ' ', '\n', '\t'])
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| Error::config(format!("bad token id {s:?}")))
        })
        .collect()
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ContextOverflow { .. } => 3,
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            weights,
            prompt_ids,
            max_new,
            p,
            report,
        } => {
            let mut record = read_weights(&weights)?;
            if let Some(p) = p {
                record.config.parallelism = p;
            }
            let engine = Engine::new(Model::from_record(record)?)?;
            let prompt = parse_prompt(&prompt_ids)?;
            let result = engine.generate(&GenerationRequest {
                prompt,
                max_new_tokens: max_new,
            })?;
            if report == "json" {
                let json = serde_json::json!({
                    "prompt_tokens": result.prompt_tokens,
                    "generated_ids": result.generated,
                    "prefill_seconds": result.prefill_seconds,
                    "decode_tokens_per_second": result.decode_tokens_per_second(),
                    "kv_loads_per_layer": result.kv_loads_per_layer,
                    "quant_saturation_count": result.quant_saturations,
                });
                println!("{}", serde_json::to_string_pretty(&json).expect("report is valid json"));
            } else {
                let ids: Vec<String> = result.generated.iter().map(|t| t.to_string()).collect();
                println!("generated: {}", ids.join(","));
                println!("prefill_seconds: {:.6}", result.prefill_seconds);
                println!(
                    "decode_tokens_per_second: {:.3}",
                    result.decode_tokens_per_second()
                );
                println!("kv_loads_per_layer: {:?}", result.kv_loads_per_layer);
                println!("quant_saturation_count: {}", result.quant_saturations);
            }
        }
        Command::MakeToy { seed, out } => {
            let record = make_toy_record(seed);
            write_weights(&out, &record)?;
            println!("wrote toy checkpoint (seed {seed}) to {out}");
        }
        Command::Sched { n, p, out } => {
            if n.is_empty() {
                return Err(Error::config("--N needs at least one sequence length"));
            }
            let costs = sweep(&n, p);
            emit_csv(&costs, &out)?;
            println!("wrote {} cost rows to {out}", costs.len());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
