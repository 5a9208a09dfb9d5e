//! `tlmm-bench`: microbenchmark the ternary matmul variants on a random
//! instance and print wall time plus an output checksum (identical across
//! variants, since they compute the same integers).

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use tellme::error::Error;
use tellme::matmul::{naive_ternary_matmul, partial_table_matmul, tl_matmul, QuantTensor};
use tellme::ternary::{pack_matrix, TernaryMatrix};

#[derive(Parser)]
#[command(name = "tlmm-bench", about = "Ternary matmul microbenchmark")]
struct Cli {
    /// Activation rows (tokens).
    #[arg(long)]
    m: usize,
    /// Inner dimension.
    #[arg(long)]
    n: usize,
    /// Output columns.
    #[arg(long)]
    k: usize,
    /// Kernel variant.
    #[arg(long, value_parser = ["tl", "naive", "partial"])]
    variant: String,
    /// Lookup group size G.
    #[arg(long, default_value_t = 3)]
    group: usize,
    /// Lookup tables per block T.
    #[arg(long, default_value_t = 32)]
    tables: usize,
    /// Index vectors per inner step Q.
    #[arg(long, default_value_t = 16)]
    q: usize,
    /// Instance seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timed repetitions.
    #[arg(long, default_value_t = 3)]
    reps: usize,
}

fn checksum(rows: &[Vec<i32>]) -> u64 {
    let mut acc = 0xcbf2_9ce4_8422_2325u64; // fnv-1a over the accumulators
    for row in rows {
        for &v in row {
            acc ^= v as u32 as u64;
            acc = acc.wrapping_mul(0x1000_0000_01b3);
        }
    }
    acc
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let data: Vec<i8> = (0..cli.m * cli.n)
        .map(|_| rng.random_range(-127i8..=127))
        .collect();
    let a = QuantTensor::new(cli.m, cli.n, data, 1.0)?;
    let trits: Vec<i8> = (0..cli.n * cli.k)
        .map(|_| rng.random_range(-1i8..=1))
        .collect();
    let w = TernaryMatrix::new(cli.n, cli.k, trits)?;
    let packed = pack_matrix(&w, cli.group, cli.tables, 1.0)?;

    let mut out = Vec::new();
    let mut best = f64::INFINITY;
    for _ in 0..cli.reps.max(1) {
        let started = Instant::now();
        out = match cli.variant.as_str() {
            "tl" => tl_matmul(&a, &packed, cli.q)?,
            "naive" => naive_ternary_matmul(&a, &w)?,
            "partial" => partial_table_matmul(&a, &packed)?,
            _ => unreachable!("clap validates the variant"),
        };
        best = best.min(started.elapsed().as_secs_f64());
    }

    let macs = cli.m as f64 * cli.n as f64 * cli.k as f64;
    println!(
        "variant={} m={} n={} k={} G={} T={} Q={}",
        cli.variant, cli.m, cli.n, cli.k, cli.group, cli.tables, cli.q
    );
    println!("best_seconds: {best:.6}");
    println!("effective_gmacs_per_s: {:.3}", macs / best / 1e9);
    println!("checksum: {:016x}", checksum(&out));
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(2);
    }
}
