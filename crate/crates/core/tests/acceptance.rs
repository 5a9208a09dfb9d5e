//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};

use tellme::attention::{
    naive_causal_attention, reverse_prefill_attention, FusionState, PrefillBatch,
};
use tellme::container::{decode_weights, encode_weights};
use tellme::fused::{absmax_quantize, rmsnorm, rmsnorm_quant_fused, NormParams};
use tellme::matmul::{naive_ternary_matmul, partial_table_matmul, tl_matmul, QuantTensor};
use tellme::model::{make_toy_record, make_toy_record_with, Model, ModelConfig};
use tellme::reference::ReferenceModel;
use tellme::runtime::{Engine, GenerationRequest};
use tellme::sched::{closed_form, format_csv, masked_waste, phase_profile, simulate_reverse, sweep, Approach};
use tellme::ternary::{pack_matrix, TernaryMatrix};

fn criterion(number: usize, name: &str, body: impl FnOnce()) {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(()) => println!("ACCEPTANCE {number} ({name}): PASS"),
        Err(cause) => {
            println!("ACCEPTANCE {number} ({name}): FAIL");
            resume_unwind(cause);
        }
    }
}

#[test]
fn criterion_1_kernel_exactness() {
    criterion(1, "kernel exactness across variants", || {
        let started = std::time::Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
        let configs = [(2usize, 4usize), (3, 32), (4, 8)];
        let mut instances = 0usize;

        // Corner cases at the extreme shapes for every (G, T).
        for &(g, t) in &configs {
            for &(m, n, k) in &[(16usize, 512usize, 256usize), (1, 1, 1), (1, 512, 1), (16, 1, 256)] {
                run_kernel_instance(&mut rng, m, n, k, g, t, 16);
                instances += 1;
            }
        }

        // Randomized shapes, log-uniform so big instances appear but do not
        // dominate the runtime.
        while instances < 1000 {
            let m = log_uniform(&mut rng, 16);
            let n = log_uniform(&mut rng, 512);
            let k = log_uniform(&mut rng, 256);
            let (g, t) = configs[instances % configs.len()];
            let q = [1usize, 3, 16, 64][instances % 4];
            run_kernel_instance(&mut rng, m, n, k, g, t, q);
            instances += 1;
        }
        let elapsed = started.elapsed().as_secs_f64();
        assert!(elapsed < 60.0, "kernel sweep took {elapsed:.1}s, budget is 60s");
        println!("  {instances} instances in {elapsed:.1}s");
    });
}

fn log_uniform(rng: &mut ChaCha8Rng, max: usize) -> usize {
    let exp = rng.random_range(0.0..(max as f64).ln());
    (exp.exp() as usize).clamp(1, max)
}

fn run_kernel_instance(
    rng: &mut ChaCha8Rng,
    m: usize,
    n: usize,
    k: usize,
    g: usize,
    t: usize,
    q: usize,
) {
    let data: Vec<i8> = (0..m * n).map(|_| rng.random_range(-127i8..=127)).collect();
    let a = QuantTensor::new(m, n, data, 1.0).unwrap();
    let trits: Vec<i8> = (0..n * k).map(|_| rng.random_range(-1i8..=1)).collect();
    let w = TernaryMatrix::new(n, k, trits).unwrap();
    let packed = pack_matrix(&w, g, t, 1.0).unwrap();
    let oracle = naive_ternary_matmul(&a, &w).unwrap();
    let tl = tl_matmul(&a, &packed, q).unwrap();
    let partial = partial_table_matmul(&a, &packed).unwrap();
    assert_eq!(tl, oracle, "tl vs naive (m={m} n={n} k={k} G={g} T={t} Q={q})");
    assert_eq!(partial, oracle, "partial vs naive (m={m} n={n} k={k} G={g} T={t})");
}

#[test]
fn criterion_2_online_softmax_fidelity() {
    criterion(2, "online softmax vs fp64 reference", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
        // Every stream length once, then extra random trials.
        for len in 1..=512usize {
            online_softmax_trial(&mut rng, len);
        }
        for _ in 0..100 {
            let len = rng.random_range(1usize..=512);
            online_softmax_trial(&mut rng, len);
        }
    });
}

fn online_softmax_trial(rng: &mut ChaCha8Rng, len: usize) {
    let d = 4;
    let scores: Vec<f64> = (0..len).map(|_| rng.random_range(-12.0..12.0)).collect();
    let values: Vec<Vec<f64>> = (0..len)
        .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let mut state = FusionState::new(d);
    for (s, v) in scores.iter().zip(&values) {
        state.online_step(*s, v).unwrap();
    }
    let got = state.finalize().unwrap();

    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = scores.iter().map(|&s| (s - m).exp()).sum();
    for t in 0..d {
        let expect: f64 = scores
            .iter()
            .zip(&values)
            .map(|(&s, v)| (s - m).exp() / denom * v[t])
            .sum();
        let tol = 1e-6 * expect.abs().max(1e-3);
        assert!(
            (got[t] - expect).abs() <= tol,
            "len={len} dim={t}: fold {} vs reference {expect}",
            got[t]
        );
    }
}

#[test]
fn criterion_3_schedule_equivalence() {
    criterion(3, "reverse schedule matches naive attention", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xCAFE);
        let (h, d) = (2usize, 8usize);
        for n in 1..=64usize {
            for &p in &[1usize, 2, 4, 8] {
                let batch = random_prefill(&mut rng, n, h, d, p);
                let oracle = naive_causal_attention(&batch).unwrap();
                let (fused, _) = reverse_prefill_attention(&batch).unwrap();
                for (i, (a, b)) in fused.iter().zip(&oracle).enumerate() {
                    assert!(
                        (a - b).abs() <= 1e-5,
                        "N={n} p={p} slot {i}: {a} vs {b}"
                    );
                }
            }
        }

        // Perturbation: tampering with k/v of token j never moves outputs of
        // earlier tokens; the reverse schedule skips masked work, so earlier
        // outputs are bit-identical.
        for &(n, p, j) in &[(16usize, 4usize, 15usize), (9, 2, 6), (33, 8, 20)] {
            let (q, k, v) = random_qkv(&mut rng, n, h, d);
            let batch = build_prefill(q.clone(), k.clone(), v.clone(), n, h, d, p);
            let (base, _) = reverse_prefill_attention(&batch).unwrap();
            let mut k2 = k;
            let mut v2 = v;
            for head in 0..h {
                let row = (head * n + j) * d;
                for t in 0..d {
                    k2[row + t] = k2[row + t].wrapping_add(31).clamp(-127, 127);
                    v2[row + t] = v2[row + t].wrapping_sub(47).clamp(-127, 127);
                }
            }
            let tampered = build_prefill(q, k2, v2, n, h, d, p);
            let (after, _) = reverse_prefill_attention(&tampered).unwrap();
            for i in 0..j {
                for t in 0..h * d {
                    assert_eq!(
                        base[i * h * d + t].to_bits(),
                        after[i * h * d + t].to_bits(),
                        "token {i} influenced by masked token {j} (N={n} p={p})"
                    );
                }
            }
        }
    });
}

fn random_qkv(rng: &mut ChaCha8Rng, n: usize, h: usize, d: usize) -> (Vec<i8>, Vec<i8>, Vec<i8>) {
    let len = h * n * d;
    let mut make = || -> Vec<i8> { (0..len).map(|_| rng.random_range(-127i8..=127)).collect() };
    let q = make();
    let k = make();
    let v = make();
    (q, k, v)
}

fn build_prefill(
    q: Vec<i8>,
    k: Vec<i8>,
    v: Vec<i8>,
    n: usize,
    h: usize,
    d: usize,
    p: usize,
) -> PrefillBatch {
    PrefillBatch::new(
        q,
        k,
        v,
        n,
        h,
        d,
        (0.05, 0.04, 0.02),
        p,
        1.0 / (d as f32).sqrt(),
    )
    .unwrap()
}

fn random_prefill(rng: &mut ChaCha8Rng, n: usize, h: usize, d: usize, p: usize) -> PrefillBatch {
    let (q, k, v) = random_qkv(rng, n, h, d);
    build_prefill(q, k, v, n, h, d, p)
}

#[test]
fn criterion_4_schedule_cost_reproduction() {
    criterion(4, "cost table: closed forms, simulator, golden csv", || {
        // Anchor from the closed form.
        assert_eq!(
            closed_form(1024, 4, Approach::Reverse).data_block_loads,
            131584.0
        );

        for &n in &[64usize, 128, 256, 512, 1024] {
            for &p in &[2usize, 4, 8] {
                assert_eq!(n % p, 0);
                let (sim, _) = simulate_reverse(n, p);
                let cf = closed_form(n, p, Approach::Reverse);
                assert_eq!(sim.data_block_loads, cf.data_block_loads, "N={n} p={p}");
                assert_eq!(sim.iteration_count, cf.iteration_count, "N={n} p={p}");

                let d = closed_form(n, p, Approach::Dense);
                let na = closed_form(n, p, Approach::Naive);
                assert!(cf.data_block_loads < d.data_block_loads);
                assert!(d.data_block_loads < na.data_block_loads);
                assert_eq!(masked_waste(n, p, Approach::Reverse), 0.0);
            }
        }

        // The committed golden file is exactly what the closed forms emit.
        let golden = include_str!("golden/sched_costs.csv");
        let regenerated = format_csv(&sweep(&[64, 128, 256, 512, 1024], 4));
        assert_eq!(golden, regenerated, "golden csv drifted");

        // The attention kernel's trace agrees with the simulator event for
        // event (cross-module check on a small case).
        let mut rng = ChaCha8Rng::seed_from_u64(0x51ED);
        for &(n, p) in &[(8usize, 4usize), (12, 4), (16, 2), (7, 4)] {
            let batch = random_prefill(&mut rng, n, 1, 4, p);
            let (_, kernel_trace) = reverse_prefill_attention(&batch).unwrap();
            let (_, sim_trace) = simulate_reverse(n, p);
            assert_eq!(kernel_trace.kv_sequence(), sim_trace.kv_sequence());
        }
    });
}

#[test]
fn criterion_5_prefill_decode_consistency() {
    criterion(5, "prefill/decode phase consistency", || {
        let engine = Engine::new(Model::from_record(make_toy_record(1001)).unwrap()).unwrap();
        let n = engine.config().hidden_size;
        let mut rng = ChaCha8Rng::seed_from_u64(0xD0C0);
        let prompt: Vec<u32> = (0..33)
            .map(|_| rng.random_range(0..engine.config().vocab_size as u32))
            .collect();
        let mut worst = 0.0f32;
        for t in 1..=32usize {
            let longer = engine.forward_prompt(&prompt[..t + 1]).unwrap();
            let shorter = engine.forward_prompt(&prompt[..t]).unwrap();
            let mut caches = shorter.caches;
            let step = engine.forward_token(&mut caches, prompt[t]).unwrap();
            let expect = &longer.hidden[t * n..(t + 1) * n];
            for (a, b) in step.hidden.iter().zip(expect) {
                let diff = (a - b).abs();
                worst = worst.max(diff);
                assert!(diff <= 1e-4, "t={t}: decode {a} vs prefill {b}");
            }
        }
        println!("  worst per-element drift {worst:.2e} (tolerance 1e-4)");
    });
}

#[test]
fn criterion_6_end_to_end_oracle_match() {
    criterion(6, "greedy generation matches fp64 reference", || {
        // Margins below this are too close to call across the f32/f64 gap;
        // such seeds are regenerated deterministically (seed + 1000) and
        // reported, per the acceptance protocol.
        const MARGIN_FLOOR: f64 = 1e-3;
        let mut checked = 0usize;
        let mut seed = 0u64;
        let mut regenerated = 0usize;
        while checked < 20 {
            let record = make_toy_record(seed);
            let model = Model::from_record(record).unwrap();
            let reference = ReferenceModel::from_model(&model).unwrap();
            let engine = Engine::new(model).unwrap();
            let prompt = vec![3u32, 250, 17, 99];
            let expect = reference.generate(&prompt, 16).unwrap();
            let min_margin = expect
                .margins
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min_margin < MARGIN_FLOOR {
                println!(
                    "  seed {seed}: argmax margin {min_margin:.2e} below tolerance, regenerated as {}",
                    seed + 1000
                );
                seed += 1000;
                regenerated += 1;
                assert!(regenerated < 100, "runaway regeneration");
                continue;
            }
            let got = engine
                .generate(&GenerationRequest {
                    prompt: prompt.clone(),
                    max_new_tokens: 16,
                })
                .unwrap();
            assert_eq!(got.generated.len(), 16, "seed {seed}");
            assert_eq!(
                got.generated, expect.ids,
                "seed {seed}: engine and reference disagree (min margin {min_margin:.2e})"
            );

            // Determinism of the engine run, ids and counters alike.
            let again = engine
                .generate(&GenerationRequest {
                    prompt,
                    max_new_tokens: 16,
                })
                .unwrap();
            assert_eq!(got.fingerprint(), again.fingerprint(), "seed {seed}");

            checked += 1;
            seed += 1;
        }
        println!("  20 seeds matched token-for-token ({regenerated} regenerated)");
    });
}

#[test]
fn criterion_7_fusion_contracts() {
    criterion(7, "fusion contracts", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xF0F0);

        // Exactly two passes over the input, counted per element.
        for &n in &[1usize, 5, 64, 257] {
            let x: Vec<f32> = (0..n).map(|_| rng.random_range(-2.0f32..2.0)).collect();
            let params = NormParams::unit(n);
            tellme::instrument::reset();
            rmsnorm_quant_fused(&x, &params).unwrap();
            assert_eq!(
                tellme::instrument::snapshot().rms_element_reads,
                2 * n as u64,
                "fused rmsnorm+quant must touch each element exactly twice"
            );
        }

        // Fused equals unfused bit-exactly on the int8 outputs.
        for _ in 0..300 {
            let n = rng.random_range(1usize..=96);
            let x: Vec<f32> = (0..n).map(|_| rng.random_range(-5.0f32..5.0)).collect();
            let gamma: Vec<f32> = (0..n).map(|_| rng.random_range(0.8f32..1.2)).collect();
            let params = NormParams::new(gamma, 1e-5).unwrap();
            let (fused_q, fused_s) = rmsnorm_quant_fused(&x, &params).unwrap();
            let (unfused_q, unfused_s) = absmax_quantize(&rmsnorm(&x, &params).unwrap()).unwrap();
            assert_eq!(fused_q, unfused_q);
            assert_eq!(fused_s.to_bits(), unfused_s.to_bits());
        }

        // SiLU rides the dequant loop: same single output allocation as the
        // plain path, nothing intermediate.
        let w = pack_matrix(&TernaryMatrix::zeros(12, 9), 3, 2, 1.0).unwrap();
        let q = vec![7i8; 36];
        let scales = vec![0.25f32; 3];
        tellme::instrument::reset();
        tellme::runtime::quant_linear(&q, &scales, 3, &w, 4, tellme::matmul::Activation::None)
            .unwrap();
        let plain = tellme::instrument::snapshot().tensor_allocs;
        tellme::instrument::reset();
        tellme::runtime::quant_linear(&q, &scales, 3, &w, 4, tellme::matmul::Activation::Silu)
            .unwrap();
        let fused = tellme::instrument::snapshot().tensor_allocs;
        assert_eq!(plain, 1);
        assert_eq!(fused, 1, "silu fusion must not allocate an intermediate tensor");
    });
}

#[test]
fn criterion_8_arithmetic_intensity_ordering() {
    criterion(8, "prefill is compute-dense, decode is memory-bound", || {
        let configs = [
            ModelConfig::toy(),
            ModelConfig {
                hidden_size: 1536,
                heads: 24,
                head_dim: 64,
                ffn_dim: 4096,
                vocab_size: 32000,
                ..ModelConfig::toy()
            },
        ];
        for config in &configs {
            for &n in &[2usize, 4, 16, 64, 256, 1024] {
                for &m in &[1usize, 2, 16, 64, 256, 1024] {
                    let (pre, dec) = phase_profile(config, n, m).unwrap();
                    assert!(
                        pre.arithmetic_intensity > dec.arithmetic_intensity,
                        "N={n} M={m}: prefill {} <= decode {}",
                        pre.arithmetic_intensity,
                        dec.arithmetic_intensity
                    );
                    assert!(dec.arithmetic_intensity < 1.0);
                }
            }
            let (pre, dec) = phase_profile(config, 1, 1).unwrap();
            assert_eq!(pre.arithmetic_intensity, dec.arithmetic_intensity);
        }
    });
}

#[test]
fn criterion_9_container_robustness() {
    criterion(9, "weight container survives 10k fuzz cases", || {
        let config = ModelConfig {
            hidden_size: 8,
            layers: 1,
            heads: 2,
            head_dim: 4,
            ffn_dim: 16,
            vocab_size: 11,
            capacity: 32,
            group_size: 2,
            tables: 2,
            lookup_width: 2,
            parallelism: 2,
            tied_embeddings: false,
        };
        let record = make_toy_record_with(5, config);
        let bytes = encode_weights(&record).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0xFBAD);
        let mut undetected = 0usize;
        let mut detected = 0usize;
        for case in 0..10_000usize {
            let mut mutated = bytes.clone();
            match case % 5 {
                // Single random byte flip anywhere.
                0 | 1 | 2 => {
                    let pos = rng.random_range(0..mutated.len());
                    mutated[pos] ^= rng.random_range(1u8..=255);
                }
                // Truncation at a random point.
                3 => {
                    let cut = rng.random_range(0..mutated.len());
                    mutated.truncate(cut);
                }
                // Corrupted magic.
                _ => {
                    let pos = rng.random_range(0..8);
                    mutated[pos] = mutated[pos].wrapping_add(rng.random_range(1u8..=255));
                }
            }
            match decode_weights(&mutated) {
                Err(_) => detected += 1,
                Ok(read) => {
                    if read != record {
                        undetected += 1;
                    }
                }
            }
        }
        assert_eq!(undetected, 0, "silently wrong tensors observed");
        println!("  10000 fuzz cases, {detected} rejected, 0 undetected corruptions");
    });
}
