//! End-to-end acceptance checks. Each test prints one `criterion N: PASS`
//! or `criterion N: FAIL` line to the real stdout, so the lines show up in
//! ordinary `cargo test` output.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqzgan::analysis::{
    concat_channel_total, count_block_params, count_generator_params, closed_form_reduction,
    closed_form_squeeze_kernels, reduction, verify_equivalence,
};
use sqzgan::gradcheck::{run_suite, Suite};
use sqzgan::io::{load_run, ppm_bytes, run_checkpoint, sample_latents, to_byte, Checkpoint, RunConfig};
use sqzgan::metrics::{
    fit_gaussian, frechet_distance, inception_score, ClassProbTable, GaussianFit, Matrix,
};
use sqzgan::synthesis::{modulate_demodulate, BlockVariant, Generator, GeneratorConfig, UpsampleMode};
use sqzgan::training::{per_pixel_std, train};
use sqzgan::{Params, Tape, Tensor};

/// Held for the whole of each criterion.
static SERIAL: Mutex<()> = Mutex::new(());

fn report(n: usize, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n}: {verdict} {detail}").unwrap();
    out.flush().unwrap();
}

fn conclude(n: usize, failures: Vec<String>, detail: String) {
    let passed = failures.is_empty();
    let detail = if passed {
        detail
    } else {
        format!("{detail} | {}", failures.join("; "))
    };
    report(n, passed, &detail);
    assert!(passed, "criterion {n}: {detail}");
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

#[test]
fn criterion_01_equivalence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for res in [8, 16, 32, 64] {
        for mode in [UpsampleMode::Nearest, UpsampleMode::Bilinear] {
            let cfg = GeneratorConfig::desk(res, mode);
            let r = verify_equivalence::<f64>(&cfg, 100, 1e-12, 1).unwrap();
            worst = worst.max(r.max_deviation);
            if !(r.max_deviation <= 1e-12) {
                failures.push(format!("res {res} {}: {:e}", mode.key(), r.max_deviation));
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(60) {
        failures.push(format!("took {}", secs(elapsed)));
    }
    conclude(1, failures, format!("max deviation {worst:e} over 8 configs x 100 latents in {}", secs(elapsed)));
}

#[test]
fn criterion_02_concat_dimension() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = GeneratorConfig::nominal_256(BlockVariant::SkipConnection, 8);
    let total = concat_channel_total(&cfg);
    let failures = if total == 2496 { vec![] } else { vec![format!("got {total}")] };
    conclude(2, failures, format!("concatenated channels {total}"));
}

#[test]
fn criterion_03_skip_block_kernels() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let e = count_block_params(BlockVariant::SkipConnection, 512, 8).unwrap();
    let failures = if e.kernel_total == 4_718_592 {
        vec![]
    } else {
        vec![format!("got {}", e.kernel_total)]
    };
    conclude(3, failures, format!("skip block c=512 kernels {}", e.kernel_total));
}

#[test]
fn criterion_04_squeeze_accounting() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut failures = Vec::new();
    let mut cases = 0;
    for c in [8, 16, 64, 128, 256, 512] {
        for r in [1, 2, 4, 8, 16] {
            if c % r != 0 {
                continue;
            }
            cases += 1;
            let e = count_block_params(BlockVariant::Squeeze, c, r).unwrap();
            let want = 11 * c * c + 18 * c * c / r;
            if e.kernel_total != want {
                failures.push(format!("c={c} r={r}: {} != {want}", e.kernel_total));
            }
            if e.closed_form_prediction != Some(closed_form_squeeze_kernels(c, r)) {
                failures.push(format!("c={c} r={r}: closed-form prediction missing"));
            }
            let text = e.to_text();
            if !text.contains("DISCREPANCY") || !text.contains(&format!("{}", closed_form_squeeze_kernels(c, r))) {
                failures.push(format!("c={c} r={r}: report hides the closed-form figure or the gap"));
            }
            if e.deviation_c2() != Some(1.0) {
                failures.push(format!("c={c} r={r}: gap {:?} c^2", e.deviation_c2()));
            }
        }
    }
    let pct = format!("{:.2}", 100.0 * closed_form_reduction(8));
    if pct != "31.94" {
        failures.push(format!("closed-form reduction at r=8 is {pct}%"));
    }
    conclude(4, failures, format!("{cases} (c, r) cases exact, closed-form reduction at r=8 {pct}%"));
}

#[test]
fn criterion_05_generator_totals() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let base = count_generator_params(&GeneratorConfig::nominal_256(BlockVariant::SkipConnection, 8))
        .unwrap()
        .total;
    let sq = count_generator_params(&GeneratorConfig::nominal_256(BlockVariant::Squeeze, 8))
        .unwrap()
        .total;
    let red = reduction(base, sq);
    let mut failures = Vec::new();
    if (base as f64 / 24.80e6 - 1.0).abs() > 0.05 {
        failures.push(format!("baseline {base}"));
    }
    if (sq as f64 / 21.80e6 - 1.0).abs() > 0.05 {
        failures.push(format!("squeeze {sq}"));
    }
    if (red - 0.121).abs() > 0.03 {
        failures.push(format!("reduction {red}"));
    }
    conclude(
        5,
        failures,
        format!("baseline {base}, squeeze r=8 {sq}, reduction {:.3}%", 100.0 * red),
    );
}

#[test]
fn criterion_06_gradients() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for suite in Suite::ALL {
        let r = run_suite(suite).unwrap();
        let worst = r.worst().map_or(0.0, |c| c.rel_error);
        parts.push(format!("{} worst {worst:.1e} ({} cases)", suite.key(), r.cases.len()));
        if !r.passed() || r.tol > suite.tolerance() {
            failures.push(format!("{} failed", suite.key()));
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(120) {
        failures.push(format!("took {}", secs(elapsed)));
    }
    conclude(6, failures, format!("{} in {}", parts.join(", "), secs(elapsed)));
}

#[test]
fn criterion_07_demodulation() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    const ALPHAS: [f64; 3] = [0.1, 1.0, 7.0];
    let mut norm_dev = 0.0f64;
    let mut scale_dev = [0.0f64; 3];
    let mut layers = 0;
    for variant in BlockVariant::ALL {
        let g = Generator::new(GeneratorConfig::toy(variant)).unwrap();
        let p: Params<f64> = g.init_params(&mut ChaCha8Rng::seed_from_u64(7));
        let tape = Tape::new();
        let z = tape.constant(Tensor::randn(&[50, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(8)));
        let styles = g.forward(&p.bind(&tape, false), z).unwrap().styles.value();
        let convs = std::iter::once(&g.base().conv).chain(g.blocks().iter().flat_map(|b| b.convs()));
        for layer in convs.filter(|l| l.demodulate) {
            layers += 1;
            for w in styles.data().chunks(32) {
                let s = layer.style_scales(&p, w).unwrap();
                let eff = layer.effective_weight(&p, w).unwrap();
                let k = layer.in_ch * layer.kernel * layer.kernel;
                for row in eff.data().chunks(k) {
                    norm_dev = norm_dev.max((row.iter().map(|v| v * v).sum::<f64>() - 1.0).abs());
                }
                for (dev, alpha) in scale_dev.iter_mut().zip(ALPHAS) {
                    let scaled: Vec<f64> = s.iter().map(|v| alpha * v).collect();
                    let other = modulate_demodulate(p.get(layer.weight), &scaled, true, layer.eps).unwrap();
                    *dev = dev.max(other.max_abs_diff(&eff));
                }
            }
        }
    }
    let mut failures = Vec::new();
    if !(norm_dev <= 1e-6) {
        failures.push(format!("norm deviation {norm_dev:e}"));
    }
    for (dev, alpha) in scale_dev.iter().zip(ALPHAS) {
        if !(*dev <= 1e-6) {
            failures.push(format!("alpha {alpha}: deviation {dev:e}"));
        }
    }
    let per_alpha: Vec<String> = scale_dev
        .iter()
        .zip(ALPHAS)
        .map(|(d, a)| format!("alpha {a} {d:.1e}"))
        .collect();
    conclude(
        7,
        failures,
        format!(
            "{layers} layers x 50 mapped styles: |norm-1| {norm_dev:.1e}, {}",
            per_alpha.join(", ")
        ),
    );
}

#[test]
fn criterion_08_metrics() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();

    let feats: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..8).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let fit = fit_gaussian(&feats).unwrap();
    let self_fd = frechet_distance(&fit, &fit).unwrap();
    if !(self_fd.abs() <= 1e-9) {
        failures.push(format!("fid(p, p) = {self_fd:e}"));
    }

    let p = GaussianFit::new(vec![0.0], Matrix::from_rows(&[vec![1.0]]).unwrap()).unwrap();
    let q = GaussianFit::new(vec![3.0], Matrix::from_rows(&[vec![4.0]]).unwrap()).unwrap();
    let one_d = frechet_distance(&p, &q).unwrap();
    if !((one_d - 10.0).abs() <= 1e-9) {
        failures.push(format!("1-D case {one_d}"));
    }

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..1000 {
        let k = 2 + t % 9;
        let rows: Vec<Vec<f64>> = (0..1 + t % 20)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let score = inception_score(&ClassProbTable::new(rows).unwrap());
        lo = lo.min(score - 1.0);
        hi = hi.max(score - k as f64);
        if !(score >= 1.0 && score <= k as f64) {
            failures.push(format!("table {t}: score {score} outside [1, {k}]"));
        }
    }

    let one_hot: Vec<Vec<f64>> = (0..10)
        .map(|i| (0..10).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let is_k = inception_score(&ClassProbTable::new(one_hot).unwrap());
    if !((is_k - 10.0).abs() <= 1e-9) {
        failures.push(format!("one-hot score {is_k}"));
    }
    conclude(
        8,
        failures,
        format!(
            "fid(p,p) {self_fd:.1e}, 1-D {one_d}, IS margins over 1000 tables {lo:.1e}/{hi:.1e}, one-hot {is_k}"
        ),
    );
}

#[test]
fn criterion_09_training_smoke() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for variant in BlockVariant::ALL {
        let cfg = RunConfig {
            variant,
            ..RunConfig::default()
        };
        assert_eq!((cfg.resolution, cfg.steps, cfg.gamma), (16, 500, 0.1));
        let start = Instant::now();
        let mut runs = Vec::new();
        for _ in 0..2 {
            match train::<f32>(&cfg.generator(), &cfg.loss_config(), &cfg.dataset(), cfg.steps, cfg.seed) {
                Ok(out) => runs.push(out),
                Err(e) => failures.push(format!("{variant}: {e}")),
            }
        }
        let elapsed = start.elapsed();
        if runs.len() < 2 {
            continue;
        }
        let z = sample_latents::<f32>(cfg.seed + 1, 64, cfg.style_dim);
        let img = runs[0].generator.generate(&runs[0].g, &z).unwrap();
        let std = per_pixel_std(&img);
        let gap = runs[0].history.mean_logit_gap(50);
        let bytes: Vec<Vec<u8>> = runs
            .iter()
            .map(|o| run_checkpoint(&cfg, o).unwrap().to_bytes())
            .collect();
        let identical = bytes[0] == bytes[1] && runs[0].history.to_csv() == runs[1].history.to_csv();
        if !img.is_finite() || !(std > 0.01) {
            failures.push(format!("{variant}: pixel std {std}"));
        }
        if !gap.is_finite() {
            failures.push(format!("{variant}: logit gap {gap}"));
        }
        if !identical {
            failures.push(format!("{variant}: seeded runs differ"));
        }
        if elapsed >= Duration::from_secs(2 * 600) {
            failures.push(format!("{variant}: two runs took {}", secs(elapsed)));
        }
        parts.push(format!("{variant} std {std:.3} gap {gap:.3} {} per run", secs(elapsed / 2)));
    }
    conclude(9, failures, parts.join(", "));
}

#[test]
fn criterion_10_persistence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut failures = Vec::new();
    let cfg = RunConfig {
        steps: 20,
        ..RunConfig::default()
    };
    let out = train::<f32>(&cfg.generator(), &cfg.loss_config(), &cfg.dataset(), cfg.steps, cfg.seed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (first, second) = (dir.path().join("a.sqzg"), dir.path().join("b.sqzg"));
    run_checkpoint(&cfg, &out).unwrap().save(&first).unwrap();

    let restored = load_run::<f32>(&Checkpoint::load(&first).unwrap(), Some(&cfg)).unwrap();
    let mut again = Checkpoint::with_config(&restored.config.to_text());
    again.push_params("g.", &restored.g).unwrap();
    again.push_params("g_ema.", &restored.g_ema).unwrap();
    again.push_params("d.", &restored.d).unwrap();
    again.save(&second).unwrap();
    let (a, b) = (std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    if a != b {
        failures.push("save -> load -> save changed the file".into());
    }

    let bytes = [to_byte(-1.0), to_byte(0.0), to_byte(1.0)];
    if bytes != [0, 128, 255] {
        failures.push(format!("endpoint bytes {bytes:?}"));
    }
    let px = Tensor::<f64>::from_f64(&[3, 1, 3], &[-1.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0]).unwrap();
    let ppm = ppm_bytes(&px).unwrap();
    let body = &ppm[ppm.len() - 9..];
    if body != [0, 0, 0, 128, 128, 128, 255, 255, 255] {
        failures.push(format!("ppm pixels {body:?}"));
    }
    conclude(
        10,
        failures,
        format!("{}-byte checkpoint reproduced exactly, endpoint bytes {bytes:?}", a.len()),
    );
}
