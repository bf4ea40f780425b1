use std::fmt;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use sqzgan::analysis::{
    count_block_params, count_generator_params, enumerated_break_even, closed_form_break_even, closed_form_reduction,
    reduction, verify_equivalence,
};
use sqzgan::gradcheck::{run_suite, Suite};
use sqzgan::io::{
    atomic_write, image_grid, load_run, ppm_bytes, run_checkpoint, sample_latents, Checkpoint, Precision,
    RunConfig,
};
use sqzgan::metrics::{fit_gaussian, frechet_distance, inception_score, ClassProbTable, GaussianFit};
use sqzgan::synthesis::BlockVariant;
use sqzgan::training::train_with;
use sqzgan::{Error, Scalar};

use crate::table::read_numeric_csv;

pub const CHECKPOINT_FILE: &str = "checkpoint.sqzg";
pub const HISTORY_FILE: &str = "history.csv";
pub const GRID_FILE: &str = "samples.ppm";
const GRID_SIDE: usize = 4;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) => CliError::failure(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}

type CmdResult = Result<ExitCode, CliError>;

fn status(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    atomic_write(path, bytes).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

pub fn verify(
    config: &Path,
    trials: usize,
    tol: Option<f64>,
    precision: &str,
    seed: Option<u64>,
    report: Option<&Path>,
) -> CmdResult {
    let cfg = RunConfig::load(config)?;
    let precision: Precision = precision.parse()?;
    let seed = seed.unwrap_or(cfg.seed);
    let gen = cfg.generator();
    let result = match precision {
        Precision::F64 => verify_equivalence::<f64>(&gen, trials, tol.unwrap_or(1e-12), seed)?,
        Precision::F32 => verify_equivalence::<f32>(&gen, trials, tol.unwrap_or(1e-4), seed)?,
    };
    print!("{}", result.to_text());
    if let Some(path) = report {
        write(path, result.to_kv().as_bytes())?;
    }
    Ok(status(result.passed))
}

pub fn params(config: &Path, baseline: Option<&Path>, kv: bool) -> CmdResult {
    let cfg = RunConfig::load(config)?.generator();
    let base_cfg = match baseline {
        Some(p) => RunConfig::load(p)?.generator(),
        None => {
            let mut b = cfg.clone();
            b.variant = BlockVariant::SkipConnection;
            b
        }
    };
    let report = count_generator_params(&cfg)?;
    let base = count_generator_params(&base_cfg)?;
    let mut widths: Vec<usize> = report
        .blocks
        .iter()
        .filter(|b| b.resolution > 4)
        .map(|b| b.out_ch)
        .collect();
    widths.sort_unstable_by(|a, b| b.cmp(a));
    widths.dedup();
    let entries = widths
        .iter()
        .map(|&c| count_block_params(cfg.variant, c, cfg.squeeze_ratio))
        .collect::<Result<Vec<_>, _>>()?;
    let red = reduction(base.total, report.total);
    let r = cfg.squeeze_ratio;
    if kv {
        print!("{}", report.to_kv());
        for e in &entries {
            print!("{}", e.to_kv(&format!("block_formula.c{}.", e.c)));
        }
        println!("baseline_total={}", base.total);
        println!("reduction={red}");
        if cfg.variant.is_squeeze() {
            println!("closed_form_reduction={}", closed_form_reduction(r));
        }
        println!("closed_form_break_even_r={}", closed_form_break_even());
        println!("enumerated_break_even_r={}", enumerated_break_even());
    } else {
        print!("{}", report.to_text());
        println!("per-block kernel formulas:");
        for e in &entries {
            for line in e.to_text().lines() {
                println!("  {line}");
            }
        }
        println!(
            "baseline ({}) total: {} ({:.2}M)",
            base.variant,
            base.total,
            base.total as f64 / 1e6
        );
        println!("reduction vs baseline: {:.3}%", 100.0 * red);
        if cfg.variant.is_squeeze() {
            println!(
                "closed-form kernel reduction (10+18/r)c² vs 18c² at r={r}: {:.2}%",
                100.0 * closed_form_reduction(r)
            );
        }
        println!(
            "break-even ratio: closed form r > {}, enumerated 11c²+18c²/r form r > {:.3}",
            closed_form_break_even(),
            enumerated_break_even()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn train_typed<T: Scalar>(cfg: &RunConfig, out: &Path, log_every: usize) -> CmdResult {
    let outcome = train_with::<T>(
        &cfg.generator(),
        &cfg.loss_config(),
        &cfg.dataset(),
        cfg.steps,
        cfg.seed,
        |r| {
            if log_every > 0 && ((r.step + 1) % log_every == 0 || r.step + 1 == cfg.steps) {
                println!(
                    "step {:>5}  d_loss {:.4}  g_loss {:.4}  r1 {:.4e}",
                    r.step + 1,
                    r.d_loss,
                    r.g_loss,
                    r.r1
                );
            }
        },
    )?;
    let ck = run_checkpoint(cfg, &outcome)?;
    write(&out.join(CHECKPOINT_FILE), &ck.to_bytes())?;
    write(&out.join(HISTORY_FILE), outcome.history.to_csv().as_bytes())?;
    let n = GRID_SIDE * GRID_SIDE;
    let z = sample_latents::<T>(cfg.seed, n, cfg.style_dim);
    let images = outcome.generator.generate(&outcome.g_ema, &z)?;
    write(&out.join(GRID_FILE), &ppm_bytes(&image_grid(&images, GRID_SIDE)?)?)?;
    println!(
        "wrote {}, {} and {} to {}",
        CHECKPOINT_FILE,
        HISTORY_FILE,
        GRID_FILE,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn train(config: &Path, out: &Path, steps: Option<usize>, seed: Option<u64>, log_every: usize) -> CmdResult {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.steps == 0 {
        return Err(CliError::usage("steps must be at least 1"));
    }
    ensure_dir(out)?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(&cfg, out, log_every),
        Precision::F64 => train_typed::<f64>(&cfg, out, log_every),
    }
}

fn generate_typed<T: Scalar>(
    ck: &Checkpoint,
    expected: Option<&RunConfig>,
    count: usize,
    seed: u64,
    out: &Path,
) -> CmdResult {
    let run = load_run::<T>(ck, expected)?;
    if count == 0 {
        println!("nothing to generate");
        return Ok(ExitCode::SUCCESS);
    }
    ensure_dir(out)?;
    let z = sample_latents::<T>(seed, count, run.config.style_dim);
    let images = run.generator.generate(&run.g_ema, &z)?;
    for i in 0..count {
        let path = out.join(format!("sample_{i:04}.ppm"));
        write(&path, &ppm_bytes(&images.batch_item(i))?)?;
    }
    println!("wrote {count} images to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn generate(checkpoint: &Path, count: usize, seed: u64, out: &Path, config: Option<&Path>) -> CmdResult {
    let ck = Checkpoint::load(checkpoint)
        .map_err(|e| CliError::usage(format!("cannot load {}: {e}", checkpoint.display())))?;
    let expected = config.map(RunConfig::load).transpose()?;
    let embedded = RunConfig::parse(&ck.config_text()?)?;
    match embedded.precision {
        Precision::F32 => generate_typed::<f32>(&ck, expected.as_ref(), count, seed, out),
        Precision::F64 => generate_typed::<f64>(&ck, expected.as_ref(), count, seed, out),
    }
}

pub fn gradcheck(suite: &str) -> CmdResult {
    let suite: Suite = suite.parse()?;
    let report = run_suite(suite)?;
    print!("{}", report.to_text());
    Ok(status(report.passed()))
}

fn fit(path: &Path) -> Result<GaussianFit, CliError> {
    Ok(fit_gaussian(&read_numeric_csv(path)?)?)
}

pub fn metrics_fit(features: &Path) -> CmdResult {
    let g = fit(features)?;
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    println!("dim={}", g.dim());
    println!("mu={}", join(&g.mu));
    for (i, row) in g.cov.data().chunks(g.dim()).enumerate() {
        println!("cov.{i}={}", join(row));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn metrics_fid(a: &Path, b: &Path) -> CmdResult {
    let d = frechet_distance(&fit(a)?, &fit(b)?)?;
    println!("frechet_distance={d}");
    Ok(ExitCode::SUCCESS)
}

pub fn metrics_is(probs: &Path) -> CmdResult {
    let table = ClassProbTable::new(read_numeric_csv(probs)?)?;
    println!("classes={}", table.classes());
    println!("samples={}", table.rows().len());
    println!("inception_score={}", inception_score(&table));
    Ok(ExitCode::SUCCESS)
}
