//! Central finite-difference checks of the autodiff engine at 64-bit.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{concat_channels, grad_norm_sq, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::Resample;
use crate::params::{ParamLayout, Params};
use crate::synthesis::{
    BlockVariant, ChannelMap, Generator, GeneratorConfig, ModulatedConv, UpsampleMode,
};
use crate::tensor::Tensor;
use crate::training::{
    build_discriminator, d_loss_classic, d_loss_nonsat_r1, g_loss_classic, g_loss_nonsat,
};

pub const FD_STEP: f64 = 1e-5;
pub const FIRST_ORDER_TOL: f64 = 1e-4;
pub const R1_TOL: f64 = 1e-3;
/// Largest relative gap between the `h` and `h/10` estimates still taken
/// as smooth.
pub const SMOOTHNESS_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    /// Every differentiable op and a few composed graphs.
    Core,
    /// Both loss families, first order.
    Losses,
    /// The R1 penalty through its double-backward path.
    R1,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Core, Suite::Losses, Suite::R1];

    pub fn key(self) -> &'static str {
        match self {
            Suite::Core => "core",
            Suite::Losses => "losses",
            Suite::R1 => "r1",
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Suite::R1 => R1_TOL,
            _ => FIRST_ORDER_TOL,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.key() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown gradcheck suite `{s}` (expected core, losses or r1)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub rel_error: f64,
    pub checked: usize,
    /// Entries whose stencil straddled a kink and were re-estimated with
    /// a step of `FD_STEP / 100`.
    pub refined: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub tol: f64,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn worst(&self) -> Option<&CaseResult> {
        self.cases
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.rel_error <= self.tol)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "gradcheck suite {} (tol {:e}, step {:e})\n",
            self.suite, self.tol, FD_STEP
        );
        for c in &self.cases {
            let mark = if c.rel_error <= self.tol {
                "ok  "
            } else {
                "FAIL"
            };
            s.push_str(&format!(
                "  {mark} {:<38} rel_error={:.3e} ({} entries, {} refined)\n",
                c.name, c.rel_error, c.checked, c.refined
            ));
        }
        if let Some(w) = self.worst() {
            s.push_str(&format!(
                "worst: {} rel_error={:.3e}\n",
                w.name, w.rel_error
            ));
        }
        s.push_str(if self.passed() {
            "result: PASS\n"
        } else {
            "result: FAIL\n"
        });
        s
    }
}

/// Relative error between two flattened gradients; 0 when both vanish.
pub fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

type Graph<'a> = dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> + 'a;

fn tape(second_order: bool) -> Tape<f64> {
    if second_order {
        Tape::second_order()
    } else {
        Tape::new()
    }
}

fn evaluate(f: &Graph<'_>, inputs: &[Tensor<f64>], second_order: bool) -> Result<f64> {
    let t = tape(second_order);
    let vars: Vec<_> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    Ok(f(&t, &vars)?.value().item())
}

/// Checks the gradient of scalar `f` with respect to every entry of every
/// input.
pub fn check_case(
    name: &str,
    inputs: &[Tensor<f64>],
    second_order: bool,
    f: &Graph<'_>,
) -> Result<CaseResult> {
    let t = tape(second_order);
    let vars: Vec<_> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    let out = f(&t, &vars)?;
    if out.shape().iter().product::<usize>() != 1 {
        return Err(Error::Autodiff(format!("{name}: output is not a scalar")));
    }
    let grads = t.backward(out, false)?;
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|&v| grads.tensor(v).to_vec())
        .collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut refined = 0;
    for (i, x) in inputs.iter().enumerate() {
        for j in 0..x.numel() {
            let mut shifted = inputs.to_vec();
            let mut central = |h: f64| -> Result<f64> {
                let mut at = |delta: f64| -> Result<f64> {
                    let mut d = x.to_vec();
                    d[j] += delta;
                    shifted[i] = Tensor::new(x.shape(), d)?;
                    evaluate(f, &shifted, second_order)
                };
                Ok((at(h)? - at(-h)?) / (2.0 * h))
            };
            let coarse = central(FD_STEP)?;
            let fine = central(FD_STEP / 10.0)?;
            // A leaky-relu kink inside the stencil makes the two steps
            // disagree far beyond truncation and roundoff error.
            if (coarse - fine).abs() > SMOOTHNESS_TOL * fine.abs().max(1.0) {
                refined += 1;
                numeric.push(central(FD_STEP / 100.0)?);
            } else {
                numeric.push(coarse);
            }
        }
    }
    Ok(CaseResult {
        name: name.to_string(),
        rel_error: rel_error(&analytic, &numeric),
        checked: analytic.len(),
        refined,
    })
}

struct Inputs(ChaCha8Rng);

impl Inputs {
    fn new(seed: u64) -> Self {
        Inputs(ChaCha8Rng::seed_from_u64(seed))
    }

    fn randn(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::randn(shape, 1.0, &mut self.0)
    }

    fn positive(&mut self, shape: &[usize]) -> Tensor<f64> {
        self.randn(shape).map(|v| v.abs() + 0.5)
    }
}

/// Weighted sum against a fixed random tensor, so every output entry gets
/// a distinct upstream gradient.
fn probe<'t>(t: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = Tensor::randn(
        &y.shape(),
        1.0,
        &mut ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef),
    );
    Ok(y.mul(t.constant(w))?.sum_all())
}

fn core_cases() -> Result<Vec<CaseResult>> {
    let mut r = Inputs::new(1);
    let mut out = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor<f64>>, f: &Graph<'_>| -> Result<()> {
        out.push(check_case(name, &inputs, false, f)?);
        Ok(())
    };
    run("add", vec![r.randn(&[2, 3]), r.randn(&[2, 3])], &|t, v| {
        probe(t, v[0].add(v[1])?, 1)
    })?;
    run("sub", vec![r.randn(&[2, 3]), r.randn(&[2, 3])], &|t, v| {
        probe(t, v[0].sub(v[1])?, 2)
    })?;
    run("mul", vec![r.randn(&[2, 3]), r.randn(&[2, 3])], &|t, v| {
        probe(t, v[0].mul(v[1])?, 3)
    })?;
    run("scale", vec![r.randn(&[4])], &|t, v| {
        probe(t, v[0].scale(-1.7), 4)
    })?;
    run("add_scalar", vec![r.randn(&[4])], &|t, v| {
        probe(t, v[0].add_scalar(0.3).square(), 5)
    })?;
    run("square", vec![r.randn(&[5])], &|t, v| {
        probe(t, v[0].square(), 6)
    })?;
    run("powf", vec![r.positive(&[5])], &|t, v| {
        probe(t, v[0].powf(-0.5)?, 7)
    })?;
    run("sqrt_eps", vec![r.positive(&[5])], &|t, v| {
        probe(t, v[0].sqrt_eps(1e-8)?, 8)
    })?;
    run("leaky_relu", vec![r.randn(&[2, 2, 3, 3])], &|t, v| {
        probe(t, v[0].leaky_relu(0.2), 9)
    })?;
    run("sigmoid", vec![r.randn(&[6])], &|t, v| {
        probe(t, v[0].sigmoid(), 10)
    })?;
    run("softplus", vec![r.randn(&[6])], &|t, v| {
        probe(t, v[0].softplus(), 11)
    })?;
    run("log_sigmoid_clamped", vec![r.randn(&[6])], &|t, v| {
        probe(t, v[0].log_sigmoid_clamped(1e-7), 12)
    })?;
    run("sum_all", vec![r.randn(&[2, 3, 2, 2])], &|_, v| {
        Ok(v[0].square().sum_all())
    })?;
    run("mean_all", vec![r.randn(&[2, 3, 2, 2])], &|_, v| {
        Ok(v[0].square().mean_all())
    })?;
    run("reshape", vec![r.randn(&[2, 6])], &|t, v| {
        probe(t, v[0].reshape(&[3, 4])?, 13)
    })?;
    run("broadcast_to", vec![r.randn(&[1])], &|t, v| {
        probe(t, v[0].broadcast_to(&[2, 3])?, 14)
    })?;
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta {
            r.randn(&[4, 3])
        } else {
            r.randn(&[3, 4])
        };
        let b = if tb {
            r.randn(&[2, 4])
        } else {
            r.randn(&[4, 2])
        };
        run(
            &format!("matmul(ta={ta},tb={tb})"),
            vec![a, b],
            &move |t, v| probe(t, v[0].matmul(v[1], ta, tb)?, 15),
        )?;
    }
    run(
        "conv2d 3x3 pad 1 + bias",
        vec![
            r.randn(&[2, 2, 5, 4]),
            r.randn(&[3, 2, 3, 3]),
            r.randn(&[3]),
        ],
        &|t, v| probe(t, v[0].conv2d(v[1], Some(v[2]), 1)?, 16),
    )?;
    run(
        "conv2d 3x3 pad 0",
        vec![r.randn(&[1, 2, 5, 5]), r.randn(&[2, 2, 3, 3])],
        &|t, v| probe(t, v[0].conv2d(v[1], None, 0)?, 17),
    )?;
    run(
        "conv2d 1x1",
        vec![r.randn(&[2, 3, 3, 3]), r.randn(&[2, 3, 1, 1])],
        &|t, v| probe(t, v[0].conv2d(v[1], None, 0)?, 18),
    )?;
    for (name, kind) in [
        ("upsample nearest", Resample::NearestUp),
        ("upsample bilinear", Resample::BilinearUp),
        ("avgpool", Resample::AvgPoolDown),
    ] {
        run(name, vec![r.randn(&[2, 2, 4, 4])], &move |t, v| {
            probe(t, v[0].resample(kind, false)?, 19)
        })?;
    }
    run(
        "channel_scale",
        vec![r.randn(&[2, 3, 2, 2]), r.randn(&[2, 3])],
        &|t, v| probe(t, v[0].channel_scale(v[1])?, 20),
    )?;
    run(
        "channel_dot",
        vec![r.randn(&[2, 3, 2, 2]), r.randn(&[2, 3, 2, 2])],
        &|t, v| probe(t, v[0].channel_dot(v[1])?, 21),
    )?;
    run(
        "add_bias",
        vec![r.randn(&[2, 3, 2, 2]), r.randn(&[3])],
        &|t, v| probe(t, v[0].add_bias(v[1])?, 22),
    )?;
    run("channel_sum", vec![r.randn(&[2, 3, 2, 2])], &|t, v| {
        probe(t, v[0].channel_sum()?, 23)
    })?;
    run("broadcast_channels", vec![r.randn(&[3])], &|t, v| {
        probe(t, v[0].broadcast_channels(&[2, 3, 2, 2])?, 24)
    })?;
    run(
        "concat/slice channels",
        vec![r.randn(&[1, 2, 3, 3]), r.randn(&[1, 3, 3, 3])],
        &|t, v| {
            let c = concat_channels(&[v[0], v[1]])?;
            probe(t, c.slice_channels(1, 3)?.square(), 25)
        },
    )?;
    run(
        "conv + lrelu, two layers",
        vec![
            r.randn(&[2, 2, 4, 4]),
            r.randn(&[3, 2, 3, 3]),
            r.randn(&[2, 3, 3, 3]),
        ],
        &|t, v| {
            let h = v[0].conv2d(v[1], None, 1)?.leaky_relu(0.2);
            probe(t, h.conv2d(v[2], None, 1)?.leaky_relu(0.2), 26)
        },
    )?;

    let mut layout = ParamLayout::new();
    let conv = ModulatedConv::declare(&mut layout, "m", 3, 2, 3, true, true, 4);
    let rgb = ModulatedConv::declare_to_rgb(&mut layout, "rgb", 2, 4);
    let p: Params<f64> = Params::init(&layout, &mut ChaCha8Rng::seed_from_u64(27));
    let mut inputs = p.tensors().to_vec();
    inputs.push(r.randn(&[2, 3, 3, 3]));
    inputs.push(r.randn(&[2, 4]));
    let k = layout.len();
    run("modulated conv + toRGB", inputs, &|t, v| {
        let y = conv.forward(&v[..k], v[k], v[k + 1])?.out;
        probe(t, rgb.forward(&v[..k], y, v[k + 1])?.out, 28)
    })?;

    for variant in BlockVariant::ALL {
        let g = Generator::new(tiny_generator(variant))?;
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let p: Params<f64> = g.init_params(&mut rng);
        let mut inputs = p.tensors().to_vec();
        inputs.push(Tensor::randn(&[2, 4], 1.0, &mut rng));
        let k = g.layout().len();
        run(&format!("generator {variant}"), inputs, &|t, v| {
            probe(t, g.forward(&v[..k], v[k])?.image, 30)
        })?;
    }
    Ok(out)
}

fn tiny_generator(variant: BlockVariant) -> GeneratorConfig {
    GeneratorConfig {
        resolution: 8,
        channel_map: [(4, 4), (8, 4)].into_iter().collect(),
        variant,
        squeeze_ratio: 2,
        style_dim: 4,
        mapping_depth: 2,
        upsample: UpsampleMode::Bilinear,
    }
}

fn small_d_map() -> ChannelMap {
    [(4, 3), (8, 2)].into_iter().collect()
}

fn loss_cases() -> Result<Vec<CaseResult>> {
    let mut r = Inputs::new(2);
    let mut out = Vec::new();
    let logits =
        || -> Tensor<f64> { Tensor::from_f64(&[4, 1], &[-2.5, -0.3, 0.8, 3.1]).expect("4 logits") };
    let mut run = |name: &str, inputs: Vec<Tensor<f64>>, f: &Graph<'_>| -> Result<()> {
        out.push(check_case(name, &inputs, false, f)?);
        Ok(())
    };
    run("g_loss_nonsat", vec![logits()], &|_, v| {
        Ok(g_loss_nonsat(v[0]))
    })?;
    run("g_loss_classic", vec![logits()], &|_, v| {
        Ok(g_loss_classic(v[0]))
    })?;
    run(
        "d_loss_classic",
        vec![logits(), r.randn(&[4, 1])],
        &|_, v| d_loss_classic(v[0], v[1]),
    )?;
    run(
        "d_loss_nonsat (gamma 0)",
        vec![logits(), r.randn(&[4, 1]), r.randn(&[4, 3])],
        &|t, v| Ok(d_loss_nonsat_r1(v[0], v[1], v[2], 0.0, t)?.total),
    )?;

    let disc = build_discriminator(8, &small_d_map())?;
    let p: Params<f64> = disc.init_params(&mut ChaCha8Rng::seed_from_u64(3));
    let k = disc.layout().len();
    let real = r.randn(&[2, 3, 8, 8]);
    let fake = r.randn(&[2, 3, 8, 8]);
    let with = |extra: &[Tensor<f64>]| {
        let mut v = p.tensors().to_vec();
        v.extend_from_slice(extra);
        v
    };
    run(
        "d_loss_classic through D",
        with(&[real.clone(), fake.clone()]),
        &|_, v| {
            d_loss_classic(
                disc.forward(&v[..k], v[k])?,
                disc.forward(&v[..k], v[k + 1])?,
            )
        },
    )?;
    run("g_loss_nonsat through D", with(std::slice::from_ref(&fake)), &|_, v| {
        Ok(g_loss_nonsat(disc.forward(&v[..k], v[k])?))
    })?;
    Ok(out)
}

fn r1_cases() -> Result<Vec<CaseResult>> {
    let mut r = Inputs::new(3);
    let mut out = Vec::new();
    let disc = build_discriminator(8, &small_d_map())?;
    let p: Params<f64> = disc.init_params(&mut ChaCha8Rng::seed_from_u64(4));
    let k = disc.layout().len();
    let real = r.randn(&[2, 3, 8, 8]);
    let fake = r.randn(&[2, 3, 8, 8]);
    let params = p.tensors().to_vec();
    out.push(check_case(
        "grad_norm_sq wrt D weights",
        &params,
        true,
        &|t, v| {
            let x = t.leaf(real.clone());
            grad_norm_sq(t, disc.forward(v, x)?.sum_all(), x)
        },
    )?);
    let mut inputs = params.clone();
    inputs.push(real.clone());
    out.push(check_case(
        "grad_norm_sq wrt D weights and x",
        &inputs,
        true,
        &|t, v| grad_norm_sq(t, disc.forward(&v[..k], v[k])?.sum_all(), v[k]),
    )?);
    out.push(check_case(
        "d_loss_nonsat_r1 (gamma 10)",
        &params,
        true,
        &|t, v| {
            let x = t.leaf(real.clone());
            let d_real = disc.forward(v, x)?;
            let d_fake = disc.forward(v, t.constant(fake.clone()))?;
            Ok(d_loss_nonsat_r1(d_real, d_fake, x, 10.0, t)?.total)
        },
    )?);
    let conv_w = r.randn(&[2, 3, 3, 3]);
    out.push(check_case(
        "conv D penalty",
        &[conv_w, real.clone()],
        true,
        &|t, v| {
            let d = v[1]
                .conv2d(v[0], None, 1)?
                .leaky_relu(0.2)
                .square()
                .sum_all();
            grad_norm_sq(t, d, v[1])
        },
    )?);
    Ok(out)
}

/// Runs one suite.
pub fn run_suite(suite: Suite) -> Result<SuiteReport> {
    let cases = match suite {
        Suite::Core => core_cases()?,
        Suite::Losses => loss_cases()?,
        Suite::R1 => r1_cases()?,
    };
    Ok(SuiteReport {
        suite,
        tol: suite.tolerance(),
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_conventions() {
        assert_eq!(rel_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(rel_error(&[1.0, 0.0], &[0.0, 0.0]), 1.0);
        let want = 0.5 / 29.25f64.sqrt();
        assert!((rel_error(&[3.0, 4.0], &[3.0, 4.5]) - want).abs() < 1e-15);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // detach hides the dependence from backward but not from the numeric side
        let res = check_case(
            "detached",
            &[Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap()],
            false,
            &|_, v| v[0].detach().square().sum_all().add(v[0].sum_all()),
        )
        .unwrap();
        assert!(res.rel_error > 0.5);
    }

    #[test]
    fn kink_inside_the_stencil_is_refined() {
        let x = Tensor::from_f64(&[2], &[3e-6, 0.7]).unwrap();
        let res = check_case("lrelu", &[x], false, &|_, v| {
            Ok(v[0].leaky_relu(0.2).sum_all())
        })
        .unwrap();
        assert_eq!(res.refined, 1);
        assert!(res.rel_error < 1e-9);
    }

    #[test]
    fn suite_names() {
        assert_eq!("r1".parse::<Suite>().unwrap(), Suite::R1);
        assert!("all".parse::<Suite>().is_err());
    }
}
