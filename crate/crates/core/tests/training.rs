use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqzgan::synthesis::{BlockVariant, ChannelMap, GeneratorConfig};
use sqzgan::training::{
    build_discriminator, d_loss_nonsat_r1, train, Discriminator, LossConfig, ToyDatasetSpec,
    HISTORY_HEADER,
};
use sqzgan::{grad_norm_sq, Params, Tape, Tensor};

fn small_d(seed: u64) -> (Discriminator, Params<f64>) {
    let map: ChannelMap = [(4, 3), (8, 2)].into_iter().collect();
    let d = build_discriminator(8, &map).unwrap();
    let p = d.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
    (d, p)
}

fn images(n: usize, seed: u64) -> Tensor<f64> {
    Tensor::randn(&[n, 3, 8, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn d_loss_value(d: &Discriminator, p: &Params<f64>, real: &Tensor<f64>, fake: &Tensor<f64>, gamma: f64) -> (f64, f64) {
    let tape = Tape::second_order();
    let vars = p.bind(&tape, true);
    let x = tape.leaf(real.clone());
    let d_real = d.forward(&vars, x).unwrap();
    let d_fake = d.forward(&vars, tape.constant(fake.clone())).unwrap();
    let l = d_loss_nonsat_r1(d_real, d_fake, x, gamma, &tape).unwrap();
    let r1 = l.r1.map_or(0.0, |v| v.value().item());
    (l.total.value().item(), r1)
}

fn mean_grad_norm_sq(d: &Discriminator, p: &Params<f64>, real: &Tensor<f64>) -> f64 {
    let n = real.shape()[0];
    let total: f64 = (0..n)
        .map(|i| {
            let tape = Tape::second_order();
            let vars = p.bind(&tape, false);
            let x = tape.leaf(real.batch_item(i));
            let logit = d.forward(&vars, x).unwrap().sum_all();
            grad_norm_sq(&tape, logit, x).unwrap().value().item()
        })
        .sum();
    total / n as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn penalty_vanishes_for_input_independent_d(seed: u64, gamma in 0.0f64..50.0) {
        let (d, mut p) = small_d(seed);
        let idx = d.layout().index_of("from_rgb.weight").unwrap();
        p.set(idx, Tensor::zeros(p.get(idx).shape())).unwrap();
        let (_, r1) = d_loss_value(&d, &p, &images(3, seed ^ 1), &images(3, seed ^ 2), gamma);
        prop_assert_eq!(r1, 0.0);
    }

    #[test]
    fn penalty_is_the_only_gamma_dependence(seed: u64, gamma in 0.01f64..20.0) {
        let (d, p) = small_d(seed);
        let (real, fake) = (images(4, seed ^ 3), images(4, seed ^ 4));
        let (with, _) = d_loss_value(&d, &p, &real, &fake, gamma);
        let (without, _) = d_loss_value(&d, &p, &real, &fake, 0.0);
        let penalty = 0.5 * gamma * mean_grad_norm_sq(&d, &p, &real);
        prop_assert!((with - penalty - without).abs() <= 1e-10);
    }
}

fn toy_run(seed: u64, steps: usize) -> sqzgan::training::TrainOutcome<f32> {
    let config = GeneratorConfig {
        resolution: 8,
        channel_map: [(4, 8), (8, 8)].into_iter().collect(),
        squeeze_ratio: 2,
        style_dim: 8,
        ..GeneratorConfig::toy(BlockVariant::Squeeze)
    };
    let data = ToyDatasetSpec {
        resolution: 8,
        seed,
        batch_size: 4,
    };
    train(&config, &LossConfig::default(), &data, steps, seed).unwrap()
}

#[test]
fn single_step_records_one_finite_entry() {
    let out = toy_run(0, 1);
    assert_eq!(out.history.len(), 1);
    let r = out.history.steps[0];
    for v in [r.d_loss, r.g_loss, r.r1, r.g_grad_norm, r.d_grad_norm] {
        assert!(v.is_finite());
    }
    assert!(r.r1 > 0.0);
    let csv = out.history.to_csv();
    assert_eq!(csv.lines().next(), Some(HISTORY_HEADER));
}

#[test]
fn same_seed_same_run() {
    let (a, b) = (toy_run(5, 3), toy_run(5, 3));
    assert_eq!(a.history, b.history);
    assert_eq!(a.g, b.g);
    assert_eq!(a.g_ema, b.g_ema);
    assert_eq!(a.d, b.d);
    assert_ne!(a.history, toy_run(6, 3).history);
}
