use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sqzgan::kernels::{conv2d, resample, Resample};
use sqzgan::Tensor;

/// Direct convolution, one output element at a time, products summed in
/// (c, ky, kx) order from zero and the bias added last.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, pad: usize) -> Tensor<f64> {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [o, _, kh, kw] = w.shape().try_into().unwrap();
    let (ho, wo) = (h + 2 * pad + 1 - kh, wd + 2 * pad + 1 - kw);
    let (xd, wdat) = (x.data(), w.data());
    let mut out = Vec::new();
    for ni in 0..n {
        for oc in 0..o {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y + ky) as isize - pad as isize;
                                let ix = (xx + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = xd[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                acc += xv * wdat[((oc * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    if let Some(b) = b {
                        acc += b.data()[oc];
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(&[n, o, ho, wo], out).unwrap()
}

/// Half-pixel bilinear 2x upsampling with edge clamping, evaluated per
/// output pixel from the continuous source coordinate.
fn bilinear_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let src = |i: usize, len: usize| {
        let s = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::new();
    for plane in x.data().chunks(h * w) {
        for y in 0..2 * h {
            let (y0, y1, fy) = src(y, h);
            for xx in 0..2 * w {
                let (x0, x1, fx) = src(xx, w);
                let p = |r: usize, q: usize| plane[r * w + q];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&[n, c, 2 * h, 2 * w], out).unwrap()
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn conv_matches_quadruple_loop_on_the_reference_case() {
    let x = randn(&[1, 2, 5, 5], 1);
    let w = randn(&[3, 2, 3, 3], 2);
    let b = randn(&[3], 3);
    for pad in [0, 1] {
        let got = conv2d(&x, &w, Some(&b), pad).unwrap();
        assert_eq!(got, conv_oracle(&x, &w, Some(&b), pad));
    }
}

#[test]
fn identity_and_zero_kernels() {
    let x = randn(&[2, 4, 3, 3], 4);
    let eye = Tensor::<f64>::eye(4).reshape(&[4, 4, 1, 1]).unwrap();
    assert_eq!(conv2d(&x, &eye, None, 0).unwrap(), x);
    let zero = Tensor::<f64>::zeros(&[5, 4, 3, 3]);
    let y = conv2d(&x, &zero, None, 1).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn nearest_replicates_pixels() {
    let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = resample(&x, Resample::NearestUp, false).unwrap();
    let want = [
        1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0,
    ];
    assert_eq!(y.data(), want);
}

#[test]
fn bilinear_matches_per_pixel_interpolation() {
    let x = randn(&[1, 1, 3, 3], 5);
    let got = resample(&x, Resample::BilinearUp, false).unwrap();
    assert!(got.max_abs_diff(&bilinear_oracle(&x)) <= 1e-15);
    let x = randn(&[2, 3, 4, 6], 6);
    let got = resample(&x, Resample::BilinearUp, false).unwrap();
    assert!(got.max_abs_diff(&bilinear_oracle(&x)) <= 1e-15);
}

fn upsample() -> impl Strategy<Value = Resample> {
    prop_oneof![Just(Resample::NearestUp), Just(Resample::BilinearUp)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_equals_oracle_exactly(
        n in 1usize..3, c in 1usize..5, o in 1usize..5, h in 1usize..8, w in 1usize..8,
        k in prop_oneof![Just(1usize), Just(3)], padded: bool, bias: bool, seed: u64,
    ) {
        let pad = if padded { k / 2 } else { 0 };
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let x = randn(&[n, c, h, w], seed);
        let wt = randn(&[o, c, k, k], seed ^ 1);
        let b = bias.then(|| randn(&[o], seed ^ 2));
        let got = conv2d(&x, &wt, b.as_ref(), pad).unwrap();
        prop_assert_eq!(got, conv_oracle(&x, &wt, b.as_ref(), pad));
    }

    #[test]
    fn upsampling_commutes_with_pointwise_conv(
        c in 1usize..6, o in 1usize..6, h in 1usize..6, w in 1usize..6, seed: u64, kind in upsample(),
    ) {
        let f = randn(&[2, c, h, w], seed);
        let wt = randn(&[o, c, 1, 1], seed ^ 7);
        let a = conv2d(&resample(&f, kind, false).unwrap(), &wt, None, 0).unwrap();
        let b = resample(&conv2d(&f, &wt, None, 0).unwrap(), kind, false).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn upsampling_is_linear(
        h in 1usize..6, w in 1usize..6, alpha in -3.0f64..3.0, beta in -3.0f64..3.0,
        seed: u64, kind in upsample(),
    ) {
        let f = randn(&[1, 2, h, w], seed);
        let g = randn(&[1, 2, h, w], seed ^ 3);
        let mix = f.zip_map(&g, |a, b| alpha * a + beta * b).unwrap();
        let lhs = resample(&mix, kind, false).unwrap();
        let (uf, ug) = (resample(&f, kind, false).unwrap(), resample(&g, kind, false).unwrap());
        let rhs = uf.zip_map(&ug, |a, b| alpha * a + beta * b).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn kernels_are_deterministic(seed: u64, kind in upsample()) {
        let x = randn(&[2, 3, 5, 4], seed);
        let w = randn(&[4, 3, 3, 3], seed ^ 9);
        prop_assert_eq!(conv2d(&x, &w, None, 1).unwrap(), conv2d(&x, &w, None, 1).unwrap());
        prop_assert_eq!(resample(&x, kind, false).unwrap(), resample(&x, kind, false).unwrap());
        let xf: Tensor<f32> = x.cast();
        let wf: Tensor<f32> = w.cast();
        prop_assert_eq!(conv2d(&xf, &wf, None, 1).unwrap(), conv2d(&xf, &wf, None, 1).unwrap());
    }
}
