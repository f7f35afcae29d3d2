use decompress_core::denoise::{add_awgn, denoise_with, psnr, DenoiseOptions, IdentityReconstructor, NoiseSpec};
use decompress_core::entropy::quantize;
use decompress_core::tensor::{conv2d, conv_transpose2d, read_blob, write_blob, ByteReader};
use decompress_core::train::PatchDataset;
use decompress_core::wavelet::{bayes_shrink_unclamped, haar_forward, haar_inverse, shrink, soft_threshold};
use decompress_core::{QuantizerMode, Rng, Tensor};
use ndarray::Array2;
use proptest::prelude::*;

fn plane(h: usize, w: usize, seed: u64) -> Array2<f64> {
    let mut rng = Rng::new(seed);
    Array2::from_shape_fn((h, w), |_| rng.uniform_in(-40.0, 300.0))
}

fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gaussian()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn patch_count_matches_enumeration(h in 16usize..90, w in 16usize..90, stride in 1usize..4) {
        let ds = PatchDataset::new(vec![Array2::zeros((h, w))], 16, stride).unwrap();
        let mut brute = 0;
        for r in (0..h).step_by(stride) {
            for c in (0..w).step_by(stride) {
                if r + 16 <= h && c + 16 <= w {
                    brute += 1;
                }
            }
        }
        prop_assert_eq!(ds.len(), brute);
        if stride == 1 {
            prop_assert_eq!(ds.len(), (h - 15) * (w - 15));
        }
    }

    #[test]
    fn coverage_and_identity(h in 16usize..60, w in 16usize..60, seed in any::<u64>()) {
        let x = plane(h, w, seed);
        let d = denoise_with(&x, &IdentityReconstructor { patch_size: 16 }, DenoiseOptions::default()).unwrap();
        for i in 0..h {
            for j in 0..w {
                let mut n = 0;
                for r in 0..=h - 16 {
                    for c in 0..=w - 16 {
                        if (r..r + 16).contains(&i) && (c..c + 16).contains(&j) {
                            n += 1;
                        }
                    }
                }
                prop_assert_eq!(d.counts[[i, j]], n);
            }
        }
        prop_assert_eq!(&d.averaged, &x);
    }

    #[test]
    fn identity_denoise_commutes_with_cropping(h in 40usize..64, w in 40usize..64, seed in any::<u64>()) {
        let x = plane(h, w, seed);
        let id = IdentityReconstructor { patch_size: 16 };
        let full = denoise_with(&x, &id, DenoiseOptions::default()).unwrap().averaged;
        let crop = x.slice(ndarray::s![1.., 1..]).to_owned();
        let part = denoise_with(&crop, &id, DenoiseOptions::default()).unwrap().averaged;
        for i in 16..h - 17 {
            for j in 16..w - 17 {
                prop_assert_eq!(full[[i + 1, j + 1]], part[[i, j]]);
            }
        }
    }

    #[test]
    fn psnr_is_symmetric(seed in any::<u64>()) {
        let (a, b) = (plane(9, 7, seed), plane(9, 7, seed ^ 1));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn noise_field_is_independent_of_content(seed in any::<u64>(), sigma in 0.0f64..60.0) {
        let spec = NoiseSpec { sigma, seed };
        let (a, b) = (plane(8, 8, 1), plane(8, 8, 2));
        let za = add_awgn(&a, spec) - &a;
        let zb = add_awgn(&b, spec) - &b;
        for (p, q) in za.iter().zip(zb.iter()) {
            prop_assert!((p - q).abs() <= 1e-9 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn blobs_round_trip(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let n: usize = dims.iter().product();
        let t = Tensor::<f32>::from_vec(&dims, (0..n).map(|_| rng.gaussian() as f32).collect()).unwrap();
        let mut buf = Vec::new();
        write_blob(&mut buf, &t);
        prop_assert_eq!(buf.len(), 4 + 4 * dims.len() + 4 * n);
        let back = read_blob::<f32>(&mut ByteReader::new(&buf)).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert_eq!(back.data(), t.data());
    }

    #[test]
    fn transposed_convolution_is_the_adjoint(
        b in 1usize..3, cin in 1usize..4, cout in 1usize..4, h in 2usize..9,
        k in 1usize..4, stride in 1usize..3, seed in any::<u64>()
    ) {
        let pad = k / 2;
        let mut rng = Rng::new(seed);
        let x = random_tensor(&[b, cin, h, h], &mut rng);
        let wt = random_tensor(&[cout, cin, k, k], &mut rng);
        let y = conv2d(&x, &wt, None, stride, pad).unwrap();
        let (ho, wo) = (y.shape()[2], y.shape()[3]);
        let out_pad = ((h + 2 * pad - k) % stride).min(stride - 1);
        let g = random_tensor(&[b, cout, ho, wo], &mut rng);
        let xt = conv_transpose2d(&g, &wt, None, stride, pad, out_pad).unwrap();
        prop_assert_eq!(xt.shape(), x.shape());
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(p, q)| p * q).sum();
        let rhs: f64 = x.data().iter().zip(xt.data()).map(|(p, q)| p * q).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn eval_rounding_is_idempotent(values in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let n = values.len();
        let t = Tensor::from_vec(&[n], values).unwrap();
        let once = quantize(&t, QuantizerMode::Eval, &mut Rng::new(0)).unwrap();
        let twice = quantize(&once, QuantizerMode::Eval, &mut Rng::new(0)).unwrap();
        prop_assert_eq!(once.data(), twice.data());
        for (q, v) in once.data().iter().zip(t.data()) {
            prop_assert!((q - v).abs() <= 0.5);
            prop_assert_eq!(q.fract(), 0.0);
        }
    }

    #[test]
    fn haar_perfect_reconstruction(hb in 1usize..6, wb in 1usize..6, levels in 1usize..4, seed in any::<u64>()) {
        let m = 1 << levels;
        let x = plane(hb * m, wb * m, seed);
        let p = haar_forward(&x, levels).unwrap();
        prop_assert_eq!(p.coefficient_count(), x.len());
        let back = haar_inverse(&p);
        let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in back.iter().zip(x.iter()) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn shrinkage_contracts_and_is_monotone_in_sigma(seed in any::<u64>(), s1 in 0.0f64..40.0, ds in 0.0f64..40.0) {
        let x = plane(32, 32, seed);
        let base = haar_forward(&x, 3).unwrap();
        let detail_energy = |p: &decompress_core::wavelet::WaveletPyramid| {
            p.details.iter().flat_map(|d| d.bands()).flat_map(|b| b.iter()).map(|v| v * v).sum::<f64>()
        };
        let mut lo = base.clone();
        shrink(&mut lo, s1);
        let mut hi = base.clone();
        shrink(&mut hi, s1 + ds);
        for (d0, d1) in base.details.iter().zip(&lo.details) {
            for (b0, b1) in d0.bands().iter().zip(d1.bands()) {
                for (a, b) in b0.iter().zip(b1.iter()) {
                    prop_assert!(b.abs() <= a.abs());
                }
            }
        }
        prop_assert!(detail_energy(&hi) <= detail_energy(&lo) + 1e-9);
    }

    #[test]
    fn soft_threshold_is_a_contraction(c in -500.0f64..500.0, t in 0.0f64..100.0) {
        let s = soft_threshold(c, t);
        prop_assert!(s.abs() <= c.abs());
        prop_assert!(s == 0.0 || s.signum() == c.signum());
    }
}

#[test]
fn zero_noise_baseline_is_identity_on_odd_sizes() {
    let x = plane(37, 53, 4);
    let y = bayes_shrink_unclamped(&x, 0.0, 3).unwrap();
    let err = y.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-9);
}
