use std::path::Path;

use proptest::prelude::*;

use vmapconv::autodiff::Tape;
use vmapconv::data::cifar::encode_cifar10;
use vmapconv::data::{parse_cifar10, psnr, ssim};
use vmapconv::oracle::{
    conv2d_reference, conv_transpose2d_reference, matmul_reference, tau_reference, vmap_conv_reference,
};
use vmapconv::tensor::{conv2d, conv2d_grad_input, conv_transpose2d};
use vmapconv::vmap::{tau, ConvMode, ForwardPath, LMatrix, Layer, ParamRole, VectorMapConv2d};
use vmapconv::{ConvGeometry, SeededRng, Tensor};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

fn rel(a: &Tensor, b: &Tensor) -> f64 {
    a.max_abs_diff(b).unwrap() / (1.0 + b.data().iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

fn l_rows(l: &LMatrix) -> Vec<Vec<f64>> {
    (0..l.d()).map(|i| (0..l.d()).map(|j| l.get(i, j)).collect()).collect()
}

/// Input side large enough for any kernel/pad combination drawn below.
fn conv_case() -> impl Strategy<Value = (u64, usize, usize, usize, usize, usize, usize, usize)> {
    (any::<u64>(), 1usize..3, 1usize..4, 1usize..4, 1usize..4, 1usize..3, 0usize..2, 3usize..7)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn matmul_matches_reference(seed in any::<u64>(), m in 1usize..9, k in 1usize..9, n in 1usize..9) {
        let mut rng = SeededRng::new(seed);
        let a = rng.uniform_tensor(&[m, k], -1.0, 1.0).unwrap();
        let b = rng.uniform_tensor(&[k, n], -1.0, 1.0).unwrap();
        prop_assert!(rel(&a.matmul(&b).unwrap(), &matmul_reference(&a, &b)) < 1e-12);
    }

    #[test]
    fn conv_matches_reference((seed, n, ci, co, kh, stride, pad, side) in conv_case()) {
        let mut rng = SeededRng::new(seed);
        let x = rng.uniform_tensor(&[n, ci, side, side + 1], -1.0, 1.0).unwrap();
        let k = rng.uniform_tensor(&[co, ci, kh, kh], -1.0, 1.0).unwrap();
        let geom = ConvGeometry { stride, pad };
        let fast = conv2d(&x, &k, geom).unwrap();
        prop_assert!(rel(&fast, &conv2d_reference(&x, &k, stride, pad)) < 1e-12);
    }

    #[test]
    fn transposed_conv_matches_reference((seed, n, ci, co, kh, stride, pad, side) in conv_case(), op in 0usize..2) {
        prop_assume!(op < stride);
        let mut rng = SeededRng::new(seed);
        let x = rng.uniform_tensor(&[n, ci, side, side], -1.0, 1.0).unwrap();
        let k = rng.uniform_tensor(&[ci, co, kh, kh], -1.0, 1.0).unwrap();
        let fast = conv_transpose2d(&x, &k, ConvGeometry { stride, pad }, op).unwrap();
        prop_assert!(rel(&fast, &conv_transpose2d_reference(&x, &k, stride, pad, op)) < 1e-12);
    }

    #[test]
    fn hardtanh_and_relu_ranges(seed in any::<u64>(), scale in 0.1f64..100.0) {
        let x = SeededRng::new(seed).uniform_tensor(&[64], -scale, scale).unwrap();
        prop_assert!(x.hardtanh().data().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert!(x.relu().data().iter().all(|&v| v >= 0.0));
        for (a, b) in x.data().iter().zip(x.hardtanh().data()) {
            if a.abs() <= 1.0 {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn tau_composes(v in prop::collection::vec(-5.0f64..5.0, 1..10), a in 0usize..20, b in 0usize..20) {
        let d = v.len();
        prop_assert_eq!(tau(&tau(&v, a), b), tau(&v, a + b));
        prop_assert_eq!(tau(&v, d), v.clone());
        prop_assert_eq!(tau(&v, a), tau_reference(&v, a));
    }

    #[test]
    fn psnr_and_ssim_symmetry(seed in any::<u64>(), c in 1usize..5, side in 8usize..13) {
        let mut rng = SeededRng::new(seed);
        let a = rng.uniform_tensor(&[c, side, side], 0.0, 1.0).unwrap();
        let b = rng.uniform_tensor(&[c, side, side], 0.0, 1.0).unwrap();
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        prop_assert!((ssim(&a, &b, 1.0).unwrap() - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(psnr(&a, &a, 1.0).unwrap().is_infinite());

        let mut perm: Vec<usize> = (0..c).collect();
        rng.shuffle(&mut perm);
        let plane = side * side;
        let permute = |t: &Tensor| {
            let mut data = Vec::with_capacity(t.numel());
            for &p in &perm {
                data.extend_from_slice(&t.data()[p * plane..(p + 1) * plane]);
            }
            Tensor::from_vec([c, side, side], data).unwrap()
        };
        let (pa, pb) = (permute(&a), permute(&b));
        prop_assert!((psnr(&pa, &pb, 1.0).unwrap() - psnr(&a, &b, 1.0).unwrap()).abs() < 1e-9);
        prop_assert!((ssim(&pa, &pb, 1.0).unwrap() - ssim(&a, &b, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cifar_codec_is_byte_exact(seed in any::<u64>(), n in 1usize..4) {
        let mut rng = SeededRng::new(seed);
        let mut bytes = Vec::new();
        for _ in 0..n {
            bytes.push(rng.below(10) as u8);
            bytes.extend((0..3072).map(|_| rng.below(256) as u8));
        }
        let origin = Path::new("batch.bin");
        let a = parse_cifar10(&bytes, origin).unwrap();
        let b = parse_cifar10(&bytes, origin).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(encode_cifar10(&a), bytes.clone());
        bytes[0] = 10;
        prop_assert!(parse_cifar10(&bytes, origin).is_err());
        prop_assert!(parse_cifar10(&bytes[1..], origin).is_err());
    }

    #[test]
    fn vmap_paths_agree_with_reference(
        seed in any::<u64>(),
        d in 1usize..6,
        bi in 1usize..3,
        bo in 1usize..3,
        stride in 1usize..3,
        pad in 0usize..2,
    ) {
        let mut rng = SeededRng::new(seed);
        let shared = rng.uniform_tensor(&[bo, bi, d, 3, 3], -1.0, 1.0).unwrap();
        let l = LMatrix::from_tensor(rng.uniform_tensor(&[d, d], -1.5, 1.5).unwrap()).unwrap();
        let rows = l_rows(&l);
        let geom = ConvGeometry { stride, pad };
        let layer = VectorMapConv2d::from_parts(shared.clone(), l, geom, ConvMode::Forward, None).unwrap();
        let x = rng.uniform_tensor(&[2, bi * d, 6, 5], -1.0, 1.0).unwrap();
        let reference = vmap_conv_reference(&x, &shared, &rows, stride, pad);
        prop_assert!(rel(&layer.infer_with(&x, ForwardPath::Materialized).unwrap(), &reference) < 1e-12);
        prop_assert!(rel(&layer.infer_with(&x, ForwardPath::Accumulated).unwrap(), &reference) < 1e-12);
    }

    /// Every block of the expanded bank is a signed copy of one shared kernel.
    #[test]
    fn expanded_bank_shares_weights(seed in any::<u64>(), d in 1usize..7, bi in 1usize..3, bo in 1usize..3) {
        let mut rng = SeededRng::new(seed);
        let shared = rng.uniform_tensor(&[bo, bi, d, 2, 2], -1.0, 1.0).unwrap();
        let l = LMatrix::from_tensor(rng.uniform_tensor(&[d, d], -2.0, 2.0).unwrap()).unwrap();
        let layer = VectorMapConv2d::from_parts(shared.clone(), l.clone(), ConvGeometry { stride: 1, pad: 0 }, ConvMode::Forward, None).unwrap();
        let bank = layer.expanded_bank().unwrap();
        prop_assert_eq!(bank.dims(), &[bo * d, bi * d, 2, 2][..]);
        for u in 0..bo {
            for v in 0..bi {
                for i in 0..d {
                    for j in 0..d {
                        for ky in 0..2 {
                            for kx in 0..2 {
                                let want = l.get(i, j) * shared.at(&[u, v, (j + d - i) % d, ky, kx]);
                                prop_assert_eq!(bank.at(&[u * d + i, v * d + j, ky, kx]), want);
                            }
                        }
                    }
                }
            }
        }
    }

    /// The output is linear in `L`, so `∂⟨R, y⟩/∂L[i][j]` equals `⟨R, y⟩`
    /// evaluated with `L` replaced by the unit matrix `E_ij`.
    #[test]
    fn l_gradient_matches_unit_responses(seed in any::<u64>(), d in 1usize..5, transposed in any::<bool>()) {
        let mut rng = SeededRng::new(seed);
        let shared = rng.uniform_tensor(&[2, 1, d, 3, 3], -1.0, 1.0).unwrap();
        let l = LMatrix::from_tensor(rng.uniform_tensor(&[d, d], -1.0, 1.0).unwrap()).unwrap();
        let (mode, geom) = if transposed {
            (ConvMode::Transposed { output_padding: 1 }, ConvGeometry { stride: 2, pad: 1 })
        } else {
            (ConvMode::Forward, ConvGeometry { stride: 1, pad: 1 })
        };
        let layer = VectorMapConv2d::from_parts(shared.clone(), l, geom, mode, None).unwrap();
        let x = rng.uniform_tensor(&[1, d, 4, 4], -1.0, 1.0).unwrap();
        let y = layer.infer(&x).unwrap();
        let r = rng.uniform_tensor(y.dims(), -1.0, 1.0).unwrap();

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let params = layer.params();
        let vars: Vec<_> = params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let l_var = vars[params.iter().position(|p| p.role == ParamRole::LMatrix).unwrap()];
        let out = layer.forward(&mut tape, xv, &vars).unwrap();
        let rv = tape.constant(r.clone());
        let prod = tape.mul(out, rv).unwrap();
        let loss = tape.sum(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gl = grads.get(l_var).unwrap();

        for i in 0..d {
            for j in 0..d {
                let mut unit = Tensor::zeros([d, d]);
                unit.set(&[i, j], 1.0);
                let probe = VectorMapConv2d::from_parts(shared.clone(), LMatrix::from_tensor(unit).unwrap(), geom, mode, None).unwrap();
                let want = probe.infer(&x).unwrap().dot(&r).unwrap();
                prop_assert!((gl.at(&[i, j]) - want).abs() <= 1e-10 * (1.0 + want.abs()));
            }
        }
    }
}

/// `⟨conv(x, k), y⟩ = ⟨x, conv_adjoint(y, k)⟩` over 100 seeds.
#[test]
fn conv_adjoint_identity_over_100_seeds() {
    for seed in 0..100u64 {
        let mut rng = SeededRng::new(seed);
        let (ci, co) = (1 + rng.below(3), 1 + rng.below(3));
        let geom = ConvGeometry {
            stride: 1 + rng.below(2),
            pad: rng.below(2),
        };
        let (h, w) = (4 + rng.below(4), 4 + rng.below(4));
        let x = rng.uniform_tensor(&[2, ci, h, w], -1.0, 1.0).unwrap();
        let k = rng.uniform_tensor(&[co, ci, 3, 3], -1.0, 1.0).unwrap();
        let fx = conv2d(&x, &k, geom).unwrap();
        let y = rng.uniform_tensor(fx.dims(), -1.0, 1.0).unwrap();
        let lhs = fx.dot(&y).unwrap();
        let rhs = x.dot(&conv2d_grad_input(&y, &k, geom, (h, w)).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "seed {seed}: {lhs} vs {rhs}");
    }
}
