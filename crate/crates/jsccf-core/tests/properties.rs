//! Property tests over the channel and tensor-engine invariants.

use jsccf_core::autodiff::{Graph, Tensor};
use jsccf_core::channel::{pack_complex, power_normalize, unpack_complex};
use proptest::prelude::*;

proptest! {
    // pack/unpack is an exact bijection on even-length real vectors
    #[test]
    fn pack_unpack_roundtrip(values in prop::collection::vec(-1e6f64..1e6, 1..64)) {
        let mut reals = values;
        if reals.len() % 2 != 0 {
            reals.pop();
        }
        prop_assume!(!reals.is_empty());
        let packed = pack_complex(&reals).unwrap();
        let back = unpack_complex(&packed);
        prop_assert_eq!(
            reals.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    // normalization always lands within 1e-9 of unit average power
    #[test]
    fn power_normalization_is_exact(values in prop::collection::vec(-100f64..100.0, 2..64)) {
        let mut reals = values;
        if reals.len() % 2 != 0 {
            reals.pop();
        }
        prop_assume!(reals.iter().any(|&v| v != 0.0));
        let signal = pack_complex(&reals).unwrap();
        let normalized = power_normalize(&signal).unwrap();
        prop_assert!((normalized.average_power() - 1.0).abs() < 1e-9);
    }

    // GDN output is finite and sign-preserving for all finite inputs given
    // the beta floor
    #[test]
    fn gdn_is_finite_and_sign_preserving(
        x in prop::collection::vec(-1e3f64..1e3, 8),
        beta in prop::collection::vec(1e-6f64..2.0, 4),
        gamma in prop::collection::vec(0f64..1.0, 16),
        inverse in any::<bool>(),
    ) {
        let mut g: Graph<f64> = Graph::new();
        let xv = g.constant(Tensor::new(vec![2, 4], x.clone()).unwrap());
        let bv = g.constant(Tensor::new(vec![4], beta).unwrap());
        let gv = g.constant(Tensor::new(vec![4, 4], gamma).unwrap());
        let y = g.gdn(xv, bv, gv, inverse).unwrap();
        for (&xi, &yi) in x.iter().zip(g.value(y).data()) {
            prop_assert!(yi.is_finite());
            if xi > 0.0 {
                prop_assert!(yi >= 0.0);
            } else if xi < 0.0 {
                prop_assert!(yi <= 0.0);
            } else {
                prop_assert_eq!(yi, 0.0);
            }
        }
    }

    // adjoint identity between the convolution pair at 64-bit precision
    #[test]
    fn conv_pair_adjoint_identity(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let stride = if rng.random::<bool>() { 1 } else { 2 };
        let (h, w) = (4usize, 4usize);
        let (ci, co, k) = (2usize, 3usize, 3usize);
        let a: Vec<f64> = (0..h * w * ci).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kernel: Vec<f64> = (0..k * k * ci * co).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
        let b: Vec<f64> = (0..oh * ow * co).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut g: Graph<f64> = Graph::new();
        let av = g.constant(Tensor::new(vec![1, h, w, ci], a.clone()).unwrap());
        let kv = g.constant(Tensor::new(vec![k, k, ci, co], kernel).unwrap());
        let zb_down = g.constant(Tensor::zeros(vec![co]));
        let down = g.conv2d_down(av, kv, zb_down, stride).unwrap();
        let bv = g.constant(Tensor::new(vec![1, oh, ow, co], b.clone()).unwrap());
        let zb_up = g.constant(Tensor::zeros(vec![ci]));
        let up = g.conv2d_up(bv, kv, zb_up, stride).unwrap();

        let lhs: f64 = g.value(down).data().iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = g.value(up).data().iter().zip(&a).map(|(x, y)| x * y).sum();
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale);
    }
}
