//! Property-style invariants across the tensor/flow/guidance surface.

use proptest::prelude::*;

use flowsteer_core::analysis::psnr;
use flowsteer_core::flow::interpolate;
use flowsteer_core::guidance::CostFunction;
use flowsteer_core::tensor::{avgpool, conv2d_reflect, matmul, Tensor};
use flowsteer_core::Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn seeded_pipeline_is_bit_deterministic(seed in any::<u64>()) {
        let run = |seed: u64| {
            let mut rng = Rng::new(seed);
            let a = rng.gaussian(&[6, 6]);
            let b = rng.gaussian(&[6, 6]);
            let m = matmul(&a, &b).unwrap();
            let k = Tensor::full(&[3, 3], 1.0 / 9.0);
            let c = conv2d_reflect(&m, &k).unwrap();
            let p = avgpool(&c, 2).unwrap();
            p.data().to_vec()
        };
        prop_assert_eq!(run(seed), run(seed));
    }

    #[test]
    fn interpolate_is_affine_in_t(
        seed in any::<u64>(),
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let mut rng = Rng::new(seed);
        let x0 = rng.gaussian(&[5]);
        let x1 = rng.gaussian(&[5]);
        let mid = interpolate(&x0, &x1, (a + b) / 2.0).unwrap();
        let avg = interpolate(&x0, &x1, a)
            .unwrap()
            .add(&interpolate(&x0, &x1, b).unwrap())
            .unwrap()
            .scaled(0.5);
        for (u, v) in mid.data().iter().zip(avg.data()) {
            prop_assert!(close(*u, *v, 1e-12));
        }
    }

    #[test]
    fn psnr_is_symmetric(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a = rng.gaussian(&[4, 4]).map(|v| 0.5 + 0.1 * v);
        let b = rng.gaussian(&[4, 4]).map(|v| 0.5 + 0.1 * v);
        let ab = psnr(&a, &b, 1.0).unwrap();
        let ba = psnr(&b, &a, 1.0).unwrap();
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn avgpool_preserves_global_mean(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let img = rng.gaussian(&[8, 8]);
        let pooled = avgpool(&img, 4).unwrap();
        prop_assert!(close(img.mean(), pooled.mean(), 1e-12));
    }

    #[test]
    fn masked_cost_with_full_mask_matches_plain_mse(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let target = rng.gaussian(&[7]);
        let x = rng.gaussian(&[7]);
        let plain = CostFunction::mse_to_target(target.clone());
        let masked = CostFunction::masked_mse(target, Tensor::full(&[7], 1.0)).unwrap();
        let (v1, g1) = plain.evaluate(&x).unwrap();
        let (v2, g2) = masked.evaluate(&x).unwrap();
        prop_assert_eq!(v1, v2);
        prop_assert_eq!(g1.data(), g2.data());
    }
}
