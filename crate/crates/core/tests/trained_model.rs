//! Behavior of actually-trained 2-D flow models: conditioning, reflow
//! straightening, x̂0 accuracy, and the gradient-similarity trend.

use std::sync::OnceLock;

use flowsteer_core::analysis::{gradient_similarity, straightness};
use flowsteer_core::dataset::{gauss_mix_center, generate, DatasetSpec};
use flowsteer_core::fields::Velocity;
use flowsteer_core::flow::{
    euler_sample, reflow, train, CondSpec, TrainConfig, TrainData, VelocityField,
};
use flowsteer_core::guidance::{CostFunction, SteeringConfig};
use flowsteer_core::optim::OptimizerKind;
use flowsteer_core::tensor::Tensor;
use flowsteer_core::Rng;

struct MixModels {
    one_rect: VelocityField,
    two_rect: VelocityField,
}

fn mix_models() -> &'static MixModels {
    static MODELS: OnceLock<MixModels> = OnceLock::new();
    MODELS.get_or_init(|| {
        let mut rng = Rng::new(2024);
        let data = generate(
            &DatasetSpec::GaussMix2d {
                modes: 8,
                radius: 4.0,
                sigma: 0.3,
            },
            4096,
            &mut rng,
        )
        .unwrap();
        let mut model =
            VelocityField::new(2, 8, &[64, 64], Some(CondSpec { classes: 8, dim: 8 }), &mut rng)
                .unwrap();
        let cfg = TrainConfig {
            steps: 1500,
            batch: 128,
            lr: 2e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        };
        let train_data = TrainData::Independent {
            x0: data.data.clone(),
            labels: data.labels.clone(),
        };
        train(&mut model, &train_data, &cfg, &mut rng).unwrap();
        let one_rect = model.clone();

        let pairs = reflow(&model, &mut rng, 2048, 50).unwrap();
        let cfg2 = TrainConfig {
            steps: 1200,
            batch: 128,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        };
        train(&mut model, &pairs, &cfg2, &mut rng).unwrap();
        MixModels {
            one_rect,
            two_rect: model,
        }
    })
}

fn nearest_mode(x: &Tensor) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for m in 0..8 {
        let (cx, cy) = gauss_mix_center(m, 8, 4.0);
        let d = (x.data()[0] - cx).powi(2) + (x.data()[1] - cy).powi(2);
        if d < best_d {
            best_d = d;
            best = m;
        }
    }
    best
}

#[test]
fn conditional_sampling_lands_in_the_requested_mode() {
    let models = mix_models();
    let mut rng = Rng::new(7);
    let mut hits = 0;
    let total = 200;
    for i in 0..total {
        let label = i % 8;
        let x1 = rng.gaussian(&[2]);
        let (x0, _) = euler_sample(&models.two_rect, &x1, 50, Some(label)).unwrap();
        if nearest_mode(&x0) == label {
            hits += 1;
        }
    }
    let rate = hits as f64 / total as f64;
    assert!(rate >= 0.95, "mode hit rate {rate}");
}

#[test]
fn reflow_strictly_improves_straightness() {
    let models = mix_models();
    let mut rng_a = Rng::new(99);
    let mut rng_b = Rng::new(99);
    let s1 = straightness(&models.one_rect, &mut rng_a, 64, 50, Some(0)).unwrap();
    let s2 = straightness(&models.two_rect, &mut rng_b, 64, 50, Some(0)).unwrap();
    assert!(
        s2 < s1,
        "2-rectified straightness {s2} not below 1-rectified {s1}"
    );
}

#[test]
fn estimate_x0_tracks_the_integrated_endpoint() {
    let models = mix_models();
    let model = &models.two_rect;
    let mut rng = Rng::new(31);
    let steps = 50usize;
    let dt = 1.0 / steps as f64;
    let label = Some(3usize);
    // walk half the trajectory to get a genuine x_t at t = 0.5
    let mut x = rng.gaussian(&[2]);
    for k in 0..steps / 2 {
        let t = (steps - k) as f64 / steps as f64;
        let v = model.eval(&x, t, label).unwrap();
        x = x.add_scaled(&v, dt).unwrap();
    }
    let x_hat0 = flowsteer_core::flow::estimate_x0(model, &x, 0.5, label).unwrap();
    // finish the integration from t = 0.5
    let mut y = x.clone();
    for k in steps / 2..steps {
        let t = (steps - k) as f64 / steps as f64;
        let v = model.eval(&y, t, label).unwrap();
        y = y.add_scaled(&v, dt).unwrap();
    }
    let gap = x_hat0.sub(&y).unwrap().norm();
    assert!(
        gap < 0.1 * x_hat0.norm(),
        "x̂0 {x_hat0:?} vs endpoint {y:?}: gap {gap}"
    );
}

#[test]
fn gradient_similarity_improves_toward_t_zero() {
    let models = mix_models();
    let model = &models.two_rect;
    let mut rng = Rng::new(41);
    let steps = 40usize;
    let target = {
        let (cx, cy) = gauss_mix_center(2, 8, 4.0);
        Tensor::from_vec(vec![cx, cy])
    };
    let cost = CostFunction::mse_to_target(target);
    let cfg = SteeringConfig {
        nfe: steps,
        scale: 0.0,
        ..Default::default()
    };
    let x1 = rng.gaussian(&[2]);
    let report = gradient_similarity(model, &x1, &cost, &cfg, Some(2)).unwrap();
    let first = report.mean_cosine(0..steps / 4).unwrap();
    let last = report.mean_cosine(3 * steps / 4..steps).unwrap();
    assert!(
        last > first,
        "cosine did not improve toward t=0: first quarter {first}, last quarter {last}"
    );
    let final_cos = report.cosines.last().unwrap().unwrap();
    assert!(final_cos > 0.99, "final cosine {final_cos}");
}
