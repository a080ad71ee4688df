mod common;

use common::{gradient_batch, gradient_cases, gradient_model};
use p2c::encoder::{grad_check, FacetMode, GradCheckOptions};
use p2c::losses::{BmtLoss, MiningStrategy};

#[test]
fn analytic_gradients_match_central_differences() {
    let cases = gradient_cases();
    assert_eq!(cases.len(), 80);
    for c in &cases {
        assert!(c.compared > 0, "{c:?} compared nothing");
        assert!(c.max_rel_error <= 1e-4, "{c:?}");
    }
}

#[test]
fn perturbed_gradient_is_caught() {
    let model = gradient_model(3, FacetMode::Masked);
    let (items, labels, _) = gradient_batch(3);
    let loss = BmtLoss::new(labels, 1.0, MiningStrategy::BatchAll);
    let bump = |g: &mut p2c::encoder::GradientBundle<f64>| g.w1[0] += 1e-2;
    let r = grad_check(&model, &items, &loss, &GradCheckOptions::default(), Some(&bump)).unwrap();
    assert!(r.max_rel_error > 1e-3);
    assert_eq!(r.argmax.unwrap().tensor, "w1");
}

/// Freshly initialized encoders have a steep first layer, so the check
/// uses a smaller step there.
#[test]
fn gradients_hold_at_initialization() {
    let margins = p2c::losses::MarginConfig { alpha1: 0.5, alpha2: 1.0, alpha: 1.0 };
    let options = GradCheckOptions { epsilon: 1e-5, ..GradCheckOptions::default() };
    for mode in FacetMode::ALL {
        for seed in 0..5 {
            let model = p2c::encoder::Model::<f64>::init(p2c::encoder::EncoderShape::new(50, 8, 16), mode, "v", seed).unwrap();
            let (items, labels, quads) = gradient_batch(seed);
            let quad = p2c::losses::QuadrupletLoss::new(quads, items.len(), &margins);
            let bmt = BmtLoss::new(labels, 1.0, MiningStrategy::BatchAll);
            for loss in [&quad as &dyn p2c::losses::EmbeddingLoss<f64>, &bmt] {
                let r = grad_check(&model, &items, loss, &options, None).unwrap();
                assert!(r.max_rel_error <= 1e-4, "{mode} {seed}: {r:?}");
            }
        }
    }
}
