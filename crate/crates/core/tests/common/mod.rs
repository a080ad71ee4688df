//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use p2c::encoder::{grad_check, FacetMode, GradCheckOptions};
use p2c::losses::{BmtLoss, EmbeddingLoss, MarginConfig, MiningStrategy, QuadrupletLoss};
use p2c::trainer::LossMode;

pub use p2c::encoder::{fixture_batch as gradient_batch, fixture_model as gradient_model};

#[derive(Debug, Clone)]
pub struct GradientCase {
    pub facet_mode: FacetMode,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub max_rel_error: f64,
    pub compared: usize,
}

/// Runs the central-difference check on 20 seeds for every loss and facet
/// mode; BMT cycles through the mining strategies.
pub fn gradient_cases() -> Vec<GradientCase> {
    let margins = MarginConfig { alpha1: 0.5, alpha2: 1.0, alpha: 1.0 };
    let mut out = Vec::new();
    for facet_mode in FacetMode::ALL {
        for seed in 0..20u64 {
            let model = gradient_model(seed, facet_mode);
            let (items, labels, quads) = gradient_batch(seed);
            for loss_mode in LossMode::ALL {
                let loss: Box<dyn EmbeddingLoss<f64>> = match loss_mode {
                    LossMode::Quadruplet => Box::new(QuadrupletLoss::new(quads.clone(), items.len(), &margins)),
                    LossMode::Bmt => Box::new(BmtLoss::new(labels.clone(), 1.0, MiningStrategy::ALL[seed as usize % 4])),
                };
                let r = grad_check(&model, &items, loss.as_ref(), &GradCheckOptions::default(), None).unwrap();
                out.push(GradientCase { facet_mode, loss_mode, seed, max_rel_error: r.max_rel_error, compared: r.compared });
            }
        }
    }
    out
}
