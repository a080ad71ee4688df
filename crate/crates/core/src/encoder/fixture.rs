//! Small seeded model and batch for gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{EncodeInput, FacetMode, InputKind, Model};
use super::params::EncoderShape;
use crate::corpus::{Facet, Label};
use crate::losses::QuadrupletIndex;

/// Shape of the gradient-check model: |V|=50, d=8, h=16.
pub const FIXTURE_SHAPE: EncoderShape = EncoderShape { vocab_size: 50, dim: 8, hidden: 16 };

fn tokens(rng: &mut ChaCha8Rng) -> Vec<u32> {
    let n = rng.gen_range(2..7);
    (0..n).map(|_| rng.gen_range(5..50)).collect()
}

/// Two policies, each with a facet pair, matching codes and an irrelevant
/// code, as encoder inputs together with triplet labels and quadruplets.
pub fn fixture_batch(seed: u64) -> (Vec<EncodeInput>, Vec<Label>, Vec<QuadrupletIndex>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    let mut labels = Vec::new();
    let mut quads = Vec::new();
    for p in 0..2u64 {
        let policy = tokens(&mut rng);
        let base = items.len();
        items.push(EncodeInput::new(format!("p{p}+"), policy.clone(), InputKind::Policy(Facet::Compliant)));
        items.push(EncodeInput::new(format!("c{p}+"), tokens(&mut rng), InputKind::Code));
        items.push(EncodeInput::new(format!("p{p}-"), policy, InputKind::Policy(Facet::Noncompliant)));
        items.push(EncodeInput::new(format!("c{p}-"), tokens(&mut rng), InputKind::Code));
        items.push(EncodeInput::new(format!("c{p}~"), tokens(&mut rng), InputKind::Code));
        labels.extend([Label(4 * p), Label(4 * p), Label(4 * p + 1), Label(4 * p + 1), Label(4 * p + 2)]);
        quads.push(QuadrupletIndex { facet: Facet::Compliant, anchor: base, matching: base + 1, opposite: base + 3, irrelevant: base + 4 });
        quads.push(QuadrupletIndex { facet: Facet::Noncompliant, anchor: base + 2, matching: base + 3, opposite: base + 1, irrelevant: base + 4 });
    }
    (items, labels, quads)
}

/// [`FIXTURE_SHAPE`] model with every tensor drawn at random: token
/// embeddings in ±0.05, dense weights and biases in ±1/sqrt(fan_in) and, in
/// masked mode, mask entries in (0.5, 1.5).
pub fn fixture_model(seed: u64, mode: FacetMode) -> Model<f64> {
    let mut model = Model::<f64>::init(FIXTURE_SHAPE, mode, "fixture", seed).expect("fixture shape is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB1A5);
    let p = &mut model.params;
    let mut fill = |xs: &mut [f64], bound: f64| xs.iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
    fill(&mut p.token_embeddings, 0.05);
    fill(&mut p.w1, 1.0 / 8f64.sqrt());
    fill(&mut p.w2, 1.0 / 16f64.sqrt());
    fill(&mut p.b1, 1.0 / 8f64.sqrt());
    fill(&mut p.b2, 1.0 / 16f64.sqrt());
    if mode == FacetMode::Masked {
        fill(&mut p.mask_beta, 0.5);
        p.mask_beta.iter_mut().for_each(|b| *b += 1.0);
    }
    model
}
