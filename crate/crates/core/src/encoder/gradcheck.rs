use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::forward::{evaluate_objective, forward_backward, Regularizers};
use super::model::{EncodeInput, Model};
use super::params::TENSOR_NAMES;
use super::EncoderError;
use crate::losses::EmbeddingLoss;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check only this many seeded random coordinates (all if `None` or if
    /// the model is smaller).
    pub sample: Option<usize>,
    pub seed: u64,
    /// Coordinates where both gradients are below this magnitude are skipped.
    pub floor: f64,
    pub regularizers: Regularizers,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-4, sample: None, seed: 0, floor: 1e-8, regularizers: Regularizers::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCoordinate {
    pub tensor: &'static str,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate holding `max_rel_error`, if any coordinate was compared.
    pub argmax: Option<ParamCoordinate>,
    pub analytic_at_argmax: f64,
    pub numeric_at_argmax: f64,
    pub compared: usize,
    pub skipped_small: usize,
    /// Coordinates whose `±epsilon` probes cross a hinge or ReLU kink.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

fn locate(flat: usize, lens: &[usize]) -> (usize, usize) {
    let mut rest = flat;
    for (t, &len) in lens.iter().enumerate() {
        if rest < len {
            return (t, rest);
        }
        rest -= len;
    }
    panic!("coordinate {flat} out of range")
}

/// Compares `forward_backward` against central finite differences.
///
/// `gradient_override` lets callers substitute the analytic gradient, which
/// is how a deliberately wrong gradient can be shown to fail the check.
pub fn grad_check(
    model: &Model<f64>,
    batch: &[EncodeInput],
    loss: &dyn EmbeddingLoss<f64>,
    options: &GradCheckOptions,
    gradient_override: Option<&dyn Fn(&mut super::GradientBundle<f64>)>,
) -> Result<GradCheckReport, EncoderError> {
    let reg = options.regularizers;
    let mut analytic = forward_backward(model, batch, loss, reg)?;
    if let Some(f) = gradient_override {
        f(&mut analytic.grads);
    }
    let base_sig = analytic.signature;
    let lens: Vec<usize> = model.params.tensors().iter().map(|t| t.len()).collect();
    let total: usize = lens.iter().sum();
    let coords: Vec<usize> = match options.sample {
        Some(n) if n < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            let mut v = sample(&mut rng, total, n).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    };

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        argmax: None,
        analytic_at_argmax: 0.0,
        numeric_at_argmax: 0.0,
        compared: 0,
        skipped_small: 0,
        skipped_kinks: 0,
    };
    let eps = options.epsilon;
    for flat in coords {
        let (t, i) = locate(flat, &lens);
        let original = probe.params.tensors()[t][i];
        probe.params.tensors_mut()[t][i] = original + eps;
        let plus = evaluate_objective(&probe, batch, loss, reg);
        probe.params.tensors_mut()[t][i] = original - eps;
        let minus = evaluate_objective(&probe, batch, loss, reg);
        probe.params.tensors_mut()[t][i] = original;
        let ((f_plus, sig_plus), (f_minus, sig_minus)) = match (plus, minus) {
            (Ok(p), Ok(m)) => (p, m),
            // A probe that lands on an undefined point (degenerate mask) is a kink.
            _ => {
                report.skipped_kinks += 1;
                continue;
            }
        };
        if sig_plus != base_sig || sig_minus != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let a = analytic.grads.tensors()[t][i];
        if a.abs() < options.floor && numeric.abs() < options.floor {
            report.skipped_small += 1;
            continue;
        }
        report.compared += 1;
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
        if rel > report.max_rel_error || report.argmax.is_none() {
            report.max_rel_error = rel;
            report.argmax = Some(ParamCoordinate { tensor: TENSOR_NAMES[t], index: i });
            report.analytic_at_argmax = a;
            report.numeric_at_argmax = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Facet;
    use crate::encoder::{EncoderShape, FacetMode, InputKind};
    use crate::losses::ConstantLoss;

    #[test]
    fn constant_loss_reports_zero() {
        let m = Model::<f64>::init(EncoderShape::new(12, 3, 4), FacetMode::Masked, "v", 2).unwrap();
        let batch = vec![EncodeInput::new("a", vec![5, 6], InputKind::Policy(Facet::Compliant))];
        let opts = GradCheckOptions { regularizers: Regularizers::NONE, ..Default::default() };
        let r = grad_check(&m, &batch, &ConstantLoss { value: 1.0, len: 1 }, &opts, None).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.compared, 0);
    }

    #[test]
    fn locate_walks_tensors() {
        assert_eq!(locate(0, &[2, 3]), (0, 0));
        assert_eq!(locate(2, &[2, 3]), (1, 0));
        assert_eq!(locate(4, &[2, 3]), (1, 2));
    }
}
