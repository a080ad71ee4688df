use super::model::{EncodeInput, FacetMode, InputKind, Model};
use super::params::{EncoderParams, GradientBundle, FACET_COUNT};
use super::EncoderError;
use crate::corpus::bpe::{FACET_COMPLIANT, FACET_NONCOMPLIANT};
use crate::corpus::Facet;
use crate::losses::{EmbeddingLoss, Fingerprint};
use crate::scalar::{dot, norm, Scalar};

/// Regularizer weights for the masked facet mode. They are ignored when
/// policies are facet-prefixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizers {
    pub lambda_w: f64,
    pub lambda_m: f64,
}

impl Default for Regularizers {
    fn default() -> Self {
        Self { lambda_w: 5e-4, lambda_m: 5e-4 }
    }
}

impl Regularizers {
    pub const NONE: Regularizers = Regularizers { lambda_w: 0.0, lambda_m: 0.0 };
}

/// Intermediate values of one encoding, kept for the backward pass.
struct Trace<T> {
    tokens: Vec<u32>,
    pooled: Vec<T>,
    act: Vec<T>,
    raw: Vec<T>,
    mask: Option<usize>,
    gated: Vec<T>,
    norm: T,
    out: Vec<T>,
}

fn facet_token(facet: Facet) -> u32 {
    match facet {
        Facet::Compliant => FACET_COMPLIANT,
        Facet::Noncompliant => FACET_NONCOMPLIANT,
    }
}

fn trace<T: Scalar>(params: &EncoderParams<T>, id: &str, tokens: &[u32], prefix: Option<Facet>, mask: Option<Facet>) -> Result<Trace<T>, EncoderError> {
    if tokens.is_empty() {
        return Err(EncoderError::EmptySequence(id.to_string()));
    }
    let shape = params.shape;
    let (d, h) = (shape.dim, shape.hidden);
    let mut seq = Vec::with_capacity(tokens.len() + 1);
    if let Some(f) = prefix {
        seq.push(facet_token(f));
    }
    seq.extend_from_slice(tokens);
    let mut pooled = vec![T::zero(); d];
    for &t in &seq {
        let t_us = t as usize;
        if t_us >= shape.vocab_size {
            return Err(EncoderError::TokenOutOfRange { item: id.to_string(), token: t, vocab_size: shape.vocab_size });
        }
        for (p, &e) in pooled.iter_mut().zip(&params.token_embeddings[t_us * d..(t_us + 1) * d]) {
            *p += e;
        }
    }
    let inv_len = T::one() / T::from_usize(seq.len()).expect("length fits");
    for p in pooled.iter_mut() {
        *p *= inv_len;
    }
    let act: Vec<T> = (0..h).map(|j| (dot(&params.w1[j * d..(j + 1) * d], &pooled) + params.b1[j]).tanh()).collect();
    let raw: Vec<T> = (0..d).map(|i| dot(&params.w2[i * h..(i + 1) * h], &act) + params.b2[i]).collect();
    let mask_idx = mask.map(Facet::index);
    let gated = match mask {
        Some(f) => {
            let column = params.mask_column(f.index());
            if column.iter().all(|&m| m <= T::zero()) {
                return Err(EncoderError::DegenerateMask(f));
            }
            raw.iter().zip(&column).map(|(&r, &m)| r * m).collect()
        }
        None => raw.clone(),
    };
    let n = norm(&gated);
    if !(n > T::zero()) {
        return Err(EncoderError::ZeroNorm(id.to_string()));
    }
    let out = gated.iter().map(|&g| g / n).collect();
    Ok(Trace { tokens: seq, pooled, act, raw, mask: mask_idx, gated, norm: n, out })
}

fn trace_item<T: Scalar>(params: &EncoderParams<T>, mode: FacetMode, input: &EncodeInput) -> Result<Trace<T>, EncoderError> {
    match (input.kind, mode) {
        (InputKind::Code | InputKind::Text, _) => trace(params, &input.id, &input.tokens, None, None),
        (InputKind::Policy(f), FacetMode::Prefixed) => trace(params, &input.id, &input.tokens, Some(f), None),
        (InputKind::Policy(f), FacetMode::Masked) => trace(params, &input.id, &input.tokens, None, Some(f)),
    }
}

pub(crate) fn encode_item<T: Scalar>(params: &EncoderParams<T>, mode: FacetMode, input: &EncodeInput) -> Result<Vec<T>, EncoderError> {
    Ok(trace_item(params, mode, input)?.out)
}

/// Mean-pool, project and L2-normalize a code token sequence.
pub fn encode_code<T: Scalar>(tokens: &[u32], params: &EncoderParams<T>) -> Result<Vec<T>, EncoderError> {
    Ok(trace(params, "code", tokens, None, None)?.out)
}

/// Encodes text without any facet conditioning.
pub fn encode_unfaceted<T: Scalar>(tokens: &[u32], params: &EncoderParams<T>) -> Result<Vec<T>, EncoderError> {
    Ok(trace(params, "text", tokens, None, None)?.out)
}

/// Prepends the reserved facet token and encodes like code.
pub fn encode_policy_prefixed<T: Scalar>(tokens: &[u32], facet: Facet, params: &EncoderParams<T>) -> Result<Vec<T>, EncoderError> {
    Ok(trace(params, "policy", tokens, Some(facet), None)?.out)
}

/// Gates the unfaceted pre-normalization vector with the facet's mask column.
pub fn encode_policy_masked<T: Scalar>(tokens: &[u32], facet: Facet, params: &EncoderParams<T>) -> Result<Vec<T>, EncoderError> {
    Ok(trace(params, "policy", tokens, None, Some(facet))?.out)
}

/// `(L_W, L_M)`: mean squared deviation of the raw projection norms from 1,
/// and the mean of the active mask entries `relu(beta)`.
pub fn mask_regularizers<T: Scalar>(params: &EncoderParams<T>, raw: &[Vec<T>]) -> (T, T) {
    let l_w = if raw.is_empty() {
        T::zero()
    } else {
        let s: T = raw.iter().map(|r| (norm(r) - T::one()).powi(2)).sum();
        s / T::from_usize(raw.len()).expect("length fits")
    };
    let active: T = params.mask_beta.iter().map(|&b| b.max(T::zero())).sum();
    let l_m = active / T::from_usize(params.mask_beta.len().max(1)).expect("length fits");
    (l_w, l_m)
}

/// Value and gradient of `task + lambda_w * L_W + lambda_m * L_M`.
#[derive(Debug, Clone)]
pub struct Objective<T> {
    pub loss: T,
    pub task_loss: T,
    pub l_w: T,
    pub l_m: T,
    pub grads: GradientBundle<T>,
    pub embeddings: Vec<Vec<T>>,
    /// Identifies the smooth piece of the objective the parameters lie on.
    pub signature: u64,
    pub no_valid_triplets: bool,
}

struct Evaluated<T> {
    traces: Vec<Trace<T>>,
    task_loss: T,
    l_w: T,
    l_m: T,
    loss: T,
    loss_grads: Vec<Vec<T>>,
    signature: u64,
    no_valid_triplets: bool,
    regularized: bool,
}

fn evaluate<T: Scalar>(
    model: &Model<T>,
    batch: &[EncodeInput],
    loss: &dyn EmbeddingLoss<T>,
    reg: Regularizers,
) -> Result<Evaluated<T>, EncoderError> {
    if batch.is_empty() {
        return Err(EncoderError::EmptyBatch);
    }
    let params = &model.params;
    let traces = batch.iter().map(|x| trace_item(params, model.facet_mode, x)).collect::<Result<Vec<_>, _>>()?;
    let embeddings: Vec<Vec<T>> = traces.iter().map(|t| t.out.clone()).collect();
    let value = loss.evaluate(&embeddings)?;
    let regularized = model.facet_mode == FacetMode::Masked && (reg.lambda_w > 0.0 || reg.lambda_m > 0.0);
    let (l_w, l_m) = if regularized {
        let raw: Vec<Vec<T>> = traces.iter().map(|t| t.raw.clone()).collect();
        mask_regularizers(params, &raw)
    } else {
        (T::zero(), T::zero())
    };
    let total = value.value + T::lit(reg.lambda_w) * l_w + T::lit(reg.lambda_m) * l_m;
    if !total.is_finite() {
        let mut bad: Vec<String> = traces
            .iter()
            .zip(batch)
            .filter(|(t, _)| !t.out.iter().all(|x| x.is_finite()) || !t.raw.iter().all(|x| x.is_finite()))
            .map(|(_, x)| x.id.clone())
            .collect();
        if bad.is_empty() {
            bad = batch.iter().map(|x| x.id.clone()).collect();
        }
        return Err(EncoderError::NonFiniteLoss(bad));
    }
    let mut fp = Fingerprint::new();
    fp.push(value.signature);
    let used_masks: Vec<usize> = {
        let mut m: Vec<usize> = traces.iter().filter_map(|t| t.mask).collect();
        m.sort_unstable();
        m.dedup();
        m
    };
    let d = params.shape.dim;
    for k in 0..FACET_COUNT {
        if used_masks.contains(&k) || (regularized && reg.lambda_m > 0.0) {
            for i in 0..d {
                fp.push((params.mask_beta[i * FACET_COUNT + k] > T::zero()) as u64);
            }
        }
    }
    Ok(Evaluated {
        traces,
        task_loss: value.value,
        l_w,
        l_m,
        loss: total,
        loss_grads: value.grads,
        signature: fp.finish(),
        no_valid_triplets: value.no_valid_triplets,
        regularized,
    })
}

/// Objective value and smooth-piece signature without gradients.
pub fn evaluate_objective<T: Scalar>(
    model: &Model<T>,
    batch: &[EncodeInput],
    loss: &dyn EmbeddingLoss<T>,
    reg: Regularizers,
) -> Result<(T, u64), EncoderError> {
    let e = evaluate(model, batch, loss, reg)?;
    Ok((e.loss, e.signature))
}

/// Encodes `batch`, evaluates `loss` on the embeddings (plus the mask
/// regularizers in masked mode) and back-propagates into every parameter.
pub fn forward_backward<T: Scalar>(
    model: &Model<T>,
    batch: &[EncodeInput],
    loss: &dyn EmbeddingLoss<T>,
    reg: Regularizers,
) -> Result<Objective<T>, EncoderError> {
    let ev = evaluate(model, batch, loss, reg)?;
    let params = &model.params;
    let shape = params.shape;
    let (d, h) = (shape.dim, shape.hidden);
    let mut grads = GradientBundle::zeros(shape);
    let lambda_w = T::lit(reg.lambda_w);
    let batch_len = T::from_usize(batch.len()).expect("length fits");

    if ev.regularized && reg.lambda_m > 0.0 {
        let w = T::lit(reg.lambda_m) / T::from_usize(params.mask_beta.len()).expect("length fits");
        for (g, &b) in grads.mask_beta.iter_mut().zip(&params.mask_beta) {
            if b > T::zero() {
                *g += w;
            }
        }
    }

    let mut d_gated = vec![T::zero(); d];
    let mut d_raw = vec![T::zero(); d];
    let mut d_act = vec![T::zero(); h];
    let mut d_pooled = vec![T::zero(); d];
    for (t, d_out) in ev.traces.iter().zip(&ev.loss_grads) {
        // out = g / |g|  =>  dL/dg = (dL/dout - out * (out . dL/dout)) / |g|
        let proj = dot(&t.out, d_out);
        for i in 0..d {
            d_gated[i] = (d_out[i] - t.out[i] * proj) / t.norm;
        }
        match t.mask {
            Some(k) => {
                for i in 0..d {
                    let b = params.mask_beta[i * FACET_COUNT + k];
                    if b > T::zero() {
                        d_raw[i] = d_gated[i] * b;
                        grads.mask_beta[i * FACET_COUNT + k] += d_gated[i] * t.raw[i];
                    } else {
                        d_raw[i] = T::zero();
                    }
                }
            }
            None => d_raw.copy_from_slice(&d_gated),
        }
        debug_assert_eq!(t.gated.len(), d);
        if ev.regularized && reg.lambda_w > 0.0 {
            let n = norm(&t.raw);
            if n > T::zero() {
                let c = lambda_w * T::lit(2.0) * (n - T::one()) / (n * batch_len);
                for i in 0..d {
                    d_raw[i] += c * t.raw[i];
                }
            }
        }
        for i in 0..d {
            let g = d_raw[i];
            grads.b2[i] += g;
            if g != T::zero() {
                let row = &mut grads.w2[i * h..(i + 1) * h];
                for (w, &a) in row.iter_mut().zip(&t.act) {
                    *w += g * a;
                }
            }
        }
        d_act.iter_mut().for_each(|x| *x = T::zero());
        for i in 0..d {
            let g = d_raw[i];
            if g != T::zero() {
                for (da, &w) in d_act.iter_mut().zip(&params.w2[i * h..(i + 1) * h]) {
                    *da += g * w;
                }
            }
        }
        d_pooled.iter_mut().for_each(|x| *x = T::zero());
        for j in 0..h {
            let dz = d_act[j] * (T::one() - t.act[j] * t.act[j]);
            grads.b1[j] += dz;
            if dz != T::zero() {
                let row = &mut grads.w1[j * d..(j + 1) * d];
                for (w, &p) in row.iter_mut().zip(&t.pooled) {
                    *w += dz * p;
                }
                for (dp, &w) in d_pooled.iter_mut().zip(&params.w1[j * d..(j + 1) * d]) {
                    *dp += dz * w;
                }
            }
        }
        let inv_len = T::one() / T::from_usize(t.tokens.len()).expect("length fits");
        for &tok in &t.tokens {
            let row = &mut grads.token_embeddings[tok as usize * d..(tok as usize + 1) * d];
            for (g, &dp) in row.iter_mut().zip(&d_pooled) {
                *g += dp * inv_len;
            }
        }
    }

    Ok(Objective {
        loss: ev.loss,
        task_loss: ev.task_loss,
        l_w: ev.l_w,
        l_m: ev.l_m,
        grads,
        embeddings: ev.traces.into_iter().map(|t| t.out).collect(),
        signature: ev.signature,
        no_valid_triplets: ev.no_valid_triplets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderShape;
    use crate::losses::{ConstantLoss, LossError, LossValue};

    fn model(mode: FacetMode) -> Model<f64> {
        Model::init(EncoderShape::new(30, 4, 6), mode, "v", 1).unwrap()
    }

    #[test]
    fn unit_norm_and_deterministic() {
        let m = model(FacetMode::Prefixed);
        let a = m.encode_code(&[7, 8, 9]).unwrap();
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a, m.encode_code(&[7, 8, 9]).unwrap());
        assert_eq!(a, m.encode_code(&[9, 7, 8]).unwrap());
    }

    #[test]
    fn empty_and_out_of_range_inputs() {
        let m = model(FacetMode::Prefixed);
        assert!(matches!(m.encode_code(&[]), Err(EncoderError::EmptySequence(_))));
        assert!(matches!(m.encode_code(&[30]), Err(EncoderError::TokenOutOfRange { token: 30, .. })));
    }

    #[test]
    fn identity_mask_matches_unfaceted() {
        let m = model(FacetMode::Masked);
        let toks = [5, 11, 12];
        assert_eq!(m.encode_policy(&toks, Facet::Compliant).unwrap(), encode_unfaceted(&toks, &m.params).unwrap());
    }

    #[test]
    fn negative_beta_zeroes_dimensions() {
        let mut m = model(FacetMode::Masked);
        m.params.mask_beta[0] = -1.0;
        m.params.mask_beta[2 * FACET_COUNT] = -0.5;
        let e = m.encode_policy(&[5, 6], Facet::Compliant).unwrap();
        assert_eq!(e[0], 0.0);
        assert_eq!(e[2], 0.0);
        assert!((norm(&e) - 1.0).abs() < 1e-12);
        for v in m.params.mask_beta.iter_mut().skip(1).step_by(FACET_COUNT) {
            *v = 0.0;
        }
        assert!(matches!(m.encode_policy(&[5], Facet::Noncompliant), Err(EncoderError::DegenerateMask(Facet::Noncompliant))));
    }

    #[test]
    fn orthogonal_masks_give_orthogonal_facets() {
        let mut m = model(FacetMode::Masked);
        m.params.mask_beta = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let p = m.encode_policy(&[5, 6], Facet::Compliant).unwrap();
        let n = m.encode_policy(&[5, 6], Facet::Noncompliant).unwrap();
        assert_eq!(dot(&p, &n), 0.0);
    }

    #[test]
    fn prefixed_facets_coincide_with_zero_bias_and_facet_rows() {
        let mut m = model(FacetMode::Prefixed);
        let d = m.shape().dim;
        for f in [FACET_COMPLIANT, FACET_NONCOMPLIANT] {
            m.params.token_embeddings[f as usize * d..(f as usize + 1) * d].fill(0.0);
        }
        m.params.b1.fill(0.0);
        m.params.b2.fill(0.0);
        let p = m.encode_policy(&[7, 8], Facet::Compliant).unwrap();
        let n = m.encode_policy(&[7, 8], Facet::Noncompliant).unwrap();
        for (a, b) in p.iter().zip(&n) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn regularizer_values() {
        let mut p = EncoderParams::<f64>::zeros(EncoderShape::new(3, 4, 2));
        p.mask_beta.fill(1.0);
        let (l_w, l_m) = mask_regularizers(&p, &[vec![1.0, 0.0, 0.0, 0.0], vec![0.6, 0.8, 0.0, 0.0]]);
        assert!(l_w.abs() < 1e-15);
        assert_eq!(l_m, 1.0);
        p.mask_beta.fill(-0.2);
        assert_eq!(mask_regularizers(&p, &[]).1, 0.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let m = model(FacetMode::Prefixed);
        let batch = vec![EncodeInput::new("a", vec![5, 6], InputKind::Code), EncodeInput::new("b", vec![7], InputKind::Policy(Facet::Compliant))];
        let obj = forward_backward(&m, &batch, &ConstantLoss { value: 2.0, len: 2 }, Regularizers::NONE).unwrap();
        assert_eq!(obj.loss, 2.0);
        assert_eq!(obj.grads.max_abs(), 0.0);
    }

    struct NanLoss;

    impl EmbeddingLoss<f64> for NanLoss {
        fn batch_len(&self) -> usize {
            1
        }

        fn evaluate(&self, e: &[Vec<f64>]) -> Result<LossValue<f64>, LossError> {
            let mut v = LossValue::zeros(e.len(), e[0].len());
            v.value = f64::NAN;
            Ok(v)
        }
    }

    #[test]
    fn non_finite_loss_names_items() {
        let m = model(FacetMode::Prefixed);
        let batch = vec![EncodeInput::new("item-7", vec![5], InputKind::Code)];
        match forward_backward(&m, &batch, &NanLoss, Regularizers::NONE) {
            Err(EncoderError::NonFiniteLoss(ids)) => assert_eq!(ids, vec!["item-7".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
