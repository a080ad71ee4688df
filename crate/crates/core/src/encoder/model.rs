use std::fmt;
use std::path::Path;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::forward::{encode_item, encode_code, encode_policy_masked, encode_policy_prefixed};
use super::params::{EncoderParams, EncoderShape};
use super::EncoderError;
use crate::corpus::bpe::hex_digest;
use crate::corpus::{Content, Facet, LabeledItem, Vocabulary};
use crate::scalar::Scalar;

pub const MODEL_FORMAT: u32 = 1;

/// How a policy is conditioned on its facet.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetMode {
    /// Prepend a reserved facet token and encode as plain text.
    #[default]
    Prefixed,
    /// Gate the unfaceted pre-normalization vector with `relu(beta[:, k])`.
    Masked,
}

impl FacetMode {
    pub const ALL: [FacetMode; 2] = [FacetMode::Prefixed, FacetMode::Masked];

    pub fn as_str(self) -> &'static str {
        match self {
            FacetMode::Prefixed => "prefixed",
            FacetMode::Masked => "masked",
        }
    }
}

impl fmt::Display for FacetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FacetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prefixed" => Ok(FacetMode::Prefixed),
            "masked" => Ok(FacetMode::Masked),
            other => Err(format!("unknown facet mode {other:?}")),
        }
    }
}

/// What a token sequence represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputKind {
    Code,
    /// Text without a facet (documentation passages, review comments).
    Text,
    Policy(Facet),
}

/// One item of an encoder batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodeInput {
    pub id: String,
    pub tokens: Vec<u32>,
    pub kind: InputKind,
}

impl EncodeInput {
    pub fn new(id: impl Into<String>, tokens: Vec<u32>, kind: InputKind) -> Self {
        Self { id: id.into(), tokens, kind }
    }

    pub fn from_labeled(item: &LabeledItem, vocab: &Vocabulary) -> Self {
        let kind = match &item.content {
            Content::Code { .. } => InputKind::Code,
            Content::Text { facet: Some(f), .. } => InputKind::Policy(*f),
            Content::Text { facet: None, .. } => InputKind::Text,
        };
        Self { id: item.source_id.clone(), tokens: vocab.tokenize(item.content.as_str()), kind }
    }
}

/// Encoder parameters together with the facet strategy and the vocabulary
/// they were trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub params: EncoderParams<T>,
    pub facet_mode: FacetMode,
    pub vocab_hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: u32,
    d: usize,
    h: usize,
    vocab_size: usize,
    vocab_hash: String,
    facet_mode: FacetMode,
    /// Always `base64-f64le`.
    encoding: String,
    /// Tensors concatenated in the order of [`super::TENSOR_NAMES`].
    data: String,
}

impl<T: Scalar> Model<T> {
    pub fn new(params: EncoderParams<T>, facet_mode: FacetMode, vocab_hash: impl Into<String>) -> Self {
        Self { params, facet_mode, vocab_hash: vocab_hash.into() }
    }

    pub fn init(shape: EncoderShape, facet_mode: FacetMode, vocab_hash: impl Into<String>, seed: u64) -> Result<Self, EncoderError> {
        Ok(Self::new(EncoderParams::init(shape, seed)?, facet_mode, vocab_hash))
    }

    pub fn shape(&self) -> EncoderShape {
        self.params.shape
    }

    pub fn encode(&self, input: &EncodeInput) -> Result<Vec<T>, EncoderError> {
        encode_item(&self.params, self.facet_mode, input)
    }

    pub fn encode_code(&self, tokens: &[u32]) -> Result<Vec<T>, EncoderError> {
        encode_code(tokens, &self.params)
    }

    pub fn encode_policy(&self, tokens: &[u32], facet: Facet) -> Result<Vec<T>, EncoderError> {
        match self.facet_mode {
            FacetMode::Prefixed => encode_policy_prefixed(tokens, facet, &self.params),
            FacetMode::Masked => encode_policy_masked(tokens, facet, &self.params),
        }
    }

    pub fn to_json(&self) -> String {
        let mut bytes = Vec::with_capacity(self.shape().param_count() * 8);
        for t in self.params.tensors() {
            for &x in t {
                bytes.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
        let file = ModelFile {
            format: MODEL_FORMAT,
            d: self.shape().dim,
            h: self.shape().hidden,
            vocab_size: self.shape().vocab_size,
            vocab_hash: self.vocab_hash.clone(),
            facet_mode: self.facet_mode,
            encoding: "base64-f64le".into(),
            data: STANDARD.encode(bytes),
        };
        serde_json::to_string(&file).expect("model file serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, EncoderError> {
        let file: ModelFile = serde_json::from_str(json).map_err(|e| EncoderError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(EncoderError::Format(format!("unsupported format {}", file.format)));
        }
        if file.encoding != "base64-f64le" {
            return Err(EncoderError::Format(format!("unsupported encoding {:?}", file.encoding)));
        }
        let bytes = STANDARD.decode(file.data.as_bytes()).map_err(|e| EncoderError::Format(e.to_string()))?;
        let shape = EncoderShape::new(file.vocab_size, file.d, file.h);
        if bytes.len() != shape.param_count() * 8 {
            return Err(EncoderError::Format(format!(
                "expected {} parameters, found {} bytes",
                shape.param_count(),
                bytes.len()
            )));
        }
        let mut values = bytes.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))));
        let mut params = EncoderParams::zeros(shape);
        for t in params.tensors_mut() {
            for x in t.iter_mut() {
                *x = values.next().expect("length checked");
            }
        }
        params.validate()?;
        Ok(Self::new(params, file.facet_mode, file.vocab_hash))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the serialized model file.
    pub fn hash(&self) -> String {
        hex_digest(self.to_json().as_bytes())
    }
}
