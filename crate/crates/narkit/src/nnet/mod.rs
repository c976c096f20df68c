//! The repair network: encoder, repair-action predictor, inter-word
//! dependency extractor with attention fusion, two-stage parallel decoder,
//! and the joint loss with exact reverse-mode gradients.

pub mod checkpoint;
pub mod model;
pub mod tape;
pub mod tensor;

pub use model::{
    decode_final_tokens, forward_teacher, loss_joint, ForwardTrace, Labels, LossParts,
    TwoStageDecode,
};
pub use tape::{Graph, NodeId};
pub use tensor::Tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub use crate::editscript::N_ACTIONS;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnetError {
    #[error("sequence of {len} tokens exceeds the maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("target expansion is empty (all-delete prediction)")]
    EmptyTarget,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Architecture and decoding hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// k: the second decoding stage runs the last k decoder layers; the
    /// first stage runs the preceding decoder_layers - k.
    pub decoder_split: usize,
    pub conv_kernel: usize,
    pub max_repair_length: usize,
    pub confidence_threshold: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub max_seq_len: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            encoder_layers: 4,
            decoder_layers: 4,
            decoder_split: 2,
            conv_kernel: 3,
            max_repair_length: 10,
            confidence_threshold: 0.7,
            alpha: 0.1,
            lambda: 0.1,
            max_seq_len: 512,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnetError> {
        if self.decoder_split == 0 || self.decoder_split >= self.decoder_layers {
            return Err(NnetError::InvalidConfig(format!(
                "decoder_split must satisfy 1 <= k < decoder_layers ({} vs {})",
                self.decoder_split, self.decoder_layers
            )));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(NnetError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return Err(NnetError::InvalidConfig(format!(
                "confidence_threshold {} outside (0, 1)",
                self.confidence_threshold
            )));
        }
        if self.conv_kernel % 2 == 0 || self.conv_kernel == 0 {
            return Err(NnetError::InvalidConfig("conv_kernel must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnetError::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn length_classes(&self) -> usize {
        self.max_repair_length + 1
    }

    pub fn ffn_hidden(&self) -> usize {
        4 * self.d_model
    }
}

/// Sizes that depend on the data rather than the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    /// Dependency classes, including the fallback slot.
    pub node_types: usize,
}

/// All learnable weights, keyed by stable names so that checkpointing and
/// optimizer state iterate deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub tensors: BTreeMap<String, Tensor>,
}

const INIT_STD: f64 = 0.05;

fn gauss_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            // Box-Muller
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            INIT_STD * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    Tensor::from_vec(shape, data)
}

fn init_attn(tensors: &mut BTreeMap<String, Tensor>, prefix: &str, d: usize, rng: &mut ChaCha8Rng) {
    for w in ["wq", "wk", "wv", "wo"] {
        tensors.insert(format!("{prefix}.{w}"), gauss_tensor(&[d, d], rng));
    }
    for b in ["bq", "bk", "bv", "bo"] {
        tensors.insert(format!("{prefix}.{b}"), Tensor::zeros(&[1, d]));
    }
}

fn init_ln(tensors: &mut BTreeMap<String, Tensor>, prefix: &str, d: usize) {
    tensors.insert(format!("{prefix}.g"), ones(&[1, d]));
    tensors.insert(format!("{prefix}.b"), Tensor::zeros(&[1, d]));
}

fn init_ffn(tensors: &mut BTreeMap<String, Tensor>, prefix: &str, d: usize, h: usize, rng: &mut ChaCha8Rng) {
    tensors.insert(format!("{prefix}.w1"), gauss_tensor(&[d, h], rng));
    tensors.insert(format!("{prefix}.b1"), Tensor::zeros(&[1, h]));
    tensors.insert(format!("{prefix}.w2"), gauss_tensor(&[h, d], rng));
    tensors.insert(format!("{prefix}.b2"), Tensor::zeros(&[1, d]));
}

impl ModelParams {
    /// Seeded Gaussian init (std 0.05); layer-norm gains start at 1.
    pub fn init(config: &ModelConfig, dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let h = config.ffn_hidden();
        let mut t = BTreeMap::new();

        t.insert("embed.tok".into(), gauss_tensor(&[dims.vocab_size, d], &mut rng));
        t.insert("embed.pos".into(), gauss_tensor(&[config.max_seq_len, d], &mut rng));

        for l in 0..config.encoder_layers {
            init_attn(&mut t, &format!("enc.{l}.attn"), d, &mut rng);
            init_ln(&mut t, &format!("enc.{l}.attn_ln"), d);
            init_ffn(&mut t, &format!("enc.{l}.ffn"), d, h, &mut rng);
            init_ln(&mut t, &format!("enc.{l}.ffn_ln"), d);
        }

        t.insert("pred.conv.w".into(), gauss_tensor(&[config.conv_kernel * d, d], &mut rng));
        t.insert("pred.conv.b".into(), Tensor::zeros(&[1, d]));
        t.insert("pred.act.w".into(), gauss_tensor(&[d, N_ACTIONS], &mut rng));
        t.insert("pred.act.b".into(), Tensor::zeros(&[1, N_ACTIONS]));
        t.insert("pred.len.w".into(), gauss_tensor(&[d, config.length_classes()], &mut rng));
        t.insert("pred.len.b".into(), Tensor::zeros(&[1, config.length_classes()]));

        init_attn(&mut t, "copy.attn", d, &mut rng);
        init_ln(&mut t, "copy.ln", d);

        t.insert("ext.wq".into(), gauss_tensor(&[d, d], &mut rng));
        t.insert("ext.wk".into(), gauss_tensor(&[d, d], &mut rng));
        t.insert("ext.wv".into(), gauss_tensor(&[d, d], &mut rng));
        t.insert("ext.dep.w".into(), gauss_tensor(&[d, dims.node_types * d], &mut rng));
        t.insert("ext.dep.b".into(), Tensor::zeros(&[1, dims.node_types * d]));

        for l in 0..config.decoder_layers {
            init_attn(&mut t, &format!("dec.{l}.self"), d, &mut rng);
            init_ln(&mut t, &format!("dec.{l}.self_ln"), d);
            init_attn(&mut t, &format!("dec.{l}.cross"), d, &mut rng);
            init_ln(&mut t, &format!("dec.{l}.cross_ln"), d);
            init_ffn(&mut t, &format!("dec.{l}.ffn"), d, h, &mut rng);
            init_ln(&mut t, &format!("dec.{l}.ffn_ln"), d);
        }

        t.insert("out.w".into(), gauss_tensor(&[d, dims.vocab_size], &mut rng));
        t.insert("out.b".into(), Tensor::zeros(&[1, dims.vocab_size]));

        ModelParams { dims, tensors: t }
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }
}

fn ones(shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, vec![1.0; len])
}

/// Deterministic dropout spec for training-mode forward passes. The mask is
/// a pure function of the seed and tensor size, so two evaluations at the
/// same seed see the same mask.
#[derive(Debug, Clone, Copy)]
pub struct DropoutSpec {
    pub rate: f64,
    pub seed: u64,
}

impl DropoutSpec {
    pub fn mask(&self, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let scale = 1.0 / (1.0 - self.rate);
        (0..len)
            .map(|_| if rng.gen_range(0.0..1.0) < self.rate { 0.0 } else { scale })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_split() {
        let bad = ModelConfig { decoder_split: 4, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { decoder_split: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_rejects_threshold_outside_unit_interval() {
        let bad = ModelConfig { confidence_threshold: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { confidence_threshold: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let config = ModelConfig { d_model: 8, max_seq_len: 16, ..Default::default() };
        let dims = ModelDims { vocab_size: 11, node_types: 5 };
        let a = ModelParams::init(&config, dims, 3);
        let b = ModelParams::init(&config, dims, 3);
        assert_eq!(a, b);
        assert!(a.all_finite());
        assert!(a.param_count() > 0);
    }

    #[test]
    fn dropout_mask_is_deterministic() {
        let spec = DropoutSpec { rate: 0.5, seed: 9 };
        assert_eq!(spec.mask(64), spec.mask(64));
        assert!(spec.mask(64).iter().any(|&v| v == 0.0));
        assert!(spec.mask(64).iter().any(|&v| v == 2.0));
    }
}
