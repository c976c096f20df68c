//! Mini-batch joint training with Adam, linear warm-up, gradient clipping,
//! deterministic shuffling, and per-epoch validation.
//!
//! Determinism contract: the same seed yields bit-identical parameters.
//! Batch items are forwarded/backwarded in a fixed number of parallel
//! shards and shard sums are merged in shard order, so the accumulation
//! order never depends on thread scheduling.

use crate::corpus::Vocabulary;
use crate::editscript::RepairAction;
use crate::infer;
use crate::nnet::model::{
    encode, extract_dependencies, forward_teacher, predict_actions, expand_to_target, Labels,
    ParamNodes,
};
use crate::nnet::{DropoutSpec, Graph, ModelConfig, ModelParams, NnetError, Tensor};
use crate::preprocess::PreprocessRecord;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;
use thiserror::Error;

/// Number of parallel gradient shards per batch; fixed so that float
/// accumulation order is machine-independent.
const GRAD_SHARDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Peak learning rate after linear warm-up.
    pub peak_lr: f64,
    /// Fraction of total steps spent warming up.
    pub warmup_frac: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    pub clip_norm: f64,
    /// Stop once validation exact-match reaches this level twice in a row.
    pub stop_at_val_exact: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            epochs: 200,
            peak_lr: 5e-5,
            warmup_frac: 0.05,
            seed: 1,
            validation_fraction: 0.1,
            clip_norm: 1.0,
            stop_at_val_exact: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub dec: f64,
    pub act: f64,
    pub length: f64,
    pub depend: f64,
    pub total: f64,
    pub val_exact_match: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub train_size: usize,
    pub val_size: usize,
}

impl TrainReport {
    /// One epoch per line, as JSON.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("stats serialize"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    /// Loss became non-finite; carries the last finite-epoch parameters.
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize, last_good: Box<ModelParams> },
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error("corpus is empty after preprocessing")]
    EmptyCorpus,
}

/// Adam with bias correction; state iterates in parameter-name order.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = |p: &ModelParams| {
            p.tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect()
        };
        Adam {
            lr: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn apply(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, tensor) in params.tensors.iter_mut() {
            let Some(grad) = grads.get(name) else { continue };
            let m = self.m.get_mut(name).expect("state for every param");
            let v = self.v.get_mut(name).expect("state for every param");
            for i in 0..tensor.len() {
                let g = grad.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                tensor.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Caps the global gradient norm at `clip_norm`.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, clip_norm: f64) -> f64 {
    let total: f64 = grads.values().map(Tensor::frobenius_sq).sum::<f64>().sqrt();
    if total > clip_norm && total > 0.0 {
        let scale = clip_norm / total;
        for g in grads.values_mut() {
            g.scale_in_place(scale);
        }
    }
    total
}

fn dropout_seed(base: u64, epoch: usize, item: usize) -> u64 {
    // splitmix-style mix of the run seed with the item coordinates
    let mut z = base ^ ((epoch as u64) << 32) ^ item as u64;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

struct ItemOutcome {
    parts: crate::nnet::LossParts,
    grads: BTreeMap<String, Tensor>,
}

fn forward_backward(
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocabulary,
    record: &PreprocessRecord,
    dropout: Option<DropoutSpec>,
) -> Result<ItemOutcome, NnetError> {
    let buggy_ids = vocab.encode(&record.buggy);
    let fixed_ids = vocab.encode(&record.fixed);
    let mut trace = forward_teacher(
        params,
        config,
        &buggy_ids,
        &record.actions,
        &record.fertilities,
        dropout,
    )?;
    let matrix = record.dep_matrix();
    let labels = Labels {
        actions: &record.actions,
        fertilities: &record.fertilities,
        dep_matrix: &matrix,
        fixed_ids: &fixed_ids,
    };
    let (parts, grads) = crate::nnet::loss_joint(&mut trace, &labels, config)?;
    Ok(ItemOutcome { parts, grads })
}

fn merge_grads(into: &mut BTreeMap<String, Tensor>, from: &BTreeMap<String, Tensor>) {
    for (name, grad) in from {
        match into.get_mut(name) {
            Some(t) => t.add_in_place(grad),
            None => {
                into.insert(name.clone(), grad.clone());
            }
        }
    }
}

/// Deterministic train/validation split: indices are shuffled once by the
/// seed, the tail fraction becomes validation.
pub fn split_corpus(
    records: &[PreprocessRecord],
    fraction: f64,
    seed: u64,
) -> (Vec<PreprocessRecord>, Vec<PreprocessRecord>) {
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0051);
    order.shuffle(&mut rng);
    let val_len = ((records.len() as f64) * fraction).round() as usize;
    let split = records.len() - val_len;
    let train = order[..split].iter().map(|&i| records[i].clone()).collect();
    let val = order[split..].iter().map(|&i| records[i].clone()).collect();
    (train, val)
}

/// Joint training over preprocessed records. Returns the final parameters
/// and the per-epoch report.
pub fn train(
    records: &[PreprocessRecord],
    vocab: &Vocabulary,
    params: &mut ModelParams,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    let (train_set, val_set) =
        split_corpus(records, train_config.validation_fraction, train_config.seed);
    if train_set.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let steps_per_epoch = train_set.len().div_ceil(train_config.batch_size);
    let total_steps = steps_per_epoch * train_config.epochs;
    let warmup_steps = ((total_steps as f64) * train_config.warmup_frac).ceil().max(1.0) as usize;

    let mut optimizer = Adam::new(params);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut report = TrainReport {
        epochs: Vec::new(),
        train_size: train_set.len(),
        val_size: val_set.len(),
    };
    let mut last_good = params.clone();
    let mut global_step = 0usize;
    let mut hits = 0usize;

    for epoch in 0..train_config.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut items = 0usize;

        for batch in order.chunks(train_config.batch_size) {
            global_step += 1;
            let lr_scale = if global_step <= warmup_steps {
                global_step as f64 / warmup_steps as f64
            } else {
                1.0
            };
            optimizer.lr = train_config.peak_lr * lr_scale;

            // Fixed shard structure keeps the accumulation order stable
            // under any thread count.
            let shards: Vec<&[usize]> = batch
                .chunks(batch.len().div_ceil(GRAD_SHARDS).max(1))
                .collect();
            let shard_results: Vec<Result<(BTreeMap<String, Tensor>, Vec<crate::nnet::LossParts>), NnetError>> =
                shards
                    .par_iter()
                    .map(|shard| {
                        let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
                        let mut parts = Vec::with_capacity(shard.len());
                        for &idx in shard.iter() {
                            let dropout = if model_config.dropout > 0.0 {
                                Some(DropoutSpec {
                                    rate: model_config.dropout,
                                    seed: dropout_seed(train_config.seed, epoch, idx),
                                })
                            } else {
                                None
                            };
                            let out = forward_backward(
                                params,
                                model_config,
                                vocab,
                                &train_set[idx],
                                dropout,
                            )?;
                            merge_grads(&mut acc, &out.grads);
                            parts.push(out.parts);
                        }
                        Ok((acc, parts))
                    })
                    .collect();

            let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
            let mut batch_parts = Vec::new();
            for shard in shard_results {
                let (acc, parts) = shard?;
                merge_grads(&mut grads, &acc);
                batch_parts.extend(parts);
            }
            let inv = 1.0 / batch.len() as f64;
            for g in grads.values_mut() {
                g.scale_in_place(inv);
            }
            clip_global_norm(&mut grads, train_config.clip_norm);

            let mut diverged = false;
            for p in &batch_parts {
                if !p.total.is_finite() {
                    diverged = true;
                }
                sums.0 += p.dec;
                sums.1 += p.act;
                sums.2 += p.length;
                sums.3 += p.depend;
                sums.4 += p.total;
                debug_assert!(
                    (p.total
                        - (p.dec
                            + model_config.alpha * (p.act + p.length)
                            + model_config.lambda * p.depend))
                        .abs()
                        < 1e-12
                );
            }
            items += batch.len();
            if diverged || grads.values().any(|g| !g.all_finite()) {
                return Err(TrainError::Divergence { epoch, last_good: Box::new(last_good) });
            }
            optimizer.apply(params, &grads);
        }

        let val_exact = if val_set.is_empty() {
            0.0
        } else {
            evaluate(params, model_config, vocab, &val_set)?.exact_match
        };
        let denom = items.max(1) as f64;
        report.epochs.push(EpochStats {
            epoch,
            dec: sums.0 / denom,
            act: sums.1 / denom,
            length: sums.2 / denom,
            depend: sums.3 / denom,
            total: sums.4 / denom,
            val_exact_match: val_exact,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        if !params.all_finite() {
            return Err(TrainError::Divergence { epoch, last_good: Box::new(last_good) });
        }
        last_good = params.clone();

        if let Some(target) = train_config.stop_at_val_exact {
            if val_exact >= target {
                hits += 1;
                if hits >= 2 {
                    break;
                }
            } else {
                hits = 0;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub exact_match: f64,
    pub action_accuracy: f64,
    pub length_accuracy: f64,
    pub dependency_cell_accuracy: f64,
    pub examples: usize,
}

/// Exact match plus per-component accuracies. Exact match decodes with the
/// predicted script (top-1); component accuracies are teacher-forced.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocabulary,
    records: &[PreprocessRecord],
) -> Result<EvalReport, NnetError> {
    let mut exact = 0usize;
    let mut act_hits = 0usize;
    let mut act_total = 0usize;
    let mut len_hits = 0usize;
    let mut dep_hits = 0usize;
    let mut dep_total = 0usize;
    for record in records {
        // Exact match via predicted-script decoding.
        let candidates = infer::repair_tokens(params, config, vocab, &record.buggy, 1)?;
        if let Some(best) = candidates.first() {
            if best.tokens == record.fixed {
                exact += 1;
            }
        }
        // Teacher-forced component accuracies.
        let buggy_ids = vocab.encode(&record.buggy);
        let mut g = Graph::new();
        let pn = ParamNodes::new(params);
        let encoded = encode(&mut g, &pn, config, &buggy_ids)?;
        let (act_logits, len_logits) = predict_actions(&mut g, &pn, config, encoded, None);
        for (i, action) in record.actions.iter().enumerate() {
            let row = g.value(act_logits).row(i);
            if argmax(row) == action.index() {
                act_hits += 1;
            }
            let row = g.value(len_logits).row(i);
            if argmax(row) == record.fertilities[i] {
                len_hits += 1;
            }
            act_total += 1;
        }
        match expand_to_target(&mut g, &pn, config, encoded, &record.fertilities) {
            Ok((expanded, _)) => {
                let extraction = extract_dependencies(&mut g, &pn, config, expanded);
                let scores = g.value(extraction.dep_scores);
                let classes = params.dims.node_types;
                let m = record.m;
                for i in 0..m {
                    for j in 0..m {
                        let mut best = 0;
                        for c in 0..classes {
                            if scores.get2(i * classes + c, j) > scores.get2(i * classes + best, j)
                            {
                                best = c;
                            }
                        }
                        if best == record.matrix[i * m + j] {
                            dep_hits += 1;
                        }
                        dep_total += 1;
                    }
                }
            }
            Err(NnetError::EmptyTarget) => {}
            Err(e) => return Err(e),
        }
    }
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(EvalReport {
        exact_match: frac(exact, records.len()),
        action_accuracy: frac(act_hits, act_total),
        length_accuracy: frac(len_hits, act_total),
        dependency_cell_accuracy: frac(dep_hits, dep_total),
        examples: records.len(),
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Oracle-forced exact match: decode with the ground-truth script instead
/// of the predicted one. Used as a sanity bound in tests.
pub fn evaluate_oracle_forced(
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocabulary,
    records: &[PreprocessRecord],
) -> Result<f64, NnetError> {
    let mut exact = 0usize;
    let mut total = 0usize;
    for record in records {
        total += 1;
        let buggy_ids = vocab.encode(&record.buggy);
        let mut g = Graph::new();
        let pn = ParamNodes::new(params);
        let encoded = encode(&mut g, &pn, config, &buggy_ids)?;
        let (expanded, src) = match expand_to_target(&mut g, &pn, config, encoded, &record.fertilities) {
            Ok(x) => x,
            Err(NnetError::EmptyTarget) => continue,
            Err(e) => return Err(e),
        };
        let extraction = extract_dependencies(&mut g, &pn, config, expanded);
        let target_actions: Vec<RepairAction> =
            src.iter().map(|&i| record.actions[i]).collect();
        let decode = crate::nnet::model::decode_two_stage(
            &mut g,
            &pn,
            config,
            extraction.fused,
            encoded,
            &target_actions,
        );
        let (tokens, _) = crate::nnet::decode_final_tokens(
            &g,
            &decode,
            &target_actions,
            &src,
            &record.buggy,
            vocab,
        );
        if tokens == record.fixed {
            exact += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { exact as f64 / total as f64 })
}
