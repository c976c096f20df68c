//! End-to-end patch generation and the analysis layer: candidate
//! enumeration over the action/length joint distribution, two-stage
//! parallel decoding, an autoregressive baseline for latency comparison,
//! over-correction counting, and the node-similarity report.

mod arbaseline;
mod bench;
mod report;

pub use arbaseline::{ar_baseline_decode, ArDecode};
pub use bench::{bench_latency, BenchResult, BenchRow};
pub use report::{node_similarity_report, similarity_csv, SimilarityRow};

use crate::astdep::GrammarProvider;
use crate::corpus::{tokenize, Vocabulary};
use crate::editscript::{RepairAction, RepairScript};
use crate::nnet::model::{
    decode_final_tokens, decode_two_stage, encode, expand_to_target, extract_dependencies,
    predict_actions, ParamNodes,
};
use crate::nnet::{Graph, ModelConfig, ModelParams, NnetError, Tensor};
use std::collections::{BinaryHeap, HashSet};

/// One decoded patch with its emission score and the predicted script that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCandidate {
    pub tokens: Vec<String>,
    /// Sum of log-probabilities of the emitted tokens; always <= 0.
    pub score: f64,
    pub actions: Vec<RepairAction>,
    pub fertilities: Vec<usize>,
    /// Target positions re-decoded by stage two.
    pub stage2_positions: Vec<usize>,
}

/// Per-position (action, fertility) option with its joint log probability.
#[derive(Debug, Clone, Copy)]
struct ScriptOption {
    action: RepairAction,
    fertility: usize,
    logp: f64,
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - lse).collect()
}

/// Consistent (action, fertility) options per source position, sorted by
/// joint log probability (ties broken by action then fertility).
fn position_options(
    act_logits: &Tensor,
    len_logits: &Tensor,
    max_repair_length: usize,
) -> Vec<Vec<ScriptOption>> {
    let n = act_logits.rows();
    let mut all = Vec::with_capacity(n);
    for i in 0..n {
        let la = log_softmax(act_logits.row(i));
        let ll = log_softmax(len_logits.row(i));
        let mut opts = vec![
            ScriptOption {
                action: RepairAction::Keep,
                fertility: 1,
                logp: la[RepairAction::Keep.index()] + ll[1],
            },
            ScriptOption {
                action: RepairAction::Replace,
                fertility: 1,
                logp: la[RepairAction::Replace.index()] + ll[1],
            },
            ScriptOption {
                action: RepairAction::Delete,
                fertility: 0,
                logp: la[RepairAction::Delete.index()] + ll[0],
            },
        ];
        for f in 2..=max_repair_length {
            opts.push(ScriptOption {
                action: RepairAction::Insert,
                fertility: f,
                logp: la[RepairAction::Insert.index()] + ll[f],
            });
        }
        opts.sort_by(|a, b| {
            b.logp
                .partial_cmp(&a.logp)
                .unwrap()
                .then(a.action.index().cmp(&b.action.index()))
                .then(a.fertility.cmp(&b.fertility))
        });
        all.push(opts);
    }
    all
}

#[derive(PartialEq)]
struct HeapEntry {
    logp: f64,
    choice: Vec<u16>,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.logp
            .partial_cmp(&other.logp)
            .unwrap()
            .then_with(|| other.choice.cmp(&self.choice))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Top-k combinations over independent per-position option lists, best
/// first. Deterministic: ties resolve by the lexicographically smallest
/// choice vector.
fn top_k_scripts(options: &[Vec<ScriptOption>], k: usize) -> Vec<(Vec<u16>, f64)> {
    let base: f64 = options.iter().map(|o| o[0].logp).sum();
    let mut heap = BinaryHeap::new();
    let mut seen: HashSet<Vec<u16>> = HashSet::new();
    let start = vec![0u16; options.len()];
    seen.insert(start.clone());
    heap.push(HeapEntry { logp: base, choice: start });
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let Some(HeapEntry { logp, choice }) = heap.pop() else { break };
        for (i, opts) in options.iter().enumerate() {
            let next_idx = choice[i] as usize + 1;
            if next_idx < opts.len() {
                let mut next = choice.clone();
                next[i] = next_idx as u16;
                if seen.insert(next.clone()) {
                    let next_logp = logp - opts[next_idx - 1].logp + opts[next_idx].logp;
                    heap.push(HeapEntry { logp: next_logp, choice: next });
                }
            }
        }
        out.push((choice, logp));
    }
    out
}

/// Decodes one script through the two-stage decoder against a precomputed
/// encoder output.
#[allow(clippy::too_many_arguments)]
fn decode_script(
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocabulary,
    encoded_value: &Tensor,
    buggy_tokens: &[String],
    actions: &[RepairAction],
    fertilities: &[usize],
) -> Result<PatchCandidate, NnetError> {
    let mut g = Graph::new();
    let pn = ParamNodes::new(params);
    let encoded = g.leaf(encoded_value.clone());
    let (expanded, src_of_target) = expand_to_target(&mut g, &pn, config, encoded, fertilities)?;
    let extraction = extract_dependencies(&mut g, &pn, config, expanded);
    let target_actions: Vec<RepairAction> = src_of_target.iter().map(|&i| actions[i]).collect();
    let decode = decode_two_stage(&mut g, &pn, config, extraction.fused, encoded, &target_actions);
    let (tokens, score) = decode_final_tokens(
        &g,
        &decode,
        &target_actions,
        &src_of_target,
        buggy_tokens,
        vocab,
    );
    let stage2_positions =
        decode.masked.iter().enumerate().filter(|(_, &m)| m).map(|(j, _)| j).collect();
    Ok(PatchCandidate {
        tokens,
        score,
        actions: actions.to_vec(),
        fertilities: fertilities.to_vec(),
        stage2_positions,
    })
}

/// Generates up to `k` ranked patches for a tokenized buggy sequence.
/// Scripts are the top-k joint action/length combinations; each is decoded
/// once through the two-stage decoder. Empty-target (all-delete) scripts
/// are dropped. Ranking is by score descending with a lexicographic token
/// tie-break.
pub fn repair_tokens(
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocabulary,
    buggy_tokens: &[String],
    k: usize,
) -> Result<Vec<PatchCandidate>, NnetError> {
    let buggy_ids = vocab.encode(buggy_tokens);
    let mut g = Graph::new();
    let pn = ParamNodes::new(params);
    let encoded = encode(&mut g, &pn, config, &buggy_ids)?;
    let (act_logits, len_logits) = predict_actions(&mut g, &pn, config, encoded, None);
    let options =
        position_options(g.value(act_logits), g.value(len_logits), config.max_repair_length);
    let encoded_value = g.value(encoded).clone();
    drop(g);

    let mut candidates = Vec::new();
    for (choice, _) in top_k_scripts(&options, k) {
        let actions: Vec<RepairAction> =
            choice.iter().zip(&options).map(|(&c, o)| o[c as usize].action).collect();
        let fertilities: Vec<usize> =
            choice.iter().zip(&options).map(|(&c, o)| o[c as usize].fertility).collect();
        match decode_script(
            params,
            config,
            vocab,
            &encoded_value,
            buggy_tokens,
            &actions,
            &fertilities,
        ) {
            Ok(candidate) => candidates.push(candidate),
            // Degenerate scripts (all-delete, or an expansion past the
            // sequence limit) are dropped; input-length errors were already
            // raised by the encoder.
            Err(NnetError::EmptyTarget) | Err(NnetError::SequenceTooLong { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(candidates)
}

/// Tokenizes and repairs a buggy source text.
pub fn repair(
    buggy: &str,
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocabulary,
    grammar: &dyn GrammarProvider,
    k: usize,
) -> Result<Vec<PatchCandidate>, NnetError> {
    let tokens = tokenize(buggy, grammar);
    repair_tokens(params, config, vocab, &tokens, k)
}

/// Ablation used by the over-correction study: the action predictor is
/// disabled, only the length head drives the expansion, and no position is
/// copied or held in a keep run.
pub fn repair_tokens_action_ablated(
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocabulary,
    buggy_tokens: &[String],
) -> Result<Option<PatchCandidate>, NnetError> {
    let buggy_ids = vocab.encode(buggy_tokens);
    let mut g = Graph::new();
    let pn = ParamNodes::new(params);
    let encoded = encode(&mut g, &pn, config, &buggy_ids)?;
    let (_, len_logits) = predict_actions(&mut g, &pn, config, encoded, None);
    let fertilities: Vec<usize> = (0..buggy_ids.len())
        .map(|i| {
            let row = g.value(len_logits).row(i);
            let mut best = 0;
            for (f, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = f;
                }
            }
            best
        })
        .collect();
    // Every position decodes freely: no keep copies, no keep runs.
    let actions = vec![RepairAction::Replace; buggy_ids.len()];
    let encoded_value = g.value(encoded).clone();
    drop(g);
    match decode_script(params, config, vocab, &encoded_value, buggy_tokens, &actions, &fertilities)
    {
        Ok(c) => Ok(Some(c)),
        Err(NnetError::EmptyTarget) | Err(NnetError::SequenceTooLong { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Number of positions whose oracle action is keep but whose emitted span
/// differs from the buggy token.
pub fn overcorrection_count(
    buggy_tokens: &[String],
    patch: &PatchCandidate,
    oracle: &RepairScript,
) -> usize {
    debug_assert_eq!(oracle.actions.len(), buggy_tokens.len());
    debug_assert_eq!(patch.fertilities.len(), buggy_tokens.len());
    let mut count = 0;
    let mut offset = 0;
    for i in 0..buggy_tokens.len() {
        let fert = patch.fertilities[i];
        let span = &patch.tokens[offset..offset + fert];
        offset += fert;
        if oracle.actions[i] == RepairAction::Keep && span != [buggy_tokens[i].clone()] {
            count += 1;
        }
    }
    count
}
