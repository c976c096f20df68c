//! Forward passes of the repair network and the joint training loss.
//!
//! Teacher-forced training expands the target by the label fertilities and
//! masks stage two by the label actions; inference swaps in the predicted
//! ones. All builders append to a caller-owned [`Graph`], so inference can
//! pre-compute the encoder once and feed it back in as a leaf.

use super::tape::{Graph, NodeId};
use super::tensor::Tensor;
use super::{DropoutSpec, ModelConfig, ModelParams, NnetError};
use crate::astdep::DependencyMatrix;
use crate::corpus::{Vocabulary, MASK_ID};
use crate::editscript::RepairAction;
use std::cell::RefCell;
use std::collections::BTreeMap;

/// Lazily inserts parameter tensors into a graph as leaves, caching the
/// node ids so each parameter appears once.
pub struct ParamNodes<'p> {
    params: &'p ModelParams,
    ids: RefCell<BTreeMap<String, NodeId>>,
}

impl<'p> ParamNodes<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        ParamNodes { params, ids: RefCell::new(BTreeMap::new()) }
    }

    pub fn get(&self, g: &mut Graph, name: &str) -> NodeId {
        if let Some(&id) = self.ids.borrow().get(name) {
            return id;
        }
        let id = g.leaf(self.params.get(name).clone());
        self.ids.borrow_mut().insert(name.to_string(), id);
        id
    }

    pub fn inserted(&self) -> BTreeMap<String, NodeId> {
        self.ids.borrow().clone()
    }

    pub fn dims(&self) -> super::ModelDims {
        self.params.dims
    }
}

fn linear(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

/// Multi-head attention between `q_in` rows and `kv_in` rows. With `causal`
/// set, position i attends only to keys 0..=i.
fn multi_head_attention(
    g: &mut Graph,
    pn: &ParamNodes,
    prefix: &str,
    config: &ModelConfig,
    q_in: NodeId,
    kv_in: NodeId,
    causal: bool,
) -> NodeId {
    let (wq, bq) = (pn.get(g, &format!("{prefix}.wq")), pn.get(g, &format!("{prefix}.bq")));
    let (wk, bk) = (pn.get(g, &format!("{prefix}.wk")), pn.get(g, &format!("{prefix}.bk")));
    let (wv, bv) = (pn.get(g, &format!("{prefix}.wv")), pn.get(g, &format!("{prefix}.bv")));
    let (wo, bo) = (pn.get(g, &format!("{prefix}.wo")), pn.get(g, &format!("{prefix}.bo")));
    let q = linear(g, q_in, wq, bq);
    let k = linear(g, kv_in, wk, bk);
    let v = linear(g, kv_in, wv, bv);
    let dh = config.d_model / config.n_heads;
    let causal_mask = causal.then(|| {
        let (nq, nk) = (g.value(q).rows(), g.value(k).rows());
        let mut mask = Tensor::zeros(&[nq, nk]);
        for i in 0..nq {
            for j in 0..nk {
                if j > i {
                    mask.row_mut(i)[j] = -1e30;
                }
            }
        }
        g.leaf(mask)
    });
    let mut heads = Vec::with_capacity(config.n_heads);
    for h in 0..config.n_heads {
        let qh = g.col_slice(q, h * dh, (h + 1) * dh);
        let kh = g.col_slice(k, h * dh, (h + 1) * dh);
        let vh = g.col_slice(v, h * dh, (h + 1) * dh);
        let scores = g.matmul_bt(qh, kh);
        let mut scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
        if let Some(mask) = causal_mask {
            scaled = g.add(scaled, mask);
        }
        let weights = g.softmax_rows(scaled);
        heads.push(g.matmul(weights, vh));
    }
    let concat = g.concat_cols(heads);
    linear(g, concat, wo, bo)
}

fn layer_norm(g: &mut Graph, pn: &ParamNodes, prefix: &str, x: NodeId) -> NodeId {
    let gamma = pn.get(g, &format!("{prefix}.g"));
    let beta = pn.get(g, &format!("{prefix}.b"));
    g.layer_norm(x, gamma, beta)
}

fn feed_forward(g: &mut Graph, pn: &ParamNodes, prefix: &str, x: NodeId) -> NodeId {
    let (w1, b1) = (pn.get(g, &format!("{prefix}.w1")), pn.get(g, &format!("{prefix}.b1")));
    let (w2, b2) = (pn.get(g, &format!("{prefix}.w2")), pn.get(g, &format!("{prefix}.b2")));
    let h = linear(g, x, w1, b1);
    let r = g.gelu(h);
    linear(g, r, w2, b2)
}

/// Token + position embeddings for a source sequence.
fn embed_tokens(g: &mut Graph, pn: &ParamNodes, ids: &[usize]) -> NodeId {
    let tok_table = pn.get(g, "embed.tok");
    let pos_table = pn.get(g, "embed.pos");
    let tok = g.gather_rows(tok_table, ids.iter().map(|&i| i as isize).collect());
    let pos = g.gather_rows(pos_table, (0..ids.len() as isize).collect());
    g.add(tok, pos)
}

/// Encoder stack: per layer, residual self-attention with post-norm, then a
/// feed-forward sub-layer (normalized, no residual).
pub fn encode(
    g: &mut Graph,
    pn: &ParamNodes,
    config: &ModelConfig,
    buggy_ids: &[usize],
) -> Result<NodeId, NnetError> {
    let n = buggy_ids.len();
    if n == 0 {
        return Err(NnetError::ShapeMismatch("empty source sequence".into()));
    }
    if n > config.max_seq_len {
        return Err(NnetError::SequenceTooLong { len: n, max: config.max_seq_len });
    }
    let mut x = embed_tokens(g, pn, buggy_ids);
    for l in 0..config.encoder_layers {
        let attn = multi_head_attention(g, pn, &format!("enc.{l}.attn"), config, x, x, false);
        let res = g.add(x, attn);
        let x_att = layer_norm(g, pn, &format!("enc.{l}.attn_ln"), res);
        let ffn = feed_forward(g, pn, &format!("enc.{l}.ffn"), x_att);
        x = layer_norm(g, pn, &format!("enc.{l}.ffn_ln"), ffn);
    }
    Ok(x)
}

/// Convolution over the token axis (same padding), ReLU, dropout, then the
/// action and length heads.
pub fn predict_actions(
    g: &mut Graph,
    pn: &ParamNodes,
    config: &ModelConfig,
    encoded: NodeId,
    dropout: Option<DropoutSpec>,
) -> (NodeId, NodeId) {
    let n = g.value(encoded).rows();
    let d = config.d_model;
    let k = config.conv_kernel;
    let half = (k / 2) as isize;
    let mut indices = Vec::with_capacity(n * k);
    for i in 0..n as isize {
        for o in 0..k as isize {
            let j = i + o - half;
            indices.push(if j >= 0 && j < n as isize { j } else { -1 });
        }
    }
    let windows = g.gather_rows(encoded, indices);
    let im2col = g.reshape(windows, &[n, k * d]);
    let (cw, cb) = (pn.get(g, "pred.conv.w"), pn.get(g, "pred.conv.b"));
    let feature = linear(g, im2col, cw, cb);
    let mut hidden = g.relu(feature);
    if let Some(spec) = dropout {
        if spec.rate > 0.0 {
            let mask = spec.mask(n * d);
            hidden = g.mul_mask(hidden, mask);
        }
    }
    let (aw, ab) = (pn.get(g, "pred.act.w"), pn.get(g, "pred.act.b"));
    let (lw, lb) = (pn.get(g, "pred.len.w"), pn.get(g, "pred.len.b"));
    (linear(g, hidden, aw, ab), linear(g, hidden, lw, lb))
}

/// Soft-copy expansion: each source feature is repeated fertility-many
/// times, target position embeddings are added, and one encoder-decoder
/// attention layer over the encoder output produces the target features.
pub fn expand_to_target(
    g: &mut Graph,
    pn: &ParamNodes,
    config: &ModelConfig,
    encoded: NodeId,
    fertilities: &[usize],
) -> Result<(NodeId, Vec<usize>), NnetError> {
    let mut src_of_target = Vec::new();
    for (i, &f) in fertilities.iter().enumerate() {
        for _ in 0..f {
            src_of_target.push(i);
        }
    }
    let m = src_of_target.len();
    if m == 0 {
        return Err(NnetError::EmptyTarget);
    }
    if m > config.max_seq_len {
        return Err(NnetError::SequenceTooLong { len: m, max: config.max_seq_len });
    }
    let copied = g.gather_rows(encoded, src_of_target.iter().map(|&i| i as isize).collect());
    let pos_table = pn.get(g, "embed.pos");
    let pos = g.gather_rows(pos_table, (0..m as isize).collect());
    let queries = g.add(copied, pos);
    let attn = multi_head_attention(g, pn, "copy.attn", config, queries, encoded, false);
    let res = g.add(queries, attn);
    Ok((layer_norm(g, pn, "copy.ln", res), src_of_target))
}

pub struct Extraction {
    /// Per-cell class scores, laid out [m * classes, m].
    pub dep_scores: NodeId,
    /// Class-mapped queries, [m * classes, d]; row j*classes + c is the
    /// class-c query vector of token j.
    pub class_queries: NodeId,
    /// Fusion attention (softmax rows), [m, m].
    pub fusion: NodeId,
    /// Fused target features H, [m, d].
    pub fused: NodeId,
}

/// Dependency-class scores from a per-class bilinear form, and the fused
/// features H = softmax(QK^T / sqrt(d)) V.
pub fn extract_dependencies(
    g: &mut Graph,
    pn: &ParamNodes,
    config: &ModelConfig,
    target_feats: NodeId,
) -> Extraction {
    let m = g.value(target_feats).rows();
    let d = config.d_model;
    let classes = pn.dims().node_types;
    let wq = pn.get(g, "ext.wq");
    let wk = pn.get(g, "ext.wk");
    let wv = pn.get(g, "ext.wv");
    let q = g.matmul(target_feats, wq);
    let k = g.matmul(target_feats, wk);
    let v = g.matmul(target_feats, wv);
    let (dw, db) = (pn.get(g, "ext.dep.w"), pn.get(g, "ext.dep.b"));
    let q_classes = linear(g, q, dw, db);
    let q_classes = g.reshape(q_classes, &[m * classes, d]);
    let dep_scores = g.matmul_bt(q_classes, k);
    let scores = g.matmul_bt(q, k);
    let scaled = g.scale(scores, 1.0 / (d as f64).sqrt());
    let fusion = g.softmax_rows(scaled);
    let fused = g.matmul(fusion, v);
    Extraction { dep_scores, class_queries: q_classes, fusion, fused }
}

/// Runs decoder layers `range` once over `x` (self-attention, cross
/// attention over the encoder output, feed-forward). One call = one
/// decoder pass.
pub fn run_decoder_layers(
    g: &mut Graph,
    pn: &ParamNodes,
    config: &ModelConfig,
    mut x: NodeId,
    encoded: NodeId,
    range: std::ops::Range<usize>,
    causal: bool,
    passes: &mut usize,
) -> NodeId {
    *passes += 1;
    for l in range {
        let attn = multi_head_attention(g, pn, &format!("dec.{l}.self"), config, x, x, causal);
        let res = g.add(x, attn);
        x = layer_norm(g, pn, &format!("dec.{l}.self_ln"), res);
        let cross = multi_head_attention(g, pn, &format!("dec.{l}.cross"), config, x, encoded, false);
        let res = g.add(x, cross);
        x = layer_norm(g, pn, &format!("dec.{l}.cross_ln"), res);
        let ffn = feed_forward(g, pn, &format!("dec.{l}.ffn"), x);
        x = layer_norm(g, pn, &format!("dec.{l}.ffn_ln"), ffn);
    }
    x
}

fn output_logits(g: &mut Graph, pn: &ParamNodes, feats: NodeId) -> NodeId {
    let (w, b) = (pn.get(g, "out.w"), pn.get(g, "out.b"));
    linear(g, feats, w, b)
}

/// Target positions lying inside a run of >= 2 consecutive keep actions.
pub fn keep_run_positions(target_actions: &[RepairAction]) -> Vec<bool> {
    let m = target_actions.len();
    let mut out = vec![false; m];
    let mut j = 0;
    while j < m {
        if target_actions[j] == RepairAction::Keep {
            let mut end = j;
            while end < m && target_actions[end] == RepairAction::Keep {
                end += 1;
            }
            if end - j >= 2 {
                for slot in out.iter_mut().take(end).skip(j) {
                    *slot = true;
                }
            }
            j = end;
        } else {
            j += 1;
        }
    }
    out
}

pub struct TwoStageDecode {
    pub first_feats: NodeId,
    pub first_logits: NodeId,
    pub p_first: NodeId,
    /// Max stage-1 probability per target position.
    pub confidence: Vec<f64>,
    /// Positions re-decoded in stage two (the complement was retained).
    pub masked: Vec<bool>,
    pub mask_feats: NodeId,
    pub second_feats: NodeId,
    pub second_logits: NodeId,
    pub p_second: NodeId,
    /// Decoder stack invocations; always 2.
    pub passes: usize,
}

/// Two-stage parallel decode. Stage one runs the first decoder_layers - k
/// layers; positions outside keep runs whose stage-one confidence is at or
/// below the threshold are replaced by the mask embedding (plus position)
/// and re-decoded by the remaining k layers.
pub fn decode_two_stage(
    g: &mut Graph,
    pn: &ParamNodes,
    config: &ModelConfig,
    fused: NodeId,
    encoded: NodeId,
    target_actions: &[RepairAction],
) -> TwoStageDecode {
    let m = g.value(fused).rows();
    debug_assert_eq!(target_actions.len(), m);
    let split = config.decoder_layers - config.decoder_split;
    let mut passes = 0;
    let first_feats = run_decoder_layers(g, pn, config, fused, encoded, 0..split, false, &mut passes);
    let first_logits = output_logits(g, pn, first_feats);
    let p_first = g.softmax_rows(first_logits);

    let confidence: Vec<f64> = (0..m)
        .map(|r| g.value(p_first).row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let keep_runs = keep_run_positions(target_actions);
    let masked: Vec<bool> = (0..m)
        .map(|j| !(keep_runs[j] || confidence[j] > config.confidence_threshold))
        .collect();

    let mask_feats = if masked.iter().any(|&b| b) {
        let tok_table = pn.get(g, "embed.tok");
        let pos_table = pn.get(g, "embed.pos");
        let mask_emb = g.gather_rows(tok_table, vec![MASK_ID as isize; m]);
        let pos = g.gather_rows(pos_table, (0..m as isize).collect());
        let mask_rows = g.add(mask_emb, pos);
        g.row_select(first_feats, mask_rows, masked.clone())
    } else {
        // Nothing masked: stage two consumes stage one's features as-is.
        g.row_select(first_feats, first_feats, vec![false; m])
    };
    let second_feats =
        run_decoder_layers(g, pn, config, mask_feats, encoded, split..config.decoder_layers, false, &mut passes);
    let second_logits = output_logits(g, pn, second_feats);
    let p_second = g.softmax_rows(second_logits);

    TwoStageDecode {
        first_feats,
        first_logits,
        p_first,
        confidence,
        masked,
        mask_feats,
        second_feats,
        second_logits,
        p_second,
        passes,
    }
}

/// Final token choice: retained keep positions copy the source token
/// verbatim, other retained positions take the stage-1 argmax, masked
/// positions take the stage-2 argmax. Returns tokens and the summed log
/// probability of the emitted tokens under their emitting distributions.
pub fn decode_final_tokens(
    g: &Graph,
    decode: &TwoStageDecode,
    target_actions: &[RepairAction],
    src_of_target: &[usize],
    buggy_tokens: &[String],
    vocab: &Vocabulary,
) -> (Vec<String>, f64) {
    let m = target_actions.len();
    let p_first = g.value(decode.p_first);
    let p_second = g.value(decode.p_second);
    let mut tokens = Vec::with_capacity(m);
    let mut score = 0.0;
    for j in 0..m {
        if decode.masked[j] {
            let (id, p) = argmax(p_second.row(j));
            tokens.push(vocab.token_of(id).to_string());
            score += p.max(f64::MIN_POSITIVE).ln();
        } else if target_actions[j] == RepairAction::Keep {
            let token = buggy_tokens[src_of_target[j]].clone();
            let p = p_first.row(j)[vocab.id_of(&token)];
            tokens.push(token);
            score += p.max(f64::MIN_POSITIVE).ln();
        } else {
            let (id, p) = argmax(p_first.row(j));
            tokens.push(vocab.token_of(id).to_string());
            score += p.max(f64::MIN_POSITIVE).ln();
        }
    }
    (tokens, score)
}

fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    (best, row[best])
}

/// Everything produced by a teacher-forced forward pass, with the graph so
/// the loss can extend it.
pub struct ForwardTrace {
    pub graph: Graph,
    pub param_ids: BTreeMap<String, NodeId>,
    pub n: usize,
    pub m: usize,
    pub src_of_target: Vec<usize>,
    pub target_actions: Vec<RepairAction>,
    pub encoder: NodeId,
    pub act_logits: NodeId,
    pub len_logits: NodeId,
    pub expanded: NodeId,
    pub dep_scores: NodeId,
    pub fusion: NodeId,
    pub fused: NodeId,
    pub decode: TwoStageDecode,
}

impl ForwardTrace {
    pub fn value(&self, id: NodeId) -> &Tensor {
        self.graph.value(id)
    }

    /// Checks that every softmax row in the trace sums to one within 1e-9
    /// and that all values are finite.
    pub fn distributions_valid(&self) -> bool {
        self.graph.softmax_nodes.iter().all(|&id| {
            let t = self.graph.value(id);
            t.all_finite()
                && (0..t.rows()).all(|r| {
                    let row = t.row(r);
                    row.iter().all(|&p| p >= 0.0)
                        && (row.iter().sum::<f64>() - 1.0).abs() < 1e-9
                })
        })
    }
}

/// Teacher-forced forward pass over one training pair.
pub fn forward_teacher(
    params: &ModelParams,
    config: &ModelConfig,
    buggy_ids: &[usize],
    actions: &[RepairAction],
    fertilities: &[usize],
    dropout: Option<DropoutSpec>,
) -> Result<ForwardTrace, NnetError> {
    if actions.len() != buggy_ids.len() || fertilities.len() != buggy_ids.len() {
        return Err(NnetError::ShapeMismatch(format!(
            "{} tokens vs {} actions / {} fertilities",
            buggy_ids.len(),
            actions.len(),
            fertilities.len()
        )));
    }
    let mut g = Graph::new();
    let pn = ParamNodes::new(params);
    let encoder = encode(&mut g, &pn, config, buggy_ids)?;
    let (act_logits, len_logits) = predict_actions(&mut g, &pn, config, encoder, dropout);
    let (expanded, src_of_target) = expand_to_target(&mut g, &pn, config, encoder, fertilities)?;
    let extraction = extract_dependencies(&mut g, &pn, config, expanded);
    let target_actions: Vec<RepairAction> =
        src_of_target.iter().map(|&i| actions[i]).collect();
    let decode =
        decode_two_stage(&mut g, &pn, config, extraction.fused, encoder, &target_actions);
    Ok(ForwardTrace {
        param_ids: pn.inserted(),
        n: buggy_ids.len(),
        m: src_of_target.len(),
        src_of_target,
        target_actions,
        encoder,
        act_logits,
        len_logits,
        expanded,
        dep_scores: extraction.dep_scores,
        fusion: extraction.fusion,
        fused: extraction.fused,
        decode,
        graph: g,
    })
}

/// Ground-truth labels for the joint loss.
pub struct Labels<'a> {
    pub actions: &'a [RepairAction],
    pub fertilities: &'a [usize],
    pub dep_matrix: &'a DependencyMatrix,
    pub fixed_ids: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub dec: f64,
    pub act: f64,
    pub length: f64,
    pub depend: f64,
}

/// Joint loss: decoder cross-entropy (stage one over all target positions,
/// stage two over the masked ones) plus alpha-weighted action and length
/// cross-entropies and the lambda-weighted dependency loss over all m*m
/// cells. Returns exact gradients for every parameter.
pub fn loss_joint(
    trace: &mut ForwardTrace,
    labels: &Labels,
    config: &ModelConfig,
) -> Result<(LossParts, BTreeMap<String, Tensor>), NnetError> {
    let (n, m) = (trace.n, trace.m);
    if labels.actions.len() != n || labels.fertilities.len() != n {
        return Err(NnetError::ShapeMismatch(format!(
            "labels for {} source positions, trace has {n}",
            labels.actions.len()
        )));
    }
    if labels.fixed_ids.len() != m {
        return Err(NnetError::ShapeMismatch(format!(
            "{} target ids vs expanded length {m}",
            labels.fixed_ids.len()
        )));
    }
    if labels.dep_matrix.m != m {
        return Err(NnetError::ShapeMismatch(format!(
            "dependency matrix is {}x{0}, target length {m}",
            labels.dep_matrix.m
        )));
    }
    if labels.fertilities.iter().any(|&f| f > config.max_repair_length) {
        return Err(NnetError::ShapeMismatch("fertility exceeds length head classes".into()));
    }
    // dep_scores is [m * classes, m]
    let n_classes = trace.graph.value(trace.dep_scores).rows() / m;
    if labels.dep_matrix.entries.iter().any(|&c| c >= n_classes) {
        return Err(NnetError::ShapeMismatch(format!(
            "dependency label out of range for {n_classes} classes"
        )));
    }
    let g = &mut trace.graph;

    let action_labels: Vec<usize> = labels.actions.iter().map(|a| a.index()).collect();
    let l_act = g.cross_entropy_rows(trace.act_logits, action_labels, vec![true; n]);
    let l_len =
        g.cross_entropy_rows(trace.len_logits, labels.fertilities.to_vec(), vec![true; n]);
    let cell_labels = labels.dep_matrix.entries.clone();
    let l_dep = g.cell_cross_entropy(trace.dep_scores, cell_labels, n_classes);
    let l_first =
        g.cross_entropy_rows(trace.decode.first_logits, labels.fixed_ids.to_vec(), vec![true; m]);
    let l_second = g.cross_entropy_rows(
        trace.decode.second_logits,
        labels.fixed_ids.to_vec(),
        trace.decode.masked.clone(),
    );
    let l_dec = g.add(l_first, l_second);

    let act_len = g.add(l_act, l_len);
    let weighted_heads = g.scale(act_len, config.alpha);
    let weighted_dep = g.scale(l_dep, config.lambda);
    let partial = g.add(l_dec, weighted_heads);
    let total = g.add(partial, weighted_dep);

    let grads = g.backward(total);
    let mut out = BTreeMap::new();
    for (name, &id) in &trace.param_ids {
        let grad = grads[id]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(trace.graph.value(id).shape()));
        out.insert(name.clone(), grad);
    }
    let parts = LossParts {
        total: trace.graph.value(total).item(),
        dec: trace.graph.value(l_dec).item(),
        act: trace.graph.value(l_act).item(),
        length: trace.graph.value(l_len).item(),
        depend: trace.graph.value(l_dep).item(),
    };
    Ok((parts, out))
}
