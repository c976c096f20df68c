//! Left-to-right baseline decoder over the same weights.
//!
//! Each emitted token costs one full pass of the decoder stack over the
//! current prefix (causal self-attention, cross attention over the encoder
//! output). Used only for the latency comparison, so it runs on a plain
//! tensor evaluator with no tape; a test pins it against the tape path.

use crate::corpus::{BOS_ID, EOS_ID};
use crate::nnet::{ModelConfig, ModelParams, Tensor};

fn linear_v(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut y = x.matmul(w);
    for r in 0..y.rows() {
        for (v, bias) in y.row_mut(r).iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    y
}

fn layer_norm_v(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Tensor {
    let (n, c) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[n, c]);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for j in 0..c {
            out.row_mut(r)[j] = (row[j] - mean) * inv * gamma.data()[j] + beta.data()[j];
        }
    }
    out
}

fn softmax_rows_v(x: &mut Tensor) {
    let c = x.cols();
    for r in 0..x.rows() {
        let row = x.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        debug_assert!(c > 0);
    }
}

fn mha_v(
    params: &ModelParams,
    prefix: &str,
    config: &ModelConfig,
    q_in: &Tensor,
    kv_in: &Tensor,
    causal: bool,
) -> Tensor {
    let q = linear_v(q_in, params.get(&format!("{prefix}.wq")), params.get(&format!("{prefix}.bq")));
    let k = linear_v(kv_in, params.get(&format!("{prefix}.wk")), params.get(&format!("{prefix}.bk")));
    let v = linear_v(kv_in, params.get(&format!("{prefix}.wv")), params.get(&format!("{prefix}.bv")));
    let (nq, nk) = (q.rows(), k.rows());
    let dh = config.d_model / config.n_heads;
    let mut concat = Tensor::zeros(&[nq, config.d_model]);
    for h in 0..config.n_heads {
        let slice = |t: &Tensor| {
            let mut s = Tensor::zeros(&[t.rows(), dh]);
            for r in 0..t.rows() {
                s.row_mut(r).copy_from_slice(&t.row(r)[h * dh..(h + 1) * dh]);
            }
            s
        };
        let (qh, kh, vh) = (slice(&q), slice(&k), slice(&v));
        let mut scores = qh.matmul_bt(&kh);
        scores.scale_in_place(1.0 / (dh as f64).sqrt());
        if causal {
            for i in 0..nq {
                for j in 0..nk {
                    if j > i {
                        scores.row_mut(i)[j] = -1e30;
                    }
                }
            }
        }
        softmax_rows_v(&mut scores);
        let out = scores.matmul(&vh);
        for r in 0..nq {
            concat.row_mut(r)[h * dh..(h + 1) * dh].copy_from_slice(out.row(r));
        }
    }
    linear_v(&concat, params.get(&format!("{prefix}.wo")), params.get(&format!("{prefix}.bo")))
}

fn add_v(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    out.add_in_place(b);
    out
}

/// One pass of the full decoder stack over `x` with causal self-attention.
fn decoder_stack_v(params: &ModelParams, config: &ModelConfig, x: &Tensor, encoded: &Tensor) -> Tensor {
    let mut x = x.clone();
    for l in 0..config.decoder_layers {
        let attn = mha_v(params, &format!("dec.{l}.self"), config, &x, &x, true);
        x = layer_norm_v(
            &add_v(&x, &attn),
            params.get(&format!("dec.{l}.self_ln.g")),
            params.get(&format!("dec.{l}.self_ln.b")),
        );
        let cross = mha_v(params, &format!("dec.{l}.cross"), config, &x, encoded, false);
        x = layer_norm_v(
            &add_v(&x, &cross),
            params.get(&format!("dec.{l}.cross_ln.g")),
            params.get(&format!("dec.{l}.cross_ln.b")),
        );
        let mut h = linear_v(&x, params.get(&format!("dec.{l}.ffn.w1")), params.get(&format!("dec.{l}.ffn.b1")));
        for v in h.data_mut() {
            let c = (2.0f64 / std::f64::consts::PI).sqrt();
            *v = 0.5 * *v * (1.0 + (c * (*v + 0.044715 * *v * *v * *v)).tanh());
        }
        let f = linear_v(&h, params.get(&format!("dec.{l}.ffn.w2")), params.get(&format!("dec.{l}.ffn.b2")));
        x = layer_norm_v(
            &f,
            params.get(&format!("dec.{l}.ffn_ln.g")),
            params.get(&format!("dec.{l}.ffn_ln.b")),
        );
    }
    x
}

fn embed_prefix_v(params: &ModelParams, ids: &[usize]) -> Tensor {
    let tok = params.get("embed.tok");
    let pos = params.get("embed.pos");
    let d = tok.cols();
    let mut out = Tensor::zeros(&[ids.len(), d]);
    for (r, &id) in ids.iter().enumerate() {
        let row = out.row_mut(r);
        for (j, v) in row.iter_mut().enumerate() {
            *v = tok.get2(id, j) + pos.get2(r, j);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArDecode {
    pub token_ids: Vec<usize>,
    /// One decoder-stack pass per emitted token.
    pub passes: usize,
}

/// Decodes left-to-right with the decoder stack: starting from BOS, each
/// step re-runs the stack over the whole prefix and emits the argmax of the
/// final position, stopping at EOS or `max_len`. With `force_len` set, EOS
/// is ignored and exactly that many tokens are emitted.
pub fn ar_baseline_decode(
    params: &ModelParams,
    config: &ModelConfig,
    encoded: &Tensor,
    max_len: usize,
    force_len: Option<usize>,
) -> ArDecode {
    let out_w = params.get("out.w");
    let out_b = params.get("out.b");
    let limit = force_len.unwrap_or(max_len).min(config.max_seq_len - 1);
    let mut prefix = vec![BOS_ID];
    let mut emitted = Vec::new();
    let mut passes = 0;
    while emitted.len() < limit {
        let x = embed_prefix_v(params, &prefix);
        let feats = decoder_stack_v(params, config, &x, encoded);
        passes += 1;
        let last = feats.rows() - 1;
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for j in 0..out_w.cols() {
            let logit: f64 = (0..out_w.rows())
                .map(|i| feats.get2(last, i) * out_w.get2(i, j))
                .sum::<f64>()
                + out_b.data()[j];
            if logit > best_v {
                best_v = logit;
                best = j;
            }
        }
        if force_len.is_none() && best == EOS_ID {
            break;
        }
        emitted.push(best);
        prefix.push(best);
    }
    ArDecode { token_ids: emitted, passes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::model::{run_decoder_layers, ParamNodes};
    use crate::nnet::{Graph, ModelDims, ModelParams};

    fn fixture() -> (ModelParams, ModelConfig) {
        let config = ModelConfig {
            d_model: 8,
            n_heads: 2,
            encoder_layers: 1,
            decoder_layers: 2,
            decoder_split: 1,
            conv_kernel: 3,
            max_repair_length: 4,
            confidence_threshold: 0.7,
            alpha: 0.1,
            lambda: 0.1,
            max_seq_len: 32,
            dropout: 0.0,
        };
        let params =
            ModelParams::init(&config, ModelDims { vocab_size: 10, node_types: 4 }, 5);
        (params, config)
    }

    #[test]
    fn plain_decoder_matches_tape_decoder() {
        let (params, config) = fixture();
        let x = Tensor::from_vec(&[3, 8], (0..24).map(|i| (i as f64) * 0.05 - 0.5).collect());
        let e = Tensor::from_vec(&[4, 8], (0..32).map(|i| (i as f64) * 0.03 - 0.4).collect());
        let plain = decoder_stack_v(&params, &config, &x, &e);

        let mut g = Graph::new();
        let pn = ParamNodes::new(&params);
        let xi = g.leaf(x);
        let ei = g.leaf(e);
        let mut passes = 0;
        let out = run_decoder_layers(
            &mut g,
            &pn,
            &config,
            xi,
            ei,
            0..config.decoder_layers,
            true,
            &mut passes,
        );
        let tape = g.value(out);
        assert_eq!(plain.shape(), tape.shape());
        for (a, b) in plain.data().iter().zip(tape.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn forced_length_emits_exactly_that_many_passes() {
        let (params, config) = fixture();
        let e = Tensor::from_vec(&[4, 8], vec![0.1; 32]);
        let out = ar_baseline_decode(&params, &config, &e, 31, Some(7));
        assert_eq!(out.token_ids.len(), 7);
        assert_eq!(out.passes, 7);
    }

    #[test]
    fn pass_count_equals_emitted_length() {
        let (params, config) = fixture();
        let e = Tensor::from_vec(&[4, 8], (0..32).map(|i| (i as f64) * 0.01).collect());
        let out = ar_baseline_decode(&params, &config, &e, 10, None);
        assert!(out.token_ids.len() <= 10);
        assert!(out.passes >= out.token_ids.len());
        assert!(out.passes <= out.token_ids.len() + 1);
    }
}
