//! Acceptance suite: one test per criterion, each printing a PASS line
//! (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Criteria 5, 6, 8, and 9 share one trained model, built once by the
//! lazy fixture below (about three minutes of wall clock).

use narkit::astdep::{AstTree, MiniGrammar};
use narkit::corpus::{build_vocab, generate_toy_corpus, tokenize, Vocabulary};
use narkit::editscript::{apply_script, derive_script, edit_distance, RepairAction, RepairScript};
use narkit::infer;
use narkit::nnet::model::ParamNodes;
use narkit::nnet::{
    forward_teacher, loss_joint, DropoutSpec, Graph, Labels, ModelConfig, ModelDims, ModelParams,
};
use narkit::preprocess::{preprocess, PreprocessRecord};
use narkit::trainer::{evaluate, split_corpus, train, TrainConfig, TrainReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::LazyLock;
use std::time::Instant;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

// ---------------------------------------------------------------------
// Shared trained fixture (criteria 5, 6, 8, 9)
// ---------------------------------------------------------------------

struct TrainedFixture {
    records: Vec<PreprocessRecord>,
    vocab: Vocabulary,
    params: ModelParams,
    config: ModelConfig,
    report: TrainReport,
    train_seconds: f64,
}

const CORPUS_SEED: u64 = 7;
const TRAIN_SEED: u64 = 13;

fn fixture_model_config() -> ModelConfig {
    ModelConfig {
        d_model: 64,
        n_heads: 4,
        encoder_layers: 2,
        decoder_layers: 2,
        decoder_split: 1,
        conv_kernel: 3,
        max_repair_length: 10,
        confidence_threshold: 0.7,
        alpha: 0.1,
        lambda: 0.1,
        max_seq_len: 64,
        dropout: 0.1,
    }
}

static TRAINED: LazyLock<TrainedFixture> = LazyLock::new(|| {
    let grammar = MiniGrammar::new();
    let pairs = generate_toy_corpus(CORPUS_SEED, 500, &grammar);
    let (records, index, stats) = preprocess(&pairs, &grammar, 10, 64);
    assert_eq!(stats.kept, 500, "toy corpus must preprocess cleanly: {stats:?}");
    let sequences: Vec<Vec<String>> =
        records.iter().flat_map(|r| [r.buggy.clone(), r.fixed.clone()]).collect();
    let vocab = build_vocab(sequences.iter().map(|v| v.as_slice()), 1);
    let config = fixture_model_config();
    let mut params = ModelParams::init(
        &config,
        ModelDims { vocab_size: vocab.len(), node_types: index.len() },
        TRAIN_SEED,
    );
    let tc = TrainConfig {
        batch_size: 50,
        epochs: 60,
        peak_lr: 1.5e-3,
        warmup_frac: 0.05,
        seed: TRAIN_SEED,
        validation_fraction: 0.1,
        clip_norm: 1.0,
        stop_at_val_exact: None,
    };
    let start = Instant::now();
    let report = train(&records, &vocab, &mut params, &config, &tc).expect("training succeeds");
    TrainedFixture {
        records,
        vocab,
        params,
        config,
        report,
        train_seconds: start.elapsed().as_secs_f64(),
    }
});

fn fixture_splits(fx: &TrainedFixture) -> (Vec<PreprocessRecord>, Vec<PreprocessRecord>) {
    split_corpus(&fx.records, 0.1, TRAIN_SEED)
}

// ---------------------------------------------------------------------
// Criterion 1: edit-script oracle
// ---------------------------------------------------------------------

/// Plain memoized recursion, independent of the DP-table implementation.
fn recursive_distance(
    a: &[String],
    b: &[String],
    memo: &mut HashMap<(usize, usize), usize>,
) -> usize {
    fn go(
        a: &[String],
        b: &[String],
        i: usize,
        j: usize,
        memo: &mut HashMap<(usize, usize), usize>,
    ) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let d = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            let replace = go(a, b, i + 1, j + 1, memo);
            let delete = go(a, b, i + 1, j, memo);
            let insert = go(a, b, i, j + 1, memo);
            1 + replace.min(delete).min(insert)
        };
        memo.insert((i, j), d);
        d
    }
    go(a, b, 0, 0, memo)
}

#[test]
fn criterion_1_edit_script_oracle() {
    let start = Instant::now();
    let grammar = MiniGrammar::new();
    let pairs = generate_toy_corpus(101, 10_000, &grammar);
    let checked: usize = pairs
        .par_iter()
        .map(|pair| {
            let buggy = tokenize(&pair.buggy, &grammar);
            let fixed = tokenize(&pair.fixed, &grammar);
            let script = derive_script(&buggy, &fixed, 64).expect("derivable");
            assert_eq!(apply_script(&buggy, &script).unwrap(), fixed, "pair {}", pair.id);
            assert_eq!(
                script.cost(&buggy),
                edit_distance(&buggy, &fixed),
                "pair {}",
                pair.id
            );
            1
        })
        .sum();
    assert_eq!(checked, 10_000);

    // Exhaustive distance oracle: all pairs of sequences of length <= 6
    // over a two-token alphabet.
    let mut sequences: Vec<Vec<String>> = vec![Vec::new()];
    let mut frontier: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..6 {
        let mut next = Vec::new();
        for s in &frontier {
            for t in ["a", "b"] {
                let mut s2 = s.clone();
                s2.push(t.to_string());
                next.push(s2);
            }
        }
        sequences.extend(next.iter().cloned());
        frontier = next;
    }
    assert_eq!(sequences.len(), 127);
    let mut oracle_pairs = 0usize;
    for a in &sequences {
        for b in &sequences {
            let mut memo = HashMap::new();
            assert_eq!(
                edit_distance(a, b),
                recursive_distance(a, b, &mut memo),
                "a={a:?} b={b:?}"
            );
            oracle_pairs += 1;
        }
    }
    assert_eq!(oracle_pairs, 127 * 127);

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 1 took {elapsed:.1}s, budget 30s");
    println!(
        "ACCEPTANCE 1: PASS - 10000 reconstructions + cost optimality, {} distance-oracle pairs, {elapsed:.1}s",
        oracle_pairs
    );
}

// ---------------------------------------------------------------------
// Criterion 2: paper worked example
// ---------------------------------------------------------------------

#[test]
fn criterion_2_worked_example() {
    let buggy = toks("if ( result != null )");
    let fixed = toks("if ( ! result . isNotype ( ) )");
    let script = derive_script(&buggy, &fixed, 10).unwrap();
    use RepairAction::*;
    assert_eq!(script.actions, vec![Keep, Keep, Insert, Replace, Replace, Insert]);
    assert_eq!(script.fertilities.iter().sum::<usize>(), 9);
    assert_eq!(apply_script(&buggy, &script).unwrap(), fixed);
    println!(
        "ACCEPTANCE 2: PASS - actions {:?}, fertilities {:?} (sum 9)",
        script.actions.iter().map(|a| a.as_str()).collect::<Vec<_>>(),
        script.fertilities
    );
}

// ---------------------------------------------------------------------
// Criterion 3: LCA oracle
// ---------------------------------------------------------------------

/// Rooted-tree counts (number of unlabeled rooted trees on n nodes),
/// used to validate the level-sequence enumerator itself.
const ROOTED_TREE_COUNTS: [u64; 20] = [
    1, 1, 2, 4, 9, 20, 48, 115, 286, 719, 1842, 4766, 12486, 32973, 87811, 235381, 634847,
    1721159, 4688676, 12826228,
];

/// Beyer-Hedetniemi successor over level sequences; enumerates every
/// rooted tree shape with exactly n nodes.
struct LevelSequences {
    seq: Vec<u8>,
    done: bool,
    first: bool,
}

impl LevelSequences {
    fn new(n: usize) -> Self {
        LevelSequences { seq: (1..=n as u8).collect(), done: false, first: true }
    }
}

impl Iterator for LevelSequences {
    type Item = Vec<u8>;

    fn next(&mut self) -> Option<Vec<u8>> {
        if self.done {
            return None;
        }
        if self.first {
            self.first = false;
            return Some(self.seq.clone());
        }
        // Find the last entry > 2; if none, the star was reached.
        let Some(p) = self.seq.iter().rposition(|&l| l > 2) else {
            self.done = true;
            return None;
        };
        let q = (0..p).rfind(|&i| self.seq[i] == self.seq[p] - 1).expect("parent level exists");
        let offset = p - q;
        for i in p..self.seq.len() {
            self.seq[i] = self.seq[i - offset];
        }
        Some(self.seq.clone())
    }
}

fn parents_from_levels(levels: &[u8], parents: &mut Vec<usize>, last_at_level: &mut [usize; 24]) {
    parents.clear();
    for (i, &l) in levels.iter().enumerate() {
        parents.push(if l == 1 { usize::MAX } else { last_at_level[(l - 1) as usize] });
        last_at_level[l as usize] = i;
    }
}

/// Builds an AstTree from a parent array using the public constructors;
/// childless nodes become leaves in DFS order.
fn tree_from_parents(parents: &[usize]) -> AstTree {
    let n = parents.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, &p) in parents.iter().enumerate() {
        if p != usize::MAX {
            children[p].push(i);
        }
    }
    let mut tree = AstTree::new();
    let mut map = vec![usize::MAX; n];
    let mut next_token = 0usize;
    // Post-order build so children exist before their parent.
    fn build(
        node: usize,
        children: &[Vec<usize>],
        tree: &mut AstTree,
        map: &mut [usize],
        next_token: &mut usize,
    ) {
        if children[node].is_empty() {
            map[node] = tree.add_leaf("", *next_token, "");
            *next_token += 1;
            return;
        }
        for &c in &children[node] {
            build(c, children, tree, map, next_token);
        }
        let ids: Vec<usize> = children[node].iter().map(|&c| map[c]).collect();
        map[node] = tree.add_internal("", ids);
    }
    build(0, &children, &mut tree, &mut map, &mut next_token);
    tree.set_root(map[0]);
    tree
}

/// Root-path comparison oracle with caller-provided buffers.
fn nca_by_root_paths(
    tree: &AstTree,
    leaf_i: usize,
    leaf_j: usize,
    pa: &mut Vec<usize>,
    pb: &mut Vec<usize>,
) -> usize {
    pa.clear();
    pb.clear();
    let mut n = leaf_i;
    pa.push(n);
    while let Some(p) = tree.nodes[n].parent {
        pa.push(p);
        n = p;
    }
    let mut n = leaf_j;
    pb.push(n);
    while let Some(p) = tree.nodes[n].parent {
        pb.push(p);
        n = p;
    }
    pa.reverse();
    pb.reverse();
    let mut last = pa[0];
    for k in 0..pa.len().min(pb.len()) {
        if pa[k] == pb[k] {
            last = pa[k];
        } else {
            break;
        }
    }
    if last == leaf_i || last == leaf_j {
        last = tree.nodes[last].parent.expect("leaf has a parent");
    }
    last
}

fn check_tree_against_oracle(parents: &[usize]) -> u64 {
    let tree = tree_from_parents(parents);
    let leaves = tree.leaves().to_vec();
    let mut pa = Vec::with_capacity(32);
    let mut pb = Vec::with_capacity(32);
    let mut pairs = 0u64;
    for &a in &leaves {
        for &b in &leaves {
            let got = tree.nearest_common_parent(a, b);
            let want = nca_by_root_paths(&tree, a, b, &mut pa, &mut pb);
            assert_eq!(got, want, "parents={parents:?} a={a} b={b}");
            pairs += 1;
        }
    }
    pairs
}

#[test]
fn criterion_3_lca_oracle() {
    let start = Instant::now();

    // Exhaustive over every rooted tree with up to 20 nodes.
    let mut total_trees = 0u64;
    let mut total_pairs = 0u64;
    for n in 2..=20usize {
        let mut batch: Vec<Vec<u8>> = Vec::with_capacity(65_536);
        let mut trees_n = 0u64;
        let flush = |batch: &mut Vec<Vec<u8>>, pairs: &mut u64| {
            let batch_pairs: u64 = batch
                .par_iter()
                .map(|levels| {
                    let mut parents = Vec::with_capacity(levels.len());
                    let mut last = [0usize; 24];
                    parents_from_levels(levels, &mut parents, &mut last);
                    check_tree_against_oracle(&parents)
                })
                .sum();
            *pairs += batch_pairs;
            batch.clear();
        };
        for seq in LevelSequences::new(n) {
            trees_n += 1;
            batch.push(seq);
            if batch.len() == 65_536 {
                flush(&mut batch, &mut total_pairs);
            }
        }
        flush(&mut batch, &mut total_pairs);
        assert_eq!(trees_n, ROOTED_TREE_COUNTS[n - 1], "enumerator count for n={n}");
        total_trees += trees_n;
    }
    assert_eq!(total_trees, ROOTED_TREE_COUNTS[1..].iter().sum::<u64>());

    // 1,000 random trees with up to 200 nodes.
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..1000 {
        let n = rng.gen_range(2..=200);
        let mut parents = vec![usize::MAX];
        for i in 1..n {
            parents.push(rng.gen_range(0..i));
        }
        total_pairs += check_tree_against_oracle(&parents);
    }

    // Every toy-corpus dependency matrix is bit-symmetric.
    let grammar = MiniGrammar::new();
    let pairs = generate_toy_corpus(CORPUS_SEED, 500, &grammar);
    let (records, _, _) = preprocess(&pairs, &grammar, 10, 64);
    for r in &records {
        assert!(r.dep_matrix().is_symmetric(), "matrix asymmetric for {}", r.id);
    }

    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "ACCEPTANCE 3: PASS - {total_trees} exhaustive trees + 1000 random, {total_pairs} leaf pairs, 500 symmetric matrices, {elapsed:.1}s"
    );
}

// ---------------------------------------------------------------------
// Criterion 4: gradient exactness
// ---------------------------------------------------------------------

#[test]
fn criterion_4_gradient_exactness() {
    let start = Instant::now();
    let config = ModelConfig {
        d_model: 8,
        n_heads: 2,
        encoder_layers: 2,
        decoder_layers: 2,
        decoder_split: 1,
        conv_kernel: 3,
        max_repair_length: 4,
        confidence_threshold: 0.7,
        alpha: 0.1,
        lambda: 0.1,
        max_seq_len: 12,
        dropout: 0.0,
    };
    let dims = ModelDims { vocab_size: 11, node_types: 4 };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut entries = 0usize;

    for draw in 0..20u64 {
        // Deterministic draw with re-draw on degenerate targets or on a
        // predictor ReLU input so close to zero that the h=1e-5 stencil
        // would straddle the kink (finite differences are invalid there;
        // every other activation in the network is smooth).
        let mut attempt = 0u64;
        let (params, buggy, actions, fertilities, fixed_ids, matrix) = loop {
            let params =
                ModelParams::init(&config, dims, 1000 + draw * 101 + attempt * 7919);
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + draw * 131 + attempt * 104_729);
            let n = rng.gen_range(3..=6usize);
            let buggy: Vec<usize> =
                (0..n).map(|_| rng.gen_range(5..dims.vocab_size)).collect();
            let mut actions = Vec::with_capacity(n);
            let mut fertilities = Vec::with_capacity(n);
            for _ in 0..n {
                let (a, f) = match rng.gen_range(0..4) {
                    0 => (RepairAction::Keep, 1),
                    1 => (RepairAction::Replace, 1),
                    2 => (RepairAction::Delete, 0),
                    _ => (RepairAction::Insert, rng.gen_range(2..=3)),
                };
                actions.push(a);
                fertilities.push(f);
            }
            let m: usize = fertilities.iter().sum();
            if m == 0 || m > config.max_seq_len || predictor_relu_margin(&params, &config, &buggy) < 3e-3
            {
                attempt += 1;
                assert!(attempt < 64, "could not find a clean draw");
                continue;
            }
            let fixed_ids: Vec<usize> =
                (0..m).map(|_| rng.gen_range(5..dims.vocab_size)).collect();
            let matrix = narkit::astdep::DependencyMatrix {
                m,
                entries: {
                    let mut e = vec![0usize; m * m];
                    for i in 0..m {
                        for j in i..m {
                            let c = rng.gen_range(0..dims.node_types);
                            e[i * m + j] = c;
                            e[j * m + i] = c;
                        }
                    }
                    e
                },
            };
            break (params, buggy, actions, fertilities, fixed_ids, matrix);
        };

        let eval = |p: &ModelParams| -> f64 {
            let mut t = forward_teacher(p, &config, &buggy, &actions, &fertilities, None)
                .expect("forward");
            let labels = Labels {
                actions: &actions,
                fertilities: &fertilities,
                dep_matrix: &matrix,
                fixed_ids: &fixed_ids,
            };
            loss_joint(&mut t, &labels, &config).expect("loss").0.total
        };

        let mut trace =
            forward_teacher(&params, &config, &buggy, &actions, &fertilities, None).unwrap();
        let labels = Labels {
            actions: &actions,
            fertilities: &fertilities,
            dep_matrix: &matrix,
            fixed_ids: &fixed_ids,
        };
        let (_, grads) = loss_joint(&mut trace, &labels, &config).unwrap();

        let names: Vec<String> = params.tensors.keys().cloned().collect();
        let per_param: Vec<(f64, usize)> = names
            .par_iter()
            .map(|name| {
                let len = params.get(name).len();
                let mut worst_here: f64 = 0.0;
                for e in 0..len {
                    let mut plus = params.clone();
                    plus.tensors.get_mut(name).unwrap().data_mut()[e] += h;
                    let mut minus = params.clone();
                    minus.tensors.get_mut(name).unwrap().data_mut()[e] -= h;
                    let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let analytic = grads[name].data()[e];
                    // Denominator floored at the resolution of central
                    // differences in f64 (rounding noise is ~1e-10 absolute
                    // at h=1e-5 for a loss of this size).
                    let denom = analytic.abs().max(numeric.abs()).max(1e-5);
                    let rel = (analytic - numeric).abs() / denom;
                    assert!(
                        rel < 1e-4,
                        "draw {draw} {name}[{e}]: analytic {analytic} vs numeric {numeric} (rel {rel:.2e})"
                    );
                    worst_here = worst_here.max(rel);
                }
                (worst_here, len)
            })
            .collect();
        for (w, len) in per_param {
            worst = worst.max(w);
            entries += len;
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 4 took {elapsed:.1}s, budget 120s");
    println!(
        "ACCEPTANCE 4: PASS - 20 draws, {entries} gradient entries, worst relative error {worst:.2e}, {elapsed:.1}s"
    );
}

/// Smallest absolute pre-activation entering the predictor's ReLU (the
/// only non-smooth op on the loss path).
fn predictor_relu_margin(params: &ModelParams, config: &ModelConfig, buggy: &[usize]) -> f64 {
    let mut g = Graph::new();
    let pn = ParamNodes::new(params);
    let encoded = narkit::nnet::model::encode(&mut g, &pn, config, buggy).unwrap();
    let n = buggy.len();
    let (k, d) = (config.conv_kernel, config.d_model);
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
    let (cw, cb) = (pn.get(&mut g, "pred.conv.w"), pn.get(&mut g, "pred.conv.b"));
    let lin = g.matmul(im2col, cw);
    let feature = g.add_row(lin, cb);
    g.value(feature).data().iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
}

// ---------------------------------------------------------------------
// Criterion 5: training sanity
// ---------------------------------------------------------------------

#[test]
fn criterion_5_training_sanity() {
    let fx = &*TRAINED;
    assert!(
        fx.train_seconds < 1800.0,
        "training took {:.0}s, budget 1800s",
        fx.train_seconds
    );
    assert!(fx.report.epochs.len() <= 200);

    // Total loss strictly decreases over the first 10 epochs under a
    // 5-epoch moving average.
    let totals: Vec<f64> = fx.report.epochs.iter().take(10).map(|e| e.total).collect();
    assert!(totals.len() >= 10, "need at least 10 epochs, got {}", totals.len());
    let ma: Vec<f64> =
        (4..10).map(|e| totals[e - 4..=e].iter().sum::<f64>() / 5.0).collect();
    for w in ma.windows(2) {
        assert!(w[1] < w[0], "moving average not strictly decreasing: {ma:?}");
    }

    let (train_set, val_set) = fixture_splits(fx);
    let train_eval = evaluate(&fx.params, &fx.config, &fx.vocab, &train_set).unwrap();
    let val_eval = evaluate(&fx.params, &fx.config, &fx.vocab, &val_set).unwrap();
    assert!(
        train_eval.exact_match >= 0.95,
        "train exact match {:.3} < 0.95",
        train_eval.exact_match
    );
    assert!(val_eval.exact_match >= 0.60, "val exact match {:.3} < 0.60", val_eval.exact_match);
    // The trained dependency head reproduces the ground-truth matrices.
    assert!(
        train_eval.dependency_cell_accuracy >= 0.90,
        "dependency cell accuracy {:.3} < 0.90",
        train_eval.dependency_cell_accuracy
    );
    println!(
        "ACCEPTANCE 5: PASS - train EM {:.3}, heldout EM {:.3}, dep cells {:.3}, {} epochs in {:.0}s",
        train_eval.exact_match,
        val_eval.exact_match,
        train_eval.dependency_cell_accuracy,
        fx.report.epochs.len(),
        fx.train_seconds
    );
}

// ---------------------------------------------------------------------
// Criterion 6: two-stage masking behavior
// ---------------------------------------------------------------------

#[test]
fn criterion_6_two_stage_masking() {
    let fx = &*TRAINED;
    let (_, val_set) = fixture_splits(fx);

    // (a) With the trained threshold, at least one eval example has a
    // stage-1 error at a masked position that stage 2 corrects.
    let mut corrected = 0usize;
    let mut masked_total = 0usize;
    for r in &val_set {
        let buggy_ids = fx.vocab.encode(&r.buggy);
        let fixed_ids = fx.vocab.encode(&r.fixed);
        let trace = forward_teacher(
            &fx.params,
            &fx.config,
            &buggy_ids,
            &r.actions,
            &r.fertilities,
            None,
        )
        .unwrap();
        let p1 = trace.value(trace.decode.p_first);
        let p2 = trace.value(trace.decode.p_second);
        for j in 0..trace.m {
            if trace.decode.masked[j] {
                masked_total += 1;
                if argmax(p1.row(j)) != fixed_ids[j] && argmax(p2.row(j)) == fixed_ids[j] {
                    corrected += 1;
                }
            }
        }
    }
    assert!(
        corrected >= 1,
        "no stage-2 correction found across {masked_total} masked positions"
    );

    // (b) With threshold 0 every position is retained and the stage-2
    // input equals the stage-1 features bit-exactly.
    let mut zero_config = fx.config.clone();
    zero_config.confidence_threshold = 0.0;
    let r = &val_set[0];
    let buggy_ids = fx.vocab.encode(&r.buggy);
    let trace = forward_teacher(
        &fx.params,
        &zero_config,
        &buggy_ids,
        &r.actions,
        &r.fertilities,
        None,
    )
    .unwrap();
    assert!(trace.decode.masked.iter().all(|&m| !m));
    assert_eq!(
        trace.value(trace.decode.first_feats),
        trace.value(trace.decode.mask_feats),
        "stage-2 input must equal stage-1 features bit-exactly"
    );
    println!(
        "ACCEPTANCE 6: PASS - {corrected} of {masked_total} masked positions corrected by stage 2; threshold 0 retains everything bit-exactly"
    );
}

// ---------------------------------------------------------------------
// Criterion 7: latency property
// ---------------------------------------------------------------------

#[test]
fn criterion_7_latency_property() {
    let config = ModelConfig {
        d_model: 64,
        n_heads: 4,
        encoder_layers: 2,
        decoder_layers: 2,
        decoder_split: 1,
        conv_kernel: 3,
        max_repair_length: 10,
        confidence_threshold: 0.7,
        alpha: 0.1,
        lambda: 0.1,
        max_seq_len: 192,
        dropout: 0.0,
    };
    let params = ModelParams::init(&config, ModelDims { vocab_size: 64, node_types: 16 }, 3);
    let lengths = [16usize, 32, 64, 128];
    let result = infer::bench_latency(&lengths, &params, &config, 5).unwrap();
    assert_eq!(result.rows.len(), 4);
    for row in &result.rows {
        assert_eq!(row.nar_passes, 2, "parallel decoder must run exactly 2 passes");
        assert_eq!(row.ar_passes, row.length, "baseline must run one pass per token");
    }
    for w in result.rows.windows(2) {
        assert!(
            w[1].speedup > w[0].speedup,
            "speedup not monotone: {} at {} vs {} at {}",
            w[0].speedup,
            w[0].length,
            w[1].speedup,
            w[1].length
        );
    }
    let last = result.rows.last().unwrap();
    assert!(last.speedup > 3.0, "speedup at 128 is {:.2}x, need > 3x", last.speedup);
    println!(
        "ACCEPTANCE 7: PASS - speedups {:?} over lengths {:?} (medians of 5)",
        result.rows.iter().map(|r| format!("{:.1}x", r.speedup)).collect::<Vec<_>>(),
        lengths
    );
}

// ---------------------------------------------------------------------
// Criterion 8: over-correction property
// ---------------------------------------------------------------------

#[test]
fn criterion_8_overcorrection() {
    let fx = &*TRAINED;
    let (_, val_set) = fixture_splits(fx);

    let mut full_sum = 0usize;
    let mut ablated_sum = 0usize;
    let mut counted = 0usize;
    for r in &val_set {
        let oracle = RepairScript {
            actions: r.actions.clone(),
            fertilities: r.fertilities.clone(),
            spans: r.spans.clone(),
        };
        let full = infer::repair_tokens(&fx.params, &fx.config, &fx.vocab, &r.buggy, 1).unwrap();
        let ablated =
            infer::repair_tokens_action_ablated(&fx.params, &fx.config, &fx.vocab, &r.buggy)
                .unwrap();
        if let (Some(f), Some(a)) = (full.first(), ablated.as_ref()) {
            full_sum += infer::overcorrection_count(&r.buggy, f, &oracle);
            ablated_sum += infer::overcorrection_count(&r.buggy, a, &oracle);
            counted += 1;
        }
    }
    let full_mean = full_sum as f64 / counted as f64;
    let ablated_mean = ablated_sum as f64 / counted as f64;
    assert!(
        full_mean < ablated_mean,
        "full model {full_mean:.3} not strictly below ablated {ablated_mean:.3}"
    );

    // With oracle actions, positions inside keep runs emit the source token
    // unchanged: over-correction is exactly zero there.
    let mut keep_run_positions = 0usize;
    for r in &val_set {
        let buggy_ids = fx.vocab.encode(&r.buggy);
        let trace = forward_teacher(
            &fx.params,
            &fx.config,
            &buggy_ids,
            &r.actions,
            &r.fertilities,
            None,
        )
        .unwrap();
        let (tokens, _) = narkit::nnet::decode_final_tokens(
            &trace.graph,
            &trace.decode,
            &trace.target_actions,
            &trace.src_of_target,
            &r.buggy,
            &fx.vocab,
        );
        let runs = narkit::nnet::model::keep_run_positions(&trace.target_actions);
        for j in 0..trace.m {
            if runs[j] {
                keep_run_positions += 1;
                assert_eq!(
                    tokens[j], r.buggy[trace.src_of_target[j]],
                    "keep-run position {j} of {} modified",
                    r.id
                );
            }
        }
    }
    println!(
        "ACCEPTANCE 8: PASS - mean over-correction {full_mean:.3} (full) < {ablated_mean:.3} (action-ablated) on {counted} examples; 0 changes across {keep_run_positions} oracle keep-run positions"
    );
}

// ---------------------------------------------------------------------
// Criterion 9: similarity trend
// ---------------------------------------------------------------------

#[test]
fn criterion_9_similarity_trend() {
    let fx = &*TRAINED;
    let (_, val_set) = fixture_splits(fx);
    let grammar = MiniGrammar::new();
    let rows =
        infer::node_similarity_report(&fx.params, &fx.config, &fx.vocab, &grammar, &val_set)
            .unwrap();
    let mean_at = |d: usize| rows.iter().find(|r| r.distance == d).map(|r| r.mean);
    let d1 = mean_at(1).expect("distance-1 bucket present");
    let d4 = mean_at(4).expect("distance-4 bucket present");
    assert!(d1 > d4, "distance-1 mean {d1:.4} must exceed distance-4 mean {d4:.4}");
    println!(
        "ACCEPTANCE 9: PASS - mean cosine by distance: {}",
        rows.iter()
            .map(|r| format!("d{}={:.3}", r.distance, r.mean))
            .collect::<Vec<_>>()
            .join(" ")
    );
}

// ---------------------------------------------------------------------
// Criterion 10: determinism
// ---------------------------------------------------------------------

#[test]
fn criterion_10_determinism() {
    let grammar = MiniGrammar::new();

    // Corpus generation + preprocessing byte-determinism.
    let run_preprocess = || {
        let pairs = generate_toy_corpus(5, 40, &grammar);
        let (records, index, _) = preprocess(&pairs, &grammar, 10, 64);
        let mut records_bytes = Vec::new();
        narkit::preprocess::write_records(&mut records_bytes, &records).unwrap();
        let sequences: Vec<Vec<String>> =
            records.iter().flat_map(|r| [r.buggy.clone(), r.fixed.clone()]).collect();
        let vocab = build_vocab(sequences.iter().map(|v| v.as_slice()), 1);
        (records_bytes, vocab.to_text(), index.to_text(), records, vocab, index)
    };
    let (bytes_a, vocab_a, types_a, records, vocab, index) = run_preprocess();
    let (bytes_b, vocab_b, types_b, _, _, _) = run_preprocess();
    assert_eq!(bytes_a, bytes_b, "preprocess records must be byte-identical");
    assert_eq!(vocab_a, vocab_b);
    assert_eq!(types_a, types_b);

    // Training byte-determinism (checkpoint bytes).
    let config = ModelConfig {
        d_model: 16,
        n_heads: 2,
        encoder_layers: 1,
        decoder_layers: 2,
        decoder_split: 1,
        max_seq_len: 64,
        ..fixture_model_config()
    };
    let tc = TrainConfig {
        batch_size: 10,
        epochs: 3,
        peak_lr: 1e-3,
        seed: 4,
        validation_fraction: 0.1,
        ..Default::default()
    };
    let train_once = || {
        let mut params = ModelParams::init(
            &config,
            ModelDims { vocab_size: vocab.len(), node_types: index.len() },
            tc.seed,
        );
        train(&records, &vocab, &mut params, &config, &tc).unwrap();
        let mut bytes = Vec::new();
        narkit::nnet::checkpoint::save(&mut bytes, &params, &config).unwrap();
        (bytes, params)
    };
    let (ckpt_a, params) = train_once();
    let (ckpt_b, _) = train_once();
    assert_eq!(ckpt_a, ckpt_b, "checkpoints must be byte-identical for a fixed seed");

    // Repair determinism (full candidate list).
    let buggy = &records[0].buggy;
    let x = infer::repair_tokens(&params, &config, &vocab, buggy, 50).unwrap();
    let y = infer::repair_tokens(&params, &config, &vocab, buggy, 50).unwrap();
    assert_eq!(x, y, "repair output must be identical across runs");

    // Bench determinism: pass counts and row structure are run-independent
    // (wall-clock columns measure physical time and are reported separately
    // in passes.csv).
    let bench_a = infer::bench_latency(&[8, 16], &params, &config, 3).unwrap();
    let bench_b = infer::bench_latency(&[8, 16], &params, &config, 3).unwrap();
    assert_eq!(bench_a.passes_csv(), bench_b.passes_csv());
    println!(
        "ACCEPTANCE 10: PASS - preprocess/train/repair byte-identical, bench pass structure identical"
    );
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

// ---------------------------------------------------------------------
// Supporting invariants exercised at the acceptance level
// ---------------------------------------------------------------------

/// All softmax distributions stay valid on the trained model, and the
/// forward pass stays deterministic with dropout masks keyed by seed.
#[test]
fn trained_model_distributions_and_determinism() {
    let fx = &*TRAINED;
    let (_, val_set) = fixture_splits(fx);
    let r = &val_set[0];
    let buggy_ids = fx.vocab.encode(&r.buggy);
    let run = |dropout: Option<DropoutSpec>| {
        forward_teacher(&fx.params, &fx.config, &buggy_ids, &r.actions, &r.fertilities, dropout)
            .unwrap()
    };
    let a = run(None);
    assert!(a.distributions_valid());
    let b = run(None);
    assert_eq!(
        a.value(a.decode.second_logits),
        b.value(b.decode.second_logits),
        "teacher-forced forward must be bit-deterministic"
    );
    let spec = Some(DropoutSpec { rate: 0.1, seed: 99 });
    let c = run(spec);
    let d = run(spec);
    assert_eq!(c.value(c.decode.second_logits), d.value(d.decode.second_logits));
}

/// The soft-copy expansion count matches the fertility sum for every
/// trained-corpus record (conservation at the model boundary).
#[test]
fn fertility_conservation_via_model() {
    let fx = &*TRAINED;
    let (_, val_set) = fixture_splits(fx);
    for r in val_set.iter().take(10) {
        let buggy_ids = fx.vocab.encode(&r.buggy);
        let mut g = Graph::new();
        let pn = ParamNodes::new(&fx.params);
        let e = narkit::nnet::model::encode(&mut g, &pn, &fx.config, &buggy_ids).unwrap();
        let (d, src) =
            narkit::nnet::model::expand_to_target(&mut g, &pn, &fx.config, e, &r.fertilities)
                .unwrap();
        assert_eq!(g.value(d).rows(), r.m);
        assert_eq!(src.len(), r.fertilities.iter().sum::<usize>());
    }
}
