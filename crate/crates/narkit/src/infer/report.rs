//! Cosine-similarity report between fused token features and the
//! embeddings of their predicted dependency classes, bucketed by the true
//! tree distance from the token to the common parent.
//!
//! A class embedding is the prototype of that class in feature space: the
//! mean fused vector of the tokens whose predicted immediate parent is the
//! class. Distance-1 cells therefore compare a token against its own
//! syntactic neighborhood, and the similarity falls off as the predicted
//! parent moves up the tree.

use crate::astdep::{self, GrammarProvider};
use crate::corpus::Vocabulary;
use crate::nnet::model::{encode, expand_to_target, extract_dependencies, ParamNodes};
use crate::nnet::{Graph, ModelConfig, ModelParams, NnetError};
use crate::preprocess::PreprocessRecord;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRow {
    pub distance: usize,
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
}

pub fn similarity_csv(rows: &[SimilarityRow]) -> String {
    let mut out = String::from("distance,count,mean_cosine,var_cosine\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.6},{:.6}\n", r.distance, r.count, r.mean, r.variance));
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// For every record and token pair (j, i): predict the dependency class of
/// cell (j, i), compute the cosine between token j's fused feature and that
/// class's prototype, and bucket it by the tree distance from leaf j to the
/// true nearest common parent of (j, i). Buckets that receive no samples
/// are omitted.
pub fn node_similarity_report(
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocabulary,
    grammar: &dyn GrammarProvider,
    records: &[PreprocessRecord],
) -> Result<Vec<SimilarityRow>, NnetError> {
    let classes = params.dims.node_types;
    let d = config.d_model;
    let mut sums: BTreeMap<usize, (usize, f64, f64)> = BTreeMap::new();
    for record in records {
        let Ok(tree) = astdep::parse(&record.fixed.join(" "), grammar) else { continue };
        if tree.leaf_count() != record.m {
            continue;
        }
        let buggy_ids = vocab.encode(&record.buggy);
        let mut g = Graph::new();
        let pn = ParamNodes::new(params);
        let encoded = encode(&mut g, &pn, config, &buggy_ids)?;
        let (expanded, _) = match expand_to_target(&mut g, &pn, config, encoded, &record.fertilities)
        {
            Ok(x) => x,
            Err(NnetError::EmptyTarget) => continue,
            Err(e) => return Err(e),
        };
        let extraction = extract_dependencies(&mut g, &pn, config, expanded);
        let m = record.m;
        let scores = g.value(extraction.dep_scores);
        let fused = g.value(extraction.fused);

        let cell_class = |j: usize, i: usize| {
            let mut best = 0;
            for c in 0..classes {
                if scores.get2(j * classes + c, i) > scores.get2(j * classes + best, i) {
                    best = c;
                }
            }
            best
        };
        // Feature-space prototypes keyed by each token's predicted
        // immediate parent (the diagonal cell).
        let mut prototypes = vec![vec![0.0f64; d]; classes];
        let mut members = vec![0usize; classes];
        for j in 0..m {
            let c = cell_class(j, j);
            members[c] += 1;
            for (slot, v) in prototypes[c].iter_mut().zip(fused.row(j)) {
                *slot += v;
            }
        }
        for (c, proto) in prototypes.iter_mut().enumerate() {
            if members[c] > 0 {
                for v in proto.iter_mut() {
                    *v /= members[c] as f64;
                }
            }
        }

        for j in 0..m {
            for i in 0..m {
                let c = cell_class(j, i);
                if members[c] == 0 {
                    continue;
                }
                let leaf_j = tree.leaf_for_token(j);
                let leaf_i = tree.leaf_for_token(i);
                let nca = tree.nearest_common_parent(leaf_j, leaf_i);
                let distance = tree.distance_to_ancestor(leaf_j, nca);
                let sim = cosine(fused.row(j), &prototypes[c]);
                let entry = sums.entry(distance).or_insert((0, 0.0, 0.0));
                entry.0 += 1;
                entry.1 += sim;
                entry.2 += sim * sim;
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|(distance, (count, sum, sum_sq))| {
            let mean = sum / count as f64;
            SimilarityRow {
                distance,
                count,
                mean,
                variance: (sum_sq / count as f64 - mean * mean).max(0.0),
            }
        })
        .collect())
}
