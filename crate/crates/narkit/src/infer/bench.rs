//! Decoding-latency comparison: two-pass parallel decoding vs the
//! per-token baseline at fixed target lengths. Encoder time is excluded
//! since both decoders share it.

use super::arbaseline::ar_baseline_decode;
use crate::corpus::RESERVED;
use crate::editscript::RepairAction;
use crate::nnet::model::{
    decode_two_stage, encode, expand_to_target, extract_dependencies, ParamNodes,
};
use crate::nnet::{Graph, ModelConfig, ModelParams, NnetError};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub length: usize,
    pub nar_ms: f64,
    pub ar_ms: f64,
    pub nar_passes: usize,
    pub ar_passes: usize,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub repeats: usize,
}

impl BenchResult {
    /// CSV with the measured columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("length,nar_ms,ar_ms,nar_passes,ar_passes,speedup\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.3},{:.3},{},{},{:.2}\n",
                r.length, r.nar_ms, r.ar_ms, r.nar_passes, r.ar_passes, r.speedup
            ));
        }
        out
    }

    /// The run-independent part (pass counts scale with length for the
    /// baseline and stay constant for the parallel decoder).
    pub fn passes_csv(&self) -> String {
        let mut out = String::from("length,nar_passes,ar_passes\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.length, r.nar_passes, r.ar_passes));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| length | nar_ms | ar_ms | nar_passes | ar_passes | speedup |\n|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {:.3} | {:.3} | {} | {} | {:.2}x |\n",
                r.length, r.nar_ms, r.ar_ms, r.nar_passes, r.ar_passes, r.speedup
            ));
        }
        out
    }
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    samples[samples.len() / 2]
}

/// Runs the two decoders on synthetic inputs of the given lengths and
/// reports median wall-clock over `repeats` plus exact pass counts.
pub fn bench_latency(
    lengths: &[usize],
    params: &ModelParams,
    config: &ModelConfig,
    repeats: usize,
) -> Result<BenchResult, NnetError> {
    assert!(repeats >= 3, "repeats must be at least 3");
    let vocab_size = params.dims.vocab_size;
    let mut rows = Vec::with_capacity(lengths.len());
    for &length in lengths {
        assert!(length >= 2 && length < config.max_seq_len);
        // Synthetic source: cycle through the non-reserved vocabulary.
        let ids: Vec<usize> =
            (0..length).map(|i| RESERVED + (i % (vocab_size - RESERVED).max(1))).collect();

        // Shared encoder output, excluded from both timings.
        let encoded_value = {
            let mut g = Graph::new();
            let pn = ParamNodes::new(params);
            let e = encode(&mut g, &pn, config, &ids)?;
            g.value(e).clone()
        };

        let fertilities = vec![1usize; length];
        let target_actions = vec![RepairAction::Replace; length];

        let mut nar_times = Vec::with_capacity(repeats);
        let mut nar_passes = 0;
        for _ in 0..repeats {
            let start = Instant::now();
            let mut g = Graph::new();
            let pn = ParamNodes::new(params);
            let encoded = g.leaf(encoded_value.clone());
            let (expanded, _) = expand_to_target(&mut g, &pn, config, encoded, &fertilities)?;
            let extraction = extract_dependencies(&mut g, &pn, config, expanded);
            let decode =
                decode_two_stage(&mut g, &pn, config, extraction.fused, encoded, &target_actions);
            nar_passes = decode.passes;
            nar_times.push(start.elapsed().as_secs_f64() * 1e3);
        }

        let mut ar_times = Vec::with_capacity(repeats);
        let mut ar_passes = 0;
        for _ in 0..repeats {
            let start = Instant::now();
            let out = ar_baseline_decode(params, config, &encoded_value, length, Some(length));
            ar_passes = out.passes;
            ar_times.push(start.elapsed().as_secs_f64() * 1e3);
        }

        let nar_ms = median(&mut nar_times);
        let ar_ms = median(&mut ar_times);
        rows.push(BenchRow {
            length,
            nar_ms,
            ar_ms,
            nar_passes,
            ar_passes,
            speedup: ar_ms / nar_ms,
        });
    }
    Ok(BenchResult { rows, repeats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::ModelDims;

    #[test]
    fn pass_counts_are_two_vs_length() {
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
            max_seq_len: 64,
            dropout: 0.0,
        };
        let params = ModelParams::init(&config, ModelDims { vocab_size: 12, node_types: 4 }, 1);
        let result = bench_latency(&[4, 8], &params, &config, 3).unwrap();
        assert_eq!(result.rows.len(), 2);
        for row in &result.rows {
            assert_eq!(row.nar_passes, 2);
            assert_eq!(row.ar_passes, row.length);
            assert!(row.nar_ms > 0.0 && row.ar_ms > 0.0);
        }
        let csv = result.to_csv();
        assert!(csv.starts_with("length,nar_ms"));
        assert_eq!(csv.lines().count(), 3);
    }
}
