//! Turns raw buggy/fixed pairs into training records: tokenized sides,
//! ground-truth repair script, and the dependency matrix of the fixed code.
//! Pairs whose fixed side does not parse, whose script overflows the
//! maximum repair length, or which exceed the sequence limit are filtered
//! and counted rather than truncated.

use crate::astdep::{self, AstTree, DependencyMatrix, GrammarProvider, NodeTypeIndex};
use crate::corpus::{tokenize, CodePair};
use crate::editscript::{derive_script, EditScriptError, RepairAction};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessRecord {
    pub id: String,
    pub buggy: Vec<String>,
    pub fixed: Vec<String>,
    pub actions: Vec<RepairAction>,
    pub fertilities: Vec<usize>,
    pub spans: Vec<Vec<String>>,
    /// Row-major m*m nearest-common-parent type ids over the fixed tokens.
    pub matrix: Vec<usize>,
    pub m: usize,
}

impl PreprocessRecord {
    pub fn dep_matrix(&self) -> DependencyMatrix {
        DependencyMatrix { m: self.m, entries: self.matrix.clone() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub kept: usize,
    pub parse_failures: usize,
    pub length_overflows: usize,
    pub too_long: usize,
    pub empty: usize,
}

/// Full preprocessing pass. The node-type index is harvested from the kept
/// trees (with a fallback slot), then every matrix is built against it.
pub fn preprocess(
    pairs: &[CodePair],
    grammar: &dyn GrammarProvider,
    max_repair_length: usize,
    max_seq_len: usize,
) -> (Vec<PreprocessRecord>, NodeTypeIndex, PreprocessStats) {
    let mut stats = PreprocessStats::default();
    let mut staged: Vec<(PreprocessRecord, AstTree)> = Vec::new();
    for pair in pairs {
        if pair.validate().is_err() {
            stats.empty += 1;
            continue;
        }
        let buggy = tokenize(&pair.buggy, grammar);
        let fixed = tokenize(&pair.fixed, grammar);
        if buggy.len() > max_seq_len || fixed.len() > max_seq_len || buggy.is_empty() {
            stats.too_long += 1;
            continue;
        }
        let tree = match astdep::parse(&pair.fixed, grammar) {
            Ok(t) => t,
            Err(_) => {
                stats.parse_failures += 1;
                continue;
            }
        };
        let script = match derive_script(&buggy, &fixed, max_repair_length) {
            Ok(s) => s,
            Err(EditScriptError::LengthOverflow { .. }) => {
                stats.length_overflows += 1;
                continue;
            }
            Err(e) => unreachable!("derive_script cannot fail otherwise: {e}"),
        };
        debug_assert_eq!(tree.leaf_count(), fixed.len(), "leaf/token alignment");
        let record = PreprocessRecord {
            id: pair.id.clone(),
            m: fixed.len(),
            buggy,
            fixed,
            actions: script.actions,
            fertilities: script.fertilities,
            spans: script.spans,
            matrix: Vec::new(),
        };
        staged.push((record, tree));
    }
    let index = NodeTypeIndex::harvest(staged.iter().map(|(_, t)| t));
    let mut records = Vec::with_capacity(staged.len());
    for (mut record, tree) in staged {
        let matrix = astdep::build_dependency_matrix(&tree, &index)
            .expect("harvested index covers every node type");
        debug_assert!(matrix.is_symmetric());
        record.matrix = matrix.entries;
        records.push(record);
    }
    stats.kept = records.len();
    (records, index, stats)
}

pub fn write_records(
    mut w: impl std::io::Write,
    records: &[PreprocessRecord],
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records(r: impl std::io::BufRead) -> Result<Vec<PreprocessRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}
