//! Ground-truth repair actions from token-level edit scripts.
//!
//! `derive_script` aligns a buggy token sequence with its fixed counterpart
//! by dynamic programming and reads the alignment back as one action per
//! buggy token (keep / replace / delete / insert) plus a fertility: the
//! number of target tokens that position emits. Insertion runs attach to the
//! next surviving buggy token (trailing runs to the last token), growing its
//! span. `apply_script` inverts the construction and is the oracle for it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepairAction {
    Keep,
    Replace,
    Delete,
    Insert,
}

impl RepairAction {
    pub fn as_str(self) -> &'static str {
        match self {
            RepairAction::Keep => "keep",
            RepairAction::Replace => "replace",
            RepairAction::Delete => "delete",
            RepairAction::Insert => "insert",
        }
    }

    /// Stable label index used by the action head of the network.
    pub fn index(self) -> usize {
        match self {
            RepairAction::Keep => 0,
            RepairAction::Replace => 1,
            RepairAction::Delete => 2,
            RepairAction::Insert => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(RepairAction::Keep),
            1 => Some(RepairAction::Replace),
            2 => Some(RepairAction::Delete),
            3 => Some(RepairAction::Insert),
            _ => None,
        }
    }
}

pub const N_ACTIONS: usize = 4;

/// Per-buggy-token actions, fertilities, and emitted target spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairScript {
    pub actions: Vec<RepairAction>,
    pub fertilities: Vec<usize>,
    pub spans: Vec<Vec<String>>,
}

impl RepairScript {
    pub fn target_len(&self) -> usize {
        self.fertilities.iter().sum()
    }

    /// Checks the structural invariants against the buggy sequence.
    pub fn validate(&self, buggy: &[String]) -> Result<(), EditScriptError> {
        let n = buggy.len();
        if self.actions.len() != n || self.fertilities.len() != n || self.spans.len() != n {
            return Err(EditScriptError::MalformedScript(format!(
                "script length mismatch: {} actions for {} tokens",
                self.actions.len(),
                n
            )));
        }
        for i in 0..n {
            let (action, fert, span) = (self.actions[i], self.fertilities[i], &self.spans[i]);
            if span.len() != fert {
                return Err(EditScriptError::MalformedScript(format!(
                    "position {i}: span length {} != fertility {fert}",
                    span.len()
                )));
            }
            let ok = match action {
                RepairAction::Keep => fert == 1 && span[0] == buggy[i],
                RepairAction::Replace => fert == 1,
                RepairAction::Delete => fert == 0,
                RepairAction::Insert => fert >= 2,
            };
            if !ok {
                return Err(EditScriptError::MalformedScript(format!(
                    "position {i}: action {} with fertility {fert}",
                    action.as_str()
                )));
            }
        }
        Ok(())
    }

    /// Edit operations implied by the spans: replacements, deletions, and
    /// inserted tokens. Equals the Levenshtein distance for derived scripts.
    pub fn cost(&self, buggy: &[String]) -> usize {
        let mut cost = 0;
        for i in 0..buggy.len() {
            match self.actions[i] {
                RepairAction::Keep => {}
                RepairAction::Replace => cost += 1,
                RepairAction::Delete => cost += 1,
                RepairAction::Insert => {
                    // One span token anchors the original buggy token, the
                    // rest are inserted. On a minimal alignment the anchor
                    // was replaced iff the buggy token appears nowhere in
                    // the span.
                    cost += self.spans[i].len() - 1;
                    if !self.spans[i].iter().any(|t| t == &buggy[i]) {
                        cost += 1;
                    }
                }
            }
        }
        cost
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditScriptError {
    /// A fertility exceeds the configured maximum; the pair must be
    /// filtered from training rather than truncated.
    #[error("fertility {fertility} at position {position} exceeds max repair length {max}")]
    LengthOverflow { position: usize, fertility: usize, max: usize },
    #[error("malformed script: {0}")]
    MalformedScript(String),
}

/// Token-level Levenshtein distance with unit costs.
pub fn edit_distance(a: &[String], b: &[String]) -> usize {
    suffix_costs(a, b)[0][0]
}

/// `costs[i][j]` = distance between `a[i..]` and `b[j..]`.
fn suffix_costs(a: &[String], b: &[String]) -> Vec<Vec<usize>> {
    let (n, m) = (a.len(), b.len());
    let mut costs = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            costs[i][j] = if i == n {
                m - j
            } else if j == m {
                n - i
            } else if a[i] == b[j] {
                costs[i + 1][j + 1]
            } else {
                1 + costs[i + 1][j + 1].min(costs[i + 1][j]).min(costs[i][j + 1])
            };
        }
    }
    costs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Keep,
    Replace,
    Delete,
    Insert,
}

/// Derives the ground-truth script for a buggy/fixed pair.
///
/// Among equal-cost alignments the walk prefers keep > replace > delete >
/// insert at each step, which maximizes keep labels and makes the result a
/// pure function of the inputs.
pub fn derive_script(
    buggy: &[String],
    fixed: &[String],
    max_repair_length: usize,
) -> Result<RepairScript, EditScriptError> {
    assert!(!buggy.is_empty(), "buggy sequence must be non-empty");
    let costs = suffix_costs(buggy, fixed);
    let (n, m) = (buggy.len(), fixed.len());

    // Walk the optimal alignment front-to-back, taking the most preferred
    // step that stays on a minimal-cost path.
    let mut steps: Vec<Step> = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (0usize, 0usize);
    while i < n || j < m {
        let here = costs[i][j];
        let step = if i < n && j < m && buggy[i] == fixed[j] && costs[i + 1][j + 1] == here {
            Step::Keep
        } else if i < n && j < m && costs[i + 1][j + 1] + 1 == here {
            Step::Replace
        } else if i < n && costs[i + 1][j] + 1 == here {
            Step::Delete
        } else {
            debug_assert!(j < m && costs[i][j + 1] + 1 == here);
            Step::Insert
        };
        match step {
            Step::Keep | Step::Replace => {
                i += 1;
                j += 1;
            }
            Step::Delete => i += 1,
            Step::Insert => j += 1,
        }
        steps.push(step);
    }

    // Fold the step sequence into per-buggy-position actions and spans.
    let mut actions = vec![RepairAction::Keep; n];
    let mut spans: Vec<Vec<String>> = vec![Vec::new(); n];
    let mut pending: Vec<String> = Vec::new();
    let (mut bi, mut fj) = (0usize, 0usize);
    let mut last_emitting: Option<usize> = None;
    for step in steps {
        match step {
            Step::Keep | Step::Replace => {
                let mut span = std::mem::take(&mut pending);
                span.push(fixed[fj].clone());
                actions[bi] = if span.len() > 1 {
                    RepairAction::Insert
                } else if step == Step::Keep {
                    RepairAction::Keep
                } else {
                    RepairAction::Replace
                };
                spans[bi] = span;
                last_emitting = Some(bi);
                bi += 1;
                fj += 1;
            }
            Step::Delete => {
                debug_assert!(pending.is_empty(), "minimal paths never insert before a delete");
                actions[bi] = RepairAction::Delete;
                bi += 1;
            }
            Step::Insert => {
                pending.push(fixed[fj].clone());
                fj += 1;
            }
        }
    }
    if !pending.is_empty() {
        // Trailing insertions: grow the span of the last emitting position,
        // or of the last buggy token when everything was deleted.
        let target = last_emitting.unwrap_or(n - 1);
        spans[target].extend(pending);
        actions[target] = RepairAction::Insert;
    }

    let fertilities: Vec<usize> = spans.iter().map(Vec::len).collect();
    for (position, &fertility) in fertilities.iter().enumerate() {
        if fertility > max_repair_length {
            return Err(EditScriptError::LengthOverflow {
                position,
                fertility,
                max: max_repair_length,
            });
        }
    }
    Ok(RepairScript { actions, fertilities, spans })
}

/// Reconstructs the target sequence by concatenating spans in order.
pub fn apply_script(
    buggy: &[String],
    script: &RepairScript,
) -> Result<Vec<String>, EditScriptError> {
    script.validate(buggy)?;
    let mut out = Vec::with_capacity(script.target_len());
    for (i, span) in script.spans.iter().enumerate() {
        match script.actions[i] {
            RepairAction::Keep => out.push(buggy[i].clone()),
            RepairAction::Delete => {}
            _ => out.extend(span.iter().cloned()),
        }
    }
    Ok(out)
}
