//! Node-type index table and the inter-word dependency matrix.

use super::tree::AstTree;
use super::AstDepError;
use std::collections::BTreeMap;

/// Frozen mapping from AST node-type names to small class ids.
///
/// Harvested once from the training split; when built with a fallback slot,
/// node types unseen at harvest time map to the `<other>` id instead of
/// erroring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeTypeIndex {
    type_to_id: BTreeMap<String, usize>,
    id_to_type: Vec<String>,
    other_id: Option<usize>,
}

pub const OTHER_TYPE: &str = "<other>";

impl NodeTypeIndex {
    /// Builds an index over the internal node types of `trees`, sorted
    /// lexicographically for a deterministic id assignment, with a trailing
    /// `<other>` fallback slot.
    pub fn harvest<'a>(trees: impl IntoIterator<Item = &'a AstTree>) -> Self {
        let mut names: Vec<String> = trees
            .into_iter()
            .flat_map(|t| t.nodes.iter())
            .filter(|n| n.token_index.is_none())
            .map(|n| n.node_type.clone())
            .collect();
        names.sort();
        names.dedup();
        Self::from_types(names, true)
    }

    pub fn from_types(mut names: Vec<String>, with_other: bool) -> Self {
        if with_other {
            names.push(OTHER_TYPE.to_string());
        }
        let type_to_id = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let other_id = if with_other { Some(names.len() - 1) } else { None };
        NodeTypeIndex { type_to_id, id_to_type: names, other_id }
    }

    /// Number of classes, including the fallback slot when present.
    pub fn len(&self) -> usize {
        self.id_to_type.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_type.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.id_to_type[id]
    }

    pub fn other_id(&self) -> Option<usize> {
        self.other_id
    }

    /// Class id for a node-type name; unseen names fall back to `<other>`
    /// or error when the index was built without a fallback slot.
    pub fn id_of(&self, name: &str) -> Result<usize, AstDepError> {
        if let Some(&id) = self.type_to_id.get(name) {
            return Ok(id);
        }
        self.other_id.ok_or_else(|| AstDepError::UnknownNodeType(name.to_string()))
    }

    /// One type name per line; the fallback slot is not persisted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for name in &self.id_to_type {
            if name != OTHER_TYPE {
                out.push_str(name);
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Self {
        let names: Vec<String> =
            text.lines().map(|l| l.to_string()).filter(|l| !l.is_empty()).collect();
        Self::from_types(names, true)
    }
}

/// Symmetric m-by-m matrix of nearest-common-parent type ids over the
/// leaves of one tree.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DependencyMatrix {
    pub m: usize,
    /// Row-major entries, length m*m.
    pub entries: Vec<usize>,
}

impl DependencyMatrix {
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.entries[i * self.m + j]
    }

    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.m {
            for j in (i + 1)..self.m {
                if self.get(i, j) != self.get(j, i) {
                    return false;
                }
            }
        }
        true
    }
}

pub fn build(tree: &AstTree, index: &NodeTypeIndex) -> Result<DependencyMatrix, AstDepError> {
    let m = tree.leaf_count();
    debug_assert!(m >= 1, "dependency matrix needs at least one leaf");
    let mut entries = vec![0usize; m * m];
    for i in 0..m {
        let leaf_i = tree.leaf_for_token(i);
        for j in i..m {
            let leaf_j = tree.leaf_for_token(j);
            let nca = tree.nearest_common_parent(leaf_i, leaf_j);
            let id = index.id_of(&tree.nodes[nca].node_type)?;
            entries[i * m + j] = id;
            entries[j * m + i] = id;
        }
    }
    Ok(DependencyMatrix { m, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::astdep::{GrammarProvider, MiniGrammar};

    #[test]
    fn return_fragment_matrix_has_binary_expr_cell() {
        let g = MiniGrammar::new();
        let tree = g.parse("return a+b").unwrap();
        let index = NodeTypeIndex::harvest([&tree]);
        let matrix = build(&tree, &index).unwrap();
        // tokens: return a + b -> cell (a, b) = binary expr
        let cell = matrix.get(1, 3);
        assert_eq!(index.name(cell), "binary expr");
        assert!(matrix.is_symmetric());
    }

    #[test]
    fn single_leaf_matrix_holds_parent_type() {
        let g = MiniGrammar::new();
        let tree = g.parse("x").unwrap();
        let index = NodeTypeIndex::harvest([&tree]);
        let matrix = build(&tree, &index).unwrap();
        assert_eq!(matrix.m, 1);
        assert_eq!(index.name(matrix.get(0, 0)), "expr stmt");
    }

    #[test]
    fn diagonal_is_immediate_parent() {
        let g = MiniGrammar::new();
        let tree = g.parse("int add(int a, int b) {return a+b;}").unwrap();
        let index = NodeTypeIndex::harvest([&tree]);
        let matrix = build(&tree, &index).unwrap();
        // token 4 is the parameter name `a`, whose immediate parent is `param`.
        assert_eq!(index.name(matrix.get(4, 4)), "param");
        // token 12 is the `+` inside the body.
        assert_eq!(index.name(matrix.get(12, 12)), "binary expr");
    }

    #[test]
    fn strict_index_rejects_unknown_type() {
        let index = NodeTypeIndex::from_types(vec!["block".into()], false);
        assert!(matches!(index.id_of("program"), Err(AstDepError::UnknownNodeType(_))));
    }

    #[test]
    fn fallback_index_maps_unknown_to_other() {
        let index = NodeTypeIndex::from_types(vec!["block".into()], true);
        assert_eq!(index.id_of("program").unwrap(), index.other_id().unwrap());
    }

    #[test]
    fn index_round_trips_through_text() {
        let index = NodeTypeIndex::from_types(vec!["a".into(), "b".into()], true);
        let text = index.to_text();
        assert_eq!(NodeTypeIndex::from_text(&text), index);
    }

    #[test]
    fn two_leaf_trees_are_symmetric_with_shared_root_entry() {
        // Enumerate every tree shape with up to 5 nodes and exactly 2 leaves.
        // Shapes are parent arrays; node 0 is the root.
        let shapes: Vec<Vec<usize>> = (2..=5)
            .flat_map(|n| all_parent_arrays(n))
            .filter(|parents| {
                let mut has_child = vec![false; parents.len()];
                for &p in &parents[1..] {
                    has_child[p] = true;
                }
                has_child.iter().filter(|&&c| !c).count() == 2 && has_child[0]
            })
            .collect();
        assert!(!shapes.is_empty());
        for parents in shapes {
            let tree = crate::astdep::tree::tree_from_parents(&parents);
            let index = NodeTypeIndex::harvest([&tree]);
            let matrix = build(&tree, &index).unwrap();
            assert_eq!(matrix.m, 2);
            assert!(matrix.is_symmetric());
            let a = tree.leaf_for_token(0);
            let b = tree.leaf_for_token(1);
            let nca = tree.nearest_common_parent(a, b);
            assert_eq!(matrix.get(0, 1), index.id_of(&tree.nodes[nca].node_type).unwrap());
            assert_eq!(matrix.get(1, 0), matrix.get(0, 1));
        }
    }

    fn all_parent_arrays(n: usize) -> Vec<Vec<usize>> {
        // Every labelled rooted tree on n nodes where parent index < child index.
        let mut out = vec![vec![usize::MAX]];
        for i in 1..n {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..i).map(move |p| {
                        let mut v = prefix.clone();
                        v.push(p);
                        v
                    })
                })
                .collect();
        }
        out
    }
}
