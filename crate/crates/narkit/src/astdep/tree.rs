//! Arena-backed syntax tree with nearest-common-parent queries.

/// One node of an [`AstTree`]. Leaves carry the token index and text;
/// internal nodes carry only their type and children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub node_type: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Set iff this node is a leaf; equals the token's position in the
    /// lexed sequence.
    pub token_index: Option<usize>,
    /// Token text for leaves, empty for internal nodes.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstTree {
    pub nodes: Vec<AstNode>,
    pub root: usize,
    leaves: Vec<usize>,
}

impl Default for AstTree {
    fn default() -> Self {
        Self::new()
    }
}

impl AstTree {
    pub fn new() -> Self {
        AstTree { nodes: Vec::new(), root: 0, leaves: Vec::new() }
    }

    pub fn add_leaf(&mut self, node_type: &str, token_index: usize, text: &str) -> usize {
        let id = self.nodes.len();
        self.nodes.push(AstNode {
            node_type: node_type.to_string(),
            parent: None,
            children: Vec::new(),
            token_index: Some(token_index),
            text: text.to_string(),
        });
        self.leaves.push(id);
        id
    }

    pub fn add_internal(&mut self, node_type: &str, children: Vec<usize>) -> usize {
        let id = self.nodes.len();
        for &c in &children {
            debug_assert!(self.nodes[c].parent.is_none(), "child already attached");
            self.nodes[c].parent = Some(id);
        }
        self.nodes.push(AstNode {
            node_type: node_type.to_string(),
            parent: None,
            children,
            token_index: None,
            text: String::new(),
        });
        id
    }

    pub fn set_root(&mut self, root: usize) {
        self.root = root;
    }

    /// Leaf node ids in token order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_for_token(&self, token_index: usize) -> usize {
        self.leaves[token_index]
    }

    pub fn leaf_text(&self, token_index: usize) -> &str {
        &self.nodes[self.leaves[token_index]].text
    }

    pub fn depth(&self, mut node: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[node].parent {
            node = p;
            d += 1;
        }
        d
    }

    /// The deepest node that is an ancestor of both leaves. A leaf is not its
    /// own ancestor, so for `i == j` this is the leaf's immediate parent.
    /// Arguments are leaf node ids (not token indices).
    pub fn nearest_common_parent(&self, leaf_i: usize, leaf_j: usize) -> usize {
        debug_assert!(self.nodes[leaf_i].token_index.is_some());
        debug_assert!(self.nodes[leaf_j].token_index.is_some());
        if leaf_i == leaf_j {
            return self.nodes[leaf_i].parent.expect("leaf must have a parent");
        }
        let (mut a, mut b) = (leaf_i, leaf_j);
        let (mut da, mut db) = (self.depth(a), self.depth(b));
        while da > db {
            a = self.nodes[a].parent.unwrap();
            da -= 1;
        }
        while db > da {
            b = self.nodes[b].parent.unwrap();
            db -= 1;
        }
        while a != b {
            a = self.nodes[a].parent.expect("nodes share a root");
            b = self.nodes[b].parent.expect("nodes share a root");
        }
        a
    }

    /// Number of edges from `leaf` up to `ancestor`.
    pub fn distance_to_ancestor(&self, leaf: usize, ancestor: usize) -> usize {
        let mut node = leaf;
        let mut d = 0;
        while node != ancestor {
            node = self.nodes[node].parent.expect("ancestor must be on the root path");
            d += 1;
        }
        d
    }

    /// Checks the structural invariants: a single root, parent/child links
    /// consistent and acyclic, `token_index` set iff leaf, and leaves in DFS
    /// order carrying token indices 0..m-1.
    pub fn validate(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        if self.nodes[self.root].parent.is_some() {
            return Err("root has a parent".into());
        }
        for (id, node) in self.nodes.iter().enumerate() {
            let is_leaf = node.children.is_empty();
            if is_leaf != node.token_index.is_some() {
                return Err(format!("node {id}: token_index set iff leaf violated"));
            }
            for &c in &node.children {
                if self.nodes[c].parent != Some(id) {
                    return Err(format!("child {c} does not point back to {id}"));
                }
            }
            if id != self.root && node.parent.is_none() {
                return Err(format!("node {id} is detached"));
            }
        }
        // DFS from the root must visit leaves in token order 0..m-1.
        let mut stack = vec![self.root];
        let mut seen = vec![false; self.nodes.len()];
        let mut next_token = 0usize;
        while let Some(node) = stack.pop() {
            if seen[node] {
                return Err(format!("cycle through node {node}"));
            }
            seen[node] = true;
            if let Some(t) = self.nodes[node].token_index {
                if t != next_token {
                    return Err(format!("leaf order broken: expected token {next_token}, found {t}"));
                }
                next_token += 1;
            }
            for &c in self.nodes[node].children.iter().rev() {
                stack.push(c);
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err("unreachable nodes".into());
        }
        if next_token != self.leaves.len() {
            return Err("leaf list inconsistent with DFS".into());
        }
        Ok(())
    }
}

/// Test helper: builds a tree from a parent array (parents[0] must be
/// usize::MAX for the root); childless nodes become leaves in DFS order.
#[cfg(test)]
pub(crate) fn tree_from_parents(parents: &[usize]) -> AstTree {
    let n = parents.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, &p) in parents.iter().enumerate().skip(1) {
        children[p].push(i);
    }
    // Assign token indices to childless nodes in DFS order.
    let mut tree = AstTree::new();
    tree.nodes = (0..n)
        .map(|i| AstNode {
            node_type: format!("t{i}"),
            parent: if i == 0 { None } else { Some(parents[i]) },
            children: children[i].clone(),
            token_index: None,
            text: String::new(),
        })
        .collect();
    let mut stack = vec![0usize];
    let mut token = 0usize;
    let mut leaves = Vec::new();
    while let Some(node) = stack.pop() {
        if tree.nodes[node].children.is_empty() {
            tree.nodes[node].token_index = Some(token);
            tree.nodes[node].text = format!("w{token}");
            leaves.push(node);
            token += 1;
        }
        for &c in tree.nodes[node].children.iter().rev() {
            stack.push(c);
        }
    }
    tree.leaves = leaves;
    tree.root = 0;
    tree
}
