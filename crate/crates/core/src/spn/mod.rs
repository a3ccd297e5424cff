//! Sum-product network graphs: arena storage, scopes, structural
//! validation and the evaluation passes built on top of them.

mod eval;
mod params;
mod tree;

pub use params::{LeafMixture, Params};
pub use tree::InducedTree;

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Index of a node inside one [`Spn`] arena.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Weighted mixture; `weight_index` addresses the weight vector in [`Params`].
    Sum {
        children: Vec<NodeId>,
        weight_index: usize,
    },
    Product {
        children: Vec<NodeId>,
    },
    /// Leaf mixture `leaf_slot` of feature `feature`.
    Leaf {
        feature: usize,
        leaf_slot: usize,
    },
}

impl Node {
    pub fn children(&self) -> &[NodeId] {
        match self {
            Node::Sum { children, .. } | Node::Product { children } => children,
            Node::Leaf { .. } => &[],
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpnError {
    #[error("node {node} evaluated to NaN")]
    NonFiniteValue { node: NodeId },
    #[error("no override supplied for leaf {node}")]
    MissingOverride { node: NodeId },
    #[error("{count} induced trees exceed the cap of {cap}")]
    TooManyTrees { count: f64, cap: usize },
    #[error("invalid network: {0}")]
    Invalid(ValidationReport),
    #[error("malformed network: {0}")]
    Malformed(String),
    #[error("parameters do not fit the network: {0}")]
    ParamsMismatch(String),
}

/// A violated structural invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Completeness { node: NodeId },
    Decomposability { node: NodeId },
    Cycle { node: NodeId },
    Unreachable { node: NodeId },
    TooFewChildren { node: NodeId },
    RootScope { missing: Vec<usize> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Completeness { node } => {
                write!(f, "sum {node} has children with different scopes")
            }
            Violation::Decomposability { node } => {
                write!(f, "product {node} has overlapping child scopes")
            }
            Violation::Cycle { node } => write!(f, "cycle through {node}"),
            Violation::Unreachable { node } => write!(f, "{node} is not reachable from the root"),
            Violation::TooFewChildren { node } => {
                write!(f, "inner node {node} has fewer than two children")
            }
            Violation::RootScope { missing } => write!(f, "root scope misses features {missing:?}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

#[derive(Serialize, Deserialize)]
struct SpnRepr {
    num_features: usize,
    root: NodeId,
    nodes: Vec<Node>,
}

/// A sum-product network over `num_features` features.
///
/// Derived data (scopes, evaluation order, per-feature leaf lists, sum
/// index) is computed once at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpnRepr", into = "SpnRepr")]
pub struct Spn {
    nodes: Vec<Node>,
    root: NodeId,
    num_features: usize,
    scopes: Vec<Vec<usize>>,
    leaves_by_feature: Vec<Vec<NodeId>>,
    /// Reachable nodes, children before parents.
    order: Vec<NodeId>,
    /// Node of each sum, by weight index.
    sums: Vec<NodeId>,
    cycle_at: Option<NodeId>,
}

impl TryFrom<SpnRepr> for Spn {
    type Error = SpnError;
    fn try_from(r: SpnRepr) -> Result<Self, SpnError> {
        Spn::new(r.nodes, r.root, r.num_features)
    }
}

impl From<Spn> for SpnRepr {
    fn from(s: Spn) -> SpnRepr {
        SpnRepr {
            num_features: s.num_features,
            root: s.root,
            nodes: s.nodes,
        }
    }
}

impl Spn {
    /// Builds and validates a network.
    pub fn new(nodes: Vec<Node>, root: NodeId, num_features: usize) -> Result<Spn, SpnError> {
        let spn = Spn::from_nodes(nodes, root, num_features)?;
        let report = spn.validate();
        if report.is_valid() {
            Ok(spn)
        } else {
            Err(SpnError::Invalid(report))
        }
    }

    /// Builds a network without checking the structural invariants; only
    /// index-level consistency is enforced. Use [`Spn::validate`] to inspect.
    pub fn from_nodes(
        nodes: Vec<Node>,
        root: NodeId,
        num_features: usize,
    ) -> Result<Spn, SpnError> {
        let n = nodes.len();
        if root.0 >= n {
            return Err(SpnError::Malformed(format!("root {root} out of range")));
        }
        let mut sums: Vec<Option<NodeId>> = Vec::new();
        let mut slots: Vec<Vec<Option<NodeId>>> = vec![Vec::new(); num_features];
        for (i, node) in nodes.iter().enumerate() {
            for c in node.children() {
                if c.0 >= n {
                    return Err(SpnError::Malformed(format!(
                        "child {c} of #{i} out of range"
                    )));
                }
            }
            match *node {
                Node::Sum { weight_index, .. } => {
                    if sums.len() <= weight_index {
                        sums.resize(weight_index + 1, None);
                    }
                    if sums[weight_index].replace(NodeId(i)).is_some() {
                        return Err(SpnError::Malformed(format!(
                            "weight index {weight_index} used twice"
                        )));
                    }
                }
                Node::Leaf { feature, leaf_slot } => {
                    if feature >= num_features {
                        return Err(SpnError::Malformed(format!(
                            "leaf #{i} has feature {feature} >= {num_features}"
                        )));
                    }
                    let s = &mut slots[feature];
                    if s.len() <= leaf_slot {
                        s.resize(leaf_slot + 1, None);
                    }
                    if s[leaf_slot].replace(NodeId(i)).is_some() {
                        return Err(SpnError::Malformed(format!(
                            "leaf slot {leaf_slot} of feature {feature} used twice"
                        )));
                    }
                }
                Node::Product { .. } => {}
            }
        }
        let sums: Vec<NodeId> = sums
            .into_iter()
            .enumerate()
            .map(|(k, s)| s.ok_or_else(|| SpnError::Malformed(format!("weight index {k} unused"))))
            .collect::<Result<_, _>>()?;
        let leaves_by_feature: Vec<Vec<NodeId>> = slots
            .into_iter()
            .enumerate()
            .map(|(d, s)| {
                s.into_iter()
                    .enumerate()
                    .map(|(j, l)| {
                        l.ok_or_else(|| {
                            SpnError::Malformed(format!("leaf slot {j} of feature {d} unused"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;

        // iterative DFS post-order with cycle detection
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        let mut mark = vec![Mark::New; n];
        let mut order = Vec::with_capacity(n);
        let mut cycle_at = None;
        let mut stack: Vec<(NodeId, usize)> = vec![(root, 0)];
        mark[root.0] = Mark::Open;
        while let Some(&mut (id, ref mut next)) = stack.last_mut() {
            let children = nodes[id.0].children();
            if *next < children.len() {
                let c = children[*next];
                *next += 1;
                match mark[c.0] {
                    Mark::New => {
                        mark[c.0] = Mark::Open;
                        stack.push((c, 0));
                    }
                    Mark::Open => {
                        cycle_at.get_or_insert(c);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[id.0] = Mark::Done;
                order.push(id);
                stack.pop();
            }
        }

        let mut scopes: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &id in &order {
            scopes[id.0] = match &nodes[id.0] {
                Node::Leaf { feature, .. } => vec![*feature],
                node => {
                    let mut s: Vec<usize> = node
                        .children()
                        .iter()
                        .flat_map(|c| scopes[c.0].iter().copied())
                        .collect();
                    s.sort_unstable();
                    s.dedup();
                    s
                }
            };
        }

        Ok(Spn {
            nodes,
            root,
            num_features,
            scopes,
            leaves_by_feature,
            order,
            sums,
            cycle_at,
        })
    }

    /// Lists every violated structural invariant.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if let Some(node) = self.cycle_at {
            violations.push(Violation::Cycle { node });
        }
        let mut reachable = vec![false; self.nodes.len()];
        for id in &self.order {
            reachable[id.0] = true;
        }
        for (i, r) in reachable.iter().enumerate() {
            if !r {
                violations.push(Violation::Unreachable { node: NodeId(i) });
            }
        }
        for &id in &self.order {
            let node = &self.nodes[id.0];
            let children = node.children();
            match node {
                Node::Leaf { .. } => continue,
                _ if children.len() < 2 => violations.push(Violation::TooFewChildren { node: id }),
                _ => {}
            }
            match node {
                Node::Sum { .. } => {
                    let first = &self.scopes[children[0].0];
                    if children.iter().any(|c| &self.scopes[c.0] != first) {
                        violations.push(Violation::Completeness { node: id });
                    }
                }
                Node::Product { .. } => {
                    let total: usize = children.iter().map(|c| self.scopes[c.0].len()).sum();
                    let mut distinct = children.to_vec();
                    distinct.sort_unstable();
                    distinct.dedup();
                    if total != self.scopes[id.0].len() || distinct.len() != children.len() {
                        violations.push(Violation::Decomposability { node: id });
                    }
                }
                Node::Leaf { .. } => {}
            }
        }
        let root_scope = &self.scopes[self.root.0];
        let missing: Vec<usize> = (0..self.num_features)
            .filter(|d| root_scope.binary_search(d).is_err())
            .collect();
        if !missing.is_empty() {
            violations.push(Violation::RootScope { missing });
        }
        ValidationReport { violations }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sorted feature indices a node ranges over.
    pub fn scope(&self, id: NodeId) -> &[usize] {
        &self.scopes[id.0]
    }

    /// Leaf nodes of feature `d`; the position of a leaf is its slot.
    pub fn leaves_of(&self, d: usize) -> &[NodeId] {
        &self.leaves_by_feature[d]
    }

    pub fn num_leaves(&self, d: usize) -> usize {
        self.leaves_by_feature[d].len()
    }

    /// Reachable nodes in bottom-up order.
    pub fn order(&self) -> &[NodeId] {
        &self.order
    }

    /// Sum nodes by weight index.
    pub fn sums(&self) -> &[NodeId] {
        &self.sums
    }

    pub fn num_sums(&self) -> usize {
        self.sums.len()
    }

    pub fn product_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n, Node::Product { .. }))
            .map(|(i, _)| NodeId(i))
    }

    /// First-discovered parent of every node (`None` for the root).
    pub fn parents(&self) -> Vec<Option<NodeId>> {
        let mut parents = vec![None; self.nodes.len()];
        for &id in self.order.iter().rev() {
            for c in self.nodes[id.0].children() {
                if parents[c.0].is_none() && *c != self.root {
                    parents[c.0] = Some(id);
                }
            }
        }
        parents
    }

    /// Nodes from the root down to `id`, following first-discovered parents.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let parents = self.parents();
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = parents[cur.0] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Deepest common ancestor of two nodes along first-discovered parents.
    pub fn lowest_common_ancestor(&self, a: NodeId, b: NodeId) -> NodeId {
        let pa = self.path_to(a);
        let pb = self.path_to(b);
        let mut lca = self.root;
        for (x, y) in pa.iter().zip(&pb) {
            if x == y {
                lca = *x;
            } else {
                break;
            }
        }
        lca
    }
}

/// Incremental construction with automatic weight indices and leaf slots.
#[derive(Clone, Debug, Default)]
pub struct SpnBuilder {
    nodes: Vec<Node>,
    num_features: usize,
    leaf_counts: Vec<usize>,
    num_sums: usize,
}

impl SpnBuilder {
    pub fn new(num_features: usize) -> Self {
        SpnBuilder {
            nodes: Vec::new(),
            num_features,
            leaf_counts: vec![0; num_features],
            num_sums: 0,
        }
    }

    pub fn leaf(&mut self, feature: usize) -> NodeId {
        let leaf_slot = self.leaf_counts[feature];
        self.leaf_counts[feature] += 1;
        self.push(Node::Leaf { feature, leaf_slot })
    }

    pub fn sum(&mut self, children: Vec<NodeId>) -> NodeId {
        let weight_index = self.num_sums;
        self.num_sums += 1;
        self.push(Node::Sum {
            children,
            weight_index,
        })
    }

    pub fn product(&mut self, children: Vec<NodeId>) -> NodeId {
        self.push(Node::Product { children })
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    pub fn build(self, root: NodeId) -> Result<Spn, SpnError> {
        Spn::new(self.nodes, root, self.num_features)
    }

    pub fn build_unchecked(self, root: NodeId) -> Result<Spn, SpnError> {
        Spn::from_nodes(self.nodes, root, self.num_features)
    }
}
