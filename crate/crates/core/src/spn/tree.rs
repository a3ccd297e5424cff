//! Induced trees: ancestral sampling and exhaustive enumeration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Node, NodeId, Params, Spn, SpnError};
use crate::math::sample_log_categorical;

/// One child choice per sum node and the leaf slot selected for every
/// feature.
///
/// `choice` holds an entry for every sum (by weight index); `reached`
/// tells which sums lie on the tree. Choices at unreached sums are prior
/// draws during Gibbs sampling and meaningless elsewhere.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InducedTree {
    pub choice: Vec<usize>,
    pub reached: Vec<bool>,
    pub leaf_slots: Vec<usize>,
}

impl InducedTree {
    pub fn empty(spn: &Spn) -> InducedTree {
        InducedTree {
            choice: vec![0; spn.num_sums()],
            reached: vec![false; spn.num_sums()],
            leaf_slots: vec![0; spn.num_features()],
        }
    }

    /// Child selected at a reached sum.
    pub fn chosen_child(&self, spn: &Spn, sum: NodeId) -> Option<NodeId> {
        match spn.node(sum) {
            Node::Sum {
                children,
                weight_index,
            } if self.reached[*weight_index] => Some(children[self.choice[*weight_index]]),
            _ => None,
        }
    }

    /// Every node on the tree, root first.
    pub fn nodes(&self, spn: &Spn) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![spn.root()];
        while let Some(id) = stack.pop() {
            out.push(id);
            match spn.node(id) {
                Node::Sum {
                    children,
                    weight_index,
                } => stack.push(children[self.choice[*weight_index]]),
                Node::Product { children } => stack.extend(children.iter().rev()),
                Node::Leaf { .. } => {}
            }
        }
        out
    }

    /// Log prior probability of the reached choices.
    pub fn log_prior(&self, params: &Params) -> f64 {
        self.reached
            .iter()
            .enumerate()
            .filter(|(_, r)| **r)
            .map(|(k, _)| params.sum_log_weights[k][self.choice[k]])
            .sum()
    }

    /// Sum of the selected leaves' log-values on the observed cells.
    pub fn log_likelihood(&self, params: &Params, row: &[f64], observed: &[bool]) -> f64 {
        (0..self.leaf_slots.len())
            .filter(|&d| observed[d])
            .map(|d| params.leaves[d][self.leaf_slots[d]].log_value(row[d]))
            .sum()
    }
}

impl Spn {
    /// Ancestral top-down sampling of an induced tree given node values
    /// from [`Spn::forward`].
    ///
    /// Each reached sum draws a child with probability proportional to
    /// weight times child value. Sums off the tree are then drawn from their
    /// prior weights, in weight-index order.
    pub fn sample_induced_tree<R: Rng + ?Sized>(
        &self,
        params: &Params,
        values: &[f64],
        rng: &mut R,
        tree: &mut InducedTree,
    ) {
        tree.reached.iter_mut().for_each(|r| *r = false);
        let mut scratch: Vec<f64> = Vec::with_capacity(4);
        let mut stack = Vec::with_capacity(16);
        stack.push(self.root);
        while let Some(id) = stack.pop() {
            match &self.nodes[id.0] {
                Node::Leaf { feature, leaf_slot } => tree.leaf_slots[*feature] = *leaf_slot,
                Node::Product { children } => stack.extend(children.iter().rev()),
                Node::Sum {
                    children,
                    weight_index,
                } => {
                    let w = &params.sum_log_weights[*weight_index];
                    scratch.clear();
                    scratch.extend(w.iter().zip(children).map(|(lw, c)| lw + values[c.0]));
                    let c = sample_log_categorical(&scratch, rng);
                    tree.choice[*weight_index] = c;
                    tree.reached[*weight_index] = true;
                    stack.push(children[c]);
                }
            }
        }
        for k in 0..self.sums.len() {
            if !tree.reached[k] {
                tree.choice[k] = sample_log_categorical(&params.sum_log_weights[k], rng);
            }
        }
    }

    /// Samples a tree from the prior weights alone.
    pub fn sample_prior_tree<R: Rng + ?Sized>(
        &self,
        params: &Params,
        rng: &mut R,
        tree: &mut InducedTree,
    ) {
        let zeros = vec![0.0; self.nodes.len()];
        self.sample_induced_tree(params, &zeros, rng, tree);
    }

    /// Draws one complete row by ancestral sampling.
    pub fn sample_row<R: Rng + ?Sized>(&self, params: &Params, rng: &mut R) -> Vec<f64> {
        let mut tree = InducedTree::empty(self);
        self.sample_prior_tree(params, rng, &mut tree);
        tree.leaf_slots
            .iter()
            .enumerate()
            .map(|(d, &j)| {
                let leaf = &params.leaves[d][j];
                leaf.components[sample_log_categorical(&leaf.log_weights, rng)].sample(rng)
            })
            .collect()
    }

    /// Number of distinct induced trees (as a float, to survive overflow).
    pub fn count_induced_trees(&self) -> f64 {
        let mut count = vec![0.0f64; self.nodes.len()];
        for &id in &self.order {
            count[id.0] = match &self.nodes[id.0] {
                Node::Leaf { .. } => 1.0,
                Node::Sum { children, .. } => children.iter().map(|c| count[c.0]).sum(),
                Node::Product { children } => children.iter().map(|c| count[c.0]).product(),
            };
        }
        count[self.root.0]
    }

    /// Every induced tree with its log prior weight.
    pub fn enumerate_induced_trees(
        &self,
        params: &Params,
        cap: usize,
    ) -> Result<Vec<(InducedTree, f64)>, SpnError> {
        let count = self.count_induced_trees();
        if count > cap as f64 {
            return Err(SpnError::TooManyTrees { count, cap });
        }
        let partials = self.enumerate_from(self.root, params);
        Ok(partials
            .into_iter()
            .map(|p| {
                let mut tree = InducedTree::empty(self);
                for (k, c) in p.choices {
                    tree.choice[k] = c;
                    tree.reached[k] = true;
                }
                for (d, j) in p.leaves {
                    tree.leaf_slots[d] = j;
                }
                (tree, p.log_weight)
            })
            .collect())
    }

    fn enumerate_from(&self, id: NodeId, params: &Params) -> Vec<Partial> {
        match &self.nodes[id.0] {
            Node::Leaf { feature, leaf_slot } => {
                vec![Partial {
                    choices: vec![],
                    leaves: vec![(*feature, *leaf_slot)],
                    log_weight: 0.0,
                }]
            }
            Node::Sum {
                children,
                weight_index,
            } => {
                let mut out = Vec::new();
                for (i, c) in children.iter().enumerate() {
                    let lw = params.sum_log_weights[*weight_index][i];
                    for mut p in self.enumerate_from(*c, params) {
                        p.choices.push((*weight_index, i));
                        p.log_weight += lw;
                        out.push(p);
                    }
                }
                out
            }
            Node::Product { children } => {
                let mut acc = vec![Partial {
                    choices: vec![],
                    leaves: vec![],
                    log_weight: 0.0,
                }];
                for c in children {
                    let sub = self.enumerate_from(*c, params);
                    let mut next = Vec::with_capacity(acc.len() * sub.len());
                    for a in &acc {
                        for s in &sub {
                            let mut p = a.clone();
                            p.choices.extend_from_slice(&s.choices);
                            p.leaves.extend_from_slice(&s.leaves);
                            p.log_weight += s.log_weight;
                            next.push(p);
                        }
                    }
                    acc = next;
                }
                acc
            }
        }
    }
}

#[derive(Clone)]
struct Partial {
    choices: Vec<(usize, usize)>,
    leaves: Vec<(usize, usize)>,
    log_weight: f64,
}
