//! Bottom-up evaluation passes: marginal log-density, leaf overrides and
//! max-product decoding.

use super::{InducedTree, Node, NodeId, Params, Spn, SpnError};

#[inline]
fn weighted_log_sum(log_weights: &[f64], children: &[NodeId], values: &[f64]) -> f64 {
    // weights are normalized, so a fully marginalized mixture is exactly 1
    if children.iter().all(|c| values[c.0] == 0.0) {
        return 0.0;
    }
    let mut max = f64::NEG_INFINITY;
    for (w, c) in log_weights.iter().zip(children) {
        let t = w + values[c.0];
        if t > max {
            max = t;
        }
    }
    if max.is_infinite() {
        return max;
    }
    let mut s = 0.0;
    for (w, c) in log_weights.iter().zip(children) {
        s += (w + values[c.0] - max).exp();
    }
    max + s.ln()
}

#[inline]
fn weighted_log_max(log_weights: &[f64], children: &[NodeId], values: &[f64]) -> f64 {
    log_weights
        .iter()
        .zip(children)
        .map(|(w, c)| w + values[c.0])
        .fold(f64::NEG_INFINITY, f64::max)
}

impl Spn {
    /// Generic bottom-up pass; `leaf` yields each leaf's log-value.
    fn propagate<F>(
        &self,
        params: &Params,
        values: &mut [f64],
        max_product: bool,
        mut leaf: F,
    ) -> Result<f64, SpnError>
    where
        F: FnMut(NodeId, usize, usize) -> Result<f64, SpnError>,
    {
        debug_assert!(values.len() >= self.nodes.len());
        for &id in &self.order {
            let v = match &self.nodes[id.0] {
                Node::Leaf { feature, leaf_slot } => {
                    let v = leaf(id, *feature, *leaf_slot)?;
                    if v.is_nan() {
                        return Err(SpnError::NonFiniteValue { node: id });
                    }
                    v
                }
                Node::Product { children } => children.iter().map(|c| values[c.0]).sum(),
                Node::Sum {
                    children,
                    weight_index,
                } => {
                    let w = &params.sum_log_weights[*weight_index];
                    if max_product {
                        weighted_log_max(w, children, values)
                    } else {
                        weighted_log_sum(w, children, values)
                    }
                }
            };
            values[id.0] = v;
        }
        Ok(values[self.root.0])
    }

    /// Log-density of the observed cells of `row`; unobserved features are
    /// marginalized out. Fills `values` with every node's log-value.
    pub fn forward(
        &self,
        params: &Params,
        row: &[f64],
        observed: &[bool],
        values: &mut [f64],
    ) -> Result<f64, SpnError> {
        self.propagate(params, values, false, |_, d, j| {
            Ok(if observed[d] {
                params.leaves[d][j].log_value(row[d])
            } else {
                0.0
            })
        })
    }

    /// Log-density of the observed cells of `row`.
    pub fn log_density(
        &self,
        params: &Params,
        row: &[f64],
        observed: &[bool],
    ) -> Result<f64, SpnError> {
        let mut values = vec![0.0; self.nodes.len()];
        self.forward(params, row, observed, &mut values)
    }

    /// Evaluates the network with leaf log-values supplied by `overrides`,
    /// called with `(feature, leaf_slot)`.
    pub fn eval_with_leaf_overrides<F>(
        &self,
        params: &Params,
        overrides: F,
    ) -> Result<f64, SpnError>
    where
        F: Fn(usize, usize) -> Option<f64>,
    {
        let mut values = vec![0.0; self.nodes.len()];
        self.propagate(params, &mut values, false, |id, d, j| {
            overrides(d, j).ok_or(SpnError::MissingOverride { node: id })
        })
    }

    /// Top-down arg-max decoding over node values from a previous pass.
    /// Ties go to the lowest child index. Unreached sums keep choice 0.
    pub fn decode_tree(&self, params: &Params, values: &[f64]) -> InducedTree {
        let mut tree = InducedTree::empty(self);
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            match &self.nodes[id.0] {
                Node::Leaf { feature, leaf_slot } => tree.leaf_slots[*feature] = *leaf_slot,
                Node::Product { children } => stack.extend(children.iter().rev()),
                Node::Sum {
                    children,
                    weight_index,
                } => {
                    let w = &params.sum_log_weights[*weight_index];
                    let mut best = 0;
                    let mut best_v = f64::NEG_INFINITY;
                    for (i, (lw, c)) in w.iter().zip(children).enumerate() {
                        let v = lw + values[c.0];
                        if v > best_v {
                            best_v = v;
                            best = i;
                        }
                    }
                    tree.choice[*weight_index] = best;
                    tree.reached[*weight_index] = true;
                    stack.push(children[best]);
                }
            }
        }
        tree
    }

    /// The induced tree with the largest posterior probability term at every
    /// sum, given the observed cells (unobserved cells are marginalized).
    pub fn map_tree(
        &self,
        params: &Params,
        row: &[f64],
        observed: &[bool],
    ) -> Result<InducedTree, SpnError> {
        let mut values = vec![0.0; self.nodes.len()];
        self.forward(params, row, observed, &mut values)?;
        Ok(self.decode_tree(params, &values))
    }

    /// Approximate most probable completion of the unobserved cells.
    ///
    /// Runs a max-product pass where unobserved leaves score their best
    /// weighted component mode, decodes the arg-max tree top-down and fills
    /// each unobserved cell with the mode of its selected leaf's best
    /// component. Observed cells are returned unchanged.
    pub fn mpe_complete(
        &self,
        params: &Params,
        row: &[f64],
        observed: &[bool],
    ) -> Result<Vec<f64>, SpnError> {
        let mut values = vec![0.0; self.nodes.len()];
        self.propagate(params, &mut values, true, |_, d, j| {
            let leaf = &params.leaves[d][j];
            Ok(if observed[d] {
                leaf.log_value(row[d])
            } else {
                leaf.best_mode().2
            })
        })?;
        let tree = self.decode_tree(params, &values);
        let mut out = row.to_vec();
        for d in 0..self.num_features {
            if !observed[d] {
                out[d] = params.leaves[d][tree.leaf_slots[d]].best_mode().1;
            }
        }
        Ok(out)
    }
}
