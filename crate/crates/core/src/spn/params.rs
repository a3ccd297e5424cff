use serde::{Deserialize, Serialize};

use super::{Node, Spn, SpnError};
use crate::likelihood::Likelihood;
use crate::math::{argmax, log_sum_exp};

/// A leaf's mixture over its feature's likelihood dictionary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafMixture {
    /// Log mixture weights, one per dictionary entry.
    #[serde(with = "crate::math::nonfinite::vec")]
    pub log_weights: Vec<f64>,
    pub components: Vec<Likelihood>,
}

impl LeafMixture {
    /// Log density of the mixture at `x`.
    pub fn log_value(&self, x: f64) -> f64 {
        let mut terms = [f64::NEG_INFINITY; 8];
        for (t, (w, c)) in terms
            .iter_mut()
            .zip(self.log_weights.iter().zip(&self.components))
        {
            *t = w + c.log_pdf(x);
        }
        let terms = &terms[..self.components.len()];
        if terms.iter().any(|t| t.is_nan()) {
            return f64::NAN;
        }
        log_sum_exp(terms)
    }

    /// `log w_l + log p_l(x)` for every component.
    pub fn component_log_values(&self, x: f64, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.log_weights
                .iter()
                .zip(&self.components)
                .map(|(w, c)| w + c.log_pdf(x)),
        );
    }

    /// Component maximizing `w_l * max_x p_l(x)`, its mode and the log score.
    pub fn best_mode(&self) -> (usize, f64, f64) {
        let scored: Vec<(f64, f64)> = self
            .log_weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| {
                let (x, lp) = c.mode();
                (x, w + lp)
            })
            .collect();
        let scores: Vec<f64> = scored.iter().map(|s| s.1).collect();
        let l = argmax(&scores);
        (l, scored[l].0, scored[l].1)
    }

    /// `log sum_{l in keep} w_l`.
    pub fn log_weight_of(&self, keep: impl Fn(usize, &Likelihood) -> bool) -> f64 {
        let sel: Vec<f64> = self
            .log_weights
            .iter()
            .zip(&self.components)
            .enumerate()
            .filter(|(l, (_, c))| keep(*l, c))
            .map(|(_, (w, _))| *w)
            .collect();
        log_sum_exp(&sel)
    }
}

/// All network parameters: sum weights and leaf mixtures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Log weights by sum weight index.
    #[serde(with = "crate::math::nonfinite::vec2")]
    pub sum_log_weights: Vec<Vec<f64>>,
    /// Leaf mixtures indexed `[feature][slot]`.
    pub leaves: Vec<Vec<LeafMixture>>,
}

impl Params {
    pub fn leaf(&self, feature: usize, slot: usize) -> &LeafMixture {
        &self.leaves[feature][slot]
    }

    /// Checks that the parameter layout matches the network.
    pub fn check(&self, spn: &Spn) -> Result<(), SpnError> {
        if self.sum_log_weights.len() != spn.num_sums() {
            return Err(SpnError::ParamsMismatch(format!(
                "{} sum weight vectors for {} sums",
                self.sum_log_weights.len(),
                spn.num_sums()
            )));
        }
        for (k, &id) in spn.sums().iter().enumerate() {
            if let Node::Sum { children, .. } = spn.node(id) {
                if children.len() != self.sum_log_weights[k].len() {
                    return Err(SpnError::ParamsMismatch(format!(
                        "sum {id} has {} weights",
                        self.sum_log_weights[k].len()
                    )));
                }
            }
        }
        if self.leaves.len() != spn.num_features() {
            return Err(SpnError::ParamsMismatch("feature count".into()));
        }
        for d in 0..spn.num_features() {
            if self.leaves[d].len() != spn.num_leaves(d) {
                return Err(SpnError::ParamsMismatch(format!("feature {d} leaf count")));
            }
            for m in &self.leaves[d] {
                if m.log_weights.len() != m.components.len()
                    || m.components.is_empty()
                    || m.components.len() > 8
                {
                    return Err(SpnError::ParamsMismatch(format!(
                        "feature {d} leaf mixture size"
                    )));
                }
            }
        }
        Ok(())
    }
}
