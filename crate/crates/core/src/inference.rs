//! Queries over a fitted model: imputation, missing-entry likelihood,
//! anomaly scores and type posteriors, plus the evaluation metrics used
//! to judge them.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::likelihood::{stat_type_of, LikelihoodKind, MetaType, StatType};
use crate::math::{argmax, log_mean_exp};
use crate::model::{Model, ModelError};
use crate::spn::{Node, NodeId, SpnError};
use crate::structure::average_ranks;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("model has no posterior draws")]
    NoPosterior,
    #[error("row has no missing cells")]
    NoMissing,
    #[error("both classes must be present")]
    SingleClass,
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error(transparent)]
    Spn(#[from] SpnError),
}

impl From<ModelError> for InferenceError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Spn(e) => InferenceError::Spn(e),
            _ => InferenceError::NoPosterior,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImputeMode {
    /// Most probable completion under the best-scoring posterior draw.
    MapSample,
    /// Completions averaged over draws (majority vote for discrete cells).
    McAverage,
}

/// Fills the unobserved cells of `row`. Observed cells are left untouched.
pub fn impute(
    model: &Model,
    row: &[f64],
    observed: &[bool],
    mode: ImputeMode,
) -> Result<Vec<f64>, InferenceError> {
    let draws = model.draws()?;
    if observed.iter().all(|&o| o) {
        return Ok(row.to_vec());
    }
    match mode {
        ImputeMode::MapSample => Ok(model.spn.mpe_complete(model.best_draw()?, row, observed)?),
        ImputeMode::McAverage => {
            let completions = draws
                .iter()
                .map(|p| model.spn.mpe_complete(p, row, observed))
                .collect::<Result<Vec<_>, _>>()?;
            let mut out = row.to_vec();
            for d in (0..row.len()).filter(|&d| !observed[d]) {
                out[d] = match model.features[d].meta {
                    MetaType::Continuous => {
                        completions.iter().map(|c| c[d]).sum::<f64>() / completions.len() as f64
                    }
                    MetaType::Discrete => {
                        let mut votes: BTreeMap<i64, usize> = BTreeMap::new();
                        for c in &completions {
                            *votes.entry(c[d] as i64).or_default() += 1;
                        }
                        // first maximum in key order, so ties go to the smaller value
                        let top = votes.values().copied().max().unwrap_or(0);
                        votes
                            .into_iter()
                            .find(|&(_, v)| v == top)
                            .map_or(f64::NAN, |(k, _)| k as f64)
                    }
                };
            }
            Ok(out)
        }
    }
}

/// Imputes every row of a dataset.
pub fn impute_dataset(
    model: &Model,
    data: &Dataset,
    mode: ImputeMode,
) -> Result<Dataset, InferenceError> {
    let rows: Vec<Vec<f64>> = (0..data.num_rows())
        .into_par_iter()
        .map(|i| impute(model, data.row(i), data.observed_row(i), mode))
        .collect::<Result<_, _>>()?;
    let values = rows.into_iter().flatten().collect();
    Ok(Dataset::from_values(data.features().to_vec(), values).expect("shape preserved"))
}

/// Posterior-averaged log-density of the cells flagged in `observed`.
pub fn row_log_density(
    model: &Model,
    row: &[f64],
    observed: &[bool],
) -> Result<f64, InferenceError> {
    let draws = model.draws()?;
    let lls = draws
        .iter()
        .map(|p| model.spn.log_density(p, row, observed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(log_mean_exp(&lls))
}

/// Mean per-entry log-probability of the true values of the missing cells,
/// marginalizing every other cell. `row` holds the true values; `missing`
/// flags the cells to score.
pub fn missing_entry_loglik(
    model: &Model,
    row: &[f64],
    missing: &[bool],
) -> Result<f64, InferenceError> {
    let m = missing.iter().filter(|&&x| x).count();
    if m == 0 {
        return Err(InferenceError::NoMissing);
    }
    Ok(row_log_density(model, row, missing)? / m as f64)
}

/// Posterior-averaged mean log-density over all rows of a dataset.
pub fn mean_log_density(model: &Model, data: &Dataset) -> Result<f64, InferenceError> {
    let lls: Vec<f64> = (0..data.num_rows())
        .into_par_iter()
        .map(|i| row_log_density(model, data.row(i), data.observed_row(i)))
        .collect::<Result<_, _>>()?;
    Ok(lls.iter().sum::<f64>() / lls.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub row: usize,
    /// Negative posterior-averaged log-density.
    pub score: f64,
    /// Children chosen at the sums of the row's most probable tree under
    /// the best draw, root first.
    pub partition: Vec<NodeId>,
}

/// Scores every row; the most anomalous come first.
pub fn anomaly_scores(model: &Model, data: &Dataset) -> Result<Vec<AnomalyScore>, InferenceError> {
    let best = model.best_draw()?;
    let mut scores: Vec<AnomalyScore> = (0..data.num_rows())
        .into_par_iter()
        .map(|i| {
            let (row, obs) = (data.row(i), data.observed_row(i));
            let score = -row_log_density(model, row, obs)?;
            let tree = model.spn.map_tree(best, row, obs)?;
            let partition = tree
                .nodes(&model.spn)
                .into_iter()
                .filter_map(|id| match model.spn.node(id) {
                    Node::Sum { .. } => tree.chosen_child(&model.spn, id),
                    _ => None,
                })
                .collect();
            Ok(AnomalyScore {
                row: i,
                score,
                partition,
            })
        })
        .collect::<Result<_, InferenceError>>()?;
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.row.cmp(&b.row)));
    Ok(scores)
}

/// Posterior over the likelihood kinds and statistical types of a feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypePosterior {
    pub feature: usize,
    /// `(kind, mass, standard error)` in dictionary order.
    pub kinds: Vec<(LikelihoodKind, f64, f64)>,
    /// `(type, mass, standard error)` for every statistical type.
    pub stat_types: Vec<(StatType, f64, f64)>,
}

impl TypePosterior {
    /// Most probable kind; ties go to the earlier dictionary entry.
    pub fn most_likely_kind(&self) -> LikelihoodKind {
        let masses: Vec<f64> = self.kinds.iter().map(|k| k.1).collect();
        self.kinds[argmax(&masses)].0
    }

    pub fn most_likely_stat_type(&self) -> StatType {
        let masses: Vec<f64> = self.stat_types.iter().map(|k| k.1).collect();
        self.stat_types[argmax(&masses)].0
    }

    /// Masses indexed by [`LikelihoodKind::index`].
    pub fn kind_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; LikelihoodKind::ALL.len()];
        for &(k, m, _) in &self.kinds {
            v[k.index()] = m;
        }
        v
    }

    /// Masses indexed by [`StatType::index`].
    pub fn stat_type_vector(&self) -> Vec<f64> {
        self.stat_types.iter().map(|t| t.1).collect()
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Type posterior of feature `d`, averaged over the posterior draws.
pub fn type_posterior(model: &Model, d: usize) -> Result<TypePosterior, InferenceError> {
    let draws = model.draws()?;
    let dict = &model.dictionaries[d];
    // per draw, the mass of every dictionary kind
    let per_draw: Vec<Vec<f64>> = draws
        .iter()
        .map(|p| {
            dict.iter()
                .map(|spec| {
                    let v = model.spn.eval_with_leaf_overrides(p, |f, j| {
                        Some(if f == d {
                            p.leaves[f][j].log_weight_of(|_, c| c.kind() == spec.kind)
                        } else {
                            0.0
                        })
                    })?;
                    Ok(v.exp())
                })
                .collect::<Result<Vec<f64>, SpnError>>()
        })
        .collect::<Result<_, _>>()?;
    let kinds = dict
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let xs: Vec<f64> = per_draw.iter().map(|m| m[l]).collect();
            let (m, se) = mean_and_se(&xs);
            (spec.kind, m, se)
        })
        .collect();
    let stat_types = StatType::ALL
        .iter()
        .map(|&t| {
            let xs: Vec<f64> = per_draw
                .iter()
                .map(|m| {
                    dict.iter()
                        .zip(m)
                        .filter(|(s, _)| stat_type_of(s.kind) == t)
                        .map(|(_, x)| x)
                        .sum()
                })
                .collect();
            let (m, se) = mean_and_se(&xs);
            (t, m, se)
        })
        .collect();
    Ok(TypePosterior {
        feature: d,
        kinds,
        stat_types,
    })
}

/// Range-normalized root mean squared error per feature. `cells` holds
/// `(feature, imputed, truth)`. Features with no cells or a non-positive
/// range yield `None`.
pub fn nrmse(cells: &[(usize, f64, f64)], ranges: &[f64]) -> Vec<Option<f64>> {
    let mut sq = vec![0.0; ranges.len()];
    let mut n = vec![0usize; ranges.len()];
    for &(d, imputed, truth) in cells {
        sq[d] += (imputed - truth) * (imputed - truth);
        n[d] += 1;
    }
    (0..ranges.len())
        .map(|d| (n[d] > 0 && ranges[d] > 0.0).then(|| (sq[d] / n[d] as f64).sqrt() / ranges[d]))
        .collect()
}

/// Area under the ROC curve of `scores` for the positive `labels`, with
/// average ranks for ties.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64, InferenceError> {
    if scores.len() != labels.len() {
        return Err(InferenceError::Length(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(InferenceError::SingleClass);
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, InferenceError> {
    if a.len() != b.len() {
        return Err(InferenceError::Length(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(InferenceError::ZeroVector);
    }
    Ok(dot / (na * nb))
}
