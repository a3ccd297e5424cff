//! Gibbs sampling over induced trees, leaf-component assignments, leaf
//! parameters, leaf weights and sum weights.
//!
//! Missing cells are marginalized: their leaves evaluate to one while
//! sampling trees, they receive no component assignment and contribute no
//! sufficient statistics.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::data::Dataset;
use crate::likelihood::{
    gamma_shape_mom, ComponentSpec, LikelihoodError, LikelihoodKind, Posterior, SuffStats,
};
use crate::math::{argmax, derive_seed, log_add_exp, sample_log_categorical, sample_log_dirichlet};
use crate::spn::{InducedTree, LeafMixture, Node, NodeId, Params, Spn, SpnError};

const MISSING: u8 = u8::MAX;

#[derive(Debug, Error)]
pub enum GibbsError {
    #[error("non-finite likelihood for row {row} at node {node}")]
    NonFiniteLikelihood { row: usize, node: NodeId },
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Spn(#[from] SpnError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Symmetric Dirichlet concentration of the sum weights.
    pub gamma: f64,
    /// Symmetric Dirichlet concentration of the leaf weights.
    pub alpha: f64,
    pub seed: u64,
    /// Resample rows concurrently with per-row random streams.
    pub parallel: bool,
    /// When false, leaf parameters and leaf weights stay at their initial
    /// values and only trees, assignments and sum weights are resampled.
    pub update_leaves: bool,
    pub component_init: ComponentInit,
    /// Adds a Metropolis-Hastings move per sweep that reassigns all cells
    /// of one discrete value within one leaf to another component at once.
    pub value_moves: bool,
}

/// How initial component assignments are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComponentInit {
    /// Each observed cell picks an in-support component uniformly.
    Uniform,
    /// All of a leaf's cells go to the dictionary entry with the largest
    /// conjugate marginal likelihood on them.
    #[default]
    Evidence,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            iterations: 500,
            burn_in: 250,
            thinning: 1,
            gamma: 10.0,
            alpha: 0.1,
            seed: 0,
            parallel: false,
            update_leaves: true,
            component_init: ComponentInit::default(),
            value_moves: true,
        }
    }
}

impl GibbsConfig {
    pub fn check(&self) -> Result<(), GibbsError> {
        if self.burn_in >= self.iterations {
            return Err(GibbsError::Config(format!(
                "burn_in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 {
            return Err(GibbsError::Config("thinning must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.alpha > 0.0) {
            return Err(GibbsError::Config(
                "Dirichlet concentrations must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-sweep counts: sum-edge traversals, component assignments and the
/// sufficient statistics of the data assigned to every leaf component.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCounts {
    pub edges: Vec<Vec<u64>>,
    pub components: Vec<Vec<Vec<u64>>>,
    pub stats: Vec<Vec<Vec<SuffStats>>>,
}

impl SweepCounts {
    fn zeros(spn: &Spn, dicts: &[Vec<ComponentSpec>]) -> SweepCounts {
        let edges = spn
            .sums()
            .iter()
            .map(|&s| vec![0; spn.node(s).children().len()])
            .collect();
        let components = (0..spn.num_features())
            .map(|d| vec![vec![0; dicts[d].len()]; spn.num_leaves(d)])
            .collect();
        let stats = (0..spn.num_features())
            .map(|d| vec![vec![SuffStats::default(); dicts[d].len()]; spn.num_leaves(d)])
            .collect();
        SweepCounts {
            edges,
            components,
            stats,
        }
    }

    fn add_row(&mut self, tree: &InducedTree, row: &[f64], assign: &[u8]) {
        for (k, &c) in tree.choice.iter().enumerate() {
            self.edges[k][c] += 1;
        }
        for (d, &l) in assign.iter().enumerate() {
            if l != MISSING {
                let j = tree.leaf_slots[d];
                self.components[d][j][l as usize] += 1;
                self.stats[d][j][l as usize].push(row[d]);
            }
        }
    }

    fn merge(&mut self, other: &SweepCounts) {
        for (a, b) in self.edges.iter_mut().zip(&other.edges) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self
            .components
            .iter_mut()
            .flatten()
            .zip(other.components.iter().flatten())
        {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self
            .stats
            .iter_mut()
            .flatten()
            .zip(other.stats.iter().flatten())
        {
            a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y));
        }
    }
}

/// Full sampler state.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsState {
    /// Induced tree of every row, with prior draws at detached sums.
    pub trees: Vec<InducedTree>,
    /// Row-major component index of every cell; `u8::MAX` for missing cells.
    pub assignments: Vec<u8>,
    pub params: Params,
    /// Fixed shape of every Gamma component, `[feature][leaf][component]`.
    pub gamma_shapes: Vec<Vec<Vec<f64>>>,
    /// Counts gathered by the most recent sweep (or initialization).
    pub counts: SweepCounts,
}

impl GibbsState {
    pub fn assignment(&self, row: usize, feature: usize) -> Option<usize> {
        let d = self.trees.first().map_or(0, |t| t.leaf_slots.len());
        let l = self.assignments[row * d + feature];
        (l != MISSING).then_some(l as usize)
    }
}

/// How initial trees are chosen.
#[derive(Clone, Debug, Default)]
pub enum TreeInit {
    /// Ancestral draws from the sum weights.
    #[default]
    Prior,
    /// Given trees, one per row (e.g. the structure learner's partition).
    Given(Vec<InducedTree>),
}

/// Builds the initial state: given sum weights, trees per `init`,
/// component assignments per `config.component_init`, Gamma shapes by
/// moments of the assigned data and leaf parameters drawn from their
/// posteriors given those assignments. Leaf weights are uniform, or drawn
/// given the initial assignments under [`ComponentInit::Evidence`].
pub fn init_state<R: Rng + ?Sized>(
    spn: &Spn,
    dicts: &[Vec<ComponentSpec>],
    sum_weights: &[Vec<f64>],
    data: &Dataset,
    init: TreeInit,
    config: &GibbsConfig,
    rng: &mut R,
) -> Result<GibbsState, GibbsError> {
    let d_count = spn.num_features();
    if data.num_features() != d_count || dicts.len() != d_count {
        return Err(GibbsError::Config(
            "data, dictionaries and network disagree on the feature count".into(),
        ));
    }
    if sum_weights.len() != spn.num_sums() {
        return Err(GibbsError::Config(
            "one weight vector per sum is required".into(),
        ));
    }
    let sum_log_weights: Vec<Vec<f64>> = sum_weights
        .iter()
        .map(|w| {
            let t: f64 = w.iter().sum();
            w.iter().map(|x| (x / t).ln()).collect()
        })
        .collect();
    // placeholder leaves; parameters are drawn below
    let leaves: Vec<Vec<LeafMixture>> = (0..d_count)
        .map(|d| {
            let l = dicts[d].len();
            let lw = -(l as f64).ln();
            let mix = LeafMixture {
                log_weights: vec![lw; l],
                components: dicts[d]
                    .iter()
                    .map(|_| crate::likelihood::Likelihood::Exponential { rate: 1.0 })
                    .collect(),
            };
            vec![mix; spn.num_leaves(d)]
        })
        .collect();
    let mut params = Params {
        sum_log_weights,
        leaves,
    };
    params.check(spn)?;

    let n = data.num_rows();
    let trees = match init {
        TreeInit::Prior => {
            let mut trees = Vec::with_capacity(n);
            for _ in 0..n {
                let mut t = InducedTree::empty(spn);
                spn.sample_prior_tree(&params, rng, &mut t);
                trees.push(t);
            }
            trees
        }
        TreeInit::Given(trees) => {
            if trees.len() != n {
                return Err(GibbsError::Config(format!(
                    "{} initial trees for {n} rows",
                    trees.len()
                )));
            }
            trees
        }
    };

    let preferred = match config.component_init {
        ComponentInit::Uniform => None,
        ComponentInit::Evidence => Some(best_evidence_components(spn, dicts, data, &trees)?),
    };
    let mut assignments = vec![MISSING; n * d_count];
    let mut counts = SweepCounts::zeros(spn, dicts);
    let mut live = Vec::with_capacity(8);
    for (i, tree) in trees.iter().enumerate() {
        let row = data.row(i);
        for d in 0..d_count {
            if data.is_observed(i, d) {
                let best = preferred.as_ref().map(|p| p[d][tree.leaf_slots[d]]);
                if let Some(l) = best.filter(|&l| dicts[d][l].in_support(row[d])) {
                    assignments[i * d_count + d] = l as u8;
                    continue;
                }
                live.clear();
                live.extend((0..dicts[d].len()).filter(|&l| dicts[d][l].in_support(row[d])));
                if live.is_empty() {
                    return Err(LikelihoodError::InvalidData {
                        kind: dicts[d][0].kind,
                        value: row[d],
                    }
                    .into());
                }
                assignments[i * d_count + d] = live[rng.random_range(0..live.len())] as u8;
            }
        }
        counts.add_row(tree, row, &assignments[i * d_count..(i + 1) * d_count]);
    }

    let mut gamma_data: Vec<Vec<Vec<Vec<f64>>>> = (0..d_count)
        .map(|d| vec![vec![Vec::new(); dicts[d].len()]; spn.num_leaves(d)])
        .collect();
    for (i, tree) in trees.iter().enumerate() {
        for d in 0..d_count {
            let l = assignments[i * d_count + d];
            if l != MISSING && dicts[d][l as usize].kind == LikelihoodKind::Gamma {
                gamma_data[d][tree.leaf_slots[d]][l as usize].push(data.row(i)[d]);
            }
        }
    }
    let gamma_shapes: Vec<Vec<Vec<f64>>> = gamma_data
        .iter()
        .enumerate()
        .map(|(d, leaves)| {
            leaves
                .iter()
                .map(|comps| {
                    comps
                        .iter()
                        .enumerate()
                        .map(|(l, xs)| {
                            if dicts[d][l].kind == LikelihoodKind::Gamma {
                                gamma_shape_mom(xs)
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    update_leaf_params(&mut params, dicts, &gamma_shapes, &counts, rng)?;
    if config.component_init == ComponentInit::Evidence {
        update_leaf_weights(&mut params, &counts, config.alpha, rng);
    }
    Ok(GibbsState {
        trees,
        assignments,
        params,
        gamma_shapes,
        counts,
    })
}

/// Per `[feature][slot]`, the dictionary entry with the largest marginal
/// likelihood on the in-support cells the leaf receives under `trees`.
fn best_evidence_components(
    spn: &Spn,
    dicts: &[Vec<ComponentSpec>],
    data: &Dataset,
    trees: &[InducedTree],
) -> Result<Vec<Vec<usize>>, GibbsError> {
    let d_count = spn.num_features();
    let mut cells: Vec<Vec<Vec<f64>>> = (0..d_count)
        .map(|d| vec![Vec::new(); spn.num_leaves(d)])
        .collect();
    for (i, tree) in trees.iter().enumerate() {
        for d in 0..d_count {
            if data.is_observed(i, d) {
                cells[d][tree.leaf_slots[d]].push(data.row(i)[d]);
            }
        }
    }
    let mut best = Vec::with_capacity(d_count);
    for (d, leaves) in cells.iter().enumerate() {
        let mut per_leaf = Vec::with_capacity(leaves.len());
        for xs in leaves {
            let mut scores = Vec::with_capacity(dicts[d].len());
            for spec in &dicts[d] {
                let inside: Vec<f64> = xs.iter().copied().filter(|&x| spec.in_support(x)).collect();
                // cells outside a component's support count as impossible
                let score = if inside.len() < xs.len() {
                    f64::NEG_INFINITY
                } else {
                    spec.log_evidence(gamma_shape_mom(&inside), &inside)?
                };
                scores.push(score);
            }
            per_leaf.push(argmax(&scores));
        }
        best.push(per_leaf);
    }
    Ok(best)
}

fn update_leaf_weights<R: Rng + ?Sized>(
    params: &mut Params,
    counts: &SweepCounts,
    alpha: f64,
    rng: &mut R,
) {
    for (d, leaves) in params.leaves.iter_mut().enumerate() {
        for (j, leaf) in leaves.iter_mut().enumerate() {
            let conc: Vec<f64> = counts.components[d][j]
                .iter()
                .map(|&c| alpha + c as f64)
                .collect();
            leaf.log_weights = sample_log_dirichlet(&conc, rng);
        }
    }
}

fn update_leaf_params<R: Rng + ?Sized>(
    params: &mut Params,
    dicts: &[Vec<ComponentSpec>],
    shapes: &[Vec<Vec<f64>>],
    counts: &SweepCounts,
    rng: &mut R,
) -> Result<(), GibbsError> {
    for (d, leaves) in params.leaves.iter_mut().enumerate() {
        for (j, leaf) in leaves.iter_mut().enumerate() {
            for (l, spec) in dicts[d].iter().enumerate() {
                let post = Posterior::from_prior(spec)?.updated(
                    spec,
                    shapes[d][j][l],
                    &counts.stats[d][j][l],
                );
                leaf.components[l] = post.sample(spec, shapes[d][j][l], rng);
            }
        }
    }
    Ok(())
}

/// Resamples one row's tree and component assignments. Returns the row's
/// log-likelihood under the parameters entering the sweep.
#[allow(clippy::too_many_arguments)]
fn resample_row<R: Rng + ?Sized>(
    spn: &Spn,
    params: &Params,
    i: usize,
    row: &[f64],
    observed: &[bool],
    tree: &mut InducedTree,
    assign: &mut [u8],
    values: &mut [f64],
    scratch: &mut Vec<f64>,
    rng: &mut R,
) -> Result<f64, GibbsError> {
    let ll = spn
        .forward(params, row, observed, values)
        .map_err(|e| match e {
            SpnError::NonFiniteValue { node } => GibbsError::NonFiniteLikelihood { row: i, node },
            e => e.into(),
        })?;
    if !ll.is_finite() {
        return Err(GibbsError::NonFiniteLikelihood {
            row: i,
            node: spn.root(),
        });
    }
    spn.sample_induced_tree(params, values, rng, tree);
    for d in 0..row.len() {
        if observed[d] {
            let leaf = &params.leaves[d][tree.leaf_slots[d]];
            leaf.component_log_values(row[d], scratch);
            assign[d] = sample_log_categorical(scratch, rng) as u8;
        } else {
            assign[d] = MISSING;
        }
    }
    Ok(ll)
}

const CHUNK: usize = 256;

/// One full scan: trees and assignments for every row, then leaf
/// parameters, leaf weights and sum weights. Returns the mean row
/// log-likelihood under the parameters that entered the sweep.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut GibbsState,
    spn: &Spn,
    dicts: &[Vec<ComponentSpec>],
    data: &Dataset,
    config: &GibbsConfig,
    rng: &mut R,
) -> Result<f64, GibbsError> {
    let n = data.num_rows();
    let d_count = spn.num_features();
    let mut counts = SweepCounts::zeros(spn, dicts);
    let mut total_ll = 0.0;

    if config.parallel {
        let sweep_seed: u64 = rng.random();
        let params = &state.params;
        let results: Vec<Result<(SweepCounts, f64), GibbsError>> = state
            .trees
            .par_chunks_mut(CHUNK)
            .zip(state.assignments.par_chunks_mut(CHUNK * d_count))
            .enumerate()
            .map(|(c, (trees, assigns))| {
                let mut local = SweepCounts::zeros(spn, dicts);
                let mut values = vec![0.0; spn.len()];
                let mut scratch = Vec::with_capacity(8);
                let mut ll = 0.0;
                for (k, (tree, assign)) in trees
                    .iter_mut()
                    .zip(assigns.chunks_mut(d_count))
                    .enumerate()
                {
                    let i = c * CHUNK + k;
                    let mut row_rng = ChaCha8Rng::seed_from_u64(derive_seed(sweep_seed, i as u64));
                    let row = data.row(i);
                    ll += resample_row(
                        spn,
                        params,
                        i,
                        row,
                        data.observed_row(i),
                        tree,
                        assign,
                        &mut values,
                        &mut scratch,
                        &mut row_rng,
                    )?;
                    local.add_row(tree, row, assign);
                }
                Ok((local, ll))
            })
            .collect();
        for r in results {
            let (local, ll) = r?;
            counts.merge(&local);
            total_ll += ll;
        }
    } else {
        let mut values = vec![0.0; spn.len()];
        let mut scratch = Vec::with_capacity(8);
        for i in 0..n {
            let row = data.row(i);
            let assign = &mut state.assignments[i * d_count..(i + 1) * d_count];
            total_ll += resample_row(
                spn,
                &state.params,
                i,
                row,
                data.observed_row(i),
                &mut state.trees[i],
                assign,
                &mut values,
                &mut scratch,
                rng,
            )?;
            counts.add_row(&state.trees[i], row, assign);
        }
    }

    if config.update_leaves {
        if config.value_moves {
            value_moves(state, &mut counts, dicts, data, config.alpha, rng)?;
        }
        update_leaf_params(&mut state.params, dicts, &state.gamma_shapes, &counts, rng)?;
        update_leaf_weights(&mut state.params, &counts, config.alpha, rng);
    }
    for (k, w) in state.params.sum_log_weights.iter_mut().enumerate() {
        let conc: Vec<f64> = counts.edges[k]
            .iter()
            .map(|&c| config.gamma + c as f64)
            .collect();
        *w = sample_log_dirichlet(&conc, rng);
    }
    state.counts = counts;
    Ok(if n > 0 { total_ll / n as f64 } else { 0.0 })
}

fn log_marginal(spec: &ComponentSpec, stats: &SuffStats) -> Result<f64, GibbsError> {
    Ok(Posterior::from_prior(spec)?
        .updated(spec, 0.0, stats)
        .log_normalizer())
}

/// Metropolis-Hastings moves on the cells sharing one discrete value within
/// one leaf. Such cells are exchangeable, so the move acts on how many of
/// them each component holds: an independence proposal puts them all in a
/// uniformly drawn component or splits them uniformly at random.
/// Acceptance uses the collapsed posterior with leaf weights and parameters
/// integrated out, so the move must be followed by fresh draws of both.
fn value_moves<R: Rng + ?Sized>(
    state: &mut GibbsState,
    counts: &mut SweepCounts,
    dicts: &[Vec<ComponentSpec>],
    data: &Dataset,
    alpha: f64,
    rng: &mut R,
) -> Result<(), GibbsError> {
    let d_count = dicts.len();
    for d in 0..d_count {
        let comps = dicts[d].len();
        if comps < 2 || !dicts[d].iter().all(|s| s.kind.is_discrete()) {
            continue;
        }
        let mut groups: BTreeMap<(usize, u64), Vec<usize>> = BTreeMap::new();
        for (i, tree) in state.trees.iter().enumerate() {
            if data.is_observed(i, d) {
                groups
                    .entry((tree.leaf_slots[d], data.row(i)[d] as u64))
                    .or_default()
                    .push(i);
            }
        }
        for ((j, v), rows) in groups {
            let x = v as f64;
            let c = rows.len();
            let mut current = vec![0usize; comps];
            for &i in &rows {
                current[state.assignments[i * d_count + d] as usize] += 1;
            }
            let proposal = if rng.random::<bool>() {
                let mut m = vec![0usize; comps];
                m[rng.random_range(0..comps)] = c;
                m
            } else {
                let mut m = vec![0usize; comps];
                for _ in 0..c {
                    m[rng.random_range(0..comps)] += 1;
                }
                m
            };
            if proposal == current
                || proposal
                    .iter()
                    .zip(&dicts[d])
                    .any(|(&m, spec)| m > 0 && !spec.in_support(x))
            {
                continue;
            }
            let group_stats = |m: usize| {
                let mut g = SuffStats::default();
                for _ in 0..m {
                    g.push(x);
                }
                g
            };
            let others: Vec<SuffStats> = (0..comps)
                .map(|l| {
                    let mut o = counts.stats[d][j][l].clone();
                    o.remove(&group_stats(current[l]));
                    o
                })
                .collect();
            let log_target = |m: &[usize]| -> Result<f64, GibbsError> {
                let mut t = ln_gamma(c as f64 + 1.0);
                for l in 0..comps {
                    let spec = &dicts[d][l];
                    let mut st = others[l].clone();
                    st.merge(&group_stats(m[l]));
                    let base = if spec.kind == LikelihoodKind::Poisson {
                        -(m[l] as f64) * ln_gamma(x + 1.0)
                    } else {
                        0.0
                    };
                    let n_other = counts.components[d][j][l] as f64 - current[l] as f64;
                    t += log_marginal(spec, &st)? + base + ln_gamma(alpha + n_other + m[l] as f64)
                        - ln_gamma(m[l] as f64 + 1.0);
                }
                Ok(t)
            };
            let log_proposal = |m: &[usize]| {
                let k = comps as f64;
                let split = ln_gamma(c as f64 + 1.0)
                    - m.iter().map(|&x| ln_gamma(x as f64 + 1.0)).sum::<f64>()
                    - c as f64 * k.ln();
                let pure = if m.iter().filter(|&&x| x > 0).count() <= 1 {
                    -k.ln()
                } else {
                    f64::NEG_INFINITY
                };
                log_add_exp(pure, split) - std::f64::consts::LN_2
            };
            let log_ratio = log_target(&proposal)? - log_target(&current)? + log_proposal(&current)
                - log_proposal(&proposal);
            if rng.random::<f64>().ln() < log_ratio {
                let mut rows = rows;
                rows.shuffle(rng);
                let mut next = rows.iter();
                for (l, &m) in proposal.iter().enumerate() {
                    for &i in next.by_ref().take(m) {
                        state.assignments[i * d_count + d] = l as u8;
                    }
                    let mut st = others[l].clone();
                    st.merge(&group_stats(m));
                    counts.stats[d][j][l] = st;
                    counts.components[d][j][l] =
                        counts.components[d][j][l] - current[l] as u64 + m as u64;
                }
            }
        }
    }
    Ok(())
}

/// Counts rebuilt from the trees and assignments held in the state.
pub fn recompute_counts(
    state: &GibbsState,
    spn: &Spn,
    dicts: &[Vec<ComponentSpec>],
    data: &Dataset,
) -> SweepCounts {
    let d_count = spn.num_features();
    let mut counts = SweepCounts::zeros(spn, dicts);
    for (i, tree) in state.trees.iter().enumerate() {
        counts.add_row(
            tree,
            data.row(i),
            &state.assignments[i * d_count..(i + 1) * d_count],
        );
    }
    counts
}

/// Mean row log-likelihood of `params` over a dataset.
pub fn mean_loglik(spn: &Spn, params: &Params, data: &Dataset) -> Result<f64, SpnError> {
    let mut values = vec![0.0; spn.len()];
    let mut total = 0.0;
    for i in 0..data.num_rows() {
        total += spn.forward(params, data.row(i), data.observed_row(i), &mut values)?;
    }
    Ok(total / data.num_rows().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Mean train log-likelihood of the parameters after this iteration.
    pub mean_loglik: f64,
    /// Wall-clock seconds since the start of the run.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,mean_loglik,seconds")?;
        for e in &self.entries {
            writeln!(w, "{},{},{}", e.iteration, e.mean_loglik, e.seconds)?;
        }
        Ok(())
    }
}

/// Retained post-burn-in parameter draws.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub draws: Vec<Params>,
    /// Mean train log-likelihood of every draw.
    pub train_loglik: Vec<f64>,
}

impl PosteriorSamples {
    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    /// Index of the draw with the highest train log-likelihood (first on ties).
    pub fn best_index(&self) -> Option<usize> {
        if self.draws.is_empty() {
            None
        } else {
            Some(crate::math::argmax(&self.train_loglik))
        }
    }
}

/// Output of a complete sampler run.
#[derive(Clone, Debug)]
pub struct GibbsRun {
    pub samples: PosteriorSamples,
    pub trace: Trace,
    pub state: GibbsState,
}

/// Runs `iterations` sweeps from `state`, keeping every `thinning`-th draw
/// after burn-in.
pub fn run_from<R: Rng + ?Sized>(
    mut state: GibbsState,
    spn: &Spn,
    dicts: &[Vec<ComponentSpec>],
    data: &Dataset,
    config: &GibbsConfig,
    rng: &mut R,
) -> Result<GibbsRun, GibbsError> {
    config.check()?;
    let start = Instant::now();
    let mut trace = Trace::default();
    let mut samples = PosteriorSamples::default();
    let mut pending_draw = false;
    for it in 0..config.iterations {
        let ll_in = sweep(&mut state, spn, dicts, data, config, rng)?;
        // the row pass scores the parameters produced by the previous sweep
        if it > 0 {
            trace.entries[it - 1].mean_loglik = ll_in;
            if pending_draw {
                samples.train_loglik.push(ll_in);
            }
        }
        trace.entries.push(TraceEntry {
            iteration: it,
            mean_loglik: f64::NAN,
            seconds: start.elapsed().as_secs_f64(),
        });
        pending_draw =
            it >= config.burn_in && (it - config.burn_in).is_multiple_of(config.thinning);
        if pending_draw {
            samples.draws.push(state.params.clone());
        }
    }
    let last = mean_loglik(spn, &state.params, data)?;
    if let Some(e) = trace.entries.last_mut() {
        e.mean_loglik = last;
    }
    if pending_draw {
        samples.train_loglik.push(last);
    }
    Ok(GibbsRun {
        samples,
        trace,
        state,
    })
}

/// Initializes from the prior and runs the sampler.
pub fn run(
    spn: &Spn,
    dicts: &[Vec<ComponentSpec>],
    sum_weights: &[Vec<f64>],
    data: &Dataset,
    config: &GibbsConfig,
) -> Result<GibbsRun, GibbsError> {
    run_with_init(spn, dicts, sum_weights, data, config, TreeInit::Prior)
}

pub fn run_with_init(
    spn: &Spn,
    dicts: &[Vec<ComponentSpec>],
    sum_weights: &[Vec<f64>],
    data: &Dataset,
    config: &GibbsConfig,
    init: TreeInit,
) -> Result<GibbsRun, GibbsError> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let state = init_state(spn, dicts, sum_weights, data, init, config, &mut rng)?;
    run_from(state, spn, dicts, data, config, &mut rng)
}

/// Fraction of product nodes reached by some row's tree plus leaf
/// components holding at least one observed cell, over all product nodes
/// and all leaf components.
pub fn structure_sparsity(state: &GibbsState, spn: &Spn) -> f64 {
    let mut reached = vec![false; spn.len()];
    for tree in &state.trees {
        let mut stack = vec![spn.root()];
        while let Some(id) = stack.pop() {
            if reached[id.0] && !matches!(spn.node(id), Node::Sum { .. }) {
                continue;
            }
            reached[id.0] = true;
            match spn.node(id) {
                Node::Sum {
                    children,
                    weight_index,
                } => stack.push(children[tree.choice[*weight_index]]),
                Node::Product { children } => stack.extend(children),
                Node::Leaf { .. } => {}
            }
        }
    }
    let products: Vec<NodeId> = spn.product_nodes().collect();
    let relevant_products = products.iter().filter(|p| reached[p.0]).count();
    let mut components = 0usize;
    let mut relevant_components = 0usize;
    for leaves in &state.counts.components {
        for leaf in leaves {
            components += leaf.len();
            relevant_components += leaf.iter().filter(|&&c| c > 0).count();
        }
    }
    let total = products.len() + components;
    if total == 0 {
        return 1.0;
    }
    (relevant_products + relevant_components) as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Feature;
    use crate::likelihood::{default_dictionary, MetaType, Prior};
    use crate::spn::SpnBuilder;
    use crate::structure::{learn_structure, StructureConfig};

    const UNIFORM_INIT: GibbsConfig = GibbsConfig {
        iterations: 500,
        burn_in: 250,
        thinning: 1,
        gamma: 10.0,
        alpha: 0.1,
        seed: 0,
        parallel: false,
        update_leaves: true,
        component_init: ComponentInit::Uniform,
        value_moves: false,
    };

    fn one_leaf() -> Spn {
        let mut b = SpnBuilder::new(1);
        let l = b.leaf(0);
        b.build(l).unwrap()
    }

    fn column(values: Vec<f64>, meta: MetaType) -> Dataset {
        Dataset::from_values(
            vec![Feature {
                name: "x".into(),
                meta,
            }],
            values,
        )
        .unwrap()
    }

    fn two_blobs(n: usize, seed: u64) -> (Dataset, Vec<usize>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let m = if c == 0 { -4.0 } else { 4.0 };
            values.push(
                m + rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut r),
            );
            values.push(
                m + rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut r),
            );
            labels.push(c);
        }
        let features = vec![
            Feature {
                name: "a".into(),
                meta: MetaType::Continuous,
            },
            Feature {
                name: "b".into(),
                meta: MetaType::Continuous,
            },
        ];
        (Dataset::from_values(features, values).unwrap(), labels)
    }

    fn dicts_for(data: &Dataset) -> Vec<Vec<ComponentSpec>> {
        (0..data.num_features())
            .map(|d| default_dictionary(data.features()[d].meta, &data.feature_stats(d)).unwrap())
            .collect()
    }

    #[test]
    fn retained_draw_count() {
        let data = column(vec![1.0, 2.0, 3.0], MetaType::Continuous);
        let dicts = dicts_for(&data);
        let cfg = GibbsConfig {
            iterations: 10,
            burn_in: 5,
            ..Default::default()
        };
        let out = run(&one_leaf(), &dicts, &[], &data, &cfg).unwrap();
        assert_eq!(out.samples.len(), 5);
        assert_eq!(out.samples.train_loglik.len(), 5);
        assert_eq!(out.trace.entries.len(), 10);
        assert!(out.trace.entries.iter().all(|e| e.mean_loglik.is_finite()));
        let cfg = GibbsConfig {
            iterations: 10,
            burn_in: 3,
            thinning: 3,
            ..Default::default()
        };
        assert_eq!(
            run(&one_leaf(), &dicts, &[], &data, &cfg)
                .unwrap()
                .samples
                .len(),
            3
        );
        assert!(GibbsConfig {
            iterations: 5,
            burn_in: 5,
            ..Default::default()
        }
        .check()
        .is_err());
    }

    #[test]
    fn retained_loglik_matches_recomputation() {
        let (data, _) = two_blobs(60, 1);
        let s = learn_structure(
            &data,
            &StructureConfig {
                min_instances_fraction: 0.3,
                ..Default::default()
            },
        )
        .unwrap();
        let dicts = dicts_for(&data);
        let cfg = GibbsConfig {
            iterations: 8,
            burn_in: 4,
            ..Default::default()
        };
        let out = run(&s.spn, &dicts, &s.sum_weights, &data, &cfg).unwrap();
        for (p, ll) in out.samples.draws.iter().zip(&out.samples.train_loglik) {
            assert_eq!(mean_loglik(&s.spn, p, &data).unwrap(), *ll);
        }
    }

    #[test]
    fn single_leaf_single_component_matches_conjugate_posterior() {
        let data = column(vec![2.0, 3.0], MetaType::Discrete);
        let dicts = vec![vec![ComponentSpec::new(
            LikelihoodKind::Poisson,
            Prior::Gamma {
                shape: 1.0,
                rate: 1.0,
            },
        )]];
        let cfg = GibbsConfig {
            iterations: 10_000,
            burn_in: 1,
            ..Default::default()
        };
        let out = run(&one_leaf(), &dicts, &[], &data, &cfg).unwrap();
        let rates: Vec<f64> = out
            .samples
            .draws
            .iter()
            .map(|p| match p.leaves[0][0].components[0] {
                crate::likelihood::Likelihood::Poisson { rate } => rate,
                _ => unreachable!(),
            })
            .collect();
        let m = rates.len() as f64;
        let mean = rates.iter().sum::<f64>() / m;
        // posterior Gamma(6, 3): mean 2, sd sqrt(6)/3
        let se = (6.0f64).sqrt() / 3.0 / m.sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn unselectable_branch_keeps_prior_concentration() {
        // the second branch has (numerically) zero likelihood for every row
        let mut b = SpnBuilder::new(1);
        let (l0, l1) = (b.leaf(0), b.leaf(0));
        let s = b.sum(vec![l0, l1]);
        let spn = b.build(s).unwrap();
        let dicts = vec![vec![ComponentSpec::new(
            LikelihoodKind::Bernoulli,
            Prior::Beta { a: 1.0, b: 1.0 },
        )]];
        let data = column(vec![1.0; 20], MetaType::Discrete);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = init_state(
            &spn,
            &dicts,
            &[vec![0.5, 0.5]],
            &data,
            TreeInit::Prior,
            &UNIFORM_INIT,
            &mut rng,
        )
        .unwrap();
        state.params.leaves[0][1].components[0] = crate::likelihood::Likelihood::Bernoulli {
            p: 1e-300_f64.max(f64::MIN_POSITIVE),
        };
        let cfg = GibbsConfig {
            update_leaves: false,
            ..Default::default()
        };
        sweep(&mut state, &spn, &dicts, &data, &cfg, &mut rng).unwrap();
        assert_eq!(state.counts.edges[0], vec![20, 0]);
    }

    #[test]
    fn counts_match_recomputation_and_simplex_invariants() {
        let (mut data, _) = two_blobs(200, 2);
        data.set(3, 1, None);
        data.set(10, 0, None);
        let s = learn_structure(
            &data,
            &StructureConfig {
                min_instances_fraction: 0.2,
                ..Default::default()
            },
        )
        .unwrap();
        let dicts = dicts_for(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = init_state(
            &s.spn,
            &dicts,
            &s.sum_weights,
            &data,
            TreeInit::Prior,
            &UNIFORM_INIT,
            &mut rng,
        )
        .unwrap();
        let cfg = GibbsConfig::default();
        for _ in 0..5 {
            sweep(&mut state, &s.spn, &dicts, &data, &cfg, &mut rng).unwrap();
            assert_eq!(
                recompute_counts(&state, &s.spn, &dicts, &data),
                state.counts
            );
            assert_eq!(state.assignment(3, 1), None);
            assert!(state.assignment(3, 0).is_some());
            let observed = data.num_rows() * 2 - 2;
            let assigned: u64 = state.counts.components.iter().flatten().flatten().sum();
            assert_eq!(assigned as usize, observed);
            for w in &state.params.sum_log_weights {
                assert!((w.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
            }
            for leaf in state.params.leaves.iter().flatten() {
                assert!((leaf.log_weights.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(leaf.components.iter().all(|c| c.is_valid()));
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let (data, _) = two_blobs(100, 4);
        let s = learn_structure(
            &data,
            &StructureConfig {
                min_instances_fraction: 0.2,
                ..Default::default()
            },
        )
        .unwrap();
        let dicts = dicts_for(&data);
        let a = init_state(
            &s.spn,
            &dicts,
            &s.sum_weights,
            &data,
            TreeInit::Prior,
            &UNIFORM_INIT,
            &mut ChaCha8Rng::seed_from_u64(8),
        )
        .unwrap();
        let b = init_state(
            &s.spn,
            &dicts,
            &s.sum_weights,
            &data,
            TreeInit::Prior,
            &UNIFORM_INIT,
            &mut ChaCha8Rng::seed_from_u64(8),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(mean_loglik(&s.spn, &a.params, &data).unwrap().is_finite());
    }

    #[test]
    fn fixed_seed_runs_are_identical() {
        let (data, _) = two_blobs(80, 5);
        let s = learn_structure(
            &data,
            &StructureConfig {
                min_instances_fraction: 0.2,
                ..Default::default()
            },
        )
        .unwrap();
        let dicts = dicts_for(&data);
        let cfg = GibbsConfig {
            iterations: 20,
            burn_in: 10,
            seed: 77,
            ..Default::default()
        };
        let a = run(&s.spn, &dicts, &s.sum_weights, &data, &cfg).unwrap();
        let b = run(&s.spn, &dicts, &s.sum_weights, &data, &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn two_cluster_trees_recover_partition() {
        let (data, labels) = two_blobs(400, 6);
        let mut b = SpnBuilder::new(2);
        let (a0, a1, b0, b1) = (b.leaf(0), b.leaf(1), b.leaf(0), b.leaf(1));
        let p = b.product(vec![a0, a1]);
        let q = b.product(vec![b0, b1]);
        let s = b.sum(vec![p, q]);
        let spn = b.build(s).unwrap();
        let dicts = dicts_for(&data);
        let cfg = GibbsConfig {
            iterations: 200,
            burn_in: 100,
            seed: 1,
            ..Default::default()
        };
        let out = run(&spn, &dicts, &[vec![0.5, 0.5]], &data, &cfg).unwrap();
        let agree = out
            .state
            .trees
            .iter()
            .zip(&labels)
            .filter(|(t, l)| t.choice[0] == **l)
            .count();
        let purity = agree.max(labels.len() - agree) as f64 / labels.len() as f64;
        assert!(purity >= 0.9, "{purity}");
    }

    #[test]
    fn parallel_mode_runs_and_is_reproducible() {
        let (data, _) = two_blobs(600, 7);
        let s = learn_structure(
            &data,
            &StructureConfig {
                min_instances_fraction: 0.2,
                ..Default::default()
            },
        )
        .unwrap();
        let dicts = dicts_for(&data);
        let cfg = GibbsConfig {
            iterations: 10,
            burn_in: 5,
            parallel: true,
            seed: 3,
            ..Default::default()
        };
        let a = run(&s.spn, &dicts, &s.sum_weights, &data, &cfg).unwrap();
        let b = run(&s.spn, &dicts, &s.sum_weights, &data, &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(
            recompute_counts(&a.state, &s.spn, &dicts, &data).edges,
            a.state.counts.edges
        );
    }

    #[test]
    fn sparsity_bounds() {
        let data = column(vec![1.0, 2.0, 3.0], MetaType::Continuous);
        let dicts = vec![vec![ComponentSpec::new(
            LikelihoodKind::Gaussian,
            Prior::NormalInverseGamma {
                m0: 2.0,
                v0: 10.0,
                a0: 2.0,
                b0: 1.0,
            },
        )]];
        let cfg = GibbsConfig {
            iterations: 3,
            burn_in: 1,
            ..Default::default()
        };
        let out = run(&one_leaf(), &dicts, &[], &data, &cfg).unwrap();
        assert_eq!(structure_sparsity(&out.state, &one_leaf()), 1.0);

        // all data in one branch of a two-branch sum
        let spn = Spn::new(spn_nodes_with_products(), NodeId(6), 2).unwrap();
        let data = Dataset::from_values(
            vec![
                Feature {
                    name: "a".into(),
                    meta: MetaType::Continuous,
                },
                Feature {
                    name: "b".into(),
                    meta: MetaType::Continuous,
                },
            ],
            vec![1.0, 1.0, 1.2, 0.8, 0.9, 1.1],
        )
        .unwrap();
        let dicts = vec![dicts[0].clone(), dicts[0].clone()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = init_state(
            &spn,
            &dicts,
            &[vec![1.0, 1.0]],
            &data,
            TreeInit::Prior,
            &UNIFORM_INIT,
            &mut rng,
        )
        .unwrap();
        for t in &mut state.trees {
            t.choice[0] = 0;
        }
        state.counts = recompute_counts(&state, &spn, &dicts, &data);
        let v = structure_sparsity(&state, &spn);
        assert!(v < 1.0 && v > 0.0, "{v}");
    }

    #[test]
    fn discrete_assignments_match_collapsed_enumeration() {
        let values = vec![0.0, 1.0, 1.0, 2.0, 2.0];
        let data = column(values.clone(), MetaType::Discrete);
        let dicts = vec![vec![
            ComponentSpec::new(
                LikelihoodKind::Poisson,
                Prior::Gamma {
                    shape: 1.0,
                    rate: 1.0,
                },
            ),
            ComponentSpec::new(
                LikelihoodKind::Categorical,
                Prior::Dirichlet {
                    alpha: vec![1.0; 3],
                },
            ),
        ]];
        let alpha = 0.1;
        let n = values.len();
        let states = 1usize << n;
        let mut expected: Vec<f64> = (0..states)
            .map(|s| {
                let mut lp = 0.0;
                for (l, spec) in dicts[0].iter().enumerate() {
                    let cells: Vec<f64> = (0..n)
                        .filter(|i| (s >> i) & 1 == l)
                        .map(|i| values[i])
                        .collect();
                    lp += spec.log_evidence(1.0, &cells).unwrap()
                        + ln_gamma(alpha + cells.len() as f64)
                        - ln_gamma(alpha);
                }
                lp.exp()
            })
            .collect();
        let z: f64 = expected.iter().sum();
        expected.iter_mut().for_each(|p| *p /= z);

        let cfg = GibbsConfig {
            alpha,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = init_state(
            &one_leaf(),
            &dicts,
            &[],
            &data,
            TreeInit::Prior,
            &cfg,
            &mut rng,
        )
        .unwrap();
        let (draws, thin) = (20_000, 10);
        let mut observed = vec![0.0; states];
        for it in 0..draws * thin {
            sweep(&mut state, &one_leaf(), &dicts, &data, &cfg, &mut rng).unwrap();
            if it % thin == 0 {
                let s: usize = (0..n).map(|i| (state.assignment(i, 0).unwrap()) << i).sum();
                observed[s] += 1.0;
            }
        }
        // pool sparse cells so every bin expects at least five draws
        let (mut chi2, mut bins, mut rest_o, mut rest_e) = (0.0, 0, 0.0, 0.0);
        for (o, p) in observed.iter().zip(&expected) {
            let e = p * draws as f64;
            if e >= 5.0 {
                chi2 += (o - e).powi(2) / e;
                bins += 1;
            } else {
                rest_o += o;
                rest_e += e;
            }
        }
        if rest_e > 0.0 {
            chi2 += (rest_o - rest_e).powi(2) / rest_e;
            bins += 1;
        }
        let critical = statrs::distribution::ContinuousCDF::inverse_cdf(
            &statrs::distribution::ChiSquared::new((bins - 1) as f64).unwrap(),
            0.999,
        );
        assert!(
            chi2 < critical,
            "chi2 {chi2} over {bins} bins, critical {critical}"
        );
    }

    fn spn_nodes_with_products() -> Vec<Node> {
        vec![
            Node::Leaf {
                feature: 0,
                leaf_slot: 0,
            },
            Node::Leaf {
                feature: 1,
                leaf_slot: 0,
            },
            Node::Leaf {
                feature: 0,
                leaf_slot: 1,
            },
            Node::Leaf {
                feature: 1,
                leaf_slot: 1,
            },
            Node::Product {
                children: vec![NodeId(0), NodeId(1)],
            },
            Node::Product {
                children: vec![NodeId(2), NodeId(3)],
            },
            Node::Sum {
                children: vec![NodeId(4), NodeId(5)],
                weight_index: 0,
            },
        ]
    }
}
