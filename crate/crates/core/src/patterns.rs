//! Interval patterns read off leaf components, their exact support under
//! the network, levelwise mining of conjunctions, and partition summaries.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{format_number, Dataset, Feature};
use crate::likelihood::{Likelihood, LikelihoodError, LikelihoodKind, MetaType};
use crate::model::{Model, ModelError};
use crate::spn::{InducedTree, Node, NodeId, Params, Spn, SpnError};

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("{name} must lie in (0, 1), got {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("max_arity must be at least 1")]
    Arity,
    #[error("feature {0} is constrained more than once")]
    DuplicateFeature(usize),
    #[error("feature index {0} is out of range")]
    UnknownFeature(usize),
    #[error("antecedent has zero support")]
    ZeroSupport,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Spn(#[from] SpnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The event `low <= X_feature < high`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub feature: usize,
    pub low: f64,
    pub high: f64,
}

/// An interval extracted from one component of one leaf.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalPattern {
    pub interval: Interval,
    pub leaf: NodeId,
    pub slot: usize,
    pub component: usize,
    pub kind: LikelihoodKind,
    /// Mass of the interval under the source component.
    pub mass_at_source: f64,
    /// Mass of the interval under the whole leaf mixture.
    pub leaf_probability: f64,
}

/// A conjunction of atoms on distinct features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositePattern {
    pub atoms: Vec<IntervalPattern>,
    pub support: f64,
    /// Deepest node above every source leaf.
    pub anchor: NodeId,
    /// Nodes from the root to the anchor.
    pub path: Vec<NodeId>,
}

impl CompositePattern {
    pub fn intervals(&self) -> Vec<Interval> {
        self.atoms.iter().map(|a| a.interval.clone()).collect()
    }

    /// `lo <= name < hi ∧ ... (supp=s)`.
    pub fn describe(&self, features: &[Feature]) -> String {
        let body: Vec<String> = self
            .atoms
            .iter()
            .map(|a| describe_interval(&a.interval, features))
            .collect();
        format!("{} (supp={:.3})", body.join(" ∧ "), self.support)
    }
}

fn short(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        return format!("{}", x as i64);
    }
    let s = format!("{x:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn describe_interval(interval: &Interval, features: &[Feature]) -> String {
    let name = features
        .get(interval.feature)
        .map_or_else(|| format!("x{}", interval.feature), |f| f.name.clone());
    format!(
        "{} ≤ {} < {}",
        short(interval.low),
        name,
        short(interval.high)
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MineConfig {
    /// Central probability mass each atom's interval holds under its
    /// source component.
    pub lambda: f64,
    /// An atom is kept when its leaf probability is at least `theta` times
    /// its mass under the source component.
    pub theta: f64,
    /// Patterns with lower support are pruned.
    pub support_floor: f64,
    pub max_arity: usize,
    /// Components with a lower posterior-mean weight yield no atoms.
    pub component_floor: f64,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig {
            lambda: 0.9,
            theta: 0.9,
            support_floor: 0.05,
            max_arity: 4,
            component_floor: 0.1,
        }
    }
}

impl MineConfig {
    pub fn check(&self) -> Result<(), PatternError> {
        for (name, value) in [("lambda", self.lambda), ("theta", self.theta)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(PatternError::OutOfRange { name, value });
            }
        }
        if !(0.0..1.0).contains(&self.support_floor) {
            return Err(PatternError::OutOfRange {
                name: "support_floor",
                value: self.support_floor,
            });
        }
        if self.max_arity == 0 {
            return Err(PatternError::Arity);
        }
        Ok(())
    }
}

/// Averages a component's parameters over posterior draws.
pub fn mean_component(
    draws: &[Params],
    feature: usize,
    slot: usize,
    component: usize,
) -> Likelihood {
    let n = draws.len() as f64;
    let all = || {
        draws
            .iter()
            .map(|p| &p.leaves[feature][slot].components[component])
    };
    let avg = |f: &dyn Fn(&Likelihood) -> f64| all().map(f).sum::<f64>() / n;
    match &draws[0].leaves[feature][slot].components[component] {
        Likelihood::Gaussian { .. } => Likelihood::Gaussian {
            mean: avg(&|l| {
                if let Likelihood::Gaussian { mean, .. } = l {
                    *mean
                } else {
                    0.0
                }
            }),
            var: avg(&|l| {
                if let Likelihood::Gaussian { var, .. } = l {
                    *var
                } else {
                    0.0
                }
            }),
        },
        Likelihood::Gamma { .. } => Likelihood::Gamma {
            shape: avg(&|l| {
                if let Likelihood::Gamma { shape, .. } = l {
                    *shape
                } else {
                    0.0
                }
            }),
            rate: avg(&|l| {
                if let Likelihood::Gamma { rate, .. } = l {
                    *rate
                } else {
                    0.0
                }
            }),
        },
        Likelihood::Exponential { .. } => Likelihood::Exponential {
            rate: avg(&|l| {
                if let Likelihood::Exponential { rate } = l {
                    *rate
                } else {
                    0.0
                }
            }),
        },
        Likelihood::Poisson { .. } => Likelihood::Poisson {
            rate: avg(&|l| {
                if let Likelihood::Poisson { rate } = l {
                    *rate
                } else {
                    0.0
                }
            }),
        },
        Likelihood::Geometric { shift, .. } => Likelihood::Geometric {
            p: avg(&|l| {
                if let Likelihood::Geometric { p, .. } = l {
                    *p
                } else {
                    0.0
                }
            }),
            shift: *shift,
        },
        Likelihood::Bernoulli { .. } => Likelihood::Bernoulli {
            p: avg(&|l| {
                if let Likelihood::Bernoulli { p } = l {
                    *p
                } else {
                    0.0
                }
            }),
        },
        Likelihood::Categorical { probs } => {
            let mut acc = vec![0.0; probs.len()];
            for l in all() {
                if let Likelihood::Categorical { probs } = l {
                    acc.iter_mut().zip(probs).for_each(|(a, p)| *a += p / n);
                }
            }
            Likelihood::Categorical { probs: acc }
        }
    }
}

/// Interval holding the central `lambda` mass of a component. Discrete
/// kinds get integer bounds with the upper quantile included.
pub fn central_interval(component: &Likelihood, lambda: f64) -> (f64, f64) {
    let lo = component.quantile((1.0 - lambda) / 2.0);
    let hi = component.quantile((1.0 + lambda) / 2.0);
    if component.kind().is_discrete() {
        (lo, hi + 1.0)
    } else {
        (lo, hi)
    }
}

/// One atom per sufficiently weighted leaf component whose interval the
/// leaf mixture also concentrates on.
pub fn extract_atoms(
    model: &Model,
    config: &MineConfig,
) -> Result<Vec<IntervalPattern>, PatternError> {
    config.check()?;
    let draws = model.draws()?;
    let n = draws.len() as f64;
    let mut atoms = Vec::new();
    for d in 0..model.num_features() {
        for (slot, &leaf) in model.spn.leaves_of(d).iter().enumerate() {
            let comps = draws[0].leaves[d][slot].components.len();
            let weights: Vec<f64> = (0..comps)
                .map(|l| {
                    draws
                        .iter()
                        .map(|p| p.leaves[d][slot].log_weights[l].exp())
                        .sum::<f64>()
                        / n
                })
                .collect();
            let means: Vec<Likelihood> = (0..comps)
                .map(|l| mean_component(draws, d, slot, l))
                .collect();
            for l in 0..comps {
                if weights[l] < config.component_floor {
                    continue;
                }
                let (low, high) = central_interval(&means[l], config.lambda);
                if low.partial_cmp(&high) != Some(std::cmp::Ordering::Less) {
                    continue;
                }
                let mass_at_source = means[l].interval_log_mass(low, high)?.exp();
                let mut leaf_probability = 0.0;
                for (w, c) in weights.iter().zip(&means) {
                    leaf_probability += w * c.interval_log_mass(low, high)?.exp();
                }
                if leaf_probability < config.theta * mass_at_source {
                    continue;
                }
                atoms.push(IntervalPattern {
                    interval: Interval {
                        feature: d,
                        low,
                        high,
                    },
                    leaf,
                    slot,
                    component: l,
                    kind: means[l].kind(),
                    mass_at_source,
                    leaf_probability,
                });
            }
        }
    }
    Ok(atoms)
}

fn check_intervals(model: &Model, intervals: &[Interval]) -> Result<(), PatternError> {
    let mut seen = BTreeSet::new();
    for i in intervals {
        if i.feature >= model.num_features() {
            return Err(PatternError::UnknownFeature(i.feature));
        }
        if !seen.insert(i.feature) {
            return Err(PatternError::DuplicateFeature(i.feature));
        }
    }
    Ok(())
}

fn support_under(
    spn: &Spn,
    params: &Params,
    by_feature: &[Option<&Interval>],
) -> Result<f64, PatternError> {
    let mut leaf_values: Vec<Vec<f64>> = Vec::with_capacity(by_feature.len());
    for (d, constraint) in by_feature.iter().enumerate() {
        let mut per_slot = Vec::with_capacity(params.leaves[d].len());
        for leaf in &params.leaves[d] {
            per_slot.push(match constraint {
                None => 0.0,
                Some(i) => {
                    let mut terms = Vec::with_capacity(leaf.components.len());
                    for (w, c) in leaf.log_weights.iter().zip(&leaf.components) {
                        terms.push(w + c.interval_log_mass(i.low, i.high)?);
                    }
                    crate::math::log_sum_exp(&terms)
                }
            });
        }
        leaf_values.push(per_slot);
    }
    Ok(spn
        .eval_with_leaf_overrides(params, |d, j| Some(leaf_values[d][j]))?
        .exp())
}

/// Probability of the conjunction of `intervals`, averaged over the
/// posterior draws. The empty conjunction has support exactly 1.
pub fn pattern_support(model: &Model, intervals: &[Interval]) -> Result<f64, PatternError> {
    check_intervals(model, intervals)?;
    let draws = model.draws()?;
    let mut by_feature: Vec<Option<&Interval>> = vec![None; model.num_features()];
    for i in intervals {
        by_feature[i.feature] = Some(i);
    }
    let mut total = 0.0;
    for p in draws {
        total += support_under(&model.spn, p, &by_feature)?;
    }
    Ok(total / draws.len() as f64)
}

/// `supp(antecedent ∧ consequent) / supp(antecedent)`.
pub fn confidence(
    model: &Model,
    antecedent: &[Interval],
    consequent: &[Interval],
) -> Result<f64, PatternError> {
    let base = pattern_support(model, antecedent)?;
    if base <= 0.0 {
        return Err(PatternError::ZeroSupport);
    }
    let joint: Vec<Interval> = antecedent.iter().chain(consequent).cloned().collect();
    Ok(pattern_support(model, &joint)? / base)
}

fn common_prefix(paths: &[&Vec<NodeId>]) -> Vec<NodeId> {
    let mut prefix = paths[0].clone();
    for p in &paths[1..] {
        let k = prefix
            .iter()
            .zip(p.iter())
            .take_while(|(a, b)| a == b)
            .count();
        prefix.truncate(k);
    }
    prefix
}

/// Levelwise mining: atoms first, then conjunctions grown one atom at a
/// time from frequent patterns whose every sub-pattern is frequent.
/// Atoms combine only when their leaves meet at a product node, i.e.
/// when they describe the same data partition. Sorted by support, then
/// by atom order; repeated interval sets are reported once.
pub fn mine(model: &Model, config: &MineConfig) -> Result<Vec<CompositePattern>, PatternError> {
    let atoms = extract_atoms(model, config)?;
    let spn = &model.spn;
    let paths: Vec<Vec<NodeId>> = atoms.iter().map(|a| spn.path_to(a.leaf)).collect();
    let k = atoms.len();
    let mut compatible = vec![vec![false; k]; k];
    for a in 0..k {
        for b in 0..k {
            if atoms[a].interval.feature != atoms[b].interval.feature {
                let lca = *common_prefix(&[&paths[a], &paths[b]])
                    .last()
                    .expect("paths share the root");
                compatible[a][b] = matches!(spn.node(lca), Node::Product { .. });
            }
        }
    }
    let support_of = |set: &[usize]| -> Result<f64, PatternError> {
        let intervals: Vec<Interval> = set.iter().map(|&i| atoms[i].interval.clone()).collect();
        pattern_support(model, &intervals)
    };

    let mut frequent: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let level: Vec<(Vec<usize>, f64)> = (0..k)
        .into_par_iter()
        .map(|i| Ok((vec![i], support_of(&[i])?)))
        .collect::<Result<_, PatternError>>()?;
    let mut current: Vec<(Vec<usize>, f64)> = level
        .into_iter()
        .filter(|(_, s)| *s >= config.support_floor)
        .collect();
    for (set, s) in &current {
        frequent.insert(set.clone(), *s);
    }
    for _ in 1..config.max_arity {
        let mut candidates = Vec::new();
        for (x, (a, _)) in current.iter().enumerate() {
            for (b, _) in &current[x + 1..] {
                if a[..a.len() - 1] != b[..b.len() - 1] {
                    continue;
                }
                let new = *b.last().expect("nonempty");
                if !a.iter().all(|&i| compatible[i][new]) {
                    continue;
                }
                let mut cand = a.clone();
                cand.push(new);
                let subsets_frequent = (0..cand.len()).all(|skip| {
                    let sub: Vec<usize> = cand
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != skip)
                        .map(|(_, &v)| v)
                        .collect();
                    frequent.contains_key(&sub)
                });
                if subsets_frequent {
                    candidates.push(cand);
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        let scored: Vec<(Vec<usize>, f64)> = candidates
            .into_par_iter()
            .map(|c| Ok((c.clone(), support_of(&c)?)))
            .collect::<Result<_, PatternError>>()?;
        for (cand, s) in &scored {
            for skip in 0..cand.len() {
                let sub: Vec<usize> = cand
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != skip)
                    .map(|(_, &v)| v)
                    .collect();
                assert!(
                    *s <= frequent[&sub] + 1e-12,
                    "support of {cand:?} exceeds that of {sub:?}"
                );
            }
        }
        current = scored
            .into_iter()
            .filter(|(_, s)| *s >= config.support_floor)
            .collect();
        for (set, s) in &current {
            frequent.insert(set.clone(), *s);
        }
    }

    let mut out: Vec<(Vec<usize>, f64)> = frequent.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    // leaves in different partitions can yield the same event; keep its first rank
    let mut seen = HashSet::new();
    out.retain(|(set, _)| {
        let mut key: Vec<(usize, u64, u64)> = set
            .iter()
            .map(|&i| {
                let iv = &atoms[i].interval;
                (iv.feature, iv.low.to_bits(), iv.high.to_bits())
            })
            .collect();
        key.sort_unstable();
        seen.insert(key)
    });
    Ok(out
        .into_iter()
        .map(|(set, support)| {
            let ps: Vec<&Vec<NodeId>> = set.iter().map(|&i| &paths[i]).collect();
            let path = common_prefix(&ps);
            CompositePattern {
                atoms: set.iter().map(|&i| atoms[i].clone()).collect(),
                support,
                anchor: *path.last().expect("paths share the root"),
                path,
            }
        })
        .collect())
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(";")
}

/// Writes patterns as CSV, one row per pattern, list columns `;`-joined.
pub fn write_patterns_csv<W: Write>(
    patterns: &[CompositePattern],
    features: &[Feature],
    w: W,
) -> Result<(), PatternError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "rank", "support", "arity", "anchor", "path", "features", "kinds", "lows", "highs",
        "pattern",
    ])?;
    for (rank, p) in patterns.iter().enumerate() {
        out.write_record([
            (rank + 1).to_string(),
            format_number(p.support),
            p.atoms.len().to_string(),
            p.anchor.to_string(),
            join(&p.path, |n| n.to_string()),
            join(&p.atoms, |a| {
                features
                    .get(a.interval.feature)
                    .map_or_else(|| a.interval.feature.to_string(), |f| f.name.clone())
            }),
            join(&p.atoms, |a| a.kind.name().to_string()),
            join(&p.atoms, |a| format_number(a.interval.low)),
            join(&p.atoms, |a| format_number(a.interval.high)),
            p.describe(features),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Summary of the observed cells of one feature within a partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub feature: usize,
    pub observed: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    /// Most frequent value, for discrete features.
    pub mode: Option<f64>,
}

/// The data partition of one node: the rows whose induced tree reaches it,
/// restricted to the node's scope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub node: NodeId,
    pub kind: String,
    pub depth: usize,
    pub path: Vec<NodeId>,
    pub rows: usize,
    pub features: Vec<FeatureSummary>,
}

fn summarize(data: &Dataset, rows: &[usize], d: usize) -> FeatureSummary {
    let xs: Vec<f64> = rows.iter().filter_map(|&i| data.get(i, d)).collect();
    let n = xs.len() as f64;
    let mean = if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / n
    };
    let sd = if xs.is_empty() {
        f64::NAN
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    let mode = if data.features()[d].meta == MetaType::Discrete && !xs.is_empty() {
        let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
        for x in &xs {
            *counts.entry(*x as i64).or_default() += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(v, _)| v as f64)
    } else {
        None
    };
    FeatureSummary {
        feature: d,
        observed: xs.len(),
        mean,
        sd,
        min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mode,
    }
}

/// Partition summaries in pre-order, given one induced tree per row.
pub fn partition_report_from_trees(
    spn: &Spn,
    data: &Dataset,
    trees: &[InducedTree],
) -> Vec<PartitionSummary> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); spn.len()];
    for (i, t) in trees.iter().enumerate() {
        for id in t.nodes(spn) {
            members[id.0].push(i);
        }
    }
    let mut out = Vec::new();
    let mut visited = vec![false; spn.len()];
    let mut stack = vec![(spn.root(), vec![spn.root()])];
    while let Some((id, path)) = stack.pop() {
        if visited[id.0] {
            continue;
        }
        visited[id.0] = true;
        let node = spn.node(id);
        for &c in node.children().iter().rev() {
            let mut p = path.clone();
            p.push(c);
            stack.push((c, p));
        }
        let kind = match node {
            Node::Sum { .. } => "sum",
            Node::Product { .. } => "product",
            Node::Leaf { .. } => "leaf",
        };
        out.push(PartitionSummary {
            node: id,
            kind: kind.into(),
            depth: path.len() - 1,
            rows: members[id.0].len(),
            features: spn
                .scope(id)
                .iter()
                .map(|&d| summarize(data, &members[id.0], d))
                .collect(),
            path,
        });
    }
    out
}

/// Partition summaries with every row routed along its most probable
/// induced tree under the best posterior draw.
pub fn partition_report(
    model: &Model,
    data: &Dataset,
) -> Result<Vec<PartitionSummary>, PatternError> {
    model.check_schema(data)?;
    let best = model.best_draw()?;
    let trees: Vec<InducedTree> = (0..data.num_rows())
        .into_par_iter()
        .map(|i| model.spn.map_tree(best, data.row(i), data.observed_row(i)))
        .collect::<Result<_, SpnError>>()?;
    Ok(partition_report_from_trees(&model.spn, data, &trees))
}

/// Indented text rendering of a partition report.
pub fn render_partitions(report: &[PartitionSummary], features: &[Feature]) -> String {
    let mut s = String::new();
    for p in report {
        let _ = write!(
            s,
            "{}- {} {} ({} rows)",
            "  ".repeat(p.depth),
            p.kind,
            p.node,
            p.rows
        );
        if p.kind == "leaf" {
            for f in &p.features {
                let name = &features[f.feature].name;
                match f.mode {
                    Some(m) => {
                        let _ = write!(
                            s,
                            ": {name} mode {} range [{}, {}]",
                            short(m),
                            short(f.min),
                            short(f.max)
                        );
                    }
                    None if f.observed > 0 => {
                        let _ = write!(s, ": {name} mean {} sd {}", short(f.mean), short(f.sd));
                    }
                    None => {
                        let _ = write!(s, ": {name} unobserved");
                    }
                }
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::PosteriorSamples;
    use crate::likelihood::{ComponentSpec, Prior};
    use crate::model::{FitConfig, Provenance, StateSummary};
    use crate::spn::{LeafMixture, SpnBuilder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss(mean: f64, var: f64) -> LeafMixture {
        LeafMixture {
            log_weights: vec![0.0],
            components: vec![Likelihood::Gaussian { mean, var }],
        }
    }

    fn model_of(spn: Spn, draws: Vec<Params>) -> Model {
        let d = spn.num_features();
        let spec = ComponentSpec::new(
            LikelihoodKind::Gaussian,
            Prior::NormalInverseGamma {
                m0: 0.0,
                v0: 1.0,
                a0: 1.0,
                b0: 1.0,
            },
        );
        Model {
            features: (0..d)
                .map(|i| Feature {
                    name: format!("f{i}"),
                    meta: MetaType::Continuous,
                })
                .collect(),
            spn,
            dictionaries: vec![vec![spec]; d],
            config: FitConfig::default(),
            samples: PosteriorSamples {
                train_loglik: vec![0.0; draws.len()],
                draws,
            },
            summary: StateSummary {
                edge_counts: vec![],
                component_counts: vec![],
                sparsity: 1.0,
                final_mean_loglik: 0.0,
            },
            provenance: Provenance {
                crate_version: "test".into(),
                seed: 0,
                dataset_hash: String::new(),
                rows: 0,
            },
        }
    }

    /// Two features, two clusters: `w` at (-5, 5) and `1 - w` at (5, -5).
    fn two_boxes(w: f64) -> Model {
        let mut b = SpnBuilder::new(2);
        let (a0, a1, b0, b1) = (b.leaf(0), b.leaf(1), b.leaf(0), b.leaf(1));
        let p = b.product(vec![a0, a1]);
        let q = b.product(vec![b0, b1]);
        let s = b.sum(vec![p, q]);
        let spn = b.build(s).unwrap();
        let params = Params {
            sum_log_weights: vec![vec![w.ln(), (1.0 - w).ln()]],
            leaves: vec![
                vec![gauss(-5.0, 1.0), gauss(5.0, 1.0)],
                vec![gauss(5.0, 1.0), gauss(-5.0, 1.0)],
            ],
        };
        model_of(spn, vec![params])
    }

    fn independent(n: usize) -> Model {
        let mut b = SpnBuilder::new(n);
        let leaves: Vec<NodeId> = (0..n).map(|d| b.leaf(d)).collect();
        let root = if n == 1 { leaves[0] } else { b.product(leaves) };
        let spn = b.build(root).unwrap();
        let params = Params {
            sum_log_weights: vec![],
            leaves: (0..n)
                .map(|d| vec![gauss(d as f64, 1.0 + d as f64)])
                .collect(),
        };
        model_of(spn, vec![params])
    }

    #[test]
    fn central_intervals_match_quantiles() {
        let (lo, hi) = central_interval(
            &Likelihood::Gaussian {
                mean: 0.0,
                var: 1.0,
            },
            0.9,
        );
        assert!((lo + 1.6449).abs() < 1e-3 && (hi - 1.6449).abs() < 1e-3);
        let (lo, hi) = central_interval(&Likelihood::Exponential { rate: 1.0 }, 0.9);
        assert!((lo - (1.0f64 / 0.95).ln()).abs() < 1e-3 && (hi - 20.0f64.ln()).abs() < 1e-3);
        let pois = Likelihood::Poisson { rate: 4.0 };
        let (lo, hi) = central_interval(&pois, 0.9);
        assert_eq!((lo.fract(), hi.fract()), (0.0, 0.0));
        assert!(pois.interval_log_mass(lo, hi).unwrap().exp() >= 0.9);
        let wide = central_interval(
            &Likelihood::Gaussian {
                mean: 0.0,
                var: 1.0,
            },
            1.0 - 1e-12,
        );
        assert!(wide.0 < -6.0 && wide.1 > 6.0);
    }

    #[test]
    fn support_trivial_cases() {
        let m = two_boxes(0.3);
        assert_eq!(pattern_support(&m, &[]).unwrap(), 1.0);
        let full = [
            Interval {
                feature: 0,
                low: f64::NEG_INFINITY,
                high: f64::INFINITY,
            },
            Interval {
                feature: 1,
                low: f64::NEG_INFINITY,
                high: f64::INFINITY,
            },
        ];
        assert!((pattern_support(&m, &full).unwrap() - 1.0).abs() < 1e-12);
        let single = model_of(
            one_gaussian_leaf(),
            vec![Params {
                sum_log_weights: vec![],
                leaves: vec![vec![gauss(2.0, 3.0)]],
            }],
        );
        let half = pattern_support(
            &single,
            &[Interval {
                feature: 0,
                low: 2.0,
                high: f64::INFINITY,
            }],
        )
        .unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        let dup = [
            Interval {
                feature: 0,
                low: 0.0,
                high: 1.0,
            },
            Interval {
                feature: 0,
                low: 0.0,
                high: 2.0,
            },
        ];
        assert!(matches!(
            pattern_support(&m, &dup),
            Err(PatternError::DuplicateFeature(0))
        ));
    }

    fn one_gaussian_leaf() -> Spn {
        let mut b = SpnBuilder::new(1);
        let l = b.leaf(0);
        b.build(l).unwrap()
    }

    #[test]
    fn box_support_matches_forward_sampling() {
        let m = two_boxes(0.3);
        let boxed = [
            Interval {
                feature: 0,
                low: -6.0,
                high: -4.0,
            },
            Interval {
                feature: 1,
                low: 3.5,
                high: 7.0,
            },
        ];
        let exact = pattern_support(&m, &boxed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| {
                let x = m.spn.sample_row(&m.samples.draws[0], &mut rng);
                boxed
                    .iter()
                    .all(|i| x[i.feature] >= i.low && x[i.feature] < i.high)
            })
            .count() as f64;
        let p = hits / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((p - exact).abs() < 3.0 * se, "{p} vs {exact}");
    }

    #[test]
    fn factorized_support_is_a_product() {
        let m = independent(3);
        let iv = [
            Interval {
                feature: 0,
                low: -1.0,
                high: 0.5,
            },
            Interval {
                feature: 1,
                low: 0.0,
                high: 3.0,
            },
            Interval {
                feature: 2,
                low: 1.0,
                high: 2.5,
            },
        ];
        let singles: f64 = iv
            .iter()
            .map(|i| pattern_support(&m, std::slice::from_ref(i)).unwrap())
            .product();
        assert!((pattern_support(&m, &iv).unwrap() - singles).abs() < 1e-9);
        let mined = mine(&m, &MineConfig::default()).unwrap();
        for p in mined.iter().filter(|p| p.atoms.len() > 1) {
            let prod: f64 = p
                .atoms
                .iter()
                .map(|a| pattern_support(&m, std::slice::from_ref(&a.interval)).unwrap())
                .product();
            assert!((p.support - prod).abs() < 1e-9);
        }
    }

    #[test]
    fn blob_boxes_lead_the_composites() {
        let m = two_boxes(0.35);
        let config = MineConfig {
            lambda: 0.99,
            ..Default::default()
        };
        let mined = mine(&m, &config).unwrap();
        let composites: Vec<&CompositePattern> =
            mined.iter().filter(|p| p.atoms.len() == 2).collect();
        assert_eq!(composites.len(), 2);
        assert!((composites[0].support - 0.65).abs() < 0.05);
        assert!((composites[1].support - 0.35).abs() < 0.05);
        for c in &composites {
            assert!(matches!(m.spn.node(c.anchor), Node::Product { .. }));
            assert_eq!(c.path[0], m.spn.root());
            let lows: Vec<f64> = c.atoms.iter().map(|a| a.interval.low).collect();
            assert!(
                lows[0] * lows[1] < 0.0,
                "atoms from different clusters were combined"
            );
        }
        for p in &mined {
            assert!(p.support >= config.support_floor);
            for a in &p.atoms {
                assert!(a.mass_at_source >= config.lambda - 1e-9);
            }
        }
        let line = composites[0].describe(&m.features);
        assert!(
            line.contains(" ≤ f0 < ")
                && line.contains(" ∧ ")
                && line.ends_with(')')
                && line.contains("(supp=0."),
            "{line}"
        );
    }

    #[test]
    fn confidence_of_a_box() {
        let m = two_boxes(0.5);
        let a = [Interval {
            feature: 0,
            low: -7.0,
            high: -3.0,
        }];
        let c = [Interval {
            feature: 1,
            low: 3.0,
            high: 7.0,
        }];
        // the other cluster puts essentially no mass on the antecedent, so
        // the confidence is the N(5, 1) mass of [3, 7): erf(sqrt 2)
        let conf = confidence(&m, &a, &c).unwrap();
        assert!((conf - 0.954_499_736_103_641_6).abs() < 1e-9, "{conf}");
        let nowhere = [Interval {
            feature: 0,
            low: 1e6,
            high: 2e6,
        }];
        assert!(matches!(
            confidence(&m, &nowhere, &c),
            Err(PatternError::ZeroSupport)
        ));
    }

    #[test]
    fn atoms_skip_light_components_and_diffuse_leaves() {
        let mut m = independent(1);
        m.samples.draws[0].leaves[0][0] = LeafMixture {
            log_weights: vec![0.95f64.ln(), 0.05f64.ln()],
            components: vec![
                Likelihood::Gaussian {
                    mean: 0.0,
                    var: 1.0,
                },
                Likelihood::Gaussian {
                    mean: 50.0,
                    var: 1.0,
                },
            ],
        };
        let atoms = extract_atoms(&m, &MineConfig::default()).unwrap();
        assert_eq!(atoms.len(), 1);
        assert_eq!(atoms[0].component, 0);
        // an even two-way split leaves each interval with about half the leaf's mass
        m.samples.draws[0].leaves[0][0].log_weights = vec![0.5f64.ln(), 0.5f64.ln()];
        assert!(extract_atoms(&m, &MineConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn mean_component_averages_draws() {
        let mut m = independent(1);
        let mut second = m.samples.draws[0].clone();
        second.leaves[0][0] = gauss(2.0, 3.0);
        m.samples.draws.push(second);
        assert_eq!(
            mean_component(&m.samples.draws, 0, 0, 0),
            Likelihood::Gaussian {
                mean: 1.0,
                var: 2.0
            }
        );
    }

    #[test]
    fn csv_export_has_one_row_per_pattern() {
        let m = two_boxes(0.4);
        let mined = mine(&m, &MineConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_patterns_csv(&mined, &m.features, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), mined.len() + 1);
        assert!(text.starts_with("rank,support,arity"));
    }

    #[test]
    fn partitions_of_two_clusters() {
        let m = two_boxes(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<Option<f64>>> = (0..200)
            .map(|_| {
                m.spn
                    .sample_row(&m.samples.draws[0], &mut rng)
                    .into_iter()
                    .map(Some)
                    .collect()
            })
            .collect();
        let data = Dataset::from_rows(m.features.clone(), &rows).unwrap();
        let report = partition_report(&m, &data).unwrap();
        assert_eq!(report[0].node, m.spn.root());
        assert_eq!(report[0].rows, 200);
        let products: Vec<&PartitionSummary> =
            report.iter().filter(|p| p.kind == "product").collect();
        assert_eq!(products.len(), 2);
        assert_eq!(products.iter().map(|p| p.rows).sum::<usize>(), 200);
        for p in &products {
            assert_eq!(p.depth, 1);
            let f0 = &p.features[0];
            assert!(
                f0.min.signum() == f0.max.signum(),
                "partition mixes clusters"
            );
        }
        for d in 0..2 {
            let leaf_rows: usize = report
                .iter()
                .filter(|p| p.kind == "leaf" && p.features[0].feature == d)
                .map(|p| p.rows)
                .sum();
            assert_eq!(leaf_rows, 200);
        }
        let text = render_partitions(&report, &m.features);
        assert_eq!(text.lines().count(), report.len());
    }
}
