//! Random ground-truth generators: guillotine-partition networks with
//! random leaf likelihoods, and the datasets they emit.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Feature};
use crate::inference::{cosine_similarity, mean_log_density, type_posterior, InferenceError};
use crate::likelihood::{stat_type_of, Likelihood, LikelihoodKind, MetaType, StatType};
use crate::math::{argmax, sample_gamma, sample_log_dirichlet};
use crate::model::Model;
use crate::spn::{LeafMixture, NodeId, Params, Spn, SpnBuilder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub rows: usize,
    pub features: usize,
    /// Probability of attempting a column split rather than a row split.
    pub theta_split: f64,
    /// Beta prior of the per-split cluster-membership probability.
    pub split_beta: (f64, f64),
    /// Partitions with fewer rows than this fraction of `rows` stop splitting.
    pub min_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 2000,
            features: 4,
            theta_split: 0.8,
            split_beta: (4.0, 5.0),
            min_fraction: 0.1,
        }
    }
}

/// The generating model and labels of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spn: Spn,
    pub params: Params,
    pub stat_types: Vec<StatType>,
    /// Per-feature probability mass of each likelihood kind under the
    /// generating model, indexed by [`LikelihoodKind::index`].
    pub kind_weights: Vec<Vec<f64>>,
    /// Final row partition of every row.
    pub row_labels: Vec<usize>,
    /// Parameterization used for the Gamma-distributed leaf priors.
    pub gamma_convention: String,
}

impl GroundTruth {
    /// One-hot statistical-type vector of a feature, indexed by [`StatType::index`].
    pub fn stat_type_vector(&self, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; StatType::ALL.len()];
        v[self.stat_types[d].index()] = 1.0;
        v
    }

    /// Mean log-density of the generating model over a dataset.
    pub fn mean_loglik(&self, data: &Dataset) -> f64 {
        crate::gibbs::mean_loglik(&self.spn, &self.params, data)
            .expect("generating model evaluates")
    }
}

const TYPES: [StatType; 4] = [StatType::Real, StatType::Pos, StatType::Num, StatType::Nom];

fn meta_of(t: StatType) -> MetaType {
    match t {
        StatType::Real | StatType::Pos => MetaType::Continuous,
        _ => MetaType::Discrete,
    }
}

fn random_leaf<R: Rng + ?Sized>(t: StatType, rng: &mut R) -> Likelihood {
    match t {
        StatType::Real => {
            // Normal-Inverse-Gamma(0, 30, 10, 10)
            let var = 1.0 / sample_gamma(10.0, 10.0, rng);
            let mean = Normal::new(0.0, (30.0 * var).sqrt())
                .expect("valid normal")
                .sample(rng);
            Likelihood::Gaussian { mean, var }
        }
        StatType::Pos => {
            if rng.random::<bool>() {
                let shape = rng.random_range(5.0..25.0);
                let scale = sample_gamma(10.0, 10.0, rng);
                Likelihood::Gamma {
                    shape,
                    rate: 1.0 / scale,
                }
            } else {
                Likelihood::Exponential {
                    rate: sample_gamma(20.0, 5.0, rng),
                }
            }
        }
        StatType::Num => Likelihood::Poisson {
            rate: sample_gamma(100.0, 10.0, rng),
        },
        _ => {
            let k = rng.random_range(5..=15);
            let probs = sample_log_dirichlet(&vec![10.0; k], rng)
                .into_iter()
                .map(f64::exp)
                .collect();
            Likelihood::Categorical { probs }
        }
    }
}

struct Generator<'a, R: Rng> {
    config: &'a SynthConfig,
    types: Vec<StatType>,
    builder: SpnBuilder,
    sum_weights: Vec<Vec<f64>>,
    leaves: Vec<Vec<Likelihood>>,
    /// Leaf slot generating every (row, feature) cell.
    cell_leaf: Vec<usize>,
    row_labels: Vec<usize>,
    partitions: usize,
    rng: R,
}

const MAX_ATTEMPTS: usize = 64;

impl<R: Rng> Generator<'_, R> {
    fn emit_leaves(&mut self, rows: &[usize], cols: &[usize]) -> NodeId {
        let d_count = self.config.features;
        let label = self.partitions;
        self.partitions += 1;
        let mut ids = Vec::with_capacity(cols.len());
        for &d in cols {
            let id = self.builder.leaf(d);
            let slot = self.leaves[d].len();
            let leaf = random_leaf(self.types[d], &mut self.rng);
            self.leaves[d].push(leaf);
            for &i in rows {
                self.cell_leaf[i * d_count + d] = slot;
            }
            ids.push(id);
        }
        for &i in rows {
            self.row_labels[i] = label;
        }
        if ids.len() == 1 {
            ids[0]
        } else {
            self.builder.product(ids)
        }
    }

    fn split(&mut self, rows: &[usize], cols: &[usize]) -> NodeId {
        let min_rows = self.config.min_fraction * self.config.rows as f64;
        if (rows.len() as f64) < min_rows || rows.len() < 2 {
            return self.emit_leaves(rows, cols);
        }
        let beta =
            Beta::new(self.config.split_beta.0, self.config.split_beta.1).expect("valid beta");
        for _ in 0..MAX_ATTEMPTS {
            let try_columns = cols.len() > 1 && self.rng.random::<f64>() < self.config.theta_split;
            let p = beta.sample(&mut self.rng);
            if try_columns {
                let (a, b): (Vec<usize>, Vec<usize>) =
                    cols.iter().partition(|_| self.rng.random::<f64>() < p);
                if a.is_empty() || b.is_empty() {
                    continue;
                }
                let left = self.split(rows, &a);
                let right = self.split(rows, &b);
                return self.builder.product(vec![left, right]);
            }
            let (a, b): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|_| self.rng.random::<f64>() < p);
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let left = self.split(&a, cols);
            let right = self.split(&b, cols);
            let total = rows.len() as f64;
            let node = self.builder.sum(vec![left, right]);
            self.sum_weights
                .push(vec![a.len() as f64 / total, b.len() as f64 / total]);
            return node;
        }
        self.emit_leaves(rows, cols)
    }
}

/// Generates a dataset and its ground truth.
pub fn generate<R: Rng>(config: &SynthConfig, rng: &mut R) -> (Dataset, GroundTruth) {
    let n = config.rows;
    let d_count = config.features;
    let types: Vec<StatType> = (0..d_count)
        .map(|_| TYPES[rng.random_range(0..TYPES.len())])
        .collect();
    let mut g = Generator {
        config,
        types: types.clone(),
        builder: SpnBuilder::new(d_count),
        sum_weights: Vec::new(),
        leaves: vec![Vec::new(); d_count],
        cell_leaf: vec![0; n * d_count],
        row_labels: vec![0; n],
        partitions: 0,
        rng,
    };
    let rows: Vec<usize> = (0..n).collect();
    let cols: Vec<usize> = (0..d_count).collect();
    let root = g.split(&rows, &cols);
    let rng = g.rng;
    let spn = g.builder.build(root).expect("generated network is valid");

    let mut values = Vec::with_capacity(n * d_count);
    for i in 0..n {
        for d in 0..d_count {
            values.push(g.leaves[d][g.cell_leaf[i * d_count + d]].sample(rng));
        }
    }
    let features = (0..d_count)
        .map(|d| Feature {
            name: format!("x{d}"),
            meta: meta_of(types[d]),
        })
        .collect();
    let data = Dataset::from_values(features, values).expect("consistent shape");

    let params = Params {
        sum_log_weights: g
            .sum_weights
            .iter()
            .map(|w| w.iter().map(|x| x.ln()).collect())
            .collect(),
        leaves: g
            .leaves
            .iter()
            .map(|ls| {
                ls.iter()
                    .map(|l| LeafMixture {
                        log_weights: vec![0.0],
                        components: vec![l.clone()],
                    })
                    .collect()
            })
            .collect(),
    };
    let kind_weights = (0..d_count)
        .map(|d| {
            LikelihoodKind::ALL
                .iter()
                .map(|&k| {
                    spn.eval_with_leaf_overrides(&params, |f, j| {
                        Some(if f != d || params.leaves[f][j].components[0].kind() == k {
                            0.0
                        } else {
                            f64::NEG_INFINITY
                        })
                    })
                    .expect("all leaves overridden")
                    .exp()
                })
                .collect()
        })
        .collect();
    let truth = GroundTruth {
        spn,
        params,
        stat_types: types,
        kind_weights,
        row_labels: g.row_labels,
        gamma_convention: "shape-rate".into(),
    };
    (data, truth)
}

/// Aggregates a kind-indexed weight vector into a statistical-type vector.
pub fn kinds_to_stat_types(kind_weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; StatType::ALL.len()];
    for (k, w) in LikelihoodKind::ALL.iter().zip(kind_weights) {
        out[stat_type_of(*k).index()] += w;
    }
    out
}

/// Type recovery of one feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEval {
    pub feature: usize,
    pub true_type: StatType,
    /// Kind holding the most mass under the generating model.
    pub true_kind: LikelihoodKind,
    pub inferred_type: StatType,
    pub inferred_kind: LikelihoodKind,
    /// Cosine similarity of the inferred and true statistical-type vectors.
    pub cosine: f64,
}

/// How well a fitted model recovers a synthetic ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthEval {
    pub features: Vec<FeatureEval>,
    pub test_loglik: f64,
    pub oracle_loglik: f64,
}

impl SynthEval {
    /// Mean test log-likelihood shortfall to the generating model, per feature.
    pub fn gap_per_feature(&self) -> f64 {
        (self.oracle_loglik - self.test_loglik) / self.features.len() as f64
    }

    pub fn mean_cosine(&self) -> f64 {
        self.features.iter().map(|f| f.cosine).sum::<f64>() / self.features.len() as f64
    }
}

pub fn evaluate(
    model: &Model,
    test: &Dataset,
    truth: &GroundTruth,
) -> Result<SynthEval, InferenceError> {
    let features = (0..model.num_features())
        .map(|d| {
            let tp = type_posterior(model, d)?;
            let true_kind = LikelihoodKind::ALL[argmax(&truth.kind_weights[d])];
            Ok(FeatureEval {
                feature: d,
                true_type: truth.stat_types[d],
                true_kind,
                inferred_type: tp.most_likely_stat_type(),
                inferred_kind: tp.most_likely_kind(),
                cosine: cosine_similarity(&tp.stat_type_vector(), &truth.stat_type_vector(d))?,
            })
        })
        .collect::<Result<_, InferenceError>>()?;
    Ok(SynthEval {
        features,
        test_loglik: mean_log_density(model, test)?,
        oracle_loglik: truth.mean_loglik(test),
    })
}

/// Counts of `(true, inferred)` statistical types, indexed by [`StatType::index`].
pub fn confusion_matrix(evals: &[SynthEval]) -> Vec<Vec<usize>> {
    let k = StatType::ALL.len();
    let mut m = vec![vec![0; k]; k];
    for f in evals.iter().flat_map(|e| &e.features) {
        m[f.true_type.index()][f.inferred_type.index()] += 1;
    }
    m
}

/// Correct and total most-likely-kind calls over features whose dominant
/// generating kind is `kind`.
pub fn kind_accuracy(evals: &[SynthEval], kind: LikelihoodKind) -> (usize, usize) {
    let fs: Vec<&FeatureEval> = evals
        .iter()
        .flat_map(|e| &e.features)
        .filter(|f| f.true_kind == kind)
        .collect();
    (
        fs.iter().filter(|f| f.inferred_kind == kind).count(),
        fs.len(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gen(rows: usize, seed: u64) -> (Dataset, GroundTruth) {
        generate(
            &SynthConfig {
                rows,
                ..Default::default()
            },
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (a, ta) = gen(500, 3);
        let (b, tb) = gen(500, 3);
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = gen(500, 4);
        assert_ne!(a, c);
    }

    #[test]
    fn types_supports_and_weights() {
        for seed in 0..5 {
            let (data, truth) = gen(1000, seed);
            assert_eq!(truth.stat_types.len(), 4);
            assert!(truth.spn.validate().is_valid());
            for d in 0..4 {
                let total: f64 = truth.kind_weights[d].iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
                let st = kinds_to_stat_types(&truth.kind_weights[d]);
                assert!((st[truth.stat_types[d].index()] - 1.0).abs() < 1e-9);
                for x in data.column_observed(d) {
                    match truth.stat_types[d] {
                        StatType::Pos => assert!(x > 0.0),
                        StatType::Num | StatType::Nom => assert!(x >= 0.0 && x.fract() == 0.0),
                        _ => assert!(x.is_finite()),
                    }
                }
            }
            assert!(truth.mean_loglik(&data).is_finite());
        }
    }

    #[test]
    fn poisson_feature_dispersion() {
        let mut checked = 0;
        for seed in 0..10 {
            let (data, truth) = gen(10_000, seed);
            for d in 0..4 {
                if truth.stat_types[d] != StatType::Num {
                    continue;
                }
                let xs = data.column_observed(d);
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
                assert!((0.8..=1.3).contains(&(v / m)), "{}", v / m);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }
}
