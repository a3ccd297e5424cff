//! Likelihood-agnostic structure learning.
//!
//! Rows are clustered and features split recursively on copula-transformed
//! data. Dependence between features is measured with the randomized
//! dependence coefficient (RDC). Missing cells are excluded from every
//! rank and correlation estimate; k-means places them at the median rank.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::math::derive_seed;
use crate::spn::{NodeId, Spn, SpnBuilder, SpnError};

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("column has no observed cells")]
    AllMissing,
    #[error("invalid structure configuration: {0}")]
    Config(String),
    #[error("dataset has no rows or no features")]
    EmptyData,
    #[error(transparent)]
    Spn(#[from] SpnError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureConfig {
    /// Features whose RDC reaches this value are treated as dependent.
    pub rdc_threshold: f64,
    /// Slices with fewer rows than this fraction of the data become leaves.
    pub min_instances_fraction: f64,
    pub rdc_features: usize,
    pub rdc_scale: f64,
    pub kmeans_restarts: usize,
    pub kmeans_iterations: usize,
    pub seed: u64,
}

impl Default for StructureConfig {
    fn default() -> Self {
        StructureConfig {
            rdc_threshold: 0.3,
            min_instances_fraction: 0.1,
            rdc_features: 20,
            rdc_scale: 1.0 / 6.0,
            kmeans_restarts: 10,
            kmeans_iterations: 100,
            seed: 0,
        }
    }
}

impl StructureConfig {
    pub fn check(&self) -> Result<(), StructureError> {
        if !(self.rdc_threshold > 0.0 && self.rdc_threshold < 1.0) {
            return Err(StructureError::Config(format!(
                "rdc_threshold {} not in (0, 1)",
                self.rdc_threshold
            )));
        }
        if !(self.min_instances_fraction > 0.0 && self.min_instances_fraction <= 1.0) {
            return Err(StructureError::Config(format!(
                "min_instances_fraction {} not in (0, 1]",
                self.min_instances_fraction
            )));
        }
        if self.rdc_features == 0 || self.rdc_scale <= 0.0 || self.kmeans_restarts == 0 {
            return Err(StructureError::Config(
                "rdc_features, rdc_scale and kmeans_restarts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Empirical CDF values `rank / n` of the observed cells, with ties given
/// their average rank. Missing cells get 0.5.
pub fn copula_transform(column: &[f64], observed: &[bool]) -> Result<Vec<f64>, StructureError> {
    let idx: Vec<usize> = (0..column.len()).filter(|&i| observed[i]).collect();
    if idx.is_empty() {
        return Err(StructureError::AllMissing);
    }
    let vals: Vec<f64> = idx.iter().map(|&i| column[i]).collect();
    let ranks = average_ranks(&vals);
    let n = vals.len() as f64;
    let mut out = vec![0.5; column.len()];
    for (k, &i) in idx.iter().enumerate() {
        out[i] = ranks[k] / n;
    }
    Ok(out)
}

/// One-based ranks with ties averaged.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Random sine-feature projection for one variable.
#[derive(Clone, Debug)]
struct SineFeatures {
    weights: Vec<f64>,
    offsets: Vec<f64>,
}

impl SineFeatures {
    fn draw<R: Rng + ?Sized>(k: usize, scale: f64, rng: &mut R) -> SineFeatures {
        // the copula value is augmented with a constant input and both
        // coordinates share the projection scale
        let s = scale / 2.0;
        let mut weights = Vec::with_capacity(k);
        let mut offsets = Vec::with_capacity(k);
        for _ in 0..k {
            let w: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            weights.push(s * w);
            offsets.push(s * b);
        }
        SineFeatures { weights, offsets }
    }

    /// Orthonormal basis of the centered feature block.
    fn basis(&self, u: &[f64]) -> DMatrix<f64> {
        let n = u.len();
        let k = self.weights.len();
        let mut m = DMatrix::from_fn(n, k, |i, j| {
            (u[i] * self.weights[j] + self.offsets[j]).sin()
        });
        for mut col in m.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        let svd = m.svd(true, false);
        let u_mat = svd.u.expect("left singular vectors");
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&j| smax > 0.0 && svd.singular_values[j] > RANK_TOLERANCE * smax)
            .collect();
        u_mat.select_columns(&keep)
    }
}

const RANK_TOLERANCE: f64 = 1e-10;

fn top_canonical_correlation(bx: &DMatrix<f64>, by: &DMatrix<f64>) -> f64 {
    if bx.ncols() == 0 || by.ncols() == 0 {
        return 0.0;
    }
    let c = bx.transpose() * by;
    let s = c.singular_values();
    s.max().clamp(0.0, 1.0)
}

/// Randomized dependence coefficient between two columns over their
/// jointly observed rows; 0 when fewer than `max(10, k)` such rows exist.
pub fn rdc<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    joint_observed: &[bool],
    config: &StructureConfig,
    rng: &mut R,
) -> f64 {
    let fa = SineFeatures::draw(config.rdc_features, config.rdc_scale, rng);
    let fb = SineFeatures::draw(config.rdc_features, config.rdc_scale, rng);
    rdc_with(a, b, joint_observed, &fa, &fb, config.rdc_features)
}

fn rdc_with(
    a: &[f64],
    b: &[f64],
    joint: &[bool],
    fa: &SineFeatures,
    fb: &SineFeatures,
    k: usize,
) -> f64 {
    let idx: Vec<usize> = (0..a.len()).filter(|&i| joint[i]).collect();
    if idx.len() < k.max(10) {
        return 0.0;
    }
    let xa: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
    let xb: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let n = idx.len() as f64;
    let ua: Vec<f64> = average_ranks(&xa).into_iter().map(|r| r / n).collect();
    let ub: Vec<f64> = average_ranks(&xb).into_iter().map(|r| r / n).collect();
    top_canonical_correlation(&fa.basis(&ua), &fb.basis(&ub))
}

/// Groups the slice's features into connected components of the graph
/// whose edges join pairs with RDC at or above the threshold.
pub fn split_columns<R: Rng + ?Sized>(
    data: &Dataset,
    rows: &[usize],
    features: &[usize],
    config: &StructureConfig,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let f = features.len();
    let cols: Vec<Vec<f64>> = features
        .iter()
        .map(|&d| rows.iter().map(|&i| data.row(i)[d]).collect())
        .collect();
    let obs: Vec<Vec<bool>> = features
        .iter()
        .map(|&d| rows.iter().map(|&i| data.is_observed(i, d)).collect())
        .collect();
    let proj: Vec<SineFeatures> = (0..f)
        .map(|_| SineFeatures::draw(config.rdc_features, config.rdc_scale, rng))
        .collect();

    // union-find over features
    let mut parent: Vec<usize> = (0..f).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for a in 0..f {
        for b in (a + 1)..f {
            if find(&mut parent, a) == find(&mut parent, b) {
                continue;
            }
            let joint: Vec<bool> = obs[a].iter().zip(&obs[b]).map(|(x, y)| *x && *y).collect();
            let r = rdc_with(
                &cols[a],
                &cols[b],
                &joint,
                &proj[a],
                &proj[b],
                config.rdc_features,
            );
            if r >= config.rdc_threshold {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_group: Vec<Option<usize>> = vec![None; f];
    for (a, &feature) in features.iter().enumerate().take(f) {
        let r = find(&mut parent, a);
        match root_group[r] {
            Some(g) => groups[g].push(feature),
            None => {
                root_group[r] = Some(groups.len());
                groups.push(vec![feature]);
            }
        }
    }
    groups
}

/// Two-way k-means on the slice's copula ranks (missing cells at 0.5).
/// Returns `None` when one of the clusters ends up empty.
pub fn cluster_rows<R: Rng + ?Sized>(
    data: &Dataset,
    rows: &[usize],
    features: &[usize],
    config: &StructureConfig,
    rng: &mut R,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let f = features.len();
    let mut points = vec![0.0; n * f];
    for (c, &d) in features.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|&i| data.row(i)[d]).collect();
        let obs: Vec<bool> = rows.iter().map(|&i| data.is_observed(i, d)).collect();
        let ranks = copula_transform(&col, &obs).unwrap_or_else(|_| vec![0.5; n]);
        for (r, v) in ranks.into_iter().enumerate() {
            points[r * f + c] = v;
        }
    }
    let labels = kmeans2(
        &points,
        f,
        config.kmeans_restarts,
        config.kmeans_iterations,
        rng,
    );
    let a: Vec<usize> = rows
        .iter()
        .zip(&labels)
        .filter(|(_, l)| **l == 0)
        .map(|(r, _)| *r)
        .collect();
    let b: Vec<usize> = rows
        .iter()
        .zip(&labels)
        .filter(|(_, l)| **l == 1)
        .map(|(r, _)| *r)
        .collect();
    if a.is_empty() || b.is_empty() {
        None
    } else {
        Some((a, b))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means with k = 2, k-means++ seeding, best inertia over restarts.
fn kmeans2<R: Rng + ?Sized>(
    points: &[f64],
    dim: usize,
    restarts: usize,
    iterations: usize,
    rng: &mut R,
) -> Vec<u8> {
    let n = points.len() / dim;
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut best: Option<(f64, Vec<u8>)> = None;
    for _ in 0..restarts {
        let first = rng.random_range(0..n);
        let mut centers = [pt(first).to_vec(), pt(first).to_vec()];
        let d2: Vec<f64> = (0..n).map(|i| sq_dist(pt(i), &centers[0])).collect();
        let total: f64 = d2.iter().sum();
        if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            centers[1] = pt(pick).to_vec();
        }
        let mut labels = vec![0u8; n];
        for it in 0..iterations {
            let mut changed = false;
            for (i, label) in labels.iter_mut().enumerate() {
                let l = u8::from(sq_dist(pt(i), &centers[1]) < sq_dist(pt(i), &centers[0]));
                changed |= l != *label;
                *label = l;
            }
            if it > 0 && !changed {
                break;
            }
            let mut sums = [vec![0.0; dim], vec![0.0; dim]];
            let mut counts = [0usize; 2];
            for (i, &l) in labels.iter().enumerate() {
                counts[l as usize] += 1;
                for (s, x) in sums[l as usize].iter_mut().zip(pt(i)) {
                    *s += x;
                }
            }
            for c in 0..2 {
                if counts[c] > 0 {
                    centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
        }
        let inertia: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| sq_dist(pt(i), &centers[l as usize]))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

/// A learned network with the initial sum weights (cluster proportions).
#[derive(Clone, Debug)]
pub struct LearnedStructure {
    pub spn: Spn,
    /// Linear-domain weights by sum weight index.
    pub sum_weights: Vec<Vec<f64>>,
}

/// Recursive LearnSPN-style structure learning over the whole dataset.
pub fn learn_structure(
    data: &Dataset,
    config: &StructureConfig,
) -> Result<LearnedStructure, StructureError> {
    config.check()?;
    let n = data.num_rows();
    let d = data.num_features();
    if n == 0 || d == 0 {
        return Err(StructureError::EmptyData);
    }
    let mut learner = Learner {
        data,
        config,
        builder: SpnBuilder::new(d),
        sum_weights: Vec::new(),
        min_rows: config.min_instances_fraction * n as f64,
    };
    let rows: Vec<usize> = (0..n).collect();
    let features: Vec<usize> = (0..d).collect();
    let root = learner.learn(&rows, &features, config.seed);
    let Learner {
        builder,
        sum_weights,
        ..
    } = learner;
    let spn = builder.build(root)?;
    Ok(LearnedStructure { spn, sum_weights })
}

struct Learner<'a> {
    data: &'a Dataset,
    config: &'a StructureConfig,
    builder: SpnBuilder,
    sum_weights: Vec<Vec<f64>>,
    min_rows: f64,
}

impl Learner<'_> {
    fn factorize(&mut self, features: &[usize]) -> NodeId {
        if features.len() == 1 {
            return self.builder.leaf(features[0]);
        }
        let leaves = features.iter().map(|&f| self.builder.leaf(f)).collect();
        self.builder.product(leaves)
    }

    fn learn(&mut self, rows: &[usize], features: &[usize], seed: u64) -> NodeId {
        if features.len() == 1 || (rows.len() as f64) < self.min_rows {
            return self.factorize(features);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = split_columns(self.data, rows, features, self.config, &mut rng);
        if groups.len() > 1 {
            let children = groups
                .iter()
                .enumerate()
                .map(|(b, g)| self.learn(rows, g, derive_seed(seed, b as u64)))
                .collect();
            return self.builder.product(children);
        }
        match cluster_rows(self.data, rows, features, self.config, &mut rng) {
            Some((a, b)) => {
                let left = self.learn(&a, features, derive_seed(seed, 0));
                let right = self.learn(&b, features, derive_seed(seed, 1));
                let total = rows.len() as f64;
                let node = self.builder.sum(vec![left, right]);
                self.sum_weights
                    .push(vec![a.len() as f64 / total, b.len() as f64 / total]);
                node
            }
            None => self.factorize(features),
        }
    }
}
