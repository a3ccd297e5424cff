//! Parametric likelihood models, their conjugate priors and the per-feature
//! dictionaries that leaves mix over.
//!
//! Every model exposes exact log-density, CDF, interval mass, quantiles, a
//! mode, and forward sampling. Evaluation outside the support returns
//! `-inf` so that mixtures over heterogeneous supports remain well defined.

use rand::Rng;
use rand_distr::{
    Bernoulli as BernoulliDist, Distribution, Geometric as GeometricDist, Normal,
    Poisson as PoissonDist, StandardUniform,
};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};
use thiserror::Error;

use crate::math::{sample_gamma, sample_log_dirichlet};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("value {value} outside the support of {kind:?}")]
    InvalidData { kind: LikelihoodKind, value: f64 },
    #[error("invalid interval [{lo}, {hi})")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("column has no observed cells")]
    EmptyColumn,
    #[error("discrete column with negative value {0} has no valid dictionary")]
    NegativeDiscrete(f64),
    #[error("prior does not match likelihood kind {0:?}")]
    PriorMismatch(LikelihoodKind),
}

/// Coarse per-feature label supplied with the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetaType {
    Continuous,
    Discrete,
}

/// Statistical data type a likelihood model stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StatType {
    Real,
    Pos,
    Num,
    Nom,
    Bin,
}

impl StatType {
    pub const ALL: [StatType; 5] = [
        StatType::Real,
        StatType::Pos,
        StatType::Num,
        StatType::Nom,
        StatType::Bin,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            StatType::Real => "REAL",
            StatType::Pos => "POS",
            StatType::Num => "NUM",
            StatType::Nom => "NOM",
            StatType::Bin => "BIN",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LikelihoodKind {
    Gaussian,
    Gamma,
    Exponential,
    Categorical,
    Poisson,
    Geometric,
    Bernoulli,
}

impl LikelihoodKind {
    pub const ALL: [LikelihoodKind; 7] = [
        LikelihoodKind::Gaussian,
        LikelihoodKind::Gamma,
        LikelihoodKind::Exponential,
        LikelihoodKind::Categorical,
        LikelihoodKind::Poisson,
        LikelihoodKind::Geometric,
        LikelihoodKind::Bernoulli,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_discrete(self) -> bool {
        matches!(
            self,
            LikelihoodKind::Categorical
                | LikelihoodKind::Poisson
                | LikelihoodKind::Geometric
                | LikelihoodKind::Bernoulli
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            LikelihoodKind::Gaussian => "Gaussian",
            LikelihoodKind::Gamma => "Gamma",
            LikelihoodKind::Exponential => "Exponential",
            LikelihoodKind::Categorical => "Categorical",
            LikelihoodKind::Poisson => "Poisson",
            LikelihoodKind::Geometric => "Geometric",
            LikelihoodKind::Bernoulli => "Bernoulli",
        }
    }
}

/// Maps a likelihood family to the statistical type it models.
pub fn stat_type_of(kind: LikelihoodKind) -> StatType {
    match kind {
        LikelihoodKind::Gaussian => StatType::Real,
        LikelihoodKind::Gamma | LikelihoodKind::Exponential => StatType::Pos,
        LikelihoodKind::Poisson | LikelihoodKind::Geometric => StatType::Num,
        LikelihoodKind::Categorical => StatType::Nom,
        LikelihoodKind::Bernoulli => StatType::Bin,
    }
}

/// A likelihood model with concrete parameters.
///
/// `Gamma` uses shape/rate. `Geometric` has support `{1, 2, ...}` in model
/// coordinates; `shift` is added to a data value before evaluation so that
/// columns containing zero can be modeled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Likelihood {
    Gaussian { mean: f64, var: f64 },
    Gamma { shape: f64, rate: f64 },
    Exponential { rate: f64 },
    Categorical { probs: Vec<f64> },
    Poisson { rate: f64 },
    Geometric { p: f64, shift: f64 },
    Bernoulli { p: f64 },
}

fn is_integer(x: f64) -> bool {
    x.is_finite() && x.fract() == 0.0
}

fn ln_factorial(k: f64) -> f64 {
    ln_gamma(k + 1.0)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

impl Likelihood {
    pub fn kind(&self) -> LikelihoodKind {
        match self {
            Likelihood::Gaussian { .. } => LikelihoodKind::Gaussian,
            Likelihood::Gamma { .. } => LikelihoodKind::Gamma,
            Likelihood::Exponential { .. } => LikelihoodKind::Exponential,
            Likelihood::Categorical { .. } => LikelihoodKind::Categorical,
            Likelihood::Poisson { .. } => LikelihoodKind::Poisson,
            Likelihood::Geometric { .. } => LikelihoodKind::Geometric,
            Likelihood::Bernoulli { .. } => LikelihoodKind::Bernoulli,
        }
    }

    /// Checks the parameter invariants (positivity, simplex).
    pub fn is_valid(&self) -> bool {
        match self {
            Likelihood::Gaussian { mean, var } => mean.is_finite() && *var > 0.0 && var.is_finite(),
            Likelihood::Gamma { shape, rate } => *shape > 0.0 && *rate > 0.0 && rate.is_finite(),
            Likelihood::Exponential { rate } | Likelihood::Poisson { rate } => {
                *rate > 0.0 && rate.is_finite()
            }
            Likelihood::Categorical { probs } => {
                !probs.is_empty()
                    && probs.iter().all(|p| (0.0..=1.0).contains(p))
                    && (probs.iter().sum::<f64>() - 1.0).abs() < 1e-9
            }
            Likelihood::Geometric { p, .. } | Likelihood::Bernoulli { p } => *p > 0.0 && *p < 1.0,
        }
    }

    /// Exact log density (continuous) or log mass (discrete).
    pub fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            Likelihood::Gaussian { mean, var } => {
                let d = x - mean;
                -0.5 * (LN_2PI + var.ln() + d * d / var)
            }
            Likelihood::Gamma { shape, rate } => {
                if x <= 0.0 || !x.is_finite() {
                    return f64::NEG_INFINITY;
                }
                shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
            }
            Likelihood::Exponential { rate } => {
                if x < 0.0 || !x.is_finite() {
                    return f64::NEG_INFINITY;
                }
                rate.ln() - rate * x
            }
            Likelihood::Categorical { ref probs } => {
                if !is_integer(x) || x < 0.0 || x as usize >= probs.len() {
                    return f64::NEG_INFINITY;
                }
                probs[x as usize].ln()
            }
            Likelihood::Poisson { rate } => {
                if !is_integer(x) || x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                x * rate.ln() - rate - ln_factorial(x)
            }
            Likelihood::Geometric { p, shift } => {
                let k = x + shift;
                if !is_integer(k) || k < 1.0 {
                    return f64::NEG_INFINITY;
                }
                p.ln() + (k - 1.0) * (-p).ln_1p()
            }
            Likelihood::Bernoulli { p } => {
                if x == 1.0 {
                    p.ln()
                } else if x == 0.0 {
                    (-p).ln_1p()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// `P(X <= x)` in data coordinates.
    pub fn cdf(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 1.0;
        }
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        match *self {
            Likelihood::Gaussian { mean, var } => normal_cdf((x - mean) / var.sqrt()),
            Likelihood::Gamma { shape, rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_lr(shape, rate * x)
                }
            }
            Likelihood::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Likelihood::Categorical { ref probs } => {
                if x < 0.0 {
                    return 0.0;
                }
                let k = (x.floor() as usize).min(probs.len() - 1);
                probs[..=k].iter().sum::<f64>().min(1.0)
            }
            Likelihood::Poisson { rate } => {
                if x < 0.0 {
                    0.0
                } else {
                    gamma_ur(x.floor() + 1.0, rate)
                }
            }
            Likelihood::Geometric { p, shift } => {
                let k = (x + shift).floor();
                if k < 1.0 {
                    0.0
                } else {
                    -(k * (-p).ln_1p()).exp_m1()
                }
            }
            Likelihood::Bernoulli { p } => {
                if x < 0.0 {
                    0.0
                } else if x < 1.0 {
                    1.0 - p
                } else {
                    1.0
                }
            }
        }
    }

    /// `P(X > x)`, computed directly where cancellation would hurt.
    pub fn survival(&self, x: f64) -> f64 {
        match *self {
            Likelihood::Gaussian { mean, var } => normal_cdf(-(x - mean) / var.sqrt()),
            Likelihood::Gamma { shape, rate } if x > 0.0 && x.is_finite() => {
                gamma_ur(shape, rate * x)
            }
            Likelihood::Exponential { rate } if x > 0.0 && x.is_finite() => (-rate * x).exp(),
            _ => 1.0 - self.cdf(x),
        }
    }

    /// `ln P(lo <= X < hi)`.
    ///
    /// Continuous kinds require `lo < hi`; discrete kinds accept `lo <= hi`
    /// and count the integers in `[lo, hi)`. Bounds may be infinite.
    pub fn interval_log_mass(&self, lo: f64, hi: f64) -> Result<f64, LikelihoodError> {
        if lo.is_nan() || hi.is_nan() {
            return Err(LikelihoodError::InvalidInterval { lo, hi });
        }
        let discrete = self.kind().is_discrete();
        if (discrete && lo > hi) || (!discrete && lo >= hi) {
            return Err(LikelihoodError::InvalidInterval { lo, hi });
        }
        let mass = if discrete {
            let lo_int = lo.ceil();
            let hi_int = hi.ceil();
            if lo_int >= hi_int {
                return Ok(f64::NEG_INFINITY);
            }
            // integers k with lo_int <= k <= hi_int - 1
            self.cdf(hi_int - 1.0) - self.cdf(lo_int - 1.0)
        } else {
            let lower = self.cdf(lo);
            if lower > 0.5 {
                self.survival(lo) - self.survival(hi)
            } else {
                self.cdf(hi) - lower
            }
        };
        Ok(if mass > 0.0 {
            mass.min(1.0).ln()
        } else {
            f64::NEG_INFINITY
        })
    }

    /// Smallest `x` with `cdf(x) >= p`, for `p` in `(0, 1)`.
    pub fn quantile(&self, p: f64) -> f64 {
        debug_assert!(p > 0.0 && p < 1.0);
        match *self {
            Likelihood::Exponential { rate } => -(-p).ln_1p() / rate,
            Likelihood::Gaussian { mean, var } => {
                let sd = var.sqrt();
                bisect_cdf(self, p, mean - 40.0 * sd, mean + 40.0 * sd)
            }
            Likelihood::Gamma { shape, rate } => {
                let mean = shape / rate;
                let mut hi = mean + 10.0 * shape.sqrt() / rate;
                while self.cdf(hi) < p {
                    hi *= 2.0;
                }
                bisect_cdf(self, p, 0.0, hi)
            }
            Likelihood::Categorical { ref probs } => {
                let mut acc = 0.0;
                for (k, &pk) in probs.iter().enumerate() {
                    acc += pk;
                    if acc >= p {
                        return k as f64;
                    }
                }
                (probs.len() - 1) as f64
            }
            Likelihood::Poisson { .. } => {
                let mut k = 0.0;
                while self.cdf(k) < p {
                    k += 1.0;
                }
                k
            }
            Likelihood::Geometric { p: theta, shift } => {
                // smallest k >= 1 with 1 - (1 - theta)^k >= p
                let guess = ((-p).ln_1p() / (-theta).ln_1p()).ceil().max(1.0);
                let mut k = (guess - 1.0).max(1.0);
                while -(k * (-theta).ln_1p()).exp_m1() < p {
                    k += 1.0;
                }
                k - shift
            }
            Likelihood::Bernoulli { p: theta } => {
                if 1.0 - theta >= p {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Mode of the model and the log density attained there.
    ///
    /// Gamma with shape `<= 1` has its supremum at zero; the value reported
    /// is zero and the density is taken at a thousandth of the mean.
    pub fn mode(&self) -> (f64, f64) {
        let x = match *self {
            Likelihood::Gaussian { mean, .. } => mean,
            Likelihood::Gamma { shape, rate } => {
                if shape > 1.0 {
                    (shape - 1.0) / rate
                } else {
                    let probe = 1e-3 * shape / rate;
                    return (0.0, self.log_pdf(probe));
                }
            }
            Likelihood::Exponential { .. } => 0.0,
            Likelihood::Categorical { ref probs } => crate::math::argmax(probs) as f64,
            Likelihood::Poisson { rate } => rate.floor(),
            Likelihood::Geometric { shift, .. } => 1.0 - shift,
            Likelihood::Bernoulli { p } => {
                if p > 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        (x, self.log_pdf(x))
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Likelihood::Gaussian { mean, .. } => mean,
            Likelihood::Gamma { shape, rate } => shape / rate,
            Likelihood::Exponential { rate } => 1.0 / rate,
            Likelihood::Categorical { ref probs } => {
                probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
            }
            Likelihood::Poisson { rate } => rate,
            Likelihood::Geometric { p, shift } => 1.0 / p - shift,
            Likelihood::Bernoulli { p } => p,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Likelihood::Gaussian { mean, var } => Normal::new(mean, var.sqrt())
                .expect("valid normal")
                .sample(rng),
            Likelihood::Gamma { shape, rate } => sample_gamma(shape, rate, rng),
            Likelihood::Exponential { rate } => sample_gamma(1.0, rate, rng),
            Likelihood::Categorical { ref probs } => {
                let u: f64 = rng.sample(StandardUniform);
                let mut acc = 0.0;
                for (k, &p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return k as f64;
                    }
                }
                (probs.len() - 1) as f64
            }
            Likelihood::Poisson { rate } => {
                PoissonDist::new(rate).expect("valid poisson").sample(rng)
            }
            Likelihood::Geometric { p, shift } => {
                // rand_distr counts failures before the first success
                let failures = GeometricDist::new(p).expect("valid geometric").sample(rng) as f64;
                failures + 1.0 - shift
            }
            Likelihood::Bernoulli { p } => {
                if BernoulliDist::new(p).expect("valid bernoulli").sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn bisect_cdf(model: &Likelihood, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if model.cdf(mid) >= p {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
    }
    hi
}

/// Conjugate prior hyper-parameters. Gamma priors are shape/rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Prior {
    /// `mu | s2 ~ N(m0, s2 * v0)`, `s2 ~ InvGamma(a0, b0)`.
    NormalInverseGamma {
        m0: f64,
        v0: f64,
        a0: f64,
        b0: f64,
    },
    Gamma {
        shape: f64,
        rate: f64,
    },
    Dirichlet {
        alpha: Vec<f64>,
    },
    Beta {
        a: f64,
        b: f64,
    },
}

/// One entry of a feature's likelihood dictionary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub kind: LikelihoodKind,
    pub prior: Prior,
    /// Added to data values before Geometric evaluation.
    #[serde(default)]
    pub shift: f64,
}

impl ComponentSpec {
    pub fn new(kind: LikelihoodKind, prior: Prior) -> Self {
        ComponentSpec {
            kind,
            prior,
            shift: 0.0,
        }
    }

    pub fn categories(&self) -> Option<usize> {
        match &self.prior {
            Prior::Dirichlet { alpha } => Some(alpha.len()),
            _ => None,
        }
    }

    /// Whether `x` lies in this component's support.
    pub fn in_support(&self, x: f64) -> bool {
        match self.kind {
            LikelihoodKind::Gaussian => x.is_finite(),
            LikelihoodKind::Gamma => x > 0.0 && x.is_finite(),
            LikelihoodKind::Exponential => x >= 0.0 && x.is_finite(),
            LikelihoodKind::Categorical => {
                is_integer(x) && x >= 0.0 && (x as usize) < self.categories().unwrap_or(0)
            }
            LikelihoodKind::Poisson => is_integer(x) && x >= 0.0,
            LikelihoodKind::Geometric => is_integer(x + self.shift) && x + self.shift >= 1.0,
            LikelihoodKind::Bernoulli => x == 0.0 || x == 1.0,
        }
    }

    /// Draws parameters from the conjugate posterior given `data`.
    ///
    /// `gamma_shape` is the fixed shape used by the Gamma kind and ignored
    /// otherwise. Empty data samples from the prior.
    pub fn posterior_sample<R: Rng + ?Sized>(
        &self,
        gamma_shape: f64,
        data: &[f64],
        rng: &mut R,
    ) -> Result<Likelihood, LikelihoodError> {
        let mut stats = SuffStats::default();
        for &x in data {
            if !self.in_support(x) {
                return Err(LikelihoodError::InvalidData {
                    kind: self.kind,
                    value: x,
                });
            }
            stats.push(x);
        }
        let post = Posterior::from_prior(self)?.updated(self, gamma_shape, &stats);
        Ok(post.sample(self, gamma_shape, rng))
    }

    /// Log marginal likelihood of `data` with the parameters integrated out
    /// against the conjugate prior.
    pub fn log_evidence(&self, gamma_shape: f64, data: &[f64]) -> Result<f64, LikelihoodError> {
        let prior = Posterior::from_prior(self)?;
        let mut stats = SuffStats::default();
        let mut base = 0.0;
        for &x in data {
            if !self.in_support(x) {
                return Err(LikelihoodError::InvalidData {
                    kind: self.kind,
                    value: x,
                });
            }
            stats.push(x);
            base += match self.kind {
                LikelihoodKind::Gaussian => -0.5 * LN_2PI,
                LikelihoodKind::Gamma => (gamma_shape - 1.0) * x.ln() - ln_gamma(gamma_shape),
                LikelihoodKind::Poisson => -ln_gamma(x + 1.0),
                _ => 0.0,
            };
        }
        let post = prior.clone().updated(self, gamma_shape, &stats);
        Ok(base + post.log_normalizer() - prior.log_normalizer())
    }
}

/// Additive sufficient statistics of a data slice.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuffStats {
    pub n: f64,
    pub sum: f64,
    pub sum_sq: f64,
    /// Per-category counts; grown on demand.
    pub counts: Vec<f64>,
}

impl SuffStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum_sq += x * x;
        if x >= 0.0 && is_integer(x) && x < 4096.0 {
            let k = x as usize;
            if self.counts.len() <= k {
                self.counts.resize(k + 1, 0.0);
            }
            self.counts[k] += 1.0;
        }
    }

    pub fn merge(&mut self, other: &SuffStats) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        if self.counts.len() < other.counts.len() {
            self.counts.resize(other.counts.len(), 0.0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Subtracts statistics previously merged in.
    pub fn remove(&mut self, other: &SuffStats) {
        self.n -= other.n;
        self.sum -= other.sum;
        self.sum_sq -= other.sum_sq;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a -= b;
        }
    }

    pub fn clear(&mut self) {
        self.n = 0.0;
        self.sum = 0.0;
        self.sum_sq = 0.0;
        self.counts.iter_mut().for_each(|c| *c = 0.0);
    }

    pub fn of(data: &[f64]) -> SuffStats {
        let mut s = SuffStats::default();
        data.iter().for_each(|&x| s.push(x));
        s
    }
}

/// Posterior hyper-parameters in additive coordinates.
///
/// The Normal-Inverse-Gamma is kept in natural form (precision,
/// precision-weighted mean, shape, and `b + precision * m^2 / 2`) so that
/// every update is a plain sum of sufficient statistics and batch updates
/// coincide with sequential ones.
#[derive(Clone, Debug, PartialEq)]
pub enum Posterior {
    NormalInverseGamma {
        precision: f64,
        precision_mean: f64,
        a: f64,
        b_aux: f64,
    },
    Gamma {
        shape: f64,
        rate: f64,
    },
    Dirichlet {
        alpha: Vec<f64>,
    },
    Beta {
        a: f64,
        b: f64,
    },
}

impl Posterior {
    pub fn from_prior(spec: &ComponentSpec) -> Result<Posterior, LikelihoodError> {
        use LikelihoodKind as K;
        let mismatch = || LikelihoodError::PriorMismatch(spec.kind);
        Ok(match (&spec.prior, spec.kind) {
            (&Prior::NormalInverseGamma { m0, v0, a0, b0 }, K::Gaussian) => {
                let precision = 1.0 / v0;
                Posterior::NormalInverseGamma {
                    precision,
                    precision_mean: precision * m0,
                    a: a0,
                    b_aux: b0 + 0.5 * precision * m0 * m0,
                }
            }
            (&Prior::Gamma { shape, rate }, K::Gamma | K::Exponential | K::Poisson) => {
                Posterior::Gamma { shape, rate }
            }
            (Prior::Dirichlet { alpha }, K::Categorical) => Posterior::Dirichlet {
                alpha: alpha.clone(),
            },
            (&Prior::Beta { a, b }, K::Geometric | K::Bernoulli) => Posterior::Beta { a, b },
            _ => return Err(mismatch()),
        })
    }

    /// Adds the sufficient statistics of a data slice.
    pub fn update(&mut self, spec: &ComponentSpec, gamma_shape: f64, s: &SuffStats) {
        use LikelihoodKind as K;
        match (self, spec.kind) {
            (
                Posterior::NormalInverseGamma {
                    precision,
                    precision_mean,
                    a,
                    b_aux,
                },
                _,
            ) => {
                *precision += s.n;
                *precision_mean += s.sum;
                *a += 0.5 * s.n;
                *b_aux += 0.5 * s.sum_sq;
            }
            (Posterior::Gamma { shape, rate }, K::Gamma) => {
                *shape += s.n * gamma_shape;
                *rate += s.sum;
            }
            (Posterior::Gamma { shape, rate }, K::Exponential) => {
                *shape += s.n;
                *rate += s.sum;
            }
            (Posterior::Gamma { shape, rate }, _) => {
                // Poisson
                *shape += s.sum;
                *rate += s.n;
            }
            (Posterior::Dirichlet { alpha }, _) => {
                for (a, c) in alpha.iter_mut().zip(&s.counts) {
                    *a += c;
                }
            }
            (Posterior::Beta { a, b }, K::Geometric) => {
                // data x maps to k = x + shift >= 1
                let sum_k = s.sum + spec.shift * s.n;
                *a += s.n;
                *b += sum_k - s.n;
            }
            (Posterior::Beta { a, b }, _) => {
                // Bernoulli
                *a += s.sum;
                *b += s.n - s.sum;
            }
        }
    }

    pub fn updated(mut self, spec: &ComponentSpec, gamma_shape: f64, s: &SuffStats) -> Posterior {
        self.update(spec, gamma_shape, s);
        self
    }

    /// Log of the normalizing integral of the conjugate kernel.
    pub fn log_normalizer(&self) -> f64 {
        match self {
            Posterior::NormalInverseGamma { .. } => {
                let (_, v, a, b) = self.nig_standard().expect("nig");
                0.5 * v.ln() + ln_gamma(a) - a * b.ln()
            }
            &Posterior::Gamma { shape, rate } => ln_gamma(shape) - shape * rate.ln(),
            Posterior::Dirichlet { alpha } => {
                alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(alpha.iter().sum())
            }
            &Posterior::Beta { a, b } => ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b),
        }
    }

    /// Standard-form NIG `(m, v, a, b)`; `None` for other families.
    pub fn nig_standard(&self) -> Option<(f64, f64, f64, f64)> {
        match *self {
            Posterior::NormalInverseGamma {
                precision,
                precision_mean,
                a,
                b_aux,
            } => {
                let m = precision_mean / precision;
                let b = b_aux - 0.5 * precision_mean * m;
                Some((m, 1.0 / precision, a, b))
            }
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        spec: &ComponentSpec,
        gamma_shape: f64,
        rng: &mut R,
    ) -> Likelihood {
        const TINY: f64 = 1e-300;
        match self {
            Posterior::NormalInverseGamma { .. } => {
                let (m, v, a, b) = self.nig_standard().expect("nig");
                let b = b.max(TINY);
                let var = 1.0 / sample_gamma(a, b, rng).max(TINY);
                let mean = Normal::new(m, (var * v).sqrt())
                    .expect("valid normal")
                    .sample(rng);
                Likelihood::Gaussian {
                    mean,
                    var: var.max(TINY),
                }
            }
            &Posterior::Gamma { shape, rate } => {
                let draw = sample_gamma(shape, rate, rng).max(TINY);
                match spec.kind {
                    LikelihoodKind::Gamma => Likelihood::Gamma {
                        shape: gamma_shape,
                        rate: draw,
                    },
                    LikelihoodKind::Exponential => Likelihood::Exponential { rate: draw },
                    _ => Likelihood::Poisson { rate: draw },
                }
            }
            Posterior::Dirichlet { alpha } => {
                let probs = sample_log_dirichlet(alpha, rng)
                    .into_iter()
                    .map(f64::exp)
                    .collect();
                Likelihood::Categorical { probs }
            }
            &Posterior::Beta { a, b } => {
                let ga = crate::math::sample_log_gamma(a, rng);
                let gb = crate::math::sample_log_gamma(b, rng);
                // Beta draw via two gammas in log space, clamped to the open interval
                let p = 1.0 / (1.0 + (gb - ga).exp());
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                match spec.kind {
                    LikelihoodKind::Geometric => Likelihood::Geometric {
                        p,
                        shift: spec.shift,
                    },
                    _ => Likelihood::Bernoulli { p },
                }
            }
        }
    }

    /// Posterior mean of the sampled parameter(s), used by moment checks.
    pub fn mean_params(&self) -> Vec<f64> {
        match self {
            Posterior::NormalInverseGamma { .. } => {
                let (m, _, a, b) = self.nig_standard().expect("nig");
                vec![m, b / (a - 1.0)]
            }
            Posterior::Gamma { shape, rate } => vec![shape / rate],
            Posterior::Dirichlet { alpha } => {
                let t: f64 = alpha.iter().sum();
                alpha.iter().map(|a| a / t).collect()
            }
            Posterior::Beta { a, b } => vec![a / (a + b)],
        }
    }
}

/// Summary statistics over the observed cells of one column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub variance: f64,
    pub cardinality: usize,
}

impl FeatureStats {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> FeatureStats {
        let mut v: Vec<f64> = values.into_iter().collect();
        let count = v.len();
        if count == 0 {
            return FeatureStats {
                count: 0,
                min: f64::NAN,
                max: f64::NAN,
                mean: f64::NAN,
                variance: f64::NAN,
                cardinality: 0,
            };
        }
        let mean = v.iter().sum::<f64>() / count as f64;
        let variance = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / count as f64;
        v.sort_by(|a, b| a.total_cmp(b));
        let min = v[0];
        let max = v[count - 1];
        v.dedup();
        FeatureStats {
            count,
            min,
            max,
            mean,
            variance,
            cardinality: v.len(),
        }
    }
}

/// Inference priors used by the default dictionaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub nig_v0: f64,
    pub nig_a0: f64,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    pub dirichlet: f64,
    pub beta_a: f64,
    pub beta_b: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            nig_v0: 10.0,
            nig_a0: 2.0,
            gamma_shape: 1.0,
            gamma_rate: 1.0,
            dirichlet: 1.0,
            beta_a: 1.0,
            beta_b: 1.0,
        }
    }
}

/// Builds the likelihood dictionary for a feature from its meta-type and
/// the statistics of its observed cells.
pub fn default_dictionary(
    meta: MetaType,
    stats: &FeatureStats,
) -> Result<Vec<ComponentSpec>, LikelihoodError> {
    default_dictionary_with(meta, stats, &PriorConfig::default())
}

pub fn default_dictionary_with(
    meta: MetaType,
    stats: &FeatureStats,
    priors: &PriorConfig,
) -> Result<Vec<ComponentSpec>, LikelihoodError> {
    if stats.count == 0 {
        return Err(LikelihoodError::EmptyColumn);
    }
    let gamma_prior = || Prior::Gamma {
        shape: priors.gamma_shape,
        rate: priors.gamma_rate,
    };
    let beta_prior = || Prior::Beta {
        a: priors.beta_a,
        b: priors.beta_b,
    };
    match meta {
        MetaType::Continuous => {
            let b0 = if stats.variance > 0.0 {
                stats.variance
            } else {
                1.0
            };
            let mut dict = vec![ComponentSpec::new(
                LikelihoodKind::Gaussian,
                Prior::NormalInverseGamma {
                    m0: stats.mean,
                    v0: priors.nig_v0,
                    a0: priors.nig_a0,
                    b0,
                },
            )];
            if stats.min > 0.0 {
                dict.push(ComponentSpec::new(LikelihoodKind::Gamma, gamma_prior()));
                dict.push(ComponentSpec::new(
                    LikelihoodKind::Exponential,
                    gamma_prior(),
                ));
            }
            Ok(dict)
        }
        MetaType::Discrete => {
            if stats.min < 0.0 {
                return Err(LikelihoodError::NegativeDiscrete(stats.min));
            }
            if stats.max <= 1.0 {
                return Ok(vec![ComponentSpec::new(
                    LikelihoodKind::Bernoulli,
                    beta_prior(),
                )]);
            }
            let k = stats.max as usize + 1;
            let mut geometric = ComponentSpec::new(LikelihoodKind::Geometric, beta_prior());
            if stats.min < 1.0 {
                geometric.shift = 1.0;
            }
            Ok(vec![
                ComponentSpec::new(LikelihoodKind::Poisson, gamma_prior()),
                geometric,
                ComponentSpec::new(
                    LikelihoodKind::Categorical,
                    Prior::Dirichlet {
                        alpha: vec![priors.dirichlet; k],
                    },
                ),
            ])
        }
    }
}

/// Method-of-moments Gamma shape `mean^2 / variance`, clamped to
/// `[0.1, 100]`; 2 when fewer than two points are available.
pub fn gamma_shape_mom(data: &[f64]) -> f64 {
    if data.len() < 2 {
        return 2.0;
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return 100.0;
    }
    (mean * mean / var).clamp(0.1, 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn log_pdf_reference_values() {
        let g = Likelihood::Gaussian {
            mean: 0.0,
            var: 1.0,
        };
        assert!(close(g.log_pdf(0.0), -0.918_938_533_204_672_7, 1e-12));
        let p = Likelihood::Poisson { rate: 1.0 };
        assert!(close(p.log_pdf(0.0), -1.0, 1e-15));
        let gam = Likelihood::Gamma {
            shape: 2.0,
            rate: 1.0,
        };
        // 2 e^-2 at x = 2
        assert!(close(gam.log_pdf(2.0), 2f64.ln() - 2.0, 1e-12));
    }

    #[test]
    fn log_pdf_outside_support_is_neg_inf_never_nan() {
        let models = [
            Likelihood::Gamma {
                shape: 2.0,
                rate: 1.0,
            },
            Likelihood::Exponential { rate: 1.0 },
            Likelihood::Poisson { rate: 2.0 },
            Likelihood::Geometric { p: 0.3, shift: 0.0 },
            Likelihood::Categorical {
                probs: vec![0.5, 0.5],
            },
            Likelihood::Bernoulli { p: 0.5 },
        ];
        for m in &models {
            for x in [-1.0, 0.5, -0.0001, 7.5] {
                let v = m.log_pdf(x);
                assert!(!v.is_nan(), "{m:?} at {x}");
            }
            assert_eq!(m.log_pdf(-3.0), f64::NEG_INFINITY, "{m:?}");
        }
        assert_eq!(
            Likelihood::Poisson { rate: 2.0 }.log_pdf(1.5),
            f64::NEG_INFINITY
        );
        assert_eq!(
            Likelihood::Gamma {
                shape: 2.0,
                rate: 1.0
            }
            .log_pdf(0.0),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn interval_mass_examples() {
        let g = Likelihood::Gaussian {
            mean: 0.0,
            var: 1.0,
        };
        assert!(close(
            g.interval_log_mass(f64::NEG_INFINITY, f64::INFINITY)
                .unwrap(),
            0.0,
            1e-15
        ));
        let e = Likelihood::Exponential { rate: 1.0 };
        assert!(close(
            e.interval_log_mass(0.0, 2f64.ln()).unwrap(),
            0.5f64.ln(),
            1e-12
        ));
        let c = Likelihood::Categorical {
            probs: vec![0.2, 0.3, 0.5],
        };
        assert!(close(
            c.interval_log_mass(0.0, 2.0).unwrap(),
            0.5f64.ln(),
            1e-12
        ));
        assert!(matches!(
            g.interval_log_mass(1.0, 1.0),
            Err(LikelihoodError::InvalidInterval { .. })
        ));
        assert!(matches!(
            c.interval_log_mass(2.0, 1.0),
            Err(LikelihoodError::InvalidInterval { .. })
        ));
        assert_eq!(c.interval_log_mass(1.0, 1.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn quantile_examples() {
        let g = Likelihood::Gaussian {
            mean: 0.0,
            var: 1.0,
        };
        assert!(close(g.quantile(0.5), 0.0, 1e-8));
        let e = Likelihood::Exponential { rate: 2.0 };
        assert!(close(e.quantile(1.0 - (-1f64).exp()), 0.5, 1e-12));
        let geo = Likelihood::Geometric { p: 0.5, shift: 0.0 };
        assert_eq!(geo.quantile(0.5), 1.0);
        assert_eq!(geo.quantile(0.75), 2.0);
        assert_eq!(geo.quantile(0.7501), 3.0);
    }

    #[test]
    fn quantile_inverts_cdf_on_continuous_kinds() {
        let models = [
            Likelihood::Gaussian {
                mean: 3.0,
                var: 4.0,
            },
            Likelihood::Gamma {
                shape: 7.5,
                rate: 2.0,
            },
            Likelihood::Gamma {
                shape: 0.5,
                rate: 1.0,
            },
            Likelihood::Exponential { rate: 0.3 },
        ];
        for m in &models {
            for i in 1..100 {
                let p = i as f64 / 100.0;
                let q = m.quantile(p);
                assert!(close(m.cdf(q), p, 1e-6), "{m:?} p={p}");
            }
        }
    }

    #[test]
    fn discrete_quantile_is_smallest_reaching_value() {
        let models = [
            Likelihood::Poisson { rate: 4.2 },
            Likelihood::Geometric { p: 0.2, shift: 1.0 },
            Likelihood::Categorical {
                probs: vec![0.1, 0.6, 0.3],
            },
            Likelihood::Bernoulli { p: 0.3 },
        ];
        for m in &models {
            for i in 1..50 {
                let p = i as f64 / 50.0;
                let q = m.quantile(p);
                assert!(m.cdf(q) >= p - 1e-12);
                assert!(m.cdf(q - 1.0) < p);
            }
        }
    }

    #[test]
    fn stat_types() {
        assert_eq!(stat_type_of(LikelihoodKind::Gaussian), StatType::Real);
        assert_eq!(stat_type_of(LikelihoodKind::Exponential), StatType::Pos);
        assert_eq!(stat_type_of(LikelihoodKind::Categorical), StatType::Nom);
        assert_eq!(stat_type_of(LikelihoodKind::Geometric), StatType::Num);
        assert_eq!(stat_type_of(LikelihoodKind::Bernoulli), StatType::Bin);
    }

    #[test]
    fn default_dictionaries() {
        let kinds = |d: Vec<ComponentSpec>| d.into_iter().map(|c| c.kind).collect::<Vec<_>>();
        let neg = FeatureStats::from_values([-1.0, 2.0, 3.0]);
        assert_eq!(
            kinds(default_dictionary(MetaType::Continuous, &neg).unwrap()),
            vec![LikelihoodKind::Gaussian]
        );
        let pos = FeatureStats::from_values([0.2, 2.0, 3.0]);
        assert_eq!(
            kinds(default_dictionary(MetaType::Continuous, &pos).unwrap()),
            vec![
                LikelihoodKind::Gaussian,
                LikelihoodKind::Gamma,
                LikelihoodKind::Exponential
            ]
        );
        let bin = FeatureStats::from_values([0.0, 1.0, 1.0]);
        assert_eq!(
            kinds(default_dictionary(MetaType::Discrete, &bin).unwrap()),
            vec![LikelihoodKind::Bernoulli]
        );
        let counts = FeatureStats::from_values([0.0, 4.0, 2.0]);
        let d = default_dictionary(MetaType::Discrete, &counts).unwrap();
        assert_eq!(d[1].shift, 1.0);
        assert_eq!(d[2].categories(), Some(5));
        let empty = FeatureStats::from_values([]);
        assert_eq!(
            default_dictionary(MetaType::Discrete, &empty),
            Err(LikelihoodError::EmptyColumn)
        );
    }

    #[test]
    fn bernoulli_posterior_hyper() {
        let spec = ComponentSpec::new(LikelihoodKind::Bernoulli, Prior::Beta { a: 1.0, b: 1.0 });
        let data: Vec<f64> = [1.0; 7].iter().chain([0.0; 3].iter()).copied().collect();
        let post = Posterior::from_prior(&spec)
            .unwrap()
            .updated(&spec, 0.0, &SuffStats::of(&data));
        assert_eq!(post, Posterior::Beta { a: 8.0, b: 4.0 });
        assert!(close(post.mean_params()[0], 2.0 / 3.0, 1e-15));
    }

    #[test]
    fn nig_update_matches_centered_closed_form() {
        let (m0, v0, a0, b0) = (0.5, 2.0, 3.0, 1.5);
        let spec = ComponentSpec::new(
            LikelihoodKind::Gaussian,
            Prior::NormalInverseGamma { m0, v0, a0, b0 },
        );
        let data = [1.2, -0.3, 2.5, 0.7, 1.9];
        let post = Posterior::from_prior(&spec)
            .unwrap()
            .updated(&spec, 0.0, &SuffStats::of(&data));
        let (m, v, a, b) = post.nig_standard().unwrap();
        let n = data.len() as f64;
        let xbar = data.iter().sum::<f64>() / n;
        let ss: f64 = data.iter().map(|x| (x - xbar) * (x - xbar)).sum();
        let k0 = 1.0 / v0;
        assert!(close(m, (k0 * m0 + n * xbar) / (k0 + n), 1e-12));
        assert!(close(v, 1.0 / (k0 + n), 1e-12));
        assert!(close(a, a0 + n / 2.0, 1e-12));
        let b_ref = b0 + 0.5 * ss + k0 * n * (xbar - m0).powi(2) / (2.0 * (k0 + n));
        assert!(close(b, b_ref, 1e-12));
    }

    #[test]
    fn posterior_sample_rejects_out_of_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = ComponentSpec::new(
            LikelihoodKind::Poisson,
            Prior::Gamma {
                shape: 1.0,
                rate: 1.0,
            },
        );
        assert!(matches!(
            spec.posterior_sample(0.0, &[1.0, -2.0], &mut rng),
            Err(LikelihoodError::InvalidData { .. })
        ));
    }

    #[test]
    fn mom_shape_fallbacks() {
        assert_eq!(gamma_shape_mom(&[1.0]), 2.0);
        assert_eq!(gamma_shape_mom(&[3.0, 3.0]), 100.0);
        assert!(close(gamma_shape_mom(&[1.0, 3.0]), 4.0, 1e-12));
    }

    /// Trapezoid rule over `[lo, hi]`.
    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, steps: usize) -> f64 {
        let h = (hi - lo) / steps as f64;
        let inner: f64 = (1..steps).map(|k| f(lo + k as f64 * h)).sum();
        h * (inner + 0.5 * (f(lo) + f(hi)))
    }

    #[test]
    fn evidence_matches_quadrature_for_one_parameter_families() {
        let data = [2.0, 0.0, 5.0, 3.0];
        let spec = ComponentSpec::new(
            LikelihoodKind::Poisson,
            Prior::Gamma {
                shape: 2.0,
                rate: 0.5,
            },
        );
        let prior = Likelihood::Gamma {
            shape: 2.0,
            rate: 0.5,
        };
        let integrand = |lam: f64| {
            let pois = Likelihood::Poisson { rate: lam };
            (prior.log_pdf(lam) + data.iter().map(|&x| pois.log_pdf(x)).sum::<f64>()).exp()
        };
        let quad = trapezoid(integrand, 1e-9, 60.0, 200_000).ln();
        assert!((spec.log_evidence(0.0, &data).unwrap() - quad).abs() < 1e-6);

        let pos = [0.4, 1.7, 0.9];
        let shape = 3.0;
        let spec = ComponentSpec::new(
            LikelihoodKind::Gamma,
            Prior::Gamma {
                shape: 1.5,
                rate: 2.0,
            },
        );
        let prior = Likelihood::Gamma {
            shape: 1.5,
            rate: 2.0,
        };
        let integrand = |rate: f64| {
            let g = Likelihood::Gamma { shape, rate };
            (prior.log_pdf(rate) + pos.iter().map(|&x| g.log_pdf(x)).sum::<f64>()).exp()
        };
        let quad = trapezoid(integrand, 1e-9, 80.0, 400_000).ln();
        assert!((spec.log_evidence(shape, &pos).unwrap() - quad).abs() < 1e-6);

        let counts = [0.0, 3.0, 1.0];
        let spec = ComponentSpec {
            kind: LikelihoodKind::Geometric,
            prior: Prior::Beta { a: 2.0, b: 3.0 },
            shift: 1.0,
        };
        let beta_pdf = |p: f64| {
            (ln_gamma(5.0) - ln_gamma(2.0) - ln_gamma(3.0) + p.ln() + 2.0 * (1.0 - p).ln()).exp()
        };
        let integrand = |p: f64| {
            let g = Likelihood::Geometric { p, shift: 1.0 };
            beta_pdf(p) * counts.iter().map(|&x| g.log_pdf(x)).sum::<f64>().exp()
        };
        let quad = trapezoid(integrand, 1e-12, 1.0 - 1e-12, 200_000).ln();
        assert!((spec.log_evidence(0.0, &counts).unwrap() - quad).abs() < 1e-6);
    }

    #[test]
    fn evidence_matches_sequential_predictives() {
        // Gaussian: product of Student-t one-step predictives
        let (m0, v0, a0, b0) = (0.5, 2.0, 3.0, 1.5);
        let spec = ComponentSpec::new(
            LikelihoodKind::Gaussian,
            Prior::NormalInverseGamma { m0, v0, a0, b0 },
        );
        let data = [1.2, -0.3, 2.2, 0.9, 0.1];
        let (mut m, mut v, mut a, mut b) = (m0, v0, a0, b0);
        let mut total = 0.0;
        for &x in &data {
            let scale2 = b * (1.0 + v) / a;
            let nu = 2.0 * a;
            let z = (x - m) * (x - m) / scale2;
            total += ln_gamma((nu + 1.0) / 2.0)
                - ln_gamma(nu / 2.0)
                - 0.5 * (nu * std::f64::consts::PI * scale2).ln()
                - (nu + 1.0) / 2.0 * (1.0 + z / nu).ln();
            let vn = 1.0 / (1.0 / v + 1.0);
            let mn = vn * (m / v + x);
            b += 0.5 * (m * m / v + x * x - mn * mn / vn);
            a += 0.5;
            m = mn;
            v = vn;
        }
        assert!((spec.log_evidence(0.0, &data).unwrap() - total).abs() < 1e-10);

        // Categorical: Polya urn
        let alpha = vec![0.5, 1.0, 2.0];
        let spec = ComponentSpec::new(
            LikelihoodKind::Categorical,
            Prior::Dirichlet {
                alpha: alpha.clone(),
            },
        );
        let xs = [2.0, 2.0, 0.0, 1.0, 2.0];
        let mut c = alpha.clone();
        let mut total = 0.0;
        for &x in &xs {
            total += (c[x as usize] / c.iter().sum::<f64>()).ln();
            c[x as usize] += 1.0;
        }
        assert!((spec.log_evidence(0.0, &xs).unwrap() - total).abs() < 1e-12);

        // Bernoulli and Exponential
        let spec = ComponentSpec::new(LikelihoodKind::Bernoulli, Prior::Beta { a: 1.0, b: 1.0 });
        let expected = (1.0f64 / 2.0 * 2.0 / 3.0 * 1.0 / 4.0).ln();
        assert!((spec.log_evidence(0.0, &[1.0, 1.0, 0.0]).unwrap() - expected).abs() < 1e-12);
        let spec = ComponentSpec::new(
            LikelihoodKind::Exponential,
            Prior::Gamma {
                shape: 1.0,
                rate: 1.0,
            },
        );
        // one point: integral of e^-r * r e^(-r x) dr = 1/(1+x)^2
        assert!((spec.log_evidence(0.0, &[2.0]).unwrap() - (1.0f64 / 9.0).ln()).abs() < 1e-12);
        assert!(spec.log_evidence(0.0, &[-1.0]).is_err());
    }
}
