//! Fitted models: structure learning followed by Gibbs sampling, and the
//! versioned, checksummed model file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{Dataset, Feature};
use crate::gibbs::{self, GibbsConfig, GibbsError, GibbsState, PosteriorSamples, Trace};
use crate::likelihood::{default_dictionary_with, ComponentSpec, LikelihoodError, PriorConfig};
use crate::spn::{Params, Spn, SpnError};
use crate::structure::{learn_structure, StructureConfig, StructureError};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "ABDA-MODEL";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("model has no posterior draws")]
    NoPosterior,
    #[error("data schema does not match the model: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Spn(#[from] SpnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub structure: StructureConfig,
    pub gibbs: GibbsConfig,
    pub priors: PriorConfig,
}

impl FitConfig {
    /// Seeds both the structure learner and the sampler.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.structure.seed = seed;
        self.gibbs.seed = seed;
        self
    }
}

/// Summary of the sampler's final state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    /// Rows routed through each sum child, by weight index.
    pub edge_counts: Vec<Vec<u64>>,
    /// Cells assigned to each leaf component, `[feature][slot][component]`.
    pub component_counts: Vec<Vec<Vec<u64>>>,
    pub sparsity: f64,
    pub final_mean_loglik: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    pub seed: u64,
    pub dataset_hash: String,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub features: Vec<Feature>,
    pub spn: Spn,
    pub dictionaries: Vec<Vec<ComponentSpec>>,
    pub config: FitConfig,
    pub samples: PosteriorSamples,
    pub summary: StateSummary,
    pub provenance: Provenance,
}

/// A fitted model with the sampler's trace and final state.
#[derive(Clone, Debug)]
pub struct Fit {
    pub model: Model,
    pub trace: Trace,
    pub state: GibbsState,
}

/// Builds each feature's likelihood dictionary from its observed values.
pub fn dictionaries(
    data: &Dataset,
    priors: &PriorConfig,
) -> Result<Vec<Vec<ComponentSpec>>, ModelError> {
    (0..data.num_features())
        .map(|d| {
            Ok(default_dictionary_with(
                data.features()[d].meta,
                &data.feature_stats(d),
                priors,
            )?)
        })
        .collect()
}

/// Learns a structure and runs the sampler on it.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<Fit, ModelError> {
    let dicts = dictionaries(data, &config.priors)?;
    let learned = learn_structure(data, &config.structure)?;
    fit_structure(data, learned.spn, &learned.sum_weights, dicts, config)
}

/// Runs the sampler on a given structure.
pub fn fit_structure(
    data: &Dataset,
    spn: Spn,
    sum_weights: &[Vec<f64>],
    dicts: Vec<Vec<ComponentSpec>>,
    config: &FitConfig,
) -> Result<Fit, ModelError> {
    let run = gibbs::run(&spn, &dicts, sum_weights, data, &config.gibbs)?;
    let summary = StateSummary {
        edge_counts: run.state.counts.edges.clone(),
        component_counts: run.state.counts.components.clone(),
        sparsity: gibbs::structure_sparsity(&run.state, &spn),
        final_mean_loglik: run.trace.entries.last().map_or(f64::NAN, |e| e.mean_loglik),
    };
    let provenance = Provenance {
        crate_version: env!("CARGO_PKG_VERSION").into(),
        seed: config.gibbs.seed,
        dataset_hash: data.content_hash(),
        rows: data.num_rows(),
    };
    let model = Model {
        features: data.features().to_vec(),
        spn,
        dictionaries: dicts,
        config: config.clone(),
        samples: run.samples,
        summary,
        provenance,
    };
    Ok(Fit {
        model,
        trace: run.trace,
        state: run.state,
    })
}

impl Model {
    pub fn draws(&self) -> Result<&[Params], ModelError> {
        if self.samples.is_empty() {
            Err(ModelError::NoPosterior)
        } else {
            Ok(&self.samples.draws)
        }
    }

    /// The draw with the highest training log-likelihood.
    pub fn best_draw(&self) -> Result<&Params, ModelError> {
        self.samples
            .best_index()
            .map(|i| &self.samples.draws[i])
            .ok_or(ModelError::NoPosterior)
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    /// Fails unless `data` has the model's feature names and types.
    pub fn check_schema(&self, data: &Dataset) -> Result<(), ModelError> {
        if data.features() != self.features.as_slice() {
            let expected: Vec<String> = self.features.iter().map(|f| f.name.clone()).collect();
            let found: Vec<String> = data.features().iter().map(|f| f.name.clone()).collect();
            return Err(ModelError::SchemaMismatch(format!(
                "expected {expected:?}, found {found:?}"
            )));
        }
        Ok(())
    }

    /// Whether `data` is the dataset the model was fitted on.
    pub fn fitted_on(&self, data: &Dataset) -> bool {
        data.content_hash() == self.provenance.dataset_hash
    }

    /// Serializes to the model file format: a header line with the format
    /// version and the SHA-256 of the JSON body, then the body.
    pub fn to_file_string(&self) -> String {
        let body = serde_json::to_string(self).expect("model serializes");
        let sum = hex::encode(Sha256::digest(body.as_bytes()));
        format!("{MAGIC} v{FORMAT_VERSION} sha256={sum}\n{body}")
    }

    pub fn from_file_str(text: &str) -> Result<Model, ModelError> {
        let (header, body) = text
            .split_once('\n')
            .ok_or_else(|| ModelError::CorruptFile("missing header".into()))?;
        let mut parts = header.split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(ModelError::CorruptFile("not a model file".into()));
        }
        let version = parts
            .next()
            .and_then(|v| v.strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| ModelError::CorruptFile("unreadable version".into()))?;
        if version != FORMAT_VERSION {
            return Err(ModelError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let sum = parts
            .next()
            .and_then(|s| s.strip_prefix("sha256="))
            .ok_or_else(|| ModelError::CorruptFile("missing checksum".into()))?;
        if hex::encode(Sha256::digest(body.as_bytes())) != sum {
            return Err(ModelError::CorruptFile("checksum mismatch".into()));
        }
        let model: Model =
            serde_json::from_str(body).map_err(|e| ModelError::CorruptFile(e.to_string()))?;
        for p in &model.samples.draws {
            p.check(&model.spn)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model, ModelError> {
        let bytes = fs::read(path)?;
        let text =
            String::from_utf8(bytes).map_err(|_| ModelError::CorruptFile("not UTF-8".into()))?;
        Model::from_file_str(&text)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::Feature;
    use crate::likelihood::MetaType;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::<f64>::new(0.0, 1.0).unwrap();
        let mut values = Vec::with_capacity(n * 3);
        for _ in 0..n {
            let c = rng.random::<bool>();
            let m = if c { 4.0 } else { -4.0 };
            values.push(m + z.sample(&mut rng));
            values.push(if c { 2.0 } else { 0.5 } * (1.0 + z.sample(&mut rng).abs()));
            values.push(if c {
                rng.random_range(0..3)
            } else {
                rng.random_range(3..6)
            } as f64);
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
            Feature {
                name: "c".into(),
                meta: MetaType::Discrete,
            },
        ];
        Dataset::from_values(features, values).unwrap()
    }

    pub(crate) fn small_fit(seed: u64) -> Model {
        let data = blobs(300, seed);
        let mut config = FitConfig::default().with_seed(seed);
        config.gibbs.iterations = 60;
        config.gibbs.burn_in = 40;
        config.gibbs.thinning = 5;
        fit(&data, &config).unwrap().model
    }

    #[test]
    fn fit_produces_draws_and_summary() {
        let model = small_fit(1);
        assert_eq!(model.samples.len(), 4);
        assert_eq!(model.samples.train_loglik.len(), 4);
        assert!(model.summary.sparsity > 0.0 && model.summary.sparsity <= 1.0);
        assert!(model.best_draw().is_ok());
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let model = small_fit(2);
        let back = Model::from_file_str(&model.to_file_string()).unwrap();
        assert_eq!(back, model);
        let data = blobs(50, 9);
        for i in 0..data.num_rows() {
            for p in 0..model.samples.len() {
                let a = model
                    .spn
                    .log_density(&model.samples.draws[p], data.row(i), data.observed_row(i))
                    .unwrap();
                let b = back
                    .spn
                    .log_density(&back.samples.draws[p], data.row(i), data.observed_row(i))
                    .unwrap();
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn damaged_files_are_rejected() {
        let text = small_fit(3).to_file_string();
        let truncated = &text[..text.len() - 10];
        assert!(matches!(
            Model::from_file_str(truncated),
            Err(ModelError::CorruptFile(_))
        ));
        let old = text.replacen("v1", "v0", 1);
        assert!(matches!(
            Model::from_file_str(&old),
            Err(ModelError::VersionMismatch {
                found: 0,
                expected: 1
            })
        ));
        assert!(matches!(
            Model::from_file_str("hello"),
            Err(ModelError::CorruptFile(_))
        ));
    }

    #[test]
    fn schema_check() {
        let model = small_fit(4);
        let data = blobs(10, 0);
        assert!(model.check_schema(&data).is_ok());
        assert!(!model.fitted_on(&data));
        let renamed = Dataset::from_values(
            vec![
                Feature {
                    name: "z".into(),
                    meta: MetaType::Continuous,
                },
                data.features()[1].clone(),
                data.features()[2].clone(),
            ],
            (0..30).map(|i| data.get(i / 3, i % 3).unwrap()).collect(),
        )
        .unwrap();
        assert!(matches!(
            model.check_schema(&renamed),
            Err(ModelError::SchemaMismatch(_))
        ));
    }
}
