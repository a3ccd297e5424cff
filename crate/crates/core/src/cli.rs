//! Command-line front end. Every output file carries `#` provenance lines
//! (or a provenance section, for the markdown report), and failures are
//! reported as a single JSON line on stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{format_number, DataError, Dataset};
use crate::inference::{
    anomaly_scores, impute_dataset, mean_log_density, type_posterior, ImputeMode, InferenceError,
};
use crate::likelihood::{LikelihoodKind, MetaType, StatType};
use crate::model::{fit, FitConfig, Model, ModelError};
use crate::patterns::{
    mine, partition_report, render_partitions, write_patterns_csv, MineConfig, PatternError,
};
use crate::spn::Params;
use crate::synth::{
    confusion_matrix, evaluate, generate, kind_accuracy, GroundTruth, SynthConfig, SynthEval,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    /// Stable short name of the failure class.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Data(DataError::Parse { .. }) => "parse",
            CliError::Data(DataError::MixedTypeColumn { .. }) => "mixed_type_column",
            CliError::Data(_) => "data",
            CliError::Model(ModelError::VersionMismatch { .. }) => "version_mismatch",
            CliError::Model(ModelError::CorruptFile(_)) => "corrupt_file",
            CliError::Model(ModelError::SchemaMismatch(_)) => "schema_mismatch",
            CliError::Model(_) => "model",
            CliError::Inference(_) => "inference",
            CliError::Pattern(_) => "pattern",
            CliError::File { .. } => "io",
            CliError::Json { .. } => "json",
            CliError::Invalid(_) => "invalid_argument",
        }
    }

    /// One-line JSON rendering for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "abda",
    version,
    about = "Bayesian density analysis of mixed-type tables"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Map,
    Mc,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn a structure and sample the posterior.
    Fit {
        data: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        rdc_threshold: f64,
        /// Minimum slice size as a fraction of the rows.
        #[arg(long, default_value_t = 0.1)]
        min_instances: f64,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = 250)]
        burn_in: usize,
        #[arg(long, default_value_t = 1)]
        thinning: usize,
        #[arg(long, default_value_t = 10.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Resample rows on all cores.
        #[arg(long)]
        parallel: bool,
        /// Also write the per-iteration log-likelihood trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fill in missing cells.
    Impute {
        model: PathBuf,
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Map)]
        mode: ModeArg,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Negative log-density of every row, most anomalous first.
    Score {
        model: PathBuf,
        data: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Posterior over likelihood kinds and statistical types per feature.
    Types {
        model: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Mine interval patterns and their conjunctions.
    Patterns {
        model: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        lambda: f64,
        #[arg(long, default_value_t = 0.9)]
        theta: f64,
        #[arg(long, default_value_t = 0.05)]
        support_floor: f64,
        #[arg(long, default_value_t = 4)]
        max_arity: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate a synthetic dataset with known ground truth.
    Synth {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fit synthetic datasets and compare with their ground truth.
    EvalSynth {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1500)]
        iters: usize,
        #[arg(long, default_value_t = 1000)]
        burn_in: usize,
        #[arg(long, default_value_t = 10)]
        thinning: usize,
        #[arg(long, default_value_t = 0.3)]
        rdc_threshold: f64,
        #[arg(long, default_value_t = 0.1)]
        min_instances: f64,
        /// Defaults to each dataset's generation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-feature results as CSV.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Markdown report with density grids, partitions and top patterns.
    Report {
        model: PathBuf,
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// Sidecar written next to a synthetic dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub seed: u64,
    pub config: SynthConfig,
    pub truth: GroundTruth,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serializes"))
}

/// `#` lines naming the version, command, seed and configuration hash.
pub fn provenance_lines(
    command: &str,
    seed: impl std::fmt::Display,
    config_sha256: &str,
) -> String {
    format!(
        "# abda {}\n# command: {command}\n# seed: {seed}\n# config_sha256: {config_sha256}\n",
        env!("CARGO_PKG_VERSION")
    )
}

fn model_provenance(command: &str, model: &Model) -> String {
    provenance_lines(command, model.provenance.seed, &config_hash(&model.config))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::File {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Model::load(path).map_err(|e| match e {
        ModelError::Io(source) => CliError::File {
            path: path.to_path_buf(),
            source,
        },
        e => CliError::Model(e),
    })
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load_csv(path).map_err(|e| match e {
        DataError::Io(source) => CliError::File {
            path: path.to_path_buf(),
            source,
        },
        e => CliError::Data(e),
    })
}

fn pick_seed(seed: Option<u64>, out: &mut String) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        let _ = writeln!(out, "seed: {s}");
        s
    })
}

/// Parses `args` and runs the command. Returns the text for stdout.
pub fn run<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        CliError::Invalid(
            e.to_string()
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" "),
        )
    })?;
    execute(cli.command)
}

pub fn execute(command: Command) -> Result<String, CliError> {
    let mut out = String::new();
    match command {
        Command::Fit {
            data,
            rdc_threshold,
            min_instances,
            iters,
            burn_in,
            thinning,
            gamma,
            alpha,
            seed,
            parallel,
            trace,
            output,
        } => {
            let seed = pick_seed(seed, &mut out);
            let dataset = load_data(&data)?;
            let mut config = FitConfig::default().with_seed(seed);
            config.structure.rdc_threshold = rdc_threshold;
            config.structure.min_instances_fraction = min_instances;
            config.gibbs.iterations = iters;
            config.gibbs.burn_in = burn_in;
            config.gibbs.thinning = thinning;
            config.gibbs.gamma = gamma;
            config.gibbs.alpha = alpha;
            config.gibbs.parallel = parallel;
            let start = Instant::now();
            let result = fit(&dataset, &config)?;
            let model = &result.model;
            write_file(&output, &model.to_file_string())?;
            if let Some(path) = trace {
                let mut buf = Vec::new();
                result.trace.write_csv(&mut buf).expect("writing to memory");
                let text = String::from_utf8(buf).expect("trace is UTF-8")
                    + &model_provenance("fit", model);
                write_file(&path, &text)?;
            }
            let _ = writeln!(
                out,
                "fitted {} rows x {} features in {:.1}s: {} sum nodes, {} draws, final mean log-likelihood {:.4}, sparsity {:.3}",
                dataset.num_rows(),
                dataset.num_features(),
                start.elapsed().as_secs_f64(),
                model.spn.num_sums(),
                model.samples.len(),
                model.summary.final_mean_loglik,
                model.summary.sparsity
            );
            let _ = writeln!(out, "model written to {}", output.display());
        }
        Command::Impute {
            model,
            data,
            mode,
            output,
        } => {
            let model = load_model(&model)?;
            let dataset = load_data(&data)?;
            model.check_schema(&dataset)?;
            let mode = match mode {
                ModeArg::Map => ImputeMode::MapSample,
                ModeArg::Mc => ImputeMode::McAverage,
            };
            let filled = impute_dataset(&model, &dataset, mode)?;
            write_file(
                &output,
                &(filled.to_csv_string() + &model_provenance("impute", &model)),
            )?;
            let _ = writeln!(
                out,
                "imputed {} cells in {} rows",
                dataset.missing_count(),
                dataset.num_rows()
            );
            if !model.fitted_on(&dataset) {
                let _ = writeln!(out, "note: the data differs from the training data");
            }
        }
        Command::Score {
            model,
            data,
            output,
        } => {
            let model = load_model(&model)?;
            let dataset = load_data(&data)?;
            model.check_schema(&dataset)?;
            let scores = anomaly_scores(&model, &dataset)?;
            let mut text = String::from("rank,row,score,partition\n");
            for (rank, s) in scores.iter().enumerate() {
                let partition: Vec<String> = s.partition.iter().map(|n| n.to_string()).collect();
                let _ = writeln!(
                    text,
                    "{},{},{},{}",
                    rank + 1,
                    s.row,
                    format_number(s.score),
                    partition.join(";")
                );
            }
            write_file(&output, &(text + &model_provenance("score", &model)))?;
            let _ = writeln!(out, "scored {} rows", scores.len());
        }
        Command::Types { model, output } => {
            let model = load_model(&model)?;
            let mut text = String::from("feature,name,level,label,mass,se,most_likely\n");
            for d in 0..model.num_features() {
                let tp = type_posterior(&model, d)?;
                let name = &model.features[d].name;
                let best_kind = tp.most_likely_kind();
                let best_type = tp.most_likely_stat_type();
                for (k, m, se) in &tp.kinds {
                    let _ = writeln!(
                        text,
                        "{d},{name},kind,{},{},{},{}",
                        k.name(),
                        format_number(*m),
                        format_number(*se),
                        *k == best_kind
                    );
                }
                for (t, m, se) in &tp.stat_types {
                    let _ = writeln!(
                        text,
                        "{d},{name},type,{},{},{},{}",
                        t.name(),
                        format_number(*m),
                        format_number(*se),
                        *t == best_type
                    );
                }
                let _ = writeln!(out, "{name}: {} ({})", best_type.name(), best_kind.name());
            }
            write_file(&output, &(text + &model_provenance("types", &model)))?;
        }
        Command::Patterns {
            model,
            lambda,
            theta,
            support_floor,
            max_arity,
            output,
        } => {
            let model = load_model(&model)?;
            let config = MineConfig {
                lambda,
                theta,
                support_floor,
                max_arity,
                ..Default::default()
            };
            let patterns = mine(&model, &config)?;
            let mut buf = Vec::new();
            write_patterns_csv(&patterns, &model.features, &mut buf)?;
            let text = String::from_utf8(buf).expect("CSV is UTF-8")
                + &provenance_lines(
                    "patterns",
                    model.provenance.seed,
                    &config_hash(&(&model.config, &config)),
                );
            write_file(&output, &text)?;
            for p in patterns.iter().take(10) {
                let _ = writeln!(out, "{}", p.describe(&model.features));
            }
            let _ = writeln!(
                out,
                "{} patterns written to {}",
                patterns.len(),
                output.display()
            );
        }
        Command::Synth { n, d, seed, output } => {
            let seed = pick_seed(seed, &mut out);
            let config = SynthConfig {
                rows: n,
                features: d,
                ..Default::default()
            };
            if n < 10 || d == 0 {
                return Err(CliError::Invalid(
                    "synth needs at least 10 rows and 1 feature".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (data, truth) = generate(&config, &mut rng);
            let (train, valid, test) = data.holdout_split([0.7, 0.1, 0.2], &mut rng)?;
            let prov = provenance_lines("synth", seed, &config_hash(&config));
            for (name, set) in [
                ("data.csv", &data),
                ("train.csv", &train),
                ("valid.csv", &valid),
                ("test.csv", &test),
            ] {
                write_file(&output.join(name), &(set.to_csv_string() + &prov))?;
            }
            let sidecar = SynthSidecar {
                seed,
                config,
                truth,
            };
            let json = serde_json::to_string_pretty(&sidecar).expect("ground truth serializes");
            write_file(&output.join("truth.json"), &json)?;
            let types: Vec<&str> = sidecar.truth.stat_types.iter().map(|t| t.name()).collect();
            let _ = writeln!(
                out,
                "wrote {n} rows x {d} features to {} (types: {})",
                output.display(),
                types.join(", ")
            );
        }
        Command::EvalSynth {
            dirs,
            iters,
            burn_in,
            thinning,
            rdc_threshold,
            min_instances,
            seed,
            output,
        } => {
            let start = Instant::now();
            let results: Vec<(PathBuf, SynthEval)> = dirs
                .par_iter()
                .map(|dir| {
                    let path = dir.join("truth.json");
                    let sidecar: SynthSidecar = serde_json::from_str(&read_file(&path)?)
                        .map_err(|source| CliError::Json { path, source })?;
                    let train = load_data(&dir.join("train.csv"))?;
                    let test = load_data(&dir.join("test.csv"))?;
                    let mut config = FitConfig::default().with_seed(seed.unwrap_or(sidecar.seed));
                    config.structure.rdc_threshold = rdc_threshold;
                    config.structure.min_instances_fraction = min_instances;
                    config.gibbs.iterations = iters;
                    config.gibbs.burn_in = burn_in;
                    config.gibbs.thinning = thinning;
                    let model = fit(&train, &config)?.model;
                    Ok((dir.clone(), evaluate(&model, &test, &sidecar.truth)?))
                })
                .collect::<Result<_, CliError>>()?;
            let evals: Vec<SynthEval> = results.iter().map(|(_, e)| e.clone()).collect();
            out.push_str(&render_eval(
                &results,
                &evals,
                start.elapsed().as_secs_f64(),
            ));
            if let Some(path) = output {
                let mut text =
                    String::from("dataset,feature,true_type,true_kind,inferred_type,inferred_kind,cosine,test_loglik,oracle_loglik\n");
                for (dir, e) in &results {
                    for f in &e.features {
                        let _ = writeln!(
                            text,
                            "{},{},{},{},{},{},{},{},{}",
                            dir.display(),
                            f.feature,
                            f.true_type.name(),
                            f.true_kind.name(),
                            f.inferred_type.name(),
                            f.inferred_kind.name(),
                            format_number(f.cosine),
                            format_number(e.test_loglik),
                            format_number(e.oracle_loglik)
                        );
                    }
                }
                let hash = config_hash(&(iters, burn_in, thinning, rdc_threshold, min_instances));
                let seed = seed.map_or_else(|| "per dataset".to_string(), |s| s.to_string());
                write_file(
                    &path,
                    &(text + &provenance_lines("eval-synth", seed, &hash)),
                )?;
            }
        }
        Command::Report {
            model,
            data,
            top,
            output,
        } => {
            let model = load_model(&model)?;
            let dataset = load_data(&data)?;
            out.push_str(&write_report(&model, &dataset, top, &output)?);
        }
    }
    Ok(out)
}

fn render_eval(results: &[(PathBuf, SynthEval)], evals: &[SynthEval], seconds: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "dataset | mean cosine | test LL | oracle LL | gap per feature"
    );
    for (dir, e) in results {
        let _ = writeln!(
            s,
            "{} | {:.3} | {:.4} | {:.4} | {:.4}",
            dir.display(),
            e.mean_cosine(),
            e.test_loglik,
            e.oracle_loglik,
            e.gap_per_feature()
        );
    }
    let mean_cos = evals.iter().map(|e| e.mean_cosine()).sum::<f64>() / evals.len() as f64;
    let _ = writeln!(s, "mean cosine similarity: {mean_cos:.3}");
    let _ = writeln!(s, "confusion (rows true, columns inferred):");
    let _ = writeln!(
        s,
        "     {}",
        StatType::ALL
            .iter()
            .map(|t| format!("{:>5}", t.name()))
            .collect::<String>()
    );
    for (t, row) in StatType::ALL.iter().zip(confusion_matrix(evals)) {
        let _ = writeln!(
            s,
            "{:>5}{}",
            t.name(),
            row.iter().map(|c| format!("{c:>5}")).collect::<String>()
        );
    }
    for kind in [LikelihoodKind::Gaussian, LikelihoodKind::Categorical] {
        let (ok, n) = kind_accuracy(evals, kind);
        let _ = writeln!(s, "{} features recovered: {ok}/{n}", kind.name());
    }
    let _ = writeln!(s, "elapsed: {seconds:.1}s");
    s
}

/// Grid of evaluation points covering a feature's observed range.
fn grid_for(data: &Dataset, d: usize) -> Vec<f64> {
    let stats = data.feature_stats(d);
    if stats.count == 0 {
        return Vec::new();
    }
    if data.features()[d].meta == MetaType::Discrete {
        let (lo, hi) = (stats.min as i64, stats.max as i64);
        return (lo..=hi.min(lo + 1000)).map(|k| k as f64).collect();
    }
    let pad = 0.1 * (stats.max - stats.min).max(1e-6);
    let (lo, hi) = (stats.min - pad, stats.max + pad);
    (0..200)
        .map(|k| lo + (hi - lo) * k as f64 / 199.0)
        .collect()
}

fn marginal_density(model: &Model, draws: &[Params], d: usize, x: f64) -> Result<f64, CliError> {
    let mut total = 0.0;
    for p in draws {
        let v = model
            .spn
            .eval_with_leaf_overrides(p, |f, j| {
                Some(if f == d {
                    p.leaves[f][j].log_value(x)
                } else {
                    0.0
                })
            })
            .map_err(ModelError::from)?;
        total += v.exp();
    }
    Ok(total / draws.len() as f64)
}

/// Density grid of one feature: the model marginal and every leaf's
/// mixture density, averaged over posterior draws.
pub fn density_grid_csv(model: &Model, data: &Dataset, d: usize) -> Result<String, CliError> {
    let draws = model.draws()?;
    let leaves = model.spn.leaves_of(d);
    let mut s = String::from("x,model");
    for id in leaves {
        let _ = write!(s, ",leaf_{}", id.0);
    }
    s.push('\n');
    for x in grid_for(data, d) {
        let _ = write!(
            s,
            "{},{}",
            format_number(x),
            format_number(marginal_density(model, draws, d, x)?)
        );
        for j in 0..leaves.len() {
            let v = draws
                .iter()
                .map(|p| p.leaves[d][j].log_value(x).exp())
                .sum::<f64>()
                / draws.len() as f64;
            let _ = write!(s, ",{}", format_number(v));
        }
        s.push('\n');
    }
    Ok(s)
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_report(
    model: &Model,
    data: &Dataset,
    top: usize,
    output: &Path,
) -> Result<String, CliError> {
    model.check_schema(data)?;
    let stem = output.file_stem().map_or_else(
        || "report".to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    let grid_dir_name = format!("{stem}_densities");
    let grid_dir = output
        .parent()
        .unwrap_or(Path::new(""))
        .join(&grid_dir_name);
    let prov = model_provenance("report", model);

    let mut md = String::from("# Model report\n\n## Provenance\n\n```text\n");
    md.push_str(&prov);
    let _ = writeln!(
        md,
        "# model seed: {}, trained on {} rows, dataset sha256 {}",
        model.provenance.seed, model.provenance.rows, model.provenance.dataset_hash
    );
    md.push_str("```\n\n");

    let _ = writeln!(md, "## Fit\n");
    let _ = writeln!(
        md,
        "- rows in this dataset: {} ({} missing cells)",
        data.num_rows(),
        data.missing_count()
    );
    let _ = writeln!(
        md,
        "- same data as training: {}",
        if model.fitted_on(data) { "yes" } else { "no" }
    );
    let _ = writeln!(
        md,
        "- sum nodes: {}, product nodes: {}",
        model.spn.num_sums(),
        model.spn.product_nodes().count()
    );
    let _ = writeln!(md, "- posterior draws: {}", model.samples.len());
    let _ = writeln!(md, "- structure sparsity: {:.3}", model.summary.sparsity);
    let _ = writeln!(
        md,
        "- mean log-density on this dataset: {:.4}\n",
        mean_log_density(model, data)?
    );

    let _ = writeln!(md, "## Feature types\n");
    let _ = writeln!(md, "| feature | data | type | P(type) | kind | P(kind) |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for d in 0..model.num_features() {
        let tp = type_posterior(model, d)?;
        let t = tp.most_likely_stat_type();
        let k = tp.most_likely_kind();
        let pt = tp.stat_types.iter().find(|e| e.0 == t).map_or(0.0, |e| e.1);
        let pk = tp.kinds.iter().find(|e| e.0 == k).map_or(0.0, |e| e.1);
        let meta = if model.features[d].meta == MetaType::Discrete {
            "discrete"
        } else {
            "continuous"
        };
        let _ = writeln!(
            md,
            "| {} | {meta} | {} | {pt:.3} | {} | {pk:.3} |",
            model.features[d].name,
            t.name(),
            k.name()
        );
    }

    let _ = writeln!(md, "\n## Partitions\n\n```text");
    md.push_str(&render_partitions(
        &partition_report(model, data)?,
        &model.features,
    ));
    md.push_str("```\n\n");

    let _ = writeln!(md, "## Top patterns\n");
    let patterns = mine(model, &MineConfig::default())?;
    if patterns.is_empty() {
        let _ = writeln!(md, "No pattern reaches the support floor.");
    }
    for p in patterns.iter().take(top) {
        let _ = writeln!(md, "- {}", p.describe(&model.features));
    }

    let _ = writeln!(md, "\n## Most anomalous rows\n");
    let _ = writeln!(md, "| row | negative log-density |");
    let _ = writeln!(md, "|---|---|");
    for s in anomaly_scores(model, data)?.iter().take(top) {
        let _ = writeln!(md, "| {} | {:.4} |", s.row, s.score);
    }

    let _ = writeln!(md, "\n## Density grids\n");
    for d in 0..model.num_features() {
        let name = format!("{}.csv", file_safe(&model.features[d].name));
        write_file(
            &grid_dir.join(&name),
            &(density_grid_csv(model, data, d)? + &prov),
        )?;
        let _ = writeln!(md, "- `{grid_dir_name}/{name}`");
    }
    write_file(output, &md)?;
    Ok(format!(
        "report written to {} with density grids in {}\n",
        output.display(),
        grid_dir.display()
    ))
}

/// Entry point for the binary: prints results to stdout, or a JSON error
/// line to stderr, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<T> = args.into_iter().collect();
    match Cli::try_parse_from(args.clone()) {
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            let _ = e.print();
            0
        }
        Err(e) => {
            let message = e
                .to_string()
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ");
            eprintln!("{}", CliError::Invalid(message).to_json_line());
            2
        }
        Ok(cli) => match execute(cli.command) {
            Ok(text) => {
                let _ = std::io::stdout().write_all(text.as_bytes());
                0
            }
            Err(e) => {
                eprintln!("{}", e.to_json_line());
                1
            }
        },
    }
}
