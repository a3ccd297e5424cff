//! Mixed-type tables with a missingness mask, and their CSV dialect.
//!
//! The header names every column as `name:C` (continuous) or `name:D`
//! (discrete). Cells are numbers, or empty / `?` for missing values. Lines
//! starting with `#` are comments.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::likelihood::{FeatureStats, MetaType};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at line {line}, column {column}: {reason}")]
    Parse {
        line: usize,
        column: usize,
        reason: String,
    },
    #[error("discrete column `{name}` has non-integer value {value} at line {line}")]
    MixedTypeColumn {
        name: String,
        line: usize,
        value: String,
    },
    #[error("fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions(Vec<f64>),
    #[error("dataset shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Column schema entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub meta: MetaType,
}

/// An `N x D` table. Missing cells hold `NaN` and are flagged in the mask.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Vec<Feature>,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.observed == other.observed
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.observed)
                .all(|((a, b), o)| !o || a.to_bits() == b.to_bits())
    }
}

impl Dataset {
    /// Builds a dataset from row-major cells; `None` marks a missing cell.
    pub fn from_rows(
        features: Vec<Feature>,
        rows: &[Vec<Option<f64>>],
    ) -> Result<Dataset, DataError> {
        let d = features.len();
        let mut values = Vec::with_capacity(rows.len() * d);
        let mut observed = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(DataError::Shape(format!(
                    "row {i} has {} cells, expected {d}",
                    row.len()
                )));
            }
            for (f, cell) in features.iter().zip(row) {
                match cell {
                    Some(x) => {
                        if f.meta == MetaType::Discrete && x.fract() != 0.0 {
                            return Err(DataError::MixedTypeColumn {
                                name: f.name.clone(),
                                line: i + 2,
                                value: x.to_string(),
                            });
                        }
                        values.push(*x);
                        observed.push(true);
                    }
                    None => {
                        values.push(f64::NAN);
                        observed.push(false);
                    }
                }
            }
        }
        Ok(Dataset {
            features,
            values,
            observed,
        })
    }

    /// Fully observed dataset from row-major values.
    pub fn from_values(features: Vec<Feature>, values: Vec<f64>) -> Result<Dataset, DataError> {
        let d = features.len();
        if d == 0 || !values.len().is_multiple_of(d) {
            return Err(DataError::Shape(format!(
                "{} values for {d} features",
                values.len()
            )));
        }
        let observed = vec![true; values.len()];
        Ok(Dataset {
            features,
            values,
            observed,
        })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn meta_types(&self) -> Vec<MetaType> {
        self.features.iter().map(|f| f.meta).collect()
    }

    pub fn num_rows(&self) -> usize {
        if self.features.is_empty() {
            0
        } else {
            self.values.len() / self.features.len()
        }
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.features.len();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn observed_row(&self, i: usize) -> &[bool] {
        let d = self.features.len();
        &self.observed[i * d..(i + 1) * d]
    }

    pub fn is_observed(&self, i: usize, d: usize) -> bool {
        self.observed[i * self.features.len() + d]
    }

    pub fn get(&self, i: usize, d: usize) -> Option<f64> {
        let k = i * self.features.len() + d;
        self.observed[k].then_some(self.values[k])
    }

    pub fn set(&mut self, i: usize, d: usize, value: Option<f64>) {
        let k = i * self.features.len() + d;
        match value {
            Some(x) => {
                self.values[k] = x;
                self.observed[k] = true;
            }
            None => {
                self.values[k] = f64::NAN;
                self.observed[k] = false;
            }
        }
    }

    /// Observed cells of column `d`, in row order.
    pub fn column_observed(&self, d: usize) -> Vec<f64> {
        (0..self.num_rows())
            .filter_map(|i| self.get(i, d))
            .collect()
    }

    pub fn feature_stats(&self, d: usize) -> FeatureStats {
        FeatureStats::from_values(self.column_observed(d))
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    /// New dataset with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(rows.len() * self.num_features());
        let mut observed = Vec::with_capacity(rows.len() * self.num_features());
        for &i in rows {
            values.extend_from_slice(self.row(i));
            observed.extend_from_slice(self.observed_row(i));
        }
        Dataset {
            features: self.features.clone(),
            values,
            observed,
        }
    }

    /// Appends the rows of `other`, which must share the schema.
    pub fn extend(&mut self, other: &Dataset) -> Result<(), DataError> {
        if other.features != self.features {
            return Err(DataError::Shape("schemas differ".into()));
        }
        self.values.extend_from_slice(&other.values);
        self.observed.extend_from_slice(&other.observed);
        Ok(())
    }

    /// Parses the CSV dialect from any reader.
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = match records.next() {
            Some(h) => h.map_err(|e| csv_error(e, 1))?,
            None => {
                return Err(DataError::Parse {
                    line: 1,
                    column: 1,
                    reason: "missing header".into(),
                })
            }
        };
        let mut features = Vec::with_capacity(header.len());
        for (c, field) in header.iter().enumerate() {
            let (name, tag) = field.rsplit_once(':').ok_or_else(|| DataError::Parse {
                line: line_of(&header, 1),
                column: c + 1,
                reason: format!("header `{field}` lacks a `:C` or `:D` suffix"),
            })?;
            let meta = match tag {
                "C" | "c" => MetaType::Continuous,
                "D" | "d" => MetaType::Discrete,
                _ => {
                    return Err(DataError::Parse {
                        line: line_of(&header, 1),
                        column: c + 1,
                        reason: format!("unknown type tag `{tag}`"),
                    })
                }
            };
            features.push(Feature {
                name: name.to_string(),
                meta,
            });
        }
        let d = features.len();
        let mut values = Vec::new();
        let mut observed = Vec::new();
        for rec in records {
            let rec = rec.map_err(|e| csv_error(e, 0))?;
            let line = line_of(&rec, 0);
            if rec.len() == 1 && rec[0].is_empty() && d > 1 {
                continue;
            }
            if rec.len() != d {
                return Err(DataError::Parse {
                    line,
                    column: rec.len().min(d) + 1,
                    reason: format!("expected {d} cells, found {}", rec.len()),
                });
            }
            for (c, (cell, f)) in rec.iter().zip(&features).enumerate() {
                if cell.is_empty() || cell == "?" {
                    values.push(f64::NAN);
                    observed.push(false);
                    continue;
                }
                let x: f64 = cell.parse().map_err(|_| DataError::Parse {
                    line,
                    column: c + 1,
                    reason: format!("`{cell}` is not a number"),
                })?;
                if !x.is_finite() {
                    return Err(DataError::Parse {
                        line,
                        column: c + 1,
                        reason: format!("`{cell}` is not finite"),
                    });
                }
                if f.meta == MetaType::Discrete && x.fract() != 0.0 {
                    return Err(DataError::MixedTypeColumn {
                        name: f.name.clone(),
                        line,
                        value: cell.to_string(),
                    });
                }
                values.push(x);
                observed.push(true);
            }
        }
        Ok(Dataset {
            features,
            values,
            observed,
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
        let file = std::fs::File::open(path)?;
        Dataset::read_csv(std::io::BufReader::new(file))
    }

    /// Canonical CSV text: shortest round-trip decimals, `?` for missing.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self
            .features
            .iter()
            .map(|f| {
                format!(
                    "{}:{}",
                    f.name,
                    if f.meta == MetaType::Continuous {
                        "C"
                    } else {
                        "D"
                    }
                )
            })
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.num_rows() {
            for d in 0..self.num_features() {
                if d > 0 {
                    out.push(',');
                }
                match self.get(i, d) {
                    Some(x) => write!(out, "{}", format_number(x)).expect("write to string"),
                    None => out.push('?'),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), DataError> {
        w.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// SHA-256 of the canonical CSV text, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_string().as_bytes()))
    }

    /// Random disjoint train/validation/test row split.
    pub fn holdout_split<R: Rng + ?Sized>(
        &self,
        fractions: [f64; 3],
        rng: &mut R,
    ) -> Result<(Dataset, Dataset, Dataset), DataError> {
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
            || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(DataError::BadFractions(fractions.to_vec()));
        }
        let n = self.num_rows();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let n_train = (fractions[0] * n as f64).round() as usize;
        let n_valid = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        let (train, rest) = idx.split_at(n_train);
        let (valid, test) = rest.split_at(n_valid);
        Ok((
            self.select_rows(train),
            self.select_rows(valid),
            self.select_rows(test),
        ))
    }

    /// Masks each observed cell independently with probability `fraction`.
    /// Returns the masked dataset and the removed `(row, feature, value)`
    /// cells.
    pub fn inject_missing<R: Rng + ?Sized>(
        &self,
        fraction: f64,
        rng: &mut R,
    ) -> (Dataset, Vec<(usize, usize, f64)>) {
        let mut out = self.clone();
        let mut removed = Vec::new();
        for i in 0..self.num_rows() {
            for d in 0..self.num_features() {
                if let Some(x) = self.get(i, d) {
                    if rng.random::<f64>() < fraction {
                        out.set(i, d, None);
                        removed.push((i, d, x));
                    }
                }
            }
        }
        (out, removed)
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        let mut buf = ryu::Buffer::new();
        buf.format(x).to_string()
    }
}

fn line_of(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback)
}

fn csv_error(e: csv::Error, fallback_line: usize) -> DataError {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback_line);
    DataError::Parse {
        line,
        column: 0,
        reason: e.to_string(),
    }
}
