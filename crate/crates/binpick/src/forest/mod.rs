//! From-scratch random forest over swept-volume feature vectors.
//!
//! Each of the N trees is fit on a random subsample of the training data
//! (70% without replacement by default) by exhaustive Gini-minimizing
//! threshold search over a random feature subset, to a maximum depth.
//! Prediction is the arithmetic mean of the per-tree leaf success rates.
//! Training is a pure function of (data, hyperparameters, seed).

mod tree;

pub use tree::{DecisionTree, Node};

use crate::features::{FeatureParams, FeatureVector};
use crate::seed::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;
use tree::DenseData;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("degenerate training data: {rows} rows, {successes} successes")]
    DegenerateData { rows: usize, successes: usize },
    #[error("feature params of the input do not match the trained forest")]
    ParamMismatch,
    #[error("bad model file: {0}")]
    BadModel(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub features: FeatureVector,
    pub label: bool,
}

/// Labeled feature vectors; all rows share one `FeatureParams`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    params: FeatureParams,
    rows: Vec<TrainingRow>,
}

impl TrainingSet {
    pub fn new(params: FeatureParams) -> Self {
        Self {
            params,
            rows: Vec::new(),
        }
    }

    pub fn params(&self) -> &FeatureParams {
        &self.params
    }

    pub fn rows(&self) -> &[TrainingRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, features: FeatureVector, label: bool) -> Result<(), ForestError> {
        if features.params() != &self.params {
            return Err(ForestError::ParamMismatch);
        }
        self.rows.push(TrainingRow { features, label });
        Ok(())
    }

    /// (successes, failures).
    pub fn class_counts(&self) -> (usize, usize) {
        let s = self.rows.iter().filter(|r| r.label).count();
        (s, self.rows.len() - s)
    }

    pub fn subset(&self, indices: &[usize]) -> TrainingSet {
        TrainingSet {
            params: self.params,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Writes `label,f_0..f_{n-1}` rows (labels as 1/0, counts as integers).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ForestError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.params.len()).map(|i| format!("f_{i}")));
        out.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![if row.label { "1" } else { "0" }.to_string()];
            rec.extend(row.features.counts().iter().map(u32::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV format written by [`Self::write_csv`]; the histogram
    /// layout is supplied by the caller (it is not stored in the file).
    pub fn read_csv<R: Read>(r: R, params: FeatureParams) -> Result<Self, ForestError> {
        let mut reader = csv::Reader::from_reader(r);
        let expected = params.len() + 1;
        let mut set = TrainingSet::new(params);
        for record in reader.records() {
            let record = record?;
            if record.len() != expected {
                return Err(ForestError::BadModel(format!(
                    "csv row has {} columns, expected {expected}",
                    record.len()
                )));
            }
            let label = match &record[0] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(ForestError::BadModel(format!("bad label '{other}'")));
                }
            };
            let counts: Result<Vec<u32>, _> =
                (1..record.len()).map(|i| record[i].parse::<u32>()).collect();
            let counts =
                counts.map_err(|e| ForestError::BadModel(format!("bad count: {e}")))?;
            let features = FeatureVector::from_counts(counts, params)
                .ok_or_else(|| ForestError::BadModel("count length mismatch".into()))?;
            set.rows.push(TrainingRow { features, label });
        }
        Ok(set)
    }
}

/// Forest hyperparameters. Defaults: 200 trees of depth 5 trained on 70%
/// subsamples with sqrt(25) = 5 features per split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub bootstrap_fraction: f64,
    pub features_per_split: usize,
    /// Subsampling is without replacement by default (a literal 70% of the
    /// data); set for classic bootstrap sampling.
    pub with_replacement: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 5,
            bootstrap_fraction: 0.7,
            features_per_split: 5,
            with_replacement: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    params: ForestParams,
    feature_params: FeatureParams,
    seed: u64,
    trees: Vec<DecisionTree>,
}

const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(flatten)]
    forest: RandomForest,
}

/// Trains a forest; deterministic for a fixed `(data, params, seed)`.
pub fn train(
    data: &TrainingSet,
    params: &ForestParams,
    seed: u64,
) -> Result<RandomForest, ForestError> {
    let m = data.len();
    let (successes, failures) = data.class_counts();
    if m < 2 || successes == 0 || failures == 0 {
        return Err(ForestError::DegenerateData { rows: m, successes });
    }
    let features: Vec<Vec<f64>> = data.rows.iter().map(|r| r.features.as_f64()).collect();
    let labels: Vec<bool> = data.rows.iter().map(|r| r.label).collect();
    let dense = DenseData {
        features: &features,
        labels: &labels,
    };
    let amount = ((params.bootstrap_fraction * m as f64).ceil() as usize).clamp(1, m);

    let trees: Vec<DecisionTree> = (0..params.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
            let indices: Vec<u32> = if params.with_replacement {
                (0..amount).map(|_| rng.random_range(0..m) as u32).collect()
            } else {
                rand::seq::index::sample(&mut rng, m, amount)
                    .iter()
                    .map(|i| i as u32)
                    .collect()
            };
            DecisionTree::fit(
                &dense,
                &indices,
                params.max_depth,
                params.features_per_split,
                &mut rng,
            )
        })
        .collect();

    Ok(RandomForest {
        params: *params,
        feature_params: *data.params(),
        seed,
        trees,
    })
}

impl RandomForest {
    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn feature_params(&self) -> &FeatureParams {
        &self.feature_params
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Mean leaf success rate across all trees, in [0, 1].
    pub fn predict(&self, features: &FeatureVector) -> Result<f64, ForestError> {
        if features.params() != &self.feature_params {
            return Err(ForestError::ParamMismatch);
        }
        Ok(self.predict_dense(&features.as_f64()))
    }

    pub(crate) fn predict_dense(&self, features: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(features)).sum();
        sum / self.trees.len() as f64
    }

    /// 0/1 accuracy on `set` at the 0.5 probability threshold.
    pub fn accuracy(&self, set: &TrainingSet) -> Result<f64, ForestError> {
        if set.params() != &self.feature_params {
            return Err(ForestError::ParamMismatch);
        }
        if set.is_empty() {
            return Ok(0.0);
        }
        let correct = set
            .rows()
            .iter()
            .filter(|r| (self.predict_dense(&r.features.as_f64()) >= 0.5) == r.label)
            .count();
        Ok(correct as f64 / set.len() as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFile {
            version: MODEL_VERSION,
            forest: self.clone(),
        })
        .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ForestError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| ForestError::BadModel(e.to_string()))?;
        if file.version != MODEL_VERSION {
            return Err(ForestError::BadModel(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        Ok(file.forest)
    }
}

/// Seed used to train the forest for one (size, repeat) point of the
/// learning curve; exposed so single runs can be reproduced exactly.
pub fn curve_train_seed(seed: u64, size: usize, repeat: usize) -> u64 {
    derive_seed(seed, ((size as u64) << 20) | repeat as u64)
}

/// Mean held-out accuracy as a function of training-subset size.
///
/// For each size, `repeats` subsamples are drawn from the pool (without
/// replacement, resampled if a draw is single-class), a forest is trained
/// on each and evaluated on `holdout` at the 0.5 threshold. The pool and
/// holdout must be disjoint; that is the caller's contract.
pub fn accuracy_curve(
    pool: &TrainingSet,
    sizes: &[usize],
    holdout: &TrainingSet,
    repeats: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<Vec<(usize, f64)>, ForestError> {
    if holdout.is_empty() || pool.len() < 2 {
        return Err(ForestError::DegenerateData {
            rows: pool.len(),
            successes: 0,
        });
    }
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let size = size.min(pool.len()).max(2);
        let mut sum = 0.0;
        for rep in 0..repeats.max(1) {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, ((size as u64) << 32) | rep as u64));
            let forest = loop {
                let mut indices: Vec<usize> =
                    rand::seq::index::sample(&mut rng, pool.len(), size).into_vec();
                indices.sort_unstable();
                let subset = pool.subset(&indices);
                match train(&subset, params, curve_train_seed(seed, size, rep)) {
                    Ok(f) => break f,
                    Err(ForestError::DegenerateData { .. }) => continue,
                    Err(e) => return Err(e),
                }
            };
            sum += forest.accuracy(holdout)?;
        }
        out.push((size, sum / repeats.max(1) as f64));
    }
    Ok(out)
}
