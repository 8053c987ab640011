//! Request/response payloads shared by the command-line tool and the HTTP
//! service. Both front ends call into [`Engine`], so their JSON output agrees
//! for identical inputs.

use std::collections::BTreeSet;
use std::time::Instant;

use rand_core::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{
    lime_lite, shapley_exact, shapley_mc, AttributionError, AttributionResult, LimeConfig,
};
use crate::counterfactual::{
    find_min_counterfactual, CounterfactualError, CounterfactualQuery, CounterfactualResult,
};
use crate::data::{shuffled_indices, Dataset};
use crate::encode::{extract_thresholds, ThresholdMap};
use crate::forest::{Forest, Instance, InstanceError};
use crate::report::{build_report, Report};
use crate::rng::SplitMix64;

pub const DEFAULT_PERMUTATIONS: usize = 100;
pub const DEFAULT_LIME_SAMPLES: usize = 5000;

/// Structured error with a stable machine-readable code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error_code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        ApiError {
            error_code: code.to_string(),
            message: message.into(),
        }
    }

    /// HTTP status the service uses for this error.
    pub fn status(&self) -> u16 {
        match self.error_code.as_str() {
            "SolverBudget" => 504,
            "Unreachable" => 422,
            "Internal" | "FlipCheckFailed" | "Decode" => 500,
            "NotFound" | "NoReport" => 404,
            _ => 400,
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.error_code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<InstanceError> for ApiError {
    fn from(e: InstanceError) -> Self {
        let code = match e {
            InstanceError::NonFinite { .. } => "InvalidInstance",
            InstanceError::InstanceLengthMismatch { .. } => "InstanceLengthMismatch",
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<CounterfactualError> for ApiError {
    fn from(e: CounterfactualError) -> Self {
        let code = match &e {
            CounterfactualError::Unreachable { .. } => "Unreachable",
            CounterfactualError::SolverBudget { .. } => "SolverBudget",
            CounterfactualError::InvalidQuery(_) => "InvalidQuery",
            CounterfactualError::Encode(_) => "Encode",
            CounterfactualError::Decode(_) => "Decode",
            CounterfactualError::ZeroRange(_) => "ZeroRange",
            CounterfactualError::FlipCheckFailed(_) => "FlipCheckFailed",
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<AttributionError> for ApiError {
    fn from(e: AttributionError) -> Self {
        let code = match &e {
            AttributionError::TooManyFeatures(_) => "TooManyFeatures",
            AttributionError::EmptyBackground => "BackgroundRequired",
            AttributionError::SingularFit { .. } => "SingularFit",
            AttributionError::InvalidArgument(_) => "InvalidArgument",
        };
        ApiError::new(code, e.to_string())
    }
}

/// A feature given by index or by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureRef {
    Index(usize),
    Name(String),
}

impl FeatureRef {
    /// Parses a CLI token: a known feature name, else an integer index.
    pub fn parse(token: &str) -> FeatureRef {
        match token.trim().parse() {
            Ok(i) => FeatureRef::Index(i),
            Err(_) => FeatureRef::Name(token.trim().to_string()),
        }
    }
}

pub fn resolve_feature(forest: &Forest, r: &FeatureRef) -> Result<usize, ApiError> {
    match r {
        FeatureRef::Index(i) if *i < forest.n_features() => Ok(*i),
        FeatureRef::Index(i) => Err(ApiError::new(
            "UnknownFeature",
            format!("feature index {i} out of range"),
        )),
        FeatureRef::Name(name) => forest
            .feature_names()
            .iter()
            .position(|n| n == name)
            .or_else(|| name.parse().ok().filter(|&i| i < forest.n_features()))
            .ok_or_else(|| ApiError::new("UnknownFeature", format!("no feature named {name:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub instance: Instance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub class: usize,
    pub votes: Vec<usize>,
    pub vote_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRequest {
    pub instance: Option<Instance>,
    #[serde(default)]
    pub delta0: Option<f64>,
    #[serde(default)]
    pub growth: Option<f64>,
    #[serde(default)]
    pub frozen: Option<Vec<FeatureRef>>,
    #[serde(default)]
    pub max_delta: Option<f64>,
    #[serde(default)]
    pub epsilon_fraction: Option<f64>,
    #[serde(default)]
    pub extrapolate: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodName {
    #[serde(rename = "shapley-exact")]
    ShapleyExact,
    #[serde(rename = "shapley-mc")]
    ShapleyMc,
    #[serde(rename = "lime")]
    Lime,
}

impl std::str::FromStr for MethodName {
    type Err = ApiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shapley-exact" => Ok(MethodName::ShapleyExact),
            "shapley-mc" => Ok(MethodName::ShapleyMc),
            "lime" => Ok(MethodName::Lime),
            _ => Err(ApiError::new(
                "InvalidArgument",
                format!("unknown method {s:?} (expected shapley-exact, shapley-mc or lime)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRequest {
    pub instance: Option<Instance>,
    pub method: MethodName,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n_permutations: Option<usize>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub kernel_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub n_features: usize,
    pub n_classes: usize,
    pub n_trees: usize,
    pub max_depth: usize,
    pub feature_names: Vec<String>,
    pub feature_ranges: Vec<[f64; 2]>,
    pub n_thresholds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub standardized: bool,
    pub features: Vec<FeatureStats>,
}

pub fn dataset_summary(d: &Dataset) -> DatasetSummary {
    let ranges = d.feature_ranges();
    let moments = crate::data::Standardizer::fit(&d.features);
    let mut class_counts = vec![0; d.n_classes()];
    for &l in &d.labels {
        class_counts[l] += 1;
    }
    DatasetSummary {
        n_samples: d.n_samples(),
        n_features: d.n_features(),
        n_classes: d.n_classes(),
        class_names: d.class_names.clone(),
        class_counts,
        standardized: d.standardization.is_some(),
        features: (0..d.n_features())
            .map(|f| FeatureStats {
                name: d.feature_names[f].clone(),
                mean: moments.params.get(f).map_or(0.0, |p| p.0),
                std: moments.params.get(f).map_or(0.0, |p| p.1),
                min: ranges[f].0,
                max: ranges[f].1,
            })
            .collect(),
    }
}

/// Seed for the attribution of point `index` under a run seed.
pub fn point_seed(seed: u64, index: u64) -> u64 {
    SplitMix64::stream(seed, index).next_u64()
}

/// Seeded subsample of at most `size` rows.
pub fn subsample(rows: &[Vec<f64>], size: usize, seed: u64) -> Vec<Vec<f64>> {
    if size >= rows.len() {
        return rows.to_vec();
    }
    let mut idx = shuffled_indices(rows.len(), seed)[..size].to_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| rows[i].clone()).collect()
}

/// A loaded model plus everything derived from it once.
#[derive(Debug, Clone)]
pub struct Engine {
    forest: Forest,
    tmap: ThresholdMap,
    background: Option<Vec<Vec<f64>>>,
}

impl Engine {
    pub fn new(forest: Forest, background: Option<Vec<Vec<f64>>>) -> Self {
        let tmap = extract_thresholds(&forest);
        Engine {
            forest,
            tmap,
            background,
        }
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn thresholds(&self) -> &ThresholdMap {
        &self.tmap
    }

    pub fn background(&self) -> Option<&[Vec<f64>]> {
        self.background.as_deref()
    }

    fn instance(&self, i: &Option<Instance>) -> Result<Instance, ApiError> {
        let i = i
            .clone()
            .ok_or_else(|| ApiError::new("InvalidRequest", "missing field `instance`"))?;
        i.check_len(self.forest.n_features())?;
        Ok(i)
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            n_features: self.forest.n_features(),
            n_classes: self.forest.n_classes(),
            n_trees: self.forest.n_trees(),
            max_depth: self.forest.max_depth(),
            feature_names: self.forest.feature_names().to_vec(),
            feature_ranges: self
                .forest
                .feature_ranges()
                .iter()
                .map(|&(a, b)| [a, b])
                .collect(),
            n_thresholds: self.tmap.thresholds.iter().map(Vec::len).collect(),
        }
    }

    pub fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, ApiError> {
        req.instance.check_len(self.forest.n_features())?;
        let x = req.instance.values();
        Ok(PredictResponse {
            class: self.forest.predict(x),
            votes: self.forest.votes(x),
            vote_fraction: self.forest.vote_fraction(x),
        })
    }

    pub fn query(&self, req: &CounterfactualRequest) -> Result<CounterfactualQuery, ApiError> {
        let mut q = CounterfactualQuery::new(self.instance(&req.instance)?);
        if let Some(v) = req.delta0 {
            q.delta0 = v;
        }
        if let Some(v) = req.growth {
            q.growth = v;
        }
        if let Some(v) = req.max_delta {
            q.max_delta = v;
        }
        if let Some(v) = req.epsilon_fraction {
            q.epsilon_fraction = v;
        }
        if let Some(v) = req.extrapolate {
            q.extrapolate = v;
        }
        let frozen: BTreeSet<usize> = req
            .frozen
            .iter()
            .flatten()
            .map(|r| resolve_feature(&self.forest, r))
            .collect::<Result<_, _>>()?;
        q.frozen_features = frozen;
        Ok(q)
    }

    pub fn counterfactual(
        &self,
        req: &CounterfactualRequest,
        deadline: Option<Instant>,
    ) -> Result<CounterfactualResult, ApiError> {
        let mut q = self.query(req)?;
        q.deadline = deadline;
        Ok(find_min_counterfactual(&self.forest, &self.tmap, &q)?)
    }

    /// Attribution for the point at position `index` of a batch; single
    /// requests use index 0.
    pub fn attribution(
        &self,
        req: &AttributionRequest,
        index: u64,
    ) -> Result<AttributionResult, ApiError> {
        let x = self.instance(&req.instance)?;
        let seed = point_seed(req.seed.unwrap_or(0), index);
        let background = || {
            self.background
                .as_deref()
                .filter(|b| !b.is_empty())
                .ok_or_else(|| {
                    ApiError::new(
                        "BackgroundRequired",
                        "Shapley values need background data (load a dataset)",
                    )
                })
        };
        let r = match req.method {
            MethodName::ShapleyExact => shapley_exact(&self.forest, x.values(), background()?)?,
            MethodName::ShapleyMc => shapley_mc(
                &self.forest,
                x.values(),
                background()?,
                req.n_permutations.unwrap_or(DEFAULT_PERMUTATIONS),
                seed,
            )?,
            MethodName::Lime => lime_lite(
                &self.forest,
                x.values(),
                &LimeConfig {
                    n_samples: req.n_samples.unwrap_or(DEFAULT_LIME_SAMPLES),
                    kernel_width: req.kernel_width,
                    seed,
                    scales: self.background.as_deref().map(|b| {
                        crate::data::Standardizer::fit(b)
                            .params
                            .into_iter()
                            .map(|(_, s)| s)
                            .collect()
                    }),
                },
            )?,
        };
        Ok(r)
    }

    /// Attributions for every row, in parallel; row `i` uses index `i`.
    pub fn attribute_rows(
        &self,
        rows: &[Vec<f64>],
        template: &AttributionRequest,
    ) -> Result<Vec<AttributionResult>, ApiError> {
        rows.par_iter()
            .enumerate()
            .map(|(i, row)| {
                let req = AttributionRequest {
                    instance: Some(Instance::new(row.clone())?),
                    ..template.clone()
                };
                self.attribution(&req, i as u64)
            })
            .collect()
    }

    /// Counterfactuals (and optionally attributions) for a labelled test set,
    /// summarized by cohort.
    pub fn report(
        &self,
        test: &Dataset,
        template: &CounterfactualRequest,
        attributions: Option<&[AttributionResult]>,
    ) -> Result<Report, ApiError> {
        if let Some(a) = attributions.filter(|a| a.len() != test.n_samples()) {
            return Err(ApiError::new(
                "InvalidArgument",
                format!(
                    "{} attributions for {} test points",
                    a.len(),
                    test.n_samples()
                ),
            ));
        }
        for x in &test.features {
            Instance::new(x.clone())?.check_len(self.forest.n_features())?;
        }
        let cfs = self.counterfactual_rows(&test.features, template);
        Ok(build_report(&self.forest, test, &cfs, attributions))
    }

    /// Counterfactuals for every row, in parallel.
    pub fn counterfactual_rows(
        &self,
        rows: &[Vec<f64>],
        template: &CounterfactualRequest,
    ) -> Vec<Result<CounterfactualResult, CounterfactualError>> {
        rows.par_iter()
            .map(|row| {
                let req = CounterfactualRequest {
                    instance: Some(
                        Instance::new(row.clone())
                            .map_err(|e| CounterfactualError::InvalidQuery(e.to_string()))?,
                    ),
                    ..template.clone()
                };
                let q = self
                    .query(&req)
                    .map_err(|e| CounterfactualError::InvalidQuery(e.to_string()))?;
                find_min_counterfactual(&self.forest, &self.tmap, &q)
            })
            .collect()
    }
}
