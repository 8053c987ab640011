//! Per-point explanation records and cohort summaries of counterfactual
//! percent changes, split by whether the model got the point right.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionResult;
use crate::counterfactual::{CounterfactualError, CounterfactualResult};
use crate::data::Dataset;
use crate::forest::Forest;

pub const HISTOGRAM_LOW: f64 = -100.0;
pub const HISTOGRAM_BINS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    Misclassified,
    Correct,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Misclassified => "misclassified",
            Cohort::Correct => "correct",
        }
    }
}

/// Unit-width bins over `[-100, 100)`; out-of-range values are clamped into
/// the edge bins so the mass always equals the sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub low: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new() -> Self {
        Histogram {
            low: HISTOGRAM_LOW,
            bin_width: 1.0,
            counts: vec![0; HISTOGRAM_BINS],
        }
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let b = ((v - self.low) / self.bin_width).floor();
        b.clamp(0.0, (self.counts.len() - 1) as f64) as usize
    }

    pub fn add(&mut self, v: f64) {
        let b = self.bin_of(v);
        self.counts[b] += 1;
    }

    pub fn mass(&self) -> usize {
        self.counts.iter().sum()
    }
}

impl Default for Histogram {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub feature_index: usize,
    pub name: String,
    pub samples: Vec<f64>,
    pub histogram: Histogram,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
}

impl FeatureSummary {
    pub fn iqr(&self) -> Option<f64> {
        Some(self.q3? - self.q1?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub cohort: Cohort,
    pub n_points: usize,
    pub n_changes: usize,
    pub features: Vec<FeatureSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub index: usize,
    pub prediction: usize,
    pub true_label: usize,
    pub correct: bool,
    pub counterfactual: Option<CounterfactualResult>,
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attribution_ranking: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_points: usize,
    pub accuracy: f64,
    pub warnings: Vec<String>,
    pub points: Vec<PointRecord>,
    pub misclassified: CohortSummary,
    pub correct: CohortSummary,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

fn summarize(cohort: Cohort, forest: &Forest, points: &[&PointRecord]) -> CohortSummary {
    let mut per_feature: Vec<Vec<f64>> = vec![Vec::new(); forest.n_features()];
    for p in points {
        if let Some(cf) = &p.counterfactual {
            for c in &cf.changes {
                per_feature[c.feature_index].push(c.percent_change_of_range);
            }
        }
    }
    let features: Vec<FeatureSummary> = per_feature
        .into_iter()
        .enumerate()
        .map(|(f, samples)| {
            let mut histogram = Histogram::new();
            samples.iter().for_each(|&v| histogram.add(v));
            let mut sorted = samples.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            FeatureSummary {
                feature_index: f,
                name: forest.feature_names()[f].clone(),
                q1: quantile(&sorted, 0.25),
                median: quantile(&sorted, 0.5),
                q3: quantile(&sorted, 0.75),
                samples,
                histogram,
            }
        })
        .collect();
    CohortSummary {
        cohort,
        n_points: points.len(),
        n_changes: features.iter().map(|f| f.samples.len()).sum(),
        features,
    }
}

/// Assembles the report. `cf_results[i]` and `attributions[i]` belong to test
/// row `i`.
pub fn build_report(
    forest: &Forest,
    test: &Dataset,
    cf_results: &[Result<CounterfactualResult, CounterfactualError>],
    attributions: Option<&[AttributionResult]>,
) -> Report {
    assert_eq!(
        cf_results.len(),
        test.n_samples(),
        "one counterfactual result per test point"
    );
    if let Some(a) = attributions {
        assert_eq!(a.len(), test.n_samples(), "one attribution per test point");
    }
    let points: Vec<PointRecord> = test
        .features
        .iter()
        .zip(&test.labels)
        .zip(cf_results)
        .enumerate()
        .map(|(index, ((x, &label), cf))| {
            let prediction = forest.predict(x);
            let (counterfactual, error) = match cf {
                Ok(r) => (Some(r.clone()), None),
                Err(e) => (None, Some(e.to_string())),
            };
            PointRecord {
                index,
                prediction,
                true_label: label,
                correct: prediction == label,
                counterfactual,
                error,
                attribution_ranking: attributions.map(|a| a[index].ranking.clone()),
            }
        })
        .collect();

    let wrong: Vec<&PointRecord> = points.iter().filter(|p| !p.correct).collect();
    let right: Vec<&PointRecord> = points.iter().filter(|p| p.correct).collect();
    let mut warnings = Vec::new();
    if wrong.is_empty() {
        warnings.push("CohortEmpty: no misclassified test points".to_string());
    }
    if right.is_empty() {
        warnings.push("CohortEmpty: no correctly classified test points".to_string());
    }
    let failed = points.iter().filter(|p| p.error.is_some()).count();
    if failed > 0 {
        warnings.push(format!("{failed} point(s) have no counterfactual"));
    }
    let misclassified = summarize(Cohort::Misclassified, forest, &wrong);
    let correct = summarize(Cohort::Correct, forest, &right);
    Report {
        n_points: points.len(),
        accuracy: right.len() as f64 / points.len().max(1) as f64,
        warnings,
        points,
        misclassified,
        correct,
    }
}

impl Report {
    /// Raw percent-change samples, one row per (point, changed feature).
    pub fn samples_csv(&self) -> String {
        let mut out = String::from("cohort,point,feature_index,feature,percent_change\n");
        for p in &self.points {
            let cohort = if p.correct {
                Cohort::Correct
            } else {
                Cohort::Misclassified
            };
            if let Some(cf) = &p.counterfactual {
                for c in &cf.changes {
                    let name = if c.name.contains([',', '"']) {
                        format!("\"{}\"", c.name.replace('"', "\"\""))
                    } else {
                        c.name.clone()
                    };
                    writeln!(
                        out,
                        "{},{},{},{},{:?}",
                        cohort.as_str(),
                        p.index,
                        c.feature_index,
                        name,
                        c.percent_change_of_range
                    )
                    .unwrap();
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterfactual::FeatureChange;
    use crate::forest::tests::{forest_of, stump};
    use crate::forest::Instance;

    fn data(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Dataset {
        Dataset {
            feature_names: (0..rows[0].len()).map(|i| format!("f{i}")).collect(),
            features: rows,
            labels,
            class_names: vec!["0".into(), "1".into()],
            label_column: "label".into(),
            standardization: None,
        }
    }

    fn cf(feature: usize, pct: f64) -> CounterfactualResult {
        CounterfactualResult {
            original_class: 0,
            new_class: 1,
            final_delta: 0.05,
            iterations: 3,
            changes: vec![FeatureChange {
                feature_index: feature,
                name: format!("f{feature}"),
                original_value: 0.0,
                new_value: 0.0,
                crossed_thresholds: vec![],
                percent_change_of_range: pct,
            }],
            counterexample: Instance::new(vec![0.0]).unwrap(),
        }
    }

    #[test]
    fn perfect_model_warns_about_empty_cohort() {
        let f = forest_of(vec![stump(0, 0.5, 0, 1)], 1);
        let d = data(vec![vec![0.1], vec![0.9]], vec![0, 1]);
        let r = build_report(&f, &d, &[Ok(cf(0, 40.0)), Ok(cf(0, -40.0))], None);
        assert_eq!(r.correct.n_points, 2);
        assert_eq!(r.misclassified.n_points, 0);
        assert!(r.warnings.iter().any(|w| w.starts_with("CohortEmpty")));
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn single_misclassified_point_histogram() {
        let f = forest_of(vec![stump(0, 0.5, 0, 1)], 1);
        let d = data(vec![vec![0.1]], vec![1]);
        let r = build_report(&f, &d, &[Ok(cf(0, 5.0))], None);
        let h = &r.misclassified.features[0].histogram;
        assert_eq!(h.mass(), 1);
        assert_eq!(h.counts[105], 1);
        assert_eq!(r.misclassified.n_changes, 1);
        assert!(r.samples_csv().ends_with("misclassified,0,0,f0,5.0\n"));
    }

    #[test]
    fn histogram_edges() {
        let mut h = Histogram::new();
        h.add(-100.0);
        h.add(100.0);
        h.add(250.0);
        h.add(-0.5);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[199], 2);
        assert_eq!(h.counts[99], 1);
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), Some(2.5));
        assert_eq!(quantile(&s, 0.25), Some(1.75));
        assert_eq!(quantile(&[], 0.5), None);
    }
}
