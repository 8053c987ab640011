use std::time::Instant;

use forestsat::counterfactual::{find_min_counterfactuals, CounterfactualQuery};
use forestsat::data::{load_csv, split, Dataset};
use forestsat::encode::extract_thresholds;
use forestsat::forest::{Forest, Instance};
use forestsat::train::{accuracy, train_forest, TrainConfig};

fn load() -> Dataset {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/breast_cancer.csv");
    load_csv(path, "diagnosis").unwrap()
}

#[test]
fn dataset_shape_and_split() {
    let d = load();
    assert_eq!(d.n_samples(), 569);
    assert_eq!(d.n_features(), 30);
    assert_eq!(d.class_names.len(), 2);
    let (train, test) = split(&d, 0.5, 0);
    assert_eq!((train.n_samples(), test.n_samples()), (285, 284));
    for f in 0..30 {
        let col: Vec<f64> = train.column(f).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn training_is_accurate_and_deterministic() {
    let (train, test) = split(&load(), 0.5, 0);
    let cfg = TrainConfig::default();
    let a = train_forest(&train, &cfg).unwrap();
    let b = train_forest(&train, &cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert!(a.max_depth() <= 10);
    let acc = accuracy(&a, &test);
    assert!(acc >= 0.90, "accuracy {acc}");

    let back = Forest::from_json(&a.to_json()).unwrap();
    for x in &test.features {
        assert_eq!(back.predict(x), a.predict(x));
    }
}

#[test]
fn every_test_point_gets_a_flip() {
    let (train, test) = split(&load(), 0.5, 0);
    let f = train_forest(&train, &TrainConfig::default()).unwrap();
    let tm = extract_thresholds(&f);
    let queries: Vec<CounterfactualQuery> = test
        .features
        .iter()
        .map(|x| CounterfactualQuery::new(Instance::new(x.clone()).unwrap()))
        .collect();
    let start = Instant::now();
    let results = find_min_counterfactuals(&f, &tm, &queries);
    eprintln!("{} counterfactuals in {:?}", results.len(), start.elapsed());
    for (x, r) in test.features.iter().zip(&results) {
        let r = r.as_ref().unwrap();
        assert_eq!(r.original_class, f.predict(x));
        assert_ne!(f.predict(r.counterexample.values()), r.original_class);
        assert!(!r.changes.is_empty());
    }
}
