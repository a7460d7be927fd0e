mod common;

use std::collections::BTreeMap;

use flakecat::classify::{
    fit, forest_fit, forest_predict, knn_predict, svm_decision_function, svm_fit, ClassifierConfig, ForestConfig,
    Kernel, KnnConfig, SvmConfig, TrainedModel,
};
use ndarray::{s, Array2};

use common::{blobs, dist2, random_labels, uniform};

fn brute_knn(train: &Array2<f64>, labels: &[usize], q: &[f64], k: usize) -> usize {
    let mut all: Vec<(f64, usize)> = (0..train.nrows())
        .map(|i| (dist2(&train.row(i).to_vec(), q), i))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let nearest = &all[..k];
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for &(_, i) in nearest {
        *votes.entry(labels[i]).or_default() += 1;
    }
    let top = *votes.values().max().unwrap();
    // among tied classes, the one holding the nearest neighbour
    nearest
        .iter()
        .map(|&(_, i)| labels[i])
        .find(|c| votes[c] == top)
        .unwrap()
}

#[test]
fn knn_matches_brute_force_vote() {
    let x = uniform(200, 3, 11);
    let y = random_labels(200, 4, 12);
    let (train, test) = (x.slice(s![..150, ..]).to_owned(), x.slice(s![150.., ..]).to_owned());
    for k in [1, 2, 5, 10] {
        let got = knn_predict(train.view(), &y[..150], test.view(), &KnnConfig { k }).unwrap();
        let want: Vec<usize> = (0..test.nrows())
            .map(|i| brute_knn(&train, &y[..150], &test.row(i).to_vec(), k))
            .collect();
        assert_eq!(got, want, "k = {k}");
    }
}

#[test]
fn knn_on_a_grid_breaks_distance_ties_by_index() {
    // integer grid: many equal distances
    let x = Array2::from_shape_fn((36, 2), |(i, j)| if j == 0 { (i % 6) as f64 } else { (i / 6) as f64 });
    let y = random_labels(36, 3, 5);
    let q = Array2::from_shape_fn((25, 2), |(i, j)| 0.5 + if j == 0 { (i % 5) as f64 } else { (i / 5) as f64 });
    for k in [2, 4, 7] {
        let got = knn_predict(x.view(), &y, q.view(), &KnnConfig { k }).unwrap();
        let want: Vec<usize> = (0..q.nrows()).map(|i| brute_knn(&x, &y, &q.row(i).to_vec(), k)).collect();
        assert_eq!(got, want, "k = {k}");
    }
}

#[test]
fn one_nn_reproduces_training_labels() {
    let x = uniform(80, 4, 3);
    let y = random_labels(80, 5, 4);
    assert_eq!(knn_predict(x.view(), &y, x.view(), &KnnConfig { k: 1 }).unwrap(), y);
}

fn configs() -> Vec<ClassifierConfig> {
    vec![
        ClassifierConfig::Knn(KnnConfig { k: 5 }),
        ClassifierConfig::Svm(SvmConfig::new(Kernel::Rbf, 10.0)),
        ClassifierConfig::Svm(SvmConfig::new(Kernel::Linear, 1.0)),
        ClassifierConfig::Forest(ForestConfig {
            n_estimators: 30,
            seed: 9,
            ..ForestConfig::default()
        }),
    ]
}

#[test]
fn relabeling_classes_relabels_predictions() {
    let (x, y) = blobs(4, 25, 5, 8.0, 21);
    let (q, _) = blobs(4, 10, 5, 8.0, 22);
    let perm = [2usize, 0, 3, 1];
    let y_perm: Vec<usize> = y.iter().map(|&c| perm[c]).collect();
    for cfg in configs() {
        let a = fit(x.view(), &y, &cfg).unwrap().predict(q.view()).unwrap();
        let b = fit(x.view(), &y_perm, &cfg).unwrap().predict(q.view()).unwrap();
        let mapped: Vec<usize> = a.iter().map(|&c| perm[c]).collect();
        assert_eq!(mapped, b, "{}", cfg.name());
    }
}

#[test]
fn predictions_stay_within_training_classes() {
    let x = uniform(60, 3, 8);
    // codes 1, 4 and 6 only
    let y: Vec<usize> = random_labels(60, 3, 9).into_iter().map(|c| [1, 4, 6][c]).collect();
    let q = uniform(100, 3, 10);
    for cfg in configs() {
        let pred = fit(x.view(), &y, &cfg).unwrap().predict(q.view()).unwrap();
        assert!(pred.iter().all(|c| [1, 4, 6].contains(c)), "{}", cfg.name());
    }
    let model = forest_fit(x.view(), &y, &ForestConfig::default()).unwrap();
    assert!(forest_predict(&model, q.view()).unwrap().iter().all(|c| [1, 4, 6].contains(c)));
}

#[test]
fn svm_decision_values_flip_with_swapped_labels() {
    let (x, y) = blobs(2, 30, 3, 2.5, 31);
    let swapped: Vec<usize> = y.iter().map(|&c| 1 - c).collect();
    let q = uniform(40, 3, 32).mapv(|v| v * 6.0 - 3.0);
    for kernel in [Kernel::Linear, Kernel::Rbf, Kernel::Poly] {
        let cfg = SvmConfig::new(kernel, 1.0);
        let a = svm_decision_function(&svm_fit(x.view(), &y, &cfg).unwrap(), q.view()).unwrap();
        let b = svm_decision_function(&svm_fit(x.view(), &swapped, &cfg).unwrap(), q.view()).unwrap();
        // the two solves stop at different points inside the 1e-3 KKT tolerance
        for i in 0..q.nrows() {
            for (u, v) in [(a[[i, 0]], b[[i, 0]]), (a[[i, 0]], a[[i, 1]])] {
                assert!((u + v).abs() < 1e-2, "{kernel:?}: {u} vs {v}");
                if u.abs() > 1e-2 {
                    assert_eq!(u.signum(), -v.signum());
                }
            }
        }
    }
}

#[test]
fn saved_models_predict_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = blobs(3, 20, 4, 6.0, 41);
    let q = uniform(30, 4, 42);
    for (i, cfg) in configs().iter().enumerate() {
        let model = fit(x.view(), &y, cfg).unwrap();
        let path = dir.path().join(format!("m{i}.json"));
        model.save(&path).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back.predict(q.view()).unwrap(), model.predict(q.view()).unwrap());
    }
}
