mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use teleop_core::retrieval::{
    condition_lookup, index_build, knn_query, Embedder, FeatureVector, GridEmbedder, SceneSummary,
};

/// Brute-force scan: full sort by (distance, id), majority vote, ties to the
/// label that appears first in that order.
fn brute_force(corpus: &[FeatureVector], q: &[f64], n: usize) -> (Vec<String>, String) {
    let unit = |v: &[f64]| {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / norm).collect::<Vec<_>>()
    };
    let q = unit(q);
    let mut scored: Vec<(f64, &FeatureVector)> = corpus
        .iter()
        .map(|f| {
            let u = unit(&f.values);
            let d = u.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            (d, f)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.episode_id.cmp(&b.1.episode_id)));
    let top = &scored[..n];
    let count = |label: &str| top.iter().filter(|(_, f)| f.task_label == label).count();
    let best = top.iter().map(|(_, f)| count(&f.task_label)).max().unwrap();
    let chosen = top.iter().find(|(_, f)| count(&f.task_label) == best).unwrap().1;
    (
        top.iter().map(|(_, f)| f.episode_id.clone()).collect(),
        chosen.episode_id.clone(),
    )
}

fn random_corpus(rng: &mut impl Rng, size: usize, dim: usize, labels: usize) -> Vec<FeatureVector> {
    (0..size)
        .map(|i| {
            let values = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            FeatureVector::new(format!("ep{i:05}"), format!("task{}", rng.gen_range(0..labels)), values)
        })
        .collect()
}

#[test]
fn matches_brute_force_on_large_corpora() {
    let mut rng = common::rng(99);
    for &(size, dim) in &[(10usize, 4usize), (1000, 16), (10_000, 64)] {
        let corpus = random_corpus(&mut rng, size, dim, 4);
        let index = index_build(corpus.clone()).unwrap();
        for n in [1, 3, 5, 10.min(size)] {
            let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = knn_query(&index, &q, n).unwrap();
            let (ids, chosen) = brute_force(&corpus, &q, n);
            let got_ids: Vec<_> = got.neighbors.iter().map(|nb| nb.episode_id.clone()).collect();
            assert_eq!(got_ids, ids);
            assert_eq!(got.chosen_episode_id, chosen);
        }
    }
}

#[test]
fn label_ties_go_to_the_closer_label() {
    // Two "a" and two "b" neighbors; the nearest is "b".
    let corpus = vec![
        FeatureVector::new("e1", "a", vec![1.0, 0.30]),
        FeatureVector::new("e2", "b", vec![1.0, 0.05]),
        FeatureVector::new("e3", "a", vec![1.0, -0.20]),
        FeatureVector::new("e4", "b", vec![1.0, 0.40]),
        FeatureVector::new("e5", "c", vec![-1.0, 0.0]),
    ];
    let index = index_build(corpus.clone()).unwrap();
    let got = knn_query(&index, &[1.0, 0.0], 4).unwrap();
    assert_eq!(got.chosen_label, "b");
    assert_eq!(got.chosen_episode_id, "e2");
    assert_eq!(brute_force(&corpus, &[1.0, 0.0], 4).1, "e2");
}

#[test]
fn equal_distances_break_by_id() {
    let corpus = vec![
        FeatureVector::new("z", "a", vec![0.0, 1.0]),
        FeatureVector::new("m", "b", vec![0.0, -1.0]),
    ];
    let index = index_build(corpus).unwrap();
    let got = knn_query(&index, &[1.0, 0.0], 2).unwrap();
    assert_eq!(got.neighbors[0].episode_id, "m");
    assert_eq!(got.chosen_episode_id, "m");
}

#[test]
fn lookup_recovers_the_perturbed_episode() {
    let mut rng = common::rng(41);
    let embedder = GridEmbedder::default();
    let scenes: Vec<SceneSummary> = (0..50)
        .map(|_| SceneSummary::new(16, 12, (0..192).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap())
        .collect();
    let corpus: Vec<FeatureVector> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            FeatureVector::new(
                format!("ep{i:02}"),
                format!("task{}", i % 5),
                embedder.embed(s).unwrap(),
            )
        })
        .collect();
    let index = index_build(corpus).unwrap();
    for (i, s) in scenes.iter().enumerate() {
        let noisy = SceneSummary::new(
            16,
            12,
            s.values.iter().map(|v| v + rng.gen_range(-1e-3..1e-3)).collect(),
        )
        .unwrap();
        let got = condition_lookup(&noisy, &embedder, &index, 1).unwrap();
        assert_eq!(got.chosen_episode_id, format!("ep{i:02}"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn insertion_order_does_not_matter(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = common::rng(seed);
        let corpus = random_corpus(&mut rng, 40, 6, 3);
        let mut shuffled = corpus.clone();
        shuffled.shuffle(&mut rng);
        let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = knn_query(&index_build(corpus.clone()).unwrap(), &q, n).unwrap();
        let b = knn_query(&index_build(shuffled).unwrap(), &q, n).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.neighbors.iter().any(|nb| nb.episode_id == a.chosen_episode_id));
        let (ids, chosen) = brute_force(&corpus, &q, n);
        prop_assert_eq!(a.neighbors.iter().map(|nb| nb.episode_id.clone()).collect::<Vec<_>>(), ids);
        prop_assert_eq!(a.chosen_episode_id, chosen);
    }
}
