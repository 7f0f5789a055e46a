use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spro_core::ensemble::{draw_members, predict, predict_members, EnsembleConfig, Prediction};
use spro_core::geometry::{
    ParamVector, Role, Simplex, SimplicialComplex, Vertex, VertexId, VertexStore,
};
use spro_core::metrics::{evaluate, fit_temperature, nll};
use spro_core::netcore::{predict_proba, Activation, Matrix, ModelSpec};

fn spec() -> ModelSpec {
    ModelSpec::classifier(vec![2, 5, 3], Activation::Tanh)
}

fn complex(points: &[Vec<f64>], simplexes: &[&[usize]]) -> SimplicialComplex {
    let mut store = VertexStore::new();
    for (i, p) in points.iter().enumerate() {
        store
            .insert(
                VertexId(format!("v{i}")),
                Vertex {
                    values: ParamVector(p.clone()),
                    role: Role::Mode,
                    trainable: false,
                },
            )
            .unwrap();
    }
    let simplexes = simplexes
        .iter()
        .map(|s| Simplex::new(s.iter().map(|i| VertexId(format!("v{i}"))).collect()).unwrap())
        .collect();
    SimplicialComplex::new(store, simplexes).unwrap()
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn probs(p: Prediction) -> Matrix {
    match p {
        Prediction::Probabilities(m) => m,
        Prediction::Regression(_) => panic!("expected probabilities"),
    }
}

#[test]
fn zero_simplexes_reproduce_single_models_and_deep_ensembles() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = spec();
    let a = normal(&mut rng, spec.param_count());
    let b = normal(&mut rng, spec.param_count());
    let inputs = Matrix::new(20, 2, normal(&mut rng, 40));
    let config = EnsembleConfig {
        j_samples_per_simplex: 25,
        seed: 4,
    };

    let single = probs(
        predict(
            &complex(std::slice::from_ref(&a), &[&[0]]),
            &spec,
            &inputs,
            &config,
        )
        .unwrap(),
    );
    assert_eq!(single, predict_proba(&spec, &a, &inputs).unwrap());

    let pair = probs(
        predict(
            &complex(&[a.clone(), b.clone()], &[&[0], &[1]]),
            &spec,
            &inputs,
            &config,
        )
        .unwrap(),
    );
    let pa = predict_proba(&spec, &a, &inputs).unwrap();
    let pb = predict_proba(&spec, &b, &inputs).unwrap();
    for ((got, x), y) in pair.data.iter().zip(&pa.data).zip(&pb.data) {
        assert!((got - 0.5 * (x + y)).abs() < 1e-15);
    }
}

#[test]
fn every_simplex_gets_an_equal_share() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = spec().param_count();
    let points: Vec<Vec<f64>> = (0..4).map(|_| normal(&mut rng, n)).collect();
    let k = complex(&points, &[&[0], &[0, 1, 2], &[2, 3]]);
    let members = draw_members(
        &k,
        &spec(),
        &EnsembleConfig {
            j_samples_per_simplex: 10,
            seed: 0,
        },
    )
    .unwrap();
    assert_eq!(members.len(), 21);
    for s in 0..3 {
        let share: f64 = members
            .iter()
            .filter(|m| m.simplex_index == s)
            .map(|m| m.weight)
            .sum();
        assert!((share - 1.0 / 3.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ensemble_nll_never_exceeds_mean_member_nll(seed in any::<u64>(), j in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = spec();
        let points: Vec<Vec<f64>> = (0..3).map(|_| normal(&mut rng, spec.param_count())).collect();
        let k = complex(&points, &[&[0, 1], &[1, 2]]);
        let inputs = Matrix::new(30, 2, normal(&mut rng, 60));
        let targets: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
        let members = draw_members(&k, &spec, &EnsembleConfig { j_samples_per_simplex: j, seed }).unwrap();
        let ensemble = probs(predict_members(&spec, &members, &inputs).unwrap());
        let mut mean_member = 0.0;
        for m in &members {
            mean_member += m.weight * nll(&predict_proba(&spec, &m.params, &inputs).unwrap(), &targets).unwrap();
        }
        let got = nll(&ensemble, &targets).unwrap();
        prop_assert!(got <= mean_member + 1e-12, "{} > {}", got, mean_member);
        for r in 0..30 {
            prop_assert!((ensemble.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

/// Equal-width reliability bins over the top-class confidence.
fn oracle_ece(probs: &Matrix, targets: &[usize], bins: usize) -> f64 {
    let mut groups: Vec<Vec<(f64, bool)>> = vec![Vec::new(); bins];
    for (r, &t) in targets.iter().enumerate() {
        let row = probs.row(r);
        let mut best = 0;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        let b = ((row[best] * bins as f64).floor() as usize).min(bins - 1);
        groups[b].push((row[best], best == t));
    }
    let n = targets.len() as f64;
    groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let m = g.len() as f64;
            let conf = g.iter().map(|x| x.0).sum::<f64>() / m;
            let acc = g.iter().filter(|x| x.1).count() as f64 / m;
            m / n * (acc - conf).abs()
        })
        .sum()
}

#[test]
fn ece_matches_oracle_binning() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 500;
    let logits = Matrix::new(
        n,
        4,
        normal(&mut rng, 4 * n).iter().map(|z| 2.0 * z).collect(),
    );
    let probs = spro_core::netcore::softmax_rows(&logits);
    let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let report = evaluate(&probs, &targets).unwrap();
    assert!((report.ece - oracle_ece(&probs, &targets, 15)).abs() < 1e-12);
    assert_eq!(report.bins.iter().map(|b| b.count).sum::<usize>(), n);
}

#[test]
fn calibrated_predictor_has_near_zero_ece() {
    // Labels drawn from the predicted distribution itself.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let logits = Matrix::new(
        n,
        3,
        normal(&mut rng, 3 * n).iter().map(|z| 1.5 * z).collect(),
    );
    let probs = spro_core::netcore::softmax_rows(&logits);
    let targets: Vec<usize> = (0..n)
        .map(|r| {
            let u: f64 = rng.random();
            let row = probs.row(r);
            if u < row[0] {
                0
            } else if u < row[0] + row[1] {
                1
            } else {
                2
            }
        })
        .collect();
    let ece = evaluate(&probs, &targets).unwrap().ece;
    assert!(ece < 0.01, "ece {ece}");

    let doubled = Matrix::new(n, 3, logits.data.iter().map(|z| 2.0 * z).collect());
    let t = fit_temperature(&doubled, &targets).unwrap().temperature;
    assert!((t - 2.0).abs() < 0.05, "temperature {t}");
}
