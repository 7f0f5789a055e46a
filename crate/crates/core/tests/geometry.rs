use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spro_core::geometry::{
    cayley_menger_determinant, hull_distance_and_grad, log_complex_volume, log_simplex_volume,
    log_volume_of_points, sample_from_complex, sample_uniform, sq_distance_matrix, ParamVector,
    Role, Simplex, SimplicialComplex, Vertex, VertexId, VertexStore,
};

/// Determinant by Gaussian elimination with partial pivoting.
fn det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            d = -d;
        }
        d *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    d
}

/// `√det(EEᵀ) / k!` from the edge vectors out of the first vertex.
fn gram_volume(points: &[Vec<f64>]) -> f64 {
    let k = points.len() - 1;
    let edges: Vec<Vec<f64>> = points[1..]
        .iter()
        .map(|p| p.iter().zip(&points[0]).map(|(a, b)| a - b).collect())
        .collect();
    let gram: Vec<Vec<f64>> = edges
        .iter()
        .map(|a| {
            edges
                .iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect();
    let fact: f64 = (1..=k).map(|i| i as f64).product();
    det(gram).max(0.0).sqrt() / fact
}

fn log_vol(points: &[Vec<f64>]) -> f64 {
    let refs: Vec<&[f64]> = points.iter().map(|p| p.as_slice()).collect();
    log_volume_of_points(&refs).unwrap().log_volume
}

fn store_and_simplex(points: &[Vec<f64>]) -> (VertexStore, Simplex) {
    let mut store = VertexStore::new();
    let mut ids = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let id = VertexId(format!("v{i}"));
        store
            .insert(
                id.clone(),
                Vertex {
                    values: ParamVector(p.clone()),
                    role: Role::Mode,
                    trainable: false,
                },
            )
            .unwrap();
        ids.push(id);
    }
    (store, Simplex::new(ids).unwrap())
}

fn points_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 0usize..4).prop_flat_map(|(k, extra)| {
        let dim = k + extra;
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), k + 1)
    })
}

/// Random orthogonal matrix from Gram-Schmidt on a seeded Gaussian matrix.
fn rotation(dim: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for b in &q {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

#[test]
fn analytic_volumes() {
    let cases: Vec<(Vec<Vec<f64>>, f64)> = vec![
        (vec![vec![0.0], vec![1.0]], 1.0),
        (
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]],
            3f64.sqrt() / 4.0,
        ),
        (
            vec![
                vec![1.0, 1.0, 1.0],
                vec![1.0, -1.0, -1.0],
                vec![-1.0, 1.0, -1.0],
                vec![-1.0, -1.0, 1.0],
            ],
            // edge 2√2: a³ / (6√2)
            (2.0 * 2f64.sqrt()).powi(3) / (6.0 * 2f64.sqrt()),
        ),
    ];
    for (points, expected) in cases {
        let v = log_vol(&points).exp();
        assert!(
            ((v - expected) / expected).abs() < 1e-10,
            "{v} vs {expected}"
        );
    }
}

#[test]
fn bordered_determinant_gives_volume() {
    let points = [
        vec![0.0, 0.0, 0.0],
        vec![2.0, 0.0, 0.0],
        vec![0.0, 3.0, 0.0],
        vec![0.0, 0.0, 4.0],
    ];
    let refs: Vec<&[f64]> = points.iter().map(|p| p.as_slice()).collect();
    let cm = cayley_menger_determinant(&sq_distance_matrix(&refs).unwrap());
    // V² = (−1)^{k+1} CM / (2^k (k!)²) with k = 3
    let v2 = cm / (8.0 * 36.0);
    assert!((v2.sqrt() - 4.0).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_gram_oracle(points in points_strategy()) {
        let oracle = gram_volume(&points);
        prop_assume!(oracle > 1e-6);
        let got = log_vol(&points);
        prop_assert!((got - oracle.ln()).abs() < 1e-8, "{} vs {}", got, oracle.ln());
    }

    #[test]
    fn invariant_under_rigid_motion_and_relabeling(
        points in points_strategy(),
        shift in -5.0f64..5.0,
        seed in any::<u64>(),
    ) {
        prop_assume!(gram_volume(&points) > 1e-6);
        let dim = points[0].len();
        let q = rotation(dim, seed);
        let moved: Vec<Vec<f64>> = points
            .iter()
            .rev()
            .map(|p| q.iter().map(|row| row.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() + shift).collect())
            .collect();
        prop_assert!((log_vol(&points) - log_vol(&moved)).abs() < 1e-8);
    }

    #[test]
    fn scaling_multiplies_volume_by_c_to_the_k(points in points_strategy(), c in 0.01f64..100.0) {
        prop_assume!(gram_volume(&points) > 1e-6);
        let k = (points.len() - 1) as f64;
        let scaled: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|x| c * x).collect()).collect();
        prop_assert!((log_vol(&scaled) - log_vol(&points) - k * c.ln()).abs() < 1e-8);
    }

    #[test]
    fn volume_is_base_times_height_over_k(points in points_strategy()) {
        prop_assume!(points.len() >= 3 && gram_volume(&points) > 1e-6);
        let k = (points.len() - 1) as f64;
        let (theta, base) = points.split_last().unwrap();
        let base_refs: Vec<&[f64]> = base.iter().map(|p| p.as_slice()).collect();
        let hull = hull_distance_and_grad(theta, &base_refs).unwrap();
        let recursion = log_vol(base) + hull.distance.ln() - k.ln();
        prop_assert!((log_vol(&points) - recursion).abs() < 1e-6);
    }

    #[test]
    fn hull_gradient_matches_finite_differences(points in points_strategy(), i in 0usize..8) {
        prop_assume!(points.len() >= 3 && gram_volume(&points) > 1e-3);
        let (theta, base) = points.split_last().unwrap();
        let base_refs: Vec<&[f64]> = base.iter().map(|p| p.as_slice()).collect();
        let grad = hull_distance_and_grad(theta, &base_refs).unwrap().grad;
        let i = i % theta.len();
        let eps = 1e-6;
        let at = |d: f64| {
            let mut p = points.clone();
            p.last_mut().unwrap()[i] += d;
            log_vol(&p)
        };
        let fd = (at(eps) - at(-eps)) / (2.0 * eps);
        prop_assert!((fd - grad[i]).abs() <= 1e-5 * (1.0 + grad[i].abs()), "{} vs {}", fd, grad[i]);
    }

    #[test]
    fn samples_are_convex_combinations(points in points_strategy(), seed in any::<u64>()) {
        let (store, simplex) = store_and_simplex(&points);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let (phi, w) = sample_uniform(&simplex, &store, &mut rng).unwrap();
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (d, &got) in phi.iter().enumerate() {
                let expect: f64 = points.iter().zip(w.iter()).map(|(p, b)| b * p[d]).sum();
                prop_assert!((got - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn complex_volume_is_sum_of_simplex_volumes(a in points_strategy(), seed in any::<u64>()) {
        prop_assume!(gram_volume(&a) > 1e-6);
        let dim = a[0].len();
        let q = rotation(dim, seed);
        // A second simplex sharing vertex v0 with the first.
        let mut b = vec![a[0].clone()];
        b.extend(a[1..].iter().map(|p| q.iter().map(|row| row.iter().zip(p).map(|(x, y)| x * y).sum()).collect()));
        let mut store = VertexStore::new();
        let mut ids_a = Vec::new();
        let mut ids_b = vec![VertexId::from("a0")];
        for (i, p) in a.iter().enumerate() {
            store.insert(VertexId(format!("a{i}")), Vertex { values: ParamVector(p.clone()), role: Role::Mode, trainable: false }).unwrap();
            ids_a.push(VertexId(format!("a{i}")));
        }
        for (i, p) in b.iter().enumerate().skip(1) {
            store.insert(VertexId(format!("b{i}")), Vertex { values: ParamVector(p.clone()), role: Role::Connector, trainable: false }).unwrap();
            ids_b.push(VertexId(format!("b{i}")));
        }
        let complex = SimplicialComplex::new(store, vec![Simplex::new(ids_a).unwrap(), Simplex::new(ids_b).unwrap()]).unwrap();
        let expect = (gram_volume(&a) + gram_volume(&b)).ln();
        let got = log_complex_volume(&complex).unwrap();
        prop_assert!((got - expect).abs() < 1e-8);
        let samples = sample_from_complex(&complex, &mut ChaCha8Rng::seed_from_u64(seed), 3).unwrap();
        prop_assert_eq!(samples.len(), 6);
        prop_assert!(samples[..3].iter().all(|s| s.simplex_index == 0));
    }
}

#[test]
fn collinear_triangle_is_degenerate() {
    let points = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
    let (store, simplex) = store_and_simplex(&points);
    assert!(log_simplex_volume(&simplex, &store)
        .unwrap()
        .is_degenerate());
}

#[test]
fn triangle_sample_statistics() {
    // Right triangle (0,0), (1,0), (0,1): centroid (1/3, 1/3); the corner
    // triangle x + y < 1/2 holds a quarter of the area.
    let points = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
    let (store, simplex) = store_and_simplex(&points);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let (mut sx, mut sy, mut inner) = (0.0, 0.0, 0usize);
    for _ in 0..n {
        let (p, _) = sample_uniform(&simplex, &store, &mut rng).unwrap();
        sx += p[0];
        sy += p[1];
        if p[0] + p[1] < 0.5 {
            inner += 1;
        }
    }
    assert!((sx / n as f64 - 1.0 / 3.0).abs() < 0.01);
    assert!((sy / n as f64 - 1.0 / 3.0).abs() < 0.01);
    assert!((inner as f64 / n as f64 - 0.25).abs() < 0.01);
}
