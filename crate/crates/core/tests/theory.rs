use citegcl::losses::theory::{
    fixed_point_bipartite, fixed_point_citation, ns_objective_bipartite, ns_objective_citation_expanded,
    random_bipartite_problem, random_citation_problem, verify_factorization, BipartiteProblem, FactorizationProblem,
    VerifyOptions,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ln_sigmoid(x: f64) -> f64 {
    (1.0 / (1.0 + (-x).exp())).ln()
}

fn random_reps(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |_| rng.random_range(-1.0..1.0))
}

/// Maximizer of `n log σ(x) + c log σ(-x)` by bisection on the derivative.
fn pointwise_argmax(n: f64, c: f64) -> f64 {
    let (mut lo, mut hi) = (-50.0f64, 50.0f64);
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        let d = n / (1.0 + mid.exp()) - c / (1.0 + (-mid).exp());
        if d > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / 2.0
}

#[test]
fn bipartite_objective_term_by_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let p = random_bipartite_problem(3, 8, 4);
    let hd = random_reps(&mut rng, 3, 5);
    let ht = random_reps(&mut rng, 8, 5);
    let mut total = 0.0;
    for d in 0..3 {
        for j in 0..8 {
            let x: f64 = (0..5).map(|c| hd[[d, c]] * ht[[j, c]]).sum();
            total += p.counts[[d, j]] * ln_sigmoid(x);
            total += p.k * p.token_counts[j] / p.normalizer * ln_sigmoid(-x);
        }
    }
    assert!((ns_objective_bipartite(&hd, &ht, &p) - total / p.normalizer).abs() < 1e-12);
}

#[test]
fn citation_objective_term_by_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = random_citation_problem(5, 8);
    let h = random_reps(&mut rng, 5, 4);
    let a = &p.adjacency;
    let deg: Vec<f64> = (0..5).map(|i| a.row(i).sum()).collect();
    let mut total = 0.0;
    for i in 0..5 {
        for j in 0..5 {
            if i == j {
                continue;
            }
            let x = h.row(i).dot(&h.row(j));
            if a[[i, j]] > 0.0 {
                total += a[[i, j]] / (deg[i] * deg[j]).sqrt() * ln_sigmoid(x);
            }
            total += p.k * p.neighbor_count / 5.0 * ln_sigmoid(-x);
        }
    }
    assert!((ns_objective_citation_expanded(&h, &p) - total / 5.0).abs() < 1e-12);
}

#[test]
fn closed_forms_match_pointwise_maxima() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let (n, nd, nj, k) = (
            rng.random_range(1..=5) as f64,
            rng.random_range(20..=60) as f64,
            rng.random_range(5..=19) as f64,
            rng.random_range(1..=5) as f64,
        );
        let x = pointwise_argmax(n, k * nj / nd);
        assert!((fixed_point_bipartite(n, nd, nj, k).unwrap() - x).abs() < 1e-9);

        let w = rng.random_range(0.05..0.9);
        let plus = rng.random_range(1..=4) as f64;
        // each unordered positive pair appears twice in the ordered sum
        let x = pointwise_argmax(w, k * plus / nd);
        assert!((fixed_point_citation(-w, nd, plus, k).unwrap() - x).abs() < 1e-9);
    }
    assert!(fixed_point_bipartite(0.0, 1.0, 1.0, 1.0).is_err());
    assert!(fixed_point_citation(0.1, 1.0, 1.0, 1.0).is_err());
}

#[test]
fn verification_reaches_targets_at_the_size_limits() {
    for seed in 0..3 {
        let b = FactorizationProblem::Bipartite(random_bipartite_problem(5, 20, seed));
        let r = verify_factorization(&b, &VerifyOptions::for_problem(&b)).unwrap();
        assert!(r.passed, "bipartite seed {seed}: {}", r.to_text());
        let c = FactorizationProblem::Citation(random_citation_problem(6, seed));
        let r = verify_factorization(&c, &VerifyOptions::for_problem(&c)).unwrap();
        assert!(r.passed, "citation seed {seed}: {}", r.to_text());
        assert!(r.pairs.iter().all(|p| p.deviation < 1e-2));
    }
}

#[test]
fn verification_is_deterministic_and_reports_failure() {
    let p = FactorizationProblem::Citation(random_citation_problem(4, 3));
    let o = VerifyOptions::for_problem(&p);
    assert_eq!(verify_factorization(&p, &o).unwrap(), verify_factorization(&p, &o).unwrap());
    let starved = VerifyOptions { steps: 3, ..o };
    let r = verify_factorization(&p, &starved).unwrap();
    assert!(!r.passed && !r.stationary && r.steps_run == 3);
    let narrow = VerifyOptions { embedding_dim: 2, ..o };
    assert!(verify_factorization(&p, &narrow).is_err());
}

#[test]
fn invalid_problems_are_rejected() {
    let mut p = random_bipartite_problem(2, 4, 0);
    p.token_counts[0] = 0.0;
    let bad = FactorizationProblem::Bipartite(p);
    assert!(verify_factorization(&bad, &VerifyOptions::for_problem(&bad)).is_err());
    let k0 = BipartiteProblem { k: 0.5, ..random_bipartite_problem(2, 4, 0) };
    assert!(k0.validate().is_err());
}
