mod common;

use std::collections::BTreeSet;

use citegcl::corpus::{tokenize, Corpus, Document};
use citegcl::graph::{
    build_weighted_citation_graph, normalized_laplacian, sample_negative_documents, sample_negative_tokens,
    BipartiteDocTokenGraph, NormalizedLaplacian,
};
use citegcl::losses::{
    dra_jensen_bound, dra_loss, dra_on_tape, dra_upper_bound, dra_weights, nll_loss, tra_loss, tra_on_tape,
    tra_upper_bound, tra_weights,
};
use citegcl::rouge::mean_rouge_12;
use citegcl::selection::{select_content, SelectionTarget, TargetRole};
use citegcl::tape::Tape;
use citegcl::Error;
use common::*;
use ndarray::{array, s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn laplacian_matches_dense_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let n = rng.random_range(1..=20);
        let a = random_symmetric_unit_diag(&mut rng, n);
        let lap = normalized_laplacian(&a).unwrap();
        let dense = dense_laplacian(&a);
        for (x, y) in lap.matrix.iter().zip(dense.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        for i in 0..n {
            for j in 0..n {
                assert_eq!(lap.matrix[[i, j]], lap.matrix[[j, i]]);
            }
        }
        let null = lap.matrix.dot(&lap.degree.mapv(f64::sqrt));
        assert!(null.iter().all(|x| x.abs() < 1e-10));
    }
}

#[test]
fn laplacian_rejects_isolated_nodes() {
    let a = array![[1.0, 0.0], [0.0, 0.0]];
    assert!(matches!(normalized_laplacian(&a), Err(Error::DegenerateDegree(1))));
    assert!(normalized_laplacian(&Array2::zeros((2, 3))).is_err());
}

#[test]
fn losses_match_raw_exponential_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let nodes = rng.random_range(3..=10);
        let tokens = rng.random_range(2..=12);
        let inst = random_instance(&mut rng, nodes, tokens, 8, 0.3);
        assert!((dra_loss(&inst).unwrap() - dense_dra(&inst)).abs() < 1e-10);
        assert!((tra_loss(&inst).unwrap() - dense_tra(&inst)).abs() < 1e-10);
    }
}

#[test]
fn losses_are_stable_for_large_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inst = random_instance(&mut rng, 6, 8, 8, 40.0);
    assert!(dra_loss(&inst).unwrap().is_finite());
    assert!(tra_loss(&inst).unwrap().is_finite());
}

#[test]
fn contrastive_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let (nodes, tokens) = (rng.random_range(3..=8), rng.random_range(2..=8));
        let inst = random_instance(&mut rng, nodes, tokens, 6, 0.5);
        let dw = dra_weights(&inst.citation_adjacency, &inst.citation_laplacian).unwrap();
        let tw = tra_weights(&inst.bipartite_adjacency, &inst.bipartite_laplacian).unwrap();

        let mut tape = Tape::new();
        let h = tape.leaf(inst.doc_reps.clone());
        let l = dra_on_tape(&mut tape, h, &dw);
        let g = tape.backward(l).get_or_zeros(h, inst.doc_reps.dim());
        let fd = numeric_gradient(&inst.doc_reps, |x| {
            let mut probe = inst.clone();
            probe.doc_reps = x.clone();
            dense_dra(&probe)
        });
        for (a, n) in g.iter().zip(fd.iter()) {
            assert!(rel_err(*a, *n) < 1e-4, "dra {a} vs {n}");
        }

        let mut tape = Tape::new();
        let d = tape.leaf(inst.doc_reps.slice(s![0..1, ..]).to_owned());
        let t = tape.leaf(inst.token_reps.clone());
        let l = tra_on_tape(&mut tape, d, t, &tw);
        let grads = tape.backward(l);
        let gt = grads.get_or_zeros(t, inst.token_reps.dim());
        let fd = numeric_gradient(&inst.token_reps, |x| {
            let mut probe = inst.clone();
            probe.token_reps = x.clone();
            dense_tra(&probe)
        });
        for (a, n) in gt.iter().zip(fd.iter()) {
            assert!(rel_err(*a, *n) < 1e-4, "tra {a} vs {n}");
        }
    }
}

#[test]
fn bounds_hold_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let (nodes, tokens) = (rng.random_range(3..=10), rng.random_range(2..=12));
        let inst = random_instance(&mut rng, nodes, tokens, 8, 0.7);
        let tra = tra_loss(&inst).unwrap();
        let dra = dra_loss(&inst).unwrap();
        let dra_ub = dra_upper_bound(&inst).unwrap();
        assert!(tra <= tra_upper_bound(&inst).unwrap() + 1e-12);
        assert!(dra <= dra_ub + 1e-12);
        assert!(dra_ub <= dra_jensen_bound(&inst).unwrap() + 1e-12);
    }
}

#[test]
fn weights_reject_empty_sides() {
    let a = array![[1.0, 0.5], [0.5, 1.0]];
    let lap = normalized_laplacian(&a).unwrap();
    assert!(matches!(dra_weights(&a, &lap), Err(Error::EmptyDenominator)));
    let b = array![[0.0, 0.0]];
    let lap = NormalizedLaplacian { matrix: Array2::eye(3), degree: ndarray::Array1::ones(3) };
    assert!(matches!(tra_weights(&b, &lap), Err(Error::EmptyNumerator)));
}

#[test]
fn nll_matches_log_softmax() {
    let logits = array![[1.0, 2.0, 0.5], [0.0, -1.0, 3.0], [9.0, 9.0, 9.0]];
    let row = |r: usize, t: usize| {
        let z: f64 = logits.row(r).iter().map(|x: &f64| x.exp()).sum();
        z.ln() - logits[[r, t]]
    };
    let got = nll_loss(&logits, &[1, 2, 0], &[true, true, false]).unwrap();
    assert!((got - (row(0, 1) + row(1, 2)) / 2.0).abs() < 1e-12);
    assert!(nll_loss(&logits, &[1, 7, 0], &[true; 3]).is_err());
}

fn document(id: &str, body: &[&str]) -> Document {
    Document {
        id: id.into(),
        title: String::new(),
        abstract_text: "x".into(),
        introduction: String::new(),
        body_sentences: body.iter().map(|s| s.to_string()).collect(),
        reference_ids: vec![],
    }
}

#[test]
fn weighted_citation_graph_entries_match_oracle() {
    let source = document("s", &["source sentence."]);
    let n1 = document("n1", &["graph contrastive learning for summaries.", "unrelated filler words."]);
    let n2 = document("n2", &["graph contrastive learning for citation summaries."]);
    let neg = document("z", &["nothing in common."]);
    let target = SelectionTarget {
        text: tokenize("graph contrastive learning for citation summaries"),
        role: TargetRole::GoldAbstract,
    };
    let sels = [select_content("s", &n1, &target, 3), select_content("s", &n2, &target, 3)];
    let contents = [sels[0].content_tokens(&n1), sels[1].content_tokens(&n2)];
    for rho in [0.0, 0.5, 0.7, 0.95] {
        let g = build_weighted_citation_graph(&source, &[(&n1, &sels[0]), (&n2, &sels[1])], &[&neg], &target, rho);
        let keep = |x: f64| if x >= rho { x } else { 0.0 };
        let oracle = [
            keep(mean_rouge_12(&target.text, &contents[0])),
            keep(mean_rouge_12(&target.text, &contents[1])),
            keep(mean_rouge_12(&contents[0], &contents[1])),
        ];
        if oracle[0] == 0.0 && oracle[1] == 0.0 {
            assert!(matches!(g, Err(Error::DegenerateGraph(_))));
            continue;
        }
        let g = g.unwrap();
        assert_eq!(g.node_ids, vec!["s", "n1", "n2", "z"]);
        let w = &g.weights;
        for i in 0..4 {
            assert_eq!(w[[i, i]], 1.0);
            assert_eq!(w[[i, 3]] + w[[3, i]], if i == 3 { 2.0 } else { 0.0 });
        }
        assert_eq!((w[[0, 1]], w[[1, 0]]), (oracle[0], oracle[0]));
        assert_eq!((w[[0, 2]], w[[2, 0]]), (oracle[1], oracle[1]));
        assert_eq!((w[[1, 2]], w[[2, 1]]), (oracle[2], oracle[2]));
        let dump = g.dump("s");
        assert_eq!(dump.to_graph().unwrap(), g);
    }
}

#[test]
fn bipartite_graph_layout_and_degrees() {
    let tokens = tokenize("a b a c");
    let negs: Vec<String> = ["x", "y"].iter().map(|s| s.to_string()).collect();
    let g = BipartiteDocTokenGraph::from_tokens("d", &tokens, &negs).unwrap();
    assert_eq!(g.token_ids, vec!["a", "b", "c", "x", "y"]);
    assert_eq!(g.adjacency, array![[1.0, 1.0, 1.0, 0.0, 0.0]]);
    let docs = [["a", "b", "c"].into_iter().collect(), ["a", "x"].into_iter().collect()];
    let deg = g.instance_token_degrees(&docs);
    assert_eq!(deg, vec![2.0, 1.0, 1.0, 1.0, 0.0]);
    let lap = g.laplacian(&deg).unwrap();
    assert!((lap.matrix[[0, 1]] + 1.0 / (3.0f64 * 2.0).sqrt()).abs() < 1e-15);
    assert!((lap.matrix[[0, 2]] + 1.0 / 3.0f64.sqrt()).abs() < 1e-15);
    assert_eq!(lap.matrix[[0, 4]], 0.0);
    assert!(BipartiteDocTokenGraph::from_tokens("d", &tokens, &["a".to_string()]).is_err());
    assert!(BipartiteDocTokenGraph::from_tokens("d", &[], &negs).is_err());
}

#[test]
fn negative_samples_avoid_neighbourhoods() {
    let corpus = synthetic(30, 4);
    let vocab: BTreeSet<String> = corpus.documents().iter().flat_map(|d| d.body_tokens()).collect();
    for d in corpus.documents().iter().take(10) {
        let negs = sample_negative_documents(corpus.graph(), &d.id, 4, 9).unwrap();
        assert_eq!(negs.len(), 4);
        assert_eq!(negs.iter().collect::<BTreeSet<_>>().len(), 4);
        assert!(negs.iter().all(|n| n != &d.id && !corpus.graph().adjacent(&d.id, n)));
        assert_eq!(negs, sample_negative_documents(corpus.graph(), &d.id, 4, 9).unwrap());

        let body = d.body_tokens();
        let toks = sample_negative_tokens(&vocab, &body, 10, 9).unwrap();
        assert!(toks.iter().all(|t| !body.contains(t)));
    }
    let small = Corpus::from_documents(vec![doc("a", &[]), doc("b", &["a"])]).unwrap();
    assert!(sample_negative_documents(small.graph(), "a", 1, 0).is_err());
    assert!(matches!(sample_negative_documents(small.graph(), "q", 1, 0), Err(Error::UnknownId(_))));
}
