mod common;

use citegcl::corpus::{tokenize, Document};
use citegcl::rouge::{lcs_len, mean_rouge_12, rouge_l, rouge_n, rouge_n_with, NGramCounting};
use citegcl::selection::{greedy_select, rank_neighbors, select_content, select_neighbors, SelectionTarget, TargetRole};
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn target(text: Vec<String>) -> SelectionTarget {
    SelectionTarget { text, role: TargetRole::GoldAbstract }
}

/// Longest common subsequence by trying every subsequence of `a`.
fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let is_subseq = |s: &[&String]| {
        let mut it = b.iter();
        s.iter().all(|x| it.any(|y| y == *x))
    };
    (0u32..1 << a.len())
        .filter_map(|m| {
            let s: Vec<&String> = (0..a.len()).filter(|i| m >> i & 1 == 1).map(|i| &a[i]).collect();
            is_subseq(&s).then_some(s.len())
        })
        .max()
        .unwrap_or(0)
}

#[test]
fn rouge_n_matches_multiset_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let a = &random_sentences(&mut rng, 1, 6)[0];
        let b = &random_sentences(&mut rng, 1, 6)[0];
        for n in 1..=3 {
            assert!((rouge_n(a, b, n).f1 - oracle_rouge_n_f1(a, b, n)).abs() < 1e-12);
            let clipped = rouge_n_with(a, b, n, NGramCounting::Clipped).f1;
            assert!((clipped - oracle_rouge_n_f1_clipped(a, b, n)).abs() < 1e-12);
        }
        assert!((mean_rouge_12(a, b) - oracle_mean_rouge_12(a, b)).abs() < 1e-12);
    }
}

#[test]
fn sample_rouge1_within_tolerance() {
    let source = tokenize(SAMPLE_SOURCE);
    for (reference, expected) in [SAMPLE_REF1, SAMPLE_REF2].iter().zip(SAMPLE_ROUGE1) {
        let got = rouge_n(&source, &tokenize(reference), 1).f1;
        assert!((got - expected).abs() <= 0.02, "{got} vs {expected}");
    }
}

#[test]
fn mean_rouge_12_hand_computed() {
    // 12 tokens: unigram overlap 4 of 6 each side, bigram overlap 2 of 5 each side
    let a = tokenize("the cat sat on a mat");
    let b = tokenize("the cat lay on a rug");
    assert!((mean_rouge_12(&a, &b) - (4.0 / 6.0 + 2.0 / 5.0) / 2.0).abs() < 1e-12);
}

#[test]
fn lcs_matches_subsequence_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let a: Vec<String> = (0..8).map(|_| format!("t{}", rng.random_range(0..4))).collect();
        let b: Vec<String> = (0..8).map(|_| format!("t{}", rng.random_range(0..4))).collect();
        let l = brute_lcs(&a, &b);
        assert_eq!(lcs_len(&a, &b), l);
        let expect = if l == 0 { 0.0 } else { l as f64 / 8.0 };
        assert!((rouge_l(&a, &b).f1 - expect).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn f1_is_symmetric_and_bounded(a in prop::collection::vec(0u8..5, 0..12), b in prop::collection::vec(0u8..5, 0..12), n in 1usize..4) {
        let x = rouge_n(&a, &b, n);
        let y = rouge_n(&b, &a, n);
        prop_assert!((x.f1 - y.f1).abs() < 1e-12);
        prop_assert!((x.precision - y.recall).abs() < 1e-12);
        for s in [x, rouge_l(&a, &b)] {
            prop_assert!((0.0..=1.0).contains(&s.f1) && (0.0..=1.0).contains(&s.precision) && (0.0..=1.0).contains(&s.recall));
        }
        prop_assert!(lcs_len(&a, &b) <= a.len().min(b.len()));
    }

    #[test]
    fn appending_a_matched_unigram_keeps_recall(a in prop::collection::vec(0u8..5, 0..10), b in prop::collection::vec(0u8..5, 1..10)) {
        let before = rouge_n(&a, &b, 1).recall;
        let mut ext = a.clone();
        let counts = |v: &[u8], t: u8| v.iter().filter(|&&x| x == t).count();
        if let Some(&t) = b.iter().find(|&&t| counts(&a, t) < counts(&b, t)) {
            ext.push(t);
            prop_assert!(rouge_n(&ext, &b, 1).recall >= before);
        }
    }
}

#[test]
fn greedy_matches_oracle_on_random_documents() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let sentences = random_sentences(&mut rng, n, 12);
        let t = random_sentences(&mut rng, 2, 12).concat();
        let max = rng.random_range(1..=n);
        let sel = greedy_select(&sentences, &target(t.clone()), max);
        let (order, scores) = oracle_greedy(&sentences, &t, max);
        assert_eq!(sel.sentence_indices, order);
        assert_eq!(sel.step_scores.len(), scores.len());
        for (a, b) in sel.step_scores.iter().zip(&scores) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(sel.step_scores.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn greedy_edge_cases() {
    let sel = greedy_select(&[], &target(tokenize("a b")), 3);
    assert!(sel.sentence_indices.is_empty() && sel.score == 0.0);
    let s: Vec<Vec<String>> = ["x y z", "q r s", "a b c d", "u v w"].iter().map(|s| tokenize(s)).collect();
    let sel = greedy_select(&s, &target(tokenize("a b c d")), 3);
    assert_eq!(sel.sentence_indices, vec![2]);
}

fn candidate(id: &str, body: &[&str]) -> Document {
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
fn neighbour_ranking_matches_brute_force() {
    let t = tokenize("graph contrastive learning improves citation aware summaries");
    let docs = [
        candidate("e", &["graph contrastive learning improves citation aware summaries."]),
        candidate("d", &["graph contrastive learning improves citation."]),
        candidate("c", &["graph contrastive learning."]),
        candidate("b", &["graph only."]),
        candidate("a", &["graph contrastive learning."]),
    ];
    let tgt = target(t.clone());
    let sels: Vec<_> = docs.iter().map(|d| select_content("src", d, &tgt, 7)).collect();
    let pairs: Vec<_> = docs.iter().zip(&sels).collect();
    let mut brute: Vec<(f64, String)> = pairs
        .iter()
        .map(|(d, s)| (-oracle_mean_rouge_12(&t, &s.content_tokens(d)), d.id.clone()))
        .collect();
    brute.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let ranked = rank_neighbors(&tgt, &pairs);
    assert_eq!(ranked.iter().map(|r| r.id.clone()).collect::<Vec<_>>(), brute.iter().map(|b| b.1.clone()).collect::<Vec<_>>());
    assert_eq!(select_neighbors(&tgt, &pairs, 3).unwrap(), vec!["e", "d", "a"]);
    assert_eq!(select_neighbors(&tgt, &pairs, 9).unwrap().len(), 5);
    assert!(select_neighbors(&tgt, &pairs, 0).is_err());
}
