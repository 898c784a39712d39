//! ROUGE between a source abstract and two cited abstracts.
//!
//! ```text
//! cargo run --example sample_rouge
//! ```

use citegcl::corpus::tokenize;
use citegcl::rouge::{mean_rouge_12, rouge_l, rouge_n, rouge_n_with, NGramCounting};

const SOURCE: &str = "this paper summarizes the contents of a plenary talk at the pan african congress of mathematics held in rabat in july 2017. we provide a survey of recent results on spectral properties of schrödinger operators with singular interactions supported by manifolds of codimension one and of robin billiards with the focus on the geometrically induced discrete spectrum and its asymptotic expansions in term of the model parameters.";

const REFERENCES: [&str; 2] = [
    "we determine accurate asymptotics for the low-lying eigenvalues of the robin laplacian when the robin parameter goes to $-infty$. the two first terms in the expansion have been obtained by k. pankrashkin in the $ 2d$-case and by k. pankrashkin and n. popoff in higher dimensions. the asymptotics display the influence of the scalar curvature and the splitting between every two consecutive eigenvalues.",
    "we give a counterexample to the long standing conjecture that the ball maximises the first eigenvalue of the robin eigenvalue problem with negative parameter among domains of the same volume. furthermore , we show that the conjecture holds in two dimensions provided that the boundary parameter is small. this is the first known example within the class of isoperimetric spectral problems for the first eigenvalue of the laplacian where the ball is not an optimiser.",
];

fn main() {
    let source = tokenize(SOURCE);
    println!("source: {} tokens", source.len());
    println!("{:<5} {:>7} {:>7} {:>7} {:>9} {:>9}", "ref", "R-1", "R-2", "R-L", "R-1 clip", "mean 1-2");
    for (i, text) in REFERENCES.iter().enumerate() {
        let r = tokenize(text);
        println!(
            "{:<5} {:>7.4} {:>7.4} {:>7.4} {:>9.4} {:>9.4}",
            i + 1,
            rouge_n(&source, &r, 1).f1,
            rouge_n(&source, &r, 2).f1,
            rouge_l(&source, &r).f1,
            rouge_n_with(&source, &r, 1, NGramCounting::Clipped).f1,
            mean_rouge_12(&source, &r),
        );
    }
}
