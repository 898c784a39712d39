//! Both alignment losses and their upper bounds on random representations.
//!
//! ```text
//! cargo run --example contrastive_losses -- [instances] [seed]
//! ```

use citegcl::graph::normalized_laplacian;
use citegcl::losses::{
    dra_jensen_bound, dra_loss, dra_upper_bound, tra_loss, tra_upper_bound, tra_upper_bound_uncorrected,
    ContrastiveInstance,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn instance(rng: &mut ChaCha8Rng) -> citegcl::Result<ContrastiveInstance> {
    let (pos, neg, tokens_pos, tokens_neg, dim) = (3, 2, 6, 10, 8);
    let n = 1 + pos + neg;
    let mut a = Array2::<f64>::eye(n);
    for j in 1..=pos {
        let w = rng.random_range(0.7..1.0);
        a[[0, j]] = w;
        a[[j, 0]] = w;
    }
    let t = tokens_pos + tokens_neg;
    let mut b = Array2::zeros((1, t));
    b.slice_mut(ndarray::s![0, ..tokens_pos]).fill(1.0);
    let mut full = Array2::<f64>::eye(1 + t);
    full[[0, 0]] = 0.0;
    for j in 0..tokens_pos {
        full[[0, 1 + j]] = 1.0;
        full[[1 + j, 0]] = 1.0;
        full[[1 + j, 1 + j]] = 0.0;
    }
    let normal = Normal::new(0.0, 0.5).expect("valid normal");
    let mut draw = |r, c| Array2::from_shape_fn((r, c), |_| normal.sample(rng));
    Ok(ContrastiveInstance {
        doc_reps: draw(n, dim),
        token_reps: draw(t, dim),
        citation_laplacian: normalized_laplacian(&a)?,
        citation_adjacency: a,
        bipartite_adjacency: b,
        bipartite_laplacian: normalized_laplacian(&full)?,
    })
}

fn main() -> citegcl::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    println!(
        "{:>8} {:>8} {:>10} {:>8} {:>8} {:>8}",
        "tra", "bound", "no -log c", "dra", "bound", "jensen"
    );
    for _ in 0..count {
        let inst = instance(&mut rng)?;
        println!(
            "{:>8.4} {:>8.4} {:>10.4} {:>8.4} {:>8.4} {:>8.4}",
            tra_loss(&inst)?,
            tra_upper_bound(&inst)?,
            tra_upper_bound_uncorrected(&inst)?,
            dra_loss(&inst)?,
            dra_upper_bound(&inst)?,
            dra_jensen_bound(&inst)?,
        );
    }
    Ok(())
}
