//! Fixtures shared by the benchmarks.

use pdfa_core::grammars;
use pdfa_core::Pdfa;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Targets benchmarked end to end, with display names.
pub fn targets() -> Vec<(&'static str, Pdfa)> {
    vec![
        (
            "tomita5",
            grammars::tomita_weighted(5).expect("static grammar"),
        ),
        ("uhl1", grammars::uhl(1).expect("static grammar")),
        ("uhl2", grammars::uhl(2).expect("static grammar")),
        ("uhl3", grammars::uhl(3).expect("static grammar")),
    ]
}

/// `n` random rows of `width` probabilities on a 1/100 grid.
pub fn random_rows(n: usize, width: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..width)
                .map(|_| rng.gen_range(0..=100) as f64 / 100.0)
                .collect()
        })
        .collect()
}
