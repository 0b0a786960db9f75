//! Synthetic verification targets: weighted Tomita grammars, the three
//! unbounded-history languages, and a small two-token fixture with a state
//! that sits within tolerance of two mutually distinguishable states.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Alphabet, Pdfa};

/// Stopping weight of every weighted Tomita state.
pub const TOMITA_STOP: f64 = 0.05;
/// Weight of the preferred token in a weighted Tomita state (0.7 · 0.95).
pub const TOMITA_HIGH: f64 = 0.665;
/// Weight of the other token (0.3 · 0.95).
pub const TOMITA_LOW: f64 = 0.285;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GrammarId {
    Tomita(u8),
    Uhl(u8),
    AppB,
}

impl GrammarId {
    pub fn build(self) -> Result<Pdfa> {
        match self {
            GrammarId::Tomita(i) => tomita_weighted(i),
            GrammarId::Uhl(i) => uhl(i),
            GrammarId::AppB => Ok(appb_target()),
        }
    }
}

impl FromStr for GrammarId {
    type Err = Error;

    /// Accepts `tomita/N`, `uhl/N` and `appb`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("unknown grammar {s:?}"));
        let (family, index) = match s.split_once('/') {
            Some((f, i)) => (f, Some(i.parse::<u8>().map_err(|_| bad())?)),
            None => (s, None),
        };
        let id = match (family, index) {
            ("tomita", Some(i)) if (1..=7).contains(&i) => GrammarId::Tomita(i),
            ("uhl", Some(i)) if (1..=3).contains(&i) => GrammarId::Uhl(i),
            ("appb", None) => GrammarId::AppB,
            _ => return Err(bad()),
        };
        Ok(id)
    }
}

impl fmt::Display for GrammarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrammarId::Tomita(i) => write!(f, "tomita/{i}"),
            GrammarId::Uhl(i) => write!(f, "uhl/{i}"),
            GrammarId::AppB => write!(f, "appb"),
        }
    }
}

fn binary() -> Alphabet {
    Alphabet::new(["0", "1"]).expect("static alphabet")
}

/// Minimal DFA of Tomita grammar `i` over {0, 1}: (transitions, accepting).
/// Transition rows are indexed `[on 0, on 1]`; state 0 is initial.
pub fn tomita_dfa(i: u8) -> Result<(Vec<[usize; 2]>, Vec<bool>)> {
    let dfa = match i {
        // 1*
        1 => (vec![[1, 0], [1, 1]], vec![true, false]),
        // (10)*
        2 => (vec![[2, 1], [0, 2], [2, 2]], vec![true, false, false]),
        // no odd run of 0s directly after an odd run of 1s
        3 => (
            vec![[0, 1], [2, 0], [3, 4], [2, 1], [4, 4]],
            vec![true, true, false, true, false],
        ),
        // no 000
        4 => (
            vec![[1, 0], [2, 0], [3, 0], [3, 3]],
            vec![true, true, true, false],
        ),
        // even number of 0s and even number of 1s
        5 => (
            vec![[1, 2], [0, 3], [3, 0], [2, 1]],
            vec![true, false, false, false],
        ),
        // #0 - #1 divisible by 3
        6 => (vec![[1, 2], [2, 0], [0, 1]], vec![true, false, false]),
        // 0*1*0*1*
        7 => (
            vec![[0, 1], [2, 1], [2, 3], [4, 3], [4, 4]],
            vec![true, true, true, true, false],
        ),
        _ => {
            return Err(Error::Input(format!(
                "Tomita grammar index {i} not in 1..=7"
            )))
        }
    };
    Ok(dfa)
}

/// Weighted Tomita variant: accepting states prefer `0`, rejecting states
/// prefer `1`, every state stops with weight 0.05.
pub fn tomita_weighted(i: u8) -> Result<Pdfa> {
    let (delta, accepting) = tomita_dfa(i)?;
    let weights = accepting
        .iter()
        .map(|acc| {
            if *acc {
                vec![TOMITA_HIGH, TOMITA_LOW, TOMITA_STOP]
            } else {
                vec![TOMITA_LOW, TOMITA_HIGH, TOMITA_STOP]
            }
        })
        .collect();
    Pdfa::from_table(
        binary(),
        0,
        delta.iter().map(|r| r.to_vec()).collect(),
        weights,
    )
}

/// Unbounded-history languages 1..=3.
pub fn uhl(i: u8) -> Result<Pdfa> {
    match i {
        1 => {
            // 9-state input-independent cycle; states 2, 5 and 9 (1-based)
            // prefer `1`.
            let n = 9;
            let next = (0..n).map(|q| vec![(q + 1) % n; 2]).collect();
            let weights = (0..n)
                .map(|q| {
                    if [1, 4, 8].contains(&q) {
                        vec![0.20, 0.75, 0.05]
                    } else {
                        vec![0.75, 0.20, 0.05]
                    }
                })
                .collect();
            Pdfa::from_table(binary(), 0, next, weights)
        }
        2 => {
            let alphabet = Alphabet::new(["0", "1", "2", "3", "4"]).expect("static alphabet");
            let n = 5;
            let (stop, high) = (0.045, 0.591);
            let low = (1.0 - stop - high) / 4.0;
            let next = (0..n).map(|q| vec![(q + 1) % n; 5]).collect();
            let weights = (0..n)
                .map(|q| {
                    let mut row = vec![low; 5];
                    row[q] = high;
                    row.push(stop);
                    row
                })
                .collect();
            Pdfa::from_table(alphabet, 0, next, weights)
        }
        3 => {
            // Parity of 0s and 1s: ee, oe, eo, oo. Only oo is reversed.
            let (delta, _) = tomita_dfa(5)?;
            let weights = (0..4)
                .map(|q| {
                    if q == 3 {
                        vec![0.425, 0.525, 0.05]
                    } else {
                        vec![0.525, 0.425, 0.05]
                    }
                })
                .collect();
            Pdfa::from_table(
                binary(),
                0,
                delta.iter().map(|r| r.to_vec()).collect(),
                weights,
            )
        }
        _ => Err(Error::Input(format!("UHL index {i} not in 1..=3"))),
    }
}

/// The worked-example target over {a, b}.
///
/// Six states are required to reproduce every observation of the worked
/// example: the prefixes ε, aa, aaa and b share the row (0.5, 0.4, 0.1) but
/// have pairwise different futures. `q5` is t-equal (t = 0.1) to both the
/// (0.5, 0.4, 0.1) states and the (0.7, 0.25, 0.05) state, which are not
/// t-equal to each other.
pub fn appb_target() -> Pdfa {
    let alphabet = Alphabet::new(["a", "b"]).expect("static alphabet");
    let d1 = vec![0.5, 0.4, 0.1];
    let d2 = vec![0.7, 0.25, 0.05];
    Pdfa::from_table(
        alphabet,
        0,
        vec![
            vec![1, 2], // q0: ε
            vec![3, 3], // q1: a, bb
            vec![4, 1], // q2: b
            vec![4, 4], // q3: aa, ab
            vec![5, 5], // q4: aaa, aab, ba
            vec![5, 5], // q5: aaaa, ...
        ],
        vec![
            d1.clone(),
            d2,
            d1.clone(),
            d1.clone(),
            d1,
            vec![0.6, 0.33, 0.07],
        ],
    )
    .expect("static fixture")
}

/// The worked-example fixture as an oracle.
pub fn appb_fixture() -> Pdfa {
    appb_target()
}

/// Random PDFA over the tokens `a`, `b`, ... with `states` states and
/// `sigma ≤ 26` tokens. Weights lie on a 1/20 grid and every state stops
/// with weight at least 0.05, so the result is live.
pub fn random_pdfa<R: Rng + ?Sized>(rng: &mut R, states: usize, sigma: usize) -> Pdfa {
    assert!(states >= 1 && (1..=26).contains(&sigma));
    let names: Vec<String> = (0..sigma)
        .map(|i| ((b'a' + i as u8) as char).to_string())
        .collect();
    let alphabet = Alphabet::new(names).expect("distinct letters");
    let next = (0..states)
        .map(|_| (0..sigma).map(|_| rng.gen_range(0..states)).collect())
        .collect();
    let weights = (0..states)
        .map(|_| {
            let stop = rng.gen_range(1..=6u32);
            let mut units = vec![0u32; sigma];
            for _ in 0..20 - stop {
                units[rng.gen_range(0..sigma)] += 1;
            }
            units.push(stop);
            units.iter().map(|u| *u as f64 / 20.0).collect()
        })
        .collect();
    Pdfa::from_table(alphabet, 0, next, weights).expect("valid by construction")
}
