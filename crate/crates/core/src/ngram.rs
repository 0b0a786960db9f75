//! Maximum-likelihood n-gram baseline with backoff.
//!
//! Every sequence is padded on the left with n−1 begin markers, so the
//! distribution after ε reflects how sequences start. Windows are stored
//! under packed integer keys.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{Alphabet, NextDist, Seq, Token};
use crate::oracle::Oracle;

#[derive(Clone, Debug)]
pub struct NgramModel {
    n: usize,
    alphabet: Alphabet,
    /// Counts of windows `context · symbol`, context length < n.
    windows: HashMap<u128, u64>,
    /// Counts of contexts followed by some symbol.
    contexts: HashMap<u128, u64>,
}

/// Digit base for packed keys: symbols are 0..|Σ| tokens, |Σ| for `$`,
/// |Σ|+1 for the begin marker; stored as digit+1 so length is implicit.
fn base(alphabet: &Alphabet) -> u128 {
    alphabet.len() as u128 + 3
}

fn pack(base: u128, symbols: &[u32]) -> u128 {
    symbols
        .iter()
        .fold(0u128, |k, s| k * base + (*s as u128 + 1))
}

fn key_len(base: u128, mut key: u128) -> usize {
    let mut len = 0;
    while key > 0 {
        key /= base;
        len += 1;
    }
    len
}

impl NgramModel {
    /// Counts all windows of length ≤ n in `samples`.
    pub fn build(alphabet: Alphabet, samples: &[Seq], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("n-gram order must be at least 1".into()));
        }
        let b = base(&alphabet);
        if b.checked_pow(n as u32).is_none() {
            return Err(Error::Input(format!(
                "n-gram keys overflow for n = {n} over {} tokens",
                alphabet.len()
            )));
        }
        let sigma = alphabet.len() as u32;
        let bos = sigma + 1;
        let mut windows: HashMap<u128, u64> = HashMap::new();
        let mut contexts: HashMap<u128, u64> = HashMap::new();
        let mut padded: Vec<u32> = Vec::new();
        for s in samples {
            alphabet.check(&s.tokens)?;
            padded.clear();
            padded.extend(std::iter::repeat_n(bos, n - 1));
            padded.extend(s.tokens.iter().map(|t| t.0));
            if s.terminated {
                padded.push(sigma);
            }
            for j in (n - 1)..padded.len() {
                for m in 0..n {
                    let ctx = &padded[j - m..j];
                    *contexts.entry(pack(b, ctx)).or_default() += 1;
                    *windows.entry(pack(b, &padded[j - m..=j])).or_default() += 1;
                }
            }
        }
        Ok(Self {
            n,
            alphabet,
            windows,
            contexts,
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Number of stored windows.
    pub fn size(&self) -> usize {
        self.windows.len()
    }

    /// The model of order `n ≤ self.order()` over the same samples.
    pub fn with_order(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n {
            return Err(Error::Input(format!("order {n} not in 1..={}", self.n)));
        }
        let b = base(&self.alphabet);
        let keep =
            |max: usize| move |(k, c): (&u128, &u64)| (key_len(b, *k) <= max).then_some((*k, *c));
        Ok(Self {
            n,
            alphabet: self.alphabet.clone(),
            windows: self.windows.iter().filter_map(keep(n)).collect(),
            contexts: self.contexts.iter().filter_map(keep(n - 1)).collect(),
        })
    }
}

impl Oracle for NgramModel {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    /// MLE on the longest seen context of at most n−1 symbols; uniform when
    /// nothing was ever seen.
    fn next_dist(&self, prefix: &[Token]) -> Result<NextDist> {
        self.alphabet.check(prefix)?;
        let b = base(&self.alphabet);
        let sigma = self.alphabet.len() as u32;
        let bos = sigma + 1;
        let mut ctx: Vec<u32> = std::iter::repeat_n(bos, self.n - 1).collect();
        ctx.extend(prefix.iter().map(|t| t.0));
        let ctx = &ctx[ctx.len() - (self.n - 1)..];
        for m in (0..self.n).rev() {
            let c = &ctx[ctx.len() - m..];
            let Some(&total) = self.contexts.get(&pack(b, c)) else {
                continue;
            };
            let mut window = c.to_vec();
            window.push(0);
            let probs = (0..=sigma)
                .map(|s| {
                    *window.last_mut().expect("non-empty") = s;
                    self.windows.get(&pack(b, &window)).copied().unwrap_or(0) as f64 / total as f64
                })
                .collect();
            return NextDist::new(probs);
        }
        Ok(NextDist::uniform(sigma as usize + 1))
    }
}
