//! Black-box targets: next-token distributions, derived last-token and
//! prefix probabilities, caching and sampling.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Alphabet, NextDist, Pdfa, Seq, Symbol, Token};

/// Source of next-token distributions.
///
/// `next_dist` must be a pure function of the prefix: repeated queries
/// return bitwise-equal rows.
pub trait Oracle: Send + Sync {
    fn alphabet(&self) -> &Alphabet;

    /// P^n(prefix) over Σ then `$`.
    fn next_dist(&self, prefix: &[Token]) -> Result<NextDist>;
}

impl Oracle for Pdfa {
    fn alphabet(&self) -> &Alphabet {
        Pdfa::alphabet(self)
    }

    fn next_dist(&self, prefix: &[Token]) -> Result<NextDist> {
        Pdfa::next_dist(self, prefix).cloned()
    }
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn alphabet(&self) -> &Alphabet {
        (**self).alphabet()
    }

    fn next_dist(&self, prefix: &[Token]) -> Result<NextDist> {
        (**self).next_dist(prefix)
    }
}

impl<O: Oracle + ?Sized> Oracle for Box<O> {
    fn alphabet(&self) -> &Alphabet {
        (**self).alphabet()
    }

    fn next_dist(&self, prefix: &[Token]) -> Result<NextDist> {
        (**self).next_dist(prefix)
    }
}

impl<O: Oracle + ?Sized> Oracle for Arc<O> {
    fn alphabet(&self) -> &Alphabet {
        (**self).alphabet()
    }

    fn next_dist(&self, prefix: &[Token]) -> Result<NextDist> {
        (**self).next_dist(prefix)
    }
}

/// P^l(w) = P^n(w[:-1])[w[-1]] for a non-empty w ∈ Σ^{+$}.
pub fn last_token_prob<O: Oracle + ?Sized>(oracle: &O, w: &Seq) -> Result<f64> {
    let last = w
        .last()
        .ok_or_else(|| Error::Contract("last-token probability of ε is undefined".into()))?;
    Ok(oracle.next_dist(w.init())?.get(last))
}

/// O_S(p): last-token probabilities of `p · s` for every suffix s.
pub fn row<O: Oracle + ?Sized>(oracle: &O, prefix: &[Token], suffixes: &[Seq]) -> Result<Vec<f64>> {
    suffixes
        .iter()
        .map(|s| {
            if s.is_empty() {
                return Err(Error::Contract("suffixes must be non-empty".into()));
            }
            last_token_prob(oracle, &s.prepend(prefix))
        })
        .collect()
}

/// Draws one sequence by chaining `next_dist` rows.
pub fn sample_target<O: Oracle + ?Sized>(oracle: &O, seed: u64, max_len: usize) -> Result<Seq> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_target_with(oracle, &mut rng, max_len)
}

pub fn sample_target_with<O, R>(oracle: &O, rng: &mut R, max_len: usize) -> Result<Seq>
where
    O: Oracle + ?Sized,
    R: Rng + ?Sized,
{
    let sigma = oracle.alphabet().len();
    let mut tokens = Vec::new();
    while tokens.len() < max_len {
        let slot = oracle.next_dist(&tokens)?.draw(rng);
        if slot == sigma {
            return Ok(Seq::new(tokens, true));
        }
        tokens.push(Token(slot as u32));
    }
    Ok(Seq::new(tokens, false))
}

/// Snapshot of a [`CachedOracle`]'s counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct QueryCounters {
    /// All `next_dist` calls answered.
    pub queries: u64,
    /// Calls forwarded to the inner oracle.
    pub unique: u64,
}

/// Memoizing wrapper; never forwards the same prefix twice.
pub struct CachedOracle<O> {
    inner: O,
    cache: Mutex<HashMap<Vec<Token>, NextDist>>,
    queries: AtomicU64,
    unique: AtomicU64,
}

impl<O: Oracle> CachedOracle<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
            queries: AtomicU64::new(0),
            unique: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn counters(&self) -> QueryCounters {
        QueryCounters {
            queries: self.queries.load(Ordering::Relaxed),
            unique: self.unique.load(Ordering::Relaxed),
        }
    }
}

impl<O: Oracle> Oracle for CachedOracle<O> {
    fn alphabet(&self) -> &Alphabet {
        self.inner.alphabet()
    }

    fn next_dist(&self, prefix: &[Token]) -> Result<NextDist> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        if let Some(hit) = self.cache.lock().expect("cache poisoned").get(prefix) {
            return Ok(hit.clone());
        }
        // The lock is not held across the inner call; a racing duplicate
        // query is resolved by keeping the first insert.
        let dist = self.inner.next_dist(prefix)?;
        let mut cache = self.cache.lock().expect("cache poisoned");
        let entry = cache.entry(prefix.to_vec()).or_insert_with(|| {
            self.unique.fetch_add(1, Ordering::Relaxed);
            dist
        });
        Ok(entry.clone())
    }
}

/// Memoized prefix probabilities, built by the telescoping chain
/// P^p(ε) = 1, P^p(w·σ) = P^p(w) · P^n(w)[σ].
#[derive(Debug, Default)]
pub struct PrefixWeights {
    memo: HashMap<Vec<Token>, f64>,
}

impl PrefixWeights {
    pub fn new() -> Self {
        Self::default()
    }

    /// P^p(w) for w ∈ Σ*.
    pub fn prefix_prob<O: Oracle + ?Sized>(&mut self, oracle: &O, w: &[Token]) -> Result<f64> {
        if w.is_empty() {
            return Ok(1.0);
        }
        if let Some(p) = self.memo.get(w) {
            return Ok(*p);
        }
        // Longest memoized prefix, then extend one token at a time.
        let mut k = w.len() - 1;
        let mut prob = loop {
            if k == 0 {
                break 1.0;
            }
            if let Some(p) = self.memo.get(&w[..k]) {
                break *p;
            }
            k -= 1;
        };
        while k < w.len() {
            prob *= oracle.next_dist(&w[..k])?.get(Symbol::Token(w[k]));
            k += 1;
            self.memo.insert(w[..k].to_vec(), prob);
        }
        Ok(prob)
    }

    /// Extension to Σ^{+$}: P^p(u·$) is the full-sequence probability P(u).
    pub fn seq_prob<O: Oracle + ?Sized>(&mut self, oracle: &O, w: &Seq) -> Result<f64> {
        let base = self.prefix_prob(oracle, &w.tokens)?;
        if w.terminated && base > 0.0 {
            Ok(base * oracle.next_dist(&w.tokens)?.end())
        } else {
            Ok(base)
        }
    }

    pub fn len(&self) -> usize {
        self.memo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memo.is_empty()
    }
}
