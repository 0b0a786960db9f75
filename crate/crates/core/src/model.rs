//! Alphabets, sequences and the PDFA type with its distribution semantics.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved literal for the end-of-sequence symbol.
pub const END: &str = "$";

/// Row sums must be within this distance of 1.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Sums this close to 1 are rounding noise and are kept as given, so that
/// re-validating a row never moves its entries.
pub const ROUNDING_SLACK: f64 = 64.0 * f64::EPSILON;

/// Index of a token in its [`Alphabet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Token(pub u32);

impl Token {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A member of Σ ∪ {$}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Token(Token),
    End,
}

impl Symbol {
    /// Slot of this symbol in a [`NextDist`] over an alphabet of `sigma` tokens.
    #[inline]
    pub fn slot(self, sigma: usize) -> usize {
        match self {
            Symbol::Token(t) => t.index(),
            Symbol::End => sigma,
        }
    }

    #[inline]
    pub fn from_slot(slot: usize, sigma: usize) -> Symbol {
        if slot == sigma {
            Symbol::End
        } else {
            Symbol::Token(Token(slot as u32))
        }
    }
}

/// Ordered set of distinct token strings. `$` is implicit and never a member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    tokens: Vec<String>,
    index: HashMap<String, Token>,
}

impl Alphabet {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::Validation("alphabet contains an empty token".into()));
            }
            if tok == END {
                return Err(Error::Validation(format!(
                    "alphabet may not contain the reserved end symbol {END:?}"
                )));
            }
            if tok.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!(
                    "token {tok:?} contains whitespace"
                )));
            }
            if index.insert(tok.clone(), Token(i as u32)).is_some() {
                return Err(Error::Validation(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Number of tokens (|Σ|, excluding `$`).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.tokens.len() as u32).map(Token)
    }

    /// All of Σ followed by `$`.
    pub fn symbols(&self) -> impl Iterator<Item = Symbol> + '_ {
        self.tokens()
            .map(Symbol::Token)
            .chain(std::iter::once(Symbol::End))
    }

    pub fn names(&self) -> &[String] {
        &self.tokens
    }

    pub fn name(&self, tok: Token) -> &str {
        &self.tokens[tok.index()]
    }

    pub fn symbol_name(&self, sym: Symbol) -> &str {
        match sym {
            Symbol::Token(t) => self.name(t),
            Symbol::End => END,
        }
    }

    pub fn token(&self, name: &str) -> Option<Token> {
        self.index.get(name).copied()
    }

    pub fn symbol(&self, name: &str) -> Option<Symbol> {
        if name == END {
            Some(Symbol::End)
        } else {
            self.token(name).map(Symbol::Token)
        }
    }

    /// Parses a sequence over Σ from token names.
    pub fn parse<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<Token>> {
        names
            .iter()
            .map(|n| {
                let n = n.as_ref();
                self.token(n)
                    .ok_or_else(|| Error::Input(format!("token {n:?} is not in the alphabet")))
            })
            .collect()
    }

    /// Parses a word over Σ from single-character token names, e.g. `"aab"`.
    pub fn parse_chars(&self, word: &str) -> Result<Vec<Token>> {
        let names: Vec<String> = word.chars().map(String::from).collect();
        self.parse(&names)
    }

    /// Renders tokens joined by `sep`; ε renders as the empty string.
    pub fn render(&self, tokens: &[Token], sep: &str) -> String {
        tokens
            .iter()
            .map(|t| self.name(*t))
            .collect::<Vec<_>>()
            .join(sep)
    }

    pub fn check(&self, tokens: &[Token]) -> Result<()> {
        match tokens.iter().find(|t| t.index() >= self.len()) {
            Some(t) => Err(Error::Input(format!(
                "token index {} outside alphabet of size {}",
                t.0,
                self.len()
            ))),
            None => Ok(()),
        }
    }
}

/// A sequence over Σ, optionally terminated by `$`.
///
/// With `terminated` set this is a member of Σ^{+$}. Samples that hit a
/// length cap come back unterminated, which marks them as truncated.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Seq {
    pub tokens: Vec<Token>,
    pub terminated: bool,
}

impl Seq {
    pub fn new(tokens: Vec<Token>, terminated: bool) -> Self {
        Self { tokens, terminated }
    }

    pub fn epsilon() -> Self {
        Self::default()
    }

    /// Number of symbols including a trailing `$`.
    pub fn len(&self) -> usize {
        self.tokens.len() + usize::from(self.terminated)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last(&self) -> Option<Symbol> {
        if self.terminated {
            Some(Symbol::End)
        } else {
            self.tokens.last().copied().map(Symbol::Token)
        }
    }

    /// Everything but the last symbol; always a sequence over Σ.
    pub fn init(&self) -> &[Token] {
        if self.terminated {
            &self.tokens
        } else {
            &self.tokens[..self.tokens.len().saturating_sub(1)]
        }
    }

    /// `prefix · sym`
    pub fn extend(prefix: &[Token], sym: Symbol) -> Self {
        let mut tokens = prefix.to_vec();
        match sym {
            Symbol::Token(t) => {
                tokens.push(t);
                Self::new(tokens, false)
            }
            Symbol::End => Self::new(tokens, true),
        }
    }

    /// `prefix · self`
    pub fn prepend(&self, prefix: &[Token]) -> Self {
        let mut tokens = Vec::with_capacity(prefix.len() + self.tokens.len());
        tokens.extend_from_slice(prefix);
        tokens.extend_from_slice(&self.tokens);
        Self::new(tokens, self.terminated)
    }

    pub fn truncated(&self) -> bool {
        !self.terminated
    }

    pub fn render(&self, alphabet: &Alphabet) -> String {
        let mut out = alphabet.render(&self.tokens, "");
        if self.terminated {
            out.push_str(END);
        }
        out
    }
}

/// A next-token distribution over Σ then `$` (last slot).
#[derive(Clone, Debug, PartialEq)]
pub struct NextDist(Vec<f64>);

impl NextDist {
    /// Validates entries and the row sum. Rows off by more than
    /// [`ROUNDING_SLACK`] but within [`NORM_TOLERANCE`] are re-normalized.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Validation("empty distribution".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(Error::Validation(format!(
                "probability {p} at slot {i} is outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Validation(format!(
                "row sums to {sum}, expected 1 within {NORM_TOLERANCE}"
            )));
        }
        let probs = if (sum - 1.0).abs() <= ROUNDING_SLACK {
            probs
        } else {
            probs.into_iter().map(|p| (p / sum).min(1.0)).collect()
        };
        Ok(Self(probs))
    }

    /// Uniform over `slots` symbols.
    pub fn uniform(slots: usize) -> Self {
        Self(vec![1.0 / slots as f64; slots])
    }

    /// Point mass on one slot.
    pub fn point(slots: usize, slot: usize) -> Self {
        let mut v = vec![0.0; slots];
        v[slot] = 1.0;
        Self(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, sym: Symbol) -> f64 {
        self.0[sym.slot(self.0.len() - 1)]
    }

    pub fn end(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Most likely slot; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate().skip(1) {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Slots sorted by descending probability, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.0.len()).collect();
        order.sort_by(|a, b| self.0[*b].total_cmp(&self.0[*a]).then(a.cmp(b)));
        order
    }

    /// Draws one slot with a single uniform variate.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > 0.0 {
                last_positive = i;
                acc += p;
                if u < acc {
                    return i;
                }
            }
        }
        last_positive
    }
}

/// L∞ distance between two equal-length vectors.
pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// One PDFA state: σ-successors (indexed by token) and the weight row.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub name: String,
    pub next: Vec<usize>,
    pub weights: NextDist,
}

/// Probabilistic deterministic finite automaton over Σ ∪ {$}.
#[derive(Clone, Debug, PartialEq)]
pub struct Pdfa {
    alphabet: Alphabet,
    states: Vec<State>,
    initial: usize,
}

impl Pdfa {
    /// Checks totality of the transition function and row shapes.
    /// Liveness is checked separately by [`Pdfa::check_liveness`].
    pub fn new(alphabet: Alphabet, states: Vec<State>, initial: usize) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Validation("a PDFA needs at least one state".into()));
        }
        if initial >= states.len() {
            return Err(Error::Validation(format!(
                "initial state {initial} does not exist"
            )));
        }
        for st in &states {
            if st.next.len() != alphabet.len() {
                return Err(Error::Validation(format!(
                    "state {} has {} transitions, expected {}",
                    st.name,
                    st.next.len(),
                    alphabet.len()
                )));
            }
            if let Some(bad) = st.next.iter().find(|q| **q >= states.len()) {
                return Err(Error::Validation(format!(
                    "state {} transitions to missing state {bad}",
                    st.name
                )));
            }
            if st.weights.len() != alphabet.len() + 1 {
                return Err(Error::Validation(format!(
                    "state {} has {} weights, expected {}",
                    st.name,
                    st.weights.len(),
                    alphabet.len() + 1
                )));
            }
        }
        Ok(Self {
            alphabet,
            states,
            initial,
        })
    }

    /// Builds a PDFA from a dense transition table and weight rows; state
    /// names are `q0`, `q1`, ...
    pub fn from_table(
        alphabet: Alphabet,
        initial: usize,
        next: Vec<Vec<usize>>,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if next.len() != weights.len() {
            return Err(Error::Validation(
                "transition and weight tables differ in length".into(),
            ));
        }
        let states = next
            .into_iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (next, w))| {
                Ok(State {
                    name: format!("q{i}"),
                    next,
                    weights: NextDist::new(w)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(alphabet, states, initial)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn transition(&self, q: usize, tok: Token) -> usize {
        self.states[q].next[tok.index()]
    }

    pub fn weights(&self, q: usize) -> &NextDist {
        &self.states[q].weights
    }

    /// δ̂(q, w)
    pub fn run_from(&self, q: usize, w: &[Token]) -> usize {
        w.iter().fold(q, |q, t| self.transition(q, *t))
    }

    /// δ̂(w) from the initial state; rejects tokens outside Σ.
    pub fn state_after(&self, w: &[Token]) -> Result<usize> {
        self.alphabet.check(w)?;
        Ok(self.run_from(self.initial, w))
    }

    /// P^n(w)
    pub fn next_dist(&self, w: &[Token]) -> Result<&NextDist> {
        Ok(self.weights(self.state_after(w)?))
    }

    /// P_A(w) for w ∈ Σ*.
    pub fn seq_prob(&self, w: &[Token]) -> Result<f64> {
        self.alphabet.check(w)?;
        let mut q = self.initial;
        let mut prob = 1.0;
        for t in w {
            prob *= self.weights(q).get(Symbol::Token(*t));
            if prob == 0.0 {
                return Ok(0.0);
            }
            q = self.transition(q, *t);
        }
        Ok(prob * self.weights(q).end())
    }

    /// Draws a sequence; deterministic given `seed`.
    pub fn sample(&self, seed: u64, max_len: usize) -> Seq {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, max_len)
    }

    /// Draws a sequence with the caller's generator. Consumes exactly one
    /// variate per emitted symbol, matching [`crate::oracle::sample_target`].
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, max_len: usize) -> Seq {
        let sigma = self.alphabet.len();
        let mut q = self.initial;
        let mut tokens = Vec::new();
        while tokens.len() < max_len {
            let slot = self.weights(q).draw(rng);
            if slot == sigma {
                return Seq::new(tokens, true);
            }
            let tok = Token(slot as u32);
            tokens.push(tok);
            q = self.transition(q, tok);
        }
        Seq::new(tokens, false)
    }

    /// States that can reach a positive-stop state via positive-weight edges.
    fn live_states(&self) -> Vec<bool> {
        let n = self.states.len();
        let mut live: Vec<bool> = self.states.iter().map(|s| s.weights.end() > 0.0).collect();
        let mut changed = true;
        while changed {
            changed = false;
            for q in 0..n {
                if live[q] {
                    continue;
                }
                let st = &self.states[q];
                let reaches = self
                    .alphabet
                    .tokens()
                    .any(|t| st.weights.get(Symbol::Token(t)) > 0.0 && live[st.next[t.index()]]);
                if reaches {
                    live[q] = true;
                    changed = true;
                }
            }
        }
        live
    }

    /// Fails if some state cannot reach a state with positive stopping weight,
    /// i.e. if the automaton does not define a distribution over Σ*.
    pub fn check_liveness(&self) -> Result<()> {
        match self.live_states().iter().position(|l| !l) {
            Some(q) => Err(Error::Validation(format!(
                "state {} never reaches a stopping state",
                self.states[q].name
            ))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Pdfa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, st) in self.states.iter().enumerate() {
            let marker = if i == self.initial { "->" } else { "  " };
            write!(f, "{marker} {}:", st.name)?;
            for sym in self.alphabet.symbols() {
                write!(
                    f,
                    " {}={:.4}",
                    self.alphabet.symbol_name(sym),
                    st.weights.get(sym)
                )?;
                if let Symbol::Token(t) = sym {
                    write!(f, "->{}", self.states[st.next[t.index()]].name)?;
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
