//! The tolerant observation table and its expansion to closedness and
//! consistency.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::RowIndex;
use crate::model::{linf, Alphabet, Seq, Symbol, Token};
use crate::oracle::{last_token_prob, Oracle, PrefixWeights};

/// Componentwise t-equality: `max_i |v1_i - v2_i| <= t`.
pub fn t_equal(v1: &[f64], v2: &[f64], t: f64) -> Result<bool> {
    if v1.len() != v2.len() {
        return Err(Error::Contract(format!(
            "t-equality of vectors with lengths {} and {}",
            v1.len(),
            v2.len()
        )));
    }
    Ok(linf(v1, v2) <= t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    /// Variation tolerance.
    pub t: f64,
    /// Minimum last-token probability for a new row.
    pub eps_p: f64,
    /// Minimum conditional probability for a separating suffix.
    pub eps_s: f64,
    pub max_p: Option<usize>,
    /// Once |S| reaches this, consistency is no longer checked.
    pub max_s: Option<usize>,
    pub time_budget: Option<Duration>,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            t: 0.1,
            eps_p: 0.01,
            eps_s: 0.01,
            max_p: Some(5000),
            max_s: Some(100),
            time_budget: None,
        }
    }
}

impl TableConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t", self.t), ("eps_p", self.eps_p), ("eps_s", self.eps_s)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Input(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.max_p == Some(0) || self.max_s == Some(0) {
            return Err(Error::Input(
                "row and column caps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// How an expansion ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpansionOutcome {
    /// The queue drained: closed, and consistent unless the suffix cap
    /// disabled consistency checks.
    Closed,
    RowCap,
    Timeout,
}

/// Queue entry: higher prefix weight first, then shortlex.
#[derive(Clone, Debug)]
struct QueueKey {
    weight: f64,
    prefix: Vec<Token>,
}

impl PartialEq for QueueKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueKey {}

impl PartialOrd for QueueKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueKey {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .weight
            .total_cmp(&self.weight)
            .then(self.prefix.len().cmp(&other.prefix.len()))
            .then_with(|| self.prefix.cmp(&other.prefix))
    }
}

/// Serializable snapshot of the table, used for debugging and golden traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableDump {
    pub prefixes: Vec<String>,
    pub suffixes: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Observation table O_{P,S} of last-token probabilities.
#[derive(Debug)]
pub struct ObservationTable {
    alphabet: Alphabet,
    t: f64,
    prefixes: Vec<Vec<Token>>,
    ids: HashMap<Vec<Token>, usize>,
    suffixes: Vec<Seq>,
    rows: Vec<Vec<f64>>,
    prefix_probs: Vec<f64>,
    index: RowIndex,
    queue: BTreeSet<QueueKey>,
    weights: PrefixWeights,
    // Rows of prefixes outside P under the current S.
    outside: HashMap<Vec<Token>, Vec<f64>>,
    consistency_disabled: bool,
}

impl ObservationTable {
    /// P = {ε}, S = Σ_$, queue = P.
    pub fn new<O: Oracle + ?Sized>(oracle: &O, t: f64) -> Result<Self> {
        let alphabet = oracle.alphabet().clone();
        if alphabet.is_empty() {
            return Err(Error::Input("oracle alphabet is empty".into()));
        }
        let suffixes: Vec<Seq> = alphabet.symbols().map(|s| Seq::extend(&[], s)).collect();
        let width = suffixes.len();
        let mut table = Self {
            alphabet,
            t,
            prefixes: Vec::new(),
            ids: HashMap::new(),
            suffixes,
            rows: Vec::new(),
            prefix_probs: Vec::new(),
            index: RowIndex::new(t, width),
            queue: BTreeSet::new(),
            weights: PrefixWeights::new(),
            outside: HashMap::new(),
            consistency_disabled: false,
        };
        let row = table.compute_row(oracle, &[])?;
        table.insert_row(vec![], row, 1.0);
        table.reset_queue();
        Ok(table)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn tolerance(&self) -> f64 {
        self.t
    }

    pub fn prefixes(&self) -> &[Vec<Token>] {
        &self.prefixes
    }

    pub fn suffixes(&self) -> &[Seq] {
        &self.suffixes
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id]
    }

    /// P^p of row `id`.
    pub fn prefix_prob(&self, id: usize) -> f64 {
        self.prefix_probs[id]
    }

    pub fn id_of(&self, prefix: &[Token]) -> Option<usize> {
        self.ids.get(prefix).copied()
    }

    pub fn num_rows(&self) -> usize {
        self.prefixes.len()
    }

    pub fn num_suffixes(&self) -> usize {
        self.suffixes.len()
    }

    pub fn consistency_disabled(&self) -> bool {
        self.consistency_disabled
    }

    /// Memoized P^p for arbitrary prefixes.
    pub fn prefix_weight<O: Oracle + ?Sized>(&mut self, oracle: &O, w: &[Token]) -> Result<f64> {
        self.weights.prefix_prob(oracle, w)
    }

    /// Row ids that may be t-equal to `v` (superset).
    pub fn find_close_rows(&self, v: &[f64]) -> Vec<usize> {
        self.index.find_close_rows(v)
    }

    /// Row ids exactly t-equal to `v`.
    pub fn t_equal_rows(&self, v: &[f64]) -> Vec<usize> {
        self.index
            .find_close_rows(v)
            .into_iter()
            .filter(|id| linf(&self.rows[*id], v) <= self.t)
            .collect()
    }

    fn compute_row<O: Oracle + ?Sized>(&self, oracle: &O, prefix: &[Token]) -> Result<Vec<f64>> {
        crate::oracle::row(oracle, prefix, &self.suffixes)
    }

    /// O_S(p) for any prefix, from the table when p ∈ P.
    pub fn row_of<O: Oracle + ?Sized>(&mut self, oracle: &O, prefix: &[Token]) -> Result<Vec<f64>> {
        if let Some(id) = self.id_of(prefix) {
            return Ok(self.rows[id].clone());
        }
        if let Some(row) = self.outside.get(prefix) {
            return Ok(row.clone());
        }
        let row = self.compute_row(oracle, prefix)?;
        self.outside.insert(prefix.to_vec(), row.clone());
        Ok(row)
    }

    fn insert_row(&mut self, prefix: Vec<Token>, row: Vec<f64>, weight: f64) -> usize {
        let id = self.prefixes.len();
        self.index.insert(id, &row);
        self.ids.insert(prefix.clone(), id);
        self.outside.remove(&prefix);
        self.prefixes.push(prefix);
        self.rows.push(row);
        self.prefix_probs.push(weight);
        id
    }

    fn add_row<O: Oracle + ?Sized>(&mut self, oracle: &O, prefix: &[Token]) -> Result<usize> {
        debug_assert!(prefix.is_empty() || self.ids.contains_key(&prefix[..prefix.len() - 1]));
        let row = self.row_of(oracle, prefix)?;
        let weight = self.weights.prefix_prob(oracle, prefix)?;
        Ok(self.insert_row(prefix.to_vec(), row, weight))
    }

    /// Appends a column and rebuilds the row index.
    pub fn add_suffix<O: Oracle + ?Sized>(&mut self, oracle: &O, suffix: Seq) -> Result<()> {
        if suffix.is_empty() {
            return Err(Error::Contract("suffixes must be non-empty".into()));
        }
        let cells = self
            .prefixes
            .iter()
            .map(|p| last_token_prob(oracle, &suffix.prepend(p)))
            .collect::<Result<Vec<_>>>()?;
        for (row, cell) in self.rows.iter_mut().zip(cells) {
            row.push(cell);
        }
        self.suffixes.push(suffix);
        self.outside.clear();
        let mut index = RowIndex::new(self.t, self.suffixes.len());
        for (id, row) in self.rows.iter().enumerate() {
            index.insert(id, row);
        }
        self.index = index;
        Ok(())
    }

    fn push_queue<O: Oracle + ?Sized>(&mut self, oracle: &O, prefix: Vec<Token>) -> Result<()> {
        let weight = self.weights.prefix_prob(oracle, &prefix)?;
        self.queue.insert(QueueKey { weight, prefix });
        Ok(())
    }

    /// L := P
    pub fn reset_queue(&mut self) {
        self.queue = self
            .prefixes
            .iter()
            .zip(&self.prefix_probs)
            .map(|(p, w)| QueueKey {
                weight: *w,
                prefix: p.clone(),
            })
            .collect();
    }

    /// Number of prefixes of `w[:-1]` not yet in P.
    pub fn counterexample_rows(&self, w: &Seq) -> usize {
        let body = w.init();
        (0..=body.len())
            .filter(|k| self.id_of(&body[..*k]).is_none())
            .count()
    }

    /// Adds every prefix of `w[:-1]` (ε through `w[:-1]` itself) to P,
    /// bypassing the prefix threshold, and resets the queue. Returns the
    /// number of rows added.
    pub fn add_counterexample<O: Oracle + ?Sized>(&mut self, oracle: &O, w: &Seq) -> Result<usize> {
        if w.is_empty() {
            return Err(Error::Contract("counterexample must be non-empty".into()));
        }
        let body = w.init().to_vec();
        let mut added = 0;
        for k in 0..=body.len() {
            if self.id_of(&body[..k]).is_none() {
                self.add_row(oracle, &body[..k])?;
                added += 1;
            }
        }
        self.reset_queue();
        Ok(added)
    }

    /// Separating suffix for a row found inconsistent with its t-equal
    /// partners: among σ·s (σ ∈ Σ, s ∈ S) on which some partner's σ-successor
    /// row differs beyond t, the one with the highest minimum conditional
    /// probability, provided that minimum is at least `eps_s`.
    pub fn find_separating_suffix<O: Oracle + ?Sized>(
        &mut self,
        oracle: &O,
        id: usize,
        eps_s: f64,
    ) -> Result<Option<Seq>> {
        let partners: Vec<usize> = self
            .t_equal_rows(&self.rows[id].clone())
            .into_iter()
            .filter(|p2| *p2 != id)
            .collect();
        let mut best: Option<(f64, Seq)> = None;
        for p2 in partners {
            if let Some((score, s)) = self.select_separating_suffix(oracle, id, p2)? {
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    best = Some((score, s));
                }
            }
        }
        Ok(best.filter(|(score, _)| *score >= eps_s).map(|(_, s)| s))
    }

    /// Best separating candidate for one pair, with its minimum conditional
    /// probability; `None` when the pair is consistent.
    pub fn select_separating_suffix<O: Oracle + ?Sized>(
        &mut self,
        oracle: &O,
        p1: usize,
        p2: usize,
    ) -> Result<Option<(f64, Seq)>> {
        let pref1 = self.prefixes[p1].clone();
        let pref2 = self.prefixes[p2].clone();
        let w1 = self.prefix_probs[p1];
        let w2 = self.prefix_probs[p2];
        let mut best: Option<(f64, Seq)> = None;
        let tokens: Vec<Token> = self.alphabet.tokens().collect();
        for tok in tokens {
            let mut ext1 = pref1.clone();
            ext1.push(tok);
            let mut ext2 = pref2.clone();
            ext2.push(tok);
            let r1 = self.row_of(oracle, &ext1)?;
            let r2 = self.row_of(oracle, &ext2)?;
            for (j, (a, b)) in r1.iter().zip(&r2).enumerate() {
                if (a - b).abs() <= self.t {
                    continue;
                }
                let cand = self.suffixes[j].prepend(&[tok]);
                let c1 = conditional(self.weights.seq_prob(oracle, &cand.prepend(&pref1))?, w1);
                let c2 = conditional(self.weights.seq_prob(oracle, &cand.prepend(&pref2))?, w2);
                let score = c1.min(c2);
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    best = Some((score, cand));
                }
            }
        }
        Ok(best)
    }

    /// Processes the queue until it drains or a cap or the deadline is hit.
    pub fn expand<O: Oracle + ?Sized>(
        &mut self,
        oracle: &O,
        cfg: &TableConfig,
        deadline: Option<Instant>,
    ) -> Result<ExpansionOutcome> {
        loop {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return Ok(ExpansionOutcome::Timeout);
            }
            let Some(QueueKey { prefix, .. }) = self.queue.pop_first() else {
                return Ok(ExpansionOutcome::Closed);
            };
            match self.id_of(&prefix) {
                Some(id) => {
                    if cfg.max_s.is_some_and(|cap| self.suffixes.len() >= cap) {
                        self.consistency_disabled = true;
                    }
                    if !self.consistency_disabled {
                        if let Some(suffix) = self.find_separating_suffix(oracle, id, cfg.eps_s)? {
                            self.add_suffix(oracle, suffix)?;
                            self.reset_queue();
                            continue;
                        }
                    }
                }
                None => {
                    let candidate = Seq::new(prefix.clone(), false);
                    if last_token_prob(oracle, &candidate)? < cfg.eps_p {
                        continue;
                    }
                    let row = self.row_of(oracle, &prefix)?;
                    if !self.t_equal_rows(&row).is_empty() {
                        continue;
                    }
                    if cfg.max_p.is_some_and(|cap| self.prefixes.len() >= cap) {
                        return Ok(ExpansionOutcome::RowCap);
                    }
                    self.add_row(oracle, &prefix)?;
                }
            }
            for tok in self.alphabet.tokens().collect::<Vec<_>>() {
                let mut next = prefix.clone();
                next.push(tok);
                self.push_queue(oracle, next)?;
            }
        }
    }

    /// Every prefix of every row is itself a row.
    pub fn is_prefix_closed(&self) -> bool {
        self.prefixes
            .iter()
            .all(|p| (0..p.len()).all(|k| self.ids.contains_key(&p[..k])))
    }

    /// |S| ≤ |P|(|P|−1)/2 + |Σ_$|
    pub fn suffix_bound_holds(&self) -> bool {
        let p = self.prefixes.len();
        self.suffixes.len() <= p * p.saturating_sub(1) / 2 + self.alphabet.len() + 1
    }

    /// Renders a prefix for display; ε is `ε`.
    pub fn render_prefix(&self, prefix: &[Token]) -> String {
        if prefix.is_empty() {
            "ε".into()
        } else {
            self.alphabet.render(prefix, " ")
        }
    }

    pub fn dump(&self) -> TableDump {
        TableDump {
            prefixes: self
                .prefixes
                .iter()
                .map(|p| self.alphabet.render(p, " "))
                .collect(),
            suffixes: self
                .suffixes
                .iter()
                .map(|s| {
                    let mut parts: Vec<&str> =
                        s.tokens.iter().map(|t| self.alphabet.name(*t)).collect();
                    if s.terminated {
                        parts.push(crate::model::END);
                    }
                    parts.join(" ")
                })
                .collect(),
            rows: self.rows.clone(),
        }
    }

    /// Last symbol of each suffix column, in column order.
    pub fn column_symbols(&self) -> Vec<Symbol> {
        self.suffixes
            .iter()
            .map(|s| s.last().expect("suffixes are non-empty"))
            .collect()
    }
}

fn conditional(joint: f64, base: f64) -> f64 {
    if base > 0.0 {
        joint / base
    } else {
        0.0
    }
}
