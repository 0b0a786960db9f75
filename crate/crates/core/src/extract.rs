//! The outer learning loop: expand, build a hypothesis, query equivalence,
//! repeat; with anytime stopping and a per-round report.

use std::collections::VecDeque;
use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::construct::{construct, ConstructionTrace, MatchPolicy};
use crate::error::{Error, Result};
use crate::eval::exact_divergence;
use crate::model::{Alphabet, Pdfa, Seq, Symbol, Token, END};
use crate::oracle::{sample_target_with, CachedOracle, Oracle, QueryCounters};
use crate::table::{ExpansionOutcome, ObservationTable, TableConfig};

/// Per-sample cap used when estimating the default truncation length.
pub const PILOT_MAX_LEN: usize = 10_000;
/// Number of target draws used to estimate the default truncation length.
pub const PILOT_SAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub table: TableConfig,
    /// Samples per equivalence query.
    pub eq_samples: usize,
    /// Sample truncation length; estimated from the target when unset.
    pub eq_max_len: Option<usize>,
    pub seed: u64,
    /// Cap on equivalence queries.
    pub max_rounds: Option<usize>,
    pub match_policy: MatchPolicy,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            table: TableConfig::default(),
            eq_samples: 500,
            eq_max_len: None,
            seed: 0,
            max_rounds: None,
            match_policy: MatchPolicy::Nearest,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        self.table.validate()?;
        if self.eq_samples == 0 {
            return Err(Error::Input("eq_samples must be at least 1".into()));
        }
        if self.eq_max_len == Some(0) || self.max_rounds == Some(0) {
            return Err(Error::Input(
                "eq_max_len and max_rounds must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Accepted,
    RowCap,
    /// Accepted after the column cap switched off consistency checks.
    SuffixCap,
    Time,
    RoundCap,
    Error,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StopReason::Accepted => "accepted",
            StopReason::RowCap => "row-cap",
            StopReason::SuffixCap => "suffix-cap(consistency disabled)",
            StopReason::Time => "time",
            StopReason::RoundCap => "round-cap",
            StopReason::Error => "error",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub hypothesis_states: usize,
    pub rows: usize,
    pub columns: usize,
    /// Rendered counterexample u·σ; absent when the round accepted or stopped.
    pub counterexample: Option<String>,
    /// Rows added by the counterexample.
    pub rows_added: usize,
    pub queries: QueryCounters,
    /// Wall time since the start of the run. Not serialized, so that reports
    /// of identical runs are byte-identical.
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Result of one extraction run.
#[derive(Clone, Debug, Serialize)]
pub struct ExtractionReport {
    pub config: ExtractionConfig,
    pub stop_reason: StopReason,
    pub error: Option<String>,
    pub states: usize,
    pub rounds: Vec<RoundRecord>,
    /// Final P, tokens separated by spaces; ε is the empty string.
    pub prefixes: Vec<String>,
    /// Final S, tokens separated by spaces.
    pub suffixes: Vec<String>,
    pub queries: QueryCounters,
    #[serde(skip)]
    pub pdfa: Option<Pdfa>,
    #[serde(skip)]
    pub p_snapshot: Vec<Vec<Token>>,
    #[serde(skip)]
    pub s_snapshot: Vec<Seq>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl ExtractionReport {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }
}

/// Outcome of an equivalence query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EqOutcome {
    Accept,
    /// u·σ with σ ∈ Σ_$.
    Counterexample(Seq),
    Timeout,
}

/// An equivalence oracle.
pub trait Equivalence {
    fn check(
        &mut self,
        target: &dyn Oracle,
        hypothesis: &Pdfa,
        round: usize,
        deadline: Option<Instant>,
    ) -> Result<EqOutcome>;
}

/// Component of Σ_$ where the next-token distributions after `u` differ
/// most, with the gap; lowest slot on ties.
pub fn max_gap(target: &dyn Oracle, hypothesis: &Pdfa, u: &[Token]) -> Result<(Symbol, f64)> {
    let dt = target.next_dist(u)?;
    let dh = hypothesis.next_dist(u)?;
    let sigma = hypothesis.alphabet().len();
    let mut best = (0, f64::NEG_INFINITY);
    for (slot, (a, b)) in dt.probs().iter().zip(dh.probs()).enumerate() {
        let gap = (a - b).abs();
        if gap > best.1 {
            best = (slot, gap);
        }
    }
    Ok((Symbol::from_slot(best.0, sigma), best.1))
}

/// Sampling equivalence: alternately samples target and hypothesis and
/// checks every prefix of every sample.
#[derive(Debug)]
pub struct SamplingEquivalence {
    pub samples: usize,
    pub max_len: Option<usize>,
    pub seed: u64,
    pub t: f64,
}

impl SamplingEquivalence {
    pub fn new(cfg: &ExtractionConfig) -> Self {
        Self {
            samples: cfg.eq_samples,
            max_len: cfg.eq_max_len,
            seed: cfg.seed,
            t: cfg.table.t,
        }
    }

    /// 4× the mean length of the pilot draws, at least 1.
    fn estimate_max_len(&self, target: &dyn Oracle) -> Result<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX);
        let mut total = 0usize;
        for _ in 0..PILOT_SAMPLES {
            total += sample_target_with(target, &mut rng, PILOT_MAX_LEN)?
                .tokens
                .len();
        }
        Ok((4 * total).div_ceil(PILOT_SAMPLES).max(1))
    }
}

impl Equivalence for SamplingEquivalence {
    fn check(
        &mut self,
        target: &dyn Oracle,
        hypothesis: &Pdfa,
        round: usize,
        deadline: Option<Instant>,
    ) -> Result<EqOutcome> {
        let max_len = match self.max_len {
            Some(m) => m,
            None => {
                let m = self.estimate_max_len(target)?;
                self.max_len = Some(m);
                m
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(round as u64);
        for i in 0..self.samples {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return Ok(EqOutcome::Timeout);
            }
            let sample = if i % 2 == 0 {
                sample_target_with(target, &mut rng, max_len)?
            } else {
                hypothesis.sample_with(&mut rng, max_len)
            };
            for k in 0..=sample.tokens.len() {
                let u = &sample.tokens[..k];
                let (sym, gap) = max_gap(target, hypothesis, u)?;
                if gap > self.t {
                    return Ok(EqOutcome::Counterexample(Seq::extend(u, sym)));
                }
            }
        }
        Ok(EqOutcome::Accept)
    }
}

/// Replays a fixed list of prefixes u, skipping any on which the models
/// agree, and accepts once the list is exhausted.
#[derive(Debug)]
pub struct ScriptedEquivalence {
    words: VecDeque<Vec<Token>>,
    t: f64,
}

impl ScriptedEquivalence {
    pub fn new(words: impl IntoIterator<Item = Vec<Token>>, t: f64) -> Self {
        Self {
            words: words.into_iter().collect(),
            t,
        }
    }
}

impl Equivalence for ScriptedEquivalence {
    fn check(
        &mut self,
        target: &dyn Oracle,
        hypothesis: &Pdfa,
        _round: usize,
        _deadline: Option<Instant>,
    ) -> Result<EqOutcome> {
        while let Some(u) = self.words.pop_front() {
            let (sym, gap) = max_gap(target, hypothesis, &u)?;
            if gap > self.t {
                return Ok(EqOutcome::Counterexample(Seq::extend(&u, sym)));
            }
        }
        Ok(EqOutcome::Accept)
    }
}

/// Exact equivalence against a known PDFA target by product search.
#[derive(Debug)]
pub struct ExactEquivalence {
    pub target: Pdfa,
    pub t: f64,
}

impl Equivalence for ExactEquivalence {
    fn check(
        &mut self,
        target: &dyn Oracle,
        hypothesis: &Pdfa,
        _round: usize,
        _deadline: Option<Instant>,
    ) -> Result<EqOutcome> {
        match exact_divergence(hypothesis, &self.target, self.t)? {
            None => Ok(EqOutcome::Accept),
            Some(u) => {
                let (sym, _) = max_gap(target, hypothesis, &u)?;
                Ok(EqOutcome::Counterexample(Seq::extend(&u, sym)))
            }
        }
    }
}

/// State handed to an [`Observer`] after each hypothesis is built.
pub struct RoundEvent<'a> {
    pub round: usize,
    pub table: &'a ObservationTable,
    pub trace: &'a ConstructionTrace,
    pub hypothesis: &'a Pdfa,
}

pub trait Observer {
    fn on_round(&mut self, _event: &RoundEvent<'_>) {}
}

/// Observer that ignores everything.
pub struct NoObserver;

impl Observer for NoObserver {}

/// Tokens separated by spaces, with a trailing `$` for terminated words.
pub fn render_word(alphabet: &Alphabet, w: &Seq) -> String {
    let mut parts: Vec<&str> = w.tokens.iter().map(|t| alphabet.name(*t)).collect();
    if w.terminated {
        parts.push(END);
    }
    parts.join(" ")
}

/// Extraction with sampling equivalence queries.
pub fn extract<O: Oracle + ?Sized>(oracle: &O, cfg: &ExtractionConfig) -> Result<ExtractionReport> {
    let mut eq = SamplingEquivalence::new(cfg);
    extract_with(oracle, cfg, &mut eq, &mut NoObserver)
}

struct Run<'a, O: Oracle + ?Sized> {
    cached: CachedOracle<&'a O>,
    cfg: &'a ExtractionConfig,
    start: Instant,
    rounds: Vec<RoundRecord>,
    pdfa: Option<Pdfa>,
}

impl<O: Oracle + ?Sized> Run<'_, O> {
    fn finish(
        self,
        table: Option<&ObservationTable>,
        stop_reason: StopReason,
        error: Option<String>,
    ) -> ExtractionReport {
        let alphabet = self.cached.alphabet().clone();
        let (p_snapshot, s_snapshot) = table
            .map(|t| (t.prefixes().to_vec(), t.suffixes().to_vec()))
            .unwrap_or_default();
        ExtractionReport {
            config: self.cfg.clone(),
            stop_reason,
            error,
            states: self.pdfa.as_ref().map_or(0, Pdfa::num_states),
            rounds: self.rounds,
            prefixes: p_snapshot.iter().map(|p| alphabet.render(p, " ")).collect(),
            suffixes: s_snapshot
                .iter()
                .map(|s| render_word(&alphabet, s))
                .collect(),
            queries: self.cached.counters(),
            pdfa: self.pdfa,
            p_snapshot,
            s_snapshot,
            elapsed: self.start.elapsed(),
        }
    }
}

/// The learning loop with a caller-supplied equivalence oracle and observer.
///
/// Oracle failures end the run with [`StopReason::Error`] and the last
/// hypothesis built, if any; only an invalid configuration is an `Err`.
pub fn extract_with<O: Oracle + ?Sized>(
    oracle: &O,
    cfg: &ExtractionConfig,
    eq: &mut dyn Equivalence,
    observer: &mut dyn Observer,
) -> Result<ExtractionReport> {
    cfg.validate()?;
    if oracle.alphabet().is_empty() {
        return Err(Error::Input("oracle alphabet is empty".into()));
    }
    let mut run = Run {
        cached: CachedOracle::new(oracle),
        cfg,
        start: Instant::now(),
        rounds: Vec::new(),
        pdfa: None,
    };
    let deadline = cfg.table.time_budget.map(|b| run.start + b);
    let mut table = match ObservationTable::new(&run.cached, cfg.table.t) {
        Ok(t) => t,
        Err(e) => return Ok(run.finish(None, StopReason::Error, Some(e.to_string()))),
    };
    let mut round = 0;
    loop {
        round += 1;
        let step = one_round(&mut run, &mut table, eq, observer, round, deadline);
        match step {
            Ok(None) => continue,
            Ok(Some(reason)) => return Ok(run.finish(Some(&table), reason, None)),
            Err(e) => return Ok(run.finish(Some(&table), StopReason::Error, Some(e.to_string()))),
        }
    }
}

/// Expands, builds and queries once; returns a stop reason when the run ends.
fn one_round<O: Oracle + ?Sized>(
    run: &mut Run<'_, O>,
    table: &mut ObservationTable,
    eq: &mut dyn Equivalence,
    observer: &mut dyn Observer,
    round: usize,
    deadline: Option<Instant>,
) -> Result<Option<StopReason>> {
    let cfg = run.cfg;
    let outcome = table.expand(&run.cached, &cfg.table, deadline)?;
    let (pdfa, _, trace) = construct(table, &run.cached, cfg.match_policy)?;
    observer.on_round(&RoundEvent {
        round,
        table,
        trace: &trace,
        hypothesis: &pdfa,
    });
    let mut record = RoundRecord {
        round,
        hypothesis_states: pdfa.num_states(),
        rows: table.num_rows(),
        columns: table.num_suffixes(),
        counterexample: None,
        rows_added: 0,
        queries: run.cached.counters(),
        elapsed: run.start.elapsed(),
    };
    let early = match outcome {
        ExpansionOutcome::RowCap => Some(StopReason::RowCap),
        ExpansionOutcome::Timeout => Some(StopReason::Time),
        ExpansionOutcome::Closed if deadline.is_some_and(|d| Instant::now() >= d) => {
            Some(StopReason::Time)
        }
        ExpansionOutcome::Closed => None,
    };
    if let Some(reason) = early {
        run.rounds.push(record);
        run.pdfa = Some(pdfa);
        return Ok(Some(reason));
    }
    let answer = eq.check(&run.cached, &pdfa, round, deadline);
    let answer = match answer {
        Ok(a) => a,
        Err(e) => {
            run.rounds.push(record);
            run.pdfa = Some(pdfa);
            return Err(e);
        }
    };
    let stop = match answer {
        EqOutcome::Accept if table.consistency_disabled() => Some(StopReason::SuffixCap),
        EqOutcome::Accept => Some(StopReason::Accepted),
        EqOutcome::Timeout => Some(StopReason::Time),
        EqOutcome::Counterexample(_) if cfg.max_rounds.is_some_and(|m| round >= m) => {
            Some(StopReason::RoundCap)
        }
        EqOutcome::Counterexample(w)
            if cfg
                .table
                .max_p
                .is_some_and(|cap| table.num_rows() + table.counterexample_rows(&w) > cap) =>
        {
            Some(StopReason::RowCap)
        }
        EqOutcome::Counterexample(w) => {
            record.counterexample = Some(render_word(table.alphabet(), &w));
            run.pdfa = Some(pdfa);
            let added = table.add_counterexample(&run.cached, &w);
            record.rows_added = *added.as_ref().unwrap_or(&0);
            record.queries = run.cached.counters();
            run.rounds.push(record);
            let added = added?;
            if added == 0 {
                return Err(Error::Contract(format!(
                    "counterexample {} did not grow the table",
                    render_word(table.alphabet(), &w)
                )));
            }
            return Ok(None);
        }
    };
    run.rounds.push(record);
    run.pdfa = Some(pdfa);
    Ok(stop)
}

/// Advice on the tolerance from a set of finished runs.
#[derive(Clone, Debug, PartialEq)]
pub enum ToleranceHint {
    /// Every run collapsed to a single state.
    Reduce {
        from: f64,
        to: f64,
    },
    /// The largest tolerance whose run did not collapse.
    Adequate(f64),
    NoSuggestion,
}

impl fmt::Display for ToleranceHint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToleranceHint::Reduce { from, to } => write!(
                f,
                "t = {from} reached equivalence on a single state; try t = {to}"
            ),
            ToleranceHint::Adequate(t) => write!(f, "t = {t} is adequate"),
            ToleranceHint::NoSuggestion => f.write_str("no suggestion"),
        }
    }
}

/// `runs` holds (tolerance, final state count) pairs.
pub fn choose_tolerance_hint(runs: &[(f64, usize)]) -> ToleranceHint {
    if runs.iter().all(|(_, size)| *size > 1) {
        return ToleranceHint::NoSuggestion;
    }
    let adequate = runs
        .iter()
        .filter(|(_, size)| *size > 1)
        .map(|(t, _)| *t)
        .fold(None, |best: Option<f64>, t| {
            Some(best.map_or(t, |b| b.max(t)))
        });
    match adequate {
        Some(t) => ToleranceHint::Adequate(t),
        None => {
            let from = runs.iter().map(|(t, _)| *t).fold(f64::INFINITY, f64::min);
            ToleranceHint::Reduce {
                from,
                to: from / 2.0,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammars;

    #[test]
    fn tolerance_hints() {
        assert_eq!(
            choose_tolerance_hint(&[(0.1, 1)]),
            ToleranceHint::Reduce {
                from: 0.1,
                to: 0.05
            }
        );
        assert_eq!(
            choose_tolerance_hint(&[(0.1, 9)]),
            ToleranceHint::NoSuggestion
        );
        assert_eq!(
            choose_tolerance_hint(&[(0.2, 1), (0.1, 4)]),
            ToleranceHint::Adequate(0.1)
        );
    }

    #[test]
    fn copy_of_target_is_accepted() {
        let target = grammars::uhl(3).unwrap();
        let mut eq = SamplingEquivalence {
            samples: 200,
            max_len: None,
            seed: 3,
            t: 0.0,
        };
        assert_eq!(
            eq.check(&target, &target, 1, None).unwrap(),
            EqOutcome::Accept
        );
    }

    #[test]
    fn self_extraction_accepts_in_one_round() {
        // Every state of this target has its own next-token row.
        let target = grammars::uhl(2).unwrap();
        let report = extract(&target, &ExtractionConfig::default()).unwrap();
        assert_eq!(report.stop_reason, StopReason::Accepted);
        assert_eq!(report.rounds.len(), 1);
        assert_eq!(report.states, 5);
        let learned = report.pdfa.unwrap();
        assert_eq!(exact_divergence(&learned, &target, 0.0).unwrap(), None);
    }

    #[test]
    fn round_cap_returns_current_hypothesis() {
        let target = grammars::appb_fixture();
        let cfg = ExtractionConfig {
            max_rounds: Some(1),
            ..ExtractionConfig::default()
        };
        let mut eq = ScriptedEquivalence::new([target.alphabet().parse_chars("aaa").unwrap()], 0.1);
        let report = extract_with(&target, &cfg, &mut eq, &mut NoObserver).unwrap();
        assert_eq!(report.stop_reason, StopReason::RoundCap);
        assert_eq!(report.states, 2);
        assert!(report.rounds[0].counterexample.is_none());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let target = grammars::appb_fixture();
        let cfg = ExtractionConfig {
            eq_samples: 0,
            ..ExtractionConfig::default()
        };
        assert!(matches!(extract(&target, &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn time_budget_stops_with_a_pdfa() {
        let target = grammars::uhl(2).unwrap();
        let cfg = ExtractionConfig {
            table: TableConfig {
                time_budget: Some(Duration::ZERO),
                ..TableConfig::default()
            },
            ..ExtractionConfig::default()
        };
        let report = extract(&target, &cfg).unwrap();
        assert_eq!(report.stop_reason, StopReason::Time);
        assert!(report.pdfa.is_some());
    }

    #[test]
    fn row_cap_blocks_counterexample_growth() {
        let target = grammars::appb_fixture();
        let cfg = ExtractionConfig {
            table: TableConfig {
                t: 0.1,
                eps_p: 0.0,
                eps_s: 0.0,
                max_p: Some(3),
                ..TableConfig::default()
            },
            ..ExtractionConfig::default()
        };
        // "aaa" would add aa and aaa to P = {ε, a}.
        let script = [target.alphabet().parse_chars("aaa").unwrap()];
        let mut eq = ScriptedEquivalence::new(script, 0.1);
        let r = extract_with(&target, &cfg, &mut eq, &mut NoObserver).unwrap();
        assert_eq!(r.stop_reason, StopReason::RowCap);
        assert_eq!(r.prefixes.len(), 2);
        assert_eq!(r.rounds.len(), 1);
        assert_eq!(r.rounds[0].counterexample, None);
    }
}
