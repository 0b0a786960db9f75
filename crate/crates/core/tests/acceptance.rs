//! Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on
//! any failure.
//!
//! Run: cargo test -p pdfa-core --test acceptance

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pdfa_core::eval::{ndcg_score, DEFAULT_MAX_LEN};
use pdfa_core::extract::{extract_with, Observer, RoundEvent, ScriptedEquivalence};
use pdfa_core::{
    exact_divergence, extract, grammars, ndcg, t_consistency_audit, wer, Equivalence,
    ExactEquivalence, ExtractionConfig, ExtractionReport, NextDist, NgramModel, Pdfa,
    SamplingEquivalence, Seq, StopReason, TableConfig, Token,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    check(took < limit, || {
        format!("{what} took {took:.2?}, limit {limit:?}")
    })
}

fn err(e: pdfa_core::Error) -> String {
    e.to_string()
}

/// WER 0 and NDCG_k 1 for every k, over several metric seeds.
fn perfect_metrics(
    model: &Pdfa,
    target: &Pdfa,
    samples: usize,
    seeds: &[u64],
    ks: &[usize],
) -> Result<(), String> {
    for &seed in seeds {
        let w = wer(model, target, samples, seed, DEFAULT_MAX_LEN).map_err(err)?;
        check(w.wer == 0.0, || format!("WER {} with seed {seed}", w.wer))?;
        for &k in ks {
            let n = ndcg(model, target, k, samples, seed, DEFAULT_MAX_LEN).map_err(err)?;
            check(n.ndcg == 1.0, || {
                format!("NDCG_{k} {} with seed {seed}", n.ndcg)
            })?;
        }
    }
    Ok(())
}

fn golden_trace() -> Outcome {
    let start = Instant::now();
    let target = grammars::appb_fixture();
    let cfg = ExtractionConfig {
        table: TableConfig {
            t: 0.1,
            eps_p: 0.0,
            eps_s: 0.0,
            ..TableConfig::default()
        },
        ..ExtractionConfig::default()
    };
    let script = ["aaa", "bb"].map(|w| target.alphabet().parse_chars(w).unwrap());
    let mut eq = ScriptedEquivalence::new(script, 0.1);
    let mut rec = Trace::default();
    let report = extract_with(&target, &cfg, &mut eq, &mut rec).map_err(err)?;
    within(start, Duration::from_secs(1), "golden trace")?;

    let norm = |cs: &[Vec<String>]| -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = cs
            .iter()
            .map(|c| {
                let mut c: Vec<String> = c.iter().map(|p| p.replace(' ', "")).collect();
                c.sort();
                c
            })
            .collect();
        out.sort();
        out
    };
    let lit = |cs: &[&[&str]]| -> Vec<Vec<String>> {
        let cs: Vec<Vec<String>> = cs
            .iter()
            .map(|c| c.iter().map(|s| s.to_string()).collect())
            .collect();
        norm(&cs)
    };
    check(
        rec.prefixes.first() == Some(&vec!["".to_string(), "a".into()]),
        || format!("P after round 1 = {:?}", rec.prefixes.first()),
    )?;
    let s: Vec<&Vec<String>> = rec.suffixes.iter().collect();
    check(
        s.len() == 3
            && s[0] == &["a", "b", "$"]
            && s[1] == &["a", "b", "$", "aa"]
            && s[2] == &["a", "b", "$", "aa", "ba"],
        || format!("S evolution {s:?}"),
    )?;
    let t2 = &rec.traces[1];
    let t3 = &rec.traces[2];
    let stages = [
        (norm(&t2.0), lit(&[&["ε", "aa", "aaa"], &["a"]])),
        (norm(&t2.1), lit(&[&["aa", "aaa"], &["a"], &["ε"]])),
        (norm(&t3.0), lit(&[&["ε", "aa", "aaa", "b"], &["a", "bb"]])),
        (
            norm(&t3.1),
            lit(&[&["aa", "aaa", "b"], &["a", "bb"], &["ε"]]),
        ),
        (
            norm(&t3.2),
            lit(&[&["aa", "aaa"], &["a", "bb"], &["ε"], &["b"]]),
        ),
    ];
    for (i, (got, want)) in stages.iter().enumerate() {
        check(got == want, || {
            format!("clustering stage {i}: {got:?} != {want:?}")
        })?;
    }
    let h3 = report.pdfa.ok_or("no final hypothesis")?;
    check(h3.num_states() == 4, || {
        format!("final hypothesis has {} states", h3.num_states())
    })?;
    let div = exact_divergence(&h3, &target, 0.1).map_err(err)?;
    check(div.is_none(), || format!("divergence at {div:?}"))?;
    Ok(format!("3 rounds, 4 states, {:.0?}", start.elapsed()))
}

type Rendered = Vec<Vec<String>>;

/// (initial, determinism, cliques) stages and the table shape per round.
#[derive(Default)]
struct Trace {
    prefixes: Vec<Vec<String>>,
    suffixes: Vec<Vec<String>>,
    traces: Vec<(Rendered, Rendered, Rendered)>,
}

impl Observer for Trace {
    fn on_round(&mut self, e: &RoundEvent<'_>) {
        let d = e.table.dump();
        self.prefixes
            .push(d.prefixes.iter().map(|p| p.replace(' ', "")).collect());
        self.suffixes
            .push(d.suffixes.iter().map(|p| p.replace(' ', "")).collect());
        self.traces.push((
            e.trace.initial.clone(),
            e.trace.determinism_1.clone(),
            e.trace.cliques.clone(),
        ));
    }
}

fn uhl_config() -> ExtractionConfig {
    ExtractionConfig {
        table: TableConfig {
            t: 0.1,
            eps_p: 0.01,
            eps_s: 0.01,
            ..TableConfig::default()
        },
        ..ExtractionConfig::default()
    }
}

fn uhl_recovery() -> Outcome {
    let mut notes = Vec::new();
    for (i, want) in [(1u8, 9usize), (2, 5), (3, 4)] {
        let start = Instant::now();
        let target = grammars::uhl(i).map_err(err)?;
        let report = extract(&target, &uhl_config()).map_err(err)?;
        let learned = report
            .pdfa
            .as_ref()
            .ok_or_else(|| format!("uhl {i}: no PDFA"))?;
        check(report.stop_reason == StopReason::Accepted, || {
            format!("uhl {i}: stopped with {}", report.stop_reason)
        })?;
        check(learned.num_states() == want, || {
            format!("uhl {i}: {} states, want {want}", learned.num_states())
        })?;
        let div = exact_divergence(learned, &target, 0.1).map_err(err)?;
        check(div.is_none(), || format!("uhl {i}: divergence at {div:?}"))?;
        perfect_metrics(learned, &target, 2000, &[0, 1, 2, 3, 4], &[2])
            .map_err(|e| format!("uhl {i}: {e}"))?;
        within(start, Duration::from_secs(60), &format!("uhl {i}"))?;
        notes.push(format!("uhl{i}={want} states/{:.1?}", start.elapsed()));
    }
    Ok(notes.join(", "))
}

fn tomita_recovery() -> Outcome {
    let start = Instant::now();
    let cfg = ExtractionConfig {
        table: TableConfig {
            t: 0.1,
            eps_p: 0.0,
            eps_s: 0.0,
            max_p: Some(5000),
            max_s: Some(100),
            time_budget: None,
        },
        ..ExtractionConfig::default()
    };
    let mut sizes = Vec::new();
    for (i, want) in (1..=7u8).zip([2usize, 3, 5, 4, 4, 3, 5]) {
        let target = grammars::tomita_weighted(i).map_err(err)?;
        let report = extract(&target, &cfg).map_err(err)?;
        let learned = report
            .pdfa
            .as_ref()
            .ok_or_else(|| format!("tomita {i}: no PDFA"))?;
        check(learned.num_states() == want, || {
            format!("tomita {i}: {} states, want {want}", learned.num_states())
        })?;
        let div = exact_divergence(learned, &target, 1e-9).map_err(err)?;
        check(div.is_none(), || {
            format!("tomita {i}: weights differ after {div:?}")
        })?;
        perfect_metrics(learned, &target, 2000, &[0], &[1, 2, 3])
            .map_err(|e| format!("tomita {i}: {e}"))?;
        sizes.push(learned.num_states());
    }
    within(start, Duration::from_secs(60), "tomita 1..7")?;
    Ok(format!("sizes {sizes:?}, {:.1?}", start.elapsed()))
}

/// Checks (b) and (c) after every expansion.
#[derive(Default)]
struct Guard {
    violations: Vec<String>,
}

impl Observer for Guard {
    fn on_round(&mut self, e: &RoundEvent<'_>) {
        if !e.table.is_prefix_closed() {
            self.violations
                .push(format!("round {}: P not prefix-closed", e.round));
        }
        if !e.table.suffix_bound_holds() {
            self.violations.push(format!(
                "round {}: |S| = {} over the bound for |P| = {}",
                e.round,
                e.table.num_suffixes(),
                e.table.num_rows()
            ));
        }
    }
}

fn random_config(rng: &mut ChaCha8Rng) -> ExtractionConfig {
    let pick = |rng: &mut ChaCha8Rng, xs: &[f64]| xs[rng.gen_range(0..xs.len())];
    ExtractionConfig {
        table: TableConfig {
            t: pick(rng, &[0.0, 0.02, 0.05, 0.1, 0.2, 0.3]),
            eps_p: pick(rng, &[0.0, 0.001, 0.01, 0.05]),
            eps_s: pick(rng, &[0.0, 0.001, 0.01, 0.05]),
            // Once the column cap disables consistency checks, only the row
            // cap guarantees termination.
            max_p: Some(if rng.gen_bool(0.5) {
                rng.gen_range(1..40)
            } else {
                400
            }),
            max_s: rng.gen_bool(0.3).then(|| rng.gen_range(1..12)),
            time_budget: rng.gen_bool(0.05).then_some(Duration::ZERO),
        },
        eq_samples: rng.gen_range(20..200),
        eq_max_len: Some(rng.gen_range(5..60)),
        seed: rng.gen(),
        max_rounds: rng.gen_bool(0.5).then(|| rng.gen_range(1..6)),
        ..ExtractionConfig::default()
    }
}

fn check_pdfa(p: &Pdfa) -> Result<(), String> {
    let n = p.num_states();
    let sigma = p.alphabet().len();
    for (i, st) in p.states().iter().enumerate() {
        check(
            st.next.len() == sigma && st.next.iter().all(|q| *q < n),
            || format!("state {i} transitions {:?}", st.next),
        )?;
        let w = st.weights.probs();
        let sum: f64 = w.iter().sum();
        check(
            w.len() == sigma + 1 && w.iter().all(|x| (0.0..=1.0).contains(x)),
            || format!("state {i} weights {w:?}"),
        )?;
        check((sum - 1.0).abs() <= 1e-9, || {
            format!("state {i} weights sum to {sum}")
        })?;
    }
    Ok(())
}

fn p_sigma_words(report: &ExtractionReport, sigma: usize) -> Vec<Seq> {
    let mut words = Vec::new();
    for p in &report.p_snapshot {
        for s in 0..sigma {
            let mut w = p.clone();
            w.push(Token(s as u32));
            words.push(Seq::new(w, false));
        }
        words.push(Seq::new(p.clone(), true));
    }
    words
}

fn guarantee_suite() -> Outcome {
    const TARGETS: usize = 240;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut stops: Vec<StopReason> = Vec::new();
    let mut counterexamples = 0usize;
    for case in 0..TARGETS {
        let states = rng.gen_range(2..=8);
        let sigma = rng.gen_range(2..=5);
        let target = grammars::random_pdfa(&mut rng, states, sigma);
        let cfg = random_config(&mut rng);
        let t = cfg.table.t;
        let mut guard = Guard::default();
        let mut exact;
        let mut sampled;
        let eq: &mut dyn Equivalence = if rng.gen_bool(0.5) {
            exact = ExactEquivalence {
                target: target.clone(),
                t,
            };
            &mut exact
        } else {
            sampled = SamplingEquivalence::new(&cfg);
            &mut sampled
        };
        let report = extract_with(&target, &cfg, eq, &mut guard).map_err(err)?;
        let ctx = |msg: String| format!("case {case} ({states} states, |Σ| {sigma}, t {t}): {msg}");
        check(report.stop_reason != StopReason::Error, || {
            ctx(format!("error {:?}", report.error))
        })?;
        let pdfa = report.pdfa.as_ref().ok_or_else(|| ctx("no PDFA".into()))?;
        check_pdfa(pdfa).map_err(ctx)?;
        if let Some(v) = guard.violations.first() {
            return Err(ctx(v.clone()));
        }
        // (b) and (c) on the final table as well.
        let ps: HashSet<&Vec<Token>> = report.p_snapshot.iter().collect();
        check(
            report
                .p_snapshot
                .iter()
                .all(|p| (0..p.len()).all(|k| ps.contains(&p[..k].to_vec()))),
            || ctx("final P not prefix-closed".into()),
        )?;
        let np = report.p_snapshot.len();
        check(
            report.s_snapshot.len() <= np * np.saturating_sub(1) / 2 + sigma + 1,
            || ctx("final |S| over the bound".into()),
        )?;
        let words = p_sigma_words(&report, sigma);
        if let Some(v) = t_consistency_audit(pdfa, &target, &words, t).map_err(err)? {
            return Err(ctx(format!("audit: {v:?}")));
        }
        for r in &report.rounds {
            if r.counterexample.is_some() {
                counterexamples += 1;
                check(r.rows_added > 0, || {
                    ctx(format!("round {} counterexample added no rows", r.round))
                })?;
            }
        }
        stops.push(report.stop_reason);
    }
    let count = |s: StopReason| stops.iter().filter(|x| **x == s).count();
    Ok(format!(
        "{TARGETS} targets, {counterexamples} counterexamples; stops: accepted {}, row-cap {}, suffix-cap {}, round-cap {}, time {}",
        count(StopReason::Accepted),
        count(StopReason::RowCap),
        count(StopReason::SuffixCap),
        count(StopReason::RoundCap),
        count(StopReason::Time)
    ))
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..50 {
        let sigma = rng.gen_range(2..=5);
        let states = rng.gen_range(2..=8);
        let a = grammars::random_pdfa(&mut rng, states, sigma);
        let seed = rng.gen();
        let w = wer(&a, &a, 2000, seed, DEFAULT_MAX_LEN).map_err(err)?;
        check(w.wer == 0.0, || {
            format!("case {case}: wer(a,a) = {}", w.wer)
        })?;
        for k in 1..=sigma + 1 {
            let n = ndcg(&a, &a, k, 2000, seed, DEFAULT_MAX_LEN).map_err(err)?;
            check(n.ndcg == 1.0, || {
                format!("case {case}: ndcg_{k}(a,a) = {}", n.ndcg)
            })?;
        }
    }
    // Reference (0.5, 0.3, 0.2); the model swaps the top two.
    // (0.3 + 0.5/log2 3) / (0.5 + 0.3/log2 3) = 0.892911205473213
    let b = NextDist::new(vec![0.5, 0.3, 0.2]).map_err(err)?;
    let a = NextDist::new(vec![0.4, 0.5, 0.1]).map_err(err)?;
    let score = ndcg_score(&a, &b, 2).ok_or("zero denominator")?;
    check((score - 0.892911205473213).abs() < 1e-9, || {
        format!("hand example {score}")
    })?;
    Ok(format!("50 models exact; hand example {score:.9}"))
}

fn ngram_ordering() -> Outcome {
    let start = Instant::now();
    let target = grammars::uhl(1).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let samples: Vec<Seq> = (0..500_000)
        .map(|_| target.sample_with(&mut rng, DEFAULT_MAX_LEN))
        .collect();
    let full = NgramModel::build(target.alphabet().clone(), &samples, 6).map_err(err)?;
    let mut best = (f64::INFINITY, 0);
    for n in 1..=6 {
        let m = full.with_order(n).map_err(err)?;
        let w = wer(&m, &target, 2000, 1, DEFAULT_MAX_LEN).map_err(err)?.wer;
        if w < best.0 {
            best = (w, n);
        }
    }
    check(best.0 > 0.05, || {
        format!("best n-gram (n={}) WER {}", best.1, best.0)
    })?;
    let report = extract(&target, &uhl_config()).map_err(err)?;
    let learned = report.pdfa.ok_or("no PDFA")?;
    let w = wer(&learned, &target, 2000, 1, DEFAULT_MAX_LEN)
        .map_err(err)?
        .wer;
    check(w == 0.0, || format!("extracted WER {w}"))?;
    within(start, Duration::from_secs(300), "n-gram check")?;
    Ok(format!(
        "best n-gram n={} WER {:.3} vs extracted 0.0, {:.1?}",
        best.1,
        best.0,
        start.elapsed()
    ))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 6] = [
        ("golden trace", golden_trace),
        ("UHL structure recovery", uhl_recovery),
        ("Tomita structure recovery", tomita_recovery),
        ("guarantee suite", guarantee_suite),
        ("metric identities", metric_identities),
        ("n-gram ordering", ngram_ordering),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "N/A   SPiCe results: trained RNN targets are unavailable; no criterion depends on them"
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
