//! Model-against-model metrics and exact divergence search.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{linf, NextDist, Pdfa, Seq, Token};
use crate::oracle::{last_token_prob, sample_target_with, Oracle};

/// Reference samples for WER.
pub const DEFAULT_SAMPLES: usize = 2000;
/// Prefixes collected for NDCG.
pub const DEFAULT_PREFIXES: usize = 2000;
/// Length cap for reference samples.
pub const DEFAULT_MAX_LEN: usize = 10_000;

fn same_alphabet(a: &dyn Oracle, b: &dyn Oracle) -> Result<()> {
    if a.alphabet() != b.alphabet() {
        return Err(Error::Input(format!(
            "alphabet mismatch: {:?} vs {:?}",
            a.alphabet().names(),
            b.alphabet().names()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerResult {
    pub wer: f64,
    pub positions: usize,
    pub samples: usize,
}

/// Word error rate of `a` against the reference `b`: the fraction of
/// next-token positions in samples of `b` where the argmaxes differ.
pub fn wer(
    a: &dyn Oracle,
    b: &dyn Oracle,
    n_samples: usize,
    seed: u64,
    max_len: usize,
) -> Result<WerResult> {
    same_alphabet(a, b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut positions, mut errors) = (0usize, 0usize);
    for _ in 0..n_samples {
        let s = sample_target_with(b, &mut rng, max_len)?;
        for k in 0..=s.tokens.len() {
            let u = &s.tokens[..k];
            positions += 1;
            if a.next_dist(u)?.argmax() != b.next_dist(u)?.argmax() {
                errors += 1;
            }
        }
    }
    let wer = if positions == 0 {
        0.0
    } else {
        errors as f64 / positions as f64
    };
    Ok(WerResult {
        wer,
        positions,
        samples: n_samples,
    })
}

/// NDCG_k of one prefix: the gain of `a`'s top-k ranking under `b`'s
/// probabilities, over the gain of `b`'s own. `None` when the denominator
/// is zero.
pub fn ndcg_score(a: &NextDist, b: &NextDist, k: usize) -> Option<f64> {
    let gain = |ranking: &[usize]| -> f64 {
        ranking
            .iter()
            .take(k)
            .enumerate()
            .map(|(n, slot)| b.probs()[*slot] / ((n + 2) as f64).log2())
            .sum()
    };
    let den = gain(&b.ranking());
    if den == 0.0 {
        return None;
    }
    Some(gain(&a.ranking()) / den)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NdcgResult {
    /// Mean over scored prefixes; 1 when no prefix could be scored.
    pub ndcg: f64,
    pub k: usize,
    pub prefixes: usize,
    /// Prefixes skipped for a zero denominator.
    pub skipped: usize,
}

/// Mean NDCG_k of `a` against the reference `b` over prefixes of samples of
/// `b`, all prefixes of each sample in turn, until `n_prefixes` are taken.
pub fn ndcg(
    a: &dyn Oracle,
    b: &dyn Oracle,
    k: usize,
    n_prefixes: usize,
    seed: u64,
    max_len: usize,
) -> Result<NdcgResult> {
    same_alphabet(a, b)?;
    let slots = b.alphabet().len() + 1;
    if k == 0 || k > slots {
        return Err(Error::Input(format!("k = {k} must be in 1..={slots}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut taken, mut skipped, mut total) = (0usize, 0usize, 0.0);
    while taken < n_prefixes {
        let s = sample_target_with(b, &mut rng, max_len)?;
        for j in 0..=s.tokens.len() {
            if taken == n_prefixes {
                break;
            }
            let u = &s.tokens[..j];
            taken += 1;
            match ndcg_score(&a.next_dist(u)?, &b.next_dist(u)?, k) {
                Some(score) => total += score,
                None => skipped += 1,
            }
        }
    }
    let scored = taken - skipped;
    Ok(NdcgResult {
        ndcg: if scored == 0 {
            1.0
        } else {
            total / scored as f64
        },
        k,
        prefixes: taken,
        skipped,
    })
}

/// Shortest w (BFS over the product automaton) after which the next-token
/// distributions of `a` and `b` differ by more than `t`.
pub fn exact_divergence(a: &Pdfa, b: &Pdfa, t: f64) -> Result<Option<Vec<Token>>> {
    if a.alphabet() != b.alphabet() {
        return Err(Error::Input("alphabet mismatch".into()));
    }
    let start = (a.initial(), b.initial());
    type Pair = (usize, usize);
    let mut parent: HashMap<Pair, Option<(Pair, Token)>> = HashMap::new();
    parent.insert(start, None);
    let mut queue = VecDeque::from([start]);
    while let Some(pair) = queue.pop_front() {
        if linf(a.weights(pair.0).probs(), b.weights(pair.1).probs()) > t {
            let mut w = Vec::new();
            let mut cur = pair;
            while let Some((prev, tok)) = parent[&cur] {
                w.push(tok);
                cur = prev;
            }
            w.reverse();
            return Ok(Some(w));
        }
        for tok in a.alphabet().tokens() {
            let next = (a.transition(pair.0, tok), b.transition(pair.1, tok));
            if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(next) {
                e.insert(Some((pair, tok)));
                queue.push_back(next);
            }
        }
    }
    Ok(None)
}

/// First failure of t-consistency.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub word: Seq,
    /// The non-empty prefix of `word` whose last-token probabilities differ.
    pub prefix: Seq,
    pub gap: f64,
}

/// Checks that `a` and `b` are t-consistent on every word: their
/// last-token probabilities agree within `t` on every non-empty prefix.
pub fn t_consistency_audit(
    a: &dyn Oracle,
    b: &dyn Oracle,
    words: &[Seq],
    t: f64,
) -> Result<Option<Violation>> {
    same_alphabet(a, b)?;
    for w in words {
        for k in 1..=w.len() {
            let u = if k <= w.tokens.len() {
                Seq::new(w.tokens[..k].to_vec(), false)
            } else {
                w.clone()
            };
            let gap = (last_token_prob(a, &u)? - last_token_prob(b, &u)?).abs();
            if gap > t {
                return Ok(Some(Violation {
                    word: w.clone(),
                    prefix: u,
                    gap,
                }));
            }
        }
    }
    Ok(None)
}

/// One line of a results table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub wer: Option<f64>,
    pub ndcg: Option<f64>,
    pub k: Option<usize>,
    pub size: Option<usize>,
    pub time_s: Option<f64>,
    pub samples: usize,
    pub prefixes: usize,
    pub skipped: usize,
    pub seed: u64,
}

/// Aligned text table with columns Model, WER, NDCG, Size and Time.
pub fn render_table(rows: &[MetricReport]) -> String {
    let cell = |x: Option<f64>, prec: usize| x.map_or("-".to_string(), |v| format!("{v:.prec$}"));
    let header = ["Model", "WER", "NDCG", "Size", "Time (s)"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                cell(r.wer, 4),
                cell(r.ndcg, 4),
                r.size.map_or("-".into(), |s| s.to_string()),
                cell(r.time_s, 2),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: [&str; 5]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header);
    for row in &body {
        line([&row[0], &row[1], &row[2], &row[3], &row[4]]);
    }
    out
}
