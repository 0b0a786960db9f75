//! PDFA file format and Graphviz export.
//!
//! A PDFA file is a JSON object:
//!
//! ```json
//! {
//!   "alphabet": ["a", "b"],
//!   "initial": "q0",
//!   "states": {
//!     "q0": { "next": { "a": "q0", "b": "q0" },
//!             "weights": { "a": 0.5, "b": 0.4, "$": 0.1 } }
//!   }
//! }
//! ```
//!
//! Every state lists a successor for every token and a weight for every
//! token plus `$`. State order in the file is preserved.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{Alphabet, NextDist, Pdfa, State, Symbol, END};

#[derive(Serialize, Deserialize)]
struct RawPdfa {
    alphabet: Vec<String>,
    initial: String,
    states: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawState {
    next: Map<String, Value>,
    weights: Map<String, Value>,
}

fn parse_error(err: serde_json::Error) -> Error {
    Error::Parse {
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    }
}

/// Serializes a PDFA to the JSON file format.
pub fn to_json(pdfa: &Pdfa) -> String {
    let alphabet = pdfa.alphabet();
    let mut states = Map::new();
    for st in pdfa.states() {
        let mut next = Map::new();
        let mut weights = Map::new();
        for tok in alphabet.tokens() {
            next.insert(
                alphabet.name(tok).to_string(),
                Value::String(pdfa.states()[st.next[tok.index()]].name.clone()),
            );
        }
        for sym in alphabet.symbols() {
            weights.insert(
                alphabet.symbol_name(sym).to_string(),
                serde_json::json!(st.weights.get(sym)),
            );
        }
        let raw = RawState { next, weights };
        states.insert(
            st.name.clone(),
            serde_json::to_value(raw).expect("state serializes"),
        );
    }
    let raw = RawPdfa {
        alphabet: alphabet.names().to_vec(),
        initial: pdfa.states()[pdfa.initial()].name.clone(),
        states,
    };
    let mut out = serde_json::to_string_pretty(&raw).expect("pdfa serializes");
    out.push('\n');
    out
}

/// Parses the JSON file format, validating every row.
pub fn from_json(text: &str) -> Result<Pdfa> {
    let raw: RawPdfa = serde_json::from_str(text).map_err(parse_error)?;
    let alphabet = Alphabet::new(raw.alphabet)?;
    let ids: HashMap<&str, usize> = raw
        .states
        .keys()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();
    let initial = *ids.get(raw.initial.as_str()).ok_or_else(|| {
        Error::Validation(format!("initial state {:?} is not defined", raw.initial))
    })?;

    let mut states = Vec::with_capacity(raw.states.len());
    for (name, value) in &raw.states {
        let st: RawState = serde_json::from_value(value.clone())
            .map_err(|e| Error::Validation(format!("state {name:?}: {e}")))?;
        let mut next = Vec::with_capacity(alphabet.len());
        for tok in alphabet.tokens() {
            let key = alphabet.name(tok);
            let target =
                st.next.get(key).and_then(Value::as_str).ok_or_else(|| {
                    Error::Validation(format!("state {name:?}: next.{key} missing"))
                })?;
            let q = *ids.get(target).ok_or_else(|| {
                Error::Validation(format!(
                    "state {name:?}: next.{key} -> unknown state {target:?}"
                ))
            })?;
            next.push(q);
        }
        if let Some(extra) = st.next.keys().find(|k| alphabet.token(k).is_none()) {
            return Err(Error::Validation(format!(
                "state {name:?}: next.{extra} is not an alphabet token"
            )));
        }
        let mut probs = Vec::with_capacity(alphabet.len() + 1);
        for sym in alphabet.symbols() {
            let key = alphabet.symbol_name(sym);
            let w = st.weights.get(key).and_then(Value::as_f64).ok_or_else(|| {
                Error::Validation(format!("state {name:?}: weights.{key} missing"))
            })?;
            probs.push(w);
        }
        if let Some(extra) = st.weights.keys().find(|k| alphabet.symbol(k).is_none()) {
            return Err(Error::Validation(format!(
                "state {name:?}: weights.{extra} is not a symbol"
            )));
        }
        let weights =
            NextDist::new(probs).map_err(|e| Error::Validation(format!("state {name:?}: {e}")))?;
        states.push(State {
            name: name.clone(),
            next,
            weights,
        });
    }
    Pdfa::new(alphabet, states, initial)
}

pub fn read_pdfa(path: &Path) -> Result<Pdfa> {
    from_json(&std::fs::read_to_string(path)?)
}

pub fn write_pdfa(path: &Path, pdfa: &Pdfa) -> Result<()> {
    std::fs::write(path, to_json(pdfa))?;
    Ok(())
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering: one node per state labelled with its id and `$`
/// weight, one edge per (state, token) labelled `token / weight`.
pub fn to_dot(pdfa: &Pdfa) -> String {
    let alphabet = pdfa.alphabet();
    let mut out = String::from("digraph pdfa {\n  rankdir=LR;\n  node [shape=circle];\n");
    out.push_str("  __start [shape=point];\n");
    for (i, st) in pdfa.states().iter().enumerate() {
        let _ = writeln!(
            out,
            "  s{i} [label=\"{}\\n{END}: {:.4}\"];",
            dot_escape(&st.name),
            st.weights.end()
        );
    }
    let _ = writeln!(out, "  __start -> s{};", pdfa.initial());
    for (i, st) in pdfa.states().iter().enumerate() {
        for tok in alphabet.tokens() {
            let _ = writeln!(
                out,
                "  s{i} -> s{} [label=\"{} / {:.4}\"];",
                st.next[tok.index()],
                dot_escape(alphabet.name(tok)),
                st.weights.get(Symbol::Token(tok))
            );
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"{
  "alphabet": ["a", "b"],
  "initial": "q0",
  "states": {
    "q0": { "next": { "a": "q0", "b": "q0" }, "weights": { "a": 0.5, "b": 0.4, "$": 0.1 } }
  }
}"#;

    #[test]
    fn parses_and_round_trips() {
        let p = from_json(ONE).unwrap();
        assert_eq!(p.num_states(), 1);
        assert_eq!(from_json(&to_json(&p)).unwrap(), p);
    }

    #[test]
    fn short_row_is_validation_error() {
        let bad = ONE.replace("\"$\": 0.1", "\"$\": 0.0");
        let err = from_json(&bad).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains("q0")),
            "{err}"
        );
    }

    #[test]
    fn missing_weight_names_field() {
        let bad = ONE.replace(", \"$\": 0.1", "");
        let err = from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("weights.$"), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = from_json("{\n  \"alphabet\": [\"a\",\n  oops").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dot_of_single_state_has_one_edge_per_token() {
        let dot = to_dot(&from_json(ONE).unwrap());
        let edges = dot
            .lines()
            .filter(|l| l.contains("-> s") && !l.contains("__start"))
            .count();
        assert_eq!(edges, 2);
        assert!(dot.contains("$: 0.1000"));
        assert!(dot.contains("a / 0.5000"));
    }
}
