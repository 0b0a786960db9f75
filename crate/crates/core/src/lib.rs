//! Extraction of probabilistic deterministic finite automata from black-box
//! next-token oracles.
//!
//! The learner keeps an observation table of last-token probabilities,
//! treats rows within an L∞ tolerance `t` as equal, and turns the table into
//! a PDFA by clustering its rows. Equivalence is checked by sampling.
//!
//! ```
//! use pdfa_core::{extract, grammars, ExtractionConfig, StopReason};
//!
//! let target = grammars::uhl(3).unwrap();
//! let report = extract(&target, &ExtractionConfig::default()).unwrap();
//! assert_eq!(report.stop_reason, StopReason::Accepted);
//! assert_eq!(report.states, 4);
//! ```

pub mod construct;
pub mod error;
pub mod eval;
pub mod external;
pub mod extract;
pub mod grammars;
pub mod index;
pub mod io;
pub mod model;
pub mod ngram;
pub mod oracle;
pub mod table;

pub use construct::{Clustering, ConstructionTrace, MatchPolicy};
pub use error::{Error, Result};
pub use eval::{exact_divergence, ndcg, t_consistency_audit, wer, MetricReport};
pub use external::ExternalOracle;
pub use extract::{
    extract, extract_with, EqOutcome, Equivalence, ExactEquivalence, ExtractionConfig,
    ExtractionReport, Observer, RoundEvent, RoundRecord, SamplingEquivalence, ScriptedEquivalence,
    StopReason,
};
pub use grammars::GrammarId;
pub use model::{Alphabet, NextDist, Pdfa, Seq, State, Symbol, Token, END};
pub use ngram::NgramModel;
pub use oracle::{CachedOracle, Oracle, PrefixWeights, QueryCounters};
pub use table::{ObservationTable, TableConfig};
