//! Target specifications: where an oracle comes from.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pdfa_core::{
    io, Alphabet, Error, ExternalOracle, GrammarId, NgramModel, Oracle, Pdfa, Result, Seq,
};

const GRAMMAR: &str = "grammar://";
const FILE: &str = "file:";
const NGRAM: &str = "ngram:";
const EXTERNAL: &str = "external:";

/// `grammar://uhl/2`, `file:model.json` (or a bare path),
/// `ngram:<n>:<samples>` or `external:<command>`.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetSpec {
    Grammar(GrammarId),
    File(PathBuf),
    Ngram(usize, PathBuf),
    External(String),
}

impl FromStr for TargetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(id) = s.strip_prefix(GRAMMAR) {
            return Ok(TargetSpec::Grammar(id.parse()?));
        }
        if let Some(rest) = s.strip_prefix(NGRAM) {
            let (n, path) = rest
                .split_once(':')
                .ok_or_else(|| Error::Input(format!("expected ngram:<n>:<path>, got {s:?}")))?;
            let n = n
                .parse()
                .map_err(|_| Error::Input(format!("bad n-gram order {n:?}")))?;
            return Ok(TargetSpec::Ngram(n, path.into()));
        }
        if let Some(cmd) = s.strip_prefix(EXTERNAL) {
            if cmd.trim().is_empty() {
                return Err(Error::Input("empty external command".into()));
            }
            return Ok(TargetSpec::External(cmd.to_string()));
        }
        let path = s.strip_prefix(FILE).unwrap_or(s);
        if path.is_empty() {
            return Err(Error::Input("empty target".into()));
        }
        Ok(TargetSpec::File(path.into()))
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSpec::Grammar(id) => write!(f, "{GRAMMAR}{id}"),
            TargetSpec::File(p) => write!(f, "{FILE}{}", p.display()),
            TargetSpec::Ngram(n, p) => write!(f, "{NGRAM}{n}:{}", p.display()),
            TargetSpec::External(cmd) => write!(f, "{EXTERNAL}{cmd}"),
        }
    }
}

/// A loaded target, with its size when it has one.
pub struct Target {
    pub oracle: Box<dyn Oracle>,
    pub size: Option<usize>,
    /// The PDFA itself for grammar and file targets.
    pub pdfa: Option<Pdfa>,
}

impl TargetSpec {
    pub fn load(&self) -> Result<Target> {
        let from_pdfa = |p: Pdfa| Target {
            size: Some(p.num_states()),
            oracle: Box::new(p.clone()),
            pdfa: Some(p),
        };
        match self {
            TargetSpec::Grammar(id) => Ok(from_pdfa(id.build()?)),
            TargetSpec::File(path) => {
                let p = io::read_pdfa(path).map_err(|e| with_path(path, e))?;
                p.check_liveness().map_err(|e| with_path(path, e))?;
                Ok(from_pdfa(p))
            }
            TargetSpec::Ngram(n, path) => {
                let (alphabet, samples) = read_samples(path)?;
                let m = NgramModel::build(alphabet, &samples, *n)?;
                Ok(Target {
                    size: Some(m.size()),
                    oracle: Box::new(m),
                    pdfa: None,
                })
            }
            TargetSpec::External(cmd) => Ok(Target {
                oracle: Box::new(ExternalOracle::spawn(cmd)?),
                size: None,
                pdfa: None,
            }),
        }
    }
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Input(format!("{}: {io}", path.display())),
        Error::Parse {
            line,
            column,
            message,
        } => Error::Parse {
            line,
            column,
            message: format!("{}: {message}", path.display()),
        },
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// Reads a sample file: one sequence per line, tokens separated by
/// whitespace, every line terminated. The alphabet is the sorted set of
/// tokens seen.
pub fn read_samples(path: &Path) -> Result<(Alphabet, Vec<Seq>)> {
    let text = std::fs::read_to_string(path).map_err(|e| with_path(path, e.into()))?;
    let lines: Vec<Vec<&str>> = text
        .lines()
        .map(|l| l.split_whitespace().collect())
        .collect();
    let mut names: Vec<&str> = lines.iter().flatten().copied().collect();
    names.sort_unstable();
    names.dedup();
    if names.is_empty() {
        return Err(Error::Input(format!(
            "{}: no tokens in sample file",
            path.display()
        )));
    }
    let alphabet = Alphabet::new(names)?;
    let samples = lines
        .iter()
        .map(|l| Ok(Seq::new(alphabet.parse(l)?, true)))
        .collect::<Result<Vec<_>>>()?;
    Ok((alphabet, samples))
}

/// One line per sample, tokens separated by single spaces.
pub fn render_samples(alphabet: &Alphabet, samples: &[Seq]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&alphabet.render(&s.tokens, " "));
        out.push('\n');
    }
    out
}
