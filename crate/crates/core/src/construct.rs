//! From a closed table to a PDFA: initial clustering, the determinism and
//! clique refinements, hole filling and transition weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{linf, Pdfa, Token};
use crate::oracle::Oracle;
use crate::table::ObservationTable;

/// Partition of the table rows. Members are row ids, kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    clusters: Vec<Vec<usize>>,
    assign: Vec<usize>,
}

impl Clustering {
    pub fn new(mut clusters: Vec<Vec<usize>>, num_rows: usize) -> Self {
        let mut assign = vec![usize::MAX; num_rows];
        for (c, members) in clusters.iter_mut().enumerate() {
            members.sort_unstable();
            for &m in members.iter() {
                assign[m] = c;
            }
        }
        debug_assert!(
            assign.iter().all(|c| *c != usize::MAX),
            "clustering must cover every row"
        );
        Self { clusters, assign }
    }

    /// One cluster per row.
    pub fn trivial(num_rows: usize) -> Self {
        Self::new((0..num_rows).map(|i| vec![i]).collect(), num_rows)
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn cluster_of(&self, row: usize) -> usize {
        self.assign[row]
    }

    /// Replaces cluster `c` by the first part and appends the rest.
    fn split(&mut self, c: usize, parts: Vec<Vec<usize>>) {
        let mut parts = parts.into_iter().filter(|p| !p.is_empty());
        self.clusters[c] = parts.next().expect("split yields at least one part");
        self.clusters.extend(parts);
        let n = self.assign.len();
        *self = Self::new(std::mem::take(&mut self.clusters), n);
    }

    /// Members with p·σ ∈ P agree on the cluster of p·σ.
    pub fn is_deterministic(&self, table: &ObservationTable) -> bool {
        self.clusters.iter().all(|members| {
            table.alphabet().tokens().all(|tok| {
                let mut seen = None;
                members.iter().all(|&p| match successor(table, p, tok) {
                    None => true,
                    Some(q) => *seen.get_or_insert(self.assign[q]) == self.assign[q],
                })
            })
        })
    }

    /// Every cluster is pairwise t-equal.
    pub fn is_clique(&self, table: &ObservationTable) -> bool {
        self.clusters
            .iter()
            .all(|m| widest_column(table, m).is_none_or(|(_, r)| r <= table.tolerance()))
    }

    /// Clusters as sets of rendered prefixes.
    pub fn render(&self, table: &ObservationTable) -> Vec<Vec<String>> {
        self.clusters
            .iter()
            .map(|m| {
                m.iter()
                    .map(|&p| table.render_prefix(&table.prefixes()[p]))
                    .collect()
            })
            .collect()
    }
}

/// How `best_cluster_match` resolves several candidates in the winning tier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchPolicy {
    /// Cluster with the nearest member (L∞), earlier cluster on ties.
    #[default]
    Nearest,
    /// First candidate in cluster order.
    First,
}

/// Clusterings after each stage of one construction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructionTrace {
    pub initial: Vec<Vec<String>>,
    pub determinism_1: Vec<Vec<String>>,
    pub cliques: Vec<Vec<String>>,
    pub determinism_2: Vec<Vec<String>>,
}

fn successor(table: &ObservationTable, p: usize, tok: Token) -> Option<usize> {
    let mut ext = table.prefixes()[p].clone();
    ext.push(tok);
    table.id_of(&ext)
}

/// Column with the largest value range among `members` (lowest column on
/// ties), with that range.
fn widest_column(table: &ObservationTable, members: &[usize]) -> Option<(usize, f64)> {
    let width = table.num_suffixes();
    let mut best: Option<(usize, f64)> = None;
    if members.len() < 2 {
        return None;
    }
    for j in 0..width {
        let (lo, hi) = column_bounds(table, members, j);
        let r = hi - lo;
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((j, r));
        }
    }
    best
}

fn column_bounds(table: &ObservationTable, members: &[usize], j: usize) -> (f64, f64) {
    members
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            let x = table.row(p)[j];
            (lo.min(x), hi.max(x))
        })
}

/// Connected components of the t-equality graph on P, ordered by smallest
/// member.
pub fn initial_clustering(table: &ObservationTable) -> Clustering {
    let n = table.num_rows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for id in 0..n {
        for other in table.t_equal_rows(table.row(id)) {
            let (a, b) = (find(&mut parent, id), find(&mut parent, other));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for id in 0..n {
        let root = find(&mut parent, id);
        comps.entry(root).or_default().push(id);
    }
    // A root is the smallest member of its component, so key order is
    // smallest-member order.
    Clustering::new(comps.into_values().collect(), n)
}

/// Chooses the cluster for a row vector `v` among `clusters`:
/// 1. clusters that stay a clique with v added;
/// 2. non-clique clusters with a member t-equal to v;
/// 3. clusters with a member t-equal to v;
/// 4. all clusters.
///
/// The first non-empty tier is resolved by `policy`.
pub fn best_cluster_match(
    table: &ObservationTable,
    v: &[f64],
    clusters: &[Vec<usize>],
    policy: MatchPolicy,
) -> usize {
    assert!(!clusters.is_empty(), "best_cluster_match over no clusters");
    let t = table.tolerance();
    // (clique and all close, some close in a non-clique, some close)
    type Stats = (bool, bool, bool);
    let stats: Vec<Stats> = clusters
        .iter()
        .map(|m| {
            let close: Vec<bool> = m.iter().map(|&p| linf(table.row(p), v) <= t).collect();
            let clique = widest_column(table, m).is_none_or(|(_, r)| r <= t);
            let all = close.iter().all(|c| *c);
            let any = close.iter().any(|c| *c);
            (clique && all, any && !clique, any)
        })
        .collect();
    let tiers: [fn(&Stats) -> bool; 4] = [|s| s.0, |s| s.1, |s| s.2, |_| true];
    let candidates: Vec<usize> = tiers
        .iter()
        .map(|tier| {
            (0..clusters.len())
                .filter(|c| tier(&stats[*c]))
                .collect::<Vec<_>>()
        })
        .find(|c| !c.is_empty())
        .expect("last tier is non-empty");
    match policy {
        MatchPolicy::First => candidates[0],
        MatchPolicy::Nearest => {
            let mut best = (candidates[0], f64::INFINITY);
            for &c in &candidates {
                let d = clusters[c]
                    .iter()
                    .map(|&p| linf(table.row(p), v))
                    .fold(f64::INFINITY, f64::min);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best.0
        }
    }
}

/// Splits clusters whose members disagree on a successor cluster until no
/// cluster does. Members are grouped by the cluster of p·σ; the groups are
/// ordered by that cluster's index. A member whose p·σ is not a row joins
/// the group chosen by `best_cluster_match` on the row of p·σ.
pub fn refine_determinism<O: Oracle + ?Sized>(
    clustering: &mut Clustering,
    table: &mut ObservationTable,
    oracle: &O,
    policy: MatchPolicy,
) -> Result<()> {
    let tokens: Vec<Token> = table.alphabet().tokens().collect();
    let mut c = 0;
    while c < clustering.len() {
        let mut split = false;
        for &tok in &tokens {
            let members = clustering.clusters[c].clone();
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            let mut loose = Vec::new();
            for &p in &members {
                match successor(table, p, tok) {
                    Some(q) => groups.entry(clustering.assign[q]).or_default().push(p),
                    None => loose.push(p),
                }
            }
            if groups.len() < 2 {
                continue;
            }
            let mut parts: Vec<Vec<usize>> = groups.into_values().collect();
            for p in loose {
                let mut ext = table.prefixes()[p].clone();
                ext.push(tok);
                let v = table.row_of(oracle, &ext)?;
                let target = best_cluster_match(table, &v, &parts, policy);
                parts[target].push(p);
            }
            clustering.split(c, parts);
            split = true;
            break;
        }
        if !split {
            c += 1;
        } else {
            // Earlier clusters may now disagree on the split cluster.
            c = 0;
        }
    }
    Ok(())
}

/// Splits non-clique clusters along their widest column into bins of width
/// t anchored at the column minimum (exact values when t = 0).
pub fn refine_cliques(clustering: &mut Clustering, table: &ObservationTable) {
    let t = table.tolerance();
    let mut c = 0;
    while c < clustering.len() {
        let members = clustering.clusters[c].clone();
        let Some((j, r)) = widest_column(table, &members).filter(|(_, r)| *r > t) else {
            c += 1;
            continue;
        };
        let (lo, _) = column_bounds(table, &members, j);
        let mut bins: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        if t > 0.0 {
            let n = (r / t).ceil() as u64;
            for &p in &members {
                let k = (((table.row(p)[j] - lo) / t).floor() as u64).min(n - 1);
                bins.entry(k).or_default().push(p);
            }
        } else {
            // Values are non-negative, so bit patterns order like the floats.
            for &p in &members {
                bins.entry((table.row(p)[j] + 0.0).to_bits())
                    .or_default()
                    .push(p);
            }
        }
        clustering.split(c, bins.into_values().collect());
    }
}

/// Runs all four clustering stages.
pub fn cluster<O: Oracle + ?Sized>(
    table: &mut ObservationTable,
    oracle: &O,
    policy: MatchPolicy,
) -> Result<(Clustering, ConstructionTrace)> {
    let mut cl = initial_clustering(table);
    let mut trace = ConstructionTrace {
        initial: cl.render(table),
        ..Default::default()
    };
    refine_determinism(&mut cl, table, oracle, policy)?;
    trace.determinism_1 = cl.render(table);
    refine_cliques(&mut cl, table);
    trace.cliques = cl.render(table);
    refine_determinism(&mut cl, table, oracle, policy)?;
    trace.determinism_2 = cl.render(table);
    Ok((cl, trace))
}

/// Weighted average of `values` under `weights`, computed as an offset from
/// the heaviest entry and clamped to the range of `values`. Falls back to
/// equal weights when all weights are zero.
pub fn weighted_average(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let uniform;
    let weights = if total > 0.0 {
        weights
    } else {
        uniform = vec![1.0; values.len()];
        &uniform[..]
    };
    let total: f64 = weights.iter().sum();
    let anchor = (0..values.len()).fold(
        0,
        |best, i| if weights[i] > weights[best] { i } else { best },
    );
    let base = values[anchor];
    let offset: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (v - base))
        .sum::<f64>()
        / total;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (base + offset).clamp(lo, hi)
}

/// Builds the hypothesis for a clustering that satisfies both constraints.
pub fn build_pdfa<O: Oracle + ?Sized>(
    clustering: &Clustering,
    table: &mut ObservationTable,
    oracle: &O,
    policy: MatchPolicy,
) -> Result<Pdfa> {
    let alphabet = table.alphabet().clone();
    let slots = alphabet.len() + 1;
    let initial = clustering.cluster_of(table.id_of(&[]).expect("ε is a row"));
    let mut next = Vec::with_capacity(clustering.len());
    let mut weights = Vec::with_capacity(clustering.len());
    for members in clustering.clusters() {
        let heaviest = members.iter().copied().fold(members[0], |best, p| {
            if table.prefix_prob(p) > table.prefix_prob(best) {
                p
            } else {
                best
            }
        });
        let mut row_next = Vec::with_capacity(alphabet.len());
        for tok in alphabet.tokens() {
            let known = members.iter().find_map(|&p| successor(table, p, tok));
            let target = match known {
                Some(q) => clustering.cluster_of(q),
                None => {
                    let mut ext = table.prefixes()[heaviest].clone();
                    ext.push(tok);
                    let v = table.row_of(oracle, &ext)?;
                    best_cluster_match(table, &v, clustering.clusters(), policy)
                }
            };
            row_next.push(target);
        }
        next.push(row_next);
        let w: Vec<f64> = members.iter().map(|&p| table.prefix_prob(p)).collect();
        let row: Vec<f64> = (0..slots)
            .map(|j| {
                let vals: Vec<f64> = members.iter().map(|&p| table.row(p)[j]).collect();
                weighted_average(&vals, &w)
            })
            .collect();
        weights.push(row);
    }
    Pdfa::from_table(alphabet, initial, next, weights)
}

/// Clusters the table and builds the hypothesis.
pub fn construct<O: Oracle + ?Sized>(
    table: &mut ObservationTable,
    oracle: &O,
    policy: MatchPolicy,
) -> Result<(Pdfa, Clustering, ConstructionTrace)> {
    let (cl, trace) = cluster(table, oracle, policy)?;
    let pdfa = build_pdfa(&cl, table, oracle, policy)?;
    Ok((pdfa, cl, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammars;
    use crate::model::{Alphabet, NextDist, Seq};

    /// Oracle with an explicit row per prefix length-1 word and a default.
    struct Rows {
        alphabet: Alphabet,
        rows: Vec<(Vec<Token>, Vec<f64>)>,
        default: Vec<f64>,
    }

    impl Oracle for Rows {
        fn alphabet(&self) -> &Alphabet {
            &self.alphabet
        }
        fn next_dist(&self, w: &[Token]) -> Result<NextDist> {
            let row = self
                .rows
                .iter()
                .find(|(p, _)| p == w)
                .map(|(_, r)| r.clone())
                .unwrap_or_else(|| self.default.clone());
            NextDist::new(row)
        }
    }

    #[test]
    fn weighted_average_examples() {
        assert!((weighted_average(&[0.7, 0.4], &[0.5, 0.25]) - 0.6).abs() < 1e-12);
        assert!((weighted_average(&[0.6, 0.8], &[1.0, 1.0]) - 0.7).abs() < 1e-12);
        assert!((weighted_average(&[0.3, 0.1], &[1.0, 1.0]) - 0.2).abs() < 1e-12);
        assert_eq!(
            weighted_average(&[0.25, 0.25, 0.25], &[0.3, 0.1, 0.7]),
            0.25
        );
        assert_eq!(
            weighted_average(&[0.2, 0.4], &[0.0, 0.0]),
            0.30000000000000004
        );
    }

    #[test]
    fn singleton_cluster_copies_the_row() {
        let target = grammars::appb_fixture();
        let mut table = ObservationTable::new(&target, 0.1).unwrap();
        let (pdfa, cl, _) = construct(&mut table, &target, MatchPolicy::Nearest).unwrap();
        assert_eq!(cl.len(), 1);
        assert_eq!(pdfa.weights(0).probs(), &[0.5, 0.4, 0.1]);
    }

    #[test]
    fn two_equal_weight_rows_average() {
        // ε and "a" share the P^p weight only if P^n(ε)[a] = 1; instead
        // check the averaging through a cluster of "a" and "b" built from
        // equal prefix weights.
        let alphabet = Alphabet::new(["a", "b"]).unwrap();
        let oracle = Rows {
            alphabet,
            rows: vec![
                (vec![], vec![0.45, 0.45, 0.1]),
                (vec![Token(0)], vec![0.6, 0.3, 0.1]),
                (vec![Token(1)], vec![0.8, 0.1, 0.1]),
            ],
            default: vec![0.45, 0.45, 0.1],
        };
        let mut table = ObservationTable::new(&oracle, 0.2).unwrap();
        for w in [vec![Token(0)], vec![Token(1)]] {
            table
                .add_counterexample(&oracle, &Seq::new(w, true))
                .unwrap();
        }
        let cl = Clustering::new(vec![vec![0], vec![1, 2]], 3);
        let pdfa = build_pdfa(&cl, &mut table, &oracle, MatchPolicy::Nearest).unwrap();
        let row = pdfa.weights(1).probs();
        assert!((row[0] - 0.7).abs() < 1e-12 && (row[1] - 0.2).abs() < 1e-12);
        assert!((row[2] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn clique_split_into_three_bins() {
        let alphabet = Alphabet::new(["a", "b"]).unwrap();
        let col = [0.0, 0.15, 0.30];
        let oracle = Rows {
            alphabet,
            rows: vec![
                (vec![], vec![col[0], 0.6, 0.4]),
                (vec![Token(0)], vec![col[1], 0.5, 0.35]),
                (vec![Token(1)], vec![col[2], 0.45, 0.25]),
            ],
            default: vec![0.5, 0.4, 0.1],
        };
        let mut table = ObservationTable::new(&oracle, 0.1).unwrap();
        for w in [vec![Token(0)], vec![Token(1)]] {
            table
                .add_counterexample(&oracle, &Seq::new(w, true))
                .unwrap();
        }
        let mut cl = Clustering::new(vec![vec![0, 1, 2]], 3);
        refine_cliques(&mut cl, &table);
        assert_eq!(cl.clusters(), &[vec![0], vec![1], vec![2]]);
        assert!(cl.is_clique(&table));
    }

    #[test]
    fn clique_is_left_alone() {
        let target = grammars::appb_fixture();
        let table = ObservationTable::new(&target, 0.1).unwrap();
        let mut cl = initial_clustering(&table);
        let before = cl.clone();
        refine_cliques(&mut cl, &table);
        assert_eq!(cl, before);
    }

    #[test]
    fn equidistant_tie_goes_to_earlier_cluster() {
        let alphabet = Alphabet::new(["a", "b"]).unwrap();
        let oracle = Rows {
            alphabet,
            rows: vec![
                (vec![], vec![0.25, 0.5, 0.25]),
                (vec![Token(1)], vec![0.75, 0.0, 0.25]),
            ],
            default: vec![0.5, 0.25, 0.25],
        };
        let mut table = ObservationTable::new(&oracle, 0.25).unwrap();
        table
            .add_counterexample(&oracle, &Seq::new(vec![Token(1)], true))
            .unwrap();
        // Both rows are exactly 0.25 from v.
        let v = [0.5, 0.25, 0.25];
        assert_eq!(
            best_cluster_match(&table, &v, &[vec![0], vec![1]], MatchPolicy::Nearest),
            0
        );
        assert_eq!(
            best_cluster_match(&table, &v, &[vec![1], vec![0]], MatchPolicy::Nearest),
            0
        );
    }

    #[test]
    fn single_cluster_match() {
        let target = grammars::appb_fixture();
        let table = ObservationTable::new(&target, 0.1).unwrap();
        assert_eq!(
            best_cluster_match(&table, &[0.5, 0.45, 0.05], &[vec![0]], MatchPolicy::First),
            0
        );
    }

    #[test]
    fn deterministic_clustering_is_a_fixpoint() {
        let target = grammars::tomita_weighted(4).unwrap();
        let mut table = ObservationTable::new(&target, 0.1).unwrap();
        table
            .expand(&target, &crate::table::TableConfig::default(), None)
            .unwrap();
        let mut cl = Clustering::trivial(table.num_rows());
        let before = cl.clone();
        refine_determinism(&mut cl, &mut table, &target, MatchPolicy::Nearest).unwrap();
        assert_eq!(cl, before);
        assert!(cl.is_deterministic(&table) && cl.is_clique(&table));
    }
}
