//! Interval-split KD-tree over observation-table rows.
//!
//! Level `k` buckets rows by column `k` into intervals of width 2t, so a
//! query ball of radius t touches at most three buckets per level. Queries
//! return a superset of the t-equal rows; callers verify exactly.

use std::collections::BTreeMap;

/// Widens query intervals so that rounding in `|x - v| <= t` never drops a row.
const SLACK: f64 = 1e-9;

#[derive(Debug)]
enum Node {
    Inner(BTreeMap<i64, Node>),
    Leaf(Vec<usize>),
}

#[derive(Debug)]
pub struct RowIndex {
    t: f64,
    width: usize,
    root: Node,
    len: usize,
}

impl RowIndex {
    pub fn new(t: f64, width: usize) -> Self {
        Self {
            t,
            width,
            root: Self::empty_node(width),
            len: 0,
        }
    }

    fn empty_node(depth: usize) -> Node {
        if depth == 0 {
            Node::Leaf(Vec::new())
        } else {
            Node::Inner(BTreeMap::new())
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn bucket(&self, x: f64) -> i64 {
        if self.t > 0.0 {
            (x / (2.0 * self.t)).floor() as i64
        } else {
            (x + 0.0).to_bits() as i64
        }
    }

    pub fn insert(&mut self, id: usize, row: &[f64]) {
        assert_eq!(row.len(), self.width, "row width does not match index");
        let keys: Vec<i64> = row.iter().map(|x| self.bucket(*x)).collect();
        let mut node = &mut self.root;
        for (depth, key) in keys.into_iter().enumerate() {
            let remaining = self.width - depth - 1;
            node = match node {
                Node::Inner(children) => children
                    .entry(key)
                    .or_insert_with(|| Self::empty_node(remaining)),
                Node::Leaf(_) => unreachable!("leaf above full depth"),
            };
        }
        match node {
            Node::Leaf(ids) => ids.push(id),
            Node::Inner(_) => unreachable!("inner node at full depth"),
        }
        self.len += 1;
    }

    /// Ids of all rows that may be t-equal to `v`.
    pub fn find_close_rows(&self, v: &[f64]) -> Vec<usize> {
        assert_eq!(v.len(), self.width, "query width does not match index");
        let ranges: Vec<(i64, i64)> = v
            .iter()
            .map(|x| {
                if self.t > 0.0 {
                    (
                        self.bucket(x - self.t - SLACK),
                        self.bucket(x + self.t + SLACK),
                    )
                } else {
                    let k = self.bucket(*x);
                    (k, k)
                }
            })
            .collect();
        let mut out = Vec::new();
        let mut stack = vec![(&self.root, 0usize)];
        while let Some((node, depth)) = stack.pop() {
            match node {
                Node::Leaf(ids) => out.extend_from_slice(ids),
                Node::Inner(children) => {
                    let (lo, hi) = ranges[depth];
                    for (_, child) in children.range(lo..=hi) {
                        stack.push((child, depth + 1));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}
