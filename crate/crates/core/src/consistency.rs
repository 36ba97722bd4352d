//! Constraint × hypothesis consistency, stored as bit-packed columns.
//!
//! A constraint `c = (i, j)` is consistent with hypothesis `h` when both
//! poses exist in `h` and lie within `T_p` metres of each other. The matrix
//! grows by one row per ingested constraint and one column per spawned
//! hypothesis; each new row or column is evaluated against every existing
//! column or row exactly once.

use std::io::{self, Write};

use crate::hypothesis::TrajectoryHypothesis;
use crate::ledger::LoopConstraint;

pub fn consistent(c: &LoopConstraint, h: &TrajectoryHypothesis, threshold: f64) -> bool {
    let (i, j) = c.pair;
    match (h.position(i), h.position(j)) {
        (Some(a), Some(b)) => a.planar_distance(&b) < threshold,
        _ => false,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyMatrix {
    threshold: f64,
    rows: usize,
    /// One bit vector per hypothesis, indexed by constraint id.
    columns: Vec<Vec<u64>>,
    evaluations: u64,
}

impl ConsistencyMatrix {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            rows: 0,
            columns: Vec::new(),
            evaluations: 0,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    /// Number of consistency tests run so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    fn words(rows: usize) -> usize {
        rows.div_ceil(64)
    }

    /// Appends the row for `c`, whose id must equal the current row count.
    pub fn add_constraint_row(&mut self, c: &LoopConstraint, hypotheses: &[TrajectoryHypothesis]) {
        assert_eq!(c.id, self.rows, "constraint rows must be appended in id order");
        assert_eq!(hypotheses.len(), self.columns.len(), "hypothesis list out of sync");
        let row = self.rows;
        self.rows += 1;
        let words = Self::words(self.rows);
        for (col, h) in self.columns.iter_mut().zip(hypotheses) {
            col.resize(words, 0);
            self.evaluations += 1;
            if consistent(c, h, self.threshold) {
                col[row / 64] |= 1 << (row % 64);
            }
        }
    }

    /// Appends the column for `h` against every constraint so far.
    pub fn add_hypothesis_column(&mut self, h: &TrajectoryHypothesis, constraints: &[LoopConstraint]) {
        assert_eq!(h.id, self.columns.len(), "hypothesis columns must be appended in id order");
        assert_eq!(constraints.len(), self.rows, "constraint list out of sync");
        let mut col = vec![0u64; Self::words(self.rows)];
        for c in constraints {
            if consistent(c, h, self.threshold) {
                col[c.id / 64] |= 1 << (c.id % 64);
            }
        }
        self.evaluations += constraints.len() as u64;
        self.columns.push(col);
    }

    /// Recomputes every entry from scratch.
    pub fn batch(threshold: f64, constraints: &[LoopConstraint], hypotheses: &[TrajectoryHypothesis]) -> Self {
        let mut m = Self::new(threshold);
        m.rows = constraints.len();
        for h in hypotheses {
            let mut col = vec![0u64; Self::words(m.rows)];
            for (row, c) in constraints.iter().enumerate() {
                if consistent(c, h, threshold) {
                    col[row / 64] |= 1 << (row % 64);
                }
            }
            m.evaluations += constraints.len() as u64;
            m.columns.push(col);
        }
        m
    }

    pub fn get(&self, constraint: usize, hypothesis: usize) -> bool {
        constraint < self.rows && self.columns[hypothesis][constraint / 64] >> (constraint % 64) & 1 == 1
    }

    pub fn column_words(&self, hypothesis: usize) -> &[u64] {
        &self.columns[hypothesis]
    }

    /// Constraint ids consistent with `hypothesis`, ascending.
    pub fn constraints_consistent_with(&self, hypothesis: usize) -> impl Iterator<Item = usize> + '_ {
        bits(&self.columns[hypothesis])
    }

    /// Hypothesis ids consistent with `constraint`, ascending.
    pub fn hypotheses_consistent_with(&self, constraint: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.columns.len()).filter(move |&h| self.get(constraint, h))
    }

    pub fn consistent_count(&self, hypothesis: usize) -> usize {
        self.columns[hypothesis].iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Compares entries only, ignoring evaluation counters.
    pub fn entries_equal(&self, other: &Self) -> bool {
        self.rows == other.rows && self.columns == other.columns
    }

    /// Heap bytes held by the bit columns.
    pub fn memory_bytes(&self) -> usize {
        self.columns.iter().map(|c| c.capacity() * 8).sum::<usize>() + self.columns.capacity() * std::mem::size_of::<Vec<u64>>()
    }

    /// Writes the true entries as `constraint_id,hyp_id` triplets, column-major.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "constraint_id,hyp_id")?;
        for h in 0..self.columns.len() {
            for c in self.constraints_consistent_with(h) {
                writeln!(w, "{c},{h}")?;
            }
        }
        Ok(())
    }
}

/// Indices of set bits, ascending.
pub fn bits(words: &[u64]) -> impl Iterator<Item = usize> + '_ {
    words.iter().enumerate().flat_map(|(k, &w)| {
        let mut w = w;
        std::iter::from_fn(move || {
            if w == 0 {
                return None;
            }
            let b = w.trailing_zeros() as usize;
            w &= w - 1;
            Some(k * 64 + b)
        })
    })
}
