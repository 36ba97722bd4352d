//! Append-only list of loop-closure constraints and their verifications.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use crate::world::RetrievalCandidate;

/// Which constraint-level strategy produced a verification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyTag {
    /// Uniform over all unverified constraints.
    Us,
    /// Trajectory sampling.
    Ts,
    /// Neighbor sampling.
    Ns,
}

impl StrategyTag {
    pub const ALL: [StrategyTag; 3] = [StrategyTag::Us, StrategyTag::Ts, StrategyTag::Ns];

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyTag::Us => "US",
            StrategyTag::Ts => "TS",
            StrategyTag::Ns => "NS",
        }
    }
}

impl fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyTag {
    type Err = LedgerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "US" => Ok(StrategyTag::Us),
            "TS" => Ok(StrategyTag::Ts),
            "NS" => Ok(StrategyTag::Ns),
            other => Err(LedgerError::Csv(format!("unknown strategy tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LedgerError {
    #[error("time step {got} does not follow {last}")]
    NonIncreasingTime { last: usize, got: usize },
    #[error("candidate for query {query} ingested at time step {t}")]
    QueryMismatch { t: usize, query: usize },
    #[error("candidate ({query}, {matched}) does not point into the past")]
    NotPast { query: usize, matched: usize },
    #[error("no constraint with id {0}")]
    UnknownConstraint(usize),
    #[error("constraint {id} already verified at threshold {threshold}")]
    AlreadyVerified { id: usize, threshold: f64 },
    #[error("malformed ledger csv: {0}")]
    Csv(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopConstraint {
    pub id: usize,
    pub time_step: usize,
    /// 1-based retrieval rank within its time step.
    pub rank: usize,
    /// `(query, matched)` with `matched < query`.
    pub pair: (usize, usize),
    pub retrieval_score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerificationRecord {
    pub constraint_id: usize,
    pub oracle_score: f64,
    pub verdict: bool,
    pub threshold_used: f64,
    /// Position among all verifications of the ledger.
    pub sequence_index: usize,
    pub strategy_tag: StrategyTag,
    /// Time step at which the verification ran.
    pub executed_at: usize,
}

/// Bit-packed set of constraint ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdSet {
    words: Vec<u64>,
    count: usize,
}

impl IdSet {
    pub fn contains(&self, id: usize) -> bool {
        self.words.get(id / 64).is_some_and(|w| w >> (id % 64) & 1 == 1)
    }

    fn insert(&mut self, id: usize) -> bool {
        if self.words.len() <= id / 64 {
            self.words.resize(id / 64 + 1, 0);
        }
        let w = &mut self.words[id / 64];
        let bit = 1u64 << (id % 64);
        let fresh = *w & bit == 0;
        *w |= bit;
        self.count += usize::from(fresh);
        fresh
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Word `k` of the set, zero past the end.
    pub fn word(&self, k: usize) -> u64 {
        self.words.get(k).copied().unwrap_or(0)
    }
}

/// Verification state at one threshold.
#[derive(Clone, Debug, Default)]
pub struct ThresholdState {
    pub verified: IdSet,
    /// Constraint ids with verdict 1, in verification order.
    pub matched: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct ConstraintLedger {
    constraints: Vec<LoopConstraint>,
    by_pair: HashMap<(usize, usize), usize>,
    records: Vec<VerificationRecord>,
    states: Vec<(u64, ThresholdState)>,
    last_time: Option<usize>,
}

impl ConstraintLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the candidates retrieved at time step `t` in rank order.
    pub fn ingest(&mut self, t: usize, candidates: &[RetrievalCandidate]) -> Result<&[LoopConstraint], LedgerError> {
        if let Some(last) = self.last_time {
            if t <= last {
                return Err(LedgerError::NonIncreasingTime { last, got: t });
            }
        }
        for c in candidates {
            if c.query != t {
                return Err(LedgerError::QueryMismatch { t, query: c.query });
            }
            if c.matched >= c.query {
                return Err(LedgerError::NotPast {
                    query: c.query,
                    matched: c.matched,
                });
            }
        }
        self.last_time = Some(t);
        let start = self.constraints.len();
        for (k, c) in candidates.iter().enumerate() {
            let id = self.constraints.len();
            self.by_pair.insert((c.query, c.matched), id);
            self.constraints.push(LoopConstraint {
                id,
                time_step: t,
                rank: k + 1,
                pair: (c.query, c.matched),
                retrieval_score: c.score,
            });
        }
        Ok(&self.constraints[start..])
    }

    /// Most recent ingested time step.
    pub fn now(&self) -> usize {
        self.last_time.unwrap_or(0)
    }

    /// Records a verification executed at the current time step.
    pub fn record_verification(
        &mut self,
        constraint_id: usize,
        oracle_score: f64,
        threshold: f64,
        strategy_tag: StrategyTag,
    ) -> Result<VerificationRecord, LedgerError> {
        if constraint_id >= self.constraints.len() {
            return Err(LedgerError::UnknownConstraint(constraint_id));
        }
        let executed_at = self.now();
        let state = self.state_mut(threshold);
        if state.verified.contains(constraint_id) {
            return Err(LedgerError::AlreadyVerified {
                id: constraint_id,
                threshold,
            });
        }
        let verdict = oracle_score >= threshold;
        state.verified.insert(constraint_id);
        if verdict {
            state.matched.push(constraint_id);
        }
        let record = VerificationRecord {
            constraint_id,
            oracle_score,
            verdict,
            threshold_used: threshold,
            sequence_index: self.records.len(),
            strategy_tag,
            executed_at,
        };
        self.records.push(record);
        Ok(record)
    }

    fn state_mut(&mut self, threshold: f64) -> &mut ThresholdState {
        let key = threshold.to_bits();
        let idx = match self.states.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                self.states.push((key, ThresholdState::default()));
                self.states.len() - 1
            }
        };
        &mut self.states[idx].1
    }

    pub fn state(&self, threshold: f64) -> Option<&ThresholdState> {
        let key = threshold.to_bits();
        self.states.iter().find(|(k, _)| *k == key).map(|(_, s)| s)
    }

    pub fn is_verified(&self, id: usize, threshold: f64) -> bool {
        self.state(threshold).is_some_and(|s| s.verified.contains(id))
    }

    pub fn unverified_count(&self, threshold: f64) -> usize {
        self.constraints.len() - self.state(threshold).map_or(0, |s| s.verified.len())
    }

    /// Constraints whose record at `threshold` has verdict 1, in
    /// verification order.
    pub fn verified_matched(&self, threshold: f64) -> Vec<&LoopConstraint> {
        self.state(threshold)
            .map(|s| s.matched.iter().map(|&id| &self.constraints[id]).collect())
            .unwrap_or_default()
    }

    pub fn constraints(&self) -> &[LoopConstraint] {
        &self.constraints
    }

    pub fn constraint(&self, id: usize) -> Option<&LoopConstraint> {
        self.constraints.get(id)
    }

    pub fn records(&self) -> &[VerificationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn find_pair(&self, query: usize, matched: usize) -> Option<usize> {
        self.by_pair.get(&(query, matched)).copied()
    }

    /// Constraints with `lo <= time_step <= hi`.
    pub fn constraints_in_time_range(&self, lo: usize, hi: usize) -> &[LoopConstraint] {
        let a = self.constraints.partition_point(|c| c.time_step < lo);
        let b = self.constraints.partition_point(|c| c.time_step <= hi);
        &self.constraints[a..b.max(a)]
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "{}", LedgerRow::HEADER)?;
        for r in &self.records {
            let c = &self.constraints[r.constraint_id];
            let row = LedgerRow {
                constraint_id: c.id,
                t: c.time_step,
                rank: c.rank,
                i: c.pair.0,
                j: c.pair.1,
                retrieval_score: c.retrieval_score,
                oracle_score: r.oracle_score,
                verdict: r.verdict,
                strategy: r.strategy_tag,
                executed_at: r.executed_at,
            };
            writeln!(w, "{row}")?;
        }
        Ok(())
    }
}

/// One line of the ledger CSV dump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LedgerRow {
    pub constraint_id: usize,
    pub t: usize,
    pub rank: usize,
    pub i: usize,
    pub j: usize,
    pub retrieval_score: f64,
    pub oracle_score: f64,
    pub verdict: bool,
    pub strategy: StrategyTag,
    /// Time step at which the verification ran.
    pub executed_at: usize,
}

impl LedgerRow {
    pub const HEADER: &'static str = "constraint_id,t,rank,i,j,retrieval_score,oracle_score,verdict,strategy,executed_at";
}

impl fmt::Display for LedgerRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            self.constraint_id,
            self.t,
            self.rank,
            self.i,
            self.j,
            self.retrieval_score,
            self.oracle_score,
            u8::from(self.verdict),
            self.strategy,
            self.executed_at
        )
    }
}

impl FromStr for LedgerRow {
    type Err = LedgerError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(LedgerError::Csv(format!("expected 10 fields, got {}", f.len())));
        }
        let bad = |k: usize| LedgerError::Csv(format!("bad field {k} in {line:?}"));
        let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad(k));
        let float = |k: usize| f[k].parse::<f64>().map_err(|_| bad(k));
        Ok(LedgerRow {
            constraint_id: int(0)?,
            t: int(1)?,
            rank: int(2)?,
            i: int(3)?,
            j: int(4)?,
            retrieval_score: float(5)?,
            oracle_score: float(6)?,
            verdict: match f[7] {
                "1" => true,
                "0" => false,
                _ => return Err(bad(7)),
            },
            strategy: f[8].parse()?,
            executed_at: int(9)?,
        })
    }
}

/// Reads a ledger CSV written by [`ConstraintLedger::write_csv`].
pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<LedgerRow>, LedgerError> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h == LedgerRow::HEADER => {}
        _ => return Err(LedgerError::Csv("missing header".into())),
    }
    lines
        .map(|l| l.map_err(|e| LedgerError::Csv(e.to_string()))?.parse())
        .collect()
}
