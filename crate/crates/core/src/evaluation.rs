//! Precision/recall, per-window ratios and the guided-vs-uniform trial.
//!
//! Everything here is a fold over verification rows, so a run's numbers can
//! be recomputed offline from `ledger.csv` and the world.

use std::io::{self, Write};

use rand::Rng;

use crate::consistency::ConsistencyMatrix;
use crate::hypothesis::TrajectoryHypothesis;
use crate::ledger::{ConstraintLedger, LedgerRow, LoopConstraint, StrategyTag};
use crate::pose_graph::position_rmse;
use crate::rng::{purpose, stream};
use crate::sampler::uniform_unverified;
use crate::world::WorldModel;

pub fn is_correct(world: &WorldModel, c: &LoopConstraint) -> bool {
    world.is_correct_pair(c.pair.0, c.pair.1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    /// Revisit queries with a correct match over all revisit queries.
    pub recall: f64,
    pub n_verified: usize,
    pub n_correct: usize,
    /// Correct matches over correct constraints in the ledger.
    pub constraint_recall: f64,
}

/// One verified constraint as seen by the PR fold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredPair {
    pub query: usize,
    pub matched: usize,
    pub oracle_score: f64,
    pub correct: bool,
}

/// Denominators of the two recall counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecallBase {
    pub revisit_queries: usize,
    pub correct_constraints: usize,
}

impl RecallBase {
    pub fn new(world: &WorldModel, ledger: &ConstraintLedger) -> Self {
        Self {
            revisit_queries: world.revisit_queries().count(),
            correct_constraints: ledger.constraints().iter().filter(|c| is_correct(world, c)).count(),
        }
    }
}

fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// PR points from verified pairs; a pair counts as matched at `thr` when its
/// stored score is at least `thr`. Precision of an empty set is 1.
pub fn pr_from_pairs(pairs: &[ScoredPair], base: RecallBase, thresholds: &[f64]) -> Vec<PrPoint> {
    thresholds
        .iter()
        .map(|&thr| {
            let matched: Vec<&ScoredPair> = pairs.iter().filter(|p| p.oracle_score >= thr).collect();
            let n_correct = matched.iter().filter(|p| p.correct).count();
            let mut queries: Vec<usize> = matched.iter().filter(|p| p.correct).map(|p| p.query).collect();
            queries.sort_unstable();
            queries.dedup();
            PrPoint {
                threshold: thr,
                precision: ratio(n_correct, matched.len(), 1.0),
                recall: ratio(queries.len(), base.revisit_queries, 0.0),
                n_verified: matched.len(),
                n_correct,
                constraint_recall: ratio(n_correct, base.correct_constraints, 0.0),
            }
        })
        .collect()
}

/// Verified pairs of a ledger; a constraint verified more than once keeps
/// its first record.
pub fn scored_pairs(world: &WorldModel, ledger: &ConstraintLedger) -> Vec<ScoredPair> {
    let mut seen = vec![false; ledger.len()];
    ledger
        .records()
        .iter()
        .filter(|r| !std::mem::replace(&mut seen[r.constraint_id], true))
        .map(|r| {
            let c = &ledger.constraints()[r.constraint_id];
            ScoredPair {
                query: c.pair.0,
                matched: c.pair.1,
                oracle_score: r.oracle_score,
                correct: is_correct(world, c),
            }
        })
        .collect()
}

pub fn pr_sweep(world: &WorldModel, ledger: &ConstraintLedger, thresholds: &[f64]) -> Vec<PrPoint> {
    pr_from_pairs(&scored_pairs(world, ledger), RecallBase::new(world, ledger), thresholds)
}

/// Same fold over rows read back from `ledger.csv`.
pub fn pr_from_rows(world: &WorldModel, rows: &[LedgerRow], base: RecallBase, thresholds: &[f64]) -> Vec<PrPoint> {
    let mut seen = std::collections::HashSet::new();
    let pairs: Vec<ScoredPair> = rows
        .iter()
        .filter(|r| seen.insert(r.constraint_id))
        .map(|r| ScoredPair {
            query: r.i,
            matched: r.j,
            oracle_score: r.oracle_score,
            correct: world.is_correct_pair(r.i, r.j),
        })
        .collect();
    pr_from_pairs(&pairs, base, thresholds)
}

/// Area under precision over recall. The curve is extended flat from its
/// lowest-recall point down to recall 0, then integrated by trapezoids.
pub fn pr_area(points: &[PrPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let Some(&(r0, p0)) = pts.first() else { return 0.0 };
    let mut area = r0 * p0;
    for w in pts.windows(2) {
        area += (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1);
    }
    area
}

pub fn write_pr_csv<W: Write>(w: &mut W, points: &[PrPoint]) -> io::Result<()> {
    writeln!(w, "threshold,precision,recall,n_verified,n_correct,constraint_recall")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.threshold, p.precision, p.recall, p.n_verified, p.n_correct, p.constraint_recall
        )?;
    }
    Ok(())
}

/// Which verifications a window row counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyFilter {
    All,
    Only(StrategyTag),
}

impl StrategyFilter {
    pub const ROWS: [StrategyFilter; 4] = [
        StrategyFilter::All,
        StrategyFilter::Only(StrategyTag::Us),
        StrategyFilter::Only(StrategyTag::Ts),
        StrategyFilter::Only(StrategyTag::Ns),
    ];

    fn admits(&self, tag: StrategyTag) -> bool {
        match self {
            StrategyFilter::All => true,
            StrategyFilter::Only(t) => *t == tag,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            StrategyFilter::All => "ALL",
            StrategyFilter::Only(t) => t.as_str(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowRatio {
    pub window_id: usize,
    pub strategy: StrategyFilter,
    pub n_verified: usize,
    pub n_matched: usize,
    pub n_correct: usize,
    /// `None` when the window has no verifications for this strategy.
    pub verified_ratio: Option<f64>,
    pub correct_ratio: Option<f64>,
}

/// Per-window counts of verifications executed in window `(t - 1) / W`.
pub fn per_window_ratios(ledger: &ConstraintLedger, world: &WorldModel, window: usize) -> Vec<WindowRatio> {
    let n_windows = ledger.now().div_ceil(window);
    let mut counts = vec![[(0usize, 0usize, 0usize); 4]; n_windows];
    for r in ledger.records() {
        let w = r.executed_at.saturating_sub(1) / window;
        let correct = is_correct(world, &ledger.constraints()[r.constraint_id]);
        for (k, f) in StrategyFilter::ROWS.iter().enumerate() {
            if f.admits(r.strategy_tag) {
                let c = &mut counts[w][k];
                c.0 += 1;
                c.1 += usize::from(r.verdict);
                c.2 += usize::from(r.verdict && correct);
            }
        }
    }
    let mut out = Vec::with_capacity(n_windows * 4);
    for (w, row) in counts.iter().enumerate() {
        for (k, &(n, m, c)) in row.iter().enumerate() {
            out.push(WindowRatio {
                window_id: w,
                strategy: StrategyFilter::ROWS[k],
                n_verified: n,
                n_matched: m,
                n_correct: c,
                verified_ratio: (n > 0).then(|| m as f64 / n as f64),
                correct_ratio: (n > 0).then(|| c as f64 / n as f64),
            });
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_window_csv<W: Write>(w: &mut W, rows: &[WindowRatio]) -> io::Result<()> {
    writeln!(w, "window_id,strategy,n_verified,n_matched,n_correct,verified_ratio,correct_ratio")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.window_id,
            r.strategy.label(),
            r.n_verified,
            r.n_matched,
            r.n_correct,
            opt(r.verified_ratio),
            opt(r.correct_ratio)
        )?;
    }
    Ok(())
}

/// Upper edges of the RMSE buckets, in metres; the last bucket is open.
pub const ERROR_BUCKETS: [f64; 4] = [5.0, 10.0, 20.0, 50.0];

pub fn bucket_of(rmse: f64) -> usize {
    ERROR_BUCKETS.iter().position(|&hi| rmse < hi).unwrap_or(ERROR_BUCKETS.len())
}

pub fn bucket_bounds(b: usize) -> (f64, f64) {
    let lo = if b == 0 { 0.0 } else { ERROR_BUCKETS[b - 1] };
    let hi = ERROR_BUCKETS.get(b).copied().unwrap_or(f64::INFINITY);
    (lo, hi)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BucketStats {
    pub n_hypotheses: usize,
    pub guided_samples: usize,
    pub guided_successes: usize,
    /// Guided draws that found an empty pool and drew uniformly instead.
    pub fallbacks: usize,
    pub uniform_samples: usize,
    pub uniform_successes: usize,
}

impl BucketStats {
    pub fn guided_ratio(&self) -> Option<f64> {
        (self.guided_samples > 0).then(|| self.guided_successes as f64 / self.guided_samples as f64)
    }

    pub fn uniform_ratio(&self) -> Option<f64> {
        (self.uniform_samples > 0).then(|| self.uniform_successes as f64 / self.uniform_samples as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub buckets: Vec<BucketStats>,
    /// Correct over all unverified constraints at trial time.
    pub uniform_exact: Option<f64>,
    pub hypothesis_rmse: Vec<f64>,
}

/// Position RMSE of a hypothesis over the poses it covers.
pub fn hypothesis_rmse(h: &TrajectoryHypothesis, world: &WorldModel) -> f64 {
    position_rmse(&h.trajectory, &world.ground_truth[..h.trajectory.len()])
}

/// For every hypothesis, draws `rounds` constraints guided by it (uniform
/// among its consistent unverified constraints, falling back to uniform over
/// all unverified ones) and `rounds` plain uniform constraints, with
/// replacement and without touching the ledger. A draw succeeds when the
/// constraint is correct. Results are grouped by the hypothesis's RMSE.
pub fn guided_vs_uniform_trial(
    world: &WorldModel,
    hypotheses: &[TrajectoryHypothesis],
    ledger: &ConstraintLedger,
    consistency: &ConsistencyMatrix,
    threshold: f64,
    rounds: usize,
    seed: u64,
) -> TrialResult {
    let correct: Vec<bool> = ledger.constraints().iter().map(|c| is_correct(world, c)).collect();
    let unverified: Vec<usize> = (0..ledger.len()).filter(|&id| !ledger.is_verified(id, threshold)).collect();
    let uniform_exact = (!unverified.is_empty()).then(|| unverified.iter().filter(|&&id| correct[id]).count() as f64 / unverified.len() as f64);
    let mut buckets = vec![BucketStats::default(); ERROR_BUCKETS.len() + 1];
    let mut rmses = Vec::with_capacity(hypotheses.len());
    for h in hypotheses {
        let rmse = hypothesis_rmse(h, world);
        rmses.push(rmse);
        let b = &mut buckets[bucket_of(rmse)];
        b.n_hypotheses += 1;
        if unverified.is_empty() {
            continue;
        }
        let pool: Vec<usize> = consistency
            .constraints_consistent_with(h.id)
            .filter(|&id| !ledger.is_verified(id, threshold))
            .collect();
        let mut guided = stream(seed, &[purpose::TRIAL, h.id as u64, 0]);
        let mut uniform = stream(seed, &[purpose::TRIAL, h.id as u64, 1]);
        for _ in 0..rounds {
            let id = if pool.is_empty() {
                b.fallbacks += 1;
                uniform_unverified(ledger, threshold, &mut guided).expect("unverified exist")
            } else {
                pool[guided.random_range(0..pool.len())]
            };
            b.guided_samples += 1;
            b.guided_successes += usize::from(correct[id]);
            let id = unverified[uniform.random_range(0..unverified.len())];
            b.uniform_samples += 1;
            b.uniform_successes += usize::from(correct[id]);
        }
    }
    TrialResult {
        buckets,
        uniform_exact,
        hypothesis_rmse: rmses,
    }
}

pub fn write_trial_csv<W: Write>(w: &mut W, trial: &TrialResult) -> io::Result<()> {
    writeln!(
        w,
        "bucket,rmse_lo,rmse_hi,n_hypotheses,guided_samples,guided_successes,guided_ratio,uniform_samples,uniform_successes,uniform_ratio,uniform_exact,fallbacks"
    )?;
    for (k, b) in trial.buckets.iter().enumerate() {
        let (lo, hi) = bucket_bounds(k);
        writeln!(
            w,
            "{k},{lo},{hi},{},{},{},{},{},{},{},{},{}",
            b.n_hypotheses,
            b.guided_samples,
            b.guided_successes,
            opt(b.guided_ratio()),
            b.uniform_samples,
            b.uniform_successes,
            opt(b.uniform_ratio()),
            opt(trial.uniform_exact),
            b.fallbacks
        )?;
    }
    Ok(())
}
