//! Guided selection of the next constraint to verify.
//!
//! Each round draws a hypothesis (BF, DF or uniform), then a constraint
//! (TS, NS or uniform) guided by that hypothesis. Every random draw comes
//! from a stream keyed by `(seed, purpose, round)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::consistency::{bits, ConsistencyMatrix};
use crate::hypothesis::HypothesisEngine;
use crate::ledger::{ConstraintLedger, LoopConstraint, StrategyTag, VerificationRecord};
use crate::rng::{purpose, stream};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MixError {
    #[error("ratio string {0:?} must be three non-negative numbers x:y:z")]
    Malformed(String),
    #[error("ratio string {0:?} sums to zero")]
    ZeroSum(String),
}

/// Three-way ratio `x:y:z`, kept verbatim for labels and normalized on use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ratio(pub [f64; 3]);

impl Ratio {
    pub fn normalized(&self) -> [f64; 3] {
        let s: f64 = self.0.iter().sum();
        self.0.map(|v| v / s)
    }
}

impl FromStr for Ratio {
    type Err = MixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts.len() != 3 {
            return Err(MixError::Malformed(s.into()));
        }
        let mut v = [0.0f64; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p.trim().parse().map_err(|_| MixError::Malformed(s.into()))?;
            if !(slot.is_finite() && *slot >= 0.0) {
                return Err(MixError::Malformed(s.into()));
            }
        }
        if v.iter().sum::<f64>() <= 0.0 {
            return Err(MixError::ZeroSum(s.into()));
        }
        Ok(Ratio(v))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.0[0], self.0[1], self.0[2])
    }
}

/// Strategy probabilities. The constraint ratio reads `US:NS:TS` and the
/// hypothesis ratio `US:DF:BF`, so `1:0:0` is uniform in both.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrategyMix {
    pub p_ts: f64,
    pub p_ns: f64,
    pub p_bf: f64,
    pub p_df: f64,
}

impl StrategyMix {
    pub const UNIFORM: StrategyMix = StrategyMix {
        p_ts: 0.0,
        p_ns: 0.0,
        p_bf: 0.0,
        p_df: 0.0,
    };

    pub fn from_ratios(constraint: &Ratio, hypothesis: &Ratio) -> Self {
        let [_, ns, ts] = constraint.normalized();
        let [_, df, bf] = hypothesis.normalized();
        Self {
            p_ts: ts,
            p_ns: ns,
            p_bf: bf,
            p_df: df,
        }
    }

    pub fn parse(constraint: &str, hypothesis: &str) -> Result<Self, MixError> {
        Ok(Self::from_ratios(&constraint.parse()?, &hypothesis.parse()?))
    }

    pub fn constraint_strategy(&self, u: f64) -> StrategyTag {
        if u < self.p_ts {
            StrategyTag::Ts
        } else if u < self.p_ts + self.p_ns {
            StrategyTag::Ns
        } else {
            StrategyTag::Us
        }
    }

    pub fn hypothesis_strategy(&self, u: f64) -> HypothesisStrategy {
        if u < self.p_bf {
            HypothesisStrategy::Bf
        } else if u < self.p_bf + self.p_df {
            HypothesisStrategy::Df
        } else {
            HypothesisStrategy::Us
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HypothesisStrategy {
    Bf,
    Df,
    Us,
}

impl fmt::Display for HypothesisStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HypothesisStrategy::Bf => "BF",
            HypothesisStrategy::Df => "DF",
            HypothesisStrategy::Us => "US",
        })
    }
}

/// Random streams for one round.
pub struct RoundRng {
    pub hypothesis_strategy: ChaCha8Rng,
    pub hypothesis_pick: ChaCha8Rng,
    pub constraint_strategy: ChaCha8Rng,
    pub constraint_pick: ChaCha8Rng,
    pub neighbor_pick: ChaCha8Rng,
    pub fallback_pick: ChaCha8Rng,
}

impl RoundRng {
    pub fn new(seed: u64, round: u64) -> Self {
        let s = |p| stream(seed, &[p, round]);
        Self {
            hypothesis_strategy: s(purpose::HYPOTHESIS_STRATEGY),
            hypothesis_pick: s(purpose::HYPOTHESIS_PICK),
            constraint_strategy: s(purpose::CONSTRAINT_STRATEGY),
            constraint_pick: s(purpose::CONSTRAINT_PICK),
            neighbor_pick: s(purpose::NEIGHBOR_PICK),
            fallback_pick: s(purpose::FALLBACK_PICK),
        }
    }
}

/// Picks a hypothesis and bumps its `times_sampled`. `None` when the
/// engine holds no hypotheses.
pub fn select_hypothesis(mix: &StrategyMix, engine: &mut HypothesisEngine, rng: &mut RoundRng) -> Option<(usize, HypothesisStrategy)> {
    let strategy = mix.hypothesis_strategy(rng.hypothesis_strategy.random());
    let hs = engine.hypotheses();
    if hs.is_empty() {
        return None;
    }
    let id = match strategy {
        HypothesisStrategy::Bf => hs.iter().min_by_key(|h| (h.times_sampled, h.id)).map(|h| h.id).expect("nonempty"),
        HypothesisStrategy::Df => {
            let mut order: Vec<(u64, usize)> = hs.iter().map(|h| (h.importance_weight, h.id)).collect();
            order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let upper = order.len().div_ceil(2);
            order[rng.hypothesis_pick.random_range(0..upper)].1
        }
        HypothesisStrategy::Us => rng.hypothesis_pick.random_range(0..hs.len()),
    };
    engine.bump_sampled(id);
    Some((id, strategy))
}

/// Index of the `k`-th set bit of `a & !b`.
fn kth_set(a: &[u64], b: impl Fn(usize) -> u64, mut k: usize) -> usize {
    for (w, &word) in a.iter().enumerate() {
        let m = word & !b(w);
        let c = m.count_ones() as usize;
        if k < c {
            return bits(&[m]).nth(k).expect("bit exists") + 64 * w;
        }
        k -= c;
    }
    unreachable!("k exceeds population")
}

/// Uniform draw among unverified constraints at `threshold`.
pub fn uniform_unverified(ledger: &ConstraintLedger, threshold: f64, rng: &mut ChaCha8Rng) -> Option<usize> {
    let n = ledger.len();
    let pool = ledger.unverified_count(threshold);
    if pool == 0 {
        return None;
    }
    // Rejection first; it almost always succeeds while most constraints
    // are unverified, and the scan below keeps the worst case linear.
    for _ in 0..64 {
        let id = rng.random_range(0..n);
        if !ledger.is_verified(id, threshold) {
            return Some(id);
        }
    }
    let k = rng.random_range(0..pool);
    let words = vec![u64::MAX; n.div_ceil(64)];
    let verified = ledger.state(threshold).map(|s| &s.verified);
    let id = kth_set(&words, |w| verified.map_or(0, |v| v.word(w)) | tail_mask(w, n), k);
    Some(id)
}

/// Bits at or past `n` within word `w`.
fn tail_mask(w: usize, n: usize) -> u64 {
    let lo = w * 64;
    if n >= lo + 64 {
        0
    } else if n <= lo {
        u64::MAX
    } else {
        u64::MAX << (n - lo)
    }
}

/// The four diagonal neighbours `(i ± 1, j ± 1)` of a pair.
pub fn diagonal_neighbors((i, j): (usize, usize)) -> impl Iterator<Item = (usize, usize)> {
    [(-1i64, -1i64), (-1, 1), (1, -1), (1, 1)].into_iter().filter_map(move |(di, dj)| {
        let a = i.checked_add_signed(di as isize)?;
        let b = j.checked_add_signed(dj as isize)?;
        Some((a, b))
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintPick {
    pub id: usize,
    pub strategy: StrategyTag,
    /// Verified-matched constraint an NS pick was derived from.
    pub guide: Option<usize>,
}

/// Draws the constraint strategy, then a constraint from that strategy's
/// pool. Returns the drawn strategy and the pick, `None` if the pool is
/// empty.
pub fn select_constraint(
    mix: &StrategyMix,
    hypothesis: Option<usize>,
    ledger: &ConstraintLedger,
    consistency: &ConsistencyMatrix,
    threshold: f64,
    rng: &mut RoundRng,
) -> (StrategyTag, Option<ConstraintPick>) {
    let strategy = mix.constraint_strategy(rng.constraint_strategy.random());
    let pick = match (strategy, hypothesis) {
        (StrategyTag::Us, _) => uniform_unverified(ledger, threshold, &mut rng.constraint_pick).map(|id| ConstraintPick {
            id,
            strategy,
            guide: None,
        }),
        (StrategyTag::Ts, Some(h)) => trajectory_pick(h, ledger, consistency, threshold, &mut rng.constraint_pick).map(|id| ConstraintPick {
            id,
            strategy,
            guide: None,
        }),
        (StrategyTag::Ns, Some(h)) => neighbor_pick(h, ledger, consistency, threshold, rng),
        (_, None) => None,
    };
    (strategy, pick)
}

fn trajectory_pick(h: usize, ledger: &ConstraintLedger, consistency: &ConsistencyMatrix, threshold: f64, rng: &mut ChaCha8Rng) -> Option<usize> {
    let col = consistency.column_words(h);
    let verified = ledger.state(threshold).map(|s| &s.verified);
    let mask = |w: usize| verified.map_or(0, |v| v.word(w));
    let pool: usize = col.iter().enumerate().map(|(w, &x)| (x & !mask(w)).count_ones() as usize).sum();
    if pool == 0 {
        return None;
    }
    let k = rng.random_range(0..pool);
    let id = kth_set(col, mask, k);
    debug_assert!(consistency.get(id, h));
    Some(id)
}

fn neighbor_pick(h: usize, ledger: &ConstraintLedger, consistency: &ConsistencyMatrix, threshold: f64, rng: &mut RoundRng) -> Option<ConstraintPick> {
    let state = ledger.state(threshold)?;
    let seeds: Vec<usize> = state.matched.iter().copied().filter(|&id| consistency.get(id, h)).collect();
    if seeds.is_empty() {
        return None;
    }
    let guide = seeds[rng.neighbor_pick.random_range(0..seeds.len())];
    let pair = ledger.constraint(guide).expect("matched ids exist").pair;
    let options: Vec<usize> = diagonal_neighbors(pair)
        .filter_map(|(i, j)| ledger.find_pair(i, j))
        .filter(|&id| !state.verified.contains(id))
        .collect();
    if options.is_empty() {
        return None;
    }
    let id = options[rng.constraint_pick.random_range(0..options.len())];
    Some(ConstraintPick {
        id,
        strategy: StrategyTag::Ns,
        guide: Some(guide),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundOutcome {
    pub record: VerificationRecord,
    pub hypothesis: Option<(usize, HypothesisStrategy)>,
    /// Strategy drawn for the constraint, before any fallback.
    pub drawn: StrategyTag,
    pub fell_back: bool,
    pub guide: Option<usize>,
}

/// One sequential sampler; `round` counts completed and skipped rounds.
#[derive(Clone, Debug)]
pub struct Sampler {
    pub mix: StrategyMix,
    pub seed: u64,
    pub threshold: f64,
    round: u64,
}

impl Sampler {
    pub fn new(mix: StrategyMix, seed: u64, threshold: f64) -> Self {
        Self {
            mix,
            seed,
            threshold,
            round: 0,
        }
    }

    pub fn rounds(&self) -> u64 {
        self.round
    }

    /// Selects, verifies and records one constraint. A verdict of 1 raises
    /// the importance weight of every hypothesis consistent with the
    /// constraint. Returns `None` only when nothing is left to verify.
    pub fn round<F>(&mut self, engine: &mut HypothesisEngine, ledger: &mut ConstraintLedger, consistency: &ConsistencyMatrix, mut oracle: F) -> Option<RoundOutcome>
    where
        F: FnMut(&LoopConstraint) -> f64,
    {
        let round = self.round;
        self.round += 1;
        if ledger.unverified_count(self.threshold) == 0 {
            return None;
        }
        let mut rng = RoundRng::new(self.seed, round);
        let hypothesis = select_hypothesis(&self.mix, engine, &mut rng);
        let (drawn, pick) = select_constraint(&self.mix, hypothesis.map(|h| h.0), ledger, consistency, self.threshold, &mut rng);
        let fell_back = pick.is_none();
        let pick = pick.unwrap_or_else(|| ConstraintPick {
            id: uniform_unverified(ledger, self.threshold, &mut rng.fallback_pick).expect("pool checked above"),
            strategy: StrategyTag::Us,
            guide: None,
        });
        let c = *ledger.constraint(pick.id).expect("picked id exists");
        let score = oracle(&c);
        let record = ledger
            .record_verification(pick.id, score, self.threshold, pick.strategy)
            .expect("picked constraint is unverified");
        if record.verdict {
            credit_match(engine, consistency, pick.id);
        }
        Some(RoundOutcome {
            record,
            hypothesis,
            drawn,
            fell_back,
            guide: pick.guide,
        })
    }
}

/// Bumps the importance of every hypothesis consistent with a newly
/// matched constraint.
pub fn credit_match(engine: &mut HypothesisEngine, consistency: &ConsistencyMatrix, constraint: usize) {
    let ids: Vec<usize> = consistency.hypotheses_consistent_with(constraint).collect();
    for h in ids {
        engine.bump_importance(h);
    }
}

/// Sets a new hypothesis's importance to the matches it is consistent with.
pub fn credit_new_hypothesis(engine: &mut HypothesisEngine, consistency: &ConsistencyMatrix, ledger: &ConstraintLedger, threshold: f64, hypothesis: usize) {
    let Some(state) = ledger.state(threshold) else { return };
    let n = state.matched.iter().filter(|&&id| consistency.get(id, hypothesis)).count();
    for _ in 0..n {
        engine.bump_importance(hypothesis);
    }
}
