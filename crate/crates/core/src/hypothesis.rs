//! Windowed trajectory hypotheses.
//!
//! At every window boundary the highest-scoring constraint retrieved in
//! that window seeds one pose-graph solve over all odometry so far. The
//! optimized trajectory is frozen: later odometry never extends it, so
//! positions past its creation time are undefined.

use std::io::{self, Write};

use crate::ledger::{ConstraintLedger, LoopConstraint};
use crate::pose_graph::{optimize, Edge, Information, OptimizeOptions, PoseGraph};
use crate::se2::Pose2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryHypothesis {
    pub id: usize,
    pub window_id: usize,
    pub seed_constraint: usize,
    pub trajectory: Vec<Pose2>,
    pub times_sampled: u64,
    pub importance_weight: u64,
    /// False when the solve did not converge and the dead-reckoned
    /// trajectory was stored instead.
    pub converged: bool,
}

impl TrajectoryHypothesis {
    /// Pose of location `t` under this hypothesis.
    pub fn position(&self, t: usize) -> Option<Pose2> {
        self.trajectory.get(t).copied()
    }

    /// Last time step covered by the trajectory.
    pub fn created_at(&self) -> usize {
        self.trajectory.len().saturating_sub(1)
    }
}

#[derive(Clone, Debug)]
pub struct HypothesisEngine {
    window: usize,
    odometry_information: Information,
    loop_information: Information,
    options: OptimizeOptions,
    hypotheses: Vec<TrajectoryHypothesis>,
}

impl HypothesisEngine {
    pub fn new(window: usize, odometry_information: Information, loop_information: Information, options: OptimizeOptions) -> Self {
        assert!(window > 0, "window size must be positive");
        Self {
            window,
            odometry_information,
            loop_information,
            options,
            hypotheses: Vec::new(),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn hypotheses(&self) -> &[TrajectoryHypothesis] {
        &self.hypotheses
    }

    pub fn get(&self, id: usize) -> Option<&TrajectoryHypothesis> {
        self.hypotheses.get(id)
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// Best constraint of the window ending at `t`: highest retrieval score,
    /// then lowest rank, then earliest time step.
    pub fn window_seed<'a>(&self, t: usize, ledger: &'a ConstraintLedger) -> Option<&'a LoopConstraint> {
        let lo = t.saturating_sub(self.window) + 1;
        ledger
            .constraints_in_time_range(lo, t)
            .iter()
            .reduce(|best, c| {
                let better = c.retrieval_score > best.retrieval_score
                    || (c.retrieval_score == best.retrieval_score && c.rank < best.rank);
                if better {
                    c
                } else {
                    best
                }
            })
    }

    /// Called once per time step. `odometry` holds the `t` motions received
    /// so far and `measure` supplies the relative pose of a loop constraint
    /// as `pose(query)` seen from `pose(matched)`.
    pub fn maybe_spawn<F>(&mut self, t: usize, ledger: &ConstraintLedger, odometry: &[Pose2], origin: Pose2, measure: F) -> Option<&TrajectoryHypothesis>
    where
        F: Fn(&LoopConstraint) -> Pose2,
    {
        if t == 0 || !t.is_multiple_of(self.window) {
            return None;
        }
        let seed = *self.window_seed(t, ledger)?;
        let odometry = &odometry[..t.min(odometry.len())];
        let mut graph = PoseGraph::from_odometry(odometry, origin, self.odometry_information);
        let (query, matched) = seed.pair;
        let edge = Edge::new(matched, query, measure(&seed), self.loop_information);
        if graph.add_loop_edge(edge).is_err() {
            log::warn!("seed constraint {} does not fit the graph at t={t}", seed.id);
            return None;
        }
        let (solved, report) = optimize(&graph, &self.options);
        let trajectory = if report.converged { solved.poses } else { graph.poses };
        let id = self.hypotheses.len();
        self.hypotheses.push(TrajectoryHypothesis {
            id,
            window_id: t / self.window - 1,
            seed_constraint: seed.id,
            trajectory,
            times_sampled: 0,
            importance_weight: 0,
            converged: report.converged,
        });
        self.hypotheses.last()
    }

    /// Stores an externally built hypothesis, re-numbering it.
    pub fn push(&mut self, mut h: TrajectoryHypothesis) -> &TrajectoryHypothesis {
        h.id = self.hypotheses.len();
        self.hypotheses.push(h);
        self.hypotheses.last().expect("just pushed")
    }

    pub fn bump_sampled(&mut self, id: usize) -> u64 {
        let h = &mut self.hypotheses[id];
        h.times_sampled += 1;
        h.times_sampled
    }

    pub fn bump_importance(&mut self, id: usize) -> u64 {
        let h = &mut self.hypotheses[id];
        h.importance_weight += 1;
        h.importance_weight
    }

    pub fn write_index_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "hyp_id,window_id,seed_constraint,times_sampled,importance_weight")?;
        for h in &self.hypotheses {
            writeln!(
                w,
                "{},{},{},{},{}",
                h.id, h.window_id, h.seed_constraint, h.times_sampled, h.importance_weight
            )?;
        }
        Ok(())
    }
}
