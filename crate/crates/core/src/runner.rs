//! The incremental main loop and its on-disk artifacts.
//!
//! Per time step `t`: retrieve candidates for pose `t`, ingest them, add
//! their consistency rows, maybe spawn a hypothesis and add its column,
//! then run `K` sampling rounds.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::consistency::ConsistencyMatrix;
use crate::evaluation::{self, PrPoint, TrialResult, WindowRatio};
use crate::g2o;
use crate::hypothesis::HypothesisEngine;
use crate::ledger::{ConstraintLedger, StrategyTag};
use crate::pose_graph::{dead_reckon, diagonal_information, optimize, position_rmse, Edge, OptimizeOptions, OptimizeReport, PoseGraph};
use crate::rng::{derive_seed, label_hash};
use crate::sampler::{credit_new_hypothesis, RoundOutcome, Sampler};
use crate::se2::Pose2;
use crate::world::{generate_course_with, sample_odometry, write_candidates, RetrievalCandidate, WorldModel, WorldParams};

/// Smallest noise used to build information matrices, so zero-noise runs
/// still yield finite weights.
const MIN_SIGMA: f64 = 1e-6;

/// Everything a run produces, in memory.
pub struct RunState {
    pub config: ExperimentConfig,
    pub world: WorldModel,
    pub odometry: Vec<Pose2>,
    pub candidates: Vec<RetrievalCandidate>,
    pub ledger: ConstraintLedger,
    pub engine: HypothesisEngine,
    pub consistency: ConsistencyMatrix,
    pub outcomes: Vec<RoundOutcome>,
    pub final_graph: PoseGraph,
    pub final_report: OptimizeReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub mix: String,
    pub n_constraints: usize,
    pub n_hypotheses: usize,
    pub n_verifications: usize,
    pub n_matched: usize,
    pub n_correct_matched: usize,
    pub n_fallbacks: usize,
    pub pr_area: f64,
    /// Verifications that hit a correct constraint, over all verifications.
    pub success_ratio: f64,
    pub dead_reckoning_rmse: f64,
    pub final_rmse: f64,
    pub final_converged: bool,
    pub consistency_bytes: usize,
}

/// Seed of the sampling streams; differs per mix so paired runs share the
/// world but not their draws.
pub fn sampler_seed(config: &ExperimentConfig) -> u64 {
    derive_seed(config.seed, &[label_hash(&config.mix_label())])
}

pub fn world_params(config: &ExperimentConfig) -> WorldParams {
    WorldParams {
        revisit_radius: config.revisit_radius,
        triviality_cutoff: config.triviality_cutoff,
        ..WorldParams::default()
    }
}

pub fn odometry_information(config: &ExperimentConfig) -> nalgebra::Matrix3<f64> {
    diagonal_information(config.sigma_xy.max(MIN_SIGMA), config.sigma_theta.max(MIN_SIGMA))
}

/// Runs the main loop without touching the file system.
pub fn simulate(config: &ExperimentConfig) -> anyhow::Result<RunState> {
    config.validate()?;
    let world = generate_course_with(config.course, config.length, config.seed, &world_params(config))?;
    let odometry = sample_odometry(&world, (config.sigma_xy, config.sigma_theta), config.seed);
    simulate_in(config, world, odometry)
}

/// Main loop over a prepared world and odometry.
pub fn simulate_in(config: &ExperimentConfig, world: WorldModel, odometry: Vec<Pose2>) -> anyhow::Result<RunState> {
    let origin = world.ground_truth[0];
    let odo_info = odometry_information(config);
    let loop_info = odo_info * config.loop_information_scale;
    let options = OptimizeOptions {
        max_iters: config.max_iters,
        tol: config.tol,
    };
    let oracle = config.oracle();
    let seed = config.seed;
    let measure = |c: &crate::ledger::LoopConstraint| world.loop_measurement(c.pair.0, c.pair.1, seed);

    let mut ledger = ConstraintLedger::new();
    let mut engine = HypothesisEngine::new(config.window, odo_info, loop_info, options);
    let mut consistency = ConsistencyMatrix::new(config.consistency_threshold);
    let mut sampler = Sampler::new(config.mix(), sampler_seed(config), config.threshold);
    let mut candidates = Vec::new();
    let mut outcomes = Vec::new();

    for t in 1..world.len() {
        let cands = world.retrieve(t, config.n_candidates);
        let fresh = ledger.ingest(t, &cands)?;
        for c in fresh {
            consistency.add_constraint_row(c, engine.hypotheses());
        }
        candidates.extend(cands);
        if let Some(h) = engine.maybe_spawn(t, &ledger, &odometry[..t], origin, measure) {
            let id = h.id;
            consistency.add_hypothesis_column(h, ledger.constraints());
            credit_new_hypothesis(&mut engine, &consistency, &ledger, config.threshold, id);
        }
        for _ in 0..config.verifications_per_step {
            match sampler.round(&mut engine, &mut ledger, &consistency, |c| world.verify_oracle(&oracle, c.pair, seed)) {
                Some(o) => outcomes.push(o),
                None => break,
            }
        }
    }

    let mut graph = PoseGraph::from_odometry(&odometry, origin, odo_info);
    for c in ledger.verified_matched(config.threshold) {
        graph.add_loop_edge(Edge::new(c.pair.1, c.pair.0, measure(c), loop_info))?;
    }
    let (final_graph, final_report) = optimize(&graph, &options);
    if !final_report.converged {
        log::warn!("final optimization did not converge after {} iterations", final_report.iterations);
    }

    Ok(RunState {
        config: config.clone(),
        world,
        odometry,
        candidates,
        ledger,
        engine,
        consistency,
        outcomes,
        final_graph,
        final_report,
    })
}

impl RunState {
    pub fn pr_curve(&self) -> Vec<PrPoint> {
        evaluation::pr_sweep(&self.world, &self.ledger, &self.config.thresholds)
    }

    pub fn window_ratios(&self) -> Vec<WindowRatio> {
        evaluation::per_window_ratios(&self.ledger, &self.world, self.config.window)
    }

    pub fn trial(&self) -> TrialResult {
        evaluation::guided_vs_uniform_trial(
            &self.world,
            self.engine.hypotheses(),
            &self.ledger,
            &self.consistency,
            self.config.threshold,
            self.config.trial_rounds,
            derive_seed(self.config.seed, &[crate::rng::purpose::TRIAL]),
        )
    }

    pub fn dead_reckoning(&self) -> Vec<Pose2> {
        dead_reckon(&self.odometry, self.world.ground_truth[0])
    }

    pub fn summary(&self) -> RunSummary {
        let records = self.ledger.records();
        let correct: Vec<bool> = records
            .iter()
            .map(|r| evaluation::is_correct(&self.world, &self.ledger.constraints()[r.constraint_id]))
            .collect();
        RunSummary {
            mix: self.config.mix_label(),
            n_constraints: self.ledger.len(),
            n_hypotheses: self.engine.len(),
            n_verifications: records.len(),
            n_matched: records.iter().filter(|r| r.verdict).count(),
            n_correct_matched: records.iter().zip(&correct).filter(|(r, &c)| r.verdict && c).count(),
            n_fallbacks: self.outcomes.iter().filter(|o| o.fell_back).count(),
            pr_area: evaluation::pr_area(&self.pr_curve()),
            success_ratio: if records.is_empty() {
                0.0
            } else {
                correct.iter().filter(|&&c| c).count() as f64 / records.len() as f64
            },
            dead_reckoning_rmse: position_rmse(&self.dead_reckoning(), &self.world.ground_truth),
            final_rmse: position_rmse(&self.final_graph.poses, &self.world.ground_truth),
            final_converged: self.final_report.converged,
            consistency_bytes: self.consistency.memory_bytes(),
        }
    }

    /// Writes every artifact into `dir`, creating it if needed.
    pub fn write_artifacts(&self, dir: &Path, write_consistency: bool) -> anyhow::Result<RunSummary> {
        fs::create_dir_all(dir.join("hypotheses")).with_context(|| format!("creating {}", dir.display()))?;
        let create = |name: &str| -> anyhow::Result<BufWriter<File>> {
            let p = dir.join(name);
            Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
        };
        let finish = |mut w: BufWriter<File>| -> io::Result<()> { w.flush() };

        fs::write(dir.join("config.txt"), self.config.to_text())?;

        let mut w = create("ledger.csv")?;
        self.ledger.write_csv(&mut w)?;
        finish(w)?;

        let mut w = create("candidates.txt")?;
        write_candidates(&mut w, &self.candidates)?;
        finish(w)?;

        let mut w = create("hypotheses.csv")?;
        self.engine.write_index_csv(&mut w)?;
        finish(w)?;
        for h in self.engine.hypotheses() {
            let mut w = create(&format!("hypotheses/hyp_{:05}.g2o", h.id))?;
            g2o::write_trajectory(&mut w, &h.trajectory)?;
            finish(w)?;
        }

        let mut w = create("ground_truth.g2o")?;
        g2o::write_trajectory(&mut w, &self.world.ground_truth)?;
        finish(w)?;

        let odo_graph = PoseGraph::from_odometry(&self.odometry, self.world.ground_truth[0], odometry_information(&self.config));
        let mut w = create("odometry.g2o")?;
        g2o::write_graph(&mut w, &odo_graph)?;
        finish(w)?;

        let mut w = create("final_trajectory.g2o")?;
        g2o::write_graph(&mut w, &self.final_graph)?;
        finish(w)?;

        let mut w = create("pr_curve.csv")?;
        evaluation::write_pr_csv(&mut w, &self.pr_curve())?;
        finish(w)?;

        let mut w = create("window_ratios.csv")?;
        evaluation::write_window_csv(&mut w, &self.window_ratios())?;
        finish(w)?;

        let mut w = create("guided_vs_uniform.csv")?;
        evaluation::write_trial_csv(&mut w, &self.trial())?;
        finish(w)?;

        if write_consistency {
            let mut w = create("consistency.csv")?;
            self.consistency.write_csv(&mut w)?;
            finish(w)?;
        }

        let summary = self.summary();
        let mut w = create("summary.txt")?;
        write_summary_kv(&mut w, &summary)?;
        finish(w)?;
        Ok(summary)
    }
}

fn write_summary_kv<W: Write>(w: &mut W, s: &RunSummary) -> io::Result<()> {
    writeln!(w, "mix = {}", s.mix)?;
    writeln!(w, "n_constraints = {}", s.n_constraints)?;
    writeln!(w, "n_hypotheses = {}", s.n_hypotheses)?;
    writeln!(w, "n_verifications = {}", s.n_verifications)?;
    writeln!(w, "n_matched = {}", s.n_matched)?;
    writeln!(w, "n_correct_matched = {}", s.n_correct_matched)?;
    writeln!(w, "n_fallbacks = {}", s.n_fallbacks)?;
    writeln!(w, "pr_area = {}", s.pr_area)?;
    writeln!(w, "success_ratio = {}", s.success_ratio)?;
    writeln!(w, "dead_reckoning_rmse = {}", s.dead_reckoning_rmse)?;
    writeln!(w, "final_rmse = {}", s.final_rmse)?;
    writeln!(w, "final_converged = {}", s.final_converged)?;
    writeln!(w, "consistency_bytes = {}", s.consistency_bytes)
}

/// Simulates and writes all artifacts.
pub fn run(config: &ExperimentConfig, out: &Path, write_consistency: bool) -> anyhow::Result<RunSummary> {
    let state = simulate(config)?;
    state.write_artifacts(out, write_consistency)
}

/// One mix of a sweep: `<constraint ratio>` or `<constraint>@<hypothesis>`.
pub fn parse_mix_item(item: &str, base: &ExperimentConfig) -> anyhow::Result<ExperimentConfig> {
    let mut c = base.clone();
    let item = item.trim();
    let (cm, hm) = match item.split_once('@') {
        Some((a, b)) => (a, Some(b)),
        None => (item, None),
    };
    c.constraint_mix = cm.parse().with_context(|| format!("mix {item:?}"))?;
    if let Some(hm) = hm {
        c.hypothesis_mix = hm.parse().with_context(|| format!("mix {item:?}"))?;
    }
    Ok(c)
}

pub fn parse_mix_list(list: &str, base: &ExperimentConfig) -> anyhow::Result<Vec<ExperimentConfig>> {
    let items: Vec<&str> = list.split(',').filter(|s| !s.trim().is_empty()).collect();
    anyhow::ensure!(!items.is_empty(), "mix list is empty");
    items.iter().map(|m| parse_mix_item(m, base)).collect()
}

/// Directory name for a mix label.
pub fn mix_dir(label: &str) -> String {
    label.replace(':', "-").replace('@', "_")
}

/// Runs every mix on the same world and writes `summary.csv` in mix order.
pub fn sweep(configs: &[ExperimentConfig], out: &Path, threads: usize) -> anyhow::Result<Vec<RunSummary>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let dirs: Vec<PathBuf> = configs.iter().map(|c| out.join(mix_dir(&c.mix_label()))).collect();
    let summaries: Vec<RunSummary> = pool.install(|| {
        configs
            .par_iter()
            .zip(&dirs)
            .map(|(c, d)| run(c, d, false))
            .collect::<anyhow::Result<_>>()
    })?;
    let mut w = BufWriter::new(File::create(out.join("summary.csv"))?);
    write_sweep_csv(&mut w, &summaries)?;
    w.flush()?;
    Ok(summaries)
}

pub fn write_sweep_csv<W: Write>(w: &mut W, rows: &[RunSummary]) -> io::Result<()> {
    writeln!(w, "mix,pr_area,success_ratio,n_verifications,n_matched,n_correct_matched,n_fallbacks,final_rmse")?;
    for s in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.mix, s.pr_area, s.success_ratio, s.n_verifications, s.n_matched, s.n_correct_matched, s.n_fallbacks, s.final_rmse
        )?;
    }
    Ok(())
}

/// NS-tagged records whose constraint is not a diagonal neighbour of an
/// earlier verdict-1 record. Empty for a correct run.
pub fn ns_locality_violations(ledger: &ConstraintLedger) -> Vec<usize> {
    let mut matched = std::collections::HashSet::new();
    let mut bad = Vec::new();
    for (k, r) in ledger.records().iter().enumerate() {
        let (i, j) = ledger.constraints()[r.constraint_id].pair;
        if r.strategy_tag == StrategyTag::Ns {
            let ok = crate::sampler::diagonal_neighbors((i, j)).any(|p| matched.contains(&p));
            if !ok {
                bad.push(k);
            }
        }
        if r.verdict {
            matched.insert((i, j));
        }
    }
    bad
}
