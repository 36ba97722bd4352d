mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::process::Command;

use guided_loop_closure::config::ExperimentConfig;
use guided_loop_closure::consistency::ConsistencyMatrix;
use guided_loop_closure::evaluation::{
    guided_vs_uniform_trial, per_window_ratios, pr_area, pr_from_rows, write_pr_csv, write_trial_csv, write_window_csv, RecallBase,
};
use guided_loop_closure::g2o;
use guided_loop_closure::hypothesis::TrajectoryHypothesis;
use guided_loop_closure::ledger::{read_csv, ConstraintLedger};
use guided_loop_closure::pose_graph::position_rmse;
use guided_loop_closure::rng::{derive_seed, purpose};
use guided_loop_closure::runner;
use guided_loop_closure::world::{RetrievalCandidate, WorldModel};

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["", "hypotheses"] {
        for entry in fs::read_dir(dir.join(sub)).unwrap() {
            let p = entry.unwrap().path();
            if p.is_file() {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn summary_kv(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn repeated_runs_are_bit_identical() {
    let config = common::small_loop(11);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    runner::run(&config, a.path(), true).unwrap();
    runner::run(&config, b.path(), true).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.len() > 10);
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ta {
        assert!(bytes == &tb[name], "{name} differs");
    }
}

/// Recomputes every evaluation output from the files of a run directory,
/// without access to the in-memory state.
#[test]
fn metrics_are_recomputable_from_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    runner::run(&common::small_campus(12), dir, false).unwrap();

    let config = ExperimentConfig::parse(&read(dir, "config.txt")).unwrap();
    let truth = g2o::parse(&read(dir, "ground_truth.g2o")).unwrap().trajectory().unwrap();
    let world = WorldModel::from_parts(config.course, truth.clone(), Vec::new(), config.seed, runner::world_params(&config));

    let mut by_query: BTreeMap<usize, Vec<RetrievalCandidate>> = BTreeMap::new();
    for line in read(dir, "candidates.txt").lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(f[0], "CAND");
        by_query.entry(f[1].parse().unwrap()).or_default().push(RetrievalCandidate {
            query: f[1].parse().unwrap(),
            matched: f[2].parse().unwrap(),
            score: f[3].parse().unwrap(),
        });
    }
    let rows = read_csv(BufReader::new(fs::File::open(dir.join("ledger.csv")).unwrap())).unwrap();
    let mut ledger = ConstraintLedger::new();
    let mut next = 0;
    for t in 1..truth.len() {
        ledger.ingest(t, by_query.get(&t).map_or(&[][..], Vec::as_slice)).unwrap();
        while next < rows.len() && rows[next].executed_at == t {
            let r = &rows[next];
            assert_eq!(ledger.constraints()[r.constraint_id].pair, (r.i, r.j));
            let rec = ledger.record_verification(r.constraint_id, r.oracle_score, config.threshold, r.strategy).unwrap();
            assert_eq!(rec.verdict, r.verdict);
            next += 1;
        }
    }
    assert_eq!(next, rows.len());

    let pr = pr_from_rows(&world, &rows, RecallBase::new(&world, &ledger), &config.thresholds);
    let mut text = Vec::new();
    write_pr_csv(&mut text, &pr).unwrap();
    assert_eq!(String::from_utf8(text).unwrap(), read(dir, "pr_curve.csv"));

    let mut text = Vec::new();
    write_window_csv(&mut text, &per_window_ratios(&ledger, &world, config.window)).unwrap();
    assert_eq!(String::from_utf8(text).unwrap(), read(dir, "window_ratios.csv"));

    let mut hypotheses = Vec::new();
    for line in read(dir, "hypotheses.csv").lines().skip(1) {
        let f: Vec<u64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let path = format!("hypotheses/hyp_{:05}.g2o", f[0]);
        hypotheses.push(TrajectoryHypothesis {
            id: f[0] as usize,
            window_id: f[1] as usize,
            seed_constraint: f[2] as usize,
            trajectory: g2o::parse(&read(dir, &path)).unwrap().trajectory().unwrap(),
            times_sampled: f[3],
            importance_weight: f[4],
            converged: true,
        });
    }
    let consistency = ConsistencyMatrix::batch(config.consistency_threshold, ledger.constraints(), &hypotheses);
    let trial = guided_vs_uniform_trial(
        &world,
        &hypotheses,
        &ledger,
        &consistency,
        config.threshold,
        config.trial_rounds,
        derive_seed(config.seed, &[purpose::TRIAL]),
    );
    let mut text = Vec::new();
    write_trial_csv(&mut text, &trial).unwrap();
    assert_eq!(String::from_utf8(text).unwrap(), read(dir, "guided_vs_uniform.csv"));

    let summary = summary_kv(&read(dir, "summary.txt"));
    let correct = |r: &&guided_loop_closure::ledger::LedgerRow| world.is_correct_pair(r.i, r.j);
    let dead_reckoned = g2o::parse(&read(dir, "odometry.g2o")).unwrap().trajectory().unwrap();
    let final_poses = g2o::parse(&read(dir, "final_trajectory.g2o")).unwrap().trajectory().unwrap();
    let expect = [
        ("mix", config.mix_label()),
        ("n_constraints", ledger.len().to_string()),
        ("n_hypotheses", hypotheses.len().to_string()),
        ("n_verifications", rows.len().to_string()),
        ("n_matched", rows.iter().filter(|r| r.verdict).count().to_string()),
        ("n_correct_matched", rows.iter().filter(|r| r.verdict).filter(correct).count().to_string()),
        ("pr_area", pr_area(&pr).to_string()),
        ("success_ratio", (rows.iter().filter(correct).count() as f64 / rows.len() as f64).to_string()),
        ("dead_reckoning_rmse", position_rmse(&dead_reckoned, &truth).to_string()),
        ("final_rmse", position_rmse(&final_poses, &truth).to_string()),
    ];
    for (key, value) in expect {
        assert_eq!(summary[key], value, "{key}");
    }
}

#[test]
fn sweep_of_one_mix_matches_its_run() {
    let config = common::small_loop(13);
    let run_dir = tempfile::tempdir().unwrap();
    let sweep_dir = tempfile::tempdir().unwrap();
    let single = runner::run(&config, run_dir.path(), false).unwrap();
    let rows = runner::sweep(std::slice::from_ref(&config), sweep_dir.path(), 1).unwrap();
    assert_eq!(rows, vec![single]);
    let sub = sweep_dir.path().join(runner::mix_dir(&config.mix_label()));
    assert_eq!(read(&sub, "ledger.csv"), read(run_dir.path(), "ledger.csv"));
    let csv = read(sweep_dir.path(), "summary.csv");
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn sweep_is_independent_of_thread_count() {
    let base = common::small_loop(14);
    let configs = runner::parse_mix_list("1:0:0,0:1:1,0:0:1@0:1:0", &base).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let one = runner::sweep(&configs, a.path(), 1).unwrap();
    let three = runner::sweep(&configs, b.path(), 3).unwrap();
    assert_eq!(one, three);
    assert_eq!(read(a.path(), "summary.csv"), read(b.path(), "summary.csv"));
}

#[test]
fn cli_run_and_errors() {
    let exe = env!("CARGO_BIN_EXE_glc");
    let dir = tempfile::tempdir().unwrap();
    let mut config = common::small_loop(15);
    config.length = 300;
    config.triviality_cutoff = 20.0;
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, config.to_text()).unwrap();

    let out = dir.path().join("out");
    let status = Command::new(exe)
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "9"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let written = ExperimentConfig::parse(&read(&out, "config.txt")).unwrap();
    assert_eq!(written.seed, 9);

    let sweep_out = dir.path().join("sweep");
    let status = Command::new(exe)
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--mixes", "1:0:0,1:1:2@0:0:1", "--threads", "2", "--out"])
        .arg(&sweep_out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(sweep_out.join("1-0-0_0-1-1").join("ledger.csv").is_file());
    assert!(sweep_out.join("1-1-2_0-0-1").join("summary.txt").is_file());

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "window = ten\n").unwrap();
    let status = Command::new(exe).args(["run", "--config"]).arg(&bad).arg("--out").arg(&out).output().unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).starts_with("error:"));

    let status = Command::new(exe)
        .args(["run", "--config"])
        .arg(dir.path().join("missing.txt"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!status.status.success());
}
