#![allow(dead_code)]

use guided_loop_closure::config::ExperimentConfig;
use guided_loop_closure::ledger::LoopConstraint;
use guided_loop_closure::runner::RunState;
use guided_loop_closure::sampler::Ratio;
use guided_loop_closure::world::CourseKind;

/// Short campus run with every strategy active; revisits begin near t=960.
pub fn small_campus(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        course: CourseKind::CampusMultiLoop,
        length: 1500,
        constraint_mix: "1:1:2".parse::<Ratio>().unwrap(),
        hypothesis_mix: "1:1:1".parse::<Ratio>().unwrap(),
        trial_rounds: 50,
        seed,
        ..ExperimentConfig::default()
    }
}

pub fn small_loop(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        course: CourseKind::Loop,
        length: 900,
        constraint_mix: "1:1:1".parse::<Ratio>().unwrap(),
        hypothesis_mix: "0:1:1".parse::<Ratio>().unwrap(),
        trial_rounds: 50,
        seed,
        ..ExperimentConfig::default()
    }
}

pub fn constraint(state: &RunState, id: usize) -> &LoopConstraint {
    &state.ledger.constraints()[id]
}
