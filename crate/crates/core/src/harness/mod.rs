//! Environment generators, decoy model classes, experiment orchestration,
//! baselines, and invariant sweep suites.

pub mod envs;
pub mod experiment;
pub mod invariants;

pub use envs::{
    generate_env, make_block_env, make_comblock_env, make_latent_variable_env,
    make_random_lowrank_env, EnvKind, EnvSpec, GeneratedEnv,
};
pub use experiment::{
    baseline_eps_greedy, run_experiment, AlgorithmSpec, BehaviorSpec, ExperimentSpec,
};
pub use invariants::{run_suite, SuiteKind, SuiteReport};
