//! Seeded invariant sweeps, runnable from the CLI (`check-invariants`).
//!
//! Each suite draws fresh random instances per seed and checks the core
//! identities at their stated tolerances, reporting one line per check.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{
    initial_value, occupancy, sample_triple, simulation_gap, value_of_policy, GapForm, Policy,
};
use crate::models::{expected_sq_tv, mle_fit, Provenance, TransitionDataset};
use crate::rep_lcb::{feature_second_moment, relative_condition_number, CoverageValue};
use crate::rep_ucb::{run_rep_ucb, schedules, UcbConfig};

use super::envs::{make_latent_variable_env, EnvSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    Core,
    Mle,
    Ucb,
    Lcb,
}

impl std::str::FromStr for SuiteKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "core" => Ok(SuiteKind::Core),
            "mle" => Ok(SuiteKind::Mle),
            "ucb" => Ok(SuiteKind::Ucb),
            "lcb" => Ok(SuiteKind::Lcb),
            other => Err(format!("unknown suite {other:?} (core|mle|ucb|lcb)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed magnitude or a short explanation.
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: SuiteKind,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_suite(kind: SuiteKind, seeds: u64) -> Result<SuiteReport> {
    let checks = match kind {
        SuiteKind::Core => core_suite(seeds)?,
        SuiteKind::Mle => mle_suite(seeds)?,
        SuiteKind::Ucb => ucb_suite(seeds)?,
        SuiteKind::Lcb => lcb_suite(seeds)?,
    };
    Ok(SuiteReport {
        suite: kind,
        checks,
    })
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn random_env(seed: u64) -> Result<super::envs::GeneratedEnv> {
    let mut spec = EnvSpec::latent(6, 3, 3, 0.9, 4, seed);
    spec.concentration = 0.5;
    make_latent_variable_env(&spec)
}

fn core_suite(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut worst_flow: f64 = 0.0;
    let mut worst_duality: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut all_valid = true;
    for seed in 0..seeds {
        let generated = random_env(seed)?;
        let env = &generated.env;
        all_valid &= env.validate().is_valid();
        let truth = env.factorization().induced_transition()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0fe);
        let policy = random_policy(env.num_states(), env.num_actions(), &mut rng);
        let occ = occupancy(&truth, &policy, env.init_dist(), env.gamma())?;

        let marginal = occ.state_marginal();
        for s in 0..env.num_states() {
            let mut inflow = 0.0;
            for s_prev in 0..env.num_states() {
                for a in 0..env.num_actions() {
                    inflow += truth.prob(s_prev, a, s) * occ.prob(s_prev, a);
                }
            }
            let residual = marginal[s]
                - (1.0 - env.gamma()) * env.init_dist()[s]
                - env.gamma() * inflow;
            worst_flow = worst_flow.max(residual.abs());
        }

        let (v, _) = value_of_policy(&truth, env.reward(), &policy, env.gamma())?;
        let duality = (occ.expectation(env.reward()) / (1.0 - env.gamma())
            - initial_value(&v, env.init_dist()))
        .abs();
        worst_duality = worst_duality.max(duality);

        // Simulation identity against a perturbed model.
        let other = random_env(seed + 10_000)?;
        let p_model = other.env.factorization().induced_transition()?;
        let bonus =
            DMatrix::from_fn(env.num_states(), env.num_actions(), |_, _| rng.random::<f64>());
        let augmented = env.reward() + &bonus;
        let (vm, _) = value_of_policy(&p_model, &augmented, &policy, env.gamma())?;
        let (vr, _) = value_of_policy(&truth, env.reward(), &policy, env.gamma())?;
        let direct = initial_value(&vm, env.init_dist()) - initial_value(&vr, env.init_dist());
        for form in [GapForm::First, GapForm::Second] {
            let gap = simulation_gap(
                &p_model,
                &truth,
                env.reward(),
                &bonus,
                &policy,
                env.init_dist(),
                env.gamma(),
                form,
            )?;
            worst_gap = worst_gap.max((gap - direct).abs());
        }
    }
    Ok(vec![
        check("environments validate", all_valid, String::new()),
        check(
            "occupancy flow residual <= 1e-10",
            worst_flow <= 1e-10,
            format!("worst {worst_flow:.3e}"),
        ),
        check(
            "value/occupancy duality <= 1e-9",
            worst_duality <= 1e-9,
            format!("worst {worst_duality:.3e}"),
        ),
        check(
            "simulation identity <= 1e-10",
            worst_gap <= 1e-10,
            format!("worst {worst_gap:.3e}"),
        ),
    ])
}

fn mle_suite(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut realizable = true;
    let mut deterministic = true;
    let mut in_range = true;
    let mut worst_sq_tv: f64 = 0.0;
    for seed in 0..seeds {
        let generated = random_env(seed)?;
        let env = &generated.env;
        let class = &generated.class;
        let truth = env.factorization().induced_transition()?;
        let idx = class.true_index().unwrap();
        let uniform = Policy::uniform(env.num_states(), env.num_actions());
        let occ = occupancy(&truth, &uniform, env.init_dist(), env.gamma())?;
        let candidate = class.candidate(idx).induced_transition()?;
        realizable &= expected_sq_tv(&candidate, &truth, &occ)? == 0.0;

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
        let mut data = TransitionDataset::new(Provenance::Online);
        for _ in 0..200 {
            let (t, _) = sample_triple(&truth, &uniform, env.init_dist(), env.gamma(), &mut rng);
            data.push(t);
        }
        let (first, _) = mle_fit(class, &data)?;
        let (second, _) = mle_fit(class, &data)?;
        deterministic &= first == second;

        for candidate in class.candidates() {
            let tensor = candidate.induced_transition()?;
            let sq = expected_sq_tv(&tensor, &truth, &occ)?;
            worst_sq_tv = worst_sq_tv.max(sq);
            in_range &= (0.0..=4.0).contains(&sq);
        }
    }
    Ok(vec![
        check("true candidate reproduces the kernel", realizable, String::new()),
        check("mle_fit is deterministic", deterministic, String::new()),
        check(
            "expected_sq_tv within [0,4]",
            in_range,
            format!("worst {worst_sq_tv:.3}"),
        ),
    ])
}

fn ucb_suite(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut one_triple = true;
    let mut bonus_in_range = true;
    let mut schedule_monotone = true;
    for seed in 0..seeds {
        let generated = random_env(seed)?;
        let cfg = UcbConfig::new(30, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let run = run_rep_ucb(&generated.env, &generated.class, &cfg, &mut rng)?;
        one_triple &= run.dataset.len() == cfg.episodes
            && run.diagnostics.records.len() == cfg.episodes;
        for rec in &run.diagnostics.records {
            bonus_in_range &= rec.bonus_mean >= 0.0 && rec.bonus_mean <= cfg.bonus_clamp;
        }
        let mut prev = (0.0f64, 0.0f64);
        for n in 1..=50 {
            let cur = schedules(n, 3, 3, 4, 0.1, 0.9, 1.0, 1.0);
            if n > 1 {
                schedule_monotone &= cur.0 >= prev.0 && cur.1 >= prev.1;
            }
            prev = cur;
        }
    }
    Ok(vec![
        check("one triple per episode", one_triple, String::new()),
        check("bonus within [0, clamp]", bonus_in_range, String::new()),
        check("schedules nondecreasing in n", schedule_monotone, String::new()),
    ])
}

fn lcb_suite(seeds: u64) -> Result<Vec<CheckResult>> {
    let mut rcn_self = true;
    let mut worst_self: f64 = 0.0;
    let mut psd_ok = true;
    let mut worst_psd: f64 = 0.0;
    for seed in 0..seeds {
        let generated = random_env(seed)?;
        let env = &generated.env;
        let truth = env.factorization().induced_transition()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead);
        for _ in 0..5 {
            let pi = random_policy(env.num_states(), env.num_actions(), &mut rng);
            let occ = occupancy(&truth, &pi, env.init_dist(), env.gamma())?;
            match relative_condition_number(&occ, &occ, env.factorization().phi()) {
                CoverageValue::Finite(v) => {
                    worst_self = worst_self.max((v - 1.0).abs());
                    rcn_self &= (v - 1.0).abs() <= 1e-9;
                }
                CoverageValue::Infinite => rcn_self = false,
            }

            let pib = random_policy(env.num_states(), env.num_actions(), &mut rng);
            let rho = occupancy(&truth, &pib, env.init_dist(), env.gamma())?;
            if let CoverageValue::Finite(c) =
                relative_condition_number(&occ, &rho, env.factorization().phi())
            {
                let a = feature_second_moment(&occ, env.factorization().phi());
                let b = feature_second_moment(&rho, env.factorization().phi());
                let min_eig = (&b * c - &a).symmetric_eigenvalues().min();
                worst_psd = worst_psd.min(min_eig);
                psd_ok &= min_eig >= -1e-9;
            }
        }
    }
    Ok(vec![
        check(
            "rcn against own occupancy is 1 +/- 1e-9",
            rcn_self,
            format!("worst |rcn-1| {worst_self:.3e}"),
        ),
        check(
            "coverage shift matrix is PSD within 1e-9",
            psd_ok,
            format!("worst min eigenvalue {worst_psd:.3e}"),
        ),
    ])
}

fn random_policy(num_states: usize, num_actions: usize, rng: &mut ChaCha8Rng) -> Policy {
    let mut probs = DMatrix::zeros(num_states, num_actions);
    for s in 0..num_states {
        let mut row: Vec<f64> = (0..num_actions).map(|_| -(rng.random::<f64>()).ln()).collect();
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= sum);
        for (a, x) in row.into_iter().enumerate() {
            probs[(s, a)] = x;
        }
    }
    Policy::from_matrix(probs).unwrap()
}
