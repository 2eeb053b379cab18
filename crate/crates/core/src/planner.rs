//! Exact planning in a known tabular model with a bounded effective reward.
//!
//! The learned models here are small explicit tensors, so Bellman-optimality
//! iteration to a residual threshold is both simpler and more accurate than
//! regression-based planning; the low-rank structure of the model enters only
//! through how the tensor was induced.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{sa_index, Factorization, Policy, TransitionTensor};

/// Largest admissible magnitude of an effective reward entry: base reward at
/// most 1 plus a bonus/penalty clamped at 2.
pub const EFFECTIVE_REWARD_BOUND: f64 = 3.0;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// A planning instance over an explicit tensor.
#[derive(Debug, Clone)]
pub struct PlanningProblem<'a> {
    transition: &'a TransitionTensor,
    reward_effective: &'a DMatrix<f64>,
    gamma: f64,
    tolerance: f64,
}

impl<'a> PlanningProblem<'a> {
    pub fn new(
        transition: &'a TransitionTensor,
        reward_effective: &'a DMatrix<f64>,
        gamma: f64,
        tolerance: f64,
    ) -> Result<Self> {
        if reward_effective.nrows() != transition.num_states()
            || reward_effective.ncols() != transition.num_actions()
        {
            return Err(Error::ShapeMismatch {
                context: "planning reward",
                expected: format!(
                    "{}x{}",
                    transition.num_states(),
                    transition.num_actions()
                ),
                actual: format!(
                    "{}x{}",
                    reward_effective.nrows(),
                    reward_effective.ncols()
                ),
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidConfig(format!("gamma {gamma} not in [0,1)")));
        }
        if tolerance <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tolerance {tolerance} must be positive"
            )));
        }
        let max_abs = reward_effective.amax();
        if max_abs > EFFECTIVE_REWARD_BOUND {
            return Err(Error::InvalidConfig(format!(
                "effective reward magnitude {max_abs} exceeds {EFFECTIVE_REWARD_BOUND}"
            )));
        }
        Ok(PlanningProblem {
            transition,
            reward_effective,
            gamma,
            tolerance,
        })
    }
}

/// Output of value iteration.
#[derive(Debug, Clone)]
pub struct ViSolution {
    pub v: DVector<f64>,
    pub q: DMatrix<f64>,
    /// Greedy deterministic policy; argmax ties break to the lowest action.
    pub policy: Policy,
    pub iterations: usize,
}

/// Bellman-optimality iteration until the sup-norm residual drops below
/// `tolerance * (1-gamma) / (2*gamma)`, which guarantees the returned value
/// function is within `tolerance` of optimal. The successive residuals must
/// contract by `gamma`; failing either bound is a bug, not an input error.
pub fn value_iteration(problem: &PlanningProblem<'_>) -> Result<ViSolution> {
    let p = problem.transition;
    let r = problem.reward_effective;
    let gamma = problem.gamma;
    let n = p.num_states();
    let num_actions = p.num_actions();

    let threshold = if gamma == 0.0 {
        f64::INFINITY
    } else {
        problem.tolerance * (1.0 - gamma) / (2.0 * gamma)
    };
    let max_iterations =
        (10.0 * (1.0 / problem.tolerance).ln() / (1.0 - gamma) + 100.0).ceil() as usize;

    let mut v = DVector::<f64>::zeros(n);
    let mut q = DMatrix::<f64>::zeros(n, num_actions);
    let mut prev_residual = f64::INFINITY;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut residual = 0.0f64;
        let mut v_next = DVector::<f64>::zeros(n);
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..num_actions {
                let row = p.rows().row(sa_index(s, a, num_actions));
                let mut next = 0.0;
                for s_next in 0..n {
                    next += row[s_next] * v[s_next];
                }
                let value = r[(s, a)] + gamma * next;
                q[(s, a)] = value;
                if value > best {
                    best = value;
                }
            }
            v_next[s] = best;
            residual = residual.max((best - v[s]).abs());
        }
        v = v_next;

        // Contraction sanity: sup-norm residuals decay geometrically.
        debug_assert!(
            iterations == 1 || residual <= gamma * prev_residual + 1e-12,
            "residual {residual} exceeds gamma * {prev_residual}"
        );
        prev_residual = residual;

        if residual <= threshold {
            break;
        }
        if iterations >= max_iterations {
            return Err(Error::NonConvergence {
                max_iterations,
                residual,
            });
        }
    }

    let mut greedy = Vec::with_capacity(n);
    for s in 0..n {
        let mut best_a = 0;
        let mut best = f64::NEG_INFINITY;
        for a in 0..num_actions {
            if q[(s, a)] > best {
                best = q[(s, a)];
                best_a = a;
            }
        }
        greedy.push(best_a);
    }
    let policy = Policy::deterministic(&greedy, num_actions)?;
    Ok(ViSolution {
        v,
        q,
        policy,
        iterations,
    })
}

/// Plan in a candidate model: induce its tensor, then run value iteration on
/// the effective reward. Returns the greedy deterministic policy.
pub fn plan(
    model: &Factorization,
    reward_effective: &DMatrix<f64>,
    gamma: f64,
    tolerance: f64,
) -> Result<Policy> {
    let tensor = model.induced_transition()?;
    let problem = PlanningProblem::new(&tensor, reward_effective, gamma, tolerance)?;
    Ok(value_iteration(&problem)?.policy)
}
