//! Offline algorithm: one MLE fit on a static dataset, an elliptical reward
//! penalty on the learned feature, and pessimistic planning on `r - penalty`.
//!
//! Offline data is drawn from a behavior policy's discounted occupancy, with
//! actions from the behavior policy itself (unlike the online loop's uniform
//! logged actions). Coverage of a comparator policy is measured by the
//! relative condition number of feature second moments under the true
//! representation; the behavior policy's worst-case inverse action
//! probability omega replaces the action count in the penalty scale.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    initial_value, occupancy, sa_index, sample_rollin, value_of_policy, Factorization,
    LowRankMdp, OccupancyMeasure, Policy, Transition,
};
use crate::models::{mle_fit, ModelClass, Provenance, TransitionDataset};
use crate::planner::{value_iteration, PlanningProblem};
use crate::rep_ucb::{empirical_covariance, BonusModel};

/// Eigenvalues of the coverage matrix at or below this threshold are treated
/// as its null space.
pub const NULL_SPACE_EIG_TOL: f64 = 1e-12;
/// Comparator mass on the null space above this threshold makes the relative
/// condition number unbounded.
pub const NULL_SPACE_MASS_TOL: f64 = 1e-10;

/// A possibly-unbounded coverage quantity. The unbounded case is an explicit
/// tag; float infinities never enter the linear algebra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageValue {
    Finite(f64),
    Infinite,
}

impl CoverageValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, CoverageValue::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            CoverageValue::Finite(x) => Some(*x),
            CoverageValue::Infinite => None,
        }
    }
}

impl std::fmt::Display for CoverageValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CoverageValue::Finite(x) => write!(f, "{x}"),
            CoverageValue::Infinite => write!(f, "inf"),
        }
    }
}

/// Offline run parameters. `n` is the dataset size the harness draws; the
/// penalty scale itself only depends on the class size and `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineSpec {
    pub behavior: Policy,
    pub n: usize,
    pub delta: f64,
    pub c_alpha: f64,
    pub c_lambda: f64,
    pub clamp: f64,
    pub seed: u64,
}

impl OfflineSpec {
    pub fn new(behavior: Policy, n: usize, seed: u64) -> Self {
        OfflineSpec {
            behavior,
            n,
            delta: 0.1,
            c_alpha: 1.0,
            c_lambda: 1.0,
            clamp: 2.0,
            seed,
        }
    }
}

/// Worst-case inverse action probability of the behavior policy:
/// `max_{s,a} 1/pi_b(a|s)`, unbounded if any action has zero probability.
pub fn omega(behavior: &Policy) -> CoverageValue {
    let mut worst = 0.0f64;
    for s in 0..behavior.num_states() {
        for a in 0..behavior.num_actions() {
            let p = behavior.prob(s, a);
            if p <= 0.0 {
                return CoverageValue::Infinite;
            }
            worst = worst.max(1.0 / p);
        }
    }
    CoverageValue::Finite(worst)
}

/// Feature second moment `E_{(s,a)~dist}[phi(s,a) phi(s,a)^T]`.
pub fn feature_second_moment(dist: &OccupancyMeasure, phi: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = phi.ncols();
    let mut m = DMatrix::zeros(dim, dim);
    for s in 0..dist.num_states() {
        for a in 0..dist.num_actions() {
            let w = dist.prob(s, a);
            if w == 0.0 {
                continue;
            }
            let row = phi.row(sa_index(s, a, dist.num_actions()));
            for i in 0..dim {
                for j in 0..dim {
                    m[(i, j)] += w * row[i] * row[j];
                }
            }
        }
    }
    m
}

/// Largest generalized eigenvalue of the pencil `(A, B)` with
/// `A = E_{d_pi}[phi phi^T]` and `B = E_rho[phi phi^T]`, restricted to the
/// range of `B`. Comparator mass on `B`'s null space makes coverage
/// unbounded; a rank-deficient `B` is otherwise handled by projecting it out.
pub fn relative_condition_number(
    d_pi: &OccupancyMeasure,
    rho: &OccupancyMeasure,
    phi_star: &DMatrix<f64>,
) -> CoverageValue {
    let a = feature_second_moment(d_pi, phi_star);
    let b = feature_second_moment(rho, phi_star);
    generalized_rayleigh_sup(&a, &b)
}

fn generalized_rayleigh_sup(a: &DMatrix<f64>, b: &DMatrix<f64>) -> CoverageValue {
    let dim = b.nrows();
    let eigen = SymmetricEigen::new(b.clone());
    let mut range: Vec<usize> = Vec::new();
    let mut null: Vec<usize> = Vec::new();
    for i in 0..dim {
        if eigen.eigenvalues[i] > NULL_SPACE_EIG_TOL {
            range.push(i);
        } else {
            null.push(i);
        }
    }
    // Comparator mass on the null space.
    for &i in &null {
        let u = eigen.eigenvectors.column(i);
        let mass = (u.transpose() * a * u)[(0, 0)];
        if mass > NULL_SPACE_MASS_TOL {
            return CoverageValue::Infinite;
        }
    }
    if range.is_empty() {
        return CoverageValue::Finite(0.0);
    }
    // C = W^{-1/2} U^T A U W^{-1/2} on the range; its top eigenvalue is the
    // supremum of the generalized Rayleigh quotient there.
    let k = range.len();
    let mut basis = DMatrix::zeros(dim, k);
    for (j, &i) in range.iter().enumerate() {
        let scale = 1.0 / eigen.eigenvalues[i].sqrt();
        for r in 0..dim {
            basis[(r, j)] = eigen.eigenvectors[(r, i)] * scale;
        }
    }
    let c = basis.transpose() * a * basis;
    let top = SymmetricEigen::new(c).eigenvalues.max();
    CoverageValue::Finite(top.max(0.0))
}

/// True when every row of `phi` is a standard basis vector.
pub fn is_one_hot(phi: &DMatrix<f64>) -> bool {
    for r in 0..phi.nrows() {
        let mut hot = 0;
        for c in 0..phi.ncols() {
            let x = phi[(r, c)];
            if (x - 1.0).abs() <= 1e-12 {
                hot += 1;
            } else if x.abs() > 1e-12 {
                return false;
            }
        }
        if hot != 1 {
            return false;
        }
    }
    true
}

/// Brute-force density ratio for one-hot features: mass ratios over the
/// partition of pairs induced by the hot dimension (pairwise ratios when the
/// embedding separates pairs). Unbounded when comparator mass escapes the
/// support of `rho`.
pub fn tabular_density_ratio(
    d_pi: &OccupancyMeasure,
    rho: &OccupancyMeasure,
    phi_star: &DMatrix<f64>,
) -> CoverageValue {
    let dim = phi_star.ncols();
    let mut mass_pi = vec![0.0f64; dim];
    let mut mass_rho = vec![0.0f64; dim];
    for s in 0..d_pi.num_states() {
        for a in 0..d_pi.num_actions() {
            let row = phi_star.row(sa_index(s, a, d_pi.num_actions()));
            let z = (0..dim)
                .find(|&c| (row[c] - 1.0).abs() <= 1e-12)
                .expect("one-hot row");
            mass_pi[z] += d_pi.prob(s, a);
            mass_rho[z] += rho.prob(s, a);
        }
    }
    let mut worst = 0.0f64;
    for z in 0..dim {
        if mass_rho[z] > NULL_SPACE_EIG_TOL {
            worst = worst.max(mass_pi[z] / mass_rho[z]);
        } else if mass_pi[z] > NULL_SPACE_MASS_TOL {
            return CoverageValue::Infinite;
        }
    }
    CoverageValue::Finite(worst)
}

/// Partial-coverage summary of a comparator policy against offline data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub relative_condition_number: CoverageValue,
    pub omega: CoverageValue,
    /// Present only when the true feature is one-hot.
    pub tabular_density_ratio: Option<CoverageValue>,
}

/// Coverage of `policy` by `behavior`'s occupancy in `env`, measured under
/// the environment's true feature.
pub fn coverage_report(
    env: &LowRankMdp,
    policy: &Policy,
    behavior: &Policy,
) -> Result<CoverageReport> {
    let truth = env.factorization().induced_transition()?;
    let d_pi = occupancy(&truth, policy, env.init_dist(), env.gamma())?;
    let rho = occupancy(&truth, behavior, env.init_dist(), env.gamma())?;
    let phi_star = env.factorization().phi();
    let tabular = if is_one_hot(phi_star) {
        Some(tabular_density_ratio(&d_pi, &rho, phi_star))
    } else {
        None
    };
    Ok(CoverageReport {
        relative_condition_number: relative_condition_number(&d_pi, &rho, phi_star),
        omega: omega(behavior),
        tabular_density_ratio: tabular,
    })
}

/// Draw `n` i.i.d. triples with `(s,a)` from the behavior policy's discounted
/// occupancy (roll-in, then an action from the behavior policy) and `s'` from
/// the true kernel. Returns the dataset and the roll-in cap firing count.
pub fn generate_offline_dataset(
    env: &LowRankMdp,
    behavior: &Policy,
    n: usize,
    rng: &mut impl Rng,
) -> Result<(TransitionDataset, usize)> {
    if behavior.num_states() != env.num_states() || behavior.num_actions() != env.num_actions()
    {
        return Err(Error::ShapeMismatch {
            context: "behavior policy",
            expected: format!("{}x{}", env.num_states(), env.num_actions()),
            actual: format!("{}x{}", behavior.num_states(), behavior.num_actions()),
        });
    }
    let truth = env.factorization().induced_transition()?;
    let mut data = TransitionDataset::new(Provenance::Offline);
    let mut cap_firings = 0;
    for _ in 0..n {
        let rollin = sample_rollin(&truth, behavior, env.init_dist(), env.gamma(), None, rng);
        if rollin.capped {
            cap_firings += 1;
        }
        let a = behavior.sample_action(rollin.state, rng);
        let s_next = truth.sample_next(rollin.state, a, rng);
        data.push(Transition {
            s: rollin.state,
            a,
            s_next,
        });
    }
    Ok((data, cap_firings))
}

/// Result of one offline fit.
#[derive(Debug)]
pub struct LcbFit {
    pub policy: Policy,
    pub penalty_model: BonusModel,
    pub model_index: usize,
    pub alpha: f64,
    pub lambda: f64,
}

/// Fit the model by MLE, build the elliptical penalty
/// `min(alpha ||phi_hat||_{Sigma^-1}, clamp)` with
/// `alpha = c_alpha sqrt((omega + d^2) gamma ln(|M|/delta))` and
/// `lambda = c_lambda d ln(|M|/delta)`, then plan pessimistically on
/// `r - penalty`. Requires a bounded omega.
pub fn run_rep_lcb(
    data: &TransitionDataset,
    class: &ModelClass,
    reward: &DMatrix<f64>,
    gamma: f64,
    d0: &DVector<f64>,
    spec: &OfflineSpec,
) -> Result<LcbFit> {
    let omega_value = match omega(&spec.behavior) {
        CoverageValue::Finite(w) => w,
        CoverageValue::Infinite => return Err(Error::UnboundedOmega),
    };
    data.check_ranges(class.num_states(), class.num_actions())?;
    if d0.len() != class.num_states() {
        return Err(Error::ShapeMismatch {
            context: "offline d0",
            expected: class.num_states().to_string(),
            actual: d0.len().to_string(),
        });
    }
    let dim = class.dim();
    let log_term = (class.len() as f64 / spec.delta).ln();
    let lambda = spec.c_lambda * dim as f64 * log_term;
    let alpha =
        spec.c_alpha * ((omega_value + (dim * dim) as f64) * gamma * log_term).sqrt();

    let (model_index, fitted) = mle_fit(class, data)?;
    let sigma = empirical_covariance(fitted.phi(), class.num_actions(), data, lambda);
    let penalty = BonusModel::from_factorization(fitted, sigma, alpha, spec.clamp)?;
    let effective = reward - penalty.eval_table();
    let tensor = fitted.induced_transition()?;
    let problem = PlanningProblem::new(&tensor, &effective, gamma, 1e-8)?;
    let policy = value_iteration(&problem)?.policy;
    Ok(LcbFit {
        policy,
        penalty_model: penalty,
        model_index,
        alpha,
        lambda,
    })
}

/// `V^pi` inside the fitted penalty-discounted model minus the true value of
/// the same policy, both exact at the initial distribution. Almost-pessimism
/// says this rarely exceeds a small positive slack.
pub fn pessimism_margin(
    policy: &Policy,
    fitted: &Factorization,
    penalty: &BonusModel,
    env: &LowRankMdp,
) -> Result<f64> {
    let fitted_tensor = fitted.induced_transition()?;
    let effective = env.reward() - penalty.eval_table();
    let (v_model, _) = value_of_policy(&fitted_tensor, &effective, policy, env.gamma())?;
    let truth = env.factorization().induced_transition()?;
    let (v_true, _) = value_of_policy(&truth, env.reward(), policy, env.gamma())?;
    Ok(initial_value(&v_model, env.init_dist()) - initial_value(&v_true, env.init_dist()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::plan;
    use crate::test_util::{
        random_dense_factorization, random_policy, random_reward, tabular_factorization,
    };
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn omega_closed_forms() {
        let uniform = Policy::uniform(3, 4);
        assert_eq!(omega(&uniform), CoverageValue::Finite(4.0));

        let det = Policy::deterministic(&[0, 1, 0], 2).unwrap();
        assert_eq!(omega(&det), CoverageValue::Infinite);

        let mixed = Policy::from_matrix(DMatrix::from_row_slice(
            2,
            2,
            &[0.25, 0.75, 0.25, 0.75],
        ))
        .unwrap();
        assert_eq!(omega(&mixed), CoverageValue::Finite(4.0));
    }

    #[test]
    fn rcn_of_own_occupancy_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(401);
        for _ in 0..20 {
            let fact = random_dense_factorization(5, 3, 3, &mut rng);
            let truth = fact.induced_transition().unwrap();
            let policy = random_policy(5, 3, &mut rng);
            let d0 = DVector::from_element(5, 0.2);
            let occ = occupancy(&truth, &policy, &d0, 0.9).unwrap();
            let x = relative_condition_number(&occ, &occ, fact.phi());
            let v = x.finite().expect("finite");
            assert!((v - 1.0).abs() < 1e-9, "rcn {v}");
        }
    }

    #[test]
    fn rcn_of_diagonal_pencil() {
        // A = diag(1, 0), B = diag(0.5, 1): sup ratio = 2.
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0]));
        let v = generalized_rayleigh_sup(&a, &b).finite().unwrap();
        assert!((v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn rcn_detects_escape_from_support() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.7]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(generalized_rayleigh_sup(&a, &b), CoverageValue::Infinite);
    }

    /// Identity feature map: d = |S|*|A|, phi(s,a) = e_{(s,a)}. Any stochastic
    /// kernel embeds this way, and the rcn reduces to a pairwise density
    /// ratio.
    fn identity_feature_env(seed: u64) -> (LowRankMdp, Factorization) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let num_states = 4;
        let num_actions = 2;
        let base = random_dense_factorization(num_states, num_actions, 2, &mut rng);
        let kernel = base.induced_transition().unwrap();
        let dim = num_states * num_actions;
        // mu rows: mu(s')[(s,a)] = P(s'|s,a); phi = identity.
        let mut mu = DMatrix::zeros(num_states, dim);
        for s in 0..num_states {
            for a in 0..num_actions {
                for s_next in 0..num_states {
                    mu[(s_next, sa_index(s, a, num_actions))] = kernel.prob(s, a, s_next);
                }
            }
        }
        let phi = DMatrix::identity(dim, dim);
        let fact = Factorization::new(num_states, num_actions, dim, mu, phi).unwrap();
        let gamma = 0.85;
        let reward = random_reward(num_states, num_actions, gamma, &mut rng);
        let env = LowRankMdp::new(
            fact.clone(),
            reward,
            gamma,
            DVector::from_element(num_states, 0.25),
        )
        .unwrap();
        (env, fact)
    }

    #[test]
    fn tabular_rcn_equals_bruteforce_density_ratio() {
        for seed in 0..10 {
            let (env, fact) = identity_feature_env(500 + seed);
            assert!(fact.validate().is_valid());
            assert!(is_one_hot(fact.phi()));
            let truth = fact.induced_transition().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let pi = random_policy(4, 2, &mut rng);
            let pib = random_policy(4, 2, &mut rng);
            let d_pi = occupancy(&truth, &pi, env.init_dist(), env.gamma()).unwrap();
            let rho = occupancy(&truth, &pib, env.init_dist(), env.gamma()).unwrap();
            let rcn = relative_condition_number(&d_pi, &rho, fact.phi());
            // Independent brute force over pairs.
            let mut best = 0.0f64;
            for s in 0..4 {
                for a in 0..2 {
                    if rho.prob(s, a) > NULL_SPACE_EIG_TOL {
                        best = best.max(d_pi.prob(s, a) / rho.prob(s, a));
                    }
                }
            }
            let v = rcn.finite().expect("finite for positive policies");
            assert!((v - best).abs() < 1e-9, "{v} vs {best}");
        }
    }

    #[test]
    fn distribution_shift_psd_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(407);
        for _ in 0..20 {
            let fact = random_dense_factorization(5, 2, 3, &mut rng);
            let truth = fact.induced_transition().unwrap();
            let d0 = DVector::from_element(5, 0.2);
            let pi = random_policy(5, 2, &mut rng);
            let pib = random_policy(5, 2, &mut rng);
            let d_pi = occupancy(&truth, &pi, &d0, 0.9).unwrap();
            let rho = occupancy(&truth, &pib, &d0, 0.9).unwrap();
            let a = feature_second_moment(&d_pi, fact.phi());
            let b = feature_second_moment(&rho, fact.phi());
            if let CoverageValue::Finite(c) = relative_condition_number(&d_pi, &rho, fact.phi())
            {
                let gap = &b * c - &a;
                let min_eig = gap.symmetric_eigenvalues().min();
                assert!(min_eig >= -1e-9, "min eig {min_eig}");
            }
        }
    }

    #[test]
    fn mixing_comparator_into_coverage_never_raises_rcn() {
        let mut rng = ChaCha8Rng::seed_from_u64(409);
        for _ in 0..10 {
            let fact = random_dense_factorization(5, 3, 3, &mut rng);
            let truth = fact.induced_transition().unwrap();
            let d0 = DVector::from_element(5, 0.2);
            // Deterministic comparator against a broad behavior: coverage
            // starts above 1, where the mixture argument applies.
            let actions: Vec<usize> = (0..5).map(|_| (rng.random::<u32>() % 3) as usize).collect();
            let pi = Policy::deterministic(&actions, 3).unwrap();
            let pib = random_policy(5, 3, &mut rng);
            let d_pi = occupancy(&truth, &pi, &d0, 0.9).unwrap();
            let rho = occupancy(&truth, &pib, &d0, 0.9).unwrap();
            let first = relative_condition_number(&d_pi, &rho, fact.phi())
                .finite()
                .unwrap();
            if first < 1.0 {
                continue;
            }
            let mut prev = first;
            for k in 1..=5 {
                let beta = k as f64 * 0.2;
                let mixed = OccupancyMeasure::from_dist(
                    5,
                    3,
                    d_pi.dist() * beta + rho.dist() * (1.0 - beta),
                )
                .unwrap();
                let cur = relative_condition_number(&d_pi, &mixed, fact.phi())
                    .finite()
                    .unwrap();
                assert!(cur <= prev + 1e-9, "beta {beta}: {cur} > {prev}");
                prev = cur;
            }
        }
    }

    #[test]
    fn offline_dataset_law_and_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(411);
        let fact = random_dense_factorization(3, 2, 2, &mut rng);
        let reward = random_reward(3, 2, 0.6, &mut rng);
        let env = LowRankMdp::new(
            fact.clone(),
            reward,
            0.6,
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
        )
        .unwrap();
        let (empty, _) = generate_offline_dataset(&env, &Policy::uniform(3, 2), 0, &mut rng).unwrap();
        assert!(empty.is_empty());

        let behavior = random_policy(3, 2, &mut rng);
        let n = 100_000;
        let (data, _) = generate_offline_dataset(&env, &behavior, n, &mut rng).unwrap();
        assert_eq!(data.len(), n);
        assert_eq!(data.provenance(), Provenance::Offline);
        // Empirical (s,a) law within TV 0.02 of the exact occupancy (actions
        // from the behavior policy, not uniform).
        let truth = fact.induced_transition().unwrap();
        let occ = occupancy(&truth, &behavior, env.init_dist(), env.gamma()).unwrap();
        let mut counts = [0usize; 6];
        for t in data.triples() {
            counts[sa_index(t.s, t.a, 2)] += 1;
        }
        let mut tv = 0.0;
        for s in 0..3 {
            for a in 0..2 {
                tv += (counts[sa_index(s, a, 2)] as f64 / n as f64 - occ.prob(s, a)).abs();
            }
        }
        tv /= 2.0;
        assert!(tv < 0.02, "TV {tv}");
    }

    #[test]
    fn single_state_env_yields_constant_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(413);
        let fact = random_dense_factorization(1, 3, 1, &mut rng);
        let reward = random_reward(1, 3, 0.5, &mut rng);
        let env =
            LowRankMdp::new(fact, reward, 0.5, DVector::from_vec(vec![1.0])).unwrap();
        let (data, _) =
            generate_offline_dataset(&env, &Policy::uniform(1, 3), 200, &mut rng).unwrap();
        assert!(data.triples().iter().all(|t| t.s == 0 && t.s_next == 0));
    }

    #[test]
    fn truth_class_zero_penalty_recovers_optimal_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(417);
        let fact = random_dense_factorization(4, 2, 2, &mut rng);
        let gamma = 0.8;
        let reward = random_reward(4, 2, gamma, &mut rng);
        let env = LowRankMdp::new(
            fact.clone(),
            reward.clone(),
            gamma,
            DVector::from_element(4, 0.25),
        )
        .unwrap();
        let class = ModelClass::new(vec![fact.clone()], Some(0)).unwrap();
        let behavior = Policy::uniform(4, 2);
        let (data, _) = generate_offline_dataset(&env, &behavior, 50, &mut rng).unwrap();
        let mut spec = OfflineSpec::new(behavior, 50, 0);
        spec.c_alpha = 0.0;
        let fit = run_rep_lcb(&data, &class, &reward, gamma, env.init_dist(), &spec).unwrap();
        let optimal = plan(&fact, &reward, gamma, 1e-8).unwrap();
        assert_eq!(fit.policy.probs(), optimal.probs());
    }

    #[test]
    fn saturated_penalty_is_constant_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(419);
        let fact = random_dense_factorization(4, 2, 2, &mut rng);
        let gamma = 0.8;
        let reward = random_reward(4, 2, gamma, &mut rng);
        let env = LowRankMdp::new(
            fact.clone(),
            reward.clone(),
            gamma,
            DVector::from_element(4, 0.25),
        )
        .unwrap();
        let class = ModelClass::new(vec![fact.clone()], Some(0)).unwrap();
        let behavior = Policy::uniform(4, 2);
        let (data, _) = generate_offline_dataset(&env, &behavior, 30, &mut rng).unwrap();
        let mut spec = OfflineSpec::new(behavior, 30, 0);
        spec.c_alpha = 1e9; // penalty saturates at the clamp everywhere
        let fit = run_rep_lcb(&data, &class, &reward, gamma, env.init_dist(), &spec).unwrap();
        let table = fit.penalty_model.eval_table();
        assert!(table.iter().all(|&b| (b - 2.0).abs() < 1e-12));
        let optimal = plan(&fact, &reward, gamma, 1e-8).unwrap();
        assert_eq!(fit.policy.probs(), optimal.probs());
    }

    #[test]
    fn deterministic_behavior_is_a_configuration_error() {
        let fact = tabular_factorization(&[1, 0, 0, 1], 2, 2);
        let reward = DMatrix::from_element(2, 2, 0.1);
        let d0 = DVector::from_vec(vec![1.0, 0.0]);
        let class = ModelClass::new(vec![fact], Some(0)).unwrap();
        let behavior = Policy::deterministic(&[0, 0], 2).unwrap();
        let data = TransitionDataset::new(Provenance::Offline);
        let spec = OfflineSpec::new(behavior, 0, 0);
        let err = run_rep_lcb(&data, &class, &reward, 0.5, &d0, &spec).unwrap_err();
        assert!(matches!(err, Error::UnboundedOmega));
    }

    #[test]
    fn pessimism_margin_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(421);
        let fact = random_dense_factorization(4, 2, 2, &mut rng);
        let gamma = 0.75;
        let reward = random_reward(4, 2, gamma, &mut rng);
        let env =
            LowRankMdp::new(fact.clone(), reward, gamma, DVector::from_element(4, 0.25)).unwrap();
        let policy = random_policy(4, 2, &mut rng);

        let sigma = DMatrix::identity(2, 2);
        let zero = BonusModel::from_factorization(&fact, sigma.clone(), 0.0, 2.0).unwrap();
        let m = pessimism_margin(&policy, &fact, &zero, &env).unwrap();
        assert!(m.abs() < 1e-12);

        // Exact model with any nonnegative penalty: margin <= 0.
        let penalty = BonusModel::from_factorization(&fact, sigma, 3.0, 2.0).unwrap();
        let m = pessimism_margin(&policy, &fact, &penalty, &env).unwrap();
        assert!(m <= 1e-12, "margin {m}");
    }

    #[test]
    fn coverage_report_includes_tabular_ratio_only_for_one_hot() {
        let (env, fact) = identity_feature_env(601);
        let mut rng = ChaCha8Rng::seed_from_u64(601);
        let pi = random_policy(4, 2, &mut rng);
        let pib = random_policy(4, 2, &mut rng);
        let report = coverage_report(&env, &pi, &pib).unwrap();
        let ratio = report.tabular_density_ratio.expect("one-hot feature");
        assert!(
            (report.relative_condition_number.finite().unwrap() - ratio.finite().unwrap()).abs()
                < 1e-9
        );
        assert!(is_one_hot(fact.phi()));

        let dense = random_dense_factorization(4, 2, 2, &mut rng);
        let reward = random_reward(4, 2, 0.85, &mut rng);
        let env2 =
            LowRankMdp::new(dense, reward, 0.85, DVector::from_element(4, 0.25)).unwrap();
        let report2 = coverage_report(&env2, &pi, &pib).unwrap();
        assert!(report2.tabular_density_ratio.is_none());
    }
}
