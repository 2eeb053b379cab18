//! Online loop: roll-in data collection, per-episode MLE refit, elliptical
//! exploration bonus on the learned feature, and optimistic planning.
//!
//! Each episode collects exactly one triple `(s, a, s')` with `s` drawn from
//! the discounted occupancy of the previous policy, `a` uniform, and `s'` from
//! the true kernel. The fitted model changes every episode, so the bonus
//! covariance is rebuilt from scratch on the current learned feature; the
//! diagnostics instead track the fixed ground-truth feature, which is what the
//! elliptical potential argument needs.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    initial_value, occupancy, sa_index, sample_triple, value_of_policy, Factorization,
    LowRankMdp, OccupancyMeasure, Policy, TransitionTensor,
};
use crate::models::{expected_sq_tv, ModelClass, Provenance, TransitionDataset, LIKELIHOOD_FLOOR};
use crate::planner::{value_iteration, PlanningProblem};

/// Run parameters. `c_alpha` and `c_lambda` scale the theoretical schedules;
/// the defaults of 1.0 are theory-faithful and per-benchmark tunings are
/// recorded in run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcbConfig {
    pub episodes: usize,
    pub delta: f64,
    pub c_alpha: f64,
    pub c_lambda: f64,
    pub bonus_clamp: f64,
    pub planner_tolerance: f64,
    pub seed: u64,
}

impl UcbConfig {
    pub fn new(episodes: usize, seed: u64) -> Self {
        UcbConfig {
            episodes,
            delta: 0.1,
            c_alpha: 1.0,
            c_lambda: 1.0,
            bonus_clamp: 2.0,
            planner_tolerance: 1e-8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta) || self.delta == 0.0 {
            return Err(Error::InvalidConfig(format!(
                "delta {} not in (0,1)",
                self.delta
            )));
        }
        if self.c_alpha < 0.0
            || self.c_lambda <= 0.0
            || self.bonus_clamp <= 0.0
            || self.planner_tolerance <= 0.0
        {
            return Err(Error::InvalidConfig(
                "c_alpha must be >= 0; c_lambda, bonus_clamp, planner_tolerance must be > 0"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Bonus schedule at episode `n`:
/// `alpha_n = c_alpha * sqrt((|A| + d^2) * gamma * ln(|M| n / delta))` and
/// `lambda_n = c_lambda * d * ln(|M| n / delta)`.
#[allow(clippy::too_many_arguments)]
pub fn schedules(
    n: usize,
    dim: usize,
    num_actions: usize,
    model_count: usize,
    delta: f64,
    gamma: f64,
    c_alpha: f64,
    c_lambda: f64,
) -> (f64, f64) {
    let log_term = ((model_count as f64) * (n as f64) / delta).ln();
    let alpha = c_alpha * ((num_actions as f64 + (dim * dim) as f64) * gamma * log_term).sqrt();
    let lambda = c_lambda * dim as f64 * log_term;
    (alpha, lambda)
}

/// Regularized feature covariance over a dataset:
/// `sum_{(s,a) in data} phi(s,a) phi(s,a)^T + lambda I`.
///
/// `phi` has `|S|*|A|` rows indexed `s*|A| + a`; terms accumulate in dataset
/// order.
pub fn empirical_covariance(
    phi: &DMatrix<f64>,
    num_actions: usize,
    data: &TransitionDataset,
    lambda: f64,
) -> DMatrix<f64> {
    let dim = phi.ncols();
    let mut sigma = DMatrix::identity(dim, dim) * lambda;
    for t in data.triples() {
        let row = phi.row(sa_index(t.s, t.a, num_actions));
        for i in 0..dim {
            for j in 0..dim {
                sigma[(i, j)] += row[i] * row[j];
            }
        }
    }
    sigma
}

/// Learned-feature uncertainty width: `min(alpha * ||phi(s,a)||_{Sigma^-1}, clamp)`.
///
/// The inner quadratic form is evaluated through a Cholesky solve of the
/// stored covariance, never an explicit inverse.
#[derive(Debug, Clone)]
pub struct BonusModel {
    phi_hat: DMatrix<f64>,
    sigma_hat: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    num_actions: usize,
    alpha: f64,
    clamp: f64,
}

impl BonusModel {
    pub fn new(
        phi_hat: DMatrix<f64>,
        sigma_hat: DMatrix<f64>,
        num_actions: usize,
        alpha: f64,
        clamp: f64,
    ) -> Result<Self> {
        if alpha < 0.0 || clamp <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "alpha {alpha} must be >= 0 and clamp {clamp} > 0"
            )));
        }
        if sigma_hat.nrows() != phi_hat.ncols() || sigma_hat.ncols() != phi_hat.ncols() {
            return Err(Error::ShapeMismatch {
                context: "bonus covariance",
                expected: format!("{0}x{0}", phi_hat.ncols()),
                actual: format!("{}x{}", sigma_hat.nrows(), sigma_hat.ncols()),
            });
        }
        let chol = Cholesky::new(sigma_hat.clone()).ok_or_else(|| {
            Error::InvalidModel("bonus covariance is not positive definite".into())
        })?;
        Ok(BonusModel {
            phi_hat,
            sigma_hat,
            chol,
            num_actions,
            alpha,
            clamp,
        })
    }

    pub fn from_factorization(
        fitted: &Factorization,
        sigma_hat: DMatrix<f64>,
        alpha: f64,
        clamp: f64,
    ) -> Result<Self> {
        BonusModel::new(
            fitted.phi().clone(),
            sigma_hat,
            fitted.num_actions(),
            alpha,
            clamp,
        )
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn clamp(&self) -> f64 {
        self.clamp
    }

    pub fn sigma_hat(&self) -> &DMatrix<f64> {
        &self.sigma_hat
    }

    pub fn eval(&self, s: usize, a: usize) -> f64 {
        let x = self.phi_hat.row(sa_index(s, a, self.num_actions)).transpose();
        let z = self.chol.solve(&x);
        (self.alpha * x.dot(&z).max(0.0).sqrt()).min(self.clamp)
    }

    /// Bonus at every state-action pair as an `|S| x |A|` table.
    pub fn eval_table(&self) -> DMatrix<f64> {
        let num_states = self.phi_hat.nrows() / self.num_actions;
        DMatrix::from_fn(num_states, self.num_actions, |s, a| self.eval(s, a))
    }
}

/// Variant switch shared with the control baselines: the baseline forces the
/// bonus to zero and mixes the planned policy with uniform exploration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExplorationVariant {
    Ucb,
    EpsilonGreedy { epsilon: f64 },
}

/// Per-episode diagnostic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 1-based episode index; equals the dataset size after the episode.
    pub episode: usize,
    pub model_index: usize,
    /// Expected squared l1 model error under the sampling mixture so far.
    pub sq_tv: f64,
    /// `V^{pi*}` inside the fitted bonus-augmented model minus its true value.
    pub optimism_margin_pistar: f64,
    /// True value of the policy planned this episode.
    pub value_pin: f64,
    /// Mean of the bonus table.
    pub bonus_mean: f64,
    /// Elliptical potential increment under the true feature.
    pub potential_increment: f64,
    pub rollin_capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub records: Vec<EpisodeRecord>,
    /// True value of the optimal policy, for suboptimality curves.
    pub value_pistar: f64,
    pub rollin_cap_firings: usize,
}

pub struct UcbRun {
    /// The planned policies `pi_1 .. pi_N`.
    pub policies: Vec<Policy>,
    pub diagnostics: RunDiagnostics,
    pub dataset: TransitionDataset,
}

/// Occupancy-derived quantities of one roll-in policy under the true kernel:
/// the (state-marginal x uniform-action) sampling distribution and the
/// second moment of the true feature under it.
struct SamplingStats {
    dist: DVector<f64>,
    moment: DMatrix<f64>,
}

fn sampling_stats(
    truth: &TransitionTensor,
    policy: &Policy,
    d0: &DVector<f64>,
    gamma: f64,
    phi_star: &DMatrix<f64>,
) -> Result<SamplingStats> {
    let occ = occupancy(truth, policy, d0, gamma)?;
    let marginal = occ.state_marginal();
    let num_states = truth.num_states();
    let num_actions = truth.num_actions();
    let dim = phi_star.ncols();
    let mut dist = DVector::zeros(num_states * num_actions);
    let mut moment = DMatrix::zeros(dim, dim);
    for s in 0..num_states {
        let w = marginal[s] / num_actions as f64;
        if w == 0.0 {
            continue;
        }
        for a in 0..num_actions {
            let idx = sa_index(s, a, num_actions);
            dist[idx] = w;
            let row = phi_star.row(idx);
            for i in 0..dim {
                for j in 0..dim {
                    moment[(i, j)] += w * row[i] * row[j];
                }
            }
        }
    }
    Ok(SamplingStats { dist, moment })
}

/// `Tr(G * Sigma^{-1})` via a Cholesky solve per column.
fn trace_ratio(sigma: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let chol = Cholesky::new(sigma.clone()).expect("regularized covariance is PD");
    let solved = chol.solve(g);
    solved.trace()
}

/// Run the online algorithm: uniform initial policy, one triple per episode,
/// MLE refit, covariance and bonus rebuild on the learned feature, optimistic
/// planning on `r + bonus`. Returns the planned policies and full diagnostics.
pub fn run_rep_ucb(
    env: &LowRankMdp,
    class: &ModelClass,
    cfg: &UcbConfig,
    rng: &mut impl Rng,
) -> Result<UcbRun> {
    run_exploration_loop(env, class, cfg, ExplorationVariant::Ucb, rng)
}

/// Shared loop for the UCB algorithm and its bonus-free control baseline.
pub fn run_exploration_loop(
    env: &LowRankMdp,
    class: &ModelClass,
    cfg: &UcbConfig,
    variant: ExplorationVariant,
    rng: &mut impl Rng,
) -> Result<UcbRun> {
    cfg.validate()?;
    if class.num_states() != env.num_states() || class.num_actions() != env.num_actions() {
        return Err(Error::ShapeMismatch {
            context: "model class vs environment",
            expected: format!("{}x{}", env.num_states(), env.num_actions()),
            actual: format!("{}x{}", class.num_states(), class.num_actions()),
        });
    }
    if let ExplorationVariant::EpsilonGreedy { epsilon } = variant {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidConfig(format!(
                "epsilon {epsilon} not in [0,1]"
            )));
        }
    }

    let num_states = env.num_states();
    let num_actions = env.num_actions();
    let dim = class.dim();
    let gamma = env.gamma();
    let d0 = env.init_dist();
    let phi_star = env.factorization().phi();

    let truth = env.factorization().induced_transition()?;
    let tensors = class.induced_tensors()?;

    // Exact optimal policy of the true environment, for diagnostics only.
    let pistar = {
        let problem =
            PlanningProblem::new(&truth, env.reward(), gamma, cfg.planner_tolerance)?;
        value_iteration(&problem)?.policy
    };
    let value_pistar = {
        let (v, _) = value_of_policy(&truth, env.reward(), &pistar, gamma)?;
        initial_value(&v, d0)
    };

    let uniform = Policy::uniform(num_states, num_actions);
    let mut current = uniform.clone();
    let mut current_stats = sampling_stats(&truth, &current, d0, gamma, phi_star)?;

    let mut dataset = TransitionDataset::new(Provenance::Online);
    let mut loglik = vec![0.0f64; class.len()];
    let mut cov_sums = vec![DMatrix::<f64>::zeros(dim, dim); class.len()];
    let mut rho_dist = DVector::<f64>::zeros(num_states * num_actions);
    let mut rho_moment = DMatrix::<f64>::zeros(dim, dim);

    let mut policies = Vec::with_capacity(cfg.episodes);
    let mut records = Vec::with_capacity(cfg.episodes);
    let mut cap_firings = 0usize;

    for n in 1..=cfg.episodes {
        // Collect one triple with the previous policy.
        let (t, capped) = sample_triple(&truth, &current, d0, gamma, rng);
        if capped {
            cap_firings += 1;
        }
        dataset.push(t);

        // Incremental per-candidate likelihood and feature covariance; the
        // sums accumulate in dataset order, so they equal a full refit.
        for m in 0..class.len() {
            loglik[m] += tensors[m].prob(t.s, t.a, t.s_next).max(LIKELIHOOD_FLOOR).ln();
            let row = class.candidate(m).phi().row(sa_index(t.s, t.a, num_actions));
            let cov = &mut cov_sums[m];
            for i in 0..dim {
                for j in 0..dim {
                    cov[(i, j)] += row[i] * row[j];
                }
            }
        }
        let mut selected = 0;
        let mut best_ll = f64::NEG_INFINITY;
        for (m, &ll) in loglik.iter().enumerate() {
            if ll > best_ll {
                selected = m;
                best_ll = ll;
            }
        }

        let (alpha_n, lambda_n) = schedules(
            n,
            dim,
            num_actions,
            class.len(),
            cfg.delta,
            gamma,
            cfg.c_alpha,
            cfg.c_lambda,
        );
        let alpha_eff = match variant {
            ExplorationVariant::Ucb => alpha_n,
            ExplorationVariant::EpsilonGreedy { .. } => 0.0,
        };
        let sigma_hat = &cov_sums[selected] + DMatrix::identity(dim, dim) * lambda_n;
        let bonus = BonusModel::from_factorization(
            class.candidate(selected),
            sigma_hat,
            alpha_eff,
            cfg.bonus_clamp,
        )?;
        let bonus_table = bonus.eval_table();
        let effective = env.reward() + &bonus_table;

        let problem =
            PlanningProblem::new(&tensors[selected], &effective, gamma, cfg.planner_tolerance)?;
        let planned = value_iteration(&problem)?.policy;
        let pi_n = match variant {
            ExplorationVariant::Ucb => planned,
            ExplorationVariant::EpsilonGreedy { epsilon } => {
                planned.mix(&uniform, 1.0 - epsilon)?
            }
        };

        // The sampling mixture now includes the policy just rolled in.
        rho_dist += &current_stats.dist;
        rho_moment += &current_stats.moment;
        let rho_n = OccupancyMeasure::from_dist(
            num_states,
            num_actions,
            &rho_dist / n as f64,
        )?;

        let sq_tv = expected_sq_tv(&tensors[selected], &truth, &rho_n)?;
        let optimism_margin_pistar = {
            let (v, _) = value_of_policy(&tensors[selected], &effective, &pistar, gamma)?;
            initial_value(&v, d0) - value_pistar
        };
        let value_pin = {
            let (v, _) = value_of_policy(&truth, env.reward(), &pi_n, gamma)?;
            initial_value(&v, d0)
        };
        let next_stats = sampling_stats(&truth, &pi_n, d0, gamma, phi_star)?;
        let sigma_rho = &rho_moment + DMatrix::identity(dim, dim) * lambda_n;
        let potential_increment = trace_ratio(&sigma_rho, &next_stats.moment);
        let bonus_mean = bonus_table.sum() / (num_states * num_actions) as f64;

        records.push(EpisodeRecord {
            episode: n,
            model_index: selected,
            sq_tv,
            optimism_margin_pistar,
            value_pin,
            bonus_mean,
            potential_increment,
            rollin_capped: capped,
        });
        policies.push(pi_n.clone());
        current = pi_n;
        current_stats = next_stats;
    }

    Ok(UcbRun {
        policies,
        diagnostics: RunDiagnostics {
            records,
            value_pistar,
            rollin_cap_firings: cap_firings,
        },
        dataset,
    })
}

/// `V^pi` inside the fitted bonus-augmented model minus the true value of the
/// same policy, both by exact evaluation at the initial distribution.
pub fn optimism_margin(
    policy: &Policy,
    fitted: &Factorization,
    bonus: &BonusModel,
    env: &LowRankMdp,
) -> Result<f64> {
    let fitted_tensor = fitted.induced_transition()?;
    let effective = env.reward() + bonus.eval_table();
    let (v_model, _) = value_of_policy(&fitted_tensor, &effective, policy, env.gamma())?;
    let truth = env.factorization().induced_transition()?;
    let (v_true, _) = value_of_policy(&truth, env.reward(), policy, env.gamma())?;
    Ok(initial_value(&v_model, env.init_dist()) - initial_value(&v_true, env.init_dist()))
}

/// Elliptical potential diagnostic over a run's planned policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticalTrace {
    /// `E_{d^{pi_n} x U}[ ||phi*||^2 ]` in the inverse mixture covariance at
    /// episode `n` (mixture over the roll-in policies, regularized by
    /// `lambda_n`).
    pub per_episode: Vec<f64>,
    /// Sum of `per_episode`.
    pub per_episode_sum: f64,
    /// `sum_n Tr(G_n M_{n-1}^{-1})` for the process `M_n = M_{n-1} + G_n`,
    /// `M_0 = lambda_1 I`.
    pub trace_sum: f64,
    /// `2 ln det(M_N) - 2 ln det(lambda_1 I)`.
    pub logdet_gap: f64,
    /// `d * ln(1 + N/(d * lambda_1))`.
    pub potential_bound: f64,
}

/// Recompute the elliptical potential quantities from stored policies. The
/// mixture at episode `n` covers the uniform initial policy plus the first
/// `n-1` planned policies, matching the online sampling distribution; the
/// increment is measured under the policy planned at episode `n`.
pub fn elliptical_trace(
    env: &LowRankMdp,
    policies: &[Policy],
    phi_star: &DMatrix<f64>,
    lambdas: &[f64],
) -> Result<EllipticalTrace> {
    if lambdas.len() != policies.len() {
        return Err(Error::ShapeMismatch {
            context: "elliptical trace lambda schedule",
            expected: policies.len().to_string(),
            actual: lambdas.len().to_string(),
        });
    }
    let dim = phi_star.ncols();
    if policies.is_empty() {
        return Ok(EllipticalTrace {
            per_episode: vec![],
            per_episode_sum: 0.0,
            trace_sum: 0.0,
            logdet_gap: 0.0,
            potential_bound: 0.0,
        });
    }
    let truth = env.factorization().induced_transition()?;
    let d0 = env.init_dist();
    let gamma = env.gamma();

    let uniform = Policy::uniform(env.num_states(), env.num_actions());
    let moments: Vec<DMatrix<f64>> = std::iter::once(&uniform)
        .chain(policies.iter())
        .map(|p| Ok(sampling_stats(&truth, p, d0, gamma, phi_star)?.moment))
        .collect::<Result<_>>()?;

    let lambda1 = lambdas[0];
    let big_n = policies.len();
    let mut rho_sum = DMatrix::<f64>::zeros(dim, dim); // sum of G_0 .. G_{n-1}
    let mut m_chain = DMatrix::identity(dim, dim) * lambda1; // M_{n-1}
    let mut per_episode = Vec::with_capacity(big_n);
    let mut trace_sum = 0.0;
    for n in 1..=big_n {
        rho_sum += &moments[n - 1];
        let g_n = &moments[n];
        let sigma_rho = &rho_sum + DMatrix::identity(dim, dim) * lambdas[n - 1];
        per_episode.push(trace_ratio(&sigma_rho, g_n));
        trace_sum += trace_ratio(&m_chain, g_n);
        m_chain += g_n;
    }
    let logdet_gap = 2.0 * (m_chain.determinant().ln() - (lambda1.ln() * dim as f64));
    let potential_bound = dim as f64 * (1.0 + big_n as f64 / (dim as f64 * lambda1)).ln();
    Ok(EllipticalTrace {
        per_episode_sum: per_episode.iter().sum(),
        per_episode,
        trace_sum,
        logdet_gap,
        potential_bound,
    })
}

/// Episodes needed to drive the averaged suboptimality below `eps`, given the
/// error-curve constants: `N = ceil((1/eps'^2) ln^2(1 + 1/eps'^2))` with
/// `eps' = eps / (a1 sqrt(ln(e + a2)) sqrt(ln(e + a3)))`.
pub fn iterations_for_epsilon(eps: f64, a1: f64, a2: f64, a3: f64) -> Result<u64> {
    if eps <= 0.0 || a1 <= 0.0 || a2 < 0.0 || a3 < 0.0 {
        return Err(Error::InvalidConfig(
            "need eps > 0, a1 > 0, a2 >= 0, a3 >= 0".into(),
        ));
    }
    let eps_prime =
        eps / (a1 * (std::f64::consts::E + a2).ln().sqrt() * (std::f64::consts::E + a3).ln().sqrt());
    let inv_sq = 1.0 / (eps_prime * eps_prime);
    Ok((inv_sq * (1.0 + inv_sq).ln().powi(2)).ceil() as u64)
}
