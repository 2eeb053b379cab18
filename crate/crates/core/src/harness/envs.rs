//! Synthetic benchmark environments and their confusable model classes.
//!
//! Every generator returns a validated environment together with a realizable
//! class (truth plus decoys, truth stored last so ties favor decoys, the
//! adversarial choice for the tie-breaking MLE). Benchmark geometry, decoy
//! scales, and reward layouts are engineering choices of this harness.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{sa_index, Factorization, LowRankMdp};
use crate::models::ModelClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// Soft assignment of each pair to latent states with Dirichlet emissions.
    LatentVariable,
    /// Hard (one-hot) latent assignment; the decoder is exact.
    Block,
    /// Combination lock: a chain of gated states, one correct action each,
    /// reward only at the end, absorbing dead state. Hard exploration.
    Comblock,
    /// Fully random dense factorization (uniform Dirichlet draws).
    RandomLowRank,
}

/// Generation parameters. Comblock geometry is derived from `lock_length`
/// (`|S| = lock_length + 1`, tabular features), which overrides `num_states`
/// and `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub num_states: usize,
    pub num_actions: usize,
    pub dim: usize,
    pub gamma: f64,
    /// Number of candidates in the model class, truth included.
    #[serde(default = "default_class_size")]
    pub class_size: usize,
    /// Comblock chain length (number of gated states).
    #[serde(default = "default_lock_length")]
    pub lock_length: usize,
    /// Probability the correct action at the final lock state stays there.
    #[serde(default = "default_stay_prob")]
    pub stay_prob: f64,
    /// Dirichlet concentration for feature rows (soft latent assignments).
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    /// Dirichlet concentration for emission columns.
    #[serde(default = "default_concentration")]
    pub emission_concentration: f64,
    /// Largest mixing weight in the perturbed-emission decoy ladder.
    #[serde(default = "default_noise_max")]
    pub noise_max: f64,
    /// Smallest mixing weight in the perturbed-emission decoy ladder.
    #[serde(default = "default_noise_min")]
    pub noise_min: f64,
    pub seed: u64,
}

fn default_class_size() -> usize {
    16
}
fn default_lock_length() -> usize {
    6
}
fn default_stay_prob() -> f64 {
    1.0
}
fn default_concentration() -> f64 {
    0.3
}
fn default_noise_max() -> f64 {
    0.5
}
fn default_noise_min() -> f64 {
    0.01
}

impl EnvSpec {
    pub fn latent(
        num_states: usize,
        num_actions: usize,
        dim: usize,
        gamma: f64,
        class_size: usize,
        seed: u64,
    ) -> Self {
        EnvSpec {
            kind: EnvKind::LatentVariable,
            num_states,
            num_actions,
            dim,
            gamma,
            class_size,
            lock_length: default_lock_length(),
            stay_prob: default_stay_prob(),
            concentration: default_concentration(),
            emission_concentration: default_concentration(),
            noise_max: default_noise_max(),
            noise_min: default_noise_min(),
            seed,
        }
    }

    pub fn comblock(lock_length: usize, num_actions: usize, gamma: f64, seed: u64) -> Self {
        EnvSpec {
            kind: EnvKind::Comblock,
            num_states: lock_length + 1,
            num_actions,
            dim: lock_length + 1,
            gamma,
            class_size: lock_length + 1,
            lock_length,
            stay_prob: default_stay_prob(),
            concentration: default_concentration(),
            emission_concentration: default_concentration(),
            noise_max: default_noise_max(),
            noise_min: default_noise_min(),
            seed,
        }
    }
}

/// A generated benchmark: the environment, its realizable model class, and
/// the analytic optimal value when one is known.
#[derive(Debug, Clone)]
pub struct GeneratedEnv {
    pub env: LowRankMdp,
    pub class: ModelClass,
    pub optimal_value: Option<f64>,
}

pub fn generate_env(spec: &EnvSpec) -> Result<GeneratedEnv> {
    match spec.kind {
        EnvKind::LatentVariable => make_latent_variable_env(spec),
        EnvKind::Block => make_block_env(spec),
        EnvKind::Comblock => make_comblock_env(spec),
        EnvKind::RandomLowRank => make_random_lowrank_env(spec),
    }
}

/// Symmetric Dirichlet draw via normalized Gamma variates (the distribution
/// in `rand_distr` is fixed-dimension, so lengths are runtime here).
fn dirichlet(len: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(alpha, 1.0).expect("valid gamma shape");
    loop {
        let mut draw: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draw.iter().sum();
        // Shape < 1 can underflow every coordinate to zero; redraw.
        if sum > 0.0 && sum.is_finite() {
            draw.iter_mut().for_each(|x| *x /= sum);
            return draw;
        }
    }
}

fn check_spec(spec: &EnvSpec) -> Result<()> {
    if spec.num_states == 0 || spec.num_actions == 0 || spec.dim == 0 {
        return Err(Error::Generation(
            "num_states, num_actions and dim must be positive".into(),
        ));
    }
    if spec.dim > spec.num_states {
        return Err(Error::Generation(format!(
            "dim {} exceeds num_states {}",
            spec.dim, spec.num_states
        )));
    }
    if !(0.0..1.0).contains(&spec.gamma) {
        return Err(Error::Generation(format!(
            "gamma {} not in [0,1)",
            spec.gamma
        )));
    }
    if spec.class_size == 0 {
        return Err(Error::Generation("class_size must be positive".into()));
    }
    if !(0.0 < spec.noise_min && spec.noise_min <= spec.noise_max && spec.noise_max < 1.0) {
        return Err(Error::Generation(format!(
            "need 0 < noise_min <= noise_max < 1, got [{}, {}]",
            spec.noise_min, spec.noise_max
        )));
    }
    Ok(())
}

/// Latent-variable environment: `phi(s,a)` is a distribution over `dim`
/// latent states, emission columns of `mu` are distributions over states, so
/// every factorization invariant holds by construction.
pub fn make_latent_variable_env(spec: &EnvSpec) -> Result<GeneratedEnv> {
    check_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = sample_latent_factorization(spec, false, &mut rng)?;
    finish_env(spec, truth, &mut rng)
}

/// Block sub-case: hard latent assignments (`phi` rows one-hot).
pub fn make_block_env(spec: &EnvSpec) -> Result<GeneratedEnv> {
    check_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = sample_latent_factorization(spec, true, &mut rng)?;
    finish_env(spec, truth, &mut rng)
}

/// Fully random dense factorization: latent-variable draws with uniform
/// Dirichlet concentration.
pub fn make_random_lowrank_env(spec: &EnvSpec) -> Result<GeneratedEnv> {
    check_spec(spec)?;
    let mut flat = spec.clone();
    flat.concentration = 1.0;
    flat.emission_concentration = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = sample_latent_factorization(&flat, false, &mut rng)?;
    finish_env(&flat, truth, &mut rng)
}

fn sample_latent_factorization(
    spec: &EnvSpec,
    one_hot: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Factorization> {
    let pairs = spec.num_states * spec.num_actions;
    let mut phi = DMatrix::zeros(pairs, spec.dim);
    for idx in 0..pairs {
        if one_hot {
            let z = rng.random_range(0..spec.dim);
            phi[(idx, z)] = 1.0;
        } else {
            for (z, w) in dirichlet(spec.dim, spec.concentration, rng).into_iter().enumerate() {
                phi[(idx, z)] = w;
            }
        }
    }
    let mut mu = DMatrix::zeros(spec.num_states, spec.dim);
    for z in 0..spec.dim {
        for (s, w) in dirichlet(spec.num_states, spec.emission_concentration, rng)
            .into_iter()
            .enumerate()
        {
            mu[(s, z)] = w;
        }
    }
    Factorization::new(spec.num_states, spec.num_actions, spec.dim, mu, phi)
}

fn finish_env(
    spec: &EnvSpec,
    truth: Factorization,
    rng: &mut ChaCha8Rng,
) -> Result<GeneratedEnv> {
    let reward = DMatrix::from_fn(spec.num_states, spec.num_actions, |_, _| {
        rng.random::<f64>() * (1.0 - spec.gamma)
    });
    let init_dist = DVector::from_element(spec.num_states, 1.0 / spec.num_states as f64);
    let env = LowRankMdp::new(truth.clone(), reward, spec.gamma, init_dist)?;
    let report = env.validate();
    if !report.is_valid() {
        return Err(Error::Generation(format!(
            "generated environment fails validation: {:?}",
            report.violations
        )));
    }
    let class = build_decoy_class(spec, &truth, rng)?;
    class.check_realizable(&env)?;
    Ok(GeneratedEnv {
        env,
        class,
        optimal_value: None,
    })
}

/// Decoy mix for latent-style truth: a geometric ladder of
/// perturbed-emission models (confusable at every sample-size scale), a few
/// emission-permutation decoys, and a latent-merge decoy padded back to the
/// common dimension. Truth goes last.
fn build_decoy_class(
    spec: &EnvSpec,
    truth: &Factorization,
    rng: &mut ChaCha8Rng,
) -> Result<ModelClass> {
    let k = spec.class_size - 1;
    let mut decoys: Vec<Factorization> = Vec::with_capacity(k);
    if k > 0 {
        let k_perm = if spec.dim >= 2 { (k / 5).min(3) } else { 0 };
        let k_merge = if spec.dim >= 2 && k >= 8 { 1 } else { 0 };
        let k_ladder = k - k_perm - k_merge;
        for i in 0..k_ladder {
            let eps = if k_ladder == 1 {
                spec.noise_max
            } else {
                // Geometric ladder from noise_max down to noise_min.
                spec.noise_max
                    * (spec.noise_min / spec.noise_max).powf(i as f64 / (k_ladder - 1) as f64)
            };
            decoys.push(distinct_decoy(truth, rng, |t, r| {
                perturbed_emission_decoy(t, eps, r)
            })?);
        }
        for _ in 0..k_perm {
            decoys.push(distinct_decoy(truth, rng, permuted_emission_decoy)?);
        }
        for _ in 0..k_merge {
            decoys.push(distinct_decoy(truth, rng, merged_latent_decoy)?);
        }
    }
    decoys.push(truth.clone());
    let true_index = decoys.len() - 1;
    ModelClass::new(decoys, Some(true_index))
}

/// A model class whose decoys are all emission perturbations of the truth on
/// a geometric scale ladder from `eps_max` down to `eps_min`, truth last.
/// With scales spanning the resolvable range of the sample sizes under
/// study, some rung stays confusable with the truth at every size, which is
/// what an error-decay measurement needs.
pub fn ladder_class(
    truth: &Factorization,
    count: usize,
    eps_max: f64,
    eps_min: f64,
    seed: u64,
) -> Result<ModelClass> {
    if count < 2 {
        return Err(Error::Generation("ladder class needs at least 2 candidates".into()));
    }
    if !(0.0 < eps_min && eps_min <= eps_max && eps_max < 1.0) {
        return Err(Error::Generation(format!(
            "need 0 < eps_min <= eps_max < 1, got [{eps_min}, {eps_max}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rungs = count - 1;
    let mut decoys = Vec::with_capacity(count);
    for i in 0..rungs {
        let eps = if rungs == 1 {
            eps_max
        } else {
            eps_max * (eps_min / eps_max).powf(i as f64 / (rungs - 1) as f64)
        };
        decoys.push(distinct_decoy(truth, &mut rng, |t, r| {
            perturbed_emission_decoy(t, eps, r)
        })?);
    }
    decoys.push(truth.clone());
    ModelClass::new(decoys, Some(rungs))
}

/// Retry a decoy builder until the induced kernel differs from the truth.
fn distinct_decoy(
    truth: &Factorization,
    rng: &mut ChaCha8Rng,
    build: impl Fn(&Factorization, &mut ChaCha8Rng) -> Result<Factorization>,
) -> Result<Factorization> {
    let truth_kernel = truth.induced_transition()?;
    for _ in 0..32 {
        let candidate = build(truth, rng)?;
        let kernel = candidate.induced_transition()?;
        if (kernel.rows() - truth_kernel.rows()).amax() > 1e-9 {
            return Ok(candidate);
        }
    }
    Err(Error::Generation(
        "could not build a decoy distinct from the truth".into(),
    ))
}

/// Mix every emission column with a fresh Dirichlet draw at weight `eps`.
fn perturbed_emission_decoy(
    truth: &Factorization,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Factorization> {
    let mut mu = truth.mu().clone();
    for z in 0..truth.dim() {
        let noise = dirichlet(truth.num_states(), 1.0, rng);
        for s in 0..truth.num_states() {
            mu[(s, z)] = (1.0 - eps) * mu[(s, z)] + eps * noise[s];
        }
    }
    Factorization::new(
        truth.num_states(),
        truth.num_actions(),
        truth.dim(),
        mu,
        truth.phi().clone(),
    )
}

/// Permute the emission columns while keeping the features, which relabels
/// the latents on one side only and changes the induced kernel.
fn permuted_emission_decoy(
    truth: &Factorization,
    rng: &mut ChaCha8Rng,
) -> Result<Factorization> {
    let d = truth.dim();
    let mut perm: Vec<usize> = (0..d).collect();
    // Fisher-Yates, rejecting the identity.
    loop {
        for i in (1..d).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            break;
        }
    }
    let mut mu = DMatrix::zeros(truth.num_states(), d);
    for z in 0..d {
        for s in 0..truth.num_states() {
            mu[(s, z)] = truth.mu()[(s, perm[z])];
        }
    }
    Factorization::new(
        truth.num_states(),
        truth.num_actions(),
        d,
        mu,
        truth.phi().clone(),
    )
}

/// Merge two latent states (sum their feature columns, average their
/// emissions) and zero-pad back to the common dimension.
fn merged_latent_decoy(truth: &Factorization, rng: &mut ChaCha8Rng) -> Result<Factorization> {
    let d = truth.dim();
    let z1 = rng.random_range(0..d);
    let mut z2 = rng.random_range(0..d);
    while z2 == z1 {
        z2 = rng.random_range(0..d);
    }
    let mut mu = truth.mu().clone();
    let mut phi = truth.phi().clone();
    for s in 0..truth.num_states() {
        mu[(s, z1)] = 0.5 * (truth.mu()[(s, z1)] + truth.mu()[(s, z2)]);
        mu[(s, z2)] = 0.0;
    }
    for idx in 0..phi.nrows() {
        phi[(idx, z1)] += phi[(idx, z2)];
        phi[(idx, z2)] = 0.0;
    }
    Factorization::new(truth.num_states(), truth.num_actions(), d, mu, phi)
}

/// Combination lock: `lock_length` gated states then an absorbing dead state.
/// One seed-permuted correct action per gated state, reward `1 - gamma` at
/// the final gated state, tabular (one-hot successor) features. The decoys
/// claim the lock is broken at some depth `k` (every action at state `k`
/// leads to the dead state), ordered shallowest first, truth last; ruling out
/// "broken at k" requires observing the correct transition at depth `k`.
pub fn make_comblock_env(spec: &EnvSpec) -> Result<GeneratedEnv> {
    let h = spec.lock_length;
    if h < 2 {
        return Err(Error::Generation(format!("lock_length {h} must be >= 2")));
    }
    if spec.num_actions < 2 {
        return Err(Error::Generation("comblock needs at least 2 actions".into()));
    }
    if !(0.0..=1.0).contains(&spec.stay_prob) {
        return Err(Error::Generation(format!(
            "stay_prob {} not in [0,1]",
            spec.stay_prob
        )));
    }
    if !(0.0..1.0).contains(&spec.gamma) {
        return Err(Error::Generation(format!(
            "gamma {} not in [0,1)",
            spec.gamma
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let num_states = h + 1;
    let dead = h;
    let num_actions = spec.num_actions;
    let correct: Vec<usize> = (0..h).map(|_| rng.random_range(0..num_actions)).collect();

    let build = |broken_at: Option<usize>| -> Result<Factorization> {
        let mu = DMatrix::identity(num_states, num_states);
        let mut phi = DMatrix::zeros(num_states * num_actions, num_states);
        for s in 0..num_states {
            for a in 0..num_actions {
                let idx = sa_index(s, a, num_actions);
                if s == dead || broken_at == Some(s) || a != correct[s] {
                    phi[(idx, dead)] = 1.0;
                } else if s < h - 1 {
                    phi[(idx, s + 1)] = 1.0;
                } else {
                    phi[(idx, s)] = spec.stay_prob;
                    phi[(idx, dead)] += 1.0 - spec.stay_prob;
                }
            }
        }
        Factorization::new(num_states, num_actions, num_states, mu, phi)
    };

    let truth = build(None)?;
    let mut candidates = Vec::with_capacity(h + 1);
    for k in 0..h {
        candidates.push(build(Some(k))?);
    }
    candidates.push(truth.clone());
    let class = ModelClass::new(candidates, Some(h))?;

    let mut reward = DMatrix::zeros(num_states, num_actions);
    for a in 0..num_actions {
        reward[(h - 1, a)] = 1.0 - spec.gamma;
    }
    let mut init_dist = DVector::zeros(num_states);
    init_dist[0] = 1.0;
    let env = LowRankMdp::new(truth, reward, spec.gamma, init_dist)?;
    let report = env.validate();
    if !report.is_valid() {
        return Err(Error::Generation(format!(
            "comblock fails validation: {:?}",
            report.violations
        )));
    }
    class.check_realizable(&env)?;

    let optimal = spec.gamma.powi(h as i32 - 1) * (1.0 - spec.gamma)
        / (1.0 - spec.gamma * spec.stay_prob);
    Ok(GeneratedEnv {
        env,
        class,
        optimal_value: Some(optimal),
    })
}
