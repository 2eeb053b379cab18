//! Shared generators for unit tests.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::mdp::{Factorization, Policy};

/// Tabular embedding of a deterministic MDP: `mu` = identity, `phi(s,a)` =
/// one-hot of the successor.
pub(crate) fn tabular_factorization(
    successors: &[usize],
    num_states: usize,
    num_actions: usize,
) -> Factorization {
    let mu = DMatrix::identity(num_states, num_states);
    let mut phi = DMatrix::zeros(num_states * num_actions, num_states);
    for (idx, &succ) in successors.iter().enumerate() {
        phi[(idx, succ)] = 1.0;
    }
    Factorization::new(num_states, num_actions, num_states, mu, phi).unwrap()
}

/// Latent-variable construction: phi rows and mu columns are probability
/// vectors, which satisfies every factorization invariant.
pub(crate) fn random_dense_factorization(
    num_states: usize,
    num_actions: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Factorization {
    let mut phi = DMatrix::zeros(num_states * num_actions, dim);
    for i in 0..num_states * num_actions {
        let mut row: Vec<f64> = (0..dim).map(|_| -(rng.random::<f64>()).ln()).collect();
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= sum);
        for (j, x) in row.into_iter().enumerate() {
            phi[(i, j)] = x;
        }
    }
    let mut mu = DMatrix::zeros(num_states, dim);
    for z in 0..dim {
        let mut col: Vec<f64> = (0..num_states)
            .map(|_| -(rng.random::<f64>()).ln())
            .collect();
        let sum: f64 = col.iter().sum();
        col.iter_mut().for_each(|x| *x /= sum);
        for (s, x) in col.into_iter().enumerate() {
            mu[(s, z)] = x;
        }
    }
    Factorization::new(num_states, num_actions, dim, mu, phi).unwrap()
}

/// Random reward respecting the per-step bound `r <= 1 - gamma`.
pub(crate) fn random_reward(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    DMatrix::from_fn(num_states, num_actions, |_, _| {
        rng.random::<f64>() * (1.0 - gamma)
    })
}

pub(crate) fn random_policy(
    num_states: usize,
    num_actions: usize,
    rng: &mut ChaCha8Rng,
) -> Policy {
    let mut probs = DMatrix::zeros(num_states, num_actions);
    for s in 0..num_states {
        let mut row: Vec<f64> = (0..num_actions)
            .map(|_| -(rng.random::<f64>()).ln())
            .collect();
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= sum);
        for (a, x) in row.into_iter().enumerate() {
            probs[(s, a)] = x;
        }
    }
    Policy::from_matrix(probs).unwrap()
}
