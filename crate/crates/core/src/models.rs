//! Finite model classes and the exact MLE oracle.
//!
//! The learner never sees the true factorization directly; it only has an
//! enumerable list of candidates guaranteed to contain it. Fitting is an exact
//! argmax of dataset log-likelihood over the list, so all representation
//! learning reduces to this oracle.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    occupancy, sa_index, sample_triple, Factorization, LowRankMdp, OccupancyMeasure, Policy,
    Transition, TransitionTensor,
};

/// Probability floor inside the log-likelihood. Keeps the argmax well-defined
/// when a candidate assigns zero mass to an observed triple: each such term
/// scores `ln(1e-12) = -27.63` instead of negative infinity.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

/// Where a dataset came from; online triples use uniform logged actions while
/// offline triples use behavior-policy actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Online,
    Offline,
}

/// A multiset of observed transitions in insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDataset {
    triples: Vec<Transition>,
    provenance: Provenance,
}

impl TransitionDataset {
    pub fn new(provenance: Provenance) -> Self {
        TransitionDataset {
            triples: Vec::new(),
            provenance,
        }
    }

    pub fn from_triples(triples: Vec<Transition>, provenance: Provenance) -> Self {
        TransitionDataset {
            triples,
            provenance,
        }
    }

    pub fn push(&mut self, t: Transition) {
        self.triples.push(t);
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn triples(&self) -> &[Transition] {
        &self.triples
    }

    /// First `n` triples, preserving provenance.
    pub fn prefix(&self, n: usize) -> TransitionDataset {
        TransitionDataset {
            triples: self.triples[..n.min(self.triples.len())].to_vec(),
            provenance: self.provenance,
        }
    }

    pub fn check_ranges(&self, num_states: usize, num_actions: usize) -> Result<()> {
        for (i, t) in self.triples.iter().enumerate() {
            if t.s >= num_states || t.s_next >= num_states || t.a >= num_actions {
                return Err(Error::InvalidConfig(format!(
                    "triple {i} ({}, {}, {}) out of range for {num_states} states / {num_actions} actions",
                    t.s, t.a, t.s_next
                )));
            }
        }
        Ok(())
    }

    /// One JSON object per line: `{"s":..,"a":..,"s_next":..}`.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for t in &self.triples {
            let line = serde_json::to_string(t).map_err(|e| Error::json(path, e))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path, provenance: Provenance) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut triples = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            triples.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
        }
        Ok(TransitionDataset {
            triples,
            provenance,
        })
    }
}

/// An ordered, finite class of candidate factorizations. `true_index` is
/// bookkeeping for synthetic experiments; algorithms never read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelClass {
    candidates: Vec<Factorization>,
    true_index: Option<usize>,
}

impl ModelClass {
    /// Builds the class, validating every candidate.
    pub fn new(candidates: Vec<Factorization>, true_index: Option<usize>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::EmptyModelClass);
        }
        if let Some(i) = true_index {
            if i >= candidates.len() {
                return Err(Error::InvalidConfig(format!(
                    "true_index {i} out of range for {} candidates",
                    candidates.len()
                )));
            }
        }
        let shape = (
            candidates[0].num_states(),
            candidates[0].num_actions(),
            candidates[0].dim(),
        );
        for (i, c) in candidates.iter().enumerate() {
            if (c.num_states(), c.num_actions(), c.dim()) != shape {
                return Err(Error::ShapeMismatch {
                    context: "model class candidate",
                    expected: format!("{shape:?}"),
                    actual: format!(
                        "candidate {i}: ({}, {}, {})",
                        c.num_states(),
                        c.num_actions(),
                        c.dim()
                    ),
                });
            }
            let report = c.validate();
            if !report.is_valid() {
                return Err(Error::InvalidModel(format!(
                    "candidate {i} fails validation: {:?}",
                    report.violations
                )));
            }
        }
        Ok(ModelClass {
            candidates,
            true_index,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[Factorization] {
        &self.candidates
    }

    pub fn candidate(&self, i: usize) -> &Factorization {
        &self.candidates[i]
    }

    pub fn true_index(&self) -> Option<usize> {
        self.true_index
    }

    pub fn num_states(&self) -> usize {
        self.candidates[0].num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.candidates[0].num_actions()
    }

    pub fn dim(&self) -> usize {
        self.candidates[0].dim()
    }

    /// Induced tensors for every candidate, in order.
    pub fn induced_tensors(&self) -> Result<Vec<TransitionTensor>> {
        self.candidates
            .iter()
            .map(Factorization::induced_transition)
            .collect()
    }

    /// With `true_index` set, the designated candidate must reproduce the
    /// environment kernel exactly.
    pub fn check_realizable(&self, env: &LowRankMdp) -> Result<()> {
        let Some(idx) = self.true_index else {
            return Err(Error::InvalidConfig(
                "realizability check requires true_index".into(),
            ));
        };
        let truth = env.factorization().induced_transition()?;
        let candidate = self.candidates[idx].induced_transition()?;
        let gap = (truth.rows() - candidate.rows()).amax();
        if gap > 1e-12 {
            return Err(Error::InvalidModel(format!(
                "candidate {idx} deviates from environment kernel by {gap:e}"
            )));
        }
        Ok(())
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Dataset log-likelihood of a candidate, with each term floored at
/// [`LIKELIHOOD_FLOOR`]. Empty dataset scores 0. Terms are summed in dataset
/// order, so the result is deterministic for a given dataset.
pub fn log_likelihood(model: &Factorization, data: &TransitionDataset) -> Result<f64> {
    let tensor = model.induced_transition()?;
    Ok(log_likelihood_tensor(&tensor, data))
}

pub(crate) fn log_likelihood_tensor(tensor: &TransitionTensor, data: &TransitionDataset) -> f64 {
    data.triples()
        .iter()
        .map(|t| tensor.prob(t.s, t.a, t.s_next).max(LIKELIHOOD_FLOOR).ln())
        .sum()
}

/// Exact MLE over the class: argmax of log-likelihood, ties broken by the
/// lowest index.
pub fn mle_fit<'c>(
    class: &'c ModelClass,
    data: &TransitionDataset,
) -> Result<(usize, &'c Factorization)> {
    let tensors = class.induced_tensors()?;
    let mut best = 0;
    let mut best_ll = f64::NEG_INFINITY;
    for (i, tensor) in tensors.iter().enumerate() {
        let ll = log_likelihood_tensor(tensor, data);
        if ll > best_ll {
            best = i;
            best_ll = ll;
        }
    }
    Ok((best, class.candidate(best)))
}

/// `sum_{(s,a)} dist(s,a) * (sum_{s'} |P_model - P_truth|)^2`; always in `[0,4]`.
pub fn expected_sq_tv(
    model: &TransitionTensor,
    truth: &TransitionTensor,
    dist: &OccupancyMeasure,
) -> Result<f64> {
    if model.num_states() != truth.num_states()
        || model.num_actions() != truth.num_actions()
        || dist.num_states() != model.num_states()
        || dist.num_actions() != model.num_actions()
    {
        return Err(Error::ShapeMismatch {
            context: "expected_sq_tv",
            expected: format!("{}x{}", truth.num_states(), truth.num_actions()),
            actual: format!("{}x{}", model.num_states(), model.num_actions()),
        });
    }
    let mut acc = 0.0;
    for s in 0..model.num_states() {
        for a in 0..model.num_actions() {
            let w = dist.prob(s, a);
            if w == 0.0 {
                continue;
            }
            let idx = sa_index(s, a, model.num_actions());
            let l1: f64 = (0..model.num_states())
                .map(|s_next| (model.rows()[(idx, s_next)] - truth.rows()[(idx, s_next)]).abs())
                .sum();
            acc += w * l1 * l1;
        }
    }
    Ok(acc)
}

/// One point of an MLE error decay curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub n: usize,
    /// Mean over seeds of the expected squared l1 error of the fitted model
    /// under the sampling mixture at size `n`.
    pub mean_sq_tv: f64,
}

/// Measure how fast the fitted model's error decays with sample size.
///
/// For each seed, triples are drawn online-style (roll-in state, uniform
/// action) using `policies[min(j, len-1)]` for sample `j`; at every grid size
/// `n` the MLE is refit on the first `n` triples and its expected squared l1
/// error is evaluated under the exact mixture of the first `n` sampling
/// distributions. Returns the per-`n` mean across seeds.
pub fn mle_decay_curve(
    env: &LowRankMdp,
    class: &ModelClass,
    policies: &[Policy],
    n_grid: &[usize],
    seeds: &[u64],
) -> Result<Vec<DecayPoint>> {
    if policies.is_empty() {
        return Err(Error::InvalidConfig("empty policy sequence".into()));
    }
    if n_grid.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("empty n_grid or seeds".into()));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    let n_max = *grid.last().unwrap();
    let truth = env.factorization().induced_transition()?;
    let tensors = class.induced_tensors()?;

    // Exact occupancy of each distinct roll-in policy, as the (state-marginal
    // x uniform-action) sampling distribution.
    let num_actions = env.num_actions();
    let sa = env.num_states() * num_actions;
    let mut sampling_dists = Vec::with_capacity(policies.len());
    for policy in policies {
        let occ = occupancy(&truth, policy, env.init_dist(), env.gamma())?;
        let marginal = occ.state_marginal();
        let mut dist = DVector::zeros(sa);
        for s in 0..env.num_states() {
            for a in 0..num_actions {
                dist[sa_index(s, a, num_actions)] = marginal[s] / num_actions as f64;
            }
        }
        sampling_dists.push(dist);
    }

    let mut sums = vec![0.0f64; grid.len()];
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut loglik = vec![0.0f64; tensors.len()];
        let mut mixture = DVector::<f64>::zeros(sa);
        let mut grid_pos = 0;
        for j in 0..n_max {
            let policy = &policies[j.min(policies.len() - 1)];
            let (t, _) = sample_triple(&truth, policy, env.init_dist(), env.gamma(), &mut rng);
            for (ll, tensor) in loglik.iter_mut().zip(&tensors) {
                *ll += tensor.prob(t.s, t.a, t.s_next).max(LIKELIHOOD_FLOOR).ln();
            }
            mixture += &sampling_dists[j.min(sampling_dists.len() - 1)];
            let n = j + 1;
            if grid_pos < grid.len() && n == grid[grid_pos] {
                let mut best = 0;
                let mut best_ll = f64::NEG_INFINITY;
                for (i, &ll) in loglik.iter().enumerate() {
                    if ll > best_ll {
                        best = i;
                        best_ll = ll;
                    }
                }
                let rho = OccupancyMeasure::from_dist(
                    env.num_states(),
                    num_actions,
                    &mixture / n as f64,
                )?;
                sums[grid_pos] += expected_sq_tv(&tensors[best], &truth, &rho)?;
                grid_pos += 1;
            }
        }
    }

    Ok(grid
        .into_iter()
        .zip(sums)
        .map(|(n, sum)| DecayPoint {
            n,
            mean_sq_tv: sum / seeds.len() as f64,
        })
        .collect())
}
