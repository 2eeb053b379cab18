//! Finite low-rank MDP primitives.
//!
//! A factorization is a pair of real matrices `(mu, phi)` inducing the kernel
//! `P(s'|s,a) = mu(s')^T phi(s,a)`. Everything downstream (policy evaluation,
//! occupancy measures, roll-in sampling, simulation gaps) operates on the
//! induced tabular tensor through exact linear solves.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation from exact stochasticity for induced kernels.
pub const STOCHASTICITY_TOL: f64 = 1e-9;
/// Negative entries above this magnitude are a model error, below it they are
/// float dust and get clamped to zero.
pub const NEGATIVE_DUST_TOL: f64 = 1e-12;
/// Slack on the feature-norm bound `||phi(s,a)||_2 <= 1`.
pub const FEATURE_NORM_TOL: f64 = 1e-9;
/// Slack on the binary-vertex bound `||sum_s mu(s) g(s)||_2 <= sqrt(d)`.
pub const MU_VERTEX_TOL: f64 = 1e-9;
/// Tolerance on probability vectors summing to one.
pub const DIST_SUM_TOL: f64 = 1e-12;

/// Largest state count for which the vertex bound is checked exhaustively
/// over all binary vectors; above it a fixed random sample is used.
const EXHAUSTIVE_VERTEX_LIMIT: usize = 20;
const SAMPLED_VERTEX_COUNT: usize = 1000;
const VERTEX_SAMPLE_SEED: u64 = 0x10f2_a3c4;

#[inline]
pub fn sa_index(s: usize, a: usize, num_actions: usize) -> usize {
    s * num_actions + a
}

/// Draw an index from a finite distribution given by `weights`.
///
/// Uses a single uniform draw and a linear scan; the last strictly positive
/// weight is the fallback so cumulative round-off cannot push the draw out of
/// range.
pub(crate) fn sample_index<I>(weights: I, rng: &mut impl Rng) -> usize
where
    I: IntoIterator<Item = f64>,
{
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.into_iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

// ---------------------------------------------------------------------------
// Validation reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ViolationKind {
    /// Some `mu^T phi(s,a)` row does not sum to one.
    RowSum,
    /// Some `mu(s')^T phi(s,a)` entry is more negative than the dust tolerance.
    NegativeMass,
    /// `||phi(s,a)||_2` exceeds `1`.
    FeatureNorm,
    /// `||sum_s mu(s) g(s)||_2` exceeds `sqrt(d)` for some binary `g`.
    MuVertexNorm,
}

/// One violated invariant, with how far it was violated and where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub magnitude: f64,
    pub location: String,
}

/// Outcome of validating a factorization or environment. Hard violations make
/// the object unusable; warnings are reported but do not fail validation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, magnitude: f64, location: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            magnitude,
            location: location.into(),
        });
    }
}

// ---------------------------------------------------------------------------
// Factorization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FactorizationRepr {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    /// Row-major `|S| x d`; row `s'` holds `mu(s')`.
    mu: Vec<f64>,
    /// Row-major `(|S|*|A|) x d`; row `s*|A| + a` holds `phi(s,a)`.
    phi: Vec<f64>,
}

/// A candidate low-rank transition model `P(s'|s,a) = mu(s')^T phi(s,a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FactorizationRepr", into = "FactorizationRepr")]
pub struct Factorization {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    mu: DMatrix<f64>,
    phi: DMatrix<f64>,
}

impl TryFrom<FactorizationRepr> for Factorization {
    type Error = Error;

    fn try_from(r: FactorizationRepr) -> Result<Self> {
        let mu = DMatrix::from_row_slice(r.num_states, r.dim, &check_len(
            "factorization mu",
            r.mu,
            r.num_states * r.dim,
        )?);
        let phi = DMatrix::from_row_slice(r.num_states * r.num_actions, r.dim, &check_len(
            "factorization phi",
            r.phi,
            r.num_states * r.num_actions * r.dim,
        )?);
        Factorization::new(r.num_states, r.num_actions, r.dim, mu, phi)
    }
}

impl From<Factorization> for FactorizationRepr {
    fn from(f: Factorization) -> Self {
        FactorizationRepr {
            num_states: f.num_states,
            num_actions: f.num_actions,
            dim: f.dim,
            mu: row_major(&f.mu),
            phi: row_major(&f.phi),
        }
    }
}

fn check_len(context: &'static str, v: Vec<f64>, expected: usize) -> Result<Vec<f64>> {
    if v.len() == expected {
        Ok(v)
    } else {
        Err(Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: v.len().to_string(),
        })
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl Factorization {
    /// Structural construction: shapes must be consistent and dimensions
    /// positive. Semantic invariants are checked by [`Factorization::validate`].
    pub fn new(
        num_states: usize,
        num_actions: usize,
        dim: usize,
        mu: DMatrix<f64>,
        phi: DMatrix<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || dim == 0 {
            return Err(Error::InvalidConfig(
                "num_states, num_actions, dim must all be positive".into(),
            ));
        }
        if mu.nrows() != num_states || mu.ncols() != dim {
            return Err(Error::ShapeMismatch {
                context: "factorization mu",
                expected: format!("{num_states}x{dim}"),
                actual: format!("{}x{}", mu.nrows(), mu.ncols()),
            });
        }
        if phi.nrows() != num_states * num_actions || phi.ncols() != dim {
            return Err(Error::ShapeMismatch {
                context: "factorization phi",
                expected: format!("{}x{dim}", num_states * num_actions),
                actual: format!("{}x{}", phi.nrows(), phi.ncols()),
            });
        }
        Ok(Factorization {
            num_states,
            num_actions,
            dim,
            mu,
            phi,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `|S| x d`; row `s'` holds `mu(s')`.
    pub fn mu(&self) -> &DMatrix<f64> {
        &self.mu
    }

    /// `(|S|*|A|) x d`; row `s*|A| + a` holds `phi(s,a)`.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn phi_row(&self, s: usize, a: usize) -> DVector<f64> {
        self.phi
            .row(sa_index(s, a, self.num_actions))
            .transpose()
            .into_owned()
    }

    /// Check every factorization invariant, reporting each violation with its
    /// magnitude. An empty report means the factorization is valid.
    ///
    /// The binary-vertex bound on `mu` is checked exhaustively (Gray-code walk
    /// over all `2^|S|` vertices) when `|S| <= 20`, and on a fixed sample of
    /// 1000 random binary vectors otherwise. Vertices suffice because the norm
    /// is convex in `g`.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let product = &self.phi * self.mu.transpose(); // (S*A) x S

        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let row = product.row(sa_index(s, a, self.num_actions));
                let mut sum = 0.0;
                let mut worst_negative = 0.0f64;
                for &p in row.iter() {
                    sum += p;
                    if p < -NEGATIVE_DUST_TOL {
                        worst_negative = worst_negative.max(-p);
                    }
                }
                if worst_negative > 0.0 {
                    report.push(
                        ViolationKind::NegativeMass,
                        worst_negative,
                        format!("(s={s}, a={a})"),
                    );
                }
                let dev = (sum - 1.0).abs();
                if dev > STOCHASTICITY_TOL {
                    report.push(ViolationKind::RowSum, dev, format!("(s={s}, a={a})"));
                }
                let norm = self.phi.row(sa_index(s, a, self.num_actions)).norm();
                if norm > 1.0 + FEATURE_NORM_TOL {
                    report.push(
                        ViolationKind::FeatureNorm,
                        norm - 1.0,
                        format!("(s={s}, a={a})"),
                    );
                }
            }
        }

        let bound = (self.dim as f64).sqrt() + MU_VERTEX_TOL;
        let (worst, g_desc) = self.worst_vertex_norm();
        if worst > bound {
            report.push(
                ViolationKind::MuVertexNorm,
                worst - (self.dim as f64).sqrt(),
                g_desc,
            );
        }

        report
    }

    /// Maximum of `||sum_s mu(s) g(s)||_2` over binary `g`, with a description
    /// of the attaining vertex.
    fn worst_vertex_norm(&self) -> (f64, String) {
        let mut worst = 0.0f64;
        let mut worst_bits: u64 = 0;
        if self.num_states <= EXHAUSTIVE_VERTEX_LIMIT {
            // Gray-code walk: each step flips one bit, so the running sum is
            // updated with a single row of mu.
            let mut sum = DVector::<f64>::zeros(self.dim);
            let mut bits: u64 = 0;
            for k in 1u64..(1u64 << self.num_states) {
                let flip = k.trailing_zeros() as usize;
                let row = self.mu.row(flip).transpose();
                if bits & (1 << flip) == 0 {
                    sum += &row;
                    bits |= 1 << flip;
                } else {
                    sum -= &row;
                    bits &= !(1 << flip);
                }
                let norm = sum.norm();
                if norm > worst {
                    worst = norm;
                    worst_bits = bits;
                }
            }
            (worst, format!("binary g = {worst_bits:#b}"))
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(VERTEX_SAMPLE_SEED);
            for _ in 0..SAMPLED_VERTEX_COUNT {
                let mut sum = DVector::<f64>::zeros(self.dim);
                for s in 0..self.num_states {
                    if rng.random::<bool>() {
                        sum += self.mu.row(s).transpose();
                    }
                }
                let norm = sum.norm();
                if norm > worst {
                    worst = norm;
                }
            }
            (worst, "sampled binary g".to_string())
        }
    }

    /// Materialize the induced transition tensor `P(s'|s,a) = mu(s')^T phi(s,a)`.
    ///
    /// Entries in `[-1e-12, 0)` are clamped to zero and the row renormalized;
    /// larger deviations from stochasticity are an error.
    pub fn induced_transition(&self) -> Result<TransitionTensor> {
        let mut rows = &self.phi * self.mu.transpose(); // (S*A) x S
        for idx in 0..rows.nrows() {
            let mut sum = 0.0;
            for j in 0..rows.ncols() {
                let p = rows[(idx, j)];
                if p < 0.0 {
                    if p < -NEGATIVE_DUST_TOL {
                        return Err(Error::InvalidModel(format!(
                            "P(s'={j}|sa={idx}) = {p:e} is negative beyond dust tolerance"
                        )));
                    }
                    rows[(idx, j)] = 0.0;
                } else {
                    sum += p;
                }
            }
            if (sum - 1.0).abs() > STOCHASTICITY_TOL {
                return Err(Error::InvalidModel(format!(
                    "row sa={idx} sums to {sum}, deviation exceeds {STOCHASTICITY_TOL:e}"
                )));
            }
            for j in 0..rows.ncols() {
                rows[(idx, j)] /= sum;
            }
        }
        Ok(TransitionTensor {
            num_states: self.num_states,
            num_actions: self.num_actions,
            rows,
        })
    }
}

/// Convenience alias matching the operation vocabulary.
pub fn validate_factorization(f: &Factorization) -> ValidationReport {
    f.validate()
}

// ---------------------------------------------------------------------------
// Transition tensor
// ---------------------------------------------------------------------------

/// Explicit tabular kernel; row `s*|A| + a` is the distribution of `s'`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTensor {
    num_states: usize,
    num_actions: usize,
    rows: DMatrix<f64>,
}

impl TransitionTensor {
    /// Build from explicit rows, validating stochasticity.
    pub fn new(num_states: usize, num_actions: usize, rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() != num_states * num_actions || rows.ncols() != num_states {
            return Err(Error::ShapeMismatch {
                context: "transition tensor",
                expected: format!("{}x{num_states}", num_states * num_actions),
                actual: format!("{}x{}", rows.nrows(), rows.ncols()),
            });
        }
        for idx in 0..rows.nrows() {
            let mut sum = 0.0;
            for j in 0..rows.ncols() {
                let p = rows[(idx, j)];
                if p < 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "P(s'={j}|sa={idx}) = {p} is negative"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > STOCHASTICITY_TOL {
                return Err(Error::InvalidModel(format!(
                    "row sa={idx} sums to {sum}"
                )));
            }
        }
        Ok(TransitionTensor {
            num_states,
            num_actions,
            rows,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.rows[(sa_index(s, a, self.num_actions), s_next)]
    }

    /// `(|S|*|A|) x |S|` row-stochastic matrix view.
    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// State-to-state kernel under `policy`: `P_pi(s, s') = sum_a pi(a|s) P(s'|s,a)`.
    pub fn policy_kernel(&self, policy: &Policy) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.num_states, self.num_states);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                let row = self.rows.row(sa_index(s, a, self.num_actions));
                for s_next in 0..self.num_states {
                    out[(s, s_next)] += w * row[s_next];
                }
            }
        }
        out
    }

    pub fn sample_next(&self, s: usize, a: usize, rng: &mut impl Rng) -> usize {
        let idx = sa_index(s, a, self.num_actions);
        sample_index(self.rows.row(idx).iter().copied(), rng)
    }
}

// ---------------------------------------------------------------------------
// Policies, occupancies, transitions
// ---------------------------------------------------------------------------

/// A stationary Markov policy as a row-stochastic `|S| x |A|` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr", into = "PolicyRepr")]
pub struct Policy {
    probs: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyRepr {
    num_states: usize,
    num_actions: usize,
    /// Row-major `|S| x |A|`.
    probs: Vec<f64>,
}

impl TryFrom<PolicyRepr> for Policy {
    type Error = Error;

    fn try_from(r: PolicyRepr) -> Result<Self> {
        let probs = DMatrix::from_row_slice(
            r.num_states,
            r.num_actions,
            &check_len("policy probs", r.probs, r.num_states * r.num_actions)?,
        );
        Policy::from_matrix(probs)
    }
}

impl From<Policy> for PolicyRepr {
    fn from(p: Policy) -> Self {
        PolicyRepr {
            num_states: p.probs.nrows(),
            num_actions: p.probs.ncols(),
            probs: row_major(&p.probs),
        }
    }
}

impl Policy {
    pub fn from_matrix(probs: DMatrix<f64>) -> Result<Self> {
        for s in 0..probs.nrows() {
            let mut sum = 0.0;
            for a in 0..probs.ncols() {
                let p = probs[(s, a)];
                if p < 0.0 {
                    return Err(Error::InvalidDistribution(format!(
                        "pi({a}|{s}) = {p} is negative"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > DIST_SUM_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "policy row {s} sums to {sum}"
                )));
            }
        }
        Ok(Policy { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Policy {
            probs: DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64),
        }
    }

    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        let mut probs = DMatrix::zeros(actions.len(), num_actions);
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::InvalidConfig(format!(
                    "action {a} out of range at state {s}"
                )));
            }
            probs[(s, a)] = 1.0;
        }
        Ok(Policy { probs })
    }

    /// `w * self + (1-w) * other`.
    pub fn mix(&self, other: &Policy, w: f64) -> Result<Policy> {
        if self.probs.shape() != other.probs.shape() {
            return Err(Error::ShapeMismatch {
                context: "policy mix",
                expected: format!("{:?}", self.probs.shape()),
                actual: format!("{:?}", other.probs.shape()),
            });
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidConfig(format!("mix weight {w} not in [0,1]")));
        }
        Ok(Policy {
            probs: &self.probs * w + &other.probs * (1.0 - w),
        })
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn sample_action(&self, s: usize, rng: &mut impl Rng) -> usize {
        sample_index(self.probs.row(s).iter().copied(), rng)
    }
}

/// Discounted state-action occupancy `d^pi(s,a)`, stored flat at `s*|A| + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    num_states: usize,
    num_actions: usize,
    dist: DVector<f64>,
}

impl OccupancyMeasure {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.dist[sa_index(s, a, self.num_actions)]
    }

    pub fn dist(&self) -> &DVector<f64> {
        &self.dist
    }

    pub fn state_marginal(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_states);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                out[s] += self.prob(s, a);
            }
        }
        out
    }

    /// `E_{(s,a) ~ d}[f(s,a)]` for an `|S| x |A|` table.
    pub fn expectation(&self, f: &DMatrix<f64>) -> f64 {
        let mut acc = 0.0;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                acc += self.prob(s, a) * f[(s, a)];
            }
        }
        acc
    }

    /// Build directly from a flat vector (used for mixtures); validates mass.
    pub fn from_dist(num_states: usize, num_actions: usize, dist: DVector<f64>) -> Result<Self> {
        if dist.len() != num_states * num_actions {
            return Err(Error::ShapeMismatch {
                context: "occupancy",
                expected: (num_states * num_actions).to_string(),
                actual: dist.len().to_string(),
            });
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > STOCHASTICITY_TOL || dist.iter().any(|&p| p < -NEGATIVE_DUST_TOL) {
            return Err(Error::InvalidDistribution(format!(
                "occupancy mass sums to {sum}"
            )));
        }
        Ok(OccupancyMeasure {
            num_states,
            num_actions,
            dist,
        })
    }
}

/// One observed `(s, a, s')` triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
}

// ---------------------------------------------------------------------------
// The environment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LowRankMdpRepr {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    mu: Vec<f64>,
    phi: Vec<f64>,
    /// Row-major `|S| x |A|`.
    reward: Vec<f64>,
    gamma: f64,
    init_dist: Vec<f64>,
}

/// A fully specified environment: factorized kernel, known reward, discount,
/// and initial distribution. The reward and `d0` are known to all algorithms;
/// only the transition model is learned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LowRankMdpRepr", into = "LowRankMdpRepr")]
pub struct LowRankMdp {
    factorization: Factorization,
    reward: DMatrix<f64>,
    gamma: f64,
    init_dist: DVector<f64>,
}

impl TryFrom<LowRankMdpRepr> for LowRankMdp {
    type Error = Error;

    fn try_from(r: LowRankMdpRepr) -> Result<Self> {
        let fact = Factorization::try_from(FactorizationRepr {
            num_states: r.num_states,
            num_actions: r.num_actions,
            dim: r.dim,
            mu: r.mu,
            phi: r.phi,
        })?;
        let reward = DMatrix::from_row_slice(
            r.num_states,
            r.num_actions,
            &check_len("reward", r.reward, r.num_states * r.num_actions)?,
        );
        let init_dist =
            DVector::from_vec(check_len("init_dist", r.init_dist, r.num_states)?);
        LowRankMdp::new(fact, reward, r.gamma, init_dist)
    }
}

impl From<LowRankMdp> for LowRankMdpRepr {
    fn from(m: LowRankMdp) -> Self {
        LowRankMdpRepr {
            num_states: m.factorization.num_states,
            num_actions: m.factorization.num_actions,
            dim: m.factorization.dim,
            mu: row_major(&m.factorization.mu),
            phi: row_major(&m.factorization.phi),
            reward: row_major(&m.reward),
            gamma: m.gamma,
            init_dist: m.init_dist.iter().copied().collect(),
        }
    }
}

impl LowRankMdp {
    pub fn new(
        factorization: Factorization,
        reward: DMatrix<f64>,
        gamma: f64,
        init_dist: DVector<f64>,
    ) -> Result<Self> {
        if reward.nrows() != factorization.num_states
            || reward.ncols() != factorization.num_actions
        {
            return Err(Error::ShapeMismatch {
                context: "reward",
                expected: format!(
                    "{}x{}",
                    factorization.num_states, factorization.num_actions
                ),
                actual: format!("{}x{}", reward.nrows(), reward.ncols()),
            });
        }
        if init_dist.len() != factorization.num_states {
            return Err(Error::ShapeMismatch {
                context: "init_dist",
                expected: factorization.num_states.to_string(),
                actual: init_dist.len().to_string(),
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidConfig(format!("gamma {gamma} not in [0,1)")));
        }
        let sum: f64 = init_dist.iter().sum();
        if (sum - 1.0).abs() > DIST_SUM_TOL || init_dist.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "init_dist sums to {sum} or has negative entries"
            )));
        }
        Ok(LowRankMdp {
            factorization,
            reward,
            gamma,
            init_dist,
        })
    }

    pub fn factorization(&self) -> &Factorization {
        &self.factorization
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn init_dist(&self) -> &DVector<f64> {
        &self.init_dist
    }

    pub fn num_states(&self) -> usize {
        self.factorization.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.factorization.num_actions
    }

    pub fn dim(&self) -> usize {
        self.factorization.dim
    }

    /// Factorization invariants plus environment-level checks. A per-step
    /// reward above `1 - gamma` only produces a warning: it is a sufficient
    /// condition for normalized trajectory returns, not a necessary one.
    pub fn validate(&self) -> ValidationReport {
        let mut report = self.factorization.validate();
        let max_r = self.reward.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max_r > 1.0 - self.gamma + 1e-12 {
            report.warnings.push(format!(
                "max reward {max_r} exceeds 1 - gamma = {}; trajectory returns may leave [0,1]",
                1.0 - self.gamma
            ));
        }
        report
    }
}

// ---------------------------------------------------------------------------
// Exact evaluation and occupancy
// ---------------------------------------------------------------------------

fn check_policy_shape(p: &TransitionTensor, policy: &Policy) -> Result<()> {
    if policy.num_states() != p.num_states || policy.num_actions() != p.num_actions {
        return Err(Error::ShapeMismatch {
            context: "policy vs transition tensor",
            expected: format!("{}x{}", p.num_states, p.num_actions),
            actual: format!("{}x{}", policy.num_states(), policy.num_actions()),
        });
    }
    Ok(())
}

/// Exact policy evaluation: solves `(I - gamma P_pi) V = r_pi` directly and
/// returns `(V, Q)` with `Q(s,a) = r(s,a) + gamma sum_{s'} P(s'|s,a) V(s')`.
pub fn value_of_policy(
    p: &TransitionTensor,
    reward: &DMatrix<f64>,
    policy: &Policy,
    gamma: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_policy_shape(p, policy)?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidConfig(format!("gamma {gamma} not in [0,1)")));
    }
    let n = p.num_states;
    let p_pi = p.policy_kernel(policy);
    let mut r_pi = DVector::zeros(n);
    for s in 0..n {
        for a in 0..p.num_actions {
            r_pi[s] += policy.prob(s, a) * reward[(s, a)];
        }
    }
    let system = DMatrix::identity(n, n) - p_pi * gamma;
    let v = system
        .lu()
        .solve(&r_pi)
        .expect("I - gamma*P_pi is invertible for gamma < 1");
    let mut q = DMatrix::zeros(n, p.num_actions);
    for s in 0..n {
        for a in 0..p.num_actions {
            let mut next = 0.0;
            let row = p.rows.row(sa_index(s, a, p.num_actions));
            for s_next in 0..n {
                next += row[s_next] * v[s_next];
            }
            q[(s, a)] = reward[(s, a)] + gamma * next;
        }
    }
    Ok((v, q))
}

/// Expected discounted return from the initial distribution.
pub fn initial_value(v: &DVector<f64>, d0: &DVector<f64>) -> f64 {
    v.dot(d0)
}

/// Exact discounted occupancy: solves the flow equation
/// `d(s) = (1-gamma) d0(s) + gamma sum_{s~,a~} P(s|s~,a~) d(s~,a~)`
/// directly, then splits by the policy.
pub fn occupancy(
    p: &TransitionTensor,
    policy: &Policy,
    d0: &DVector<f64>,
    gamma: f64,
) -> Result<OccupancyMeasure> {
    check_policy_shape(p, policy)?;
    let n = p.num_states;
    if d0.len() != n {
        return Err(Error::ShapeMismatch {
            context: "occupancy d0",
            expected: n.to_string(),
            actual: d0.len().to_string(),
        });
    }
    let p_pi = p.policy_kernel(policy);
    let system = DMatrix::identity(n, n) - p_pi.transpose() * gamma;
    let rhs = d0 * (1.0 - gamma);
    let state_occ = system
        .lu()
        .solve(&rhs)
        .expect("I - gamma*P_pi^T is invertible for gamma < 1");
    let mut dist = DVector::zeros(n * p.num_actions);
    for s in 0..n {
        for a in 0..p.num_actions {
            dist[sa_index(s, a, p.num_actions)] = state_occ[s] * policy.prob(s, a);
        }
    }
    Ok(OccupancyMeasure {
        num_states: n,
        num_actions: p.num_actions,
        dist,
    })
}

/// Result of one roll-in draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RollinSample {
    pub state: usize,
    pub steps: usize,
    /// The safety cap fired and the walk was truncated at the current state.
    pub capped: bool,
}

/// Default roll-in safety cap; firing probability per rollout is at most
/// `gamma^(100/(1-gamma)) <= e^-100`.
pub fn default_rollin_cap(gamma: f64) -> usize {
    if gamma == 0.0 {
        100
    } else {
        (100.0 / (1.0 - gamma)).ceil() as usize
    }
}

/// Draw a state from the discounted occupancy of `policy`: starting at
/// `s0 ~ d0`, terminate with probability `1-gamma` at every step, otherwise
/// act and transition. Returns the terminal state and the number of actions
/// executed.
pub fn sample_rollin(
    p: &TransitionTensor,
    policy: &Policy,
    d0: &DVector<f64>,
    gamma: f64,
    cap: Option<usize>,
    rng: &mut impl Rng,
) -> RollinSample {
    let cap = cap.unwrap_or_else(|| default_rollin_cap(gamma));
    let mut state = sample_index(d0.iter().copied(), rng);
    let mut steps = 0;
    loop {
        if rng.random::<f64>() < 1.0 - gamma {
            return RollinSample {
                state,
                steps,
                capped: false,
            };
        }
        if steps >= cap {
            return RollinSample {
                state,
                steps,
                capped: true,
            };
        }
        let a = policy.sample_action(state, rng);
        state = p.sample_next(state, a, rng);
        steps += 1;
    }
}

/// Collect one training triple: `s ~ d^pi` by roll-in, `a` uniform over
/// actions, `s' ~ P(.|s,a)`. The capped flag propagates from the roll-in.
pub fn sample_triple(
    p_true: &TransitionTensor,
    policy: &Policy,
    d0: &DVector<f64>,
    gamma: f64,
    rng: &mut impl Rng,
) -> (Transition, bool) {
    let rollin = sample_rollin(p_true, policy, d0, gamma, None, rng);
    let a = rng.random_range(0..p_true.num_actions);
    let s_next = p_true.sample_next(rollin.state, a, rng);
    (
        Transition {
            s: rollin.state,
            a,
            s_next,
        },
        rollin.capped,
    )
}

/// Which side of the two-MDP value identity to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapForm {
    /// Expectation under the occupancy of the bonus-augmented model, with Q
    /// taken in the reference model.
    First,
    /// Expectation under the occupancy of the reference model, with Q taken
    /// in the bonus-augmented model.
    Second,
}

/// Evaluate `V^pi_{P_model, r+b} - V^pi_{P_ref, r}` through either side of the
/// exact value-difference identity. Both forms agree with the direct
/// difference of policy evaluations.
#[allow(clippy::too_many_arguments)]
pub fn simulation_gap(
    p_model: &TransitionTensor,
    p_ref: &TransitionTensor,
    reward: &DMatrix<f64>,
    bonus: &DMatrix<f64>,
    policy: &Policy,
    d0: &DVector<f64>,
    gamma: f64,
    form: GapForm,
) -> Result<f64> {
    if p_model.num_states != p_ref.num_states || p_model.num_actions != p_ref.num_actions {
        return Err(Error::ShapeMismatch {
            context: "simulation gap tensors",
            expected: format!("{}x{}", p_model.num_states, p_model.num_actions),
            actual: format!("{}x{}", p_ref.num_states, p_ref.num_actions),
        });
    }
    let (occ, v_next) = match form {
        GapForm::First => {
            let occ = occupancy(p_model, policy, d0, gamma)?;
            // V^pi in (P_ref, r): its value vector is E_{a~pi} Q^pi(s', a).
            let (v, _) = value_of_policy(p_ref, reward, policy, gamma)?;
            (occ, v)
        }
        GapForm::Second => {
            let occ = occupancy(p_ref, policy, d0, gamma)?;
            let augmented = reward + bonus;
            let (v, _) = value_of_policy(p_model, &augmented, policy, gamma)?;
            (occ, v)
        }
    };
    let mut acc = 0.0;
    for s in 0..p_model.num_states {
        for a in 0..p_model.num_actions {
            let w = occ.prob(s, a);
            if w == 0.0 {
                continue;
            }
            let idx = sa_index(s, a, p_model.num_actions);
            let mut delta = 0.0;
            for s_next in 0..p_model.num_states {
                delta += (p_model.rows[(idx, s_next)] - p_ref.rows[(idx, s_next)]) * v_next[s_next];
            }
            acc += w * (bonus[(s, a)] + gamma * delta);
        }
    }
    Ok(acc / (1.0 - gamma))
}
