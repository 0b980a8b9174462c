//! Whether a coalition can pin down the private vectors `b` and `c` from
//! what it knows, and explicit alternative inputs when it cannot.
//!
//! Known entries are given by index. Rows of `A` split into known `b` rows
//! and unknown `b` rows; the unknown rows split by columns into `A21`
//! (columns of known `c`) and `A22` (columns of unknown `c`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocols::Party;
use crate::qp::{QPInstance, QpError};

/// Zero tolerance for signs and slacks.
pub const SIGN_TOLERANCE: f64 = 1e-9;
/// Largest objective value accepted as `A21ᵀδ = 0`.
pub const CERTIFICATE_OPTIMUM: f64 = 1e-8;
/// Re-check bound on `‖A21ᵀδ‖_∞`.
pub const CERTIFICATE_CHECK: f64 = 1e-6;
const REGULARIZATION: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrivacyError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Qp(#[from] QpError),
}

fn default_coalition() -> Vec<Party> {
    vec![Party::Target]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalitionKnowledge {
    #[serde(default = "default_coalition")]
    pub coalition: Vec<Party>,
    #[serde(default)]
    pub known_b_indices: Vec<usize>,
    #[serde(default)]
    pub known_c_indices: Vec<usize>,
    #[serde(default = "yes")]
    pub q_public: bool,
    #[serde(default = "yes")]
    pub a_public: bool,
    #[serde(default = "yes")]
    pub has_solution: bool,
    /// Signs of the unprojected optimal dual, when the coalition saw them.
    #[serde(default)]
    pub sign_vector: Option<Vec<i8>>,
}

impl Default for CoalitionKnowledge {
    fn default() -> Self {
        Self {
            coalition: default_coalition(),
            known_b_indices: Vec::new(),
            known_c_indices: Vec::new(),
            q_public: true,
            a_public: true,
            has_solution: true,
            sign_vector: None,
        }
    }
}

impl CoalitionKnowledge {
    pub fn validate(&self, m: usize, n: usize) -> Result<(), PrivacyError> {
        if self.coalition.contains(&Party::Cloud) && self.coalition.contains(&Party::Target) {
            return Err(PrivacyError::Domain("the cloud and the target may not collude".into()));
        }
        if let Some(&i) = self.known_b_indices.iter().find(|&&i| i >= m) {
            return Err(PrivacyError::Domain(format!("known b index {i} out of range for m = {m}")));
        }
        if let Some(&j) = self.known_c_indices.iter().find(|&&j| j >= n) {
            return Err(PrivacyError::Domain(format!("known c index {j} out of range for n = {n}")));
        }
        if let Some(t) = &self.sign_vector {
            if t.len() != m || t.iter().any(|s| !(-1..=1).contains(s)) {
                return Err(PrivacyError::Domain("sign vector must hold m entries in {-1, 0, 1}".into()));
            }
        }
        Ok(())
    }

    pub fn unknown_b(&self, m: usize) -> Vec<usize> {
        (0..m).filter(|i| !self.known_b_indices.contains(i)).collect()
    }

    pub fn unknown_c(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|j| !self.known_c_indices.contains(j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCertificate {
    /// Indexed like the unknown rows of `b`.
    pub delta: Vec<f64>,
    pub rows: Vec<usize>,
    pub residual: f64,
    /// `A22ᵀδ ≠ 0`, which also hides `c`.
    pub hides_c: bool,
}

fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Searches `δ ⪰ 0`, `1ᵀδ = 1` with `A21ᵀδ = 0` by minimizing `‖A21ᵀδ‖²`
/// over the simplex with the exact plaintext solver.
pub fn delta_certificate_for(
    a: &DMatrix<f64>,
    known_b: &[usize],
    known_c: &[usize],
) -> Result<Option<DeltaCertificate>, PrivacyError> {
    let rows: Vec<usize> = (0..a.nrows()).filter(|i| !known_b.contains(i)).collect();
    if rows.is_empty() {
        return Err(PrivacyError::Domain("every entry of b is known".into()));
    }
    let known_cols: Vec<usize> = (0..a.ncols()).filter(|j| known_c.contains(j)).collect();
    let unknown_cols: Vec<usize> = (0..a.ncols()).filter(|j| !known_c.contains(j)).collect();
    let a21 = submatrix(a, &rows, &known_cols);
    let a22 = submatrix(a, &rows, &unknown_cols);
    let k = rows.len();

    // ½δᵀ(2·A21·A21ᵀ + εI)δ subject to -δ ⪯ 0, 1ᵀδ ⪯ 1, -1ᵀδ ⪯ -1
    let q = &a21 * a21.transpose() * 2.0 + DMatrix::identity(k, k) * REGULARIZATION;
    let mut cons = DMatrix::zeros(k + 2, k);
    let mut bound = DVector::zeros(k + 2);
    for i in 0..k {
        cons[(i, i)] = -1.0;
        cons[(k, i)] = 1.0;
        cons[(k + 1, i)] = -1.0;
    }
    bound[k] = 1.0;
    bound[k + 1] = -1.0;
    let qp = QPInstance::new(q, cons, bound, DVector::zeros(k))?;
    let solution = qp.active_set_oracle()?;
    let delta = solution.x_star.map(|v| v.max(0.0));
    let projected = a21.transpose() * &delta;
    let objective = projected.norm_squared();
    if objective > CERTIFICATE_OPTIMUM || projected.amax() > CERTIFICATE_CHECK {
        return Ok(None);
    }
    let hides_c = (a22.transpose() * &delta).amax() > CERTIFICATE_CHECK;
    Ok(Some(DeltaCertificate { delta: delta.iter().copied().collect(), rows, residual: objective, hides_c }))
}

/// The search with the first `m_bar` rows of `b` and first `n_bar` entries
/// of `c` known.
pub fn delta_certificate(a: &DMatrix<f64>, m_bar: usize, n_bar: usize) -> Result<Option<DeltaCertificate>, PrivacyError> {
    if m_bar >= a.nrows() {
        return Err(PrivacyError::Domain(format!("m_bar = {m_bar} must be below m = {}", a.nrows())));
    }
    let known_b: Vec<usize> = (0..m_bar).collect();
    let known_c: Vec<usize> = (0..n_bar.min(a.ncols())).collect();
    delta_certificate_for(a, &known_b, &known_c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum WitnessCase {
    /// An unknown constraint has slack; its bound is raised.
    Inactive { index: usize },
    /// All unknown constraints are tight; dual mass is moved along `δ` and one
    /// bound is raised.
    Tight { index: usize, epsilon: f64 },
    /// Dual mass is added along `δ` and absorbed by `c`.
    ShiftC { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub mu: Vec<f64>,
    #[serde(flatten)]
    pub case: WitnessCase,
    pub kkt_residual: f64,
}

fn finish_witness(
    inst: &QPInstance,
    x_star: &DVector<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    mu: DVector<f64>,
    case: WitnessCase,
) -> Result<Witness, PrivacyError> {
    let kkt_residual = inst.with_private_data(b.clone(), c.clone())?.kkt_residual(x_star, &mu)?;
    Ok(Witness {
        b: b.iter().copied().collect(),
        c: c.iter().copied().collect(),
        mu: mu.iter().copied().collect(),
        case,
        kkt_residual,
    })
}

fn raised(b_i: f64) -> f64 {
    b_i + 1.0f64.max(b_i.abs())
}

/// Alternative private inputs `(b', c', μ')` that keep `x_star` optimal.
///
/// Uses a slack unknown constraint when there is one. Otherwise needs a
/// certificate `δ` and moves dual mass along it.
pub fn construct_witness(
    inst: &QPInstance,
    x_star: &DVector<f64>,
    mu_star: &DVector<f64>,
    knowledge: &CoalitionKnowledge,
    certificate: Option<&DeltaCertificate>,
) -> Result<Witness, PrivacyError> {
    let (m, n) = (inst.m(), inst.n());
    knowledge.validate(m, n)?;
    let unknown = knowledge.unknown_b(m);
    let scale = 1.0 + inst.b().amax();
    let slack = inst.b() - inst.a() * x_star;

    if let Some(&i) = unknown.iter().find(|&&i| slack[i] > SIGN_TOLERANCE * scale) {
        let mut b = inst.b().clone();
        b[i] = raised(b[i]);
        let mut mu = mu_star.clone();
        mu[i] = 0.0;
        return finish_witness(inst, x_star, b, inst.c().clone(), mu, WitnessCase::Inactive { index: i });
    }

    let cert = certificate.ok_or_else(|| {
        PrivacyError::Precondition("every unknown constraint is tight and no certificate was supplied".into())
    })?;
    let delta = lift_delta(cert, m)?;
    let (epsilon, index) = cert
        .rows
        .iter()
        .filter(|&&i| delta[i] > 0.0)
        .map(|&i| (mu_star[i] / delta[i], i))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .expect("a nonzero certificate has a positive entry");
    let mut mu = mu_star - &delta * epsilon;
    mu[index] = 0.0;
    let c = inst.c() + dual_shift_into_c(inst, knowledge, &delta) * epsilon;
    let mut b = inst.b().clone();
    b[index] = raised(b[index]);
    finish_witness(inst, x_star, b, c, mu, WitnessCase::Tight { index, epsilon })
}

/// The second construction: `μ' = μ + εδ`, `c' = c - ε·A22ᵀδ`, with the
/// bounds along `δ` set tight.
pub fn construct_c_witness(
    inst: &QPInstance,
    x_star: &DVector<f64>,
    mu_star: &DVector<f64>,
    knowledge: &CoalitionKnowledge,
    certificate: &DeltaCertificate,
    epsilon: f64,
) -> Result<Witness, PrivacyError> {
    knowledge.validate(inst.m(), inst.n())?;
    if epsilon <= 0.0 {
        return Err(PrivacyError::Precondition("epsilon must be positive".into()));
    }
    let delta = lift_delta(certificate, inst.m())?;
    let mu = mu_star + &delta * epsilon;
    let c = inst.c() - dual_shift_into_c(inst, knowledge, &delta) * epsilon;
    let tight = inst.a() * x_star;
    let mut b = inst.b().clone();
    for &i in &certificate.rows {
        if delta[i] > 0.0 {
            b[i] = tight[i];
        }
    }
    finish_witness(inst, x_star, b, c, mu, WitnessCase::ShiftC { epsilon })
}

fn lift_delta(cert: &DeltaCertificate, m: usize) -> Result<DVector<f64>, PrivacyError> {
    if cert.delta.iter().all(|&d| d <= 0.0) || cert.delta.iter().any(|&d| d < 0.0) {
        return Err(PrivacyError::Precondition("delta must be nonnegative and nonzero".into()));
    }
    let mut full = DVector::zeros(m);
    for (&i, &d) in cert.rows.iter().zip(&cert.delta) {
        full[i] = d;
    }
    Ok(full)
}

/// `Aᵀδ` restricted to unknown entries of `c`.
fn dual_shift_into_c(inst: &QPInstance, knowledge: &CoalitionKnowledge, delta: &DVector<f64>) -> DVector<f64> {
    let mut shift = inst.a().transpose() * delta;
    for &j in &knowledge.known_c_indices {
        shift[j] = 0.0;
    }
    shift
}

fn signs_of(v: &DVector<f64>) -> Vec<i8> {
    v.iter()
        .map(|&x| {
            if x.abs() <= SIGN_TOLERANCE {
                0
            } else if x > 0.0 {
                1
            } else {
                -1
            }
        })
        .collect()
}

/// `sign(μ* + ∇g(μ*))`.
pub fn unprojected_sign(inst: &QPInstance, mu_star: &DVector<f64>) -> Result<Vec<i8>, PrivacyError> {
    unprojected_sign_with_step(inst, mu_star, 1.0)
}

/// `sign(μ* + η∇g(μ*))`, what the alternative iteration reveals.
pub fn unprojected_sign_with_step(inst: &QPInstance, mu_star: &DVector<f64>, eta: f64) -> Result<Vec<i8>, PrivacyError> {
    if mu_star.iter().any(|&v| v < -SIGN_TOLERANCE) {
        return Err(PrivacyError::Precondition("optimal dual must be nonnegative".into()));
    }
    Ok(signs_of(&(mu_star + inst.dual_gradient(mu_star)? * eta)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub b_retrievable: bool,
    pub c_retrievable: bool,
    pub t: Vec<i8>,
    /// Signs with the step size applied, when computed from `μ*`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_eta: Option<Vec<i8>>,
    /// Indices where `t` and `t_eta` differ.
    pub sign_disagreement: Vec<usize>,
    pub explanation: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

/// Decides unique retrievability of `b` and `c` for the coalition.
///
/// A coalition containing the target reasons from `x*` and the sign vector:
/// `b` is pinned down iff no unknown constraint has a negative sign, `c`
/// iff no constraint has a positive sign. A cloud-side coalition lacks `x*`
/// and is judged by counting the entries it misses.
pub fn retrievability_verdict(
    knowledge: &CoalitionKnowledge,
    inst: &QPInstance,
    x_star: &DVector<f64>,
    mu_star: Option<&DVector<f64>>,
) -> Result<Verdict, PrivacyError> {
    let (m, n) = (inst.m(), inst.n());
    knowledge.validate(m, n)?;
    let unknown_b = knowledge.unknown_b(m);
    let unknown_c = knowledge.unknown_c(n);
    let mut explanation = Vec::new();

    let (t, t_eta) = match (&knowledge.sign_vector, mu_star) {
        (Some(t), _) => (t.clone(), None),
        (None, Some(mu)) => {
            let eta = if m == 0 { 1.0 } else { inst.step_size()? };
            (unprojected_sign(inst, mu)?, Some(unprojected_sign_with_step(inst, mu, eta)?))
        }
        (None, None) => {
            return Err(PrivacyError::Precondition("need either a sign vector or the optimal dual".into()));
        }
    };
    let sign_disagreement: Vec<usize> = t_eta
        .as_ref()
        .map(|te| (0..m).filter(|&i| te[i] != t[i]).collect())
        .unwrap_or_default();
    if !sign_disagreement.is_empty() {
        explanation.push(format!("signs with and without the step size differ at {sign_disagreement:?}"));
    }

    let sees_solution = knowledge.coalition.contains(&Party::Target) && knowledge.has_solution;
    let (b_retrievable, c_retrievable) = if !sees_solution {
        explanation.push(format!(
            "without x*, the coalition misses {} of {m} entries of b and {} of {n} entries of c",
            unknown_b.len(),
            unknown_c.len()
        ));
        (unknown_b.is_empty(), unknown_c.is_empty())
    } else {
        let b_ret = if unknown_b.is_empty() {
            true
        } else if !knowledge.a_public {
            explanation.push("A is private, so b = A x* cannot be formed".into());
            false
        } else if let Some(&i) = unknown_b.iter().find(|&&i| t[i] < 0) {
            explanation.push(format!("constraint {i} is inactive (t = -1); its bound can be raised freely"));
            false
        } else {
            explanation.push("no unknown constraint is inactive, so b = A x* on every unknown row".into());
            true
        };
        let c_ret = if unknown_c.is_empty() {
            true
        } else if !knowledge.q_public {
            explanation.push("Q is private, so c = -Q x* cannot be formed".into());
            false
        } else if let Some(i) = (0..m).find(|&i| t[i] > 0) {
            explanation.push(format!("constraint {i} is active (t = +1); its multiplier masks c"));
            false
        } else {
            explanation.push("no constraint is active, so Q x* + c = 0 reveals c".into());
            true
        };
        (b_ret, c_ret)
    };

    let witness = match mu_star {
        Some(mu) if !b_retrievable && sees_solution && knowledge.a_public => {
            let cert = if unknown_b.len() <= 10 {
                delta_certificate_for(inst.a(), &knowledge.known_b_indices, &knowledge.known_c_indices)?
            } else {
                None
            };
            construct_witness(inst, x_star, mu, knowledge, cert.as_ref()).ok()
        }
        _ => None,
    };
    Ok(Verdict { b_retrievable, c_retrievable, t, t_eta, sign_disagreement, explanation, witness })
}
