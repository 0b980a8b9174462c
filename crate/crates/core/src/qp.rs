//! Plaintext quadratic programs `min ½xᵀQx + cᵀx  s.t.  Ax ⪯ b` and their duals.
//!
//! Everything here runs in the clear and serves as the reference the encrypted
//! pipeline is measured against.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::RandomSource;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Which agent supplies each entry of `b` and `c`. The cloud always owns `Q` and `A`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Owners {
    pub b: Vec<usize>,
    pub c: Vec<usize>,
}

impl Owners {
    pub fn round_robin(m: usize, n: usize, agents: usize) -> Self {
        let agents = agents.max(1);
        Self { b: (0..m).map(|i| i % agents).collect(), c: (0..n).map(|j| j % agents).collect() }
    }

    pub fn agent_count(&self) -> usize {
        self.b.iter().chain(&self.c).max().map_or(0, |&a| a + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct QPInstance {
    q: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    owners: Owners,
    q_inv: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct InstanceFile {
    n: usize,
    m: usize,
    Q: Vec<Vec<f64>>,
    A: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    #[serde(default)]
    owners: Option<Owners>,
}

fn rows_to_matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>, QpError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(QpError::Dimension(format!("{name} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl TryFrom<InstanceFile> for QPInstance {
    type Error = QpError;

    fn try_from(f: InstanceFile) -> Result<Self, QpError> {
        let q = rows_to_matrix(&f.Q, f.n, f.n, "Q")?;
        let a = rows_to_matrix(&f.A, f.m, f.n, "A")?;
        let owners = f.owners.unwrap_or_else(|| Owners::round_robin(f.m, f.n, 1));
        QPInstance::with_owners(q, a, DVector::from_vec(f.b), DVector::from_vec(f.c), owners)
    }
}

impl From<QPInstance> for InstanceFile {
    fn from(inst: QPInstance) -> Self {
        InstanceFile {
            n: inst.n(),
            m: inst.m(),
            Q: matrix_to_rows(&inst.q),
            A: matrix_to_rows(&inst.a),
            b: inst.b.iter().copied().collect(),
            c: inst.c.iter().copied().collect(),
            owners: Some(inst.owners),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x_star: DVector<f64>,
    pub mu_star: DVector<f64>,
    pub kkt_residual: f64,
}

impl QPInstance {
    pub fn new(q: DMatrix<f64>, a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self, QpError> {
        let owners = Owners::round_robin(a.nrows(), q.nrows(), 1);
        Self::with_owners(q, a, b, c, owners)
    }

    pub fn with_owners(
        q: DMatrix<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DVector<f64>,
        owners: Owners,
    ) -> Result<Self, QpError> {
        let n = q.nrows();
        if q.ncols() != n || n == 0 {
            return Err(QpError::Dimension(format!("Q must be square and non-empty, got {}x{}", n, q.ncols())));
        }
        let m = a.nrows();
        if a.ncols() != n {
            return Err(QpError::Dimension(format!("A has {} columns, expected {n}", a.ncols())));
        }
        if b.len() != m || c.len() != n {
            return Err(QpError::Dimension(format!("b has {} entries, c has {}; expected {m} and {n}", b.len(), c.len())));
        }
        if owners.b.len() != m || owners.c.len() != n {
            return Err(QpError::Dimension("ownership tags must cover every entry of b and c".into()));
        }
        let scale = q.amax().max(1.0);
        if (&q - q.transpose()).amax() > 1e-9 * scale {
            return Err(QpError::Domain("Q is not symmetric".into()));
        }
        let chol = q
            .clone()
            .cholesky()
            .ok_or_else(|| QpError::Domain("Q is not positive definite".into()))?;
        let q_inv = chol.inverse();
        Ok(Self { q, a, b, c, owners, q_inv })
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn owners(&self) -> &Owners {
        &self.owners
    }

    pub fn q_inv(&self) -> &DMatrix<f64> {
        &self.q_inv
    }

    /// Same matrices with replaced private vectors.
    pub fn with_private_data(&self, b: DVector<f64>, c: DVector<f64>) -> Result<Self, QpError> {
        Self::with_owners(self.q.clone(), self.a.clone(), b, c, self.owners.clone())
    }

    /// `A Q⁻¹ Aᵀ`, the negated dual Hessian.
    pub fn dual_hessian(&self) -> DMatrix<f64> {
        &self.a * &self.q_inv * self.a.transpose()
    }

    fn check_dual(&self, mu: &DVector<f64>) -> Result<(), QpError> {
        if mu.len() != self.m() {
            return Err(QpError::Dimension(format!("mu has {} entries, expected {}", mu.len(), self.m())));
        }
        Ok(())
    }

    /// `x(μ) = -Q⁻¹(Aᵀμ + c)`.
    pub fn primal_from_dual(&self, mu: &DVector<f64>) -> Result<DVector<f64>, QpError> {
        self.check_dual(mu)?;
        Ok(-(&self.q_inv * (self.a.transpose() * mu + &self.c)))
    }

    pub fn primal_objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    /// `g(μ) = -½(Aᵀμ + c)ᵀQ⁻¹(Aᵀμ + c) - bᵀμ`.
    pub fn dual_objective(&self, mu: &DVector<f64>) -> Result<f64, QpError> {
        self.check_dual(mu)?;
        let w = self.a.transpose() * mu + &self.c;
        Ok(-0.5 * w.dot(&(&self.q_inv * &w)) - self.b.dot(mu))
    }

    /// `∇g(μ) = -AQ⁻¹(Aᵀμ + c) - b`.
    pub fn dual_gradient(&self, mu: &DVector<f64>) -> Result<DVector<f64>, QpError> {
        Ok(&self.a * self.primal_from_dual(mu)? - &self.b)
    }

    /// `1 / λ_max(AQ⁻¹Aᵀ)`.
    pub fn step_size(&self) -> Result<f64, QpError> {
        Ok(1.0 / largest_eigenvalue(&self.dual_hessian())?)
    }

    pub fn kkt_residual(&self, x: &DVector<f64>, mu: &DVector<f64>) -> Result<f64, QpError> {
        self.check_dual(mu)?;
        if x.len() != self.n() {
            return Err(QpError::Dimension(format!("x has {} entries, expected {}", x.len(), self.n())));
        }
        let stationarity = (&self.q * x + self.a.transpose() * mu + &self.c).amax();
        let slack = &self.a * x - &self.b;
        let primal = slack.iter().fold(0.0f64, |acc, &s| acc.max(s));
        let dual = mu.iter().fold(0.0f64, |acc, &v| acc.max(-v));
        let complementarity = mu.iter().zip(slack.iter()).fold(0.0f64, |acc, (&v, &s)| acc.max((v * s).abs()));
        Ok(stationarity.max(primal).max(dual).max(complementarity))
    }

    pub fn solution_from_dual(&self, mu: DVector<f64>) -> Result<Solution, QpError> {
        let x_star = self.primal_from_dual(&mu)?;
        let kkt_residual = self.kkt_residual(&x_star, &mu)?;
        Ok(Solution { x_star, mu_star: mu, kkt_residual })
    }

    /// `K` projected gradient steps from `mu0` with `η = 1/λ_max`.
    pub fn solve_dual_ascent_from(&self, mu0: DVector<f64>, k: usize) -> Result<Solution, QpError> {
        if k == 0 {
            return Err(QpError::Domain("iteration count K must be at least 1".into()));
        }
        self.check_dual(&mu0)?;
        if self.m() == 0 {
            return self.solution_from_dual(mu0);
        }
        let eta = self.step_size()?;
        let mut mu = mu0;
        for _ in 0..k {
            let grad = self.dual_gradient(&mu)?;
            mu = project_step(&mu, &grad, eta);
        }
        self.solution_from_dual(mu)
    }

    /// Dual ascent from the seeded initial point shared with the encrypted solver.
    pub fn solve_dual_ascent(&self, k: usize, seed: u64, l_f: u32) -> Result<Solution, QpError> {
        self.solve_dual_ascent_from(initial_dual(self.m(), seed, l_f), k)
    }

    /// Exact solution by enumerating every active set.
    pub fn active_set_oracle(&self) -> Result<Solution, QpError> {
        let (n, m) = (self.n(), self.m());
        if m > 12 {
            return Err(QpError::Domain(format!("active-set enumeration limited to m <= 12, got {m}")));
        }
        let scale = 1.0 + self.b.amax() + self.c.amax();
        let mut best: Option<Solution> = None;
        for mask in 0u32..(1 << m) {
            let active: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
            let k = active.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            let mut rhs = DVector::zeros(n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&self.q);
            rhs.rows_mut(0, n).copy_from(&(-&self.c));
            for (r, &i) in active.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + r, j)] = self.a[(i, j)];
                    kkt[(j, n + r)] = self.a[(i, j)];
                }
                rhs[n + r] = self.b[i];
            }
            let svd = kkt.clone().svd(true, true);
            if svd.singular_values.min() <= 1e-12 * svd.singular_values.max().max(1.0) {
                continue;
            }
            let Ok(sol) = svd.solve(&rhs, 0.0) else { continue };
            let x = sol.rows(0, n).into_owned();
            let mut mu = DVector::zeros(m);
            for (r, &i) in active.iter().enumerate() {
                mu[i] = sol[n + r];
            }
            if mu.iter().any(|&v| v < -1e-9 * scale) {
                continue;
            }
            if (&self.a * &x - &self.b).iter().any(|&s| s > 1e-9 * scale) {
                continue;
            }
            mu.apply(|v| *v = v.max(0.0));
            let candidate = self.solution_from_dual(mu)?;
            let candidate = Solution { x_star: x.clone(), kkt_residual: self.kkt_residual(&x, &candidate.mu_star)?, ..candidate };
            if best.as_ref().is_none_or(|b| candidate.kkt_residual < b.kkt_residual) {
                best = Some(candidate);
            }
        }
        best.ok_or_else(|| QpError::Domain("no active set satisfies the optimality conditions; instance infeasible".into()))
    }

    /// `λ_max / λ_min` of `AQ⁻¹Aᵀ`; infinite when the dual Hessian is singular.
    pub fn dual_condition_number(&self) -> f64 {
        if self.m() == 0 {
            return 1.0;
        }
        let eig = SymmetricEigen::new(self.dual_hessian()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if lo <= 1e-12 * hi.max(1e-300) {
            f64::INFINITY
        } else {
            hi / lo
        }
    }
}

/// `max{0, μ + η ∇g}` elementwise.
pub fn project_step(mu: &DVector<f64>, grad: &DVector<f64>, eta: f64) -> DVector<f64> {
    (mu + grad * eta).map(|v| v.max(0.0))
}

/// Seeded `μ₀` with entries `k / 2^l_f`, `k` uniform in `[1, 2^l_f]`.
pub fn initial_dual(m: usize, seed: u64, l_f: u32) -> DVector<f64> {
    let mut rng = RandomSource::derive(seed, "mu0");
    let denom = 1u64 << l_f;
    DVector::from_iterator(m, (0..m).map(|_| (rng.index(denom as usize) as u64 + 1) as f64 / denom as f64))
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration, with a full eigendecomposition if it fails to settle.
pub fn largest_eigenvalue(mat: &DMatrix<f64>) -> Result<f64, QpError> {
    let m = mat.nrows();
    if m == 0 || mat.amax() == 0.0 {
        return Err(QpError::Domain("step size undefined for a zero dual Hessian".into()));
    }
    let mut v = DVector::from_fn(m, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let w = mat * &v;
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= 1e-9 * next.abs() {
            return Ok(next);
        }
        lambda = next;
    }
    let max = SymmetricEigen::new(mat.clone()).eigenvalues.max();
    if max <= 0.0 {
        return Err(QpError::Domain("dual Hessian has no positive eigenvalue".into()));
    }
    Ok(max)
}

/// Least-squares initial-state estimation over a horizon of `ys.len()` outputs,
/// optionally restricted to the polyhedron `D x₀ ⪯ b`.
pub fn build_state_estimation(
    a_sys: &DMatrix<f64>,
    c_out: &DMatrix<f64>,
    ys: &[DVector<f64>],
    polyhedron: Option<(DMatrix<f64>, DVector<f64>)>,
) -> Result<QPInstance, QpError> {
    let n = a_sys.nrows();
    if a_sys.ncols() != n || c_out.ncols() != n {
        return Err(QpError::Dimension("A must be square and C must have as many columns as A".into()));
    }
    let p = c_out.nrows();
    if ys.is_empty() || ys.iter().any(|y| y.len() != p) {
        return Err(QpError::Dimension(format!("every measurement must have {p} entries")));
    }
    let horizon = ys.len();
    let mut obs = DMatrix::zeros(horizon * p, n);
    let mut y = DVector::zeros(horizon * p);
    let mut power = DMatrix::identity(n, n);
    for (t, yt) in ys.iter().enumerate() {
        obs.view_mut((t * p, 0), (p, n)).copy_from(&(c_out * &power));
        y.rows_mut(t * p, p).copy_from(yt);
        power = a_sys * power;
    }
    if obs.clone().svd(false, false).rank(1e-10 * obs.amax().max(1.0)) < n {
        return Err(QpError::Domain("observability matrix is rank deficient".into()));
    }
    let q = obs.transpose() * &obs;
    let q = (&q + q.transpose()) * 0.5;
    let c = -(obs.transpose() * y);
    let (d, b) = polyhedron.unwrap_or_else(|| (DMatrix::zeros(0, n), DVector::zeros(0)));
    QPInstance::new(q, d, b, c)
}

/// Finite-horizon tracking problem with state bounds, condensed onto the inputs.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q_cost: DMatrix<f64>,
    pub r_cost: DMatrix<f64>,
    pub x0: DVector<f64>,
    /// Lower and upper state bounds for `t = 1..=T`.
    pub x_lower: Vec<DVector<f64>>,
    pub x_upper: Vec<DVector<f64>>,
    /// State references for `t = 1..=T`.
    pub x_ref: Vec<DVector<f64>>,
    /// Input references for `t = 0..T`.
    pub u_ref: Vec<DVector<f64>>,
    pub horizon: usize,
}

/// Condenses the dynamics so the decision variable is `(u_0, …, u_{T-1})` and
/// each state bound becomes two rows of `A`, giving `2·n_x·T` constraints.
pub fn build_mpc(p: &MpcProblem) -> Result<QPInstance, QpError> {
    let nx = p.a.nrows();
    let nu = p.b.ncols();
    let ny = p.c.nrows();
    let t_h = p.horizon;
    let dims_ok = p.a.ncols() == nx
        && p.b.nrows() == nx
        && p.c.ncols() == nx
        && p.q_cost.shape() == (ny, ny)
        && p.r_cost.shape() == (nu, nu)
        && p.x0.len() == nx
        && t_h >= 1
        && [&p.x_lower, &p.x_upper, &p.x_ref].iter().all(|v| v.len() == t_h && v.iter().all(|x| x.len() == nx))
        && p.u_ref.len() == t_h
        && p.u_ref.iter().all(|u| u.len() == nu);
    if !dims_ok {
        return Err(QpError::Dimension("MPC matrices, bounds and references are inconsistent".into()));
    }
    for (name, m) in [("Q_cost", &p.q_cost), ("R_cost", &p.r_cost)] {
        if m.clone().cholesky().is_none() {
            return Err(QpError::Domain(format!("{name} must be positive definite")));
        }
    }

    // X = Φ x0 + Γ U with X = (x_1, …, x_T)
    let mut phi = DMatrix::zeros(nx * t_h, nx);
    let mut gamma = DMatrix::zeros(nx * t_h, nu * t_h);
    let mut powers = vec![DMatrix::identity(nx, nx)];
    for t in 1..=t_h {
        let next = &p.a * &powers[t - 1];
        powers.push(next);
    }
    for t in 1..=t_h {
        phi.view_mut(((t - 1) * nx, 0), (nx, nx)).copy_from(&powers[t]);
        for j in 0..t {
            gamma.view_mut(((t - 1) * nx, j * nu), (nx, nu)).copy_from(&(&powers[t - 1 - j] * &p.b));
        }
    }
    let state_weight = p.c.transpose() * &p.q_cost * &p.c;
    let mut q_bar = DMatrix::zeros(nx * t_h, nx * t_h);
    let mut r_bar = DMatrix::zeros(nu * t_h, nu * t_h);
    for t in 0..t_h {
        q_bar.view_mut((t * nx, t * nx), (nx, nx)).copy_from(&state_weight);
        r_bar.view_mut((t * nu, t * nu), (nu, nu)).copy_from(&p.r_cost);
    }
    let stack = |vs: &[DVector<f64>]| DVector::from_iterator(vs.iter().map(|v| v.len()).sum(), vs.iter().flat_map(|v| v.iter().copied()));
    let free = &phi * &p.x0;
    let x_ref = stack(&p.x_ref);
    let u_ref = stack(&p.u_ref);

    let h = gamma.transpose() * &q_bar * &gamma + &r_bar;
    let h = (&h + h.transpose()) * 0.5;
    let f = gamma.transpose() * &q_bar * (&free - x_ref) - &r_bar * u_ref;

    let a_ineq = DMatrix::from_fn(2 * nx * t_h, nu * t_h, |i, j| {
        if i < nx * t_h { gamma[(i, j)] } else { -gamma[(i - nx * t_h, j)] }
    });
    let upper = stack(&p.x_upper) - &free;
    let lower = stack(&p.x_lower) - &free;
    let b = DVector::from_iterator(2 * nx * t_h, upper.iter().copied().chain(lower.iter().map(|v| -v)));
    QPInstance::new(h, a_ineq, b, f)
}

/// Random strictly feasible instance with `Q = MᵀM + nI` and `b = Ax₀ + slack`.
pub fn random_instance(n: usize, m: usize, seed: u64) -> Result<QPInstance, QpError> {
    if n == 0 || m == 0 {
        return Err(QpError::Domain("random instances need n, m >= 1".into()));
    }
    let mut rng = RandomSource::derive(seed, "instance");
    let mut uniform = |lo: f64, hi: f64| rng.uniform(lo, hi);
    let mm = DMatrix::from_fn(n, n, |_, _| uniform(-1.0, 1.0));
    let q = mm.transpose() * &mm + DMatrix::identity(n, n) * n as f64;
    let q = (&q + q.transpose()) * 0.5;
    let a = DMatrix::from_fn(m, n, |_, _| uniform(-1.0, 1.0));
    let x0 = DVector::from_fn(n, |_, _| uniform(-1.0, 1.0));
    let slack = DVector::from_fn(m, |_, _| uniform(0.1, 1.0));
    let c = DVector::from_fn(n, |_, _| uniform(-1.0, 1.0) * n as f64);
    let b = &a * x0 + slack;
    QPInstance::with_owners(q, a, b, c, Owners::round_robin(m, n, 2))
}

/// First random instance, scanning seeds from `seed`, whose dual Hessian has
/// condition number at most `max_condition`.
pub fn random_well_conditioned(n: usize, m: usize, seed: u64, max_condition: f64) -> Result<QPInstance, QpError> {
    if m > n {
        return Err(QpError::Domain("a nonsingular dual Hessian needs m <= n".into()));
    }
    (0..10_000u64)
        .map(|k| random_instance(n, m, seed.wrapping_mul(10_007).wrapping_add(k)))
        .find(|inst| inst.as_ref().map_or(true, |i| i.dual_condition_number() <= max_condition))
        .unwrap_or_else(|| Err(QpError::Domain("no well-conditioned instance found".into())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn scalar(q: f64, a: f64, b: f64, c: f64) -> QPInstance {
        QPInstance::new(dmatrix![q], dmatrix![a], dvector![b], dvector![c]).unwrap()
    }

    #[test]
    fn gradient_examples() {
        let inst = scalar(1.0, 1.0, 0.0, 0.0);
        assert_eq!(inst.dual_gradient(&dvector![1.0]).unwrap(), dvector![-1.0]);
        let inst = random_instance(2, 3, 5).unwrap();
        let zero = DVector::zeros(3);
        let expected = -(inst.a() * inst.q_inv() * inst.c()) - inst.b();
        assert!((inst.dual_gradient(&zero).unwrap() - expected).amax() < 1e-12);
        assert!(inst.dual_gradient(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..50 {
            let inst = random_instance(2, 3, seed).unwrap();
            let mu = initial_dual(3, seed, 16);
            let grad = inst.dual_gradient(&mu).unwrap();
            let h = 1e-5;
            for i in 0..3 {
                let mut up = mu.clone();
                let mut down = mu.clone();
                up[i] += h;
                down[i] -= h;
                let fd = (inst.dual_objective(&up).unwrap() - inst.dual_objective(&down).unwrap()) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-6, "seed {seed} i {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn step_size_examples() {
        assert!((scalar(1.0, 1.0, 0.0, 0.0).step_size().unwrap() - 1.0).abs() < 1e-12);
        assert!((scalar(2.0, 1.0, 0.0, 0.0).step_size().unwrap() - 2.0).abs() < 1e-12);
        assert!(scalar(1.0, 0.0, 0.0, 0.0).step_size().is_err());
    }

    /// det(M - λI) by Gaussian elimination, then bisection on the largest root.
    fn bisected_lambda_max(mat: &DMatrix<f64>) -> f64 {
        let det = |lambda: f64| (mat - DMatrix::identity(mat.nrows(), mat.nrows()) * lambda).determinant();
        let upper = mat.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max) + 1.0;
        // scan down from the Gershgorin bound to find the last sign change
        let steps = 20_000;
        let mut hi = upper;
        let mut lo = upper;
        for s in 1..=steps {
            let x = upper * (1.0 - s as f64 / steps as f64);
            if det(x).signum() != det(hi).signum() {
                lo = x;
                break;
            }
            hi = x;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if det(mid).signum() == det(hi).signum() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn step_size_matches_characteristic_root() {
        let inst = random_instance(3, 4, 11).unwrap();
        let reference = bisected_lambda_max(&inst.dual_hessian());
        assert!((1.0 / inst.step_size().unwrap() - reference).abs() < 1e-6);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_step(&dvector![0.0, 0.0], &dvector![-1.0, -2.0], 1.0), dvector![0.0, 0.0]);
        assert_eq!(project_step(&dvector![2.0], &dvector![-1.0], 0.5), dvector![1.5]);
        assert_eq!(project_step(&dvector![0.5], &dvector![-1.0], 1.0), dvector![0.0]);
    }

    #[test]
    fn scalar_solutions() {
        let inactive = scalar(1.0, 1.0, 5.0, 1.0);
        let sol = inactive.solve_dual_ascent(200, 1, 16).unwrap();
        assert!((sol.x_star[0] + 1.0).abs() < 1e-9 && sol.mu_star[0].abs() < 1e-9);
        let oracle = inactive.active_set_oracle().unwrap();
        assert_eq!(oracle.mu_star[0], 0.0);

        let active = scalar(1.0, 1.0, -2.0, 1.0);
        let sol = active.solve_dual_ascent(200, 1, 16).unwrap();
        assert!((sol.x_star[0] + 2.0).abs() < 1e-9 && (sol.mu_star[0] - 1.0).abs() < 1e-9);
        let oracle = active.active_set_oracle().unwrap();
        assert!((oracle.x_star[0] + 2.0).abs() < 1e-12 && (oracle.mu_star[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unconstrained_oracle() {
        let q = dmatrix![2.0, 0.5; 0.5, 1.0];
        let c = dvector![1.0, -1.0];
        let inst = QPInstance::new(q.clone(), DMatrix::zeros(0, 2), DVector::zeros(0), c.clone()).unwrap();
        let sol = inst.active_set_oracle().unwrap();
        let expected = -q.lu().solve(&c).unwrap();
        assert!((sol.x_star - expected).amax() < 1e-12);
        assert_eq!(sol.mu_star.len(), 0);
    }

    #[test]
    fn kkt_residual_examples() {
        let inst = scalar(1.0, 1.0, -2.0, 1.0);
        assert!(inst.kkt_residual(&dvector![-2.0], &dvector![1.0]).unwrap() < 1e-10);
        assert!(inst.kkt_residual(&dvector![-2.0 + 1e-3], &dvector![1.0]).unwrap() >= 1e-3 - 1e-12);
        for seed in 0..20 {
            let inst = random_instance(3, 4, seed).unwrap();
            assert!(inst.active_set_oracle().unwrap().kkt_residual <= 1e-8);
        }
    }

    #[test]
    fn ascent_matches_oracle() {
        let mut checked = 0;
        for seed in 0..200 {
            let n = 1 + (seed % 4) as usize;
            let m = 1 + (seed / 4 % 4) as usize;
            let inst = random_instance(n, m, seed).unwrap();
            // rank-deficient duals converge sublinearly
            if inst.dual_condition_number() > 1e3 {
                continue;
            }
            let oracle = inst.active_set_oracle().unwrap();
            let sol = inst.solve_dual_ascent(2000, seed, 16).unwrap();
            assert!((sol.x_star - &oracle.x_star).amax() < 1e-4, "seed {seed}");
            checked += 1;
            if checked == 100 {
                break;
            }
        }
        assert_eq!(checked, 100);
    }

    #[test]
    fn strong_duality() {
        for seed in 0..20 {
            let inst = random_instance(3, 3, seed).unwrap();
            let sol = inst.active_set_oracle().unwrap();
            let gap = inst.primal_objective(&sol.x_star) - inst.dual_objective(&sol.mu_star).unwrap();
            assert!(gap.abs() < 1e-6, "seed {seed}: {gap}");
        }
    }

    #[test]
    fn random_instances_are_valid_and_deterministic() {
        let inst = random_instance(3, 4, 9).unwrap();
        assert_eq!(inst, random_instance(3, 4, 9).unwrap());
        assert_ne!(inst, random_instance(3, 4, 10).unwrap());
        assert!(inst.q().clone().cholesky().is_some());
        assert_eq!(inst.owners().agent_count(), 2);
        assert!(inst.active_set_oracle().is_ok());
    }

    #[test]
    fn instance_json_roundtrip() {
        let inst = random_instance(2, 3, 1).unwrap();
        let json = serde_json::to_value(&inst).unwrap();
        assert_eq!(json["n"], 2);
        assert_eq!(json["A"].as_array().unwrap().len(), 3);
        let back: QPInstance = serde_json::from_value(json).unwrap();
        assert!((back.q() - inst.q()).amax() == 0.0);
        assert_eq!(back.owners(), inst.owners());
        let bad = r#"{"n":1,"m":1,"Q":[[-1.0]],"A":[[1.0]],"b":[0.0],"c":[0.0]}"#;
        assert!(serde_json::from_str::<QPInstance>(bad).is_err());
    }

    #[test]
    fn state_estimation_examples() {
        let inst = build_state_estimation(&dmatrix![1.0], &dmatrix![1.0], &[dvector![3.0], dvector![3.0]], None).unwrap();
        assert!((inst.active_set_oracle().unwrap().x_star[0] - 3.0).abs() < 1e-12);

        let a = dmatrix![0.9, 0.2; -0.1, 0.8];
        let c = dmatrix![1.0, 0.5];
        let ys: Vec<_> = (0..4).map(|t| dvector![0.3 * t as f64 - 1.0]).collect();
        let inst = build_state_estimation(&a, &c, &ys, None).unwrap();
        let obs = DMatrix::from_fn(4, 2, |t, j| (&c * a.pow(t as u32))[(0, j)]);
        let y = DVector::from_iterator(4, ys.iter().map(|v| v[0]));
        let normal = (obs.transpose() * &obs).lu().solve(&(obs.transpose() * y)).unwrap();
        assert!((inst.active_set_oracle().unwrap().x_star - normal).amax() < 1e-8);

        assert!(build_state_estimation(&a, &dmatrix![0.0, 0.0], &ys, None).is_err());
    }

    fn scalar_mpc(lower: f64, upper: f64, x_ref: f64) -> MpcProblem {
        MpcProblem {
            a: dmatrix![1.0],
            b: dmatrix![1.0],
            c: dmatrix![1.0],
            q_cost: dmatrix![1.0],
            r_cost: dmatrix![1.0],
            x0: dvector![0.0],
            x_lower: vec![dvector![lower]],
            x_upper: vec![dvector![upper]],
            x_ref: vec![dvector![x_ref]],
            u_ref: vec![dvector![0.0]],
            horizon: 1,
        }
    }

    #[test]
    fn mpc_examples() {
        // ½(u - 4)² + ½u² is minimised at u = 2
        let inst = build_mpc(&scalar_mpc(-10.0, 10.0, 4.0)).unwrap();
        assert_eq!(inst.m(), 2);
        let sol = inst.active_set_oracle().unwrap();
        assert!((sol.x_star[0] - 2.0).abs() < 1e-12);

        let idle = build_mpc(&scalar_mpc(-10.0, 10.0, 0.0)).unwrap();
        assert!(idle.active_set_oracle().unwrap().x_star[0].abs() < 1e-12);

        let saturated = build_mpc(&scalar_mpc(-10.0, 1.0, 4.0)).unwrap();
        let sol = saturated.active_set_oracle().unwrap();
        assert!((sol.x_star[0] - 1.0).abs() < 1e-12);
        assert!(sol.mu_star[0] > 0.0 && sol.mu_star[1] == 0.0);
    }

    #[test]
    fn mpc_constraint_count() {
        let p = MpcProblem {
            a: dmatrix![1.0, 0.1; 0.0, 1.0],
            b: dmatrix![0.0; 0.1],
            c: DMatrix::identity(2, 2),
            q_cost: DMatrix::identity(2, 2),
            r_cost: dmatrix![0.5],
            x0: dvector![1.0, 0.0],
            x_lower: vec![dvector![-5.0, -1.0]; 3],
            x_upper: vec![dvector![5.0, 1.0]; 3],
            x_ref: vec![dvector![0.0, 0.0]; 3],
            u_ref: vec![dvector![0.0]; 3],
            horizon: 3,
        };
        let inst = build_mpc(&p).unwrap();
        assert_eq!((inst.n(), inst.m()), (3, 12));
        assert!(inst.active_set_oracle().unwrap().kkt_residual < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dual_ascent_is_monotone(seed in 0u64..10_000, n in 1usize..4, m in 1usize..4) {
            let inst = random_instance(n, m, seed).unwrap();
            let eta = inst.step_size().unwrap();
            let mut mu = initial_dual(m, seed, 16);
            for _ in 0..30 {
                let next = project_step(&mu, &inst.dual_gradient(&mu).unwrap(), eta);
                prop_assert!(inst.dual_objective(&next).unwrap() >= inst.dual_objective(&mu).unwrap() - 1e-12);
                mu = next;
            }
        }
    }
}
