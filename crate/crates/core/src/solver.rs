//! Strictly convex quadratic programs
//!
//! ```text
//! minimize ½ xᵀ G x + cᵀ x   subject to   A x = b,  M x <= v
//! ```
//!
//! solved with the dual active-set method of Goldfarb and Idnani, and the two
//! spline estimates built on it: the interpolating mode and the noisy mode.
//!
//! The method only needs a matrix `J` with `J Jᵀ = G⁻¹`. For the kernel
//! precision `G = K⁻¹` that is the Cholesky factor of `K` itself, so the
//! precision matrix is never formed.

use log::debug;
use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::basis::{CoefficientGrid, Subdivision};
use crate::constraints::ConstraintSystem;
use crate::error::{param, Error, Result};
use crate::kernel::{knot_covariance, KernelModel, KnotCovariance};
use crate::linalg::{dot, SparseRows};

/// Default primal feasibility tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Relative size below which a step direction counts as zero.
const DEPENDENCE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

/// The Hessian `G` of the objective.
#[derive(Clone, Debug)]
pub enum Quadratic {
    /// An explicit symmetric positive-definite matrix.
    Dense(DMatrix<f64>),
    /// `K⁻¹ + w ΦᵀΦ` given a Cholesky factorization of `K`; the penalty is optional.
    KernelPrecision {
        chol: Cholesky<f64, Dyn>,
        penalty: Option<(f64, SparseRows)>,
    },
}

impl Quadratic {
    pub fn dim(&self) -> usize {
        match self {
            Quadratic::Dense(g) => g.nrows(),
            Quadratic::KernelPrecision { chol, .. } => chol.l_dirty().nrows(),
        }
    }

    /// `G x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Quadratic::Dense(g) => (g * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec(),
            Quadratic::KernelPrecision { chol, penalty } => {
                let mut out = chol.solve(&nalgebra::DVector::from_column_slice(x)).as_slice().to_vec();
                if let Some((w, phi)) = penalty {
                    let back = phi.tr_mul_vec(&phi.mul_vec(x));
                    for (o, b) in out.iter_mut().zip(back) {
                        *o += w * b;
                    }
                }
                out
            }
        }
    }

    /// A matrix `J` with `J Jᵀ = G⁻¹`.
    fn inverse_factor(&self) -> Result<DMatrix<f64>> {
        match self {
            Quadratic::Dense(g) => {
                let ch = Cholesky::new(g.clone())
                    .ok_or_else(|| Error::Numerical("quadratic term is not positive definite".into()))?;
                let n = g.nrows();
                let linv = ch
                    .l()
                    .solve_lower_triangular(&DMatrix::identity(n, n))
                    .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
                Ok(linv.transpose())
            }
            Quadratic::KernelPrecision { chol, penalty } => {
                let l = chol.l();
                match penalty {
                    None => Ok(l),
                    Some((w, phi)) => {
                        // G = L⁻ᵀ (I + w LᵀΦᵀΦL) L⁻¹ = L⁻ᵀ C Cᵀ L⁻¹, so J = L C⁻ᵀ.
                        let a = phi.mul_dense(&l);
                        let mut b = a.tr_mul(&a) * *w;
                        for i in 0..b.nrows() {
                            b[(i, i)] += 1.0;
                        }
                        let c = Cholesky::new(b)
                            .ok_or_else(|| Error::Numerical("penalized precision is not positive definite".into()))?;
                        let jt = c
                            .l()
                            .solve_lower_triangular(&l.transpose())
                            .ok_or_else(|| Error::Numerical("singular penalized factor".into()))?;
                        Ok(jt.transpose())
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub quadratic: Quadratic,
    pub linear: Vec<f64>,
    pub eq_matrix: SparseRows,
    pub eq_rhs: Vec<f64>,
    pub ineq_matrix: SparseRows,
    pub ineq_rhs: Vec<f64>,
}

impl QpProblem {
    /// Problem with a dense Hessian and no constraints.
    pub fn dense(g: DMatrix<f64>, linear: Vec<f64>) -> Self {
        let n = g.nrows();
        Self {
            quadratic: Quadratic::Dense(g),
            linear,
            eq_matrix: SparseRows::new(n),
            eq_rhs: Vec::new(),
            ineq_matrix: SparseRows::new(n),
            ineq_rhs: Vec::new(),
        }
    }

    pub fn with_equalities(mut self, a: SparseRows, b: Vec<f64>) -> Self {
        self.eq_matrix = a;
        self.eq_rhs = b;
        self
    }

    pub fn with_inequalities(mut self, m: SparseRows, v: Vec<f64>) -> Self {
        self.ineq_matrix = m;
        self.ineq_rhs = v;
        self
    }

    pub fn dim(&self) -> usize {
        self.quadratic.dim()
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.linear.len() != n
            || self.eq_matrix.ncols() != n
            || self.ineq_matrix.ncols() != n
            || self.eq_matrix.nrows() != self.eq_rhs.len()
            || self.ineq_matrix.nrows() != self.ineq_rhs.len()
        {
            return param("quadratic program has inconsistent dimensions");
        }
        Ok(())
    }

    /// `½ xᵀ G x + cᵀ x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.quadratic.apply(x)) + dot(&self.linear, x)
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub alpha: CoefficientGrid,
    pub objective: f64,
    /// Sorted indices of the inequality rows held at equality.
    pub active_set: Vec<usize>,
    pub status: QpStatus,
    /// `λ` in `G x + c = Aᵀ λ - Mᵀ μ`.
    pub eq_multipliers: Vec<f64>,
    /// `μ >= 0`, zero off the active set.
    pub ineq_multipliers: Vec<f64>,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Residuals of the optimality conditions at a returned point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals {
    /// `max |A x - b|`.
    pub equality: f64,
    /// `max (M x - v)_+`.
    pub inequality: f64,
    /// `max |G x + c - Aᵀλ + Mᵀμ|`, relative to `max(1, |G x|, |c|)`.
    pub stationarity: f64,
    /// `max μ_b |M_b x - v_b|`.
    pub complementarity: f64,
    /// `max (-μ)_+`.
    pub dual: f64,
}

pub fn kkt_residuals(p: &QpProblem, sol: &QpSolution) -> KktResiduals {
    let x = sol.alpha.values();
    let equality = p
        .eq_matrix
        .mul_vec(x)
        .iter()
        .zip(&p.eq_rhs)
        .fold(0.0f64, |m, (ax, b)| m.max((ax - b).abs()));
    let mx = p.ineq_matrix.mul_vec(x);
    let inequality = mx.iter().zip(&p.ineq_rhs).fold(0.0f64, |m, (a, v)| m.max(a - v));
    let complementarity = mx
        .iter()
        .zip(&p.ineq_rhs)
        .zip(&sol.ineq_multipliers)
        .fold(0.0f64, |m, ((a, v), mu)| m.max((mu * (a - v)).abs()));
    let dual = sol.ineq_multipliers.iter().fold(0.0f64, |m, mu| m.max(-mu));

    let gx = p.quadratic.apply(x);
    let at = p.eq_matrix.tr_mul_vec(&sol.eq_multipliers);
    let mt = p.ineq_matrix.tr_mul_vec(&sol.ineq_multipliers);
    let scale = gx
        .iter()
        .chain(&p.linear)
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let stationarity = (0..x.len())
        .map(|i| (gx[i] + p.linear[i] - at[i] + mt[i]).abs())
        .fold(0.0, f64::max)
        / scale;
    KktResiduals {
        equality,
        inequality,
        stationarity,
        complementarity,
        dual,
    }
}

pub fn default_max_iter(p: &QpProblem) -> usize {
    10 * (p.dim() + p.eq_rhs.len() + p.ineq_rhs.len()) + 100
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Row {
    Eq(usize),
    Ineq(usize),
}

/// Working state of the dual active-set iteration. Constraints are handled
/// in the form `nᵀ x >= r`; an inequality row `M_b x <= v_b` has
/// `n = -M_b`, and an equality row is oriented so that it starts violated.
struct ActiveSet<'a> {
    p: &'a QpProblem,
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    rows: Vec<(Row, f64)>,
    u: Vec<f64>,
}

impl ActiveSet<'_> {
    fn q(&self) -> usize {
        self.rows.len()
    }

    fn normal(&self, row: Row, sign: f64) -> Vec<(usize, f64)> {
        let (mat, s) = match row {
            Row::Eq(i) => (self.p.eq_matrix.row(i), sign),
            Row::Ineq(b) => (self.p.ineq_matrix.row(b), -1.0),
        };
        mat.iter().map(|&(c, v)| (c, s * v)).collect()
    }

    fn slack(&self, row: Row, sign: f64, x: &[f64]) -> f64 {
        match row {
            Row::Eq(i) => sign * (self.p.eq_matrix.row_dot(i, x) - self.p.eq_rhs[i]),
            Row::Ineq(b) => self.p.ineq_rhs[b] - self.p.ineq_matrix.row_dot(b, x),
        }
    }

    /// `Jᵀ n` for a sparse normal.
    fn transform(&self, normal: &[(usize, f64)]) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for (k, dk) in d.iter_mut().enumerate() {
            let col = self.j.column(k);
            *dk = normal.iter().map(|&(c, v)| v * col[c]).sum();
        }
        d
    }

    /// Primal direction `J₂ d₂`.
    fn primal_step(&self, d: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.n];
        for (k, &dk) in d.iter().enumerate().skip(self.q()) {
            if dk != 0.0 {
                for (zi, ji) in z.iter_mut().zip(self.j.column(k).iter()) {
                    *zi += dk * ji;
                }
            }
        }
        z
    }

    /// Dual direction `R⁻¹ d₁`.
    fn dual_step(&self, d: &[f64]) -> Vec<f64> {
        let q = self.q();
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut s = d[i];
            for k in i + 1..q {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        r
    }

    fn rotate_j(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for row in 0..self.n {
            let (x1, x2) = (self.j[(row, a)], self.j[(row, b)]);
            self.j[(row, a)] = c * x1 + s * x2;
            self.j[(row, b)] = -s * x1 + c * x2;
        }
    }

    fn add(&mut self, row: Row, sign: f64, mut d: Vec<f64>, multiplier: f64) {
        let q = self.q();
        for k in (q + 1..self.n).rev() {
            let (a, b) = (d[k - 1], d[k]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_j(k - 1, k, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.rows.push((row, sign));
        self.u.push(multiplier);
    }

    fn drop(&mut self, l: usize) {
        let q = self.q();
        for col in l..q - 1 {
            for i in 0..q {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for k in l..q - 1 {
            let (a, b) = (self.r[(k, k)], self.r[(k + 1, k)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in k..q - 1 {
                let (r1, r2) = (self.r[(k, col)], self.r[(k + 1, col)]);
                self.r[(k, col)] = c * r1 + s * r2;
                self.r[(k + 1, col)] = -s * r1 + c * r2;
            }
            self.r[(k + 1, k)] = 0.0;
            self.rotate_j(k, k + 1, c, s);
        }
        self.rows.remove(l);
        self.u.remove(l);
    }
}

/// Solve a strictly convex QP by the dual active-set method.
///
/// Equalities enter the active set first, in row order; afterwards the most
/// violated inequality (smallest index on ties) is added until none exceeds
/// `tol`. Ties among blocking constraints also go to the smallest row index.
pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    p.validate()?;
    let n = p.dim();
    let j = p.quadratic.inverse_factor()?;
    let jtc = j.tr_mul(&nalgebra::DVector::from_column_slice(&p.linear));
    let mut x: Vec<f64> = (-(&j * jtc)).as_slice().to_vec();

    let mut st = ActiveSet {
        p,
        n,
        j,
        r: DMatrix::zeros(n, n),
        rows: Vec::new(),
        u: Vec::new(),
    };
    let mut iterations = 0usize;
    let mut next_eq = 0usize;
    let mut status = QpStatus::Optimal;

    'outer: loop {
        let (row, sign) = if next_eq < p.eq_rhs.len() {
            let i = next_eq;
            next_eq += 1;
            let raw = p.eq_matrix.row_dot(i, &x) - p.eq_rhs[i];
            (Row::Eq(i), if raw > 0.0 { -1.0 } else { 1.0 })
        } else {
            let mut worst: Option<(usize, f64)> = None;
            for b in 0..p.ineq_rhs.len() {
                let s = st.slack(Row::Ineq(b), -1.0, &x);
                if s < -tol && worst.is_none_or(|(_, w)| s < w) {
                    worst = Some((b, s));
                }
            }
            match worst {
                Some((b, _)) if !st.rows.contains(&(Row::Ineq(b), -1.0)) => (Row::Ineq(b), -1.0),
                // an active row can only look violated through rounding
                Some(_) | None => break 'outer,
            }
        };

        let normal = st.normal(row, sign);
        let mut s_p = st.slack(row, sign, &x);
        let mut uplus = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                status = QpStatus::MaxIter;
                break 'outer;
            }
            let d = st.transform(&normal);
            let z = st.primal_step(&d);
            let r = st.dual_step(&d);

            let mut t1 = f64::INFINITY;
            let mut block: Option<usize> = None;
            for (k, &(rk_row, _)) in st.rows.iter().enumerate() {
                if let Row::Ineq(b) = rk_row {
                    if r[k] > 0.0 {
                        let ratio = st.u[k] / r[k];
                        let better = match block {
                            None => true,
                            Some(l) => {
                                ratio < t1
                                    || (ratio == t1 && matches!(st.rows[l].0, Row::Ineq(bl) if b < bl))
                            }
                        };
                        if better {
                            t1 = ratio;
                            block = Some(k);
                        }
                    }
                }
            }
            let dnorm2: f64 = d.iter().map(|v| v * v).sum();
            let d2norm2: f64 = d[st.q()..].iter().map(|v| v * v).sum();
            let dependent = d2norm2 <= DEPENDENCE_TOL * DEPENDENCE_TOL * dnorm2 || dnorm2 == 0.0;
            let t2 = if dependent { f64::INFINITY } else { -s_p / d2norm2 };

            if t1.is_infinite() && t2.is_infinite() {
                if matches!(row, Row::Eq(_)) && s_p.abs() <= tol.max(1e-12) {
                    debug!("skipping redundant equality row");
                    continue 'outer;
                }
                status = QpStatus::Infeasible;
                break 'outer;
            }
            let t = t1.min(t2);
            for (uk, rk) in st.u.iter_mut().zip(&r) {
                *uk -= t * rk;
            }
            uplus += t;
            if t2.is_finite() {
                for (xi, zi) in x.iter_mut().zip(&z) {
                    *xi += t * zi;
                }
            }
            if t2 <= t1 {
                st.add(row, sign, d, uplus);
                break;
            }
            let l = block.expect("partial step has a blocking row");
            st.drop(l);
            s_p = st.slack(row, sign, &x);
        }
    }

    let mut eq_multipliers = vec![0.0; p.eq_rhs.len()];
    let mut ineq_multipliers = vec![0.0; p.ineq_rhs.len()];
    let mut active_set = Vec::new();
    for (&(row, sign), &u) in st.rows.iter().zip(&st.u) {
        match row {
            Row::Eq(i) => eq_multipliers[i] = sign * u,
            Row::Ineq(b) => {
                ineq_multipliers[b] = u;
                active_set.push(b);
            }
        }
    }
    active_set.sort_unstable();
    let objective = p.objective(&x);
    Ok(QpSolution {
        alpha: CoefficientGrid::new(vec![n], x)?,
        objective,
        active_set,
        status,
        eq_multipliers,
        ineq_multipliers,
        iterations,
    })
}

/// The interpolating mode: minimize `αᵀ K⁻¹ α` subject to `Φ α = y` and the
/// inequality rows. The reported objective is `αᵀ K⁻¹ α`.
pub fn compute_map(model: &KernelModel, sub: &Subdivision, cons: &ConstraintSystem) -> Result<QpSolution> {
    let cov = knot_covariance(model, sub)?;
    compute_map_with(&cov, sub, cons)
}

pub fn compute_map_with(cov: &KnotCovariance, sub: &Subdivision, cons: &ConstraintSystem) -> Result<QpSolution> {
    check_system(sub, cons)?;
    let n = sub.grid_size();
    let p = QpProblem {
        quadratic: Quadratic::KernelPrecision {
            chol: cov.cholesky().clone(),
            penalty: None,
        },
        linear: vec![0.0; n],
        eq_matrix: cons.phi.clone(),
        eq_rhs: cons.y.clone(),
        ineq_matrix: cons.inequalities.matrix.clone(),
        ineq_rhs: cons.inequalities.bounds.clone(),
    };
    let mut sol = solve_qp(&p, DEFAULT_TOL, default_max_iter(&p))?;
    sol.objective *= 2.0;
    sol.alpha = CoefficientGrid::new(sub.shape(), sol.alpha.into_values())?;
    Ok(sol)
}

/// The noisy mode: minimize `αᵀ K⁻¹ α + τ⁻² ‖Φ α - y‖²` subject to the
/// inequality rows only; that value is the reported objective.
pub fn compute_noisy_map(model: &KernelModel, sub: &Subdivision, cons: &ConstraintSystem, tau2: f64) -> Result<QpSolution> {
    let cov = knot_covariance(model, sub)?;
    compute_noisy_map_with(&cov, sub, cons, tau2)
}

pub fn compute_noisy_map_with(
    cov: &KnotCovariance,
    sub: &Subdivision,
    cons: &ConstraintSystem,
    tau2: f64,
) -> Result<QpSolution> {
    if !(tau2 > 0.0 && tau2.is_finite()) {
        return param(format!("noise variance must be positive, got {tau2}"));
    }
    check_system(sub, cons)?;
    let n = sub.grid_size();
    let p = noisy_problem(cov, cons, tau2);
    let mut sol = solve_qp(&p, DEFAULT_TOL, default_max_iter(&p))?;
    // ½αᵀGα + cᵀα = ½(αᵀK⁻¹α + w‖Φα - y‖²) - ½w‖y‖²
    let w = 1.0 / tau2;
    sol.objective = 2.0 * sol.objective + w * dot(&cons.y, &cons.y);
    debug_assert_eq!(sol.alpha.len(), n);
    sol.alpha = CoefficientGrid::new(sub.shape(), sol.alpha.into_values())?;
    Ok(sol)
}

/// The quadratic program behind [`compute_noisy_map`].
pub fn noisy_problem(cov: &KnotCovariance, cons: &ConstraintSystem, tau2: f64) -> QpProblem {
    let w = 1.0 / tau2;
    let linear = cons.phi.tr_mul_vec(&cons.y).into_iter().map(|v| -w * v).collect();
    QpProblem {
        quadratic: Quadratic::KernelPrecision {
            chol: cov.cholesky().clone(),
            penalty: Some((w, cons.phi.clone())),
        },
        linear,
        eq_matrix: SparseRows::new(cov.size()),
        eq_rhs: Vec::new(),
        ineq_matrix: cons.inequalities.matrix.clone(),
        ineq_rhs: cons.inequalities.bounds.clone(),
    }
}

fn check_system(sub: &Subdivision, cons: &ConstraintSystem) -> Result<()> {
    let n = sub.grid_size();
    if cons.phi.ncols() != n || cons.inequalities.matrix.ncols() != n {
        return param("constraint system does not match the subdivision");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Subdivision1D;
    use crate::constraints::{build_system, ConstraintKind};
    use crate::kernel::KernelFamily;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_problem() -> QpProblem {
        // α² subject to α >= 1
        QpProblem::dense(DMatrix::from_element(1, 1, 2.0), vec![0.0])
            .with_inequalities(SparseRows::from_rows(1, vec![vec![(0, -1.0)]]), vec![-1.0])
    }

    #[test]
    fn projection_onto_half_line() {
        let p = scalar_problem();
        let sol = solve_qp(&p, DEFAULT_TOL, 100).unwrap();
        assert!(sol.is_optimal());
        assert_abs_diff_eq!(sol.alpha.values()[0], 1.0, epsilon = 1e-12);
        assert_eq!(sol.active_set, vec![0]);
        assert_abs_diff_eq!(sol.ineq_multipliers[0], 2.0, epsilon = 1e-12);
        let kkt = kkt_residuals(&p, &sol);
        assert!(kkt.stationarity < 1e-12);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        // x >= 1 and x <= 0
        let p = QpProblem::dense(DMatrix::from_element(1, 1, 1.0), vec![0.0]).with_inequalities(
            SparseRows::from_rows(1, vec![vec![(0, -1.0)], vec![(0, 1.0)]]),
            vec![-1.0, 0.0],
        );
        assert_eq!(solve_qp(&p, DEFAULT_TOL, 100).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn iteration_cap_reports_max_iter() {
        let p = scalar_problem();
        assert_eq!(solve_qp(&p, DEFAULT_TOL, 0).unwrap().status, QpStatus::MaxIter);
    }

    fn model(d: usize) -> KernelModel {
        KernelModel::new(KernelFamily::Matern52, 1.0, vec![0.3; d], 1e-4).unwrap()
    }

    #[test]
    fn equality_constrained_closed_form() {
        let sub = Subdivision::new(1, vec![0], vec![Subdivision1D::equispaced(6).unwrap()]).unwrap();
        let x = vec![vec![0.1], vec![0.45], vec![0.77]];
        let y = vec![0.3, -0.2, 0.8];
        let cons = build_system(&[], &sub, &x, &y).unwrap();
        let m = model(1);
        let sol = compute_map(&m, &sub, &cons).unwrap();
        assert!(sol.is_optimal());

        let cov = knot_covariance(&m, &sub).unwrap();
        let mut k = cov.matrix().clone();
        for i in 0..k.nrows() {
            k[(i, i)] += cov.jitter();
        }
        let phi = cons.phi.to_dense();
        let s = &phi * &k * phi.transpose();
        let w = s.lu().solve(&DVector::from_column_slice(&y)).unwrap();
        let expected = &k * phi.transpose() * w;
        for (a, e) in sol.alpha.values().iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-8);
        }
        let resid = cons.phi.mul_vec(sol.alpha.values());
        for (r, yi) in resid.iter().zip(&y) {
            assert_abs_diff_eq!(r, yi, epsilon = 1e-8);
        }
    }

    #[test]
    fn single_observation_at_knot_is_kriging() {
        let sub = Subdivision::new(1, vec![0], vec![Subdivision1D::equispaced(3).unwrap()]).unwrap();
        let cons = build_system(&[], &sub, &[vec![0.5]], &[2.0]).unwrap();
        let m = model(1);
        let sol = compute_map(&m, &sub, &cons).unwrap();
        let cov = knot_covariance(&m, &sub).unwrap();
        let k = cov.matrix();
        let kmid = k[(1, 1)] + cov.jitter();
        for l in 0..3 {
            let kl = if l == 1 { kmid } else { k[(l, 1)] };
            assert_abs_diff_eq!(sol.alpha.values()[l], kl / kmid * 2.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn monotone_mode_is_nondecreasing() {
        let sub = Subdivision::new(1, vec![0], vec![Subdivision1D::equispaced(8).unwrap()]).unwrap();
        let x: Vec<Vec<f64>> = [0.05, 0.3, 0.5, 0.62, 0.9].iter().map(|&v| vec![v]).collect();
        let y: Vec<f64> = x.iter().map(|p| (8.0 * p[0] - 4.0).atan()).collect();
        let cons = build_system(&[ConstraintKind::monotone()], &sub, &x, &y).unwrap();
        let sol = compute_map(&model(1), &sub, &cons).unwrap();
        assert!(sol.is_optimal());
        let a = sol.alpha.values();
        assert!(a.windows(2).all(|w| w[0] <= w[1] + 1e-8));
        assert!(cons.inequalities.max_violation(a) <= 1e-8);
    }

    #[test]
    fn convexity_contradicting_data_is_infeasible() {
        let sub = Subdivision::new(1, vec![0], vec![Subdivision1D::equispaced(3).unwrap()]).unwrap();
        // concave by a small margin at the knots
        let x = vec![vec![0.0], vec![0.5], vec![1.0]];
        let y = vec![0.0, 0.51, 1.0];
        let cons = build_system(&[ConstraintKind::convex()], &sub, &x, &y).unwrap();
        let sol = compute_map(&model(1), &sub, &cons).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn noisy_mode_without_inequalities_matches_normal_equations() {
        let sub = Subdivision::new(1, vec![0], vec![Subdivision1D::equispaced(4).unwrap()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..9).map(|_| vec![rng.random::<f64>()]).collect();
        let y: Vec<f64> = x.iter().map(|p| p[0].sin()).collect();
        let cons = build_system(&[], &sub, &x, &y).unwrap();
        let m = model(1);
        let tau2 = 0.05;
        let sol = compute_noisy_map(&m, &sub, &cons, tau2).unwrap();

        let cov = knot_covariance(&m, &sub).unwrap();
        let mut k = cov.matrix().clone();
        for i in 0..k.nrows() {
            k[(i, i)] += cov.jitter();
        }
        let phi = cons.phi.to_dense();
        let g = k.clone().try_inverse().unwrap() + phi.transpose() * &phi / tau2;
        let rhs = phi.transpose() * DVector::from_column_slice(&y) / tau2;
        let expected = g.lu().solve(&rhs).unwrap();
        for (a, e) in sol.alpha.values().iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_data_gives_zero_mode() {
        let sub = Subdivision::new(2, vec![0, 1], vec![Subdivision1D::equispaced(3).unwrap(), Subdivision1D::minimal()])
            .unwrap();
        let x = vec![vec![0.2, 0.3], vec![0.7, 0.1]];
        let cons = build_system(&[ConstraintKind::bounded(-1.0, 1.0), ConstraintKind::monotone()], &sub, &x, &[0.0, 0.0])
            .unwrap();
        let sol = compute_noisy_map(&model(2), &sub, &cons, 1e-3).unwrap();
        assert!(sol.alpha.values().iter().all(|v| v.abs() < 1e-14));
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn noisy_mode_accepts_more_data_than_knots() {
        let sub = Subdivision::new(1, vec![0], vec![Subdivision1D::minimal()]).unwrap();
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| p[0] * p[0]).collect();
        let cons = build_system(&[ConstraintKind::monotone()], &sub, &x, &y).unwrap();
        let sol = compute_noisy_map(&model(1), &sub, &cons, 1e-2).unwrap();
        assert!(sol.is_optimal());
        assert_eq!(sol.alpha.shape(), &[2]);
    }

    /// Minimum over a grid of the box, zoomed in around the incumbent.
    fn grid_search(p: &QpProblem, lo: f64, hi: f64) -> f64 {
        let feasible = |x: &[f64]| {
            (0..p.ineq_rhs.len()).all(|b| p.ineq_matrix.row_dot(b, x) <= p.ineq_rhs[b] + 1e-12)
        };
        let steps = 20;
        let mut center = [0.5 * (lo + hi); 3];
        let mut half = 0.5 * (hi - lo);
        let mut best = f64::INFINITY;
        for _ in 0..40 {
            let h = 2.0 * half / steps as f64;
            let mut arg = center;
            for i in 0..=steps {
                for j in 0..=steps {
                    for k in 0..=steps {
                        let x = [
                            center[0] - half + i as f64 * h,
                            center[1] - half + j as f64 * h,
                            center[2] - half + k as f64 * h,
                        ];
                        if x.iter().all(|v| (lo..=hi).contains(v)) && feasible(&x) {
                            let f = p.objective(&x);
                            if f < best {
                                best = f;
                                arg = x;
                            }
                        }
                    }
                }
            }
            center = arg;
            half *= 0.7;
        }
        best
    }

    #[test]
    fn random_three_variable_programs_match_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..6 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let g = &a * a.transpose() + DMatrix::identity(3, 3) * 0.5;
            let c: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut rows = Vec::new();
            let mut rhs = Vec::new();
            for i in 0..3 {
                rows.push(vec![(i, 1.0)]);
                rhs.push(1.0);
                rows.push(vec![(i, -1.0)]);
                rhs.push(1.0);
            }
            for _ in 0..2 {
                rows.push((0..3).map(|i| (i, rng.random_range(-1.0..1.0))).collect());
                rhs.push(rng.random_range(0.0..0.5));
            }
            let p = QpProblem::dense(g, c).with_inequalities(SparseRows::from_rows(3, rows), rhs);
            let sol = solve_qp(&p, DEFAULT_TOL, 1000).unwrap();
            assert!(sol.is_optimal());
            let kkt = kkt_residuals(&p, &sol);
            assert!(kkt.inequality <= 1e-8 && kkt.stationarity <= 1e-6 && kkt.dual <= 0.0);
            let best = grid_search(&p, -1.0, 1.0);
            assert!(sol.objective <= best + 1e-9);
            assert!((sol.objective - best).abs() <= 1e-4, "{} vs {}", sol.objective, best);
        }
    }
}
