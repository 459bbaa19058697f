//! Linear systems encoding interpolation and shape constraints on the
//! coefficients of a spline.
//!
//! Inequalities are always stored as `M α <= v`. Because the splines are
//! multilinear between knots, the shape constraints reduce to conditions on
//! the grid values: bounds on every coefficient, non-negative first
//! differences along every axis (monotonicity), and non-decreasing slopes
//! along every axis (componentwise convexity).

use crate::basis::{CoefficientGrid, Subdivision};
use crate::error::{param, Result};
use crate::linalg::SparseRows;

/// Slack used when checking a coefficient grid against its inequalities.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// One shape constraint. A model may carry several; their rows are stacked.
#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintKind {
    /// `lower <= f <= upper`; an infinite endpoint drops its rows.
    Bounded { lower: f64, upper: f64 },
    /// Non-decreasing in the listed ambient variables (all when `None`).
    Monotone { variables: Option<Vec<usize>> },
    /// Convex along each listed ambient variable (all when `None`).
    Convex { variables: Option<Vec<usize>> },
}

impl ConstraintKind {
    pub fn monotone() -> Self {
        ConstraintKind::Monotone { variables: None }
    }

    pub fn convex() -> Self {
        ConstraintKind::Convex { variables: None }
    }

    pub fn bounded(lower: f64, upper: f64) -> Self {
        ConstraintKind::Bounded { lower, upper }
    }

    pub fn validate(&self) -> Result<()> {
        if let ConstraintKind::Bounded { lower, upper } = self {
            if lower.is_nan() || upper.is_nan() || !(lower < upper) {
                return param(format!("bounds must satisfy lower < upper, got [{lower}, {upper}]"));
            }
        }
        Ok(())
    }

    fn applies_to(variables: &Option<Vec<usize>>, var: usize) -> bool {
        variables.as_ref().is_none_or(|v| v.contains(&var))
    }
}

/// `M α <= v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Inequalities {
    pub matrix: SparseRows,
    pub bounds: Vec<f64>,
}

impl Inequalities {
    pub fn empty(ncols: usize) -> Self {
        Self {
            matrix: SparseRows::new(ncols),
            bounds: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    /// Largest violation `max_b (M α - v)_b`, or `-inf` without rows.
    pub fn max_violation(&self, alpha: &[f64]) -> f64 {
        (0..self.len())
            .map(|b| self.matrix.row_dot(b, alpha) - self.bounds[b])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_satisfied(&self, alpha: &[f64], tol: f64) -> bool {
        self.max_violation(alpha) <= tol
    }
}

/// Inequality rows plus interpolation rows `Φ α = y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSystem {
    pub inequalities: Inequalities,
    pub phi: SparseRows,
    pub y: Vec<f64>,
}

impl ConstraintSystem {
    pub fn grid_size(&self) -> usize {
        self.phi.ncols()
    }
}

pub fn build_inequality(kinds: &[ConstraintKind], sub: &Subdivision) -> Result<Inequalities> {
    let n = sub.grid_size();
    let mut out = Inequalities::empty(n);
    for kind in kinds {
        kind.validate()?;
        match kind {
            ConstraintKind::Bounded { lower, upper } => bounded_rows(&mut out, n, *lower, *upper),
            ConstraintKind::Monotone { variables } => {
                for (pos, &var) in sub.active().iter().enumerate() {
                    if ConstraintKind::applies_to(variables, var) {
                        monotone_rows(&mut out, sub, pos);
                    }
                }
            }
            ConstraintKind::Convex { variables } => {
                for (pos, &var) in sub.active().iter().enumerate() {
                    if ConstraintKind::applies_to(variables, var) && sub.per_dim()[pos].len() >= 3 {
                        convex_rows(&mut out, sub, pos);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn bounded_rows(out: &mut Inequalities, n: usize, lower: f64, upper: f64) {
    if lower.is_finite() {
        for l in 0..n {
            out.matrix.push(vec![(l, -1.0)]);
            out.bounds.push(-lower);
        }
    }
    if upper.is_finite() {
        for l in 0..n {
            out.matrix.push(vec![(l, 1.0)]);
            out.bounds.push(upper);
        }
    }
}

/// Rows `α_{ℓ - e_i} - α_ℓ <= 0` for every `ℓ` with `ℓ_i >= 1`.
fn monotone_rows(out: &mut Inequalities, sub: &Subdivision, pos: usize) {
    let shape = sub.shape();
    let stride = sub.strides()[pos];
    for flat in 0..sub.grid_size() {
        let li = (flat / stride) % shape[pos];
        if li >= 1 {
            out.matrix.push(vec![(flat - stride, 1.0), (flat, -1.0)]);
            out.bounds.push(0.0);
        }
    }
}

/// Rows stating that consecutive slopes along axis `pos` do not decrease.
/// Each row is scaled by the mean of the two gaps, so equispaced knots give
/// the second difference `-α_{ℓ-2e} + 2α_{ℓ-e} - α_ℓ <= 0`.
fn convex_rows(out: &mut Inequalities, sub: &Subdivision, pos: usize) {
    let shape = sub.shape();
    let stride = sub.strides()[pos];
    let t = sub.per_dim()[pos].knots();
    for flat in 0..sub.grid_size() {
        let li = (flat / stride) % shape[pos];
        if li >= 2 {
            let h1 = t[li - 1] - t[li - 2];
            let h2 = t[li] - t[li - 1];
            let c = 0.5 * (h1 + h2);
            out.matrix.push(vec![
                (flat - 2 * stride, -c / h1),
                (flat - stride, c / h1 + c / h2),
                (flat, -c / h2),
            ]);
            out.bounds.push(0.0);
        }
    }
}

/// Expected number of rows for a single constraint kind (all variables).
pub fn expected_rows(kind: &ConstraintKind, sub: &Subdivision) -> usize {
    let shape = sub.shape();
    let total: usize = shape.iter().product();
    match kind {
        ConstraintKind::Bounded { lower, upper } => total * (lower.is_finite() as usize + upper.is_finite() as usize),
        ConstraintKind::Monotone { .. } => shape.iter().map(|&m| (m - 1) * total / m).sum(),
        ConstraintKind::Convex { .. } => shape.iter().map(|&m| (m.saturating_sub(2)) * total / m).sum(),
    }
}

/// Interpolation rows `Φ_{i,ℓ} = φ_ℓ(x_i)` for ambient points `x`.
pub fn build_interpolation(sub: &Subdivision, x: &[Vec<f64>], y: &[f64]) -> Result<(SparseRows, Vec<f64>)> {
    if x.len() != y.len() {
        return param(format!("{} points but {} observations", x.len(), y.len()));
    }
    let mut phi = SparseRows::new(sub.grid_size());
    for (i, p) in x.iter().enumerate() {
        if p.len() != sub.ambient_dim() {
            return param(format!(
                "observation {i} has {} coordinates, expected {}",
                p.len(),
                sub.ambient_dim()
            ));
        }
        let r = sub.restrict(p);
        if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return param(format!("observation {i} lies outside the unit cube"));
        }
        phi.push(sub.basis_row(&r));
    }
    Ok((phi, y.to_vec()))
}

pub fn build_system(
    kinds: &[ConstraintKind],
    sub: &Subdivision,
    x: &[Vec<f64>],
    y: &[f64],
) -> Result<ConstraintSystem> {
    let inequalities = build_inequality(kinds, sub)?;
    let (phi, y) = build_interpolation(sub, x, y)?;
    Ok(ConstraintSystem { inequalities, phi, y })
}

/// Whether the coefficient grid satisfies all inequality rows within [`FEASIBILITY_TOL`].
pub fn check_feasible_grid(kinds: &[ConstraintKind], sub: &Subdivision, coeffs: &CoefficientGrid) -> Result<bool> {
    sub.check_coeffs(coeffs)?;
    let ineq = build_inequality(kinds, sub)?;
    Ok(ineq.is_satisfied(coeffs.values(), FEASIBILITY_TOL))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Subdivision1D;

    fn one_d(knots: Vec<f64>) -> Subdivision {
        Subdivision::new(1, vec![0], vec![Subdivision1D::new(knots).unwrap()]).unwrap()
    }

    #[test]
    fn monotone_banded_rows() {
        let s = one_d(vec![0.0, 0.5, 1.0]);
        let ineq = build_inequality(&[ConstraintKind::monotone()], &s).unwrap();
        let dense = ineq.matrix.to_dense();
        assert_eq!(dense.nrows(), 2);
        assert_eq!(dense.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0, 0.0]);
        assert_eq!(dense.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, -1.0]);
        assert_eq!(ineq.bounds, vec![0.0, 0.0]);
    }

    #[test]
    fn bounded_rows_match_layout() {
        let s = one_d(vec![0.0, 1.0]);
        let ineq = build_inequality(&[ConstraintKind::bounded(0.0, 1.0)], &s).unwrap();
        let dense = ineq.matrix.to_dense();
        let expected = [[-1.0, 0.0], [0.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        for (r, e) in expected.iter().enumerate() {
            assert_eq!(dense.row(r).iter().copied().collect::<Vec<_>>(), e.to_vec());
        }
        assert_eq!(ineq.bounds, vec![0.0, 0.0, 1.0, 1.0]);

        let half = build_inequality(&[ConstraintKind::bounded(0.0, f64::INFINITY)], &s).unwrap();
        assert_eq!(half.len(), 2);
        assert!(build_inequality(&[ConstraintKind::bounded(1.0, 0.0)], &s).is_err());
    }

    #[test]
    fn convex_row_is_second_difference() {
        let s = one_d(vec![0.0, 0.5, 1.0]);
        let ineq = build_inequality(&[ConstraintKind::convex()], &s).unwrap();
        assert_eq!(ineq.len(), 1);
        let dense = ineq.matrix.to_dense();
        assert_eq!(dense.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 2.0, -1.0]);
        // x² samples are convex, -x² samples are not
        assert!(ineq.is_satisfied(&[0.0, 0.25, 1.0], FEASIBILITY_TOL));
        assert!(!ineq.is_satisfied(&[0.0, -0.25, -1.0], FEASIBILITY_TOL));
        // two-knot axes carry no convexity rows
        assert!(build_inequality(&[ConstraintKind::convex()], &one_d(vec![0.0, 1.0])).unwrap().is_empty());
    }

    #[test]
    fn convex_rows_respect_uneven_spacing() {
        let s = one_d(vec![0.0, 0.2, 1.0]);
        let c = s.project(|x| x[0] * x[0]);
        assert!(check_feasible_grid(&[ConstraintKind::convex()], &s, &c).unwrap());
        let c = s.project(|x| x[0].sqrt());
        assert!(!check_feasible_grid(&[ConstraintKind::convex()], &s, &c).unwrap());
    }

    #[test]
    fn row_counts() {
        let s = Subdivision::new(
            3,
            vec![0, 2],
            vec![
                Subdivision1D::new(vec![0.0, 0.3, 0.6, 1.0]).unwrap(),
                Subdivision1D::new(vec![0.0, 0.5, 1.0]).unwrap(),
            ],
        )
        .unwrap();
        for kind in [ConstraintKind::monotone(), ConstraintKind::convex(), ConstraintKind::bounded(-1.0, 1.0)] {
            let ineq = build_inequality(std::slice::from_ref(&kind), &s).unwrap();
            assert_eq!(ineq.len(), expected_rows(&kind, &s));
        }
        assert_eq!(expected_rows(&ConstraintKind::monotone(), &s), 3 * 3 + 4 * 2);
        let both = build_inequality(&[ConstraintKind::monotone(), ConstraintKind::bounded(0.0, 2.0)], &s).unwrap();
        assert_eq!(both.len(), 17 + 24);
        let masked = build_inequality(&[ConstraintKind::Monotone { variables: Some(vec![2]) }], &s).unwrap();
        assert_eq!(masked.len(), 4 * 2);
    }

    #[test]
    fn feasibility_checks() {
        let s = one_d(vec![0.0, 0.5, 1.0]);
        let up = CoefficientGrid::new(vec![3], vec![0.0, 0.2, 0.9]).unwrap();
        let down = CoefficientGrid::new(vec![3], vec![0.0, 0.5, 0.4]).unwrap();
        let mono = [ConstraintKind::monotone()];
        assert!(check_feasible_grid(&mono, &s, &up).unwrap());
        assert!(!check_feasible_grid(&mono, &s, &down).unwrap());
    }

    #[test]
    fn interpolation_rows() {
        let s = Subdivision::new(2, vec![1], vec![Subdivision1D::minimal()]).unwrap();
        let (phi, _) = build_interpolation(&s, &[vec![0.9, 0.25], vec![0.1, 1.0]], &[1.0, 2.0]).unwrap();
        assert_eq!(phi.to_dense().row(0).iter().copied().collect::<Vec<_>>(), vec![0.75, 0.25]);
        assert_eq!(phi.row(1), &[(1, 1.0)]);
        assert!(build_interpolation(&s, &[vec![0.2, 1.5]], &[0.0]).is_err());
        assert!(build_interpolation(&s, &[vec![0.2]], &[0.0]).is_err());
    }
}
