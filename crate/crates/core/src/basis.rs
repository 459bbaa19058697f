//! Hat basis functions on tensor grids of one-dimensional knots.
//!
//! A one-dimensional subdivision holds the knots lying in `[0, 1]`; the two
//! ghost knots `-1` and `2` that close the boundary hats are implicit. A
//! multi-dimensional [`Subdivision`] attaches one such set to each active input
//! variable. Coefficients live on the tensor grid and are flattened row-major,
//! the last active variable varying fastest.
//!
//! Variable indices are zero-based throughout the library.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

pub const GHOST_LEFT: f64 = -1.0;
pub const GHOST_RIGHT: f64 = 2.0;

/// Default distance below which two knots count as the same.
pub const DEFAULT_MIN_SEPARATION: f64 = 1e-9;

/// Asymmetric hat function with support `[u, w]` and peak 1 at `v`.
pub fn hat_basis_eval(u: f64, v: f64, w: f64, t: f64) -> Result<f64> {
    if !(u < v && v < w) {
        return param(format!("hat knots must satisfy u < v < w, got ({u}, {v}, {w})"));
    }
    Ok(hat_unchecked(u, v, w, t))
}

#[inline]
fn hat_unchecked(u: f64, v: f64, w: f64, t: f64) -> f64 {
    if t < u || t > w {
        0.0
    } else if t <= v {
        (t - u) / (v - u)
    } else {
        (w - t) / (w - v)
    }
}

/// Ordered knots of one variable inside `[0, 1]`, always including both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Subdivision1D {
    knots: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Subdivision1D {
    type Error = Error;
    fn try_from(knots: Vec<f64>) -> Result<Self> {
        Self::new(knots)
    }
}

impl From<Subdivision1D> for Vec<f64> {
    fn from(s: Subdivision1D) -> Self {
        s.knots
    }
}

impl Subdivision1D {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return param("a subdivision needs at least the knots 0 and 1");
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return param("first knot must be 0 and last knot must be 1");
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return param("knots must be strictly increasing");
        }
        Ok(Self { knots })
    }

    /// The subdivision `{0, 1}` (plus ghosts), i.e. functions affine in this variable.
    pub fn minimal() -> Self {
        Self {
            knots: vec![0.0, 1.0],
        }
    }

    /// `count` equispaced knots from 0 to 1.
    pub fn equispaced(count: usize) -> Result<Self> {
        if count < 2 {
            return param(format!("equispaced subdivision needs at least 2 knots, got {count}"));
        }
        let h = (count - 1) as f64;
        let mut knots: Vec<f64> = (0..count).map(|i| i as f64 / h).collect();
        knots[count - 1] = 1.0;
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of knots in `[0, 1]`.
    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Knot `l` of the extended sequence, where `l = -1` and `l = len()` are the ghosts.
    pub fn extended(&self, l: isize) -> f64 {
        if l < 0 {
            GHOST_LEFT
        } else if l as usize >= self.knots.len() {
            GHOST_RIGHT
        } else {
            self.knots[l as usize]
        }
    }

    /// Hat function centred on knot `l`.
    pub fn hat(&self, l: usize, t: f64) -> f64 {
        let l = l as isize;
        hat_unchecked(self.extended(l - 1), self.extended(l), self.extended(l + 1), t)
    }

    /// Index `nu` such that `knots[nu] <= t <= knots[nu + 1]`, for `t` in `[0, 1]`.
    pub fn interval(&self, t: f64) -> usize {
        let last = self.knots.len() - 2;
        match self.knots.partition_point(|&k| k <= t) {
            0 => 0,
            p => (p - 1).min(last),
        }
    }

    /// Distance from `t` to the closest knot.
    pub fn distance(&self, t: f64) -> f64 {
        let nu = self.interval(t.clamp(0.0, 1.0));
        let a = (t - self.knots[nu]).abs();
        let b = (t - self.knots[nu + 1]).abs();
        a.min(b)
    }

    /// Copy of `self` with `t` added; `variable` is only used in the error.
    pub fn with_knot(&self, variable: usize, t: f64, min_separation: f64) -> Result<Self> {
        if !(t > 0.0 && t < 1.0) {
            return param(format!("inserted knot must lie in (0, 1), got {t}"));
        }
        if self.distance(t) < min_separation {
            return Err(Error::Separation {
                variable,
                t,
                min_separation,
            });
        }
        let pos = self.knots.partition_point(|&k| k < t);
        let mut knots = self.knots.clone();
        knots.insert(pos, t);
        Ok(Self { knots })
    }

    /// Interpolation weights `(nu, w_lo, w_hi)` of `t` on its enclosing interval.
    #[inline]
    pub(crate) fn weights(&self, t: f64) -> (usize, f64, f64) {
        let nu = self.interval(t);
        let (a, b) = (self.knots[nu], self.knots[nu + 1]);
        let w_hi = (t - a) / (b - a);
        (nu, 1.0 - w_hi, w_hi)
    }
}

/// Per-variable subdivisions over a set of active variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subdivision {
    ambient_dim: usize,
    active: Vec<usize>,
    per_dim: Vec<Subdivision1D>,
}

impl Subdivision {
    pub fn new(ambient_dim: usize, active: Vec<usize>, per_dim: Vec<Subdivision1D>) -> Result<Self> {
        if active.is_empty() {
            return param("at least one active variable is required");
        }
        if active.len() != per_dim.len() {
            return param("one subdivision per active variable is required");
        }
        if active.windows(2).any(|w| w[0] >= w[1]) {
            return param("active variables must be strictly increasing");
        }
        if *active.last().unwrap() >= ambient_dim {
            return param(format!(
                "active variable {} outside ambient dimension {ambient_dim}",
                active.last().unwrap()
            ));
        }
        Ok(Self {
            ambient_dim,
            active,
            per_dim,
        })
    }

    /// Single active variable carrying the knots `{0, 1}`.
    pub fn initial(ambient_dim: usize, variable: usize) -> Result<Self> {
        Self::new(ambient_dim, vec![variable], vec![Subdivision1D::minimal()])
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn dim(&self) -> usize {
        self.active.len()
    }

    pub fn per_dim(&self) -> &[Subdivision1D] {
        &self.per_dim
    }

    /// Position of ambient `variable` within the active list.
    pub fn position(&self, variable: usize) -> Option<usize> {
        self.active.binary_search(&variable).ok()
    }

    pub fn is_active(&self, variable: usize) -> bool {
        self.position(variable).is_some()
    }

    /// Subdivision of ambient `variable`, if active.
    pub fn axis(&self, variable: usize) -> Option<&Subdivision1D> {
        self.position(variable).map(|p| &self.per_dim[p])
    }

    pub fn shape(&self) -> Vec<usize> {
        self.per_dim.iter().map(Subdivision1D::len).collect()
    }

    pub fn grid_size(&self) -> usize {
        self.per_dim.iter().map(Subdivision1D::len).product()
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape())
    }

    /// Grid knot of a multi-index, in active coordinates.
    pub fn knot(&self, multi: &[usize]) -> Vec<f64> {
        multi
            .iter()
            .zip(&self.per_dim)
            .map(|(&l, s)| s.knots()[l])
            .collect()
    }

    /// All grid knots in flattening order.
    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        let shape = self.shape();
        (0..self.grid_size())
            .map(|flat| self.knot(&unflatten(flat, &shape)))
            .collect()
    }

    /// Keep the active coordinates of an ambient point.
    pub fn restrict(&self, ambient: &[f64]) -> Vec<f64> {
        self.active.iter().map(|&a| ambient[a]).collect()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return param(format!("point has {} coordinates, expected {}", x.len(), self.dim()));
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return param("point outside the unit cube");
        }
        Ok(())
    }

    /// Tensor hat function of `multi` at `x` (active coordinates).
    pub fn tensor_basis_eval(&self, multi: &[usize], x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        if multi.len() != self.dim() || multi.iter().zip(&self.per_dim).any(|(&l, s)| l >= s.len()) {
            return param(format!("multi-index {multi:?} outside grid {:?}", self.shape()));
        }
        Ok(multi
            .iter()
            .zip(&self.per_dim)
            .zip(x)
            .map(|((&l, s), &t)| s.hat(l, t))
            .product())
    }

    /// Non-zero basis values at `x` as `(flat index, value)` pairs; at most `2^d` entries.
    pub fn basis_row(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let strides = self.strides();
        let mut row = vec![(0usize, 1.0f64)];
        for ((s, &t), &stride) in self.per_dim.iter().zip(x).zip(&strides) {
            let (nu, lo, hi) = s.weights(t);
            let mut next = Vec::with_capacity(row.len() * 2);
            for &(idx, w) in &row {
                if lo != 0.0 {
                    next.push((idx + nu * stride, w * lo));
                }
                if hi != 0.0 {
                    next.push((idx + (nu + 1) * stride, w * hi));
                }
            }
            row = next;
        }
        row
    }

    /// Value of the spline with coefficients `coeffs` at `x` (active coordinates).
    pub fn eval_spline(&self, coeffs: &CoefficientGrid, x: &[f64]) -> Result<f64> {
        self.check_coeffs(coeffs)?;
        self.check_point(x)?;
        Ok(self.eval_unchecked(coeffs.values(), x))
    }

    pub(crate) fn eval_unchecked(&self, values: &[f64], x: &[f64]) -> f64 {
        self.basis_row(x).iter().map(|&(i, w)| w * values[i]).sum()
    }

    /// Evaluate at an ambient point, ignoring inactive coordinates.
    pub fn eval_ambient(&self, coeffs: &CoefficientGrid, ambient: &[f64]) -> Result<f64> {
        if ambient.len() != self.ambient_dim {
            return param(format!(
                "point has {} coordinates, expected ambient dimension {}",
                ambient.len(),
                self.ambient_dim
            ));
        }
        self.eval_spline(coeffs, &self.restrict(ambient))
    }

    pub fn check_coeffs(&self, coeffs: &CoefficientGrid) -> Result<()> {
        if coeffs.shape() != self.shape().as_slice() {
            return param(format!(
                "coefficient grid shape {:?} does not match subdivision {:?}",
                coeffs.shape(),
                self.shape()
            ));
        }
        Ok(())
    }

    /// Piecewise multilinear interpolant of `f` on the grid knots.
    pub fn project<F>(&self, f: F) -> CoefficientGrid
    where
        F: Fn(&[f64]) -> f64,
    {
        let values = self.grid_points().iter().map(|p| f(p)).collect();
        CoefficientGrid {
            shape: self.shape(),
            values,
        }
    }

    /// `self` with knot `t` inserted for ambient `variable`.
    pub fn insert_knot(&self, variable: usize, t: f64, min_separation: f64) -> Result<Self> {
        let Some(p) = self.position(variable) else {
            return param(format!("variable {variable} is not active"));
        };
        let mut out = self.clone();
        out.per_dim[p] = self.per_dim[p].with_knot(variable, t, min_separation)?;
        Ok(out)
    }

    /// `self` with ambient `variable` activated on the minimal subdivision.
    pub fn add_variable(&self, variable: usize) -> Result<Self> {
        if variable >= self.ambient_dim {
            return param(format!(
                "variable {variable} outside ambient dimension {}",
                self.ambient_dim
            ));
        }
        let pos = match self.active.binary_search(&variable) {
            Ok(_) => return param(format!("variable {variable} is already active")),
            Err(pos) => pos,
        };
        let mut out = self.clone();
        out.active.insert(pos, variable);
        out.per_dim.insert(pos, Subdivision1D::minimal());
        Ok(out)
    }

    /// True when every grid knot of `self` is a grid knot of `other`.
    pub fn is_refined_by(&self, other: &Subdivision) -> bool {
        self.ambient_dim == other.ambient_dim
            && self.active.iter().zip(&self.per_dim).all(|(&a, s)| match other.axis(a) {
                Some(o) => s.knots().iter().all(|k| o.knots().contains(k)),
                None => false,
            })
    }

    /// Re-express the spline `(self, coeffs)` on a subdivision whose active set
    /// contains ours. Exact when `target` refines `self`.
    pub fn transfer(&self, coeffs: &CoefficientGrid, target: &Subdivision) -> Result<CoefficientGrid> {
        self.check_coeffs(coeffs)?;
        let map: Vec<usize> = self
            .active
            .iter()
            .map(|a| {
                target
                    .position(*a)
                    .ok_or_else(|| Error::Parameter(format!("variable {a} not active in target")))
            })
            .collect::<Result<_>>()?;
        let values = coeffs.values();
        Ok(target.project(|p| {
            let x: Vec<f64> = map.iter().map(|&j| p[j]).collect();
            self.eval_unchecked(values, &x)
        }))
    }
}

/// Coefficients over a tensor grid, flattened row-major (last axis fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientGrid {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl CoefficientGrid {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return param(format!(
                "{} values do not fill a grid of shape {shape:?}",
                values.len()
            ));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, multi: &[usize]) -> f64 {
        self.values[flatten(multi, &self.shape)]
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        flatten(multi, &self.shape)
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        unflatten(flat, &self.shape)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

pub fn flatten(multi: &[usize], shape: &[usize]) -> usize {
    multi.iter().zip(shape).fold(0, |acc, (&l, &m)| acc * m + l)
}

pub fn unflatten(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut multi = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        multi[k] = flat % shape[k];
        flat /= shape[k];
    }
    multi
}

/// Product of finite point sets `F_1 x ... x F_d`, each containing 0 and 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiaffineDomain {
    sets: Vec<Vec<f64>>,
}

impl MultiaffineDomain {
    pub fn new(sets: Vec<Vec<f64>>) -> Result<Self> {
        for s in &sets {
            if s.first() != Some(&0.0) || s.last() != Some(&1.0) {
                return param("each set must start at 0 and end at 1");
            }
            if s.windows(2).any(|w| !(w[0] < w[1])) {
                return param("points of each set must be sorted and distinct");
            }
        }
        Ok(Self { sets })
    }

    /// Domain `S ∩ [0,1]^d` of a subdivision.
    pub fn from_subdivision(sub: &Subdivision) -> Self {
        Self {
            sets: sub.per_dim().iter().map(|s| s.knots().to_vec()).collect(),
        }
    }

    pub fn sets(&self) -> &[Vec<f64>] {
        &self.sets
    }
}

/// Componentwise-affine extension of `f` (known on the domain points) to `x`.
///
/// Each coordinate is bracketed by its closest neighbours in `F_j`; the value
/// is the corner combination with product weights. Coordinates lying in `F_j`
/// contribute a single corner with weight one.
pub fn multiaffine_extend<F>(domain: &MultiaffineDomain, f: F, x: &[f64]) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let factors: Vec<Vec<(f64, f64)>> = domain
        .sets
        .iter()
        .zip(x)
        .map(|(set, &t)| {
            if set.contains(&t) {
                return vec![(t, 1.0)];
            }
            let mut lo = set[0];
            let mut hi = set[set.len() - 1];
            for &p in set {
                if p <= t && p > lo {
                    lo = p;
                }
                if p >= t && p < hi {
                    hi = p;
                }
            }
            let w_plus = (t - lo) / (hi - lo);
            vec![(lo, 1.0 - w_plus), (hi, w_plus)]
        })
        .collect();

    let mut total = 0.0;
    let mut corner = vec![0.0; x.len()];
    let counts: Vec<usize> = factors.iter().map(Vec::len).collect();
    let n: usize = counts.iter().product();
    for flat in 0..n {
        let eps = unflatten(flat, &counts);
        let mut weight = 1.0;
        for (j, &e) in eps.iter().enumerate() {
            let (p, w) = factors[j][e];
            corner[j] = p;
            weight *= w;
        }
        total += weight * f(&corner);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fig1() -> Subdivision {
        Subdivision::new(
            4,
            vec![0, 2],
            vec![
                Subdivision1D::new(vec![0.0, 1.0 / 3.0, 1.0]).unwrap(),
                Subdivision1D::new(vec![0.0, 0.25, 0.5, 1.0]).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn hat_values() {
        assert_eq!(hat_basis_eval(0.0, 1.0 / 3.0, 1.0, 1.0 / 3.0).unwrap(), 1.0);
        assert_eq!(hat_basis_eval(0.0, 1.0 / 3.0, 1.0, 0.0).unwrap(), 0.0);
        assert_eq!(hat_basis_eval(0.0, 1.0 / 3.0, 1.0, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(hat_basis_eval(0.0, 1.0 / 3.0, 1.0, 2.0 / 3.0).unwrap(), 0.5, epsilon = 1e-15);
        assert!(hat_basis_eval(0.5, 0.2, 1.0, 0.3).is_err());
    }

    #[test]
    fn pyramid_of_figure_one() {
        let s = fig1();
        assert_eq!(s.grid_size(), 12);
        assert_abs_diff_eq!(s.tensor_basis_eval(&[1, 2], &[1.0 / 3.0, 0.5]).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(s.tensor_basis_eval(&[1, 2], &[0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(s.tensor_basis_eval(&[1, 2], &[1.0 / 6.0, 0.5]).unwrap(), 0.5, epsilon = 1e-15);
        assert!(s.tensor_basis_eval(&[3, 0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn spline_interpolates_coefficients() {
        let s = Subdivision::new(1, vec![0], vec![Subdivision1D::new(vec![0.0, 0.5, 1.0]).unwrap()]).unwrap();
        let c = CoefficientGrid::new(vec![3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s.eval_spline(&c, &[0.25]).unwrap(), 0.5, epsilon = 1e-15);
        let z = CoefficientGrid::zeros(vec![3]);
        assert_eq!(s.eval_spline(&z, &[0.7]).unwrap(), 0.0);
        let bad = CoefficientGrid::zeros(vec![4]);
        assert!(s.eval_spline(&bad, &[0.7]).is_err());

        let s = fig1();
        let vals: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let c = CoefficientGrid::new(s.shape(), vals).unwrap();
        for (flat, p) in s.grid_points().iter().enumerate() {
            assert_eq!(s.eval_spline(&c, p).unwrap(), c.values()[flat]);
        }
    }

    #[test]
    fn projection_examples() {
        let s = Subdivision::new(1, vec![0], vec![Subdivision1D::new(vec![0.0, 0.5, 1.0]).unwrap()]).unwrap();
        assert_eq!(s.project(|_| 3.0).values(), &[3.0, 3.0, 3.0]);
        assert_eq!(s.project(|x| x[0]).values(), &[0.0, 0.5, 1.0]);
        let sq = s.project(|x| x[0] * x[0]);
        assert_eq!(sq.values(), &[0.0, 0.25, 1.0]);
        assert_abs_diff_eq!(s.eval_spline(&sq, &[0.25]).unwrap(), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn knot_insertion() {
        let s = Subdivision::initial(2, 0).unwrap();
        let t = s.insert_knot(0, 0.29, DEFAULT_MIN_SEPARATION).unwrap();
        assert_eq!(t.axis(0).unwrap().knots(), &[0.0, 0.29, 1.0]);
        assert!(s.is_refined_by(&t));
        assert!(!t.is_refined_by(&s));
        assert!(matches!(t.insert_knot(0, 0.29, DEFAULT_MIN_SEPARATION), Err(Error::Separation { .. })));
        assert!(t.insert_knot(1, 0.5, DEFAULT_MIN_SEPARATION).is_err());
        assert!(t.insert_knot(0, 1.0, DEFAULT_MIN_SEPARATION).is_err());
    }

    #[test]
    fn variable_addition() {
        let s = Subdivision::new(3, vec![1], vec![Subdivision1D::equispaced(5).unwrap()]).unwrap();
        let t = s.add_variable(0).unwrap();
        assert_eq!(t.active(), &[0, 1]);
        assert_eq!(t.grid_size(), 10);
        assert!(t.add_variable(1).is_err());
        assert!(t.add_variable(3).is_err());

        let c = s.project(|x| (3.0 * x[0]).sin());
        let moved = s.transfer(&c, &t).unwrap();
        for i in 0..=20 {
            for j in 0..=20 {
                let p = [i as f64 / 20.0, j as f64 / 20.0];
                let a = s.eval_spline(&c, &[p[1]]).unwrap();
                let b = t.eval_spline(&moved, &p).unwrap();
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn flatten_is_row_major() {
        let shape = [3, 4];
        assert_eq!(flatten(&[0, 1], &shape), 1);
        assert_eq!(flatten(&[1, 0], &shape), 4);
        for f in 0..12 {
            assert_eq!(flatten(&unflatten(f, &shape), &shape), f);
        }
        assert_eq!(strides(&[3, 4, 2]), vec![8, 2, 1]);
    }

    #[test]
    fn multiaffine_examples() {
        let d1 = MultiaffineDomain::new(vec![vec![0.0, 1.0]]).unwrap();
        let f = |x: &[f64]| 2.0 * x[0];
        assert_abs_diff_eq!(multiaffine_extend(&d1, f, &[0.5]), 1.0, epsilon = 1e-15);
        assert_eq!(multiaffine_extend(&d1, f, &[1.0]), 2.0);

        let d2 = MultiaffineDomain::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let corners = |x: &[f64]| match (x[0] as u8, x[1] as u8) {
            (0, 0) => 0.0,
            (0, 1) => 1.0,
            (1, 0) => 2.0,
            _ => 5.0,
        };
        assert_abs_diff_eq!(multiaffine_extend(&d2, corners, &[0.5, 0.5]), 2.0, epsilon = 1e-15);
        assert!(MultiaffineDomain::new(vec![vec![0.0, 0.5]]).is_err());
    }

    #[test]
    fn subdivision_validation() {
        assert!(Subdivision1D::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(Subdivision1D::new(vec![0.1, 1.0]).is_err());
        assert!(Subdivision::new(2, vec![1, 0], vec![Subdivision1D::minimal(); 2]).is_err());
        assert!(Subdivision::new(2, vec![2], vec![Subdivision1D::minimal()]).is_err());
        let e = Subdivision1D::equispaced(4).unwrap();
        assert_eq!(e.knots().len(), 4);
        assert_abs_diff_eq!(e.knots()[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(e.extended(-1), -1.0);
        assert_eq!(e.extended(4), 2.0);
    }
}
