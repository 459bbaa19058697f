//! Stationary covariance functions, knot covariance matrices and maximum
//! likelihood estimation of the covariance parameters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Subdivision;
use crate::error::{param, Error, Result};
use crate::linalg::{cholesky_with_jitter, SparseRows};

/// Largest grid for which a dense knot covariance is built.
pub const MAX_GRID_SIZE: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern52,
    Matern32,
}

impl KernelFamily {
    /// Correlation at scaled distance `r`.
    pub fn correlation(self, r: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => (-0.5 * r * r).exp(),
            KernelFamily::Matern52 => {
                let s = 5f64.sqrt() * r;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
            KernelFamily::Matern32 => {
                let s = 3f64.sqrt() * r;
                (1.0 + s) * (-s).exp()
            }
        }
    }
}

/// Covariance family with its parameters; `lengthscales` has one entry per
/// ambient variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub family: KernelFamily,
    pub variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelModel {
    pub fn new(family: KernelFamily, variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let m = Self {
            family,
            variance,
            lengthscales,
            noise_variance,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return param(format!("kernel variance must be positive, got {}", self.variance));
        }
        if self.lengthscales.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return param("lengthscales must be positive");
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return param(format!("noise variance must be non-negative, got {}", self.noise_variance));
        }
        Ok(())
    }

    pub fn ambient_dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Starting point for estimation: variance of `y`, lengthscale 0.3 and
    /// a small noise variance.
    pub fn initial(family: KernelFamily, dim: usize, y: &[f64]) -> Self {
        let v = sample_variance(y);
        Self {
            family,
            variance: v,
            lengthscales: vec![0.3; dim],
            noise_variance: 1e-4 * v,
        }
    }

    /// Covariance between two points given in active coordinates. Inactive
    /// variables take a common value in both points, so they drop out.
    pub fn kernel_eval(&self, active: &[usize], u: &[f64], v: &[f64]) -> f64 {
        let r2: f64 = active
            .iter()
            .zip(u.iter().zip(v))
            .map(|(&a, (x, y))| {
                let s = (x - y) / self.lengthscales[a];
                s * s
            })
            .sum();
        self.variance * self.family.correlation(r2.sqrt())
    }
}

/// Covariance of the process values at the grid knots.
#[derive(Clone, Debug)]
pub struct KnotCovariance {
    matrix: DMatrix<f64>,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
}

impl KnotCovariance {
    /// Covariance matrix before jitter.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Diagonal addition used for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// Lower-triangular factor `L` with `L Lᵀ = K + jitter I`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn knot_covariance(model: &KernelModel, sub: &Subdivision) -> Result<KnotCovariance> {
    let n = sub.grid_size();
    if n > MAX_GRID_SIZE {
        return param(format!("grid of {n} knots exceeds the limit of {MAX_GRID_SIZE}"));
    }
    if model.ambient_dim() != sub.ambient_dim() {
        return param("kernel and subdivision disagree on the ambient dimension");
    }
    let matrix = knot_matrix(model, sub);
    let (chol, jitter) = cholesky_with_jitter(&matrix, model.variance)?;
    Ok(KnotCovariance { matrix, jitter, chol })
}

fn knot_matrix(model: &KernelModel, sub: &Subdivision) -> DMatrix<f64> {
    let points = sub.grid_points();
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = model.variance;
        for j in 0..i {
            let v = model.kernel_eval(sub.active(), &points[i], &points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Gaussian log-density of `y` under `N(0, Φ K Φᵀ + τ² I)`.
pub fn log_marginal_likelihood(model: &KernelModel, sub: &Subdivision, phi: &SparseRows, y: &[f64]) -> Result<f64> {
    let cov = knot_covariance(model, sub)?;
    log_likelihood_with(&cov, model.noise_variance, phi, y)
}

pub(crate) fn log_likelihood_with(cov: &KnotCovariance, tau2: f64, phi: &SparseRows, y: &[f64]) -> Result<f64> {
    let n = phi.nrows();
    let m = cov.size();
    if phi.ncols() != m || y.len() != n {
        return param("interpolation matrix does not match grid or observations");
    }
    if n == 0 {
        return Ok(0.0);
    }
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let a = phi.mul_dense(&cov.factor());
    let yv = DVector::from_column_slice(y);

    if tau2 > 0.0 && m < n {
        // Woodbury: work with the m x m matrix AᵀA + τ² I.
        let mut w = a.tr_mul(&a);
        for i in 0..m {
            w[(i, i)] += tau2;
        }
        let ch = Cholesky::new(w).ok_or_else(|| Error::Numerical("AᵀA + τ²I not positive definite".into()))?;
        let aty = a.tr_mul(&yv);
        let z = ch.l().solve_lower_triangular(&aty).expect("triangular factor");
        let quad = (yv.norm_squared() - z.norm_squared()) / tau2;
        let logdet = (n - m) as f64 * tau2.ln() + 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(-0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * ln2pi)
    } else {
        let mut c = &a * a.transpose();
        for i in 0..n {
            c[(i, i)] += tau2;
        }
        let ch = Cholesky::new(c).ok_or_else(|| {
            Error::Numerical("observation covariance is singular; use a positive noise variance".into())
        })?;
        let z = ch.l().solve_lower_triangular(&yv).expect("triangular factor");
        let logdet = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(-0.5 * z.norm_squared() - 0.5 * logdet - 0.5 * n as f64 * ln2pi)
    }
}

/// Box constraints on the covariance parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperBounds {
    pub lengthscale: (f64, f64),
    pub variance: (f64, f64),
    pub noise_variance: (f64, f64),
}

impl HyperBounds {
    /// Default box scaled by the sample variance of the observations.
    pub fn for_data(y: &[f64]) -> Self {
        let v = sample_variance(y);
        Self {
            lengthscale: (1e-2, 10.0),
            variance: (1e-4 * v, 10.0 * v),
            noise_variance: (1e-8 * v, v),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("lengthscale", self.lengthscale),
            ("variance", self.variance),
            ("noise_variance", self.noise_variance),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return param(format!("bounds for {name} must be finite, positive and ordered"));
            }
        }
        Ok(())
    }
}

/// Population variance, falling back to 1 for constant data.
pub fn sample_variance(y: &[f64]) -> f64 {
    if y.is_empty() {
        return 1.0;
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let v = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if v > 0.0 {
        v
    } else {
        1.0
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub bounds: HyperBounds,
    /// Number of local optimizations; the first starts from the seed model.
    pub restarts: usize,
    pub seed: u64,
    /// Estimate the noise variance (otherwise it is held at the seed value).
    pub fit_noise: bool,
    pub max_evals: usize,
}

impl FitOptions {
    pub fn new(bounds: HyperBounds) -> Self {
        Self {
            bounds,
            restarts: 5,
            seed: 0,
            fit_noise: true,
            max_evals: 400,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: KernelModel,
    pub log_likelihood: f64,
    /// False when no restart beat the seed model.
    pub improved: bool,
}

/// Maximum likelihood estimate of variance, active lengthscales and
/// (optionally) noise variance by Nelder–Mead in log-parameter space.
pub fn fit_hyperparameters(
    seed_model: &KernelModel,
    sub: &Subdivision,
    phi: &SparseRows,
    y: &[f64],
    opts: &FitOptions,
) -> Result<FitOutcome> {
    opts.bounds.validate()?;
    seed_model.validate()?;
    let active = sub.active().to_vec();
    let b = &opts.bounds;

    let mut lower = vec![b.variance.0.ln()];
    let mut upper = vec![b.variance.1.ln()];
    for _ in &active {
        lower.push(b.lengthscale.0.ln());
        upper.push(b.lengthscale.1.ln());
    }
    if opts.fit_noise {
        lower.push(b.noise_variance.0.ln());
        upper.push(b.noise_variance.1.ln());
    }
    let dim = lower.len();

    let to_model = |p: &[f64]| -> KernelModel {
        // exp(ln(bound)) may round past the bound
        let within = |v: f64, (lo, hi): (f64, f64)| v.clamp(lo, hi);
        let mut m = seed_model.clone();
        m.variance = within(p[0].exp(), b.variance);
        for (k, &a) in active.iter().enumerate() {
            m.lengthscales[a] = within(p[1 + k].exp(), b.lengthscale);
        }
        if opts.fit_noise {
            m.noise_variance = within(p[dim - 1].exp(), b.noise_variance);
        }
        m
    };
    let clamp = |p: &mut [f64]| {
        for ((v, lo), hi) in p.iter_mut().zip(&lower).zip(&upper) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let objective = |p: &[f64]| -> f64 {
        match log_marginal_likelihood(&to_model(p), sub, phi, y) {
            Ok(ll) if ll.is_finite() => -ll,
            _ => f64::INFINITY,
        }
    };

    let mut start = vec![seed_model.variance.ln()];
    start.extend(active.iter().map(|&a| seed_model.lengthscales[a].ln()));
    if opts.fit_noise {
        start.push(seed_model.noise_variance.max(f64::MIN_POSITIVE).ln());
    }
    clamp(&mut start);
    let seed_value = objective(&start);

    if opts.restarts == 0 {
        return Ok(FitOutcome {
            model: to_model(&start),
            log_likelihood: -seed_value,
            improved: false,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<Vec<f64>> = (0..opts.restarts)
        .map(|r| {
            if r == 0 {
                start.clone()
            } else {
                lower.iter().zip(&upper).map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect()
            }
        })
        .collect();

    let results: Vec<(Vec<f64>, f64)> = starts
        .into_par_iter()
        .map(|s| nelder_mead(&objective, s, &clamp, opts.max_evals))
        .collect();

    let mut best = (start.clone(), seed_value);
    for (p, v) in results {
        if v < best.1 {
            best = (p, v);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::Numerical("likelihood is not finite anywhere in the search".into()));
    }
    let improved = best.1 < seed_value;
    if !improved {
        log::warn!("hyperparameter search did not improve on the seed model");
    }
    Ok(FitOutcome {
        model: to_model(&best.0),
        log_likelihood: -best.1,
        improved,
    })
}

/// Box-projected Nelder–Mead minimizer. Returns the best vertex and value.
fn nelder_mead<F, C>(f: &F, start: Vec<f64>, clamp: &C, max_evals: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
    C: Fn(&mut [f64]),
{
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = f(&start);
    simplex.push((start.clone(), v0));
    for i in 0..n {
        let mut p = start.clone();
        p[i] += 0.5;
        clamp(&mut p);
        if p == start {
            p[i] -= 0.5;
            clamp(&mut p);
        }
        let v = f(&p);
        simplex.push((p, v));
    }
    let mut evals = n + 1;
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));

    while evals < max_evals {
        order(&mut simplex);
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = simplex
            .iter()
            .skip(1)
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= 1e-10 * (1.0 + best.abs()) && spread < 1e-6 || spread < 1e-9 {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (p, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            clamp(&mut p);
            p
        };

        let xr = along(1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for (p, v) in simplex.iter_mut().skip(1) {
                    for (pi, bi) in p.iter_mut().zip(&x0) {
                        *pi = bi + 0.5 * (*pi - bi);
                    }
                    clamp(p);
                    *v = f(p);
                    evals += 1;
                }
            }
        }
    }
    order(&mut simplex);
    simplex.swap_remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Subdivision1D;
    use approx::assert_abs_diff_eq;

    fn one_d(knots: Vec<f64>) -> Subdivision {
        Subdivision::new(1, vec![0], vec![Subdivision1D::new(knots).unwrap()]).unwrap()
    }

    #[test]
    fn kernel_values() {
        let m = KernelModel::new(KernelFamily::SquaredExponential, 1.0, vec![1.0], 0.0).unwrap();
        assert_eq!(m.kernel_eval(&[0], &[0.3], &[0.3]), 1.0);
        assert_abs_diff_eq!(m.kernel_eval(&[0], &[0.0], &[1.0]), (-0.5f64).exp(), epsilon = 1e-15);

        let m32 = KernelModel::new(KernelFamily::Matern32, 2.0, vec![0.5], 0.0).unwrap();
        let r = 0.4 / 0.5;
        let expected = 2.0 * (1.0 + 3f64.sqrt() * r) * (-(3f64.sqrt()) * r).exp();
        assert_abs_diff_eq!(m32.kernel_eval(&[0], &[0.1], &[0.5]), expected, epsilon = 1e-14);

        let m52 = KernelModel::new(KernelFamily::Matern52, 1.0, vec![0.5], 0.0).unwrap();
        let expected = (1.0 + 5f64.sqrt() * r + 5.0 * r * r / 3.0) * (-(5f64.sqrt()) * r).exp();
        assert_abs_diff_eq!(m52.kernel_eval(&[0], &[0.1], &[0.5]), expected, epsilon = 1e-14);
        assert!(KernelModel::new(KernelFamily::Matern32, -1.0, vec![1.0], 0.0).is_err());
    }

    #[test]
    fn inactive_lengthscales_ignored() {
        let m = KernelModel::new(KernelFamily::SquaredExponential, 1.0, vec![0.3, 1e-3, 0.7], 0.0).unwrap();
        let a = m.kernel_eval(&[0, 2], &[0.1, 0.2], &[0.4, 0.9]);
        let e = (-0.5 * ((0.3f64 / 0.3).powi(2) + (0.7f64 / 0.7).powi(2))).exp();
        assert_abs_diff_eq!(a, e, epsilon = 1e-15);
    }

    #[test]
    fn knot_covariance_structure() {
        let model = KernelModel::new(KernelFamily::Matern52, 2.0, vec![0.4], 0.0).unwrap();
        let s = one_d(vec![0.0, 0.3, 1.0]);
        let k = knot_covariance(&model, &s).unwrap();
        let pts = [0.0, 0.3, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(k.matrix()[(i, j)], k.matrix()[(j, i)]);
                assert_abs_diff_eq!(k.matrix()[(i, j)], model.kernel_eval(&[0], &[pts[i]], &[pts[j]]), epsilon = 1e-15);
                if i != j {
                    assert!(k.matrix()[(i, j)] < 2.0);
                }
            }
        }
        assert!(k.jitter() <= 1e-6 * 2.0);
    }

    #[test]
    fn single_observation_likelihood() {
        // One knot grid is not expressible (grids have at least two knots per
        // axis), so use a unit vector row on a 2-knot grid with unit variance.
        let model = KernelModel::new(KernelFamily::SquaredExponential, 1.0, vec![1.0], 0.0).unwrap();
        let s = one_d(vec![0.0, 1.0]);
        let phi = SparseRows::from_rows(2, vec![vec![(0, 1.0)]]);
        let ll = log_marginal_likelihood(&model, &s, &phi, &[0.0]).unwrap();
        let jitter = knot_covariance(&model, &s).unwrap().jitter();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (1.0 + jitter).ln();
        assert_abs_diff_eq!(ll, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(ll, -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-9);
    }

    #[test]
    fn likelihood_drops_for_far_data() {
        let model = KernelModel::new(KernelFamily::SquaredExponential, 1.0, vec![0.5], 0.01).unwrap();
        let s = one_d(vec![0.0, 0.5, 1.0]);
        let phi = SparseRows::from_rows(3, vec![vec![(0, 1.0)], vec![(1, 0.5), (2, 0.5)]]);
        let near = log_marginal_likelihood(&model, &s, &phi, &[0.5, -0.3]).unwrap();
        let far = log_marginal_likelihood(&model, &s, &phi, &[50.0, -30.0]).unwrap();
        assert!(far < near);
    }

    #[test]
    fn zero_restarts_returns_seed() {
        let model = KernelModel::new(KernelFamily::SquaredExponential, 0.7, vec![0.3], 0.01).unwrap();
        let s = one_d(vec![0.0, 0.5, 1.0]);
        let phi = SparseRows::from_rows(3, vec![vec![(0, 1.0)], vec![(1, 0.5), (2, 0.5)]]);
        let y = [0.1, 0.4];
        let mut opts = FitOptions::new(HyperBounds::for_data(&y));
        opts.bounds.variance = (1e-3, 10.0);
        opts.restarts = 0;
        let out = fit_hyperparameters(&model, &s, &phi, &y, &opts).unwrap();
        assert_eq!(out.model.variance, 0.7);
        assert_eq!(out.model.lengthscales, vec![0.3]);
        assert!(!out.improved);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |p: &[f64]| (p[0] - 1.0).powi(2) + 3.0 * (p[1] + 0.5).powi(2);
        let (p, v) = nelder_mead(&f, vec![0.0, 0.0], &|_: &mut [f64]| {}, 2000);
        assert!(v < 1e-10);
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-4);
        let boxed = |p: &mut [f64]| p[0] = p[0].min(0.5);
        let (p, _) = nelder_mead(&f, vec![0.0, 0.0], &boxed, 2000);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-6);
    }
}
