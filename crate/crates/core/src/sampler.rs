//! Draws from the posterior of the knot values conditioned on the
//! observations and truncated to the constraint set.
//!
//! Two samplers are provided: exact rejection from the untruncated Gaussian,
//! which is fine while the constraint set has reasonable prior mass, and a
//! Gibbs sampler. The Gibbs sampler runs in whitened coordinates `α = μ + L z`,
//! where every full conditional is a one-dimensional truncated standard normal.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{CoefficientGrid, Subdivision};
use crate::constraints::ConstraintSystem;
use crate::error::{param, Error, Result};
use crate::kernel::{knot_covariance, KernelModel};
use crate::linalg::{cholesky_with_jitter, SparseRows};
use crate::solver::{default_max_iter, solve_qp, QpProblem, DEFAULT_TOL};

/// Slack allowed when checking that a draw satisfies the truncation.
pub const DRAW_TOL: f64 = 1e-10;

/// `N(mean, covariance)` restricted to `{α : M α <= v}`.
#[derive(Clone, Debug)]
pub struct TruncatedGaussianSpec {
    mean: Vec<f64>,
    covariance: DMatrix<f64>,
    /// Lower-triangular `L` with `L Lᵀ = covariance` (plus jitter).
    factor: DMatrix<f64>,
    matrix: SparseRows,
    bounds: Vec<f64>,
    shape: Vec<usize>,
}

impl TruncatedGaussianSpec {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>, matrix: SparseRows, bounds: Vec<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n || matrix.ncols() != n || matrix.nrows() != bounds.len() {
            return param("truncated Gaussian dimensions are inconsistent");
        }
        let scale = (0..n).map(|i| covariance[(i, i)]).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
        let (chol, _) = cholesky_with_jitter(&covariance, scale)?;
        Ok(Self {
            mean,
            covariance,
            factor: chol.l(),
            matrix,
            bounds,
            shape: vec![n],
        })
    }

    /// Reshape draws to a coefficient grid of `shape`.
    pub fn with_shape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.dim() {
            return param("shape does not match the dimension");
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn matrix(&self) -> &SparseRows {
        &self.matrix
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Largest violation of the truncation at `alpha`, `-inf` without rows.
    pub fn violation(&self, alpha: &[f64]) -> f64 {
        (0..self.bounds.len())
            .map(|b| self.matrix.row_dot(b, alpha) - self.bounds[b])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Posterior of the knot values given `y = Φ α + ε`, `ε ~ N(0, τ² I)`:
/// mean `K Φᵀ (Φ K Φᵀ + τ² I)⁻¹ y`, covariance `K - K Φᵀ (Φ K Φᵀ + τ² I)⁻¹ Φ K`,
/// truncated to the inequality rows of `cons`.
pub fn posterior_spec(
    model: &KernelModel,
    sub: &Subdivision,
    cons: &ConstraintSystem,
    tau2: f64,
) -> Result<TruncatedGaussianSpec> {
    if !(tau2 > 0.0 && tau2.is_finite()) {
        return param(format!("noise variance must be positive, got {tau2}"));
    }
    let n = sub.grid_size();
    if cons.phi.ncols() != n || cons.inequalities.matrix.ncols() != n {
        return param("constraint system does not match the subdivision");
    }
    let cov = knot_covariance(model, sub)?;
    let l = cov.factor();
    // Σ = (K⁻¹ + ΦᵀΦ/τ²)⁻¹ = L (I + LᵀΦᵀΦL/τ²)⁻¹ Lᵀ = (L C⁻ᵀ)(L C⁻ᵀ)ᵀ
    let a = cons.phi.mul_dense(&l);
    let mut b = a.tr_mul(&a) / tau2;
    for i in 0..n {
        b[(i, i)] += 1.0;
    }
    let c = Cholesky::new(b).ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))?;
    let jt = c
        .l()
        .solve_lower_triangular(&l.transpose())
        .ok_or_else(|| Error::Numerical("singular posterior factor".into()))?;
    let j = jt.transpose();
    let covariance = &j * &jt;
    let rhs = DVector::from_vec(cons.phi.tr_mul_vec(&cons.y)) / tau2;
    let mean = &j * (&jt * rhs);
    TruncatedGaussianSpec::new(
        mean.as_slice().to_vec(),
        covariance,
        cons.inequalities.matrix.clone(),
        cons.inequalities.bounds.clone(),
    )?
    .with_shape(sub.shape())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    Rejection,
    Gibbs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOptions {
    pub method: SamplerMethod,
    pub seed: u64,
    /// Gibbs sweeps discarded before the first draw.
    pub burn_in: usize,
    /// Gibbs sweeps between retained draws.
    pub thinning: usize,
    /// Rejection proposals after which a low acceptance rate aborts.
    pub probe_budget: usize,
    /// Feasible starting point for Gibbs; the mean is used when absent.
    pub start: Option<Vec<f64>>,
}

impl SampleOptions {
    pub fn new(method: SamplerMethod, seed: u64) -> Self {
        Self {
            method,
            seed,
            burn_in: 100,
            thinning: 10,
            probe_budget: 10_000,
            start: None,
        }
    }
}

/// `count` draws from the truncated Gaussian, each satisfying the truncation
/// within [`DRAW_TOL`]. Deterministic for a given seed.
pub fn sample(spec: &TruncatedGaussianSpec, count: usize, opts: &SampleOptions) -> Result<Vec<CoefficientGrid>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let draws = match opts.method {
        SamplerMethod::Rejection => rejection(spec, count, opts, &mut rng)?,
        SamplerMethod::Gibbs => gibbs(spec, count, opts, &mut rng)?,
    };
    draws
        .into_iter()
        .map(|d| {
            let v = spec.violation(&d);
            if v > DRAW_TOL {
                return Err(Error::Numerical(format!("draw violates the truncation by {v:e}")));
            }
            CoefficientGrid::new(spec.shape.clone(), d)
        })
        .collect()
}

fn gaussian_draw(spec: &TruncatedGaussianSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = spec.dim();
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    let x = &spec.factor * z;
    spec.mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect()
}

fn rejection(
    spec: &TruncatedGaussianSpec,
    count: usize,
    opts: &SampleOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(count);
    let mut proposals = 0usize;
    while out.len() < count {
        let d = gaussian_draw(spec, rng);
        proposals += 1;
        if spec.violation(&d) <= 0.0 {
            out.push(d);
        }
        if proposals >= opts.probe_budget && (out.len() as f64) < 1e-4 * proposals as f64 {
            return Err(Error::Numerical(format!(
                "rejection sampling accepted {} of {proposals} proposals; use the gibbs sampler",
                out.len()
            )));
        }
    }
    Ok(out)
}

fn gibbs(spec: &TruncatedGaussianSpec, count: usize, opts: &SampleOptions, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let n = spec.dim();
    let start = opts.start.clone().unwrap_or_else(|| spec.mean.clone());
    if start.len() != n {
        return param("Gibbs start has the wrong dimension");
    }
    if spec.violation(&start) > DRAW_TOL {
        return Err(Error::Infeasible(
            "Gibbs sampler needs a feasible start; pass the constrained mode".into(),
        ));
    }
    // whitened constraints G z <= h with G = M L, h = v - M μ
    let rows = spec.bounds.len();
    let mut g = DMatrix::<f64>::zeros(rows, n);
    for (b, row) in spec.matrix.rows().iter().enumerate() {
        for &(c, v) in row {
            for k in 0..=c {
                g[(b, k)] += v * spec.factor[(c, k)];
            }
        }
    }
    let mu_m = spec.matrix.mul_vec(&spec.mean);
    let h: Vec<f64> = spec.bounds.iter().zip(&mu_m).map(|(v, m)| v - m).collect();
    let diff = DVector::from_iterator(n, start.iter().zip(&spec.mean).map(|(s, m)| s - m));
    let mut z: Vec<f64> = spec
        .factor
        .solve_lower_triangular(&diff)
        .ok_or_else(|| Error::Numerical("singular covariance factor".into()))?
        .as_slice()
        .to_vec();
    let slack_of = |z: &[f64]| -> Vec<f64> {
        let gz = &g * DVector::from_column_slice(z);
        h.iter().zip(gz.iter()).map(|(h, v)| h - v).collect()
    };
    if slack_of(&z).iter().any(|s| *s <= 0.0) {
        // On the boundary, or pushed outside by an ill-conditioned factor:
        // start from the whitened mode moved slightly into the interior.
        z = whitened_mode(&g, &h)?;
    }
    // slack = h - G z, updated coordinate by coordinate within a sweep and
    // recomputed exactly between sweeps
    let mut slack = slack_of(&z);

    let sweep = |z: &mut Vec<f64>, slack: &mut Vec<f64>, rng: &mut ChaCha8Rng| {
        for k in 0..n {
            let col = g.column(k);
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for b in 0..rows {
                let gk = col[b];
                if gk != 0.0 {
                    let r = (slack[b] + gk * z[k]) / gk;
                    if gk > 0.0 {
                        hi = hi.min(r);
                    } else {
                        lo = lo.max(r);
                    }
                }
            }
            let new = if lo < hi {
                truncated_standard_normal(lo, hi, rng)
            } else {
                // empty interval from rounding at the boundary: stay put
                z[k]
            };
            let delta = new - z[k];
            if delta != 0.0 {
                for b in 0..rows {
                    slack[b] -= col[b] * delta;
                }
                z[k] = new;
            }
        }
    };

    for _ in 0..opts.burn_in {
        sweep(&mut z, &mut slack, rng);
        slack = slack_of(&z);
    }
    let thin = opts.thinning.max(1);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..thin {
            sweep(&mut z, &mut slack, rng);
            slack = slack_of(&z);
        }
        let x = &spec.factor * DVector::from_column_slice(&z);
        out.push(spec.mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect());
    }
    Ok(out)
}

/// `argmin |z|² subject to G z <= h`, with every row tightened so the point
/// keeps a small distance from each face.
fn whitened_mode(g: &DMatrix<f64>, h: &[f64]) -> Result<Vec<f64>> {
    let n = g.ncols();
    let tightened: Vec<f64> = h.iter().enumerate().map(|(b, h)| h - 1e-8 * g.row(b).norm()).collect();
    let rows = (0..g.nrows())
        .map(|b| (0..n).filter(|&k| g[(b, k)] != 0.0).map(|k| (k, g[(b, k)])).collect())
        .collect();
    let p = QpProblem::dense(DMatrix::identity(n, n), vec![0.0; n])
        .with_inequalities(SparseRows::from_rows(n, rows), tightened);
    let sol = solve_qp(&p, DEFAULT_TOL, default_max_iter(&p))?;
    if !sol.is_optimal() {
        return Err(Error::Numerical(format!("whitened mode: {:?}", sol.status)));
    }
    Ok(sol.alpha.values().to_vec())
}

/// Standard normal restricted to `[lo, hi]` (either end may be infinite),
/// by exponential, uniform or normal rejection depending on the interval.
pub fn truncated_standard_normal<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    debug_assert!(lo < hi);
    if hi <= 0.0 {
        return -truncated_standard_normal(-hi, -lo, rng);
    }
    if lo < 0.0 {
        // interval straddles zero
        if hi - lo > (2.0 * std::f64::consts::PI).sqrt() {
            loop {
                let x: f64 = StandardNormal.sample(rng);
                if x >= lo && x <= hi {
                    return x;
                }
            }
        }
        loop {
            let x = rng.random_range(lo..=hi);
            if rng.random::<f64>() <= (-0.5 * x * x).exp() {
                return x;
            }
        }
    }
    // 0 <= lo < hi
    let rate = 0.5 * (lo + (lo * lo + 4.0).sqrt());
    if hi - lo > 2.0 / rate {
        loop {
            let e: f64 = Exp1.sample(rng);
            let x = lo + e / rate;
            if x <= hi && rng.random::<f64>() <= (-0.5 * (x - rate).powi(2)).exp() {
                return x;
            }
        }
    }
    loop {
        let x = rng.random_range(lo..=hi);
        if rng.random::<f64>() <= (-0.5 * (x * x - lo * lo)).exp() {
            return x;
        }
    }
}

/// Pointwise empirical quantiles `((1 - level) / 2, (1 + level) / 2)` of the
/// splines `(sub, draw)` at ambient points.
pub fn credible_band(
    draws: &[CoefficientGrid],
    sub: &Subdivision,
    points: &[Vec<f64>],
    level: f64,
) -> Result<Vec<(f64, f64)>> {
    if draws.len() < 2 {
        return param("a credible band needs at least two draws");
    }
    if !(level > 0.0 && level <= 1.0) {
        return param(format!("level must lie in (0, 1], got {level}"));
    }
    points
        .iter()
        .map(|p| {
            let mut v = draws
                .iter()
                .map(|d| sub.eval_ambient(d, p))
                .collect::<Result<Vec<f64>>>()?;
            v.sort_by(f64::total_cmp);
            Ok((quantile(&v, 0.5 * (1.0 - level)), quantile(&v, 0.5 * (1.0 + level))))
        })
        .collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Lag-one sample autocorrelation of a series.
pub fn lag1_autocorrelation(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / var
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Subdivision1D;
    use crate::constraints::{build_system, ConstraintKind};
    use crate::kernel::KernelFamily;
    use approx::assert_abs_diff_eq;

    fn half_line() -> TruncatedGaussianSpec {
        TruncatedGaussianSpec::new(
            vec![0.0],
            DMatrix::from_element(1, 1, 1.0),
            SparseRows::from_rows(1, vec![vec![(0, -1.0)]]),
            vec![0.0],
        )
        .unwrap()
    }

    fn model() -> KernelModel {
        KernelModel::new(KernelFamily::Matern52, 1.3, vec![0.4], 1e-3).unwrap()
    }

    fn sub(m: usize) -> Subdivision {
        Subdivision::new(1, vec![0], vec![Subdivision1D::equispaced(m).unwrap()]).unwrap()
    }

    #[test]
    fn no_data_gives_prior() {
        let s = sub(4);
        let cons = build_system(&[], &s, &[], &[]).unwrap();
        let spec = posterior_spec(&model(), &s, &cons, 0.1).unwrap();
        assert!(spec.mean().iter().all(|v| *v == 0.0));
        let k = knot_covariance(&model(), &s).unwrap();
        for (a, b) in spec.covariance().iter().zip(k.matrix().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn huge_noise_recovers_prior_mean() {
        let s = sub(4);
        let x = vec![vec![0.2], vec![0.8]];
        let y = vec![1.0, 2.0];
        let cons = build_system(&[], &s, &x, &y).unwrap();
        let tau2 = 1e10 * crate::kernel::sample_variance(&y);
        let spec = posterior_spec(&model(), &s, &cons, tau2).unwrap();
        assert!(spec.mean().iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn posterior_matches_dense_formula() {
        let s = sub(4);
        let x = vec![vec![0.1], vec![0.5], vec![0.55], vec![0.9]];
        let y = vec![0.3, 1.0, 1.1, 2.0];
        let cons = build_system(&[], &s, &x, &y).unwrap();
        let tau2 = 0.01;
        let spec = posterior_spec(&model(), &s, &cons, tau2).unwrap();
        let kc = knot_covariance(&model(), &s).unwrap();
        let mut k = kc.matrix().clone();
        for i in 0..4 {
            k[(i, i)] += kc.jitter();
        }
        let phi = cons.phi.to_dense();
        let mut sm = &phi * &k * phi.transpose();
        for i in 0..4 {
            sm[(i, i)] += tau2;
        }
        let sinv = sm.try_inverse().unwrap();
        let kpt = &k * phi.transpose();
        let mean = &kpt * &sinv * DVector::from_column_slice(&y);
        let cov = &k - &kpt * &sinv * kpt.transpose();
        for (a, b) in spec.mean().iter().zip(mean.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        for (a, b) in spec.covariance().iter().zip(cov.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn half_normal_mean() {
        let target = (2.0 / std::f64::consts::PI).sqrt();
        let sd = (1.0 - 2.0 / std::f64::consts::PI).sqrt();
        let n = 20_000;
        for method in [SamplerMethod::Rejection, SamplerMethod::Gibbs] {
            let mut opts = SampleOptions::new(method, 3);
            opts.start = Some(vec![1.0]);
            opts.thinning = 1;
            let draws = sample(&half_line(), n, &opts).unwrap();
            let mean = draws.iter().map(|d| d.values()[0]).sum::<f64>() / n as f64;
            assert!((mean - target).abs() < 3.0 * sd / (n as f64).sqrt(), "{method:?}: {mean}");
            assert!(draws.iter().all(|d| d.values()[0] >= 0.0));
        }
    }

    #[test]
    fn gibbs_requires_feasible_start() {
        let mut opts = SampleOptions::new(SamplerMethod::Gibbs, 0);
        opts.start = Some(vec![-1.0]);
        assert!(matches!(sample(&half_line(), 5, &opts), Err(Error::Infeasible(_))));
    }

    #[test]
    fn rejection_gives_up_on_tiny_mass() {
        let spec = TruncatedGaussianSpec::new(
            vec![0.0],
            DMatrix::from_element(1, 1, 1.0),
            SparseRows::from_rows(1, vec![vec![(0, -1.0)]]),
            vec![-9.0],
        )
        .unwrap();
        let opts = SampleOptions::new(SamplerMethod::Rejection, 0);
        assert!(sample(&spec, 1, &opts).is_err());
    }

    #[test]
    fn truncated_normal_stays_in_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(lo, hi) in &[(-1.0, 1.0), (-10.0, 10.0), (2.0, 2.1), (3.0, f64::INFINITY), (f64::NEG_INFINITY, -5.0), (0.5, 8.0)] {
            for _ in 0..1000 {
                let x = truncated_standard_normal(lo, hi, &mut rng);
                assert!(x >= lo && x <= hi);
            }
        }
    }

    #[test]
    fn monotone_posterior_draws_are_feasible_and_reproducible() {
        let s = sub(6);
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![(i as f64 + 0.5) / 8.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| (6.0 * p[0] - 3.0).atan()).collect();
        let cons = build_system(&[ConstraintKind::monotone()], &s, &x, &y).unwrap();
        let m = model();
        let spec = posterior_spec(&m, &s, &cons, 1e-3).unwrap();
        let mode = crate::solver::compute_noisy_map(&m, &s, &cons, 1e-3).unwrap();
        let mut opts = SampleOptions::new(SamplerMethod::Gibbs, 42);
        opts.start = Some(mode.alpha.values().to_vec());
        let a = sample(&spec, 50, &opts).unwrap();
        let b = sample(&spec, 50, &opts).unwrap();
        assert_eq!(a, b);
        for d in &a {
            assert!(crate::constraints::check_feasible_grid(&[ConstraintKind::monotone()], &s, d).unwrap());
        }
    }

    #[test]
    fn band_edge_cases() {
        let s = sub(3);
        let d = CoefficientGrid::new(vec![3], vec![0.0, 1.0, 2.0]).unwrap();
        let pts = vec![vec![0.25], vec![0.9]];
        let band = credible_band(&[d.clone(), d.clone(), d.clone()], &s, &pts, 0.9).unwrap();
        assert!(band.iter().all(|(lo, hi)| lo == hi));
        let e = CoefficientGrid::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap();
        let f = CoefficientGrid::new(vec![3], vec![-1.0, 3.0, 0.0]).unwrap();
        let band = credible_band(&[d.clone(), e, f], &s, &[vec![0.5]], 1.0).unwrap();
        assert_eq!(band[0], (1.0, 3.0));
        assert!(credible_band(&[d], &s, &pts, 0.9).is_err());
    }

    #[test]
    fn quantiles_and_autocorrelation() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_abs_diff_eq!(quantile(&v, 0.5), 2.5);
        assert!(lag1_autocorrelation(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]) < -0.5);
        assert_eq!(lag1_autocorrelation(&[2.0, 2.0]), 0.0);
    }
}
