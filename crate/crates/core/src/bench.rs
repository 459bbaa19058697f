//! Test functions, space-filling designs, error measures and equispaced
//! baseline layouts used to assess the refinement loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{CoefficientGrid, Subdivision, Subdivision1D};
use crate::error::{param, Result};

/// Analytic test functions on `[0, 1]^D`, all non-decreasing in every variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// `x1 / 2 + atan(10 x2)`.
    Atan2d,
    /// `Σ_{i ≤ d} atan(5 (1 - i / (d + 1)) x_i)` in dimension `dim`; only the
    /// first `relevant` variables matter.
    Modatan { dim: usize, relevant: usize },
}

impl TestFunction {
    pub fn validate(&self) -> Result<()> {
        if let TestFunction::Modatan { dim, relevant } = *self {
            if relevant == 0 || relevant > dim {
                return param(format!("modatan needs 1 <= relevant <= dim, got {relevant} and {dim}"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match *self {
            TestFunction::Atan2d => 2,
            TestFunction::Modatan { dim, .. } => dim,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            TestFunction::Atan2d => "atan2d".to_string(),
            TestFunction::Modatan { dim, relevant } => format!("modatan_D{dim}_d{relevant}"),
        }
    }

    /// 0-based indices of the variables the function depends on.
    pub fn relevant_variables(&self) -> Vec<usize> {
        match *self {
            TestFunction::Atan2d => vec![0, 1],
            TestFunction::Modatan { relevant, .. } => (0..relevant).collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            TestFunction::Atan2d => 0.5 * x[0] + (10.0 * x[1]).atan(),
            TestFunction::Modatan { relevant, .. } => {
                let d = relevant as f64;
                (1..=relevant)
                    .map(|i| (5.0 * (1.0 - i as f64 / (d + 1.0)) * x[i - 1]).atan())
                    .sum()
            }
        }
    }

    /// Range of the function over the cube.
    pub fn bounds(&self) -> (f64, f64) {
        let ones = vec![1.0; self.dim()];
        (0.0, self.eval(&ones))
    }
}

/// Points in the unit cube with how they were generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub points: Vec<Vec<f64>>,
    pub kind: String,
    pub seed: u64,
}

impl Design {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min_distance(&self) -> f64 {
        min_pairwise_distance(&self.points)
    }

    pub fn evaluate(&self, f: &TestFunction) -> Vec<f64> {
        self.points.iter().map(|p| f.eval(p)).collect()
    }
}

pub fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in 0..i {
            best = best.min(dist2(&points[i], &points[j]));
        }
    }
    best.sqrt()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Latin hypercube of `n` points (one per stratum `[k/n, (k+1)/n)` in every
/// coordinate), improved by coordinate exchanges that never decrease the
/// minimum pairwise distance.
pub fn maximin_lhd(n: usize, dim: usize, seed: u64, exchange_iters: usize) -> Result<Design> {
    if n < 2 {
        return param("a design needs at least two points");
    }
    if dim == 0 {
        return param("a design needs at least one dimension");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; dim]; n];
    for j in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (p, s) in points.iter_mut().zip(strata) {
            p[j] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }

    let mut d2 = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..i {
            let v = dist2(&points[i], &points[k]);
            d2[i][k] = v;
            d2[k][i] = v;
        }
    }
    let closest = |d2: &Vec<Vec<f64>>| -> (f64, usize, usize) {
        let mut best = (f64::INFINITY, 0, 1);
        for i in 0..n {
            for k in 0..i {
                if d2[i][k] < best.0 {
                    best = (d2[i][k], i, k);
                }
            }
        }
        best
    };
    let (mut current, mut ci, mut ck) = closest(&d2);

    for _ in 0..exchange_iters {
        // move one end of the closest pair half of the time
        let a = if rng.random::<bool>() {
            if rng.random::<bool>() {
                ci
            } else {
                ck
            }
        } else {
            rng.random_range(0..n)
        };
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let j = rng.random_range(0..dim);
        let swap = |pts: &mut Vec<Vec<f64>>| {
            let t = pts[a][j];
            pts[a][j] = pts[b][j];
            pts[b][j] = t;
        };
        swap(&mut points);
        let mut trial = d2.clone();
        for &r in &[a, b] {
            for k in 0..n {
                if k != r {
                    let v = dist2(&points[r], &points[k]);
                    trial[r][k] = v;
                    trial[k][r] = v;
                }
            }
        }
        let (value, i, k) = closest(&trial);
        if value >= current {
            d2 = trial;
            current = value;
            ci = i;
            ck = k;
        } else {
            swap(&mut points);
        }
    }
    Ok(Design {
        points,
        kind: "maximin_lhd".to_string(),
        seed,
    })
}

/// Point set and weights used to approximate integrals over the cube.
#[derive(Clone, Debug, PartialEq)]
pub enum Quadrature {
    /// Tensor midpoint rule with `per_dim` cells per axis.
    Midpoint { per_dim: usize },
    /// Seeded uniform Monte Carlo.
    MonteCarlo { points: usize, seed: u64 },
}

impl Quadrature {
    /// Midpoint rule with 100 cells per axis up to two dimensions, otherwise
    /// Monte Carlo with 10⁵ points.
    pub fn default_for(dim: usize) -> Self {
        if dim <= 2 {
            Quadrature::Midpoint { per_dim: 100 }
        } else {
            Quadrature::MonteCarlo {
                points: 100_000,
                seed: 0,
            }
        }
    }

    pub fn points(&self, dim: usize) -> Vec<Vec<f64>> {
        match *self {
            Quadrature::Midpoint { per_dim } => {
                let total = per_dim.pow(dim as u32);
                (0..total)
                    .map(|mut flat| {
                        let mut p = vec![0.0; dim];
                        for c in p.iter_mut().rev() {
                            *c = ((flat % per_dim) as f64 + 0.5) / per_dim as f64;
                            flat /= per_dim;
                        }
                        p
                    })
                    .collect()
            }
            Quadrature::MonteCarlo { points, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..points).map(|_| (0..dim).map(|_| rng.random()).collect()).collect()
            }
        }
    }
}

/// Normalized squared error `∫ (f - Ŷ)² / ∫ f²` of the spline `(sub, coeffs)`.
pub fn bending_energy<F>(f: F, sub: &Subdivision, coeffs: &CoefficientGrid, quad: &Quadrature) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    sub.check_coeffs(coeffs)?;
    let points = quad.points(sub.ambient_dim());
    let mut num = 0.0;
    let mut den = 0.0;
    for p in &points {
        let fv = f(p);
        let e = fv - sub.eval_ambient(coeffs, p)?;
        num += e * e;
        den += fv * fv;
    }
    if den == 0.0 {
        return param("target function vanishes on the quadrature points");
    }
    Ok(num / den)
}

/// Normalized squared error over observations: `Σ (y - Ŷ(x))² / Σ y²`.
pub fn bending_energy_samples(x: &[Vec<f64>], y: &[f64], sub: &Subdivision, coeffs: &CoefficientGrid) -> Result<f64> {
    if x.len() != y.len() {
        return param("points and observations differ in length");
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, &yv) in x.iter().zip(y) {
        let e = yv - sub.eval_ambient(coeffs, p)?;
        num += e * e;
        den += yv * yv;
    }
    if den == 0.0 {
        return param("observations are all zero");
    }
    Ok(num / den)
}

/// Largest grid built for an equispaced baseline.
pub const BASELINE_KNOT_GUARD: usize = 1500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// The same number of equispaced knots on every active variable.
    Square(usize),
    /// Equispaced knots with a count per active variable.
    Rect(Vec<usize>),
}

/// Equispaced subdivision over `active` (0-based ambient indices).
pub fn baseline_knots(kind: &Baseline, active: &[usize], ambient_dim: usize) -> Result<Subdivision> {
    let counts = match kind {
        Baseline::Square(k) => vec![*k; active.len()],
        Baseline::Rect(c) => {
            if c.len() != active.len() {
                return param(format!("{} counts for {} active variables", c.len(), active.len()));
            }
            c.clone()
        }
    };
    if counts.iter().any(|&c| c < 2) {
        return param("every variable needs at least two knots");
    }
    let total = counts
        .iter()
        .try_fold(1usize, |acc, &c| acc.checked_mul(c))
        .unwrap_or(usize::MAX);
    if total > BASELINE_KNOT_GUARD {
        return param(format!(
            "baseline grid of {total} knots exceeds the guard of {BASELINE_KNOT_GUARD}"
        ));
    }
    let per_dim = counts
        .iter()
        .map(|&c| Subdivision1D::equispaced(c))
        .collect::<Result<Vec<_>>>()?;
    Subdivision::new(ambient_dim, active.to_vec(), per_dim)
}

/// Default sample size and stopping tolerance for a test function: 40 points
/// and 1e-5 for `atan2d`, `10 D` points and 5e-3 for `modatan`.
pub fn preset_defaults(f: &TestFunction) -> (usize, f64) {
    match *f {
        TestFunction::Atan2d => (40, 1e-5),
        TestFunction::Modatan { dim, .. } => (10 * dim, 5e-3),
    }
}
