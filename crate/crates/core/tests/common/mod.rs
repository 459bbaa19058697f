//! Oracles and random generators shared by the integration tests.
#![allow(dead_code)]

use maxmod_core::basis::{CoefficientGrid, Subdivision, Subdivision1D};
use maxmod_core::constraints::ConstraintKind;
use rand::seq::index::sample;
use rand::Rng;

/// Random 1-D subdivision with `m` knots and gaps of at least 1e-3.
pub fn random_axis<R: Rng>(rng: &mut R, m: usize) -> Subdivision1D {
    assert!(m >= 2);
    loop {
        let mut k: Vec<f64> = (0..m - 2).map(|_| rng.random_range(0.0..1.0)).collect();
        k.push(0.0);
        k.push(1.0);
        k.sort_by(f64::total_cmp);
        if k.windows(2).all(|w| w[1] - w[0] >= 1e-3) {
            return Subdivision1D::new(k).unwrap();
        }
    }
}

/// Random subdivision of `[0,1]^ambient` with `d` active variables and
/// between 2 and `max_knots` knots each.
pub fn random_sub<R: Rng>(rng: &mut R, ambient: usize, d: usize, max_knots: usize) -> Subdivision {
    let mut active: Vec<usize> = sample(rng, ambient, d).into_vec();
    active.sort_unstable();
    let axes = active.iter().map(|_| {
        let m = rng.random_range(2..=max_knots);
        random_axis(rng, m)
    });
    let axes: Vec<_> = axes.collect();
    Subdivision::new(ambient, active, axes).unwrap()
}

pub fn random_grid<R: Rng>(rng: &mut R, sub: &Subdivision) -> CoefficientGrid {
    let n = sub.grid_size();
    CoefficientGrid::new(sub.shape(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Composite 3-point Gauss–Legendre rule over the tensor cells spanned by
/// `breaks` (one sorted list per axis). Exact for integrands of degree <= 5
/// per axis on every cell, hence for squares of multilinear splines whose
/// kinks lie on the breaks.
pub fn cell_quadrature<F: Fn(&[f64]) -> f64>(breaks: &[Vec<f64>], f: F) -> f64 {
    const NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
    const WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let per_axis: Vec<Vec<(f64, f64)>> = breaks
        .iter()
        .map(|b| {
            b.windows(2)
                .flat_map(|w| {
                    let (m, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
                    NODES.iter().zip(WEIGHTS).map(move |(x, wt)| (m + h * x, h * wt))
                })
                .collect()
        })
        .collect();
    let counts: Vec<usize> = per_axis.iter().map(Vec::len).collect();
    let total: usize = counts.iter().product();
    let mut point = vec![0.0; breaks.len()];
    let mut sum = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        for j in (0..counts.len()).rev() {
            let (x, wt) = per_axis[j][rem % counts[j]];
            rem /= counts[j];
            point[j] = x;
            w *= wt;
        }
        sum += w * f(&point);
    }
    sum
}

/// `∫ (spline)^2` over the active cube by exact cell quadrature.
pub fn l2_squared(sub: &Subdivision, coeffs: &CoefficientGrid) -> f64 {
    let breaks: Vec<Vec<f64>> = sub.per_dim().iter().map(|s| s.knots().to_vec()).collect();
    cell_quadrature(&breaks, |x| sub.eval_spline(coeffs, x).unwrap().powi(2))
}

/// `∫ (Y_old - Y_new)^2` over the active cube of `new`, which must refine
/// `old` (inactive coordinates of `old` are irrelevant to it).
pub fn l2_squared_difference(
    old: &Subdivision,
    old_mode: &CoefficientGrid,
    new: &Subdivision,
    new_mode: &CoefficientGrid,
) -> f64 {
    let breaks: Vec<Vec<f64>> = new.per_dim().iter().map(|s| s.knots().to_vec()).collect();
    cell_quadrature(&breaks, |x| {
        let mut p = vec![0.5; new.ambient_dim()];
        for (j, &a) in new.active().iter().enumerate() {
            p[a] = x[j];
        }
        let d = old.eval_ambient(old_mode, &p).unwrap() - new.eval_ambient(new_mode, &p).unwrap();
        d * d
    })
}

/// Sorted union of the knots and `extra` equispaced points.
fn dense_axis(s: &Subdivision1D, extra: usize) -> Vec<f64> {
    let mut v: Vec<f64> = s.knots().to_vec();
    v.extend((0..=extra).map(|i| i as f64 / extra as f64));
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Evaluate the shape constraint directly on the spline: boundedness on a
/// dense grid, monotonicity along every axis-aligned pair of consecutive
/// dense points, convexity as non-decreasing slopes along every dense line.
pub fn dense_shape_check(kind: &ConstraintKind, sub: &Subdivision, coeffs: &CoefficientGrid, slack: f64) -> bool {
    let axes: Vec<Vec<f64>> = sub.per_dim().iter().map(|s| dense_axis(s, 12)).collect();
    let eval = |x: &[f64]| sub.eval_spline(coeffs, x).unwrap();
    let d = sub.dim();
    let applies = |variables: &Option<Vec<usize>>, pos: usize| {
        variables.as_ref().is_none_or(|v| v.contains(&sub.active()[pos]))
    };
    match kind {
        ConstraintKind::Bounded { lower, upper } => {
            let counts: Vec<usize> = axes.iter().map(Vec::len).collect();
            let total: usize = counts.iter().product();
            (0..total).all(|flat| {
                let x = point(&axes, &counts, flat);
                let v = eval(&x);
                v >= lower - slack && v <= upper + slack
            })
        }
        ConstraintKind::Monotone { variables } | ConstraintKind::Convex { variables } => {
            let convex = matches!(kind, ConstraintKind::Convex { .. });
            (0..d).filter(|&pos| applies(variables, pos)).all(|pos| {
                lines(&axes, pos).into_iter().all(|line| {
                    let vals: Vec<f64> = line.iter().map(|x| eval(x)).collect();
                    let ts: Vec<f64> = line.iter().map(|x| x[pos]).collect();
                    if convex {
                        let slopes: Vec<f64> = (1..ts.len())
                            .map(|i| (vals[i] - vals[i - 1]) / (ts[i] - ts[i - 1]))
                            .collect();
                        slopes.windows(2).all(|w| w[1] >= w[0] - slack)
                    } else {
                        vals.windows(2).all(|w| w[1] >= w[0] - slack)
                    }
                })
            })
        }
    }
}

fn point(axes: &[Vec<f64>], counts: &[usize], mut flat: usize) -> Vec<f64> {
    let mut x = vec![0.0; axes.len()];
    for j in (0..axes.len()).rev() {
        x[j] = axes[j][flat % counts[j]];
        flat /= counts[j];
    }
    x
}

/// All dense lines parallel to axis `pos`.
fn lines(axes: &[Vec<f64>], pos: usize) -> Vec<Vec<Vec<f64>>> {
    let mut others: Vec<Vec<f64>> = axes.to_vec();
    others[pos] = vec![0.0];
    let counts: Vec<usize> = others.iter().map(Vec::len).collect();
    let total: usize = counts.iter().product();
    (0..total)
        .map(|flat| {
            let base = point(&others, &counts, flat);
            axes[pos]
                .iter()
                .map(|&t| {
                    let mut x = base.clone();
                    x[pos] = t;
                    x
                })
                .collect()
        })
        .collect()
}

/// Coefficients satisfying `kind`, then (with probability one half) one
/// coefficient nudged by a random amount that may break the constraint.
pub fn shaped_grid<R: Rng>(rng: &mut R, kind: &ConstraintKind, sub: &Subdivision) -> CoefficientGrid {
    let shape = sub.shape();
    let knots: Vec<&[f64]> = sub.per_dim().iter().map(|s| s.knots()).collect();
    let n = sub.grid_size();
    let mut values: Vec<f64> = match kind {
        ConstraintKind::Bounded { lower, upper } => (0..n).map(|_| rng.random_range(*lower..=*upper)).collect(),
        ConstraintKind::Monotone { .. } => {
            let incr: Vec<Vec<f64>> = shape
                .iter()
                .map(|&m| {
                    let mut acc = 0.0;
                    (0..m)
                        .map(|_| {
                            acc += rng.random_range(0.0..1.0);
                            acc
                        })
                        .collect()
                })
                .collect();
            let c = rng.random_range(0.0..1.0);
            (0..n)
                .map(|flat| {
                    let m = maxmod_core::basis::unflatten(flat, &shape);
                    let sum: f64 = m.iter().enumerate().map(|(j, &l)| incr[j][l]).sum();
                    let prod: f64 = m.iter().enumerate().map(|(j, &l)| incr[j][l]).product();
                    sum + c * prod
                })
                .collect()
        }
        ConstraintKind::Convex { .. } => {
            let coef: Vec<(f64, f64, f64)> = shape
                .iter()
                .map(|_| (rng.random_range(0.0..2.0), rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let cross = rng.random_range(-1.0..1.0);
            (0..n)
                .map(|flat| {
                    let m = maxmod_core::basis::unflatten(flat, &shape);
                    let t: Vec<f64> = m.iter().enumerate().map(|(j, &l)| knots[j][l]).collect();
                    let sum: f64 = t.iter().zip(&coef).map(|(x, (a, b, c))| a * (x - b).powi(2) + c * x).sum();
                    sum + cross * t.iter().product::<f64>()
                })
                .collect()
        }
    };
    if rng.random_bool(0.5) {
        let i = rng.random_range(0..n);
        let mag = 10f64.powf(rng.random_range(-6.0..0.0));
        values[i] += if rng.random_bool(0.5) { mag } else { -mag };
    }
    CoefficientGrid::new(shape, values).unwrap()
}
