//! Sequential selection of knots and active variables.
//!
//! At every iteration each input variable proposes one move: a new knot
//! (placed by a one-dimensional search) if the variable is active, or its
//! activation on the two-knot subdivision otherwise. The proposal scores the
//! squared `L²` distance between the current mode and the mode after the move,
//! divided by the number of added basis functions, plus a small reward. The
//! best proposal is applied until no score reaches the tolerance.
//!
//! The `L²` distances are computed exactly from coefficients: the Gram matrix
//! of a tensor hat basis is the Kronecker product of tridiagonal 1-D Gram
//! matrices, and the old mode is re-expressed on the refined grid before
//! subtracting.

use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{flatten, unflatten, CoefficientGrid, Subdivision, Subdivision1D, DEFAULT_MIN_SEPARATION};
use crate::constraints::{build_system, ConstraintKind, ConstraintSystem};
use crate::error::{param, Error, Result};
use crate::kernel::{fit_hyperparameters, FitOptions, HyperBounds, KernelModel};
use crate::linalg::dot;
use crate::solver::{compute_map, compute_noisy_map, QpSolution};

/// Symmetric tridiagonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Tridiagonal {
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn off(&self) -> &[f64] {
        &self.off
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
        }
        for (i, &o) in self.off.iter().enumerate() {
            m[(i, i + 1)] = o;
            m[(i + 1, i)] = o;
        }
        m
    }
}

/// Gram matrix `∫₀¹ φ_ℓ φ_ℓ'` of the hat basis of one subdivision.
pub fn gram_1d(s: &Subdivision1D) -> Tridiagonal {
    let t = s.knots();
    let m = t.len();
    let gaps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let diag = (0..m)
        .map(|l| {
            let left = if l > 0 { gaps[l - 1] } else { 0.0 };
            let right = if l + 1 < m { gaps[l] } else { 0.0 };
            (left + right) / 3.0
        })
        .collect();
    let off = gaps.iter().map(|g| g / 6.0).collect();
    Tridiagonal { diag, off }
}

/// Gram matrix of a tensor hat basis, kept as one tridiagonal factor per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct GramOperator {
    factors: Vec<Tridiagonal>,
}

impl GramOperator {
    pub fn new(sub: &Subdivision) -> Self {
        Self {
            factors: sub.per_dim().iter().map(gram_1d).collect(),
        }
    }

    pub fn factors(&self) -> &[Tridiagonal] {
        &self.factors
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(Tridiagonal::len).collect()
    }

    /// `Ψ x`, one axis at a time.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let shape = self.shape();
        let mut cur = x.to_vec();
        let mut next = vec![0.0; x.len()];
        let mut stride = x.len();
        for (axis, f) in self.factors.iter().enumerate() {
            let m = shape[axis];
            stride /= m;
            for (flat, out) in next.iter_mut().enumerate() {
                let l = (flat / stride) % m;
                let mut v = f.diag[l] * cur[flat];
                if l > 0 {
                    v += f.off[l - 1] * cur[flat - stride];
                }
                if l + 1 < m {
                    v += f.off[l] * cur[flat + stride];
                }
                *out = v;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

/// `βᵀ Ψ β`, the squared `L²` norm of the spline with coefficients `β`.
pub fn quadratic_form(gram: &GramOperator, beta: &CoefficientGrid) -> Result<f64> {
    if beta.shape() != gram.shape().as_slice() {
        return param("coefficient grid does not match the Gram operator");
    }
    Ok(dot(beta.values(), &gram.apply(beta.values())))
}

/// Coefficients, on the refined subdivision, of the old mode minus the new
/// mode after inserting `t` into interval `nu` of `variable`.
pub fn beta_knot_insertion(
    old_sub: &Subdivision,
    old_mode: &CoefficientGrid,
    new_mode: &CoefficientGrid,
    variable: usize,
    t: f64,
    nu: usize,
) -> Result<CoefficientGrid> {
    old_sub.check_coeffs(old_mode)?;
    let Some(pos) = old_sub.position(variable) else {
        return param(format!("variable {variable} is not active"));
    };
    let knots = old_sub.per_dim()[pos].knots();
    if nu + 1 >= knots.len() || !(knots[nu] < t && t < knots[nu + 1]) {
        return param(format!("interval {nu} does not contain {t}"));
    }
    let old_shape = old_sub.shape();
    let mut new_shape = old_shape.clone();
    new_shape[pos] += 1;
    if new_mode.shape() != new_shape.as_slice() {
        return param("new mode does not match the refined grid");
    }
    let w = (knots[nu + 1] - t) / (knots[nu + 1] - knots[nu]);
    let old = old_mode.values();
    let mut values = Vec::with_capacity(new_mode.len());
    for (flat, &new) in new_mode.values().iter().enumerate() {
        let mut multi = unflatten(flat, &new_shape);
        let l = multi[pos];
        let refined = if l <= nu {
            old[flatten(&multi, &old_shape)]
        } else if l == nu + 1 {
            multi[pos] = nu;
            let lo = old[flatten(&multi, &old_shape)];
            multi[pos] = nu + 1;
            let hi = old[flatten(&multi, &old_shape)];
            w * lo + (1.0 - w) * hi
        } else {
            multi[pos] = l - 1;
            old[flatten(&multi, &old_shape)]
        };
        values.push(refined - new);
    }
    CoefficientGrid::new(new_shape, values)
}

/// Coefficients of the old mode minus the new mode after activating one
/// more variable (on the knots `{0, 1}`).
pub fn beta_new_variable(
    old_sub: &Subdivision,
    old_mode: &CoefficientGrid,
    new_sub: &Subdivision,
    new_mode: &CoefficientGrid,
) -> Result<CoefficientGrid> {
    old_sub.check_coeffs(old_mode)?;
    new_sub.check_coeffs(new_mode)?;
    if new_sub.dim() != old_sub.dim() + 1 {
        return param("new subdivision must have exactly one more active variable");
    }
    let Some(pos) = new_sub.active().iter().position(|v| !old_sub.is_active(*v)) else {
        return param("no new active variable");
    };
    if new_sub.shape()[pos] != 2 || new_sub.grid_size() != 2 * old_sub.grid_size() {
        return param("new variable must carry exactly two knots");
    }
    for (&v, s) in old_sub.active().iter().zip(old_sub.per_dim()) {
        if new_sub.axis(v) != Some(s) {
            return param(format!("subdivision of variable {v} changed"));
        }
    }
    let old_shape = old_sub.shape();
    let new_shape = new_sub.shape();
    let old = old_mode.values();
    let values = new_mode
        .values()
        .iter()
        .enumerate()
        .map(|(flat, &new)| {
            let mut multi = unflatten(flat, &new_shape);
            multi.remove(pos);
            old[flatten(&multi, &old_shape)] - new
        })
        .collect();
    CoefficientGrid::new(new_shape, values)
}

/// A refinement step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Move {
    Knot { variable: usize, t: f64 },
    Variable { variable: usize },
}

impl Move {
    pub fn variable(&self) -> usize {
        match *self {
            Move::Knot { variable, .. } | Move::Variable { variable } => variable,
        }
    }

    /// Subdivision after the move.
    pub fn apply(&self, sub: &Subdivision, min_separation: f64) -> Result<Subdivision> {
        match *self {
            Move::Knot { variable, t } => sub.insert_knot(variable, t, min_separation),
            Move::Variable { variable } => sub.add_variable(variable),
        }
    }
}

/// Number of basis functions a move adds to `sub`.
pub fn added_basis_count(sub: &Subdivision, mv: &Move) -> Result<usize> {
    match *mv {
        Move::Knot { variable, .. } => match sub.position(variable) {
            Some(p) => Ok(sub.grid_size() / sub.shape()[p]),
            None => param(format!("variable {variable} is not active")),
        },
        Move::Variable { variable } => {
            if sub.is_active(variable) {
                param(format!("variable {variable} is already active"))
            } else {
                Ok(sub.grid_size())
            }
        }
    }
}

/// Squared `L²` distance between the modes before and after `mv`, divided by
/// the number of added basis functions.
pub fn criterion(
    old_sub: &Subdivision,
    old_mode: &CoefficientGrid,
    mv: &Move,
    new_sub: &Subdivision,
    new_mode: &CoefficientGrid,
) -> Result<f64> {
    let beta = match *mv {
        Move::Knot { variable, t } => {
            let Some(p) = old_sub.position(variable) else {
                return param(format!("variable {variable} is not active"));
            };
            let axis = &old_sub.per_dim()[p];
            let nu = axis.interval(t);
            beta_knot_insertion(old_sub, old_mode, new_mode, variable, t, nu)?
        }
        Move::Variable { .. } => beta_new_variable(old_sub, old_mode, new_sub, new_mode)?,
    };
    let gram = GramOperator::new(new_sub);
    Ok(quadratic_form(&gram, &beta)? / added_basis_count(old_sub, mv)? as f64)
}

/// `Δ · d(t, S_i)` for knots and `Δ'` for variables.
pub fn reward(sub: &Subdivision, mv: &Move, knot_reward: f64, variable_reward: f64) -> f64 {
    match *mv {
        Move::Knot { variable, t } => sub.axis(variable).map_or(0.0, |a| knot_reward * a.distance(t)),
        Move::Variable { .. } => variable_reward,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitPolicy {
    /// Re-estimate the covariance parameters for every variable's best proposal.
    PerCandidate,
    /// Re-estimate only after a move is accepted.
    PerAcceptedMove,
    /// Keep the initial estimate.
    Never,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    /// Penalized fit with the estimated noise variance.
    Noisy,
    /// Exact interpolation of the data.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnotSearch {
    pub grid_points_per_interval: usize,
    /// Width at which golden-section refinement stops.
    pub refinement_tol: f64,
}

impl Default for KnotSearch {
    fn default() -> Self {
        Self {
            grid_points_per_interval: 8,
            refinement_tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxModConfig {
    /// `Δ`, reward per unit distance of a new knot from existing ones.
    pub knot_reward: f64,
    /// `Δ'`, reward for activating a variable.
    pub variable_reward: f64,
    /// Stop when no move scores at least this much.
    pub tolerance: f64,
    pub min_separation: f64,
    pub max_iterations: usize,
    pub knot_search: KnotSearch,
    pub seed: u64,
    pub refit: RefitPolicy,
    pub mode: ModeKind,
    pub fit_restarts: usize,
    pub fit_max_evals: usize,
    /// Defaults to [`HyperBounds::for_data`].
    pub bounds: Option<HyperBounds>,
    /// Moves producing larger grids are not considered.
    pub max_grid_size: usize,
}

impl Default for MaxModConfig {
    fn default() -> Self {
        Self {
            knot_reward: 1e-9,
            variable_reward: 1e-9,
            tolerance: 1e-5,
            min_separation: DEFAULT_MIN_SEPARATION,
            max_iterations: 40,
            knot_search: KnotSearch::default(),
            seed: 0,
            refit: RefitPolicy::PerCandidate,
            mode: ModeKind::Noisy,
            fit_restarts: 5,
            fit_max_evals: 300,
            bounds: None,
            max_grid_size: 2000,
        }
    }
}

impl MaxModConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.knot_reward >= 0.0 && self.knot_reward.is_finite())
            || !(self.variable_reward >= 0.0 && self.variable_reward.is_finite())
        {
            return param("rewards must be finite and non-negative");
        }
        if !(self.tolerance > 0.0) {
            return param("tolerance must be positive");
        }
        if !(self.min_separation > 0.0) {
            return param("min_separation must be positive");
        }
        // every active variable keeps an interval wide enough for a new knot
        if 2.0 * self.min_separation * (2.0 + self.max_iterations as f64) >= 1.0 {
            return param("min_separation too large for max_iterations: knots could cover [0, 1]");
        }
        if self.knot_search.grid_points_per_interval == 0 || !(self.knot_search.refinement_tol > 0.0) {
            return param("knot search needs at least one grid point and a positive tolerance");
        }
        if self.max_grid_size < 2 {
            return param("max_grid_size must be at least 2");
        }
        if let Some(b) = &self.bounds {
            b.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    NoAdmissibleMove,
}

/// One accepted step. Iteration 0 is the initial activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    #[serde(rename = "move")]
    pub mv: Move,
    pub criterion: f64,
    pub reward: f64,
    pub grid_size: usize,
    pub model: KernelModel,
    pub subdivision: Subdivision,
    pub coefficients: CoefficientGrid,
    /// Seconds since the start of the run.
    pub wall_time: f64,
    pub bending_energy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct MaxModState {
    pub sub: Subdivision,
    pub mode: QpSolution,
    pub model: KernelModel,
    pub history: Vec<HistoryEntry>,
    pub stop_reason: Option<StopReason>,
    /// Best score among the proposals of the last iteration.
    pub last_best_score: Option<f64>,
}

/// An evaluated proposal.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub mv: Move,
    pub sub: Subdivision,
    pub model: KernelModel,
    pub mode: QpSolution,
    pub criterion: f64,
    pub reward: f64,
}

impl Candidate {
    pub fn score(&self) -> f64 {
        self.criterion + self.reward
    }
}

/// Callback computing an error measure for a spline, e.g. the bending energy.
pub type Oracle<'a> = &'a (dyn Fn(&Subdivision, &CoefficientGrid) -> f64 + Sync);

/// Data, constraints and settings of a run.
#[derive(Clone, Debug)]
pub struct Problem {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    constraints: Vec<ConstraintKind>,
    config: MaxModConfig,
    bounds: HyperBounds,
}

impl Problem {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>, constraints: Vec<ConstraintKind>, config: MaxModConfig) -> Result<Self> {
        config.validate()?;
        if x.is_empty() {
            return param("at least one observation is required");
        }
        if x.len() != y.len() {
            return param(format!("{} points but {} observations", x.len(), y.len()));
        }
        let d = x[0].len();
        if d == 0 {
            return param("inputs must have at least one coordinate");
        }
        for (i, p) in x.iter().enumerate() {
            if p.len() != d {
                return param(format!("observation {i} has {} coordinates, expected {d}", p.len()));
            }
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return param(format!("observation {i} lies outside the unit cube"));
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return param("observations must be finite");
        }
        for c in &constraints {
            c.validate()?;
        }
        let bounds = config.bounds.clone().unwrap_or_else(|| HyperBounds::for_data(&y));
        Ok(Self {
            x,
            y,
            constraints,
            config,
            bounds,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn config(&self) -> &MaxModConfig {
        &self.config
    }

    pub fn bounds(&self) -> &HyperBounds {
        &self.bounds
    }

    pub fn system(&self, sub: &Subdivision) -> Result<ConstraintSystem> {
        build_system(&self.constraints, sub, &self.x, &self.y)
    }

    /// Mode of `sub` under `model`; `None` when the program is not solved to optimality.
    pub fn mode(&self, model: &KernelModel, sub: &Subdivision) -> Result<Option<QpSolution>> {
        let cons = self.system(sub)?;
        let sol = match self.config.mode {
            ModeKind::Noisy => compute_noisy_map(model, sub, &cons, model.noise_variance)?,
            ModeKind::Exact => compute_map(model, sub, &cons)?,
        };
        if sol.is_optimal() {
            Ok(Some(sol))
        } else {
            debug!("mode on grid of size {} ended with status {:?}", sub.grid_size(), sol.status);
            Ok(None)
        }
    }

    /// Maximum likelihood re-estimate started from `model`; falls back to
    /// `model` if the likelihood cannot be evaluated.
    pub fn refit(&self, model: &KernelModel, sub: &Subdivision, seed: u64) -> KernelModel {
        let phi = match self.system(sub) {
            Ok(c) => c.phi,
            Err(e) => {
                warn!("cannot refit: {e}");
                return model.clone();
            }
        };
        let opts = FitOptions {
            bounds: self.bounds.clone(),
            restarts: self.config.fit_restarts,
            seed,
            fit_noise: self.config.mode == ModeKind::Noisy,
            max_evals: self.config.fit_max_evals,
        };
        match fit_hyperparameters(model, sub, &phi, &self.y, &opts) {
            Ok(out) => out.model,
            Err(e) => {
                warn!("hyperparameter fit failed, keeping previous values: {e}");
                model.clone()
            }
        }
    }

    fn fit_seed(&self, iteration: usize, variable: usize) -> u64 {
        // splitmix64 finalizer over (seed, iteration, variable)
        let mut z = self
            .config
            .seed
            .wrapping_add((iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add((variable as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Evaluate a move with fixed covariance parameters. `None` when the move
    /// is inadmissible or its program has no optimal solution.
    pub fn evaluate(&self, state: &MaxModState, mv: Move, model: &KernelModel) -> Result<Option<Candidate>> {
        let sub = match mv.apply(&state.sub, self.config.min_separation) {
            Ok(s) => s,
            Err(Error::Separation { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        if sub.grid_size() > self.config.max_grid_size {
            return Ok(None);
        }
        let Some(mode) = self.mode(model, &sub)? else {
            return Ok(None);
        };
        let crit = criterion(&state.sub, &state.mode.alpha, &mv, &sub, &mode.alpha)?;
        let rew = reward(&state.sub, &mv, self.config.knot_reward, self.config.variable_reward);
        Ok(Some(Candidate {
            mv,
            sub,
            model: model.clone(),
            mode,
            criterion: crit,
            reward: rew,
        }))
    }

    /// Best position for a new knot of an active variable with the current
    /// covariance parameters: a coarse grid in every interval, then
    /// golden-section refinement around the best grid point.
    pub fn optimize_knot(&self, state: &MaxModState, variable: usize) -> Result<Option<Candidate>> {
        let Some(axis) = state.sub.axis(variable) else {
            return param(format!("variable {variable} is not active"));
        };
        if state.sub.grid_size() / axis.len() + state.sub.grid_size() > self.config.max_grid_size {
            return Ok(None);
        }
        let b = self.config.min_separation;
        let g = self.config.knot_search.grid_points_per_interval;
        let knots = axis.knots();
        let mut coarse = Vec::new();
        for w in knots.windows(2) {
            let h = (w[1] - w[0]) / (g + 1) as f64;
            for j in 1..=g {
                let t = w[0] + j as f64 * h;
                if t - w[0] >= b && w[1] - t >= b {
                    coarse.push((t, w[0], w[1], h));
                }
            }
        }
        if coarse.is_empty() {
            return Ok(None);
        }
        let eval = |t: f64| -> Result<Option<Candidate>> {
            self.evaluate(state, Move::Knot { variable, t }, &state.model)
        };
        let results: Vec<Option<Candidate>> = coarse
            .par_iter()
            .map(|&(t, ..)| eval(t))
            .collect::<Result<_>>()?;

        let mut best: Option<(usize, Candidate)> = None;
        for (i, c) in results.into_iter().enumerate() {
            if let Some(c) = c {
                if best.as_ref().is_none_or(|(_, b)| c.score() > b.score()) {
                    best = Some((i, c));
                }
            }
        }
        let Some((i, mut incumbent)) = best else {
            return Ok(None);
        };

        let (t0, lo_knot, hi_knot, h) = coarse[i];
        let mut lo = (t0 - h).max(lo_knot + b);
        let mut hi = (t0 + h).min(hi_knot - b);
        let score = |c: &Option<Candidate>| c.as_ref().map_or(f64::NEG_INFINITY, Candidate::score);
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = hi - ratio * (hi - lo);
        let mut x2 = lo + ratio * (hi - lo);
        let mut c1 = eval(x1)?;
        let mut c2 = eval(x2)?;
        while hi - lo > self.config.knot_search.refinement_tol {
            if score(&c1) >= score(&c2) {
                hi = x2;
                x2 = x1;
                c2 = c1;
                x1 = hi - ratio * (hi - lo);
                c1 = eval(x1)?;
            } else {
                lo = x1;
                x1 = x2;
                c1 = c2;
                x2 = lo + ratio * (hi - lo);
                c2 = eval(x2)?;
            }
        }
        for c in [c1, c2].into_iter().flatten() {
            if c.score() > incumbent.score() {
                incumbent = c;
            }
        }
        Ok(Some(incumbent))
    }

    /// Best proposal for one variable at `iteration`, including the
    /// covariance re-estimate when the policy asks for it.
    pub fn propose(&self, state: &MaxModState, variable: usize, iteration: usize) -> Result<Option<Candidate>> {
        let fixed = if state.sub.is_active(variable) {
            self.optimize_knot(state, variable)?
        } else {
            self.evaluate(state, Move::Variable { variable }, &state.model)?
        };
        if self.config.refit != RefitPolicy::PerCandidate {
            return Ok(fixed);
        }
        let Some(fixed) = fixed else {
            // a variable activation may only become feasible with new parameters
            if state.sub.is_active(variable) {
                return Ok(None);
            }
            let sub = state.sub.add_variable(variable)?;
            if sub.grid_size() > self.config.max_grid_size {
                return Ok(None);
            }
            let model = self.refit(&state.model, &sub, self.fit_seed(iteration, variable));
            return self.evaluate(state, Move::Variable { variable }, &model);
        };
        let model = self.refit(&state.model, &fixed.sub, self.fit_seed(iteration, variable));
        match self.evaluate(state, fixed.mv, &model)? {
            Some(c) => Ok(Some(c)),
            None => {
                warn!("refitted proposal for variable {variable} failed; keeping fixed-parameter result");
                Ok(Some(fixed))
            }
        }
    }

    /// Activate the variable whose two-knot mode has the largest `L²` norm.
    pub fn initialize(&self, seed_model: &KernelModel, start: Instant, oracle: Option<Oracle>) -> Result<MaxModState> {
        let d = self.ambient_dim();
        if seed_model.ambient_dim() != d {
            return param(format!(
                "kernel has {} lengthscales for {d} input variables",
                seed_model.ambient_dim()
            ));
        }
        seed_model.validate()?;
        let trials: Vec<Option<(Subdivision, KernelModel, QpSolution, f64)>> = (0..d)
            .into_par_iter()
            .map(|k| -> Result<_> {
                let sub = Subdivision::initial(d, k)?;
                let model = if self.config.refit == RefitPolicy::Never {
                    seed_model.clone()
                } else {
                    self.refit(seed_model, &sub, self.fit_seed(0, k))
                };
                Ok(self.mode(&model, &sub)?.map(|mode| {
                    let norm2 = quadratic_form(&GramOperator::new(&sub), &mode.alpha).unwrap_or(f64::NAN);
                    (sub, model, mode, norm2)
                }))
            })
            .collect::<Result<_>>()?;

        let mut best: Option<(Subdivision, KernelModel, QpSolution, f64)> = None;
        for t in trials.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| t.3 > b.3) {
                best = Some(t);
            }
        }
        let Some((sub, model, mode, norm2)) = best else {
            return Err(Error::Infeasible(
                "no single-variable model satisfies the constraints; use the noisy mode or review the constraints"
                    .into(),
            ));
        };
        let variable = sub.active()[0];
        info!("initial variable {variable} (squared norm {norm2:.3e})");
        let entry = HistoryEntry {
            iteration: 0,
            mv: Move::Variable { variable },
            criterion: norm2,
            reward: self.config.variable_reward,
            grid_size: sub.grid_size(),
            model: model.clone(),
            subdivision: sub.clone(),
            coefficients: mode.alpha.clone(),
            wall_time: start.elapsed().as_secs_f64(),
            bending_energy: oracle.map(|f| f(&sub, &mode.alpha)),
        };
        Ok(MaxModState {
            sub,
            mode,
            model,
            history: vec![entry],
            stop_reason: None,
            last_best_score: None,
        })
    }

    /// One iteration: evaluate all proposals and return the best, or `None`
    /// when no move is admissible.
    pub fn best_move(&self, state: &MaxModState, iteration: usize) -> Result<Option<Candidate>> {
        let proposals: Vec<Option<Candidate>> = (0..self.ambient_dim())
            .into_par_iter()
            .map(|k| self.propose(state, k, iteration))
            .collect::<Result<_>>()?;
        let mut best: Option<Candidate> = None;
        for c in proposals.into_iter().flatten() {
            debug!("iteration {iteration}: {:?} scores {:.3e}", c.mv, c.score());
            if best.as_ref().is_none_or(|b| c.score() > b.score()) {
                best = Some(c);
            }
        }
        Ok(best)
    }

    pub fn run(&self, seed_model: &KernelModel, oracle: Option<Oracle>) -> Result<MaxModState> {
        let start = Instant::now();
        let mut state = self.initialize(seed_model, start, oracle)?;
        for iteration in 1..=self.config.max_iterations {
            let Some(best) = self.best_move(&state, iteration)? else {
                state.stop_reason = Some(StopReason::NoAdmissibleMove);
                return Ok(state);
            };
            state.last_best_score = Some(best.score());
            if best.score() < self.config.tolerance {
                info!("converged: best score {:.3e} below tolerance", best.score());
                state.stop_reason = Some(StopReason::Converged);
                return Ok(state);
            }
            let mut accepted = best;
            if self.config.refit == RefitPolicy::PerAcceptedMove {
                let model = self.refit(&accepted.model, &accepted.sub, self.fit_seed(iteration, usize::MAX - 1));
                match self.mode(&model, &accepted.sub)? {
                    Some(mode) => {
                        accepted.model = model;
                        accepted.mode = mode;
                    }
                    None => warn!("mode after refit is not optimal; keeping previous parameters"),
                }
            }
            info!(
                "iteration {iteration}: {:?}, criterion {:.3e}, grid size {}",
                accepted.mv,
                accepted.criterion,
                accepted.sub.grid_size()
            );
            state.history.push(HistoryEntry {
                iteration,
                mv: accepted.mv,
                criterion: accepted.criterion,
                reward: accepted.reward,
                grid_size: accepted.sub.grid_size(),
                model: accepted.model.clone(),
                subdivision: accepted.sub.clone(),
                coefficients: accepted.mode.alpha.clone(),
                wall_time: start.elapsed().as_secs_f64(),
                bending_energy: oracle.map(|f| f(&accepted.sub, &accepted.mode.alpha)),
            });
            state.sub = accepted.sub;
            state.mode = accepted.mode;
            state.model = accepted.model;
        }
        state.stop_reason = Some(StopReason::MaxIterations);
        Ok(state)
    }
}

/// Run the refinement loop on data `(x, y)` in the unit cube.
pub fn run(
    x: &[Vec<f64>],
    y: &[f64],
    constraints: &[ConstraintKind],
    config: &MaxModConfig,
    seed_model: &KernelModel,
) -> Result<MaxModState> {
    Problem::new(x.to_vec(), y.to_vec(), constraints.to_vec(), config.clone())?.run(seed_model, None)
}
