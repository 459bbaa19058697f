//! Structured record of a fit. Variables are 1-based, as in the data files.

use std::path::Path;

use maxmod_core::basis::{CoefficientGrid, Subdivision, Subdivision1D};
use maxmod_core::kernel::{KernelFamily, KernelModel};
use maxmod_core::maxmod::{HistoryEntry, MaxModState, ModeKind, Move, StopReason};
use maxmod_core::solver::QpStatus;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ConstraintSpec;
use crate::data::Scaling;
use crate::error::{CliError, Result};

/// Bumped whenever a field of the run log changes meaning or shape.
pub const SCHEMA_VERSION: u32 = 1;

pub const RUN_LOG_FILE: &str = "run_log.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunLog {
    pub schema_version: u32,
    pub config_echo: Value,
    pub iterations: Vec<IterationRecord>,
    #[serde(rename = "final")]
    pub final_state: FinalRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MoveRecord {
    Knot { variable: usize, t: f64 },
    Variable { variable: usize },
}

impl From<Move> for MoveRecord {
    fn from(mv: Move) -> Self {
        match mv {
            Move::Knot { variable, t } => MoveRecord::Knot {
                variable: variable + 1,
                t,
            },
            Move::Variable { variable } => MoveRecord::Variable { variable: variable + 1 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    pub family: KernelFamily,
    pub variance: f64,
    /// One per input variable.
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl From<&KernelModel> for Hyperparameters {
    fn from(m: &KernelModel) -> Self {
        Self {
            family: m.family,
            variance: m.variance,
            lengthscales: m.lengthscales.clone(),
            noise_variance: m.noise_variance,
        }
    }
}

impl Hyperparameters {
    pub fn to_model(&self) -> Result<KernelModel> {
        Ok(KernelModel::new(
            self.family,
            self.variance,
            self.lengthscales.clone(),
            self.noise_variance,
        )?)
    }
}

/// Iteration 0 is the activation of the first variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationRecord {
    pub iteration: usize,
    #[serde(rename = "move")]
    pub mv: MoveRecord,
    pub criterion: f64,
    pub reward: f64,
    pub grid_size: usize,
    pub knots_per_variable: Vec<usize>,
    pub hyperparameters: Hyperparameters,
    /// Seconds since the start of the run.
    pub wall_time: f64,
    pub bending_energy: Option<f64>,
}

impl From<&HistoryEntry> for IterationRecord {
    fn from(h: &HistoryEntry) -> Self {
        Self {
            iteration: h.iteration,
            mv: h.mv.into(),
            criterion: h.criterion,
            reward: h.reward,
            grid_size: h.grid_size,
            knots_per_variable: h.subdivision.shape(),
            hyperparameters: (&h.model).into(),
            wall_time: h.wall_time,
            bending_energy: h.bending_energy,
        }
    }
}

/// Everything needed to evaluate or sample the fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalRecord {
    pub stop_reason: StopReason,
    /// Best criterion plus reward of the last iteration, when one ran.
    pub last_best_score: Option<f64>,
    pub input_dim: usize,
    pub input_names: Vec<String>,
    pub output_name: String,
    pub scaling: Option<Vec<Scaling>>,
    pub n_observations: usize,
    pub constraints: Vec<ConstraintSpec>,
    pub mode_kind: ModeKind,
    pub qp_status: QpStatus,
    pub active_variables: Vec<usize>,
    /// Knots of each active variable, in the order of `active_variables`.
    pub knots: Vec<Vec<f64>>,
    /// Coefficients flattened row-major, last active variable fastest.
    pub coefficients: Vec<f64>,
    pub hyperparameters: Hyperparameters,
    pub bending_energy: Option<f64>,
}

impl FinalRecord {
    pub fn subdivision(&self) -> Result<Subdivision> {
        let per_dim = self
            .knots
            .iter()
            .map(|k| Subdivision1D::new(k.clone()))
            .collect::<maxmod_core::Result<Vec<_>>>()?;
        let active = self.active_variables.iter().map(|v| v - 1).collect();
        Ok(Subdivision::new(self.input_dim, active, per_dim)?)
    }

    pub fn coefficient_grid(&self) -> Result<CoefficientGrid> {
        let shape = self.knots.iter().map(Vec::len).collect();
        Ok(CoefficientGrid::new(shape, self.coefficients.clone())?)
    }
}

/// Details of the data a run was fitted on.
pub struct DataInfo<'a> {
    pub input_names: &'a [String],
    pub output_name: &'a str,
    pub scaling: Option<&'a [Scaling]>,
    pub n_observations: usize,
}

impl RunLog {
    pub fn new(
        config_echo: Value,
        state: &MaxModState,
        data: DataInfo,
        constraints: &[ConstraintSpec],
        mode_kind: ModeKind,
    ) -> Self {
        let iterations: Vec<IterationRecord> = state.history.iter().map(IterationRecord::from).collect();
        let sub = &state.sub;
        Self {
            schema_version: SCHEMA_VERSION,
            config_echo,
            final_state: FinalRecord {
                stop_reason: state.stop_reason.unwrap_or(StopReason::MaxIterations),
                last_best_score: state.last_best_score,
                input_dim: sub.ambient_dim(),
                input_names: data.input_names.to_vec(),
                output_name: data.output_name.to_string(),
                scaling: data.scaling.map(<[Scaling]>::to_vec),
                n_observations: data.n_observations,
                constraints: constraints.to_vec(),
                mode_kind,
                qp_status: state.mode.status,
                active_variables: sub.active().iter().map(|v| v + 1).collect(),
                knots: sub.per_dim().iter().map(|s| s.knots().to_vec()).collect(),
                coefficients: state.mode.alpha.values().to_vec(),
                hyperparameters: (&state.model).into(),
                bending_energy: iterations.last().and_then(|i| i.bending_energy),
            },
            iterations,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run log serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let log: RunLog =
            serde_json::from_str(text).map_err(|e| CliError::Data(format!("run log: {e}")))?;
        if log.schema_version != SCHEMA_VERSION {
            return Err(CliError::Data(format!(
                "run log schema {} is not supported (expected {SCHEMA_VERSION})",
                log.schema_version
            )));
        }
        Ok(log)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_LOG_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Self::from_json(&text)
    }

    /// Copy with every timing field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        for it in &mut out.iterations {
            it.wall_time = 0.0;
        }
        out
    }
}
