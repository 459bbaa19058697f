//! Run configuration: a single JSON document, validated in full before any
//! computation. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use maxmod_core::bench::{preset_defaults, TestFunction};
use maxmod_core::constraints::ConstraintKind;
use maxmod_core::kernel::{HyperBounds, KernelFamily};
use maxmod_core::maxmod::MaxModConfig;
use maxmod_core::sampler::SamplerMethod;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

/// Exchange sweeps used to improve preset designs.
pub const DEFAULT_EXCHANGE_ITERS: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub kernel: KernelSpec,
    /// Overrides of the refinement settings; see [`MaxModConfig`].
    #[serde(default)]
    pub maxmod: Map<String, Value>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sample: SampleSpec,
    #[serde(default)]
    pub bench: BenchSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Header `x1,...,xD,<output>`; relative paths are resolved against the
    /// directory of the configuration file.
    Csv {
        path: PathBuf,
        /// Min-max rescale every input column to `[0, 1]`.
        #[serde(default)]
        rescale: bool,
    },
    /// Maximin Latin hypercube design evaluated on an analytic function.
    Preset {
        function: TestFunction,
        /// Defaults to the preset's sample size.
        #[serde(default)]
        n: Option<usize>,
        /// Defaults to the run seed.
        #[serde(default)]
        design_seed: Option<u64>,
        #[serde(default = "default_exchange_iters")]
        exchange_iters: usize,
    },
}

fn default_exchange_iters() -> usize {
    DEFAULT_EXCHANGE_ITERS
}

/// Shape constraint with 1-based variable indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    /// A missing end means unbounded on that side.
    Bounded {
        #[serde(default)]
        lower: Option<f64>,
        #[serde(default)]
        upper: Option<f64>,
    },
    Monotone {
        #[serde(default)]
        variables: Option<Vec<usize>>,
    },
    Convex {
        #[serde(default)]
        variables: Option<Vec<usize>>,
    },
}

impl ConstraintSpec {
    pub fn to_core(&self, ambient_dim: usize) -> Result<ConstraintKind> {
        let vars = |v: &Option<Vec<usize>>| -> Result<Option<Vec<usize>>> {
            v.as_ref()
                .map(|list| {
                    list.iter()
                        .map(|&j| {
                            if j == 0 || j > ambient_dim {
                                Err(CliError::Config(format!(
                                    "constraint variable {j} outside 1..={ambient_dim}"
                                )))
                            } else {
                                Ok(j - 1)
                            }
                        })
                        .collect()
                })
                .transpose()
        };
        let kind = match self {
            ConstraintSpec::Bounded { lower, upper } => ConstraintKind::Bounded {
                lower: lower.unwrap_or(f64::NEG_INFINITY),
                upper: upper.unwrap_or(f64::INFINITY),
            },
            ConstraintSpec::Monotone { variables } => ConstraintKind::Monotone {
                variables: vars(variables)?,
            },
            ConstraintSpec::Convex { variables } => ConstraintKind::Convex {
                variables: vars(variables)?,
            },
        };
        kind.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(kind)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Defaults to a box scaled by the output variance.
    pub bounds: Option<HyperBounds>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            family: KernelFamily::SquaredExponential,
            bounds: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMethod {
    /// Rejection without inequality rows, Gibbs otherwise.
    Auto,
    Rejection,
    Gibbs,
}

impl SampleMethod {
    pub fn resolve(self, has_constraints: bool) -> SamplerMethod {
        match self {
            SampleMethod::Rejection => SamplerMethod::Rejection,
            SampleMethod::Gibbs => SamplerMethod::Gibbs,
            SampleMethod::Auto if has_constraints => SamplerMethod::Gibbs,
            SampleMethod::Auto => SamplerMethod::Rejection,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSpec {
    pub count: usize,
    pub level: f64,
    pub method: SampleMethod,
    pub burn_in: usize,
    pub thinning: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            count: 100,
            level: 0.9,
            method: SampleMethod::Auto,
            burn_in: 100,
            thinning: 10,
        }
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(CliError::Config("sample count must be positive".into()));
        }
        if !(self.level > 0.0 && self.level <= 1.0) {
            return Err(CliError::Config(format!("level must lie in (0, 1], got {}", self.level)));
        }
        if self.thinning == 0 {
            return Err(CliError::Config("thinning must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Equispaced, the same knot count on every variable.
    Square,
    /// Equispaced with the refined run's knot counts per active variable.
    Rect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub baselines: Vec<BaselineKind>,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            baselines: vec![BaselineKind::Square, BaselineKind::Rect],
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Parse and validate a configuration file, resolving a relative CSV path
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let DataSource::Csv { path: data, .. } = &mut cfg.data {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Ambient dimension when it is known without reading data.
    pub fn preset(&self) -> Option<&TestFunction> {
        match &self.data {
            DataSource::Preset { function, .. } => Some(function),
            DataSource::Csv { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Preset { function, n, .. } = &self.data {
            function.validate().map_err(|e| CliError::Config(e.to_string()))?;
            if n.is_some_and(|n| n < 2) {
                return Err(CliError::Config("a preset design needs at least two points".into()));
            }
            for c in &self.constraints {
                c.to_core(function.dim())?;
            }
        }
        for c in &self.constraints {
            // dimension-independent checks
            c.to_core(usize::MAX)?;
        }
        if let Some(b) = &self.kernel.bounds {
            b.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.maxmod_config()?;
        self.sample.validate()
    }

    /// Refinement settings: defaults, then the preset's tolerance, then the
    /// user's overrides. The seed and covariance bounds come from the
    /// top-level `seed` and `kernel.bounds` keys.
    pub fn maxmod_config(&self) -> Result<MaxModConfig> {
        for reserved in ["seed", "bounds"] {
            if self.maxmod.contains_key(reserved) {
                return Err(CliError::Config(format!(
                    "maxmod.{reserved} is not accepted; set it at the top level{}",
                    if reserved == "bounds" { " under kernel.bounds" } else { "" }
                )));
            }
        }
        let mut base = MaxModConfig::default();
        if let Some(f) = self.preset() {
            base.tolerance = preset_defaults(f).1;
        }
        let mut value = serde_json::to_value(&base).map_err(|e| CliError::Config(e.to_string()))?;
        let obj = value.as_object_mut().expect("config serializes to an object");
        for (k, v) in &self.maxmod {
            obj.insert(k.clone(), v.clone());
        }
        let mut cfg: MaxModConfig =
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("maxmod: {e}")))?;
        cfg.seed = self.seed;
        cfg.bounds = self.kernel.bounds.clone();
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}
