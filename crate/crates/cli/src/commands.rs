//! The `fit`, `predict`, `sample` and `bench` commands and the artifacts they write.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::{info, warn};
use maxmod_core::basis::{CoefficientGrid, Subdivision};
use maxmod_core::bench::{
    baseline_knots, bending_energy, maximin_lhd, preset_defaults, Baseline, Quadrature, TestFunction,
};
use maxmod_core::constraints::{build_system, ConstraintKind};
use maxmod_core::kernel::{sample_variance, KernelModel};
use maxmod_core::maxmod::{MaxModState, ModeKind, Problem};
use maxmod_core::sampler::{credible_band, posterior_spec, sample, SampleOptions, DRAW_TOL};
use serde::Serialize;

use crate::config::{BaselineKind, DataSource, RunConfig, SampleSpec};
use crate::data::{fmt, ingest_csv, ingest_points, input_names, write_dataset, write_table, Dataset};
use crate::error::{CliError, Result};
use crate::runlog::{DataInfo, MoveRecord, RunLog, RUN_LOG_FILE};

pub const DATA_FILE: &str = "data.csv";

/// Observations named by the configuration, and the analytic function when
/// they come from a preset.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Option<TestFunction>)> {
    match &cfg.data {
        DataSource::Csv { path, rescale } => Ok((ingest_csv(path, *rescale)?, None)),
        DataSource::Preset {
            function,
            n,
            design_seed,
            exchange_iters,
        } => {
            let n = n.unwrap_or(preset_defaults(function).0);
            let design = maximin_lhd(n, function.dim(), design_seed.unwrap_or(cfg.seed), *exchange_iters)?;
            let y = design.evaluate(function);
            Ok((
                Dataset {
                    x: design.points,
                    y,
                    input_names: input_names(function.dim()),
                    output_name: "y".into(),
                    scaling: None,
                },
                Some(function.clone()),
            ))
        }
    }
}

fn core_constraints(cfg: &RunConfig, dim: usize) -> Result<Vec<ConstraintKind>> {
    cfg.constraints.iter().map(|c| c.to_core(dim)).collect()
}

/// Outcome of [`cmd_fit`].
pub struct FitOutput {
    pub log: RunLog,
    pub state: MaxModState,
    pub data: Dataset,
    pub function: Option<TestFunction>,
}

/// Run the refinement loop and write `run_log.json`, `iterations.csv`,
/// `knots.csv`, `coefficients.csv`, `grid.csv` and `data.csv` to `out`.
///
/// An exact-interpolation run whose constraints cannot be met is repeated
/// with the noisy mode.
pub fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<FitOutput> {
    cfg.validate()?;
    let (data, function) = load_data(cfg)?;
    let dim = data.dim();
    let constraints = core_constraints(cfg, dim)?;
    let mut mm = cfg.maxmod_config()?;
    let seed_model = KernelModel::initial(cfg.kernel.family, dim, &data.y);

    let quad = Quadrature::default_for(dim);
    let oracle = function.clone().map(|f| {
        move |s: &Subdivision, c: &CoefficientGrid| bending_energy(|x| f.eval(x), s, c, &quad).unwrap_or(f64::NAN)
    });
    let oracle_ref = oracle.as_ref().map(|f| f as &(dyn Fn(&Subdivision, &CoefficientGrid) -> f64 + Sync));

    let problem = Problem::new(data.x.clone(), data.y.clone(), constraints.clone(), mm.clone())?;
    let state = match problem.run(&seed_model, oracle_ref) {
        Err(maxmod_core::Error::Infeasible(msg)) if mm.mode == ModeKind::Exact => {
            warn!("exact interpolation is infeasible ({msg}); falling back to the noisy mode");
            mm.mode = ModeKind::Noisy;
            Problem::new(data.x.clone(), data.y.clone(), constraints, mm.clone())?.run(&seed_model, oracle_ref)?
        }
        other => other?,
    };

    let echo = serde_json::to_value(cfg).expect("config serializes");
    let log = RunLog::new(
        echo,
        &state,
        DataInfo {
            input_names: &data.input_names,
            output_name: &data.output_name,
            scaling: data.scaling.as_deref(),
            n_observations: data.y.len(),
        },
        &cfg.constraints,
        mm.mode,
    );
    write_fit_artifacts(out, &log, &state, &data)?;
    info!(
        "fit finished: {:?}, active variables {:?}, grid size {}",
        log.final_state.stop_reason,
        log.final_state.active_variables,
        state.sub.grid_size()
    );
    Ok(FitOutput {
        log,
        state,
        data,
        function,
    })
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn active_names(sub: &Subdivision, names: &[String]) -> Vec<String> {
    sub.active().iter().map(|&a| names[a].clone()).collect()
}

/// Points of a regular grid over the active variables (other inputs at 0),
/// at most about 4096 points.
pub fn plot_points(sub: &Subdivision) -> Vec<Vec<f64>> {
    let d = sub.dim() as i32;
    let per = ((4096f64).powf(1.0 / d as f64).floor() as usize).clamp(2, 101);
    let total = per.pow(d as u32);
    (0..total)
        .map(|mut flat| {
            let mut p = vec![0.0; sub.ambient_dim()];
            for &a in sub.active().iter().rev() {
                p[a] = (flat % per) as f64 / (per - 1) as f64;
                flat /= per;
            }
            p
        })
        .collect()
}

fn write_fit_artifacts(out: &Path, log: &RunLog, state: &MaxModState, data: &Dataset) -> Result<()> {
    create_dir(out)?;
    let path = out.join(RUN_LOG_FILE);
    fs::write(&path, log.to_json()).map_err(|e| CliError::io(&path, e))?;

    let header: Vec<String> = [
        "iteration",
        "move",
        "variable",
        "t",
        "criterion",
        "reward",
        "grid_size",
        "bending_energy",
        "wall_time",
    ]
    .map(String::from)
    .to_vec();
    write_table(
        &out.join("iterations.csv"),
        &header,
        log.iterations.iter().map(|it| {
            let (kind, var, t) = match it.mv {
                MoveRecord::Knot { variable, t } => ("knot", variable, fmt(t)),
                MoveRecord::Variable { variable } => ("variable", variable, String::new()),
            };
            vec![
                it.iteration.to_string(),
                kind.into(),
                var.to_string(),
                t,
                fmt(it.criterion),
                fmt(it.reward),
                it.grid_size.to_string(),
                it.bending_energy.map(fmt).unwrap_or_default(),
                fmt(it.wall_time),
            ]
        }),
    )?;

    let sub = &state.sub;
    write_table(
        &out.join("knots.csv"),
        &["variable", "index", "t"].map(String::from),
        sub.active().iter().zip(sub.per_dim()).flat_map(|(&a, s)| {
            s.knots()
                .iter()
                .enumerate()
                .map(move |(i, t)| vec![(a + 1).to_string(), (i + 1).to_string(), fmt(*t)])
                .collect::<Vec<_>>()
        }),
    )?;

    let names = active_names(sub, &data.input_names);
    let coeffs = &state.mode.alpha;
    let mut header = names.clone();
    header.push("coefficient".into());
    write_table(
        &out.join("coefficients.csv"),
        &header,
        sub.grid_points()
            .into_iter()
            .zip(coeffs.values())
            .map(|(p, c)| p.iter().chain([c]).map(|v| fmt(*v)).collect()),
    )?;

    let mut header = names;
    header.push("mode".into());
    let rows = plot_points(sub)
        .into_iter()
        .map(|p| -> Result<Vec<String>> {
            let v = sub.eval_ambient(coeffs, &p)?;
            Ok(sub.restrict(&p).iter().chain([&v]).map(|v| fmt(*v)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    write_table(&out.join("grid.csv"), &header, rows)?;

    write_dataset(&out.join(DATA_FILE), data)
}

/// Evaluate the fitted mode at the points of a CSV file and write
/// `predictions.csv`. Inputs the model does not use are ignored.
pub fn cmd_predict(model_dir: &Path, points: &Path, out: &Path) -> Result<Vec<f64>> {
    let log = RunLog::read(model_dir)?;
    let fin = &log.final_state;
    let sub = fin.subdivision()?;
    let coeffs = fin.coefficient_grid()?;
    let pts = ingest_points(points, fin.input_dim, fin.scaling.as_deref())?;
    let unused: Vec<&String> = (0..fin.input_dim)
        .filter(|v| !sub.is_active(*v))
        .map(|v| &fin.input_names[v])
        .collect();
    if !unused.is_empty() {
        info!("inputs not used by the model are ignored: {unused:?}");
    }
    let pred = pts
        .unit
        .iter()
        .map(|p| sub.eval_ambient(&coeffs, p))
        .collect::<maxmod_core::Result<Vec<f64>>>()?;
    create_dir(out)?;
    let mut header = fin.input_names.clone();
    header.push("prediction".into());
    write_table(
        &out.join("predictions.csv"),
        &header,
        pts.raw.iter().zip(&pred).map(|(p, y)| p.iter().chain([y]).map(|v| fmt(*v)).collect()),
    )?;
    Ok(pred)
}

/// Outcome of [`cmd_sample`].
pub struct SampleOutput {
    pub sub: Subdivision,
    pub mode: CoefficientGrid,
    pub draws: Vec<CoefficientGrid>,
    /// Ambient points of the band.
    pub band_points: Vec<Vec<f64>>,
    pub band: Vec<(f64, f64)>,
}

/// Draw from the constrained posterior of a fitted model and write
/// `draws.csv` (values at the knots) and `band.csv` (pointwise band of the
/// plotting grid).
pub fn cmd_sample(model_dir: &Path, spec: &SampleSpec, seed: u64, out: &Path) -> Result<SampleOutput> {
    spec.validate()?;
    let log = RunLog::read(model_dir)?;
    let fin = &log.final_state;
    let data = ingest_csv(&model_dir.join(DATA_FILE), false)?;
    if data.dim() != fin.input_dim {
        return Err(CliError::Data("data file does not match the run log".into()));
    }
    let sub = fin.subdivision()?;
    let mode = fin.coefficient_grid()?;
    let model = fin.hyperparameters.to_model()?;
    let constraints = fin
        .constraints
        .iter()
        .map(|c| c.to_core(fin.input_dim))
        .collect::<Result<Vec<_>>>()?;
    let sys = build_system(&constraints, &sub, &data.x, &data.y)?;

    let floor = 1e-8 * sample_variance(&data.y);
    let tau2 = if fin.mode_kind == ModeKind::Exact || model.noise_variance < floor {
        info!("using noise variance {floor:e} for the posterior of an interpolating model");
        model.noise_variance.max(floor)
    } else {
        model.noise_variance
    };
    let tg = posterior_spec(&model, &sub, &sys, tau2)?;
    let method = spec.method.resolve(!sys.inequalities.is_empty());
    let mut opts = SampleOptions::new(method, seed);
    opts.burn_in = spec.burn_in;
    opts.thinning = spec.thinning;
    if tg.violation(mode.values()) <= DRAW_TOL {
        opts.start = Some(mode.values().to_vec());
    }
    info!("drawing {} samples with {method:?}", spec.count);
    let draws = sample(&tg, spec.count, &opts)?;

    let band_points = plot_points(&sub);
    let band = if draws.len() >= 2 {
        credible_band(&draws, &sub, &band_points, spec.level)?
    } else {
        band_points
            .iter()
            .map(|p| sub.eval_ambient(&draws[0], p).map(|v| (v, v)))
            .collect::<maxmod_core::Result<_>>()?
    };

    create_dir(out)?;
    let names = active_names(&sub, &fin.input_names);
    let knots = sub.grid_points();
    let mut header = vec!["draw".to_string()];
    header.extend(names.iter().cloned());
    header.push("value".into());
    write_table(
        &out.join("draws.csv"),
        &header,
        draws.iter().enumerate().flat_map(|(k, d)| {
            knots
                .iter()
                .zip(d.values())
                .map(|(p, v)| {
                    let mut row = vec![(k + 1).to_string()];
                    row.extend(p.iter().chain([v]).map(|x| fmt(*x)));
                    row
                })
                .collect::<Vec<_>>()
        }),
    )?;
    let mut header = names;
    header.extend(["mode", "lower", "upper"].map(String::from));
    let rows = band_points
        .iter()
        .zip(&band)
        .map(|(p, (lo, hi))| -> Result<Vec<String>> {
            let m = sub.eval_ambient(&mode, p)?;
            Ok(sub.restrict(p).iter().chain([&m, lo, hi]).map(|v| fmt(*v)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    write_table(&out.join("band.csv"), &header, rows)?;

    Ok(SampleOutput {
        sub,
        mode,
        draws,
        band_points,
        band,
    })
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub iteration: usize,
    pub grid_size: Option<usize>,
    pub bending_energy: Option<f64>,
    /// `ok`, `refused` (layout above the knot guard) or `failed`.
    pub status: String,
}

/// Fit a preset, then, for every iteration, fit equispaced baselines with
/// comparable grids and write `bench.csv`: one row per iteration and method.
///
/// `square` uses the smallest common knot count per input whose grid is at
/// least as large as the refined one; `rect` uses the refined run's knot
/// counts on its active variables.
pub fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<Vec<BenchRow>> {
    let Some(function) = cfg.preset().cloned() else {
        return Err(CliError::Config("bench needs a preset with an analytic function".into()));
    };
    let fit = cmd_fit(cfg, out)?;
    let dim = fit.data.dim();
    let mm = cfg.maxmod_config()?;
    let problem = Problem::new(
        fit.data.x.clone(),
        fit.data.y.clone(),
        core_constraints(cfg, dim)?,
        mm,
    )?;
    let seed_model = KernelModel::initial(cfg.kernel.family, dim, &fit.data.y);
    let quad = Quadrature::default_for(dim);
    let all: Vec<usize> = (0..dim).collect();

    let mut cache: HashMap<String, (Option<usize>, Option<f64>, String)> = HashMap::new();
    let mut evaluate = |layout: Result<Subdivision>, key: String| {
        cache
            .entry(key)
            .or_insert_with(|| match layout {
                Err(e) => {
                    warn!("baseline refused: {e}");
                    (None, None, "refused".into())
                }
                Ok(sub) => {
                    let model = problem.refit(&seed_model, &sub, cfg.seed);
                    match problem.mode(&model, &sub) {
                        Ok(Some(m)) => (
                            Some(sub.grid_size()),
                            bending_energy(|x| function.eval(x), &sub, &m.alpha, &quad).ok(),
                            "ok".into(),
                        ),
                        _ => (Some(sub.grid_size()), None, "failed".into()),
                    }
                }
            })
            .clone()
    };

    let mut rows = Vec::new();
    for h in &fit.state.history {
        rows.push(BenchRow {
            method: "maxmod".into(),
            iteration: h.iteration,
            grid_size: Some(h.grid_size),
            bending_energy: h.bending_energy,
            status: "ok".into(),
        });
        for kind in &cfg.bench.baselines {
            let (method, layout, key) = match kind {
                BaselineKind::Square => {
                    let mut k = 2usize;
                    while k.checked_pow(dim as u32).is_some_and(|s| s < h.grid_size) {
                        k += 1;
                    }
                    let layout = baseline_knots(&Baseline::Square(k), &all, dim).map_err(CliError::from);
                    ("square", layout, format!("square {k}"))
                }
                BaselineKind::Rect => {
                    let shape = h.subdivision.shape();
                    let active = h.subdivision.active();
                    let layout = baseline_knots(&Baseline::Rect(shape.clone()), active, dim).map_err(CliError::from);
                    ("rect", layout, format!("rect {active:?} {shape:?}"))
                }
            };
            let (grid_size, e, status) = evaluate(layout, key);
            rows.push(BenchRow {
                method: method.into(),
                iteration: h.iteration,
                grid_size,
                bending_energy: e,
                status,
            });
        }
    }

    write_table(
        &out.join("bench.csv"),
        &["method", "iteration", "grid_size", "bending_energy", "status"].map(String::from),
        rows.iter().map(|r| {
            vec![
                r.method.clone(),
                r.iteration.to_string(),
                r.grid_size.map(|g| g.to_string()).unwrap_or_default(),
                r.bending_energy.map(fmt).unwrap_or_default(),
                r.status.clone(),
            ]
        }),
    )?;
    Ok(rows)
}
