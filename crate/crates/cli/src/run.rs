//! Command implementations shared by `reproduce`, `fit`, `compare` and
//! `contour`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use skewinla::experiments::{simulate, ExperimentName, SimulationSettings};
use skewinla::inla::{Conditional, InlaFit};
use skewinla::io::{self, ModelFile};
use skewinla::oracle::{chain_summary, exact_posterior_quadrature, rw_metropolis, MetropolisConfig, DESK_SCALE_LIMIT};
use skewinla::skewvb::{eta_density_fft, whiten, DensityEngine};
use skewinla::{fit_inla, Dataset, Error, InlaOptions, LatentModel, SgcDistribution, Strategy};

use crate::manifest::{ExperimentManifest, ModelSource};
use crate::table::{ComparisonTable, MethodColumn, Statistic};

pub const STATUS_SCHEMA_VERSION: u32 = 1;

/// Command-line overrides of numerical settings.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub fft_points: Option<usize>,
    pub dense_limit: Option<usize>,
}

impl Overrides {
    pub fn options(&self) -> InlaOptions {
        let mut o = InlaOptions::default();
        if let Some(p) = self.fft_points {
            o.skew.grid.points = p;
        }
        if let Some(d) = self.dense_limit {
            o.skew.dense_limit = d;
        }
        o
    }
}

/// The model a run operates on, with the components reported in tables.
#[derive(Debug, Clone)]
pub struct Problem {
    pub experiment: Option<ExperimentName>,
    pub model: LatentModel,
    pub data: Dataset,
    pub names: Vec<String>,
    pub tracked: Vec<usize>,
}

pub fn build_problem(m: &ExperimentManifest) -> Result<Problem, Error> {
    match &m.source {
        ModelSource::Experiment { name, n } => {
            let e = simulate(*name, *n, m.seed, &SimulationSettings::default())?;
            Ok(Problem { experiment: Some(*name), model: e.model, data: e.data, names: e.param_names, tracked: e.tracked })
        }
        ModelSource::Custom { model, data } => {
            let mut tracked = model.fixed_effect_indices();
            if tracked.is_empty() {
                tracked = (0..model.n_latent().min(10)).collect();
            }
            let names = tracked.iter().map(|i| format!("f{i}")).collect();
            Ok(Problem { experiment: None, model: (**model).clone(), data: data.clone(), names, tracked })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyStatus {
    pub strategy: Strategy,
    pub ok: bool,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleStatus {
    pub method: String,
    pub ok: bool,
    pub error: Option<String>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStatus {
    pub schema_version: u32,
    pub command: String,
    pub experiment: String,
    pub seed: u64,
    pub strategies: Vec<StrategyStatus>,
    pub oracle: Option<OracleStatus>,
}

impl RunStatus {
    /// All requested strategies completed.
    pub fn success(&self) -> bool {
        self.strategies.iter().all(|s| s.ok)
    }
}

/// Everything a run produced, for printing and tests.
pub struct RunOutput {
    pub status: RunStatus,
    pub table: Option<ComparisonTable>,
    pub fits: Vec<(Strategy, InlaFit)>,
    pub problem: Problem,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Conditional fit at the θ mode (the first point when the mode was dropped).
pub fn mode_conditional(fit: &InlaFit) -> &Conditional {
    let mode = &fit.report.theta_grid.mode;
    fit.conditionals.iter().find(|c| &c.theta == mode).unwrap_or(&fit.conditionals[0])
}

fn write_strategy_outputs(dir: &Path, problem: &Problem, fit: &InlaFit, opts: &InlaOptions) -> Result<(), Error> {
    let s = fit.report.strategy.as_str();
    let mut names: Vec<String> = (0..problem.model.n_latent()).map(|i| format!("f{i}")).collect();
    for (&i, n) in problem.tracked.iter().zip(&problem.names) {
        names[i] = n.clone();
    }
    io::write_report_json(create(dir, &format!("report-{s}.json"))?, &fit.report)?;
    io::write_timings_json(create(dir, &format!("timings-{s}.json"))?, &fit.report)?;
    io::write_marginals_csv(create(dir, &format!("marginals-{s}.csv"))?, &fit.report, Some(&names))?;
    let c = mode_conditional(fit);
    let mut traces = Vec::new();
    if let Some(m) = &c.mean_correction {
        traces.push(("vb-mean", m.trace.as_slice()));
    }
    if let Some(v) = &c.var_correction {
        traces.push(("vb-mean-var", v.trace.as_slice()));
    }
    if !traces.is_empty() {
        io::write_trace_csv(create(dir, &format!("trace-{s}.csv"))?, &traces)?;
    }
    if let Some(skew) = &c.skew {
        if problem.model.n_latent() <= opts.skew.dense_limit {
            let skewed: Vec<usize> = skew.components.iter().map(|k| k.index).collect();
            let mut order = skewed.clone();
            order.extend((0..problem.model.n_latent()).filter(|j| !skewed.contains(j)));
            let w = whiten(c.core(), &problem.model.design, &order, opts.skew.dense_limit)?;
            let assignment: Vec<(usize, f64)> = skew.components.iter().enumerate().map(|(pos, k)| (pos, k.skewness)).collect();
            let dens = eta_density_fft(&w, &assignment, &DensityEngine::new(opts.skew.grid)?)?;
            io::write_eta_densities_csv(create(dir, &format!("eta-{s}.csv"))?, &dens)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleParam {
    name: String,
    index: usize,
    mean: f64,
    sd: f64,
    skewness: f64,
    ess: Option<f64>,
}

#[derive(Serialize)]
struct OracleFile<'a> {
    schema_version: u32,
    method: &'a str,
    theta: &'a [f64],
    acceptance_rate: Option<f64>,
    draws: Option<usize>,
    params: Vec<OracleParam>,
}

/// Quadrature for one or two latent components, Metropolis up to the
/// desk-scale limit.
fn run_oracle(problem: &Problem, theta: &[f64], m: &ExperimentManifest, dir: &Path) -> Result<(String, MethodColumn), (String, Error)> {
    let p = problem.model.n_latent();
    let t0 = Instant::now();
    let (method, params, acceptance, draws, densities) = if p <= 2 {
        let q = exact_posterior_quadrature(&problem.model, &problem.data, theta, 2001, 10.0).map_err(|e| ("quadrature".to_string(), e))?;
        let params: Vec<OracleParam> = problem
            .tracked
            .iter()
            .zip(&problem.names)
            .map(|(&i, n)| {
                let mo = q.marginals[i].moments();
                OracleParam { name: n.clone(), index: i, mean: mo.mean, sd: mo.sd, skewness: mo.skewness, ess: None }
            })
            .collect();
        let dens: Vec<_> = problem.tracked.iter().zip(&problem.names).map(|(&i, n)| (n.clone(), q.marginals[i].clone())).collect();
        ("quadrature", params, None, None, dens)
    } else if p <= DESK_SCALE_LIMIT {
        let cfg = MetropolisConfig {
            iterations: m.oracle.iterations,
            burn_in: m.oracle.burn_in,
            chains: m.oracle.chains,
            seed: m.seed,
            tracked: Some(problem.tracked.clone()),
            ..Default::default()
        };
        let chains = rw_metropolis(&problem.model, &problem.data, theta, &cfg).map_err(|e| ("mcmc".to_string(), e))?;
        let sm = chain_summary(&chains, 0).map_err(|e| ("mcmc".to_string(), e))?;
        let params = sm
            .params
            .iter()
            .zip(&problem.names)
            .map(|(s, n)| OracleParam { name: n.clone(), index: s.index, mean: s.mean, sd: s.sd, skewness: s.skewness, ess: Some(s.ess) })
            .collect();
        let dens = sm.params.iter().zip(&problem.names).map(|(s, n)| (n.clone(), s.histogram.clone())).collect();
        ("mcmc", params, Some(sm.acceptance_rate), Some(sm.draws), dens)
    } else {
        return Err(("mcmc".into(), Error::Oracle(format!("latent dimension {p} exceeds the desk-scale limit {DESK_SCALE_LIMIT}"))));
    };
    let seconds = t0.elapsed().as_secs_f64();
    let column = MethodColumn {
        method: method.into(),
        summaries: Some(params.iter().map(|q| [q.mean, q.sd, q.skewness]).collect()),
        seconds: Some(seconds),
    };
    let write = || -> Result<(), Error> {
        let refs: Vec<(String, &skewinla::DensityGrid)> = densities.iter().map(|(n, g)| (n.clone(), g)).collect();
        io::write_densities_csv(create(dir, "oracle-densities.csv")?, &refs)?;
        io::write_json(
            create(dir, "oracle.json")?,
            &OracleFile { schema_version: STATUS_SCHEMA_VERSION, method, theta, acceptance_rate: acceptance, draws, params },
        )
    };
    write().map_err(|e| (method.to_string(), e))?;
    Ok((method.into(), column))
}

/// Fit every requested strategy, optionally run the oracle and build the
/// comparison table, writing all outputs into `out_dir`.
pub fn run(command: &str, m: &ExperimentManifest, overrides: &Overrides, with_oracle: bool) -> Result<RunOutput, Error> {
    let dir: PathBuf = m.out_dir.clone();
    fs::create_dir_all(&dir)?;
    let problem = build_problem(m)?;
    ModelFile::new(&problem.model, &problem.data).write(create(&dir, "data.json")?)?;
    if problem.experiment == Some(ExperimentName::SkewSim) {
        let mut w = csv::Writer::from_writer(create(&dir, "classes.csv")?);
        w.write_record(["response", "count"]).map_err(Error::from)?;
        for (y, c) in class_counts(&problem.data) {
            w.write_record([format!("{y}"), c.to_string()]).map_err(Error::from)?;
        }
        w.flush()?;
    }
    let opts = overrides.options();
    let mut statuses = Vec::new();
    let mut columns = Vec::new();
    let mut fits = Vec::new();
    for &s in &m.strategies {
        let t0 = Instant::now();
        let res = fit_inla(&problem.model, &problem.data, s, &opts).and_then(|fit| {
            write_strategy_outputs(&dir, &problem, &fit, &opts)?;
            Ok(fit)
        });
        let seconds = t0.elapsed().as_secs_f64();
        match res {
            Ok(fit) => {
                let summaries = problem.tracked.iter().map(|&i| &fit.report.marginals[i]).map(|mg| [mg.mean, mg.sd, mg.skewness]).collect();
                columns.push(MethodColumn { method: s.as_str().into(), summaries: Some(summaries), seconds: Some(seconds) });
                statuses.push(StrategyStatus { strategy: s, ok: true, error: None, warnings: fit.report.warnings.clone() });
                fits.push((s, fit));
            }
            Err(e) => {
                columns.push(MethodColumn { method: s.as_str().into(), summaries: None, seconds: None });
                statuses.push(StrategyStatus { strategy: s, ok: false, error: Some(e.to_string()), warnings: Vec::new() });
            }
        }
    }
    let mut oracle_status = None;
    let mut oracle_column = None;
    if with_oracle && m.oracle.enabled {
        let theta = match (&problem.model.fixed_theta, fits.first()) {
            (Some(t), _) => t.clone(),
            (None, Some((_, f))) => f.report.theta_grid.mode.clone(),
            (None, None) => problem.model.reference_theta(),
        };
        match run_oracle(&problem, &theta, m, &dir) {
            Ok((method, col)) => {
                oracle_status = Some(OracleStatus { method, ok: true, error: None, theta });
                oracle_column = Some(col);
            }
            Err((method, e)) => {
                oracle_status = Some(OracleStatus { method, ok: false, error: Some(e.to_string()), theta });
            }
        }
    }
    let table = if with_oracle {
        let t = ComparisonTable::build(&problem.names, &columns, oracle_column.as_ref());
        t.write_csv(create(&dir, "table.csv")?).map_err(Error::from)?;
        Some(t)
    } else {
        None
    };
    let status = RunStatus {
        schema_version: STATUS_SCHEMA_VERSION,
        command: command.into(),
        experiment: m.experiment_name(),
        seed: m.seed,
        strategies: statuses,
        oracle: oracle_status,
    };
    io::write_json(create(&dir, "status.json")?, &status)?;
    Ok(RunOutput { status, table, fits, problem })
}

/// Response values with their frequencies, ascending.
pub fn class_counts(data: &Dataset) -> Vec<(f64, usize)> {
    let mut v = data.y.clone();
    v.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, usize)> = Vec::new();
    for y in v {
        match out.last_mut() {
            Some((last, c)) if *last == y => *c += 1,
            _ => out.push((y, 1)),
        }
    }
    out
}

/// Joint density of components `(i, j)` of the final approximation at the
/// θ mode, on ±`width` sd.
pub fn contour(fit: &InlaFit, i: usize, j: usize, points: usize, width: f64) -> Result<Vec<(f64, f64, f64)>, Error> {
    let c = mode_conditional(fit);
    let dist = SgcDistribution::from_gaussian(c.core(), c.skewness())?;
    let p = dist.dim();
    if i >= p || j >= p {
        return Err(Error::InvalidParameter(format!("component pair ({i}, {j}) out of {p}")));
    }
    let range = |k: usize| (dist.mean[k] - width * dist.sd[k], dist.mean[k] + width * dist.sd[k], points);
    dist.contour(i, j, range(i), range(j))
}

/// Human-readable summary printed after a run.
pub fn summary_text(out: &RunOutput) -> String {
    let mut s = String::new();
    if out.problem.experiment == Some(ExperimentName::SkewSim) {
        let counts = class_counts(&out.problem.data);
        s.push_str("response  ");
        for (y, _) in &counts {
            s.push_str(&format!("{y:>6}"));
        }
        s.push_str("\nfrequency ");
        for (_, c) in &counts {
            s.push_str(&format!("{c:>6}"));
        }
        s.push_str("\n\n");
    }
    if let Some(t) = &out.table {
        s.push_str(&t.pivot(Statistic::Sd));
        if out.status.strategies.iter().any(|x| x.strategy == Strategy::SgcVb) {
            s.push('\n');
            s.push_str(&t.pivot(Statistic::Skewness));
        }
        s.push('\n');
        s.push_str(&t.pivot(Statistic::TimeSeconds));
    }
    for st in &out.status.strategies {
        match &st.error {
            None => s.push_str(&format!("{}: ok\n", st.strategy)),
            Some(e) => s.push_str(&format!("{}: FAILED: {e}\n", st.strategy)),
        }
    }
    if let Some(o) = &out.status.oracle {
        match &o.error {
            None => s.push_str(&format!("oracle ({}): ok\n", o.method)),
            Some(e) => s.push_str(&format!("oracle ({}): unavailable: {e}\n", o.method)),
        }
    }
    s
}
