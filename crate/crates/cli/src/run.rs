use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use cesmc::ce::{ce_optimize, CeConfig, CeError, CeIteration, InitialParams};
use cesmc::estimate::{
    chernoff_sample_size, is_estimate_stream, mc_estimate, variance_reduction_report, Accumulator, EstimateError,
    EstimateResult, VarianceReduction,
};
use cesmc::monitor::{CompiledProperty, PropertyError};
use cesmc::oracle::{exact_probability, ExactResult, ExplicitChain, Method, OracleError, SolveOptions};
use cesmc::rng::{streams, trace_seed};
use cesmc::runner::{Runner, RunnerError};
use cesmc::simulate::{simulate_observed, SimError, TraceSummary};
use cesmc::{parse_model, parse_property, Model, ParamVector, ParseError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Cli, Command, Common, ExactMethod, ExperimentConfig, LambdaArgs, Mode, ModeParams};

pub const RESULT_FILE: &str = "result.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const TRACE_FILE: &str = "trace.csv";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}:{source}")]
    ModelSyntax { path: String, source: ParseError },
    #[error("property:{0}")]
    PropertySyntax(ParseError),
    #[error(transparent)]
    Property(#[from] PropertyError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    InitialSearch(CeError),
    #[error("{0}")]
    NoHits(CeError),
    #[error(transparent)]
    Ce(CeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::ModelSyntax { .. } | RunError::PropertySyntax(_) | RunError::Property(_) | RunError::Usage(_) => 2,
            RunError::InitialSearch(_) => 3,
            RunError::NoHits(_) => 4,
            RunError::Oracle(OracleError::StateSpaceTooLarge { .. }) => 5,
            _ => 1,
        }
    }
}

impl From<CeError> for RunError {
    fn from(e: CeError) -> Self {
        match e {
            CeError::InitialSearchFailed { .. } => RunError::InitialSearch(e),
            CeError::NoHits | CeError::Aborted { .. } => RunError::NoHits(e),
            CeError::Sim(s) => RunError::Sim(s),
            other => RunError::Ce(other),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
}

/// Turns command-line arguments into a self-contained configuration.
pub fn config_from_cli(cli: &Cli) -> Result<ExperimentConfig, RunError> {
    let base = |c: &Common, mode, params| -> Result<ExperimentConfig, RunError> {
        Ok(ExperimentConfig {
            mode,
            model_path: c.model.clone(),
            model_text: read(&c.model)?,
            property: c.property.clone(),
            seed: c.seed,
            max_steps: c.max_steps,
            params,
        })
    };
    let config = match &cli.command {
        Command::Mc(a) => {
            let (n, eps, delta) = match a.n {
                Some(n) => (n, None, None),
                None => (chernoff_sample_size(a.epsilon, a.delta)?, Some(a.epsilon), Some(a.delta)),
            };
            base(&a.common, Mode::Mc, ModeParams::Mc { n, epsilon: eps, delta })?
        }
        Command::Is(a) => {
            let lambda = resolve_lambda(&a.lambda)?
                .ok_or_else(|| RunError::Usage("is needs --lambda or --lambda-from".to_string()))?;
            base(&a.common, Mode::Is, ModeParams::Is { lambda, n_is: a.n })?
        }
        Command::Ce(a) => base(
            &a.common,
            Mode::Ce,
            ModeParams::Ce {
                n0: a.n0,
                nj: a.nj,
                max_iterations: a.iterations,
                smoothing: a.smoothing,
                smoothing_fraction: a.smoothing_fraction,
                normalisation_constant: a.norm_constant,
                convergence_tol: a.tol,
                convergence_window: a.window,
                stop_on_convergence: !a.all_iterations,
                max_restarts: a.max_restarts,
                initial_lambda: resolve_lambda(&a.lambda)?,
                n_is: a.n_is,
                reuse: a.reuse,
            },
        )?,
        Command::Exact(a) => ExperimentConfig {
            mode: Mode::Exact,
            model_path: a.model.clone(),
            model_text: read(&a.model)?,
            property: a.property.clone(),
            seed: 0,
            max_steps: 0,
            params: ModeParams::Exact { cap: a.cap, method: a.method, tol: a.tol, export: a.export.clone() },
        },
        Command::Trace(a) => base(
            &a.common,
            Mode::Trace,
            ModeParams::Trace { lambda: resolve_lambda(&a.lambda)?, index: a.index },
        )?,
        Command::Rerun { manifest } => {
            let m: Manifest = serde_json::from_str(&read(manifest)?)?;
            m.config
        }
    };
    validate(&config)?;
    Ok(config)
}

fn read(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn resolve_lambda(args: &LambdaArgs) -> Result<Option<Vec<f64>>, RunError> {
    if let Some(l) = &args.lambda {
        return Ok(Some(l.clone()));
    }
    let Some(path) = &args.lambda_from else { return Ok(None) };
    let value: serde_json::Value = serde_json::from_str(&read(path)?)?;
    let lambda = value
        .get("lambda")
        .cloned()
        .ok_or_else(|| RunError::Usage(format!("{} has no \"lambda\" field", path.display())))?;
    Ok(Some(serde_json::from_value(lambda)?))
}

fn validate(c: &ExperimentConfig) -> Result<(), RunError> {
    let positive = |name: &str, v: u64| {
        if v == 0 {
            Err(RunError::Usage(format!("{name} must be at least 1")))
        } else {
            Ok(())
        }
    };
    if c.mode != Mode::Exact {
        positive("max_steps", c.max_steps as u64)?;
    }
    match &c.params {
        ModeParams::Mc { n, .. } => positive("n", *n),
        ModeParams::Is { n_is, .. } => positive("n", *n_is),
        ModeParams::Ce { n0, nj, max_iterations, convergence_window, n_is, .. } => {
            positive("n0", *n0)?;
            positive("nj", *nj)?;
            positive("iterations", *max_iterations)?;
            positive("window", *convergence_window)?;
            n_is.map_or(Ok(()), |n| positive("n_is", n))
        }
        ModeParams::Exact { cap, .. } => positive("cap", *cap as u64),
        ModeParams::Trace { .. } => Ok(()),
    }
}

fn parse(config: &ExperimentConfig) -> Result<(Model, CompiledProperty), RunError> {
    let model = parse_model(&config.model_text)
        .map_err(|source| RunError::ModelSyntax { path: config.model_path.display().to_string(), source })?;
    let ast = parse_property(&config.property, &model).map_err(RunError::PropertySyntax)?;
    Ok((model, CompiledProperty::compile(&ast)?))
}

fn lambda_vector(model: &Model, lambda: &[f64]) -> Result<ParamVector, RunError> {
    if lambda.len() != model.n_commands() {
        return Err(RunError::Usage(format!(
            "the model has {} commands but {} tilt entries were given",
            model.n_commands(),
            lambda.len()
        )));
    }
    ParamVector::new(lambda.to_vec()).map_err(|e| RunError::Usage(e.to_string()))
}

#[derive(Debug, Serialize)]
struct EstimateOutput<'a> {
    mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<&'a [f64]>,
    estimate: EstimateResult<f64>,
}

#[derive(Debug, Serialize)]
struct CeOutput<'a> {
    mode: Mode,
    initial: &'a InitialParams<f64>,
    iterations: usize,
    converged_at: Option<usize>,
    lambda: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<EstimateResult<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    variance_reduction: Option<VarianceReduction<f64>>,
}

#[derive(Debug, Serialize)]
struct ExactOutput {
    mode: Mode,
    probability: f64,
    residual: f64,
    method: ExactMethod,
    chain_states: usize,
    product_states: usize,
    value_iteration: Option<ExactResult<f64>>,
    linear: Option<ExactResult<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    difference: Option<f64>,
}

#[derive(Debug, Serialize)]
struct TraceOutput<'a> {
    mode: Mode,
    seed: u64,
    summary: &'a TraceSummary<f64>,
    path: Vec<&'a str>,
}

/// Executes `config`, writing every artifact into `out_dir`.
pub fn execute(config: &ExperimentConfig, workers: Option<usize>, out_dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let manifest =
        Manifest { tool: "cesmc".to_string(), version: env!("CARGO_PKG_VERSION").to_string(), config: config.clone() };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    let (model, property) = parse(config)?;
    let runner = || Runner::new(workers, config.max_steps);
    match &config.params {
        ModeParams::Mc { n, .. } => {
            let estimate = mc_estimate(&runner()?, &model, &property, *n as usize, config.seed)?;
            write_json(&out_dir.join(RESULT_FILE), &EstimateOutput { mode: Mode::Mc, lambda: None, estimate })
        }
        ModeParams::Is { lambda, n_is } => {
            let lam = lambda_vector(&model, lambda)?;
            let estimate = is_estimate_stream(
                &runner()?,
                &model,
                &lam,
                &property,
                *n_is as usize,
                config.seed,
                streams::ESTIMATE,
                Accumulator::new(),
            )?;
            write_json(&out_dir.join(RESULT_FILE), &EstimateOutput { mode: Mode::Is, lambda: Some(lambda), estimate })
        }
        ModeParams::Ce {
            n0,
            nj,
            max_iterations,
            smoothing,
            smoothing_fraction,
            normalisation_constant,
            convergence_tol,
            convergence_window,
            stop_on_convergence,
            max_restarts,
            initial_lambda,
            n_is,
            reuse,
        } => {
            let ce = CeConfig {
                n_per_iteration: *nj as usize,
                max_iterations: *max_iterations as usize,
                smoothing: ModeParams::smoothing(*smoothing, *smoothing_fraction),
                normalisation_constant: *normalisation_constant,
                convergence_tol: *convergence_tol,
                convergence_window: *convergence_window as usize,
                stop_on_convergence: *stop_on_convergence,
                min_hits: 1,
                master_seed: config.seed,
                n_initial: *n0 as usize,
                max_restarts: *max_restarts as usize,
            };
            let initial = initial_lambda.as_deref().map(|l| lambda_vector(&model, l)).transpose()?;
            let runner = runner()?;
            let run = match ce_optimize(&runner, &model, &property, &ce, initial) {
                Ok(run) => run,
                Err(CeError::Aborted { iteration, run }) => {
                    write_convergence(&out_dir.join(CONVERGENCE_FILE), &model, &run.history)?;
                    return Err(CeError::Aborted { iteration, run }.into());
                }
                Err(e) => return Err(e.into()),
            };
            write_convergence(&out_dir.join(CONVERGENCE_FILE), &model, &run.history)?;
            let (estimate, variance_reduction) = match n_is {
                Some(n) => {
                    let mut acc = Accumulator::new();
                    if *reuse {
                        acc.extend(&run.last_batch);
                    }
                    let est = is_estimate_stream(
                        &runner,
                        &model,
                        &run.lambda,
                        &property,
                        *n as usize,
                        config.seed,
                        streams::FINAL_ESTIMATE,
                        acc,
                    )?;
                    let vr = variance_reduction_report(None, &est).ok();
                    (Some(est), vr)
                }
                None => (None, None),
            };
            write_json(
                &out_dir.join(RESULT_FILE),
                &CeOutput {
                    mode: Mode::Ce,
                    initial: &run.initial,
                    iterations: run.history.len(),
                    converged_at: run.converged_at,
                    lambda: run.lambda.as_slice(),
                    estimate,
                    variance_reduction,
                },
            )
        }
        ModeParams::Exact { cap, method, tol, export } => {
            let chain = ExplicitChain::<f64>::build(&model, *cap)?;
            if let Some(path) = export {
                let file = fs::File::create(path).map_err(io_err(path))?;
                chain.write_sparse(BufWriter::new(file)).map_err(io_err(path))?;
            }
            let solve = |method| {
                exact_probability(&chain, &model, &property, SolveOptions { method, tol: *tol, ..Default::default() })
            };
            let vi = matches!(method, ExactMethod::Vi | ExactMethod::Both).then(|| solve(Method::ValueIteration)).transpose()?;
            let lin = matches!(method, ExactMethod::Linear | ExactMethod::Both).then(|| solve(Method::Linear)).transpose()?;
            let primary = vi.as_ref().or(lin.as_ref()).expect("at least one method runs");
            let difference = vi.as_ref().zip(lin.as_ref()).map(|(a, b)| (a.probability - b.probability).abs());
            write_json(
                &out_dir.join(RESULT_FILE),
                &ExactOutput {
                    mode: Mode::Exact,
                    probability: primary.probability,
                    residual: primary.residual,
                    method: *method,
                    chain_states: primary.chain_states,
                    product_states: primary.product_states,
                    value_iteration: vi.clone(),
                    linear: lin.clone(),
                    difference,
                },
            )
        }
        ModeParams::Trace { lambda, index } => {
            let lam = match lambda {
                Some(l) => lambda_vector(&model, l)?,
                None => ParamVector::ones(model.n_commands()),
            };
            let seed = trace_seed(config.seed, streams::ESTIMATE, *index);
            let csv_path = out_dir.join(TRACE_FILE);
            let mut w = csv::Writer::from_path(&csv_path)?;
            let mut header = vec!["step".to_string(), "command".to_string()];
            header.extend(model.var_names().iter().cloned());
            w.write_record(&header)?;
            let mut row_err = None;
            let (summary, path) = simulate_observed(&model, &lam, &property, seed, config.max_steps, |ev| {
                let mut row = vec![ev.step.to_string(), ev.command.map_or(String::new(), |k| model.commands()[k].name.clone())];
                row.extend(ev.state.values().iter().map(i64::to_string));
                if let Err(e) = w.write_record(&row) {
                    row_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = row_err {
                return Err(e.into());
            }
            w.flush().map_err(io_err(&csv_path))?;
            let names = path.iter().map(|&k| model.commands()[k].name.as_str()).collect();
            write_json(&out_dir.join(RESULT_FILE), &TraceOutput { mode: Mode::Trace, seed, summary: &summary, path: names })
        }
    }
}

/// Floats with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_convergence(path: &Path, model: &Model, history: &[CeIteration<f64>]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iteration".to_string()];
    header.extend((1..=model.n_commands()).map(|k| format!("lambda_{k}")));
    header.extend(["hits", "undecided", "gamma_hat", "sample_variance"].map(String::from));
    w.write_record(&header)?;
    for h in history {
        let mut row = vec![h.iteration.to_string()];
        row.extend(h.lambda.iter().map(|&x| fmt_float(x)));
        row.push(h.hits.to_string());
        row.push(h.undecided.to_string());
        row.push(fmt_float(h.gamma_hat));
        row.push(fmt_float(h.sample_variance));
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
