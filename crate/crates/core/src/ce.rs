//! Iterated cross-entropy tuning of the per-command tilt.
//!
//! Each iteration simulates a batch under the current `λ`, then sets
//!
//! ```text
//! λ_k = Σ_i w_i z_i U_k(ω_i) / Σ_i w_i z_i D_k(ω_i)
//! ```
//!
//! with `w_i` the likelihood ratios rescaled by the batch maximum. Commands
//! that never fired in a satisfying trace are smoothed instead, and the
//! result is normalised to a fixed sum.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::{Accumulator, EstimateError};
use crate::model::{Model, ParamError, ParamVector};
use crate::monitor::CompiledProperty;
use crate::property::PropertyAst;
use crate::rng::{rng_from_seed, streams, trace_seed};
use crate::runner::Runner;
use crate::scalar::{CompensatedSum, Real};
use crate::simulate::{SimError, TraceSummary};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing<T> {
    /// Unseen commands get half their previous value.
    #[default]
    Halving,
    /// Unseen commands get their raw value plus this fraction of the previous one.
    Additive(T),
}

impl<T: Real> Smoothing<T> {
    pub fn additive_default() -> Self {
        Smoothing::Additive(T::of(0.01))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeConfig<T> {
    /// `N_j`, traces per iteration.
    pub n_per_iteration: usize,
    pub max_iterations: usize,
    pub smoothing: Smoothing<T>,
    /// Target of `Σ_k λ_k`; the number of commands when absent.
    pub normalisation_constant: Option<T>,
    pub convergence_tol: T,
    pub convergence_window: usize,
    /// Stop as soon as the convergence test passes.
    pub stop_on_convergence: bool,
    pub min_hits: usize,
    pub master_seed: u64,
    /// `N_0`, traces per candidate of the initial search.
    pub n_initial: usize,
    /// Random candidates tried after `µ`.
    pub max_restarts: usize,
}

impl<T: Real> Default for CeConfig<T> {
    fn default() -> Self {
        CeConfig {
            n_per_iteration: 1000,
            max_iterations: 20,
            smoothing: Smoothing::Halving,
            normalisation_constant: None,
            convergence_tol: T::of(0.02),
            convergence_window: 3,
            stop_on_convergence: true,
            min_hits: 1,
            master_seed: 0,
            n_initial: 1000,
            max_restarts: 10,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("{0} must be positive")]
    NotPositive(&'static str),
}

impl<T: Real> CeConfig<T> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("n_per_iteration", self.n_per_iteration),
            ("max_iterations", self.max_iterations),
            ("convergence_window", self.convergence_window),
            ("min_hits", self.min_hits),
            ("n_initial", self.n_initial),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if !(self.convergence_tol > T::zero()) {
            return Err(ConfigError::NotPositive("convergence_tol"));
        }
        if let Some(c) = self.normalisation_constant {
            if !(c > T::zero() && c.is_finite()) {
                return Err(ConfigError::NotPositive("normalisation_constant"));
            }
        }
        if let Smoothing::Additive(f) = self.smoothing {
            if !(f > T::zero()) {
                return Err(ConfigError::NotPositive("additive smoothing fraction"));
            }
        }
        Ok(())
    }

    pub fn constant_for(&self, n_commands: usize) -> T {
        self.normalisation_constant.unwrap_or_else(|| T::of_usize(n_commands))
    }
}

#[derive(Debug, Error)]
pub enum CeError {
    #[error("no satisfying trace in the batch")]
    NoHits,
    #[error("command {command} fired in satisfying traces but its denominator is zero")]
    Inconsistent { command: usize },
    #[error("no candidate out of {attempts} produced {min_hits} satisfying traces")]
    InitialSearchFailed { attempts: usize, min_hits: usize, diagnostics: Vec<AtomStat> },
    #[error("iteration {iteration} produced no satisfying trace, even with a doubled batch")]
    Aborted { iteration: usize, run: Box<CeRun<f64>> },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
}

/// How often one property atom held somewhere along the initial-search traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomStat {
    pub atom: String,
    pub traces_seen: u64,
    pub traces: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeUpdate<T> {
    /// `λ_k` from the ratio; zero for unseen commands.
    pub raw: Vec<T>,
    /// Whether command `k` fired in some satisfying trace.
    pub seen: Vec<bool>,
    pub hits: usize,
}

/// One CE step on a batch. A command counts as seen when it fired in at
/// least one satisfying trace.
pub fn ce_update<T: Real>(summaries: &[TraceSummary<T>], n_commands: usize) -> Result<CeUpdate<T>, CeError> {
    let hits: Vec<&TraceSummary<T>> = summaries.iter().filter(|s| s.z).collect();
    if hits.is_empty() {
        return Err(CeError::NoHits);
    }
    let shift = hits.iter().map(|s| s.log_l).fold(T::neg_infinity(), T::max);
    let weights: Vec<T> = hits.iter().map(|s| (s.log_l - shift).exp()).collect();
    let mut raw = vec![T::zero(); n_commands];
    let mut seen = vec![false; n_commands];
    for k in 0..n_commands {
        let mut num = CompensatedSum::new();
        let mut den = CompensatedSum::new();
        for (s, &w) in hits.iter().zip(&weights) {
            num.add(w * T::of_usize(s.counts[k] as usize));
            den.add(w * s.denom[k]);
        }
        let (num, den) = (num.value(), den.value());
        if num > T::zero() {
            if !(den > T::zero()) {
                return Err(CeError::Inconsistent { command: k });
            }
            raw[k] = num / den;
            seen[k] = true;
        }
    }
    Ok(CeUpdate { raw, seen, hits: hits.len() })
}

pub fn apply_smoothing<T: Real>(raw: &[T], seen: &[bool], previous: &[T], strategy: Smoothing<T>) -> Vec<T> {
    raw.iter()
        .zip(seen)
        .zip(previous)
        .map(|((&r, &s), &p)| match (s, strategy) {
            (true, _) => r,
            (false, Smoothing::Halving) => p / T::of(2.0),
            (false, Smoothing::Additive(f)) => r + f * p,
        })
        .collect()
}

pub fn normalize<T: Real>(lambda: &[T], constant: T) -> Result<ParamVector<T>, ParamError> {
    ParamVector::from_nonnegative(lambda.to_vec())?.scaled_to(constant)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialParams<T> {
    pub lambda: ParamVector<T>,
    pub hits: usize,
    /// Random candidates drawn before success; 0 when `µ` worked.
    pub restarts: usize,
}

/// Candidate 0 is `µ`; candidate `r ≥ 1` draws every entry log-uniformly from
/// `[1e-2, 1e2]`. Each candidate runs `n0` traces.
pub fn find_initial<T: Real>(
    runner: &Runner,
    model: &Model,
    property: &CompiledProperty,
    config: &CeConfig<T>,
) -> Result<InitialParams<T>, CeError> {
    config.validate()?;
    let n = model.n_commands();
    let constant = config.constant_for(n);
    let atoms = property.atoms();
    let mut atom_counts = vec![0u64; atoms.len()];
    let mut traces = 0u64;
    for r in 0..=config.max_restarts {
        let candidate = if r == 0 { vec![T::one(); n] } else { random_candidate(config.master_seed, r, n) };
        let lambda = normalize(&candidate, constant)?;
        let mut hits = 0usize;
        runner.fold(
            model,
            &lambda,
            property,
            config.master_seed,
            streams::INITIAL_TRACES + r as u64,
            config.n_initial,
            |s| {
                hits += usize::from(s.z);
                for (i, c) in atom_counts.iter_mut().enumerate() {
                    *c += (s.atoms_seen >> i) & 1;
                }
            },
        )?;
        traces += config.n_initial as u64;
        log::debug!("initial candidate {r}: {hits} hits");
        if hits >= config.min_hits {
            return Ok(InitialParams { lambda, hits, restarts: r });
        }
    }
    let mut diagnostics: Vec<AtomStat> = atoms
        .iter()
        .zip(&atom_counts)
        .map(|(a, &c)| AtomStat {
            atom: PropertyAst::Atom(*a).display(model).to_string(),
            traces_seen: c,
            traces,
        })
        .collect();
    diagnostics.sort_by_key(|d| d.traces_seen);
    Err(CeError::InitialSearchFailed { attempts: config.max_restarts + 1, min_hits: config.min_hits, diagnostics })
}

fn random_candidate<T: Real>(seed: u64, r: usize, n: usize) -> Vec<T> {
    let mut rng = rng_from_seed(trace_seed(seed, streams::INITIAL_DRAW, r as u64));
    let ln_range = 100f64.ln();
    (0..n).map(|_| T::of((rng.random_range(-1.0..=1.0) * ln_range).exp())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeIteration<T> {
    /// 1-based.
    pub iteration: usize,
    /// Tilt the batch was simulated under.
    pub lambda_in: Vec<T>,
    /// Normalised tilt produced by this iteration.
    pub lambda: Vec<T>,
    /// Smoothed tilt before normalisation.
    pub smoothed: Vec<T>,
    pub seen: Vec<bool>,
    pub n: usize,
    pub hits: usize,
    pub undecided: u64,
    /// IS estimate of the batch under `lambda_in`.
    pub gamma_hat: T,
    pub sample_variance: T,
    /// Largest relative change of a seen entry against `lambda_in`.
    pub max_rel_change: T,
    pub retried: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeRun<T> {
    pub initial: InitialParams<T>,
    pub history: Vec<CeIteration<T>>,
    /// First iteration at which the convergence window was filled.
    pub converged_at: Option<usize>,
    pub lambda: ParamVector<T>,
    /// Batch of the last iteration, kept for optional reuse.
    #[serde(skip)]
    pub last_batch: Vec<TraceSummary<T>>,
}

/// `max_k |new_k - old_k| / old_k` over seen commands.
pub fn relative_change<T: Real>(old: &[T], new: &[T], seen: &[bool]) -> T {
    old.iter()
        .zip(new)
        .zip(seen)
        .filter(|(_, &s)| s)
        .map(|((&o, &n), _)| ((n - o) / o).abs())
        .fold(T::zero(), T::max)
}

/// Runs the initial search (unless `initial` is given) and the CE loop.
pub fn ce_optimize<T: Real>(
    runner: &Runner,
    model: &Model,
    property: &CompiledProperty,
    config: &CeConfig<T>,
    initial: Option<ParamVector<T>>,
) -> Result<CeRun<T>, CeError> {
    config.validate()?;
    let n = model.n_commands();
    let constant = config.constant_for(n);
    let initial = match initial {
        Some(l) => {
            l.check_len(n)?;
            InitialParams { lambda: l.scaled_to(constant)?, hits: 0, restarts: 0 }
        }
        None => find_initial(runner, model, property, config)?,
    };
    let mut run = CeRun {
        lambda: initial.lambda.clone(),
        initial,
        history: Vec::new(),
        converged_at: None,
        last_batch: Vec::new(),
    };
    let mut calm = 0usize;
    for j in 1..=config.max_iterations {
        let stream = streams::CE_ITERATION + j as u64;
        let mut batch = runner.run(model, &run.lambda, property, config.master_seed, stream, config.n_per_iteration)?;
        let mut retried = false;
        let update = match ce_update(&batch, n) {
            Ok(u) => u,
            Err(CeError::NoHits) if j > 1 => {
                log::warn!("iteration {j}: no hits, retrying with {} traces", 2 * config.n_per_iteration);
                retried = true;
                batch = runner.run(
                    model,
                    &run.lambda,
                    property,
                    config.master_seed,
                    streams::CE_RETRY + j as u64,
                    2 * config.n_per_iteration,
                )?;
                match ce_update(&batch, n) {
                    Ok(u) => u,
                    Err(CeError::NoHits) => {
                        return Err(CeError::Aborted { iteration: j, run: Box::new(run.to_f64()) });
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(e) => return Err(e),
        };
        let mut acc = Accumulator::new();
        acc.extend(&batch);
        let est = acc.finish_is()?;
        let previous = run.lambda.as_slice();
        let smoothed = apply_smoothing(&update.raw, &update.seen, previous, config.smoothing);
        let next = normalize(&smoothed, constant)?;
        let change = relative_change(previous, next.as_slice(), &update.seen);
        log::info!("iteration {j}: {} hits, max relative change {change}", update.hits);
        run.history.push(CeIteration {
            iteration: j,
            lambda_in: previous.to_vec(),
            lambda: next.as_slice().to_vec(),
            smoothed,
            seen: update.seen,
            n: batch.len(),
            hits: update.hits,
            undecided: est.undecided,
            gamma_hat: est.gamma_hat,
            sample_variance: est.sample_variance,
            max_rel_change: change,
            retried,
        });
        run.lambda = next;
        run.last_batch = batch;
        calm = if change < config.convergence_tol { calm + 1 } else { 0 };
        if calm >= config.convergence_window && run.converged_at.is_none() {
            run.converged_at = Some(j);
            if config.stop_on_convergence {
                break;
            }
        }
    }
    Ok(run)
}

impl<T: Real> CeRun<T> {
    pub fn to_f64(&self) -> CeRun<f64> {
        let v = |x: &[T]| x.iter().map(|t| t.to_f64_lossy()).collect::<Vec<f64>>();
        let p = |x: &ParamVector<T>| ParamVector::from_nonnegative(v(x.as_slice())).expect("entries stay nonnegative");
        CeRun {
            initial: InitialParams {
                lambda: p(&self.initial.lambda),
                hits: self.initial.hits,
                restarts: self.initial.restarts,
            },
            history: self
                .history
                .iter()
                .map(|h| CeIteration {
                    iteration: h.iteration,
                    lambda_in: v(&h.lambda_in),
                    lambda: v(&h.lambda),
                    smoothed: v(&h.smoothed),
                    seen: h.seen.clone(),
                    n: h.n,
                    hits: h.hits,
                    undecided: h.undecided,
                    gamma_hat: h.gamma_hat.to_f64_lossy(),
                    sample_variance: h.sample_variance.to_f64_lossy(),
                    max_rel_change: h.max_rel_change.to_f64_lossy(),
                    retried: h.retried,
                })
                .collect(),
            converged_at: self.converged_at,
            lambda: p(&self.lambda),
            last_batch: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::TraceEnd;

    fn trace(z: bool, counts: Vec<u32>, denom: Vec<f64>, log_l: f64) -> TraceSummary<f64> {
        TraceSummary {
            z,
            steps: counts.iter().sum::<u32>() as usize,
            counts,
            log_l,
            denom,
            undecided: false,
            end: TraceEnd::Decided,
            atoms_seen: 0,
        }
    }

    #[test]
    fn t1_update_example() {
        let b = trace(true, vec![0, 1], vec![0.25, 0.75], 0.0);
        let a = trace(false, vec![1, 0], vec![0.25, 0.75], 0.0);
        let u = ce_update(&[b.clone(), b.clone(), b.clone(), a], 2).unwrap();
        assert_eq!(u.seen, vec![false, true]);
        assert!((u.raw[1] - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(u.raw[0], 0.0);
        assert_eq!(u.hits, 3);
        let single = ce_update(&[b], 2).unwrap();
        assert!((single.raw[1] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn update_is_invariant_to_a_common_likelihood_shift() {
        let s = [
            trace(true, vec![2, 1], vec![1.5, 0.5], -3.0),
            trace(true, vec![0, 3], vec![0.2, 2.0], -1.0),
            trace(false, vec![1, 1], vec![1.0, 1.0], 4.0),
        ];
        let shifted: Vec<_> = s.iter().map(|t| TraceSummary { log_l: t.log_l - 900.0, ..t.clone() }).collect();
        let a = ce_update(&s, 2).unwrap();
        let b = ce_update(&shifted, 2).unwrap();
        for k in 0..2 {
            assert!((a.raw[k] / b.raw[k] - 1.0).abs() < 1e-14);
        }
        let w = [(-3.0f64).exp(), (-1.0f64).exp()];
        let direct0 = (w[0] * 2.0) / (w[0] * 1.5 + w[1] * 0.2);
        assert!((a.raw[0] - direct0).abs() < 1e-14);
    }

    #[test]
    fn update_errors() {
        assert!(matches!(ce_update(&[trace(false, vec![1], vec![1.0], 0.0)], 1), Err(CeError::NoHits)));
        assert!(matches!(
            ce_update(&[trace(true, vec![1], vec![0.0], 0.0)], 1),
            Err(CeError::Inconsistent { command: 0 })
        ));
    }

    #[test]
    fn smoothing_examples() {
        let h = apply_smoothing(&[0.0, 1.7], &[false, true], &[0.8, 1.0], Smoothing::Halving);
        assert_eq!(h, vec![0.4, 1.7]);
        let a = apply_smoothing(&[0.0, 1.7], &[false, true], &[0.8, 1.0], Smoothing::Additive(0.01));
        assert_eq!(a, vec![0.008, 1.7]);
    }

    #[test]
    fn normalize_examples() {
        let v = normalize(&[0.5f64, 4.0 / 3.0], 2.0).unwrap();
        assert!((v[0] - 6.0 / 11.0).abs() < 1e-15);
        assert!((v[1] - 16.0 / 11.0).abs() < 1e-15);
        let again = normalize(v.as_slice(), 2.0).unwrap();
        assert!((again[0] - v[0]).abs() < 1e-12 && (again[1] - v[1]).abs() < 1e-12);
        assert!(normalize(&[0.0, 0.0], 2.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CeConfig::<f64>::default().validate().is_ok());
        let bad = CeConfig::<f64> { n_per_iteration: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = CeConfig::<f64> { convergence_tol: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn relative_change_ignores_unseen() {
        assert_eq!(relative_change(&[1.0, 2.0], &[0.5, 2.2], &[false, true]), 0.10000000000000009);
    }
}
