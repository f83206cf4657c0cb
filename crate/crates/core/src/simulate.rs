//! Trace generation on the tilted embedded chain.
//!
//! One trace accumulates exactly what estimation and the CE update consume:
//! the verdict `z`, per-command firing counts `U_k`, the log likelihood ratio
//! against the untilted chain, and per-command sums
//! `D_k = Σ_s K_k(s) / <K(s), λ>` over every step `s` of the path.
//!
//! The likelihood ratio is accumulated per step as
//! `ln(µ_k / λ_k) + ln(<K, λ> / <K, µ>)` for the chosen command `k`, so with
//! `λ = µ` every term is exactly zero.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{transition_distribution_into, Model, ModelError, ParamError, ParamVector, State};
use crate::monitor::{CompiledProperty, EndReason, Monitor};
use crate::rng::rng_from_seed;
use crate::scalar::{CompensatedSum, Real};

/// Default step cap per trace.
pub const DEFAULT_MAX_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceEnd {
    /// The monitor reached a verdict.
    Decided,
    /// No command was enabled.
    Deadlock,
    /// `max_steps` transitions were taken without a verdict.
    StepCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary<T> {
    /// Whether the trace satisfies the property.
    pub z: bool,
    /// Path length `|ω|`.
    pub steps: usize,
    /// `U_k`: number of firings of each command.
    pub counts: Vec<u32>,
    /// `ln L(ω)` against the untilted chain.
    pub log_l: T,
    /// `D_k` accumulated over all steps.
    pub denom: Vec<T>,
    /// Cut by the step cap while the verdict was still open.
    pub undecided: bool,
    pub end: TraceEnd,
    /// Bit `i` set iff property atom `i` held in some visited state.
    pub atoms_seen: u64,
}

impl<T: Real> TraceSummary<T> {
    pub fn likelihood_ratio(&self) -> T {
        self.log_l.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("replayed command '{command}' has probability zero at step {step}")]
    NotEnabled { command: String, step: usize },
    #[error("replayed path has {len} commands but the trace ended after {steps}")]
    PathTooLong { len: usize, steps: usize },
    #[error("max_steps must be at least 1")]
    ZeroStepCap,
}

/// What the trace driver reports to an observer after each transition.
pub struct StepEvent<'a> {
    pub step: usize,
    /// `None` for the initial state.
    pub command: Option<usize>,
    pub state: &'a State,
}

struct Kernel<'a, T> {
    model: &'a Model,
    lambda: &'a [T],
    rates: Vec<T>,
    probs: Vec<T>,
}

/// Drives one trace; `choose` picks the next command from the transition
/// probabilities.
fn run_trace<T, C, O>(
    model: &Model,
    lambda: &ParamVector<T>,
    monitor: &mut Monitor<'_>,
    max_steps: usize,
    mut choose: C,
    mut observe: O,
) -> Result<TraceSummary<T>, SimError>
where
    T: Real,
    C: FnMut(usize, &[T]) -> Result<Option<usize>, SimError>,
    O: FnMut(StepEvent<'_>),
{
    let n = model.n_commands();
    lambda.check_len(n)?;
    if max_steps == 0 {
        return Err(SimError::ZeroStepCap);
    }
    let property = monitor.property();
    let mut k = Kernel { model, lambda: lambda.as_slice(), rates: vec![T::zero(); n], probs: vec![T::zero(); n] };
    let mut state = model.initial_state();
    let bits = property.valuation(model, &state)?;
    let mut atoms_seen = bits;
    let mut ms = monitor.advance(monitor.root(), bits);
    observe(StepEvent { step: 0, command: None, state: &state });

    let mut counts = vec![0u32; n];
    let mut denom = vec![CompensatedSum::<T>::new(); n];
    let mut log_l = CompensatedSum::<T>::new();
    let mut steps = 0usize;
    let end = loop {
        if ms.is_decided() {
            break TraceEnd::Decided;
        }
        k.model.rates_into(&state, &mut k.rates)?;
        let base_total: T = k.rates.iter().fold(T::zero(), |acc, &r| acc + r);
        if !(base_total > T::zero()) {
            break TraceEnd::Deadlock;
        }
        if steps == max_steps {
            break TraceEnd::StepCap;
        }
        let Ok(tilted_total) = transition_distribution_into(&k.rates, k.lambda, &mut k.probs) else {
            // Every enabled command has a zero parameter.
            break TraceEnd::Deadlock;
        };
        for (d, &r) in denom.iter_mut().zip(&k.rates) {
            d.add(r / tilted_total);
        }
        let Some(chosen) = choose(steps, &k.probs)? else {
            break TraceEnd::StepCap;
        };
        if !(k.probs[chosen] > T::zero()) {
            return Err(SimError::NotEnabled { command: model.commands()[chosen].name.clone(), step: steps });
        }
        // µ_k = 1
        log_l.add((T::one() / k.lambda[chosen]).ln() + (tilted_total / base_total).ln());
        counts[chosen] += 1;
        state = model.apply_command(&state, chosen)?;
        steps += 1;
        observe(StepEvent { step: steps, command: Some(chosen), state: &state });
        let bits = property.valuation(model, &state)?;
        atoms_seen |= bits;
        ms = monitor.advance(ms, bits);
    };
    let reason = if end == TraceEnd::Deadlock { EndReason::Deadlock } else { EndReason::StepCap };
    let closed = Monitor::finalize(ms, reason);
    Ok(TraceSummary {
        z: closed.satisfied,
        steps,
        counts,
        log_l: log_l.value(),
        denom: denom.iter().map(CompensatedSum::value).collect(),
        undecided: closed.undecided,
        end,
        atoms_seen,
    })
}

/// Inverse-CDF draw over `probs` with one uniform; lowest index wins ties.
fn sample_index<T: Real>(probs: &[T], u: T) -> usize {
    let mut cum = T::zero();
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > T::zero() {
            cum = cum + p;
            last = k;
            if u < cum {
                return k;
            }
        }
    }
    // Rounding left the cumulative sum just below 1.
    last
}

/// Simulates one trace with a reusable monitor.
pub fn simulate_with<T: Real>(
    monitor: &mut Monitor<'_>,
    model: &Model,
    lambda: &ParamVector<T>,
    seed: u64,
    max_steps: usize,
) -> Result<TraceSummary<T>, SimError> {
    let mut rng = rng_from_seed(seed);
    run_trace(
        model,
        lambda,
        monitor,
        max_steps,
        |_, probs| Ok(Some(sample_index(probs, T::of(rng.random::<f64>())))),
        |_| {},
    )
}

/// Simulates one trace of `model` under `lambda`, monitoring `property`.
pub fn simulate<T: Real>(
    model: &Model,
    lambda: &ParamVector<T>,
    property: &CompiledProperty,
    seed: u64,
    max_steps: usize,
) -> Result<TraceSummary<T>, SimError> {
    simulate_with(&mut Monitor::new(property), model, lambda, seed, max_steps)
}

/// Like [`simulate`], also returning the command sequence and handing every
/// visited state to `observe`.
pub fn simulate_observed<T: Real>(
    model: &Model,
    lambda: &ParamVector<T>,
    property: &CompiledProperty,
    seed: u64,
    max_steps: usize,
    mut observe: impl FnMut(StepEvent<'_>),
) -> Result<(TraceSummary<T>, Vec<usize>), SimError> {
    let mut rng = rng_from_seed(seed);
    let mut path = Vec::new();
    let summary = run_trace(
        model,
        lambda,
        &mut Monitor::new(property),
        max_steps,
        |_, probs| Ok(Some(sample_index(probs, T::of(rng.random::<f64>())))),
        |ev| {
            if let Some(k) = ev.command {
                path.push(k);
            }
            observe(ev)
        },
    )?;
    Ok((summary, path))
}

/// Forces the trace along `path` and returns the summary the simulator would
/// have produced for it. The path must end exactly where the trace would
/// stop (verdict or deadlock); a shorter path ends as if capped.
pub fn replay<T: Real>(
    model: &Model,
    lambda: &ParamVector<T>,
    property: &CompiledProperty,
    path: &[usize],
) -> Result<TraceSummary<T>, SimError> {
    let summary = run_trace(
        model,
        lambda,
        &mut Monitor::new(property),
        path.len().max(1),
        |step, _| Ok(path.get(step).copied()),
        |_| {},
    )?;
    if summary.steps < path.len() {
        return Err(SimError::PathTooLong { len: path.len(), steps: summary.steps });
    }
    Ok(summary)
}

/// `ln f(ω, λ) = Σ_s ln(λ_k K_k(s) / <K(s), λ>)` of a finite command sequence
/// replayed from the initial state.
pub fn log_path_density<T: Real>(model: &Model, lambda: &ParamVector<T>, path: &[usize]) -> Result<T, SimError> {
    lambda.check_len(model.n_commands())?;
    let mut state = model.initial_state();
    let mut acc = CompensatedSum::<T>::new();
    for (step, &k) in path.iter().enumerate() {
        let rates: Vec<T> = model.evaluate_rates(&state)?;
        let total: T = rates.iter().zip(lambda.as_slice()).map(|(&r, &l)| r * l).sum();
        let weight = lambda[k] * rates[k];
        if !(weight > T::zero()) {
            return Err(SimError::NotEnabled { command: model.commands()[k].name.clone(), step });
        }
        acc.add((weight / total).ln());
        state = model.apply_command(&state, k)?;
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{parse_model, parse_property};

    const T1: &str = "var x : [0..2] init 0;\n[a] x = 0 -> 1 : x'=1;\n[b] x = 0 -> 3 : x'=2;\n";

    fn setup(text: &str) -> (Model, CompiledProperty) {
        let m = parse_model(T1).unwrap();
        let p = CompiledProperty::compile(&parse_property(text, &m).unwrap()).unwrap();
        (m, p)
    }

    fn lam(v: &[f64]) -> ParamVector<f64> {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn forced_b_path_untilted() {
        let (m, p) = setup("F (x = 2)");
        let s = replay(&m, &lam(&[1.0, 1.0]), &p, &[1]).unwrap();
        assert!(s.z);
        assert_eq!(s.steps, 1);
        assert_eq!(s.counts, vec![0, 1]);
        assert_eq!(s.log_l, 0.0);
        assert_eq!(s.denom, vec![0.25, 0.75]);
        assert_eq!(s.end, TraceEnd::Decided);
    }

    #[test]
    fn forced_b_path_tilted() {
        let (m, p) = setup("F (x = 2)");
        let s = replay(&m, &lam(&[3.0, 1.0]), &p, &[1]).unwrap();
        assert!((s.likelihood_ratio() - 1.5).abs() < 1e-15);
        assert_eq!(s.denom, vec![1.0 / 6.0, 3.0 / 6.0]);
    }

    #[test]
    fn a_path_deadlocks_unsatisfied() {
        let (m, p) = setup("F (x = 2)");
        let s = replay(&m, &lam(&[1.0, 1.0]), &p, &[0]).unwrap();
        assert!(!s.z);
        assert!(!s.undecided);
        assert_eq!(s.end, TraceEnd::Deadlock);
    }

    #[test]
    fn path_density_examples() {
        let (m, _) = setup("F (x = 2)");
        assert!((log_path_density(&m, &lam(&[1.0, 1.0]), &[1]).unwrap() - 0.75f64.ln()).abs() < 1e-15);
        assert!((log_path_density(&m, &lam(&[3.0, 1.0]), &[0]).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(log_path_density(&m, &lam(&[3.0, 1.0]), &[]).unwrap(), 0.0);
        assert!(matches!(log_path_density(&m, &lam(&[1.0, 1.0]), &[1, 1]), Err(SimError::NotEnabled { step: 1, .. })));
    }

    #[test]
    fn untilted_traces_have_unit_likelihood() {
        let (m, p) = setup("F (x = 2)");
        for seed in 0..200 {
            let s = simulate(&m, &lam(&[1.0, 1.0]), &p, seed, 10).unwrap();
            assert_eq!(s.log_l, 0.0);
            assert_eq!(s.counts.iter().sum::<u32>() as usize, s.steps);
        }
    }

    #[test]
    fn step_cap_marks_undecided() {
        let m = parse_model("var x : [0..1] init 0;\n[flip] true -> 1 : x'=1-x;").unwrap();
        let p = CompiledProperty::compile(&parse_property("F (x = 2)", &m).unwrap()).unwrap();
        let s = simulate(&m, &lam(&[1.0]), &p, 1, 50).unwrap();
        assert_eq!(s.end, TraceEnd::StepCap);
        assert_eq!(s.steps, 50);
        assert!(s.undecided && !s.z);
        assert!(matches!(simulate(&m, &lam(&[1.0]), &p, 1, 0), Err(SimError::ZeroStepCap)));
    }

    #[test]
    fn zero_parameters_only_remove_commands() {
        let (m, p) = setup("F (x = 2)");
        let only_b = ParamVector::from_nonnegative(vec![0.0, 1.0]).unwrap();
        for seed in 0..20 {
            let s = simulate(&m, &only_b, &p, seed, 10).unwrap();
            assert_eq!(s.counts, vec![0, 1]);
        }
        let m = parse_model("var x : [0..1];\n[a] x = 0 -> 1 : x'=1;").unwrap();
        let p = CompiledProperty::compile(&parse_property("F (x = 1)", &m).unwrap()).unwrap();
        let s = simulate(&m, &ParamVector::from_nonnegative(vec![0.0]).unwrap(), &p, 0, 10).unwrap();
        assert_eq!(s.end, TraceEnd::Deadlock);
        assert!(!s.z && !s.undecided);
    }

    #[test]
    fn decided_at_initial_state_takes_no_steps() {
        let (m, p) = setup("F (x >= 0)");
        let s = simulate(&m, &lam(&[1.0, 1.0]), &p, 0, 10).unwrap();
        assert!(s.z);
        assert_eq!(s.steps, 0);
        assert_eq!(s.denom, vec![0.0, 0.0]);
    }

    #[test]
    fn replay_rejects_disabled_and_overlong_paths() {
        let (m, p) = setup("F (x = 2)");
        assert!(matches!(replay(&m, &lam(&[1.0, 1.0]), &p, &[1, 0]), Err(SimError::PathTooLong { .. })));
    }

    #[test]
    fn sample_index_ties_go_low() {
        assert_eq!(sample_index(&[0.5, 0.5], 0.0), 0);
        assert_eq!(sample_index(&[0.5, 0.5], 0.5), 1);
        assert_eq!(sample_index(&[0.0, 0.5, 0.5], 0.0), 1);
        assert_eq!(sample_index(&[0.3, 0.7, 0.0], 0.999_999_999_999), 1);
    }

    #[test]
    fn runs_in_f32() {
        let (m, p) = setup("F (x = 2)");
        let s = replay(&m, &ParamVector::<f32>::new(vec![3.0, 1.0]).unwrap(), &p, &[1]).unwrap();
        assert!((s.likelihood_ratio() - 1.5).abs() < 1e-6);
    }
}
