//! Crude Monte Carlo and importance-sampling estimators.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, ParamVector};
use crate::monitor::CompiledProperty;
use crate::rng::streams;
use crate::runner::Runner;
use crate::scalar::{CompensatedSum, Real};
use crate::simulate::{SimError, TraceSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult<T> {
    pub gamma_hat: T,
    /// Sample variance of the per-trace terms, `n - 1` divisor.
    pub sample_variance: T,
    pub n: u64,
    pub hits: u64,
    pub undecided: u64,
    /// `sqrt(sample_variance / n) / gamma_hat`; absent when `gamma_hat = 0`.
    pub relative_error_proxy: Option<T>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("{name} = {value} is outside (0, 1)")]
    Domain { name: &'static str, value: f64 },
    #[error("variance reduction needs a positive estimate")]
    NoEstimate,
}

/// Streaming reduction of trace summaries into an [`EstimateResult`].
///
/// Only the log-likelihoods of satisfying traces are stored, so memory grows
/// with the hit count rather than the sample size.
#[derive(Debug, Clone, Default)]
pub struct Accumulator<T> {
    n: u64,
    undecided: u64,
    hit_log_l: Vec<T>,
}

impl<T: Real> Accumulator<T> {
    pub fn new() -> Self {
        Accumulator { n: 0, undecided: 0, hit_log_l: Vec::new() }
    }

    pub fn push(&mut self, s: &TraceSummary<T>) {
        self.n += 1;
        self.undecided += u64::from(s.undecided);
        if s.z {
            self.hit_log_l.push(s.log_l);
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn hits(&self) -> u64 {
        self.hit_log_l.len() as u64
    }

    /// Bernoulli estimate; every term is `z`.
    pub fn finish_mc(&self) -> Result<EstimateResult<T>, EstimateError> {
        if self.n == 0 {
            return Err(EstimateError::EmptySample);
        }
        let n = T::of_usize(self.n as usize);
        let gamma = T::of_usize(self.hit_log_l.len()) / n;
        let variance = if self.n > 1 { gamma * (T::one() - gamma) * n / (n - T::one()) } else { T::zero() };
        Ok(self.result(gamma, variance, Vec::new()))
    }

    /// Importance-sampling estimate with terms `L_i z_i`.
    pub fn finish_is(&self) -> Result<EstimateResult<T>, EstimateError> {
        if self.n == 0 {
            return Err(EstimateError::EmptySample);
        }
        let mut warnings = Vec::new();
        if self.hit_log_l.is_empty() {
            return Ok(self.result(T::zero(), T::zero(), warnings));
        }
        let shift = self.hit_log_l.iter().copied().fold(T::neg_infinity(), T::max);
        if shift > overflow_log::<T>() {
            warnings.push(format!(
                "largest log likelihood ratio is {shift}; terms were rescaled by exp(-{shift}) before summation"
            ));
        }
        // Terms divided by exp(shift); the largest is exactly 1.
        let n = T::of_usize(self.n as usize);
        let scaled: Vec<T> = self.hit_log_l.iter().map(|&l| (l - shift).exp()).collect();
        let mean = scaled.iter().copied().collect::<CompensatedSum<T>>().value() / n;
        let variance = if self.n > 1 {
            let mut sq: CompensatedSum<T> = scaled.iter().map(|&t| (t - mean) * (t - mean)).collect();
            let misses = T::of_usize((self.n - self.hits()) as usize);
            sq.add(misses * mean * mean);
            sq.value() / (n - T::one())
        } else {
            T::zero()
        };
        let scale = shift.exp();
        let gamma = mean * scale;
        let variance = variance * scale * scale;
        if gamma > T::one() {
            warnings.push(format!("estimate {gamma} exceeds 1; the tilt is pathological"));
        }
        if !gamma.is_finite() || !variance.is_finite() {
            warnings.push("estimate overflowed the scalar type".to_string());
        }
        Ok(self.result(gamma, variance, warnings))
    }

    fn result(&self, gamma: T, variance: T, warnings: Vec<String>) -> EstimateResult<T> {
        let n = T::of_usize(self.n as usize);
        let relative_error_proxy = (gamma > T::zero()).then(|| (variance / n).sqrt() / gamma);
        EstimateResult {
            gamma_hat: gamma,
            sample_variance: variance,
            n: self.n,
            hits: self.hits(),
            undecided: self.undecided,
            relative_error_proxy,
            warnings,
        }
    }
}

impl<'a, T: Real> Extend<&'a TraceSummary<T>> for Accumulator<T> {
    fn extend<I: IntoIterator<Item = &'a TraceSummary<T>>>(&mut self, iter: I) {
        for s in iter {
            self.push(s);
        }
    }
}

/// Log-likelihoods above this are reported as overflow hazards.
fn overflow_log<T: Real>() -> T {
    T::of(700.0).min(T::max_value().ln())
}

/// `n` untilted traces; `γ̂` is the hit fraction.
pub fn mc_estimate<T: Real>(
    runner: &Runner,
    model: &Model,
    property: &CompiledProperty,
    n: usize,
    seed: u64,
) -> Result<EstimateResult<T>, EstimateError> {
    if n == 0 {
        return Err(EstimateError::EmptySample);
    }
    let mu = ParamVector::<T>::ones(model.n_commands());
    let mut acc = Accumulator::new();
    runner.fold(model, &mu, property, seed, streams::ESTIMATE, n, |s| acc.push(s))?;
    acc.finish_mc()
}

/// `n` traces under `lambda`; `γ̂` is the mean of `L_i z_i`.
pub fn is_estimate<T: Real>(
    runner: &Runner,
    model: &Model,
    lambda: &ParamVector<T>,
    property: &CompiledProperty,
    n: usize,
    seed: u64,
) -> Result<EstimateResult<T>, EstimateError> {
    is_estimate_stream(runner, model, lambda, property, n, seed, streams::ESTIMATE, Accumulator::new())
}

/// [`is_estimate`] on an explicit seed stream, continuing from `acc`.
#[allow(clippy::too_many_arguments)]
pub fn is_estimate_stream<T: Real>(
    runner: &Runner,
    model: &Model,
    lambda: &ParamVector<T>,
    property: &CompiledProperty,
    n: usize,
    seed: u64,
    stream: u64,
    mut acc: Accumulator<T>,
) -> Result<EstimateResult<T>, EstimateError> {
    if n == 0 {
        return Err(EstimateError::EmptySample);
    }
    runner.fold(model, lambda, property, seed, stream, n, |s| acc.push(s))?;
    acc.finish_is()
}

/// `⌈ln(2/δ) / (2ε²)⌉`, at least 1: traces that bound `|γ̂ - γ| ≤ ε` with
/// probability `1 - δ`.
pub fn chernoff_sample_size(epsilon: f64, delta: f64) -> Result<u64, EstimateError> {
    for (name, value) in [("epsilon", epsilon), ("delta", delta)] {
        if !(value > 0.0 && value < 1.0) {
            return Err(EstimateError::Domain { name, value });
        }
    }
    let n = ((2.0 / delta).ln() / (2.0 * epsilon * epsilon)).ceil();
    Ok((n as u64).max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReduction<T> {
    /// `γ(1 - γ) / Var_IS`; infinite when the IS variance is zero.
    pub ratio: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Variance of crude MC relative to the IS estimator, with `gamma` the exact
/// probability when known and the IS estimate otherwise.
pub fn variance_reduction_report<T: Real>(
    gamma: Option<T>,
    is: &EstimateResult<T>,
) -> Result<VarianceReduction<T>, EstimateError> {
    if !(is.gamma_hat > T::zero()) {
        return Err(EstimateError::NoEstimate);
    }
    let g = gamma.unwrap_or(is.gamma_hat);
    let mc_variance = g * (T::one() - g);
    if is.sample_variance == T::zero() {
        let warning = (is.hits < is.n).then(|| {
            "IS terms have zero sample variance but some traces missed: the tilt is concentrated on a single path"
                .to_string()
        });
        return Ok(VarianceReduction { ratio: T::infinity(), warning });
    }
    Ok(VarianceReduction { ratio: mc_variance / is.sample_variance, warning: None })
}
