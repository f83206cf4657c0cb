//! Guarded-command Markov models and their tilted transition probabilities.
//!
//! A model is a list of commands `[name] guard -> rate : updates`. In a state
//! `s` command `k` has rate `K_k(s)` (zero when its guard is false). Under a
//! tilting vector `λ` the embedded jump chain picks command `k` with
//! probability `λ_k K_k(s) / <K(s), λ>`. The untilted model is `λ = µ = 1`.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr, Type, VarId};
use crate::scalar::Real;

/// Default upper bound for a variable declared without explicit bounds.
pub const DEFAULT_UPPER_BOUND: i64 = (1 << 31) - 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
    pub init: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub var: VarId,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub name: String,
    pub guard: Expr,
    pub rate: Expr,
    pub updates: Vec<Update>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub name: String,
    pub expr: Expr,
}

/// Variable valuation, ordered as the model's declarations.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State(pub Vec<i64>);

impl State {
    pub fn values(&self) -> &[i64] {
        &self.0
    }

    pub fn display<'a>(&'a self, model: &'a Model) -> StateDisplay<'a> {
        StateDisplay { state: self, model }
    }
}

pub struct StateDisplay<'a> {
    state: &'a State,
    model: &'a Model,
}

impl fmt::Display for StateDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (decl, v)) in self.model.variables.iter().zip(&self.state.0).enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}:{}", decl.name, v)?;
        }
        f.write_str("}")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model has no commands")]
    NoCommands,
    #[error("duplicate name '{0}'")]
    DuplicateName(String),
    #[error("variable '{name}': initial value {init} outside [{lo}..{hi}]")]
    InitOutOfBounds { name: String, lo: i64, hi: i64, init: i64 },
    #[error("variable '{name}': empty range [{lo}..{hi}]")]
    EmptyRange { name: String, lo: i64, hi: i64 },
    #[error("{context}: expected {expected} expression, found {found}")]
    WrongType { context: String, expected: Type, found: Type },
    #[error("{context}: {message}")]
    IllTyped { context: String, message: String },
    #[error("command '{command}' assigns '{var}' twice")]
    DoubleAssignment { command: String, var: String },
    #[error("command '{command}' in state {state}: {source}")]
    Eval { command: String, state: String, source: EvalError },
    #[error("command '{command}' in state {state}: negative rate {rate}")]
    NegativeRate { command: String, state: String, rate: f64 },
    #[error("label '{label}' in state {state}: {source}")]
    LabelEval { label: String, state: String, source: EvalError },
    #[error("command '{command}' in state {state}: '{var}' := {value} violates bounds [{lo}..{hi}]")]
    BoundViolation { command: String, state: String, var: String, value: i64, lo: i64, hi: i64 },
    #[error("command '{command}' is not enabled in state {state}")]
    NotEnabled { command: String, state: String },
}

/// A validated guarded-command model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    variables: Vec<VarDecl>,
    commands: Vec<Command>,
    labels: Vec<Label>,
    var_names: Vec<String>,
}

fn check_type(expr: &Expr, want: &[Type], context: impl Fn() -> String) -> Result<(), ModelError> {
    let found = expr
        .type_of()
        .map_err(|e| ModelError::IllTyped { context: context(), message: e.0 })?;
    if want.contains(&found) {
        Ok(())
    } else {
        Err(ModelError::WrongType { context: context(), expected: want[0], found })
    }
}

impl Model {
    pub fn new(variables: Vec<VarDecl>, commands: Vec<Command>, labels: Vec<Label>) -> Result<Self, ModelError> {
        if commands.is_empty() {
            return Err(ModelError::NoCommands);
        }
        let mut names = HashSet::new();
        for v in &variables {
            if !names.insert(v.name.as_str()) {
                return Err(ModelError::DuplicateName(v.name.clone()));
            }
            if v.lo > v.hi {
                return Err(ModelError::EmptyRange { name: v.name.clone(), lo: v.lo, hi: v.hi });
            }
            if v.init < v.lo || v.init > v.hi {
                return Err(ModelError::InitOutOfBounds { name: v.name.clone(), lo: v.lo, hi: v.hi, init: v.init });
            }
        }
        for l in &labels {
            if !names.insert(l.name.as_str()) {
                return Err(ModelError::DuplicateName(l.name.clone()));
            }
            check_type(&l.expr, &[Type::Bool], || format!("label '{}'", l.name))?;
        }
        let mut command_names = HashSet::new();
        for c in &commands {
            if !command_names.insert(c.name.as_str()) {
                return Err(ModelError::DuplicateName(c.name.clone()));
            }
            check_type(&c.guard, &[Type::Bool], || format!("guard of '{}'", c.name))?;
            check_type(&c.rate, &[Type::Real, Type::Int], || format!("rate of '{}'", c.name))?;
            let mut assigned = HashSet::new();
            for u in &c.updates {
                if !assigned.insert(u.var) {
                    return Err(ModelError::DoubleAssignment {
                        command: c.name.clone(),
                        var: variables[u.var].name.clone(),
                    });
                }
                check_type(&u.expr, &[Type::Int], || {
                    format!("update of '{}' in '{}'", variables[u.var].name, c.name)
                })?;
            }
        }
        let var_names = variables.iter().map(|v| v.name.clone()).collect();
        Ok(Self { variables, commands, labels, var_names })
    }

    pub fn variables(&self) -> &[VarDecl] {
        &self.variables
    }

    pub fn commands(&self) -> &[Command] {
        &self.commands
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    /// Number of commands `n`, the dimension of every parameter vector.
    pub fn n_commands(&self) -> usize {
        self.commands.len()
    }

    pub fn var_index(&self, name: &str) -> Option<VarId> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }

    pub fn command_index(&self, name: &str) -> Option<usize> {
        self.commands.iter().position(|c| c.name == name)
    }

    pub fn initial_state(&self) -> State {
        State(self.variables.iter().map(|v| v.init).collect())
    }

    pub fn label_holds(&self, label: usize, state: &State) -> Result<bool, ModelError> {
        let l = &self.labels[label];
        l.expr.eval_bool(&state.0).map_err(|source| ModelError::LabelEval {
            label: l.name.clone(),
            state: state.display(self).to_string(),
            source,
        })
    }

    fn eval_error(&self, k: usize, state: &State, source: EvalError) -> ModelError {
        ModelError::Eval { command: self.commands[k].name.clone(), state: state.display(self).to_string(), source }
    }

    /// Rate of command `k` in `state`, zero when its guard is false.
    pub fn rate<T: Real>(&self, k: usize, state: &State) -> Result<T, ModelError> {
        let c = &self.commands[k];
        if !c.guard.eval_bool(&state.0).map_err(|e| self.eval_error(k, state, e))? {
            return Ok(T::zero());
        }
        let r = c.rate.eval_real(&state.0).map_err(|e| self.eval_error(k, state, e))?;
        if r < 0.0 {
            return Err(ModelError::NegativeRate {
                command: c.name.clone(),
                state: state.display(self).to_string(),
                rate: r,
            });
        }
        let r = T::of(r);
        if !r.is_finite() {
            return Err(self.eval_error(k, state, EvalError::NonFinite));
        }
        Ok(r)
    }

    /// Writes the rate vector `K(s)` into `out` (length `n`).
    pub fn rates_into<T: Real>(&self, state: &State, out: &mut [T]) -> Result<(), ModelError> {
        debug_assert_eq!(out.len(), self.commands.len());
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = self.rate(k, state)?;
        }
        Ok(())
    }

    /// The rate vector `K(s)`.
    pub fn evaluate_rates<T: Real>(&self, state: &State) -> Result<Vec<T>, ModelError> {
        let mut out = vec![T::zero(); self.commands.len()];
        self.rates_into(state, &mut out)?;
        Ok(out)
    }

    pub fn is_enabled(&self, k: usize, state: &State) -> Result<bool, ModelError> {
        self.commands[k].guard.eval_bool(&state.0).map_err(|e| self.eval_error(k, state, e))
    }

    /// Successor of `state` under command `k`. All right-hand sides are
    /// evaluated in the pre-state.
    pub fn apply_command(&self, state: &State, k: usize) -> Result<State, ModelError> {
        if !self.is_enabled(k, state)? {
            return Err(ModelError::NotEnabled {
                command: self.commands[k].name.clone(),
                state: state.display(self).to_string(),
            });
        }
        let c = &self.commands[k];
        let mut next = state.clone();
        for u in &c.updates {
            let value = u.expr.eval_int(&state.0).map_err(|e| self.eval_error(k, state, e))?;
            let decl = &self.variables[u.var];
            if value < decl.lo || value > decl.hi {
                return Err(ModelError::BoundViolation {
                    command: c.name.clone(),
                    state: state.display(self).to_string(),
                    var: decl.name.clone(),
                    value,
                    lo: decl.lo,
                    hi: decl.hi,
                });
            }
            next.0[u.var] = value;
        }
        Ok(next)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("parameter {index} is {value}, expected a finite value > 0")]
    NotPositive { index: usize, value: f64 },
    #[error("parameter {index} is {value}, expected a finite value >= 0")]
    Negative { index: usize, value: f64 },
    #[error("parameter vector sums to zero")]
    ZeroSum,
    #[error("normalisation constant must be finite and > 0, got {0}")]
    BadConstant(f64),
    #[error("expected {expected} parameters, got {found}")]
    Length { expected: usize, found: usize },
}

/// Tilting vector `λ`: one multiplier per command.
///
/// Constructed through [`ParamVector::new`] every entry is strictly positive.
/// [`ParamVector::from_nonnegative`] admits zeros, which only arise from CE
/// updates with smoothing disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector<T>(Vec<T>);

impl<T: Real> ParamVector<T> {
    pub fn new(entries: Vec<T>) -> Result<Self, ParamError> {
        for (index, &x) in entries.iter().enumerate() {
            if !(x > T::zero() && x.is_finite()) {
                return Err(ParamError::NotPositive { index, value: x.to_f64_lossy() });
            }
        }
        Ok(Self(entries))
    }

    pub fn from_nonnegative(entries: Vec<T>) -> Result<Self, ParamError> {
        for (index, &x) in entries.iter().enumerate() {
            if !(x >= T::zero() && x.is_finite()) {
                return Err(ParamError::Negative { index, value: x.to_f64_lossy() });
            }
        }
        Ok(Self(entries))
    }

    /// The untilted reference vector `µ = (1, …, 1)`.
    pub fn ones(n: usize) -> Self {
        Self(vec![T::one(); n])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> T {
        crate::scalar::compensated_sum(self.0.iter().copied())
    }

    pub fn scaled(&self, c: T) -> Self {
        Self(self.0.iter().map(|&x| x * c).collect())
    }

    /// Rescaled so the entries sum to `constant`.
    pub fn scaled_to(&self, constant: T) -> Result<Self, ParamError> {
        if !(constant > T::zero() && constant.is_finite()) {
            return Err(ParamError::BadConstant(constant.to_f64_lossy()));
        }
        let sum = self.sum();
        if !(sum > T::zero()) {
            return Err(ParamError::ZeroSum);
        }
        Ok(Self(self.0.iter().map(|&x| x / sum * constant).collect()))
    }

    pub fn check_len(&self, n: usize) -> Result<(), ParamError> {
        if self.0.len() == n {
            Ok(())
        } else {
            Err(ParamError::Length { expected: n, found: self.0.len() })
        }
    }
}

impl<T> std::ops::Index<usize> for ParamVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

/// Raised when `<K, λ> = 0`: no command can fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("deadlock: total tilted rate is zero")]
pub struct Deadlock;

/// Probability `λ_k K_k / <K, λ>` of each command.
pub fn transition_distribution<T: Real>(rates: &[T], lambda: &[T]) -> Result<Vec<T>, Deadlock> {
    let mut out = vec![T::zero(); rates.len()];
    transition_distribution_into(rates, lambda, &mut out)?;
    Ok(out)
}

/// In-place form of [`transition_distribution`]; returns `<K, λ>`.
pub fn transition_distribution_into<T: Real>(rates: &[T], lambda: &[T], out: &mut [T]) -> Result<T, Deadlock> {
    debug_assert_eq!(rates.len(), lambda.len());
    let mut total = T::zero();
    for ((slot, &r), &l) in out.iter_mut().zip(rates).zip(lambda) {
        *slot = r * l;
        total = total + *slot;
    }
    if !(total > T::zero()) {
        return Err(Deadlock);
    }
    for slot in out.iter_mut() {
        *slot = *slot / total;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::BinaryOp;
    use proptest::prelude::*;

    /// x in [0..2] init 0; a: x=0 -> 1 : x'=1; b: x=0 -> 3 : x'=2.
    fn t1() -> Model {
        let guard = Expr::binary(BinaryOp::Eq, Expr::Var(0), Expr::Int(0));
        let cmd = |name: &str, rate: i64, to: i64| Command {
            name: name.into(),
            guard: guard.clone(),
            rate: Expr::Int(rate),
            updates: vec![Update { var: 0, expr: Expr::Int(to) }],
        };
        Model::new(
            vec![VarDecl { name: "x".into(), lo: 0, hi: 2, init: 0 }],
            vec![cmd("a", 1, 1), cmd("b", 3, 2)],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn rates_of_t1() {
        let m = t1();
        assert_eq!(m.evaluate_rates::<f64>(&State(vec![0])).unwrap(), vec![1.0, 3.0]);
        assert_eq!(m.evaluate_rates::<f64>(&State(vec![1])).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn distribution_examples() {
        assert_eq!(transition_distribution(&[1.0, 3.0], &[1.0, 1.0]).unwrap(), vec![0.25, 0.75]);
        assert_eq!(transition_distribution(&[1.0, 3.0], &[3.0, 1.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(transition_distribution(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), vec![0.25, 0.75]);
        assert_eq!(transition_distribution(&[0.0, 0.0], &[2.0, 2.0]), Err(Deadlock));
    }

    #[test]
    fn apply_t1() {
        let m = t1();
        assert_eq!(m.apply_command(&State(vec![0]), 1).unwrap(), State(vec![2]));
        assert!(matches!(m.apply_command(&State(vec![2]), 1), Err(ModelError::NotEnabled { .. })));
    }

    #[test]
    fn simultaneous_updates_use_pre_state() {
        let swap = Command {
            name: "swap".into(),
            guard: Expr::Bool(true),
            rate: Expr::Int(1),
            updates: vec![Update { var: 0, expr: Expr::Var(1) }, Update { var: 1, expr: Expr::Var(0) }],
        };
        let m = Model::new(
            vec![
                VarDecl { name: "p".into(), lo: 0, hi: 9, init: 1 },
                VarDecl { name: "q".into(), lo: 0, hi: 9, init: 7 },
            ],
            vec![swap],
            vec![],
        )
        .unwrap();
        assert_eq!(m.apply_command(&m.initial_state(), 0).unwrap(), State(vec![7, 1]));
    }

    #[test]
    fn bound_violation_is_reported() {
        let inc = Command {
            name: "inc".into(),
            guard: Expr::Bool(true),
            rate: Expr::Int(1),
            updates: vec![Update { var: 0, expr: Expr::binary(BinaryOp::Add, Expr::Var(0), Expr::Int(1)) }],
        };
        let m = Model::new(vec![VarDecl { name: "x".into(), lo: 0, hi: 1, init: 1 }], vec![inc], vec![]).unwrap();
        let err = m.apply_command(&m.initial_state(), 0).unwrap_err();
        assert!(matches!(err, ModelError::BoundViolation { value: 2, .. }), "{err}");
        assert!(err.to_string().contains("inc"));
    }

    #[test]
    fn negative_and_failing_rates_are_errors() {
        let mk = |rate: Expr| {
            Model::new(
                vec![VarDecl { name: "x".into(), lo: 0, hi: 1, init: 0 }],
                vec![Command { name: "c".into(), guard: Expr::Bool(true), rate, updates: vec![] }],
                vec![],
            )
            .unwrap()
        };
        let m = mk(Expr::binary(BinaryOp::Sub, Expr::Var(0), Expr::Int(1)));
        assert!(matches!(m.evaluate_rates::<f64>(&m.initial_state()), Err(ModelError::NegativeRate { .. })));
        let m = mk(Expr::binary(BinaryOp::Div, Expr::Int(1), Expr::Var(0)));
        let err = m.evaluate_rates::<f64>(&m.initial_state()).unwrap_err();
        assert!(matches!(err, ModelError::Eval { source: EvalError::DivisionByZero, .. }));
        assert!(err.to_string().contains("{x:0}"));
    }

    #[test]
    fn model_invariants() {
        assert_eq!(Model::new(vec![], vec![], vec![]), Err(ModelError::NoCommands));
        let c = |n: &str| Command { name: n.into(), guard: Expr::Bool(true), rate: Expr::Int(1), updates: vec![] };
        assert!(matches!(Model::new(vec![], vec![c("a"), c("a")], vec![]), Err(ModelError::DuplicateName(_))));
        let x = VarDecl { name: "x".into(), lo: 0, hi: 1, init: 0 };
        let l = Label { name: "x".into(), expr: Expr::Bool(true) };
        assert!(matches!(Model::new(vec![x.clone()], vec![c("a")], vec![l]), Err(ModelError::DuplicateName(_))));
        let bad = Command { guard: Expr::Int(1), ..c("a") };
        assert!(matches!(Model::new(vec![x], vec![bad], vec![]), Err(ModelError::WrongType { .. })));
    }

    #[test]
    fn param_vector_validation() {
        assert!(ParamVector::new(vec![1.0, 0.0]).is_err());
        assert!(ParamVector::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(ParamVector::from_nonnegative(vec![1.0, 0.0]).is_ok());
        assert!(ParamVector::from_nonnegative(vec![-1.0]).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let p = transition_distribution::<f32>(&[1.0, 3.0], &[3.0, 1.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    proptest! {
        #[test]
        fn distribution_sums_to_one_and_is_scale_invariant(
            rates in prop::collection::vec(prop_oneof![Just(0.0), 1e-3..1e3f64], 1..12),
            lambda in prop::collection::vec(1e-3..1e3f64, 12),
            c in 1e-3..1e3f64,
        ) {
            let lambda = &lambda[..rates.len()];
            prop_assume!(rates.iter().any(|&r| r > 0.0));
            let p = transition_distribution(&rates, lambda).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let scaled: Vec<f64> = lambda.iter().map(|&l| l * c).collect();
            let q = transition_distribution(&rates, &scaled).unwrap();
            for ((a, b), r) in p.iter().zip(&q).zip(&rates) {
                prop_assert!((a - b).abs() < 1e-12);
                if *r == 0.0 {
                    prop_assert_eq!(*a, 0.0);
                }
            }
        }
    }
}
