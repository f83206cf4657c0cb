//! Exact analysis of small models on their explicit state space.
//!
//! A property is checked on the product of the embedded chain with the
//! monitor's obligations, so every formula the monitor accepts is supported
//! and the verdict semantics are exactly those of the simulator. Until
//! probabilities are the least fixed point of `x = P x + b` over the product
//! states that can still reach an accepting state.

pub mod sparse;

use std::collections::{HashMap, VecDeque};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ce::{apply_smoothing, normalize, relative_change, Smoothing};
use crate::model::{Model, ModelError, ParamError, ParamVector, State};
use crate::monitor::{CompiledProperty, Monitor, MonitorState, Verdict};
use crate::scalar::{CompensatedSum, Real};
use sparse::{gauss_seidel, gmres, Csr, Ilu0, IterationReport};

pub const DEFAULT_STATE_CAP: usize = 1_000_000;
/// Cap on product nodes (chain state paired with pending obligations).
pub const DEFAULT_PRODUCT_CAP: usize = 4 * DEFAULT_STATE_CAP;
pub const DEFAULT_TOL: f64 = 1e-15;
pub const DEFAULT_MAX_SWEEPS: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("state space exceeds the cap of {cap} states")]
    StateSpaceTooLarge { cap: usize },
    #[error("{what} did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { what: &'static str, residual: f64, iterations: usize },
    #[error("incomplete LU factorisation hit a zero pivot")]
    SingularPreconditioner,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<T> {
    pub command: usize,
    pub target: usize,
    /// Probability under the untilted chain.
    pub prob: T,
    /// Rate `K_k` of the command in the source state.
    pub rate: T,
}

/// Reachable states of a model with their outgoing transitions. States are
/// numbered in breadth-first order from the initial state (index 0).
#[derive(Debug, Clone)]
pub struct ExplicitChain<T> {
    states: Vec<State>,
    row_start: Vec<usize>,
    transitions: Vec<Transition<T>>,
}

impl<T: Real> ExplicitChain<T> {
    pub fn build(model: &Model, cap: usize) -> Result<Self, OracleError> {
        let n = model.n_commands();
        let mut index: HashMap<State, usize> = HashMap::new();
        let mut states = vec![model.initial_state()];
        index.insert(states[0].clone(), 0);
        let mut row_start = vec![0];
        let mut transitions = Vec::new();
        let mut rates = vec![T::zero(); n];
        let mut next = 0;
        while next < states.len() {
            let state = states[next].clone();
            model.rates_into(&state, &mut rates)?;
            let total: T = compensated(rates.iter().copied());
            for (k, &rate) in rates.iter().enumerate() {
                if !(rate > T::zero()) {
                    continue;
                }
                let succ = model.apply_command(&state, k)?;
                let target = match index.get(&succ) {
                    Some(&t) => t,
                    None => {
                        if states.len() == cap {
                            return Err(OracleError::StateSpaceTooLarge { cap });
                        }
                        index.insert(succ.clone(), states.len());
                        states.push(succ);
                        states.len() - 1
                    }
                };
                transitions.push(Transition { command: k, target, prob: rates[k] / total, rate: rates[k] });
            }
            row_start.push(transitions.len());
            next += 1;
        }
        Ok(ExplicitChain { states, row_start, transitions })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn transitions(&self, s: usize) -> &[Transition<T>] {
        &self.transitions[self.row_start[s]..self.row_start[s + 1]]
    }

    pub fn n_transitions(&self) -> usize {
        self.transitions.len()
    }

    /// No command is enabled.
    pub fn is_absorbing(&self, s: usize) -> bool {
        self.row_start[s] == self.row_start[s + 1]
    }

    /// Renumbers states so that old state `s` becomes `perm[s]`. The initial
    /// state must stay at index 0.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.len());
        assert_eq!(perm[0], 0, "the initial state keeps index 0");
        let mut inverse = vec![0; perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            inverse[new] = old;
        }
        let mut states = Vec::with_capacity(self.len());
        let mut row_start = vec![0];
        let mut transitions = Vec::with_capacity(self.transitions.len());
        for &old in &inverse {
            states.push(self.states[old].clone());
            transitions.extend(self.transitions(old).iter().map(|t| Transition { target: perm[t.target], ..*t }));
            row_start.push(transitions.len());
        }
        ExplicitChain { states, row_start, transitions }
    }

    /// Plain-text sparse matrix of the untilted chain: a `% states
    /// transitions` header, then one `row col prob` line per transition
    /// (0-based, commands to the same target listed separately).
    pub fn write_sparse(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "% {} {}", self.len(), self.transitions.len())?;
        for s in 0..self.len() {
            for t in self.transitions(s) {
                writeln!(w, "{} {} {:.16e}", s, t.target, t.prob.to_f64_lossy())?;
            }
        }
        Ok(())
    }
}

fn compensated<T: Real>(it: impl Iterator<Item = T>) -> T {
    it.collect::<CompensatedSum<T>>().value()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// The property is decided true.
    Accept,
    /// Decided false, or undecided in an absorbing state.
    Reject,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductEdge<T> {
    pub target: usize,
    pub command: usize,
    pub prob: T,
}

/// Product of an [`ExplicitChain`] with the property monitor. Node 0 is the
/// accepting sink, node 1 the rejecting sink.
#[derive(Debug, Clone)]
pub struct ProductChain<T> {
    pub initial: usize,
    /// Chain state of each open node; sinks map to `usize::MAX`.
    pub state_of: Vec<usize>,
    pub kind: Vec<NodeKind>,
    row_start: Vec<usize>,
    edges: Vec<ProductEdge<T>>,
}

pub const ACCEPT: usize = 0;
pub const REJECT: usize = 1;

impl<T: Real> ProductChain<T> {
    pub fn build(
        chain: &ExplicitChain<T>,
        model: &Model,
        property: &CompiledProperty,
        cap: usize,
    ) -> Result<Self, OracleError> {
        let mut monitor = Monitor::new(property);
        let valuations: Vec<u64> =
            chain.states.iter().map(|s| property.valuation(model, s)).collect::<Result<_, _>>()?;
        let mut pc = ProductChain {
            initial: 0,
            state_of: vec![usize::MAX, usize::MAX],
            kind: vec![NodeKind::Accept, NodeKind::Reject],
            row_start: vec![0, 0, 0],
            edges: Vec::new(),
        };
        let mut index: HashMap<(usize, MonitorState), usize> = HashMap::new();
        let mut monitors: Vec<MonitorState> = vec![monitor.root(), monitor.root()];
        let mut queue = VecDeque::new();
        let mut node = |pc: &mut ProductChain<T>,
                        monitors: &mut Vec<MonitorState>,
                        queue: &mut VecDeque<usize>,
                        s: usize,
                        ms: MonitorState|
         -> Result<usize, OracleError> {
            match ms.verdict() {
                Verdict::True => return Ok(ACCEPT),
                Verdict::False => return Ok(REJECT),
                Verdict::Undecided => {}
            }
            if let Some(&v) = index.get(&(s, ms)) {
                return Ok(v);
            }
            if pc.kind.len() - 2 == cap {
                return Err(OracleError::StateSpaceTooLarge { cap });
            }
            let v = pc.kind.len();
            index.insert((s, ms), v);
            pc.state_of.push(s);
            pc.kind.push(if chain.is_absorbing(s) { NodeKind::Reject } else { NodeKind::Open });
            monitors.push(ms);
            queue.push_back(v);
            Ok(v)
        };
        let ms0 = monitor.advance(monitor.root(), valuations[0]);
        pc.initial = node(&mut pc, &mut monitors, &mut queue, 0, ms0)?;
        // Nodes are numbered in discovery order, so rows can be appended as
        // nodes leave the queue.
        let mut expected = 2;
        while let Some(v) = queue.pop_front() {
            debug_assert_eq!(v, expected);
            expected += 1;
            let s = pc.state_of[v];
            let ms = monitors[v];
            for t in chain.transitions(s) {
                let next = monitor.advance(ms, valuations[t.target]);
                let target = node(&mut pc, &mut monitors, &mut queue, t.target, next)?;
                pc.edges.push(ProductEdge { target, command: t.command, prob: t.prob });
            }
            pc.row_start.push(pc.edges.len());
        }
        Ok(pc)
    }

    pub fn len(&self) -> usize {
        self.kind.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn edges(&self, v: usize) -> &[ProductEdge<T>] {
        &self.edges[self.row_start[v]..self.row_start[v + 1]]
    }

    /// Open nodes from which the accepting sink is reachable.
    pub fn can_accept(&self) -> Vec<bool> {
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); self.len()];
        for v in 0..self.len() {
            for e in self.edges(v) {
                preds[e.target].push(v);
            }
        }
        let mut good = vec![false; self.len()];
        good[ACCEPT] = true;
        let mut stack = vec![ACCEPT];
        while let Some(v) = stack.pop() {
            for &u in &preds[v] {
                if !good[u] {
                    good[u] = true;
                    stack.push(u);
                }
            }
        }
        good[ACCEPT] = false;
        good
    }

    /// Restriction to the nodes flagged in `keep`: the matrix among them and
    /// the one-step mass into the accepting sink.
    fn restricted_system(&self, keep: &[bool]) -> (Vec<usize>, Vec<usize>, Csr<T>, Vec<T>) {
        let nodes: Vec<usize> = (0..self.len()).filter(|&v| keep[v]).collect();
        let mut local = vec![usize::MAX; self.len()];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let mut triplets = Vec::new();
        let mut b = vec![T::zero(); nodes.len()];
        for (i, &v) in nodes.iter().enumerate() {
            for e in self.edges(v) {
                if e.target == ACCEPT {
                    b[i] = b[i] + e.prob;
                } else if local[e.target] != usize::MAX {
                    triplets.push((i, local[e.target], e.prob));
                }
            }
        }
        let m = Csr::from_triplets(nodes.len(), triplets);
        (nodes, local, m, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactResult<T> {
    pub probability: T,
    /// Convergence measure of the solver that produced `probability`.
    pub residual: T,
    pub iterations: usize,
    pub chain_states: usize,
    pub product_states: usize,
    /// Product states that can still reach a satisfying verdict.
    pub solved_states: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Gauss–Seidel value iteration from zero.
    ValueIteration,
    /// ILU(0)-preconditioned restarted GMRES on `(I - P) x = b`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<T> {
    pub method: Method,
    pub tol: T,
    pub max_iterations: usize,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        let tol = T::of(DEFAULT_TOL).max(T::epsilon() * T::of(8.0));
        SolveOptions { method: Method::ValueIteration, tol, max_iterations: DEFAULT_MAX_SWEEPS }
    }
}

/// Satisfaction probability of every product node.
pub fn satisfaction<T: Real>(
    product: &ProductChain<T>,
    opts: SolveOptions<T>,
) -> Result<(Vec<T>, IterationReport<T>, usize), OracleError> {
    let mut h = vec![T::zero(); product.len()];
    h[ACCEPT] = T::one();
    let keep = product.can_accept();
    let (nodes, _, p, b) = product.restricted_system(&keep);
    let mut x = vec![T::zero(); nodes.len()];
    let report = match opts.method {
        Method::ValueIteration => {
            let r = gauss_seidel(&p, &b, &mut x, opts.tol, opts.max_iterations);
            if !r.converged {
                return Err(not_converged("value iteration", r));
            }
            r
        }
        Method::Linear => {
            let mut a = Vec::with_capacity(p.vals.len() + nodes.len());
            for i in 0..nodes.len() {
                a.push((i, i, T::one()));
                for (j, v) in p.row(i) {
                    a.push((i, j, -v));
                }
            }
            let a = Csr::from_triplets(nodes.len(), a);
            let ilu = Ilu0::new(&a).ok_or(OracleError::SingularPreconditioner)?;
            let r = gmres(&a, &b, &mut x, &ilu, 60, opts.tol, opts.max_iterations.min(100_000));
            if !r.converged {
                return Err(not_converged("GMRES", r));
            }
            r
        }
    };
    for (&v, &xv) in nodes.iter().zip(&x) {
        h[v] = xv;
    }
    Ok((h, report, nodes.len()))
}

fn not_converged<T: Real>(what: &'static str, r: IterationReport<T>) -> OracleError {
    OracleError::NotConverged { what, residual: r.residual.to_f64_lossy(), iterations: r.iterations }
}

/// Probability that a trace from the initial state satisfies the property.
pub fn exact_probability<T: Real>(
    chain: &ExplicitChain<T>,
    model: &Model,
    property: &CompiledProperty,
    opts: SolveOptions<T>,
) -> Result<ExactResult<T>, OracleError> {
    let product = ProductChain::build(chain, model, property, DEFAULT_PRODUCT_CAP)?;
    let (h, report, solved) = satisfaction(&product, opts)?;
    Ok(ExactResult {
        probability: h[product.initial],
        residual: report.residual,
        iterations: report.iterations,
        chain_states: chain.len(),
        product_states: product.len() - 2,
        solved_states: solved,
    })
}

/// Expected CE statistics at tilt `λ` for traces that satisfy the property:
/// `numerator_k = E_λ[L z U_k]` and `denominator_k = E_λ[L z D_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeReference<T> {
    pub numerator: Vec<T>,
    pub denominator: Vec<T>,
    pub gamma: T,
}

impl<T: Real> CeReference<T> {
    /// `numerator_k / denominator_k`; zero where nothing fires.
    pub fn ratio(&self) -> Vec<T> {
        self.numerator
            .iter()
            .zip(&self.denominator)
            .map(|(&n, &d)| if n > T::zero() { n / d } else { T::zero() })
            .collect()
    }

    pub fn seen(&self) -> Vec<bool> {
        self.numerator.iter().map(|&n| n > T::zero()).collect()
    }
}

/// Precomputed pieces of [`exact_ce_reference`] that do not depend on `λ`.
pub struct CeOracle<'a, T> {
    chain: &'a ExplicitChain<T>,
    product: ProductChain<T>,
    h: Vec<T>,
    /// Expected visits to each product node before the verdict, untilted.
    visits: Vec<T>,
    n_commands: usize,
}

impl<'a, T: Real> CeOracle<'a, T> {
    /// Expectations under the tilt equal untilted expectations without the
    /// likelihood ratio, so the untilted product chain is solved once.
    pub fn new(
        chain: &'a ExplicitChain<T>,
        model: &Model,
        property: &CompiledProperty,
        opts: SolveOptions<T>,
    ) -> Result<Self, OracleError> {
        let product = ProductChain::build(chain, model, property, DEFAULT_PRODUCT_CAP)?;
        let (h, _, _) = satisfaction(&product, opts)?;
        let keep: Vec<bool> = (0..product.len()).map(|v| product.kind[v] == NodeKind::Open && h[v] > T::zero()).collect();
        let (nodes, local, p, _) = product.restricted_system(&keep);
        let mut visits = vec![T::zero(); product.len()];
        if keep[product.initial] {
            // G = e_init + P^T G
            let pt = p.transpose();
            let mut e = vec![T::zero(); nodes.len()];
            e[local[product.initial]] = T::one();
            let mut g = vec![T::zero(); nodes.len()];
            let r = gauss_seidel(&pt, &e, &mut g, opts.tol, opts.max_iterations);
            if !r.converged {
                return Err(not_converged("expected visits", r));
            }
            for (&v, &gv) in nodes.iter().zip(&g) {
                visits[v] = gv;
            }
        }
        Ok(CeOracle { chain, product, h, visits, n_commands: model.n_commands() })
    }

    pub fn gamma(&self) -> T {
        self.h[self.product.initial]
    }

    pub fn reference(&self, lambda: &ParamVector<T>) -> Result<CeReference<T>, OracleError> {
        lambda.check_len(self.n_commands)?;
        let lam = lambda.as_slice();
        let mut num = vec![CompensatedSum::<T>::new(); self.n_commands];
        let mut den = vec![CompensatedSum::<T>::new(); self.n_commands];
        for v in 0..self.product.len() {
            let g = self.visits[v];
            if g == T::zero() {
                continue;
            }
            let transitions = self.chain.transitions(self.product.state_of[v]);
            let tilted: T = compensated(transitions.iter().map(|t| t.rate * lam[t.command]));
            for t in transitions {
                den[t.command].add(g * self.h[v] * t.rate / tilted);
            }
            for e in self.product.edges(v) {
                num[e.command].add(g * e.prob * self.h[e.target]);
            }
        }
        Ok(CeReference {
            numerator: num.iter().map(CompensatedSum::value).collect(),
            denominator: den.iter().map(CompensatedSum::value).collect(),
            gamma: self.gamma(),
        })
    }

    /// Iterates the expected CE update from `start` with the given smoothing
    /// and normalisation until the largest relative change of a seen entry
    /// falls below `tol`.
    pub fn iterate(
        &self,
        start: &ParamVector<T>,
        smoothing: Smoothing<T>,
        constant: T,
        tol: T,
        max_iterations: usize,
    ) -> Result<(ParamVector<T>, usize), OracleError> {
        let mut lambda = normalize(start.as_slice(), constant)?;
        for it in 1..=max_iterations {
            let r = self.reference(&lambda)?;
            let smoothed = apply_smoothing(&r.ratio(), &r.seen(), lambda.as_slice(), smoothing);
            let next = normalize(&smoothed, constant)?;
            let change = relative_change(lambda.as_slice(), next.as_slice(), &r.seen());
            lambda = next;
            if change < tol {
                return Ok((lambda, it));
            }
        }
        Err(OracleError::NotConverged { what: "exact CE iteration", residual: f64::NAN, iterations: max_iterations })
    }
}

/// One-shot [`CeOracle::reference`].
pub fn exact_ce_reference<T: Real>(
    chain: &ExplicitChain<T>,
    model: &Model,
    property: &CompiledProperty,
    lambda: &ParamVector<T>,
) -> Result<CeReference<T>, OracleError> {
    CeOracle::new(chain, model, property, SolveOptions::default())?.reference(lambda)
}
