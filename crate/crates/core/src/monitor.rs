//! Incremental monitoring of temporal properties over growing finite traces.
//!
//! The monitor rewrites the pending obligation by formula progression: after
//! observing state `s`, `φ` becomes the formula the remaining suffix has to
//! satisfy. Obligations are hash-consed in an arena and simplified with
//! three-valued (Kleene) identities only, so the verdict is `True`/`False` as
//! soon as the constant is reached and never changes afterwards.
//!
//! Step semantics at position `i`:
//! - `X φ` holds iff `φ` holds at `i + 1`;
//! - `φ U ψ` holds iff `ψ` holds at some `j ≥ i` and `φ` holds on `[i, j)`
//!   (non-strict: `ψ` at `i` suffices);
//! - `F φ` is `true U φ`.
//!
//! A trace that ends while the obligation is still open is closed as
//! unsatisfied; see [`Monitor::finalize`].

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{Model, ModelError, State};
use crate::property::{Atom, PropertyAst};

pub type NodeId = u32;

const FALSE: NodeId = 0;
const TRUE: NodeId = 1;

/// Maximum number of distinct atoms; valuations are packed in a `u64`.
pub const MAX_ATOMS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Node {
    False,
    True,
    Atom(u32),
    Not(NodeId),
    And(NodeId, NodeId),
    Or(NodeId, NodeId),
    Next(NodeId),
    Until(NodeId, NodeId),
    /// A constant that still needs one more observed state (`X true`).
    Tick(NodeId),
}

#[derive(Debug, Clone)]
struct Arena {
    nodes: Vec<Node>,
    index: HashMap<Node, NodeId>,
}

impl Arena {
    fn new() -> Self {
        let mut a = Self { nodes: Vec::new(), index: HashMap::new() };
        a.intern(Node::False);
        a.intern(Node::True);
        a
    }

    fn intern(&mut self, n: Node) -> NodeId {
        if let Some(&id) = self.index.get(&n) {
            return id;
        }
        let id = self.nodes.len() as NodeId;
        self.nodes.push(n);
        self.index.insert(n, id);
        id
    }

    fn not(&mut self, a: NodeId) -> NodeId {
        match (a, self.nodes[a as usize]) {
            (TRUE, _) => FALSE,
            (FALSE, _) => TRUE,
            (_, Node::Not(inner)) => inner,
            _ => self.intern(Node::Not(a)),
        }
    }

    fn and(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (a, b) {
            (FALSE, _) | (_, FALSE) => FALSE,
            (TRUE, x) | (x, TRUE) => x,
            (x, y) if x == y => x,
            (x, y) => self.intern(Node::And(x.min(y), x.max(y))),
        }
    }

    fn or(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (a, b) {
            (TRUE, _) | (_, TRUE) => TRUE,
            (FALSE, x) | (x, FALSE) => x,
            (x, y) if x == y => x,
            (x, y) => self.intern(Node::Or(x.min(y), x.max(y))),
        }
    }

    fn build(&mut self, ast: &PropertyAst, atoms: &[Atom]) -> NodeId {
        use PropertyAst as P;
        match ast {
            P::True => TRUE,
            P::False => FALSE,
            P::Atom(a) => {
                let i = atoms.iter().position(|x| x == a).expect("atom collected");
                self.intern(Node::Atom(i as u32))
            }
            P::Not(a) => {
                let a = self.build(a, atoms);
                self.not(a)
            }
            P::And(a, b) => {
                let (a, b) = (self.build(a, atoms), self.build(b, atoms));
                self.and(a, b)
            }
            P::Or(a, b) => {
                let (a, b) = (self.build(a, atoms), self.build(b, atoms));
                self.or(a, b)
            }
            P::Next(a) => {
                let a = self.build(a, atoms);
                self.intern(Node::Next(a))
            }
            P::Until(a, b) => {
                let (a, b) = (self.build(a, atoms), self.build(b, atoms));
                self.intern(Node::Until(a, b))
            }
            P::Eventually(a) => self.build(&P::Until(Box::new(P::True), a.clone()), atoms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PropertyError {
    #[error("property has {0} distinct atoms; at most {MAX_ATOMS} are supported")]
    TooManyAtoms(usize),
}

/// A property ready for monitoring: its atoms and the root obligation.
#[derive(Debug, Clone)]
pub struct CompiledProperty {
    atoms: Vec<Atom>,
    arena: Arena,
    root: NodeId,
}

impl CompiledProperty {
    pub fn compile(ast: &PropertyAst) -> Result<Self, PropertyError> {
        let mut atoms = Vec::new();
        ast.atoms(&mut atoms);
        if atoms.len() > MAX_ATOMS {
            return Err(PropertyError::TooManyAtoms(atoms.len()));
        }
        let mut arena = Arena::new();
        let root = arena.build(ast, &atoms);
        Ok(Self { atoms, arena, root })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Bit `i` is set iff atom `i` holds in `state`.
    pub fn valuation(&self, model: &Model, state: &State) -> Result<u64, ModelError> {
        let mut bits = 0u64;
        for (i, a) in self.atoms.iter().enumerate() {
            if a.holds(model, state)? {
                bits |= 1 << i;
            }
        }
        Ok(bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    True,
    False,
    Undecided,
}

/// Position of a monitor: the obligation the rest of the trace must meet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MonitorState {
    obligation: NodeId,
}

impl MonitorState {
    pub fn verdict(self) -> Verdict {
        match self.obligation {
            TRUE => Verdict::True,
            FALSE => Verdict::False,
            _ => Verdict::Undecided,
        }
    }

    pub fn is_decided(self) -> bool {
        self.obligation <= TRUE
    }

    /// Arena index of the pending obligation; stable within one [`Monitor`].
    pub fn obligation_id(self) -> NodeId {
        self.obligation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum EndReason {
    Deadlock,
    StepCap,
}

/// Closed verdict of a finished trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Finalized {
    pub satisfied: bool,
    /// Set when the trace was cut by the step cap before a verdict.
    pub undecided: bool,
}

/// Stateful progression engine. One monitor can serve any number of traces
/// of the same property; it memoizes `(obligation, valuation)` rewrites.
#[derive(Debug, Clone)]
pub struct Monitor<'p> {
    property: &'p CompiledProperty,
    arena: Arena,
    cache: HashMap<(NodeId, u64), NodeId>,
}

impl<'p> Monitor<'p> {
    pub fn new(property: &'p CompiledProperty) -> Self {
        Self { property, arena: property.arena.clone(), cache: HashMap::new() }
    }

    pub fn property(&self) -> &'p CompiledProperty {
        self.property
    }

    /// The obligation before any state has been observed.
    pub fn root(&self) -> MonitorState {
        MonitorState { obligation: self.property.root }
    }

    /// Observes the initial state (position 0).
    pub fn init(&mut self, model: &Model, initial: &State) -> Result<MonitorState, ModelError> {
        let bits = self.property.valuation(model, initial)?;
        Ok(self.advance(self.root(), bits))
    }

    /// Observes the next state of the trace.
    pub fn step(&mut self, model: &Model, ms: MonitorState, next: &State) -> Result<MonitorState, ModelError> {
        if ms.is_decided() {
            return Ok(ms);
        }
        let bits = self.property.valuation(model, next)?;
        Ok(self.advance(ms, bits))
    }

    /// Progression by a precomputed valuation (bit `i` = atom `i`).
    pub fn advance(&mut self, ms: MonitorState, valuation: u64) -> MonitorState {
        if ms.is_decided() {
            return ms;
        }
        if let Some(&next) = self.cache.get(&(ms.obligation, valuation)) {
            return MonitorState { obligation: next };
        }
        let next = self.progress(ms.obligation, valuation);
        self.cache.insert((ms.obligation, valuation), next);
        MonitorState { obligation: next }
    }

    /// Closes a finished trace: an open obligation counts as unsatisfied, and
    /// is flagged as undecided only when the step cap (not a deadlock) ended
    /// the trace.
    pub fn finalize(ms: MonitorState, reason: EndReason) -> Finalized {
        match ms.verdict() {
            Verdict::True => Finalized { satisfied: true, undecided: false },
            Verdict::False => Finalized { satisfied: false, undecided: false },
            Verdict::Undecided => Finalized { satisfied: false, undecided: reason == EndReason::StepCap },
        }
    }

    fn progress(&mut self, f: NodeId, v: u64) -> NodeId {
        match self.arena.nodes[f as usize] {
            Node::False | Node::True => f,
            Node::Atom(i) => {
                if v >> i & 1 == 1 {
                    TRUE
                } else {
                    FALSE
                }
            }
            Node::Not(a) => {
                let p = self.progress(a, v);
                self.arena.not(p)
            }
            Node::And(a, b) => {
                let pa = self.progress(a, v);
                if pa == FALSE {
                    return FALSE;
                }
                let pb = self.progress(b, v);
                self.arena.and(pa, pb)
            }
            Node::Or(a, b) => {
                let pa = self.progress(a, v);
                if pa == TRUE {
                    return TRUE;
                }
                let pb = self.progress(b, v);
                self.arena.or(pa, pb)
            }
            Node::Next(a) if a <= TRUE => self.arena.intern(Node::Tick(a)),
            Node::Next(a) => a,
            Node::Tick(c) => c,
            Node::Until(a, b) => {
                let pb = self.progress(b, v);
                if pb == TRUE {
                    return TRUE;
                }
                let pa = self.progress(a, v);
                let stay = self.arena.and(pa, f);
                self.arena.or(pb, stay)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{parse_model, parse_property};
    use proptest::prelude::*;

    const T1: &str = "var x : [0..2] init 0;\n[a] x = 0 -> 1 : x'=1;\n[b] x = 0 -> 3 : x'=2;\n";

    fn compiled(model: &Model, text: &str) -> CompiledProperty {
        CompiledProperty::compile(&parse_property(text, model).unwrap()).unwrap()
    }

    #[test]
    fn init_examples() {
        let m = parse_model(T1).unwrap();
        let s0 = m.initial_state();
        let p = compiled(&m, "F (x >= 0)");
        assert_eq!(Monitor::new(&p).init(&m, &s0).unwrap().verdict(), Verdict::True);
        let p = compiled(&m, "F (x = 2)");
        let mut mon = Monitor::new(&p);
        let ms = mon.init(&m, &s0).unwrap();
        assert_eq!(ms.verdict(), Verdict::Undecided);
        assert_eq!(mon.step(&m, ms, &State(vec![2])).unwrap().verdict(), Verdict::True);
        let stuck = mon.step(&m, ms, &State(vec![1])).unwrap();
        assert_eq!(stuck.verdict(), Verdict::Undecided);
        assert_eq!(Monitor::finalize(stuck, EndReason::Deadlock), Finalized { satisfied: false, undecided: false });
        assert_eq!(Monitor::finalize(stuck, EndReason::StepCap), Finalized { satisfied: false, undecided: true });
    }

    fn repair3() -> Model {
        parse_model(
            "var f : [0..2] init 0;\nlabel init = f = 0;\nlabel failure = f = 2;\n\
             [fail] f < 2 -> 0.1 * (2 - f) : f'=f+1;\n[repair] f > 0 -> 1.0 * f : f'=f-1;",
        )
        .unwrap()
    }

    #[test]
    fn next_defers_and_until_fails_on_return_to_init() {
        let m = repair3();
        let p = compiled(&m, "X ((! init) U failure)");
        let mut mon = Monitor::new(&p);
        let ms = mon.init(&m, &State(vec![0])).unwrap();
        assert_eq!(ms.verdict(), Verdict::Undecided);
        let ms = mon.step(&m, ms, &State(vec![1])).unwrap();
        assert_eq!(ms.verdict(), Verdict::Undecided);
        let back = mon.step(&m, ms, &State(vec![0])).unwrap();
        assert_eq!(back.verdict(), Verdict::False);
        let hit = mon.step(&m, ms, &State(vec![2])).unwrap();
        assert_eq!(hit.verdict(), Verdict::True);
        // Decided verdicts are sticky.
        assert_eq!(mon.step(&m, back, &State(vec![2])).unwrap().verdict(), Verdict::False);
    }

    #[test]
    fn until_is_non_strict() {
        let m = repair3();
        let p = compiled(&m, "init U (f = 0)");
        assert_eq!(Monitor::new(&p).init(&m, &State(vec![0])).unwrap().verdict(), Verdict::True);
    }

    // ---- independent reference: whole-trace three-valued recursion ----

    fn and3(a: Option<bool>, b: Option<bool>) -> Option<bool> {
        match (a, b) {
            (Some(false), _) | (_, Some(false)) => Some(false),
            (Some(true), Some(true)) => Some(true),
            _ => None,
        }
    }

    fn or3(a: Option<bool>, b: Option<bool>) -> Option<bool> {
        match (a, b) {
            (Some(true), _) | (_, Some(true)) => Some(true),
            (Some(false), Some(false)) => Some(false),
            _ => None,
        }
    }

    fn eval3(f: &PropertyAst, m: &Model, trace: &[State], i: usize) -> Option<bool> {
        use PropertyAst as P;
        let next = |g: &PropertyAst| if i + 1 < trace.len() { eval3(g, m, trace, i + 1) } else { None };
        match f {
            P::True => Some(true),
            P::False => Some(false),
            P::Atom(a) => Some(a.holds(m, &trace[i]).unwrap()),
            P::Not(a) => eval3(a, m, trace, i).map(|b| !b),
            P::And(a, b) => and3(eval3(a, m, trace, i), eval3(b, m, trace, i)),
            P::Or(a, b) => or3(eval3(a, m, trace, i), eval3(b, m, trace, i)),
            P::Next(a) => next(a),
            P::Until(a, b) => or3(eval3(b, m, trace, i), and3(eval3(a, m, trace, i), next(f))),
            P::Eventually(a) => or3(eval3(a, m, trace, i), next(f)),
        }
    }

    fn arb_formula() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            (0..4i64).prop_map(|c| format!("(x = {c})")),
            (0..4i64).prop_map(|c| format!("(x >= {c})")),
            (0..4i64).prop_map(|c| format!("(y < {c})")),
            Just("true".to_string()),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| format!("!({a})")),
                inner.clone().prop_map(|a| format!("X ({a})")),
                inner.clone().prop_map(|a| format!("F ({a})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) & ({b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) | ({b})")),
                (inner.clone(), inner).prop_map(|(a, b)| format!("({a}) U ({b})")),
            ]
        })
    }

    proptest! {
        #[test]
        fn incremental_matches_whole_trace_reference(
            text in arb_formula(),
            trace in prop::collection::vec((0..4i64, 0..4i64), 1..=20),
        ) {
            let m = parse_model("var x : [0..3] init 0;\nvar y : [0..3] init 0;\n[t] true -> 1 : x'=x;").unwrap();
            let ast = parse_property(&text, &m).unwrap();
            let trace: Vec<State> = trace.into_iter().map(|(x, y)| State(vec![x, y])).collect();
            let p = CompiledProperty::compile(&ast).unwrap();
            let mut mon = Monitor::new(&p);
            let mut ms = mon.init(&m, &trace[0]).unwrap();
            let mut decided_at = if ms.is_decided() { Some(0) } else { None };
            for (i, s) in trace.iter().enumerate().skip(1) {
                let before = ms;
                ms = mon.step(&m, ms, s).unwrap();
                if before.is_decided() {
                    prop_assert_eq!(before, ms, "verdict changed after decision");
                }
                if decided_at.is_none() && ms.is_decided() {
                    decided_at = Some(i);
                }
            }
            let reference = eval3(&ast, &m, &trace, 0);
            let got = match ms.verdict() {
                Verdict::True => Some(true),
                Verdict::False => Some(false),
                Verdict::Undecided => None,
            };
            prop_assert_eq!(got, reference, "formula {}", text);
            // Decided as soon as the prefix decides it.
            if let Some(i) = decided_at {
                prop_assert_eq!(eval3(&ast, &m, &trace[..=i], 0), reference);
                if i > 0 {
                    prop_assert_eq!(eval3(&ast, &m, &trace[..i], 0), None);
                }
            }
        }
    }
}
