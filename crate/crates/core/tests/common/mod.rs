#![allow(dead_code)]

use cesmc::monitor::{CompiledProperty, Monitor, MonitorState};
use cesmc::{parse_model, Model, State};
use proptest::prelude::*;

pub const T1: &str = "var x : [0..2] init 0;\n[a] x = 0 -> 1 : x'=1;\n[b] x = 0 -> 3 : x'=2;\n";

/// One command of a random terminating model: it adds `(dx, dy)` while
/// `x + y` stays within the bound, at rate `base + slope * x`.
#[derive(Debug, Clone)]
pub struct DagCommand {
    pub dx: i64,
    pub dy: i64,
    pub base: u32,
    pub slope: u32,
}

#[derive(Debug, Clone)]
pub struct DagModel {
    pub bound: i64,
    pub commands: Vec<DagCommand>,
}

impl DagModel {
    pub fn text(&self) -> String {
        let b = self.bound;
        let mut s = format!("var x : [0..{b}];\nvar y : [0..{b}];\n");
        for (i, c) in self.commands.iter().enumerate() {
            let inc = c.dx + c.dy;
            s.push_str(&format!(
                "[c{i}] x + y <= {} -> {} + {} * x : x'=x+{}, y'=y+{};\n",
                b - inc,
                c.base,
                c.slope,
                c.dx,
                c.dy
            ));
        }
        s
    }

    pub fn model(&self) -> Model {
        parse_model(&self.text()).unwrap()
    }
}

pub fn dag_command() -> impl Strategy<Value = DagCommand> {
    (prop_oneof![Just((1, 0)), Just((0, 1)), Just((1, 1)), Just((2, 0))], 1u32..6, 0u32..3)
        .prop_map(|((dx, dy), base, slope)| DagCommand { dx, dy, base, slope })
}

pub fn dag_model(n_commands: usize) -> impl Strategy<Value = DagModel> {
    (2i64..6, prop::collection::vec(dag_command(), n_commands)).prop_map(|(bound, commands)| DagModel { bound, commands })
}

pub fn positive_lambda(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..20.0, n)
}

/// Every command sequence from the initial state that ends in a deadlock.
pub fn complete_paths(model: &Model) -> Vec<Vec<usize>> {
    fn walk(model: &Model, state: &State, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let enabled: Vec<usize> =
            (0..model.n_commands()).filter(|&k| model.rate::<f64>(k, state).unwrap() > 0.0).collect();
        if enabled.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for k in enabled {
            let next = model.apply_command(state, k).unwrap();
            prefix.push(k);
            walk(model, &next, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    walk(model, &model.initial_state(), &mut Vec::new(), &mut out);
    out
}

/// States visited along `path`, starting with the initial state.
pub fn path_states(model: &Model, path: &[usize]) -> Vec<State> {
    let mut states = vec![model.initial_state()];
    for &k in path {
        let next = model.apply_command(states.last().unwrap(), k).unwrap();
        states.push(next);
    }
    states
}

/// Probability of `path` under tilting `lambda`, as a plain product.
pub fn path_probability(model: &Model, lambda: &[f64], path: &[usize]) -> f64 {
    let mut p = 1.0;
    for (state, &k) in path_states(model, path).iter().zip(path) {
        let w: Vec<f64> = (0..model.n_commands()).map(|c| model.rate::<f64>(c, state).unwrap() * lambda[c]).collect();
        p *= w[k] / w.iter().sum::<f64>();
    }
    p
}

/// Every command sequence from the initial state along which the monitor
/// first reaches a verdict, or the model deadlocks with the verdict open.
/// These are exactly the traces the simulator can produce without a cap.
pub fn decided_paths(model: &Model, property: &CompiledProperty) -> Vec<Vec<usize>> {
    fn walk(
        model: &Model,
        monitor: &mut Monitor<'_>,
        state: &State,
        ms: MonitorState,
        prefix: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let enabled: Vec<usize> =
            (0..model.n_commands()).filter(|&k| model.rate::<f64>(k, state).unwrap() > 0.0).collect();
        if ms.is_decided() || enabled.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for k in enabled {
            let next = model.apply_command(state, k).unwrap();
            let next_ms = monitor.step(model, ms, &next).unwrap();
            prefix.push(k);
            walk(model, monitor, &next, next_ms, prefix, out);
            prefix.pop();
        }
    }
    let mut monitor = Monitor::new(property);
    let init = model.initial_state();
    let ms = monitor.init(model, &init).unwrap();
    let mut out = Vec::new();
    walk(model, &mut monitor, &init, ms, &mut Vec::new(), &mut out);
    out
}

pub fn compile(model: &Model, text: &str) -> CompiledProperty {
    CompiledProperty::compile(&cesmc::parse_property(text, model).unwrap()).unwrap()
}
