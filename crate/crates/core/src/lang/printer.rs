use std::fmt::Write;

use crate::model::Model;

/// Renders a model in `.gcm` syntax. Labels referenced from other
/// expressions were inlined at parse time, so the output is self-contained
/// and re-parses to a structurally identical model.
pub fn print_model(model: &Model) -> String {
    let names = model.var_names();
    let mut out = String::new();
    for v in model.variables() {
        writeln!(out, "var {} : [{}..{}] init {};", v.name, v.lo, v.hi, v.init).unwrap();
    }
    for l in model.labels() {
        writeln!(out, "label {} = {};", l.name, l.expr.display(names)).unwrap();
    }
    for c in model.commands() {
        write!(out, "[{}] {} -> {} : ", c.name, c.guard.display(names), c.rate.display(names)).unwrap();
        if c.updates.is_empty() {
            out.push_str("true");
        }
        for (i, u) in c.updates.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write!(out, "{}'={}", names[u.var], u.expr.display(names)).unwrap();
        }
        out.push_str(";\n");
    }
    out
}
