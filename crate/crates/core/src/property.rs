//! Temporal properties over finite traces.

use std::fmt;

use crate::expr::VarId;
use crate::model::{Model, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn apply(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Ge => a >= b,
            CmpOp::Gt => a > b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subject {
    Var(VarId),
    /// A label; inside a comparison it reads as 1 when it holds, else 0.
    Label(usize),
}

/// `subject op value`, or a bare label when `cmp` is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    pub subject: Subject,
    pub cmp: Option<(CmpOp, i64)>,
}

impl Atom {
    pub fn holds(&self, model: &Model, state: &State) -> Result<bool, crate::model::ModelError> {
        let value = match self.subject {
            Subject::Var(v) => state.0[v],
            Subject::Label(l) => {
                let b = model.label_holds(l, state)?;
                if self.cmp.is_none() {
                    return Ok(b);
                }
                i64::from(b)
            }
        };
        Ok(match self.cmp {
            Some((op, rhs)) => op.apply(value, rhs),
            None => value != 0,
        })
    }
}

/// Parsed temporal formula. `Eventually(φ)` is kept for printing and lowered
/// to `Until(True, φ)` when the formula is compiled for monitoring.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PropertyAst {
    True,
    False,
    Atom(Atom),
    Not(Box<PropertyAst>),
    And(Box<PropertyAst>, Box<PropertyAst>),
    Or(Box<PropertyAst>, Box<PropertyAst>),
    Next(Box<PropertyAst>),
    Until(Box<PropertyAst>, Box<PropertyAst>),
    Eventually(Box<PropertyAst>),
}

impl PropertyAst {
    /// The same formula with every `F φ` replaced by `true U φ`.
    pub fn lower(&self) -> PropertyAst {
        use PropertyAst::*;
        match self {
            True | False | Atom(_) => self.clone(),
            Not(a) => Not(Box::new(a.lower())),
            And(a, b) => And(Box::new(a.lower()), Box::new(b.lower())),
            Or(a, b) => Or(Box::new(a.lower()), Box::new(b.lower())),
            Next(a) => Next(Box::new(a.lower())),
            Until(a, b) => Until(Box::new(a.lower()), Box::new(b.lower())),
            Eventually(a) => Until(Box::new(True), Box::new(a.lower())),
        }
    }

    pub fn atoms(&self, out: &mut Vec<Atom>) {
        use PropertyAst::*;
        match self {
            True | False => {}
            Atom(a) => {
                if !out.contains(a) {
                    out.push(*a);
                }
            }
            Not(a) | Next(a) | Eventually(a) => a.atoms(out),
            And(a, b) | Or(a, b) | Until(a, b) => {
                a.atoms(out);
                b.atoms(out);
            }
        }
    }

    pub fn display<'a>(&'a self, model: &'a Model) -> PropertyDisplay<'a> {
        PropertyDisplay { ast: self, model }
    }
}

pub struct PropertyDisplay<'a> {
    ast: &'a PropertyAst,
    model: &'a Model,
}

impl PropertyDisplay<'_> {
    fn atom(&self, f: &mut fmt::Formatter<'_>, a: &Atom) -> fmt::Result {
        let name = match a.subject {
            Subject::Var(v) => &self.model.variables()[v].name,
            Subject::Label(l) => &self.model.labels()[l].name,
        };
        match a.cmp {
            Some((op, rhs)) => write!(f, "{name} {} {rhs}", op.symbol()),
            None => f.write_str(name),
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, ast: &PropertyAst) -> fmt::Result {
        use PropertyAst::*;
        match ast {
            True => f.write_str("true"),
            False => f.write_str("false"),
            Atom(a) => {
                if a.cmp.is_some() {
                    f.write_str("(")?;
                    self.atom(f, a)?;
                    f.write_str(")")
                } else {
                    self.atom(f, a)
                }
            }
            Not(a) => {
                f.write_str("!")?;
                self.write(f, a)
            }
            Next(a) => {
                f.write_str("X ")?;
                self.write(f, a)
            }
            Eventually(a) => {
                f.write_str("F ")?;
                self.write(f, a)
            }
            And(a, b) | Or(a, b) | Until(a, b) => {
                let op = match ast {
                    And(..) => "&",
                    Or(..) => "|",
                    _ => "U",
                };
                f.write_str("(")?;
                self.write(f, a)?;
                write!(f, " {op} ")?;
                self.write(f, b)?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for PropertyDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, self.ast)
    }
}
