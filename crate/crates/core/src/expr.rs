//! Integer/real/boolean expressions over model variables.
//!
//! Expressions are evaluated dynamically into a [`Value`]; integer arithmetic
//! is checked and promotes to real only through `/` or a decimal literal.

use std::fmt;

use thiserror::Error;

/// Index of a declared variable in [`crate::Model::variables`].
pub type VarId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Eq => "=",
            BinaryOp::Ne => "!=",
            BinaryOp::Ge => ">=",
            BinaryOp::Gt => ">",
            BinaryOp::And => "&",
            BinaryOp::Or => "|",
        }
    }

    /// Binding strength used by the parser and the pretty printer.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Ge | BinaryOp::Gt => 4,
            BinaryOp::Add | BinaryOp::Sub => 5,
            BinaryOp::Mul | BinaryOp::Div => 6,
        }
    }

    fn is_comparison(self) -> bool {
        self.precedence() == 4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Type {
    Int,
    Real,
    Bool,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Type::Int => "int",
            Type::Real => "real",
            Type::Bool => "bool",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Real(f64),
    Bool(bool),
    Var(VarId),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
    #[error("non-finite result")]
    NonFinite,
    #[error("type mismatch: expected {expected}")]
    Type { expected: Type },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("type error: {0}")]
pub struct TypeError(pub String);

impl Value {
    fn as_f64(self) -> Result<f64, EvalError> {
        match self {
            Value::Int(i) => Ok(i as f64),
            Value::Real(r) => Ok(r),
            Value::Bool(_) => Err(EvalError::Type { expected: Type::Real }),
        }
    }
}

impl Expr {
    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn unary(op: UnaryOp, operand: Expr) -> Expr {
        Expr::Unary(op, Box::new(operand))
    }

    /// Static type of the expression, or a description of the first mismatch.
    pub fn type_of(&self) -> Result<Type, TypeError> {
        match self {
            Expr::Int(_) | Expr::Var(_) => Ok(Type::Int),
            Expr::Real(_) => Ok(Type::Real),
            Expr::Bool(_) => Ok(Type::Bool),
            Expr::Unary(UnaryOp::Neg, e) => match e.type_of()? {
                Type::Bool => Err(TypeError("unary '-' applied to a boolean".into())),
                t => Ok(t),
            },
            Expr::Unary(UnaryOp::Not, e) => match e.type_of()? {
                Type::Bool => Ok(Type::Bool),
                t => Err(TypeError(format!("'!' applied to {t}"))),
            },
            Expr::Binary(op, l, r) => {
                let (lt, rt) = (l.type_of()?, r.type_of()?);
                match op {
                    BinaryOp::And | BinaryOp::Or => {
                        if lt == Type::Bool && rt == Type::Bool {
                            Ok(Type::Bool)
                        } else {
                            Err(TypeError(format!("'{}' needs boolean operands, got {lt} and {rt}", op.symbol())))
                        }
                    }
                    _ if lt == Type::Bool || rt == Type::Bool => {
                        if matches!(op, BinaryOp::Eq | BinaryOp::Ne) && lt == rt {
                            Ok(Type::Bool)
                        } else {
                            Err(TypeError(format!("'{}' needs numeric operands, got {lt} and {rt}", op.symbol())))
                        }
                    }
                    op if op.is_comparison() => Ok(Type::Bool),
                    BinaryOp::Div => Ok(Type::Real),
                    _ if lt == Type::Int && rt == Type::Int => Ok(Type::Int),
                    _ => Ok(Type::Real),
                }
            }
        }
    }

    pub fn eval(&self, vars: &[i64]) -> Result<Value, EvalError> {
        match self {
            Expr::Int(i) => Ok(Value::Int(*i)),
            Expr::Real(r) => Ok(Value::Real(*r)),
            Expr::Bool(b) => Ok(Value::Bool(*b)),
            Expr::Var(v) => Ok(Value::Int(vars[*v])),
            Expr::Unary(UnaryOp::Neg, e) => match e.eval(vars)? {
                Value::Int(i) => i.checked_neg().map(Value::Int).ok_or(EvalError::Overflow),
                Value::Real(r) => Ok(Value::Real(-r)),
                Value::Bool(_) => Err(EvalError::Type { expected: Type::Real }),
            },
            Expr::Unary(UnaryOp::Not, e) => Ok(Value::Bool(!e.eval_bool(vars)?)),
            Expr::Binary(BinaryOp::And, l, r) => Ok(Value::Bool(l.eval_bool(vars)? && r.eval_bool(vars)?)),
            Expr::Binary(BinaryOp::Or, l, r) => Ok(Value::Bool(l.eval_bool(vars)? || r.eval_bool(vars)?)),
            Expr::Binary(op, l, r) => binary(*op, l.eval(vars)?, r.eval(vars)?),
        }
    }

    pub fn eval_bool(&self, vars: &[i64]) -> Result<bool, EvalError> {
        match self.eval(vars)? {
            Value::Bool(b) => Ok(b),
            _ => Err(EvalError::Type { expected: Type::Bool }),
        }
    }

    pub fn eval_int(&self, vars: &[i64]) -> Result<i64, EvalError> {
        match self.eval(vars)? {
            Value::Int(i) => Ok(i),
            _ => Err(EvalError::Type { expected: Type::Int }),
        }
    }

    /// Numeric value in double precision; errors on NaN or infinity.
    pub fn eval_real(&self, vars: &[i64]) -> Result<f64, EvalError> {
        let x = self.eval(vars)?.as_f64()?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    /// Renders the expression with variable names, parenthesizing only where
    /// precedence requires it.
    pub fn display<'a>(&'a self, names: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, names }
    }
}

fn binary(op: BinaryOp, a: Value, b: Value) -> Result<Value, EvalError> {
    use BinaryOp::*;
    if let (Value::Bool(x), Value::Bool(y)) = (a, b) {
        return match op {
            Eq => Ok(Value::Bool(x == y)),
            Ne => Ok(Value::Bool(x != y)),
            _ => Err(EvalError::Type { expected: Type::Real }),
        };
    }
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        let int = |r: Option<i64>| r.map(Value::Int).ok_or(EvalError::Overflow);
        return match op {
            Add => int(x.checked_add(y)),
            Sub => int(x.checked_sub(y)),
            Mul => int(x.checked_mul(y)),
            Div if y == 0 => Err(EvalError::DivisionByZero),
            Div => Ok(Value::Real(x as f64 / y as f64)),
            Lt => Ok(Value::Bool(x < y)),
            Le => Ok(Value::Bool(x <= y)),
            Eq => Ok(Value::Bool(x == y)),
            Ne => Ok(Value::Bool(x != y)),
            Ge => Ok(Value::Bool(x >= y)),
            Gt => Ok(Value::Bool(x > y)),
            And | Or => Err(EvalError::Type { expected: Type::Bool }),
        };
    }
    let (x, y) = (a.as_f64()?, b.as_f64()?);
    let real = |r: f64| if r.is_finite() { Ok(Value::Real(r)) } else { Err(EvalError::NonFinite) };
    match op {
        Add => real(x + y),
        Sub => real(x - y),
        Mul => real(x * y),
        Div if y == 0.0 => Err(EvalError::DivisionByZero),
        Div => real(x / y),
        Lt => Ok(Value::Bool(x < y)),
        Le => Ok(Value::Bool(x <= y)),
        Eq => Ok(Value::Bool(x == y)),
        Ne => Ok(Value::Bool(x != y)),
        Ge => Ok(Value::Bool(x >= y)),
        Gt => Ok(Value::Bool(x > y)),
        And | Or => Err(EvalError::Type { expected: Type::Bool }),
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl ExprDisplay<'_> {
    fn write(&self, f: &mut fmt::Formatter<'_>, e: &Expr, ctx: u8) -> fmt::Result {
        match e {
            Expr::Int(i) if *i < 0 => write!(f, "({i})"),
            Expr::Int(i) => write!(f, "{i}"),
            // Debug keeps a '.' or exponent so the literal re-parses as real.
            Expr::Real(r) if *r < 0.0 => write!(f, "({r:?})"),
            Expr::Real(r) => write!(f, "{r:?}"),
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Var(v) => f.write_str(&self.names[*v]),
            Expr::Unary(op, inner) => {
                f.write_str(if *op == UnaryOp::Neg { "-" } else { "!" })?;
                self.write(f, inner, 7)
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                let paren = p <= ctx;
                if paren {
                    f.write_str("(")?;
                }
                // Left-associative: the left child may share our precedence,
                // except for comparisons which do not chain.
                let left_ctx = if op.is_comparison() { p } else { p - 1 };
                self.write(f, l, left_ctx)?;
                write!(f, " {} ", op.symbol())?;
                self.write(f, r, p)?;
                if paren {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, self.expr, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(i: usize) -> Expr {
        Expr::Var(i)
    }

    #[test]
    fn integer_arithmetic_is_checked() {
        let e = Expr::binary(BinaryOp::Mul, v(0), Expr::Int(i64::MAX));
        assert_eq!(e.eval(&[2]), Err(EvalError::Overflow));
        assert_eq!(e.eval(&[1]), Ok(Value::Int(i64::MAX)));
    }

    #[test]
    fn division_promotes_and_rejects_zero() {
        let e = Expr::binary(BinaryOp::Div, Expr::Int(3), v(0));
        assert_eq!(e.type_of().unwrap(), Type::Real);
        assert_eq!(e.eval(&[2]), Ok(Value::Real(1.5)));
        assert_eq!(e.eval(&[0]), Err(EvalError::DivisionByZero));
    }

    #[test]
    fn mass_action_rate() {
        let e = Expr::binary(
            BinaryOp::Mul,
            Expr::binary(BinaryOp::Mul, Expr::Real(1.0), v(0)),
            v(1),
        );
        assert_eq!(e.eval_real(&[1000, 1000]), Ok(1.0e6));
    }

    #[test]
    fn type_errors() {
        let e = Expr::binary(BinaryOp::And, v(0), Expr::Bool(true));
        assert!(e.type_of().is_err());
        let e = Expr::unary(UnaryOp::Not, Expr::Int(1));
        assert!(e.type_of().is_err());
        let e = Expr::binary(BinaryOp::Lt, v(0), Expr::Real(0.5));
        assert_eq!(e.type_of().unwrap(), Type::Bool);
    }

    #[test]
    fn display_minimal_parentheses() {
        let names = vec!["a".to_string(), "b".to_string()];
        let e = Expr::binary(
            BinaryOp::Mul,
            Expr::binary(BinaryOp::Add, v(0), v(1)),
            Expr::binary(BinaryOp::Sub, v(0), Expr::binary(BinaryOp::Sub, v(1), Expr::Int(1))),
        );
        assert_eq!(e.display(&names).to_string(), "(a + b) * (a - (b - 1))");
        let e = Expr::binary(BinaryOp::Sub, Expr::binary(BinaryOp::Sub, v(0), v(1)), Expr::Real(2.0));
        assert_eq!(e.display(&names).to_string(), "a - b - 2.0");
    }
}
