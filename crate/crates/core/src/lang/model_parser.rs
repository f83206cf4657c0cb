use std::collections::HashSet;

use super::lexer::{Cursor, Tok};
use super::{Location, ParseError};
use crate::expr::{BinaryOp, Expr, Type, UnaryOp};
use crate::model::{Command, Label, Model, Update, VarDecl, DEFAULT_UPPER_BOUND};

struct Scope {
    vars: Vec<VarDecl>,
    labels: Vec<Label>,
}

impl Scope {
    fn resolve(&self, name: &str, at: Location) -> Result<Expr, ParseError> {
        if let Some(i) = self.vars.iter().position(|v| v.name == name) {
            return Ok(Expr::Var(i));
        }
        if let Some(l) = self.labels.iter().find(|l| l.name == name) {
            return Ok(l.expr.clone());
        }
        Err(ParseError::new(at, format!("undeclared identifier '{name}'")))
    }
}

/// Arithmetic/boolean expression parser, precedence climbing over
/// `| < & < ! < comparisons < + - < * /`.
fn expr(cur: &mut Cursor, scope: &Scope) -> Result<Expr, ParseError> {
    binary(cur, scope, 1)
}

fn binary_op(tok: &Tok) -> Option<BinaryOp> {
    Some(match tok {
        Tok::Pipe => BinaryOp::Or,
        Tok::Amp => BinaryOp::And,
        Tok::Lt => BinaryOp::Lt,
        Tok::Le => BinaryOp::Le,
        Tok::Eq => BinaryOp::Eq,
        Tok::Ne => BinaryOp::Ne,
        Tok::Ge => BinaryOp::Ge,
        Tok::Gt => BinaryOp::Gt,
        Tok::Plus => BinaryOp::Add,
        Tok::Minus => BinaryOp::Sub,
        Tok::Star => BinaryOp::Mul,
        Tok::Slash => BinaryOp::Div,
        _ => return None,
    })
}

fn binary(cur: &mut Cursor, scope: &Scope, min_prec: u8) -> Result<Expr, ParseError> {
    let mut lhs = unary(cur, scope, min_prec)?;
    let mut last_cmp = false;
    while let Some(op) = binary_op(cur.peek()) {
        let p = op.precedence();
        if p < min_prec {
            break;
        }
        let is_cmp = p == 4;
        if is_cmp && last_cmp {
            return Err(ParseError::new(cur.loc(), "comparisons do not chain; add parentheses"));
        }
        cur.bump();
        let rhs = binary(cur, scope, p + 1)?;
        lhs = Expr::binary(op, lhs, rhs);
        last_cmp = is_cmp;
    }
    Ok(lhs)
}

fn unary(cur: &mut Cursor, scope: &Scope, min_prec: u8) -> Result<Expr, ParseError> {
    match cur.peek() {
        // '!' binds looser than comparisons so that `!x = 0` reads `!(x = 0)`.
        Tok::Bang => {
            cur.bump();
            let operand = binary(cur, scope, min_prec.max(3))?;
            Ok(Expr::unary(UnaryOp::Not, operand))
        }
        Tok::Minus => {
            cur.bump();
            Ok(Expr::unary(UnaryOp::Neg, unary(cur, scope, 7)?))
        }
        _ => primary(cur, scope),
    }
}

fn primary(cur: &mut Cursor, scope: &Scope) -> Result<Expr, ParseError> {
    let at = cur.loc();
    match cur.peek().clone() {
        Tok::Int(i) => {
            cur.bump();
            Ok(Expr::Int(i))
        }
        Tok::Real(r) => {
            cur.bump();
            Ok(Expr::Real(r))
        }
        Tok::LParen => {
            cur.bump();
            let e = expr(cur, scope)?;
            cur.expect(&Tok::RParen)?;
            Ok(e)
        }
        Tok::Ident(name) => {
            cur.bump();
            match name.as_str() {
                "true" => Ok(Expr::Bool(true)),
                "false" => Ok(Expr::Bool(false)),
                _ => scope.resolve(&name, at),
            }
        }
        _ => Err(cur.unexpected("expression")),
    }
}

fn typed(e: Expr, want: &[Type], what: &str, at: Location) -> Result<Expr, ParseError> {
    let t = e.type_of().map_err(|err| ParseError::new(at, format!("{what}: {}", err.0)))?;
    if want.contains(&t) {
        Ok(e)
    } else {
        Err(ParseError::new(at, format!("{what} must be {}, found {t}", want[0])))
    }
}

const RESERVED: &[&str] = &["var", "label", "true", "false"];

fn declare(names: &mut HashSet<String>, name: &str, at: Location) -> Result<(), ParseError> {
    if RESERVED.contains(&name) {
        return Err(ParseError::new(at, format!("'{name}' is a reserved word")));
    }
    if !names.insert(name.to_string()) {
        return Err(ParseError::new(at, format!("duplicate name '{name}'")));
    }
    Ok(())
}

/// Parses a `.gcm` model. Identifiers must be declared before use; labels
/// used inside expressions are inlined.
pub fn parse_model(text: &str) -> Result<Model, ParseError> {
    let mut cur = Cursor::new(text)?;
    let mut scope = Scope { vars: Vec::new(), labels: Vec::new() };
    let mut commands: Vec<Command> = Vec::new();
    let mut names = HashSet::new();
    let mut command_names = HashSet::new();
    loop {
        match cur.peek().clone() {
            Tok::Eof => break,
            Tok::Ident(kw) if kw == "var" => {
                cur.bump();
                let (name, name_at) = cur.ident()?;
                declare(&mut names, &name, name_at)?;
                cur.expect(&Tok::Colon)?;
                let (mut lo, mut hi) = (0, DEFAULT_UPPER_BOUND);
                if cur.eat(&Tok::LBracket) {
                    lo = cur.signed_int()?;
                    cur.expect(&Tok::DotDot)?;
                    hi = cur.signed_int()?;
                    cur.expect(&Tok::RBracket)?;
                }
                if lo > hi {
                    return Err(ParseError::new(name_at, format!("empty range [{lo}..{hi}] for '{name}'")));
                }
                let init = match cur.peek() {
                    Tok::Ident(s) if s == "init" => {
                        cur.bump();
                        let init_at = cur.loc();
                        let v = cur.signed_int()?;
                        if v < lo || v > hi {
                            return Err(ParseError::new(init_at, format!("initial value {v} outside [{lo}..{hi}]")));
                        }
                        v
                    }
                    _ => lo,
                };
                cur.expect(&Tok::Semi)?;
                scope.vars.push(VarDecl { name, lo, hi, init });
            }
            Tok::Ident(kw) if kw == "label" => {
                cur.bump();
                let (name, name_at) = cur.ident()?;
                declare(&mut names, &name, name_at)?;
                cur.expect(&Tok::Eq)?;
                let e_at = cur.loc();
                let e = typed(expr(&mut cur, &scope)?, &[Type::Bool], "label", e_at)?;
                cur.expect(&Tok::Semi)?;
                scope.labels.push(Label { name, expr: e });
            }
            Tok::LBracket => {
                cur.bump();
                let (name, name_at) = cur.ident()?;
                if !command_names.insert(name.clone()) {
                    return Err(ParseError::new(name_at, format!("duplicate command name '{name}'")));
                }
                cur.expect(&Tok::RBracket)?;
                let g_at = cur.loc();
                let guard = typed(expr(&mut cur, &scope)?, &[Type::Bool], "guard", g_at)?;
                cur.expect(&Tok::Arrow)?;
                let r_at = cur.loc();
                let rate = typed(expr(&mut cur, &scope)?, &[Type::Real, Type::Int], "rate", r_at)?;
                cur.expect(&Tok::Colon)?;
                let mut updates: Vec<Update> = Vec::new();
                if matches!(cur.peek(), Tok::Ident(s) if s == "true") {
                    cur.bump();
                } else {
                    loop {
                        let (target, t_at) = cur.ident()?;
                        let var = scope
                            .vars
                            .iter()
                            .position(|v| v.name == target)
                            .ok_or_else(|| ParseError::new(t_at, format!("undeclared variable '{target}'")))?;
                        if updates.iter().any(|u| u.var == var) {
                            return Err(ParseError::new(t_at, format!("'{target}' assigned twice")));
                        }
                        cur.expect(&Tok::Prime)?;
                        cur.expect(&Tok::Eq)?;
                        let u_at = cur.loc();
                        let e = typed(expr(&mut cur, &scope)?, &[Type::Int], "update", u_at)?;
                        updates.push(Update { var, expr: e });
                        if !cur.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                cur.expect(&Tok::Semi)?;
                commands.push(Command { name, guard, rate, updates });
            }
            _ => return Err(cur.unexpected("'var', 'label' or '[' command")),
        }
    }
    let end = cur.loc();
    Model::new(scope.vars, commands, scope.labels).map_err(|e| ParseError::new(end, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::State;

    const T1: &str = "var x : [0..2] init 0;\n[a] x = 0 -> 1 : x'=1;\n[b] x = 0 -> 3 : x'=2;\n";

    #[test]
    fn parses_t1() {
        let m = parse_model(T1).unwrap();
        assert_eq!(m.n_commands(), 2);
        assert_eq!(m.variables().len(), 1);
        assert_eq!(m.evaluate_rates::<f64>(&State(vec![0])).unwrap(), vec![1.0, 3.0]);
    }

    #[test]
    fn precedence() {
        let m = parse_model("var x : [0..9] init 2;\n[a] !x = 1 & x > 0 | false -> 2 * x + 1 - 1 / 2 : x'=x-1;").unwrap();
        let c = &m.commands()[0];
        assert!(c.guard.eval_bool(&[2]).unwrap());
        assert!(!c.guard.eval_bool(&[1]).unwrap());
        assert_eq!(c.rate.eval_real(&[2]).unwrap(), 4.5);
    }

    #[test]
    fn default_bounds_and_labels_inline() {
        let m = parse_model("var n : init 3;\nlabel big = n >= 3;\n[dec] big -> 1.0 : n'=n-1;").unwrap();
        assert_eq!(m.variables()[0].hi, DEFAULT_UPPER_BOUND);
        assert_eq!(m.commands()[0].guard, m.labels()[0].expr);
    }

    #[test]
    fn syntax_errors_have_locations() {
        let err = parse_model("var x : [0..2] init 0;\n[a] x = 0 -> 1 x'=1;").unwrap_err();
        assert_eq!(err.location, Location { line: 2, col: 16 });
        assert!(err.message.contains("':'"), "{err}");
    }

    #[test]
    fn semantic_errors() {
        let e = parse_model("var x : [0..2] init 0;\n[a] y = 0 -> 1 : x'=1;").unwrap_err();
        assert!(e.message.contains("undeclared"), "{e}");
        assert_eq!(e.location.line, 2);
        let e = parse_model("var x : [0..2] init 0;\n[a] x -> 1 : x'=1;").unwrap_err();
        assert!(e.message.contains("guard must be bool"), "{e}");
        let e = parse_model("var x : [0..2] init 0;\n[a] true -> 1 : x'=1;\n[a] true -> 1 : x'=0;").unwrap_err();
        assert!(e.message.contains("duplicate command"), "{e}");
        let e = parse_model("var x : [0..2] init 0;\nlabel x = true;").unwrap_err();
        assert!(e.message.contains("duplicate name"), "{e}");
        let e = parse_model("var x : [0..2] init 0;\n[a] true -> 1 : x'=x/2;").unwrap_err();
        assert!(e.message.contains("update must be int"), "{e}");
        let e = parse_model("var x : [0..2] init 5;").unwrap_err();
        assert!(e.message.contains("outside"), "{e}");
        let e = parse_model("var x : [0..2] init 0;").unwrap_err();
        assert!(e.message.contains("no commands"), "{e}");
        assert!(parse_model("var x : [0..2] init 0;\n[a] x < 1 < 2 -> 1 : x'=1;").is_err());
    }
}
