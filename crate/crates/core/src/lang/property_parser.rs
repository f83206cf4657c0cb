use super::lexer::{Cursor, Tok};
use super::ParseError;
use crate::model::Model;
use crate::property::{Atom, CmpOp, PropertyAst, Subject};

// Grammar, loosest first:
//   or    := and ('|' and)*
//   and   := until ('&' until)*
//   until := unary ('U' until)?
//   unary := ('!' | 'F' | 'X') unary | '(' or ')' | atom
//   atom  := 'true' | 'false' | label | ident cmp int
// `F`, `X` and `U` are reserved in properties.

fn is_kw(tok: &Tok, kw: &str) -> bool {
    matches!(tok, Tok::Ident(s) if s == kw)
}

struct Parser<'m> {
    cur: Cursor,
    model: &'m Model,
}

impl Parser<'_> {
    fn or(&mut self) -> Result<PropertyAst, ParseError> {
        let mut lhs = self.and()?;
        while self.cur.eat(&Tok::Pipe) {
            lhs = PropertyAst::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<PropertyAst, ParseError> {
        let mut lhs = self.until()?;
        while self.cur.eat(&Tok::Amp) {
            lhs = PropertyAst::And(Box::new(lhs), Box::new(self.until()?));
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<PropertyAst, ParseError> {
        let lhs = self.unary()?;
        if is_kw(self.cur.peek(), "U") {
            self.cur.bump();
            let rhs = self.until()?;
            return Ok(PropertyAst::Until(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<PropertyAst, ParseError> {
        let tok = self.cur.peek().clone();
        if tok == Tok::Bang {
            self.cur.bump();
            return Ok(PropertyAst::Not(Box::new(self.unary()?)));
        }
        if is_kw(&tok, "F") {
            self.cur.bump();
            return Ok(PropertyAst::Eventually(Box::new(self.unary()?)));
        }
        if is_kw(&tok, "X") {
            self.cur.bump();
            return Ok(PropertyAst::Next(Box::new(self.unary()?)));
        }
        if tok == Tok::LParen {
            self.cur.bump();
            let inner = self.or()?;
            self.cur.expect(&Tok::RParen)?;
            return Ok(inner);
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<PropertyAst, ParseError> {
        if is_kw(self.cur.peek(), "U") {
            return Err(self.cur.unexpected("formula"));
        }
        let (name, at) = self.cur.ident().map_err(|_| self.cur.unexpected("formula"))?;
        match name.as_str() {
            "true" => return Ok(PropertyAst::True),
            "false" => return Ok(PropertyAst::False),
            _ => {}
        }
        let subject = if let Some(v) = self.model.var_index(&name) {
            Subject::Var(v)
        } else if let Some(l) = self.model.label_index(&name) {
            Subject::Label(l)
        } else {
            return Err(ParseError::new(at, format!("unknown identifier '{name}'")));
        };
        let op = match self.cur.peek() {
            Tok::Lt => Some(CmpOp::Lt),
            Tok::Le => Some(CmpOp::Le),
            Tok::Eq => Some(CmpOp::Eq),
            Tok::Ne => Some(CmpOp::Ne),
            Tok::Ge => Some(CmpOp::Ge),
            Tok::Gt => Some(CmpOp::Gt),
            _ => None,
        };
        let cmp = match op {
            Some(op) => {
                self.cur.bump();
                Some((op, self.cur.signed_int()?))
            }
            None if matches!(subject, Subject::Var(_)) => {
                return Err(ParseError::new(at, format!("variable '{name}' must be compared with an integer")));
            }
            None => None,
        };
        Ok(PropertyAst::Atom(Atom { subject, cmp }))
    }
}

/// Parses a property and resolves its identifiers against `model`.
pub fn parse_property(text: &str, model: &Model) -> Result<PropertyAst, ParseError> {
    let mut p = Parser { cur: Cursor::new(text)?, model };
    let ast = p.or()?;
    if *p.cur.peek() != Tok::Eof {
        return Err(p.cur.unexpected("end of property"));
    }
    Ok(ast)
}
