use super::{Location, ParseError};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Int(i64),
    Real(f64),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Semi,
    Colon,
    Comma,
    DotDot,
    Prime,
    Arrow,
    Plus,
    Minus,
    Star,
    Slash,
    Bang,
    Amp,
    Pipe,
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Int(i) => format!("integer {i}"),
            Tok::Real(r) => format!("number {r}"),
            Tok::Eof => "end of input".into(),
            t => format!("'{}'", t.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::Semi => ";",
            Tok::Colon => ":",
            Tok::Comma => ",",
            Tok::DotDot => "..",
            Tok::Prime => "'",
            Tok::Arrow => "->",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Bang => "!",
            Tok::Amp => "&",
            Tok::Pipe => "|",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Eq => "=",
            Tok::Ne => "!=",
            Tok::Ge => ">=",
            Tok::Gt => ">",
            _ => "?",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Spanned {
    pub tok: Tok,
    pub at: Location,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let at = Location { line, col };
        let peek = chars.get(i + 1).copied();
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && peek == Some('/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let mut real = false;
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                real = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    real = true;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            if real {
                Tok::Real(text.parse().map_err(|_| ParseError::new(at, format!("bad number '{text}'")))?)
            } else {
                Tok::Int(
                    text.parse()
                        .map_err(|_| ParseError::new(at, format!("integer literal '{text}' out of range")))?,
                )
            }
        } else {
            let two = |a: char, b: char| c == a && peek == Some(b);
            let (tok, len) = if two('.', '.') {
                (Tok::DotDot, 2)
            } else if two('-', '>') {
                (Tok::Arrow, 2)
            } else if two('<', '=') {
                (Tok::Le, 2)
            } else if two('>', '=') {
                (Tok::Ge, 2)
            } else if two('!', '=') {
                (Tok::Ne, 2)
            } else {
                let t = match c {
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ';' => Tok::Semi,
                    ':' => Tok::Colon,
                    ',' => Tok::Comma,
                    '\'' => Tok::Prime,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    '!' => Tok::Bang,
                    '&' => Tok::Amp,
                    '|' => Tok::Pipe,
                    '<' => Tok::Lt,
                    '>' => Tok::Gt,
                    '=' => Tok::Eq,
                    other => return Err(ParseError::new(at, format!("unexpected character '{other}'"))),
                };
                (t, 1)
            };
            i += len;
            tok
        };
        col += i - start;
        out.push(Spanned { tok, at });
    }
    out.push(Spanned { tok: Tok::Eof, at: Location { line, col } });
    Ok(out)
}

/// Cursor over a token stream shared by both parsers.
pub(crate) struct Cursor {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Cursor {
    pub fn new(src: &str) -> Result<Self, ParseError> {
        Ok(Self { toks: tokenize(src)?, pos: 0 })
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    pub fn loc(&self) -> Location {
        self.toks[self.pos].at
    }

    pub fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, tok: &Tok) -> Result<Location, ParseError> {
        let at = self.loc();
        if self.eat(tok) {
            Ok(at)
        } else {
            Err(self.unexpected(&tok.describe()))
        }
    }

    pub fn ident(&mut self) -> Result<(String, Location), ParseError> {
        let at = self.loc();
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok((s, at))
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    /// Optionally signed integer literal.
    pub fn signed_int(&mut self) -> Result<i64, ParseError> {
        let neg = self.eat(&Tok::Minus);
        match *self.peek() {
            Tok::Int(i) => {
                self.bump();
                Ok(if neg { -i } else { i })
            }
            _ => Err(self.unexpected("integer")),
        }
    }

    pub fn unexpected(&self, wanted: &str) -> ParseError {
        ParseError::new(self.loc(), format!("expected {wanted}, found {}", self.peek().describe()))
    }
}
