//! Concrete syntax: the `.gcm` model format and the property language.
//!
//! Model files hold one statement per line:
//!
//! ```text
//! var x : [0..2] init 0;
//! label done = x > 0;
//! [a] x = 0 -> 1 : x'=1;
//! [b] x = 0 -> 3 : x'=2;
//! ```
//!
//! Properties use `F`, `X`, `U`, `!`, `&`, `|` and atoms `ident cmp int` or
//! bare labels, e.g. `X ((! init) U failure)`.

mod lexer;
mod model_parser;
mod printer;
mod property_parser;

use std::fmt;

use thiserror::Error;

pub use model_parser::parse_model;
pub use printer::print_model;
pub use property_parser::parse_property;

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{location}: {message}")]
pub struct ParseError {
    pub location: Location,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(location: Location, message: impl Into<String>) -> Self {
        Self { location, message: message.into() }
    }
}
