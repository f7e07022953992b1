//! Line-oriented surface syntax shared by program, corpus and model files.
//!
//! Variables start with an uppercase letter or `_`, functors and constants
//! with a lowercase letter or a digit. A lone `_` is an anonymous variable.

use std::fmt;

use thiserror::Error;

use crate::term::{Term, Var};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {col}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Var(String),
    LParen,
    RParen,
    Comma,
    Eq,
    Period,
    Neck,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Var(s) => write!(f, "`{s}`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Eq => write!(f, "`=`"),
            Tok::Period => write!(f, "`.`"),
            Tok::Neck => write!(f, "`:-`"),
            Tok::End => write!(f, "end of line"),
        }
    }
}

/// A body literal as written, before atom normalization.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum RawLiteral {
    Atom(String, Vec<Term>),
    Eq(Term, Term),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RawClause {
    pub head: (String, Vec<Term>),
    pub body: Vec<RawLiteral>,
    pub line: usize,
}

pub(crate) struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
    end_col: usize,
    anon: usize,
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl Parser {
    pub(crate) fn new(text: &str, line: usize, col_offset: usize) -> Result<Parser, SyntaxError> {
        let mut toks = Vec::new();
        let chars: Vec<char> = text.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = col_offset + i + 1;
            if c == '%' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            let tok = match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                '=' => Tok::Eq,
                '.' => Tok::Period,
                ':' if chars.get(i + 1) == Some(&'-') => {
                    i += 1;
                    Tok::Neck
                }
                c if c.is_ascii_alphanumeric() || c == '_' => {
                    let start = i;
                    while i + 1 < chars.len() && is_ident_char(chars[i + 1]) {
                        i += 1;
                    }
                    let word: String = chars[start..=i].iter().collect();
                    if c.is_ascii_uppercase() || c == '_' {
                        Tok::Var(word)
                    } else {
                        Tok::Ident(word)
                    }
                }
                other => {
                    return Err(SyntaxError {
                        line,
                        col,
                        message: format!("unexpected character `{other}`"),
                    })
                }
            };
            toks.push((tok, col));
            i += 1;
        }
        Ok(Parser {
            toks,
            pos: 0,
            line,
            end_col: col_offset + chars.len() + 1,
            anon: 0,
        })
    }

    fn peek(&self) -> &Tok {
        self.toks.get(self.pos).map(|(t, _)| t).unwrap_or(&Tok::End)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|(_, c)| *c).unwrap_or(self.end_col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.peek().clone();
        if self.pos < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> SyntaxError {
        SyntaxError {
            line: self.line,
            col: self.col(),
            message: message.into(),
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), SyntaxError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected {tok}, found {}", self.peek())))
        }
    }

    pub(crate) fn at_end(&self) -> bool {
        *self.peek() == Tok::End
    }

    pub(crate) fn term(&mut self) -> Result<Term, SyntaxError> {
        match self.bump() {
            Tok::Var(name) if name == "_" => {
                self.anon += 1;
                Ok(Term::Var(Var::new(format!("$_{}_{}", self.line, self.anon))))
            }
            Tok::Var(name) => Ok(Term::Var(Var::new(name))),
            Tok::Ident(name) => {
                let args = self.args()?;
                Ok(Term::App(name, args))
            }
            other => {
                self.pos -= usize::from(other != Tok::End);
                Err(self.error(format!("expected a term, found {other}")))
            }
        }
    }

    fn args(&mut self) -> Result<Vec<Term>, SyntaxError> {
        let mut args = Vec::new();
        if *self.peek() == Tok::LParen {
            self.bump();
            loop {
                args.push(self.term()?);
                match self.bump() {
                    Tok::Comma => continue,
                    Tok::RParen => break,
                    other => {
                        self.pos -= usize::from(other != Tok::End);
                        return Err(self.error(format!("expected `,` or `)`, found {other}")));
                    }
                }
            }
        }
        Ok(args)
    }

    fn literal(&mut self) -> Result<RawLiteral, SyntaxError> {
        let col = self.col();
        let lhs = self.term()?;
        if *self.peek() == Tok::Eq {
            self.bump();
            let rhs = self.term()?;
            return Ok(RawLiteral::Eq(lhs, rhs));
        }
        match lhs {
            Term::App(name, args) => Ok(RawLiteral::Atom(name, args)),
            Term::Var(v) => Err(SyntaxError {
                line: self.line,
                col,
                message: format!("variable `{v}` cannot be used as an atom"),
            }),
        }
    }

    pub(crate) fn body(&mut self) -> Result<Vec<RawLiteral>, SyntaxError> {
        let mut lits = vec![self.literal()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            lits.push(self.literal()?);
        }
        Ok(lits)
    }

    pub(crate) fn clause(&mut self) -> Result<RawClause, SyntaxError> {
        let col = self.col();
        let head = match self.term()? {
            Term::App(name, args) => (name, args),
            Term::Var(v) => {
                return Err(SyntaxError {
                    line: self.line,
                    col,
                    message: format!("clause head `{v}` must be an atom"),
                })
            }
        };
        let body = if *self.peek() == Tok::Neck {
            self.bump();
            self.body()?
        } else {
            Vec::new()
        };
        self.expect(Tok::Period)?;
        if !self.at_end() {
            return Err(self.error(format!("expected end of clause, found {}", self.peek())));
        }
        Ok(RawClause {
            head,
            body,
            line: self.line,
        })
    }

    /// A query body with an optional trailing period.
    pub(crate) fn query(&mut self) -> Result<Vec<RawLiteral>, SyntaxError> {
        let body = self.body()?;
        if *self.peek() == Tok::Period {
            self.bump();
        }
        if !self.at_end() {
            return Err(self.error(format!("expected end of query, found {}", self.peek())));
        }
        Ok(body)
    }
}

/// True when the line holds nothing but whitespace and comments.
pub(crate) fn is_blank(line: &str) -> bool {
    let code = line.split('%').next().unwrap_or("");
    code.trim().is_empty()
}

pub fn parse_term(text: &str) -> Result<Term, SyntaxError> {
    let mut p = Parser::new(text, 1, 0)?;
    let t = p.term()?;
    if !p.at_end() {
        return Err(p.error(format!("unexpected {} after term", p.peek())));
    }
    Ok(t)
}
