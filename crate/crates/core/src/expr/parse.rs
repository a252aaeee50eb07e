//! Recursive-descent parser for the expression language.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := primary ('^' integer)?
//! primary:= number | ident | fn '(' expr ')' | '(' expr ')'
//! ```
//!
//! Unary minus binds looser than `^`, so `-x1^2` is `-(x1^2)`.

use super::{Expr, Func, Var, VarContext};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownIdentifier(String),
    Arity { func: String, expected: usize, found: usize },
}

/// Parse failure with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} at position {position}", describe(.kind))]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub position: usize,
}

fn describe(kind: &ParseErrorKind) -> String {
    match kind {
        ParseErrorKind::Syntax(msg) => format!("syntax error: {msg}"),
        ParseErrorKind::UnknownIdentifier(id) => format!("unknown identifier `{id}`"),
        ParseErrorKind::Arity { func, expected, found } => {
            format!("`{func}` takes {expected} argument(s), found {found}")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num { value: f64, integral: bool },
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lx.next()?;
            let end = tok == Tok::End;
            out.push((tok, at));
            if end {
                return Ok(out);
            }
        }
    }

    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        let single = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(t) = single {
            self.pos += 1;
            return Ok((t, start));
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number(start);
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while self.pos < bytes.len()
                && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_')
            {
                self.pos += 1;
            }
            return Ok((Tok::Ident(self.src[start..self.pos].to_string()), start));
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(ParseError {
            kind: ParseErrorKind::Syntax(format!("unexpected character `{ch}`")),
            position: start,
        })
    }

    fn number(&mut self, start: usize) -> Result<(Tok, usize), ParseError> {
        let bytes = self.src.as_bytes();
        let digits = |pos: &mut usize| {
            let s = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
            *pos - s
        };
        let mut integral = true;
        let mut count = digits(&mut self.pos);
        if bytes.get(self.pos) == Some(&b'.') {
            integral = false;
            self.pos += 1;
            count += digits(&mut self.pos);
        }
        if count == 0 {
            return Err(ParseError {
                kind: ParseErrorKind::Syntax("malformed number".into()),
                position: start,
            });
        }
        if matches!(bytes.get(self.pos), Some(b'e' | b'E')) {
            let mut p = self.pos + 1;
            if matches!(bytes.get(p), Some(b'+' | b'-')) {
                p += 1;
            }
            if digits(&mut p) == 0 {
                return Err(ParseError {
                    kind: ParseErrorKind::Syntax("malformed exponent in number".into()),
                    position: start,
                });
            }
            integral = false;
            self.pos = p;
        }
        let text = &self.src[start..self.pos];
        let value: f64 = text.parse().map_err(|_| ParseError {
            kind: ParseErrorKind::Syntax(format!("malformed number `{text}`")),
            position: start,
        })?;
        if !value.is_finite() {
            return Err(ParseError {
                kind: ParseErrorKind::Syntax(format!("number `{text}` is out of range")),
                position: start,
            });
        }
        Ok((Tok::Num { value, integral }, start))
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    ctx: VarContext,
    src: &'a str,
}

/// Parses `source` into an expression over the variables declared in `ctx`.
pub fn parse_expr(source: &str, ctx: VarContext) -> Result<Expr, ParseError> {
    let toks = Lexer::tokens(source)?;
    let mut p = Parser { toks, at: 0, ctx, src: source };
    if p.peek() == &Tok::End {
        return Err(p.error("empty expression"));
    }
    let e = p.expr()?;
    if p.peek() != &Tok::End {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error(&self, msg: &str) -> ParseError {
        let found = match self.peek() {
            Tok::End => "end of input".to_string(),
            _ => {
                let p = self.pos();
                let ch = self.src[p..].chars().next().unwrap_or('?');
                format!("`{ch}`")
            }
        };
        ParseError { kind: ParseErrorKind::Syntax(format!("{msg} (found {found})")), position: self.pos() }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    terms.push(self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    terms.push(Expr::Neg(Box::new(self.term()?)));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Expr::Sum(terms) })
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        fn collapse(mut factors: Vec<Expr>) -> Expr {
            if factors.len() == 1 {
                factors.pop().unwrap()
            } else {
                Expr::Product(factors)
            }
        }
        let mut factors = vec![self.unary()?];
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    factors.push(self.unary()?);
                }
                Tok::Slash => {
                    self.bump();
                    let rhs = self.unary()?;
                    let lhs = collapse(std::mem::take(&mut factors));
                    factors.push(Expr::Quotient(Box::new(lhs), Box::new(rhs)));
                }
                _ => break,
            }
        }
        Ok(collapse(factors))
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let negative = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let pos = self.pos();
        match self.bump() {
            Tok::Num { value, integral: true } if value <= i32::MAX as f64 => {
                let k = value as i32;
                Ok(Expr::Pow(Box::new(base), if negative { -k } else { k }))
            }
            Tok::Num { .. } => Err(ParseError {
                kind: ParseErrorKind::Syntax("exponent must be an integer literal".into()),
                position: pos,
            }),
            _ => {
                self.at = self.at.saturating_sub(1);
                Err(self.error("expected integer exponent after `^`"))
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Num { value, .. } => {
                self.bump();
                Ok(Expr::Const(value))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if let Some(f) = Func::from_name(&name) {
                    return self.call(f, &name, pos);
                }
                let var = resolve_var(&name).filter(|v| self.ctx.contains(*v));
                match var {
                    Some(v) => Ok(Expr::Var(v)),
                    None => Err(ParseError { kind: ParseErrorKind::UnknownIdentifier(name), position: pos }),
                }
            }
            _ => Err(self.error("expected a number, variable, function or `(`")),
        }
    }

    fn call(&mut self, f: Func, name: &str, pos: usize) -> Result<Expr, ParseError> {
        if *self.peek() != Tok::LParen {
            return Err(ParseError {
                kind: ParseErrorKind::Arity { func: name.to_string(), expected: 1, found: 0 },
                position: pos,
            });
        }
        self.bump();
        let mut args = Vec::new();
        if *self.peek() != Tok::RParen {
            args.push(self.expr()?);
            while *self.peek() == Tok::Comma {
                self.bump();
                args.push(self.expr()?);
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        if args.len() != 1 {
            return Err(ParseError {
                kind: ParseErrorKind::Arity { func: name.to_string(), expected: 1, found: args.len() },
                position: pos,
            });
        }
        Ok(Expr::Call(f, Box::new(args.pop().unwrap())))
    }
}

fn resolve_var(name: &str) -> Option<Var> {
    let (class, digits) = match name.as_bytes().first()? {
        b'x' => (Var::slow as fn(usize) -> Var, &name[1..]),
        b'y' => (Var::fast as fn(usize) -> Var, &name[1..]),
        _ => return None,
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    let k: usize = digits.parse().ok()?;
    Some(class(k - 1))
}
