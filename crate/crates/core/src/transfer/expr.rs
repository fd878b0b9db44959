//! Arithmetic expressions over transfer-function arguments.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary ('*' unary)*
//! unary := '-' NUMBER | '-' unary | atom
//! atom  := NUMBER | 'x' INDEX | 'neg' '(' expr ')'
//!        | ('min' | 'max') '(' expr (',' expr)+ ')' | '(' expr ')'
//! ```
//!
//! Arguments are 1-based (`x1`, `x2`, ...). `min`/`max` with more than two
//! operands fold left. A minus sign directly before a number is part of the
//! literal, so `-3` is the constant -3 while `-x1` is a negation. `Display`
//! prints a fully parenthesized form that parses back to an identical tree.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based argument index.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Min(a, b) => a.eval(x).min(b.eval(x)),
            Expr::Max(a, b) => a.eval(x).max(b.eval(x)),
        }
    }

    /// Number of arguments referenced: one past the largest variable index.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(a) => a.arity(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Min(a, b) | Expr::Max(a, b) => {
                a.arity().max(b.arity())
            }
        }
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            Expr::Neg(a) => a.as_const().map(|c| -c),
            _ => None,
        }
    }

    /// A sup-norm Lipschitz constant derived structurally, or `None` when the
    /// expression multiplies two non-constant terms.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match self {
            Expr::Const(_) => Some(0.0),
            Expr::Var(_) => Some(1.0),
            Expr::Neg(a) => a.lipschitz_bound(),
            Expr::Add(a, b) | Expr::Sub(a, b) => Some(a.lipschitz_bound()? + b.lipschitz_bound()?),
            Expr::Min(a, b) | Expr::Max(a, b) => Some(a.lipschitz_bound()?.max(b.lipschitz_bound()?)),
            Expr::Mul(a, b) => match (a.as_const(), b.as_const()) {
                (Some(_), Some(_)) => Some(0.0),
                (Some(c), None) => Some(c.abs() * b.lipschitz_bound()?),
                (None, Some(c)) => Some(c.abs() * a.lipschitz_bound()?),
                (None, None) => None,
            },
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => write!(f, "neg({a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Expr::parse(s)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Parse(format!("expression: {msg} at byte {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while self.eat(b'*') {
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            if matches!(self.src.get(self.pos), Some(c) if c.is_ascii_digit() || *c == b'.') {
                return Ok(Expr::Const(-self.number()?));
            }
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                i = j;
                while i < s.len() && s[i].is_ascii_digit() {
                    i += 1;
                }
            }
        }
        let text = std::str::from_utf8(&s[start..i]).expect("ascii slice");
        let v: f64 = text.parse().map_err(|_| self.error(&format!("bad number '{text}'")))?;
        if !v.is_finite() {
            return Err(self.error("literal overflows"));
        }
        self.pos = i;
        Ok(v)
    }

    fn ident(&mut self) -> &str {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice")
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Expr::Const(self.number()?)),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let at = self.pos;
                let id = self.ident().to_string();
                match id.as_str() {
                    "neg" => {
                        self.expect(b'(')?;
                        let e = self.expr()?;
                        self.expect(b')')?;
                        Ok(Expr::Neg(Box::new(e)))
                    }
                    "min" | "max" => {
                        self.expect(b'(')?;
                        let mut acc = self.expr()?;
                        let mut n = 1;
                        while self.eat(b',') {
                            let rhs = Box::new(self.expr()?);
                            acc = if id == "min" {
                                Expr::Min(Box::new(acc), rhs)
                            } else {
                                Expr::Max(Box::new(acc), rhs)
                            };
                            n += 1;
                        }
                        self.expect(b')')?;
                        if n < 2 {
                            return Err(self.error(&format!("{id} needs at least two operands")));
                        }
                        Ok(acc)
                    }
                    _ => {
                        let idx = id
                            .strip_prefix('x')
                            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
                            .and_then(|d| d.parse::<usize>().ok())
                            .filter(|&k| k >= 1);
                        match idx {
                            Some(k) => Ok(Expr::Var(k - 1)),
                            None => {
                                self.pos = at;
                                Err(self.error(&format!("unknown identifier '{id}'")))
                            }
                        }
                    }
                }
            }
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_associativity() {
        let e = Expr::parse("1 - 2 - 3 * x1").unwrap();
        assert_eq!(e.eval(&[2.0]), 1.0 - 2.0 - 6.0);
        let e = Expr::parse("max(x1, x2, x3) + min(x1,x2)").unwrap();
        assert_eq!(e.eval(&[1.0, 5.0, 3.0]), 6.0);
        assert_eq!(e.arity(), 3);
    }

    #[test]
    fn negative_literals_and_negation() {
        assert_eq!(Expr::parse("-3").unwrap(), Expr::Const(-3.0));
        assert_eq!(Expr::parse("-x1").unwrap(), Expr::Neg(Box::new(Expr::Var(0))));
        assert_eq!(Expr::parse("x1 - -2.5e-1").unwrap().eval(&[1.0]), 1.25);
        assert_eq!(Expr::parse("neg(x2)").unwrap().eval(&[0.0, 4.0]), -4.0);
    }

    #[test]
    fn display_round_trips() {
        for text in [
            "max(x1, x2)",
            "0.5 * x1 + 0.5 * x2",
            "neg(-3) - x1 * -0.1",
            "min(x1, max(x2, -1e-7))",
            "-(x1 + 2)",
            "x1 * x1 + 1",
        ] {
            let e = Expr::parse(text).unwrap();
            let back = Expr::parse(&e.to_string()).unwrap();
            assert_eq!(e, back, "{text} -> {e}");
        }
    }

    #[test]
    fn rejects_garbage() {
        for text in ["", "x0", "y1", "max(x1)", "1 +", "(x1", "x1 x2", "1e400", "sin(x1)"] {
            assert!(matches!(Expr::parse(text), Err(Error::Parse(_))), "{text}");
        }
    }

    #[test]
    fn lipschitz_structure() {
        let l = |t: &str| Expr::parse(t).unwrap().lipschitz_bound();
        assert_eq!(l("max(x1, x2)"), Some(1.0));
        assert_eq!(l("0.5 * x1 + 0.25 * x2"), Some(0.75));
        assert_eq!(l("-2 * neg(x1) - 3"), Some(2.0));
        assert_eq!(l("x1 * x1"), None);
    }
}
