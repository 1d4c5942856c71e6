//! Polynomial expressions in `xi1..xi{n-1}`, `xin`, `mu` with complex literals.
//!
//! Grammar:
//! ```text
//! expr   = term (('+' | '-') term)*
//! term   = unary (('*' | '/') unary)*
//! unary  = ('+' | '-') unary | power
//! power  = atom ('^' integer)?
//! atom   = number | number 'i' | 'i' | name | func '(' expr ')' | '(' expr ')'
//! func   = abs | sqrt
//! ```
//! `abs` and `sqrt` are there for degree-one symbols such as `sqrt(xi1^2 + xi2^2)`.

use anyhow::{anyhow, bail, Result};
use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(Complex64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Abs(Box<Expr>),
    Sqrt(Box<Expr>),
}

/// Variable slots: `xi1..xi{n-1}` are `0..n-1`, `xin` is `n-1`, `mu` is `n`.
#[derive(Debug, Clone, Copy)]
pub struct Vars {
    pub n: usize,
}

impl Vars {
    fn lookup(&self, name: &str) -> Option<usize> {
        if name == "mu" {
            return Some(self.n);
        }
        if name == "xin" {
            return Some(self.n - 1);
        }
        let k: usize = name.strip_prefix("xi")?.parse().ok()?;
        (k >= 1 && k <= self.n).then(|| k - 1)
    }

    pub fn name(&self, slot: usize) -> String {
        if slot == self.n {
            "mu".into()
        } else if slot == self.n - 1 {
            "xin".into()
        } else {
            format!("xi{}", slot + 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Imag(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        if ch.is_whitespace() {
            i += 1;
        } else if ch.is_ascii_digit() || ch == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text.parse().map_err(|_| anyhow!("bad number `{text}`"))?;
            let imag = i < chars.len() && chars[i] == 'i' && !chars.get(i + 1).is_some_and(|c| c.is_alphanumeric());
            if imag {
                i += 1;
                out.push(Tok::Imag(v));
            } else {
                out.push(Tok::Num(v));
            }
        } else if ch.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(ch) {
            out.push(Tok::Op(ch));
            i += 1;
        } else {
            bail!("unexpected character `{ch}` at offset {i}");
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    vars: &'a Vars,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            match self.peek().cloned() {
                Some(Tok::Num(v)) if v >= 0.0 && v.fract() == 0.0 && v <= 64.0 => {
                    self.pos += 1;
                    Ok(Expr::Pow(Box::new(base), v as u32))
                }
                other => bail!("exponent must be a non-negative integer literal, found {other:?}"),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self.peek().cloned().ok_or_else(|| anyhow!("unexpected end of expression"))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Const(Complex64::new(v, 0.0))),
            Tok::Imag(v) => Ok(Expr::Const(Complex64::new(0.0, v))),
            Tok::Op('(') => {
                let e = self.expr()?;
                if !self.eat(')') {
                    bail!("missing `)`");
                }
                Ok(e)
            }
            Tok::Ident(name) => match name.as_str() {
                "i" => Ok(Expr::Const(Complex64::new(0.0, 1.0))),
                "abs" | "sqrt" => {
                    if !self.eat('(') {
                        bail!("`{name}` needs an argument in parentheses");
                    }
                    let e = self.expr()?;
                    if !self.eat(')') {
                        bail!("missing `)` after `{name}(`");
                    }
                    Ok(if name == "abs" { Expr::Abs(Box::new(e)) } else { Expr::Sqrt(Box::new(e)) })
                }
                _ => self
                    .vars
                    .lookup(&name)
                    .map(Expr::Var)
                    .ok_or_else(|| anyhow!("unknown variable `{name}` (n = {})", self.vars.n)),
            },
            Tok::Op(op) => bail!("unexpected `{op}`"),
        }
    }
}

pub fn parse(src: &str, vars: Vars) -> Result<Expr> {
    let mut p = Parser { toks: lex(src)?, pos: 0, vars: &vars };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        bail!("trailing input after position {} in `{src}`", p.pos);
    }
    Ok(e)
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> Complex64 {
        match self {
            Expr::Const(v) => *v,
            Expr::Var(k) => Complex64::new(x[*k], 0.0),
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, p) => a.eval(x).powu(*p),
            Expr::Abs(a) => Complex64::new(a.eval(x).norm(), 0.0),
            Expr::Sqrt(a) => a.eval(x).sqrt(),
        }
    }

    /// Variable slots the expression reads.
    pub fn vars_used(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(k) => {
                if !out.contains(k) {
                    out.push(*k);
                }
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Abs(a) | Expr::Sqrt(a) => a.vars_used(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.vars_used(out);
                b.vars_used(out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: &[f64]) -> Complex64 {
        parse(src, Vars { n: 2 }).unwrap().eval(x)
    }

    #[test]
    fn literals_and_precedence() {
        assert_eq!(ev("1+2i", &[0.0; 3]), Complex64::new(1.0, 2.0));
        assert_eq!(ev("2*3+4", &[0.0; 3]), Complex64::new(10.0, 0.0));
        assert_eq!(ev("-2^2", &[0.0; 3]), Complex64::new(-4.0, 0.0));
        assert_eq!(ev("i*i", &[0.0; 3]), Complex64::new(-1.0, 0.0));
        assert_eq!(ev("1.5e1 - 0.5i", &[0.0; 3]), Complex64::new(15.0, -0.5));
    }

    #[test]
    fn variables() {
        let x = [3.0, 4.0, 2.0];
        assert_eq!(ev("xi1^2 + xin", &x), Complex64::new(13.0, 0.0));
        assert_eq!(ev("sqrt(xi1^2 + xi2^2)", &x), Complex64::new(5.0, 0.0));
        assert_eq!(ev("abs(-mu)", &x), Complex64::new(2.0, 0.0));
        assert_eq!(ev("(1+i)*mu", &x), Complex64::new(2.0, 2.0));
        let e = parse("xi1 * mu + 2", Vars { n: 2 }).unwrap();
        let mut used = Vec::new();
        e.vars_used(&mut used);
        used.sort();
        assert_eq!(used, vec![0, 2]);
    }

    #[test]
    fn errors() {
        let v = Vars { n: 2 };
        assert!(parse("xi3", v).is_err());
        assert!(parse("xi1 +", v).is_err());
        assert!(parse("xi1^1.5", v).is_err());
        assert!(parse("(xi1", v).is_err());
        assert!(parse("xi1 $ 2", v).is_err());
        assert!(parse("foo(1)", v).is_err());
    }
}
