//! Model-definition expression language.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | ident | ident '(' sum ')' | '(' sum ')'
//! ```
//!
//! `-x^2` parses as `-(x^2)`; `^` is right-associative. Functions are
//! `sqrt exp log sin cos abs`. Identifiers name coordinates, fiber
//! components or parameters; which is which is decided by the bindings.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::jets::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

/// Expression tree. Cheap to clone; subtrees are shared.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Sym(String),
    Neg(Arc<Expr>),
    Bin(BinOp, Arc<Expr>, Arc<Expr>),
    Call(Func, Arc<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message} at line {line}, column {column} (offset {offset})")]
pub struct ParseError {
    pub message: String,
    pub offset: usize,
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound symbol `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
}

impl<'a> Lexer<'a> {
    fn error(&self, offset: usize, message: impl Into<String>) -> ParseError {
        let before = &self.src[..offset.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rfind('\n').map(|p| offset - p).unwrap_or(offset + 1);
        ParseError {
            message: message.into(),
            offset,
            line,
            column,
        }
    }

    fn tokenize(src: &'a str) -> Result<Lexer<'a>, ParseError> {
        let mut lx = Lexer { src, toks: Vec::new() };
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() || c == '.' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| lx.error(start, format!("malformed number `{text}`")))?;
                lx.toks.push((Tok::Num(v), start));
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                lx.toks.push((Tok::Ident(src[start..i].to_string()), start));
            } else if "+-*/^".contains(c) {
                lx.toks.push((Tok::Op(c), i));
                i += 1;
            } else if c == '(' {
                lx.toks.push((Tok::LParen, i));
                i += 1;
            } else if c == ')' {
                lx.toks.push((Tok::RParen, i));
                i += 1;
            } else {
                return Err(lx.error(i, format!("unexpected character `{c}`")));
            }
        }
        lx.toks.push((Tok::End, src.len()));
        Ok(lx)
    }
}

struct Parser<'a> {
    lx: Lexer<'a>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.lx.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.lx.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.lx.toks[self.pos].0.clone();
        if t != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self) -> ParseError {
        let what = match self.peek() {
            Tok::End => "unexpected end of input".to_string(),
            Tok::Num(v) => format!("unexpected number {v}"),
            Tok::Ident(s) => format!("unexpected identifier `{s}`"),
            Tok::Op(c) => format!("unexpected operator `{c}`"),
            Tok::LParen => "unexpected `(`".to_string(),
            Tok::RParen => "unexpected `)`".to_string(),
        };
        self.lx.error(self.offset(), what)
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Expr::Bin(op, Arc::new(lhs), Arc::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Arc::new(lhs), Arc::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == &Tok::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Arc::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == &Tok::Op('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Arc::new(base), Arc::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Ident(name) => {
                if self.peek() == &Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| self.lx.error(at, format!("unknown function `{name}`")))?;
                    self.bump();
                    let arg = self.sum()?;
                    self.expect_rparen()?;
                    Ok(Expr::Call(func, Arc::new(arg)))
                } else {
                    Ok(Expr::Sym(name))
                }
            }
            Tok::LParen => {
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            _ => {
                self.pos -= usize::from(self.pos > 0 && self.lx.toks[self.pos - 1].1 == at);
                Err(self.unexpected())
            }
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if self.peek() == &Tok::RParen {
            self.bump();
            Ok(())
        } else {
            Err(self.lx.error(self.offset(), "expected `)`"))
        }
    }
}

/// Parse an expression.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let lx = Lexer::tokenize(source)?;
    let mut p = Parser { lx, pos: 0 };
    if p.peek() == &Tok::End {
        return Err(p.lx.error(0, "empty expression"));
    }
    let e = p.sum()?;
    if p.peek() != &Tok::End {
        return Err(p.unexpected());
    }
    Ok(e)
}

impl std::str::FromStr for Expr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Expr, ParseError> {
        parse(s)
    }
}

/// Symbol-to-value map used by [`Expr::eval`].
#[derive(Debug, Clone)]
pub struct Bindings<S> {
    map: HashMap<String, S>,
}

impl<S> Default for Bindings<S> {
    fn default() -> Self {
        Bindings { map: HashMap::new() }
    }
}

impl<S: Scalar> Bindings<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: impl Into<String>, value: S) -> &mut Self {
        self.map.insert(name.into(), value);
        self
    }

    pub fn with(mut self, name: impl Into<String>, value: S) -> Self {
        self.bind(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&S> {
        self.map.get(name)
    }

    /// Bind every entry of a parameter table as a constant.
    pub fn bind_params<'a>(&mut self, params: impl IntoIterator<Item = (&'a String, &'a f64)>) -> &mut Self {
        for (k, v) in params {
            self.map.insert(k.clone(), S::from_f64(*v));
        }
        self
    }
}

fn integral_exponent(v: f64) -> Option<i32> {
    (v.fract() == 0.0 && v.abs() <= i32::MAX as f64).then_some(v as i32)
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn sym(name: &str) -> Expr {
        Expr::Sym(name.to_string())
    }

    /// Evaluate over any scalar ring. Jets carry exact derivatives through.
    pub fn eval<S: Scalar>(&self, b: &Bindings<S>) -> Result<S, EvalError> {
        Ok(match self {
            Expr::Num(v) => S::from_f64(*v),
            Expr::Sym(name) => b.get(name).cloned().ok_or_else(|| EvalError::Unbound(name.clone()))?,
            Expr::Neg(a) => -a.eval(b)?,
            Expr::Bin(op, l, r) => {
                let lv = l.eval(b)?;
                let rv = r.eval(b)?;
                match op {
                    BinOp::Add => lv + rv,
                    BinOp::Sub => lv - rv,
                    BinOp::Mul => lv * rv,
                    BinOp::Div => {
                        if rv.value() == 0.0 {
                            return Err(EvalError::Domain(format!("division by zero in `{self}`")));
                        }
                        lv / rv
                    }
                    BinOp::Pow => pow(&lv, &rv, self)?,
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval(b)?;
                let x = v.value();
                let smooth = v.is_constant();
                match f {
                    Func::Sqrt if x < 0.0 || (x == 0.0 && !smooth) => {
                        return Err(EvalError::Domain(format!("sqrt of {x} in `{self}`")))
                    }
                    Func::Log if x <= 0.0 => return Err(EvalError::Domain(format!("log of {x} in `{self}`"))),
                    Func::Abs if x == 0.0 && !smooth => {
                        return Err(EvalError::Domain(format!("abs is not differentiable at 0 in `{self}`")))
                    }
                    _ => {}
                }
                match f {
                    Func::Sqrt => v.sqrt(),
                    Func::Exp => v.exp(),
                    Func::Log => v.ln(),
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Abs => v.abs(),
                }
            }
        })
    }

    /// All symbol names referenced by the expression.
    pub fn symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Sym(s) => {
                out.insert(s.clone());
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.collect_symbols(out),
            Expr::Bin(_, l, r) => {
                l.collect_symbols(out);
                r.collect_symbols(out);
            }
        }
    }

    pub fn references(&self, name: &str) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Sym(s) => s == name,
            Expr::Neg(a) | Expr::Call(_, a) => a.references(name),
            Expr::Bin(_, l, r) => l.references(name) || r.references(name),
        }
    }

    pub fn is_zero_literal(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.precedence(),
            Expr::Neg(_) => 3,
            _ => 5,
        }
    }
}

fn pow<S: Scalar>(base: &S, exp: &S, whole: &Expr) -> Result<S, EvalError> {
    if exp.is_constant() {
        if let Some(n) = integral_exponent(exp.value()) {
            if n < 0 && base.value() == 0.0 {
                return Err(EvalError::Domain(format!("zero to a negative power in `{whole}`")));
            }
            return Ok(base.powi(n));
        }
    }
    if base.value() <= 0.0 {
        return Err(EvalError::Domain(format!(
            "non-integer power of non-positive base {} in `{whole}`",
            base.value()
        )));
    }
    if exp.is_constant() {
        return Ok(base.powf(exp.value()));
    }
    Ok((exp.clone() * base.ln()).exp())
}

fn write_num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v < 0.0 || (v == 0.0 && v.is_sign_negative()) {
        write!(f, "(-{:?})", -v)
    } else {
        write!(f, "{v:?}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write_num(f, *v),
            Expr::Sym(s) => write!(f, "{s}"),
            Expr::Neg(a) => {
                // `-a^b` already means `-(a^b)`, anything looser needs parentheses
                if a.precedence() >= 4 {
                    write!(f, "-{a}")
                } else {
                    write!(f, "-({a})")
                }
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Bin(op, l, r) => {
                let p = op.precedence();
                let (lp, rp) = match op {
                    // right-associative: the left operand must bind tighter
                    BinOp::Pow => (l.precedence() <= p, r.precedence() < 3),
                    BinOp::Add | BinOp::Mul => (l.precedence() < p, r.precedence() <= p),
                    BinOp::Sub | BinOp::Div => (l.precedence() < p, r.precedence() <= p),
                };
                let lp = lp || matches!(**l, Expr::Num(v) if v < 0.0);
                if lp {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if rp {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
        }
    }
}
