//! A small arithmetic expression language for coefficient functions of one
//! variable.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | VAR | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and binds tighter than a leading minus, so
//! `-x^2` is `-(x^2)` while `2^-1` is `2^(-1)`. Functions: `exp`, `log`,
//! `sqrt`, `abs`. The variable defaults to `x`; coefficient families that
//! live in another variable (`s` for rate functions, `z` for jump densities)
//! are parsed with [`Expr::parse_in`].

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::numeric::{self, NumericError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdent { offset: usize, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
    #[error("sqrt of negative value {0}")]
    SqrtDomain(f64),
    #[error("non-integer power {exponent} of negative base {base}")]
    PowDomain { base: f64, exponent: f64 },
    #[error("result overflowed to a non-finite value")]
    Overflow,
    #[error("argument {0} is not finite")]
    NonFiniteArgument(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DerivError {
    #[error("step {step} too large for x = {x}: need x - 2*step > 0")]
    StepTooLarge { x: f64, step: f64 },
    #[error("derivative order must be 1 or 2, got {0}")]
    Order(u8),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            "abs" => Some(Func::Abs),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression in a single named variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    var: char,
}

impl Expr {
    /// Parses `source` in the variable `x`.
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        Self::parse_in(source, 'x')
    }

    pub fn parse_in(source: &str, var: char) -> Result<Self, ParseError> {
        if source.trim().is_empty() {
            return Err(ParseError::Empty);
        }
        let mut p = Parser { src: source.as_bytes(), pos: 0, var };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Self { root, var })
    }

    pub fn from_node(root: Node, var: char) -> Self {
        Self { root, var }
    }

    pub fn constant(value: f64) -> Self {
        Self { root: Node::Num(value), var: 'x' }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn var(&self) -> char {
        self.var
    }

    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        if !x.is_finite() {
            return Err(EvalError::NonFiniteArgument(x));
        }
        eval_node(&self.root, x)
    }

    /// Evaluates and maps any domain error to NaN, for use inside numerical
    /// routines that report non-finite values themselves.
    pub fn eval_or_nan(&self, x: f64) -> f64 {
        self.eval(x).unwrap_or(f64::NAN)
    }

    /// The value if the expression does not reference its variable.
    pub fn as_constant(&self) -> Option<f64> {
        if references_var(&self.root) {
            None
        } else {
            eval_node(&self.root, 0.0).ok()
        }
    }

    /// Default finite-difference step for [`Expr::deriv`].
    pub fn default_step(x: f64, order: u8) -> f64 {
        let base: f64 = if order == 2 { 1e-3 } else { 1e-4 };
        base.max(base * x).min(x / 4.0)
    }

    /// Derivative of order 1 or 2 at `x > 0` by central differences with one
    /// Richardson level. The stencil reaches `x ± 2·step`.
    pub fn deriv(&self, x: f64, order: u8, step: f64) -> Result<f64, DerivError> {
        if order != 1 && order != 2 {
            return Err(DerivError::Order(order));
        }
        if !(step > 0.0) || !(x - 2.0 * step > 0.0) {
            return Err(DerivError::StepTooLarge { x, step });
        }
        let mut failure = None;
        let value = numeric::derivative(
            |z| match self.eval(z) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            x,
            order,
            step,
            None,
        );
        if let Some(e) = failure {
            return Err(DerivError::Eval(e));
        }
        value.map_err(|e| match e {
            NumericError::StepTooLarge { x, step } => DerivError::StepTooLarge { x, step },
            _ => DerivError::Eval(EvalError::Overflow),
        })
    }

    /// [`Expr::deriv`] with [`Expr::default_step`].
    pub fn deriv_default(&self, x: f64, order: u8) -> Result<f64, DerivError> {
        self.deriv(x, order, Self::default_step(x, order))
    }
}

fn references_var(node: &Node) -> bool {
    match node {
        Node::Num(_) => false,
        Node::Var => true,
        Node::Neg(a) | Node::Call(_, a) => references_var(a),
        Node::Bin(_, a, b) => references_var(a) || references_var(b),
    }
}

fn checked(v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::Overflow)
    }
}

fn eval_node(node: &Node, x: f64) -> Result<f64, EvalError> {
    match node {
        Node::Num(v) => Ok(*v),
        Node::Var => Ok(x),
        Node::Neg(a) => Ok(-eval_node(a, x)?),
        Node::Bin(op, a, b) => {
            let a = eval_node(a, x)?;
            let b = eval_node(b, x)?;
            match op {
                BinOp::Add => checked(a + b),
                BinOp::Sub => checked(a - b),
                BinOp::Mul => checked(a * b),
                BinOp::Div => {
                    if b == 0.0 {
                        Err(EvalError::DivisionByZero)
                    } else {
                        checked(a / b)
                    }
                }
                BinOp::Pow => pow(a, b),
            }
        }
        Node::Call(f, a) => {
            let a = eval_node(a, x)?;
            match f {
                Func::Exp => checked(numeric::exp(a)),
                Func::Log => {
                    if a <= 0.0 {
                        Err(EvalError::LogDomain(a))
                    } else {
                        Ok(numeric::ln(a))
                    }
                }
                Func::Sqrt => {
                    if a < 0.0 {
                        Err(EvalError::SqrtDomain(a))
                    } else {
                        Ok(numeric::sqrt(a))
                    }
                }
                Func::Abs => Ok(numeric::abs(a)),
            }
        }
    }
}

fn pow(base: f64, exponent: f64) -> Result<f64, EvalError> {
    if base < 0.0 && numeric::floor(exponent) != exponent {
        return Err(EvalError::PowDomain { base, exponent });
    }
    if base == 0.0 && exponent < 0.0 {
        return Err(EvalError::DivisionByZero);
    }
    checked(numeric::powf(base, exponent))
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    var: char,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ParseError {
        ParseError::Syntax { offset: self.pos, message: message.to_string() }
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

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(b'-') {
            Ok(Node::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = core::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                let mut var_buf = [0u8; 4];
                if name == self.var.encode_utf8(&mut var_buf) {
                    return Ok(Node::Var);
                }
                match Func::from_name(name) {
                    Some(f) => {
                        if !self.eat(b'(') {
                            return Err(self.error("expected `(` after function name"));
                        }
                        let arg = self.expr()?;
                        if !self.eat(b')') {
                            return Err(self.error("expected `)`"));
                        }
                        Ok(Node::Call(f, Box::new(arg)))
                    }
                    None => Err(ParseError::UnknownIdent { offset: start, name: name.to_string() }),
                }
            }
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.error("malformed number"));
        }
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-') {
                self.pos += 1;
            }
            if digits(self) == 0 {
                // not an exponent; leave `e` for the caller to reject
                self.pos = mark;
            }
        }
        let text = core::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Node::Num(v)),
            _ => {
                self.pos = start;
                Err(self.error("number out of range"))
            }
        }
    }
}

struct NodeDisplay<'a> {
    node: &'a Node,
    var: char,
}

impl fmt::Display for NodeDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |node| NodeDisplay { node, var: self.var };
        match self.node {
            Node::Num(v) => write!(f, "{v:?}"),
            Node::Var => write!(f, "{}", self.var),
            Node::Neg(a) => write!(f, "(-{})", sub(a)),
            Node::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => '+',
                    BinOp::Sub => '-',
                    BinOp::Mul => '*',
                    BinOp::Div => '/',
                    BinOp::Pow => '^',
                };
                write!(f, "({} {sym} {})", sub(a), sub(b))
            }
            Node::Call(func, a) => write!(f, "{}({})", func.name(), sub(a)),
        }
    }
}

/// Fully parenthesised text form; parsing it back yields the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        NodeDisplay { node: &self.root, var: self.var }.fmt(f)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        ExprIn::<'x'>::deserialize(d).map(|e| e.0)
    }
}

/// Deserialization helper for expressions in a variable other than `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprIn<const VAR: char>(pub Expr);

impl<const VAR: char> Serialize for ExprIn<VAR> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de, const VAR: char> Deserialize<'de> for ExprIn<VAR> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let text = <alloc::borrow::Cow<'de, str>>::deserialize(d)?;
        Expr::parse_in(&text, VAR).map(ExprIn).map_err(|e| D::Error::custom(alloc::format!("`{text}`: {e}")))
    }
}

/// A coefficient that is either a constant or an expression; constant
/// expressions are folded once so simulation loops skip the tree walk.
#[derive(Debug, Clone, PartialEq)]
pub enum Coef {
    Const(f64),
    Expr(Expr),
}

impl Coef {
    pub fn new(e: &Expr) -> Self {
        match e.as_constant() {
            Some(v) => Coef::Const(v),
            None => Coef::Expr(e.clone()),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        match self {
            Coef::Const(v) => Ok(*v),
            Coef::Expr(e) => e.eval(x),
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Coef::Const(_))
    }
}
