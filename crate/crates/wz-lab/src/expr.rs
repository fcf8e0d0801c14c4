//! A restricted arithmetic expression language for user-supplied Lyapunov
//! functions: operators + - * / ^, parentheses, numeric literals, and
//! variables x1..x9 (plain `x` aliases x1). Derivatives come from central
//! finite differences, so expressions stay plain strings.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::fd;
use crate::lyapunov::{LyapunovData, LyapunovError};

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("variable {name} exceeds the state dimension {dim}")]
    VarOutOfRange { name: String, dim: usize },
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
}

#[derive(Clone, Debug)]
enum Node {
    Const(f64),
    /// Zero-based coordinate index.
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
}

impl Node {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(i) => x[*i],
            Node::Neg(a) => -a.eval(x),
            Node::Add(a, b) => a.eval(x) + b.eval(x),
            Node::Sub(a, b) => a.eval(x) - b.eval(x),
            Node::Mul(a, b) => a.eval(x) * b.eval(x),
            Node::Div(a, b) => a.eval(x) / b.eval(x),
            Node::Pow(a, b) => a.eval(x).powf(b.eval(x)),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Const(_) => None,
            Node::Var(i) => Some(*i),
            Node::Neg(a) => a.max_var(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b)
            | Node::Pow(a, b) => match (a.max_var(), b.max_var()) {
                (None, v) | (v, None) => v,
                (Some(p), Some(q)) => Some(p.max(q)),
            },
        }
    }
}

/// A parsed expression, evaluable at points of R^dim.
#[derive(Clone)]
pub struct Expression {
    root: Arc<Node>,
    source: String,
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expression({:?})", self.source)
    }
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self, ExprError> {
        let mut p = Parser {
            bytes: source.as_bytes(),
            pos: 0,
        };
        p.skip_ws();
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(Self {
            root: Arc::new(root),
            source: source.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Highest variable index used, as a 1-based count (0 for constants).
    pub fn min_dim(&self) -> usize {
        self.root.max_var().map_or(0, |i| i + 1)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.root.eval(x)
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError::Parse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut node = self.term()?;
        loop {
            if self.eat(b'+') {
                node = Node::Add(Box::new(node), Box::new(self.term()?));
            } else if self.eat(b'-') {
                node = Node::Sub(Box::new(node), Box::new(self.term()?));
            } else {
                return Ok(node);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut node = self.factor()?;
        loop {
            if self.eat(b'*') {
                node = Node::Mul(Box::new(node), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                node = Node::Div(Box::new(node), Box::new(self.factor()?));
            } else {
                return Ok(node);
            }
        }
    }

    /// Unary minus binds looser than ^, so -x^2 is -(x^2).
    fn factor(&mut self) -> Result<Node, ExprError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.factor()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            // Right associative through the factor recursion; also admits a
            // signed exponent like x^-2.
            let exponent = self.factor()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(b'x') => self.variable(),
            Some(c) => Err(self.err(&format!("unexpected character {:?}", c as char))),
            None => Err(self.err("unexpected end of expression")),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E') && self.pos > start {
                // Exponent part, optionally signed.
                self.pos += 1;
                if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let value: f64 = text.parse().map_err(|_| ExprError::Parse {
            pos: start,
            msg: format!("bad number {text:?}"),
        })?;
        self.skip_ws();
        Ok(Node::Const(value))
    }

    fn variable(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        self.pos += 1;
        let mut index = 0usize;
        let mut digits = 0;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                index = index * 10 + (c - b'0') as usize;
                digits += 1;
                self.pos += 1;
            } else {
                break;
            }
        }
        self.skip_ws();
        if digits == 0 {
            return Ok(Node::Var(0));
        }
        if !(1..=9).contains(&index) || digits > 1 {
            return Err(ExprError::Parse {
                pos: start,
                msg: "variables are x and x1..x9".to_string(),
            });
        }
        Ok(Node::Var(index - 1))
    }
}

/// Builds Lyapunov data from an expression string, with finite-difference
/// gradient and Hessian.
pub fn lyapunov_from_expression(
    source: &str,
    state_dim: usize,
    theta: f64,
    eta: f64,
    c_bound: f64,
    m_bound: f64,
) -> Result<LyapunovData, ExprError> {
    let expr = Expression::parse(source)?;
    if expr.min_dim() > state_dim {
        return Err(ExprError::VarOutOfRange {
            name: format!("x{}", expr.min_dim()),
            dim: state_dim,
        });
    }
    let value = expr.clone();
    let grad = expr.clone();
    let hess = expr;
    Ok(LyapunovData::new(
        state_dim,
        Arc::new(move |x: &[f64]| value.eval(x)),
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            let f = |p: &[f64]| grad.eval(p);
            fd::gradient(&f, x, out);
        }),
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            let f = |p: &[f64]| hess.eval(p);
            fd::hessian(&f, x, out);
        }),
        theta,
        eta,
        c_bound,
        m_bound,
    )?)
}
