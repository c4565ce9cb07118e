//! Unit-conversion expressions.
//!
//! A property's `convert` attribute holds an arithmetic expression over the
//! raw reading `x`, numeric calibration constants, and bracketed references
//! such as `[Vref]` to other properties of the same subject:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number | 'x' | '[' name ']' | '(' expr ')'
//! ```
//!
//! Dependent references always resolve to the raw (unconverted) reading of the
//! named property.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
}

impl ExprError {
    /// Byte offset of the failure; `None` for an empty expression.
    pub fn offset(&self) -> Option<usize> {
        match self {
            ExprError::Empty => None,
            ExprError::Syntax { offset, .. } => Some(*offset),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("missing dependent value [{0}]")]
    MissingDependent(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("result is not finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(f64),
    /// The raw reading of the property being converted.
    Raw,
    Dependent(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

const UNARY_PRECEDENCE: u8 = 3;

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn negate(inner: Expr) -> Expr {
        Expr::Neg(Box::new(inner))
    }

    fn write_prec(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        match self {
            Expr::Literal(v) => write!(f, "{v}"),
            Expr::Raw => f.write_str("x"),
            Expr::Dependent(name) => write!(f, "[{name}]"),
            Expr::Neg(inner) => {
                f.write_str("-")?;
                inner.write_prec(f, UNARY_PRECEDENCE)
            }
            Expr::Binary(op, lhs, rhs) => {
                let prec = op.precedence();
                let wrap = prec < min_prec;
                if wrap {
                    f.write_str("(")?;
                }
                lhs.write_prec(f, prec)?;
                write!(f, "{}", op.symbol())?;
                // Left-associative: an equal-precedence right operand needs parens.
                rhs.write_prec(f, prec + 1)?;
                if wrap {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

/// Canonical text form; `parse_expr` of the output yields the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_prec(f, 0)
    }
}

/// Raw readings of the other properties on the same subject, keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalEnv {
    values: HashMap<String, u64>,
}

impl EvalEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, raw: u64) {
        self.values.insert(name.into(), raw);
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.values.get(name).copied()
    }
}

impl<S: Into<String>> FromIterator<(S, u64)> for EvalEnv {
    fn from_iter<I: IntoIterator<Item = (S, u64)>>(iter: I) -> Self {
        EvalEnv { values: iter.into_iter().map(|(k, v)| (k.into(), v)).collect() }
    }
}

/// A parsed conversion expression together with its dependent names.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionExpr {
    root: Expr,
    dependencies: Vec<String>,
}

impl ConversionExpr {
    pub fn from_ast(root: Expr) -> Self {
        let mut dependencies = Vec::new();
        collect_dependencies(&root, &mut dependencies);
        ConversionExpr { root, dependencies }
    }

    pub fn ast(&self) -> &Expr {
        &self.root
    }

    /// Bracketed names in first-occurrence order, duplicates collapsed.
    pub fn dependencies(&self) -> &[String] {
        &self.dependencies
    }

    pub fn eval(&self, x: u64, env: &EvalEnv) -> Result<f64, EvalError> {
        eval_expr(self, x, env)
    }
}

impl fmt::Display for ConversionExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl std::str::FromStr for ConversionExpr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expr(s)
    }
}

fn collect_dependencies(expr: &Expr, out: &mut Vec<String>) {
    match expr {
        Expr::Literal(_) | Expr::Raw => {}
        Expr::Dependent(name) => {
            if !out.iter().any(|n| n == name) {
                out.push(name.clone());
            }
        }
        Expr::Neg(inner) => collect_dependencies(inner, out),
        Expr::Binary(_, lhs, rhs) => {
            collect_dependencies(lhs, out);
            collect_dependencies(rhs, out);
        }
    }
}

pub fn parse_expr(text: &str) -> Result<ConversionExpr, ExprError> {
    let mut parser = Parser { src: text.as_bytes(), pos: 0 };
    parser.skip_ws();
    if parser.at_end() {
        return Err(ExprError::Empty);
    }
    let root = parser.expr()?;
    parser.skip_ws();
    if !parser.at_end() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(ConversionExpr::from_ast(root))
}

pub fn list_dependencies(expr: &ConversionExpr) -> &[String] {
    expr.dependencies()
}

/// Evaluates `expr` for raw reading `x` in double precision.
pub fn eval_expr(expr: &ConversionExpr, x: u64, env: &EvalEnv) -> Result<f64, EvalError> {
    let value = eval_node(&expr.root, x as f64, env)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EvalError::NonFinite)
    }
}

fn eval_node(expr: &Expr, x: f64, env: &EvalEnv) -> Result<f64, EvalError> {
    Ok(match expr {
        Expr::Literal(v) => *v,
        Expr::Raw => x,
        Expr::Dependent(name) => env.get(name).ok_or_else(|| EvalError::MissingDependent(name.clone()))? as f64,
        Expr::Neg(inner) => -eval_node(inner, x, env)?,
        Expr::Binary(op, lhs, rhs) => {
            let a = eval_node(lhs, x, env)?;
            let b = eval_node(rhs, x, env)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    a / b
                }
            }
        }
    })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.pos += 1;
        }
    }

    fn error(&self, message: &str) -> ExprError {
        let message = if self.at_end() && message != "unexpected trailing input" {
            format!("{message} (unexpected end of input)")
        } else {
            message.to_string()
        };
        ExprError::Syntax { offset: self.pos, message }
    }

    fn expect(&mut self, byte: u8, what: &str) -> Result<(), ExprError> {
        self.skip_ws();
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(what))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::negate(self.unary()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        match self.peek() {
            Some(b'x') => {
                self.pos += 1;
                Ok(Expr::Raw)
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(b')', "expected ')'")?;
                Ok(inner)
            }
            Some(b'[') => {
                self.pos += 1;
                let start = self.pos;
                while let Some(b) = self.peek() {
                    if b == b']' || b == b'[' {
                        break;
                    }
                    self.pos += 1;
                }
                if self.peek() != Some(b']') {
                    return Err(self.error("expected ']'"));
                }
                // Slicing between ASCII delimiters keeps UTF-8 boundaries intact.
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("input was a str").trim();
                if name.is_empty() {
                    return Err(ExprError::Syntax { offset: start, message: "empty dependent name".into() });
                }
                self.pos += 1;
                Ok(Expr::Dependent(name.to_string()))
            }
            Some(b'0'..=b'9' | b'.') => self.number(),
            _ => Err(self.error("expected a number, 'x', '[name]' or '('")),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let mut digits = 0;
        while let Some(b'0'..=b'9') = self.peek() {
            self.pos += 1;
            digits += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while let Some(b'0'..=b'9') = self.peek() {
                self.pos += 1;
                digits += 1;
            }
        }
        if digits == 0 {
            return Err(ExprError::Syntax { offset: start, message: "malformed number".into() });
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        let value: f64 = text
            .parse()
            .map_err(|_| ExprError::Syntax { offset: start, message: format!("malformed number {text:?}") })?;
        Ok(Expr::Literal(value))
    }
}
