//! Symbolic expression trees for discovered right-hand sides.
//!
//! Expressions are immutable trees of constants, variables, unary function
//! applications and binary operators. The complexity metric is the node count
//! of the *canonical* tree, so every score is reproducible without relying on
//! a general-purpose computer-algebra system.
//!
//! Canonicalization does exactly three things:
//!
//! * folds constant-only subtrees (`2*3` becomes `6`) when the result is finite,
//! * removes identity nodes (`x + 0`, `1*x`, `x - 0`, `x/1`, `x^1`),
//! * flattens `+` and `*` chains, sorts their operands and rebuilds them as
//!   left-leaning binary chains.
//!
//! Within a product the (single, folded) constant comes first and the other
//! factors are sorted by their printed form. Within a sum, terms are sorted by
//! the printed form of their non-constant part, then by the full printed form;
//! a folded constant term goes last.
//!
//! # Grammar
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := unary (("*" | "/") unary)*
//! unary  := "-" unary | power
//! power  := atom ("^" unary)?
//! atom   := number | "-" number | ident | func "(" expr ")" | "(" expr ")"
//! func   := "sin" | "cos" | "exp" | "log" | "sqrt" | "abs"
//! ident  := [a-z][a-z0-9_]*
//! number := digits ["." digits] [("e" | "E") ["+" | "-"] digits]
//! ```
//!
//! A `-` immediately followed by a number (no whitespace) in operand position
//! is part of the literal, so `-1*u1` is `mul(-1, u1)` while `-u1` is
//! `neg(u1)`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("unbound symbol `{0}`")]
    Unbound(String),
    #[error("binding `{name}` has length {got}, expected {expected}")]
    LengthMismatch {
        name: String,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
        }
    }

    fn from_function_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            _ => return None,
        })
    }

    /// Out-of-domain inputs map to NaN.
    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => {
                if x > 0.0 {
                    x.ln()
                } else {
                    f64::NAN
                }
            }
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Abs => x.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => {
                if b == 0.0 {
                    f64::NAN
                } else {
                    a / b
                }
            }
            BinaryOp::Pow => {
                if a == 0.0 && b < 0.0 {
                    f64::NAN
                } else {
                    a.powf(b)
                }
            }
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => " + ",
            BinaryOp::Sub => " - ",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
            BinaryOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Panics on a non-finite value; stored constants are always finite.
    pub fn num(value: f64) -> Expr {
        assert!(value.is_finite(), "non-finite constant {value}");
        Expr::Const(normalize_zero(value))
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn unary(op: UnaryOp, operand: Expr) -> Expr {
        Expr::Unary(op, Box::new(operand))
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary(op, Box::new(left), Box::new(right))
    }

    pub fn pow(self, exponent: Expr) -> Expr {
        Expr::binary(BinaryOp::Pow, self, exponent)
    }

    pub fn sin(self) -> Expr {
        Expr::unary(UnaryOp::Sin, self)
    }

    pub fn cos(self) -> Expr {
        Expr::unary(UnaryOp::Cos, self)
    }

    pub fn exp(self) -> Expr {
        Expr::unary(UnaryOp::Exp, self)
    }

    pub fn log(self) -> Expr {
        Expr::unary(UnaryOp::Log, self)
    }

    /// Left-leaning sum; an empty iterator yields `0`.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms
            .into_iter()
            .reduce(|acc, t| acc + t)
            .unwrap_or(Expr::Const(0.0))
    }

    /// Left-leaning product; an empty iterator yields `1`.
    pub fn product<I: IntoIterator<Item = Expr>>(factors: I) -> Expr {
        factors
            .into_iter()
            .reduce(|acc, t| acc * t)
            .unwrap_or(Expr::Const(1.0))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.node_count(),
            Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    /// Node count of the canonical tree.
    pub fn complexity(&self) -> usize {
        self.canonicalize().node_count()
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Unary(_, a) => a.collect_variables(out),
            Expr::Binary(_, a, b) => {
                a.collect_variables(out);
                b.collect_variables(out);
            }
        }
    }

    pub fn canonicalize(&self) -> Expr {
        match self {
            Expr::Const(v) => Expr::Const(normalize_zero(*v)),
            Expr::Var(_) => self.clone(),
            Expr::Unary(op, a) => {
                let a = a.canonicalize();
                if let Expr::Const(v) = a {
                    let r = op.apply(v);
                    if r.is_finite() {
                        return Expr::Const(normalize_zero(r));
                    }
                }
                Expr::unary(*op, a)
            }
            Expr::Binary(op @ (BinaryOp::Add | BinaryOp::Mul), _, _) => {
                let mut operands = Vec::new();
                self.flatten_into(*op, &mut operands);
                let operands: Vec<Expr> = operands.into_iter().flat_map(|e| {
                    let c = e.canonicalize();
                    let mut flat = Vec::new();
                    c.flatten_owned(*op, &mut flat);
                    flat
                }).collect();
                match op {
                    BinaryOp::Add => rebuild_sum(operands),
                    _ => rebuild_product(operands),
                }
            }
            Expr::Binary(op, a, b) => {
                let a = a.canonicalize();
                let b = b.canonicalize();
                if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
                    let r = op.apply(*x, *y);
                    if r.is_finite() {
                        return Expr::Const(normalize_zero(r));
                    }
                }
                let identity = match op {
                    BinaryOp::Sub => b.as_const() == Some(0.0),
                    BinaryOp::Div | BinaryOp::Pow => b.as_const() == Some(1.0),
                    _ => false,
                };
                if identity {
                    a
                } else {
                    Expr::binary(*op, a, b)
                }
            }
        }
    }

    fn flatten_into<'a>(&'a self, op: BinaryOp, out: &mut Vec<&'a Expr>) {
        match self {
            Expr::Binary(o, a, b) if *o == op => {
                a.flatten_into(op, out);
                b.flatten_into(op, out);
            }
            _ => out.push(self),
        }
    }

    fn flatten_owned(self, op: BinaryOp, out: &mut Vec<Expr>) {
        match self {
            Expr::Binary(o, a, b) if o == op => {
                a.flatten_owned(op, out);
                b.flatten_owned(op, out);
            }
            other => out.push(other),
        }
    }

    /// Printed form of the canonical tree.
    pub fn canonical_string(&self) -> String {
        self.canonicalize().to_string()
    }

    pub fn evaluate(&self, bindings: &Bindings<'_>) -> Result<Vec<f64>, ExprError> {
        match self {
            Expr::Const(v) => Ok(vec![*v; bindings.len]),
            Expr::Var(name) => bindings
                .values
                .get(name.as_str())
                .map(|s| s.to_vec())
                .ok_or_else(|| ExprError::Unbound(name.clone())),
            Expr::Unary(op, a) => {
                let mut v = a.evaluate(bindings)?;
                for x in v.iter_mut() {
                    *x = op.apply(*x);
                }
                Ok(v)
            }
            Expr::Binary(op, a, b) => {
                let mut left = a.evaluate(bindings)?;
                let right = b.evaluate(bindings)?;
                for (x, y) in left.iter_mut().zip(&right) {
                    *x = op.apply(*x, *y);
                }
                Ok(left)
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(_) | Expr::Var(_) => 5,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Unary(_, _) => 5,
            Expr::Binary(op, _, _) => op.precedence(),
        }
    }
}

fn normalize_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

fn is_const(e: &Expr) -> bool {
    matches!(e, Expr::Const(_))
}

/// Printed form of a summand without its leading constant factor.
fn term_key(e: &Expr) -> String {
    let mut factors = Vec::new();
    e.flatten_into(BinaryOp::Mul, &mut factors);
    if factors.len() > 1 && is_const(factors[0]) {
        Expr::product(factors[1..].iter().map(|f| (*f).clone())).to_string()
    } else {
        e.to_string()
    }
}

fn rebuild_sum(operands: Vec<Expr>) -> Expr {
    let (consts, mut terms): (Vec<Expr>, Vec<Expr>) = operands.into_iter().partition(is_const);
    let total: f64 = consts.iter().filter_map(Expr::as_const).sum();
    let mut tail = Vec::new();
    if total.is_finite() {
        if total != 0.0 || terms.is_empty() {
            tail.push(Expr::Const(normalize_zero(total)));
        }
    } else {
        tail = consts;
        tail.sort_by(|a, b| a.to_string().cmp(&b.to_string()));
    }
    let mut keyed: Vec<(String, String, Expr)> = terms
        .drain(..)
        .map(|t| (term_key(&t), t.to_string(), t))
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let ordered: Vec<Expr> = keyed.into_iter().map(|(_, _, t)| t).chain(tail).collect();
    Expr::sum(ordered)
}

fn rebuild_product(operands: Vec<Expr>) -> Expr {
    let (consts, factors): (Vec<Expr>, Vec<Expr>) = operands.into_iter().partition(is_const);
    let prod: f64 = consts.iter().filter_map(Expr::as_const).product();
    let mut head = Vec::new();
    if prod.is_finite() {
        if prod != 1.0 || factors.is_empty() {
            head.push(Expr::Const(normalize_zero(prod)));
        }
    } else {
        head = consts;
        head.sort_by(|a, b| a.to_string().cmp(&b.to_string()));
    }
    let mut keyed: Vec<(String, Expr)> = factors.into_iter().map(|f| (f.to_string(), f)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    Expr::product(head.into_iter().chain(keyed.into_iter().map(|(_, f)| f)))
}

/// Shortest round-trip decimal; exponent notation outside `[1e-4, 1e15)`.
pub fn format_number(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".to_string()
    } else if (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => f.write_str(&format_number(*v)),
            Expr::Var(name) => f.write_str(name),
            Expr::Unary(UnaryOp::Neg, a) => match a.as_ref() {
                Expr::Var(_) | Expr::Unary(UnaryOp::Sin | UnaryOp::Cos | UnaryOp::Exp | UnaryOp::Log | UnaryOp::Sqrt | UnaryOp::Abs, _) => {
                    write!(f, "-{a}")
                }
                _ => write!(f, "-({a})"),
            },
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                let left_paren = match op {
                    BinaryOp::Pow => {
                        a.precedence() <= p || matches!(a.as_ref(), Expr::Const(v) if *v < 0.0)
                    }
                    _ => a.precedence() < p,
                };
                let right_paren = match op {
                    BinaryOp::Pow => b.precedence() < 3,
                    _ => b.precedence() <= p,
                };
                if left_paren {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                f.write_str(op.symbol())?;
                if right_paren {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
        }
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::binary(BinaryOp::Add, self, rhs)
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::binary(BinaryOp::Sub, self, rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::binary(BinaryOp::Mul, self, rhs)
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::binary(BinaryOp::Div, self, rhs)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::unary(UnaryOp::Neg, self)
    }
}

impl Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Postfix program for fast pointwise evaluation of one expression.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    program: Vec<Instr>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

impl Expr {
    /// Compiles against an ordered variable list; `vars[i]` binds `names[i]`.
    pub fn compile(&self, names: &[&str]) -> Result<CompiledExpr, ExprError> {
        let mut program = Vec::new();
        self.emit(names, &mut program)?;
        Ok(CompiledExpr { program })
    }

    fn emit(&self, names: &[&str], out: &mut Vec<Instr>) -> Result<(), ExprError> {
        match self {
            Expr::Const(v) => out.push(Instr::Const(*v)),
            Expr::Var(name) => {
                let i = names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| ExprError::Unbound(name.clone()))?;
                out.push(Instr::Var(i));
            }
            Expr::Unary(op, a) => {
                a.emit(names, out)?;
                out.push(Instr::Unary(*op));
            }
            Expr::Binary(op, a, b) => {
                a.emit(names, out)?;
                b.emit(names, out)?;
                out.push(Instr::Binary(*op));
            }
        }
        Ok(())
    }
}

impl CompiledExpr {
    pub fn eval(&self, vars: &[f64]) -> f64 {
        let mut stack = Vec::with_capacity(8);
        self.eval_with(vars, &mut stack)
    }

    /// Same as [`CompiledExpr::eval`] with a caller-owned scratch stack.
    pub fn eval_with(&self, vars: &[f64], stack: &mut Vec<f64>) -> f64 {
        stack.clear();
        for ins in &self.program {
            match *ins {
                Instr::Const(v) => stack.push(v),
                Instr::Var(i) => stack.push(vars[i]),
                Instr::Unary(op) => {
                    let a = stack.pop().expect("well-formed program");
                    stack.push(op.apply(a));
                }
                Instr::Binary(op) => {
                    let b = stack.pop().expect("well-formed program");
                    let a = stack.pop().expect("well-formed program");
                    stack.push(op.apply(a, b));
                }
            }
        }
        stack.pop().expect("well-formed program")
    }
}

pub fn complexity(e: &Expr) -> usize {
    e.complexity()
}

pub fn canonical_print(e: &Expr) -> String {
    e.canonical_string()
}

/// Named input arrays for [`Expr::evaluate`]; all bound arrays share one length.
#[derive(Debug, Clone)]
pub struct Bindings<'a> {
    len: usize,
    values: HashMap<&'a str, &'a [f64]>,
}

impl<'a> Bindings<'a> {
    pub fn new(len: usize) -> Self {
        Bindings {
            len,
            values: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bind(&mut self, name: &'a str, values: &'a [f64]) -> Result<&mut Self, ExprError> {
        if values.len() != self.len {
            return Err(ExprError::LengthMismatch {
                name: name.to_string(),
                got: values.len(),
                expected: self.len,
            });
        }
        self.values.insert(name, values);
        Ok(self)
    }
}

// ---------------------------------------------------------------------------
// Symbol table

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role")]
pub enum SymbolRole {
    State,
    SpatialDerivative { axis: usize, order: u8 },
    Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Symbol {
    pub name: String,
    #[serde(flatten)]
    pub role: SymbolRole,
    pub state: usize,
}

/// Ordered symbols: states first, then derivatives by (state, axis, order).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SymbolTable {
    symbols: Vec<Symbol>,
    index: HashMap<String, usize>,
}

pub fn state_name(state: usize) -> String {
    format!("u{}", state + 1)
}

pub fn derivative_name(state: usize, axis_name: &str, order: u8) -> String {
    format!("u{}_{}", state + 1, axis_name.repeat(order as usize))
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// States `u1..ud` plus spatial derivatives up to `max_order` along each axis.
    pub fn for_grid(d: usize, axis_names: &[&str], max_order: u8) -> Self {
        let mut table = SymbolTable::new();
        for i in 0..d {
            table.push(Symbol {
                name: state_name(i),
                role: SymbolRole::State,
                state: i,
            });
        }
        for i in 0..d {
            for (k, axis) in axis_names.iter().enumerate() {
                for j in 1..=max_order {
                    table.push(Symbol {
                        name: derivative_name(i, axis, j),
                        role: SymbolRole::SpatialDerivative { axis: k, order: j },
                        state: i,
                    });
                }
            }
        }
        table
    }

    /// Panics on a duplicate name.
    pub fn push(&mut self, symbol: Symbol) {
        assert!(
            !self.index.contains_key(&symbol.name),
            "duplicate symbol {}",
            symbol.name
        );
        self.index.insert(symbol.name.clone(), self.symbols.len());
        self.symbols.push(symbol);
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Symbol> {
        self.symbols.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Symbol> {
        self.index.get(name).map(|&i| &self.symbols[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> Vec<&str> {
        self.symbols.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    start: usize,
    end: usize,
}

fn syntax(offset: usize, message: impl Into<String>) -> ExprError {
    ExprError::Syntax {
        offset,
        message: message.into(),
    }
}

fn lex(s: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let simple = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = simple {
            i += 1;
            out.push(Token { tok, start, end: i });
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &s[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| syntax(start, format!("malformed number `{text}`")))?;
            if !v.is_finite() {
                return Err(syntax(start, format!("non-finite number `{text}`")));
            }
            out.push(Token {
                tok: Tok::Num(v),
                start,
                end: i,
            });
            continue;
        }
        if c.is_ascii_lowercase() {
            while i < bytes.len()
                && (bytes[i].is_ascii_lowercase() || bytes[i].is_ascii_digit() || bytes[i] == b'_')
            {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(s[start..i].to_string()),
                start,
                end: i,
            });
            continue;
        }
        return Err(syntax(start, format!("unexpected character `{}`", s[start..].chars().next().unwrap_or('?'))));
    }
    out.push(Token {
        tok: Tok::End,
        start: s.len(),
        end: s.len(),
    });
    Ok(out)
}

struct Parser<'t> {
    toks: &'t [Token],
    pos: usize,
}

impl<'t> Parser<'t> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> &Token {
        let t = &self.toks[self.pos];
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut left = self.term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(left),
            };
            self.next();
            let right = self.term()?;
            left = Expr::binary(op, left, right);
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(left),
            };
            self.next();
            let right = self.unary()?;
            left = Expr::binary(op, left, right);
        }
    }

    fn negative_literal_ahead(&self) -> bool {
        let t = self.peek();
        if t.tok != Tok::Minus {
            return false;
        }
        let n = &self.toks[self.pos + 1];
        matches!(n.tok, Tok::Num(_)) && n.start == t.end
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek().tok == Tok::Minus && !self.negative_literal_ahead() {
            self.next();
            let operand = self.unary()?;
            return Ok(Expr::unary(UnaryOp::Neg, operand));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek().tok == Tok::Caret {
            self.next();
            let exponent = self.unary()?;
            return Ok(Expr::binary(BinaryOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        if self.negative_literal_ahead() {
            self.next();
            if let Tok::Num(v) = self.next().tok {
                return Ok(Expr::Const(normalize_zero(-v)));
            }
        }
        let t = self.next().clone();
        match t.tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Ident(name) => {
                if self.peek().tok == Tok::LParen {
                    let op = UnaryOp::from_function_name(&name)
                        .ok_or_else(|| syntax(t.start, format!("unknown function `{name}`")))?;
                    self.next();
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::unary(op, arg))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::End => Err(syntax(t.start, "unexpected end of input")),
            _ => Err(syntax(t.start, "expected an operand")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        let t = self.next();
        if t.tok == Tok::RParen {
            Ok(())
        } else {
            Err(syntax(t.start, "expected `)`"))
        }
    }
}

/// Parses an expression in the canonical grammar.
pub fn parse(s: &str) -> Result<Expr, ExprError> {
    let toks = lex(s)?;
    let mut p = Parser { toks: &toks, pos: 0 };
    let e = p.expr()?;
    let t = p.peek();
    if t.tok != Tok::End {
        return Err(syntax(t.start, "unexpected trailing input"));
    }
    Ok(e)
}

/// Like [`parse`], additionally rejecting variables missing from `symbols`.
pub fn parse_with_symbols(s: &str, symbols: &SymbolTable) -> Result<Expr, ExprError> {
    let e = parse(s)?;
    if let Some(unknown) = e.variables().into_iter().find(|v| !symbols.contains(v)) {
        return Err(ExprError::UnknownSymbol(unknown));
    }
    Ok(e)
}

/// Total order on expressions by canonical printed form.
pub fn canonical_cmp(a: &Expr, b: &Expr) -> Ordering {
    a.canonical_string().cmp(&b.canonical_string())
}
