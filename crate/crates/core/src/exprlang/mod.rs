//! A small arithmetic expression language for metric components,
//! Lagrangians, maps and coordinate changes.
//!
//! Grammar (version 1):
//!
//! ```text
//! expr    := sum
//! sum     := product { ('+' | '-') product }
//! product := unary { ('*' | '/') unary }
//! unary   := '-' unary | power
//! power   := atom [ '^' unary ]            (right-associative)
//! atom    := number | variable | 'pi' | func '(' expr ')' | '(' expr ')'
//! func    := 'sin' | 'cos' | 'tan' | 'exp' | 'log' | 'sqrt' | 'abs'
//! number  := digits [ '.' digits ] [ ('e' | 'E') [ '+' | '-' ] digits ]
//! variable:= 't' index | 'x' index | 'v' digit digit | 'v_' index '_' index
//! ```
//!
//! `tA` is the temporal coordinate A, `xI` the spatial coordinate I and
//! `vIA` (or `v_I_A`) the partial velocity of x^I along t^A. Indices are
//! 1-based and checked against the declared dimensions at parse time.

mod lexer;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::jet::{JetDims, JetPoint};
use crate::smooth::{self, EvalError, ScalarField, TaylorScalar};
use lexer::{tokenize, Tok, Token};

/// Version of the grammar above, referenced by the CLI config schema.
pub const GRAMMAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at byte {offset}: expected {expected}, found {found}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unbound variable `{name}` at byte {offset}")]
    UnboundVariable { name: String, offset: usize },
}

impl ExprError {
    pub fn offset(&self) -> usize {
        match self {
            ExprError::Parse(e) => e.offset,
            ExprError::UnboundVariable { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Time(usize),
    Space(usize),
    /// `Fiber(i, a)` is x^i_a.
    Fiber(usize, usize),
}

impl Var {
    pub fn index(&self, dims: JetDims) -> usize {
        match *self {
            Var::Time(a) => dims.t_index(a),
            Var::Space(i) => dims.x_index(i),
            Var::Fiber(i, a) => dims.v_index(i, a),
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Var::Time(a) => write!(f, "t{}", a + 1),
            Var::Space(i) => write!(f, "x{}", i + 1),
            Var::Fiber(i, a) if i < 9 && a < 9 => write!(f, "v{}{}", i + 1, a + 1),
            Var::Fiber(i, a) => write!(f, "v_{}_{}", i + 1, a + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
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
    fn symbol(&self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone)]
pub enum NodeKind {
    Num(f64),
    Pi,
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// AST node with the byte span it was parsed from. Equality ignores spans.
#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub span: (usize, usize),
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        use NodeKind::*;
        match (&self.kind, &other.kind) {
            (Num(a), Num(b)) => a.to_bits() == b.to_bits(),
            (Pi, Pi) => true,
            (Var(a), Var(b)) => a == b,
            (Neg(a), Neg(b)) => a == b,
            (Bin(o, a, b), Bin(p, c, d)) => o == p && a == c && b == d,
            (Call(f, a), Call(g, b)) => f == g && a == b,
            _ => false,
        }
    }
}

const ADD_BP: (u8, u8) = (1, 2);
const MUL_BP: (u8, u8) = (3, 4);
const UNARY_BP: u8 = 5;
const POW_BP: (u8, u8) = (7, 6);

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    dims: JetDims,
    src: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, tok: &Token, expected: &str) -> ExprError {
        ParseError {
            offset: tok.start.min(self.src.len()),
            expected: expected.to_string(),
            found: tok.tok.describe(),
        }
        .into()
    }

    fn expr(&mut self, min_bp: u8) -> Result<Node, ExprError> {
        let mut lhs = self.prefix()?;
        loop {
            let (op, (lbp, rbp)) = match self.peek().tok {
                Tok::Plus => (BinOp::Add, ADD_BP),
                Tok::Minus => (BinOp::Sub, ADD_BP),
                Tok::Star => (BinOp::Mul, MUL_BP),
                Tok::Slash => (BinOp::Div, MUL_BP),
                Tok::Caret => (BinOp::Pow, POW_BP),
                _ => break,
            };
            if lbp < min_bp {
                break;
            }
            self.next();
            let rhs = self.expr(rbp)?;
            let span = (lhs.span.0, rhs.span.1);
            lhs = Node { kind: NodeKind::Bin(op, Box::new(lhs), Box::new(rhs)), span };
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Node, ExprError> {
        let tok = self.next();
        match &tok.tok {
            Tok::Num(v) => Ok(Node { kind: NodeKind::Num(*v), span: (tok.start, tok.end) }),
            Tok::Minus => {
                let inner = self.expr(UNARY_BP)?;
                let span = (tok.start, inner.span.1);
                Ok(Node { kind: NodeKind::Neg(Box::new(inner)), span })
            }
            Tok::LParen => {
                let inner = self.expr(0)?;
                let close = self.next();
                if close.tok != Tok::RParen {
                    return Err(self.error(&close, "`)`"));
                }
                Ok(Node { kind: inner.kind, span: (tok.start, close.end) })
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::from_name(name) {
                    let open = self.next();
                    if open.tok != Tok::LParen {
                        return Err(self.error(&open, &format!("`(` after `{name}`")));
                    }
                    let arg = self.expr(0)?;
                    let close = self.next();
                    if close.tok != Tok::RParen {
                        return Err(self.error(&close, "`)`"));
                    }
                    return Ok(Node {
                        kind: NodeKind::Call(func, Box::new(arg)),
                        span: (tok.start, close.end),
                    });
                }
                if name == "pi" {
                    return Ok(Node { kind: NodeKind::Pi, span: (tok.start, tok.end) });
                }
                let var = resolve_variable(name, self.dims).ok_or_else(|| {
                    if looks_like_variable(name) {
                        ExprError::UnboundVariable { name: name.clone(), offset: tok.start }
                    } else {
                        self.error(&tok, "a variable, function or constant")
                    }
                })?;
                Ok(Node { kind: NodeKind::Var(var), span: (tok.start, tok.end) })
            }
            _ => Err(self.error(&tok, "an operand")),
        }
    }
}

fn looks_like_variable(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some('t' | 'x' | 'v'))
        && chars.clone().next().is_some()
        && chars.all(|c| c.is_ascii_digit() || c == '_')
}

fn parse_index(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || s.starts_with('0') {
        return None;
    }
    s.parse::<usize>().ok().map(|k| k - 1)
}

fn resolve_variable(name: &str, dims: JetDims) -> Option<Var> {
    let (head, rest) = name.split_at(1);
    let var = match head {
        "t" => Var::Time(parse_index(rest)?),
        "x" => Var::Space(parse_index(rest)?),
        "v" => {
            if let Some(tail) = rest.strip_prefix('_') {
                let (i, a) = tail.split_once('_')?;
                Var::Fiber(parse_index(i)?, parse_index(a)?)
            } else if rest.len() == 2 {
                Var::Fiber(parse_index(&rest[..1])?, parse_index(&rest[1..])?)
            } else {
                return None;
            }
        }
        _ => return None,
    };
    let bound = match var {
        Var::Time(a) => a < dims.p,
        Var::Space(i) => i < dims.n,
        Var::Fiber(i, a) => i < dims.n && a < dims.p,
    };
    bound.then_some(var)
}

/// A parsed expression bound to jet dimensions. Evaluates as a field over
/// the flat jet layout `(t, x, v)`.
#[derive(Debug, Clone)]
pub struct Expr {
    root: Node,
    dims: JetDims,
    source: Arc<str>,
    used: Vec<usize>,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.root == other.root
    }
}

/// Parse `source` against dimensions `dims`.
pub fn parse(source: &str, dims: JetDims) -> Result<Expr, ExprError> {
    let tokens = tokenize(source)?;
    let mut parser = Parser { tokens, pos: 0, dims, src: source };
    if parser.peek().tok == Tok::End {
        return Err(parser.error(&parser.peek().clone(), "an expression"));
    }
    let root = parser.expr(0)?;
    let trailing = parser.peek().clone();
    if trailing.tok != Tok::End {
        return Err(parser.error(&trailing, "an operator or end of input"));
    }
    let mut used = Vec::new();
    collect_vars(&root, dims, &mut used);
    used.sort_unstable();
    used.dedup();
    Ok(Expr { root, dims, source: source.into(), used })
}

fn collect_vars(node: &Node, dims: JetDims, out: &mut Vec<usize>) {
    match &node.kind {
        NodeKind::Var(v) => out.push(v.index(dims)),
        NodeKind::Neg(a) | NodeKind::Call(_, a) => collect_vars(a, dims, out),
        NodeKind::Bin(_, a, b) => {
            collect_vars(a, dims, out);
            collect_vars(b, dims, out);
        }
        NodeKind::Num(_) | NodeKind::Pi => {}
    }
}

fn precedence(node: &Node) -> u8 {
    match &node.kind {
        NodeKind::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        NodeKind::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        NodeKind::Neg(_) => 3,
        NodeKind::Bin(BinOp::Pow, ..) => 4,
        _ => 5,
    }
}

fn write_node(node: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let wrapped = |child: &Node, paren: bool, f: &mut fmt::Formatter<'_>| {
        if paren {
            write!(f, "(")?;
            write_node(child, f)?;
            write!(f, ")")
        } else {
            write_node(child, f)
        }
    };
    match &node.kind {
        NodeKind::Num(v) => write!(f, "{v}"),
        NodeKind::Pi => write!(f, "pi"),
        NodeKind::Var(v) => write!(f, "{v}"),
        NodeKind::Neg(a) => {
            write!(f, "-")?;
            wrapped(a, precedence(a) < 3, f)
        }
        NodeKind::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(a, f)?;
            write!(f, ")")
        }
        NodeKind::Bin(BinOp::Pow, a, b) => {
            wrapped(a, precedence(a) <= 4, f)?;
            write!(f, "^")?;
            wrapped(b, precedence(b) < 3, f)
        }
        NodeKind::Bin(op, a, b) => {
            let p = precedence(node);
            wrapped(a, precedence(a) < p, f)?;
            write!(f, "{}", op.symbol())?;
            wrapped(b, precedence(b) <= p, f)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, f)
    }
}

impl Expr {
    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn dims(&self) -> JetDims {
        self.dims
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Flat jet-layout indices of the variables the expression mentions.
    pub fn variables(&self) -> &[usize] {
        &self.used
    }

    fn location(&self, span: (usize, usize)) -> String {
        let snippet = self.source.get(span.0..span.1).unwrap_or("");
        format!("`{snippet}` at bytes {}..{}", span.0, span.1)
    }

    fn domain(&self, function: &'static str, value: f64, span: (usize, usize)) -> EvalError {
        EvalError::Domain { function, value, location: self.location(span) }
    }

    fn eval_node(&self, node: &Node, args: &[TaylorScalar]) -> Result<TaylorScalar, EvalError> {
        let out = match &node.kind {
            NodeKind::Num(v) => TaylorScalar::constant(*v),
            NodeKind::Pi => TaylorScalar::constant(std::f64::consts::PI),
            NodeKind::Var(v) => args[v.index(self.dims)].clone(),
            NodeKind::Neg(a) => -self.eval_node(a, args)?,
            NodeKind::Bin(op, a, b) => {
                let l = self.eval_node(a, args)?;
                let r = self.eval_node(b, args)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r.value() == 0.0 {
                            return Err(self.domain("division", 0.0, node.span));
                        }
                        l / r
                    }
                    BinOp::Pow => self.eval_pow(&l, &r, node.span)?,
                }
            }
            NodeKind::Call(func, a) => {
                let u = self.eval_node(a, args)?;
                let x = u.value();
                let smooth_point = !u.is_constant() && u.order() > 0;
                match func {
                    Func::Sin => u.sin(),
                    Func::Cos => u.cos(),
                    Func::Tan => {
                        if x.cos() == 0.0 {
                            return Err(self.domain("tan", x, node.span));
                        }
                        u.tan()
                    }
                    Func::Exp => u.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(self.domain("log", x, node.span));
                        }
                        u.ln()
                    }
                    Func::Sqrt => {
                        if x < 0.0 || (x == 0.0 && smooth_point) {
                            return Err(self.domain("sqrt", x, node.span));
                        }
                        u.sqrt()
                    }
                    Func::Abs => {
                        if x == 0.0 && smooth_point {
                            return Err(self.domain("abs", x, node.span));
                        }
                        u.abs()
                    }
                }
            }
        };
        if !out.is_finite() {
            return Err(EvalError::NonFinite { location: self.location(node.span) });
        }
        Ok(out)
    }

    fn eval_pow(
        &self,
        base: &TaylorScalar,
        exponent: &TaylorScalar,
        span: (usize, usize),
    ) -> Result<TaylorScalar, EvalError> {
        let b = base.value();
        let constant_exponent = exponent.coefficients()[1..].iter().all(|&c| c == 0.0);
        let e = exponent.value();
        let integral = constant_exponent && e.fract() == 0.0;
        if b < 0.0 && !integral {
            return Err(self.domain("power", b, span));
        }
        if b == 0.0 && (!constant_exponent || e < 0.0) {
            return Err(self.domain("power", b, span));
        }
        Ok(base.pow(exponent))
    }
}

impl ScalarField for Expr {
    fn arity(&self) -> usize {
        self.dims.nvars()
    }

    fn eval(&self, args: &[TaylorScalar]) -> Result<TaylorScalar, EvalError> {
        smooth::check_arity(self.arity(), args.len())?;
        self.eval_node(&self.root, args)
    }

    fn depends_on(&self, var: usize) -> bool {
        self.used.binary_search(&var).is_ok()
    }
}

/// Evaluate `expr` at a jet point with all partials up to `order` (0..=3),
/// seeded in the flat jet layout.
pub fn eval_expr(expr: &Expr, point: &JetPoint, order: usize) -> Result<TaylorScalar, EvalError> {
    if order > 3 {
        return Err(EvalError::Order(order));
    }
    if point.dims() != expr.dims {
        return Err(EvalError::Arity { expected: expr.arity(), found: point.dims().nvars() });
    }
    let flat = point.to_flat();
    let seeds: Vec<usize> = (0..flat.len()).collect();
    smooth::eval_seeded(expr, &flat, &seeds, order)
}
