//! Symbolic phase-space observables.
//!
//! Expressions use a small prefix grammar:
//!
//! ```text
//! expr  := number | name | "(" op expr* ")"
//! name  := t | x0 x1 x2 | x y z | v0 v1 v2 | vx vy vz | vsq | tag | pi
//! op    := + | * | - | / | pow | sin | cos | exp | gauss
//! ```
//!
//! `(- a)` negates, `(- a b c)` subtracts left to right, `(pow e n)` takes an
//! integer power, and `(gauss a)` is `exp(-a |v|^2)`. Time and space
//! derivatives are taken symbolically, which gives the transport derivative
//! `(d_t + v . grad_x) f` exactly.

use crate::vec3::Vec3;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("declared bound violated at {at}: |f| = {value} > {limit}")]
    BoundViolation { at: String, value: f64, limit: f64 },
    #[error("function is not finite at {0}")]
    NotFinite(String),
    #[error("no bound declared")]
    NoBound,
}

/// A phase-space point `(t, x, v, tag)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: Vec3,
    pub v: Vec3,
    pub tag: u8,
}

impl Point {
    pub fn new(t: f64, x: Vec3, v: Vec3, tag: u8) -> Self {
        Point { t, x, v, tag }
    }

    /// Spatially homogeneous point at the origin.
    pub fn velocity(t: f64, v: Vec3) -> Self {
        Point { t, x: [0.0; 3], v, tag: 1 }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(t={}, x={:?}, v={:?}, tag={})", self.t, self.x, self.v, self.tag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    T,
    X(usize),
    V(usize),
    VSq,
    Tag,
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Neg(Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    Gauss(f64),
}

/// Variable of differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X(usize),
}

impl Expr {
    pub fn eval(&self, p: &Point) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::T => p.t,
            Expr::X(k) => p.x[*k],
            Expr::V(k) => p.v[*k],
            Expr::VSq => p.v[0] * p.v[0] + p.v[1] * p.v[1] + p.v[2] * p.v[2],
            Expr::Tag => p.tag as f64,
            Expr::Add(xs) => xs.iter().map(|e| e.eval(p)).sum(),
            Expr::Mul(xs) => xs.iter().map(|e| e.eval(p)).product(),
            Expr::Neg(e) => -e.eval(p),
            Expr::Div(a, b) => a.eval(p) / b.eval(p),
            Expr::Pow(e, n) => e.eval(p).powi(*n),
            Expr::Sin(e) => e.eval(p).sin(),
            Expr::Cos(e) => e.eval(p).cos(),
            Expr::Exp(e) => e.eval(p).exp(),
            Expr::Gauss(a) => {
                let s = p.v[0] * p.v[0] + p.v[1] * p.v[1] + p.v[2] * p.v[2];
                (-a * s).exp()
            }
        }
    }

    fn depends_on(&self, var: Var) -> bool {
        match self {
            Expr::Const(_) | Expr::V(_) | Expr::VSq | Expr::Tag | Expr::Gauss(_) => false,
            Expr::T => var == Var::T,
            Expr::X(k) => var == Var::X(*k),
            Expr::Add(xs) | Expr::Mul(xs) => xs.iter().any(|e| e.depends_on(var)),
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Sin(e) | Expr::Cos(e) | Expr::Exp(e) => {
                e.depends_on(var)
            }
            Expr::Div(a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    fn depends_on_tag(&self) -> bool {
        match self {
            Expr::Tag => true,
            Expr::Const(_) | Expr::T | Expr::X(_) | Expr::V(_) | Expr::VSq | Expr::Gauss(_) => {
                false
            }
            Expr::Add(xs) | Expr::Mul(xs) => xs.iter().any(|e| e.depends_on_tag()),
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Sin(e) | Expr::Cos(e) | Expr::Exp(e) => {
                e.depends_on_tag()
            }
            Expr::Div(a, b) => a.depends_on_tag() || b.depends_on_tag(),
        }
    }

    /// Symbolic partial derivative.
    pub fn diff(&self, var: Var) -> Expr {
        if !self.depends_on(var) {
            return Expr::Const(0.0);
        }
        let d = match self {
            Expr::T | Expr::X(_) => Expr::Const(1.0),
            Expr::Add(xs) => Expr::Add(xs.iter().map(|e| e.diff(var)).collect()),
            Expr::Mul(xs) => {
                let mut terms = Vec::new();
                for i in 0..xs.len() {
                    if !xs[i].depends_on(var) {
                        continue;
                    }
                    let mut f: Vec<Expr> = xs.clone();
                    f[i] = xs[i].diff(var);
                    terms.push(Expr::Mul(f));
                }
                Expr::Add(terms)
            }
            Expr::Neg(e) => Expr::Neg(Box::new(e.diff(var))),
            Expr::Div(a, b) => {
                let num = Expr::Add(vec![
                    Expr::Mul(vec![a.diff(var), (**b).clone()]),
                    Expr::Neg(Box::new(Expr::Mul(vec![(**a).clone(), b.diff(var)]))),
                ]);
                Expr::Div(Box::new(num), Box::new(Expr::Pow(b.clone(), 2)))
            }
            Expr::Pow(e, n) => Expr::Mul(vec![
                Expr::Const(*n as f64),
                Expr::Pow(e.clone(), n - 1),
                e.diff(var),
            ]),
            Expr::Sin(e) => Expr::Mul(vec![Expr::Cos(e.clone()), e.diff(var)]),
            Expr::Cos(e) => Expr::Neg(Box::new(Expr::Mul(vec![Expr::Sin(e.clone()), e.diff(var)]))),
            Expr::Exp(e) => Expr::Mul(vec![Expr::Exp(e.clone()), e.diff(var)]),
            Expr::Const(_) | Expr::V(_) | Expr::VSq | Expr::Tag | Expr::Gauss(_) => {
                Expr::Const(0.0)
            }
        };
        d.simplify()
    }

    /// Constant folding and removal of neutral elements.
    pub fn simplify(self) -> Expr {
        match self {
            Expr::Add(xs) => {
                let mut c = 0.0;
                let mut out = Vec::new();
                for e in xs.into_iter().map(Expr::simplify) {
                    match e {
                        Expr::Const(v) => c += v,
                        Expr::Add(inner) => out.extend(inner),
                        other => out.push(other),
                    }
                }
                if c != 0.0 {
                    out.push(Expr::Const(c));
                }
                match out.len() {
                    0 => Expr::Const(0.0),
                    1 => out.pop().expect("one"),
                    _ => Expr::Add(out),
                }
            }
            Expr::Mul(xs) => {
                let mut c = 1.0;
                let mut out = Vec::new();
                for e in xs.into_iter().map(Expr::simplify) {
                    match e {
                        Expr::Const(v) => c *= v,
                        Expr::Mul(inner) => out.extend(inner),
                        other => out.push(other),
                    }
                }
                if c == 0.0 {
                    return Expr::Const(0.0);
                }
                if out.is_empty() {
                    return Expr::Const(c);
                }
                if c != 1.0 {
                    out.insert(0, Expr::Const(c));
                }
                if out.len() == 1 {
                    out.pop().expect("one")
                } else {
                    Expr::Mul(out)
                }
            }
            Expr::Neg(e) => match e.simplify() {
                Expr::Const(c) => Expr::Const(-c),
                Expr::Neg(inner) => *inner,
                other => Expr::Neg(Box::new(other)),
            },
            Expr::Div(a, b) => match (a.simplify(), b.simplify()) {
                (Expr::Const(x), _) if x == 0.0 => Expr::Const(0.0),
                (x, Expr::Const(c)) if c == 1.0 => x,
                (x, y) => Expr::Div(Box::new(x), Box::new(y)),
            },
            Expr::Pow(e, n) => match (e.simplify(), n) {
                (_, 0) => Expr::Const(1.0),
                (x, 1) => x,
                (Expr::Const(c), n) => Expr::Const(c.powi(n)),
                (x, n) => Expr::Pow(Box::new(x), n),
            },
            Expr::Sin(e) => match e.simplify() {
                Expr::Const(c) => Expr::Const(c.sin()),
                x => Expr::Sin(Box::new(x)),
            },
            Expr::Cos(e) => match e.simplify() {
                Expr::Const(c) => Expr::Const(c.cos()),
                x => Expr::Cos(Box::new(x)),
            },
            Expr::Exp(e) => match e.simplify() {
                Expr::Const(c) => Expr::Const(c.exp()),
                x => Expr::Exp(Box::new(x)),
            },
            other => other,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list(f: &mut fmt::Formatter<'_>, op: &str, xs: &[&Expr]) -> fmt::Result {
            write!(f, "({op}")?;
            for x in xs {
                write!(f, " {x}")?;
            }
            write!(f, ")")
        }
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::T => write!(f, "t"),
            Expr::X(k) => write!(f, "x{k}"),
            Expr::V(k) => write!(f, "v{k}"),
            Expr::VSq => write!(f, "vsq"),
            Expr::Tag => write!(f, "tag"),
            Expr::Add(xs) => list(f, "+", &xs.iter().collect::<Vec<_>>()),
            Expr::Mul(xs) => list(f, "*", &xs.iter().collect::<Vec<_>>()),
            Expr::Neg(e) => list(f, "-", &[e]),
            Expr::Div(a, b) => list(f, "/", &[a, b]),
            Expr::Pow(e, n) => write!(f, "(pow {e} {n})"),
            Expr::Sin(e) => list(f, "sin", &[e]),
            Expr::Cos(e) => list(f, "cos", &[e]),
            Expr::Exp(e) => list(f, "exp", &[e]),
            Expr::Gauss(a) => write!(f, "(gauss {a:?})"),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    depth: usize,
}

const MAX_DEPTH: usize = 200;

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, PhaseError> {
        Err(PhaseError::Parse { pos: self.pos, msg: msg.into() })
    }

    fn skip_ws(&mut self) {
        let b = self.src.as_bytes();
        while self.pos < b.len() && b[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn atom(&mut self) -> &'a str {
        let b = self.src.as_bytes();
        let start = self.pos;
        while self.pos < b.len() && !b[self.pos].is_ascii_whitespace() && b[self.pos] != b'(' && b[self.pos] != b')' {
            self.pos += 1;
        }
        &self.src[start..self.pos]
    }

    fn expr(&mut self) -> Result<Expr, PhaseError> {
        self.skip_ws();
        let b = self.src.as_bytes();
        if self.pos >= b.len() {
            return self.err("unexpected end of input");
        }
        match b[self.pos] {
            b')' => self.err("unexpected ')'"),
            b'(' => {
                self.depth += 1;
                if self.depth > MAX_DEPTH {
                    return self.err("expression nested too deeply");
                }
                self.pos += 1;
                self.skip_ws();
                let op_pos = self.pos;
                let op = self.atom();
                if op.is_empty() {
                    return self.err("expected an operator");
                }
                let mut args = Vec::new();
                loop {
                    self.skip_ws();
                    if self.pos >= b.len() {
                        return self.err("missing ')'");
                    }
                    if b[self.pos] == b')' {
                        self.pos += 1;
                        break;
                    }
                    args.push(self.expr()?);
                }
                self.depth -= 1;
                self.build(op, op_pos, args)
            }
            _ => {
                let start = self.pos;
                let a = self.atom();
                let e = match a {
                    "t" => Expr::T,
                    "x0" | "x" => Expr::X(0),
                    "x1" | "y" => Expr::X(1),
                    "x2" | "z" => Expr::X(2),
                    "v0" | "vx" => Expr::V(0),
                    "v1" | "vy" => Expr::V(1),
                    "v2" | "vz" => Expr::V(2),
                    "vsq" => Expr::VSq,
                    "tag" => Expr::Tag,
                    "pi" => Expr::Const(std::f64::consts::PI),
                    _ => match a.parse::<f64>() {
                        Ok(c) if c.is_finite() => Expr::Const(c),
                        _ => {
                            self.pos = start;
                            return self.err(format!("unknown symbol '{a}'"));
                        }
                    },
                };
                Ok(e)
            }
        }
    }

    fn build(&self, op: &str, op_pos: usize, mut args: Vec<Expr>) -> Result<Expr, PhaseError> {
        let bad = |msg: &str| Err(PhaseError::Parse { pos: op_pos, msg: format!("{op}: {msg}") });
        let one = |args: &mut Vec<Expr>| -> Option<Box<Expr>> {
            if args.len() == 1 {
                args.pop().map(Box::new)
            } else {
                None
            }
        };
        match op {
            "+" if !args.is_empty() => Ok(Expr::Add(args)),
            "*" if !args.is_empty() => Ok(Expr::Mul(args)),
            "-" if args.len() == 1 => Ok(Expr::Neg(Box::new(args.pop().expect("one")))),
            "-" if args.len() > 1 => {
                let first = args.remove(0);
                let mut terms = vec![first];
                terms.extend(args.into_iter().map(|e| Expr::Neg(Box::new(e))));
                Ok(Expr::Add(terms))
            }
            "/" if args.len() == 2 => {
                let b = args.pop().expect("two");
                let a = args.pop().expect("two");
                Ok(Expr::Div(Box::new(a), Box::new(b)))
            }
            "pow" if args.len() == 2 => match args.pop() {
                Some(Expr::Const(n)) if n.fract() == 0.0 && n.abs() <= 64.0 => {
                    Ok(Expr::Pow(Box::new(args.pop().expect("two")), n as i32))
                }
                _ => bad("exponent must be an integer literal with |n| <= 64"),
            },
            "sin" => one(&mut args).map(Expr::Sin).map_or_else(|| bad("expects 1 argument"), Ok),
            "cos" => one(&mut args).map(Expr::Cos).map_or_else(|| bad("expects 1 argument"), Ok),
            "exp" => one(&mut args).map(Expr::Exp).map_or_else(|| bad("expects 1 argument"), Ok),
            "gauss" => match args.as_slice() {
                [Expr::Const(a)] => Ok(Expr::Gauss(*a)),
                _ => bad("expects one numeric literal"),
            },
            "+" | "*" | "-" | "/" | "pow" => bad("wrong number of arguments"),
            _ => bad("unknown operator"),
        }
    }
}

/// Parse an expression in the prefix grammar.
pub fn parse_expr(src: &str) -> Result<Expr, PhaseError> {
    let mut p = Parser { src, pos: 0, depth: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != src.len() {
        return p.err("trailing input");
    }
    Ok(e)
}

/// Observable over `(t, x, v, tag)` with analytic transport derivatives and
/// growth metadata: `|f| <= bound * exp(growth * |v|^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFunction {
    expr: Expr,
    transport: Expr,
    backward: Expr,
    bound: Option<f64>,
    growth: f64,
    homogeneous: bool,
    static_in_time: bool,
    tag_blind: bool,
}

impl PhaseFunction {
    pub fn from_expr(expr: Expr) -> Self {
        let expr = expr.simplify();
        let dt = expr.diff(Var::T);
        let mut fwd = vec![dt.clone()];
        let mut bwd = vec![dt];
        let mut homogeneous = true;
        for k in 0..3 {
            if expr.depends_on(Var::X(k)) {
                homogeneous = false;
                let dx = expr.diff(Var::X(k));
                fwd.push(Expr::Mul(vec![Expr::V(k), dx.clone()]));
                bwd.push(Expr::Neg(Box::new(Expr::Mul(vec![Expr::V(k), dx]))));
            }
        }
        PhaseFunction {
            static_in_time: !expr.depends_on(Var::T),
            tag_blind: !expr.depends_on_tag(),
            transport: Expr::Add(fwd).simplify(),
            backward: Expr::Add(bwd).simplify(),
            expr,
            bound: None,
            growth: 0.0,
            homogeneous,
        }
    }

    pub fn parse(src: &str) -> Result<Self, PhaseError> {
        Ok(Self::from_expr(parse_expr(src)?))
    }

    pub fn constant(c: f64) -> Self {
        Self::from_expr(Expr::Const(c)).with_bound(c.abs())
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn with_growth(mut self, growth: f64) -> Self {
        self.growth = growth;
        self
    }

    /// `c * self`, with the declared bound scaled accordingly.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = Self::from_expr(Expr::Mul(vec![Expr::Const(c), self.expr.clone()]));
        out.bound = self.bound.map(|b| b * c.abs());
        out.growth = self.growth;
        out
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn growth(&self) -> f64 {
        self.growth
    }

    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    pub fn is_static(&self) -> bool {
        self.static_in_time
    }

    pub fn is_tag_blind(&self) -> bool {
        self.tag_blind
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.expr, Expr::Const(_))
    }

    /// Constant value when the expression is a literal.
    pub fn constant_value(&self) -> Option<f64> {
        match self.expr {
            Expr::Const(c) => Some(c),
            _ => None,
        }
    }

    #[inline]
    pub fn eval(&self, p: &Point) -> f64 {
        self.expr.eval(p)
    }

    /// Homogeneous, tagged evaluation at `(t, v)`.
    #[inline]
    pub fn eval_tv(&self, t: f64, v: &Vec3) -> f64 {
        self.expr.eval(&Point::velocity(t, *v))
    }

    /// `(d_t + v . grad_x) f`.
    #[inline]
    pub fn transport(&self, p: &Point) -> f64 {
        self.transport.eval(p)
    }

    /// `(d_t - v . grad_x) f`.
    #[inline]
    pub fn backward_transport(&self, p: &Point) -> f64 {
        self.backward.eval(p)
    }

    pub fn transport_expr(&self) -> &Expr {
        &self.transport
    }

    pub fn backward_expr(&self) -> &Expr {
        &self.backward
    }

    /// Check the declared bound on `n` quasi-random points with
    /// `t in [0, t_max]`, `x` in the torus and `v` in `[-v_range, v_range]^d`.
    pub fn verify_bound(&self, d: usize, t_max: f64, v_range: f64, n: usize) -> Result<(), PhaseError> {
        let bound = self.bound.ok_or(PhaseError::NoBound)?;
        for p in quasi_random_points(d, t_max, v_range, n) {
            let f = self.eval(&p);
            if !f.is_finite() {
                return Err(PhaseError::NotFinite(p.to_string()));
            }
            let vs = crate::vec3::norm_sq(&p.v);
            let limit = bound * (self.growth * vs).exp();
            if f.abs() > limit * (1.0 + 1e-12) {
                return Err(PhaseError::BoundViolation { at: p.to_string(), value: f.abs(), limit });
            }
        }
        Ok(())
    }
}

impl fmt::Display for PhaseFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton points covering time, torus, velocity box and both tags.
pub fn quasi_random_points(d: usize, t_max: f64, v_range: f64, n: usize) -> Vec<Point> {
    const PRIMES: [u64; 7] = [2, 3, 5, 7, 11, 13, 17];
    (1..=n as u64)
        .map(|i| {
            let mut x = [0.0; 3];
            let mut v = [0.0; 3];
            for k in 0..d {
                x[k] = radical_inverse(i, PRIMES[1 + k]);
                v[k] = v_range * (2.0 * radical_inverse(i, PRIMES[4 + k]) - 1.0);
            }
            Point { t: t_max * radical_inverse(i, PRIMES[0]), x, v, tag: (i % 2) as u8 }
        })
        .collect()
}
