//! Body language of `FunctionBlock`s.
//!
//! A body is a sequence of single-assignment statements, one per line:
//!
//! ```text
//! % keys of the voxel each point falls into
//! k = cloud(floor(col(p, 1) / 0.5), floor(col(p, 2) / 0.5), floor(col(p, 3) / 0.5))
//! i = first_unique(k)
//! q = gather(p, i)
//! ```
//!
//! Arithmetic is elementwise with scalar broadcast. Columns (`col(p, j)`)
//! are views of a point cloud with the cloud's runtime row count. The
//! structural builtins `cloud`, `gather`, `first_unique`, `randsel` and `sum`
//! must form the whole right-hand side of a statement; everything else may be
//! nested freely.

use std::collections::BTreeMap;
use std::fmt;

use crate::model::dtype::DType;
use crate::simulator::kernels;

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub target: String,
    pub expr: Expr,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl BinOp {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        let truth = |c: bool| if c { 1.0 } else { 0.0 };
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Lt => truth(a < b),
            BinOp::Le => truth(a <= b),
            BinOp::Gt => truth(a > b),
            BinOp::Ge => truth(a >= b),
            BinOp::Eq => truth(a == b),
            BinOp::Ne => truth(a != b),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "~=",
        }
    }

    fn is_comparison(self) -> bool {
        !matches!(self, BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FnlError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Type { line: usize, msg: String },
    #[error("{0}")]
    Signature(String),
    #[error("runtime shape mismatch: {0}")]
    Shape(String),
}

/// Static type of a body value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FType {
    Scalar,
    Vector(usize),
    /// Runtime-length column with the given capacity.
    Col(usize),
    Cloud(usize),
}

impl FType {
    pub fn elements(self) -> u64 {
        match self {
            FType::Scalar => 1,
            FType::Vector(n) | FType::Col(n) | FType::Cloud(n) => n as u64,
        }
    }

    fn from_dtype(dtype: &DType) -> Option<FType> {
        match dtype {
            DType::Scalar => Some(FType::Scalar),
            DType::Vector(n) => Some(FType::Vector(*n)),
            DType::PointCloud(n) => Some(FType::Cloud(*n)),
            _ => None,
        }
    }

    fn to_dtype(self) -> Option<DType> {
        match self {
            FType::Scalar => Some(DType::Scalar),
            FType::Vector(n) => Some(DType::Vector(n)),
            FType::Cloud(n) => Some(DType::PointCloud(n)),
            FType::Col(_) => None,
        }
    }
}

impl fmt::Display for FType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FType::Scalar => write!(f, "scalar"),
            FType::Vector(n) => write!(f, "vector({n})"),
            FType::Col(n) => write!(f, "column({n})"),
            FType::Cloud(n) => write!(f, "cloud({n})"),
        }
    }
}

const UNARY_MATH: &[&str] = &["sin", "cos", "tan", "atan", "exp", "log", "sqrt", "abs", "floor"];
const BINARY_MATH: &[&str] = &["atan2", "min", "max"];
const STRUCTURAL: &[&str] = &["cloud", "gather", "first_unique", "randsel", "sum"];

pub fn apply_unary(name: &str, x: f64) -> f64 {
    match name {
        "sin" => x.sin(),
        "cos" => x.cos(),
        "tan" => x.tan(),
        "atan" => x.atan(),
        "exp" => x.exp(),
        "log" => x.ln(),
        "sqrt" => x.sqrt(),
        "abs" => x.abs(),
        "floor" => x.floor(),
        _ => unreachable!("unknown unary builtin {name}"),
    }
}

pub fn apply_binary(name: &str, a: f64, b: f64) -> f64 {
    match name {
        "atan2" => a.atan2(b),
        "min" => a.min(b),
        "max" => a.max(b),
        _ => unreachable!("unknown binary builtin {name}"),
    }
}

// ---------------------------------------------------------------------------
// parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(&'static str),
}

fn lex(line: &str, lineno: usize) -> Result<Vec<Tok>, FnlError> {
    let err = |msg: String| FnlError::Syntax { line: lineno, msg };
    let bytes = line.as_bytes();
    let mut i = 0;
    let mut toks = Vec::new();
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() || c == ';' {
            i += 1;
        } else if c == '%' {
            break;
        } else if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())) {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                i += 1;
                if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                    i += 1;
                }
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text = &line[start..i];
            let v = text
                .parse::<f64>()
                .map_err(|_| err(format!("bad number `{text}`")))?;
            toks.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            toks.push(Tok::Ident(line[start..i].to_string()));
        } else {
            let two = line.get(i..i + 2).unwrap_or("");
            let sym = match two {
                "<=" => Some("<="),
                ">=" => Some(">="),
                "==" => Some("=="),
                "~=" => Some("~="),
                _ => None,
            };
            if let Some(sym) = sym {
                toks.push(Tok::Sym(sym));
                i += 2;
                continue;
            }
            let sym = match c {
                '(' => "(",
                ')' => ")",
                ',' => ",",
                '+' => "+",
                '-' => "-",
                '*' => "*",
                '/' => "/",
                '<' => "<",
                '>' => ">",
                '=' => "=",
                other => return Err(err(format!("unexpected character `{other}`"))),
            };
            toks.push(Tok::Sym(sym));
            i += 1;
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    line: usize,
}

impl Parser {
    fn err(&self, msg: impl Into<String>) -> FnlError {
        FnlError::Syntax {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn peek_sym(&self) -> Option<&'static str> {
        match self.toks.get(self.pos) {
            Some(Tok::Sym(s)) => Some(s),
            _ => None,
        }
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if self.peek_sym() == Some(sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, FnlError> {
        let lhs = self.additive()?;
        let op = match self.peek_sym() {
            Some("<") => BinOp::Lt,
            Some("<=") => BinOp::Le,
            Some(">") => BinOp::Gt,
            Some(">=") => BinOp::Ge,
            Some("==") => BinOp::Eq,
            Some("~=") => BinOp::Ne,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let rhs = self.additive()?;
        Ok(Expr::Bin(op, Box::new(lhs), Box::new(rhs)))
    }

    fn additive(&mut self) -> Result<Expr, FnlError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek_sym() {
                Some("+") => BinOp::Add,
                Some("-") => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, FnlError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek_sym() {
                Some("*") => BinOp::Mul,
                Some("/") => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, FnlError> {
        if self.eat_sym("-") {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.primary()
        }
    }

    fn primary(&mut self) -> Result<Expr, FnlError> {
        match self.toks.get(self.pos).cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.eat_sym("(") {
                    let mut args = Vec::new();
                    if !self.eat_sym(")") {
                        loop {
                            args.push(self.expr()?);
                            if self.eat_sym(")") {
                                break;
                            }
                            if !self.eat_sym(",") {
                                return Err(self.err("expected `,` or `)` in argument list"));
                            }
                        }
                    }
                    Ok(Expr::Call(name, args))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat_sym(")") {
                    return Err(self.err("expected `)`"));
                }
                Ok(inner)
            }
            Some(tok) => Err(self.err(format!("unexpected token {tok:?}"))),
            None => Err(self.err("unexpected end of line")),
        }
    }
}

impl Program {
    pub fn parse(source: &str) -> Result<Program, FnlError> {
        let mut stmts = Vec::new();
        for (idx, raw) in source.lines().enumerate() {
            let line = idx + 1;
            let toks = lex(raw, line)?;
            if toks.is_empty() {
                continue;
            }
            let target = match (&toks.first(), toks.get(1)) {
                (Some(Tok::Ident(name)), Some(Tok::Sym("="))) => name.clone(),
                _ => {
                    return Err(FnlError::Syntax {
                        line,
                        msg: "expected `name = expression`".into(),
                    })
                }
            };
            let mut parser = Parser { toks, pos: 2, line };
            let expr = parser.expr()?;
            if parser.pos != parser.toks.len() {
                return Err(parser.err("trailing tokens after expression"));
            }
            stmts.push(Stmt { target, expr, line });
        }
        Ok(Program { stmts })
    }

    /// Number of non-blank, non-comment lines in a body.
    pub fn code_lines(source: &str) -> usize {
        source
            .lines()
            .filter(|l| {
                let t = l.trim();
                !t.is_empty() && !t.starts_with('%')
            })
            .count()
    }
}

// ---------------------------------------------------------------------------
// type checking

/// Op counts per class, in the same class order as the hardware profile
/// (arith, trig, mem, cmp).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub arith: u64,
    pub trig: u64,
    pub mem: u64,
    pub cmp: u64,
}

impl OpCounts {
    fn scaled(self, k: u64) -> OpCounts {
        OpCounts {
            arith: self.arith * k,
            trig: self.trig * k,
            mem: self.mem * k,
            cmp: self.cmp * k,
        }
    }

    fn add(&mut self, other: OpCounts) {
        self.arith += other.arith;
        self.trig += other.trig;
        self.mem += other.mem;
        self.cmp += other.cmp;
    }
}

/// Result of checking a program against concrete input types.
#[derive(Debug, Clone, PartialEq)]
pub struct Typed {
    pub locals: BTreeMap<String, FType>,
    pub outputs: Vec<DType>,
    pub ops: OpCounts,
}

fn literal_int(expr: &Expr) -> Option<usize> {
    match expr {
        Expr::Num(v) if *v >= 0.0 && v.fract() == 0.0 && *v < 1e12 => Some(*v as usize),
        _ => None,
    }
}

struct Checker<'a> {
    env: &'a BTreeMap<String, FType>,
    line: usize,
}

impl Checker<'_> {
    fn err(&self, msg: impl Into<String>) -> FnlError {
        FnlError::Type {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn broadcast(&self, a: FType, b: FType) -> Result<FType, FnlError> {
        match (a, b) {
            (FType::Scalar, x) | (x, FType::Scalar) if !matches!(x, FType::Cloud(_)) => Ok(x),
            (FType::Vector(n), FType::Vector(m)) if n == m => Ok(a),
            (FType::Col(n), FType::Col(m)) if n == m => Ok(a),
            _ => Err(self.err(format!("incompatible operands {a} and {b}"))),
        }
    }

    /// Elementwise expression: returns its type and per-element op counts.
    fn elementwise(&self, expr: &Expr) -> Result<(FType, OpCounts), FnlError> {
        match expr {
            Expr::Num(_) => Ok((FType::Scalar, OpCounts::default())),
            Expr::Var(name) => match self.env.get(name) {
                Some(FType::Cloud(_)) => {
                    Err(self.err(format!("cloud `{name}` used in arithmetic; use col({name}, j)")))
                }
                Some(t) => Ok((*t, OpCounts::default())),
                None => Err(self.err(format!("undefined name `{name}`"))),
            },
            Expr::Neg(inner) => {
                let (t, mut ops) = self.elementwise(inner)?;
                ops.arith += 1;
                Ok((t, ops))
            }
            Expr::Bin(op, a, b) => {
                let (ta, oa) = self.elementwise(a)?;
                let (tb, ob) = self.elementwise(b)?;
                let t = self.broadcast(ta, tb)?;
                let mut ops = oa;
                ops.add(ob);
                if op.is_comparison() {
                    ops.cmp += 1;
                } else {
                    ops.arith += 1;
                }
                Ok((t, ops))
            }
            Expr::Call(name, args) => {
                let name = name.as_str();
                if UNARY_MATH.contains(&name) {
                    if args.len() != 1 {
                        return Err(self.err(format!("{name} takes one argument")));
                    }
                    let (t, mut ops) = self.elementwise(&args[0])?;
                    if matches!(name, "abs" | "floor") {
                        ops.arith += 1;
                    } else {
                        ops.trig += 1;
                    }
                    Ok((t, ops))
                } else if BINARY_MATH.contains(&name) {
                    if args.len() != 2 {
                        return Err(self.err(format!("{name} takes two arguments")));
                    }
                    let (ta, oa) = self.elementwise(&args[0])?;
                    let (tb, ob) = self.elementwise(&args[1])?;
                    let t = self.broadcast(ta, tb)?;
                    let mut ops = oa;
                    ops.add(ob);
                    if name == "atan2" {
                        ops.trig += 1;
                    } else {
                        ops.cmp += 1;
                    }
                    Ok((t, ops))
                } else if name == "col" {
                    match args.as_slice() {
                        [Expr::Var(cloud), j] => match (self.env.get(cloud), literal_int(j)) {
                            (Some(FType::Cloud(cap)), Some(1..=3)) => Ok((
                                FType::Col(*cap),
                                OpCounts {
                                    mem: 1,
                                    ..OpCounts::default()
                                },
                            )),
                            _ => Err(self.err("col(p, j) needs a cloud name and a literal 1..3")),
                        },
                        _ => Err(self.err("col(p, j) needs a cloud name and a literal 1..3")),
                    }
                } else if name == "rows" {
                    match args.as_slice() {
                        [Expr::Var(cloud)] if matches!(self.env.get(cloud), Some(FType::Cloud(_))) => {
                            Ok((FType::Scalar, OpCounts::default()))
                        }
                        _ => Err(self.err("rows(p) needs a cloud name")),
                    }
                } else if STRUCTURAL.contains(&name) {
                    Err(self.err(format!("{name}(...) must be the whole right-hand side")))
                } else {
                    Err(self.err(format!("unknown function `{name}`")))
                }
            }
        }
    }

    fn cloud_arg(&self, expr: &Expr) -> Result<usize, FnlError> {
        match expr {
            Expr::Var(name) => match self.env.get(name) {
                Some(FType::Cloud(cap)) => Ok(*cap),
                _ => Err(self.err(format!("`{name}` is not a cloud"))),
            },
            _ => Err(self.err("expected a cloud name")),
        }
    }

    /// Whole statement right-hand side: type and total op counts.
    fn statement(&self, expr: &Expr) -> Result<(FType, OpCounts), FnlError> {
        let Expr::Call(name, args) = expr else {
            if let Expr::Var(name) = expr {
                if let Some(FType::Cloud(cap)) = self.env.get(name) {
                    let ops = OpCounts {
                        mem: 3,
                        ..OpCounts::default()
                    };
                    return Ok((FType::Cloud(*cap), ops.scaled(*cap as u64)));
                }
            }
            let (t, ops) = self.elementwise(expr)?;
            return Ok((t, ops.scaled(t.elements())));
        };
        match name.as_str() {
            "cloud" => {
                if args.len() != 3 {
                    return Err(self.err("cloud(x, y, z) takes three columns"));
                }
                let mut cap = None;
                let mut ops = OpCounts {
                    mem: 3,
                    ..OpCounts::default()
                };
                for a in args {
                    let (t, o) = self.elementwise(a)?;
                    match t {
                        FType::Col(c) if cap.is_none() || cap == Some(c) => cap = Some(c),
                        FType::Scalar => {}
                        other => return Err(self.err(format!("cloud(...) argument has type {other}"))),
                    }
                    ops.add(o);
                }
                let cap = cap.ok_or_else(|| self.err("cloud(...) needs at least one column argument"))?;
                Ok((FType::Cloud(cap), ops.scaled(cap as u64)))
            }
            "gather" => match args.as_slice() {
                [p, idx] => {
                    self.cloud_arg(p)?;
                    let (t, o) = self.elementwise(idx)?;
                    let FType::Col(cap) = t else {
                        return Err(self.err("gather(p, idx) needs an index column"));
                    };
                    let mut ops = o;
                    ops.mem += 3;
                    Ok((FType::Cloud(cap), ops.scaled(cap as u64)))
                }
                _ => Err(self.err("gather(p, idx) takes two arguments")),
            },
            "first_unique" => match args.as_slice() {
                [k] => {
                    let cap = self.cloud_arg(k)?;
                    let ops = OpCounts {
                        cmp: 1,
                        mem: 2,
                        ..OpCounts::default()
                    };
                    Ok((FType::Col(cap), ops.scaled(cap as u64)))
                }
                _ => Err(self.err("first_unique(k) takes one cloud")),
            },
            "randsel" => match args.as_slice() {
                [p, max_n, seed] => {
                    let cap = self.cloud_arg(p)?;
                    let (Some(max_n), Some(_)) = (literal_int(max_n), literal_int(seed)) else {
                        return Err(self.err("randsel(p, max_n, seed) needs literal max_n and seed"));
                    };
                    let out = cap.min(max_n).max(1);
                    let ops = OpCounts {
                        arith: 2 * cap as u64 + 4 * out as u64,
                        mem: cap as u64 + 2 * out as u64,
                        cmp: out as u64,
                        ..OpCounts::default()
                    };
                    Ok((FType::Col(out), ops))
                }
                _ => Err(self.err("randsel(p, max_n, seed) takes three arguments")),
            },
            "sum" => match args.as_slice() {
                [v] => {
                    let (t, o) = self.elementwise(v)?;
                    let mut ops = o;
                    ops.arith += 1;
                    Ok((FType::Scalar, ops.scaled(t.elements())))
                }
                _ => Err(self.err("sum(v) takes one argument")),
            },
            _ => {
                let (t, ops) = self.elementwise(expr)?;
                Ok((t, ops.scaled(t.elements())))
            }
        }
    }
}

impl Program {
    /// Checks the body against named inputs of the given types and returns
    /// the output types in `outputs` order together with total op counts.
    pub fn check(
        &self,
        inputs: &[(String, DType)],
        outputs: &[String],
    ) -> Result<Typed, FnlError> {
        let mut env = BTreeMap::new();
        for (name, dtype) in inputs {
            let t = FType::from_dtype(dtype).ok_or_else(|| {
                FnlError::Signature(format!("input `{name}` has unsupported type {dtype}"))
            })?;
            env.insert(name.clone(), t);
        }
        let mut ops = OpCounts::default();
        for stmt in &self.stmts {
            if env.contains_key(&stmt.target) {
                return Err(FnlError::Type {
                    line: stmt.line,
                    msg: format!("`{}` is assigned more than once", stmt.target),
                });
            }
            let checker = Checker { env: &env, line: stmt.line };
            let (t, o) = checker.statement(&stmt.expr)?;
            ops.add(o);
            env.insert(stmt.target.clone(), t);
        }
        let mut out_types = Vec::with_capacity(outputs.len());
        for name in outputs {
            if inputs.iter().any(|(n, _)| n == name) {
                return Err(FnlError::Signature(format!("output `{name}` shadows an input")));
            }
            let t = env
                .get(name)
                .ok_or_else(|| FnlError::Signature(format!("output `{name}` is never assigned")))?;
            out_types.push(
                t.to_dtype()
                    .ok_or_else(|| FnlError::Signature(format!("output `{name}` is a column")))?,
            );
        }
        Ok(Typed {
            locals: env,
            outputs: out_types,
            ops,
        })
    }

    /// True when the body maps each element (vector entry or cloud row)
    /// independently of all others, so sharding its principal input
    /// preserves the result. Side inputs are assumed scalar.
    pub fn is_row_local(&self, outputs: &[String]) -> bool {
        if outputs.len() != 1 {
            return false;
        }
        fn expr_ok(e: &Expr) -> bool {
            match e {
                Expr::Num(_) | Expr::Var(_) => true,
                Expr::Neg(a) => expr_ok(a),
                Expr::Bin(_, a, b) => expr_ok(a) && expr_ok(b),
                Expr::Call(name, args) => {
                    (UNARY_MATH.contains(&name.as_str())
                        || BINARY_MATH.contains(&name.as_str())
                        || name == "col")
                        && args.iter().all(expr_ok)
                }
            }
        }
        self.stmts.iter().all(|s| match &s.expr {
            Expr::Call(name, args) if name == "cloud" => args.iter().all(expr_ok),
            Expr::Var(_) => true,
            e => expr_ok(e),
        })
    }
}

// ---------------------------------------------------------------------------
// evaluation

#[derive(Debug, Clone, PartialEq)]
pub enum FVal {
    Scalar(f64),
    Array(Vec<f64>),
    Cloud(Vec<[f64; 3]>),
}

struct Eval<'a> {
    env: &'a BTreeMap<String, FVal>,
}

impl Eval<'_> {
    fn len_of(&self, expr: &Expr) -> Result<Option<usize>, FnlError> {
        Ok(match expr {
            Expr::Num(_) => None,
            Expr::Var(name) => match &self.env[name] {
                FVal::Scalar(_) => None,
                FVal::Array(v) => Some(v.len()),
                FVal::Cloud(c) => Some(c.len()),
            },
            Expr::Neg(a) => self.len_of(a)?,
            Expr::Bin(_, a, b) => merge_len(self.len_of(a)?, self.len_of(b)?)?,
            Expr::Call(name, args) => match name.as_str() {
                "col" => match &args[0] {
                    Expr::Var(p) => match &self.env[p] {
                        FVal::Cloud(c) => Some(c.len()),
                        _ => unreachable!("checked"),
                    },
                    _ => unreachable!("checked"),
                },
                "rows" => None,
                _ => {
                    let mut len = None;
                    for a in args {
                        len = merge_len(len, self.len_of(a)?)?;
                    }
                    len
                }
            },
        })
    }

    /// Evaluates an elementwise expression at element `i` in a fixed
    /// left-to-right order.
    fn at(&self, expr: &Expr, i: usize) -> f64 {
        match expr {
            Expr::Num(v) => *v,
            Expr::Var(name) => match &self.env[name] {
                FVal::Scalar(v) => *v,
                FVal::Array(v) => v[i],
                FVal::Cloud(_) => unreachable!("checked"),
            },
            Expr::Neg(a) => -self.at(a, i),
            Expr::Bin(op, a, b) => {
                let x = self.at(a, i);
                let y = self.at(b, i);
                op.apply(x, y)
            }
            Expr::Call(name, args) => match name.as_str() {
                "col" => {
                    let (Expr::Var(p), Some(j)) = (&args[0], literal_int(&args[1])) else {
                        unreachable!("checked")
                    };
                    match &self.env[p] {
                        FVal::Cloud(c) => c[i][j - 1],
                        _ => unreachable!("checked"),
                    }
                }
                "rows" => match &args[0] {
                    Expr::Var(p) => match &self.env[p] {
                        FVal::Cloud(c) => c.len() as f64,
                        _ => unreachable!("checked"),
                    },
                    _ => unreachable!("checked"),
                },
                n if UNARY_MATH.contains(&n) => apply_unary(n, self.at(&args[0], i)),
                n => {
                    let x = self.at(&args[0], i);
                    let y = self.at(&args[1], i);
                    apply_binary(n, x, y)
                }
            },
        }
    }

    fn array(&self, expr: &Expr) -> Result<FVal, FnlError> {
        match self.len_of(expr)? {
            None => Ok(FVal::Scalar(self.at(expr, 0))),
            Some(n) => Ok(FVal::Array((0..n).map(|i| self.at(expr, i)).collect())),
        }
    }

    fn cloud(&self, expr: &Expr) -> Result<&Vec<[f64; 3]>, FnlError> {
        match expr {
            Expr::Var(name) => match &self.env[name] {
                FVal::Cloud(c) => Ok(c),
                _ => unreachable!("checked"),
            },
            _ => unreachable!("checked"),
        }
    }

    fn statement(&self, expr: &Expr) -> Result<FVal, FnlError> {
        if let Expr::Var(name) = expr {
            return Ok(self.env[name].clone());
        }
        let Expr::Call(name, args) = expr else {
            return self.array(expr);
        };
        match name.as_str() {
            "cloud" => {
                let mut len = None;
                for a in args {
                    len = merge_len(len, self.len_of(a)?)?;
                }
                let n = len.unwrap_or(0);
                Ok(FVal::Cloud(
                    (0..n)
                        .map(|i| [self.at(&args[0], i), self.at(&args[1], i), self.at(&args[2], i)])
                        .collect(),
                ))
            }
            "gather" => {
                let points = self.cloud(&args[0])?;
                let FVal::Array(idx) = self.array(&args[1])? else {
                    return Err(FnlError::Shape("gather index is not a column".into()));
                };
                let mut out = Vec::with_capacity(idx.len());
                for &k in &idx {
                    let row = points.get(k as usize).filter(|_| k >= 0.0 && k.fract() == 0.0);
                    let row = row.ok_or_else(|| FnlError::Shape(format!("gather index {k} out of range")))?;
                    out.push(*row);
                }
                Ok(FVal::Cloud(out))
            }
            "first_unique" => {
                let keys = self.cloud(&args[0])?;
                Ok(FVal::Array(
                    kernels::first_unique_rows(keys).into_iter().map(|i| i as f64).collect(),
                ))
            }
            "randsel" => {
                let points = self.cloud(&args[0])?;
                let max_n = literal_int(&args[1]).expect("checked");
                let seed = literal_int(&args[2]).expect("checked") as u64;
                Ok(FVal::Array(
                    kernels::random_indices(points.len(), max_n, seed)
                        .into_iter()
                        .map(|i| i as f64)
                        .collect(),
                ))
            }
            "sum" => {
                let total = match self.array(&args[0])? {
                    FVal::Scalar(v) => 0.0 + v,
                    FVal::Array(v) => v.iter().fold(0.0, |acc, x| acc + x),
                    FVal::Cloud(_) => unreachable!("checked"),
                };
                Ok(FVal::Scalar(total))
            }
            _ => self.array(expr),
        }
    }
}

fn merge_len(a: Option<usize>, b: Option<usize>) -> Result<Option<usize>, FnlError> {
    match (a, b) {
        (Some(x), Some(y)) if x != y => Err(FnlError::Shape(format!("lengths {x} and {y} differ"))),
        (Some(x), _) | (_, Some(x)) => Ok(Some(x)),
        (None, None) => Ok(None),
    }
}

impl Program {
    /// Evaluates a checked program. `inputs` are bound by name; returns the
    /// outputs in `outputs` order.
    pub fn eval(
        &self,
        inputs: Vec<(String, FVal)>,
        outputs: &[String],
    ) -> Result<Vec<FVal>, FnlError> {
        let mut env: BTreeMap<String, FVal> = inputs.into_iter().collect();
        for stmt in &self.stmts {
            let value = Eval { env: &env }.statement(&stmt.expr)?;
            env.insert(stmt.target.clone(), value);
        }
        outputs
            .iter()
            .map(|name| {
                env.remove(name)
                    .ok_or_else(|| FnlError::Signature(format!("output `{name}` is never assigned")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_precedence() {
        let p = Program::parse("y = 1 + 2 * -x < 3 % comment\n\n% full comment").unwrap();
        assert_eq!(p.stmts.len(), 1);
        let Expr::Bin(BinOp::Lt, lhs, _) = &p.stmts[0].expr else { panic!() };
        let Expr::Bin(BinOp::Add, _, mul) = lhs.as_ref() else { panic!() };
        assert!(matches!(mul.as_ref(), Expr::Bin(BinOp::Mul, _, _)));
    }

    #[test]
    fn rejects_bad_syntax() {
        assert!(Program::parse("y 1").is_err());
        assert!(Program::parse("y = (1 + 2").is_err());
        assert!(Program::parse("y = 1 $ 2").is_err());
        assert!(Program::parse("y = f(1,)").is_err());
    }

    #[test]
    fn counts_code_lines() {
        assert_eq!(Program::code_lines("a = 1\n\n% c\n  b = a\n"), 2);
    }

    #[test]
    fn vector_broadcast_eval() {
        let p = Program::parse("y = u * 2 + s\nz = sum(y)").unwrap();
        let inputs = vec![("u".to_string(), DType::Vector(3)), ("s".to_string(), DType::Scalar)];
        let typed = p.check(&inputs, &names(&["y", "z"])).unwrap();
        assert_eq!(typed.outputs, vec![DType::Vector(3), DType::Scalar]);
        assert_eq!(typed.ops.arith, 3 * 2 + 3);
        let out = p
            .eval(
                vec![
                    ("u".into(), FVal::Array(vec![1.0, 2.0, 3.0])),
                    ("s".into(), FVal::Scalar(0.5)),
                ],
                &names(&["y", "z"]),
            )
            .unwrap();
        assert_eq!(out[0], FVal::Array(vec![2.5, 4.5, 6.5]));
        assert_eq!(out[1], FVal::Scalar(13.5));
    }

    #[test]
    fn cloud_pipeline() {
        let src = "k = cloud(floor(col(p,1) / 1), floor(col(p,2) / 1), floor(col(p,3) / 1))\nidx = first_unique(k)\nq = gather(p, idx)";
        let p = Program::parse(src).unwrap();
        let typed = p
            .check(&[("p".into(), DType::PointCloud(8))], &names(&["q"]))
            .unwrap();
        assert_eq!(typed.outputs, vec![DType::PointCloud(8)]);
        let cloud = vec![[0.1, 0.1, 0.0], [0.2, 0.2, 0.0], [1.1, 0.0, 0.0]];
        let out = p
            .eval(vec![("p".into(), FVal::Cloud(cloud))], &names(&["q"]))
            .unwrap();
        assert_eq!(out[0], FVal::Cloud(vec![[0.1, 0.1, 0.0], [1.1, 0.0, 0.0]]));
    }

    #[test]
    fn type_errors() {
        let cloud_in = [("p".to_string(), DType::PointCloud(4))];
        for src in [
            "y = p + 1",
            "y = gather(p, 1) + 1",
            "y = col(p, 4)",
            "y = q",
            "y = 1\ny = 2",
            "y = foo(1)",
        ] {
            let p = Program::parse(src).unwrap();
            assert!(p.check(&cloud_in, &names(&["y"])).is_err(), "{src}");
        }
        let p = Program::parse("y = col(p, 1)").unwrap();
        assert!(matches!(
            p.check(&cloud_in, &names(&["y"])),
            Err(FnlError::Signature(_))
        ));
    }

    #[test]
    fn row_locality() {
        let local = Program::parse("q = cloud(col(p,1) * 2, col(p,2), col(p,3) + 1)").unwrap();
        assert!(local.is_row_local(&names(&["q"])));
        let global = Program::parse("q = gather(p, randsel(p, 3, 1))").unwrap();
        assert!(!global.is_row_local(&names(&["q"])));
        let counts = Program::parse("y = u * rows(p)").unwrap();
        assert!(!counts.is_row_local(&names(&["y"])));
    }

    #[test]
    fn runtime_length_mismatch() {
        let p = Program::parse("y = cloud(col(a,1), col(b,1), 0)").unwrap();
        let inputs = [("a".to_string(), DType::PointCloud(4)), ("b".to_string(), DType::PointCloud(4))];
        p.check(&inputs, &names(&["y"])).unwrap();
        let err = p
            .eval(
                vec![
                    ("a".into(), FVal::Cloud(vec![[0.0; 3]; 2])),
                    ("b".into(), FVal::Cloud(vec![[0.0; 3]; 3])),
                ],
                &names(&["y"]),
            )
            .unwrap_err();
        assert!(matches!(err, FnlError::Shape(_)));
    }
}
