//! C templates for block kernels and function bodies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::extractor::FlatIR;
use crate::fnl::{BinOp, Expr, FType, Program, Stmt};
use crate::model::infer::shard_sizes;
use crate::model::{DType, MapOp, ReduceOp};
use crate::simulator::{Kernel, SimError, Value};
use crate::toolbox::ToolboxRegistry;

use super::CodegenError;

/// Indented line writer.
#[derive(Default)]
pub(crate) struct W {
    pub buf: String,
    depth: usize,
}

impl W {
    pub fn line(&mut self, s: impl AsRef<str>) {
        let s = s.as_ref();
        if !s.is_empty() {
            for _ in 0..self.depth {
                self.buf.push_str("    ");
            }
            self.buf.push_str(s);
        }
        self.buf.push('\n');
    }

    pub fn open(&mut self, s: impl AsRef<str>) {
        self.line(s);
        self.depth += 1;
    }

    pub fn close(&mut self, s: impl AsRef<str>) {
        self.depth -= 1;
        self.line(s);
    }
}

/// Shortest round-trip C literal.
pub(crate) fn c_num(x: f64) -> String {
    if x.is_nan() {
        "NAN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "HUGE_VAL".into() } else { "(-HUGE_VAL)".into() }
    } else if x.is_sign_negative() {
        format!("({x:?})")
    } else {
        format!("{x:?}")
    }
}

pub(crate) fn c_string(s: &str) -> String {
    let mut out = String::from("\"");
    for b in s.bytes() {
        match b {
            b'"' => out.push_str("\\\""),
            b'\\' => out.push_str("\\\\"),
            b'?' => out.push_str("\\?"),
            0x20..=0x7e => out.push(b as char),
            _ => {
                let _ = write!(out, "\\{b:03o}");
            }
        }
    }
    out.push('"');
    out
}

/// Text safe inside a C block comment.
pub(crate) fn c_comment(s: &str) -> String {
    s.replace("*/", "* /").replace("/*", "/ *").replace(['\n', '\r'], " ")
}

fn sanitize(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        s.push('_');
    }
    s
}

/// Injective assignment of C identifiers `{prefix}{sanitized}` in the
/// order names are requested.
#[derive(Default)]
pub(crate) struct Idents {
    taken: BTreeSet<String>,
}

impl Idents {
    pub fn fresh(&mut self, prefix: &str, name: &str) -> String {
        let base = format!("{prefix}{}", sanitize(name));
        let mut id = base.clone();
        let mut k = 2;
        while !self.taken.insert(id.clone()) {
            id = format!("{base}_{k}");
            k += 1;
        }
        id
    }
}

pub(crate) fn storage(cap: usize) -> usize {
    cap.max(1)
}

pub(crate) fn cloud_type(cap: usize) -> String {
    format!("blx_cloud_{}", storage(cap))
}

/// A C object holding one value.
#[derive(Debug, Clone)]
pub(crate) struct Obj {
    pub id: String,
    pub dtype: DType,
}

impl Obj {
    fn len(&self) -> usize {
        match self.dtype {
            DType::Scalar => 1,
            DType::Vector(n) => n,
            DType::Matrix(r, c) => r * c,
            _ => 0,
        }
    }

    fn dense(&self) -> bool {
        matches!(self.dtype, DType::Scalar | DType::Vector(_) | DType::Matrix(..))
    }

    /// Element `i` of a dense value; length-one values broadcast.
    fn at(&self, i: &str) -> String {
        match self.dtype {
            DType::Scalar => self.id.clone(),
            _ if self.len() == 1 => format!("{}[0]", self.id),
            _ => format!("{}[{i}]", self.id),
        }
    }

    fn cap(&self) -> usize {
        match self.dtype {
            DType::PointCloud(c) => c,
            _ => 0,
        }
    }

    /// C declaration text without the trailing semicolon.
    pub fn decl(&self) -> String {
        match &self.dtype {
            DType::Scalar => format!("double {}", self.id),
            DType::PointCloud(c) => format!("{} {}", cloud_type(*c), self.id),
            _ => format!("double {}[{}]", self.id, storage(self.len())),
        }
    }
}

fn missing(what: impl Into<String>) -> CodegenError {
    CodegenError::MissingTemplate(what.into())
}

/// Compiled blocks of one IR with their C objects.
pub(crate) struct Blocks<'a> {
    pub ir: &'a FlatIR,
    pub kernels: Vec<Kernel>,
    pub vars: BTreeMap<String, Obj>,
    pub states: BTreeMap<usize, Obj>,
    pub idents: Idents,
}

impl<'a> Blocks<'a> {
    pub fn new(ir: &'a FlatIR, registry: &ToolboxRegistry) -> Result<Blocks<'a>, CodegenError> {
        let mut idents = Idents::default();
        let mut vars = BTreeMap::new();
        for v in &ir.vars {
            if v.dtype.is_bus() {
                return Err(missing(format!("bus signal `{}`", v.name)));
            }
            vars.insert(
                v.name.clone(),
                Obj {
                    id: idents.fresh("g_", &v.name),
                    dtype: v.dtype.clone(),
                },
            );
        }
        let mut kernels = Vec::with_capacity(ir.blocks.len());
        let mut states = BTreeMap::new();
        for (b, block) in ir.blocks.iter().enumerate() {
            let in_types = block
                .inputs
                .iter()
                .map(|v| {
                    vars.get(v)
                        .map(|o: &Obj| o.dtype.clone())
                        .ok_or_else(|| CodegenError::InvalidIr(format!("`{}` reads undeclared `{v}`", block.uname)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            for v in &block.outputs {
                if !vars.contains_key(v) {
                    return Err(CodegenError::InvalidIr(format!("`{}` writes undeclared `{v}`", block.uname)));
                }
            }
            let k = Kernel::compile(&block.uname, &block.kind, &block.params, &in_types, registry).map_err(|e| match e {
                SimError::MissingKernel(what) => missing(what),
                other => CodegenError::InvalidIr(other.to_string()),
            })?;
            if let Kernel::Delay { .. } = k {
                states.insert(
                    b,
                    Obj {
                        id: idents.fresh("s_", &block.uname),
                        dtype: in_types[0].clone(),
                    },
                );
            }
            kernels.push(k);
        }
        Ok(Blocks {
            ir,
            kernels,
            vars,
            states,
            idents,
        })
    }

    pub fn input(&self, b: usize, i: usize) -> &Obj {
        &self.vars[&self.ir.blocks[b].inputs[i]]
    }

    pub fn output(&self, b: usize, i: usize) -> &Obj {
        &self.vars[&self.ir.blocks[b].outputs[i]]
    }

    pub fn cloud_caps(&self) -> BTreeSet<usize> {
        self.vars
            .values()
            .chain(self.states.values())
            .filter_map(|o| match o.dtype {
                DType::PointCloud(c) => Some(storage(c)),
                _ => None,
            })
            .collect()
    }

    /// Static definition of a delay state, initialized from its parameter.
    pub fn state_definition(&self, b: usize) -> String {
        let s = &self.states[&b];
        let Kernel::Delay { init } = &self.kernels[b] else {
            unreachable!("states belong to delays")
        };
        let init = match init {
            Value::Scalar(x) => c_num(*x),
            Value::Vector(v) | Value::Matrix { data: v, .. } if !v.is_empty() => {
                format!("{{{}}}", v.iter().map(|x| c_num(*x)).collect::<Vec<_>>().join(", "))
            }
            _ => "{0}".into(),
        };
        format!("static {} = {init};", s.decl())
    }

    pub fn is_delay(&self, b: usize) -> bool {
        matches!(self.kernels[b], Kernel::Delay { .. })
    }

    /// Copies a delay's input into its state.
    pub fn latch(&self, w: &mut W, b: usize) -> Result<(), CodegenError> {
        let uname = &self.ir.blocks[b].uname;
        w.line(format!("/* latch {} */", c_comment(uname)));
        copy(w, self.input(b, 0), &self.states[&b], uname)
    }

    /// Statements computing block `b`'s outputs from its inputs.
    pub fn body(&self, w: &mut W, b: usize) -> Result<(), CodegenError> {
        let block = &self.ir.blocks[b];
        let uname = block.uname.as_str();
        w.line(format!("/* {} ({}) */", c_comment(uname), c_comment(&block.kind.tag())));
        let ins: Vec<&Obj> = (0..block.inputs.len()).map(|i| self.input(b, i)).collect();
        let outs: Vec<&Obj> = (0..block.outputs.len()).map(|i| self.output(b, i)).collect();
        let need = |n_in: usize, n_out: usize| {
            if ins.len() < n_in || outs.len() < n_out {
                Err(CodegenError::InvalidIr(format!("`{uname}` has too few ports")))
            } else {
                Ok(())
            }
        };
        match &self.kernels[b] {
            Kernel::Input | Kernel::Output => {}
            Kernel::Const(v) => {
                need(0, 1)?;
                let y = outs[0];
                match v {
                    Value::Scalar(x) if y.dtype == DType::Scalar => w.line(format!("{} = {};", y.id, c_num(*x))),
                    _ => {
                        let data = v.flat();
                        if data.len() != y.len() || !y.dense() {
                            return Err(CodegenError::InvalidIr(format!("`{uname}` constant does not fit its signal")));
                        }
                        w.open("{");
                        w.line(format!("static const double c[{}] = {};", storage(data.len()), init_list(&data)));
                        w.line(format!("for (size_t i = 0; i < {}; i++) {}[i] = c[i];", data.len(), y.id));
                        w.close("}");
                    }
                }
            }
            Kernel::Gain(g) => {
                need(1, 1)?;
                if let [g] = g.as_slice() {
                    let g = c_num(*g);
                    map(w, ins[0], outs[0], &|x| format!("{g} * {x}"))?;
                } else {
                    let (x, y) = (ins[0], outs[0]);
                    if !x.dense() || x.len() != g.len() || y.len() != g.len() {
                        return Err(CodegenError::InvalidIr(format!("`{uname}` gain does not fit its input")));
                    }
                    w.open("{");
                    w.line(format!("static const double k[{}] = {};", storage(g.len()), init_list(g)));
                    w.line(format!("for (size_t i = 0; i < {}; i++) {} = k[i] * {};", g.len(), y.at("i"), x.at("i")));
                    w.close("}");
                }
            }
            Kernel::Sum(neg) => {
                need(1, 1)?;
                fold(w, &ins, outs[0], uname, |i, acc, x| match (i, neg.get(i).copied().unwrap_or(false)) {
                    (0, false) => x.to_string(),
                    (0, true) => format!("(-{x})"),
                    (_, false) => format!("({acc} + {x})"),
                    (_, true) => format!("({acc} - {x})"),
                })?;
            }
            Kernel::Product(div) => {
                need(1, 1)?;
                fold(w, &ins, outs[0], uname, |i, acc, x| match (i, div.get(i).copied().unwrap_or(false)) {
                    (0, false) => x.to_string(),
                    (0, true) => format!("(1.0 / {x})"),
                    (_, false) => format!("({acc} * {x})"),
                    (_, true) => format!("({acc} / {x})"),
                })?;
            }
            Kernel::Saturate(lo, hi) => {
                need(1, 1)?;
                let (lo, hi) = (c_num(*lo), c_num(*hi));
                map(w, ins[0], outs[0], &|x| format!("blx_sat({x}, {lo}, {hi})"))?;
            }
            Kernel::Switch(th) => {
                need(3, 1)?;
                if ins[1].dtype != DType::Scalar {
                    return Err(missing(format!("Switch control of type {}", ins[1].dtype)));
                }
                w.open(format!("if ({} >= {}) {{", ins[1].id, c_num(*th)));
                copy(w, ins[0], outs[0], uname)?;
                w.close("} else {");
                w.depth += 1;
                copy(w, ins[2], outs[0], uname)?;
                w.close("}");
            }
            Kernel::MatMul => {
                need(2, 1)?;
                matmul(w, ins[0], ins[1], outs[0], uname)?;
            }
            Kernel::Map(op) => {
                need(1, 1)?;
                let op = *op;
                map(w, ins[0], outs[0], &|x| map_expr(op, x))?;
            }
            Kernel::Reduce(op) => {
                need(1, 1)?;
                let (x, y) = (ins[0], outs[0]);
                if !x.dense() {
                    return Err(missing(format!("Reduce over {}", x.dtype)));
                }
                match x.len() {
                    0 => w.line(format!("{} = 0.0;", y.id)),
                    1 => w.line(format!("{} = {};", y.id, x.at("0"))),
                    n => {
                        w.open("{");
                        w.line(format!("double acc = {}[0];", x.id));
                        let step = match op {
                            ReduceOp::Sum => format!("acc + {}[i]", x.id),
                            ReduceOp::Prod => format!("acc * {}[i]", x.id),
                            ReduceOp::Min => format!("fmin(acc, {}[i])", x.id),
                            ReduceOp::Max => format!("fmax(acc, {}[i])", x.id),
                        };
                        w.line(format!("for (size_t i = 1; i < {n}; i++) acc = {step};"));
                        w.line(format!("{} = acc;", y.id));
                        w.close("}");
                    }
                }
            }
            Kernel::Concat => {
                need(1, 1)?;
                let y = outs[0];
                let total: usize = ins.iter().map(|x| x.len()).sum();
                if ins.iter().any(|x| !x.dense()) || y.len() != total {
                    return Err(CodegenError::InvalidIr(format!("`{uname}` concatenation does not fit")));
                }
                let mut at = 0;
                for x in &ins {
                    dense_range(w, x, 0, y, at, x.len());
                    at += x.len();
                }
            }
            Kernel::Slice { start, len } => {
                need(1, 1)?;
                let (x, y) = (ins[0], outs[0]);
                let take = len.unwrap_or(1);
                if !x.dense() || *start == 0 || start - 1 + take > x.len() || y.len() != take {
                    return Err(CodegenError::InvalidIr(format!("`{uname}` slice out of range")));
                }
                dense_range(w, x, start - 1, y, 0, take);
            }
            Kernel::Delay { .. } => {
                need(1, 1)?;
                copy(w, &self.states[&b], outs[0], uname)?;
            }
            Kernel::Function {
                program,
                inputs,
                outputs,
            } => {
                if inputs.len() != ins.len() || outputs.len() != outs.len() {
                    return Err(CodegenError::InvalidIr(format!("`{uname}` signature does not match its ports")));
                }
                let named: Vec<(String, &Obj)> = inputs.iter().cloned().zip(ins.iter().copied()).collect();
                let outs: Vec<(String, &Obj)> = outputs.iter().cloned().zip(outs.iter().copied()).collect();
                function(w, program, &named, &outs, uname)?;
            }
            Kernel::PointTransform { r, t } => {
                need(1, 1)?;
                let (x, y) = (ins[0], outs[0]);
                cloud_io(x, y, uname)?;
                w.line(format!("{}.n = {}.n;", y.id, x.id));
                w.open(format!("for (size_t i = 0; i < {}.n; i++) {{", x.id));
                w.line(format!(
                    "double px = {x}.p[i][0], py = {x}.p[i][1], pz = {x}.p[i][2];",
                    x = x.id
                ));
                for i in 0..3 {
                    w.line(format!(
                        "{}.p[i][{i}] = {} * px + {} * py + {} * pz + {};",
                        y.id,
                        c_num(r[i][0]),
                        c_num(r[i][1]),
                        c_num(r[i][2]),
                        c_num(t[i])
                    ));
                }
                w.close("}");
            }
            Kernel::VoxelGrid { leaf, centroid } => {
                need(1, 1)?;
                let (x, y) = (ins[0], outs[0]);
                cloud_io(x, y, uname)?;
                let cap = storage(x.cap());
                w.open("{");
                w.line(format!("static double keys[{cap}][3], firsts[{cap}], sums[{cap}][4];"));
                w.line(format!("static size_t slot[{cap}];"));
                w.line(format!(
                    "if (blx_voxel_grid({x}.p, {x}.n, {}, {}, keys, firsts, slot, sums, {y}.p, &{y}.n) != 0)",
                    c_num(*leaf),
                    i32::from(*centroid),
                    x = x.id,
                    y = y.id
                ));
                w.line(format!("    blx_fail({});", c_string(&format!("{uname}: voxel size must be positive"))));
                w.close("}");
            }
            Kernel::RandomDownsample { max_n, seed } => {
                need(1, 1)?;
                let (x, y) = (ins[0], outs[0]);
                if !matches!((&x.dtype, &y.dtype), (DType::PointCloud(_), DType::PointCloud(_))) {
                    return Err(missing(format!("`{uname}` on {} -> {}", x.dtype, y.dtype)));
                }
                let cap = storage(x.cap());
                w.open("{");
                w.line(format!("static size_t perm[{cap}];"));
                w.line(format!("static unsigned char mark[{cap}];"));
                w.line(format!("static double idx[{cap}];"));
                w.line("size_t m;");
                w.line(format!(
                    "blx_random_indices({x}.n, {max_n}, UINT64_C({seed}), perm, mark, idx, &m);",
                    x = x.id
                ));
                check_cap(w, "m", y, uname);
                w.line(format!("blx_gather({x}.p, {x}.n, idx, m, {y}.p);", x = x.id, y = y.id));
                w.line(format!("{}.n = m;", y.id));
                w.close("}");
            }
            Kernel::Splitter(k) => {
                need(1, *k)?;
                split(w, ins[0], &outs, *k, uname)?;
            }
            Kernel::Merger => {
                need(1, 1)?;
                merge(w, &ins, outs[0], uname)?;
            }
        }
        Ok(())
    }
}

fn init_list(data: &[f64]) -> String {
    if data.is_empty() {
        return "{0}".into();
    }
    format!("{{{}}}", data.iter().map(|x| c_num(*x)).collect::<Vec<_>>().join(", "))
}

fn map_expr(op: MapOp, x: &str) -> String {
    match op {
        MapOp::Neg => format!("-{x}"),
        MapOp::Abs => format!("fabs({x})"),
        MapOp::Sqrt => format!("sqrt({x})"),
        MapOp::Sin => format!("sin({x})"),
        MapOp::Cos => format!("cos({x})"),
        MapOp::Tan => format!("tan({x})"),
        MapOp::Atan => format!("atan({x})"),
        MapOp::Exp => format!("exp({x})"),
        MapOp::Log => format!("log({x})"),
        MapOp::Square => format!("{x} * {x}"),
        MapOp::Floor => format!("floor({x})"),
    }
}

fn check_cap(w: &mut W, n: &str, y: &Obj, uname: &str) {
    w.line(format!(
        "if ({n} > {}) blx_fail({});",
        y.cap(),
        c_string(&format!("{uname}: point cloud exceeds capacity {}", y.cap()))
    ));
}

fn cloud_io(x: &Obj, y: &Obj, uname: &str) -> Result<(), CodegenError> {
    match (&x.dtype, &y.dtype) {
        (DType::PointCloud(a), DType::PointCloud(b)) if b >= a => Ok(()),
        _ => Err(missing(format!("`{uname}` on {} -> {}", x.dtype, y.dtype))),
    }
}

/// `y = f(x)` elementwise; clouds per coordinate.
fn map(w: &mut W, x: &Obj, y: &Obj, f: &dyn Fn(&str) -> String) -> Result<(), CodegenError> {
    match &x.dtype {
        DType::Scalar if y.dtype == DType::Scalar => w.line(format!("{} = {};", y.id, f(&x.id))),
        DType::PointCloud(_) => {
            cloud_io(x, y, "map")?;
            w.line(format!("{}.n = {}.n;", y.id, x.id));
            w.line(format!(
                "for (size_t i = 0; i < {x}.n; i++) for (int j = 0; j < 3; j++) {y}.p[i][j] = {};",
                f(&format!("{}.p[i][j]", x.id)),
                x = x.id,
                y = y.id
            ));
        }
        _ if x.dense() && x.len() == y.len() && y.dtype != DType::Scalar => {
            w.line(format!(
                "for (size_t i = 0; i < {}; i++) {}[i] = {};",
                x.len(),
                y.id,
                f(&format!("{}[i]", x.id))
            ));
        }
        _ => return Err(missing(format!("elementwise map {} -> {}", x.dtype, y.dtype))),
    }
    Ok(())
}

/// Left fold over inputs with scalar broadcast.
fn fold(
    w: &mut W,
    ins: &[&Obj],
    y: &Obj,
    uname: &str,
    op: impl Fn(usize, &str, &str) -> String,
) -> Result<(), CodegenError> {
    let n = y.len();
    if !y.dense() || ins.iter().any(|x| !x.dense() || (x.len() != 1 && x.len() != n)) {
        return Err(CodegenError::InvalidIr(format!("`{uname}` operands do not agree")));
    }
    let mut acc = String::new();
    for (i, x) in ins.iter().enumerate() {
        acc = op(i, &acc, &x.at("i"));
    }
    if y.dtype == DType::Scalar {
        w.line(format!("{} = {acc};", y.id));
    } else {
        w.line(format!("for (size_t i = 0; i < {n}; i++) {} = {acc};", y.at("i")));
    }
    Ok(())
}

fn matmul(w: &mut W, a: &Obj, b: &Obj, y: &Obj, uname: &str) -> Result<(), CodegenError> {
    let bad = || missing(format!("`{uname}` MatMul of {} and {}", a.dtype, b.dtype));
    let DType::Matrix(rows, inner) = a.dtype else {
        return Err(bad());
    };
    let cols = match b.dtype {
        DType::Matrix(r, c) if r == inner => c,
        DType::Vector(n) if n == inner => 1,
        _ => return Err(bad()),
    };
    if inner == 0 || y.len() != rows * cols {
        return Err(bad());
    }
    w.open(format!("for (size_t i = 0; i < {rows}; i++) {{"));
    w.open(format!("for (size_t j = 0; j < {cols}; j++) {{"));
    w.line(format!("double acc = {a}[i * {inner}] * {b}[j];", a = a.id, b = b.id));
    if inner > 1 {
        w.line(format!(
            "for (size_t k = 1; k < {inner}; k++) acc = acc + {a}[i * {inner} + k] * {b}[k * {cols} + j];",
            a = a.id,
            b = b.id
        ));
    }
    w.line(format!("{}[i * {cols} + j] = acc;", y.id));
    w.close("}");
    w.close("}");
    Ok(())
}

/// `y[to..to+n] = x[from..from+n]` over flat dense data.
fn dense_range(w: &mut W, x: &Obj, from: usize, y: &Obj, to: usize, n: usize) {
    let elem = |o: &Obj, k: usize| match o.dtype {
        DType::Scalar => o.id.clone(),
        _ => format!("{}[{k}]", o.id),
    };
    if n == 1 || x.dtype == DType::Scalar || y.dtype == DType::Scalar {
        for k in 0..n {
            w.line(format!("{} = {};", elem(y, to + k), elem(x, from + k)));
        }
    } else {
        w.line(format!(
            "for (size_t i = 0; i < {n}; i++) {}[{to} + i] = {}[{from} + i];",
            y.id, x.id
        ));
    }
}

/// Value copy; cloud rows are checked against the destination capacity.
fn copy(w: &mut W, x: &Obj, y: &Obj, uname: &str) -> Result<(), CodegenError> {
    match (&x.dtype, &y.dtype) {
        (DType::PointCloud(a), DType::PointCloud(b)) => {
            if a > b {
                check_cap(w, &format!("{}.n", x.id), y, uname);
            }
            w.line(format!("{}.n = {}.n;", y.id, x.id));
            w.line(format!("blx_copy_rows({y}.p, {x}.p, {x}.n);", x = x.id, y = y.id));
        }
        _ if x.dense() && y.dense() && x.len() == y.len() => dense_range(w, x, 0, y, 0, x.len()),
        _ => return Err(CodegenError::InvalidIr(format!("`{uname}` copies {} into {}", x.dtype, y.dtype))),
    }
    Ok(())
}

fn split(w: &mut W, x: &Obj, outs: &[&Obj], k: usize, uname: &str) -> Result<(), CodegenError> {
    match x.dtype {
        DType::Vector(n) => {
            let mut at = 0;
            for (y, m) in outs.iter().zip(shard_sizes(n, k)) {
                if y.len() != m {
                    return Err(CodegenError::InvalidIr(format!("`{uname}` shard sizes do not match")));
                }
                dense_range(w, x, at, y, 0, m);
                at += m;
            }
        }
        DType::PointCloud(_) => {
            w.open("{");
            w.line(format!("size_t base = {x}.n / {k}, extra = {x}.n % {k}, at = 0, m;", x = x.id));
            for (i, y) in outs.iter().enumerate() {
                if !matches!(y.dtype, DType::PointCloud(_)) {
                    return Err(CodegenError::InvalidIr(format!("`{uname}` shard is not a cloud")));
                }
                w.line(format!("m = base + ({i} < extra ? 1 : 0);"));
                check_cap(w, "m", y, uname);
                w.line(format!("{}.n = m;", y.id));
                w.line(format!("blx_copy_rows({}.p, {}.p + at, m);", y.id, x.id));
                if i + 1 < outs.len() {
                    w.line("at += m;");
                }
            }
            w.close("}");
        }
        _ => return Err(missing(format!("`{uname}` split of {}", x.dtype))),
    }
    Ok(())
}

fn merge(w: &mut W, ins: &[&Obj], y: &Obj, uname: &str) -> Result<(), CodegenError> {
    match y.dtype {
        DType::PointCloud(_) => {
            w.open("{");
            w.line("size_t at = 0;");
            for x in ins {
                if !matches!(x.dtype, DType::PointCloud(_)) {
                    return Err(CodegenError::InvalidIr(format!("`{uname}` merges a non-cloud")));
                }
                check_cap(w, &format!("at + {}.n", x.id), y, uname);
                w.line(format!("blx_copy_rows({y}.p + at, {x}.p, {x}.n);", x = x.id, y = y.id));
                w.line(format!("at += {}.n;", x.id));
            }
            w.line(format!("{}.n = at;", y.id));
            w.close("}");
        }
        DType::Vector(n) => {
            let mut at = 0;
            for x in ins {
                if !matches!(x.dtype, DType::Vector(_)) {
                    return Err(CodegenError::InvalidIr(format!("`{uname}` merges a non-vector")));
                }
                if at + x.len() > n {
                    return Err(CodegenError::InvalidIr(format!("`{uname}` merge overflows")));
                }
                dense_range(w, x, 0, y, at, x.len());
                at += x.len();
            }
        }
        _ => return Err(missing(format!("`{uname}` merge into {}", y.dtype))),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// function bodies

struct Body<'a> {
    locals: &'a BTreeMap<String, FType>,
}

fn local(name: &str) -> String {
    format!("l_{name}")
}

impl Body<'_> {
    /// Element `i` of an elementwise expression.
    fn expr(&self, e: &Expr) -> String {
        match e {
            Expr::Num(v) => c_num(*v),
            Expr::Var(n) => match self.locals[n] {
                FType::Scalar => local(n),
                _ => format!("{}[i]", local(n)),
            },
            Expr::Neg(a) => format!("(-{})", self.expr(a)),
            Expr::Bin(op, a, b) => {
                let (a, b) = (self.expr(a), self.expr(b));
                match op {
                    BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => format!("({a} {} {b})", op.symbol()),
                    BinOp::Ne => format!("(({a} != {b}) ? 1.0 : 0.0)"),
                    _ => format!("(({a} {} {b}) ? 1.0 : 0.0)", op.symbol()),
                }
            }
            Expr::Call(name, args) => match (name.as_str(), args.as_slice()) {
                ("col", [Expr::Var(p), Expr::Num(j)]) => format!("{}[i][{}]", local(p), *j as usize - 1),
                ("rows", [Expr::Var(p)]) => format!("((double){}_n)", local(p)),
                ("abs", [a]) => format!("fabs({})", self.expr(a)),
                ("min", [a, b]) => format!("fmin({}, {})", self.expr(a), self.expr(b)),
                ("max", [a, b]) => format!("fmax({}, {})", self.expr(a), self.expr(b)),
                (f, [a]) => format!("{f}({})", self.expr(a)),
                (f, [a, b]) => format!("{f}({}, {})", self.expr(a), self.expr(b)),
                _ => unreachable!("checked"),
            },
        }
    }

    fn lens(&self, e: &Expr, out: &mut Vec<String>) {
        let mut push = |s: String| {
            if !out.contains(&s) {
                out.push(s);
            }
        };
        match e {
            Expr::Num(_) => {}
            Expr::Var(n) => match self.locals[n] {
                FType::Vector(k) => push(format!("(size_t){k}")),
                FType::Col(_) => push(format!("{}_n", local(n))),
                _ => {}
            },
            Expr::Neg(a) => self.lens(a, out),
            Expr::Bin(_, a, b) => {
                self.lens(a, out);
                self.lens(b, out);
            }
            Expr::Call(name, args) => match (name.as_str(), args.as_slice()) {
                ("col", [Expr::Var(p), _]) => push(format!("{}_n", local(p))),
                ("rows", _) => {}
                _ => {
                    for a in args {
                        self.lens(a, out);
                    }
                }
            },
        }
    }

    /// Runtime length shared by `exprs`, with a check when several
    /// operands carry one.
    fn length(&self, w: &mut W, exprs: &[Expr], uname: &str) -> Option<String> {
        let mut lens = Vec::new();
        for e in exprs {
            self.lens(e, &mut lens);
        }
        let first = lens.first()?.clone();
        for other in &lens[1..] {
            w.line(format!(
                "if ({first} != {other}) blx_fail({});",
                c_string(&format!("{uname}: operand lengths differ"))
            ));
        }
        Some(first)
    }

    fn statement(&self, w: &mut W, s: &Stmt, uname: &str) -> Result<(), CodegenError> {
        let y = local(&s.target);
        let t = self.locals[&s.target];
        match t {
            FType::Scalar => w.line(format!("double {y};")),
            FType::Vector(n) => w.line(format!("static double {y}[{}];", storage(n))),
            FType::Col(c) => {
                w.line(format!("static double {y}[{}];", storage(c)));
                w.line(format!("size_t {y}_n;"));
            }
            FType::Cloud(c) => {
                w.line(format!("static double {y}[{}][3];", storage(c)));
                w.line(format!("size_t {y}_n;"));
            }
        }
        let call = match &s.expr {
            Expr::Call(name, args) => Some((name.as_str(), args.as_slice())),
            _ => None,
        };
        match (&s.expr, call) {
            (Expr::Var(x), _) if matches!(t, FType::Cloud(_)) => {
                let x = local(x);
                w.line(format!("{y}_n = {x}_n;"));
                w.line(format!("blx_copy_rows({y}, {x}, {x}_n);"));
            }
            (_, Some(("cloud", args))) => {
                let n = self.length(w, args, uname).unwrap_or_else(|| "(size_t)0".into());
                w.line(format!("{y}_n = {n};"));
                w.open(format!("for (size_t i = 0; i < {y}_n; i++) {{"));
                for (j, a) in args.iter().enumerate() {
                    w.line(format!("{y}[i][{j}] = {};", self.expr(a)));
                }
                w.close("}");
            }
            (_, Some(("gather", [Expr::Var(p), idx]))) => {
                let cap = match t {
                    FType::Cloud(c) => storage(c),
                    _ => unreachable!("checked"),
                };
                let n = self
                    .length(w, std::slice::from_ref(idx), uname)
                    .ok_or_else(|| missing(format!("`{uname}`: gather index is not a column")))?;
                w.line(format!("static double {y}_ix[{cap}];"));
                w.line(format!("{y}_n = {n};"));
                w.line(format!("for (size_t i = 0; i < {y}_n; i++) {y}_ix[i] = {};", self.expr(idx)));
                let p = local(p);
                w.line(format!("blx_gather({p}, {p}_n, {y}_ix, {y}_n, {y});"));
            }
            (_, Some(("first_unique", [Expr::Var(k)]))) => {
                let k = local(k);
                w.line(format!("blx_first_unique({k}, {k}_n, {y}, &{y}_n);"));
            }
            (_, Some(("randsel", [Expr::Var(p), Expr::Num(max_n), Expr::Num(seed)]))) => {
                let cap = match self.locals[p] {
                    FType::Cloud(c) => storage(c),
                    _ => unreachable!("checked"),
                };
                let p = local(p);
                w.line(format!("static size_t {y}_perm[{cap}];"));
                w.line(format!("static unsigned char {y}_mark[{cap}];"));
                w.line(format!(
                    "blx_random_indices({p}_n, {}, UINT64_C({}), {y}_perm, {y}_mark, {y}, &{y}_n);",
                    *max_n as u64, *seed as u64
                ));
            }
            (_, Some(("sum", [v]))) => match self.length(w, std::slice::from_ref(v), uname) {
                None => w.line(format!("{y} = 0.0 + {};", self.expr(v))),
                Some(n) => {
                    w.line(format!("{y} = 0.0;"));
                    w.line(format!("for (size_t i = 0; i < {n}; i++) {y} = {y} + {};", self.expr(v)));
                }
            },
            (e, _) => match t {
                FType::Scalar => w.line(format!("{y} = {};", self.expr(e))),
                FType::Vector(_) | FType::Col(_) => {
                    let n = self
                        .length(w, std::slice::from_ref(e), uname)
                        .ok_or_else(|| missing(format!("`{uname}`: `{}` has no length", s.target)))?;
                    if matches!(t, FType::Col(_)) {
                        w.line(format!("{y}_n = {n};"));
                    }
                    w.line(format!("for (size_t i = 0; i < {n}; i++) {y}[i] = {};", self.expr(e)));
                }
                FType::Cloud(_) => return Err(missing(format!("`{uname}`: cloud statement `{}`", s.target))),
            },
        }
        Ok(())
    }
}

fn function(
    w: &mut W,
    program: &Program,
    inputs: &[(String, &Obj)],
    outputs: &[(String, &Obj)],
    uname: &str,
) -> Result<(), CodegenError> {
    let in_types: Vec<(String, DType)> = inputs.iter().map(|(n, o)| (n.clone(), o.dtype.clone())).collect();
    let out_names: Vec<String> = outputs.iter().map(|(n, _)| n.clone()).collect();
    let typed = program
        .check(&in_types, &out_names)
        .map_err(|e| missing(format!("`{uname}`: {e}")))?;
    w.open("{");
    for (name, o) in inputs {
        let l = local(name);
        match o.dtype {
            DType::Scalar => w.line(format!("double {l} = {}; (void){l};", o.id)),
            DType::Vector(_) => w.line(format!("double *{l} = {}; (void){l};", o.id)),
            DType::PointCloud(_) => {
                w.line(format!("double (*{l})[3] = {}.p; (void){l};", o.id));
                w.line(format!("size_t {l}_n = {}.n; (void){l}_n;", o.id));
            }
            _ => return Err(missing(format!("`{uname}`: body input of type {}", o.dtype))),
        }
    }
    let body = Body { locals: &typed.locals };
    for s in &program.stmts {
        body.statement(w, s, uname)?;
    }
    for (name, o) in outputs {
        let l = local(name);
        match (&o.dtype, typed.locals[name]) {
            (DType::Scalar, FType::Scalar) => w.line(format!("{} = {l};", o.id)),
            (DType::Vector(n), FType::Vector(m)) if *n == m => {
                w.line(format!("for (size_t i = 0; i < {n}; i++) {}[i] = {l}[i];", o.id))
            }
            (DType::PointCloud(_), FType::Cloud(_)) => {
                check_cap(w, &format!("{l}_n"), o, uname);
                w.line(format!("{}.n = {l}_n;", o.id));
                w.line(format!("blx_copy_rows({}.p, {l}, {l}_n);", o.id));
            }
            (d, t) => return Err(CodegenError::InvalidIr(format!("`{uname}`: output `{name}` is {t}, signal is {d}"))),
        }
    }
    w.close("}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        for x in [0.1, -2.5, 1e-300, 6.02e23, 3.0, -0.0, f64::MIN_POSITIVE] {
            let s = c_num(x);
            let back: f64 = s.trim_matches(|c| c == '(' || c == ')').parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(c_num(f64::NEG_INFINITY), "(-HUGE_VAL)");
    }

    #[test]
    fn idents_are_injective() {
        let mut ids = Idents::default();
        let a = ids.fresh("g_", "a.b_1");
        let b = ids.fresh("g_", "a_b_1");
        assert_eq!(a, "g_a_b_1");
        assert_eq!(b, "g_a_b_1_2");
    }

    #[test]
    fn strings_and_comments_are_escaped() {
        assert_eq!(c_string("a\"b\\c\n"), "\"a\\\"b\\\\c\\012\"");
        assert_eq!(c_comment("x*/y"), "x* /y");
    }
}
