//! Seeded generators: random hierarchical models, task graphs, hardware
//! profiles and input traces. Used by the property and acceptance suites.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::extractor::{FlatBlock, FlatIR, GlobalVar};
use crate::hwprofile::{CommMatrix, Core, CostHint, HardwareProfile, Link, OpClass};
use crate::model::dtype::format_position;
use crate::model::infer::{check_element_independent, output_types};
use crate::model::{Attr, Block, BlockKind, DType, Endpoint, FunctionBody, MapOp, Model, ReduceOp, SignalLine, Subsystem};
use crate::simulator::{port_name, Trace, Value};
use crate::toolbox::ToolboxRegistry;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// traces

/// Mostly uniform in [-4, 4], with signed zeros and small integers mixed in.
pub fn sample(rng: &mut impl Rng) -> f64 {
    if rng.gen_bool(0.1) {
        *[0.0, -0.0, 1.0, -1.0, 0.5, 2.0].choose(rng).expect("non-empty")
    } else {
        rng.gen_range(-4.0..4.0)
    }
}

pub fn random_value(rng: &mut impl Rng, dtype: &DType) -> Value {
    match dtype {
        DType::Scalar => Value::Scalar(sample(rng)),
        DType::Vector(n) => Value::Vector((0..*n).map(|_| sample(rng)).collect()),
        DType::Matrix(r, c) => Value::Matrix {
            rows: *r,
            cols: *c,
            data: (0..r * c).map(|_| sample(rng)).collect(),
        },
        DType::PointCloud(cap) => {
            let n = rng.gen_range(0..=*cap);
            Value::Cloud((0..n).map(|_| [sample(rng), sample(rng), sample(rng)]).collect())
        }
        DType::Bus(layout) => Value::Bus(
            layout
                .elements
                .iter()
                .map(|e| (e.name.clone(), random_value(rng, &e.dtype)))
                .collect(),
        ),
    }
}

pub fn random_trace(rng: &mut impl Rng, ports: &[(String, DType)], steps: usize) -> Trace {
    Trace {
        steps: (0..steps)
            .map(|_| ports.iter().map(|(p, d)| (p.clone(), random_value(rng, d))).collect())
            .collect(),
    }
}

/// Trace ports and types of a model's root Inports.
pub fn model_inputs(model: &Model) -> Vec<(String, DType)> {
    model
        .root_inports()
        .filter_map(|b| Some((b.name.clone(), b.param("dtype")?.parse().ok()?)))
        .collect()
}

pub fn ir_inputs(ir: &FlatIR) -> Vec<(String, DType)> {
    let types = ir.var_types();
    ir.inports()
        .filter_map(|b| Some((port_name(&b.uname), types.get(b.outputs.first()?)?.clone())))
        .collect()
}

// ---------------------------------------------------------------------------
// task graphs and profiles

/// Random DAG of `n` blocks for scheduling: arith costs in 10..=500, edges
/// `i -> j` (i < j) with probability `p`, payloads from 8 bytes to 4 KiB.
/// Not meant to be interpreted.
pub fn random_dag(rng: &mut impl Rng, n: usize, p: f64) -> FlatIR {
    let name = |i: usize| format!("t{i:03}");
    let mut ir = FlatIR {
        name: "dag".into(),
        blocks: Vec::new(),
        vars: Vec::new(),
        edges: Vec::new(),
        state_vars: Vec::new(),
    };
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (j, pj) in preds.iter_mut().enumerate() {
        for i in 0..j {
            if rng.gen_bool(p) {
                pj.push(i);
            }
        }
    }
    for (i, pi) in preds.iter().enumerate() {
        let mut b = FlatBlock::new(name(i), BlockKind::Gain);
        b.outputs.push(format!("{}_1", name(i)));
        b.inputs = pi.iter().map(|&p| format!("{}_1", name(p))).collect();
        b.cost_hint = Some(CostHint {
            arith: rng.gen_range(10..=500),
            ..CostHint::default()
        });
        ir.blocks.push(b);
        let dtype = if rng.gen_bool(0.5) {
            DType::Scalar
        } else {
            DType::Vector(rng.gen_range(2..=512))
        };
        ir.vars.push(GlobalVar {
            name: format!("{}_1", name(i)),
            dtype,
            producer: (name(i), 1),
            external: false,
        });
    }
    ir.normalize();
    ir
}

/// Heterogeneous profile: clocks 0.5 to 2 GHz, per-link latencies and
/// bandwidths drawn independently.
pub fn random_profile(rng: &mut impl Rng, cores: usize) -> HardwareProfile {
    let cores: Vec<Core> = (0..cores)
        .map(|id| Core {
            id,
            clock_hz: rng.gen_range(5..=20) as f64 * 1e8,
            cycles_per_op: OpClass::ALL
                .into_iter()
                .map(|c| {
                    let cpi = match c {
                        OpClass::Trig => rng.gen_range(5..=30) as f64,
                        _ => rng.gen_range(1..=8) as f64 * 0.5,
                    };
                    (c, cpi)
                })
                .collect(),
        })
        .collect();
    let n = cores.len();
    let mut comm = CommMatrix::uniform(n, Link::FREE);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                comm.links[i][j] = Link {
                    fixed_ns: rng.gen_range(0..=200) as f64,
                    per_byte_ns: rng.gen_range(0..=10) as f64 * 0.05,
                };
            }
        }
    }
    HardwareProfile {
        name: "random".into(),
        cores,
        comm,
        dispatch_ns: rng.gen_range(0..=50),
    }
}

// ---------------------------------------------------------------------------
// models

#[derive(Debug, Clone)]
struct Sig {
    ep: Endpoint,
    dtype: DType,
}

struct Sheet {
    sub: Subsystem,
    pool: Vec<Sig>,
    buses: Vec<Sig>,
    next: usize,
}

impl Sheet {
    fn new(name: &str) -> Sheet {
        Sheet {
            sub: Subsystem::new(name),
            pool: Vec::new(),
            buses: Vec::new(),
            next: 0,
        }
    }

    fn name(&mut self, prefix: &str) -> String {
        self.next += 1;
        format!("{prefix}{}", self.next)
    }

    fn connect(&mut self, src: &Sig, dst: Endpoint) {
        if let Some(line) = self.sub.lines.iter_mut().find(|l| l.src == src.ep) {
            line.dsts.push(dst);
        } else {
            self.sub.lines.push(SignalLine {
                src: src.ep.clone(),
                dsts: vec![dst],
                dtype: src.dtype.clone(),
            });
        }
    }

    fn publish(&mut self, block: &str, outs: Vec<DType>) -> Vec<Sig> {
        let sigs: Vec<Sig> = outs
            .into_iter()
            .enumerate()
            .map(|(i, dtype)| Sig {
                ep: Endpoint::new(block, i + 1),
                dtype,
            })
            .collect();
        for s in &sigs {
            if s.dtype.is_bus() {
                self.buses.push(s.clone());
            } else {
                self.pool.push(s.clone());
            }
        }
        sigs
    }

    /// Adds `block` fed by `inputs` if it type-checks.
    fn add(&mut self, block: Block, inputs: &[Sig], registry: &ToolboxRegistry) -> Option<Vec<Sig>> {
        let types: Vec<DType> = inputs.iter().map(|s| s.dtype.clone()).collect();
        let outs = output_types(&block, &types, registry).ok()?;
        check_element_independent(&block, &types, &outs, registry).ok()?;
        let name = block.name.clone();
        self.sub.children.push(block);
        for (i, s) in inputs.iter().enumerate() {
            self.connect(s, Endpoint::new(&name, i + 1));
        }
        Some(self.publish(&name, outs))
    }

    fn pick(&self, rng: &mut impl Rng, pred: impl Fn(&DType) -> bool) -> Option<Sig> {
        let c: Vec<&Sig> = self.pool.iter().filter(|s| pred(&s.dtype)).collect();
        c.choose(rng).map(|s| (*s).clone())
    }
}

fn dense(d: &DType) -> bool {
    matches!(d, DType::Scalar | DType::Vector(_) | DType::Matrix(..))
}

fn numeric(d: &DType) -> bool {
    dense(d) || matches!(d, DType::PointCloud(_))
}

fn rows(d: &DType) -> bool {
    matches!(d, DType::Vector(_) | DType::PointCloud(_))
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn coef(rng: &mut impl Rng) -> f64 {
    (rng.gen_range(-300..=300) as f64) / 100.0
}

fn literal(rng: &mut impl Rng, dtype: &DType) -> String {
    let mut row = |n: usize| {
        let v: Vec<String> = (0..n).map(|_| num(coef(rng))).collect();
        format!("[{}]", v.join(","))
    };
    match dtype {
        DType::Vector(n) => row(*n),
        DType::Matrix(r, c) => {
            let rs: Vec<String> = (0..*r).map(|_| row(*c)).collect();
            format!("[{}]", rs.join(","))
        }
        _ => num(coef(rng)),
    }
}

fn random_dense_type(rng: &mut impl Rng) -> DType {
    match rng.gen_range(0..4) {
        0 | 1 => DType::Scalar,
        2 => DType::Vector(rng.gen_range(2..=5)),
        _ => DType::Matrix(rng.gen_range(1..=3), rng.gen_range(1..=3)),
    }
}

const EI: [Attr; 2] = [Attr::Stateless, Attr::ElementIndependent];

struct Gen<'r, R> {
    rng: R,
    registry: &'r ToolboxRegistry,
}

impl<R: Rng> Gen<'_, R> {
    fn block(&mut self, s: &mut Sheet, prefix: &str, kind: BlockKind, params: &[(&str, String)]) -> Block {
        let mut b = Block::new(s.name(prefix), kind);
        for (k, v) in params {
            b = b.with_param(k, v.clone());
        }
        b
    }

    fn ports(b: Block, declared: Option<(usize, usize)>) -> Option<Block> {
        b.with_ports(declared).ok()
    }

    fn constant(&mut self, s: &mut Sheet, dtype: &DType) -> Option<Sig> {
        let v = literal(&mut self.rng, dtype);
        let b = Self::ports(self.block(s, "c", BlockKind::Const, &[("value", v)]), None)?;
        s.add(b, &[], self.registry).map(|o| o[0].clone())
    }

    /// One random construct; `None` when the chosen recipe does not fit the
    /// current signals.
    fn grow(&mut self, s: &mut Sheet, depth: usize) -> Option<()> {
        let reg = self.registry;
        let choice = self.rng.gen_range(0..20);
        match choice {
            0 => {
                let d = random_dense_type(&mut self.rng);
                self.constant(s, &d)?;
            }
            1 => {
                let x = s.pick(&mut self.rng, numeric)?;
                let gain = match &x.dtype {
                    DType::Vector(_) | DType::Matrix(..) if self.rng.gen_bool(0.3) => literal(&mut self.rng, &x.dtype),
                    _ => num(coef(&mut self.rng)),
                };
                let scalar_gain = !gain.starts_with('[');
                let mut b = self.block(s, "g", BlockKind::Gain, &[("gain", gain)]);
                if scalar_gain && rows(&x.dtype) && self.rng.gen_bool(0.5) {
                    b = b.with_attrs(&EI);
                }
                s.add(Self::ports(b, None)?, &[x], reg)?;
            }
            2 | 3 => {
                let x = s.pick(&mut self.rng, dense)?;
                let k = self.rng.gen_range(2..=3);
                let mut ins = vec![x.clone()];
                for _ in 1..k {
                    let same = s.pick(&mut self.rng, |d| *d == x.dtype || *d == DType::Scalar)?;
                    ins.push(same);
                }
                ins.shuffle(&mut self.rng);
                let b = if choice == 2 {
                    let signs: String = (0..k).map(|_| if self.rng.gen_bool(0.6) { '+' } else { '-' }).collect();
                    self.block(s, "sum", BlockKind::Sum, &[("signs", signs)])
                } else {
                    let ops: String = (0..k).map(|_| if self.rng.gen_bool(0.7) { '*' } else { '/' }).collect();
                    self.block(s, "prod", BlockKind::Product, &[("ops", ops)])
                };
                s.add(Self::ports(b, None)?, &ins, reg)?;
            }
            4 => {
                let x = s.pick(&mut self.rng, numeric)?;
                let lo = -self.rng.gen_range(0..=300) as f64 / 100.0;
                let hi = self.rng.gen_range(0..=300) as f64 / 100.0;
                let mut b = self.block(s, "sat", BlockKind::Saturate, &[("lower", num(lo)), ("upper", num(hi))]);
                if rows(&x.dtype) && self.rng.gen_bool(0.5) {
                    b = b.with_attrs(&EI);
                }
                s.add(Self::ports(b, None)?, &[x], reg)?;
            }
            5 => {
                let x = s.pick(&mut self.rng, dense)?;
                let c = s.pick(&mut self.rng, |d| *d == DType::Scalar)?;
                let y = s.pick(&mut self.rng, |d| *d == x.dtype)?;
                let t = num(coef(&mut self.rng));
                let b = self.block(s, "sw", BlockKind::Switch, &[("threshold", t)]);
                s.add(Self::ports(b, None)?, &[x, c, y], reg)?;
            }
            6 => {
                let rhs = s.pick(&mut self.rng, |d| matches!(d, DType::Vector(_) | DType::Matrix(..)))?;
                let k = match rhs.dtype {
                    DType::Vector(k) | DType::Matrix(k, _) => k,
                    _ => unreachable!(),
                };
                let r = self.rng.gen_range(1..=3);
                let lhs = self.constant(s, &DType::Matrix(r, k))?;
                let b = self.block(s, "mm", BlockKind::MatMul, &[]);
                s.add(Self::ports(b, None)?, &[lhs, rhs], reg)?;
            }
            7 => {
                let x = s.pick(&mut self.rng, numeric)?;
                let op = *MapOp::ALL.choose(&mut self.rng).expect("ops");
                let mut b = self.block(s, "f", BlockKind::ElementwiseMap(op), &[]);
                if rows(&x.dtype) && self.rng.gen_bool(0.5) {
                    b = b.with_attrs(&EI);
                }
                s.add(Self::ports(b, None)?, &[x], reg)?;
            }
            8 => {
                let x = s.pick(&mut self.rng, dense)?;
                let op = *ReduceOp::ALL.choose(&mut self.rng).expect("ops");
                let b = self.block(s, "red", BlockKind::Reduce(op), &[]);
                s.add(Self::ports(b, None)?, &[x], reg)?;
            }
            9 => {
                let k = self.rng.gen_range(2..=3);
                let mut ins = Vec::new();
                for _ in 0..k {
                    ins.push(s.pick(&mut self.rng, |d| matches!(d, DType::Scalar | DType::Vector(_)))?);
                }
                let b = self.block(s, "cat", BlockKind::Concat, &[]);
                s.add(Self::ports(b, Some((k, 1)))?, &ins, reg)?;
            }
            10 => {
                let x = s.pick(&mut self.rng, |d| matches!(d, DType::Vector(n) if *n >= 2))?;
                let DType::Vector(n) = x.dtype else { unreachable!() };
                let start = self.rng.gen_range(1..=n);
                let mut params = vec![("start", start.to_string())];
                if self.rng.gen_bool(0.5) {
                    params.push(("len", self.rng.gen_range(1..=n - start + 1).to_string()));
                }
                let b = self.block(s, "sl", BlockKind::Slice, &params);
                s.add(Self::ports(b, None)?, &[x], reg)?;
            }
            11 => {
                let x = s.pick(&mut self.rng, numeric)?;
                let init = num(coef(&mut self.rng));
                let b = self.block(s, "z", BlockKind::UnitDelay, &[("init", init)]);
                s.add(Self::ports(b, None)?, &[x], reg)?;
            }
            12 => {
                // accumulator: o = x + z^-1 o
                let x = s.pick(&mut self.rng, dense)?;
                let init = num(coef(&mut self.rng));
                let delay = Self::ports(self.block(s, "z", BlockKind::UnitDelay, &[("init", init)]), None)?;
                let dname = delay.name.clone();
                s.sub.children.push(delay);
                let fed_back = s.publish(&dname, vec![x.dtype.clone()]).remove(0);
                let sum = Self::ports(self.block(s, "acc", BlockKind::Sum, &[("signs", "++".into())]), None)?;
                let out = s.add(sum, &[x, fed_back], reg)?.remove(0);
                s.connect(&out, Endpoint::new(dname, 1));
            }
            13 => {
                let k = self.rng.gen_range(2..=3);
                let mut ins = Vec::new();
                for i in 0..k {
                    let nested = i == 0 && !s.buses.is_empty() && self.rng.gen_bool(0.3);
                    ins.push(if nested {
                        s.buses.choose(&mut self.rng).expect("non-empty").clone()
                    } else {
                        s.pick(&mut self.rng, |_| true)?
                    });
                }
                let names = ["a", "b", "c"][..k].join(",");
                let b = self.block(s, "bus", BlockKind::BusCreator, &[("names", names)]);
                let bus = s.add(Self::ports(b, None)?, &ins, reg)?.remove(0);
                self.select(s, &bus)?;
            }
            14 => {
                let bus = s.buses.choose(&mut self.rng)?.clone();
                self.select(s, &bus)?;
            }
            15 if depth < 2 => self.subsystem(s, depth)?,
            16 => self.function(s)?,
            17 => {
                let x = s.pick(&mut self.rng, |d| matches!(d, DType::PointCloud(_)))?;
                let (kind, params) = match self.rng.gen_range(0..3) {
                    0 => (
                        "PointTransform",
                        vec![
                            ("roll", num(coef(&mut self.rng) / 10.0)),
                            ("yaw", num(coef(&mut self.rng))),
                            ("tx", num(coef(&mut self.rng))),
                            ("tz", num(coef(&mut self.rng))),
                        ],
                    ),
                    1 => (
                        "VoxelGridDownsample",
                        vec![
                            ("leaf", num(self.rng.gen_range(1..=20) as f64 / 10.0)),
                            ("centroid", self.rng.gen_range(0..=1).to_string()),
                        ],
                    ),
                    _ => (
                        "RandomDownsample",
                        vec![
                            ("max_n", self.rng.gen_range(0..=12).to_string()),
                            ("seed", self.rng.gen_range(0..100u32).to_string()),
                        ],
                    ),
                };
                let b = self.block(s, "tb", BlockKind::Toolbox(kind.into()), &params);
                s.add(Self::ports(b, Some((1, 1)))?, &[x], reg)?;
            }
            18 => {
                let mut pose = || -> Option<Sig> {
                    match s.pick(&mut self.rng, |d| *d == DType::Vector(3)) {
                        Some(p) if self.rng.gen_bool(0.7) => Some(p),
                        _ => self.constant(s, &DType::Vector(3)),
                    }
                };
                let a = pose()?;
                let b_ = pose()?;
                let v = s.pick(&mut self.rng, |d| *d == DType::Scalar)?;
                let b = self.block(s, "lat", BlockKind::Toolbox("StanleyLateral".into()), &[]);
                s.add(Self::ports(b, Some((3, 1)))?, &[a, b_, v], reg)?;
            }
            _ => {
                let a = s.pick(&mut self.rng, |d| *d == DType::Scalar)?;
                let b_ = s.pick(&mut self.rng, |d| *d == DType::Scalar)?;
                let kp = num(self.rng.gen_range(1..=20) as f64 / 10.0);
                let b = self.block(s, "pid", BlockKind::Toolbox("PidLongitudinal".into()), &[("kp", kp)]);
                s.add(Self::ports(b, Some((2, 2)))?, &[a, b_], reg)?;
            }
        }
        Some(())
    }

    /// BusSelector over 1 to 3 leaves of `bus`, by dotted name or position.
    fn select(&mut self, s: &mut Sheet, bus: &Sig) -> Option<()> {
        let DType::Bus(layout) = &bus.dtype else { return None };
        let mut leaves = Vec::new();
        fn walk(layout: &crate::model::BusLayout, prefix: &str, out: &mut Vec<String>) {
            for e in &layout.elements {
                let name = if prefix.is_empty() {
                    e.name.clone()
                } else {
                    format!("{prefix}.{}", e.name)
                };
                match &e.dtype {
                    DType::Bus(inner) => walk(inner, &name, out),
                    _ => out.push(name),
                }
            }
        }
        walk(layout, "", &mut leaves);
        leaves.shuffle(&mut self.rng);
        leaves.truncate(self.rng.gen_range(1..=3));
        let params = if self.rng.gen_bool(0.5) {
            vec![("select", leaves.join(","))]
        } else {
            let paths: Vec<String> = leaves
                .iter()
                .map(|l| layout.position_of(l).map(|p| format_position(&p)))
                .collect::<Option<_>>()?;
            vec![("positions", paths.join(";"))]
        };
        let b = self.block(s, "sel", BlockKind::BusSelector, &params);
        s.add(Self::ports(b, None)?, std::slice::from_ref(bus), self.registry)?;
        Some(())
    }

    /// An expression that mentions `needle`.
    fn expr_using(&mut self, vars: &[&str], depth: usize, needle: &str) -> String {
        loop {
            let e = self.expr(vars, depth);
            if e.contains(needle) {
                return e;
            }
        }
    }

    fn expr(&mut self, vars: &[&str], depth: usize) -> String {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return if self.rng.gen_bool(0.75) {
                vars.choose(&mut self.rng).expect("vars").to_string()
            } else {
                num(self.rng.gen_range(1..=40) as f64 / 10.0)
            };
        }
        match self.rng.gen_range(0..8) {
            0..=2 => {
                let op = ["+", "-", "*", "/"].choose(&mut self.rng).expect("ops");
                format!("({} {op} {})", self.expr(vars, depth - 1), self.expr(vars, depth - 1))
            }
            3 => {
                let f = ["sin", "cos", "atan", "abs", "floor", "exp", "sqrt"]
                    .choose(&mut self.rng)
                    .expect("fns");
                format!("{f}({})", self.expr(vars, depth - 1))
            }
            4 => {
                let f = ["min", "max", "atan2"].choose(&mut self.rng).expect("fns");
                format!("{f}({}, {})", self.expr(vars, depth - 1), self.expr(vars, depth - 1))
            }
            5 => {
                let op = ["<", "<=", ">", ">=", "==", "~="].choose(&mut self.rng).expect("ops");
                format!("({} {op} {})", self.expr(vars, depth - 1), self.expr(vars, depth - 1))
            }
            6 => format!("-{}", self.expr(vars, depth - 1)),
            _ => self.expr(vars, depth - 1),
        }
    }

    fn function(&mut self, s: &mut Sheet) -> Option<()> {
        let reg = self.registry;
        if self.rng.gen_bool(0.5) {
            if let Some(p) = s.pick(&mut self.rng, |d| matches!(d, DType::PointCloud(_))) {
                return self.cloud_function(s, p);
            }
        }
        let x = s.pick(&mut self.rng, |d| matches!(d, DType::Scalar | DType::Vector(_)))?;
        let mut ins = vec![x.clone()];
        if self.rng.gen_bool(0.6) {
            ins.push(s.pick(&mut self.rng, |d| *d == DType::Scalar)?);
        }
        let names: Vec<&str> = ["u", "w"][..ins.len()].to_vec();
        let y = self.expr(&names, 3);
        let (body, outs) = if matches!(x.dtype, DType::Vector(_)) && self.rng.gen_bool(0.4) {
            (format!("y = {y}\ns = sum(y)"), "y,s")
        } else {
            (format!("% generated\ny = {y}"), "y")
        };
        let fb = FunctionBody::new(&body).ok()?;
        let mut b = self.block(
            s,
            "fn",
            BlockKind::FunctionBlock(fb),
            &[("inputs", names.join(",")), ("outputs", outs.into())],
        );
        if outs == "y" && matches!(x.dtype, DType::Vector(_)) && self.rng.gen_bool(0.5) {
            b = b.with_attrs(&EI);
        }
        let b = Self::ports(b, None)?;
        if s.add(b.clone(), &ins, reg).is_none() && b.is_element_independent() {
            // expression made a vector-valued side term; retry without the flag
            let mut plain = b;
            plain.attrs.clear();
            plain.name = s.name("fn");
            s.add(plain, &ins, reg)?;
        }
        Some(())
    }

    fn cloud_function(&mut self, s: &mut Sheet, p: Sig) -> Option<()> {
        let reg = self.registry;
        let leaf = num(self.rng.gen_range(2..=15) as f64 / 10.0);
        let (body, outs, ei) = match self.rng.gen_range(0..4) {
            0 => (
                format!(
                    "q = cloud({}, {}, {})",
                    self.expr(&["col(p, 1)", "col(p, 2)"], 2),
                    self.expr(&["col(p, 2)", "col(p, 3)"], 2),
                    self.expr(&["col(p, 3)", "col(p, 1)"], 2)
                ),
                "q",
                true,
            ),
            1 => (
                format!(
                    "k = cloud(floor(col(p, 1) / {leaf}), floor(col(p, 2) / {leaf}), floor(col(p, 3) / {leaf}))\ni = first_unique(k)\nq = gather(p, i)"
                ),
                "q",
                false,
            ),
            2 => (
                format!(
                    "i = randsel(p, {}, {})\nq = gather(p, i)",
                    self.rng.gen_range(0..=10),
                    self.rng.gen_range(0..1000)
                ),
                "q",
                false,
            ),
            _ => ("n = rows(p)\nm = sum(col(p, 1) * col(p, 2))".to_string(), "n,m", false),
        };
        let fb = FunctionBody::new(&body).ok()?;
        let mut b = self.block(
            s,
            "fn",
            BlockKind::FunctionBlock(fb),
            &[("inputs", "p".into()), ("outputs", outs.into())],
        );
        if ei && self.rng.gen_bool(0.5) {
            b = b.with_attrs(&EI);
        }
        s.add(Self::ports(b, None)?, &[p], reg)?;
        Some(())
    }

    fn subsystem(&mut self, s: &mut Sheet, depth: usize) -> Option<()> {
        let k = self.rng.gen_range(1..=3);
        let mut ins = Vec::new();
        for i in 0..k {
            if i == 0 && !s.buses.is_empty() && self.rng.gen_bool(0.4) {
                ins.push(s.buses.choose(&mut self.rng).expect("non-empty").clone());
            } else {
                ins.push(s.pick(&mut self.rng, |_| true)?);
            }
        }
        let name = s.name("sub");
        let mut inner = Sheet::new(&name);
        inner.sub.masked = self.rng.gen_bool(0.5);
        for (i, sig) in ins.iter().enumerate() {
            let b = Block::new(format!("in{}", i + 1), BlockKind::Inport).with_param("dtype", sig.dtype.to_string());
            let b = Self::ports(b, None)?;
            inner.add(b, &[], self.registry)?;
        }
        let constructs = self.rng.gen_range(3..=8);
        self.body(&mut inner, constructs, depth + 1);
        let outs = self.rng.gen_range(1..=2);
        self.outports(&mut inner, outs, true)?;
        let block = Self::ports(Block::new(name, BlockKind::Subsystem(Box::new(inner.sub))), None)?;
        s.add(block, &ins, self.registry)?;
        Some(())
    }

    fn body(&mut self, s: &mut Sheet, constructs: usize, depth: usize) {
        let mut made = 0;
        for _ in 0..constructs * 20 {
            if made == constructs {
                break;
            }
            if self.grow(s, depth).is_some() {
                made += 1;
            }
        }
    }

    /// Outports on recent signals; buses only when `allow_bus`.
    fn outports(&mut self, s: &mut Sheet, n: usize, allow_bus: bool) -> Option<()> {
        let mut cands: Vec<Sig> = s.pool.iter().rev().take(6).cloned().collect();
        if allow_bus {
            cands.extend(s.buses.iter().rev().take(1).cloned());
        }
        if cands.is_empty() {
            return None;
        }
        for i in 0..n {
            let src = cands.choose(&mut self.rng).expect("non-empty").clone();
            let b = Self::ports(Block::new(format!("out{}", i + 1), BlockKind::Outport), None)?;
            s.add(b, &[src], self.registry)?;
        }
        Some(())
    }
}

/// A random valid hierarchical model: 1 to 3 root inputs (scalar, vector,
/// matrix or point cloud), nested masked and plain subsystems, buses,
/// feedback through delays, FunctionBlocks and toolbox blocks.
pub fn random_model(seed: u64, registry: &ToolboxRegistry) -> Model {
    let mut g = Gen {
        rng: rng(seed),
        registry,
    };
    let mut s = Sheet::new(&format!("random{seed}"));
    let n_in = g.rng.gen_range(1..=3);
    for i in 0..n_in {
        let dtype = match g.rng.gen_range(0..5) {
            0 => DType::PointCloud(g.rng.gen_range(3..=30)),
            _ => random_dense_type(&mut g.rng),
        };
        let b = Block::new(format!("in{}", i + 1), BlockKind::Inport)
            .with_param("dtype", dtype.to_string())
            .with_ports(None)
            .expect("Inport arity");
        s.add(b, &[], registry).expect("Inport types");
    }
    // a scalar is always available for switches and toolbox blocks
    g.constant(&mut s, &DType::Scalar).expect("scalar const");
    let constructs = g.rng.gen_range(6..=16);
    g.body(&mut s, constructs, 0);
    let n_out = g.rng.gen_range(1..=3);
    g.outports(&mut s, n_out, false).expect("signals exist");
    Model {
        name: s.sub.name.clone(),
        root: s.sub,
        step_count_hint: 100,
    }
}

/// Model of one element-independent block between root ports: principal
/// input a vector or point cloud, plus scalar side inputs.
pub fn random_element_independent_model(seed: u64, registry: &ToolboxRegistry) -> Model {
    let mut g = Gen {
        rng: rng(seed),
        registry,
    };
    let mut s = Sheet::new(&format!("ei{seed}"));
    let cloud = g.rng.gen_bool(0.5);
    let principal = if cloud {
        DType::PointCloud(g.rng.gen_range(1..=40))
    } else {
        DType::Vector(g.rng.gen_range(1..=40))
    };
    let add_in = |s: &mut Sheet, name: &str, dtype: &DType| {
        let b = Block::new(name, BlockKind::Inport)
            .with_param("dtype", dtype.to_string())
            .with_ports(None)
            .expect("Inport arity");
        s.add(b, &[], registry).expect("Inport types").remove(0)
    };
    let x = add_in(&mut s, "x", &principal);
    let w = add_in(&mut s, "w", &DType::Scalar);
    let choice = g.rng.gen_range(0..5);
    let (block, ins) = match choice {
        0 => (
            Block::new("k", BlockKind::Gain).with_param("gain", num(coef(&mut g.rng))),
            vec![x],
        ),
        1 => (
            Block::new("k", BlockKind::ElementwiseMap(*MapOp::ALL.choose(&mut g.rng).expect("ops"))),
            vec![x],
        ),
        2 => (
            Block::new("k", BlockKind::Saturate)
                .with_param("lower", num(-1.5))
                .with_param("upper", num(coef(&mut g.rng).abs())),
            vec![x],
        ),
        3 if cloud => {
            let body = format!(
                "q = cloud({}, {}, {})",
                g.expr_using(&["col(p, 1)", "w"], 3, "col(p"),
                g.expr_using(&["col(p, 2)", "col(p, 3)", "w"], 3, "col(p"),
                g.expr_using(&["col(p, 3)", "w"], 3, "col(p")
            );
            (
                Block::new("k", BlockKind::FunctionBlock(FunctionBody::new(&body).expect("body")))
                    .with_param("inputs", "p,w")
                    .with_param("outputs", "q"),
                vec![x, w],
            )
        }
        3 => {
            let body = format!("y = {}", g.expr_using(&["u", "w"], 3, "u"));
            (
                Block::new("k", BlockKind::FunctionBlock(FunctionBody::new(&body).expect("body")))
                    .with_param("inputs", "u,w")
                    .with_param("outputs", "y"),
                vec![x, w],
            )
        }
        _ if cloud => (
            Block::new("k", BlockKind::Toolbox("PointTransform".into()))
                .with_param("yaw", num(coef(&mut g.rng)))
                .with_param("pitch", num(coef(&mut g.rng) / 10.0))
                .with_param("ty", num(coef(&mut g.rng))),
            vec![x],
        ),
        _ => (
            Block::new("k", BlockKind::Gain).with_param("gain", num(coef(&mut g.rng))),
            vec![x],
        ),
    };
    let declared = matches!(block.kind, BlockKind::Toolbox(_)).then_some((1, 1));
    let block = block.with_attrs(&EI).with_ports(declared).expect("arity");
    let out = s.add(block, &ins, registry).expect("element-independent block types").remove(0);
    let b = Block::new("y", BlockKind::Outport).with_ports(None).expect("arity");
    s.add(b, &[out], registry).expect("Outport");
    Model {
        name: s.sub.name.clone(),
        root: s.sub,
        step_count_hint: 10,
    }
}

/// Per-kind tally over a model's hierarchy, for coverage checks.
pub fn kind_histogram(model: &Model) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    model.root.walk(&mut Vec::new(), &mut |_, b| {
        let key = match &b.kind {
            BlockKind::Toolbox(_) => b.kind.tag(),
            other => other.base_name().to_string(),
        };
        *h.entry(key).or_insert(0) += 1;
    });
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_with;

    #[test]
    fn random_models_validate() {
        let reg = ToolboxRegistry::builtin();
        for seed in 0..40 {
            let m = random_model(seed, &reg);
            let r = validate_with(&m, &reg);
            assert!(r.is_ok(), "seed {seed}: {r}");
        }
    }

    #[test]
    fn random_models_are_deterministic() {
        let reg = ToolboxRegistry::builtin();
        assert_eq!(random_model(5, &reg), random_model(5, &reg));
    }

    #[test]
    fn random_models_cover_the_kinds() {
        let reg = ToolboxRegistry::builtin();
        let mut seen = BTreeMap::new();
        for seed in 0..50 {
            for (k, n) in kind_histogram(&random_model(seed, &reg)) {
                *seen.entry(k).or_insert(0) += n;
            }
        }
        for kind in [
            "Inport",
            "Outport",
            "Const",
            "Gain",
            "Sum",
            "Product",
            "Saturate",
            "Switch",
            "MatMul",
            "ElementwiseMap",
            "Reduce",
            "Concat",
            "Slice",
            "UnitDelay",
            "BusCreator",
            "BusSelector",
            "Subsystem",
            "FunctionBlock",
            "Toolbox(PointTransform)",
            "Toolbox(VoxelGridDownsample)",
            "Toolbox(RandomDownsample)",
            "Toolbox(StanleyLateral)",
            "Toolbox(PidLongitudinal)",
        ] {
            assert!(seen.contains_key(kind), "{kind} never generated: {seen:?}");
        }
    }

    #[test]
    fn element_independent_models_validate() {
        let reg = ToolboxRegistry::builtin();
        for seed in 0..40 {
            let m = random_element_independent_model(seed, &reg);
            assert!(validate_with(&m, &reg).is_ok(), "seed {seed}");
        }
    }

    #[test]
    fn dag_edges_point_forward() {
        let mut r = rng(1);
        let ir = random_dag(&mut r, 30, 0.2);
        assert_eq!(ir.blocks.len(), 30);
        assert!(ir.topo_order().is_some());
        ir.check().unwrap();
    }
}
