use std::collections::BTreeMap;

use crate::fnl::{FVal, Program};
use crate::model::infer::shard_sizes;
use crate::model::kind::split_list;
use crate::model::{param_f64, BlockKind, DType, Literal, MapOp, ReduceOp};
use crate::toolbox::{ToolboxEntry, ToolboxRegistry};

use super::kernels;
use super::value::Value;
use super::SimError;

/// Block semantics with parameters parsed once.
#[derive(Debug, Clone)]
pub enum Kernel {
    /// Written by the interpreter from the input trace.
    Input,
    /// Read by the interpreter into the output trace.
    Output,
    Const(Value),
    Gain(Vec<f64>),
    /// `true` marks a subtracted input.
    Sum(Vec<bool>),
    /// `true` marks a divisor.
    Product(Vec<bool>),
    Saturate(f64, f64),
    Switch(f64),
    MatMul,
    Map(MapOp),
    Reduce(ReduceOp),
    Concat,
    Slice { start: usize, len: Option<usize> },
    Delay { init: Value },
    Function {
        program: Program,
        inputs: Vec<String>,
        outputs: Vec<String>,
    },
    PointTransform { r: [[f64; 3]; 3], t: [f64; 3] },
    VoxelGrid { leaf: f64, centroid: bool },
    RandomDownsample { max_n: usize, seed: u64 },
    Splitter(usize),
    Merger,
}

fn num(params: &BTreeMap<String, String>, key: &str, default: f64) -> Result<f64, String> {
    param_f64(params, key, default)
}

fn count(params: &BTreeMap<String, String>, key: &str) -> Result<usize, String> {
    let text = params.get(key).ok_or_else(|| format!("missing parameter `{key}`"))?;
    text.trim().parse().map_err(|_| format!("parameter `{key}` is not a count: `{text}`"))
}

pub(crate) fn literal_value(lit: &Literal) -> Value {
    match lit {
        Literal::Scalar(x) => Value::Scalar(*x),
        Literal::Vector(v) => Value::Vector(v.clone()),
        Literal::Matrix(rows) => Value::Matrix {
            rows: rows.len(),
            cols: rows[0].len(),
            data: rows.iter().flatten().copied().collect(),
        },
    }
}

impl Kernel {
    /// Compiles a leaf block. `params` are final: opaque toolbox blocks must
    /// already carry their effective parameters. `in_types` are the declared
    /// input types.
    pub fn compile(
        uname: &str,
        kind: &BlockKind,
        params: &BTreeMap<String, String>,
        in_types: &[DType],
        registry: &ToolboxRegistry,
    ) -> Result<Kernel, SimError> {
        let err = |msg: String| SimError::Kernel {
            block: uname.to_string(),
            msg,
        };
        let k = match kind {
            BlockKind::Inport => Kernel::Input,
            BlockKind::Outport => Kernel::Output,
            BlockKind::Const => {
                let text = params.get("value").ok_or_else(|| err("Const needs `value`".into()))?;
                Kernel::Const(literal_value(&Literal::parse(text).map_err(err)?))
            }
            BlockKind::Gain => match Literal::parse(params.get("gain").map_or("1", String::as_str)).map_err(err)? {
                Literal::Scalar(g) => Kernel::Gain(vec![g]),
                lit => Kernel::Gain(literal_value(&lit).flat()),
            },
            BlockKind::Sum => Kernel::Sum(
                params
                    .get("signs")
                    .map_or("++", String::as_str)
                    .chars()
                    .map(|c| c == '-')
                    .collect(),
            ),
            BlockKind::Product => Kernel::Product(
                params
                    .get("ops")
                    .map_or("**", String::as_str)
                    .chars()
                    .map(|c| c == '/')
                    .collect(),
            ),
            BlockKind::Saturate => Kernel::Saturate(
                num(params, "lower", f64::NEG_INFINITY).map_err(err)?,
                num(params, "upper", f64::INFINITY).map_err(err)?,
            ),
            BlockKind::Switch => Kernel::Switch(num(params, "threshold", 0.0).map_err(err)?),
            BlockKind::MatMul => Kernel::MatMul,
            BlockKind::ElementwiseMap(op) => Kernel::Map(*op),
            BlockKind::Reduce(op) => Kernel::Reduce(*op),
            BlockKind::Concat => Kernel::Concat,
            BlockKind::Slice => {
                let start = params.get("start").map_or(Ok(1), |s| s.trim().parse()).map_err(|_| err("bad Slice start".into()))?;
                let len = params
                    .get("len")
                    .map(|s| s.trim().parse())
                    .transpose()
                    .map_err(|_| err("bad Slice len".into()))?;
                Kernel::Slice { start, len }
            }
            BlockKind::UnitDelay => {
                let dtype = in_types.first().ok_or_else(|| err("UnitDelay has no input".into()))?;
                Kernel::Delay {
                    init: Value::filled(dtype, num(params, "init", 0.0).map_err(err)?),
                }
            }
            BlockKind::FunctionBlock(body) => Kernel::Function {
                program: body.program.clone(),
                inputs: split_list(params.get("inputs").map_or("", String::as_str)),
                outputs: split_list(params.get("outputs").map_or("", String::as_str)),
            },
            BlockKind::Toolbox(name) => match registry.get(name) {
                Some(ToolboxEntry::Opaque(entry)) => match entry.kernel.as_str() {
                    "point_transform" => {
                        let p = |k| num(params, k, 0.0).map_err(err);
                        Kernel::PointTransform {
                            r: kernels::rotation(p("roll")?, p("pitch")?, p("yaw")?),
                            t: [p("tx")?, p("ty")?, p("tz")?],
                        }
                    }
                    "voxel_grid" => Kernel::VoxelGrid {
                        leaf: num(params, "leaf", 0.5).map_err(err)?,
                        centroid: num(params, "centroid", 0.0).map_err(err)? != 0.0,
                    },
                    "random_downsample" => Kernel::RandomDownsample {
                        max_n: count(params, "max_n").map_err(err)?,
                        seed: params
                            .get("seed")
                            .map_or(Ok(0), |s| s.trim().parse())
                            .map_err(|_| err("bad seed".into()))?,
                    },
                    other => return Err(SimError::MissingKernel(format!("{name} (kernel `{other}`)"))),
                },
                _ => return Err(SimError::MissingKernel(name.clone())),
            },
            BlockKind::Splitter => Kernel::Splitter(count(params, "k").map_err(err)?),
            BlockKind::Merger => Kernel::Merger,
            BlockKind::Subsystem(_) | BlockKind::BusCreator | BlockKind::BusSelector => {
                return Err(SimError::MissingKernel(kind.tag()))
            }
        };
        Ok(k)
    }

    /// Output values for one firing. Delays output their state.
    pub fn fire(&self, inputs: &[&Value], state: Option<&Value>) -> Result<Vec<Value>, String> {
        let out = match self {
            Kernel::Input | Kernel::Output => return Err("port blocks are fired by the interpreter".into()),
            Kernel::Const(v) => v.clone(),
            Kernel::Gain(g) => match (g.as_slice(), inputs[0]) {
                ([g], x) => map_value(x, &|v| g * v),
                (g, x) => {
                    let data = dense(x)?;
                    if data.len() != g.len() {
                        return Err(format!("gain of {} elements on {} elements", g.len(), data.len()));
                    }
                    with_data(x, g.iter().zip(data).map(|(g, v)| g * v).collect())
                }
            },
            Kernel::Sum(neg) => fold(inputs, |i, acc, x| match (i, neg[i]) {
                (0, false) => x,
                (0, true) => -x,
                (_, false) => acc + x,
                (_, true) => acc - x,
            })?,
            Kernel::Product(div) => fold(inputs, |i, acc, x| match (i, div[i]) {
                (0, false) => x,
                (0, true) => 1.0 / x,
                (_, false) => acc * x,
                (_, true) => acc / x,
            })?,
            Kernel::Saturate(lo, hi) => map_value(inputs[0], &|x| kernels::saturate(x, *lo, *hi)),
            Kernel::Switch(th) => match inputs[1] {
                Value::Scalar(c) if *c >= *th => inputs[0].clone(),
                Value::Scalar(_) => inputs[2].clone(),
                other => return Err(format!("switch control is {other:?}")),
            },
            Kernel::MatMul => matmul(inputs[0], inputs[1])?,
            Kernel::Map(op) => map_value(inputs[0], &|x| op.apply(x)),
            Kernel::Reduce(op) => Value::Scalar(op.apply(dense(inputs[0])?)),
            Kernel::Concat => {
                let mut v = Vec::new();
                for x in inputs {
                    v.extend_from_slice(dense(x)?);
                }
                Value::Vector(v)
            }
            Kernel::Slice { start, len } => {
                let data = dense(inputs[0])?;
                let from = start - 1;
                let take = len.unwrap_or(1);
                let part = data.get(from..from + take).ok_or("slice out of range")?;
                match len {
                    Some(_) => Value::Vector(part.to_vec()),
                    None => Value::Scalar(part[0]),
                }
            }
            Kernel::Delay { init } => state.unwrap_or(init).clone(),
            Kernel::Function {
                program,
                inputs: names,
                outputs,
            } => {
                let bound = names
                    .iter()
                    .zip(inputs)
                    .map(|(n, v)| Ok((n.clone(), to_fval(v)?)))
                    .collect::<Result<Vec<_>, String>>()?;
                return program
                    .eval(bound, outputs)
                    .map_err(|e| e.to_string())
                    .map(|vals| vals.into_iter().map(from_fval).collect());
            }
            Kernel::PointTransform { r, t } => Value::Cloud(kernels::point_transform(cloud(inputs[0])?, r, *t)),
            Kernel::VoxelGrid { leaf, centroid } => Value::Cloud(
                kernels::voxel_grid(cloud(inputs[0])?, *leaf, *centroid).map_err(|e| e.to_string())?,
            ),
            Kernel::RandomDownsample { max_n, seed } => {
                Value::Cloud(kernels::random_downsample(cloud(inputs[0])?, *max_n, *seed))
            }
            Kernel::Splitter(k) => return split(inputs[0], *k),
            Kernel::Merger => merge(inputs)?,
        };
        Ok(vec![out])
    }
}

/// Shard `i` of `k` covers `shard_sizes(len, k)[i]` consecutive elements.
fn split(x: &Value, k: usize) -> Result<Vec<Value>, String> {
    let mut out = Vec::with_capacity(k);
    let mut at = 0;
    match x {
        Value::Vector(v) => {
            for n in shard_sizes(v.len(), k) {
                out.push(Value::Vector(v[at..at + n].to_vec()));
                at += n;
            }
        }
        Value::Cloud(p) => {
            for n in shard_sizes(p.len(), k) {
                out.push(Value::Cloud(p[at..at + n].to_vec()));
                at += n;
            }
        }
        other => return Err(format!("cannot split {other:?}")),
    }
    Ok(out)
}

fn merge(inputs: &[&Value]) -> Result<Value, String> {
    match inputs.first() {
        Some(Value::Cloud(_)) => {
            let mut out = Vec::new();
            for x in inputs {
                out.extend_from_slice(cloud(x)?);
            }
            Ok(Value::Cloud(out))
        }
        _ => {
            let mut out = Vec::new();
            for x in inputs {
                match x {
                    Value::Vector(v) => out.extend_from_slice(v),
                    other => return Err(format!("cannot merge {other:?}")),
                }
            }
            Ok(Value::Vector(out))
        }
    }
}

fn cloud(x: &Value) -> Result<&[[f64; 3]], String> {
    match x {
        Value::Cloud(p) => Ok(p),
        other => Err(format!("expected a point cloud, got {other:?}")),
    }
}

fn dense(x: &Value) -> Result<&[f64], String> {
    match x {
        Value::Scalar(v) => Ok(std::slice::from_ref(v)),
        Value::Vector(v) => Ok(v),
        Value::Matrix { data, .. } => Ok(data),
        other => Err(format!("expected a dense value, got {other:?}")),
    }
}

fn with_data(shape: &Value, data: Vec<f64>) -> Value {
    match shape {
        Value::Scalar(_) => Value::Scalar(data[0]),
        Value::Matrix { rows, cols, .. } => Value::Matrix {
            rows: *rows,
            cols: *cols,
            data,
        },
        _ => Value::Vector(data),
    }
}

fn map_value(x: &Value, f: &dyn Fn(f64) -> f64) -> Value {
    match x {
        Value::Scalar(v) => Value::Scalar(f(*v)),
        Value::Vector(v) => Value::Vector(v.iter().map(|&v| f(v)).collect()),
        Value::Matrix { rows, cols, data } => Value::Matrix {
            rows: *rows,
            cols: *cols,
            data: data.iter().map(|&v| f(v)).collect(),
        },
        Value::Cloud(p) => Value::Cloud(p.iter().map(|r| [f(r[0]), f(r[1]), f(r[2])]).collect()),
        Value::Bus(elems) => Value::Bus(elems.iter().map(|(n, v)| (n.clone(), map_value(v, f))).collect()),
    }
}

/// Elementwise left fold with scalar broadcast: `op(i, acc, x_i)`, where
/// the accumulator is ignored for `i = 0`.
fn fold(inputs: &[&Value], op: impl Fn(usize, f64, f64) -> f64) -> Result<Value, String> {
    let shape = inputs
        .iter()
        .find(|x| !matches!(x, Value::Scalar(_)))
        .copied()
        .unwrap_or(inputs[0]);
    let data: Vec<&[f64]> = inputs.iter().map(|x| dense(x)).collect::<Result<_, _>>()?;
    let n = dense(shape)?.len();
    if let Some(bad) = data.iter().find(|d| d.len() != 1 && d.len() != n) {
        return Err(format!("operands of {} and {n} elements", bad.len()));
    }
    let out = (0..n)
        .map(|e| {
            data.iter()
                .enumerate()
                .fold(0.0, |acc, (i, d)| op(i, acc, if d.len() == 1 { d[0] } else { d[e] }))
        })
        .collect();
    Ok(with_data(shape, out))
}

/// `c[i][j] = ((a[i][0]*b[0][j] + a[i][1]*b[1][j]) + ...)`.
fn matmul(a: &Value, b: &Value) -> Result<Value, String> {
    let Value::Matrix { rows, cols: inner, data: ad } = a else {
        return Err("MatMul needs a matrix on the left".into());
    };
    let (bd, cols, is_vec) = match b {
        Value::Matrix { rows: r, cols: c, data } if r == inner => (data, *c, false),
        Value::Vector(v) if v.len() == *inner => (v, 1, true),
        _ => return Err("MatMul operands do not agree".into()),
    };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..*rows {
        for j in 0..cols {
            let mut acc = ad[i * inner] * bd[j];
            for k in 1..*inner {
                acc = acc + ad[i * inner + k] * bd[k * cols + j];
            }
            out.push(acc);
        }
    }
    Ok(if is_vec {
        Value::Vector(out)
    } else {
        Value::Matrix {
            rows: *rows,
            cols,
            data: out,
        }
    })
}

fn to_fval(x: &Value) -> Result<FVal, String> {
    match x {
        Value::Scalar(v) => Ok(FVal::Scalar(*v)),
        Value::Vector(v) => Ok(FVal::Array(v.clone())),
        Value::Cloud(p) => Ok(FVal::Cloud(p.clone())),
        other => Err(format!("function bodies do not take {other:?}")),
    }
}

fn from_fval(x: FVal) -> Value {
    match x {
        FVal::Scalar(v) => Value::Scalar(v),
        FVal::Array(v) => Value::Vector(v),
        FVal::Cloud(p) => Value::Cloud(p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(kind: &str, params: &[(&str, &str)], in_types: &[DType]) -> Kernel {
        let params = params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Kernel::compile("b", &kind.parse().unwrap(), &params, in_types, &ToolboxRegistry::builtin()).unwrap()
    }

    fn fire1(k: &Kernel, inputs: &[Value]) -> Value {
        let refs: Vec<&Value> = inputs.iter().collect();
        k.fire(&refs, None).unwrap().remove(0)
    }

    #[test]
    fn gain_doubles() {
        let k = kernel("Gain", &[("gain", "2")], &[DType::Scalar]);
        assert_eq!(fire1(&k, &[Value::Scalar(3.0)]), Value::Scalar(6.0));
        let c = fire1(&k, &[Value::Cloud(vec![[1.0, 2.0, 3.0]])]);
        assert_eq!(c, Value::Cloud(vec![[2.0, 4.0, 6.0]]));
    }

    #[test]
    fn sum_and_product_fold_left() {
        let s = kernel("Sum", &[("signs", "-+-")], &[]);
        let v = fire1(&s, &[Value::Scalar(1.0), Value::Vector(vec![10.0, 20.0]), Value::Scalar(2.0)]);
        assert_eq!(v, Value::Vector(vec![7.0, 17.0]));
        let p = kernel("Product", &[("ops", "/*")], &[]);
        assert_eq!(fire1(&p, &[Value::Scalar(4.0), Value::Scalar(2.0)]), Value::Scalar(0.5));
    }

    #[test]
    fn switch_threshold_is_inclusive() {
        let k = kernel("Switch", &[("threshold", "1")], &[]);
        let pick = |c| fire1(&k, &[Value::Scalar(10.0), Value::Scalar(c), Value::Scalar(20.0)]);
        assert_eq!(pick(1.0), Value::Scalar(10.0));
        assert_eq!(pick(0.5), Value::Scalar(20.0));
        assert_eq!(pick(f64::NAN), Value::Scalar(20.0));
    }

    #[test]
    fn matmul_by_vector() {
        let a = Value::Matrix {
            rows: 2,
            cols: 2,
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        assert_eq!(
            fire1(&Kernel::MatMul, &[a, Value::Vector(vec![1.0, 1.0])]),
            Value::Vector(vec![3.0, 7.0])
        );
    }

    #[test]
    fn slice_and_concat() {
        let s = kernel("Slice", &[("start", "2")], &[]);
        assert_eq!(fire1(&s, &[Value::Vector(vec![1.0, 2.0, 3.0])]), Value::Scalar(2.0));
        let s = kernel("Slice", &[("start", "2"), ("len", "2")], &[]);
        assert_eq!(fire1(&s, &[Value::Vector(vec![1.0, 2.0, 3.0])]), Value::Vector(vec![2.0, 3.0]));
        assert_eq!(
            fire1(&Kernel::Concat, &[Value::Scalar(1.0), Value::Vector(vec![2.0, 3.0])]),
            Value::Vector(vec![1.0, 2.0, 3.0])
        );
    }

    #[test]
    fn split_then_merge_is_identity() {
        let v = Value::Cloud((0..7).map(|i| [i as f64, 0.0, 0.0]).collect());
        let shards = Kernel::Splitter(3).fire(&[&v], None).unwrap();
        assert_eq!(shards.iter().map(|s| s.flat().len() / 3).collect::<Vec<_>>(), vec![3, 2, 2]);
        let refs: Vec<&Value> = shards.iter().collect();
        assert_eq!(Kernel::Merger.fire(&refs, None).unwrap()[0], v);
    }

    #[test]
    fn delay_starts_from_init() {
        let k = kernel("UnitDelay", &[("init", "1.5")], &[DType::Vector(2)]);
        assert_eq!(fire1(&k, &[Value::Vector(vec![9.0, 9.0])]), Value::Vector(vec![1.5, 1.5]));
        let k = kernel("UnitDelay", &[], &[DType::PointCloud(4)]);
        assert_eq!(fire1(&k, &[Value::Cloud(vec![])]), Value::Cloud(vec![]));
    }

    #[test]
    fn unknown_kernel_is_missing() {
        let params = BTreeMap::new();
        let r = Kernel::compile("b", &BlockKind::Toolbox("Nope".into()), &params, &[], &ToolboxRegistry::builtin());
        assert!(matches!(r, Err(SimError::MissingKernel(_))));
    }
}
