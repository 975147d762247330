use std::collections::BTreeMap;

use serde_json::{json, Map, Number, Value as Json};

use crate::model::DType;

use super::SimError;

/// Runtime datum on a signal.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(f64),
    Vector(Vec<f64>),
    /// Row-major.
    Matrix { rows: usize, cols: usize, data: Vec<f64> },
    Cloud(Vec<[f64; 3]>),
    Bus(Vec<(String, Value)>),
}

impl Value {
    /// Value of type `dtype` with every entry `x`. Point clouds start empty.
    pub fn filled(dtype: &DType, x: f64) -> Value {
        match dtype {
            DType::Scalar => Value::Scalar(x),
            DType::Vector(n) => Value::Vector(vec![x; *n]),
            DType::Matrix(r, c) => Value::Matrix {
                rows: *r,
                cols: *c,
                data: vec![x; r * c],
            },
            DType::PointCloud(_) => Value::Cloud(Vec::new()),
            DType::Bus(layout) => Value::Bus(
                layout
                    .elements
                    .iter()
                    .map(|e| (e.name.clone(), Value::filled(&e.dtype, x)))
                    .collect(),
            ),
        }
    }

    pub fn conforms(&self, dtype: &DType) -> bool {
        match (self, dtype) {
            (Value::Scalar(_), DType::Scalar) => true,
            (Value::Vector(v), DType::Vector(n)) => v.len() == *n,
            (Value::Matrix { rows, cols, data }, DType::Matrix(r, c)) => {
                rows == r && cols == c && data.len() == r * c
            }
            (Value::Cloud(p), DType::PointCloud(cap)) => p.len() <= *cap,
            (Value::Bus(elems), DType::Bus(layout)) => {
                elems.len() == layout.elements.len()
                    && elems
                        .iter()
                        .zip(&layout.elements)
                        .all(|((n, v), e)| *n == e.name && v.conforms(&e.dtype))
            }
            _ => false,
        }
    }

    /// All numbers in storage order (clouds row by row).
    pub fn flat(&self) -> Vec<f64> {
        match self {
            Value::Scalar(x) => vec![*x],
            Value::Vector(v) => v.clone(),
            Value::Matrix { data, .. } => data.clone(),
            Value::Cloud(p) => p.iter().flatten().copied().collect(),
            Value::Bus(elems) => elems.iter().flat_map(|(_, v)| v.flat()).collect(),
        }
    }

    fn shape_name(&self) -> &'static str {
        match self {
            Value::Scalar(_) => "scalar",
            Value::Vector(_) => "vector",
            Value::Matrix { .. } => "matrix",
            Value::Cloud(_) => "cloud",
            Value::Bus(_) => "bus",
        }
    }

    /// Equality of every bit, so `-0 != +0` and equal NaNs compare equal.
    pub fn bit_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Bus(a), Value::Bus(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|((na, va), (nb, vb))| na == nb && va.bit_eq(vb))
            }
            (Value::Matrix { rows: r1, cols: c1, .. }, Value::Matrix { rows: r2, cols: c2, .. })
                if (r1, c1) != (r2, c2) =>
            {
                false
            }
            _ if self.shape_name() != other.shape_name() => false,
            _ => {
                let (a, b) = (self.flat(), other.flat());
                a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            Value::Scalar(x) => num(*x),
            Value::Vector(v) => Json::Array(v.iter().map(|x| num(*x)).collect()),
            Value::Matrix { cols, data, .. } => json!({
                "matrix": data.chunks(*cols).map(|r| Json::Array(r.iter().map(|x| num(*x)).collect())).collect::<Vec<_>>()
            }),
            Value::Cloud(p) => json!({
                "cloud": p.iter().map(|r| Json::Array(r.iter().map(|x| num(*x)).collect())).collect::<Vec<_>>()
            }),
            Value::Bus(elems) => json!({
                "bus": elems.iter().map(|(n, v)| json!([n, v.to_json()])).collect::<Vec<_>>()
            }),
        }
    }

    pub fn from_json(j: &Json) -> Result<Value, SimError> {
        let bad = || SimError::Trace(format!("not a value: {j}"));
        match j {
            Json::Number(_) | Json::String(_) => Ok(Value::Scalar(parse_num(j)?)),
            Json::Array(items) => Ok(Value::Vector(items.iter().map(parse_num).collect::<Result<_, _>>()?)),
            Json::Object(obj) if obj.len() == 1 => {
                let (key, inner) = obj.iter().next().expect("one entry");
                let rows = inner.as_array().ok_or_else(bad)?;
                match key.as_str() {
                    "matrix" => {
                        let mut data = Vec::new();
                        let mut cols = None;
                        for r in rows {
                            let r = r.as_array().ok_or_else(bad)?;
                            if *cols.get_or_insert(r.len()) != r.len() {
                                return Err(bad());
                            }
                            for x in r {
                                data.push(parse_num(x)?);
                            }
                        }
                        Ok(Value::Matrix {
                            rows: rows.len(),
                            cols: cols.unwrap_or(0),
                            data,
                        })
                    }
                    "cloud" => rows
                        .iter()
                        .map(|r| match r.as_array().map(Vec::as_slice) {
                            Some([x, y, z]) => Ok([parse_num(x)?, parse_num(y)?, parse_num(z)?]),
                            _ => Err(bad()),
                        })
                        .collect::<Result<_, _>>()
                        .map(Value::Cloud),
                    "bus" => rows
                        .iter()
                        .map(|e| match e.as_array().map(Vec::as_slice) {
                            Some([Json::String(n), v]) => Ok((n.clone(), Value::from_json(v)?)),
                            _ => Err(bad()),
                        })
                        .collect::<Result<_, _>>()
                        .map(Value::Bus),
                    _ => Err(bad()),
                }
            }
            _ => Err(bad()),
        }
    }
}

/// Finite numbers as shortest round-trip decimals; non-finite ones as the
/// strings `NaN`, `Infinity`, `-Infinity`.
fn num(x: f64) -> Json {
    match Number::from_f64(x) {
        Some(n) => Json::Number(n),
        None if x.is_nan() => Json::String("NaN".into()),
        None if x > 0.0 => Json::String("Infinity".into()),
        None => Json::String("-Infinity".into()),
    }
}

fn parse_num(j: &Json) -> Result<f64, SimError> {
    match j {
        Json::Number(n) => n.as_f64().ok_or_else(|| SimError::Trace(format!("bad number {n}"))),
        Json::String(s) => match s.as_str() {
            "NaN" => Ok(f64::NAN),
            "Infinity" => Ok(f64::INFINITY),
            "-Infinity" => Ok(f64::NEG_INFINITY),
            _ => Err(SimError::Trace(format!("bad number `{s}`"))),
        },
        other => Err(SimError::Trace(format!("bad number {other}"))),
    }
}

/// Port values per step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub steps: Vec<BTreeMap<String, Value>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// JSON Lines: one object per step, ports in name order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            let obj: Map<String, Json> = step.iter().map(|(k, v)| (k.clone(), v.to_json())).collect();
            out.push_str(&Json::Object(obj).to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, SimError> {
        let mut steps = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let j: Json = serde_json::from_str(line).map_err(|e| SimError::Trace(format!("line {}: {e}", i + 1)))?;
            let Json::Object(obj) = j else {
                return Err(SimError::Trace(format!("line {}: expected an object", i + 1)));
            };
            let mut step = BTreeMap::new();
            for (k, v) in &obj {
                step.insert(k.clone(), Value::from_json(v)?);
            }
            steps.push(step);
        }
        Ok(Trace { steps })
    }

    pub fn bit_eq(&self, other: &Trace) -> bool {
        self.steps.len() == other.steps.len()
            && self.steps.iter().zip(&other.steps).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|((ka, va), (kb, vb))| ka == kb && va.bit_eq(vb))
            })
    }
}

/// First point where two traces differ.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub step: usize,
    pub port: String,
    /// Index into the value's flattened numbers.
    pub index: usize,
    /// `None` past the end of a shorter point cloud.
    pub a: Option<f64>,
    pub b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceDiff {
    pub first: Option<Divergence>,
    /// Number of (step, port) values that differ.
    pub differing_values: usize,
}

impl TraceDiff {
    pub fn is_empty(&self) -> bool {
        self.first.is_none()
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    a.to_bits() == b.to_bits() || (tol > 0.0 && (a - b).abs() <= tol)
}

/// Compares two traces bitwise (`tol == 0`) or within an absolute
/// tolerance. Ports, step counts and value kinds must agree.
pub fn compare_traces(a: &Trace, b: &Trace, tol: f64) -> Result<TraceDiff, SimError> {
    if a.steps.len() != b.steps.len() {
        return Err(SimError::ShapeMismatch(format!("{} steps vs {}", a.steps.len(), b.steps.len())));
    }
    let mut diff = TraceDiff::default();
    for (step, (sa, sb)) in a.steps.iter().zip(&b.steps).enumerate() {
        if !sa.keys().eq(sb.keys()) {
            return Err(SimError::ShapeMismatch(format!("ports differ at step {step}")));
        }
        for ((port, va), vb) in sa.iter().zip(sb.values()) {
            let shape_ok = match (va, vb) {
                (Value::Cloud(_), Value::Cloud(_)) => true,
                (Value::Matrix { rows: r1, cols: c1, .. }, Value::Matrix { rows: r2, cols: c2, .. }) => {
                    (r1, c1) == (r2, c2)
                }
                _ => va.shape_name() == vb.shape_name() && va.flat().len() == vb.flat().len(),
            };
            if !shape_ok {
                return Err(SimError::ShapeMismatch(format!("port `{port}` at step {step}")));
            }
            let (fa, fb) = (va.flat(), vb.flat());
            let at = (0..fa.len().max(fb.len())).find(|&i| match (fa.get(i), fb.get(i)) {
                (Some(x), Some(y)) => !close(*x, *y, tol),
                _ => true,
            });
            if let Some(index) = at {
                diff.differing_values += 1;
                if diff.first.is_none() {
                    diff.first = Some(Divergence {
                        step,
                        port: port.clone(),
                        index,
                        a: fa.get(index).copied(),
                        b: fb.get(index).copied(),
                    });
                }
            }
        }
    }
    Ok(diff)
}
