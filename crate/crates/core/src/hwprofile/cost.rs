//! Op-count formulas and the per-kind cost table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Deserialize;

use crate::extractor::FlatIR;
use crate::fnl::OpCounts;
use crate::model::kind::{split_list, BlockKind};
use crate::model::DType;
use crate::toolbox::{ToolboxEntry, ToolboxRegistry};

use super::OpClass;

/// Op counts per class for one block execution.
pub type CostHint = OpCounts;

impl OpCounts {
    pub fn get(&self, class: OpClass) -> u64 {
        match class {
            OpClass::Arith => self.arith,
            OpClass::Trig => self.trig,
            OpClass::Mem => self.mem,
            OpClass::Cmp => self.cmp,
        }
    }

    pub fn set(&mut self, class: OpClass, count: u64) {
        match class {
            OpClass::Arith => self.arith = count,
            OpClass::Trig => self.trig = count,
            OpClass::Mem => self.mem = count,
            OpClass::Cmp => self.cmp = count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("dimension `{var}` is not bound for block `{block}`")]
    UnboundDimension { block: String, var: String },
    #[error("block `{0}` has no bound cost")]
    UnboundCost(String),
    #[error("no cost entry for kind `{0}`")]
    MissingEntry(String),
    #[error("bad cost formula `{text}`: {msg}")]
    BadFormula { text: String, msg: String },
    #[error("cost table: {0}")]
    Table(String),
    #[error("block `{block}`: {msg}")]
    Block { block: String, msg: String },
}

/// Signed integer polynomial over dimension variables, e.g. `3*n + m*k - m`.
/// Evaluation clamps negative totals to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Formula {
    text: String,
    terms: Vec<(i64, Vec<String>)>,
}

impl Formula {
    pub fn constant(c: u64) -> Formula {
        Formula {
            text: c.to_string(),
            terms: vec![(c as i64, vec![])],
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().flat_map(|(_, v)| v.iter().map(String::as_str))
    }

    pub fn eval(&self, dims: &BTreeMap<&str, u64>) -> Result<u64, String> {
        let mut total: i128 = 0;
        for (coeff, vars) in &self.terms {
            let mut term = *coeff as i128;
            for v in vars {
                let d = dims.get(v.as_str()).ok_or_else(|| v.clone())?;
                term = term.saturating_mul(*d as i128);
            }
            total = total.saturating_add(term);
        }
        Ok(total.clamp(0, u64::MAX as i128) as u64)
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl FromStr for Formula {
    type Err = CostError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let bad = |msg: &str| CostError::BadFormula {
            text: text.to_string(),
            msg: msg.to_string(),
        };
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(bad("empty"));
        }
        let mut terms = Vec::new();
        let mut sign = 1i64;
        let mut rest = compact.as_str();
        if let Some(r) = rest.strip_prefix('-') {
            sign = -1;
            rest = r;
        }
        loop {
            let end = rest.find(['+', '-']).unwrap_or(rest.len());
            let term = &rest[..end];
            if term.is_empty() {
                return Err(bad("empty term"));
            }
            let mut coeff = sign;
            let mut vars = Vec::new();
            for factor in term.split('*') {
                if factor.is_empty() {
                    return Err(bad("empty factor"));
                }
                if factor.chars().all(|c| c.is_ascii_digit()) {
                    let c: i64 = factor.parse().map_err(|_| bad("coefficient too large"))?;
                    coeff = coeff.checked_mul(c).ok_or_else(|| bad("coefficient too large"))?;
                } else if crate::model::is_identifier(factor) {
                    vars.push(factor.to_string());
                } else {
                    return Err(bad(&format!("unexpected factor `{factor}`")));
                }
            }
            terms.push((coeff, vars));
            if end == rest.len() {
                break;
            }
            sign = if rest.as_bytes()[end] == b'-' { -1 } else { 1 };
            rest = &rest[end + 1..];
        }
        Ok(Formula {
            text: text.trim().to_string(),
            terms,
        })
    }
}

/// Element count used for costs; clouds count rows at capacity.
fn elems(d: &DType) -> u64 {
    d.element_count() as u64
}

/// Scalar values carried (clouds count three per row).
fn values(d: &DType) -> u64 {
    match d {
        DType::PointCloud(n) => 3 * *n as u64,
        other => other.element_count() as u64,
    }
}

/// Dimension bindings for a block with concrete port types:
/// `n` principal input elements, `v` principal input values, `m` output
/// elements, `a` all input elements, `k` inputs, `q` outputs, and for MatMul
/// `mac` multiply-accumulates.
pub fn block_dims(kind: &BlockKind, inputs: &[DType], outputs: &[DType]) -> BTreeMap<&'static str, u64> {
    let principal = inputs.first().or(outputs.first());
    let mut dims = BTreeMap::new();
    dims.insert("n", principal.map_or(0, elems));
    dims.insert("v", principal.map_or(0, values));
    dims.insert("m", outputs.first().map_or(0, elems));
    dims.insert("a", inputs.iter().map(elems).sum());
    dims.insert("k", inputs.len() as u64);
    dims.insert("q", outputs.len() as u64);
    if let (BlockKind::MatMul, [DType::Matrix(r, inner), rhs]) = (kind, inputs) {
        let c = match rhs {
            DType::Matrix(_, c) => *c,
            _ => 1,
        };
        dims.insert("mac", (*r * *inner * c) as u64);
    }
    dims
}

#[derive(Debug, Deserialize)]
struct CostFile {
    kinds: BTreeMap<String, BTreeMap<String, String>>,
}

/// Per-kind op-count formulas, looked up by full tag (`ElementwiseMap(sin)`)
/// then by base name (`ElementwiseMap`).
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    entries: BTreeMap<String, BTreeMap<OpClass, Formula>>,
}

impl CostTable {
    pub fn parse(text: &str) -> Result<CostTable, CostError> {
        let file: CostFile = toml::from_str(text).map_err(|e| CostError::Table(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (kind, classes) in file.kinds {
            let mut formulas = BTreeMap::new();
            for (class, formula) in classes {
                let class: OpClass = class.parse().map_err(CostError::Table)?;
                formulas.insert(class, formula.parse()?);
            }
            entries.insert(kind, formulas);
        }
        Ok(CostTable { entries })
    }

    pub fn builtin() -> CostTable {
        CostTable::parse(include_str!("../../../../data/costs.toml")).expect("shipped cost table parses")
    }

    pub fn entry(&self, kind: &BlockKind) -> Option<&BTreeMap<OpClass, Formula>> {
        self.entries
            .get(&kind.tag())
            .or_else(|| self.entries.get(kind.base_name()))
    }
}

fn eval_formulas(
    block: &str,
    formulas: &BTreeMap<OpClass, Formula>,
    dims: &BTreeMap<&str, u64>,
) -> Result<CostHint, CostError> {
    let mut hint = CostHint::default();
    for (class, f) in formulas {
        let count = f.eval(dims).map_err(|var| CostError::UnboundDimension {
            block: block.to_string(),
            var,
        })?;
        hint.set(*class, count);
    }
    Ok(hint)
}

/// Binds a cost hint to every block of the IR from its concrete port types:
/// FunctionBlocks from their bodies, opaque toolbox kinds from the registry
/// formula, everything else from the table.
pub fn bind_costs(ir: &mut FlatIR, table: &CostTable, registry: &ToolboxRegistry) -> Result<(), CostError> {
    let dtypes: BTreeMap<String, DType> = ir.vars.iter().map(|v| (v.name.clone(), v.dtype.clone())).collect();
    for block in &mut ir.blocks {
        let ins: Vec<DType> = block.inputs.iter().map(|v| dtypes[v].clone()).collect();
        let outs: Vec<DType> = block.outputs.iter().map(|v| dtypes[v].clone()).collect();
        let hint = match &block.kind {
            BlockKind::FunctionBlock(fb) => {
                let names = split_list(block.params.get("inputs").map(String::as_str).unwrap_or(""));
                let outputs = split_list(block.params.get("outputs").map(String::as_str).unwrap_or(""));
                let named: Vec<(String, DType)> = names.into_iter().zip(ins.iter().cloned()).collect();
                fb.program
                    .check(&named, &outputs)
                    .map_err(|e| CostError::Block {
                        block: block.uname.clone(),
                        msg: e.to_string(),
                    })?
                    .ops
            }
            BlockKind::Toolbox(name) => match registry.get(name) {
                Some(ToolboxEntry::Opaque(entry)) => {
                    eval_formulas(&block.uname, &entry.cost, &block_dims(&block.kind, &ins, &outs))?
                }
                _ => return Err(CostError::MissingEntry(block.kind.tag())),
            },
            kind => {
                let formulas = table
                    .entry(kind)
                    .ok_or_else(|| CostError::MissingEntry(kind.tag()))?;
                eval_formulas(&block.uname, formulas, &block_dims(kind, &ins, &outs))?
            }
        };
        block.cost_hint = Some(hint);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(pairs: &[(&'static str, u64)]) -> BTreeMap<&'static str, u64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn formula_parse_and_eval() {
        let f: Formula = "3*n + 2".parse().unwrap();
        assert_eq!(f.eval(&dims(&[("n", 10)])).unwrap(), 32);
        let f: Formula = "m*k - m".parse().unwrap();
        assert_eq!(f.eval(&dims(&[("m", 4), ("k", 3)])).unwrap(), 8);
        let f: Formula = "-n".parse().unwrap();
        assert_eq!(f.eval(&dims(&[("n", 5)])).unwrap(), 0);
        let f: Formula = "n*n*2".parse().unwrap();
        assert_eq!(f.eval(&dims(&[("n", 3)])).unwrap(), 18);
        assert_eq!(f.eval(&dims(&[])).unwrap_err(), "n");
        for bad in ["", "3*", "n+", "2x", "n^2", "(n)"] {
            assert!(bad.parse::<Formula>().is_err(), "{bad}");
        }
    }

    #[test]
    fn shipped_table_covers_every_table_kind() {
        let table = CostTable::builtin();
        for tag in [
            "Inport", "Outport", "Const", "Gain", "Sum", "Product", "Saturate", "Switch", "MatMul",
            "ElementwiseMap(sin)", "ElementwiseMap(neg)", "Reduce(max)", "Concat", "Slice", "UnitDelay",
            "Splitter", "Merger",
        ] {
            let kind: BlockKind = tag.parse().unwrap();
            assert!(table.entry(&kind).is_some(), "{tag}");
        }
    }

    #[test]
    fn gain_over_vector_costs_n_arith() {
        let table = CostTable::builtin();
        let kind = BlockKind::Gain;
        let d = block_dims(&kind, &[DType::Vector(100)], &[DType::Vector(100)]);
        let hint = eval_formulas("g", table.entry(&kind).unwrap(), &d).unwrap();
        assert_eq!(
            hint,
            CostHint {
                arith: 100,
                ..CostHint::default()
            }
        );
    }

    #[test]
    fn matmul_binds_mac() {
        let d = block_dims(&BlockKind::MatMul, &[DType::Matrix(2, 3), DType::Matrix(3, 4)], &[DType::Matrix(2, 4)]);
        assert_eq!(d["mac"], 24);
        let d = block_dims(&BlockKind::Gain, &[DType::Scalar], &[DType::Scalar]);
        assert!(!d.contains_key("mac"));
    }
}
