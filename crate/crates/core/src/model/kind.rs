use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::fnl::{FnlError, Program};

use super::Subsystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MapOp {
    Neg,
    Abs,
    Sqrt,
    Sin,
    Cos,
    Tan,
    Atan,
    Exp,
    Log,
    Square,
    Floor,
}

impl MapOp {
    pub const ALL: [MapOp; 11] = [
        MapOp::Neg,
        MapOp::Abs,
        MapOp::Sqrt,
        MapOp::Sin,
        MapOp::Cos,
        MapOp::Tan,
        MapOp::Atan,
        MapOp::Exp,
        MapOp::Log,
        MapOp::Square,
        MapOp::Floor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MapOp::Neg => "neg",
            MapOp::Abs => "abs",
            MapOp::Sqrt => "sqrt",
            MapOp::Sin => "sin",
            MapOp::Cos => "cos",
            MapOp::Tan => "tan",
            MapOp::Atan => "atan",
            MapOp::Exp => "exp",
            MapOp::Log => "log",
            MapOp::Square => "square",
            MapOp::Floor => "floor",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            MapOp::Neg => -x,
            MapOp::Abs => x.abs(),
            MapOp::Sqrt => x.sqrt(),
            MapOp::Sin => x.sin(),
            MapOp::Cos => x.cos(),
            MapOp::Tan => x.tan(),
            MapOp::Atan => x.atan(),
            MapOp::Exp => x.exp(),
            MapOp::Log => x.ln(),
            MapOp::Square => x * x,
            MapOp::Floor => x.floor(),
        }
    }

    pub fn is_transcendental(self) -> bool {
        matches!(
            self,
            MapOp::Sqrt | MapOp::Sin | MapOp::Cos | MapOp::Tan | MapOp::Atan | MapOp::Exp | MapOp::Log
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReduceOp {
    Sum,
    Prod,
    Min,
    Max,
}

impl ReduceOp {
    pub const ALL: [ReduceOp; 4] = [ReduceOp::Sum, ReduceOp::Prod, ReduceOp::Min, ReduceOp::Max];

    pub fn name(self) -> &'static str {
        match self {
            ReduceOp::Sum => "sum",
            ReduceOp::Prod => "prod",
            ReduceOp::Min => "min",
            ReduceOp::Max => "max",
        }
    }

    /// Left fold starting from the first element.
    pub fn apply(self, values: &[f64]) -> f64 {
        let mut iter = values.iter().copied();
        let first = iter.next().unwrap_or(0.0);
        iter.fold(first, |acc, x| match self {
            ReduceOp::Sum => acc + x,
            ReduceOp::Prod => acc * x,
            ReduceOp::Min => acc.min(x),
            ReduceOp::Max => acc.max(x),
        })
    }
}

/// Source text and parsed form of a `FunctionBlock` body.
#[derive(Debug, Clone)]
pub struct FunctionBody {
    pub source: String,
    pub program: Program,
}

impl FunctionBody {
    pub fn new(source: &str) -> Result<Self, FnlError> {
        Ok(FunctionBody {
            source: source.to_string(),
            program: Program::parse(source)?,
        })
    }
}

impl PartialEq for FunctionBody {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind {
    Inport,
    Outport,
    Const,
    Gain,
    Sum,
    Product,
    Saturate,
    Switch,
    MatMul,
    ElementwiseMap(MapOp),
    Reduce(ReduceOp),
    Concat,
    Slice,
    UnitDelay,
    BusCreator,
    BusSelector,
    Subsystem(Box<Subsystem>),
    FunctionBlock(FunctionBody),
    Toolbox(String),
    Splitter,
    Merger,
}

impl BlockKind {
    /// Kind name as written in model and IR files (`Gain`, `ElementwiseMap(sin)`,
    /// `Toolbox(VoxelGridDownsample)`).
    pub fn tag(&self) -> String {
        match self {
            BlockKind::ElementwiseMap(op) => format!("ElementwiseMap({})", op.name()),
            BlockKind::Reduce(op) => format!("Reduce({})", op.name()),
            BlockKind::Toolbox(name) => format!("Toolbox({name})"),
            other => other.base_name().to_string(),
        }
    }

    pub fn base_name(&self) -> &'static str {
        match self {
            BlockKind::Inport => "Inport",
            BlockKind::Outport => "Outport",
            BlockKind::Const => "Const",
            BlockKind::Gain => "Gain",
            BlockKind::Sum => "Sum",
            BlockKind::Product => "Product",
            BlockKind::Saturate => "Saturate",
            BlockKind::Switch => "Switch",
            BlockKind::MatMul => "MatMul",
            BlockKind::ElementwiseMap(_) => "ElementwiseMap",
            BlockKind::Reduce(_) => "Reduce",
            BlockKind::Concat => "Concat",
            BlockKind::Slice => "Slice",
            BlockKind::UnitDelay => "UnitDelay",
            BlockKind::BusCreator => "BusCreator",
            BlockKind::BusSelector => "BusSelector",
            BlockKind::Subsystem(_) => "Subsystem",
            BlockKind::FunctionBlock(_) => "FunctionBlock",
            BlockKind::Toolbox(_) => "Toolbox",
            BlockKind::Splitter => "Splitter",
            BlockKind::Merger => "Merger",
        }
    }

    /// Kinds that only route signals and vanish during extraction.
    pub fn is_structural(&self) -> bool {
        matches!(
            self,
            BlockKind::BusCreator | BlockKind::BusSelector | BlockKind::Subsystem(_)
        )
    }

    pub fn is_stateful(&self) -> bool {
        matches!(self, BlockKind::UnitDelay)
    }
}

/// Parses a non-subsystem, non-function kind tag. `Subsystem` and
/// `FunctionBlock` carry bodies and are built by the model parser.
impl FromStr for BlockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(inner) = strip_call(s, "ElementwiseMap") {
            return MapOp::ALL
                .into_iter()
                .find(|op| op.name() == inner)
                .map(BlockKind::ElementwiseMap)
                .ok_or_else(|| format!("unknown map op `{inner}`"));
        }
        if let Some(inner) = strip_call(s, "Reduce") {
            return ReduceOp::ALL
                .into_iter()
                .find(|op| op.name() == inner)
                .map(BlockKind::Reduce)
                .ok_or_else(|| format!("unknown reduce op `{inner}`"));
        }
        if let Some(inner) = strip_call(s, "Toolbox") {
            if inner.is_empty() {
                return Err("empty toolbox kind".into());
            }
            return Ok(BlockKind::Toolbox(inner.to_string()));
        }
        Ok(match s {
            "Inport" => BlockKind::Inport,
            "Outport" => BlockKind::Outport,
            "Const" => BlockKind::Const,
            "Gain" => BlockKind::Gain,
            "Sum" => BlockKind::Sum,
            "Product" => BlockKind::Product,
            "Saturate" => BlockKind::Saturate,
            "Switch" => BlockKind::Switch,
            "MatMul" => BlockKind::MatMul,
            "Concat" => BlockKind::Concat,
            "Slice" => BlockKind::Slice,
            "UnitDelay" => BlockKind::UnitDelay,
            "BusCreator" => BlockKind::BusCreator,
            "BusSelector" => BlockKind::BusSelector,
            "Splitter" => BlockKind::Splitter,
            "Merger" => BlockKind::Merger,
            other => return Err(format!("unknown block kind `{other}`")),
        })
    }
}

fn strip_call<'a>(s: &'a str, head: &str) -> Option<&'a str> {
    s.strip_prefix(head)?
        .strip_prefix('(')?
        .strip_suffix(')')
        .map(str::trim)
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attr {
    Stateless,
    ElementIndependent,
}

impl Attr {
    pub fn name(self) -> &'static str {
        match self {
            Attr::Stateless => "stateless",
            Attr::ElementIndependent => "element_independent",
        }
    }
}

impl FromStr for Attr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "stateless" => Ok(Attr::Stateless),
            "element_independent" => Ok(Attr::ElementIndependent),
            other => Err(format!("unknown block attribute `{other}`")),
        }
    }
}

/// Port counts a kind admits, given its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Fixed { inputs: usize, outputs: usize },
    /// Variable arity decided by the block's explicit port counts.
    Declared { min_inputs: usize, min_outputs: usize },
}

pub fn split_list(text: &str) -> Vec<String> {
    text.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn count_param(params: &BTreeMap<String, String>, key: &str) -> Result<usize, String> {
    let text = params
        .get(key)
        .ok_or_else(|| format!("missing parameter `{key}`"))?;
    text.trim()
        .parse()
        .map_err(|_| format!("parameter `{key}` is not a count: `{text}`"))
}

/// Arity table. Variable-arity kinds derive their port counts from
/// parameters; `Concat` and `Toolbox` blocks declare them explicitly.
pub fn arity(kind: &BlockKind, params: &BTreeMap<String, String>) -> Result<Arity, String> {
    let fixed = |inputs, outputs| Ok(Arity::Fixed { inputs, outputs });
    match kind {
        BlockKind::Inport | BlockKind::Const => fixed(0, 1),
        BlockKind::Outport => fixed(1, 0),
        BlockKind::Gain
        | BlockKind::Saturate
        | BlockKind::ElementwiseMap(_)
        | BlockKind::Reduce(_)
        | BlockKind::Slice
        | BlockKind::UnitDelay => fixed(1, 1),
        BlockKind::Switch => fixed(3, 1),
        BlockKind::MatMul => fixed(2, 1),
        BlockKind::Sum => {
            let signs = params.get("signs").map(String::as_str).unwrap_or("++");
            if let Some(bad) = signs.chars().find(|c| *c != '+' && *c != '-') {
                return Err(format!("bad sign `{bad}` in Sum signs"));
            }
            fixed(signs.chars().count(), 1)
        }
        BlockKind::Product => {
            let ops = params.get("ops").map(String::as_str).unwrap_or("**");
            if let Some(bad) = ops.chars().find(|c| *c != '*' && *c != '/') {
                return Err(format!("bad op `{bad}` in Product ops"));
            }
            fixed(ops.chars().count(), 1)
        }
        BlockKind::Concat => Ok(Arity::Declared {
            min_inputs: 2,
            min_outputs: 1,
        }),
        BlockKind::BusCreator => {
            let names = split_list(params.get("names").map(String::as_str).unwrap_or(""));
            fixed(names.len(), 1)
        }
        BlockKind::BusSelector => {
            let n = match (params.get("select"), params.get("positions")) {
                (Some(sel), _) => split_list(sel).len(),
                (None, Some(pos)) => pos.split(';').filter(|p| !p.trim().is_empty()).count(),
                (None, None) => 0,
            };
            fixed(1, n)
        }
        BlockKind::FunctionBlock(_) => {
            let inputs = split_list(params.get("inputs").map(String::as_str).unwrap_or(""));
            let outputs = split_list(params.get("outputs").map(String::as_str).unwrap_or(""));
            fixed(inputs.len(), outputs.len())
        }
        BlockKind::Subsystem(sub) => {
            let count = |pred: fn(&BlockKind) -> bool| sub.children.iter().filter(|b| pred(&b.kind)).count();
            fixed(
                count(|k| matches!(k, BlockKind::Inport)),
                count(|k| matches!(k, BlockKind::Outport)),
            )
        }
        BlockKind::Toolbox(_) => Ok(Arity::Declared {
            min_inputs: 0,
            min_outputs: 1,
        }),
        BlockKind::Splitter => fixed(1, count_param(params, "k")?),
        BlockKind::Merger => fixed(count_param(params, "k")?, 1),
    }
}

/// Minimum counts for fixed-arity kinds that have a lower bound.
pub fn min_ports(kind: &BlockKind) -> (usize, usize) {
    match kind {
        BlockKind::Sum | BlockKind::Product => (2, 1),
        BlockKind::BusCreator => (1, 1),
        BlockKind::BusSelector => (1, 1),
        BlockKind::Splitter => (1, 1),
        BlockKind::Merger => (1, 1),
        _ => (0, 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_tags_round_trip() {
        for tag in [
            "Gain",
            "ElementwiseMap(atan)",
            "Reduce(max)",
            "Toolbox(VoxelGridDownsample)",
            "UnitDelay",
            "Splitter",
        ] {
            let kind: BlockKind = tag.parse().unwrap();
            assert_eq!(kind.tag(), tag);
        }
        assert!("Foo".parse::<BlockKind>().is_err());
        assert!("ElementwiseMap(cube)".parse::<BlockKind>().is_err());
        assert!("Toolbox()".parse::<BlockKind>().is_err());
    }

    #[test]
    fn arity_from_params() {
        let mut params = BTreeMap::new();
        params.insert("signs".to_string(), "+-+".to_string());
        assert_eq!(
            arity(&BlockKind::Sum, &params).unwrap(),
            Arity::Fixed { inputs: 3, outputs: 1 }
        );
        params.insert("signs".to_string(), "+x".to_string());
        assert!(arity(&BlockKind::Sum, &params).is_err());
        let mut sel = BTreeMap::new();
        sel.insert("select".to_string(), "a, p.y".to_string());
        assert_eq!(
            arity(&BlockKind::BusSelector, &sel).unwrap(),
            Arity::Fixed { inputs: 1, outputs: 2 }
        );
    }

    #[test]
    fn reduce_folds_left() {
        assert_eq!(ReduceOp::Sum.apply(&[1.0, 2.0, 3.0]), 6.0);
        assert_eq!(ReduceOp::Max.apply(&[1.0, 5.0, 3.0]), 5.0);
        assert_eq!(ReduceOp::Prod.apply(&[2.0]), 2.0);
    }
}
