//! Hierarchical block-diagram models and the MDLX file format.

pub mod dtype;
pub mod infer;
pub mod kind;
mod parse;
mod stats;
mod validate;
mod write;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use dtype::{BusElement, BusLayout, DType, PositionPath};
pub use kind::{Attr, BlockKind, FunctionBody, MapOp, ReduceOp};
pub use parse::{parse_model, parse_subsystem_element};
pub use stats::{model_stats, Stats};
pub use validate::{validate, validate_with, ValidationReport, Violation, ViolationKind};
pub use write::{serialize_model, write_subsystem};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Syntax(#[from] crate::xml::XmlError),
    #[error("schema error: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub root: Subsystem,
    pub step_count_hint: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub name: String,
    pub masked: bool,
    pub children: Vec<Block>,
    pub lines: Vec<SignalLine>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub params: BTreeMap<String, String>,
    pub inputs: usize,
    pub outputs: usize,
    pub attrs: BTreeSet<Attr>,
}

/// `(block, port)` with 1-based port numbers, written `blk:port`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub block: String,
    pub port: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalLine {
    pub src: Endpoint,
    pub dsts: Vec<Endpoint>,
    pub dtype: DType,
}

impl Endpoint {
    pub fn new(block: impl Into<String>, port: usize) -> Self {
        Endpoint {
            block: block.into(),
            port,
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.block, self.port)
    }
}

impl Block {
    pub fn new(name: impl Into<String>, kind: BlockKind) -> Self {
        Block {
            name: name.into(),
            kind,
            params: BTreeMap::new(),
            inputs: 0,
            outputs: 0,
            attrs: BTreeSet::new(),
        }
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    pub fn with_param(mut self, key: &str, value: impl Into<String>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn with_attrs(mut self, attrs: &[Attr]) -> Self {
        self.attrs.extend(attrs.iter().copied());
        self
    }

    /// Sets port counts from the arity table, or to the given declared counts
    /// for variable-arity kinds.
    pub fn with_ports(mut self, declared: Option<(usize, usize)>) -> Result<Self, String> {
        let (inputs, outputs) = resolve_ports(&self.kind, &self.params, declared)?;
        self.inputs = inputs;
        self.outputs = outputs;
        Ok(self)
    }

    pub fn subsystem(&self) -> Option<&Subsystem> {
        match &self.kind {
            BlockKind::Subsystem(sub) => Some(sub),
            _ => None,
        }
    }

    pub fn is_element_independent(&self) -> bool {
        self.attrs.contains(&Attr::ElementIndependent)
    }
}

pub(crate) fn resolve_ports(
    kind: &BlockKind,
    params: &BTreeMap<String, String>,
    declared: Option<(usize, usize)>,
) -> Result<(usize, usize), String> {
    let (inputs, outputs) = match kind::arity(kind, params)? {
        kind::Arity::Fixed { inputs, outputs } => {
            if let Some((i, o)) = declared {
                if (i, o) != (inputs, outputs) {
                    return Err(format!(
                        "{} declares {i} inputs/{o} outputs but its parameters give {inputs}/{outputs}",
                        kind.tag()
                    ));
                }
            }
            (inputs, outputs)
        }
        kind::Arity::Declared {
            min_inputs,
            min_outputs,
        } => {
            let (i, o) = declared.ok_or_else(|| {
                format!("{} needs explicit `inputs` and `outputs` counts", kind.tag())
            })?;
            if i < min_inputs || o < min_outputs {
                return Err(format!(
                    "{} needs at least {min_inputs} inputs and {min_outputs} outputs, got {i}/{o}",
                    kind.tag()
                ));
            }
            (i, o)
        }
    };
    let (min_in, min_out) = kind::min_ports(kind);
    if inputs < min_in || outputs < min_out {
        return Err(format!(
            "{} needs at least {min_in} inputs and {min_out} outputs, got {inputs}/{outputs}",
            kind.tag()
        ));
    }
    Ok((inputs, outputs))
}

impl Subsystem {
    pub fn new(name: impl Into<String>) -> Self {
        Subsystem {
            name: name.into(),
            masked: false,
            children: Vec::new(),
            lines: Vec::new(),
        }
    }

    pub fn child(&self, name: &str) -> Option<&Block> {
        self.children.iter().find(|b| b.name == name)
    }

    /// Children as shown in an editor listing: masked contents are hidden,
    /// although they stay in the tree.
    pub fn listing(&self) -> &[Block] {
        if self.masked {
            &[]
        } else {
            &self.children
        }
    }

    pub fn line_into(&self, block: &str, port: usize) -> Option<&SignalLine> {
        self.lines
            .iter()
            .find(|l| l.dsts.iter().any(|d| d.block == block && d.port == port))
    }

    pub fn line_from(&self, block: &str, port: usize) -> Option<&SignalLine> {
        self.lines
            .iter()
            .find(|l| l.src.block == block && l.src.port == port)
    }

    /// Inport children in port order.
    pub fn inports(&self) -> impl Iterator<Item = &Block> {
        self.children
            .iter()
            .filter(|b| matches!(b.kind, BlockKind::Inport))
    }

    pub fn outports(&self) -> impl Iterator<Item = &Block> {
        self.children
            .iter()
            .filter(|b| matches!(b.kind, BlockKind::Outport))
    }

    /// Depth-first visit of every block with its path of ancestor names.
    pub fn walk<'a>(&'a self, path: &mut Vec<&'a str>, visit: &mut dyn FnMut(&[&'a str], &'a Block)) {
        for block in &self.children {
            path.push(&block.name);
            visit(path, block);
            if let Some(sub) = block.subsystem() {
                sub.walk(path, visit);
            }
            path.pop();
        }
    }
}

impl Model {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        Model {
            root: Subsystem::new(name.clone()),
            name,
            step_count_hint: 1,
        }
    }

    pub fn root_inports(&self) -> impl Iterator<Item = &Block> {
        self.root.inports()
    }

    pub fn root_outports(&self) -> impl Iterator<Item = &Block> {
        self.root.outports()
    }
}

/// `[A-Za-z][A-Za-z0-9_]*` without a trailing underscore. Excluding leading
/// and trailing underscores keeps path joins with doubled underscores
/// injective.
pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !name.ends_with('_')
}

/// Literal parameter value: number, `[a, b]` vector or `[[a, b], [c, d]]`
/// matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl Literal {
    pub fn parse(text: &str) -> Result<Literal, String> {
        let text = text.trim();
        if let Some(inner) = text.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
            let inner = inner.trim();
            if inner.starts_with('[') {
                let mut rows = Vec::new();
                let mut rest = inner;
                while !rest.is_empty() {
                    let close = rest
                        .find(']')
                        .ok_or_else(|| format!("unbalanced matrix literal `{text}`"))?;
                    let row = rest[..close]
                        .trim()
                        .strip_prefix('[')
                        .ok_or_else(|| format!("bad matrix literal `{text}`"))?;
                    rows.push(parse_numbers(row)?);
                    rest = rest[close + 1..].trim_start();
                    rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
                }
                let width = rows.first().map_or(0, Vec::len);
                if width == 0 || rows.iter().any(|r| r.len() != width) {
                    return Err(format!("ragged or empty matrix literal `{text}`"));
                }
                Ok(Literal::Matrix(rows))
            } else {
                let values = parse_numbers(inner)?;
                if values.is_empty() {
                    return Err("empty vector literal".into());
                }
                Ok(Literal::Vector(values))
            }
        } else {
            parse_number(text).map(Literal::Scalar)
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Literal::Scalar(_) => DType::Scalar,
            Literal::Vector(v) => DType::Vector(v.len()),
            Literal::Matrix(rows) => DType::Matrix(rows.len(), rows[0].len()),
        }
    }
}

pub fn parse_number(text: &str) -> Result<f64, String> {
    match text.trim() {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t.parse::<f64>().map_err(|_| format!("bad number `{text}`")),
    }
}

fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_number)
        .collect()
}

/// Numeric parameter with a default.
pub fn param_f64(params: &BTreeMap<String, String>, key: &str, default: f64) -> Result<f64, String> {
    match params.get(key) {
        None => Ok(default),
        Some(text) => parse_number(text).map_err(|e| format!("parameter `{key}`: {e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identifiers() {
        assert!(is_identifier("Gain1"));
        assert!(is_identifier("a_b"));
        assert!(!is_identifier("_a"));
        assert!(!is_identifier("a_"));
        assert!(!is_identifier("1a"));
        assert!(!is_identifier("a-b"));
        assert!(!is_identifier(""));
    }

    #[test]
    fn literals() {
        assert_eq!(Literal::parse("2.5").unwrap(), Literal::Scalar(2.5));
        assert_eq!(Literal::parse("[1, 2,3]").unwrap(), Literal::Vector(vec![1.0, 2.0, 3.0]));
        assert_eq!(
            Literal::parse("[[1,2],[3,4]]").unwrap().dtype(),
            DType::Matrix(2, 2)
        );
        assert_eq!(Literal::parse("-inf").unwrap(), Literal::Scalar(f64::NEG_INFINITY));
        assert!(Literal::parse("[[1,2],[3]]").is_err());
        assert!(Literal::parse("[]").is_err());
        assert!(Literal::parse("abc").is_err());
    }
}
