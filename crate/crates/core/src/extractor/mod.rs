//! Model extraction: hierarchical models become a flat IR of blocks reading
//! and writing globally named signal variables.

mod blx;
mod lower;

use std::collections::{BTreeMap, BTreeSet};

use crate::hwprofile::CostHint;
use crate::model::{Attr, BlockKind, BusLayout, DType, PositionPath};

pub use blx::{emit_blx, parse_blx, BlxError};
pub use lower::{
    escape_segment, expand_toolbox, extract, flatten, globalize_signals, join_uname, record_bus_selections,
    rewire_bus_selectors, FlatEntry, Globalized, Signal,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractError {
    #[error("name collision: `{0}` is produced by two different paths")]
    NameCollision(String),
    #[error("bus selector `{selector}`: selection `{name}` is not in the bus layout")]
    UnresolvableSelection { selector: String, name: String },
    #[error("bus selector `{selector}`: recorded position {position} is out of range after renaming")]
    PositionOutOfRange { selector: String, position: String },
    #[error("unknown toolbox kind `{0}`")]
    UnknownToolboxKind(String),
    #[error("block `{0}` receives a bus; buses may only feed bus blocks and subsystems")]
    BusIntoBlock(String),
    #[error("invalid model:\n{0}")]
    Invalid(String),
    #[error("toolbox `{kind}`: {msg}")]
    Template { kind: String, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatBlock {
    pub uname: String,
    pub kind: BlockKind,
    pub params: BTreeMap<String, String>,
    pub attrs: BTreeSet<Attr>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// State variable of a UnitDelay.
    pub state: Option<String>,
    pub cost_hint: Option<CostHint>,
}

impl FlatBlock {
    pub fn new(uname: impl Into<String>, kind: BlockKind) -> Self {
        FlatBlock {
            uname: uname.into(),
            kind,
            params: BTreeMap::new(),
            attrs: BTreeSet::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            state: None,
            cost_hint: None,
        }
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    pub fn is_splittable(&self) -> bool {
        self.attrs.contains(&Attr::Stateless) && self.attrs.contains(&Attr::ElementIndependent)
    }

    /// A port-level view as a model block, for type inference.
    pub fn as_block(&self) -> crate::model::Block {
        crate::model::Block {
            name: self.uname.clone(),
            kind: self.kind.clone(),
            params: self.params.clone(),
            inputs: self.inputs.len(),
            outputs: self.outputs.len(),
            attrs: self.attrs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalVar {
    pub name: String,
    pub dtype: DType,
    /// Producing block uname and 1-based out-port.
    pub producer: (String, usize),
    /// Written by a root Inport from the input trace.
    pub external: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub var: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatIR {
    pub name: String,
    pub blocks: Vec<FlatBlock>,
    pub vars: Vec<GlobalVar>,
    pub edges: Vec<Edge>,
    pub state_vars: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusSelection {
    /// Uname of the selector.
    pub selector: String,
    pub path: Vec<String>,
    pub recorded_layout: BusLayout,
    pub recorded_positions: Vec<PositionPath>,
}

impl FlatIR {
    /// Sorts blocks and vars and recomputes edges and state vars from the
    /// block ports. UnitDelay inputs are read after the step, so they add no
    /// edge.
    pub fn normalize(&mut self) {
        self.blocks.sort_by(|a, b| a.uname.cmp(&b.uname));
        self.vars.sort_by(|a, b| a.name.cmp(&b.name));
        let producer: BTreeMap<&str, &str> = self
            .vars
            .iter()
            .map(|v| (v.name.as_str(), v.producer.0.as_str()))
            .collect();
        let mut edges = BTreeSet::new();
        for b in &self.blocks {
            if b.kind.is_stateful() {
                continue;
            }
            for v in &b.inputs {
                if let Some(p) = producer.get(v.as_str()) {
                    edges.insert(Edge {
                        from: p.to_string(),
                        to: b.uname.clone(),
                        var: v.clone(),
                    });
                }
            }
        }
        self.edges = edges.into_iter().collect();
        self.state_vars = self.blocks.iter().filter_map(|b| b.state.clone()).collect();
    }

    pub fn block(&self, uname: &str) -> Option<&FlatBlock> {
        self.blocks
            .binary_search_by(|b| b.uname.as_str().cmp(uname))
            .ok()
            .map(|i| &self.blocks[i])
            .or_else(|| self.blocks.iter().find(|b| b.uname == uname))
    }

    pub fn block_index(&self, uname: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.uname == uname)
    }

    pub fn var(&self, name: &str) -> Option<&GlobalVar> {
        self.vars
            .binary_search_by(|v| v.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.vars[i])
            .or_else(|| self.vars.iter().find(|v| v.name == name))
    }

    pub fn var_types(&self) -> BTreeMap<String, DType> {
        self.vars.iter().map(|v| (v.name.clone(), v.dtype.clone())).collect()
    }

    /// Root Inport blocks in uname order; their names are the input trace
    /// ports.
    pub fn inports(&self) -> impl Iterator<Item = &FlatBlock> {
        self.blocks.iter().filter(|b| matches!(b.kind, BlockKind::Inport))
    }

    pub fn outports(&self) -> impl Iterator<Item = &FlatBlock> {
        self.blocks.iter().filter(|b| matches!(b.kind, BlockKind::Outport))
    }

    /// Predecessor and successor block indices from the edge relation.
    pub fn adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let index: BTreeMap<&str, usize> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.uname.as_str(), i))
            .collect();
        let n = self.blocks.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for e in &self.edges {
            let (f, t) = (index[e.from.as_str()], index[e.to.as_str()]);
            if !preds[t].contains(&f) {
                preds[t].push(f);
                succs[f].push(t);
            }
        }
        (preds, succs)
    }

    /// Kahn order with ties broken by block index; `None` on a cycle.
    pub fn topo_order(&self) -> Option<Vec<usize>> {
        let (preds, succs) = self.adjacency();
        let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..indeg.len()).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(indeg.len());
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &s in &succs[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        (order.len() == indeg.len()).then_some(order)
    }

    /// Checks the IR invariants; returns the first problem found.
    pub fn check(&self) -> Result<(), String> {
        let mut unames = BTreeSet::new();
        for b in &self.blocks {
            if !unames.insert(b.uname.as_str()) {
                return Err(format!("duplicate block uname `{}`", b.uname));
            }
            if b.kind.is_structural() {
                return Err(format!("structural block `{}` survived extraction", b.uname));
            }
        }
        let mut names = BTreeSet::new();
        for v in &self.vars {
            if !names.insert(v.name.as_str()) {
                return Err(format!("duplicate var `{}`", v.name));
            }
            let prod = self
                .block(&v.producer.0)
                .ok_or_else(|| format!("var `{}` has no producer block", v.name))?;
            if prod.outputs.get(v.producer.1.wrapping_sub(1)) != Some(&v.name) {
                return Err(format!("var `{}` is not written by `{}`", v.name, v.producer.0));
            }
        }
        let mut written = BTreeSet::new();
        for b in &self.blocks {
            for v in &b.outputs {
                if !written.insert(v.as_str()) {
                    return Err(format!("var `{v}` has two writers"));
                }
                if !names.contains(v.as_str()) {
                    return Err(format!("block `{}` writes undeclared var `{v}`", b.uname));
                }
            }
            for v in &b.inputs {
                if !names.contains(v.as_str()) {
                    return Err(format!("block `{}` reads undeclared var `{v}`", b.uname));
                }
            }
            if b.kind.is_stateful() != b.state.is_some() {
                return Err(format!("block `{}` state declaration does not match its kind", b.uname));
            }
        }
        if self.topo_order().is_none() {
            return Err("edge relation has a cycle".into());
        }
        Ok(())
    }
}
