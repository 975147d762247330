//! Structural validation. Findings are collected, never raised.

use std::collections::BTreeMap;
use std::fmt;

use crate::toolbox::{ToolboxEntry, ToolboxRegistry};

use super::dtype::DType;
use super::infer::{check_element_independent, output_types, resolve_selection, parse_selector};
use super::kind::BlockKind;
use super::{Block, Model, Subsystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationKind {
    DanglingPort,
    TypeMismatch,
    AlgebraicLoop,
    UnresolvableSelection,
    UnknownToolboxKind,
    InvalidAttribute,
    BusAtBoundary,
    BadParameter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Slash-separated block path from the root.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.kind, self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate(model: &Model) -> ValidationReport {
    validate_with(model, &ToolboxRegistry::builtin())
}

pub fn validate_with(model: &Model, registry: &ToolboxRegistry) -> ValidationReport {
    let mut v = Validator {
        registry,
        report: ValidationReport::default(),
        depth: 0,
    };
    v.subsystem(&model.root, "");
    for block in model.root_inports().chain(model.root_outports()) {
        let dtype = match block.kind {
            BlockKind::Inport => block.param("dtype").and_then(|d| d.parse::<DType>().ok()),
            _ => model.root.line_into(&block.name, 1).map(|l| l.dtype.clone()),
        };
        if dtype.is_some_and(|d| d.is_bus()) {
            v.push(
                ViolationKind::BusAtBoundary,
                &block.name,
                "buses cannot cross the model boundary".into(),
            );
        }
    }
    let mut graph = Graph::default();
    graph.add_subsystem(&model.root, "", registry, 0);
    for cycle in graph.cycles() {
        v.push(
            ViolationKind::AlgebraicLoop,
            &cycle[0],
            format!("algebraic loop through {}", cycle.join(", ")),
        );
    }
    v.report
}

const MAX_TEMPLATE_DEPTH: usize = 16;

struct Validator<'a> {
    registry: &'a ToolboxRegistry,
    report: ValidationReport,
    depth: usize,
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}

impl Validator<'_> {
    fn push(&mut self, kind: ViolationKind, path: &str, message: String) {
        self.report.violations.push(Violation {
            kind,
            path: path.to_string(),
            message,
        });
    }

    fn subsystem(&mut self, sub: &Subsystem, prefix: &str) {
        for line in &sub.lines {
            let src_ok = sub.child(&line.src.block).is_some_and(|b| line.src.port >= 1 && line.src.port <= b.outputs);
            if !src_ok {
                self.push(
                    ViolationKind::DanglingPort,
                    &join(prefix, &line.src.block),
                    format!("line source {} does not exist", line.src),
                );
            }
            for dst in &line.dsts {
                if !sub.child(&dst.block).is_some_and(|b| dst.port >= 1 && dst.port <= b.inputs) {
                    self.push(
                        ViolationKind::DanglingPort,
                        &join(prefix, &dst.block),
                        format!("line destination {dst} does not exist"),
                    );
                }
            }
            if let Err(e) = line.dtype.check_dims() {
                self.push(ViolationKind::TypeMismatch, &join(prefix, &line.src.block), e);
            }
        }
        for block in &sub.children {
            self.block(sub, block, prefix);
        }
    }

    fn block(&mut self, parent: &Subsystem, block: &Block, prefix: &str) {
        let path = join(prefix, &block.name);
        let mut inputs = Vec::with_capacity(block.inputs);
        let mut complete = true;
        for port in 1..=block.inputs {
            let feeding: Vec<_> = parent
                .lines
                .iter()
                .filter(|l| l.dsts.iter().any(|d| d.block == block.name && d.port == port))
                .collect();
            match feeding.as_slice() {
                [line] => inputs.push(line.dtype.clone()),
                [] => {
                    self.push(ViolationKind::DanglingPort, &path, format!("input port {port} is not connected"));
                    complete = false;
                }
                _ => {
                    self.push(ViolationKind::DanglingPort, &path, format!("input port {port} has several drivers"));
                    complete = false;
                }
            }
        }
        if let BlockKind::Inport = block.kind {
            if block.param("dtype").is_none() {
                self.push(ViolationKind::BadParameter, &path, "Inport needs a `dtype` parameter".into());
                return;
            }
        }
        match &block.kind {
            BlockKind::Subsystem(inner) => {
                self.boundary_types(inner, &inputs, &path);
                self.subsystem(inner, &path);
            }
            BlockKind::Toolbox(name) => match self.registry.get(name) {
                None => {
                    self.push(ViolationKind::UnknownToolboxKind, &path, format!("unknown toolbox kind `{name}`"));
                    return;
                }
                Some(ToolboxEntry::Expandable(_)) if self.depth < MAX_TEMPLATE_DEPTH => {
                    if let Ok(inner) = self.registry.instantiate(name, block) {
                        self.depth += 1;
                        self.subsystem(&inner, &path);
                        self.depth -= 1;
                    }
                }
                _ => {}
            },
            BlockKind::BusSelector if complete => {
                if let (Some(DType::Bus(layout)), Ok(sel)) = (inputs.first(), parse_selector(&block.params)) {
                    if let Err(bad) = resolve_selection(&sel, layout) {
                        self.push(
                            ViolationKind::UnresolvableSelection,
                            &path,
                            format!("selection `{bad}` resolves neither by name nor by position"),
                        );
                        return;
                    }
                }
            }
            _ => {}
        }
        if !complete {
            return;
        }
        let outputs = match output_types(block, &inputs, self.registry) {
            Ok(o) => o,
            Err(e) => {
                let kind = if matches!(block.kind, BlockKind::Inport | BlockKind::Const) {
                    ViolationKind::BadParameter
                } else {
                    ViolationKind::TypeMismatch
                };
                self.push(kind, &path, e);
                return;
            }
        };
        if let Err(e) = check_element_independent(block, &inputs, &outputs, self.registry) {
            self.push(ViolationKind::InvalidAttribute, &path, e);
        }
        for (i, dtype) in outputs.iter().enumerate() {
            if let Some(line) = parent.line_from(&block.name, i + 1) {
                if line.dtype != *dtype {
                    self.push(
                        ViolationKind::TypeMismatch,
                        &path,
                        format!("output {} produces {dtype} but its line is declared {}", i + 1, line.dtype),
                    );
                }
            }
        }
    }

    /// Inner Inport declarations must agree with the lines feeding the
    /// subsystem block.
    fn boundary_types(&mut self, inner: &Subsystem, inputs: &[DType], path: &str) {
        for (port, actual) in inner.inports().zip(inputs) {
            let declared = port.param("dtype").map(str::parse::<DType>);
            match declared {
                Some(Ok(d)) if d == *actual => {}
                Some(Ok(d)) => self.push(
                    ViolationKind::TypeMismatch,
                    &join(path, &port.name),
                    format!("declared {d} but fed {actual}"),
                ),
                _ => {}
            }
        }
    }
}

/// Dependency graph over every block instance, with subsystem and
/// expandable-toolbox ports wired through to their inner port blocks and
/// UnitDelay inputs left out.
#[derive(Default)]
struct Graph {
    names: Vec<String>,
    adj: Vec<Vec<usize>>,
}

struct Ports {
    inputs: Vec<usize>,
    outputs: Vec<usize>,
}

impl Graph {
    fn node(&mut self, name: String) -> usize {
        self.names.push(name);
        self.adj.push(Vec::new());
        self.names.len() - 1
    }

    /// Adds the subsystem's blocks and returns its inner Inport/Outport nodes.
    fn add_subsystem(&mut self, sub: &Subsystem, prefix: &str, registry: &ToolboxRegistry, depth: usize) -> Ports {
        let mut nodes: BTreeMap<&str, Result<usize, Ports>> = BTreeMap::new();
        let mut delays = std::collections::BTreeSet::new();
        for block in &sub.children {
            let path = join(prefix, &block.name);
            let expanded = match &block.kind {
                BlockKind::Subsystem(inner) => Some(self.add_subsystem(inner, &path, registry, depth + 1)),
                BlockKind::Toolbox(name)
                    if depth < MAX_TEMPLATE_DEPTH
                        && matches!(registry.get(name), Some(ToolboxEntry::Expandable(_))) =>
                {
                    registry
                        .instantiate(name, block)
                        .ok()
                        .map(|inner| self.add_subsystem(&inner, &path, registry, depth + 1))
                }
                _ => None,
            };
            if block.kind.is_stateful() {
                delays.insert(block.name.as_str());
            }
            let entry = match expanded {
                Some(ports) => Err(ports),
                None => Ok(self.node(path)),
            };
            nodes.insert(&block.name, entry);
        }
        for line in &sub.lines {
            let src = match nodes.get(line.src.block.as_str()) {
                Some(Ok(n)) => Some(*n),
                Some(Err(ports)) => ports.outputs.get(line.src.port - 1).copied(),
                None => None,
            };
            let Some(src) = src else { continue };
            for dst in &line.dsts {
                if delays.contains(dst.block.as_str()) {
                    continue;
                }
                let to = match nodes.get(dst.block.as_str()) {
                    Some(Ok(n)) => Some(*n),
                    Some(Err(ports)) => ports.inputs.get(dst.port - 1).copied(),
                    None => None,
                };
                if let Some(to) = to {
                    self.adj[src].push(to);
                }
            }
        }
        let pick = |kind: fn(&BlockKind) -> bool| {
            sub.children
                .iter()
                .filter(|b| kind(&b.kind))
                .filter_map(|b| match nodes.get(b.name.as_str()) {
                    Some(Ok(n)) => Some(*n),
                    _ => None,
                })
                .collect()
        };
        Ports {
            inputs: pick(|k| matches!(k, BlockKind::Inport)),
            outputs: pick(|k| matches!(k, BlockKind::Outport)),
        }
    }

    /// Strongly connected components that contain a cycle, members sorted.
    fn cycles(&self) -> Vec<Vec<String>> {
        let n = self.names.len();
        let mut index = vec![usize::MAX; n];
        let mut low = vec![0; n];
        let mut on_stack = vec![false; n];
        let mut stack = Vec::new();
        let mut counter = 0;
        let mut out = Vec::new();
        // iterative Tarjan
        for root in 0..n {
            if index[root] != usize::MAX {
                continue;
            }
            let mut work = vec![(root, 0usize)];
            while let Some(&mut (v, ref mut next)) = work.last_mut() {
                if *next == 0 {
                    index[v] = counter;
                    low[v] = counter;
                    counter += 1;
                    stack.push(v);
                    on_stack[v] = true;
                }
                if *next < self.adj[v].len() {
                    let w = self.adj[v][*next];
                    *next += 1;
                    if index[w] == usize::MAX {
                        work.push((w, 0));
                    } else if on_stack[w] {
                        low[v] = low[v].min(index[w]);
                    }
                    continue;
                }
                work.pop();
                if let Some(&(parent, _)) = work.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    if comp.len() > 1 || self.adj[v].contains(&v) {
                        let mut names: Vec<String> = comp.iter().map(|&i| self.names[i].clone()).collect();
                        names.sort();
                        out.push(names);
                    }
                }
            }
        }
        out.sort();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    fn check(text: &str) -> ValidationReport {
        validate(&parse_model(text).unwrap())
    }

    #[test]
    fn broadcast_gain_is_legal() {
        let r = check(
            r#"<model name="m">
  <block name="i" kind="Inport"><param k="dtype" v="Vector(3)"/></block>
  <block name="g" kind="Gain"><param k="gain" v="2"/></block>
  <block name="o" kind="Outport"/>
  <line src="i:1" dst="g:1" dtype="Vector(3)"/>
  <line src="g:1" dst="o:1" dtype="Vector(3)"/>
</model>"#,
        );
        assert!(r.is_ok(), "{r}");
    }

    #[test]
    fn algebraic_loop_detected() {
        let r = check(
            r#"<model name="m">
  <block name="A" kind="Gain"/>
  <block name="B" kind="Gain"/>
  <line src="A:1" dst="B:1" dtype="Scalar"/>
  <line src="B:1" dst="A:1" dtype="Scalar"/>
</model>"#,
        );
        assert!(r.has(ViolationKind::AlgebraicLoop), "{r}");
    }

    #[test]
    fn delay_breaks_loop() {
        let r = check(
            r#"<model name="m">
  <block name="A" kind="Gain"/>
  <block name="D" kind="UnitDelay"/>
  <block name="o" kind="Outport"/>
  <line src="A:1" dst="D:1;o:1" dtype="Scalar"/>
  <line src="D:1" dst="A:1" dtype="Scalar"/>
</model>"#,
        );
        assert!(r.is_ok(), "{r}");
    }

    #[test]
    fn loop_through_subsystem_detected() {
        let r = check(
            r#"<model name="m">
  <subsystem name="S">
    <block name="a" kind="Inport"><param k="dtype" v="Scalar"/></block>
    <block name="b" kind="Outport"/>
    <line src="a:1" dst="b:1" dtype="Scalar"/>
  </subsystem>
  <block name="G" kind="Gain"/>
  <line src="S:1" dst="G:1" dtype="Scalar"/>
  <line src="G:1" dst="S:1" dtype="Scalar"/>
</model>"#,
        );
        assert!(r.has(ViolationKind::AlgebraicLoop), "{r}");
    }

    #[test]
    fn unresolvable_selection() {
        let r = check(
            r#"<model name="m">
  <block name="x" kind="Const"><param k="value" v="1"/></block>
  <block name="y" kind="Const"><param k="value" v="2"/></block>
  <block name="bc" kind="BusCreator"><param k="names" v="x,y"/></block>
  <block name="bs" kind="BusSelector"><param k="select" v="z"/></block>
  <block name="o" kind="Outport"/>
  <line src="x:1" dst="bc:1" dtype="Scalar"/>
  <line src="y:1" dst="bc:2" dtype="Scalar"/>
  <line src="bc:1" dst="bs:1" dtype="Bus{x:Scalar,y:Scalar}"/>
  <line src="bs:1" dst="o:1" dtype="Scalar"/>
</model>"#,
        );
        assert!(r.has(ViolationKind::UnresolvableSelection), "{r}");
    }

    #[test]
    fn other_findings() {
        let dangling = check(r#"<model name="m"><block name="g" kind="Gain"/></model>"#);
        assert!(dangling.has(ViolationKind::DanglingPort));
        let mismatch = check(
            r#"<model name="m">
  <block name="i" kind="Inport"><param k="dtype" v="Vector(2)"/></block>
  <block name="o" kind="Outport"/>
  <line src="i:1" dst="o:1" dtype="Vector(3)"/>
</model>"#,
        );
        assert!(mismatch.has(ViolationKind::TypeMismatch));
        let unknown = check(
            r#"<model name="m"><block name="t" kind="Toolbox(Foo)" inputs="0" outputs="1"/></model>"#,
        );
        assert!(unknown.has(ViolationKind::UnknownToolboxKind));
        let attr = check(
            r#"<model name="m">
  <block name="i" kind="Inport"><param k="dtype" v="Vector(4)"/></block>
  <block name="r" kind="Reduce(sum)" attrs="stateless,element_independent"/>
  <block name="o" kind="Outport"/>
  <line src="i:1" dst="r:1" dtype="Vector(4)"/>
  <line src="r:1" dst="o:1" dtype="Scalar"/>
</model>"#,
        );
        assert!(attr.has(ViolationKind::InvalidAttribute), "{attr}");
        let boundary = check(
            r#"<model name="m">
  <block name="i" kind="Inport"><param k="dtype" v="Bus{a:Scalar}"/></block>
  <block name="o" kind="Outport"/>
  <line src="i:1" dst="o:1" dtype="Bus{a:Scalar}"/>
</model>"#,
        );
        assert!(boundary.has(ViolationKind::BusAtBoundary));
    }

    #[test]
    fn validation_is_repeatable() {
        let m = parse_model(r#"<model name="m"><block name="g" kind="Gain"/></model>"#).unwrap();
        let before = m.clone();
        assert_eq!(validate(&m), validate(&m));
        assert_eq!(m, before);
    }
}
