use std::collections::{BTreeMap, BTreeSet};

use crate::model::infer::{output_types, parse_selector, Selector};
use crate::model::kind::split_list;
use crate::model::{validate_with, Attr, Block, BlockKind, DType, Model, PositionPath, Subsystem};
use crate::toolbox::{ToolboxEntry, ToolboxRegistry};

use super::{BusSelection, ExtractError, FlatBlock, FlatIR, GlobalVar};

/// Doubles literal underscores so that joining segments with single
/// underscores is injective.
pub fn escape_segment(name: &str) -> String {
    name.replace('_', "__")
}

pub fn join_uname(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        escape_segment(name)
    } else {
        format!("{prefix}_{}", escape_segment(name))
    }
}

/// One block of the hierarchy with its path-derived unique name.
#[derive(Debug, Clone)]
pub struct FlatEntry<'a> {
    pub path: Vec<String>,
    pub uname: String,
    pub block: &'a Block,
    /// Uname of the enclosing subsystem block; `None` at the top level.
    pub parent: Option<String>,
    /// 0-based position among the enclosing subsystem's Inports (for
    /// Inports) or Outports (for Outports).
    pub port_index: usize,
}

fn flatten_into<'a>(
    sub: &'a Subsystem,
    prefix: &str,
    path: &[String],
    parent: Option<&str>,
    out: &mut Vec<FlatEntry<'a>>,
    seen: &mut BTreeMap<String, Vec<String>>,
) -> Result<(), ExtractError> {
    let (mut n_in, mut n_out) = (0, 0);
    for block in &sub.children {
        let uname = join_uname(prefix, &block.name);
        let mut bpath = path.to_vec();
        bpath.push(block.name.clone());
        if let Some(other) = seen.insert(uname.clone(), bpath.clone()) {
            if other != bpath {
                return Err(ExtractError::NameCollision(uname));
            }
        }
        let port_index = match block.kind {
            BlockKind::Inport => {
                n_in += 1;
                n_in - 1
            }
            BlockKind::Outport => {
                n_out += 1;
                n_out - 1
            }
            _ => 0,
        };
        out.push(FlatEntry {
            path: bpath.clone(),
            uname: uname.clone(),
            block,
            parent: parent.map(str::to_string),
            port_index,
        });
        if let BlockKind::Subsystem(inner) = &block.kind {
            flatten_into(inner, &uname, &bpath, Some(&uname), out, seen)?;
        }
    }
    Ok(())
}

fn flatten_subsystem<'a>(sub: &'a Subsystem, prefix: &str) -> Result<Vec<FlatEntry<'a>>, ExtractError> {
    let mut out = Vec::new();
    let base: Vec<String> = if prefix.is_empty() { vec![] } else { vec![prefix.to_string()] };
    flatten_into(sub, prefix, &base, None, &mut out, &mut BTreeMap::new())?;
    Ok(out)
}

/// Depth-first list of every block with its unique name. Masked subsystems
/// are traversed like any other.
pub fn flatten(model: &Model) -> Result<Vec<FlatEntry<'_>>, ExtractError> {
    flatten_subsystem(&model.root, "")
}

fn record_into(sub: &Subsystem, prefix: &str, path: &[String], out: &mut Vec<BusSelection>) -> Result<(), ExtractError> {
    for block in &sub.children {
        let uname = join_uname(prefix, &block.name);
        let mut bpath = path.to_vec();
        bpath.push(block.name.clone());
        match &block.kind {
            BlockKind::Subsystem(inner) => record_into(inner, &uname, &bpath, out)?,
            BlockKind::BusSelector => {
                let unresolvable = |name: String| ExtractError::UnresolvableSelection {
                    selector: uname.clone(),
                    name,
                };
                let layout = match sub.line_into(&block.name, 1).map(|l| &l.dtype) {
                    Some(DType::Bus(layout)) => layout.clone(),
                    _ => return Err(unresolvable("<input is not a bus>".into())),
                };
                let sel = parse_selector(&block.params).map_err(unresolvable)?;
                let positions = match sel {
                    Selector::Names(names) => names
                        .into_iter()
                        .map(|n| layout.position_of(&n).ok_or(n))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(unresolvable)?,
                    Selector::Positions(paths) => {
                        for p in &paths {
                            if layout.at(p).is_none() {
                                return Err(unresolvable(crate::model::dtype::format_position(p)));
                            }
                        }
                        paths
                    }
                };
                out.push(BusSelection {
                    selector: uname,
                    path: bpath,
                    recorded_layout: layout,
                    recorded_positions: positions,
                });
            }
            _ => {}
        }
    }
    Ok(())
}

/// Snapshots each BusSelector's input layout and converts its selections to
/// 1-based position paths. Must run before any renaming.
pub fn record_bus_selections(model: &Model) -> Result<Vec<BusSelection>, ExtractError> {
    let mut out = Vec::new();
    record_into(&model.root, "", &[], &mut out)?;
    Ok(out)
}

/// Every line as one variable named after its producer, and the variable
/// bound to each consumer in-port.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Globalized {
    /// name -> (dtype, producer uname, producer port)
    pub vars: BTreeMap<String, (DType, String, usize)>,
    /// (consumer uname, in-port) -> var name
    pub inputs: BTreeMap<(String, usize), String>,
}

fn globalize_into(sub: &Subsystem, prefix: &str, out: &mut Globalized) -> Result<(), ExtractError> {
    for line in &sub.lines {
        let src = join_uname(prefix, &line.src.block);
        let name = format!("{src}_{}", line.src.port);
        let entry = (line.dtype.clone(), src, line.src.port);
        if let Some(prev) = out.vars.insert(name.clone(), entry.clone()) {
            if prev != entry {
                return Err(ExtractError::NameCollision(name));
            }
        }
        for dst in &line.dsts {
            out.inputs.insert((join_uname(prefix, &dst.block), dst.port), name.clone());
        }
    }
    for block in &sub.children {
        if let BlockKind::Subsystem(inner) = &block.kind {
            globalize_into(inner, &join_uname(prefix, &block.name), out)?;
        }
    }
    Ok(())
}

fn globalize_subsystem(sub: &Subsystem, prefix: &str) -> Result<Globalized, ExtractError> {
    let mut out = Globalized::default();
    globalize_into(sub, prefix, &mut out)?;
    Ok(out)
}

/// Turns every signal line into a global variable `producer_port`.
pub fn globalize_signals(model: &Model) -> Result<Globalized, ExtractError> {
    globalize_subsystem(&model.root, "")
}

/// Resolved value of a variable once structural blocks are seen through:
/// a leaf variable, or a bus tree of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Signal {
    Var(String),
    Bus(Vec<(String, Signal)>),
}

impl Signal {
    fn at(&self, path: &[usize]) -> Option<&Signal> {
        match path.split_first() {
            None => Some(self),
            Some((&i, rest)) => match self {
                Signal::Bus(elems) if i >= 1 => elems.get(i - 1)?.1.at(rest),
                _ => None,
            },
        }
    }
}

struct Rewire<'e, 'a> {
    entries: BTreeMap<&'e str, &'e FlatEntry<'a>>,
    ports: BTreeMap<String, (Vec<String>, Vec<String>)>,
    glob: &'e Globalized,
    positions: BTreeMap<&'e str, &'e [PositionPath]>,
    external: Option<&'e [Signal]>,
    memo: BTreeMap<String, Signal>,
    active: BTreeSet<String>,
}

fn dangling(uname: &str, port: usize) -> ExtractError {
    ExtractError::Invalid(format!("input {port} of `{uname}` is not connected"))
}

impl Rewire<'_, '_> {
    fn input_var(&self, uname: &str, port: usize) -> Result<String, ExtractError> {
        self.glob
            .inputs
            .get(&(uname.to_string(), port))
            .cloned()
            .ok_or_else(|| dangling(uname, port))
    }

    fn resolve(&mut self, var: &str) -> Result<Signal, ExtractError> {
        if let Some(s) = self.memo.get(var) {
            return Ok(s.clone());
        }
        if !self.active.insert(var.to_string()) {
            return Err(ExtractError::Invalid(format!("signal `{var}` feeds itself through structural blocks")));
        }
        let (_, uname, port) = self
            .glob
            .vars
            .get(var)
            .cloned()
            .ok_or_else(|| ExtractError::Invalid(format!("no line for `{var}`")))?;
        let entry = *self.entries.get(uname.as_str()).ok_or_else(|| ExtractError::Invalid(format!("no block `{uname}`")))?;
        let sig = match &entry.block.kind {
            BlockKind::Inport => match (&entry.parent, self.external) {
                (Some(parent), _) => {
                    let v = self.input_var(parent, entry.port_index + 1)?;
                    self.resolve(&v)?
                }
                (None, Some(ext)) => ext
                    .get(entry.port_index)
                    .cloned()
                    .ok_or_else(|| dangling(&uname, 1))?,
                (None, None) => Signal::Var(var.to_string()),
            },
            BlockKind::Subsystem(_) => {
                let outport = self.ports[&uname]
                    .1
                    .get(port - 1)
                    .cloned()
                    .ok_or_else(|| ExtractError::Invalid(format!("`{uname}` has no out-port {port}")))?;
                let v = self.input_var(&outport, 1)?;
                self.resolve(&v)?
            }
            BlockKind::BusCreator => {
                let names = split_list(entry.block.param("names").unwrap_or(""));
                let mut elems = Vec::with_capacity(names.len());
                for (i, name) in names.into_iter().enumerate() {
                    let v = self.input_var(&uname, i + 1)?;
                    elems.push((name, self.resolve(&v)?));
                }
                Signal::Bus(elems)
            }
            BlockKind::BusSelector => {
                let v = self.input_var(&uname, 1)?;
                let base = self.resolve(&v)?;
                let positions = self.positions.get(uname.as_str()).copied().unwrap_or(&[]);
                let out_of_range = |p: &[usize]| ExtractError::PositionOutOfRange {
                    selector: uname.clone(),
                    position: crate::model::dtype::format_position(p),
                };
                let path = positions.get(port - 1).ok_or_else(|| out_of_range(&[port]))?;
                base.at(path).cloned().ok_or_else(|| out_of_range(path))?
            }
            _ => Signal::Var(var.to_string()),
        };
        self.active.remove(var);
        self.memo.insert(var.to_string(), sig.clone());
        Ok(sig)
    }

    fn leaf_var(&mut self, consumer: &str, port: usize) -> Result<String, ExtractError> {
        let v = self.input_var(consumer, port)?;
        match self.resolve(&v)? {
            Signal::Var(name) => Ok(name),
            Signal::Bus(_) => Err(ExtractError::BusIntoBlock(consumer.to_string())),
        }
    }
}

/// Output of lowering one subsystem.
struct Lowered {
    blocks: Vec<FlatBlock>,
    vars: Vec<GlobalVar>,
    /// Signals leaving the top-level Outports when lowering inline.
    outputs: Vec<Signal>,
}

fn is_boundary(entry: &FlatEntry<'_>, inline: bool) -> bool {
    matches!(entry.block.kind, BlockKind::Inport | BlockKind::Outport) && (entry.parent.is_some() || inline)
}

fn rewire(
    entries: &[FlatEntry<'_>],
    glob: &Globalized,
    selections: &[BusSelection],
    external: Option<&[Signal]>,
    registry: &ToolboxRegistry,
) -> Result<Lowered, ExtractError> {
    let mut ports: BTreeMap<String, (Vec<String>, Vec<String>)> = BTreeMap::new();
    let mut top_outports = Vec::new();
    for e in entries {
        let slot = match &e.parent {
            Some(p) => ports.entry(p.clone()).or_default(),
            None => {
                if matches!(e.block.kind, BlockKind::Outport) {
                    top_outports.push(e.uname.clone());
                }
                continue;
            }
        };
        match e.block.kind {
            BlockKind::Inport => slot.0.push(e.uname.clone()),
            BlockKind::Outport => slot.1.push(e.uname.clone()),
            _ => {}
        }
    }
    for e in entries {
        if matches!(e.block.kind, BlockKind::Subsystem(_)) {
            ports.entry(e.uname.clone()).or_default();
        }
    }
    let mut rw = Rewire {
        entries: entries.iter().map(|e| (e.uname.as_str(), e)).collect(),
        ports,
        glob,
        positions: selections
            .iter()
            .map(|s| (s.selector.as_str(), s.recorded_positions.as_slice()))
            .collect(),
        external,
        memo: BTreeMap::new(),
        active: BTreeSet::new(),
    };
    let inline = external.is_some();
    let mut blocks = Vec::new();
    let mut vars = Vec::new();
    let types: BTreeMap<&str, &DType> = glob.vars.iter().map(|(k, v)| (k.as_str(), &v.0)).collect();
    for e in entries {
        if e.block.kind.is_structural() || is_boundary(e, inline) {
            continue;
        }
        let mut fb = FlatBlock::new(e.uname.clone(), e.block.kind.clone());
        fb.params = e.block.params.clone();
        fb.attrs = e.block.attrs.clone();
        if let BlockKind::Toolbox(name) = &e.block.kind {
            match registry.get(name) {
                None => return Err(ExtractError::UnknownToolboxKind(name.clone())),
                Some(ToolboxEntry::Opaque(entry)) => {
                    fb.params = registry
                        .effective_params(name, e.block)
                        .map_err(|msg| ExtractError::Template { kind: name.clone(), msg })?;
                    fb.attrs.extend(entry.attrs.iter().copied());
                }
                Some(ToolboxEntry::Expandable(_)) => {}
            }
        }
        for port in 1..=e.block.inputs {
            fb.inputs.push(rw.leaf_var(&e.uname, port)?);
        }
        let mut inferred: Option<Vec<DType>> = None;
        for port in 1..=e.block.outputs {
            let name = format!("{}_{port}", e.uname);
            let dtype = match types.get(name.as_str()) {
                Some(d) => (*d).clone(),
                None => {
                    if inferred.is_none() {
                        let ins: Vec<DType> = fb
                            .inputs
                            .iter()
                            .map(|v| types.get(v.as_str()).map(|d| (*d).clone()))
                            .collect::<Option<_>>()
                            .ok_or_else(|| ExtractError::Invalid(format!("untyped input of `{}`", e.uname)))?;
                        inferred = Some(
                            output_types(e.block, &ins, registry)
                                .map_err(|m| ExtractError::Invalid(format!("`{}`: {m}", e.uname)))?,
                        );
                    }
                    inferred.as_ref().expect("set above")[port - 1].clone()
                }
            };
            vars.push(GlobalVar {
                name: name.clone(),
                dtype,
                producer: (e.uname.clone(), port),
                external: !inline && e.parent.is_none() && matches!(e.block.kind, BlockKind::Inport),
            });
            fb.outputs.push(name);
        }
        if fb.kind.is_stateful() {
            fb.state = Some(format!("{}_state", e.uname));
            fb.attrs.remove(&Attr::Stateless);
        }
        blocks.push(fb);
    }
    let mut outputs = Vec::new();
    if inline {
        for o in &top_outports {
            let v = rw.input_var(o, 1)?;
            outputs.push(rw.resolve(&v)?);
        }
    }
    Ok(Lowered { blocks, vars, outputs })
}

/// Compiles BusCreators, BusSelectors and subsystem boundaries away:
/// every consumer is bound to the leaf variable its input ultimately
/// carries, selecting bus elements by the recorded positions.
pub fn rewire_bus_selectors(
    model: &Model,
    selections: &[BusSelection],
    registry: &ToolboxRegistry,
) -> Result<FlatIR, ExtractError> {
    let entries = flatten(model)?;
    let glob = globalize_signals(model)?;
    let lowered = rewire(&entries, &glob, selections, None, registry)?;
    let mut ir = FlatIR {
        name: model.name.clone(),
        blocks: lowered.blocks,
        vars: lowered.vars,
        edges: Vec::new(),
        state_vars: Vec::new(),
    };
    ir.normalize();
    Ok(ir)
}

fn record_subsystem(sub: &Subsystem, prefix: &str) -> Result<Vec<BusSelection>, ExtractError> {
    let mut out = Vec::new();
    record_into(sub, prefix, &[prefix.to_string()], &mut out)?;
    Ok(out)
}

const MAX_EXPANSIONS: usize = 10_000;

/// Inlines expandable toolbox blocks by lowering their template with the
/// block's input variables and renaming consumers of the block's outputs to
/// the template's result variables. Opaque kinds stay single blocks.
pub fn expand_toolbox(mut ir: FlatIR, registry: &ToolboxRegistry) -> Result<FlatIR, ExtractError> {
    for _ in 0..MAX_EXPANSIONS {
        let Some(idx) = ir.blocks.iter().position(|b| match &b.kind {
            BlockKind::Toolbox(name) => matches!(registry.get(name), Some(ToolboxEntry::Expandable(_))),
            _ => false,
        }) else {
            for b in &ir.blocks {
                if let BlockKind::Toolbox(name) = &b.kind {
                    if registry.get(name).is_none() {
                        return Err(ExtractError::UnknownToolboxKind(name.clone()));
                    }
                }
            }
            return Ok(ir);
        };
        let tb = ir.blocks.remove(idx);
        let BlockKind::Toolbox(kind) = &tb.kind else { unreachable!() };
        let template_err = |msg: String| ExtractError::Template { kind: kind.clone(), msg };
        let sub = registry.instantiate(kind, &tb.as_block()).map_err(template_err)?;
        let selections = record_subsystem(&sub, &tb.uname)?;
        let entries = flatten_subsystem(&sub, &tb.uname)?;
        let glob = globalize_subsystem(&sub, &tb.uname)?;
        let external: Vec<Signal> = tb.inputs.iter().cloned().map(Signal::Var).collect();
        let lowered = rewire(&entries, &glob, &selections, Some(&external), registry)?;
        if lowered.outputs.len() != tb.outputs.len() {
            return Err(template_err(format!(
                "template has {} outputs, block has {}",
                lowered.outputs.len(),
                tb.outputs.len()
            )));
        }
        let mut rename = BTreeMap::new();
        for (old, sig) in tb.outputs.iter().zip(&lowered.outputs) {
            match sig {
                Signal::Var(new) => {
                    rename.insert(old.clone(), new.clone());
                }
                Signal::Bus(_) => return Err(ExtractError::BusIntoBlock(tb.uname.clone())),
            }
        }
        ir.vars.retain(|v| v.producer.0 != tb.uname);
        for b in &lowered.blocks {
            if ir.blocks.iter().any(|o| o.uname == b.uname) {
                return Err(ExtractError::NameCollision(b.uname.clone()));
            }
        }
        for v in &lowered.vars {
            if ir.vars.iter().any(|o| o.name == v.name) {
                return Err(ExtractError::NameCollision(v.name.clone()));
            }
        }
        ir.blocks.extend(lowered.blocks);
        ir.vars.extend(lowered.vars);
        for b in &mut ir.blocks {
            for v in &mut b.inputs {
                if let Some(new) = rename.get(v) {
                    *v = new.clone();
                }
            }
        }
        ir.normalize();
    }
    Err(ExtractError::Template {
        kind: "<nested>".into(),
        msg: "expansion does not terminate".into(),
    })
}

fn check_toolbox_kinds(sub: &Subsystem, registry: &ToolboxRegistry) -> Result<(), ExtractError> {
    for block in &sub.children {
        match &block.kind {
            BlockKind::Toolbox(name) if registry.get(name).is_none() => {
                return Err(ExtractError::UnknownToolboxKind(name.clone()))
            }
            BlockKind::Subsystem(inner) => check_toolbox_kinds(inner, registry)?,
            _ => {}
        }
    }
    Ok(())
}

/// Full extraction: record bus selections, flatten, globalize, rewire bus
/// selectors, expand toolbox blocks.
pub fn extract(model: &Model, registry: &ToolboxRegistry) -> Result<FlatIR, ExtractError> {
    check_toolbox_kinds(&model.root, registry)?;
    let report = validate_with(model, registry);
    if !report.is_ok() {
        return Err(ExtractError::Invalid(report.to_string()));
    }
    let selections = record_bus_selections(model)?;
    let ir = rewire_bus_selectors(model, &selections, registry)?;
    let ir = expand_toolbox(ir, registry)?;
    debug_assert_eq!(ir.check(), Ok(()));
    Ok(ir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    fn reg() -> ToolboxRegistry {
        ToolboxRegistry::builtin()
    }

    const MINIMAL: &str = r#"<model name="minimal">
  <block name="in1" kind="Inport"><param k="dtype" v="Scalar"/></block>
  <block name="G" kind="Gain"><param k="gain" v="2"/></block>
  <block name="out1" kind="Outport"/>
  <line src="in1:1" dst="G:1" dtype="Scalar"/>
  <line src="G:1" dst="out1:1" dtype="Scalar"/>
</model>"#;

    #[test]
    fn minimal_extraction() {
        let ir = extract(&parse_model(MINIMAL).unwrap(), &reg()).unwrap();
        assert_eq!(ir.blocks.len(), 3);
        assert_eq!(ir.vars.len(), 2);
        assert_eq!(ir.edges.len(), 2);
        let ext = ir.var("in1_1").unwrap();
        assert!(ext.external);
        assert_eq!(ir.block("G").unwrap().outputs, vec!["G_1"]);
    }

    #[test]
    fn unames_follow_paths() {
        assert_eq!(join_uname("", "S"), "S");
        assert_eq!(join_uname("S", "G"), "S_G");
        assert_eq!(join_uname("", "a_b"), "a__b");
        let m = parse_model(
            r#"<model name="m">
  <subsystem name="A"><block name="F" kind="Const"><param k="value" v="1"/></block></subsystem>
  <subsystem name="B" masked="true"><block name="F" kind="Const"><param k="value" v="2"/></block></subsystem>
</model>"#,
        )
        .unwrap();
        let names: Vec<String> = flatten(&m).unwrap().into_iter().map(|e| e.uname).collect();
        assert_eq!(names, vec!["A", "A_F", "B", "B_F"]);
    }

    #[test]
    fn multi_destination_line_is_one_var() {
        let m = parse_model(
            r#"<model name="m">
  <block name="c" kind="Const"><param k="value" v="1"/></block>
  <block name="a" kind="Outport"/>
  <block name="b" kind="Outport"/>
  <block name="d" kind="Outport"/>
  <line src="c:1" dst="a:1;b:1;d:1" dtype="Scalar"/>
</model>"#,
        )
        .unwrap();
        let g = globalize_signals(&m).unwrap();
        assert_eq!(g.vars.len(), 1);
        assert_eq!(g.inputs.values().filter(|v| *v == "c_1").count(), 3);
    }

    fn bus_model(select: &str) -> Model {
        parse_model(&format!(
            r#"<model name="m">
  <block name="X" kind="Const"><param k="value" v="1"/></block>
  <block name="Y" kind="Const"><param k="value" v="2"/></block>
  <block name="Z" kind="Const"><param k="value" v="3"/></block>
  <block name="bc" kind="BusCreator"><param k="names" v="a,b,c"/></block>
  <block name="bs" kind="BusSelector"><param k="select" v="{select}"/></block>
  <block name="o1" kind="Outport"/>
  <block name="o2" kind="Outport"/>
  <line src="X:1" dst="bc:1" dtype="Scalar"/>
  <line src="Y:1" dst="bc:2" dtype="Scalar"/>
  <line src="Z:1" dst="bc:3" dtype="Scalar"/>
  <line src="bc:1" dst="bs:1" dtype="Bus{{a:Scalar,b:Scalar,c:Scalar}}"/>
  <line src="bs:1" dst="o1:1" dtype="Scalar"/>
  <line src="bs:2" dst="o2:1" dtype="Scalar"/>
</model>"#
        ))
        .unwrap()
    }

    #[test]
    fn bus_selections_by_position() {
        let m = bus_model("a,c");
        let sel = record_bus_selections(&m).unwrap();
        assert_eq!(sel[0].recorded_positions, vec![vec![1], vec![3]]);
        let ir = extract(&m, &reg()).unwrap();
        assert_eq!(ir.block("o1").unwrap().inputs, vec!["X_1"]);
        assert_eq!(ir.block("o2").unwrap().inputs, vec!["Z_1"]);
        assert!(ir.blocks.iter().all(|b| !b.kind.is_structural()));
        assert!(matches!(
            record_bus_selections(&bus_model("a,z")),
            Err(ExtractError::UnresolvableSelection { .. })
        ));
    }

    #[test]
    fn stale_position_is_out_of_range() {
        let m = bus_model("a,c");
        let mut sel = record_bus_selections(&m).unwrap();
        sel[0].recorded_positions[1] = vec![4];
        assert!(matches!(
            rewire_bus_selectors(&m, &sel, &reg()),
            Err(ExtractError::PositionOutOfRange { .. })
        ));
    }

    #[test]
    fn nested_bus_through_subsystem() {
        let m = parse_model(
            r#"<model name="m">
  <block name="X" kind="Const"><param k="value" v="1"/></block>
  <block name="Y" kind="Const"><param k="value" v="[1,2]"/></block>
  <block name="Q" kind="Const"><param k="value" v="3"/></block>
  <block name="inner" kind="BusCreator"><param k="names" v="x,y"/></block>
  <block name="outer" kind="BusCreator"><param k="names" v="p,q"/></block>
  <subsystem name="S" masked="true">
    <block name="bus" kind="Inport"><param k="dtype" v="Bus{p:Bus{x:Scalar,y:Vector(2)},q:Scalar}"/></block>
    <block name="sel" kind="BusSelector"><param k="select" v="p.y"/></block>
    <block name="g" kind="Gain"><param k="gain" v="2"/></block>
    <block name="res" kind="Outport"/>
    <line src="bus:1" dst="sel:1" dtype="Bus{p:Bus{x:Scalar,y:Vector(2)},q:Scalar}"/>
    <line src="sel:1" dst="g:1" dtype="Vector(2)"/>
    <line src="g:1" dst="res:1" dtype="Vector(2)"/>
  </subsystem>
  <block name="o" kind="Outport"/>
  <line src="X:1" dst="inner:1" dtype="Scalar"/>
  <line src="Y:1" dst="inner:2" dtype="Vector(2)"/>
  <line src="inner:1" dst="outer:1" dtype="Bus{x:Scalar,y:Vector(2)}"/>
  <line src="Q:1" dst="outer:2" dtype="Scalar"/>
  <line src="outer:1" dst="S:1" dtype="Bus{p:Bus{x:Scalar,y:Vector(2)},q:Scalar}"/>
  <line src="S:1" dst="o:1" dtype="Vector(2)"/>
</model>"#,
        )
        .unwrap();
        let sel = record_bus_selections(&m).unwrap();
        assert_eq!(sel[0].recorded_positions, vec![vec![1, 2]]);
        let ir = extract(&m, &reg()).unwrap();
        assert_eq!(ir.block("S_g").unwrap().inputs, vec!["Y_1"]);
        assert_eq!(ir.block("o").unwrap().inputs, vec!["S_g_1"]);
        assert_eq!(ir.blocks.len(), 5);
    }

    #[test]
    fn unknown_toolbox_kind() {
        let m = parse_model(
            r#"<model name="m"><block name="t" kind="Toolbox(Foo)" inputs="0" outputs="1"/>
<block name="o" kind="Outport"/><line src="t:1" dst="o:1" dtype="Scalar"/></model>"#,
        )
        .unwrap();
        assert_eq!(extract(&m, &reg()), Err(ExtractError::UnknownToolboxKind("Foo".into())));
    }
}
