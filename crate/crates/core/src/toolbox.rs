//! Toolbox registry: composite block kinds that are either expanded into a
//! subsystem template or kept as one opaque block with a cost formula.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::hwprofile::{Formula, OpClass};
use crate::model::kind::BlockKind;
use crate::model::{parse_subsystem_element, Attr, Block, DType, Subsystem};
use crate::xml::{self, Element};

/// Environment variable naming a registry file merged over the built-ins.
pub const REGISTRY_ENV: &str = "BLXC_REGISTRY";

#[derive(Debug, thiserror::Error)]
pub enum ToolboxError {
    #[error(transparent)]
    Syntax(#[from] xml::XmlError),
    #[error("registry schema error: {0}")]
    Schema(String),
    #[error("cannot read registry {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Input type class an opaque kind accepts on one port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accept {
    Any,
    Scalar,
    Vector,
    Matrix,
    PointCloud,
}

impl Accept {
    fn parse(s: &str) -> Result<Accept, String> {
        Ok(match s.trim() {
            "any" => Accept::Any,
            "Scalar" => Accept::Scalar,
            "Vector" => Accept::Vector,
            "Matrix" => Accept::Matrix,
            "PointCloud" => Accept::PointCloud,
            other => return Err(format!("unknown type class `{other}`")),
        })
    }

    fn admits(self, d: &DType) -> bool {
        match self {
            Accept::Any => !d.is_bus(),
            Accept::Scalar => *d == DType::Scalar,
            Accept::Vector => matches!(d, DType::Vector(_)),
            Accept::Matrix => matches!(d, DType::Matrix(..)),
            Accept::PointCloud => matches!(d, DType::PointCloud(_)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutputRule {
    /// Same type as the given 1-based input.
    SameAs(usize),
    /// Point cloud whose capacity is the input cloud's, capped by a parameter.
    CloudCapMin(String),
    Fixed(DType),
}

impl OutputRule {
    fn parse(s: &str) -> Result<OutputRule, String> {
        let s = s.trim();
        if let Some(i) = s.strip_prefix("in").and_then(|i| i.parse::<usize>().ok()) {
            if i == 0 {
                return Err("input numbers are 1-based".into());
            }
            return Ok(OutputRule::SameAs(i));
        }
        if let Some(p) = s.strip_prefix("capmin(").and_then(|r| r.strip_suffix(')')) {
            return Ok(OutputRule::CloudCapMin(p.trim().to_string()));
        }
        s.parse().map(OutputRule::Fixed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpaqueEntry {
    pub name: String,
    pub kernel: String,
    pub inputs: usize,
    pub outputs: usize,
    pub accepts: Vec<Accept>,
    pub output_rules: Vec<OutputRule>,
    pub attrs: BTreeSet<Attr>,
    pub defaults: BTreeMap<String, String>,
    pub cost: BTreeMap<OpClass, Formula>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandableEntry {
    pub name: String,
    pub defaults: BTreeMap<String, String>,
    pub template: Subsystem,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToolboxEntry {
    Opaque(OpaqueEntry),
    Expandable(ExpandableEntry),
}

impl ToolboxEntry {
    pub fn defaults(&self) -> &BTreeMap<String, String> {
        match self {
            ToolboxEntry::Opaque(e) => &e.defaults,
            ToolboxEntry::Expandable(e) => &e.defaults,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToolboxRegistry {
    entries: BTreeMap<String, ToolboxEntry>,
}

fn schema(msg: impl Into<String>) -> ToolboxError {
    ToolboxError::Schema(msg.into())
}

fn parse_params(el: &Element) -> Result<BTreeMap<String, String>, ToolboxError> {
    let mut params = BTreeMap::new();
    for p in el.children_named("param") {
        let (Some(k), Some(v)) = (p.attr("k"), p.attr("v")) else {
            return Err(schema("<param> needs k and v"));
        };
        if params.insert(k.to_string(), v.to_string()).is_some() {
            return Err(schema(format!("duplicate param `{k}`")));
        }
    }
    Ok(params)
}

fn count_attr(el: &Element, key: &str, name: &str) -> Result<usize, ToolboxError> {
    el.attr(key)
        .ok_or_else(|| schema(format!("`{name}` needs `{key}`")))?
        .trim()
        .parse()
        .map_err(|_| schema(format!("`{name}` {key} must be a count")))
}

fn parse_opaque(el: &Element, name: &str) -> Result<OpaqueEntry, ToolboxError> {
    let inputs = count_attr(el, "inputs", name)?;
    let outputs = count_attr(el, "outputs", name)?;
    if outputs == 0 {
        return Err(schema(format!("`{name}` needs at least one output")));
    }
    let kernel = el
        .attr("kernel")
        .ok_or_else(|| schema(format!("`{name}` needs a kernel")))?
        .to_string();
    let accepts = match el.attr("accepts") {
        None => vec![Accept::Any; inputs],
        Some(text) => text
            .split(',')
            .map(Accept::parse)
            .collect::<Result<Vec<_>, _>>()
            .map_err(schema)?,
    };
    if accepts.len() != inputs {
        return Err(schema(format!("`{name}` accepts lists {} types for {inputs} inputs", accepts.len())));
    }
    let output_rules = el
        .attr("output")
        .ok_or_else(|| schema(format!("`{name}` needs an output rule")))?
        .split(';')
        .map(OutputRule::parse)
        .collect::<Result<Vec<_>, _>>()
        .map_err(schema)?;
    if output_rules.len() != outputs {
        return Err(schema(format!("`{name}` has {} output rules for {outputs} outputs", output_rules.len())));
    }
    for rule in &output_rules {
        if let OutputRule::SameAs(i) = rule {
            if *i > inputs {
                return Err(schema(format!("`{name}` output rule names missing input {i}")));
            }
        }
    }
    let mut attrs = BTreeSet::new();
    for part in el.attr("attrs").unwrap_or("").split(',').filter(|s| !s.trim().is_empty()) {
        attrs.insert(part.parse::<Attr>().map_err(schema)?);
    }
    if attrs.contains(&Attr::ElementIndependent) && !attrs.contains(&Attr::Stateless) {
        return Err(schema(format!("`{name}`: element_independent requires stateless")));
    }
    let mut cost = BTreeMap::new();
    for c in el.children_named("cost") {
        let class: OpClass = c
            .attr("class")
            .ok_or_else(|| schema("<cost> needs a class"))?
            .parse()
            .map_err(schema)?;
        let formula: Formula = c
            .attr("count")
            .ok_or_else(|| schema("<cost> needs a count"))?
            .parse()
            .map_err(|e: crate::hwprofile::CostError| schema(e.to_string()))?;
        if cost.insert(class, formula).is_some() {
            return Err(schema(format!("`{name}` lists cost class {class} twice")));
        }
    }
    Ok(OpaqueEntry {
        name: name.to_string(),
        kernel,
        inputs,
        outputs,
        accepts,
        output_rules,
        attrs,
        defaults: parse_params(el)?,
        cost,
    })
}

fn parse_expandable(el: &Element, name: &str) -> Result<ExpandableEntry, ToolboxError> {
    let mut subs = el.children_named("subsystem");
    let template_el = subs
        .next()
        .ok_or_else(|| schema(format!("`{name}` needs a <subsystem> template")))?;
    if subs.next().is_some() {
        return Err(schema(format!("`{name}` has more than one template")));
    }
    let template = parse_subsystem_element(template_el).map_err(|e| schema(format!("template `{name}`: {e}")))?;
    let defaults = parse_params(el)?;
    let entry = ExpandableEntry {
        name: name.to_string(),
        defaults,
        template,
    };
    for refname in template_refs(&entry.template) {
        if !entry.defaults.contains_key(&refname) {
            return Err(schema(format!("template `{name}` uses `${refname}` without a default")));
        }
    }
    Ok(entry)
}

/// `$name` references in template parameter values.
fn template_refs(sub: &Subsystem) -> BTreeSet<String> {
    let mut refs = BTreeSet::new();
    for block in &sub.children {
        for v in block.params.values() {
            let mut rest = v.as_str();
            while let Some(pos) = rest.find('$') {
                let tail = &rest[pos + 1..];
                let end = tail
                    .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                    .unwrap_or(tail.len());
                refs.insert(tail[..end].to_string());
                rest = &tail[end..];
            }
        }
        if let Some(inner) = block.subsystem() {
            refs.extend(template_refs(inner));
        }
    }
    refs
}

fn substitute(text: &str, values: &BTreeMap<String, String>) -> Result<String, String> {
    let mut out = String::new();
    let mut rest = text;
    while let Some(pos) = rest.find('$') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos + 1..];
        let end = tail
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(tail.len());
        let key = &tail[..end];
        let value = values
            .get(key)
            .ok_or_else(|| format!("template parameter `${key}` has no value"))?;
        out.push_str(value);
        rest = &tail[end..];
    }
    out.push_str(rest);
    Ok(out)
}

fn substitute_sub(sub: &mut Subsystem, values: &BTreeMap<String, String>) -> Result<(), String> {
    for block in &mut sub.children {
        for v in block.params.values_mut() {
            *v = substitute(v, values)?;
        }
        if let BlockKind::Subsystem(inner) = &mut block.kind {
            substitute_sub(inner, values)?;
        }
    }
    Ok(())
}

impl ToolboxRegistry {
    pub fn parse(text: &str) -> Result<ToolboxRegistry, ToolboxError> {
        let root = xml::parse_document(text)?;
        if root.name != "toolbox" {
            return Err(schema(format!("root element must be <toolbox>, found <{}>", root.name)));
        }
        let mut entries = BTreeMap::new();
        for el in &root.children {
            let name = el
                .attr("name")
                .ok_or_else(|| schema(format!("<{}> needs a name", el.name)))?;
            if !crate::model::is_identifier(name) {
                return Err(schema(format!("toolbox kind `{name}` is not an identifier")));
            }
            let entry = match el.name.as_str() {
                "opaque" => ToolboxEntry::Opaque(parse_opaque(el, name)?),
                "expandable" => ToolboxEntry::Expandable(parse_expandable(el, name)?),
                other => return Err(schema(format!("unexpected element <{other}> in registry"))),
            };
            if entries.insert(name.to_string(), entry).is_some() {
                return Err(schema(format!("toolbox kind `{name}` defined twice")));
            }
        }
        Ok(ToolboxRegistry { entries })
    }

    pub fn builtin() -> ToolboxRegistry {
        ToolboxRegistry::parse(include_str!("../../../data/registry.xml")).expect("shipped registry parses")
    }

    pub fn load(path: &Path) -> Result<ToolboxRegistry, ToolboxError> {
        let text = std::fs::read_to_string(path).map_err(|source| ToolboxError::Io {
            path: path.display().to_string(),
            source,
        })?;
        ToolboxRegistry::parse(&text)
    }

    /// Built-ins, with the file named by `BLXC_REGISTRY` merged on top.
    pub fn from_env() -> Result<ToolboxRegistry, ToolboxError> {
        let mut reg = ToolboxRegistry::builtin();
        if let Some(path) = std::env::var_os(REGISTRY_ENV) {
            reg.merge(ToolboxRegistry::load(Path::new(&path))?);
        }
        Ok(reg)
    }

    /// Adds or replaces entries from `other`.
    pub fn merge(&mut self, other: ToolboxRegistry) {
        self.entries.extend(other.entries);
    }

    pub fn get(&self, name: &str) -> Option<&ToolboxEntry> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn is_element_independent(&self, name: &str) -> bool {
        matches!(self.get(name), Some(ToolboxEntry::Opaque(e)) if e.attrs.contains(&Attr::ElementIndependent))
    }

    /// Entry defaults overlaid with the block's own parameters. Parameters the
    /// entry does not declare are rejected.
    pub fn effective_params(&self, name: &str, block: &Block) -> Result<BTreeMap<String, String>, String> {
        let entry = self.get(name).ok_or_else(|| format!("unknown toolbox kind `{name}`"))?;
        let mut params = entry.defaults().clone();
        for (k, v) in &block.params {
            if !params.contains_key(k) {
                return Err(format!("toolbox kind `{name}` has no parameter `{k}`"));
            }
            params.insert(k.clone(), v.clone());
        }
        Ok(params)
    }

    /// Template instance for an expandable block, named after the block.
    pub fn instantiate(&self, name: &str, block: &Block) -> Result<Subsystem, String> {
        let Some(ToolboxEntry::Expandable(entry)) = self.get(name) else {
            return Err(format!("toolbox kind `{name}` is not expandable"));
        };
        let values = self.effective_params(name, block)?;
        let mut sub = entry.template.clone();
        sub.name = block.name.clone();
        substitute_sub(&mut sub, &values)?;
        Ok(sub)
    }

    pub fn output_types(&self, name: &str, block: &Block, inputs: &[DType]) -> Result<Vec<DType>, String> {
        match self.get(name) {
            None => Err(format!("unknown toolbox kind `{name}`")),
            Some(ToolboxEntry::Opaque(e)) => {
                if (block.inputs, block.outputs) != (e.inputs, e.outputs) {
                    return Err(format!(
                        "Toolbox({name}) has {} inputs/{} outputs, block declares {}/{}",
                        e.inputs, e.outputs, block.inputs, block.outputs
                    ));
                }
                for (i, (accept, d)) in e.accepts.iter().zip(inputs).enumerate() {
                    if !accept.admits(d) {
                        return Err(format!("Toolbox({name}) input {} does not accept {d}", i + 1));
                    }
                }
                let params = self.effective_params(name, block)?;
                e.output_rules
                    .iter()
                    .map(|rule| match rule {
                        OutputRule::SameAs(i) => Ok(inputs[i - 1].clone()),
                        OutputRule::Fixed(d) => Ok(d.clone()),
                        OutputRule::CloudCapMin(p) => {
                            let DType::PointCloud(cap) = inputs[0] else {
                                return Err(format!("Toolbox({name}) needs a point cloud input"));
                            };
                            let limit: usize = params
                                .get(p)
                                .ok_or_else(|| format!("Toolbox({name}) has no parameter `{p}`"))?
                                .trim()
                                .parse()
                                .map_err(|_| format!("Toolbox({name}) parameter `{p}` must be a count"))?;
                            if limit == 0 {
                                return Err(format!("Toolbox({name}) parameter `{p}` must be positive"));
                            }
                            Ok(DType::PointCloud(cap.min(limit)))
                        }
                    })
                    .collect()
            }
            Some(ToolboxEntry::Expandable(_)) => {
                let sub = self.instantiate(name, block)?;
                let inports: Vec<&Block> = sub.inports().collect();
                let outports = sub.outports().count();
                if (block.inputs, block.outputs) != (inports.len(), outports) {
                    return Err(format!(
                        "Toolbox({name}) has {} inputs/{outports} outputs, block declares {}/{}",
                        inports.len(),
                        block.inputs,
                        block.outputs
                    ));
                }
                for (i, (port, d)) in inports.iter().zip(inputs).enumerate() {
                    let want: DType = port
                        .param("dtype")
                        .ok_or_else(|| format!("template Inport `{}` has no dtype", port.name))?
                        .parse()?;
                    if want != *d {
                        return Err(format!("Toolbox({name}) input {} expects {want}, got {d}", i + 1));
                    }
                }
                let as_block = Block {
                    kind: BlockKind::Subsystem(Box::new(sub)),
                    ..block.clone()
                };
                crate::model::infer::output_types(&as_block, inputs, self)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_registry_loads() {
        let reg = ToolboxRegistry::builtin();
        for name in ["VoxelGridDownsample", "RandomDownsample", "PointTransform"] {
            assert!(matches!(reg.get(name), Some(ToolboxEntry::Opaque(_))), "{name}");
        }
        for name in ["StanleyLateral", "PidLongitudinal"] {
            assert!(matches!(reg.get(name), Some(ToolboxEntry::Expandable(_))), "{name}");
        }
        assert!(reg.is_element_independent("PointTransform"));
        assert!(!reg.is_element_independent("VoxelGridDownsample"));
        assert!(!reg.is_element_independent("RandomDownsample"));
    }

    #[test]
    fn opaque_output_rules() {
        let reg = ToolboxRegistry::builtin();
        let b = Block::new("r", BlockKind::Toolbox("RandomDownsample".into()))
            .with_param("max_n", "100")
            .with_ports(Some((1, 1)))
            .unwrap();
        assert_eq!(
            reg.output_types("RandomDownsample", &b, &[DType::PointCloud(500)]).unwrap(),
            vec![DType::PointCloud(100)]
        );
        assert!(reg.output_types("RandomDownsample", &b, &[DType::Vector(5)]).is_err());
        let bad = b.clone().with_param("bogus", "1");
        assert!(reg.output_types("RandomDownsample", &bad, &[DType::PointCloud(5)]).is_err());
    }

    #[test]
    fn expandable_substitutes_params() {
        let reg = ToolboxRegistry::builtin();
        let b = Block::new("lat", BlockKind::Toolbox("StanleyLateral".into()))
            .with_param("limit", "0.25")
            .with_ports(Some((3, 1)))
            .unwrap();
        let sub = reg.instantiate("StanleyLateral", &b).unwrap();
        assert_eq!(sub.name, "lat");
        assert!(sub
            .children
            .iter()
            .any(|c| c.param("upper") == Some("0.25") && c.param("lower") == Some("-0.25")));
        assert!(template_refs(&sub).is_empty());
    }

    #[test]
    fn rejects_malformed_entries() {
        for bad in [
            r#"<toolbox><opaque name="A" kernel="k" inputs="1" outputs="1"/></toolbox>"#,
            r#"<toolbox><opaque name="A" kernel="k" inputs="1" outputs="1" output="in2"/></toolbox>"#,
            r#"<toolbox><opaque name="A" kernel="k" inputs="1" outputs="1" output="in1" attrs="element_independent"/></toolbox>"#,
            r#"<toolbox><expandable name="B"/></toolbox>"#,
            r#"<toolbox><expandable name="B"><subsystem name="B"><block name="g" kind="Gain"><param k="gain" v="$x"/></block></subsystem></expandable></toolbox>"#,
            r#"<toolbox><widget name="C"/></toolbox>"#,
        ] {
            assert!(ToolboxRegistry::parse(bad).is_err(), "{bad}");
        }
    }
}
