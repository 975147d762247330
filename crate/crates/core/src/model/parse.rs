use std::collections::{BTreeMap, BTreeSet};

use crate::xml::{self, Element};

use super::dtype::DType;
use super::kind::{Attr, BlockKind, FunctionBody};
use super::{is_identifier, Block, Endpoint, Model, ModelError, SignalLine, Subsystem};

fn schema(msg: impl Into<String>) -> ModelError {
    ModelError::Schema(msg.into())
}

/// Parses an MDLX document.
pub fn parse_model(text: &str) -> Result<Model, ModelError> {
    let root = xml::parse_document(text)?;
    if root.name != "model" {
        return Err(schema(format!("root element must be <model>, found <{}>", root.name)));
    }
    let name = root
        .attr("name")
        .ok_or_else(|| schema("<model> needs a name"))?
        .to_string();
    if !is_identifier(&name) {
        return Err(schema(format!("model name `{name}` is not an identifier")));
    }
    let step_count_hint = match root.attr("steps") {
        None => 1,
        Some(s) => match s.trim().parse::<u32>() {
            Ok(n) if n > 0 => n,
            _ => return Err(schema(format!("steps must be a positive integer, got `{s}`"))),
        },
    };
    let root_sub = parse_contents(&root, name.clone(), false)?;
    Ok(Model {
        name,
        root: root_sub,
        step_count_hint,
    })
}

/// Parses a `<subsystem>` element (used for toolbox templates too).
pub fn parse_subsystem_element(el: &Element) -> Result<Subsystem, ModelError> {
    let name = el
        .attr("name")
        .ok_or_else(|| schema("<subsystem> needs a name"))?
        .to_string();
    let masked = match el.attr("masked") {
        None | Some("false") => false,
        Some("true") => true,
        Some(other) => return Err(schema(format!("masked must be true/false, got `{other}`"))),
    };
    parse_contents(el, name, masked)
}

fn parse_contents(el: &Element, name: String, masked: bool) -> Result<Subsystem, ModelError> {
    let mut sub = Subsystem {
        name,
        masked,
        children: Vec::new(),
        lines: Vec::new(),
    };
    for child in &el.children {
        match child.name.as_str() {
            "block" => sub.children.push(parse_block(child)?),
            "subsystem" => {
                let inner = parse_subsystem_element(child)?;
                let block_name = inner.name.clone();
                let mut block = Block::new(block_name, BlockKind::Subsystem(Box::new(inner)));
                block.attrs = parse_attrs(child)?;
                let block = block.with_ports(None).map_err(schema)?;
                sub.children.push(block);
            }
            "line" => sub.lines.push(parse_line(child)?),
            other => return Err(schema(format!("unexpected element <{other}> in `{}`", sub.name))),
        }
    }
    for (i, b) in sub.children.iter().enumerate() {
        if !is_identifier(&b.name) {
            return Err(schema(format!("block name `{}` is not an identifier", b.name)));
        }
        if sub.children[..i].iter().any(|o| o.name == b.name) {
            return Err(schema(format!("duplicate block name `{}` in `{}`", b.name, sub.name)));
        }
    }
    check_line_endpoints(&sub)?;
    Ok(sub)
}

fn parse_attrs(el: &Element) -> Result<BTreeSet<Attr>, ModelError> {
    let mut attrs = BTreeSet::new();
    if let Some(text) = el.attr("attrs") {
        for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            attrs.insert(part.parse::<Attr>().map_err(schema)?);
        }
    }
    if attrs.contains(&Attr::ElementIndependent) && !attrs.contains(&Attr::Stateless) {
        return Err(schema("element_independent requires stateless"));
    }
    Ok(attrs)
}

fn parse_count(el: &Element, key: &str) -> Result<Option<usize>, ModelError> {
    el.attr(key)
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| schema(format!("`{key}` must be a count, got `{v}`")))
        })
        .transpose()
}

fn parse_block(el: &Element) -> Result<Block, ModelError> {
    let name = el
        .attr("name")
        .ok_or_else(|| schema("<block> needs a name"))?
        .to_string();
    let kind_text = el
        .attr("kind")
        .ok_or_else(|| schema(format!("block `{name}` needs a kind")))?;
    let mut params = BTreeMap::new();
    let mut body = None;
    for child in &el.children {
        match child.name.as_str() {
            "param" => {
                let k = child
                    .attr("k")
                    .ok_or_else(|| schema(format!("<param> in `{name}` needs k")))?;
                let v = child
                    .attr("v")
                    .ok_or_else(|| schema(format!("<param> in `{name}` needs v")))?;
                if params.insert(k.to_string(), v.to_string()).is_some() {
                    return Err(schema(format!("duplicate param `{k}` in `{name}`")));
                }
            }
            "body" => body = Some(child.text.clone()),
            other => return Err(schema(format!("unexpected element <{other}> in block `{name}`"))),
        }
    }
    let kind = match kind_text.trim() {
        "FunctionBlock" => {
            let source = body.clone().ok_or_else(|| schema(format!("FunctionBlock `{name}` needs a <body>")))?;
            BlockKind::FunctionBlock(
                FunctionBody::new(&source).map_err(|e| schema(format!("body of `{name}`: {e}")))?,
            )
        }
        "Subsystem" => return Err(schema("subsystems are written as <subsystem> elements")),
        other => other
            .parse::<BlockKind>()
            .map_err(|e| schema(format!("block `{name}`: {e}")))?,
    };
    if body.is_some() && !matches!(kind, BlockKind::FunctionBlock(_)) {
        return Err(schema(format!("only FunctionBlocks carry a <body> (block `{name}`)")));
    }
    if let BlockKind::FunctionBlock(fb) = &kind {
        for key in ["inputs", "outputs"] {
            let names = super::kind::split_list(params.get(key).map(String::as_str).unwrap_or(""));
            if let Some(bad) = names.iter().find(|n| !is_identifier(n)) {
                return Err(schema(format!("FunctionBlock `{name}` {key}: `{bad}` is not an identifier")));
            }
        }
        let _ = fb;
    }
    let declared = match (parse_count(el, "inputs")?, parse_count(el, "outputs")?) {
        (Some(i), Some(o)) => Some((i, o)),
        (None, None) => None,
        _ => return Err(schema(format!("block `{name}` must declare both inputs and outputs"))),
    };
    let mut block = Block::new(name.clone(), kind);
    block.params = params;
    block.attrs = parse_attrs(el)?;
    if block.kind.is_stateful() && block.attrs.contains(&Attr::Stateless) {
        return Err(schema(format!("UnitDelay `{name}` cannot be stateless")));
    }
    block
        .with_ports(declared)
        .map_err(|e| schema(format!("block `{name}`: {e}")))
}

fn parse_endpoint(text: &str) -> Result<Endpoint, ModelError> {
    let (block, port) = text
        .trim()
        .rsplit_once(':')
        .ok_or_else(|| schema(format!("endpoint `{text}` must be `block:port`")))?;
    let port = port
        .parse::<usize>()
        .ok()
        .filter(|p| *p > 0)
        .ok_or_else(|| schema(format!("bad port number in `{text}`")))?;
    Ok(Endpoint::new(block, port))
}

fn parse_line(el: &Element) -> Result<SignalLine, ModelError> {
    let src = parse_endpoint(el.attr("src").ok_or_else(|| schema("<line> needs src"))?)?;
    let dst_text = el.attr("dst").ok_or_else(|| schema("<line> needs dst"))?;
    let dsts = dst_text
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(parse_endpoint)
        .collect::<Result<Vec<_>, _>>()?;
    if dsts.is_empty() {
        return Err(schema(format!("line from {src} has no destination")));
    }
    let dtype: DType = el
        .attr("dtype")
        .ok_or_else(|| schema(format!("line from {src} needs a dtype")))?
        .parse()
        .map_err(|e| schema(format!("line from {src}: {e}")))?;
    Ok(SignalLine { src, dsts, dtype })
}

fn check_line_endpoints(sub: &Subsystem) -> Result<(), ModelError> {
    let mut sources = BTreeSet::new();
    for line in &sub.lines {
        let src = sub
            .child(&line.src.block)
            .ok_or_else(|| schema(format!("line source `{}` does not exist in `{}`", line.src, sub.name)))?;
        if line.src.port > src.outputs {
            return Err(schema(format!("line source `{}` names a missing out-port", line.src)));
        }
        if !sources.insert(line.src.clone()) {
            return Err(schema(format!("two lines leave `{}`", line.src)));
        }
        for dst in &line.dsts {
            let block = sub
                .child(&dst.block)
                .ok_or_else(|| schema(format!("line destination `{dst}` does not exist in `{}`", sub.name)))?;
            if dst.port > block.inputs {
                return Err(schema(format!("line destination `{dst}` names a missing in-port")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"<model name="minimal">
  <block name="in1" kind="Inport"><param k="dtype" v="Scalar"/></block>
  <block name="G" kind="Gain"><param k="gain" v="2"/></block>
  <block name="out1" kind="Outport"/>
  <line src="in1:1" dst="G:1" dtype="Scalar"/>
  <line src="G:1" dst="out1:1" dtype="Scalar"/>
</model>"#;

    #[test]
    fn minimal_model() {
        let model = parse_model(MINIMAL).unwrap();
        assert_eq!(model.name, "minimal");
        assert_eq!(model.root.children.len(), 3);
        assert_eq!(model.root.lines.len(), 2);
        assert_eq!(model.step_count_hint, 1);
        let gain = model.root.child("G").unwrap();
        assert_eq!((gain.inputs, gain.outputs), (1, 1));
    }

    #[test]
    fn masked_subsystem_keeps_children() {
        let text = r#"<model name="m">
  <subsystem name="M" masked="true">
    <block name="A" kind="Const"><param k="value" v="1"/></block>
    <block name="K" kind="Outport"/>
    <line src="A:1" dst="K:1" dtype="Scalar"/>
  </subsystem>
  <block name="o" kind="Outport"/>
  <line src="M:1" dst="o:1" dtype="Scalar"/>
</model>"#;
        let model = parse_model(text).unwrap();
        let sub = model.root.child("M").unwrap().subsystem().unwrap();
        assert!(sub.masked);
        assert_eq!(sub.children.len(), 2);
        assert!(sub.listing().is_empty());
    }

    #[test]
    fn sum_with_one_input_is_schema_error() {
        let text = r#"<model name="m"><block name="S" kind="Sum"><param k="signs" v="+"/></block></model>"#;
        assert!(matches!(parse_model(text), Err(ModelError::Schema(_))));
    }

    #[test]
    fn error_classes() {
        assert!(matches!(parse_model("<model name=\"m\">"), Err(ModelError::Syntax(_))));
        for bad in [
            r#"<model name="m"><block name="X" kind="Frobnicate"/></model>"#,
            r#"<model name="m"><block name="X" kind="Gain"/><line src="X:1" dst="Y:1" dtype="Scalar"/></model>"#,
            r#"<model name="m"><block name="X" kind="Gain"/><line src="X:1" dst="X:1" dtype="Vector(0)"/></model>"#,
            r#"<model name="m"><block name="X" kind="Gain"/><line src="X:2" dst="X:1" dtype="Scalar"/></model>"#,
            r#"<model name="m"><block name="X" kind="Gain"/><block name="X" kind="Gain"/></model>"#,
            r#"<model name="m"><block name="X_" kind="Gain"/></model>"#,
            r#"<model name="m"><block name="X" kind="Gain" attrs="element_independent"/></model>"#,
            r#"<model name="m"><block name="X" kind="UnitDelay" attrs="stateless"/></model>"#,
            r#"<model name="m"><block name="X" kind="Concat"/></model>"#,
            r#"<model name="m"><block name="X" kind="FunctionBlock"><body>y = </body></block></model>"#,
            r#"<model name="m" steps="0"/>"#,
        ] {
            assert!(matches!(parse_model(bad), Err(ModelError::Schema(_))), "{bad}");
        }
    }
}
