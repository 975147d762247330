//! BLX: the flat IR as XML.

use std::collections::BTreeMap;

use crate::hwprofile::{CostHint, OpClass};
use crate::model::{Attr, BlockKind, DType, FunctionBody};
use crate::xml::{self, Element, Writer};

use super::{FlatBlock, FlatIR, GlobalVar};

#[derive(Debug, thiserror::Error)]
pub enum BlxError {
    #[error(transparent)]
    Syntax(#[from] xml::XmlError),
    #[error("BLX schema error: {0}")]
    Schema(String),
}

fn schema(msg: impl Into<String>) -> BlxError {
    BlxError::Schema(msg.into())
}

/// Deterministic serialization: vars by name, blocks by uname, ports in
/// order. Edges are written for readers but recomputed on parse.
pub fn emit_blx(ir: &FlatIR) -> String {
    let mut ir = ir.clone();
    ir.normalize();
    let mut w = Writer::new();
    w.start("blx", &[("name", &ir.name)]);
    for v in &ir.vars {
        let dtype = v.dtype.to_string();
        let port = v.producer.1.to_string();
        let mut attrs = vec![
            ("name", v.name.as_str()),
            ("dtype", dtype.as_str()),
            ("producer", v.producer.0.as_str()),
            ("port", port.as_str()),
        ];
        if v.external {
            attrs.push(("external", "true"));
        }
        w.empty("var", &attrs);
    }
    for b in &ir.blocks {
        let kind = b.kind.tag();
        let attrs_text = b.attrs.iter().map(|a| a.name()).collect::<Vec<_>>().join(",");
        let mut attrs = vec![("uname", b.uname.as_str()), ("kind", kind.as_str())];
        if !attrs_text.is_empty() {
            attrs.push(("attrs", &attrs_text));
        }
        w.start("block", &attrs);
        for (k, v) in &b.params {
            w.empty("param", &[("k", k), ("v", v)]);
        }
        if let BlockKind::FunctionBlock(fb) = &b.kind {
            w.text_element("body", &[], &fb.source);
        }
        for v in &b.inputs {
            w.empty("in", &[("var", v)]);
        }
        for v in &b.outputs {
            w.empty("out", &[("var", v)]);
        }
        if let Some(s) = &b.state {
            w.empty("state", &[("var", s)]);
        }
        if let Some(hint) = &b.cost_hint {
            for class in OpClass::ALL {
                let count = hint.get(class).to_string();
                w.empty("cost", &[("class", class.name()), ("count", &count)]);
            }
        }
        w.end("block");
    }
    for e in &ir.edges {
        w.empty("edge", &[("from", &e.from), ("to", &e.to), ("var", &e.var)]);
    }
    w.end("blx");
    w.finish()
}

fn req<'a>(el: &'a Element, key: &str) -> Result<&'a str, BlxError> {
    el.attr(key)
        .ok_or_else(|| schema(format!("<{}> needs `{key}`", el.name)))
}

fn parse_var(el: &Element) -> Result<GlobalVar, BlxError> {
    let name = req(el, "name")?;
    let dtype: DType = req(el, "dtype")?
        .parse()
        .map_err(|e| schema(format!("var `{name}`: {e}")))?;
    let port: usize = req(el, "port")?
        .parse()
        .map_err(|_| schema(format!("var `{name}`: bad port")))?;
    let external = match el.attr("external") {
        None | Some("false") => false,
        Some("true") => true,
        Some(other) => return Err(schema(format!("var `{name}`: bad external flag `{other}`"))),
    };
    Ok(GlobalVar {
        name: name.to_string(),
        dtype,
        producer: (req(el, "producer")?.to_string(), port),
        external,
    })
}

fn parse_block(el: &Element) -> Result<FlatBlock, BlxError> {
    let uname = req(el, "uname")?;
    let tag = req(el, "kind")?;
    let err = |msg: String| schema(format!("block `{uname}`: {msg}"));
    let kind = if tag == "FunctionBlock" {
        let body = el
            .children_named("body")
            .next()
            .ok_or_else(|| err("FunctionBlock needs a <body>".into()))?;
        BlockKind::FunctionBlock(FunctionBody::new(&body.text).map_err(|e| err(e.to_string()))?)
    } else {
        tag.parse::<BlockKind>().map_err(err)?
    };
    if kind.is_structural() {
        return Err(err(format!("structural kind `{tag}` in BLX")));
    }
    let mut b = FlatBlock::new(uname, kind);
    if let Some(text) = el.attr("attrs") {
        for part in text.split(',').filter(|s| !s.trim().is_empty()) {
            b.attrs.insert(part.parse::<Attr>().map_err(err)?);
        }
    }
    let mut cost: Option<CostHint> = None;
    for child in &el.children {
        match child.name.as_str() {
            "param" => {
                b.params.insert(req(child, "k")?.to_string(), req(child, "v")?.to_string());
            }
            "body" => {}
            "in" => b.inputs.push(req(child, "var")?.to_string()),
            "out" => b.outputs.push(req(child, "var")?.to_string()),
            "state" => {
                if b.state.replace(req(child, "var")?.to_string()).is_some() {
                    return Err(err("two <state> elements".into()));
                }
            }
            "cost" => {
                let class: OpClass = req(child, "class")?.parse().map_err(err)?;
                let count: u64 = req(child, "count")?
                    .parse()
                    .map_err(|_| err("bad cost count".into()))?;
                cost.get_or_insert_with(CostHint::default).set(class, count);
            }
            other => return Err(err(format!("unexpected <{other}>"))),
        }
    }
    b.cost_hint = cost;
    Ok(b)
}

/// Parses a BLX document and checks the IR invariants.
pub fn parse_blx(text: &str) -> Result<FlatIR, BlxError> {
    let root = xml::parse_document(text)?;
    if root.name != "blx" {
        return Err(schema(format!("root element is <{}>, expected <blx>", root.name)));
    }
    let mut ir = FlatIR {
        name: req(&root, "name")?.to_string(),
        blocks: Vec::new(),
        vars: Vec::new(),
        edges: Vec::new(),
        state_vars: Vec::new(),
    };
    let mut listed = BTreeMap::new();
    for child in &root.children {
        match child.name.as_str() {
            "var" => ir.vars.push(parse_var(child)?),
            "block" => ir.blocks.push(parse_block(child)?),
            "edge" => {
                listed.insert(
                    (req(child, "from")?.to_string(), req(child, "to")?.to_string(), req(child, "var")?.to_string()),
                    (),
                );
            }
            other => return Err(schema(format!("unexpected <{other}> in <blx>"))),
        }
    }
    ir.normalize();
    ir.check().map_err(schema)?;
    if !listed.is_empty() {
        let derived: BTreeMap<_, _> = ir
            .edges
            .iter()
            .map(|e| ((e.from.clone(), e.to.clone(), e.var.clone()), ()))
            .collect();
        if derived != listed {
            return Err(schema("listed edges disagree with block ports"));
        }
    }
    Ok(ir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::extract;
    use crate::model::parse_model;
    use crate::toolbox::ToolboxRegistry;

    const DELAYED: &str = r#"<model name="m">
  <block name="in1" kind="Inport"><param k="dtype" v="Scalar"/></block>
  <block name="D" kind="UnitDelay"><param k="init" v="1"/></block>
  <block name="f" kind="FunctionBlock"><param k="inputs" v="u,w"/><param k="outputs" v="y"/><body>
y = u * 2 + w
</body></block>
  <block name="out1" kind="Outport"/>
  <line src="in1:1" dst="f:1" dtype="Scalar"/>
  <line src="D:1" dst="f:2" dtype="Scalar"/>
  <line src="f:1" dst="out1:1;D:1" dtype="Scalar"/>
</model>"#;

    fn ir() -> FlatIR {
        extract(&parse_model(DELAYED).unwrap(), &ToolboxRegistry::builtin()).unwrap()
    }

    #[test]
    fn round_trip_and_state() {
        let ir = ir();
        let text = emit_blx(&ir);
        assert!(text.contains(r#"<state var="D_state"/>"#));
        assert_eq!(parse_blx(&text).unwrap(), ir);
        assert_eq!(emit_blx(&parse_blx(&text).unwrap()), text);
    }

    #[test]
    fn cost_hints_survive() {
        let mut ir = ir();
        ir.blocks[0].cost_hint = Some(CostHint {
            arith: 3,
            ..CostHint::default()
        });
        let back = parse_blx(&emit_blx(&ir)).unwrap();
        assert_eq!(back.blocks[0].cost_hint, ir.blocks[0].cost_hint);
        assert_eq!(back.blocks[1].cost_hint, None);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(matches!(parse_blx("<model name=\"x\"/>"), Err(BlxError::Schema(_))));
        assert!(matches!(parse_blx("<blx"), Err(BlxError::Syntax(_))));
        let text = emit_blx(&ir()).replace(r#"<in var="in1_1"/>"#, r#"<in var="nope_1"/>"#);
        assert!(parse_blx(&text).is_err());
        let text = emit_blx(&ir()).replace(r#"kind="Gain""#, r#"kind="BusCreator""#);
        assert!(parse_blx(&text.replace(r#"kind="UnitDelay""#, r#"kind="BusSelector""#)).is_err());
    }
}
