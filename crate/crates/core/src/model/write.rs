use crate::xml::Writer;

use super::kind::BlockKind;
use super::{Block, Model, Subsystem};

/// Serializes a model to MDLX. Parsing the result yields an equal model.
pub fn serialize_model(model: &Model) -> String {
    let mut w = Writer::new();
    let steps = model.step_count_hint.to_string();
    w.start("model", &[("name", &model.name), ("steps", &steps)]);
    write_contents(&mut w, &model.root);
    w.end("model");
    w.finish()
}

/// Writes a `<subsystem>` element for `sub`.
pub fn write_subsystem(w: &mut Writer, sub: &Subsystem, attrs: &str) {
    let mut xml_attrs = vec![("name", sub.name.as_str())];
    if sub.masked {
        xml_attrs.push(("masked", "true"));
    }
    if !attrs.is_empty() {
        xml_attrs.push(("attrs", attrs));
    }
    w.start("subsystem", &xml_attrs);
    write_contents(w, sub);
    w.end("subsystem");
}

fn attrs_text(block: &Block) -> String {
    block
        .attrs
        .iter()
        .map(|a| a.name())
        .collect::<Vec<_>>()
        .join(",")
}

fn write_contents(w: &mut Writer, sub: &Subsystem) {
    for block in &sub.children {
        let attrs = attrs_text(block);
        if let BlockKind::Subsystem(inner) = &block.kind {
            write_subsystem(w, inner, &attrs);
            continue;
        }
        let tag = block.kind.tag();
        let inputs = block.inputs.to_string();
        let outputs = block.outputs.to_string();
        let mut xml_attrs = vec![("name", block.name.as_str()), ("kind", tag.as_str())];
        if matches!(block.kind, BlockKind::Concat | BlockKind::Toolbox(_)) {
            xml_attrs.push(("inputs", &inputs));
            xml_attrs.push(("outputs", &outputs));
        }
        if !attrs.is_empty() {
            xml_attrs.push(("attrs", &attrs));
        }
        let body = match &block.kind {
            BlockKind::FunctionBlock(fb) => Some(fb.source.as_str()),
            _ => None,
        };
        if block.params.is_empty() && body.is_none() {
            w.empty("block", &xml_attrs);
            continue;
        }
        w.start("block", &xml_attrs);
        for (k, v) in &block.params {
            w.empty("param", &[("k", k), ("v", v)]);
        }
        if let Some(body) = body {
            w.text_element("body", &[], body);
        }
        w.end("block");
    }
    for line in &sub.lines {
        let src = line.src.to_string();
        let dst = line
            .dsts
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let dtype = line.dtype.to_string();
        w.empty("line", &[("src", &src), ("dst", &dst), ("dtype", &dtype)]);
    }
}
