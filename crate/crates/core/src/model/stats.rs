use crate::fnl::Program;

use super::kind::BlockKind;
use super::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct Stats {
    pub block_count: usize,
    pub line_count: usize,
    pub function_code_lines: usize,
    pub toolbox_block_count: usize,
}

/// Counts over the whole hierarchy. Subsystem blocks count as blocks; the
/// root wrapper does not.
pub fn model_stats(model: &Model) -> Stats {
    let mut stats = Stats::default();
    stats.line_count += model.root.lines.len();
    model.root.walk(&mut Vec::new(), &mut |_, block| {
        stats.block_count += 1;
        match &block.kind {
            BlockKind::Subsystem(sub) => stats.line_count += sub.lines.len(),
            BlockKind::FunctionBlock(fb) => stats.function_code_lines += Program::code_lines(&fb.source),
            BlockKind::Toolbox(_) => stats.toolbox_block_count += 1,
            _ => {}
        }
    });
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    #[test]
    fn minimal_counts() {
        let m = parse_model(
            r#"<model name="m">
  <block name="in1" kind="Inport"><param k="dtype" v="Scalar"/></block>
  <block name="G" kind="Gain"><param k="gain" v="2"/></block>
  <block name="out1" kind="Outport"/>
  <line src="in1:1" dst="G:1" dtype="Scalar"/>
  <line src="G:1" dst="out1:1" dtype="Scalar"/>
</model>"#,
        )
        .unwrap();
        assert_eq!(
            model_stats(&m),
            Stats {
                block_count: 3,
                line_count: 2,
                function_code_lines: 0,
                toolbox_block_count: 0
            }
        );
    }

    #[test]
    fn nested_and_function_lines() {
        let m = parse_model(
            r#"<model name="m">
  <subsystem name="S">
    <block name="a" kind="Inport"><param k="dtype" v="Scalar"/></block>
    <block name="f" kind="FunctionBlock"><param k="inputs" v="u"/><param k="outputs" v="y"/><body>
% doubles
t = u * 2
y = t + 1
</body></block>
    <block name="b" kind="Outport"/>
    <line src="a:1" dst="f:1" dtype="Scalar"/>
    <line src="f:1" dst="b:1" dtype="Scalar"/>
  </subsystem>
  <block name="x" kind="Inport"><param k="dtype" v="Scalar"/></block>
  <block name="y" kind="Outport"/>
  <line src="x:1" dst="S:1" dtype="Scalar"/>
  <line src="S:1" dst="y:1" dtype="Scalar"/>
</model>"#,
        )
        .unwrap();
        let s = model_stats(&m);
        assert_eq!(s.block_count, 6);
        assert_eq!(s.line_count, 4);
        assert_eq!(s.function_code_lines, 2);
    }
}
