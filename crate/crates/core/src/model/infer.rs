//! Output-type rules per block kind.

use std::collections::BTreeMap;

use crate::toolbox::ToolboxRegistry;

use super::dtype::{parse_position, DType, PositionPath};
use super::kind::{split_list, BlockKind};
use super::{param_f64, Attr, Block, Literal};

fn is_numeric(d: &DType) -> bool {
    matches!(d, DType::Scalar | DType::Vector(_) | DType::Matrix(..) | DType::PointCloud(_))
}

fn is_dense(d: &DType) -> bool {
    matches!(d, DType::Scalar | DType::Vector(_) | DType::Matrix(..))
}

/// Common type of broadcast operands: all non-scalar operands must agree.
fn broadcast(kind: &str, inputs: &[DType]) -> Result<DType, String> {
    let mut out = DType::Scalar;
    for d in inputs {
        if !is_dense(d) {
            return Err(format!("{kind} does not accept {d}"));
        }
        if *d != DType::Scalar {
            if out != DType::Scalar && out != *d {
                return Err(format!("{kind} operands {out} and {d} do not broadcast"));
            }
            out = d.clone();
        }
    }
    Ok(out)
}

fn one(inputs: &[DType]) -> &DType {
    &inputs[0]
}

/// Selection list of a BusSelector as given in its parameters: dotted names
/// (`select`) or position paths (`positions`, `;`-separated).
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    Names(Vec<String>),
    Positions(Vec<PositionPath>),
}

pub fn parse_selector(params: &BTreeMap<String, String>) -> Result<Selector, String> {
    if let Some(sel) = params.get("select") {
        return Ok(Selector::Names(split_list(sel)));
    }
    if let Some(pos) = params.get("positions") {
        return pos
            .split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(parse_position)
            .collect::<Result<Vec<_>, _>>()
            .map(Selector::Positions);
    }
    Err("BusSelector needs `select` or `positions`".into())
}

/// Resolves each selection to a position path in `layout`: names by lookup,
/// positions by bounds check. Returns the offending entry on failure.
pub fn resolve_selection(sel: &Selector, layout: &super::BusLayout) -> Result<Vec<PositionPath>, String> {
    match sel {
        Selector::Names(names) => names
            .iter()
            .map(|n| layout.position_of(n).ok_or_else(|| n.clone()))
            .collect(),
        Selector::Positions(paths) => paths
            .iter()
            .map(|p| {
                layout
                    .at(p)
                    .map(|_| p.clone())
                    .ok_or_else(|| super::dtype::format_position(p))
            })
            .collect(),
    }
}

/// Row counts of the shards a Splitter produces for `n` rows: contiguous,
/// sizes differing by at most one, remainder spread over the leading shards.
pub fn shard_sizes(n: usize, k: usize) -> Vec<usize> {
    let base = n / k;
    let extra = n % k;
    (0..k).map(|i| base + usize::from(i < extra)).collect()
}

/// Output types of a block given its input types. Subsystem outputs come
/// from the lines feeding its Outport children.
pub fn output_types(
    block: &Block,
    inputs: &[DType],
    registry: &ToolboxRegistry,
) -> Result<Vec<DType>, String> {
    let params = &block.params;
    if inputs.len() != block.inputs {
        return Err(format!("expected {} inputs, got {}", block.inputs, inputs.len()));
    }
    if !matches!(
        block.kind,
        BlockKind::BusCreator | BlockKind::BusSelector | BlockKind::Subsystem(_) | BlockKind::Outport
    ) {
        if let Some(bus) = inputs.iter().find(|d| d.is_bus()) {
            return Err(format!("{} does not accept bus input {bus}", block.kind.tag()));
        }
    }
    let out = match &block.kind {
        BlockKind::Inport => {
            let text = block
                .param("dtype")
                .ok_or_else(|| "Inport needs a `dtype` parameter".to_string())?;
            vec![text.parse::<DType>()?]
        }
        BlockKind::Outport => vec![],
        BlockKind::Const => {
            let text = block
                .param("value")
                .ok_or_else(|| "Const needs a `value` parameter".to_string())?;
            vec![Literal::parse(text)?.dtype()]
        }
        BlockKind::Gain => {
            let input = one(inputs);
            if !is_numeric(input) {
                return Err(format!("Gain does not accept {input}"));
            }
            let gain = Literal::parse(block.param("gain").unwrap_or("1"))?;
            match (&gain, input) {
                (Literal::Scalar(_), _) => {}
                (Literal::Vector(v), DType::Vector(n)) if v.len() == *n => {}
                (Literal::Matrix(_), DType::Matrix(..)) if gain.dtype() == *input => {}
                _ => return Err(format!("gain {} does not match input {input}", gain.dtype())),
            }
            vec![input.clone()]
        }
        BlockKind::Sum | BlockKind::Product => vec![broadcast(block.kind.base_name(), inputs)?],
        BlockKind::Saturate => {
            let lo = param_f64(params, "lower", f64::NEG_INFINITY)?;
            let hi = param_f64(params, "upper", f64::INFINITY)?;
            if lo > hi {
                return Err(format!("Saturate lower {lo} exceeds upper {hi}"));
            }
            let input = one(inputs);
            if !is_numeric(input) {
                return Err(format!("Saturate does not accept {input}"));
            }
            vec![input.clone()]
        }
        BlockKind::Switch => {
            param_f64(params, "threshold", 0.0)?;
            if inputs[1] != DType::Scalar {
                return Err(format!("Switch control must be Scalar, got {}", inputs[1]));
            }
            if inputs[0] != inputs[2] || !is_dense(&inputs[0]) {
                return Err(format!("Switch data inputs {} and {} differ", inputs[0], inputs[2]));
            }
            vec![inputs[0].clone()]
        }
        BlockKind::MatMul => match (&inputs[0], &inputs[1]) {
            (DType::Matrix(r, k), DType::Matrix(k2, c)) if k == k2 => vec![DType::Matrix(*r, *c)],
            (DType::Matrix(r, k), DType::Vector(k2)) if k == k2 => vec![DType::Vector(*r)],
            (a, b) => return Err(format!("MatMul cannot multiply {a} by {b}")),
        },
        BlockKind::ElementwiseMap(_) => {
            let input = one(inputs);
            if !is_numeric(input) {
                return Err(format!("ElementwiseMap does not accept {input}"));
            }
            vec![input.clone()]
        }
        BlockKind::Reduce(_) => match one(inputs) {
            DType::Vector(_) | DType::Matrix(..) | DType::Scalar => vec![DType::Scalar],
            other => return Err(format!("Reduce does not accept {other}")),
        },
        BlockKind::Concat => {
            let mut total = 0;
            for d in inputs {
                total += match d {
                    DType::Scalar => 1,
                    DType::Vector(n) => *n,
                    other => return Err(format!("Concat does not accept {other}")),
                };
            }
            vec![DType::Vector(total)]
        }
        BlockKind::Slice => {
            let DType::Vector(n) = one(inputs) else {
                return Err(format!("Slice needs a Vector input, got {}", inputs[0]));
            };
            let start: usize = block
                .param("start")
                .unwrap_or("1")
                .trim()
                .parse()
                .map_err(|_| "Slice start must be a positive integer".to_string())?;
            let len: Option<usize> = block
                .param("len")
                .map(|l| l.trim().parse().map_err(|_| "Slice len must be a positive integer".to_string()))
                .transpose()?;
            let take = len.unwrap_or(1);
            if start == 0 || take == 0 || start - 1 + take > *n {
                return Err(format!("Slice start {start} len {take} out of range for Vector({n})"));
            }
            vec![match len {
                Some(l) => DType::Vector(l),
                None => DType::Scalar,
            }]
        }
        BlockKind::UnitDelay => {
            let input = one(inputs);
            if !is_numeric(input) {
                return Err(format!("UnitDelay does not accept {input}"));
            }
            param_f64(params, "init", 0.0)?;
            vec![input.clone()]
        }
        BlockKind::BusCreator => {
            let names = split_list(block.param("names").unwrap_or(""));
            let layout = super::BusLayout::new(names.into_iter().zip(inputs.iter().cloned()).collect());
            let dtype = DType::Bus(layout);
            // reuse the parser's dimension and duplicate checks
            dtype.to_string().parse::<DType>()?;
            vec![dtype]
        }
        BlockKind::BusSelector => {
            let DType::Bus(layout) = one(inputs) else {
                return Err(format!("BusSelector needs a bus input, got {}", inputs[0]));
            };
            let sel = parse_selector(params)?;
            let paths = resolve_selection(&sel, layout)
                .map_err(|bad| format!("selection `{bad}` does not resolve in {}", inputs[0]))?;
            paths
                .iter()
                .map(|p| layout.at(p).cloned().expect("resolved"))
                .collect()
        }
        BlockKind::Subsystem(sub) => {
            let mut outs = Vec::new();
            for port in sub.outports() {
                let line = sub
                    .line_into(&port.name, 1)
                    .ok_or_else(|| format!("Outport `{}` is not driven", port.name))?;
                outs.push(line.dtype.clone());
            }
            outs
        }
        BlockKind::FunctionBlock(fb) => {
            let in_names = split_list(block.param("inputs").unwrap_or(""));
            let out_names = split_list(block.param("outputs").unwrap_or(""));
            let named: Vec<(String, DType)> = in_names.into_iter().zip(inputs.iter().cloned()).collect();
            fb.program
                .check(&named, &out_names)
                .map_err(|e| format!("function body: {e}"))?
                .outputs
        }
        BlockKind::Toolbox(name) => registry.output_types(name, block, inputs)?,
        BlockKind::Splitter => {
            let k: usize = block.param("k").unwrap_or("0").trim().parse().unwrap_or(0);
            match one(inputs) {
                DType::Vector(n) if k >= 1 && k <= *n => {
                    shard_sizes(*n, k).into_iter().map(DType::Vector).collect()
                }
                DType::PointCloud(n) if k >= 1 && k <= *n => vec![DType::PointCloud(n.div_ceil(k)); k],
                other => return Err(format!("Splitter cannot cut {other} into {k} shards")),
            }
        }
        BlockKind::Merger => {
            if inputs.iter().all(|d| matches!(d, DType::Vector(_))) {
                vec![DType::Vector(inputs.iter().map(DType::element_count).sum())]
            } else if inputs.iter().all(|d| matches!(d, DType::PointCloud(_))) {
                let cap: usize = block
                    .param("cap")
                    .ok_or_else(|| "cloud Merger needs a `cap` parameter".to_string())?
                    .trim()
                    .parse()
                    .map_err(|_| "Merger cap must be a count".to_string())?;
                if cap == 0 || cap < inputs.iter().map(DType::element_count).max().unwrap_or(0) {
                    return Err(format!("Merger cap {cap} is smaller than a shard"));
                }
                vec![DType::PointCloud(cap)]
            } else {
                return Err("Merger inputs must be all vectors or all point clouds".into());
            }
        }
    };
    Ok(out)
}

/// Checks that a block flagged `element_independent` really maps its first
/// input element-by-element, so it can be sharded by rows. Other inputs must
/// be scalars (replicated to each shard).
pub fn check_element_independent(
    block: &Block,
    inputs: &[DType],
    outputs: &[DType],
    registry: &ToolboxRegistry,
) -> Result<(), String> {
    if !block.attrs.contains(&Attr::ElementIndependent) {
        return Ok(());
    }
    if outputs.len() != 1 || inputs.is_empty() {
        return Err("element_independent blocks need one output and a principal input".into());
    }
    let principal_ok = matches!(
        (&inputs[0], &outputs[0]),
        (DType::Vector(a), DType::Vector(b)) if a == b
    ) || matches!((&inputs[0], &outputs[0]), (DType::PointCloud(_), DType::PointCloud(_)));
    if !principal_ok {
        return Err(format!(
            "element_independent needs a Vector or PointCloud principal input mapped to the same shape, got {} -> {}",
            inputs[0], outputs[0]
        ));
    }
    if inputs[1..].iter().any(|d| *d != DType::Scalar) {
        return Err("element_independent blocks may only take scalar side inputs".into());
    }
    let kind_ok = match &block.kind {
        BlockKind::Gain => matches!(Literal::parse(block.param("gain").unwrap_or("1")), Ok(Literal::Scalar(_))),
        BlockKind::ElementwiseMap(_) | BlockKind::Saturate => true,
        BlockKind::FunctionBlock(fb) => {
            let outs = split_list(block.param("outputs").unwrap_or(""));
            fb.program.is_row_local(&outs)
        }
        BlockKind::Toolbox(name) => registry.is_element_independent(name),
        _ => false,
    };
    if kind_ok {
        Ok(())
    } else {
        Err(format!("{} is not element-independent", block.kind.tag()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> ToolboxRegistry {
        ToolboxRegistry::builtin()
    }

    fn block(kind: &str) -> Block {
        Block::new("b", kind.parse().unwrap())
    }

    #[test]
    fn gain_broadcasts_scalar_over_vector() {
        let b = block("Gain").with_param("gain", "2").with_ports(None).unwrap();
        assert_eq!(
            output_types(&b, &[DType::Vector(3)], &reg()).unwrap(),
            vec![DType::Vector(3)]
        );
        let b = block("Gain").with_param("gain", "[1,2]").with_ports(None).unwrap();
        assert!(output_types(&b, &[DType::Vector(3)], &reg()).is_err());
    }

    #[test]
    fn sum_rules() {
        let b = block("Sum").with_param("signs", "+-").with_ports(None).unwrap();
        assert_eq!(
            output_types(&b, &[DType::Scalar, DType::Vector(2)], &reg()).unwrap(),
            vec![DType::Vector(2)]
        );
        assert!(output_types(&b, &[DType::Vector(3), DType::Vector(2)], &reg()).is_err());
        assert!(output_types(&b, &[DType::PointCloud(3), DType::Scalar], &reg()).is_err());
    }

    #[test]
    fn slice_and_concat() {
        let s = block("Slice").with_param("start", "2").with_ports(None).unwrap();
        assert_eq!(output_types(&s, &[DType::Vector(3)], &reg()).unwrap(), vec![DType::Scalar]);
        let s = block("Slice").with_param("start", "2").with_param("len", "2").with_ports(None).unwrap();
        assert_eq!(output_types(&s, &[DType::Vector(3)], &reg()).unwrap(), vec![DType::Vector(2)]);
        let s = block("Slice").with_param("start", "3").with_param("len", "2").with_ports(None).unwrap();
        assert!(output_types(&s, &[DType::Vector(3)], &reg()).is_err());
        let c = block("Concat").with_ports(Some((2, 1))).unwrap();
        assert_eq!(
            output_types(&c, &[DType::Scalar, DType::Vector(2)], &reg()).unwrap(),
            vec![DType::Vector(3)]
        );
    }

    #[test]
    fn bus_selector_by_name_and_position() {
        let bus: DType = "Bus{a:Scalar,p:Bus{x:Scalar,y:Vector(2)},c:Scalar}".parse().unwrap();
        let b = block("BusSelector").with_param("select", "c,p.y").with_ports(None).unwrap();
        assert_eq!(
            output_types(&b, &[bus.clone()], &reg()).unwrap(),
            vec![DType::Scalar, DType::Vector(2)]
        );
        let b = block("BusSelector").with_param("positions", "2.2;1").with_ports(None).unwrap();
        assert_eq!(
            output_types(&b, &[bus.clone()], &reg()).unwrap(),
            vec![DType::Vector(2), DType::Scalar]
        );
        let b = block("BusSelector").with_param("select", "z").with_ports(None).unwrap();
        assert!(output_types(&b, &[bus], &reg()).is_err());
    }

    #[test]
    fn shards_are_contiguous_and_balanced() {
        assert_eq!(shard_sizes(100, 4), vec![25, 25, 25, 25]);
        assert_eq!(shard_sizes(10, 4), vec![3, 3, 2, 2]);
        assert_eq!(shard_sizes(3, 3), vec![1, 1, 1]);
    }

    #[test]
    fn matmul_shapes() {
        let b = block("MatMul").with_ports(None).unwrap();
        assert_eq!(
            output_types(&b, &[DType::Matrix(2, 3), DType::Matrix(3, 4)], &reg()).unwrap(),
            vec![DType::Matrix(2, 4)]
        );
        assert_eq!(
            output_types(&b, &[DType::Matrix(2, 3), DType::Vector(3)], &reg()).unwrap(),
            vec![DType::Vector(2)]
        );
        assert!(output_types(&b, &[DType::Matrix(2, 3), DType::Vector(2)], &reg()).is_err());
    }
}
