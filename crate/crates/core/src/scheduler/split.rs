use std::collections::BTreeMap;

use crate::extractor::{FlatBlock, FlatIR, GlobalVar};
use crate::hwprofile::{bind_costs, CostTable};
use crate::model::infer::{output_types, shard_sizes};
use crate::model::{BlockKind, DType};
use crate::toolbox::ToolboxRegistry;

use super::ScheduleError;

fn not_splittable(block: &str, reason: impl Into<String>) -> ScheduleError {
    ScheduleError::NotSplittable {
        block: block.to_string(),
        reason: reason.into(),
    }
}

fn add_var(ir: &mut FlatIR, name: &str, dtype: DType, producer: &str, port: usize) {
    ir.vars.push(GlobalVar {
        name: name.to_string(),
        dtype,
        producer: (producer.to_string(), port),
        external: false,
    });
}

/// Replaces block `uname` by a Splitter cutting its principal input into `k`
/// contiguous shards, `k` copies of the block (one per shard) and a Merger
/// concatenating their outputs in shard order. Cost hints are rebound when
/// the input IR carried them. `k = 1` inserts the pair and removes it again.
pub fn split_data_parallel(
    ir: &FlatIR,
    uname: &str,
    k: usize,
    registry: &ToolboxRegistry,
    table: &CostTable,
) -> Result<FlatIR, ScheduleError> {
    let target = ir
        .block(uname)
        .ok_or_else(|| ScheduleError::NoSuchBlock(uname.to_string()))?
        .clone();
    if !target.is_splittable() {
        return Err(not_splittable(uname, "not flagged stateless and element_independent"));
    }
    if target.outputs.len() != 1 || target.inputs.is_empty() {
        return Err(not_splittable(uname, "needs a principal input and one output"));
    }
    let types = ir.var_types();
    let principal = &types[&target.inputs[0]];
    let out_type = types[&target.outputs[0]].clone();
    let n = match principal {
        DType::Vector(n) | DType::PointCloud(n) => *n,
        other => return Err(not_splittable(uname, format!("principal input is {other}"))),
    };
    if k == 0 || k > n {
        return Err(ScheduleError::KTooLarge { k, n });
    }
    let shard_types: Vec<DType> = match principal {
        DType::Vector(_) => shard_sizes(n, k).into_iter().map(DType::Vector).collect(),
        _ => vec![DType::PointCloud(n.div_ceil(k)); k],
    };
    let splitter = format!("{uname}_split");
    let merger = format!("{uname}_merge");
    let shard = |i: usize| format!("{uname}_shard{i}");
    let mut new_names = vec![splitter.clone(), merger.clone()];
    new_names.extend((1..=k).map(shard));
    for name in &new_names {
        if ir.block(name).is_some() || ir.vars.iter().any(|v| v.producer.0 == *name) {
            return Err(not_splittable(uname, format!("generated name `{name}` is taken")));
        }
    }

    let mut out = ir.clone();
    out.blocks.retain(|b| b.uname != uname);
    out.vars.retain(|v| v.producer.0 != uname);

    let mut sp = FlatBlock::new(splitter.clone(), BlockKind::Splitter);
    sp.params.insert("k".into(), k.to_string());
    sp.inputs.push(target.inputs[0].clone());
    for (i, t) in shard_types.iter().enumerate() {
        let var = format!("{splitter}_{}", i + 1);
        add_var(&mut out, &var, t.clone(), &splitter, i + 1);
        sp.outputs.push(var);
    }

    let mut mg = FlatBlock::new(merger.clone(), BlockKind::Merger);
    mg.params.insert("k".into(), k.to_string());
    if let DType::PointCloud(cap) = out_type {
        mg.params.insert("cap".into(), cap.to_string());
    }
    for i in 1..=k {
        let mut copy = target.clone();
        copy.uname = shard(i);
        copy.cost_hint = None;
        copy.inputs[0] = sp.outputs[i - 1].clone();
        let mut in_types = vec![shard_types[i - 1].clone()];
        in_types.extend(copy.inputs[1..].iter().map(|v| types[v].clone()));
        let shard_out = output_types(&copy.as_block(), &in_types, registry)
            .map_err(|e| not_splittable(uname, e))?
            .remove(0);
        let var = format!("{}_1", copy.uname);
        add_var(&mut out, &var, shard_out, &copy.uname, 1);
        copy.outputs = vec![var.clone()];
        mg.inputs.push(var);
        out.blocks.push(copy);
    }
    let merged = format!("{merger}_1");
    add_var(&mut out, &merged, out_type, &merger, 1);
    mg.outputs.push(merged.clone());
    out.blocks.push(sp);
    out.blocks.push(mg);
    for b in &mut out.blocks {
        for v in &mut b.inputs {
            if *v == target.outputs[0] {
                *v = merged.clone();
            }
        }
    }
    out.normalize();
    if k == 1 {
        out = remove_trivial_splits(&out);
    }
    if ir.blocks.iter().any(|b| b.cost_hint.is_some()) {
        bind_costs(&mut out, table, registry)?;
    }
    out.check().map_err(ScheduleError::Invalid)?;
    Ok(out)
}

/// Peephole: a one-shard Splitter feeding a single block into a one-input
/// Merger is removed, and the block takes back its original name.
pub fn remove_trivial_splits(ir: &FlatIR) -> FlatIR {
    let mut out = ir.clone();
    let mergers: Vec<FlatBlock> = ir
        .blocks
        .iter()
        .filter(|b| matches!(b.kind, BlockKind::Merger) && b.inputs.len() == 1)
        .cloned()
        .collect();
    for mg in mergers {
        let Some(base) = mg.uname.strip_suffix("_merge") else { continue };
        let Some(inner) = out.vars.iter().find(|v| v.name == mg.inputs[0]).map(|v| v.producer.0.clone()) else {
            continue;
        };
        let Some(copy) = out.block(&inner).cloned() else { continue };
        let Some(sp) = out
            .vars
            .iter()
            .find(|v| Some(&v.name) == copy.inputs.first())
            .and_then(|v| out.block(&v.producer.0))
            .cloned()
        else {
            continue;
        };
        if !matches!(sp.kind, BlockKind::Splitter) || sp.outputs.len() != 1 || out.block(base).is_some() {
            continue;
        }
        let orig_out = format!("{base}_1");
        let mut rename: BTreeMap<String, String> = BTreeMap::new();
        rename.insert(mg.outputs[0].clone(), orig_out.clone());
        rename.insert(sp.outputs[0].clone(), sp.inputs[0].clone());
        let removed = [sp.uname.as_str(), mg.uname.as_str()];
        out.blocks.retain(|b| !removed.contains(&b.uname.as_str()));
        let out_dtype = out.var(&mg.outputs[0]).map(|v| v.dtype.clone()).expect("merger output var");
        out.vars.retain(|v| !removed.contains(&v.producer.0.as_str()) && v.producer.0 != inner);
        out.vars.push(GlobalVar {
            name: orig_out.clone(),
            dtype: out_dtype,
            producer: (base.to_string(), 1),
            external: false,
        });
        for b in &mut out.blocks {
            if b.uname == inner {
                b.uname = base.to_string();
                b.outputs = vec![orig_out.clone()];
            }
            for v in &mut b.inputs {
                if let Some(new) = rename.get(v) {
                    *v = new.clone();
                }
            }
        }
        out.normalize();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::extract;
    use crate::model::parse_model;

    fn vector_map(n: usize) -> FlatIR {
        let text = format!(
            r#"<model name="m">
  <block name="u" kind="Inport"><param k="dtype" v="Vector({n})"/></block>
  <block name="f" kind="ElementwiseMap(sin)" attrs="stateless,element_independent"/>
  <block name="y" kind="Outport"/>
  <line src="u:1" dst="f:1" dtype="Vector({n})"/>
  <line src="f:1" dst="y:1" dtype="Vector({n})"/>
</model>"#
        );
        let reg = ToolboxRegistry::builtin();
        let mut ir = extract(&parse_model(&text).unwrap(), &reg).unwrap();
        bind_costs(&mut ir, &CostTable::builtin(), &reg).unwrap();
        ir
    }

    fn split(ir: &FlatIR, k: usize) -> Result<FlatIR, ScheduleError> {
        split_data_parallel(ir, "f", k, &ToolboxRegistry::builtin(), &CostTable::builtin())
    }

    #[test]
    fn four_shards_of_25() {
        let ir = vector_map(100);
        let s = split(&ir, 4).unwrap();
        assert_eq!(s.blocks.len(), ir.blocks.len() - 1 + 6);
        for i in 1..=4 {
            assert_eq!(s.var(&format!("f_split_{i}")).unwrap().dtype, DType::Vector(25));
            assert_eq!(s.block(&format!("f_shard{i}")).unwrap().cost_hint.unwrap().trig, 25);
        }
        assert_eq!(s.block("y").unwrap().inputs, vec!["f_merge_1"]);
    }

    #[test]
    fn uneven_shards() {
        let s = split(&vector_map(10), 4).unwrap();
        let sizes: Vec<DType> = (1..=4).map(|i| s.var(&format!("f_split_{i}")).unwrap().dtype.clone()).collect();
        assert_eq!(sizes, vec![DType::Vector(3), DType::Vector(3), DType::Vector(2), DType::Vector(2)]);
    }

    #[test]
    fn k_one_is_identity() {
        let ir = vector_map(8);
        assert_eq!(split(&ir, 1).unwrap(), ir);
    }

    #[test]
    fn errors() {
        let ir = vector_map(3);
        assert_eq!(split(&ir, 4), Err(ScheduleError::KTooLarge { k: 4, n: 3 }));
        assert!(matches!(
            split_data_parallel(&ir, "y", 2, &ToolboxRegistry::builtin(), &CostTable::builtin()),
            Err(ScheduleError::NotSplittable { .. })
        ));
        assert!(matches!(
            split_data_parallel(&ir, "zz", 2, &ToolboxRegistry::builtin(), &CostTable::builtin()),
            Err(ScheduleError::NoSuchBlock(_))
        ));
    }
}
