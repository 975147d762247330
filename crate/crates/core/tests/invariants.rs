//! Property tests over generated models, DAGs and schedules.

use blxc_core::codegen::{emit_gantt, GanttChart};
use blxc_core::extractor::{emit_blx, extract, parse_blx};
use blxc_core::hwprofile::{bind_costs, CostTable};
use blxc_core::model::{infer::shard_sizes, DType};
use blxc_core::scheduler::{allocate, split_data_parallel, ScheduleRequest};
use blxc_core::simulator::interpret_ir;
use blxc_core::synth::{ir_inputs, random_dag, random_element_independent_model, random_model, random_profile, random_trace, rng};
use blxc_core::toolbox::ToolboxRegistry;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn schedules_valid_and_monotone(seed in any::<u64>(), n in 1usize..30, p in 0.05f64..0.6, cores in 1usize..5) {
        let mut r = rng(seed);
        let ir = random_dag(&mut r, n, p);
        let profile = random_profile(&mut r, cores);
        let mut last = u64::MAX;
        for max_cores in 1..=cores {
            let s = allocate(&ScheduleRequest { ir: &ir, profile: &profile, max_cores }).unwrap();
            s.validate(&ir, &profile).unwrap();
            prop_assert_eq!(s.slots.len(), n);
            prop_assert!(s.core_count_used <= max_cores);
            prop_assert!(s.makespan_ns <= last);
            last = s.makespan_ns;
        }
    }

    #[test]
    fn schedule_json_roundtrips(seed in any::<u64>(), n in 1usize..20) {
        let mut r = rng(seed);
        let ir = random_dag(&mut r, n, 0.3);
        let profile = random_profile(&mut r, 3);
        let s = allocate(&ScheduleRequest { ir: &ir, profile: &profile, max_cores: 3 }).unwrap();
        let text = s.to_json();
        prop_assert_eq!(blxc_core::scheduler::Schedule::from_json(&text).unwrap().to_json(), text);
    }

    #[test]
    fn gantt_lanes_disjoint(seed in any::<u64>(), n in 1usize..40, cores in 1usize..5) {
        let mut r = rng(seed);
        let ir = random_dag(&mut r, n, 0.2);
        let profile = random_profile(&mut r, cores);
        let s = allocate(&ScheduleRequest { ir: &ir, profile: &profile, max_cores: cores }).unwrap();
        let chart = GanttChart::from_schedule(&s);
        prop_assert_eq!(chart.lanes.iter().map(|l| l.bars.len()).sum::<usize>(), n);
        for lane in &chart.lanes {
            let mut bars: Vec<_> = lane.bars.iter().map(|b| (b.start_ns, b.finish_ns)).collect();
            bars.sort();
            prop_assert!(bars.windows(2).all(|w| w[0].1 <= w[1].0));
        }
        prop_assert_eq!(emit_gantt(&s), emit_gantt(&s));
    }

    #[test]
    fn shards_cover_evenly(n in 1usize..1000, k in 1usize..64) {
        let sizes = shard_sizes(n, k);
        prop_assert_eq!(sizes.len(), k);
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn blx_roundtrips(seed in 0u64..10_000) {
        let reg = ToolboxRegistry::builtin();
        let mut ir = extract(&random_model(seed, &reg), &reg).unwrap();
        bind_costs(&mut ir, &CostTable::builtin(), &reg).unwrap();
        let text = emit_blx(&ir);
        prop_assert_eq!(emit_blx(&parse_blx(&text).unwrap()), text);
    }

    #[test]
    fn splits_preserve_traces(seed in 0u64..10_000, k in 1usize..9) {
        let reg = ToolboxRegistry::builtin();
        let ir = extract(&random_element_independent_model(seed, &reg), &reg).unwrap();
        let n = match &ir.var_types()[&ir.block("k").unwrap().inputs[0]] {
            DType::Vector(n) | DType::PointCloud(n) => *n,
            _ => unreachable!(),
        };
        let split = split_data_parallel(&ir, "k", k.min(n), &reg, &CostTable::builtin()).unwrap();
        split.check().unwrap();
        let inputs = random_trace(&mut rng(seed), &ir_inputs(&ir), 8);
        let a = interpret_ir(&ir, &reg, &inputs, 8).unwrap();
        let b = interpret_ir(&split, &reg, &inputs, 8).unwrap();
        prop_assert!(a.bit_eq(&b));
    }
}
