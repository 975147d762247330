//! interpret(model) against interpret(extract(model)), bit for bit.

use blxc_core::extractor::extract;
use blxc_core::simulator::{interpret_ir, interpret_model};
use blxc_core::synth::{model_inputs, random_model, random_trace, rng};
use blxc_core::toolbox::ToolboxRegistry;

fn check(seed: u64, steps: usize) {
    let reg = ToolboxRegistry::builtin();
    let model = random_model(seed, &reg);
    let inputs = random_trace(&mut rng(seed ^ 0xfeed), &model_inputs(&model), steps);
    let ir = extract(&model, &reg).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    ir.check().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    let a = interpret_model(&model, &reg, &inputs, steps).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    let b = interpret_ir(&ir, &reg, &inputs, steps).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    assert!(a.bit_eq(&b), "seed {seed}: traces differ");
}

#[test]
fn random_models_extract_equivalently() {
    for seed in 0..300 {
        check(seed, 30);
    }
}
