//! The annotated example in docs/mdlx.md parses, validates and extracts.

use blxc_core::extractor::extract;
use blxc_core::model::{parse_model, serialize_model, validate_with};
use blxc_core::simulator::{interpret_ir, interpret_model};
use blxc_core::synth::{model_inputs, random_trace, rng};
use blxc_core::toolbox::ToolboxRegistry;

fn example() -> String {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/mdlx.md")).unwrap();
    let start = doc.find("```xml\n").unwrap() + 7;
    let len = doc[start..].find("```").unwrap();
    doc[start..start + len].to_string()
}

#[test]
fn doc_example_is_a_valid_model() {
    let reg = ToolboxRegistry::builtin();
    let model = parse_model(&example()).unwrap();
    assert_eq!(model.name, "scaled_error");
    assert_eq!(model.step_count_hint, 50);
    let report = validate_with(&model, &reg);
    assert!(report.is_ok(), "{report:?}");
    let again = parse_model(&serialize_model(&model)).unwrap();
    assert_eq!(serialize_model(&again), serialize_model(&model));

    let ir = extract(&model, &reg).unwrap();
    let inputs = random_trace(&mut rng(5), &model_inputs(&model), 50);
    let a = interpret_model(&model, &reg, &inputs, 50).unwrap();
    let b = interpret_ir(&ir, &reg, &inputs, 50).unwrap();
    assert!(a.bit_eq(&b));
}
