//! Emitted C, compiled with the system compiler, against the interpreter.
//! Skipped when no C compiler is installed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use blxc_core::benchmarks::{build_benchmarks, RANDOM};
use blxc_core::codegen::{emit_parallel_c, emit_sequential_c, install_runtime};
use blxc_core::extractor::{extract, FlatIR};
use blxc_core::hwprofile::{bind_costs, parse_profile, CostTable, HardwareProfile};
use blxc_core::model::DType;
use blxc_core::scheduler::{allocate, split_data_parallel, ScheduleRequest};
use blxc_core::simulator::{interpret_ir, port_name, Trace, Value};
use blxc_core::synth::{ir_inputs, random_element_independent_model, random_model, random_trace, rng};
use blxc_core::toolbox::ToolboxRegistry;

const HARNESS: &str = r#"#include <inttypes.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "blx_rt.h"

static double from_bits(uint64_t u)
{
    double d;
    memcpy(&d, &u, sizeof d);
    return d;
}

static uint64_t to_bits(double d)
{
    uint64_t u;
    memcpy(&u, &d, sizeof u);
    return u;
}

static const blx_port *input(const char *name)
{
    for (size_t i = 0; i < blx_input_count; i++) {
        if (strcmp(blx_inputs[i].name, name) == 0) {
            return &blx_inputs[i];
        }
    }
    fprintf(stderr, "no input port %s\n", name);
    exit(2);
}

int main(void)
{
    char op[8];
    char name[256];
    if (blx_start() != 0) {
        return 2;
    }
    while (scanf("%7s", op) == 1) {
        if (op[0] == 'I') {
            size_t count;
            if (scanf("%255s %zu", name, &count) != 2) {
                return 2;
            }
            const blx_port *p = input(name);
            if (p->count != NULL) {
                *p->count = count;
            }
            size_t total = p->shape == BLX_CLOUD ? 3 * count : count;
            for (size_t i = 0; i < total; i++) {
                uint64_t u;
                if (scanf("%" SCNx64, &u) != 1) {
                    return 2;
                }
                p->data[i] = from_bits(u);
            }
        } else {
            blx_step();
            for (size_t o = 0; o < blx_output_count; o++) {
                const blx_port *p = &blx_outputs[o];
                size_t n = p->count != NULL ? *p->count : p->rows * p->cols;
                size_t total = p->shape == BLX_CLOUD ? 3 * n : n;
                printf("%s %zu", p->name, n);
                for (size_t i = 0; i < total; i++) {
                    printf(" %016" PRIx64, to_bits(p->data[i]));
                }
                printf("\n");
            }
            printf("end\n");
        }
    }
    blx_stop();
    return 0;
}
"#;

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let ok = Command::new(&cc)
        .arg("--version")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .is_ok_and(|s| s.success());
    if ok {
        Some(cc)
    } else {
        eprintln!("no C compiler; skipping");
        None
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn uniform4() -> HardwareProfile {
    parse_profile(&std::fs::read_to_string(workspace().join("profiles/uniform4.xml")).unwrap()).unwrap()
}

fn lower(model: &blxc_core::model::Model, reg: &ToolboxRegistry) -> FlatIR {
    let mut ir = extract(model, reg).unwrap();
    bind_costs(&mut ir, &CostTable::builtin(), reg).unwrap();
    ir
}

/// Compiles `files` (one of model.c / tasks.c plus globals.h) with the
/// runtime and the harness; returns the executable.
fn build(cc: &str, dir: &Path, files: &BTreeMap<String, String>, program: &str) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    for (name, text) in files {
        std::fs::write(dir.join(name), text).unwrap();
    }
    install_runtime(dir).unwrap();
    std::fs::write(dir.join("harness.c"), HARNESS).unwrap();
    let exe = dir.join(format!("{program}.bin"));
    let out = Command::new(cc)
        .current_dir(dir)
        .args(["-std=c99", "-O1", "-Wall", "-Wextra", "-Werror", "-ffp-contract=off", "-pthread", "-o"])
        .arg(&exe)
        .args([program, "blx_rt.c", "harness.c", "-lm"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{} failed to compile:\n{}",
        dir.join(program).display(),
        String::from_utf8_lossy(&out.stderr)
    );
    exe
}

fn script(inputs: &Trace, steps: usize) -> String {
    let mut s = String::new();
    for step in &inputs.steps[..steps] {
        for (port, v) in step {
            let flat: Vec<f64> = v.flat();
            let count = match v {
                Value::Cloud(p) => p.len(),
                _ => flat.len(),
            };
            let _ = write!(s, "I {port} {count}");
            for x in flat {
                let _ = write!(s, " {:016x}", x.to_bits());
            }
            s.push('\n');
        }
        s.push_str("S\n");
    }
    s
}

fn run(exe: &Path, input: &str, ir: &FlatIR) -> Trace {
    let mut child = Command::new(exe)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let text = input.to_string();
    let writer = std::thread::spawn(move || stdin.write_all(text.as_bytes()));
    let out = child.wait_with_output().unwrap();
    writer.join().unwrap().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let types: BTreeMap<String, DType> = {
        let vars = ir.var_types();
        ir.outports()
            .map(|b| (port_name(&b.uname), vars[&b.inputs[0]].clone()))
            .collect()
    };
    let mut trace = Trace::default();
    let mut step = BTreeMap::new();
    for line in String::from_utf8(out.stdout).unwrap().lines() {
        let mut words = line.split_whitespace();
        let name = words.next().unwrap();
        if name == "end" {
            trace.steps.push(std::mem::take(&mut step));
            continue;
        }
        let n: usize = words.next().unwrap().parse().unwrap();
        let xs: Vec<f64> = words.map(|w| f64::from_bits(u64::from_str_radix(w, 16).unwrap())).collect();
        let v = match &types[name] {
            DType::Scalar => Value::Scalar(xs[0]),
            DType::Vector(_) => Value::Vector(xs),
            DType::Matrix(r, c) => Value::Matrix {
                rows: *r,
                cols: *c,
                data: xs,
            },
            DType::PointCloud(_) => Value::Cloud((0..n).map(|i| [xs[3 * i], xs[3 * i + 1], xs[3 * i + 2]]).collect()),
            DType::Bus(_) => unreachable!(),
        };
        step.insert(name.to_string(), v);
    }
    trace
}

/// Runs the sequential and the parallel program on `inputs` and compares
/// both with `expected`.
fn check(cc: &str, dir: &Path, ir: &FlatIR, inputs: &Trace, expected: &Trace, max_cores: usize) {
    let reg = ToolboxRegistry::builtin();
    let steps = expected.len();
    let input = script(inputs, steps);
    let seq = emit_sequential_c(ir, &reg).unwrap();
    let exe = build(cc, &dir.join("seq"), &seq.files, "model.c");
    let got = run(&exe, &input, ir);
    assert!(got.bit_eq(expected), "{}: sequential C differs", ir.name);

    let profile = uniform4();
    let schedule = allocate(&ScheduleRequest {
        ir,
        profile: &profile,
        max_cores,
    })
    .unwrap();
    let par = emit_parallel_c(ir, &schedule, &reg).unwrap();
    let exe = build(cc, &dir.join("par"), &par.files, "tasks.c");
    let got = run(&exe, &input, ir);
    assert!(got.bit_eq(expected), "{}: parallel C differs", ir.name);
}

#[test]
fn random_models_compile_and_match() {
    let Some(cc) = compiler() else { return };
    let tmp = tempfile::tempdir().unwrap();
    let reg = ToolboxRegistry::builtin();
    for seed in 0..12u64 {
        let model = random_model(seed, &reg);
        let ir = lower(&model, &reg);
        let inputs = random_trace(&mut rng(seed + 100), &ir_inputs(&ir), 20);
        let expected = interpret_ir(&ir, &reg, &inputs, 20).unwrap();
        check(&cc, &tmp.path().join(format!("m{seed}")), &ir, &inputs, &expected, 1 + seed as usize % 4);
    }
}

#[test]
fn split_blocks_compile_and_match() {
    let Some(cc) = compiler() else { return };
    let tmp = tempfile::tempdir().unwrap();
    let reg = ToolboxRegistry::builtin();
    let table = CostTable::builtin();
    for seed in 0..8u64 {
        let model = random_element_independent_model(seed, &reg);
        let ir = lower(&model, &reg);
        let inputs = random_trace(&mut rng(seed + 200), &ir_inputs(&ir), 10);
        let expected = interpret_ir(&ir, &reg, &inputs, 10).unwrap();
        let n = match &ir.var_types()[&ir.block("k").unwrap().inputs[0]] {
            DType::Vector(n) | DType::PointCloud(n) => *n,
            _ => unreachable!(),
        };
        let split = split_data_parallel(&ir, "k", n.min(3), &reg, &table).unwrap();
        check(&cc, &tmp.path().join(format!("s{seed}")), &split, &inputs, &expected, 4);
    }
}

#[test]
fn benchmarks_compile_and_match() {
    let Some(cc) = compiler() else { return };
    let tmp = tempfile::tempdir().unwrap();
    let reg = ToolboxRegistry::builtin();
    for case in build_benchmarks().unwrap() {
        let mut ir = lower(&case.toolbox_model().unwrap(), &reg);
        if case.name == RANDOM {
            ir = split_data_parallel(&ir, "transform", 4, &reg, &CostTable::builtin()).unwrap();
        }
        let inputs = case.input().unwrap();
        let mut expected = case.expected().unwrap();
        expected.steps.truncate(30);
        check(&cc, &tmp.path().join(&case.name), &ir, &inputs, &expected, 4);
    }
}
