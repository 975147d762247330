//! Parallel C generation from a schedule, the sequential baseline, and the
//! Gantt chart of an allocation.
//!
//! A bundle is written as `model.c` (sequential), `tasks.c` (parallel),
//! `globals.h`, `manifest.json` and `schedule.svg`. `model.c` and `tasks.c`
//! are alternative programs over the same globals; each links with the
//! runtime files from [`RUNTIME_FILES`] and a harness that drives
//! `blx_start`, `blx_step` and `blx_stop` through the port tables.

mod c;
mod gantt;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::extractor::FlatIR;
use crate::model::DType;
use crate::scheduler::Schedule;
use crate::simulator::exec::{check_deadlock_free, core_sequences};
use crate::simulator::port_name;
use crate::toolbox::ToolboxRegistry;

use c::{c_comment, c_string, cloud_type, Blocks, Obj, W};
pub use gantt::{emit_gantt, emit_gantt_with, Arrow, Bar, GanttChart, GanttOptions, Lane};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Runtime support shipped next to generated code.
pub const RUNTIME_FILES: [(&str, &str); 2] = [
    ("blx_rt.h", include_str!("../../runtime/blx_rt.h")),
    ("blx_rt.c", include_str!("../../runtime/blx_rt.c")),
];

pub const ENTRY: &str = "blx_step";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodegenError {
    #[error("no code template for {0}")]
    MissingTemplate(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid IR: {0}")]
    InvalidIr(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskEntry {
    pub function: String,
    pub core: usize,
    pub blocks: Vec<String>,
}

/// Which generated function runs each block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub model: String,
    pub entry: String,
    pub tasks: Vec<TaskEntry>,
    pub blocks: BTreeMap<String, String>,
    pub globals: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequential: Option<Vec<String>>,
}

impl Manifest {
    fn new(blocks: &Blocks<'_>, tasks: Vec<TaskEntry>) -> Manifest {
        let ir = blocks.ir;
        let mut map = BTreeMap::new();
        for t in &tasks {
            for b in &t.blocks {
                map.insert(b.clone(), t.function.clone());
            }
        }
        Manifest {
            model: ir.name.clone(),
            entry: ENTRY.into(),
            tasks,
            blocks: map,
            globals: blocks.vars.iter().map(|(v, o)| (v.clone(), o.id.clone())).collect(),
            sequential: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceBundle {
    /// Relative path to file text.
    pub files: BTreeMap<String, String>,
    pub entry: String,
    pub task_functions: Vec<String>,
    pub manifest: Manifest,
}

impl SourceBundle {
    /// Writes every file under `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, text) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, text)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Copies the runtime files into `dir`.
pub fn install_runtime(dir: &Path) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    RUNTIME_FILES
        .iter()
        .map(|(name, text)| {
            let path = dir.join(name);
            std::fs::write(&path, text)?;
            Ok(path)
        })
        .collect()
}

fn banner(w: &mut W, lines: &[String]) {
    w.line("/*");
    for l in lines {
        w.line(format!(" * {l}").trim_end());
    }
    w.line(" */");
}

fn port_entry(name: &str, o: &Obj) -> String {
    let name = c_string(name);
    match o.dtype {
        DType::Scalar => format!("{{{name}, BLX_SCALAR, 1, 1, &{}, NULL}}", o.id),
        DType::Vector(n) => format!("{{{name}, BLX_VECTOR, {n}, 1, {}, NULL}}", o.id),
        DType::Matrix(r, c) => format!("{{{name}, BLX_MATRIX, {r}, {c}, {}, NULL}}", o.id),
        DType::PointCloud(cap) => format!("{{{name}, BLX_CLOUD, {cap}, 3, &{id}.p[0][0], &{id}.n}}", id = o.id),
        DType::Bus(_) => unreachable!("rejected when compiling blocks"),
    }
}

fn port_table(w: &mut W, table: &str, count: &str, ports: &[(String, &Obj)]) {
    w.open(format!("const blx_port {table}[] = {{"));
    if ports.is_empty() {
        w.line("{NULL, BLX_SCALAR, 0, 0, NULL, NULL},");
    }
    for (name, o) in ports {
        w.line(format!("{},", port_entry(name, o)));
    }
    w.close("};");
    w.line(format!("const size_t {count} = {};", ports.len()));
}

fn globals_h(blocks: &Blocks<'_>) -> String {
    let ir = blocks.ir;
    let mut w = W::default();
    banner(
        &mut w,
        &[
            format!("Signals of model `{}`, one global per variable.", c_comment(&ir.name)),
            format!("Generated by blxc {VERSION}; do not edit."),
            "The translation unit that defines BLX_DEFINE_GLOBALS owns the storage.".into(),
        ],
    );
    w.line("#ifndef BLX_GLOBALS_H");
    w.line("#define BLX_GLOBALS_H");
    w.line("");
    w.line("#include \"blx_rt.h\"");
    w.line("");
    w.line("#ifdef BLX_DEFINE_GLOBALS");
    w.line("#define BLX_GLOBAL");
    w.line("#else");
    w.line("#define BLX_GLOBAL extern");
    w.line("#endif");
    for cap in blocks.cloud_caps() {
        w.line("");
        w.open("typedef struct {");
        w.line("size_t n;");
        w.line(format!("double p[{cap}][3];"));
        w.close(format!("}} {};", cloud_type(cap)));
    }
    w.line("");
    for v in &ir.vars {
        let o = &blocks.vars[&v.name];
        w.line(format!("BLX_GLOBAL {}; /* {}: {} */", o.decl(), c_comment(&v.name), v.dtype));
    }
    let inputs: Vec<(String, &Obj)> = ir
        .inports()
        .filter_map(|b| b.outputs.first().map(|v| (port_name(&b.uname), &blocks.vars[v])))
        .collect();
    let outputs: Vec<(String, &Obj)> = ir
        .outports()
        .filter_map(|b| b.inputs.first().map(|v| (port_name(&b.uname), &blocks.vars[v])))
        .collect();
    let mut inputs = inputs;
    inputs.sort_by(|a, b| a.0.cmp(&b.0));
    let mut outputs = outputs;
    outputs.sort_by(|a, b| a.0.cmp(&b.0));
    w.line("");
    w.line("#ifdef BLX_DEFINE_GLOBALS");
    port_table(&mut w, "blx_inputs", "blx_input_count", &inputs);
    port_table(&mut w, "blx_outputs", "blx_output_count", &outputs);
    w.line("#endif");
    w.line("");
    w.line("#endif");
    w.buf
}

fn preamble(w: &mut W, blocks: &Blocks<'_>, states: &[usize]) {
    w.line("#if defined(__clang__)");
    w.line("#pragma STDC FP_CONTRACT OFF");
    w.line("#endif");
    w.line("#define BLX_DEFINE_GLOBALS");
    w.line("#include \"globals.h\"");
    if !states.is_empty() {
        w.line("");
        for &b in states {
            w.line(blocks.state_definition(b));
        }
    }
}

fn check_ir(ir: &FlatIR) -> Result<Vec<usize>, CodegenError> {
    ir.check().map_err(CodegenError::InvalidIr)?;
    ir.topo_order()
        .ok_or_else(|| CodegenError::InvalidIr("the IR has an algebraic loop".into()))
}

/// One function running every block in topological order.
pub fn emit_sequential_c(ir: &FlatIR, registry: &ToolboxRegistry) -> Result<SourceBundle, CodegenError> {
    let order = check_ir(ir)?;
    let blocks = Blocks::new(ir, registry)?;
    let states: Vec<usize> = order.iter().copied().filter(|&b| blocks.is_delay(b)).collect();
    let mut w = W::default();
    banner(
        &mut w,
        &[
            format!("Sequential step of model `{}`.", c_comment(&ir.name)),
            format!("Generated by blxc {VERSION}; do not edit."),
            "Blocks run in topological order without synchronization; delays latch".into(),
            "after the last block. Link either this file or tasks.c, not both.".into(),
        ],
    );
    preamble(&mut w, &blocks, &states);
    w.line("");
    w.line("int blx_start(void)");
    w.open("{");
    w.line("return 0;");
    w.close("}");
    w.line("");
    w.line("void blx_stop(void)");
    w.line("{");
    w.line("}");
    w.line("");
    w.line(format!("void {ENTRY}(void)"));
    w.open("{");
    for &b in &order {
        blocks.body(&mut w, b)?;
    }
    for &b in &states {
        blocks.latch(&mut w, b)?;
    }
    w.close("}");
    let task = TaskEntry {
        function: ENTRY.into(),
        core: 0,
        blocks: order.iter().map(|&b| ir.blocks[b].uname.clone()).collect(),
    };
    let manifest = Manifest::new(&blocks, vec![task]);
    let mut files = BTreeMap::new();
    files.insert("model.c".to_string(), w.buf);
    files.insert("globals.h".to_string(), globals_h(&blocks));
    files.insert("manifest.json".to_string(), manifest.to_json());
    Ok(SourceBundle {
        files,
        entry: ENTRY.into(),
        task_functions: vec![ENTRY.into()],
        manifest,
    })
}

/// One task function per used core running its blocks in scheduled start
/// order. Values crossing cores are published through ready flags.
pub fn emit_parallel_c(
    ir: &FlatIR,
    schedule: &Schedule,
    registry: &ToolboxRegistry,
) -> Result<SourceBundle, CodegenError> {
    check_ir(ir)?;
    let to_sched = |e: crate::simulator::SimError| CodegenError::InvalidSchedule(e.to_string());
    let seqs = core_sequences(ir, schedule).map_err(to_sched)?;
    check_deadlock_free(ir, &seqs).map_err(to_sched)?;
    let mut blocks = Blocks::new(ir, registry)?;

    let mut core_of = vec![0; ir.blocks.len()];
    for (&core, seq) in &seqs {
        for (b, _) in seq {
            core_of[*b] = core;
        }
    }
    let index: BTreeMap<&str, usize> = ir.blocks.iter().enumerate().map(|(i, b)| (b.uname.as_str(), i)).collect();
    let producer_of = |var: &str| ir.var(var).and_then(|v| index.get(v.producer.0.as_str()).copied());
    // Blocks that read values while computing; ports and delays do not.
    let computing: Vec<bool> = (0..ir.blocks.len())
        .map(|b| {
            !blocks.is_delay(b)
                && !matches!(
                    blocks.kernels[b],
                    crate::simulator::Kernel::Input | crate::simulator::Kernel::Output
                )
        })
        .collect();
    let computes = |b: usize| computing[b];
    let mut flagged: BTreeMap<String, String> = BTreeMap::new();
    for (b, block) in ir.blocks.iter().enumerate() {
        if !computes(b) {
            continue;
        }
        for v in &block.inputs {
            let external = ir.var(v).is_some_and(|g| g.external);
            if let Some(p) = producer_of(v) {
                if !external && core_of[p] != core_of[b] && !flagged.contains_key(v) {
                    let id = blocks.idents.fresh("f_", v);
                    flagged.insert(v.clone(), id);
                }
            }
        }
    }

    let states: Vec<usize> = seqs.values().flatten().map(|(b, _)| *b).filter(|&b| blocks.is_delay(b)).collect();
    let lanes: Vec<usize> = seqs.keys().copied().collect();
    let mut w = W::default();
    banner(
        &mut w,
        &[
            format!(
                "Parallel step of model `{}` on {} core{}.",
                c_comment(&ir.name),
                lanes.len(),
                if lanes.len() == 1 { "" } else { "s" }
            ),
            format!("Generated by blxc {VERSION}; do not edit."),
            String::new(),
            "Each core runs its blocks in scheduled start order. A value read on".into(),
            "another core is published through a ready flag holding the step mark;".into(),
            "the reader waits for the current mark. Three barriers frame a step:".into(),
            "start, end of computation, end of delay latching.".into(),
            "Link either this file or model.c, not both.".into(),
        ],
    );
    preamble(&mut w, &blocks, &states);
    w.line("");
    w.line(format!("#define BLX_CORES {}", lanes.len()));
    if !flagged.is_empty() {
        w.line("");
        for (v, id) in &flagged {
            w.line(format!("static blx_flag {id}; /* {} */", c_comment(v)));
        }
    }
    w.line("");
    w.line("static blx_barrier *barrier;");
    w.line("static blx_thread workers[BLX_CORES];");
    w.line("static uint64_t step_mark;");
    w.line("static int quitting;");

    let mut tasks = Vec::new();
    for (&core, seq) in &seqs {
        let name = format!("blx_task_core{core}");
        w.line("");
        w.line(format!("static void {name}(uint64_t mark)"));
        w.open("{");
        w.line("(void)mark;");
        for (b, _) in seq {
            let b = *b;
            if computes(b) {
                let mut waited = Vec::new();
                for v in &ir.blocks[b].inputs {
                    if let Some(id) = flagged.get(v) {
                        let p = producer_of(v).expect("flagged vars have producers");
                        if core_of[p] != core && !waited.contains(id) {
                            w.line(format!("blx_flag_wait(&{id}, mark);"));
                            waited.push(id.clone());
                        }
                    }
                }
            }
            blocks.body(&mut w, b)?;
            for v in &ir.blocks[b].outputs {
                if let Some(id) = flagged.get(v) {
                    w.line(format!("blx_flag_set(&{id}, mark);"));
                }
            }
        }
        w.close("}");
        w.line("");
        w.line(format!("static void blx_latch_core{core}(void)"));
        w.open("{");
        for (b, _) in seq {
            if blocks.is_delay(*b) {
                blocks.latch(&mut w, *b)?;
            }
        }
        w.close("}");
        tasks.push(TaskEntry {
            function: name,
            core,
            blocks: seq.iter().map(|(b, _)| ir.blocks[*b].uname.clone()).collect(),
        });
    }

    let list = |prefix: &str| lanes.iter().map(|c| format!("{prefix}{c}")).collect::<Vec<_>>().join(", ");
    w.line("");
    w.line(format!(
        "static void (*const tasks[BLX_CORES])(uint64_t) = {{{}}};",
        list("blx_task_core")
    ));
    w.line(format!(
        "static void (*const latches[BLX_CORES])(void) = {{{}}};",
        list("blx_latch_core")
    ));
    let rest = r#"
static void worker(void *arg)
{
    size_t lane = (size_t)(uintptr_t)arg;
    for (;;) {
        blx_barrier_wait(barrier);
        if (quitting) {
            return;
        }
        tasks[lane](step_mark);
        blx_barrier_wait(barrier);
        latches[lane]();
        blx_barrier_wait(barrier);
    }
}

int blx_start(void)
{
    barrier = blx_barrier_new(BLX_CORES);
    if (barrier == NULL) {
        return -1;
    }
    for (size_t lane = 1; lane < BLX_CORES; lane++) {
        if (blx_thread_spawn(&workers[lane], worker, (void *)(uintptr_t)lane) != 0) {
            return -1;
        }
    }
    return 0;
}

void blx_step(void)
{
    step_mark++;
    blx_barrier_wait(barrier);
    tasks[0](step_mark);
    blx_barrier_wait(barrier);
    latches[0]();
    blx_barrier_wait(barrier);
}

void blx_stop(void)
{
    quitting = 1;
    blx_barrier_wait(barrier);
    for (size_t lane = 1; lane < BLX_CORES; lane++) {
        blx_thread_join(workers[lane]);
    }
    blx_barrier_free(barrier);
    barrier = NULL;
}
"#;
    w.buf.push_str(rest);

    let task_functions: Vec<String> = tasks.iter().map(|t| t.function.clone()).collect();
    let manifest = Manifest::new(&blocks, tasks);
    let mut files = BTreeMap::new();
    files.insert("tasks.c".to_string(), w.buf);
    files.insert("globals.h".to_string(), globals_h(&blocks));
    files.insert("manifest.json".to_string(), manifest.to_json());
    Ok(SourceBundle {
        files,
        entry: ENTRY.into(),
        task_functions,
        manifest,
    })
}

/// The full output directory: both programs, shared globals, the parallel
/// manifest (with the sequential order) and the Gantt chart.
pub fn emit_bundle(ir: &FlatIR, schedule: &Schedule, registry: &ToolboxRegistry) -> Result<SourceBundle, CodegenError> {
    let seq = emit_sequential_c(ir, registry)?;
    let mut par = emit_parallel_c(ir, schedule, registry)?;
    par.manifest.sequential = Some(seq.manifest.tasks[0].blocks.clone());
    par.files.insert("manifest.json".into(), par.manifest.to_json());
    par.files.insert("model.c".into(), seq.files["model.c"].clone());
    par.files.insert("schedule.svg".into(), emit_gantt(schedule));
    Ok(par)
}

/// Human-readable summary of a bundle's task functions.
pub fn describe(bundle: &SourceBundle) -> String {
    let mut s = String::new();
    for t in &bundle.manifest.tasks {
        let _ = writeln!(s, "{} (core {}): {} blocks", t.function, t.core, t.blocks.len());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::extract;
    use crate::model::parse_model;

    fn ir_of(xml: &str) -> FlatIR {
        extract(&parse_model(xml).unwrap(), &ToolboxRegistry::builtin()).unwrap()
    }

    const MINIMAL: &str = r#"<model name="m">
  <block name="u" kind="Inport"><param k="dtype" v="Scalar"/></block>
  <block name="g" kind="Gain"><param k="gain" v="2"/></block>
  <block name="y" kind="Outport"/>
  <line src="u:1" dst="g:1" dtype="Scalar"/>
  <line src="g:1" dst="y:1" dtype="Scalar"/>
</model>"#;

    #[test]
    fn minimal_sequential_is_three_statements_in_order() {
        let ir = ir_of(MINIMAL);
        let b = emit_sequential_c(&ir, &ToolboxRegistry::builtin()).unwrap();
        let model = &b.files["model.c"];
        let u = model.find("/* u (Inport) */").unwrap();
        let g = model.find("/* g (Gain) */").unwrap();
        let y = model.find("/* y (Outport) */").unwrap();
        assert!(u < g && g < y);
        assert!(model.contains("g_g_1 = 2.0 * g_u_1;"));
        assert_eq!(b.task_functions, vec!["blx_step"]);
        assert_eq!(b.manifest.blocks.len(), 3);
    }

    #[test]
    fn delay_state_is_static_and_initialized() {
        let ir = ir_of(
            r#"<model name="m">
  <block name="u" kind="Inport"><param k="dtype" v="Vector(2)"/></block>
  <block name="d" kind="UnitDelay"><param k="init" v="0.5"/></block>
  <block name="y" kind="Outport"/>
  <line src="u:1" dst="d:1" dtype="Vector(2)"/>
  <line src="d:1" dst="y:1" dtype="Vector(2)"/>
</model>"#,
        );
        let b = emit_sequential_c(&ir, &ToolboxRegistry::builtin()).unwrap();
        let model = &b.files["model.c"];
        assert!(model.contains("static double s_d[2] = {0.5, 0.5};"), "{model}");
        assert!(model.find("/* latch d */").unwrap() > model.find("/* y (Outport) */").unwrap());
    }

    #[test]
    fn sequential_is_deterministic() {
        let ir = ir_of(MINIMAL);
        let a = emit_sequential_c(&ir, &ToolboxRegistry::builtin()).unwrap();
        let b = emit_sequential_c(&ir, &ToolboxRegistry::builtin()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_toolbox_is_missing_template() {
        let mut ir = ir_of(MINIMAL);
        let g = ir.blocks.iter_mut().find(|b| b.uname == "g").unwrap();
        g.kind = crate::model::BlockKind::Toolbox("Nope".into());
        assert!(matches!(
            emit_sequential_c(&ir, &ToolboxRegistry::builtin()),
            Err(CodegenError::MissingTemplate(_))
        ));
    }

    #[test]
    fn globals_header_lists_ports() {
        let ir = ir_of(MINIMAL);
        let b = emit_sequential_c(&ir, &ToolboxRegistry::builtin()).unwrap();
        let h = &b.files["globals.h"];
        assert!(h.contains("BLX_GLOBAL double g_g_1;"));
        assert!(h.contains("{\"u\", BLX_SCALAR, 1, 1, &g_u_1, NULL},"));
        assert!(h.contains("const size_t blx_output_count = 1;"));
    }
}
