//! MDLX sources of the benchmark models, with-toolbox and expanded.

use crate::model::{Block, BlockKind};
use crate::toolbox::ToolboxRegistry;
use crate::xml::Writer;

use super::{CloudParams, TrajectoryModelParams};

/// Thin layer over [`Writer`] for hand-authored diagrams.
struct Sheet {
    w: Writer,
}

impl Sheet {
    fn model(name: &str, steps: usize) -> Sheet {
        let mut w = Writer::new();
        let steps = steps.to_string();
        w.start("model", &[("name", name), ("steps", &steps)]);
        Sheet { w }
    }

    fn block(&mut self, name: &str, kind: &str, params: &[(&str, &str)]) {
        if params.is_empty() {
            self.w.empty("block", &[("name", name), ("kind", kind)]);
            return;
        }
        self.w.start("block", &[("name", name), ("kind", kind)]);
        for (k, v) in params {
            self.w.empty("param", &[("k", k), ("v", v)]);
        }
        self.w.end("block");
    }

    fn toolbox(&mut self, name: &str, kind: &str, ports: (usize, usize), params: &[(&str, String)]) {
        let tag = format!("Toolbox({kind})");
        let (i, o) = (ports.0.to_string(), ports.1.to_string());
        self.w.start("block", &[("name", name), ("kind", &tag), ("inputs", &i), ("outputs", &o)]);
        for (k, v) in params {
            self.w.empty("param", &[("k", k), ("v", v)]);
        }
        self.w.end("block");
    }

    fn function(&mut self, name: &str, inputs: &[&str], outputs: &[&str], attrs: &str, body: &str) {
        let mut a = vec![("name", name), ("kind", "FunctionBlock")];
        if !attrs.is_empty() {
            a.push(("attrs", attrs));
        }
        self.w.start("block", &a);
        self.w.empty("param", &[("k", "inputs"), ("v", &inputs.join(","))]);
        self.w.empty("param", &[("k", "outputs"), ("v", &outputs.join(","))]);
        self.w.text_element("body", &[], body);
        self.w.end("block");
    }

    fn constant(&mut self, name: &str, value: f64) {
        self.block(name, "Const", &[("value", &num(value))]);
    }

    fn line(&mut self, src: &str, dsts: &[&str], dtype: &str) {
        self.w.empty("line", &[("src", src), ("dst", &dsts.join(";")), ("dtype", dtype)]);
    }

    fn open(&mut self, name: &str, masked: bool) {
        if masked {
            self.w.start("subsystem", &[("name", name), ("masked", "true")]);
        } else {
            self.w.start("subsystem", &[("name", name)]);
        }
    }

    fn close(&mut self) {
        self.w.end("subsystem");
    }

    fn finish(mut self) -> String {
        self.w.end("model");
        self.w.finish()
    }
}

/// Shortest round-trip decimal.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn cloud(cap: usize) -> String {
    format!("PointCloud({cap})")
}

fn transform_params(p: &CloudParams) -> Vec<(&'static str, String)> {
    let [roll, pitch, yaw] = p.rpy;
    let [tx, ty, tz] = p.translation;
    vec![
        ("roll", num(roll)),
        ("pitch", num(pitch)),
        ("yaw", num(yaw)),
        ("tx", num(tx)),
        ("ty", num(ty)),
        ("tz", num(tz)),
    ]
}

const ROTATION_BODY: &str = "\
cr = cos(roll)
sr = sin(roll)
cp = cos(pitch)
sp = sin(pitch)
cy = cos(yaw)
sy = sin(yaw)
r11 = cy * cp
r12 = cy * sp * sr - sy * cr
r13 = cy * sp * cr + sy * sr
r21 = sy * cp
r22 = sy * sp * sr + cy * cr
r23 = sy * sp * cr - cy * sr
r31 = -sp
r32 = cp * sr
r33 = cp * cr";

const TRANSFORM_BODY: &str = "\
x = col(p, 1)
y = col(p, 2)
z = col(p, 3)
q = cloud(r11 * x + r12 * y + r13 * z + tx, r21 * x + r22 * y + r23 * z + ty, r31 * x + r32 * y + r33 * z + tz)";

const R: [&str; 9] = ["r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33"];

/// Masked `mount` subsystem: sensor-to-vehicle transform built from
/// constants, trigonometry and a per-point FunctionBlock.
fn mount(s: &mut Sheet, p: &CloudParams) {
    let cap = cloud(p.cap);
    s.open("mount", true);
    s.block("points", "Inport", &[("dtype", &cap)]);
    let names = ["roll", "pitch", "yaw", "tx", "ty", "tz"];
    for (name, v) in names.iter().zip(p.rpy.iter().chain(&p.translation)) {
        s.constant(name, *v);
    }
    s.function("rotation", &names[..3], &R, "", ROTATION_BODY);
    let mut inputs = vec!["p"];
    inputs.extend(R);
    inputs.extend(&names[3..]);
    s.function("transform", &inputs, &["q"], "stateless,element_independent", TRANSFORM_BODY);
    s.block("q", "Outport", &[]);
    s.line("points:1", &["transform:1"], &cap);
    for (i, name) in names[..3].iter().enumerate() {
        s.line(&format!("{name}:1"), &[&format!("rotation:{}", i + 1)], "Scalar");
    }
    for i in 0..9 {
        s.line(&format!("rotation:{}", i + 1), &[&format!("transform:{}", i + 2)], "Scalar");
    }
    for (i, name) in names[3..].iter().enumerate() {
        s.line(&format!("{name}:1"), &[&format!("transform:{}", i + 11)], "Scalar");
    }
    s.line("transform:1", &["q:1"], &cap);
    s.close();
}

pub fn voxel_toolbox(p: &CloudParams, leaf: f64) -> String {
    let cap = cloud(p.cap);
    let mut s = Sheet::model("voxel_grid_downsample_filter", p.steps);
    s.block("points", "Inport", &[("dtype", &cap)]);
    s.toolbox("transform", "PointTransform", (1, 1), &transform_params(p));
    s.toolbox("voxel", "VoxelGridDownsample", (1, 1), &[("leaf", num(leaf))]);
    s.block("filtered", "Outport", &[]);
    s.line("points:1", &["transform:1"], &cap);
    s.line("transform:1", &["voxel:1"], &cap);
    s.line("voxel:1", &["filtered:1"], &cap);
    s.finish()
}

pub fn voxel_expanded(p: &CloudParams, leaf: f64) -> String {
    let cap = cloud(p.cap);
    let mut s = Sheet::model("voxel_grid_downsample_filter", p.steps);
    s.block("points", "Inport", &[("dtype", &cap)]);
    mount(&mut s, p);
    s.constant("leaf", leaf);
    s.function(
        "keys",
        &["q", "leaf"],
        &["k"],
        "stateless,element_independent",
        "k = cloud(floor(col(q, 1) / leaf), floor(col(q, 2) / leaf), floor(col(q, 3) / leaf))",
    );
    s.function("select", &["q", "k"], &["f"], "", "i = first_unique(k)\nf = gather(q, i)");
    s.block("filtered", "Outport", &[]);
    s.line("points:1", &["mount:1"], &cap);
    s.line("mount:1", &["keys:1", "select:1"], &cap);
    s.line("leaf:1", &["keys:2"], "Scalar");
    s.line("keys:1", &["select:2"], &cap);
    s.line("select:1", &["filtered:1"], &cap);
    s.finish()
}

pub fn random_toolbox(p: &CloudParams, max_n: usize, seed: u64) -> String {
    let cap = cloud(p.cap);
    let out = cloud(max_n.min(p.cap));
    let mut s = Sheet::model("random_downsample_filter", p.steps);
    s.block("points", "Inport", &[("dtype", &cap)]);
    s.toolbox("transform", "PointTransform", (1, 1), &transform_params(p));
    s.toolbox(
        "sampler",
        "RandomDownsample",
        (1, 1),
        &[("max_n", max_n.to_string()), ("seed", seed.to_string())],
    );
    s.block("sampled", "Outport", &[]);
    s.line("points:1", &["transform:1"], &cap);
    s.line("transform:1", &["sampler:1"], &cap);
    s.line("sampler:1", &["sampled:1"], &out);
    s.finish()
}

pub fn random_expanded(p: &CloudParams, max_n: usize, seed: u64) -> String {
    let cap = cloud(p.cap);
    let out = cloud(max_n.min(p.cap));
    let mut s = Sheet::model("random_downsample_filter", p.steps);
    s.block("points", "Inport", &[("dtype", &cap)]);
    mount(&mut s, p);
    s.function(
        "sampler",
        &["q"],
        &["s"],
        "",
        &format!("i = randsel(q, {max_n}, {seed})\ns = gather(q, i)"),
    );
    s.block("sampled", "Outport", &[]);
    s.line("points:1", &["mount:1"], &cap);
    s.line("mount:1", &["sampler:1"], &cap);
    s.line("sampler:1", &["sampled:1"], &out);
    s.finish()
}

fn lateral_params(p: &TrajectoryModelParams) -> Vec<(&'static str, String)> {
    vec![("k", num(p.k)), ("eps", num(p.eps)), ("limit", num(p.limit))]
}

fn longitudinal_params(p: &TrajectoryModelParams) -> Vec<(&'static str, String)> {
    vec![
        ("kp", num(p.kp)),
        ("ki", num(p.ki)),
        ("kd", num(p.kd)),
        ("dt", num(p.dt)),
        ("amax", num(p.amax)),
        ("bmax", num(p.bmax)),
    ]
}

fn trajectory_ports(s: &mut Sheet) {
    s.block("pose_now", "Inport", &[("dtype", "Vector(3)")]);
    s.block("pose_ref", "Inport", &[("dtype", "Vector(3)")]);
    s.block("v_now", "Inport", &[("dtype", "Scalar")]);
    s.block("v_ref", "Inport", &[("dtype", "Scalar")]);
}

fn trajectory_lines(s: &mut Sheet) {
    s.line("pose_now:1", &["lateral:1"], "Vector(3)");
    s.line("pose_ref:1", &["lateral:2"], "Vector(3)");
    s.line("v_now:1", &["lateral:3", "longitudinal:1"], "Scalar");
    s.line("v_ref:1", &["longitudinal:2"], "Scalar");
    s.line("lateral:1", &["steer:1"], "Scalar");
    s.line("longitudinal:1", &["accel:1"], "Scalar");
    s.line("longitudinal:2", &["brake:1"], "Scalar");
}

fn trajectory_outports(s: &mut Sheet) {
    for name in ["steer", "accel", "brake"] {
        s.block(name, "Outport", &[]);
    }
}

pub fn trajectory_toolbox(p: &TrajectoryModelParams) -> String {
    let mut s = Sheet::model("trajectory_follower", p.steps);
    trajectory_ports(&mut s);
    s.toolbox("lateral", "StanleyLateral", (3, 1), &lateral_params(p));
    s.toolbox("longitudinal", "PidLongitudinal", (2, 2), &longitudinal_params(p));
    trajectory_outports(&mut s);
    trajectory_lines(&mut s);
    s.finish()
}

/// The same controller drawn without toolbox blocks: each law is written
/// out as a subsystem of primitives.
pub fn trajectory_expanded(p: &TrajectoryModelParams, registry: &ToolboxRegistry) -> Result<String, String> {
    let mut s = Sheet::model("trajectory_follower", p.steps);
    trajectory_ports(&mut s);
    for (name, kind, params) in [
        ("lateral", "StanleyLateral", lateral_params(p)),
        ("longitudinal", "PidLongitudinal", longitudinal_params(p)),
    ] {
        let mut block = Block::new(name, BlockKind::Toolbox(kind.into()));
        for (k, v) in params {
            block = block.with_param(k, v);
        }
        let mut sub = registry.instantiate(kind, &block)?;
        sub.masked = false;
        crate::model::write_subsystem(&mut s.w, &sub, "");
    }
    trajectory_outports(&mut s);
    trajectory_lines(&mut s);
    Ok(s.finish())
}
