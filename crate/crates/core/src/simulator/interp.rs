use std::collections::{BTreeMap, HashMap, HashSet};

use crate::extractor::FlatIR;
use crate::model::infer::{parse_selector, Selector};
use crate::model::kind::split_list;
use crate::model::{validate_with, BlockKind, DType, Model, Subsystem};
use crate::toolbox::{ToolboxEntry, ToolboxRegistry};

use super::kernel::Kernel;
use super::value::{Trace, Value};
use super::SimError;

/// What to interpret.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Model(&'a Model),
    Ir(&'a FlatIR),
}

pub fn interpret(
    target: Target<'_>,
    registry: &ToolboxRegistry,
    inputs: &Trace,
    steps: usize,
) -> Result<Trace, SimError> {
    match target {
        Target::Model(m) => interpret_model(m, registry, inputs, steps),
        Target::Ir(ir) => interpret_ir(ir, registry, inputs, steps),
    }
}

/// Trace port name of a root-level uname.
pub fn port_name(uname: &str) -> String {
    uname.replace("__", "_")
}

pub(crate) fn step_input<'t>(inputs: &'t Trace, step: usize, port: &str, dtype: &DType) -> Result<&'t Value, SimError> {
    let v = inputs
        .steps
        .get(step)
        .and_then(|s| s.get(port))
        .ok_or_else(|| SimError::MissingInput {
            step,
            port: port.to_string(),
        })?;
    if !v.conforms(dtype) {
        return Err(SimError::ShapeMismatch(format!("input `{port}` at step {step} is not {dtype}")));
    }
    Ok(v)
}

fn check_out(block: &str, v: &Value, dtype: &DType) -> Result<(), SimError> {
    if v.conforms(dtype) {
        Ok(())
    } else {
        Err(SimError::ShapeMismatch(format!("`{block}` produced a value that is not {dtype}")))
    }
}

// ---------------------------------------------------------------------------
// flat IR

/// Flat IR compiled to indexed variables; fires one block at a time.
pub struct Machine<'a> {
    pub(crate) ir: &'a FlatIR,
    pub(crate) kernels: Vec<Kernel>,
    pub(crate) ins: Vec<Vec<usize>>,
    pub(crate) outs: Vec<Vec<usize>>,
    pub(crate) types: Vec<DType>,
    pub(crate) vals: Vec<Value>,
    pub(crate) states: Vec<Option<Value>>,
    pub(crate) order: Vec<usize>,
}

impl<'a> Machine<'a> {
    pub fn new(ir: &'a FlatIR, registry: &ToolboxRegistry) -> Result<Machine<'a>, SimError> {
        let index: BTreeMap<&str, usize> = ir.vars.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
        let lookup = |b: &str, v: &str| {
            index
                .get(v)
                .copied()
                .ok_or_else(|| SimError::Kernel {
                    block: b.to_string(),
                    msg: format!("undeclared var `{v}`"),
                })
        };
        let types: Vec<DType> = ir.vars.iter().map(|v| v.dtype.clone()).collect();
        let mut kernels = Vec::with_capacity(ir.blocks.len());
        let mut ins = Vec::with_capacity(ir.blocks.len());
        let mut outs = Vec::with_capacity(ir.blocks.len());
        for b in &ir.blocks {
            let i: Vec<usize> = b.inputs.iter().map(|v| lookup(&b.uname, v)).collect::<Result<_, _>>()?;
            let o: Vec<usize> = b.outputs.iter().map(|v| lookup(&b.uname, v)).collect::<Result<_, _>>()?;
            let in_types: Vec<DType> = i.iter().map(|&v| types[v].clone()).collect();
            kernels.push(Kernel::compile(&b.uname, &b.kind, &b.params, &in_types, registry)?);
            ins.push(i);
            outs.push(o);
        }
        let order = ir
            .topo_order()
            .ok_or_else(|| SimError::AlgebraicLoop("the IR edge relation has a cycle".into()))?;
        Ok(Machine {
            ir,
            kernels,
            ins,
            outs,
            vals: types.iter().map(|t| Value::filled(t, 0.0)).collect(),
            types,
            states: vec![None; ir.blocks.len()],
            order,
        })
    }

    pub fn fire(&mut self, b: usize, inputs: &Trace, step: usize) -> Result<(), SimError> {
        let block = &self.ir.blocks[b];
        let outs = match &self.kernels[b] {
            Kernel::Input => {
                let v = self.outs[b][0];
                vec![step_input(inputs, step, &port_name(&block.uname), &self.types[v])?.clone()]
            }
            Kernel::Output => return Ok(()),
            k => {
                let args: Vec<&Value> = self.ins[b].iter().map(|&v| &self.vals[v]).collect();
                k.fire(&args, self.states[b].as_ref()).map_err(|msg| SimError::Kernel {
                    block: block.uname.clone(),
                    msg,
                })?
            }
        };
        if outs.len() != self.outs[b].len() {
            return Err(SimError::Kernel {
                block: block.uname.clone(),
                msg: format!("{} outputs for {} ports", outs.len(), self.outs[b].len()),
            });
        }
        for (&v, value) in self.outs[b].iter().zip(outs) {
            check_out(&block.uname, &value, &self.types[v])?;
            self.vals[v] = value;
        }
        Ok(())
    }

    /// Records the root outputs, then moves every delay's input into its
    /// state.
    pub fn end_step(&mut self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        for (b, block) in self.ir.blocks.iter().enumerate() {
            match self.kernels[b] {
                Kernel::Output => {
                    out.insert(port_name(&block.uname), self.vals[self.ins[b][0]].clone());
                }
                Kernel::Delay { .. } => self.states[b] = Some(self.vals[self.ins[b][0]].clone()),
                _ => {}
            }
        }
        out
    }

    pub fn run(&mut self, inputs: &Trace, steps: usize) -> Result<Trace, SimError> {
        let mut trace = Trace::default();
        for step in 0..steps {
            for i in 0..self.order.len() {
                self.fire(self.order[i], inputs, step)?;
            }
            trace.steps.push(self.end_step());
        }
        Ok(trace)
    }
}

pub fn interpret_ir(ir: &FlatIR, registry: &ToolboxRegistry, inputs: &Trace, steps: usize) -> Result<Trace, SimError> {
    Machine::new(ir, registry)?.run(inputs, steps)
}

// ---------------------------------------------------------------------------
// hierarchical model

struct Frame {
    sub: Subsystem,
    /// Enclosing frame and this frame's block in it.
    parent: Option<(usize, usize)>,
    /// `(block, port)` to the driving `(block, port)` and line type.
    drivers: HashMap<(usize, usize), (usize, usize, DType)>,
    children: HashMap<usize, usize>,
    kernels: HashMap<usize, Kernel>,
    inports: Vec<usize>,
    outports: Vec<usize>,
}

struct ModelMachine<'r> {
    frames: Vec<Frame>,
    registry: &'r ToolboxRegistry,
    memo: HashMap<(usize, usize), Vec<Value>>,
    active: HashSet<(usize, usize)>,
    states: HashMap<(usize, usize), Value>,
}

impl<'r> ModelMachine<'r> {
    fn new(model: &Model, registry: &'r ToolboxRegistry) -> Result<Self, SimError> {
        let mut m = ModelMachine {
            frames: Vec::new(),
            registry,
            memo: HashMap::new(),
            active: HashSet::new(),
            states: HashMap::new(),
        };
        m.add_frame(model.root.clone(), None)?;
        Ok(m)
    }

    fn add_frame(&mut self, sub: Subsystem, parent: Option<(usize, usize)>) -> Result<usize, SimError> {
        let id = self.frames.len();
        let names: HashMap<String, usize> = sub.children.iter().enumerate().map(|(i, b)| (b.name.clone(), i)).collect();
        let mut drivers = HashMap::new();
        for line in &sub.lines {
            let src = names[&line.src.block];
            for d in &line.dsts {
                drivers.insert((names[&d.block], d.port), (src, line.src.port, line.dtype.clone()));
            }
        }
        let inports = (0..sub.children.len())
            .filter(|&i| matches!(sub.children[i].kind, BlockKind::Inport))
            .collect();
        let outports = (0..sub.children.len())
            .filter(|&i| matches!(sub.children[i].kind, BlockKind::Outport))
            .collect();
        self.frames.push(Frame {
            sub,
            parent,
            drivers,
            children: HashMap::new(),
            kernels: HashMap::new(),
            inports,
            outports,
        });
        for i in 0..self.frames[id].sub.children.len() {
            let block = self.frames[id].sub.children[i].clone();
            let in_types = (1..=block.inputs)
                .map(|p| {
                    self.frames[id]
                        .drivers
                        .get(&(i, p))
                        .map(|d| d.2.clone())
                        .ok_or_else(|| SimError::InvalidModel(format!("input {p} of `{}` is not connected", block.name)))
                })
                .collect::<Result<Vec<_>, _>>();
            match &block.kind {
                BlockKind::Subsystem(inner) => {
                    let child = self.add_frame((**inner).clone(), Some((id, i)))?;
                    self.frames[id].children.insert(i, child);
                }
                BlockKind::Toolbox(name) => match self.registry.get(name) {
                    Some(ToolboxEntry::Expandable(_)) => {
                        let inner = self.registry.instantiate(name, &block).map_err(SimError::InvalidModel)?;
                        let child = self.add_frame(inner, Some((id, i)))?;
                        self.frames[id].children.insert(i, child);
                    }
                    Some(ToolboxEntry::Opaque(_)) => {
                        let params = self.registry.effective_params(name, &block).map_err(SimError::InvalidModel)?;
                        let k = Kernel::compile(&block.name, &block.kind, &params, &in_types?, self.registry)?;
                        self.frames[id].kernels.insert(i, k);
                    }
                    None => return Err(SimError::MissingKernel(name.clone())),
                },
                BlockKind::Inport | BlockKind::Outport | BlockKind::BusCreator | BlockKind::BusSelector => {}
                kind => {
                    let k = Kernel::compile(&block.name, kind, &block.params, &in_types?, self.registry)?;
                    self.frames[id].kernels.insert(i, k);
                }
            }
        }
        Ok(id)
    }

    fn input(&mut self, f: usize, b: usize, port: usize, inputs: &Trace, step: usize) -> Result<Value, SimError> {
        let (src, sport, _) = self.frames[f].drivers.get(&(b, port)).cloned().ok_or_else(|| {
            SimError::InvalidModel(format!("input {port} of `{}` is not connected", self.frames[f].sub.children[b].name))
        })?;
        self.output(f, src, sport, inputs, step)
    }

    fn output(&mut self, f: usize, b: usize, port: usize, inputs: &Trace, step: usize) -> Result<Value, SimError> {
        let block = &self.frames[f].sub.children[b];
        match &block.kind {
            BlockKind::Inport => {
                let idx = self.frames[f].inports.iter().position(|&i| i == b).expect("inport listed");
                match self.frames[f].parent {
                    Some((pf, pb)) => self.input(pf, pb, idx + 1, inputs, step),
                    None => {
                        let dtype: DType = block
                            .param("dtype")
                            .unwrap_or("")
                            .parse()
                            .map_err(SimError::InvalidModel)?;
                        Ok(step_input(inputs, step, &block.name, &dtype)?.clone())
                    }
                }
            }
            BlockKind::BusCreator => {
                let names = split_list(block.param("names").unwrap_or(""));
                let mut elems = Vec::with_capacity(names.len());
                for (i, n) in names.into_iter().enumerate() {
                    elems.push((n, self.input(f, b, i + 1, inputs, step)?));
                }
                Ok(Value::Bus(elems))
            }
            BlockKind::BusSelector => {
                let sel = parse_selector(&block.params).map_err(SimError::InvalidModel)?;
                let name = block.name.clone();
                let bus = self.input(f, b, 1, inputs, step)?;
                select(&bus, &sel, port).ok_or_else(|| SimError::ShapeMismatch(format!("`{name}` cannot select output {port}")))
            }
            _ if self.frames[f].children.contains_key(&b) => {
                let child = self.frames[f].children[&b];
                let outport = *self.frames[child]
                    .outports
                    .get(port - 1)
                    .ok_or_else(|| SimError::InvalidModel(format!("`{}` has no output {port}", block.name)))?;
                self.input(child, outport, 1, inputs, step)
            }
            _ => {
                let name = block.name.clone();
                let outs = self.fire(f, b, inputs, step)?;
                outs.get(port - 1)
                    .cloned()
                    .ok_or_else(|| SimError::InvalidModel(format!("`{name}` has no output {port}")))
            }
        }
    }

    fn fire(&mut self, f: usize, b: usize, inputs: &Trace, step: usize) -> Result<Vec<Value>, SimError> {
        if let Some(v) = self.memo.get(&(f, b)) {
            return Ok(v.clone());
        }
        let name = self.frames[f].sub.children[b].name.clone();
        let outs = if let Some(Kernel::Delay { init }) = self.frames[f].kernels.get(&b) {
            vec![self.states.get(&(f, b)).unwrap_or(init).clone()]
        } else {
            if !self.active.insert((f, b)) {
                return Err(SimError::AlgebraicLoop(name));
            }
            let n = self.frames[f].sub.children[b].inputs;
            let mut args = Vec::with_capacity(n);
            for p in 1..=n {
                args.push(self.input(f, b, p, inputs, step)?);
            }
            self.active.remove(&(f, b));
            let refs: Vec<&Value> = args.iter().collect();
            let kernel = self.frames[f].kernels.get(&b).ok_or_else(|| SimError::MissingKernel(name.clone()))?;
            kernel.fire(&refs, None).map_err(|msg| SimError::Kernel {
                block: name.clone(),
                msg,
            })?
        };
        for (p, v) in outs.iter().enumerate() {
            if let Some(line) = self.frames[f].sub.line_from(&name, p + 1) {
                check_out(&name, v, &line.dtype)?;
            }
        }
        self.memo.insert((f, b), outs.clone());
        Ok(outs)
    }

    fn step(&mut self, inputs: &Trace, step: usize) -> Result<BTreeMap<String, Value>, SimError> {
        self.memo.clear();
        let mut delays = Vec::new();
        for f in 0..self.frames.len() {
            let mut leaves: Vec<usize> = self.frames[f].kernels.keys().copied().collect();
            leaves.sort_unstable();
            for b in leaves {
                match self.frames[f].kernels[&b] {
                    Kernel::Output => {}
                    Kernel::Delay { .. } => delays.push((f, b)),
                    _ => {
                        self.fire(f, b, inputs, step)?;
                    }
                }
            }
        }
        let mut out = BTreeMap::new();
        for i in self.frames[0].outports.clone() {
            let name = self.frames[0].sub.children[i].name.clone();
            out.insert(name, self.input(0, i, 1, inputs, step)?);
        }
        let mut next = Vec::with_capacity(delays.len());
        for &(f, b) in &delays {
            next.push(self.input(f, b, 1, inputs, step)?);
        }
        for (key, v) in delays.into_iter().zip(next) {
            self.states.insert(key, v);
        }
        Ok(out)
    }
}

/// Bus element for a selector output, by dotted name or position path.
fn select(bus: &Value, sel: &Selector, port: usize) -> Option<Value> {
    match sel {
        Selector::Names(names) => {
            let mut v = bus;
            for part in names.get(port - 1)?.split('.') {
                let Value::Bus(elems) = v else { return None };
                v = &elems.iter().find(|(n, _)| n == part)?.1;
            }
            Some(v.clone())
        }
        Selector::Positions(paths) => {
            let mut v = bus;
            for &i in paths.get(port - 1)? {
                let Value::Bus(elems) = v else { return None };
                v = &elems.get(i.checked_sub(1)?)?.1;
            }
            Some(v.clone())
        }
    }
}

/// Interprets the hierarchy directly: subsystems and expandable toolbox
/// blocks are evaluated in place, buses as records.
pub fn interpret_model(
    model: &Model,
    registry: &ToolboxRegistry,
    inputs: &Trace,
    steps: usize,
) -> Result<Trace, SimError> {
    let report = validate_with(model, registry);
    if !report.is_ok() {
        return Err(SimError::InvalidModel(report.to_string()));
    }
    let mut m = ModelMachine::new(model, registry)?;
    let mut trace = Trace::default();
    for step in 0..steps {
        trace.steps.push(m.step(inputs, step)?);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::extract;
    use crate::model::parse_model;

    fn scalar_inputs(port: &str, xs: &[f64]) -> Trace {
        Trace {
            steps: xs
                .iter()
                .map(|&x| BTreeMap::from([(port.to_string(), Value::Scalar(x))]))
                .collect(),
        }
    }

    fn both(text: &str, inputs: &Trace, steps: usize) -> (Trace, Trace) {
        let reg = ToolboxRegistry::builtin();
        let model = parse_model(text).unwrap();
        let ir = extract(&model, &reg).unwrap();
        (
            interpret_model(&model, &reg, inputs, steps).unwrap(),
            interpret_ir(&ir, &reg, inputs, steps).unwrap(),
        )
    }

    fn outputs(t: &Trace, port: &str) -> Vec<f64> {
        t.steps.iter().map(|s| s[port].flat()[0]).collect()
    }

    #[test]
    fn gain_on_three() {
        let text = r#"<model name="m">
  <block name="in_1" kind="Inport"><param k="dtype" v="Scalar"/></block>
  <block name="g" kind="Gain"><param k="gain" v="2"/></block>
  <block name="out_1" kind="Outport"/>
  <line src="in_1:1" dst="g:1" dtype="Scalar"/>
  <line src="g:1" dst="out_1:1" dtype="Scalar"/>
</model>"#;
        let (a, b) = both(text, &scalar_inputs("in_1", &[3.0]), 1);
        assert_eq!(outputs(&a, "out_1"), vec![6.0]);
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn delay_lags_one_step() {
        let text = r#"<model name="m">
  <block name="u" kind="Inport"><param k="dtype" v="Scalar"/></block>
  <block name="d" kind="UnitDelay"/>
  <block name="y" kind="Outport"/>
  <line src="u:1" dst="d:1" dtype="Scalar"/>
  <line src="d:1" dst="y:1" dtype="Scalar"/>
</model>"#;
        let (a, b) = both(text, &scalar_inputs("u", &[5.0; 4]), 4);
        assert_eq!(outputs(&a, "y"), vec![0.0, 5.0, 5.0, 5.0]);
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn accumulator_through_subsystem_and_bus() {
        let text = r#"<model name="m">
  <block name="u" kind="Inport"><param k="dtype" v="Scalar"/></block>
  <block name="mk" kind="BusCreator"><param k="names" v="a,b"/></block>
  <subsystem name="acc">
      <block name="bus" kind="Inport"><param k="dtype" v="Bus{a:Scalar,b:Scalar}"/></block>
      <block name="sel" kind="BusSelector"><param k="select" v="b,a"/></block>
      <block name="s" kind="Sum"><param k="signs" v="++-"/></block>
      <block name="z" kind="UnitDelay"><param k="init" v="1"/></block>
      <block name="o" kind="Outport"/>
      <line src="bus:1" dst="sel:1" dtype="Bus{a:Scalar,b:Scalar}"/>
      <line src="sel:1" dst="s:1" dtype="Scalar"/>
      <line src="z:1" dst="s:2" dtype="Scalar"/>
      <line src="sel:2" dst="s:3" dtype="Scalar"/>
      <line src="s:1" dst="z:1;o:1" dtype="Scalar"/>
  </subsystem>
  <block name="c" kind="Const"><param k="value" v="10"/></block>
  <block name="y" kind="Outport"/>
  <line src="u:1" dst="mk:1" dtype="Scalar"/>
  <line src="c:1" dst="mk:2" dtype="Scalar"/>
  <line src="mk:1" dst="acc:1" dtype="Bus{a:Scalar,b:Scalar}"/>
  <line src="acc:1" dst="y:1" dtype="Scalar"/>
</model>"#;
        let (a, b) = both(text, &scalar_inputs("u", &[1.0, 2.0, 3.0]), 3);
        // s = 10 + z - u
        assert_eq!(outputs(&a, "y"), vec![10.0, 18.0, 25.0]);
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn missing_input_and_shape() {
        let text = r#"<model name="m">
  <block name="u" kind="Inport"><param k="dtype" v="Vector(2)"/></block>
  <block name="y" kind="Outport"/>
  <line src="u:1" dst="y:1" dtype="Vector(2)"/>
</model>"#;
        let reg = ToolboxRegistry::builtin();
        let model = parse_model(text).unwrap();
        let ir = extract(&model, &reg).unwrap();
        let empty = Trace::default();
        assert!(matches!(
            interpret_ir(&ir, &reg, &empty, 1),
            Err(SimError::MissingInput { step: 0, .. })
        ));
        let wrong = scalar_inputs("u", &[1.0]);
        assert!(matches!(interpret_model(&model, &reg, &wrong, 1), Err(SimError::ShapeMismatch(_))));
        assert!(matches!(interpret_ir(&ir, &reg, &wrong, 1), Err(SimError::ShapeMismatch(_))));
    }

    #[test]
    fn expandable_toolbox_matches_kernel() {
        let text = r#"<model name="m">
  <block name="pose" kind="Inport"><param k="dtype" v="Vector(3)"/></block>
  <block name="ref" kind="Inport"><param k="dtype" v="Vector(3)"/></block>
  <block name="v" kind="Inport"><param k="dtype" v="Scalar"/></block>
  <block name="st" kind="Toolbox(StanleyLateral)" inputs="3" outputs="1">
    <param k="k" v="1"/><param k="eps" v="0"/><param k="limit" v="10"/>
  </block>
  <block name="steer" kind="Outport"/>
  <line src="pose:1" dst="st:1" dtype="Vector(3)"/>
  <line src="ref:1" dst="st:2" dtype="Vector(3)"/>
  <line src="v:1" dst="st:3" dtype="Scalar"/>
  <line src="st:1" dst="steer:1" dtype="Scalar"/>
</model>"#;
        let pose = [0.3, -0.7, 0.2];
        let reference = [1.0, 0.5, -0.4];
        let inputs = Trace {
            steps: vec![BTreeMap::from([
                ("pose".to_string(), Value::Vector(pose.to_vec())),
                ("ref".to_string(), Value::Vector(reference.to_vec())),
                ("v".to_string(), Value::Scalar(2.0)),
            ])],
        };
        let (a, b) = both(text, &inputs, 1);
        let (e, he) = super::super::kernels::tracking_errors(pose, reference);
        let expect = super::super::kernels::stanley_steer(he, e, 2.0, 1.0, 0.0, 10.0);
        assert_eq!(outputs(&a, "steer")[0].to_bits(), expect.to_bits());
        assert!(a.bit_eq(&b));
    }
}
