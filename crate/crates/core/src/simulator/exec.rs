use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Barrier, Mutex};

use crate::extractor::FlatIR;
use crate::scheduler::{Schedule, Slot};
use crate::toolbox::ToolboxRegistry;

use super::interp::{port_name, step_input, Machine};
use super::kernel::Kernel;
use super::value::{Trace, Value};
use super::SimError;

/// One block execution as observed; times include the step offset
/// `step * makespan`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusyInterval {
    pub step: usize,
    pub core: usize,
    pub block: String,
    pub start_ns: u64,
    pub finish_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub step: usize,
    pub var: String,
    pub from_core: usize,
    pub to_core: usize,
    pub depart_ns: u64,
    pub arrive_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub busy: Vec<BusyInterval>,
    pub deliveries: Vec<Delivery>,
}

impl EventLog {
    /// Busy intervals of one step, per core, in start order.
    pub fn lanes(&self, step: usize) -> BTreeMap<usize, Vec<&BusyInterval>> {
        let mut out: BTreeMap<usize, Vec<&BusyInterval>> = BTreeMap::new();
        for b in self.busy.iter().filter(|b| b.step == step) {
            out.entry(b.core).or_default().push(b);
        }
        out
    }

    /// True when two cores are busy at the same instant within a step.
    pub fn has_overlap_across_cores(&self, step: usize) -> bool {
        let mine: Vec<&BusyInterval> = self.busy.iter().filter(|b| b.step == step && b.finish_ns > b.start_ns).collect();
        mine.iter().any(|a| {
            mine.iter()
                .any(|b| a.core != b.core && a.start_ns < b.finish_ns && b.start_ns < a.finish_ns)
        })
    }
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidSchedule(msg.into())
}

/// Per-core slot sequences (block indices) in execution order: start time,
/// then finish time, then topological position for zero-length ties.
pub(crate) fn core_sequences(ir: &FlatIR, schedule: &Schedule) -> Result<BTreeMap<usize, Vec<(usize, Slot)>>, SimError> {
    let index: BTreeMap<&str, usize> = ir.blocks.iter().enumerate().map(|(i, b)| (b.uname.as_str(), i)).collect();
    let order = ir.topo_order().ok_or_else(|| invalid("the IR has a cycle"))?;
    let mut topo_pos = vec![0; ir.blocks.len()];
    for (i, &b) in order.iter().enumerate() {
        topo_pos[b] = i;
    }
    let mut seen = BTreeSet::new();
    let mut seqs: BTreeMap<usize, Vec<(usize, Slot)>> = BTreeMap::new();
    for s in &schedule.slots {
        let &b = index
            .get(s.block.as_str())
            .ok_or_else(|| invalid(format!("unknown block `{}`", s.block)))?;
        if !seen.insert(b) {
            return Err(invalid(format!("`{}` is scheduled twice", s.block)));
        }
        if s.finish_ns < s.start_ns {
            return Err(invalid(format!("`{}` finishes before it starts", s.block)));
        }
        seqs.entry(s.core).or_default().push((b, s.clone()));
    }
    if seen.len() != ir.blocks.len() {
        let missing = (0..ir.blocks.len()).find(|b| !seen.contains(b)).expect("one is missing");
        return Err(invalid(format!("`{}` is not scheduled", ir.blocks[missing].uname)));
    }
    for seq in seqs.values_mut() {
        seq.sort_by_key(|(b, s)| (s.start_ns, s.finish_ns, topo_pos[*b]));
    }
    Ok(seqs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Finish { core: usize, pos: usize },
    Depart(usize),
    Arrive(usize),
    Start { core: usize, pos: usize },
}

/// Discrete-event execution of `schedule`: at each block start its inputs
/// must be present on its core (produced there earlier or delivered by a
/// transfer) and its core idle. Steps are separated by a barrier, after
/// which delays latch their inputs. Violations are `InvalidSchedule`.
pub fn execute_schedule(
    ir: &FlatIR,
    schedule: &Schedule,
    registry: &ToolboxRegistry,
    inputs: &Trace,
    steps: usize,
) -> Result<(Trace, EventLog), SimError> {
    let seqs = core_sequences(ir, schedule)?;
    let mut m = Machine::new(ir, registry)?;
    let var_index: BTreeMap<&str, usize> = ir.vars.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
    let producer: Vec<usize> = ir
        .vars
        .iter()
        .map(|v| ir.block_index(&v.producer.0).expect("checked IR"))
        .collect();
    let core_of: BTreeMap<usize, usize> = seqs.iter().flat_map(|(&c, seq)| seq.iter().map(move |(b, _)| (*b, c))).collect();
    let comms: Vec<(usize, &crate::scheduler::CommEvent)> = schedule
        .comm_events
        .iter()
        .map(|e| {
            var_index
                .get(e.var.as_str())
                .map(|&v| (v, e))
                .ok_or_else(|| invalid(format!("transfer of unknown var `{}`", e.var)))
        })
        .collect::<Result<_, _>>()?;
    for (_, e) in &comms {
        if e.arrive_ns < e.depart_ns {
            return Err(invalid(format!("transfer of `{}` arrives before it departs", e.var)));
        }
    }
    let mut log = EventLog::default();
    let mut trace = Trace::default();
    for step in 0..steps {
        let base = step as u64 * schedule.makespan_ns;
        // var -> cores holding it
        let mut present: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ir.vars.len()];
        let mut done = vec![false; ir.blocks.len()];
        let mut heap = BinaryHeap::new();
        for (&core, seq) in &seqs {
            heap.push(Reverse((seq[0].1.start_ns, Ev::Start { core, pos: 0 })));
        }
        for (i, (_, e)) in comms.iter().enumerate() {
            heap.push(Reverse((e.depart_ns, Ev::Depart(i))));
        }
        while let Some(Reverse((t, first))) = heap.pop() {
            // Everything due at `t` runs to a fixed point, so zero-length
            // blocks and transfers chain within one instant.
            let mut pending = vec![first];
            while let Some(Reverse((t2, _))) = heap.peek() {
                if *t2 != t {
                    break;
                }
                pending.push(heap.pop().expect("peeked").0 .1);
            }
            loop {
                pending.sort();
                let Some(i) = pending.iter().position(|ev| match *ev {
                    Ev::Finish { .. } | Ev::Arrive(_) => true,
                    Ev::Depart(i) => {
                        let p = producer[comms[i].0];
                        done[p] && core_of.get(&p) == Some(&comms[i].1.from_core)
                    }
                    Ev::Start { core, pos } => {
                        let b = seqs[&core][pos].0;
                        matches!(m.kernels[b], Kernel::Delay { .. })
                            || m.ins[b].iter().all(|&v| present[v].contains(&core))
                    }
                }) else {
                    break;
                };
                let mut due = Vec::new();
                match pending.remove(i) {
                    Ev::Start { core, pos } => {
                        let (b, slot) = &seqs[&core][pos];
                        m.fire(*b, inputs, step)?;
                        due.push((slot.finish_ns, Ev::Finish { core, pos }));
                    }
                    Ev::Finish { core, pos } => {
                        let seq = &seqs[&core];
                        let (b, slot) = &seq[pos];
                        done[*b] = true;
                        for &v in &m.outs[*b] {
                            present[v].insert(core);
                        }
                        log.busy.push(BusyInterval {
                            step,
                            core,
                            block: slot.block.clone(),
                            start_ns: base + slot.start_ns,
                            finish_ns: base + slot.finish_ns,
                        });
                        if let Some((_, next)) = seq.get(pos + 1) {
                            if next.start_ns < slot.finish_ns {
                                return Err(invalid(format!(
                                    "`{}` and `{}` overlap on core {core}",
                                    slot.block, next.block
                                )));
                            }
                            due.push((next.start_ns, Ev::Start { core, pos: pos + 1 }));
                        }
                    }
                    Ev::Depart(i) => due.push((comms[i].1.arrive_ns, Ev::Arrive(i))),
                    Ev::Arrive(i) => {
                        let (v, e) = comms[i];
                        present[v].insert(e.to_core);
                        log.deliveries.push(Delivery {
                            step,
                            var: e.var.clone(),
                            from_core: e.from_core,
                            to_core: e.to_core,
                            depart_ns: base + e.depart_ns,
                            arrive_ns: base + e.arrive_ns,
                        });
                    }
                }
                for (when, ev) in due {
                    if when == t {
                        pending.push(ev);
                    } else {
                        heap.push(Reverse((when, ev)));
                    }
                }
            }
            if let Some(stuck) = pending.first() {
                return Err(invalid(match *stuck {
                    Ev::Start { core, pos } => {
                        let (b, slot) = &seqs[&core][pos];
                        let missing = m.ins[*b]
                            .iter()
                            .find(|&&v| !present[v].contains(&core))
                            .map_or("an input", |&v| ir.vars[v].name.as_str());
                        format!("`{}` starts at {t} ns on core {core} before `{missing}` is available there", slot.block)
                    }
                    Ev::Depart(i) => format!(
                        "transfer of `{}` leaves core {} at {t} ns before it is produced there",
                        comms[i].1.var, comms[i].1.from_core
                    ),
                    _ => unreachable!("always processable"),
                }));
            }
        }
        if let Some(late) = log.busy.iter().rev().find(|b| b.step == step && b.finish_ns > base + schedule.makespan_ns) {
            return Err(invalid(format!("`{}` finishes after the makespan", late.block)));
        }
        trace.steps.push(m.end_step());
    }
    Ok((trace, log))
}

/// Rejects orders that could deadlock a threaded run: the per-core
/// sequences together with the data dependencies must be acyclic.
pub(crate) fn check_deadlock_free(ir: &FlatIR, seqs: &BTreeMap<usize, Vec<(usize, Slot)>>) -> Result<(), SimError> {
    let n = ir.blocks.len();
    let (_, mut succs) = ir.adjacency();
    for seq in seqs.values() {
        for w in seq.windows(2) {
            succs[w[0].0].push(w[1].0);
        }
    }
    let mut indeg = vec![0; n];
    for s in succs.iter().flatten() {
        indeg[*s] += 1;
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(b) = ready.pop() {
        seen += 1;
        for &s in &succs[b] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(s);
            }
        }
    }
    if seen == n {
        Ok(())
    } else {
        Err(invalid("core orders contradict data dependencies"))
    }
}

/// Runs the schedule with one OS thread per used core. Each variable
/// carries a ready flag holding the last step that wrote it; consumers on
/// other cores wait for it. Two barriers close a step: after the first,
/// every core latches its own delays; after the second, the next step may
/// overwrite variables. Timing is not simulated.
pub fn execute_schedule_threaded(
    ir: &FlatIR,
    schedule: &Schedule,
    registry: &ToolboxRegistry,
    inputs: &Trace,
    steps: usize,
) -> Result<Trace, SimError> {
    let seqs = core_sequences(ir, schedule)?;
    check_deadlock_free(ir, &seqs)?;
    let m = Machine::new(ir, registry)?;
    let vals: Vec<Mutex<Value>> = m.vals.iter().cloned().map(Mutex::new).collect();
    let flags: Vec<AtomicU64> = (0..vals.len()).map(|_| AtomicU64::new(0)).collect();
    let barrier = Barrier::new(seqs.len());
    let failed = std::sync::atomic::AtomicBool::new(false);
    let m = &m;
    let results: Vec<Result<Vec<(usize, String, Value)>, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seqs
            .values()
            .map(|seq| {
                let (vals, flags, barrier, failed) = (&vals, &flags, &barrier, &failed);
                scope.spawn(move || {
                    let mut states: BTreeMap<usize, Value> = BTreeMap::new();
                    let mut recorded = Vec::new();
                    let mut error = None;
                    for step in 0..steps {
                        let mark = step as u64 + 1;
                        for (b, _) in seq {
                            let b = *b;
                            if error.is_some() || failed.load(Ordering::Acquire) {
                                break;
                            }
                            let block = &ir.blocks[b];
                            let fired = (|| -> Result<Vec<Value>, SimError> {
                                match &m.kernels[b] {
                                    Kernel::Input => {
                                        let v = m.outs[b][0];
                                        Ok(vec![step_input(inputs, step, &port_name(&block.uname), &m.types[v])?.clone()])
                                    }
                                    Kernel::Delay { init } => Ok(vec![states.get(&b).unwrap_or(init).clone()]),
                                    k => {
                                        let mut args = Vec::with_capacity(m.ins[b].len());
                                        for &v in &m.ins[b] {
                                            while flags[v].load(Ordering::Acquire) < mark {
                                                if failed.load(Ordering::Acquire) {
                                                    return Err(invalid("another core failed"));
                                                }
                                                std::thread::yield_now();
                                            }
                                            args.push(vals[v].lock().expect("no poisoning").clone());
                                        }
                                        if let Kernel::Output = k {
                                            recorded.push((step, port_name(&block.uname), args.remove(0)));
                                            return Ok(vec![]);
                                        }
                                        let refs: Vec<&Value> = args.iter().collect();
                                        k.fire(&refs, None).map_err(|msg| SimError::Kernel {
                                            block: block.uname.clone(),
                                            msg,
                                        })
                                    }
                                }
                            })();
                            match fired {
                                Ok(outs) => {
                                    for (&v, value) in m.outs[b].iter().zip(outs) {
                                        if !value.conforms(&m.types[v]) {
                                            error = Some(SimError::ShapeMismatch(format!(
                                                "`{}` produced a value that is not {}",
                                                block.uname, m.types[v]
                                            )));
                                            break;
                                        }
                                        *vals[v].lock().expect("no poisoning") = value;
                                        flags[v].store(mark, Ordering::Release);
                                    }
                                }
                                Err(e) => error = Some(e),
                            }
                            if error.is_some() {
                                failed.store(true, Ordering::Release);
                            }
                        }
                        barrier.wait();
                        for (b, _) in seq {
                            if let Kernel::Delay { .. } = m.kernels[*b] {
                                let v = m.ins[*b][0];
                                states.insert(*b, vals[v].lock().expect("no poisoning").clone());
                            }
                        }
                        barrier.wait();
                        if failed.load(Ordering::Acquire) {
                            break;
                        }
                    }
                    match error {
                        Some(e) => Err(e),
                        None => Ok(recorded),
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("core thread panicked")).collect()
    });
    let mut trace = Trace {
        steps: vec![BTreeMap::new(); steps],
    };
    let mut first_err = None;
    for r in results {
        match r {
            Ok(rec) => {
                for (step, port, v) in rec {
                    trace.steps[step].insert(port, v);
                }
            }
            Err(SimError::InvalidSchedule(msg)) if msg == "another core failed" => {}
            Err(e) => first_err = first_err.or(Some(e)),
        }
    }
    match first_err {
        Some(e) => Err(e),
        None if failed.load(Ordering::Acquire) => Err(invalid("execution aborted")),
        None => Ok(trace),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::extract;
    use crate::hwprofile::{bind_costs, CostTable, HardwareProfile};
    use crate::model::parse_model;
    use crate::scheduler::{allocate, ScheduleRequest};
    use crate::simulator::interpret_ir;

    fn two_paths() -> FlatIR {
        let text = r#"<model name="m">
  <block name="u" kind="Inport"><param k="dtype" v="Vector(4)"/></block>
  <block name="a" kind="ElementwiseMap(sin)"/>
  <block name="a2" kind="Gain"><param k="gain" v="3"/></block>
  <block name="b" kind="ElementwiseMap(cos)"/>
  <block name="b2" kind="UnitDelay"/>
  <block name="s" kind="Sum"/>
  <block name="y" kind="Outport"/>
  <line src="u:1" dst="a:1;b:1" dtype="Vector(4)"/>
  <line src="a:1" dst="a2:1" dtype="Vector(4)"/>
  <line src="b:1" dst="b2:1" dtype="Vector(4)"/>
  <line src="a2:1" dst="s:1" dtype="Vector(4)"/>
  <line src="b2:1" dst="s:2" dtype="Vector(4)"/>
  <line src="s:1" dst="y:1" dtype="Vector(4)"/>
</model>"#;
        let reg = ToolboxRegistry::builtin();
        let mut ir = extract(&parse_model(text).unwrap(), &reg).unwrap();
        bind_costs(&mut ir, &CostTable::builtin(), &reg).unwrap();
        ir
    }

    fn profile() -> HardwareProfile {
        crate::scheduler::testutil::profile(2, 1.0)
    }

    fn inputs(steps: usize) -> Trace {
        Trace {
            steps: (0..steps)
                .map(|i| BTreeMap::from([("u".to_string(), Value::Vector(vec![i as f64, 0.5, -1.0, 2.0]))]))
                .collect(),
        }
    }

    #[test]
    fn matches_interpreter_and_logs_every_block() {
        let ir = two_paths();
        let p = profile();
        let reg = ToolboxRegistry::builtin();
        for cores in 1..=2 {
            let s = allocate(&ScheduleRequest {
                ir: &ir,
                profile: &p,
                max_cores: cores,
            })
            .unwrap();
            let (t, log) = execute_schedule(&ir, &s, &reg, &inputs(5), 5).unwrap();
            assert!(t.bit_eq(&interpret_ir(&ir, &reg, &inputs(5), 5).unwrap()));
            assert_eq!(log.busy.len(), 5 * ir.blocks.len());
            let threaded = execute_schedule_threaded(&ir, &s, &reg, &inputs(5), 5).unwrap();
            assert!(threaded.bit_eq(&t));
        }
    }

    #[test]
    fn overlap_is_rejected() {
        let ir = two_paths();
        let p = profile();
        let mut s = allocate(&ScheduleRequest {
            ir: &ir,
            profile: &p,
            max_cores: 1,
        })
        .unwrap();
        let busy: Vec<usize> = (0..s.slots.len()).filter(|&i| s.slots[i].finish_ns > s.slots[i].start_ns).collect();
        let (a, b) = (busy[0], busy[1]);
        let len = s.slots[b].finish_ns - s.slots[b].start_ns;
        s.slots[b].start_ns = s.slots[a].start_ns;
        s.slots[b].finish_ns = s.slots[a].start_ns + len;
        let r = execute_schedule(&ir, &s, &ToolboxRegistry::builtin(), &inputs(1), 1);
        assert!(matches!(r, Err(SimError::InvalidSchedule(_))));
    }

    #[test]
    fn missing_transfer_is_rejected() {
        let ir = two_paths();
        let p = profile();
        let mut s = allocate(&ScheduleRequest {
            ir: &ir,
            profile: &p,
            max_cores: 2,
        })
        .unwrap();
        if s.comm_events.is_empty() {
            return;
        }
        s.comm_events.remove(0);
        let r = execute_schedule(&ir, &s, &ToolboxRegistry::builtin(), &inputs(1), 1);
        assert!(matches!(r, Err(SimError::InvalidSchedule(_))));
    }
}
