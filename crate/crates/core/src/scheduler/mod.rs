//! Core allocation: communication-aware list scheduling, an exhaustive
//! oracle for small instances, and the data-parallel split transform.

mod brute;
mod heft;
mod split;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::extractor::FlatIR;
use crate::hwprofile::{CostError, HardwareProfile};

pub use brute::{brute_force_allocate, BRUTE_FORCE_MAX_BLOCKS, BRUTE_FORCE_MAX_CORES};
pub use heft::allocate;
pub use split::{remove_trivial_splits, split_data_parallel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("the IR has a dependency cycle")]
    CyclicIR,
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("max_cores must be between 1 and {available}, got {requested}")]
    BadCoreCount { requested: usize, available: usize },
    #[error("brute force is limited to {max_blocks} blocks and {max_cores} cores, got {blocks} blocks and {cores} cores")]
    TooLarge {
        blocks: usize,
        cores: usize,
        max_blocks: usize,
        max_cores: usize,
    },
    #[error("block `{0}` does not exist")]
    NoSuchBlock(String),
    #[error("block `{block}` cannot be split: {reason}")]
    NotSplittable { block: String, reason: String },
    #[error("cannot split {n} elements into {k} shards")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid schedule: {0}")]
    Invalid(String),
}

/// A request: allocate `ir` on the first `max_cores` cores of `profile`.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleRequest<'a> {
    pub ir: &'a FlatIR,
    pub profile: &'a HardwareProfile,
    pub max_cores: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub block: String,
    pub core: usize,
    pub start_ns: u64,
    pub finish_ns: u64,
}

/// Transfer of one variable to one consuming core, departing when its
/// producer finishes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CommEvent {
    pub var: String,
    pub from_core: usize,
    pub to_core: usize,
    pub bytes: u64,
    pub depart_ns: u64,
    pub arrive_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub ir: String,
    pub profile: String,
    pub max_cores: usize,
    pub makespan_ns: u64,
    pub core_count_used: usize,
    /// Sorted by core, then start time.
    pub slots: Vec<Slot>,
    /// Sorted by departure, then variable and cores.
    pub comm_events: Vec<CommEvent>,
}

/// Dense form of a scheduling instance.
pub(crate) struct Problem {
    pub names: Vec<String>,
    /// `times[b][c]`: execution time of block `b` on core `c`.
    pub times: Vec<Vec<u64>>,
    /// Per block: (predecessor, var index).
    pub preds: Vec<Vec<(usize, usize)>>,
    pub succs: Vec<Vec<(usize, usize)>>,
    pub var_names: Vec<String>,
    pub var_bytes: Vec<u64>,
    pub cores: usize,
    /// `comm[v][from][to]`.
    pub comm: Vec<Vec<Vec<u64>>>,
}

impl Problem {
    pub fn new(req: &ScheduleRequest<'_>) -> Result<Problem, ScheduleError> {
        let available = req.profile.cores.len();
        if req.max_cores == 0 || req.max_cores > available {
            return Err(ScheduleError::BadCoreCount {
                requested: req.max_cores,
                available,
            });
        }
        let ir = req.ir;
        if ir.topo_order().is_none() {
            return Err(ScheduleError::CyclicIR);
        }
        let cores = req.max_cores;
        let index: BTreeMap<&str, usize> = ir.blocks.iter().enumerate().map(|(i, b)| (b.uname.as_str(), i)).collect();
        let mut times = Vec::with_capacity(ir.blocks.len());
        for b in &ir.blocks {
            times.push(
                (0..cores)
                    .map(|c| req.profile.block_time(b, c))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        let mut var_index = BTreeMap::new();
        let mut var_names = Vec::new();
        let mut var_bytes = Vec::new();
        let mut preds = vec![Vec::new(); ir.blocks.len()];
        let mut succs = vec![Vec::new(); ir.blocks.len()];
        for e in &ir.edges {
            let v = *var_index.entry(e.var.clone()).or_insert_with(|| {
                var_names.push(e.var.clone());
                var_bytes.push(ir.var(&e.var).map_or(0, |g| g.dtype.byte_size()));
                var_names.len() - 1
            });
            let (f, t) = (index[e.from.as_str()], index[e.to.as_str()]);
            preds[t].push((f, v));
            succs[f].push((t, v));
        }
        let comm = var_bytes
            .iter()
            .map(|&bytes| {
                (0..cores)
                    .map(|i| (0..cores).map(|j| req.profile.comm_time(bytes, i, j)).collect())
                    .collect()
            })
            .collect();
        Ok(Problem {
            names: ir.blocks.iter().map(|b| b.uname.clone()).collect(),
            times,
            preds,
            succs,
            var_names,
            var_bytes,
            cores,
            comm,
        })
    }

    /// Earliest time block `b` may start on `core` given placed predecessors.
    pub fn ready_time(&self, b: usize, core: usize, assign: &[usize], finish: &[u64]) -> u64 {
        self.preds[b]
            .iter()
            .map(|&(p, v)| finish[p] + self.comm[v][assign[p]][core])
            .max()
            .unwrap_or(0)
    }

    pub fn into_schedule(
        &self,
        req: &ScheduleRequest<'_>,
        assign: &[usize],
        start: &[u64],
    ) -> Schedule {
        let finish: Vec<u64> = (0..self.names.len()).map(|b| start[b] + self.times[b][assign[b]]).collect();
        let mut slots: Vec<Slot> = (0..self.names.len())
            .map(|b| Slot {
                block: self.names[b].clone(),
                core: assign[b],
                start_ns: start[b],
                finish_ns: finish[b],
            })
            .collect();
        slots.sort_by(|a, b| (a.core, a.start_ns, &a.block).cmp(&(b.core, b.start_ns, &b.block)));
        let mut comm = BTreeSet::new();
        for (b, preds) in self.preds.iter().enumerate() {
            for &(p, v) in preds {
                if assign[p] != assign[b] {
                    comm.insert((
                        finish[p],
                        CommEvent {
                            var: self.var_names[v].clone(),
                            from_core: assign[p],
                            to_core: assign[b],
                            bytes: self.var_bytes[v],
                            depart_ns: finish[p],
                            arrive_ns: finish[p] + self.comm[v][assign[p]][assign[b]],
                        },
                    ));
                }
            }
        }
        Schedule {
            ir: req.ir.name.clone(),
            profile: req.profile.name.clone(),
            max_cores: req.max_cores,
            makespan_ns: finish.iter().copied().max().unwrap_or(0),
            core_count_used: assign.iter().collect::<BTreeSet<_>>().len(),
            slots,
            comm_events: comm.into_iter().map(|(_, e)| e).collect(),
        }
    }
}

impl Schedule {
    pub fn slot(&self, block: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.block == block)
    }

    pub fn assignment(&self) -> BTreeMap<&str, usize> {
        self.slots.iter().map(|s| (s.block.as_str(), s.core)).collect()
    }

    /// Used cores in ascending order.
    pub fn cores(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.core).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("schedule serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Schedule, ScheduleError> {
        serde_json::from_str(text).map_err(|e| ScheduleError::Invalid(e.to_string()))
    }

    /// Structural checks needing no IR: per-core intervals disjoint and
    /// well-formed, makespan and core count consistent.
    pub fn check_shape(&self) -> Result<(), ScheduleError> {
        let bad = |m: String| Err(ScheduleError::Invalid(m));
        let mut by_core: BTreeMap<usize, Vec<&Slot>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for s in &self.slots {
            if s.finish_ns < s.start_ns {
                return bad(format!("`{}` finishes before it starts", s.block));
            }
            if !seen.insert(s.block.as_str()) {
                return bad(format!("`{}` is scheduled twice", s.block));
            }
            by_core.entry(s.core).or_default().push(s);
        }
        for (core, slots) in &mut by_core {
            slots.sort_by_key(|s| (s.start_ns, s.finish_ns));
            for w in slots.windows(2) {
                if w[1].start_ns < w[0].finish_ns {
                    return bad(format!("`{}` and `{}` overlap on core {core}", w[0].block, w[1].block));
                }
            }
        }
        let makespan = self.slots.iter().map(|s| s.finish_ns).max().unwrap_or(0);
        if makespan != self.makespan_ns {
            return bad(format!("makespan is {} but the last block finishes at {makespan}", self.makespan_ns));
        }
        if by_core.len() != self.core_count_used {
            return bad(format!("{} cores used, {} declared", by_core.len(), self.core_count_used));
        }
        Ok(())
    }

    /// Checks every schedule invariant against the IR and profile: each
    /// block placed once on a permitted core for exactly its cost, per-core
    /// intervals disjoint, and every dependency satisfied, across cores by a
    /// matching transfer.
    pub fn validate(&self, ir: &FlatIR, profile: &HardwareProfile) -> Result<(), ScheduleError> {
        self.check_shape()?;
        let bad = |m: String| Err(ScheduleError::Invalid(m));
        if self.max_cores == 0 || self.max_cores > profile.cores.len() {
            return bad(format!("max_cores {} exceeds the profile", self.max_cores));
        }
        if self.slots.len() != ir.blocks.len() {
            return bad(format!("{} slots for {} blocks", self.slots.len(), ir.blocks.len()));
        }
        let slots: BTreeMap<&str, &Slot> = self.slots.iter().map(|s| (s.block.as_str(), s)).collect();
        for b in &ir.blocks {
            let Some(s) = slots.get(b.uname.as_str()) else {
                return bad(format!("`{}` is not scheduled", b.uname));
            };
            if s.core >= self.max_cores {
                return bad(format!("`{}` is on core {} beyond max_cores {}", b.uname, s.core, self.max_cores));
            }
            let t = profile.block_time(b, s.core)?;
            if s.finish_ns - s.start_ns != t {
                return bad(format!("`{}` runs {} ns, its cost is {t} ns", b.uname, s.finish_ns - s.start_ns));
            }
        }
        let transfers: BTreeMap<(&str, usize), &CommEvent> = self
            .comm_events
            .iter()
            .map(|e| ((e.var.as_str(), e.to_core), e))
            .collect();
        for e in &ir.edges {
            let (u, v) = (slots[e.from.as_str()], slots[e.to.as_str()]);
            if u.core == v.core {
                if v.start_ns < u.finish_ns {
                    return bad(format!("`{}` starts before `{}` finishes", e.to, e.from));
                }
                continue;
            }
            let Some(c) = transfers.get(&(e.var.as_str(), v.core)) else {
                return bad(format!("no transfer of `{}` to core {}", e.var, v.core));
            };
            let bytes = ir.var(&e.var).map_or(0, |g| g.dtype.byte_size());
            if c.from_core != u.core || c.depart_ns < u.finish_ns || c.bytes != bytes {
                return bad(format!("transfer of `{}` does not leave `{}` correctly", e.var, e.from));
            }
            if c.arrive_ns < c.depart_ns + profile.comm_time(bytes, u.core, v.core) {
                return bad(format!("transfer of `{}` arrives too early", e.var));
            }
            if v.start_ns < c.arrive_ns {
                return bad(format!("`{}` starts before `{}` arrives", e.to, e.var));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoreUsage {
    pub core: usize,
    pub busy_ns: u64,
    pub idle_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub makespan_ns: u64,
    /// Used cores only.
    pub cores: Vec<CoreUsage>,
    pub comm_volume_bytes: u64,
}

pub fn makespan_report(schedule: &Schedule) -> Report {
    let mut busy: BTreeMap<usize, u64> = BTreeMap::new();
    for s in &schedule.slots {
        *busy.entry(s.core).or_default() += s.finish_ns - s.start_ns;
    }
    Report {
        makespan_ns: schedule.makespan_ns,
        cores: busy
            .into_iter()
            .map(|(core, busy_ns)| CoreUsage {
                core,
                busy_ns,
                idle_ns: schedule.makespan_ns - busy_ns,
            })
            .collect(),
        comm_volume_bytes: schedule.comm_events.iter().map(|e| e.bytes).sum(),
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::extractor::{FlatBlock, FlatIR, GlobalVar};
    use crate::hwprofile::{CommMatrix, Core, CostHint, HardwareProfile, Link, OpClass};
    use crate::model::{BlockKind, DType};

    /// Profile of `cores` 1 GHz cores at one cycle per op, no dispatch cost.
    pub fn profile(cores: usize, fixed_ns: f64) -> HardwareProfile {
        HardwareProfile {
            name: "test".into(),
            cores: (0..cores)
                .map(|id| Core {
                    id,
                    clock_hz: 1e9,
                    cycles_per_op: OpClass::ALL.into_iter().map(|c| (c, 1.0)).collect(),
                })
                .collect(),
            comm: CommMatrix::uniform(
                cores,
                Link {
                    fixed_ns,
                    per_byte_ns: 0.0,
                },
            ),
            dispatch_ns: 0,
        }
    }

    /// IR of Scalar-valued Gain blocks with the given arith costs and edges.
    pub fn dag(costs: &[u64], edges: &[(usize, usize)]) -> FlatIR {
        let name = |i: usize| format!("b{i:02}");
        let mut ir = FlatIR {
            name: "dag".into(),
            blocks: Vec::new(),
            vars: Vec::new(),
            edges: Vec::new(),
            state_vars: Vec::new(),
        };
        for (i, &c) in costs.iter().enumerate() {
            let mut b = FlatBlock::new(name(i), BlockKind::Gain);
            b.outputs.push(format!("{}_1", name(i)));
            b.inputs = edges.iter().filter(|e| e.1 == i).map(|e| format!("{}_1", name(e.0))).collect();
            b.cost_hint = Some(CostHint {
                arith: c,
                ..CostHint::default()
            });
            ir.blocks.push(b);
            ir.vars.push(GlobalVar {
                name: format!("{}_1", name(i)),
                dtype: DType::Scalar,
                producer: (name(i), 1),
                external: false,
            });
        }
        ir.normalize();
        ir
    }
}
