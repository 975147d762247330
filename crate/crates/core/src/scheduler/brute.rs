use super::heft::allocate;
use super::{Problem, Schedule, ScheduleError, ScheduleRequest};

pub const BRUTE_FORCE_MAX_BLOCKS: usize = 12;
pub const BRUTE_FORCE_MAX_CORES: usize = 3;

struct Search<'p> {
    p: &'p Problem,
    /// Position of each block in a fixed topological order.
    topo_pos: Vec<usize>,
    /// Longest path to a sink at minimum core times, no communication.
    bottom: Vec<u64>,
    min_time: Vec<u64>,
    symmetric: bool,
    assign: Vec<usize>,
    start: Vec<u64>,
    finish: Vec<u64>,
    placed: Vec<bool>,
    avail: Vec<u64>,
    used: Vec<bool>,
    best: u64,
    best_assign: Vec<usize>,
    best_start: Vec<u64>,
}

impl Search<'_> {
    fn lower_bound(&self, last: u64, span: u64) -> u64 {
        let mut lb = span;
        let mut work = 0;
        for b in 0..self.p.names.len() {
            if self.placed[b] {
                continue;
            }
            work += self.min_time[b];
            let ready = self.p.preds[b]
                .iter()
                .filter(|&&(q, _)| self.placed[q])
                .map(|&(q, _)| self.finish[q])
                .max()
                .unwrap_or(0);
            lb = lb.max(ready.max(last) + self.bottom[b]);
        }
        let cores = self.p.cores as u64;
        let occupied: u64 = self.avail.iter().map(|&a| a.max(last)).sum();
        lb.max((occupied + work).div_ceil(cores))
    }

    /// Appends blocks in (start, topological position) order; every
    /// semi-active schedule, hence an optimal one, is reachable this way.
    fn dfs(&mut self, count: usize, last: (u64, usize), span: u64) {
        let n = self.p.names.len();
        if count == n {
            if span < self.best {
                self.best = span;
                self.best_assign.clone_from(&self.assign);
                self.best_start.clone_from(&self.start);
            }
            return;
        }
        if self.lower_bound(last.0, span) >= self.best {
            return;
        }
        for b in 0..n {
            if self.placed[b] || self.p.preds[b].iter().any(|&(q, _)| !self.placed[q]) {
                continue;
            }
            let mut tried_fresh = false;
            for c in 0..self.p.cores {
                if self.symmetric && !self.used[c] {
                    if tried_fresh {
                        continue;
                    }
                    tried_fresh = true;
                }
                let s = self.p.ready_time(b, c, &self.assign, &self.finish).max(self.avail[c]);
                if (s, self.topo_pos[b]) <= last && count > 0 {
                    continue;
                }
                let f = s + self.p.times[b][c];
                if f.max(span) >= self.best {
                    continue;
                }
                let (prev_avail, prev_used) = (self.avail[c], self.used[c]);
                self.assign[b] = c;
                self.start[b] = s;
                self.finish[b] = f;
                self.placed[b] = true;
                self.avail[c] = f;
                self.used[c] = true;
                self.dfs(count + 1, (s, self.topo_pos[b]), span.max(f));
                self.placed[b] = false;
                self.avail[c] = prev_avail;
                self.used[c] = prev_used;
            }
        }
    }
}

/// Minimum-makespan schedule by exhaustive branch and bound over
/// assignments and orders. The list schedule seeds the bound.
pub fn brute_force_allocate(req: &ScheduleRequest<'_>) -> Result<Schedule, ScheduleError> {
    let blocks = req.ir.blocks.len();
    if blocks > BRUTE_FORCE_MAX_BLOCKS || req.max_cores > BRUTE_FORCE_MAX_CORES {
        return Err(ScheduleError::TooLarge {
            blocks,
            cores: req.max_cores,
            max_blocks: BRUTE_FORCE_MAX_BLOCKS,
            max_cores: BRUTE_FORCE_MAX_CORES,
        });
    }
    let p = Problem::new(req)?;
    let seed = allocate(req)?;
    let order = req.ir.topo_order().ok_or(ScheduleError::CyclicIR)?;
    let mut topo_pos = vec![0; blocks];
    for (i, &b) in order.iter().enumerate() {
        topo_pos[b] = i;
    }
    let min_time: Vec<u64> = p.times.iter().map(|t| *t.iter().min().expect("cores")).collect();
    let mut bottom = vec![0; blocks];
    for &b in order.iter().rev() {
        bottom[b] = min_time[b] + p.succs[b].iter().map(|&(s, _)| bottom[s]).max().unwrap_or(0);
    }
    let symmetric = p.times.iter().all(|t| t.iter().all(|&x| x == t[0]))
        && p.comm.iter().all(|m| {
            let off: Vec<u64> = (0..p.cores)
                .flat_map(|i| (0..p.cores).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[i][j])
                .collect();
            off.iter().all(|&x| x == off[0])
        });
    let index: std::collections::BTreeMap<&str, usize> =
        p.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut best_assign = vec![0; blocks];
    let mut best_start = vec![0; blocks];
    for s in &seed.slots {
        best_assign[index[s.block.as_str()]] = s.core;
        best_start[index[s.block.as_str()]] = s.start_ns;
    }
    let mut search = Search {
        p: &p,
        topo_pos,
        bottom,
        min_time,
        symmetric,
        assign: vec![0; blocks],
        start: vec![0; blocks],
        finish: vec![0; blocks],
        placed: vec![false; blocks],
        avail: vec![0; p.cores],
        used: vec![false; p.cores],
        best: seed.makespan_ns,
        best_assign,
        best_start,
    };
    search.dfs(0, (0, 0), 0);
    if search.best == seed.makespan_ns {
        return Ok(seed);
    }
    Ok(p.into_schedule(req, &search.best_assign, &search.best_start))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{dag, profile};
    use super::*;

    fn both(ir: &crate::extractor::FlatIR, cores: usize, fixed: f64) -> (u64, u64) {
        let p = profile(cores, fixed);
        let req = ScheduleRequest {
            ir,
            profile: &p,
            max_cores: cores,
        };
        let opt = brute_force_allocate(&req).unwrap();
        opt.validate(ir, &p).unwrap();
        (allocate(&req).unwrap().makespan_ns, opt.makespan_ns)
    }

    #[test]
    fn chain_optimum() {
        assert_eq!(both(&dag(&[10, 10], &[(0, 1)]), 2, 5.0), (20, 20));
    }

    #[test]
    fn diamond_optimum_by_enumeration() {
        // A -> {B, C} -> D, 10 ns each, 2 ns links: C and D on the second
        // core, B's result crossing over, gives 10 + 2 + 10 + 10 = 32.
        let (heft, opt) = both(&dag(&[10, 10, 10, 10], &[(0, 1), (0, 2), (1, 3), (2, 3)]), 2, 2.0);
        assert_eq!(opt, 32);
        assert!(heft as f64 <= 1.3 * opt as f64);
    }

    #[test]
    fn single_block() {
        let ir = dag(&[7], &[]);
        let p = profile(3, 1.0);
        let s = brute_force_allocate(&ScheduleRequest {
            ir: &ir,
            profile: &p,
            max_cores: 3,
        })
        .unwrap();
        assert_eq!((s.makespan_ns, s.slots[0].core), (7, 0));
    }

    #[test]
    fn never_worse_than_list_schedule() {
        let (heft, opt) = both(&dag(&[2, 9, 9, 2, 1], &[(0, 1), (3, 2), (1, 4), (2, 4)]), 2, 1.0);
        assert!(opt <= heft);
    }

    #[test]
    fn too_large() {
        let ir = dag(&[1; 13], &[]);
        let p = profile(2, 0.0);
        assert!(matches!(
            brute_force_allocate(&ScheduleRequest {
                ir: &ir,
                profile: &p,
                max_cores: 2
            }),
            Err(ScheduleError::TooLarge { .. })
        ));
    }
}
