use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::{Problem, Schedule, ScheduleError, ScheduleRequest};

/// How a per-core (or per-link) quantity is summarized for ranking.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Agg {
    Mean,
    Min,
    Max,
    Zero,
}

impl Agg {
    fn of(self, xs: impl Iterator<Item = u64>) -> f64 {
        let xs: Vec<f64> = xs.map(|x| x as f64).collect();
        if xs.is_empty() {
            return 0.0;
        }
        match self {
            Agg::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
            Agg::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
            Agg::Max => xs.iter().copied().fold(0.0, f64::max),
            Agg::Zero => 0.0,
        }
    }
}

/// Priority orders tried by [`allocate`]: (execution time, communication)
/// summaries for the upward rank. The first is classic HEFT.
const RANKINGS: [(Agg, Agg); 4] = [
    (Agg::Mean, Agg::Mean),
    (Agg::Min, Agg::Zero),
    (Agg::Max, Agg::Max),
    (Agg::Min, Agg::Mean),
];

/// Upward ranks: summarized execution time plus the heaviest (summarized
/// communication + rank) over successors. `(Mean, Mean)` is HEFT's rank.
pub(crate) fn upward_ranks(p: &Problem, order: &[usize], exec: Agg, comm: Agg) -> Vec<f64> {
    let link_cost: Vec<f64> = p
        .comm
        .iter()
        .map(|m| {
            let off = (0..p.cores).flat_map(|i| (0..p.cores).filter(move |&j| j != i).map(move |j| m[i][j]));
            comm.of(off)
        })
        .collect();
    let mut rank = vec![0.0; p.names.len()];
    for &b in order.iter().rev() {
        let w = exec.of(p.times[b].iter().copied());
        let tail = p.succs[b]
            .iter()
            .map(|&(s, v)| link_cost[v] + rank[s])
            .fold(0.0, f64::max);
        rank[b] = w + tail;
    }
    rank
}

/// Earliest start of a `len`-long job at or after `ready` on a core whose
/// busy intervals are `busy` (sorted, disjoint).
fn earliest_gap(busy: &[(u64, u64)], ready: u64, len: u64) -> u64 {
    let mut t = ready;
    for &(s, f) in busy {
        if t + len <= s {
            return t;
        }
        t = t.max(f);
    }
    t
}

fn topo(p: &Problem) -> Vec<usize> {
    let mut indeg: Vec<usize> = p.preds.iter().map(Vec::len).collect();
    let mut ready: BTreeSet<usize> = (0..indeg.len()).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::new();
    while let Some(b) = ready.pop_first() {
        order.push(b);
        for &(s, _) in &p.succs[b] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
    }
    order
}

/// List scheduling. Ready blocks are taken by descending `rank` (ties by
/// uname) and placed on the core giving the earliest finish, filling idle
/// gaps when one fits (ties to the lower core id). With `fixed`, each block
/// goes to its given core instead. Returns (assignment, start times,
/// makespan).
fn list_schedule(p: &Problem, rank: &[f64], fixed: Option<&[usize]>) -> (Vec<usize>, Vec<u64>, u64) {
    let n = p.names.len();
    let mut indeg: Vec<usize> = p.preds.iter().map(Vec::len).collect();
    let mut ready: Vec<usize> = (0..n).filter(|&b| indeg[b] == 0).collect();
    let mut assign = vec![0; n];
    let mut start = vec![0; n];
    let mut finish = vec![0; n];
    let mut busy: Vec<Vec<(u64, u64)>> = vec![Vec::new(); p.cores];
    while !ready.is_empty() {
        let (pos, &b) = ready
            .iter()
            .enumerate()
            .max_by(|(_, &x), (_, &y)| {
                rank[x]
                    .partial_cmp(&rank[y])
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| p.names[y].cmp(&p.names[x]))
            })
            .expect("non-empty");
        ready.swap_remove(pos);
        let candidates = match fixed {
            Some(a) => a[b]..a[b] + 1,
            None => 0..p.cores,
        };
        let mut best: Option<(u64, usize, u64)> = None;
        for c in candidates {
            let r = p.ready_time(b, c, &assign, &finish);
            let s = earliest_gap(&busy[c], r, p.times[b][c]);
            let f = s + p.times[b][c];
            if best.is_none_or(|(bf, _, _)| f < bf) {
                best = Some((f, c, s));
            }
        }
        let (f, c, s) = best.expect("at least one core");
        assign[b] = c;
        start[b] = s;
        finish[b] = f;
        let at = busy[c].partition_point(|&(bs, _)| bs < s);
        busy[c].insert(at, (s, f));
        for &(succ, _) in &p.succs[b] {
            indeg[succ] -= 1;
            if indeg[succ] == 0 {
                ready.push(succ);
            }
        }
    }
    let makespan = finish.iter().copied().max().unwrap_or(0);
    (assign, start, makespan)
}

/// Upper bound on improvement passes of [`refine`].
const REFINE_PASSES: usize = 16;

/// Block placements one [`refine`] call may spend re-timing candidates.
const REFINE_BUDGET: usize = 100_000;

/// First-improvement local search over single-block moves, each candidate
/// assignment re-timed by [`list_schedule`].
fn refine(p: &Problem, rank: &[f64], mut best: (Vec<usize>, Vec<u64>, u64)) -> (Vec<usize>, Vec<u64>, u64) {
    let n = p.names.len();
    let mut evals = REFINE_BUDGET / n.max(1);
    for _ in 0..REFINE_PASSES {
        let mut improved = false;
        for b in 0..n {
            for c in 0..p.cores {
                if c == best.0[b] {
                    continue;
                }
                if evals == 0 {
                    return best;
                }
                evals -= 1;
                let mut trial = best.0.clone();
                trial[b] = c;
                let (assign, start, makespan) = list_schedule(p, rank, Some(&trial));
                if makespan < best.2 {
                    best = (assign, start, makespan);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    best
}

/// HEFT list scheduling followed by a move-based refinement, repeated for
/// several rank summaries, also refining from the all-on-the-fastest-core
/// placement, and on the first 1, 2, .., `max_cores` cores; the
/// shortest schedule wins (ties to fewer cores, then to the earlier
/// ranking). Adding cores therefore never lengthens the result.
pub fn allocate(req: &ScheduleRequest<'_>) -> Result<Schedule, ScheduleError> {
    Problem::new(req)?;
    let mut best: Option<(Problem, Vec<usize>, Vec<u64>, u64)> = None;
    for cores in 1..=req.max_cores {
        let p = Problem::new(&ScheduleRequest { max_cores: cores, ..*req })?;
        let order = topo(&p);
        let fastest = (0..cores)
            .min_by_key(|&c| p.times.iter().map(|t| t[c]).sum::<u64>())
            .expect("cores >= 1");
        let mut here: Option<(Vec<usize>, Vec<u64>, u64)> = None;
        for (exec, comm) in RANKINGS {
            let rank = upward_ranks(&p, &order, exec, comm);
            let seeds = [
                list_schedule(&p, &rank, None),
                list_schedule(&p, &rank, Some(&vec![fastest; p.names.len()])),
            ];
            for seed in seeds {
                let found = refine(&p, &rank, seed);
                if here.as_ref().is_none_or(|h| found.2 < h.2) {
                    here = Some(found);
                }
            }
        }
        let (assign, start, makespan) = here.expect("rankings are non-empty");
        if best.as_ref().is_none_or(|b| makespan < b.3) {
            best = Some((p, assign, start, makespan));
        }
    }
    let (p, assign, start, _) = best.expect("max_cores >= 1");
    Ok(p.into_schedule(req, &assign, &start))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{dag, profile};
    use super::*;

    fn run(ir: &crate::extractor::FlatIR, cores: usize, fixed: f64) -> Schedule {
        let p = profile(cores.max(2), fixed);
        let s = allocate(&ScheduleRequest {
            ir,
            profile: &p,
            max_cores: cores,
        })
        .unwrap();
        s.validate(ir, &p).unwrap();
        s
    }

    #[test]
    fn independent_pair_runs_in_parallel() {
        let s = run(&dag(&[10, 10], &[]), 2, 0.0);
        assert_eq!((s.makespan_ns, s.core_count_used), (10, 2));
    }

    #[test]
    fn chain_stays_on_one_core() {
        let s = run(&dag(&[10, 10], &[(0, 1)]), 2, 5.0);
        assert_eq!((s.makespan_ns, s.core_count_used), (20, 1));
        assert!(s.comm_events.is_empty());
    }

    #[test]
    fn one_core_is_the_sum() {
        let s = run(&dag(&[3, 4, 5, 6], &[(0, 1), (0, 2), (1, 3), (2, 3)]), 1, 2.0);
        assert_eq!(s.makespan_ns, 18);
    }

    #[test]
    fn insertion_fills_gaps() {
        assert_eq!(earliest_gap(&[(0, 5), (10, 20)], 0, 5), 5);
        assert_eq!(earliest_gap(&[(0, 5), (10, 20)], 0, 6), 20);
        assert_eq!(earliest_gap(&[], 7, 1), 7);
    }

    #[test]
    fn deterministic() {
        let ir = dag(&[5, 3, 8, 2, 7], &[(0, 2), (1, 2), (2, 3), (1, 4)]);
        assert_eq!(run(&ir, 3, 4.0), run(&ir, 3, 4.0));
    }
}
