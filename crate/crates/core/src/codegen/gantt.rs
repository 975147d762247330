//! SVG Gantt chart of a schedule: one lane per used core, one bar per
//! block, arrows for cross-core transfers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::scheduler::Schedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanttOptions {
    pub ns_per_px: f64,
    pub lane_height: u32,
    /// Width of the lane label column.
    pub label_width: u32,
}

impl Default for GanttOptions {
    fn default() -> Self {
        GanttOptions {
            ns_per_px: 10.0,
            lane_height: 24,
            label_width: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bar {
    pub block: String,
    pub start_ns: u64,
    pub finish_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lane {
    pub core: usize,
    pub bars: Vec<Bar>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrow {
    pub var: String,
    pub from_core: usize,
    pub to_core: usize,
    pub depart_ns: u64,
    pub arrive_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GanttChart {
    pub title: String,
    pub makespan_ns: u64,
    pub lanes: Vec<Lane>,
    pub arrows: Vec<Arrow>,
}

impl GanttChart {
    pub fn from_schedule(schedule: &Schedule) -> GanttChart {
        let mut lanes: BTreeMap<usize, Vec<Bar>> = BTreeMap::new();
        for s in &schedule.slots {
            lanes.entry(s.core).or_default().push(Bar {
                block: s.block.clone(),
                start_ns: s.start_ns,
                finish_ns: s.finish_ns,
            });
        }
        let lanes = lanes
            .into_iter()
            .map(|(core, mut bars)| {
                bars.sort_by(|a, b| (a.start_ns, a.finish_ns, &a.block).cmp(&(b.start_ns, b.finish_ns, &b.block)));
                Lane { core, bars }
            })
            .collect();
        let arrows = schedule
            .comm_events
            .iter()
            .map(|c| Arrow {
                var: c.var.clone(),
                from_core: c.from_core,
                to_core: c.to_core,
                depart_ns: c.depart_ns,
                arrive_ns: c.arrive_ns,
            })
            .collect();
        GanttChart {
            title: format!("{} on {}", schedule.ir, schedule.profile),
            makespan_ns: schedule.makespan_ns,
            lanes,
            arrows,
        }
    }

    pub fn to_svg(&self, opts: &GanttOptions) -> String {
        let lane_h = opts.lane_height as f64;
        let top = 20.0;
        let left = opts.label_width as f64;
        let x = |ns: u64| left + ns as f64 / opts.ns_per_px;
        let lane_y: BTreeMap<usize, f64> = self
            .lanes
            .iter()
            .enumerate()
            .map(|(i, l)| (l.core, top + i as f64 * lane_h))
            .collect();
        let width = x(self.makespan_ns) + 10.0;
        let height = top + self.lanes.len() as f64 * lane_h + 20.0;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}" font-family="monospace" font-size="10">"#
        );
        let _ = writeln!(s, "<title>{}</title>", escape(&self.title));
        s.push_str("<defs><marker id=\"head\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" orient=\"auto\"><path d=\"M0,0 L6,3 L0,6 z\" fill=\"#c0392b\"/></marker></defs>\n");
        let _ = writeln!(s, r#"<text x="2" y="12">makespan {} ns</text>"#, self.makespan_ns);
        for lane in &self.lanes {
            let y = lane_y[&lane.core];
            let _ = writeln!(s, r#"<g class="lane" data-core="{}">"#, lane.core);
            let _ = writeln!(
                s,
                r##"<rect class="track" x="{left:.1}" y="{y:.1}" width="{:.1}" height="{lane_h:.1}" fill="#f4f4f4"/>"##,
                x(self.makespan_ns) - left
            );
            let _ = writeln!(s, r#"<text x="2" y="{:.1}">core {}</text>"#, y + lane_h * 0.65, lane.core);
            for bar in &lane.bars {
                let (x0, x1) = (x(bar.start_ns), x(bar.finish_ns));
                let _ = writeln!(
                    s,
                    r##"<rect class="bar" x="{x0:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#5d8aa8" stroke="#20303c" stroke-width="0.5" data-block="{}" data-start-ns="{}" data-finish-ns="{}"><title>{} [{}, {}) ns</title></rect>"##,
                    y + 2.0,
                    x1 - x0,
                    lane_h - 4.0,
                    escape(&bar.block),
                    bar.start_ns,
                    bar.finish_ns,
                    escape(&bar.block),
                    bar.start_ns,
                    bar.finish_ns
                );
                let _ = writeln!(
                    s,
                    r#"<text class="label" x="{:.1}" y="{:.1}">{}</text>"#,
                    x0 + 2.0,
                    y + lane_h * 0.65,
                    escape(&bar.block)
                );
            }
            s.push_str("</g>\n");
        }
        for a in &self.arrows {
            let (Some(&y0), Some(&y1)) = (lane_y.get(&a.from_core), lane_y.get(&a.to_core)) else {
                continue;
            };
            let _ = writeln!(
                s,
                r##"<line class="comm" x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#c0392b" stroke-width="1" marker-end="url(#head)"><title>{} core {} to core {}</title></line>"##,
                x(a.depart_ns),
                y0 + lane_h / 2.0,
                x(a.arrive_ns),
                y1 + lane_h / 2.0,
                escape(&a.var),
                a.from_core,
                a.to_core
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && c != '\t' && c != '\n' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

pub fn emit_gantt(schedule: &Schedule) -> String {
    emit_gantt_with(schedule, &GanttOptions::default())
}

pub fn emit_gantt_with(schedule: &Schedule, opts: &GanttOptions) -> String {
    GanttChart::from_schedule(schedule).to_svg(opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::Slot;

    fn schedule(slots: &[(&str, usize, u64, u64)]) -> Schedule {
        Schedule {
            ir: "m".into(),
            profile: "p".into(),
            max_cores: 2,
            makespan_ns: slots.iter().map(|s| s.3).max().unwrap_or(0),
            core_count_used: 0,
            slots: slots
                .iter()
                .map(|&(b, core, start_ns, finish_ns)| Slot {
                    block: b.into(),
                    core,
                    start_ns,
                    finish_ns,
                })
                .collect(),
            comm_events: vec![],
        }
    }

    #[test]
    fn parallel_pair_has_two_lanes() {
        let c = GanttChart::from_schedule(&schedule(&[("a", 0, 0, 100), ("b", 1, 0, 80)]));
        assert_eq!(c.lanes.len(), 2);
        assert!(c.lanes.iter().all(|l| l.bars.len() == 1));
        let svg = c.to_svg(&GanttOptions::default());
        assert_eq!(svg.matches("class=\"bar\"").count(), 2);
        assert!(svg.contains(r#"x="64.0" y="22.0" width="10.0""#));
    }

    #[test]
    fn chain_on_one_core_is_adjacent() {
        let c = GanttChart::from_schedule(&schedule(&[("b", 0, 50, 90), ("a", 0, 0, 50)]));
        assert_eq!(c.lanes.len(), 1);
        let bars = &c.lanes[0].bars;
        assert_eq!((bars[0].block.as_str(), bars[0].finish_ns), ("a", 50));
        assert_eq!(bars[1].start_ns, 50);
    }

    #[test]
    fn labels_are_escaped() {
        let svg = emit_gantt(&schedule(&[("a<&>b", 0, 0, 10)]));
        assert!(svg.contains("a&lt;&amp;&gt;b"));
        assert!(!svg.contains("a<&>b"));
    }
}
