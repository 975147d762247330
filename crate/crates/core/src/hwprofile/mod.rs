//! Hardware profiles (cores, per-op-class cycle costs, inter-core links) and
//! static execution-time estimates.

mod cost;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::extractor::FlatBlock;
use crate::xml::{self, Element, Writer};

pub use cost::{bind_costs, block_dims, CostError, CostHint, CostTable, Formula};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpClass {
    Arith,
    Trig,
    Mem,
    Cmp,
}

impl OpClass {
    pub const ALL: [OpClass; 4] = [OpClass::Arith, OpClass::Trig, OpClass::Mem, OpClass::Cmp];

    pub fn name(self) -> &'static str {
        match self {
            OpClass::Arith => "arith",
            OpClass::Trig => "trig",
            OpClass::Mem => "mem",
            OpClass::Cmp => "cmp",
        }
    }
}

impl fmt::Display for OpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpClass::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| format!("unknown op class `{s}`"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error(transparent)]
    Syntax(#[from] xml::XmlError),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("core {core} has no cycle count for op class `{class}`")]
    MissingOpClass { core: usize, class: OpClass },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Core {
    pub id: usize,
    pub clock_hz: f64,
    pub cycles_per_op: BTreeMap<OpClass, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub fixed_ns: f64,
    pub per_byte_ns: f64,
}

impl Link {
    pub const FREE: Link = Link {
        fixed_ns: 0.0,
        per_byte_ns: 0.0,
    };
}

/// Ordered-pair link costs; `links[from][to]`. The diagonal is free.
#[derive(Debug, Clone, PartialEq)]
pub struct CommMatrix {
    pub links: Vec<Vec<Link>>,
}

impl CommMatrix {
    pub fn uniform(cores: usize, link: Link) -> Self {
        let links = (0..cores)
            .map(|i| (0..cores).map(|j| if i == j { Link::FREE } else { link }).collect())
            .collect();
        CommMatrix { links }
    }

    pub fn link(&self, from: usize, to: usize) -> Link {
        if from == to {
            Link::FREE
        } else {
            self.links[from][to]
        }
    }
}

pub const DEFAULT_DISPATCH_NS: u64 = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct HardwareProfile {
    pub name: String,
    pub cores: Vec<Core>,
    pub comm: CommMatrix,
    /// Fixed overhead added to every block execution.
    pub dispatch_ns: u64,
}

/// Rounds a non-negative ns value up, treating values within 1e-9 relative
/// of an integer as that integer so exact products do not gain a tick from
/// representation error.
pub fn ceil_ns(x: f64) -> u64 {
    if !(x > 0.0) {
        return 0;
    }
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

/// Execution time of `hint` on `core` in ns, rounded up, plus dispatch.
pub fn hint_time(hint: &CostHint, core: &Core, dispatch_ns: u64) -> u64 {
    let cycles: f64 = OpClass::ALL
        .into_iter()
        .map(|c| hint.get(c) as f64 * core.cycles_per_op[&c])
        .sum();
    ceil_ns(cycles * 1e9 / core.clock_hz) + dispatch_ns
}

pub fn estimate_block_time(block: &FlatBlock, core: &Core, dispatch_ns: u64) -> Result<u64, CostError> {
    let hint = block
        .cost_hint
        .as_ref()
        .ok_or_else(|| CostError::UnboundCost(block.uname.clone()))?;
    Ok(hint_time(hint, core, dispatch_ns))
}

pub fn estimate_comm_time(bytes: u64, from: usize, to: usize, comm: &CommMatrix) -> u64 {
    if from == to {
        return 0;
    }
    let link = comm.link(from, to);
    ceil_ns(link.fixed_ns + bytes as f64 * link.per_byte_ns)
}

impl HardwareProfile {
    pub fn block_time(&self, block: &FlatBlock, core: usize) -> Result<u64, CostError> {
        estimate_block_time(block, &self.cores[core], self.dispatch_ns)
    }

    pub fn comm_time(&self, bytes: u64, from: usize, to: usize) -> u64 {
        estimate_comm_time(bytes, from, to, &self.comm)
    }

    pub fn to_xml(&self) -> String {
        let mut w = Writer::new();
        let dispatch = self.dispatch_ns.to_string();
        w.start("shim", &[("name", &self.name), ("dispatchNs", &dispatch)]);
        for core in &self.cores {
            let id = core.id.to_string();
            let clock = core.clock_hz.to_string();
            w.start("core", &[("id", &id), ("clockHz", &clock)]);
            for (class, cycles) in &core.cycles_per_op {
                let cycles = cycles.to_string();
                w.empty("cpi", &[("class", class.name()), ("cycles", &cycles)]);
            }
            w.end("core");
        }
        for (i, row) in self.comm.links.iter().enumerate() {
            for (j, link) in row.iter().enumerate() {
                if i == j {
                    continue;
                }
                let (from, to) = (i.to_string(), j.to_string());
                let (fixed, per) = (link.fixed_ns.to_string(), link.per_byte_ns.to_string());
                w.empty(
                    "link",
                    &[("from", &from), ("to", &to), ("fixedNs", &fixed), ("perByteNs", &per)],
                );
            }
        }
        w.end("shim");
        w.finish()
    }
}

fn schema(msg: impl Into<String>) -> ProfileError {
    ProfileError::Schema(msg.into())
}

fn num_attr(el: &Element, key: &str) -> Result<f64, ProfileError> {
    let text = el
        .attr(key)
        .ok_or_else(|| schema(format!("<{}> needs `{key}`", el.name)))?;
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| schema(format!("`{key}` must be a number, got `{text}`")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(schema(format!("`{key}` must be finite and non-negative, got `{text}`")));
    }
    Ok(v)
}

fn index_attr(el: &Element, key: &str) -> Result<usize, ProfileError> {
    let text = el
        .attr(key)
        .ok_or_else(|| schema(format!("<{}> needs `{key}`", el.name)))?;
    text.trim()
        .parse()
        .map_err(|_| schema(format!("`{key}` must be a core index, got `{text}`")))
}

/// Parses a `<shim>` profile. Links not listed fall back to
/// `<defaultLink>` when present, otherwise the profile is rejected.
pub fn parse_profile(text: &str) -> Result<HardwareProfile, ProfileError> {
    let root = xml::parse_document(text)?;
    if root.name != "shim" {
        return Err(schema(format!("root element must be <shim>, found <{}>", root.name)));
    }
    let name = root.attr("name").ok_or_else(|| schema("<shim> needs a name"))?.to_string();
    let dispatch_ns = match root.attr("dispatchNs") {
        None => DEFAULT_DISPATCH_NS,
        Some(t) => t
            .trim()
            .parse()
            .map_err(|_| schema(format!("dispatchNs must be a whole number of ns, got `{t}`")))?,
    };
    let mut cores = Vec::new();
    for (i, el) in root.children_named("core").enumerate() {
        let id = index_attr(el, "id")?;
        if id != i {
            return Err(schema(format!("core ids must be 0..n in order; found {id} at position {i}")));
        }
        let clock_hz = num_attr(el, "clockHz")?;
        if clock_hz <= 0.0 {
            return Err(schema(format!("core {id} clockHz must be positive")));
        }
        let mut cycles_per_op = BTreeMap::new();
        for cpi in el.children_named("cpi") {
            let class: OpClass = cpi
                .attr("class")
                .ok_or_else(|| schema("<cpi> needs a class"))?
                .parse()
                .map_err(schema)?;
            let cycles = num_attr(cpi, "cycles")?;
            if cycles <= 0.0 {
                return Err(schema(format!("core {id} {class} cycles must be positive")));
            }
            if cycles_per_op.insert(class, cycles).is_some() {
                return Err(schema(format!("core {id} lists {class} twice")));
            }
        }
        for class in OpClass::ALL {
            if !cycles_per_op.contains_key(&class) {
                return Err(ProfileError::MissingOpClass { core: id, class });
            }
        }
        cores.push(Core {
            id,
            clock_hz,
            cycles_per_op,
        });
    }
    if cores.is_empty() {
        return Err(schema("a profile needs at least one core"));
    }
    let n = cores.len();
    let default = root
        .children_named("defaultLink")
        .next()
        .map(|el| -> Result<Link, ProfileError> {
            Ok(Link {
                fixed_ns: num_attr(el, "fixedNs")?,
                per_byte_ns: num_attr(el, "perByteNs")?,
            })
        })
        .transpose()?;
    let mut links: Vec<Vec<Option<Link>>> = vec![vec![None; n]; n];
    for el in root.children_named("link") {
        let (from, to) = (index_attr(el, "from")?, index_attr(el, "to")?);
        if from >= n || to >= n {
            return Err(schema(format!("link {from}->{to} names a missing core")));
        }
        if from == to {
            return Err(schema(format!("link {from}->{to} is on the diagonal, which is always free")));
        }
        let link = Link {
            fixed_ns: num_attr(el, "fixedNs")?,
            per_byte_ns: num_attr(el, "perByteNs")?,
        };
        if links[from][to].replace(link).is_some() {
            return Err(schema(format!("link {from}->{to} listed twice")));
        }
    }
    let mut matrix = Vec::with_capacity(n);
    for (i, row) in links.into_iter().enumerate() {
        let mut out = Vec::with_capacity(n);
        for (j, link) in row.into_iter().enumerate() {
            out.push(if i == j {
                Link::FREE
            } else {
                link.or(default)
                    .ok_or_else(|| schema(format!("no link cost for {i}->{j}")))?
            });
        }
        matrix.push(out);
    }
    for el in &root.children {
        if !matches!(el.name.as_str(), "core" | "link" | "defaultLink") {
            return Err(schema(format!("unexpected element <{}> in profile", el.name)));
        }
    }
    Ok(HardwareProfile {
        name,
        cores,
        comm: CommMatrix { links: matrix },
        dispatch_ns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn core(clock_hz: f64, arith: f64) -> Core {
        Core {
            id: 0,
            clock_hz,
            cycles_per_op: OpClass::ALL
                .into_iter()
                .map(|c| (c, if c == OpClass::Arith { arith } else { 1.0 }))
                .collect(),
        }
    }

    fn four_cores() -> String {
        let mut s = String::from("<shim name=\"u\">");
        for i in 0..4 {
            s += &format!(
                "<core id=\"{i}\" clockHz=\"1e9\"><cpi class=\"arith\" cycles=\"1\"/><cpi class=\"trig\" cycles=\"20\"/>\
                 <cpi class=\"mem\" cycles=\"1\"/><cpi class=\"cmp\" cycles=\"1\"/></core>"
            );
        }
        s + "<defaultLink fixedNs=\"50\" perByteNs=\"0.5\"/></shim>"
    }

    #[test]
    fn parses_uniform_profile() {
        let p = parse_profile(&four_cores()).unwrap();
        assert_eq!(p.cores.len(), 4);
        assert_eq!(p.dispatch_ns, DEFAULT_DISPATCH_NS);
        assert_eq!(p.comm_time(100, 0, 1), 100);
        assert_eq!(p.comm_time(100, 2, 2), 0);
        assert_eq!(p.comm_time(0, 3, 1), 50);
        let again = parse_profile(&p.to_xml()).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn asymmetric_links_accepted() {
        let text = four_cores().replace(
            "<defaultLink",
            "<link from=\"0\" to=\"1\" fixedNs=\"5\" perByteNs=\"0\"/><defaultLink",
        );
        let p = parse_profile(&text).unwrap();
        assert_eq!(p.comm_time(0, 0, 1), 5);
        assert_eq!(p.comm_time(0, 1, 0), 50);
    }

    #[test]
    fn rejects_bad_profiles() {
        assert!(matches!(parse_profile("<shim name=\"x\"/>"), Err(ProfileError::Schema(_))));
        let missing = four_cores().replace("<cpi class=\"cmp\" cycles=\"1\"/>", "");
        assert!(matches!(parse_profile(&missing), Err(ProfileError::MissingOpClass { .. })));
        let no_links = four_cores().replace("<defaultLink fixedNs=\"50\" perByteNs=\"0.5\"/>", "");
        assert!(matches!(parse_profile(&no_links), Err(ProfileError::Schema(_))));
        let diag = four_cores().replace(
            "<defaultLink",
            "<link from=\"1\" to=\"1\" fixedNs=\"5\" perByteNs=\"0\"/><defaultLink",
        );
        assert!(parse_profile(&diag).is_err());
    }

    #[test]
    fn block_time_arithmetic() {
        let hint = CostHint {
            arith: 1000,
            ..CostHint::default()
        };
        assert_eq!(hint_time(&hint, &core(1e9, 2.0), 0), 2000);
        assert_eq!(hint_time(&CostHint::default(), &core(1e9, 2.0), 20), 20);
        // 3 cycles at 2 GHz is 1.5 ns, rounded up
        let hint = CostHint {
            arith: 3,
            ..CostHint::default()
        };
        assert_eq!(hint_time(&hint, &core(2e9, 1.0), 0), 2);
    }

    #[test]
    fn ceil_snaps_representation_error() {
        assert_eq!(ceil_ns(0.1 * 3.0 * 10.0), 3);
        assert_eq!(ceil_ns(2.0000001), 3);
        assert_eq!(ceil_ns(0.0), 0);
    }
}
