//! `blxc`: extract, schedule, generate and check block-diagram models.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use blxc_core::codegen::{describe, emit_bundle, emit_gantt, install_runtime};
use blxc_core::extractor::{emit_blx, extract, parse_blx, FlatIR};
use blxc_core::hwprofile::{bind_costs, parse_profile, CostTable, HardwareProfile};
use blxc_core::model::{model_stats, parse_model, Model};
use blxc_core::scheduler::{allocate, makespan_report, split_data_parallel, Schedule, ScheduleRequest};
use blxc_core::simulator::{compare_traces, interpret, Target, Trace};
use blxc_core::synth::{ir_inputs, model_inputs, random_trace, rng};
use blxc_core::toolbox::ToolboxRegistry;
use clap::{Args, Parser, Subcommand};

const EXIT_DIFF: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_PIPELINE: u8 = 3;

/// Steps simulated when neither `--steps` nor an input trace says otherwise.
const DEFAULT_STEPS: usize = 100;

#[derive(Parser)]
#[command(name = "blxc", version, about = "Parallelizing toolchain for hierarchical block-diagram models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Flatten a model into BLX.
    Extract {
        #[arg(long)]
        model: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Allocate a BLX model on a hardware profile.
    Schedule(ScheduleArgs),
    /// Emit sequential and parallel C for a scheduled BLX model.
    Codegen {
        #[arg(long)]
        blx: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a model or BLX on an input trace and print the output trace.
    Simulate {
        #[command(flatten)]
        source: Source,
        /// JSONL input trace; random inputs from `--seed` when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two traces; exit 1 on a difference.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Absolute tolerance; 0 compares bit patterns.
        #[arg(long, default_value_t = 0.0)]
        tol: f64,
    },
    /// Block, line and code counts of a model.
    Stats {
        #[arg(long)]
        model: PathBuf,
    },
    /// Render a schedule as an SVG Gantt chart.
    Gantt {
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    blx: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long)]
    blx: PathBuf,
    #[arg(long)]
    profile: PathBuf,
    /// Core budget `N`, or a sweep `A..B` (inclusive). Defaults to every
    /// core of the profile.
    #[arg(long, value_parser = parse_cores)]
    max_cores: Option<CoreRange>,
    /// Data-parallel split `NAME=K`; repeatable.
    #[arg(long, value_parser = parse_split)]
    split: Vec<(String, usize)>,
    /// Keep split factors above the core budget.
    #[arg(long)]
    no_cap: bool,
    /// Directory for ir.blx, schedule.json and schedule.svg.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug)]
struct CoreRange {
    lo: usize,
    hi: usize,
}

fn parse_cores(s: &str) -> Result<CoreRange, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad core count `{t}`"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
        None => (num(s)?, num(s)?),
    };
    if lo == 0 {
        return Err("core count must be at least 1".into());
    }
    if hi < lo {
        return Err(format!("empty range `{s}`"));
    }
    Ok(CoreRange { lo, hi })
}

fn parse_split(s: &str) -> Result<(String, usize), String> {
    let (name, k) = s.split_once('=').ok_or_else(|| format!("expected NAME=K, got `{s}`"))?;
    let k: usize = k.parse().map_err(|_| format!("bad split factor `{k}`"))?;
    if name.is_empty() || k == 0 {
        return Err(format!("expected NAME=K with K >= 1, got `{s}`"));
    }
    Ok((name.to_string(), k))
}

enum Failure {
    Usage(String),
    Diff,
    Pipeline(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Pipeline(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn registry() -> anyhow::Result<ToolboxRegistry> {
    Ok(ToolboxRegistry::from_env()?)
}

fn load_model(path: &Path) -> anyhow::Result<Model> {
    parse_model(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_blx(path: &Path) -> anyhow::Result<FlatIR> {
    parse_blx(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_schedule(path: &Path) -> anyhow::Result<Schedule> {
    Schedule::from_json(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_extract(model: &Path, out: Option<&Path>) -> Outcome {
    let reg = registry()?;
    let mut ir = extract(&load_model(model)?, &reg)?;
    bind_costs(&mut ir, &CostTable::builtin(), &reg)?;
    emit(out, &emit_blx(&ir))?;
    Ok(())
}

/// The IR scheduled under a budget of `cores`: costs bound, splits applied.
fn scheduled_ir(
    ir: &FlatIR,
    splits: &[(String, usize)],
    cores: usize,
    cap: bool,
    reg: &ToolboxRegistry,
) -> anyhow::Result<FlatIR> {
    let table = CostTable::builtin();
    let mut ir = ir.clone();
    if ir.blocks.iter().any(|b| b.cost_hint.is_none()) {
        bind_costs(&mut ir, &table, reg)?;
    }
    for (name, k) in splits {
        let k = if cap { (*k).min(cores) } else { *k };
        ir = split_data_parallel(&ir, name, k, reg, &table)?;
    }
    Ok(ir)
}

fn cmd_schedule(args: &ScheduleArgs) -> Outcome {
    let reg = registry()?;
    let ir = load_blx(&args.blx)?;
    let profile: HardwareProfile = parse_profile(&read(&args.profile)?)?;
    let available = profile.cores.len();
    let range = args.max_cores.unwrap_or(CoreRange { lo: available, hi: available });
    if range.hi > available {
        return Err(Failure::Usage(format!(
            "--max-cores {} exceeds the {available} cores of profile `{}`",
            range.hi, profile.name
        )));
    }
    let mut table = String::from("max_cores  makespan_ns  cores_used  comm_bytes\n");
    let mut best: Option<(FlatIR, Schedule)> = None;
    for cores in range.lo..=range.hi {
        let scheduled = scheduled_ir(&ir, &args.split, cores, !args.no_cap, &reg)?;
        let schedule = allocate(&ScheduleRequest {
            ir: &scheduled,
            profile: &profile,
            max_cores: cores,
        })?;
        let report = makespan_report(&schedule);
        let _ = writeln!(
            table,
            "{cores:>9}  {:>11}  {:>10}  {:>10}",
            report.makespan_ns, schedule.core_count_used, report.comm_volume_bytes
        );
        if best.as_ref().is_none_or(|(_, b)| schedule.makespan_ns < b.makespan_ns) {
            best = Some((scheduled, schedule));
        }
    }
    let (scheduled, schedule) = best.expect("non-empty range");
    print!("{table}");
    if range.lo < range.hi {
        println!("best: max_cores {} makespan_ns {}", schedule.max_cores, schedule.makespan_ns);
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        emit(Some(&dir.join("ir.blx")), &emit_blx(&scheduled))?;
        emit(Some(&dir.join("schedule.json")), &schedule.to_json())?;
        emit(Some(&dir.join("schedule.svg")), &emit_gantt(&schedule))?;
    }
    Ok(())
}

fn cmd_codegen(blx: &Path, schedule: &Path, out: &Path) -> Outcome {
    let reg = registry()?;
    let ir = load_blx(blx)?;
    let schedule = load_schedule(schedule)?;
    if schedule.ir != ir.name {
        return Err(Failure::Pipeline(anyhow::anyhow!(
            "schedule is for `{}`, BLX is `{}`",
            schedule.ir,
            ir.name
        )));
    }
    let bundle = emit_bundle(&ir, &schedule, &reg)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    bundle.write_to(out)?;
    install_runtime(out)?;
    print!("{}", describe(&bundle));
    Ok(())
}

fn cmd_simulate(
    source: &Source,
    input: Option<&Path>,
    steps: Option<usize>,
    seed: u64,
    out: Option<&Path>,
) -> Outcome {
    let reg = registry()?;
    let model;
    let ir;
    let (target, ports) = match (&source.model, &source.blx) {
        (Some(path), _) => {
            model = load_model(path)?;
            (Target::Model(&model), model_inputs(&model))
        }
        (_, Some(path)) => {
            ir = load_blx(path)?;
            (Target::Ir(&ir), ir_inputs(&ir))
        }
        _ => unreachable!("clap requires one source"),
    };
    let inputs = match input {
        Some(path) => Trace::from_jsonl(&read(path)?)?,
        None => random_trace(&mut rng(seed), &ports, steps.unwrap_or(DEFAULT_STEPS)),
    };
    let steps = steps.unwrap_or(inputs.len());
    if steps > inputs.len() {
        return Err(Failure::Usage(format!("--steps {steps} exceeds the {} input steps", inputs.len())));
    }
    let trace = interpret(target, &reg, &inputs, steps)?;
    emit(out, &trace.to_jsonl())?;
    Ok(())
}

fn cmd_compare(a: &Path, b: &Path, tol: f64) -> Outcome {
    if !(tol >= 0.0) {
        return Err(Failure::Usage(format!("--tol must be non-negative, got {tol}")));
    }
    let ta = Trace::from_jsonl(&read(a)?).with_context(|| format!("parsing {}", a.display()))?;
    let tb = Trace::from_jsonl(&read(b)?).with_context(|| format!("parsing {}", b.display()))?;
    let diff = compare_traces(&ta, &tb, tol)?;
    match diff.first {
        None => {
            println!("traces match ({} steps)", ta.len());
            Ok(())
        }
        Some(d) => {
            let show = |x: Option<f64>| x.map_or("<missing>".to_string(), |v| format!("{v:?}"));
            println!(
                "first divergence: step {} port {} index {}: {} vs {}",
                d.step,
                d.port,
                d.index,
                show(d.a),
                show(d.b)
            );
            println!("{} differing values", diff.differing_values);
            Err(Failure::Diff)
        }
    }
}

fn cmd_stats(model: &Path) -> Outcome {
    let stats = model_stats(&load_model(model)?);
    println!("{}", serde_json::to_string_pretty(&stats).context("serializing stats")?);
    Ok(())
}

fn cmd_gantt(schedule: &Path, out: Option<&Path>) -> Outcome {
    let schedule = load_schedule(schedule)?;
    schedule.check_shape()?;
    emit(out, &emit_gantt(&schedule))?;
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Extract { model, out } => cmd_extract(model, out.as_deref()),
        Command::Schedule(args) => cmd_schedule(args),
        Command::Codegen { blx, schedule, out } => cmd_codegen(blx, schedule, out),
        Command::Simulate {
            source,
            input,
            steps,
            seed,
            out,
        } => cmd_simulate(source, input.as_deref(), *steps, *seed, out.as_deref()),
        Command::Compare { a, b, tol } => cmd_compare(a, b, *tol),
        Command::Stats { model } => cmd_stats(model),
        Command::Gantt { schedule, out } => cmd_gantt(schedule, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Diff) => ExitCode::from(EXIT_DIFF),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_PIPELINE)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_ranges() {
        let r = parse_cores("1..4").unwrap();
        assert_eq!((r.lo, r.hi), (1, 4));
        let r = parse_cores("2..=3").unwrap();
        assert_eq!((r.lo, r.hi), (2, 3));
        let r = parse_cores("3").unwrap();
        assert_eq!((r.lo, r.hi), (3, 3));
        assert!(parse_cores("0").is_err());
        assert!(parse_cores("3..2").is_err());
        assert!(parse_cores("x").is_err());
    }

    #[test]
    fn split_directives() {
        assert_eq!(parse_split("transform=4").unwrap(), ("transform".into(), 4));
        assert!(parse_split("transform").is_err());
        assert!(parse_split("transform=0").is_err());
        assert!(parse_split("=2").is_err());
    }
}
