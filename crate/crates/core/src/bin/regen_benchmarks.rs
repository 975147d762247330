//! Rewrites the benchmark fixtures from their generators.
//!
//! Usage: `regen_benchmarks [ROOT]` (default: the workspace `benchmarks/`).

use std::path::PathBuf;
use std::process::ExitCode;

use blxc_core::benchmarks::{default_root, generate_case, CASES};
use blxc_core::toolbox::ToolboxRegistry;

fn main() -> ExitCode {
    let root = std::env::args_os().nth(1).map(PathBuf::from).unwrap_or_else(default_root);
    let registry = ToolboxRegistry::builtin();
    for name in CASES {
        let written = generate_case(name, &registry).and_then(|case| case.write(&root, &registry));
        match written {
            Ok(meta) => println!("{name}: {} steps", meta.steps),
            Err(e) => {
                eprintln!("regen_benchmarks: {e}");
                return ExitCode::from(3);
            }
        }
    }
    ExitCode::SUCCESS
}
