use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bench(case: &str, file: &str) -> PathBuf {
    root().join("benchmarks").join(case).join(file)
}

fn profile(name: &str) -> PathBuf {
    root().join("profiles").join(format!("{name}.xml"))
}

fn blxc(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_blxc"));
    cmd.env_remove("BLXC_REGISTRY");
    for a in args {
        cmd.arg(a);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn extract(case: &str, dir: &Path) -> PathBuf {
    let blx = dir.join(format!("{case}.blx"));
    let out = blxc(&[&"extract", &"--model", &bench(case, "toolbox.mdlx"), &"--out", &blx]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    blx
}

fn schedule_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("schedule.json")).unwrap()).unwrap()
}

const MINIMAL: &str = r#"<model name="m">
  <block name="u" kind="Inport"><param k="dtype" v="Scalar"/></block>
  <block name="g" kind="Gain"><param k="gain" v="2"/></block>
  <block name="y" kind="Outport"/>
  <line src="u:1" dst="g:1" dtype="Scalar"/>
  <line src="g:1" dst="y:1" dtype="Scalar"/>
</model>
"#;

const CUSTOM: &str = r#"<model name="m">
  <block name="u" kind="Inport"><param k="dtype" v="Scalar"/></block>
  <block name="d" kind="Toolbox(Doubler)" inputs="1" outputs="1"/>
  <block name="y" kind="Outport"/>
  <line src="u:1" dst="d:1" dtype="Scalar"/>
  <line src="d:1" dst="y:1" dtype="Scalar"/>
</model>
"#;

const DOUBLER: &str = r#"<toolbox>
  <expandable name="Doubler">
    <subsystem name="Doubler">
      <block name="x" kind="Inport"><param k="dtype" v="Scalar"/></block>
      <block name="g" kind="Gain"><param k="gain" v="2"/></block>
      <block name="y" kind="Outport"/>
      <line src="x:1" dst="g:1" dtype="Scalar"/>
      <line src="g:1" dst="y:1" dtype="Scalar"/>
    </subsystem>
  </expandable>
</toolbox>
"#;

#[test]
fn extract_minimal_and_rerun_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("m.mdlx");
    std::fs::write(&model, MINIMAL).unwrap();
    let a = blxc(&[&"extract", &"--model", &model]);
    let b = blxc(&[&"extract", &"--model", &model]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert!(stdout(&a).contains("<blx"));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn unknown_toolbox_kind_fails_and_custom_registry_fixes_it() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("m.mdlx");
    std::fs::write(&model, CUSTOM).unwrap();
    let out = blxc(&[&"extract", &"--model", &model]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("Doubler"), "{}", stderr(&out));

    let reg = tmp.path().join("registry.xml");
    std::fs::write(&reg, DOUBLER).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_blxc"))
        .env("BLXC_REGISTRY", &reg)
        .args(["extract", "--model"])
        .arg(&model)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("d_g"));
}

#[test]
fn sweep_prints_table_with_minimum_at_two_cores() {
    let tmp = tempfile::tempdir().unwrap();
    let blx = extract("trajectory_follower", tmp.path());
    let out = blxc(&[
        &"schedule",
        &"--blx",
        &blx,
        &"--profile",
        &profile("commheavy4"),
        &"--max-cores",
        &"1..4",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let rows: Vec<(usize, u64)> = text
        .lines()
        .skip(1)
        .take(4)
        .map(|l| {
            let w: Vec<&str> = l.split_whitespace().collect();
            (w[0].parse().unwrap(), w[1].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), [1, 2, 3, 4]);
    let min = rows.iter().map(|r| r.1).min().unwrap();
    let first_min = rows.iter().find(|r| r.1 == min).unwrap().0;
    assert_eq!(first_min, 2, "{text}");
    assert!(text.contains("best: max_cores 2"), "{text}");
}

#[test]
fn split_transform_uses_four_cores() {
    let tmp = tempfile::tempdir().unwrap();
    let blx = extract("random_downsample_filter", tmp.path());
    let dir = tmp.path().join("s");
    let out = blxc(&[
        &"schedule",
        &"--blx",
        &blx,
        &"--profile",
        &profile("uniform4"),
        &"--split",
        &"transform=4",
        &"--out",
        &dir,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(schedule_json(&dir)["core_count_used"], 4);
    assert!(std::fs::read_to_string(dir.join("ir.blx")).unwrap().contains("transform_shard4"));
    assert!(std::fs::read_to_string(dir.join("schedule.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn split_factor_is_capped_at_core_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let blx = extract("random_downsample_filter", tmp.path());
    let dir = tmp.path().join("s");
    let args: [&dyn AsRef<std::ffi::OsStr>; 11] = [
        &"schedule",
        &"--blx",
        &blx,
        &"--profile",
        &profile("uniform4"),
        &"--split",
        &"transform=8",
        &"--max-cores",
        &"2",
        &"--out",
        &dir,
    ];
    let out = blxc(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ir = std::fs::read_to_string(dir.join("ir.blx")).unwrap();
    assert!(ir.contains("transform_shard2") && !ir.contains("transform_shard3"));

    let mut uncapped: Vec<&dyn AsRef<std::ffi::OsStr>> = args.to_vec();
    uncapped.push(&"--no-cap");
    let out = blxc(&uncapped);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(std::fs::read_to_string(dir.join("ir.blx")).unwrap().contains("transform_shard8"));
}

#[test]
fn zero_cores_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blx = extract("trajectory_follower", tmp.path());
    let out = blxc(&[&"schedule", &"--blx", &blx, &"--profile", &profile("uniform4"), &"--max-cores", &"0"]);
    assert_eq!(code(&out), 2);
    let out = blxc(&[&"schedule", &"--blx", &blx, &"--profile", &profile("uniform4"), &"--max-cores", &"9"]);
    assert_eq!(code(&out), 2);
    let out = blxc(&[&"schedule", &"--blx", &blx]);
    assert_eq!(code(&out), 2);
}

#[test]
fn codegen_writes_bundle_and_is_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let blx = extract("voxel_grid_downsample_filter", tmp.path());
    let sched = tmp.path().join("s");
    let out = blxc(&[&"schedule", &"--blx", &blx, &"--profile", &profile("uniform4"), &"--out", &sched]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut dirs = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        let out = blxc(&[
            &"codegen",
            &"--blx",
            &sched.join("ir.blx"),
            &"--schedule",
            &sched.join("schedule.json"),
            &"--out",
            &dir,
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        dirs.push(dir);
    }
    let files = ["model.c", "tasks.c", "globals.h", "manifest.json", "schedule.svg", "blx_rt.h", "blx_rt.c"];
    for f in files {
        let a = std::fs::read(dirs[0].join(f)).unwrap();
        let b = std::fs::read(dirs[1].join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn missing_schedule_file_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let blx = extract("trajectory_follower", tmp.path());
    let out = blxc(&[
        &"codegen",
        &"--blx",
        &blx,
        &"--schedule",
        &tmp.path().join("absent.json"),
        &"--out",
        &tmp.path().join("c"),
    ]);
    assert_ne!(code(&out), 0);
    assert!(stderr(&out).contains("absent.json"));
}

#[test]
fn simulate_variants_agree_and_compare_reports_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let case = "trajectory_follower";
    let mut traces = Vec::new();
    for variant in ["toolbox.mdlx", "expanded.mdlx"] {
        let out_file = tmp.path().join(format!("{variant}.jsonl"));
        let out = blxc(&[
            &"simulate",
            &"--model",
            &bench(case, variant),
            &"--input",
            &bench(case, "input.jsonl"),
            &"--out",
            &out_file,
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        traces.push(out_file);
    }
    let out = blxc(&[&"compare", &traces[0], &traces[1]]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let out = blxc(&[&"compare", &traces[0], &bench(case, "expected.jsonl")]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));

    let text = std::fs::read_to_string(&traces[0]).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut step: serde_json::Value = serde_json::from_str(&lines[7]).unwrap();
    let v = step["steer"].as_f64().unwrap();
    step["steer"] = serde_json::json!(v + 1e-9);
    lines[7] = step.to_string();
    let perturbed = tmp.path().join("perturbed.jsonl");
    std::fs::write(&perturbed, lines.join("\n") + "\n").unwrap();

    let out = blxc(&[&"compare", &traces[0], &perturbed, &"--tol", &"0"]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("step 7 port steer index 0"), "{}", stdout(&out));
    let out = blxc(&[&"compare", &traces[0], &perturbed, &"--tol", &"1e-6"]);
    assert_eq!(code(&out), 0);
    let out = blxc(&[&"compare", &traces[0], &perturbed, &"--tol", &"-1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_blx_with_random_inputs_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let blx = extract("trajectory_follower", tmp.path());
    let run = || blxc(&[&"simulate", &"--blx", &blx, &"--seed", &"5", &"--steps", &"12"]);
    let (a, b) = (run(), run());
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout(&a).lines().count(), 12);
}

#[test]
fn stats_counts_blocks() {
    let out = blxc(&[&"stats", &"--model", &bench("random_downsample_filter", "toolbox.mdlx")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stats: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(stats["block_count"], 4);
    assert_eq!(stats["toolbox_block_count"], 2);
}

#[test]
fn gantt_renders_a_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let blx = extract("trajectory_follower", tmp.path());
    let dir = tmp.path().join("s");
    let out = blxc(&[&"schedule", &"--blx", &blx, &"--profile", &profile("commheavy4"), &"--out", &dir]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = blxc(&[&"gantt", &"--schedule", &dir.join("schedule.json")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(out.stdout, std::fs::read(dir.join("schedule.svg")).unwrap());
}

#[test]
fn no_subcommand_is_a_usage_error() {
    assert_eq!(code(&blxc(&[])), 2);
    assert_eq!(code(&blxc(&[&"frobnicate"])), 2);
    assert_eq!(code(&blxc(&[&"--help"])), 0);
}
