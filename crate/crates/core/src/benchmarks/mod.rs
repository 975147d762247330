//! The three driving-stack benchmark cases as on-disk fixtures:
//! `benchmarks/<case>/{toolbox.mdlx, expanded.mdlx, input.jsonl,
//! expected.jsonl, meta.json}`.
//!
//! Fixtures are produced by [`generate_case`] from fixed seeds; expected
//! traces come from the model interpreter only.

pub mod inputs;
mod models;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{parse_model, Model};
use crate::simulator::{interpret_model, SimError, Trace};
use crate::toolbox::ToolboxRegistry;

pub const VOXEL: &str = "voxel_grid_downsample_filter";
pub const RANDOM: &str = "random_downsample_filter";
pub const TRAJECTORY: &str = "trajectory_follower";
pub const CASES: [&str; 3] = [VOXEL, RANDOM, TRAJECTORY];

pub const FILES: [&str; 4] = ["toolbox.mdlx", "expanded.mdlx", "input.jsonl", "expected.jsonl"];

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error("fixture `{case}/{file}` does not match its recorded checksum")]
    FixtureCorrupt { case: String, file: String },
    #[error("unknown benchmark case `{0}`")]
    UnknownCase(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
    #[error("case `{case}`: {source}")]
    Sim {
        case: String,
        #[source]
        source: SimError,
    },
    #[error("case `{0}`: the toolbox and expanded variants disagree")]
    VariantMismatch(String),
}

/// Point-cloud front end shared by the downsample cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudParams {
    pub cap: usize,
    pub steps: usize,
    pub seed: u64,
    pub rpy: [f64; 3],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryModelParams {
    pub steps: usize,
    pub seed: u64,
    pub k: f64,
    pub eps: f64,
    pub limit: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub dt: f64,
    pub amax: f64,
    pub bmax: f64,
}

pub const STEPS: usize = 100;

pub const CLOUD: CloudParams = CloudParams {
    cap: 10_000,
    steps: STEPS,
    seed: 0,
    rpy: [0.01, -0.02, 0.3],
    translation: [1.2, 0.0, 1.8],
};

pub const VOXEL_SEED: u64 = 11;
pub const VOXEL_LEAF: f64 = 0.5;
pub const RANDOM_SEED: u64 = 12;
pub const RANDOM_MAX_N: usize = 512;
pub const RANDOM_SAMPLER_SEED: u64 = 7;

pub const TRAJECTORY_PARAMS: TrajectoryModelParams = TrajectoryModelParams {
    steps: STEPS,
    seed: 13,
    k: 1.2,
    eps: 0.1,
    limit: 0.6,
    kp: 0.8,
    ki: 0.2,
    kd: 0.05,
    dt: 0.1,
    amax: 3.0,
    bmax: 6.0,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    pub description: String,
    pub steps: usize,
    pub seed: u64,
    /// Uname of the element-independent block to split, if the case has one.
    pub split_kernel: Option<String>,
    /// File name to lowercase hex SHA-256.
    pub sha256: BTreeMap<String, String>,
}

impl Meta {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("meta serializes");
        text.push('\n');
        text
    }
}

/// A loaded, checksum-verified case.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkCase {
    pub name: String,
    pub model_toolbox: PathBuf,
    pub model_expanded: PathBuf,
    pub input_trace: PathBuf,
    pub expected_trace: PathBuf,
    pub meta: Meta,
}

fn read(path: &Path) -> Result<String, BenchmarkError> {
    fs::read_to_string(path).map_err(|source| BenchmarkError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_model(path: &Path) -> Result<Model, BenchmarkError> {
    parse_model(&read(path)?).map_err(|e| BenchmarkError::Invalid {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn load_trace(path: &Path) -> Result<Trace, BenchmarkError> {
    Trace::from_jsonl(&read(path)?).map_err(|e| BenchmarkError::Invalid {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

impl BenchmarkCase {
    pub fn toolbox_model(&self) -> Result<Model, BenchmarkError> {
        load_model(&self.model_toolbox)
    }

    pub fn expanded_model(&self) -> Result<Model, BenchmarkError> {
        load_model(&self.model_expanded)
    }

    pub fn input(&self) -> Result<Trace, BenchmarkError> {
        load_trace(&self.input_trace)
    }

    pub fn expected(&self) -> Result<Trace, BenchmarkError> {
        load_trace(&self.expected_trace)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `benchmarks/` at the workspace root.
pub fn default_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks")
}

/// Loads all cases from [`default_root`].
pub fn build_benchmarks() -> Result<Vec<BenchmarkCase>, BenchmarkError> {
    load_benchmarks(&default_root())
}

pub fn load_benchmarks(root: &Path) -> Result<Vec<BenchmarkCase>, BenchmarkError> {
    CASES.iter().map(|c| load_case(root, c)).collect()
}

pub fn load_case(root: &Path, name: &str) -> Result<BenchmarkCase, BenchmarkError> {
    if !CASES.contains(&name) {
        return Err(BenchmarkError::UnknownCase(name.to_string()));
    }
    let dir = root.join(name);
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_str(&read(&meta_path)?).map_err(|e| BenchmarkError::Invalid {
        path: meta_path.clone(),
        msg: e.to_string(),
    })?;
    for file in FILES {
        let path = dir.join(file);
        let bytes = fs::read(&path).map_err(|source| BenchmarkError::Io {
            path: path.clone(),
            source,
        })?;
        if meta.sha256.get(file).map(String::as_str) != Some(sha256_hex(&bytes).as_str()) {
            return Err(BenchmarkError::FixtureCorrupt {
                case: name.to_string(),
                file: file.to_string(),
            });
        }
    }
    Ok(BenchmarkCase {
        name: name.to_string(),
        model_toolbox: dir.join(FILES[0]),
        model_expanded: dir.join(FILES[1]),
        input_trace: dir.join(FILES[2]),
        expected_trace: dir.join(FILES[3]),
        meta,
    })
}

/// A case built in memory from its generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCase {
    pub name: String,
    pub description: String,
    pub seed: u64,
    pub split_kernel: Option<String>,
    pub toolbox_mdlx: String,
    pub expanded_mdlx: String,
    pub input: Trace,
}

pub fn generate_case(name: &str, registry: &ToolboxRegistry) -> Result<GeneratedCase, BenchmarkError> {
    let (description, seed, split, toolbox, expanded, input) = match name {
        VOXEL => (
            "Sensor transform followed by voxel-grid downsampling (first point per 0.5 m cell).",
            VOXEL_SEED,
            None,
            models::voxel_toolbox(&CLOUD, VOXEL_LEAF),
            models::voxel_expanded(&CLOUD, VOXEL_LEAF),
            inputs::cloud_trace("points", CLOUD.steps, VOXEL_SEED),
        ),
        RANDOM => (
            "Sensor transform followed by seeded random downsampling to at most 512 points. \
             The per-point transform is the data-parallel kernel; the selection is not element-independent.",
            RANDOM_SEED,
            Some("transform".to_string()),
            models::random_toolbox(&CLOUD, RANDOM_MAX_N, RANDOM_SAMPLER_SEED),
            models::random_expanded(&CLOUD, RANDOM_MAX_N, RANDOM_SAMPLER_SEED),
            inputs::cloud_trace("points", CLOUD.steps, RANDOM_SEED),
        ),
        TRAJECTORY => {
            let p = &TRAJECTORY_PARAMS;
            (
                "Stanley lateral control and PID longitudinal control on independent paths.",
                p.seed,
                None,
                models::trajectory_toolbox(p),
                models::trajectory_expanded(p, registry).map_err(|msg| BenchmarkError::Invalid {
                    path: PathBuf::from(name),
                    msg,
                })?,
                inputs::trajectory_trace(p.steps, p.dt, p.seed),
            )
        }
        other => return Err(BenchmarkError::UnknownCase(other.to_string())),
    };
    Ok(GeneratedCase {
        name: name.to_string(),
        description: description.to_string(),
        seed,
        split_kernel: split,
        toolbox_mdlx: toolbox,
        expanded_mdlx: expanded,
        input,
    })
}

impl GeneratedCase {
    fn model(&self, text: &str) -> Result<Model, BenchmarkError> {
        parse_model(text).map_err(|e| BenchmarkError::Invalid {
            path: PathBuf::from(&self.name),
            msg: e.to_string(),
        })
    }

    /// Interprets both variants; they must agree bit for bit.
    pub fn expected(&self, registry: &ToolboxRegistry) -> Result<Trace, BenchmarkError> {
        let sim = |source| BenchmarkError::Sim {
            case: self.name.clone(),
            source,
        };
        let steps = self.input.len();
        let a = interpret_model(&self.model(&self.toolbox_mdlx)?, registry, &self.input, steps).map_err(sim)?;
        let b = interpret_model(&self.model(&self.expanded_mdlx)?, registry, &self.input, steps).map_err(sim)?;
        if !a.bit_eq(&b) {
            return Err(BenchmarkError::VariantMismatch(self.name.clone()));
        }
        Ok(a)
    }

    /// Writes the five fixture files under `root/<name>/`.
    pub fn write(&self, root: &Path, registry: &ToolboxRegistry) -> Result<Meta, BenchmarkError> {
        let expected = self.expected(registry)?;
        let dir = root.join(&self.name);
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| BenchmarkError::Io { path, source }
        };
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let contents = [
            self.toolbox_mdlx.clone(),
            self.expanded_mdlx.clone(),
            self.input.to_jsonl(),
            expected.to_jsonl(),
        ];
        let mut sha256 = BTreeMap::new();
        for (file, text) in FILES.iter().zip(&contents) {
            let path = dir.join(file);
            fs::write(&path, text).map_err(io(&path))?;
            sha256.insert(file.to_string(), sha256_hex(text.as_bytes()));
        }
        let meta = Meta {
            name: self.name.clone(),
            description: self.description.clone(),
            steps: self.input.len(),
            seed: self.seed,
            split_kernel: self.split_kernel.clone(),
            sha256,
        };
        let path = dir.join("meta.json");
        fs::write(&path, meta.to_json()).map_err(io(&path))?;
        Ok(meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::model_stats;

    #[test]
    fn trajectory_variants_agree_on_a_short_trace() {
        let reg = ToolboxRegistry::builtin();
        let mut case = generate_case(TRAJECTORY, &reg).unwrap();
        case.input.steps.truncate(10);
        let trace = case.expected(&reg).unwrap();
        assert_eq!(trace.len(), 10);
    }

    #[test]
    fn toolbox_variants_are_smaller() {
        let reg = ToolboxRegistry::builtin();
        for name in CASES {
            let case = generate_case(name, &reg).unwrap();
            let a = model_stats(&parse_model(&case.toolbox_mdlx).unwrap()).block_count;
            let b = model_stats(&parse_model(&case.expanded_mdlx).unwrap()).block_count;
            assert!(2 * a < b, "{name}: {a} vs {b}");
        }
    }

    #[test]
    fn unknown_case() {
        assert!(matches!(
            generate_case("nope", &ToolboxRegistry::builtin()),
            Err(BenchmarkError::UnknownCase(_))
        ));
    }
}
