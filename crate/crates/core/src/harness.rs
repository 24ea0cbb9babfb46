//! End-to-end runner: data generation, world-model training, retrieval,
//! policy training and evaluation, with content-addressed caching and
//! experiment matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, NormStats};
use crate::envs::{generate_dataset, reference_returns, GeneratorKind, GeneratorSpec, PointMazeSpec, ReferenceReturns};
use crate::error::{Result, SbrError};
use crate::policy::{evaluate, train_policy, BcConfig, BcMode, BcTrainLog, EvalConfig, EvalReport, GaussianPolicy};
use crate::retrieval::{run_retrieval, RetrievalConfig, RetrievedSet, SearchReport};
use crate::world_model::{export_embeddings, train_world_model, EncoderMode, PassthroughEncoder, StateEncoder, WmConfig, WmTrainLog, WorldModel};

pub const SCHEMA_VERSION: u32 = 1;

/// Stable 64-bit sub-seed for a named stage.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let digest = Sha256::digest(format!("sbr:{seed}:{stage}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(value)?.as_bytes()))
}

fn default_generators() -> Vec<GeneratorSpec> {
    vec![
        GeneratorSpec::new(GeneratorKind::Expert, 5, 1),
        GeneratorSpec::new(GeneratorKind::WrongGoal, 140, 2),
        GeneratorSpec::new(GeneratorKind::EarlyFailure, 40, 3),
        GeneratorSpec::new(GeneratorKind::RandomWalk, 20, 4),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Pre-built datasets; both or neither. Generated from `generators` when absent.
    #[serde(default)]
    pub expert_path: Option<PathBuf>,
    #[serde(default)]
    pub offline_path: Option<PathBuf>,
    #[serde(default = "default_generators")]
    pub generators: Vec<GeneratorSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            expert_path: None,
            offline_path: None,
            generators: default_generators(),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Shipped layout name or path to a layout JSON file.
    pub layout: String,
    /// Overrides the layout's noise channels.
    #[serde(default)]
    pub noise_dims: Option<usize>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub world_model: WmConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub policy: BcConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| SbrError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        PipelineConfig::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn layout_spec(&self) -> Result<PointMazeSpec> {
        let spec = if PointMazeSpec::builtin_names().contains(&self.layout.as_str()) {
            PointMazeSpec::builtin(&self.layout)?
        } else {
            let path = Path::new(&self.layout);
            if !path.exists() {
                return Err(SbrError::Config(format!("layout '{}' is neither shipped nor a file", self.layout)));
            }
            PointMazeSpec::load(path)?
        };
        let spec = match self.noise_dims {
            Some(n) => spec.with_noise_dims(n),
            None => spec,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every section before any data is touched.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SbrError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.layout_spec()?;
        match (&self.data.expert_path, &self.data.offline_path) {
            (Some(e), Some(o)) => {
                for p in [e, o] {
                    if !p.exists() {
                        return Err(SbrError::Config(format!("dataset {} does not exist", p.display())));
                    }
                }
            }
            (None, None) => {
                if !self.data.generators.iter().any(|g| g.kind == GeneratorKind::Expert && g.count > 0) {
                    return Err(SbrError::Config("the generator mix has no expert trajectories".into()));
                }
            }
            _ => return Err(SbrError::Config("expert_path and offline_path must be given together".into())),
        }
        self.world_model.validate()?;
        self.retrieval.validate()?;
        self.policy.validate()?;
        self.eval.validate()?;
        if self.seeds.is_empty() {
            return Err(SbrError::Config("seed list is empty".into()));
        }
        Ok(())
    }

    /// Copy bound to one seed, with per-stage sub-seeds filled in.
    pub fn resolve(&self, seed: u64) -> PipelineConfig {
        let mut c = self.clone();
        c.seeds = vec![seed];
        c.world_model.seed = derive_seed(seed, "wm");
        c.policy.seed = derive_seed(seed, "policy");
        c.eval.seed = derive_seed(seed, "eval");
        c
    }

    fn data_seed(&self) -> u64 {
        derive_seed(self.seeds[0], "data")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Cached,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub seconds: f64,
    pub key: Option<String>,
    /// Artifact file name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub layout: String,
    pub seed: u64,
    pub mode: BcMode,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    pub wm_log: Option<WmTrainLog>,
    pub search_report: Option<SearchReport>,
    pub bc_log: BcTrainLog,
    pub eval: EvalReport,
    pub reference: ReferenceReturns,
    pub normalized_score: f64,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write then rename, so concurrent cells never observe partial files.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp{}-{n}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

fn artifact_map(dir: &Path, names: &[&str]) -> Result<BTreeMap<String, String>> {
    names.iter().map(|n| Ok((n.to_string(), file_hash(&dir.join(n))?))).collect()
}

struct Stage {
    name: &'static str,
    started: Instant,
}

impl Stage {
    fn start(name: &'static str) -> Self {
        log::info!("stage {name}");
        Stage { name, started: Instant::now() }
    }

    fn finish(self, status: StageStatus, key: Option<String>, artifacts: BTreeMap<String, String>) -> StageRecord {
        StageRecord {
            name: self.name.into(),
            status,
            seconds: self.started.elapsed().as_secs_f64(),
            key,
            artifacts,
        }
    }
}

/// Datasets for a resolved config: loaded from paths or generated.
pub fn load_or_generate(cfg: &PipelineConfig, spec: &PointMazeSpec) -> Result<(Dataset, Dataset)> {
    if let (Some(e), Some(o)) = (&cfg.data.expert_path, &cfg.data.offline_path) {
        return Ok((Dataset::load(e)?, Dataset::load(o)?));
    }
    let seed = cfg.data_seed();
    let gens: Vec<GeneratorSpec> = cfg
        .data
        .generators
        .iter()
        .enumerate()
        .map(|(i, g)| GeneratorSpec {
            seed: derive_seed(seed, &format!("gen{i}:{}", g.seed)),
            ..g.clone()
        })
        .collect();
    generate_dataset(spec, &gens)
}

fn cache_dir(cfg: &PipelineConfig, stage: &str, key: &str) -> Result<PathBuf> {
    let dir = cfg.out_dir.join("cache").join(format!("{stage}-{}", &key[..16]));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn is_cached(dir: &Path, names: &[&str]) -> bool {
    names.iter().all(|n| dir.join(n).exists())
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Reference endpoints for a layout and eval config, cached.
pub fn cached_reference(cfg: &PipelineConfig, spec: &PointMazeSpec, use_cache: bool) -> Result<ReferenceReturns> {
    let key = hash_json(&(spec, &cfg.eval))?;
    let dir = cache_dir(cfg, "reference", &key)?;
    let path = dir.join("reference.json");
    if use_cache && path.exists() {
        return load_json(&path);
    }
    let r = reference_returns(spec, &cfg.eval)?;
    save_json(&path, &r)?;
    Ok(r)
}

/// Runs all four stages for one seed of `config`.
pub fn run_pipeline(config: &PipelineConfig, seed: u64, label: &str, use_cache: bool) -> Result<RunRecord> {
    config.validate()?;
    let cfg = config.resolve(seed);
    let spec = cfg.layout_spec()?;
    let mode = cfg.policy.mode;
    let mut stages = Vec::new();

    // Data.
    let st = Stage::start("data");
    let data_key = hash_json(&(&spec, &cfg.data, cfg.data_seed()))?;
    let data_dir = cache_dir(&cfg, "data", &data_key)?;
    let names = ["expert.jsonl", "offline.jsonl"];
    let (expert, offline, status) = if use_cache && is_cached(&data_dir, &names) {
        (Dataset::load(&data_dir.join(names[0]))?, Dataset::load(&data_dir.join(names[1]))?, StageStatus::Cached)
    } else {
        let (e, o) = load_or_generate(&cfg, &spec).map_err(|e| e.in_stage("data"))?;
        write_atomic(&data_dir.join(names[0]), e.to_jsonl()?.as_bytes())?;
        write_atomic(&data_dir.join(names[1]), o.to_jsonl()?.as_bytes())?;
        (e, o, StageStatus::Ran)
    };
    let data_hash = sha256_hex(format!("{}{}", file_hash(&data_dir.join(names[0]))?, file_hash(&data_dir.join(names[1]))?).as_bytes());
    stages.push(st.finish(status, Some(data_key), artifact_map(&data_dir, &names)?));
    let norm = NormStats::compute(&[&expert, &offline])?;

    // World model and retrieval only feed the sbr mode.
    let mut wm_log = None;
    let mut search_report = None;
    let mut retrieved = None;
    let mut retrieval_key = None;
    if mode == BcMode::Sbr {
        let st = Stage::start("world_model");
        let encoder: Box<dyn StateEncoder> = match cfg.world_model.encoder {
            EncoderMode::Passthrough => {
                stages.push(st.finish(StageStatus::Skipped, None, BTreeMap::new()));
                Box::new(PassthroughEncoder { norm: norm.clone() })
            }
            EncoderMode::WorldModel => {
                let key = hash_json(&(&data_hash, &cfg.world_model))?;
                let dir = cache_dir(&cfg, "wm", &key)?;
                let names = ["wm.ckpt", "wm_log.json"];
                let (model, log, status) = if use_cache && is_cached(&dir, &names) {
                    (WorldModel::load(&dir.join(names[0]))?, load_json(&dir.join(names[1]))?, StageStatus::Cached)
                } else {
                    let (m, l) = train_world_model(&expert, &offline, &cfg.world_model).map_err(|e| e.in_stage("world_model"))?;
                    write_atomic(&dir.join(names[0]), &m.to_checkpoint()?.to_bytes()?)?;
                    save_json(&dir.join(names[1]), &l)?;
                    (m, l, StageStatus::Ran)
                };
                wm_log = Some(log);
                stages.push(st.finish(status, Some(key), artifact_map(&dir, &names)?));
                Box::new(model)
            }
        };

        let st = Stage::start("retrieval");
        let key = hash_json(&(&data_hash, &cfg.world_model, &cfg.retrieval))?;
        let dir = cache_dir(&cfg, "retrieval", &key)?;
        let names = ["retrieved.jsonl", "search_report.json"];
        let (set, report, status) = if use_cache && is_cached(&dir, &names) {
            (RetrievedSet::load(&dir.join(names[0]))?, load_json(&dir.join(names[1]))?, StageStatus::Cached)
        } else {
            let (s, r) = run_retrieval(&expert, &offline, encoder.as_ref(), &cfg.retrieval).map_err(|e| e.in_stage("retrieval"))?;
            write_atomic(&dir.join(names[0]), s.to_jsonl()?.as_bytes())?;
            save_json(&dir.join(names[1]), &r)?;
            (s, r, StageStatus::Ran)
        };
        search_report = Some(report);
        retrieved = Some(set);
        retrieval_key = Some(key.clone());
        stages.push(st.finish(status, Some(key), artifact_map(&dir, &names)?));
    } else {
        stages.push(Stage::start("world_model").finish(StageStatus::Skipped, None, BTreeMap::new()));
        stages.push(Stage::start("retrieval").finish(StageStatus::Skipped, None, BTreeMap::new()));
    }

    // Policy.
    let st = Stage::start("policy");
    let key = hash_json(&(&data_hash, &retrieval_key, &cfg.policy))?;
    let dir = cache_dir(&cfg, "policy", &key)?;
    let names = ["policy.ckpt", "bc_log.json"];
    let (policy, bc_log, status) = if use_cache && is_cached(&dir, &names) {
        (GaussianPolicy::load(&dir.join(names[0]))?, load_json(&dir.join(names[1]))?, StageStatus::Cached)
    } else {
        let (p, l) = train_policy(&expert, retrieved.as_ref(), &offline, &norm, &cfg.policy).map_err(|e| e.in_stage("policy"))?;
        write_atomic(&dir.join(names[0]), &p.to_checkpoint(cfg.policy.seed)?.to_bytes()?)?;
        save_json(&dir.join(names[1]), &l)?;
        (p, l, StageStatus::Ran)
    };
    stages.push(st.finish(status, Some(key), artifact_map(&dir, &names)?));

    // Evaluation.
    let st = Stage::start("eval");
    let reference = cached_reference(&cfg, &spec, use_cache).map_err(|e| e.in_stage("eval"))?;
    let eval = evaluate(&policy, &spec, &cfg.eval).map_err(|e| e.in_stage("eval"))?;
    let normalized_score = reference.normalized_score(eval.mean_return).map_err(|e| e.in_stage("eval"))?;
    stages.push(st.finish(StageStatus::Ran, None, BTreeMap::new()));
    log::info!(
        "{label} {} seed {seed}: return {:.3}, success {:.3}, score {normalized_score:.1}",
        cfg.layout,
        eval.mean_return,
        eval.success_rate
    );

    Ok(RunRecord {
        label: label.to_string(),
        layout: cfg.layout.clone(),
        seed,
        mode,
        config: cfg,
        stages,
        wm_log,
        search_report,
        bc_log,
        eval,
        reference,
        normalized_score,
    })
}

/// Runs every seed of the config and writes one RunRecord JSON per seed.
pub fn cmd_pipeline(config: &PipelineConfig, use_cache: bool) -> Result<Vec<RunRecord>> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let mut out = Vec::new();
    for &seed in &config.seeds {
        let label = config.policy.mode.as_str();
        let rec = run_pipeline(config, seed, label, use_cache)?;
        save_json(&config.out_dir.join(format!("run-{}-{label}-seed{seed}.json", layout_tag(&config.layout))), &rec)?;
        out.push(rec);
    }
    Ok(out)
}

fn layout_tag(layout: &str) -> String {
    Path::new(layout)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| layout.to_string())
}

// Single-stage commands working inside one directory.

pub fn cmd_gen_data(config: &PipelineConfig, seed: u64, out: &Path) -> Result<(Dataset, Dataset)> {
    config.validate()?;
    let cfg = config.resolve(seed);
    let (e, o) = load_or_generate(&cfg, &cfg.layout_spec()?)?;
    std::fs::create_dir_all(out)?;
    e.save(&out.join("expert.jsonl"))?;
    o.save(&out.join("offline.jsonl"))?;
    Ok((e, o))
}

fn load_pair(out: &Path) -> Result<(Dataset, Dataset)> {
    Ok((Dataset::load(&out.join("expert.jsonl"))?, Dataset::load(&out.join("offline.jsonl"))?))
}

fn encoder_for(cfg: &PipelineConfig, out: &Path, norm: &NormStats) -> Result<Box<dyn StateEncoder>> {
    Ok(match cfg.world_model.encoder {
        EncoderMode::Passthrough => Box::new(PassthroughEncoder { norm: norm.clone() }),
        EncoderMode::WorldModel => Box::new(WorldModel::load(&out.join("wm.ckpt"))?),
    })
}

pub fn cmd_train_wm(config: &PipelineConfig, seed: u64, out: &Path) -> Result<WmTrainLog> {
    config.validate()?;
    let cfg = config.resolve(seed);
    let (e, o) = load_pair(out)?;
    let (m, l) = train_world_model(&e, &o, &cfg.world_model)?;
    m.save(&out.join("wm.ckpt"))?;
    save_json(&out.join("wm_log.json"), &l)?;
    Ok(l)
}

pub fn cmd_retrieve(config: &PipelineConfig, seed: u64, out: &Path) -> Result<SearchReport> {
    config.validate()?;
    let cfg = config.resolve(seed);
    let (e, o) = load_pair(out)?;
    let norm = NormStats::compute(&[&e, &o])?;
    let enc = encoder_for(&cfg, out, &norm)?;
    let (set, report) = run_retrieval(&e, &o, enc.as_ref(), &cfg.retrieval)?;
    set.save(&out.join("retrieved.jsonl"))?;
    save_json(&out.join("search_report.json"), &report)?;
    Ok(report)
}

pub fn cmd_train_policy(config: &PipelineConfig, seed: u64, out: &Path) -> Result<BcTrainLog> {
    config.validate()?;
    let cfg = config.resolve(seed);
    let (e, o) = load_pair(out)?;
    let norm = NormStats::compute(&[&e, &o])?;
    let retrieved = match cfg.policy.mode {
        BcMode::Sbr => Some(RetrievedSet::load(&out.join("retrieved.jsonl"))?),
        _ => None,
    };
    let (p, l) = train_policy(&e, retrieved.as_ref(), &o, &norm, &cfg.policy)?;
    p.save(&out.join("policy.ckpt"), cfg.policy.seed)?;
    save_json(&out.join("bc_log.json"), &l)?;
    Ok(l)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mode: BcMode,
    pub layout: String,
    pub seed: u64,
    pub eval: EvalReport,
    pub reference: ReferenceReturns,
    pub normalized_score: f64,
}

pub fn cmd_eval(config: &PipelineConfig, seed: u64, out: &Path) -> Result<EvalSummary> {
    config.validate()?;
    let cfg = config.resolve(seed);
    let spec = cfg.layout_spec()?;
    let policy = GaussianPolicy::load(&out.join("policy.ckpt"))?;
    let eval = evaluate(&policy, &spec, &cfg.eval)?;
    let reference = reference_returns(&spec, &cfg.eval)?;
    let summary = EvalSummary {
        mode: cfg.policy.mode,
        layout: cfg.layout.clone(),
        seed,
        normalized_score: reference.normalized_score(eval.mean_return)?,
        eval,
        reference,
    };
    save_json(&out.join("eval.json"), &summary)?;
    Ok(summary)
}

pub fn cmd_export_embeddings(config: &PipelineConfig, seed: u64, out: &Path) -> Result<PathBuf> {
    config.validate()?;
    let cfg = config.resolve(seed);
    let (e, o) = load_pair(out)?;
    let norm = NormStats::compute(&[&e, &o])?;
    let enc = encoder_for(&cfg, out, &norm)?;
    let path = out.join("embeddings.csv");
    export_embeddings(enc.as_ref(), &e.merge(&o)?, &path)?;
    Ok(path)
}

/// One column of an experiment matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub mode: BcMode,
    #[serde(default)]
    pub encoder: Option<EncoderMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub pipeline: PipelineConfig,
    /// Defaults to the pipeline layout.
    #[serde(default)]
    pub layouts: Vec<String>,
    pub variants: Vec<Variant>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| SbrError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentConfig::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SbrError::Config(format!("unsupported schema_version {}", self.schema_version)));
        }
        if self.variants.is_empty() {
            return Err(SbrError::Config("experiment has no variants".into()));
        }
        for layout in self.layouts() {
            self.cell_config(&layout, &self.variants[0]).validate()?;
        }
        Ok(())
    }

    pub fn layouts(&self) -> Vec<String> {
        if self.layouts.is_empty() {
            vec![self.pipeline.layout.clone()]
        } else {
            self.layouts.clone()
        }
    }

    fn cell_config(&self, layout: &str, v: &Variant) -> PipelineConfig {
        let mut c = self.pipeline.clone();
        c.layout = layout.to_string();
        c.policy.mode = v.mode;
        if let Some(enc) = v.encoder {
            c.world_model.encoder = enc;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub label: String,
    pub layout: String,
    pub seed: u64,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
}

pub const CSV_HEADER: &str = "mode,layout,seed,return,disc_return,norm_score,success_rate";

impl ExperimentResult {
    /// Scores of successful cells for a label, in seed order.
    pub fn scores(&self, label: &str, layout: &str) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.label == label && c.layout == layout)
            .filter_map(|c| c.record.as_ref().map(|r| r.normalized_score))
            .collect()
    }

    pub fn mean_score(&self, label: &str, layout: &str) -> Option<f64> {
        let s = self.scores(label, layout);
        (!s.is_empty()).then(|| crate::policy::mean_std(&s).0)
    }

    /// Data rows, then one `mean±std` row per (variant, layout).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let mut groups: Vec<(String, String)> = Vec::new();
        for c in &self.cells {
            let g = (c.label.clone(), c.layout.clone());
            if !groups.contains(&g) {
                groups.push(g);
            }
            match &c.record {
                Some(r) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        c.label, c.layout, c.seed, r.eval.mean_return, r.eval.mean_disc_return, r.normalized_score, r.eval.success_rate
                    );
                }
                None => {
                    let _ = writeln!(out, "{},{},{},,,,", c.label, c.layout, c.seed);
                }
            }
        }
        for (label, layout) in groups {
            let recs: Vec<&RunRecord> = self
                .cells
                .iter()
                .filter(|c| c.label == label && c.layout == layout)
                .filter_map(|c| c.record.as_ref())
                .collect();
            let col = |f: &dyn Fn(&RunRecord) -> f64| {
                let (m, s) = crate::policy::mean_std(&recs.iter().map(|r| f(r)).collect::<Vec<_>>());
                format!("{m:.4}±{s:.4}")
            };
            let _ = writeln!(
                out,
                "{label},{layout},mean±std,{},{},{},{}",
                col(&|r| r.eval.mean_return),
                col(&|r| r.eval.mean_disc_return),
                col(&|r| r.normalized_score),
                col(&|r| r.eval.success_rate)
            );
        }
        out
    }
}

/// Runs every (layout, variant, seed) cell. Failed cells are recorded and
/// the matrix continues.
pub fn run_experiment(exp: &ExperimentConfig, use_cache: bool) -> Result<ExperimentResult> {
    exp.validate()?;
    let mut jobs = Vec::new();
    for layout in exp.layouts() {
        for v in &exp.variants {
            for &seed in &exp.pipeline.seeds {
                jobs.push((layout.clone(), v.clone(), seed));
            }
        }
    }
    let cells = jobs
        .par_iter()
        .map(|(layout, v, seed)| {
            let cfg = exp.cell_config(layout, v);
            match run_pipeline(&cfg, *seed, &v.name, use_cache) {
                Ok(r) => CellResult { label: v.name.clone(), layout: layout.clone(), seed: *seed, record: Some(r), error: None },
                Err(e) => {
                    log::error!("cell {} {layout} seed {seed} failed: {e}", v.name);
                    CellResult { label: v.name.clone(), layout: layout.clone(), seed: *seed, record: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    Ok(ExperimentResult { cells })
}

/// Runs the matrix and writes `results.csv` plus per-cell RunRecords.
pub fn cmd_experiment(exp: &ExperimentConfig, use_cache: bool) -> Result<ExperimentResult> {
    let res = run_experiment(exp, use_cache)?;
    let out = &exp.pipeline.out_dir;
    std::fs::create_dir_all(out)?;
    for c in &res.cells {
        if let Some(r) = &c.record {
            save_json(&out.join(format!("run-{}-{}-seed{}.json", layout_tag(&c.layout), c.label, c.seed)), r)?;
        }
    }
    write_atomic(&out.join("results.csv"), res.to_csv().as_bytes())?;
    Ok(res)
}
