use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sbr::envs::{GeneratorSpec, PointMazeSpec};
use sbr::harness::{self, ExperimentConfig, PipelineConfig, SCHEMA_VERSION};

#[derive(Parser)]
#[command(name = "sbr", version, about = "State-based retrieval for offline imitation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline (or experiment) config file.
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config's out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reuse cached stage artifacts whose content hash matches.
    #[arg(long, overrides_with = "no_cache", default_value_t = true)]
    cache: bool,
    #[arg(long = "no-cache", overrides_with = "cache")]
    no_cache: bool,
}

impl Common {
    fn use_cache(&self) -> bool {
        self.cache && !self.no_cache
    }

    fn pipeline(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        Ok(cfg)
    }

    fn single_seed(&self, cfg: &PipelineConfig) -> u64 {
        self.seed.unwrap_or(cfg.seeds[0])
    }

    fn stage_dir(&self, cfg: &PipelineConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.out_dir.clone())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert and offline datasets.
    GenData {
        /// Pipeline config providing the layout and generator mix.
        #[arg(long, conflicts_with = "layout", required_unless_present = "layout")]
        config: Option<PathBuf>,
        /// Layout name or file, used when no config is given.
        #[arg(long)]
        layout: Option<String>,
        /// Generator mix JSON file, used with --layout.
        #[arg(long, requires = "layout")]
        generators: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the world model on the datasets in the output directory.
    TrainWm(Common),
    /// Run the backward search and write the retrieved set.
    Retrieve(Common),
    /// Train the policy for the configured mode.
    TrainPolicy(Common),
    /// Evaluate the trained policy and report its normalized score.
    Eval(Common),
    /// Run all stages and write a run record per seed.
    Pipeline(Common),
    /// Run an experiment matrix and write the aggregate CSV.
    Experiment(Common),
    /// Write latent embeddings of every state as CSV.
    ExportEmbeddings(Common),
}

fn init_logging() {
    let level = std::env::var("SBR_LOG_LEVEL").unwrap_or_else(|_| "info".into());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp_secs()
        .init();
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn main() -> Result<()> {
    init_logging();
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { config, layout, generators, seed, out } => {
            let (cfg, seed, out) = match (config, layout) {
                (Some(path), _) => {
                    let c = Common { config: path, seed, out, cache: true, no_cache: false };
                    let cfg = c.pipeline()?;
                    let seed = c.single_seed(&cfg);
                    let out = c.stage_dir(&cfg);
                    (cfg, seed, out)
                }
                (None, Some(layout)) => {
                    let mut cfg: PipelineConfig = serde_json::from_value(serde_json::json!({
                        "schema_version": SCHEMA_VERSION,
                        "layout": layout,
                    }))?;
                    if let Some(path) = generators {
                        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                        cfg.data.generators = serde_json::from_str::<Vec<GeneratorSpec>>(&text)?;
                    }
                    (cfg, seed.unwrap_or(0), out.unwrap_or_else(|| PathBuf::from(".")))
                }
                (None, None) => anyhow::bail!("gen-data needs --config or --layout (shipped: {:?})", PointMazeSpec::builtin_names()),
            };
            let (e, o) = harness::cmd_gen_data(&cfg, seed, &out)?;
            println!("wrote {} expert and {} offline trajectories to {}", e.len(), o.len(), out.display());
        }
        Command::TrainWm(c) => {
            let cfg = c.pipeline()?;
            let log = harness::cmd_train_wm(&cfg, c.single_seed(&cfg), &c.stage_dir(&cfg))?;
            println!("final world-model loss {:.6}", log.epoch_losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::Retrieve(c) => {
            let cfg = c.pipeline()?;
            print_json(&harness::cmd_retrieve(&cfg, c.single_seed(&cfg), &c.stage_dir(&cfg))?)?;
        }
        Command::TrainPolicy(c) => {
            let cfg = c.pipeline()?;
            let log = harness::cmd_train_policy(&cfg, c.single_seed(&cfg), &c.stage_dir(&cfg))?;
            println!("trained on {} samples, final loss {:.6}", log.samples, log.epoch_losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::Eval(c) => {
            let cfg = c.pipeline()?;
            print_json(&harness::cmd_eval(&cfg, c.single_seed(&cfg), &c.stage_dir(&cfg))?)?;
        }
        Command::Pipeline(c) => {
            let cfg = c.pipeline()?;
            for r in harness::cmd_pipeline(&cfg, c.use_cache())? {
                println!(
                    "{} {} seed {}: return {:.3} success {:.3} score {:.1}",
                    r.label, r.layout, r.seed, r.eval.mean_return, r.eval.success_rate, r.normalized_score
                );
            }
        }
        Command::Experiment(c) => {
            let mut exp = ExperimentConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
            if let Some(s) = c.seed {
                exp.pipeline.seeds = vec![s];
            }
            if let Some(o) = &c.out {
                exp.pipeline.out_dir = o.clone();
            }
            let res = harness::cmd_experiment(&exp, c.use_cache())?;
            print!("{}", res.to_csv());
            let failed = res.cells.iter().filter(|c| c.error.is_some()).count();
            if failed > 0 {
                anyhow::bail!("{failed} experiment cell(s) failed");
            }
        }
        Command::ExportEmbeddings(c) => {
            let cfg = c.pipeline()?;
            let path = harness::cmd_export_embeddings(&cfg, c.single_seed(&cfg), &c.stage_dir(&cfg))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
