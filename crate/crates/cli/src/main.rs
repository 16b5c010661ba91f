use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use refgame::engine::{
    acquire_extractor, evaluate, load_models, prepare_splits, run_experiment, ExperimentConfig, Profile, RunOptions,
    MODEL_FILE, PRETRAINED_FILE,
};
use refgame::harness::{
    emit_plot_data, find_cifar10, load_cifar10, parse_config_with, read_metrics_log, synthetic_dataset, DatasetSplit,
    RunLogRow, SyntheticSpec,
};
use refgame::metrics::{analytic_baselines, hashing_monte_carlo};
use refgame::nn::Checkpoint;

#[derive(Parser)]
#[command(name = "refgame", version, about = "Referential game experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (`key: value` lines or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// CIFAR-10 binary directory (falls back to $CIFAR10_DIR).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value = "runs/latest")]
    out_dir: PathBuf,
    /// Default values for keys the config omits.
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// Use the generated stand-in dataset instead of CIFAR-10.
    #[arg(long, global = true)]
    synthetic: bool,
    /// Run single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Train agents and write the log, summary and checkpoints.
    Train {
        /// Extractor checkpoint to start from instead of pretraining.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Evaluate a trained model on the test split.
    Eval {
        /// Defaults to `<out-dir>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Pretrain the extractor for the configured regime.
    Pretrain,
    /// Print chance-level reference values.
    Baselines {
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Simulated hashing games.
        #[arg(long, default_value_t = refgame::metrics::HASHING_GAMES)]
        games: usize,
    },
    /// Turn metric logs into per-metric series files.
    PlotData {
        /// Log CSVs, or run directories holding `metrics.csv`.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        let profile = self.profile.map(|p| match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        });
        let mut c = parse_config_with(&text, profile)?;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        Ok(c)
    }

    fn data(&self, seed: u64) -> Result<(DatasetSplit, DatasetSplit)> {
        if self.synthetic {
            eprintln!("using the generated stand-in dataset, not CIFAR-10");
            return Ok(synthetic_dataset(&SyntheticSpec {
                size: 32,
                train_per_class: 64,
                val_per_class: 16,
                seed,
                ..SyntheticSpec::default()
            })?);
        }
        let dir = self
            .data_dir
            .clone()
            .or_else(|| std::env::var_os("CIFAR10_DIR").map(PathBuf::from))
            .context("no dataset: pass --data-dir, set CIFAR10_DIR, or use --synthetic")?;
        let Some(found) = find_cifar10(&dir) else {
            bail!("no CIFAR-10 binary batches under {}", dir.display());
        };
        Ok(load_cifar10(&found)?)
    }
}

fn print_row(r: &RunLogRow) {
    let rot = r.rotation_accuracy.map(|a| format!(" rot_acc {a:.3}")).unwrap_or_default();
    eprintln!(
        "epoch {:>3}  loss {:.4}  top1 {:.3}  top5 {:.3}  class@5 {:.2}  rank {:.2}  len {:.2}{rot}",
        r.epoch,
        r.train_loss,
        r.comm_rate_top1,
        r.comm_rate_top5,
        r.target_class_in_top5,
        r.target_class_mean_rank,
        r.message_length_mean
    );
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn log_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(refgame::engine::LOG_FILE)
    } else {
        p.to_path_buf()
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let c = &cli.common;
    if c.sequential {
        refgame::par::set_sequential(true);
    }
    match &cli.command {
        Command::Train { weights } => {
            let config = c.config()?;
            let (train, test) = c.data(config.seed)?;
            let weights = weights.as_deref().map(Checkpoint::load).transpose()?;
            let out = run_experiment(
                &config,
                &train,
                &test,
                RunOptions {
                    out_dir: Some(c.out_dir.clone()),
                    weights,
                    progress: Some(print_row),
                },
            )?;
            println!("{}", json(&out.report)?);
            eprintln!("artifacts in {}", c.out_dir.display());
        }
        Command::Eval { checkpoint } => {
            let path = checkpoint.clone().unwrap_or_else(|| c.out_dir.join(MODEL_FILE));
            let ck = Checkpoint::load(&path)?;
            let mut config = if c.config.is_some() || c.profile.is_some() {
                c.config()?
            } else {
                serde_json::from_value(ck.meta["config"].clone())
                    .with_context(|| format!("{} carries no config; pass --config", path.display()))?
            };
            if let Some(s) = c.seed {
                config.seed = s;
            }
            let (train, test) = c.data(config.seed)?;
            let (_, test) = prepare_splits(&config, &train, &test)?;
            let mut models = load_models(&config, &ck)?;
            let report = evaluate(&mut models, &test, &config, config.eval_runs)?;
            let text = json(&report)?;
            std::fs::create_dir_all(&c.out_dir)?;
            std::fs::write(c.out_dir.join("eval.json"), format!("{text}\n"))?;
            println!("{text}");
        }
        Command::Pretrain => {
            let config = c.config()?;
            if !config.extractor.regime.needs_weights() {
                bail!(
                    "regime `{}` uses no pretrained weights; set regime to pretrained_frozen or an ss_pretrained_* regime",
                    config.extractor.regime
                );
            }
            let (train, test) = c.data(config.seed)?;
            let (train, test) = prepare_splits(&config, &train, &test)?;
            let (_, summary, ck) = acquire_extractor(&config, &train, &test, None)?;
            let path = c.out_dir.join(PRETRAINED_FILE);
            ck.context("pretraining produced no checkpoint")?.save(&path)?;
            println!("{}", json(&summary)?);
            eprintln!("wrote {}", path.display());
        }
        Command::Baselines {
            batch_size,
            classes,
            k,
            games,
        } => {
            let mut b = analytic_baselines(*batch_size, *classes, *k)?;
            if *games != b.hashing_games {
                let (rank, count) = hashing_monte_carlo(*batch_size, *classes, *k, *games, c.seed.unwrap_or(0));
                b.hashing_mean_rank = rank;
                b.hashing_topk_class_count = count;
                b.hashing_games = *games;
            }
            println!("{}", json(&b)?);
        }
        Command::PlotData { logs } => {
            let mut loaded = Vec::with_capacity(logs.len());
            for p in logs {
                let path = log_path(p);
                let mut log = read_metrics_log(&path)?;
                if log.label.is_empty() {
                    log.label = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                }
                loaded.push(log);
            }
            for f in emit_plot_data(&loaded, &c.out_dir)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}
