use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use der_core::config::ExperimentConfig;
use der_core::der::Structure;
use der_core::env::Variant;
use der_core::episode_io::write_episodes;
use der_core::harness::{ablate, generate_demos, run_experiment, summarize, write_summary};

#[derive(Parser)]
#[command(name = "der", about = "Prioritized replay with dynamic demonstration zones on insertion tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; omitted keys take the task preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task preset when no config file sets one.
    #[arg(long)]
    task: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Single-threaded round-robin execution with reproducible output.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.task) {
            (Some(path), _) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(task)) => ExperimentConfig::for_task(task),
            (None, None) => ExperimentConfig::default(),
        };
        if let (Some(_), Some(task)) = (&self.config, self.task) {
            if task != cfg.task {
                bail!("--task {} conflicts with config task {}", task.name(), cfg.task.name());
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.seeds = vec![s];
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        if let Some(w) = self.workers {
            cfg.num_workers = w;
        }
        if let Some(i) = self.iterations {
            cfg.max_iterations = i;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted demonstrations into an episode CSV.
    DemoGen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 6)]
        count: usize,
    },
    /// Run one configuration and write its metrics, log and checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        structure: Option<Structure>,
        /// Disable dynamic zone refreshes (demos become pinned).
        #[arg(long)]
        no_der: bool,
    },
    /// Run all structures with and without DER over the configured seeds,
    /// then summarize.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds, overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Aggregate metrics CSVs across seeds.
    Summarize {
        /// Metrics CSVs, or directories to scan for them.
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn metrics_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    name.ends_with(".csv") && !name.ends_with("_train.csv") && name != "summary.csv"
                })
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no metrics CSVs found");
    }
    Ok(out)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        ctrlc::set_handler(move || {
            log::warn!("interrupt received, finishing current episode");
            stop.store(true, Ordering::Relaxed);
        })?;
    }

    match Cli::parse().command {
        Command::DemoGen { common, count } => {
            let mut cfg = common.load()?;
            cfg.num_demos = count;
            if cfg.structure == Structure::NoDemos {
                cfg.structure = Structure::AllShotsAll;
            }
            let demos = generate_demos(&cfg)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join(format!("demos_{}_seed{}.csv", cfg.task.name(), cfg.seed));
            let mut w = BufWriter::new(File::create(&path)?);
            write_episodes(&mut w, &demos)?;
            w.flush()?;
            println!("wrote {} demonstrations to {}", demos.len(), path.display());
        }
        Command::Train {
            common,
            structure,
            no_der,
        } => {
            let mut cfg = common.load()?;
            if let Some(s) = structure {
                cfg.structure = s;
            }
            if no_der {
                cfg.der_enabled = false;
            }
            cfg.validate()?;
            let report = run_experiment(&cfg, Some(&common.out), &stop)?;
            let last = report.records.last();
            println!(
                "{}: {} iterations, {} env steps, {} train steps, final success rate {}",
                cfg.run_name(),
                report.records.len(),
                report.totals.env_steps,
                report.totals.train_steps,
                last.map_or("n/a".to_string(), |r| format!("{:.3}", r.success_rate))
            );
        }
        Command::Ablate { common, seeds } => {
            let mut cfg = common.load()?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            let paths = ablate(&cfg, &common.out, &stop)?;
            let summary = summarize(&paths, 0.5)?;
            let out = common.out.join("summary.csv");
            let mut w = BufWriter::new(File::create(&out)?);
            write_summary(&summary, &mut w)?;
            w.flush()?;
            println!("{} runs, summary in {}", paths.len(), out.display());
        }
        Command::Summarize {
            inputs,
            threshold,
            output,
        } => {
            let summary = summarize(&metrics_files(&inputs)?, threshold)?;
            match output {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(&path)?);
                    write_summary(&summary, &mut w)?;
                    w.flush()?;
                }
                None => write_summary(&summary, &mut std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}
