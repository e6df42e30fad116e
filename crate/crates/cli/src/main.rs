use std::path::PathBuf;

use anyhow::{Context, Result};
use bhqrc::harness::{self, Experiment, ExperimentConfig, OutputFiles, OutputFormat};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bose-Hubbard quantum reservoir computing experiments.
#[derive(Parser)]
#[command(name = "bhqrc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// First grid point only: capacities for every task index and Δt.
    Run(Common),
    /// Cartesian product of the configured grids.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Keep points already complete in the output tables.
        #[arg(long)]
        resume: bool,
    },
    /// Gap ratio and information dimension of the unit-filling sector.
    Spectral(Common),
    /// Singular values of the training design matrix per topology.
    Svd(Common),
    /// Capacity curves at the cutoffs listed in `lattice.cutoff_check`.
    CutoffCheck(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Table format (overrides `output.format`).
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, OutputFiles)> {
        let mut config = ExperimentConfig::load(&self.config).with_context(|| format!("reading {}", self.config.display()))?;
        if let Some(dir) = &self.out {
            config.output.dir = dir.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(f) = self.format {
            config.output.format = match f {
                Format::Csv => OutputFormat::Csv,
                Format::Json => OutputFormat::Json,
            };
        }
        config.validate()?;
        let files = OutputFiles::from_config(&config);
        Ok((config, files))
    }
}

fn main() -> Result<()> {
    // results must not depend on the worker count
    faer::set_global_parallelism(faer::Par::Seq);
    let cli = Cli::parse();
    match cli.command {
        Command::Run(c) => {
            let (config, files) = c.load()?;
            let out = harness::run(&Experiment::new(config)?, c.workers, Some(&files))?;
            for s in out.summaries().filter(|s| s.selected) {
                println!(
                    "{} dt={} shots={} max_index={}",
                    s.point_id,
                    s.dt,
                    s.shots.map_or("ideal".into(), |n| n.to_string()),
                    s.max_index
                );
            }
            println!("wrote {}", files.table("").display());
        }
        Command::Sweep { common, resume } => {
            let (config, files) = common.load()?;
            let out = harness::sweep(&Experiment::new(config)?, common.workers, Some(&files), resume)?;
            println!(
                "{} points ({} resumed), wrote {}",
                out.points.len(),
                out.resumed,
                files.table("").display()
            );
        }
        Command::Spectral(c) => {
            let (config, files) = c.load()?;
            for r in harness::spectral(&config, c.workers, Some(&files))? {
                println!(
                    "{} J/UN={} <r>={:.4} <D1>={:.4} (GOE {:.4}, {:.4})",
                    r.topology, r.j_over_un, r.mean_gap_ratio, r.mean_information_dimension, r.goe_gap_ratio, r.goe_information_dimension
                );
            }
            println!("wrote {}", files.table("_spectral").display());
        }
        Command::Svd(c) => {
            let (config, files) = c.load()?;
            for r in harness::svd(&Experiment::new(config)?, c.workers, Some(&files))? {
                println!("{} redundant={} of {}", r.topology, r.redundant, r.columns);
            }
            println!("wrote {}", files.table("_svd").display());
        }
        Command::CutoffCheck(c) => {
            let (config, files) = c.load()?;
            let cmp = harness::cutoff_check(&Experiment::new(config)?, Some(&files))?;
            println!("dt={} cutoffs={:?} max |dC|={:.4}", cmp.dt, cmp.cutoffs, cmp.max_abs_difference);
            println!("wrote {}", files.table("_cutoff").display());
        }
    }
    Ok(())
}
