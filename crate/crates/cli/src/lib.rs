//! Command-line front end for the `sc2dec` library.

pub mod commands;
pub mod config;
pub mod jsonl;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use sc2dec::prompt::{StrategyKind, TemplateFamily};
use sc2dec::OptLevel;

use crate::commands::RunContext;
use crate::config::{parse_strategy, parse_template, BackendChoice, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "sc2dec", version, about = "Decompile, synthesize alignment data and score re-executability")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory; defaults to a timestamped directory under `runs/`.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendChoice>,
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Mutator seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub compiler: Option<String>,
    /// Compiler rebuilding model output for self-constructed context.
    #[arg(long, global = true)]
    pub context_compiler: Option<String>,
    /// Levels to build or decompile, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub opt_level: Vec<OptLevel>,
    #[arg(long, global = true, value_parser = parse_strategy)]
    pub strategy: Option<StrategyKind>,
    #[arg(long, global = true, value_parser = parse_template)]
    pub template: Option<TemplateFamily>,
    /// Compile self-constructed context at this level instead of the target's.
    #[arg(long, global = true)]
    pub context_level: Option<OptLevel>,
    /// Seconds a test binary may run.
    #[arg(long, global = true)]
    pub timeout: Option<f64>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Recompute outputs that already exist.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the built-in benchmark and corpus into the run directory.
    ToyBenchmark,
    /// Compile benchmark sources (JSONL) at every level.
    BuildBenchmark {
        #[arg(long)]
        sources: PathBuf,
    },
    /// Synthesize end-to-end and step-by-step training data.
    Synthesize {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        max_samples: Option<usize>,
        /// Reject functions using any of these identifiers.
        #[arg(long, value_delimiter = ',')]
        reject: Vec<String>,
    },
    /// Decompile a task file or every benchmark sample.
    Decompile {
        #[arg(long)]
        benchmark: Option<PathBuf>,
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Score decompilation records.
    Evaluate {
        #[arg(long)]
        benchmark: Option<PathBuf>,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
    },
    /// Build a BM25 index from end-to-end training files.
    Index {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        k1: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
    },
    /// Query an index with an assembly file.
    Retrieve {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Decompile and evaluate once per context compiler and level.
    Matrix {
        #[arg(long)]
        benchmark: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        context_levels: Vec<OptLevel>,
        #[arg(long, value_delimiter = ',')]
        compilers: Vec<String>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
}

impl GlobalArgs {
    /// Config file (or defaults) with every given flag applied.
    pub fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(b) = self.backend {
            cfg.backend.kind = b;
        }
        if let Some(e) = &self.endpoint {
            cfg.backend.endpoint = Some(e.clone());
        }
        if let Some(m) = &self.model {
            cfg.backend.model = Some(m.clone());
        }
        if let Some(s) = self.seed {
            cfg.backend.seed = s;
        }
        if let Some(c) = &self.compiler {
            cfg.toolchain.compiler = c.clone();
        }
        if let Some(c) = &self.context_compiler {
            cfg.toolchain.context_compiler = Some(c.clone());
        }
        if !self.opt_level.is_empty() {
            cfg.toolchain.opt_levels = self.opt_level.clone();
        }
        if let Some(s) = self.strategy {
            cfg.strategy.kind = s;
        }
        if let Some(t) = self.template {
            cfg.strategy.template_family = t;
        }
        if let Some(l) = self.context_level {
            cfg.context_level_override = Some(l);
        }
        if let Some(t) = self.timeout {
            cfg.timeout_s = t;
        }
        if let Some(p) = self.parallelism {
            cfg.parallelism = p;
        }
        if self.force {
            cfg.force = true;
        }
        Ok(cfg)
    }
}

fn set(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

/// Applies subcommand arguments to the config.
fn apply_command_args(cfg: &mut RunConfig, command: &Command) {
    match command {
        Command::ToyBenchmark | Command::BuildBenchmark { .. } => {}
        Command::Synthesize {
            corpus,
            max_samples,
            reject,
        } => {
            set(&mut cfg.paths.corpus, corpus);
            if max_samples.is_some() {
                cfg.filter.max_samples = *max_samples;
            }
            if !reject.is_empty() {
                cfg.filter.reject_identifiers = reject.clone();
            }
        }
        Command::Decompile { benchmark, tasks, index } => {
            set(&mut cfg.paths.benchmark, benchmark);
            set(&mut cfg.paths.tasks, tasks);
            set(&mut cfg.paths.index, index);
        }
        Command::Evaluate { benchmark, records, .. } => {
            set(&mut cfg.paths.benchmark, benchmark);
            set(&mut cfg.paths.records, records);
        }
        Command::Index { k1, b, .. } => {
            if let Some(k1) = k1 {
                cfg.bm25.k1 = *k1;
            }
            if let Some(b) = b {
                cfg.bm25.b = *b;
            }
        }
        Command::Retrieve { index, top_k, .. } => {
            set(&mut cfg.paths.index, index);
            if let Some(k) = top_k {
                cfg.bm25.top_k = *k;
            }
        }
        Command::Matrix {
            benchmark,
            context_levels,
            compilers,
            index,
        } => {
            set(&mut cfg.paths.benchmark, benchmark);
            set(&mut cfg.paths.index, index);
            if !context_levels.is_empty() {
                cfg.matrix.context_levels = context_levels.clone();
            }
            if !compilers.is_empty() {
                cfg.matrix.compilers = compilers.clone();
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = cli.global.effective_config()?;
    apply_command_args(&mut cfg, &cli.command);
    let ctx = RunContext::create(cfg, cli.global.run_dir.clone())?;
    log::info!("run directory {}", ctx.run_dir.display());

    match &cli.command {
        Command::ToyBenchmark => {
            let p = commands::cmd_toy_benchmark(&ctx)?;
            println!("{}", p.display());
        }
        Command::BuildBenchmark { sources } => {
            let p = commands::cmd_build_benchmark(&ctx, sources)?;
            println!("{}", p.display());
        }
        Command::Synthesize { .. } => {
            let s = commands::cmd_synthesize(&ctx)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Decompile { .. } => {
            let s = commands::cmd_decompile(&ctx)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Evaluate { label, .. } => {
            let report = commands::cmd_evaluate(&ctx, label.as_deref())?;
            print!("{}", sc2dec::eval::render_table(std::slice::from_ref(&report)));
        }
        Command::Index { inputs, .. } => {
            let p = commands::cmd_index(&ctx, inputs)?;
            println!("{}", p.display());
        }
        Command::Retrieve { query, .. } => {
            for hit in commands::cmd_retrieve(&ctx, query)? {
                println!("{}\t{:.6}", hit.doc_id, hit.score);
            }
        }
        Command::Matrix { .. } => {
            let reports = commands::cmd_matrix(&ctx)?;
            print!("{}", sc2dec::eval::render_table(&reports));
        }
    }
    Ok(())
}
