use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sc2dec::eval::{self, BenchmarkSource, EvalError, EvalReport, EvalSample, SampleVerdict, Scorer};
use sc2dec::fae::{self, SkipRecord, TrainingExample, TrainingKind};
use sc2dec::fixtures;
use sc2dec::prompt::{self, StrategyKind};
use sc2dec::retrieval::{self, AsmIndex};
use sc2dec::{DecompilationRecord, DecompilationTask, OptLevel, Pipeline, SourceFunction, Toolchain};

use crate::config::RunConfig;
use crate::jsonl;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const BENCHMARK_FILE: &str = "benchmark.jsonl";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SKIPS_FILE: &str = "skips.jsonl";
pub const REJECTED_FILE: &str = "rejected.jsonl";
pub const INDEX_FILE: &str = "index.json";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

/// One invocation: effective config, run directory and worker pool.
pub struct RunContext {
    pub config: RunConfig,
    pub run_dir: PathBuf,
    pool: Arc<rayon::ThreadPool>,
    toolchain: Toolchain,
}

impl RunContext {
    /// Creates the run directory (timestamped under the runs root unless
    /// given) and echoes the config into it.
    pub fn create(config: RunConfig, run_dir: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let run_dir = match run_dir {
            Some(d) => {
                std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
                d
            }
            None => fresh_timestamped_dir(config.paths.runs_root.as_deref().unwrap_or(Path::new("runs")))?,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .context("building worker pool")?;
        let ctx = RunContext {
            config,
            run_dir,
            pool: Arc::new(pool),
            toolchain: Toolchain::from_env(),
        };
        ctx.echo_config()?;
        Ok(ctx)
    }

    /// Same pool and toolchain, different config and directory.
    pub fn child(&self, config: RunConfig, run_dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&run_dir)?;
        let ctx = RunContext {
            config,
            run_dir,
            pool: Arc::clone(&self.pool),
            toolchain: self.toolchain.clone(),
        };
        ctx.echo_config()?;
        Ok(ctx)
    }

    fn echo_config(&self) -> Result<()> {
        std::fs::write(self.path(CONFIG_ECHO_FILE), self.config.to_toml()?)?;
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    fn scratch(&self) -> Result<PathBuf> {
        let dir = self.run_dir.join("tmp");
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn scorer(&self) -> Result<Scorer> {
        Ok(Scorer::new(self.toolchain.clone(), self.config.toolchain.config(OptLevel::O0))
            .with_run_timeout(Duration::from_secs_f64(self.config.timeout_s))
            .with_scratch_dir(self.scratch()?))
    }

    fn require(&self, path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        path.clone().ok_or_else(|| anyhow!("no {what} given (flag or config paths.{what})"))
    }

    /// An output is reused when it exists and `--force` is off.
    fn reusable(&self, path: &Path) -> bool {
        !self.config.force && path.exists()
    }
}

fn fresh_timestamped_dir(root: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
    for n in 0.. {
        let name = if n == 0 { stamp.clone() } else { format!("{stamp}-{n}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

fn load_benchmark(path: &Path) -> Result<Vec<EvalSample>> {
    jsonl::read(path)
}

fn write_benchmark(ctx: &RunContext, sources: &[BenchmarkSource]) -> Result<PathBuf> {
    let out = ctx.path(BENCHMARK_FILE);
    if ctx.reusable(&out) {
        log::info!("reusing {}", out.display());
        return Ok(out);
    }
    let scratch = ctx.scratch()?;
    let compiler = ctx.config.toolchain.config(OptLevel::O0);
    let bench = ctx
        .pool
        .install(|| eval::build_benchmark(sources, &compiler, &ctx.toolchain, &scratch))?;
    ctx.pool.install(|| eval::validate_benchmark(&bench, &ctx.scorer()?).map_err(anyhow::Error::from))?;
    jsonl::write(&out, &bench)?;
    Ok(out)
}

/// Writes the built-in benchmark and its training-corpus form.
pub fn cmd_toy_benchmark(ctx: &RunContext) -> Result<PathBuf> {
    let corpus = ctx.path(CORPUS_FILE);
    if !ctx.reusable(&corpus) {
        jsonl::write(&corpus, &fixtures::toy_corpus())?;
    }
    write_benchmark(ctx, &fixtures::toy_benchmark_sources())
}

/// Compiles benchmark sources at every level and checks them against their
/// harnesses.
pub fn cmd_build_benchmark(ctx: &RunContext, sources: &Path) -> Result<PathBuf> {
    let sources: Vec<BenchmarkSource> = jsonl::read(sources)?;
    write_benchmark(ctx, &sources)
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize)]
pub struct SynthesisSummary {
    pub examples: usize,
    pub skipped: usize,
    pub rejected: usize,
    pub reused: usize,
}

#[derive(Serialize, Deserialize)]
struct Rejected {
    sample_id: String,
    reason: String,
}

pub fn cmd_synthesize(ctx: &RunContext) -> Result<SynthesisSummary> {
    let corpus_path = ctx.require(&ctx.config.paths.corpus, "corpus")?;
    let corpus: Vec<SourceFunction> = jsonl::read(&corpus_path)?;
    let (kept, rejected) = ctx.config.filter.apply(corpus);
    let rejected_count = rejected.len();
    jsonl::write(
        &ctx.path(REJECTED_FILE),
        &rejected
            .into_iter()
            .map(|(sample_id, reason)| Rejected { sample_id, reason })
            .collect::<Vec<_>>(),
    )?;
    let order: HashMap<&str, usize> = kept.iter().enumerate().map(|(i, f)| (f.id.as_str(), i)).collect();
    let rank = |id: &str| order.get(id).copied().unwrap_or(usize::MAX);

    let skips_path = ctx.path(SKIPS_FILE);
    let mut skips: Vec<SkipRecord> = if ctx.config.force {
        Vec::new()
    } else {
        jsonl::read_if_exists(&skips_path)?
    };
    let scratch = ctx.scratch()?;
    let mut summary = SynthesisSummary {
        rejected: rejected_count,
        ..Default::default()
    };

    for &level in &ctx.config.toolchain.opt_levels {
        let files = TrainingKind::ALL.map(|k| ctx.path(&k.file_name(level)));
        let mut existing: Vec<TrainingExample> = Vec::new();
        if !ctx.config.force {
            for f in &files {
                existing.extend(jsonl::read_if_exists::<TrainingExample>(f)?);
            }
        }
        let done: BTreeSet<&str> = existing
            .iter()
            .map(|e| e.sample_id.as_str())
            .chain(skips.iter().filter(|s| s.level == level).map(|s| s.sample_id.as_str()))
            .collect();
        let todo: Vec<SourceFunction> = kept.iter().filter(|f| !done.contains(f.id.as_str())).cloned().collect();
        summary.reused += kept.len() - todo.len();

        let cfg = ctx.config.toolchain.config(level).with_debug(true);
        let fresh = ctx
            .pool
            .install(|| fae::synthesize(&todo, std::slice::from_ref(&cfg), &ctx.toolchain, &scratch))?;
        for s in &fresh.skips {
            log::warn!("skipped {} at {}: {}", s.sample_id, s.level, s.reason);
        }
        summary.examples += fresh.examples.len();
        summary.skipped += fresh.skips.len();
        skips.extend(fresh.skips);

        let mut all = existing;
        all.extend(fresh.examples);
        all.retain(|e| order.contains_key(e.sample_id.as_str()));
        all.sort_by_key(|e| rank(&e.sample_id));
        for (kind, file) in TrainingKind::ALL.iter().zip(&files) {
            let of_kind: Vec<&TrainingExample> = all.iter().filter(|e| e.kind == *kind).collect();
            jsonl::write(file, &of_kind)?;
        }
    }
    skips.sort_by_key(|s| (rank(&s.sample_id), s.level));
    jsonl::write(&skips_path, &skips)?;
    Ok(summary)
}

fn answers_from(bench: &[EvalSample]) -> BTreeMap<String, String> {
    bench
        .iter()
        .map(|s| (s.sample_id.clone(), s.reference_source.clone()))
        .collect()
}

/// Tasks for every benchmark sample at every configured level.
pub fn tasks_from_benchmark(config: &RunConfig, bench: &[EvalSample]) -> Vec<DecompilationTask> {
    let mut tasks = Vec::new();
    for s in bench {
        for &level in &config.toolchain.opt_levels {
            let Some(asm) = s.asm_by_level.get(&level) else {
                log::warn!("{} has no {} assembly", s.sample_id, level);
                continue;
            };
            let mut t = DecompilationTask::new(&s.sample_id, asm.clone(), level);
            t.strategy = config.strategy;
            t.context_compiler = config.toolchain.context_config();
            t.context_opt_level_override = config.context_level_override;
            t.entry_name = Some(s.entry_name.clone());
            tasks.push(t);
        }
    }
    tasks
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize)]
pub struct DecompileSummary {
    pub tasks: usize,
    pub reused: usize,
    pub written: usize,
    pub failed: usize,
}

#[derive(Serialize, Deserialize)]
struct TaskFailure {
    sample_id: String,
    opt_level: OptLevel,
    error: String,
}

/// Runs the pipeline over a task file, or over the benchmark when no task
/// file is given. Writes `records.jsonl` in the run directory.
pub fn cmd_decompile(ctx: &RunContext) -> Result<DecompileSummary> {
    let cfg = &ctx.config;
    let bench = match &cfg.paths.benchmark {
        Some(p) => load_benchmark(p)?,
        None => Vec::new(),
    };
    let tasks = match &cfg.paths.tasks {
        Some(p) => jsonl::read::<DecompilationTask>(p)?,
        None if !bench.is_empty() => tasks_from_benchmark(cfg, &bench),
        None => bail!("decompile needs --tasks or --benchmark"),
    };
    if cfg.backend.needs_answers() && bench.is_empty() {
        bail!("the {:?} backend answers from the benchmark; pass --benchmark", cfg.backend.kind);
    }
    let backend = cfg.backend.resolve(answers_from(&bench), cfg.parallelism)?.build()?;
    let mut pipeline = Pipeline::new(Arc::from(backend), ctx.toolchain.clone())
        .with_scratch_dir(ctx.scratch()?)
        .with_options(sc2dec::pipeline::PipelineOptions {
            max_new_tokens: cfg.backend.max_new_tokens,
            ..Default::default()
        });
    if tasks.iter().any(|t| t.strategy.kind == StrategyKind::Retrieval) {
        let path = ctx.require(&cfg.paths.index, "index")?;
        let index = AsmIndex::from_json(&std::fs::read_to_string(&path)?)?;
        pipeline = pipeline.with_index(Arc::new(index));
    }

    let records_path = ctx.path(RECORDS_FILE);
    let errors_path = ctx.path(ERRORS_FILE);
    if cfg.force {
        for p in [&records_path, &errors_path] {
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
    }
    let done: BTreeSet<(String, OptLevel)> = jsonl::read_if_exists::<DecompilationRecord>(&records_path)?
        .into_iter()
        .map(|r| (r.sample_id, r.opt_level))
        .collect();
    let todo: Vec<&DecompilationTask> = tasks
        .iter()
        .filter(|t| !done.contains(&(t.sample_id.clone(), t.opt_level)))
        .collect();
    let mut summary = DecompileSummary {
        tasks: tasks.len(),
        reused: tasks.len() - todo.len(),
        ..Default::default()
    };

    // chunks keep output order deterministic while bounding lost work
    for chunk in todo.chunks(cfg.parallelism * 4) {
        let results: Vec<_> = ctx.pool.install(|| chunk.par_iter().map(|t| pipeline.run(t)).collect());
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (task, r) in chunk.iter().zip(results) {
            match r {
                Ok(rec) => records.push(rec),
                Err(e) => {
                    log::error!("{} at {}: {e}", task.sample_id, task.opt_level);
                    failures.push(TaskFailure {
                        sample_id: task.sample_id.clone(),
                        opt_level: task.opt_level,
                        error: e.to_string(),
                    });
                }
            }
        }
        summary.written += records.len();
        summary.failed += failures.len();
        jsonl::append(&records_path, &records)?;
        if !failures.is_empty() {
            jsonl::append(&errors_path, &failures)?;
        }
    }
    Ok(summary)
}

/// Scores records against the benchmark; writes verdicts, `report.json`
/// and `report.txt`.
pub fn cmd_evaluate(ctx: &RunContext, label: Option<&str>) -> Result<EvalReport> {
    let cfg = &ctx.config;
    let bench = load_benchmark(&ctx.require(&cfg.paths.benchmark, "benchmark")?)?;
    let records_path = cfg.paths.records.clone().unwrap_or_else(|| ctx.path(RECORDS_FILE));
    let records: Vec<DecompilationRecord> = jsonl::read(&records_path)?;
    let by_id: HashMap<&str, &EvalSample> = bench.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    if let Some(r) = records.iter().find(|r| !by_id.contains_key(r.sample_id.as_str())) {
        return Err(EvalError::UnknownSample(r.sample_id.clone()).into());
    }

    let verdicts_path = ctx.path(VERDICTS_FILE);
    let previous: HashMap<(String, OptLevel), SampleVerdict> = if cfg.force {
        HashMap::new()
    } else {
        jsonl::read_if_exists::<SampleVerdict>(&verdicts_path)?
            .into_iter()
            .map(|v| ((v.sample_id.clone(), v.opt_level), v))
            .collect()
    };
    let scorer = ctx.scorer()?;
    let rows: Vec<SampleVerdict> = ctx.pool.install(|| {
        records
            .par_iter()
            .map(|r| match previous.get(&(r.sample_id.clone(), r.opt_level)) {
                Some(v) => Ok(v.clone()),
                None => scorer.score(&r.final_output, by_id[r.sample_id.as_str()], r.opt_level),
            })
            .collect::<Result<_, _>>()
    })?;
    jsonl::write(&verdicts_path, &rows)?;

    let label = label.map(str::to_string).unwrap_or_else(|| default_label(cfg));
    let report = EvalReport::from_rows(label, rows);
    std::fs::write(ctx.path("report.json"), report.to_json())?;
    std::fs::write(ctx.path("report.txt"), eval::render_table(std::slice::from_ref(&report)))?;
    Ok(report)
}

fn default_label(cfg: &RunConfig) -> String {
    serde_json::to_value(cfg.strategy.kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Builds a BM25 index from end-to-end training files.
pub fn cmd_index(ctx: &RunContext, inputs: &[PathBuf]) -> Result<PathBuf> {
    let out = ctx.path(INDEX_FILE);
    if ctx.reusable(&out) {
        log::info!("reusing {}", out.display());
        return Ok(out);
    }
    let mut docs = Vec::new();
    for input in inputs {
        for ex in jsonl::read::<TrainingExample>(input)? {
            if ex.kind != TrainingKind::EndToEnd {
                continue;
            }
            let asm = prompt::parse_vanilla(&ex.prompt).map_or(ex.prompt.as_str(), |(_, a)| a).to_string();
            docs.push((format!("{}@{}", ex.sample_id, ex.opt_level), asm, ex.completion));
        }
    }
    let index = retrieval::build_index_with(docs, ctx.config.bm25.k1, ctx.config.bm25.b)?;
    std::fs::write(&out, index.to_json()?)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

/// Ranks index documents against the assembly in `query`.
pub fn cmd_retrieve(ctx: &RunContext, query: &Path) -> Result<Vec<Hit>> {
    let index_path = ctx.require(&ctx.config.paths.index, "index")?;
    let index = AsmIndex::from_json(&std::fs::read_to_string(&index_path)?)?;
    let asm = std::fs::read_to_string(query).with_context(|| format!("reading {}", query.display()))?;
    let hits: Vec<Hit> = index
        .query(&asm, ctx.config.bm25.top_k.max(1))
        .into_iter()
        .map(|(doc_id, score)| Hit { doc_id, score })
        .collect();
    jsonl::write(&ctx.path("retrieval.jsonl"), &hits)?;
    Ok(hits)
}

/// One decompile + evaluate cell per (context compiler, context level).
pub fn cmd_matrix(ctx: &RunContext) -> Result<Vec<EvalReport>> {
    let base = &ctx.config;
    if base.matrix.compilers.is_empty() || base.matrix.context_levels.is_empty() {
        bail!("matrix needs at least one compiler and one context level");
    }
    let mut reports = Vec::new();
    for compiler in &base.matrix.compilers {
        for &level in &base.matrix.context_levels {
            let mut cfg = base.clone();
            cfg.toolchain.context_compiler = Some(compiler.clone());
            cfg.context_level_override = Some(level);
            let dir = ctx.run_dir.join("matrix").join(format!("{}_{}", sc2dec::toolchain::file_stem(compiler), level));
            let cell = ctx.child(cfg, dir)?;
            let summary = cmd_decompile(&cell)?;
            log::info!("{compiler} {level}: {summary:?}");
            let label = format!("{} {compiler} ctx={level}", default_label(base));
            reports.push(cmd_evaluate(&cell, Some(&label))?);
        }
    }
    std::fs::write(ctx.path("matrix.txt"), eval::render_table(&reports))?;
    std::fs::write(ctx.path("matrix.json"), serde_json::to_string_pretty(&reports)?)?;
    Ok(reports)
}
