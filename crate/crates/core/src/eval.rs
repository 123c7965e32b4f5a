//! Re-compilability and re-executability scoring.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disasm;
use crate::pipeline::{wrap_translation_unit, DecompilationRecord};
use crate::toolchain::{CompilerConfig, OutputKind, RunVerdict, Toolchain, ToolchainError, DEFAULT_RUN_TIMEOUT};
use crate::types::{OptLevel, SourceFunction};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("record refers to unknown sample `{0}`")]
    UnknownSample(String),
    #[error("benchmark sample `{sample_id}` fails its own harness at {level}: {reason}")]
    InconsistentBenchmark {
        sample_id: String,
        level: OptLevel,
        reason: String,
    },
    #[error(transparent)]
    Toolchain(#[from] ToolchainError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSample {
    pub sample_id: String,
    pub reference_source: String,
    /// A `main` with assertions; exits 0 on success.
    pub test_harness: String,
    #[serde(default)]
    pub asm_by_level: BTreeMap<OptLevel, String>,
    pub entry_name: String,
}

impl EvalSample {
    pub fn executable_unit(&self, decompiled: &str) -> String {
        format!("{}\n{}", wrap_translation_unit(decompiled), self.test_harness)
    }
}

/// Scoring settings shared by every job of a run.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub toolchain: Toolchain,
    /// Compiler used for both metrics; its level is replaced by the
    /// record's level.
    pub compiler: CompilerConfig,
    pub run_timeout: Duration,
    pub scratch: Option<PathBuf>,
}

impl Scorer {
    pub fn new(toolchain: Toolchain, compiler: CompilerConfig) -> Self {
        Scorer {
            toolchain,
            compiler,
            run_timeout: DEFAULT_RUN_TIMEOUT,
            scratch: None,
        }
    }

    pub fn with_run_timeout(mut self, timeout: Duration) -> Self {
        self.run_timeout = timeout;
        self
    }

    pub fn with_scratch_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.scratch = Some(dir.into());
        self
    }

    fn workdir(&self) -> Result<tempfile::TempDir, ToolchainError> {
        let mut b = tempfile::Builder::new();
        b.prefix("sc2dec-eval-");
        Ok(match &self.scratch {
            Some(root) => b.tempdir_in(root)?,
            None => b.tempdir()?,
        })
    }

    pub fn recompilable(&self, decompiled: &str, level: OptLevel) -> Result<bool, ToolchainError> {
        let dir = self.workdir()?;
        score_recompilability_in(decompiled, &self.compiler.at_level(level), &self.toolchain, dir.path())
    }

    pub fn reexecutable(&self, decompiled: &str, sample: &EvalSample, level: OptLevel) -> Result<bool, ToolchainError> {
        let dir = self.workdir()?;
        score_reexecutability_in(
            decompiled,
            sample,
            &self.compiler.at_level(level),
            &self.toolchain,
            self.run_timeout,
            dir.path(),
        )
    }

    pub fn score(&self, code: &str, sample: &EvalSample, level: OptLevel) -> Result<SampleVerdict, ToolchainError> {
        let recompilable = self.recompilable(code, level)?;
        let reexecutable = self.reexecutable(code, sample, level)?;
        Ok(SampleVerdict {
            sample_id: sample.sample_id.clone(),
            opt_level: level,
            recompilable,
            reexecutable,
        })
    }
}

/// Non-timeout toolchain failures other than a missing tool count as a
/// failed compile.
fn verdict_or_tool_error<T>(r: Result<T, ToolchainError>, failed: T) -> Result<T, ToolchainError> {
    match r {
        Ok(v) => Ok(v),
        Err(e @ ToolchainError::ToolNotFound(_)) => Err(e),
        Err(_) => Ok(failed),
    }
}

/// True iff the wrapped code compiles as a shared library.
pub fn score_recompilability(
    decompiled: &str,
    cfg: &CompilerConfig,
    toolchain: &Toolchain,
) -> Result<bool, ToolchainError> {
    let dir = tempfile::tempdir()?;
    score_recompilability_in(decompiled, cfg, toolchain, dir.path())
}

fn score_recompilability_in(
    decompiled: &str,
    cfg: &CompilerConfig,
    toolchain: &Toolchain,
    workdir: &Path,
) -> Result<bool, ToolchainError> {
    if decompiled.trim().is_empty() {
        return Ok(false);
    }
    let unit = SourceFunction::bare("recompile", wrap_translation_unit(decompiled), "");
    let built = toolchain.compile_function(&unit, cfg, OutputKind::SharedLibrary, workdir);
    verdict_or_tool_error(built.map(|o| o.success), false)
}

/// True iff code plus harness builds into an executable that passes.
pub fn score_reexecutability(
    decompiled: &str,
    sample: &EvalSample,
    cfg: &CompilerConfig,
    toolchain: &Toolchain,
    timeout: Duration,
) -> Result<bool, ToolchainError> {
    let dir = tempfile::tempdir()?;
    score_reexecutability_in(decompiled, sample, cfg, toolchain, timeout, dir.path())
}

fn score_reexecutability_in(
    decompiled: &str,
    sample: &EvalSample,
    cfg: &CompilerConfig,
    toolchain: &Toolchain,
    timeout: Duration,
    workdir: &Path,
) -> Result<bool, ToolchainError> {
    if decompiled.trim().is_empty() {
        return Ok(false);
    }
    let unit = SourceFunction::bare("reexec", sample.executable_unit(decompiled), "main");
    let built = verdict_or_tool_error(
        toolchain.compile_function(&unit, cfg, OutputKind::Executable, workdir).map(Some),
        None,
    )?;
    let Some(exe) = built.and_then(|o| o.artifact_path.filter(|_| o.success)) else {
        return Ok(false);
    };
    Ok(toolchain.run_executable(&exe, timeout).verdict == RunVerdict::Pass)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleVerdict {
    pub sample_id: String,
    pub opt_level: OptLevel,
    pub recompilable: bool,
    pub reexecutable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: OptLevel,
    pub total: usize,
    pub recompilable_count: usize,
    pub reexecutable_count: usize,
    pub recompilable_pct: f64,
    pub reexecutable_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    /// Always O0..O3, in order.
    pub levels: Vec<LevelStats>,
    pub avg_recompilable: f64,
    pub avg_reexecutable: f64,
    pub rows: Vec<SampleVerdict>,
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        round2(100.0 * count as f64 / total as f64)
    }
}

impl EvalReport {
    pub fn from_rows(label: impl Into<String>, rows: Vec<SampleVerdict>) -> Self {
        let levels: Vec<LevelStats> = OptLevel::ALL
            .iter()
            .map(|&level| {
                let at: Vec<&SampleVerdict> = rows.iter().filter(|r| r.opt_level == level).collect();
                let total = at.len();
                let recompilable_count = at.iter().filter(|r| r.recompilable).count();
                let reexecutable_count = at.iter().filter(|r| r.reexecutable).count();
                LevelStats {
                    level,
                    total,
                    recompilable_count,
                    reexecutable_count,
                    recompilable_pct: pct(recompilable_count, total),
                    reexecutable_pct: pct(reexecutable_count, total),
                }
            })
            .collect();
        let mean = |f: fn(&LevelStats) -> f64| round2(levels.iter().map(f).sum::<f64>() / levels.len() as f64);
        EvalReport {
            label: label.into(),
            avg_recompilable: mean(|l| l.recompilable_pct),
            avg_reexecutable: mean(|l| l.reexecutable_pct),
            levels,
            rows,
        }
    }

    /// Re-executable implies re-compilable, per row and per level.
    pub fn ordering_holds(&self) -> bool {
        self.rows.iter().all(|r| r.recompilable || !r.reexecutable)
            && self
                .levels
                .iter()
                .all(|l| l.reexecutable_count <= l.recompilable_count && l.recompilable_count <= l.total)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores the final output of every record against its sample.
pub fn evaluate_run(
    label: &str,
    records: &[DecompilationRecord],
    benchmark: &[EvalSample],
    scorer: &Scorer,
) -> Result<EvalReport, EvalError> {
    let by_id: HashMap<&str, &EvalSample> = benchmark.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let jobs: Vec<(&DecompilationRecord, &EvalSample)> = records
        .iter()
        .map(|r| {
            by_id
                .get(r.sample_id.as_str())
                .map(|s| (r, *s))
                .ok_or_else(|| EvalError::UnknownSample(r.sample_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<SampleVerdict> = jobs
        .par_iter()
        .map(|(r, s)| scorer.score(&r.final_output, s, r.opt_level))
        .collect::<Result<_, _>>()?;
    Ok(EvalReport::from_rows(label, rows))
}

/// Checks that every reference passes its own harness at every level.
pub fn validate_benchmark(benchmark: &[EvalSample], scorer: &Scorer) -> Result<(), EvalError> {
    let jobs: Vec<(&EvalSample, OptLevel)> = benchmark
        .iter()
        .flat_map(|s| OptLevel::ALL.iter().map(move |&l| (s, l)))
        .collect();
    jobs.par_iter().try_for_each(|(s, level)| {
        let v = scorer.score(&s.reference_source, s, *level)?;
        if v.recompilable && v.reexecutable {
            Ok(())
        } else {
            Err(EvalError::InconsistentBenchmark {
                sample_id: s.sample_id.clone(),
                level: *level,
                reason: if v.recompilable { "harness fails" } else { "does not compile" }.to_string(),
            })
        }
    })
}

/// A benchmark entry before its assembly has been generated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSource {
    pub sample_id: String,
    pub reference_source: String,
    pub test_harness: String,
    pub entry_name: String,
}

/// Compiles each reference at O0..O3 and records the cleaned listing of
/// its entry function.
pub fn build_benchmark(
    sources: &[BenchmarkSource],
    compiler: &CompilerConfig,
    toolchain: &Toolchain,
    scratch: &Path,
) -> Result<Vec<EvalSample>, EvalError> {
    sources
        .par_iter()
        .map(|src| {
            let mut asm_by_level = BTreeMap::new();
            for level in OptLevel::ALL {
                let dir = tempfile::Builder::new().prefix("bench-").tempdir_in(scratch).map_err(ToolchainError::Io)?;
                let unit = SourceFunction::bare(&src.sample_id, wrap_translation_unit(&src.reference_source), &src.entry_name);
                let cfg = compiler.at_level(level);
                let built = toolchain.compile_function(&unit, &cfg, OutputKind::SharedLibrary, dir.path())?;
                let inconsistent = |reason: String| EvalError::InconsistentBenchmark {
                    sample_id: src.sample_id.clone(),
                    level,
                    reason,
                };
                let Some(artifact) = built.artifact_path.filter(|_| built.success) else {
                    return Err(inconsistent(built.diagnostics));
                };
                let raw = toolchain.disassemble(&artifact, false)?;
                let listing =
                    disasm::extract_function(&raw, &src.entry_name).map_err(|e| inconsistent(e.to_string()))?;
                asm_by_level.insert(level, listing.text);
            }
            Ok(EvalSample {
                sample_id: src.sample_id.clone(),
                reference_source: src.reference_source.clone(),
                test_harness: src.test_harness.clone(),
                asm_by_level,
                entry_name: src.entry_name.clone(),
            })
        })
        .collect()
}

/// Aligned text table: one row per report, re-compilability then
/// re-executability, each over O0..O3 and AVG.
pub fn render_table(reports: &[EvalReport]) -> String {
    let label_w = reports.iter().map(|r| r.label.len()).max().unwrap_or(0).max("Method".len());
    let cell = 8;
    let group = cell * 5;
    let mut out = String::new();
    let _ = writeln!(out, "{:<label_w$}  {:<group$}{}", "Method", "Re-Compilability", "Re-Executability");
    let mut header = format!("{:<label_w$}  ", "");
    for _ in 0..2 {
        for name in ["O0", "O1", "O2", "O3", "AVG"] {
            let _ = write!(header, "{name:>6}  ");
        }
    }
    out.push_str(header.trim_end());
    out.push('\n');
    for r in reports {
        let mut line = format!("{:<label_w$}  ", r.label);
        let rc = r.levels.iter().map(|l| l.recompilable_pct).chain([r.avg_recompilable]);
        let re = r.levels.iter().map(|l| l.reexecutable_pct).chain([r.avg_reexecutable]);
        for v in rc.chain(re) {
            let _ = write!(line, "{v:>6.2}  ");
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const INC: &str = "int inc(int a)\n{\n  return a + 1;\n}\n";
    const HARNESS: &str = "#include <assert.h>\nint main(void)\n{\n  assert(inc(1) == 2);\n  assert(inc(-1) == 0);\n  return 0;\n}\n";

    fn sample() -> EvalSample {
        EvalSample {
            sample_id: "inc".into(),
            reference_source: INC.into(),
            test_harness: HARNESS.into(),
            asm_by_level: BTreeMap::new(),
            entry_name: "inc".into(),
        }
    }

    fn scorer() -> Scorer {
        Scorer::new(Toolchain::default(), CompilerConfig::new("gcc", OptLevel::O0).with_flag("-lm"))
    }

    fn gcc(level: OptLevel) -> CompilerConfig {
        CompilerConfig::new("gcc", level)
    }

    #[test]
    fn reference_recompiles_and_empty_does_not() {
        let tc = Toolchain::default();
        assert!(score_recompilability(INC, &gcc(OptLevel::O2), &tc).unwrap());
        assert!(!score_recompilability("", &gcc(OptLevel::O2), &tc).unwrap());
        assert!(!score_recompilability("int inc(int a) { return a +; }", &gcc(OptLevel::O0), &tc).unwrap());
    }

    #[test]
    fn undefined_callee_passes_the_compile_stage() {
        let tc = Toolchain::default();
        let dir = tempfile::tempdir().unwrap();
        let code = "int g(void);\nint f(){return g();}";
        let unit = SourceFunction::bare("u", code, "f");
        for kind in [OutputKind::Object, OutputKind::SharedLibrary] {
            let out = tc.compile_function(&unit, &gcc(OptLevel::O0), kind, dir.path()).unwrap();
            assert!(out.success, "{kind:?}: {}", out.diagnostics);
        }
        assert!(score_recompilability(code, &gcc(OptLevel::O0), &tc).unwrap());
    }

    #[test]
    fn reference_reexecutes_at_every_level() {
        let tc = Toolchain::default();
        for level in OptLevel::ALL {
            assert!(score_reexecutability(INC, &sample(), &gcc(level), &tc, DEFAULT_RUN_TIMEOUT).unwrap());
        }
    }

    #[test]
    fn wrong_constant_compiles_but_fails() {
        let wrong = INC.replace("a + 1", "a + 2");
        let v = scorer().score(&wrong, &sample(), OptLevel::O1).unwrap();
        assert!(v.recompilable);
        assert!(!v.reexecutable);
    }

    #[test]
    fn dropped_statement_caught_by_harness() {
        let src = "int clamp0(int n)\n{\n  if (n < 0)\n    n = 0;\n  return n;\n}\n";
        let s = EvalSample {
            sample_id: "c".into(),
            reference_source: src.into(),
            test_harness: "#include <assert.h>\nint main(void){ assert(clamp0(-5) == 0); assert(clamp0(3) == 3); return 0; }\n".into(),
            asm_by_level: BTreeMap::new(),
            entry_name: "clamp0".into(),
        };
        let sc = scorer();
        assert!(sc.score(src, &s, OptLevel::O0).unwrap().reexecutable);
        let mutated = crate::mutate::delete_one_statement(src, 0);
        assert_ne!(mutated, src);
        let v = sc.score(&mutated, &s, OptLevel::O0).unwrap();
        assert!(v.recompilable && !v.reexecutable, "{mutated}");
    }

    #[test]
    fn looping_code_times_out_as_failure() {
        let spin = "int inc(int a)\n{\n  for (;;) a++;\n  return a;\n}\n";
        let sc = scorer().with_run_timeout(Duration::from_millis(300));
        let v = sc.score(spin, &sample(), OptLevel::O0).unwrap();
        assert!(v.recompilable && !v.reexecutable);
    }

    fn row(level: OptLevel, rc: bool, re: bool) -> SampleVerdict {
        SampleVerdict {
            sample_id: format!("{level}-{rc}-{re}"),
            opt_level: level,
            recompilable: rc,
            reexecutable: re,
        }
    }

    #[test]
    fn counts_and_averages() {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push(row(OptLevel::O0, i < 3, i < 2));
        }
        for level in [OptLevel::O1, OptLevel::O2, OptLevel::O3] {
            rows.extend((0..3).map(|i| row(level, true, i == 0)));
        }
        let r = EvalReport::from_rows("mixed", rows);
        assert_eq!(r.levels[0].recompilable_pct, 30.0);
        assert_eq!(r.levels[0].reexecutable_pct, 20.0);
        assert_eq!(r.levels[1].reexecutable_pct, 33.33);
        // (30 + 100 * 3) / 4
        assert_eq!(r.avg_recompilable, 82.5);
        // (20 + 33.33 * 3) / 4 = 29.9975
        assert_eq!(r.avg_reexecutable, 30.0);
        assert!(r.ordering_holds());
    }

    #[test]
    fn empty_levels_score_zero() {
        let r = EvalReport::from_rows("none", Vec::new());
        assert!(r.levels.iter().all(|l| l.total == 0 && l.recompilable_pct == 0.0));
        assert_eq!(r.avg_reexecutable, 0.0);
    }

    #[test]
    fn table_layout() {
        let rows = OptLevel::ALL.iter().map(|&l| row(l, true, true)).collect();
        let t = render_table(&[EvalReport::from_rows("echo", rows)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Method") && lines[0].contains("Re-Compilability"));
        assert!(lines[0].find("Re-Compilability") < lines[0].find("Re-Executability"));
        assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>(), ["O0", "O1", "O2", "O3", "AVG", "O0", "O1", "O2", "O3", "AVG"]);
        assert_eq!(lines[2].split_whitespace().filter(|c| *c == "100.00").count(), 10);
        // columns line up with their headers
        assert_eq!(lines[1].rfind("AVG").unwrap() + 3, lines[2].len());
    }

    #[test]
    fn unknown_sample_rejected() {
        let rec = DecompilationRecord {
            sample_id: "nope".into(),
            opt_level: OptLevel::O0,
            strategy: Default::default(),
            initial_output: String::new(),
            initial_compilable: false,
            context: None,
            context_compiler_id: None,
            final_output: String::new(),
            rounds: 1,
            diagnostics: String::new(),
            prompts: Vec::new(),
        };
        let r = evaluate_run("x", &[rec], &[sample()], &scorer());
        assert!(matches!(r, Err(EvalError::UnknownSample(id)) if id == "nope"));
    }

    #[test]
    fn built_benchmark_is_self_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let src = BenchmarkSource {
            sample_id: "inc".into(),
            reference_source: INC.into(),
            test_harness: HARNESS.into(),
            entry_name: "inc".into(),
        };
        let bench = build_benchmark(&[src], &gcc(OptLevel::O0), &Toolchain::default(), dir.path()).unwrap();
        assert_eq!(bench[0].asm_by_level.len(), 4);
        assert!(bench[0].asm_by_level[&OptLevel::O0].contains("ret"));
        validate_benchmark(&bench, &scorer()).unwrap();

        let mut broken = bench[0].clone();
        broken.test_harness = HARNESS.replace("== 2", "== 3");
        assert!(matches!(
            validate_benchmark(&[broken], &scorer()),
            Err(EvalError::InconsistentBenchmark { .. })
        ));
    }
}
