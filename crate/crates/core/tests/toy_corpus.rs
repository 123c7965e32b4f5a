use std::collections::BTreeMap;
use std::sync::Arc;

use sc2dec::backend::{EchoOracle, NullModel};
use sc2dec::disasm;
use sc2dec::eval::{build_benchmark, evaluate_run, Scorer};
use sc2dec::fae::{self, TrainingKind};
use sc2dec::fixtures::{toy_benchmark_sources, toy_corpus};
use sc2dec::toolchain::{CompilerConfig, OutputKind, Toolchain};
use sc2dec::{DecompilationTask, OptLevel, Pipeline};

fn gcc() -> CompilerConfig {
    CompilerConfig::new("gcc", OptLevel::O0).with_flag("-lm")
}

#[test]
fn step_by_step_examples_cover_the_listing() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy_corpus();
    let cfgs: Vec<CompilerConfig> = OptLevel::ALL.iter().map(|&l| gcc().at_level(l).with_debug(true)).collect();
    let out = fae::synthesize(&corpus, &cfgs, &Toolchain::default(), dir.path()).unwrap();
    assert!(out.skips.is_empty(), "{:?}", out.skips);
    assert_eq!(out.examples.len(), corpus.len() * 8);

    let again = fae::synthesize(&corpus, &cfgs, &Toolchain::default(), dir.path()).unwrap();
    assert_eq!(out, again);

    for ex in out.examples.iter().filter(|e| e.kind == TrainingKind::StepByStep) {
        let f = corpus.iter().find(|f| f.id == ex.sample_id).unwrap();
        let (blocks, full) = fae::parse_step_by_step(&ex.completion).unwrap();
        assert_eq!(full, f.body);
        let (_, listing) = sc2dec::prompt::parse_vanilla(&ex.prompt).unwrap();
        let joined: Vec<&str> = blocks.iter().flat_map(|b| b.asm_lines.iter().map(String::as_str)).collect();
        assert_eq!(joined.join("\n"), listing, "{} {}", ex.sample_id, ex.opt_level);
    }
}

#[test]
fn debug_free_builds_have_no_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let tc = Toolchain::default();
    for f in toy_corpus().iter().take(3) {
        let built = tc.compile_function(f, &gcc(), OutputKind::SharedLibrary, dir.path()).unwrap();
        let raw = tc.disassemble(&built.artifact_path.unwrap(), true).unwrap();
        assert!(matches!(
            disasm::parse_interleaved(&raw, &f.entry_name),
            Err(disasm::DisasmError::NoDebugInfo(_))
        ));
    }
}

#[test]
fn echo_and_null_bound_the_scores() {
    let dir = tempfile::tempdir().unwrap();
    let tc = Toolchain::default();
    let bench = build_benchmark(&toy_benchmark_sources(), &gcc(), &tc, dir.path()).unwrap();
    let answers: BTreeMap<String, String> =
        bench.iter().map(|s| (s.sample_id.clone(), s.reference_source.clone())).collect();
    let tasks: Vec<DecompilationTask> = bench
        .iter()
        .flat_map(|s| {
            s.asm_by_level.iter().map(|(l, asm)| {
                let mut t = DecompilationTask::new(&s.sample_id, asm.clone(), *l);
                t.entry_name = Some(s.entry_name.clone());
                t
            })
        })
        .collect();
    let scorer = Scorer::new(tc.clone(), gcc());

    let echo = Pipeline::new(Arc::new(EchoOracle::new(answers)), tc.clone());
    let records: Vec<_> = tasks.iter().map(|t| echo.run(t).unwrap()).collect();
    let report = evaluate_run("echo", &records, &bench, &scorer).unwrap();
    assert!(report.levels.iter().all(|l| l.recompilable_pct == 100.0 && l.reexecutable_pct == 100.0));
    assert_eq!((report.avg_recompilable, report.avg_reexecutable), (100.0, 100.0));

    let null = Pipeline::new(Arc::new(NullModel), tc);
    let records: Vec<_> = tasks.iter().map(|t| null.run(t).unwrap()).collect();
    assert!(records.iter().all(|r| r.rounds == 1 && r.final_output == r.initial_output));
    let report = evaluate_run("null", &records, &bench, &scorer).unwrap();
    assert_eq!((report.avg_recompilable, report.avg_reexecutable), (0.0, 0.0));
}
