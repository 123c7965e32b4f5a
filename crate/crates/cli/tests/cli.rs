use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use sc2dec::eval::{EvalReport, EvalSample};
use sc2dec::fae::TrainingExample;
use sc2dec::{DecompilationRecord, DecompilationTask, OptLevel};

fn sc2dec(run_dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_sc2dec"))
        .arg("--run-dir")
        .arg(run_dir)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_jsonl<T: serde::de::DeserializeOwned>(p: &Path) -> Vec<T> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// The toy benchmark, built once per test binary.
fn toy() -> &'static (tempfile::TempDir, PathBuf) {
    static TOY: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    TOY.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = sc2dec(dir.path(), &["toy-benchmark"]);
        let path = PathBuf::from(out.trim());
        assert!(dir.path().join("config.toml").exists());
        (dir, path)
    })
}

fn bench() -> &'static str {
    toy().1.to_str().unwrap()
}

#[test]
fn toy_benchmark_has_four_levels_per_sample() {
    let samples: Vec<EvalSample> = read_jsonl(&toy().1);
    assert!(samples.len() >= 10);
    assert!(samples.iter().all(|s| s.asm_by_level.len() == 4));
    assert!(toy().0.path().join("corpus.jsonl").exists());
}

#[test]
fn null_decompile_on_four_tasks() {
    let run = tempfile::tempdir().unwrap();
    let samples: Vec<EvalSample> = read_jsonl(&toy().1);
    let tasks: Vec<String> = samples
        .iter()
        .take(4)
        .map(|s| {
            let t = DecompilationTask::new(&s.sample_id, s.asm_by_level[&OptLevel::O1].clone(), OptLevel::O1);
            serde_json::to_string(&t).unwrap()
        })
        .collect();
    let tasks_path = run.path().join("tasks.jsonl");
    std::fs::write(&tasks_path, tasks.join("\n")).unwrap();

    let out_dir = run.path().join("out");
    sc2dec(&out_dir, &["decompile", "--backend", "null", "--tasks", tasks_path.to_str().unwrap()]);
    let recs: Vec<DecompilationRecord> = read_jsonl(&out_dir.join("records.jsonl"));
    assert_eq!(recs.len(), 4);
    assert!(recs.iter().all(|r| r.rounds == 1 && r.final_output.is_empty()));
    let config = std::fs::read_to_string(out_dir.join("config.toml")).unwrap();
    assert!(config.contains("kind = \"null\""), "{config}");
}

#[test]
fn echo_evaluates_to_full_marks_and_resumes() {
    let run = tempfile::tempdir().unwrap();
    let d = run.path();
    sc2dec(d, &["decompile", "--backend", "echo", "--strategy", "vanilla", "--benchmark", bench()]);
    let table = sc2dec(d, &["evaluate", "--benchmark", bench(), "--label", "echo"]);
    let row = table.lines().last().unwrap();
    assert!(row.starts_with("echo"));
    assert_eq!(row.split_whitespace().filter(|c| *c == "100.00").count(), 10, "{table}");
    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.avg_reexecutable, 100.0);

    let again = sc2dec(d, &["decompile", "--backend", "echo", "--strategy", "vanilla", "--benchmark", bench()]);
    assert!(again.contains("\"written\":0"), "{again}");
    let forced = sc2dec(
        d,
        &["decompile", "--backend", "echo", "--strategy", "vanilla", "--benchmark", bench(), "--force"],
    );
    assert!(!forced.contains("\"written\":0"), "{forced}");
    let recs: Vec<DecompilationRecord> = read_jsonl(&d.join("records.jsonl"));
    assert_eq!(recs.len(), read_jsonl::<EvalSample>(&toy().1).len() * 4);
}

#[test]
fn synthesize_index_retrieve() {
    let run = tempfile::tempdir().unwrap();
    let d = run.path();
    let corpus = toy().0.path().join("corpus.jsonl");
    let summary = sc2dec(
        d,
        &["synthesize", "--corpus", corpus.to_str().unwrap(), "--opt-level", "O0,O2", "--reject", "isupper"],
    );
    assert!(summary.contains("\"rejected\":1"), "{summary}");
    let e2e: Vec<TrainingExample> = read_jsonl(&d.join("fae_end_to_end_O0.jsonl"));
    let sbs: Vec<TrainingExample> = read_jsonl(&d.join("fae_step_by_step_O2.jsonl"));
    assert_eq!(e2e.len(), sbs.len());
    assert!(!e2e.is_empty());
    assert!(!d.join("fae_end_to_end_O1.jsonl").exists());

    let first = std::fs::read(d.join("fae_step_by_step_O2.jsonl")).unwrap();
    let resumed = sc2dec(d, &["synthesize", "--corpus", corpus.to_str().unwrap(), "--opt-level", "O0,O2", "--reject", "isupper"]);
    assert!(resumed.contains("\"examples\":0"), "{resumed}");
    assert_eq!(first, std::fs::read(d.join("fae_step_by_step_O2.jsonl")).unwrap());

    let index = sc2dec(
        d,
        &[
            "index",
            "--input",
            d.join("fae_end_to_end_O0.jsonl").to_str().unwrap(),
            "--input",
            d.join("fae_end_to_end_O2.jsonl").to_str().unwrap(),
        ],
    );
    let query = d.join("q.s");
    let (_, asm) = sc2dec::prompt::parse_vanilla(&e2e[2].prompt).unwrap();
    std::fs::write(&query, asm).unwrap();
    let hits = sc2dec(
        d,
        &["retrieve", "--index", index.trim(), "--query", query.to_str().unwrap(), "--top-k", "3"],
    );
    let lines: Vec<&str> = hits.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with(&format!("{}@O0\t", e2e[2].sample_id)), "{hits}");
}

#[test]
fn matrix_over_context_levels() {
    let run = tempfile::tempdir().unwrap();
    let table = sc2dec(
        run.path(),
        &[
            "matrix",
            "--backend",
            "mutator",
            "--benchmark",
            bench(),
            "--opt-level",
            "O1",
            "--context-levels",
            "O0,O1,O2,O3",
        ],
    );
    assert_eq!(table.lines().count(), 2 + 4, "{table}");
    for l in ["O0", "O1", "O2", "O3"] {
        assert!(run.path().join(format!("matrix/gcc_{l}/report.json")).exists());
    }
}

#[test]
fn unknown_subcommand_fails() {
    let out = Command::new(env!("CARGO_BIN_EXE_sc2dec")).arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
}
