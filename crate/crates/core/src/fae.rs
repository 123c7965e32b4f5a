//! Fine-grained alignment training data.
//!
//! Each corpus function is built as a shared library with debug info at
//! every requested level, disassembled with interleaved source, and turned
//! into one end-to-end and one step-by-step example.
//!
//! Step-by-step completions look like
//!
//! ```text
//! push %rbp
//! mov %rsp,%rbp
//! ;int f0(int a)
//! ;{
//! mov -0x14(%rbp),%eax
//! add $0x1,%eax
//! ;  return a+1;
//!
//! <complete function source>
//! ```
//!
//! Source lines carry a leading `;`, matching objdump's source comments.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disasm::{self, AlignedSequence, Block};
use crate::prompt::{self, TemplateFamily};
use crate::toolchain::{CompilerConfig, OutputKind, Toolchain, ToolchainError};
use crate::types::{OptLevel, SourceFunction};

#[derive(Debug, thiserror::Error)]
pub enum FaeError {
    #[error("aligned sequence has no blocks")]
    EmptySequence,
    #[error("compiler config `{0}` lacks debug info")]
    DebugInfoRequired(String),
    #[error(transparent)]
    Toolchain(#[from] ToolchainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingKind {
    EndToEnd,
    StepByStep,
}

impl TrainingKind {
    pub const ALL: [TrainingKind; 2] = [TrainingKind::EndToEnd, TrainingKind::StepByStep];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingKind::EndToEnd => "end_to_end",
            TrainingKind::StepByStep => "step_by_step",
        }
    }

    /// `fae_<kind>_<level>.jsonl`
    pub fn file_name(self, level: OptLevel) -> String {
        format!("fae_{}_{}.jsonl", self.as_str(), level)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub kind: TrainingKind,
    pub sample_id: String,
    pub opt_level: OptLevel,
    pub prompt: String,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub sample_id: String,
    pub level: OptLevel,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synthesis {
    pub examples: Vec<TrainingExample>,
    pub skips: Vec<SkipRecord>,
}

/// Lexical corpus filter: a sample cap and a list of identifiers whose
/// presence rejects a function.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusFilter {
    #[serde(default)]
    pub max_samples: Option<usize>,
    #[serde(default)]
    pub reject_identifiers: Vec<String>,
}

impl CorpusFilter {
    /// First rejected identifier found in the function, if any.
    pub fn rejects(&self, func: &SourceFunction) -> Option<&str> {
        if self.reject_identifiers.is_empty() {
            return None;
        }
        let unit = func.translation_unit();
        let idents = identifiers(&unit);
        self.reject_identifiers
            .iter()
            .find(|r| idents.iter().any(|i| i == r))
            .map(String::as_str)
    }

    /// Keeps accepted functions in order, up to the cap.
    pub fn apply(&self, corpus: Vec<SourceFunction>) -> (Vec<SourceFunction>, Vec<(String, String)>) {
        let mut kept = Vec::new();
        let mut rejected = Vec::new();
        for f in corpus {
            if self.max_samples.is_some_and(|m| kept.len() >= m) {
                break;
            }
            match self.rejects(&f) {
                Some(id) => rejected.push((f.id.clone(), format!("uses rejected identifier `{id}`"))),
                None => kept.push(f),
            }
        }
        (kept, rejected)
    }
}

fn identifiers(src: &str) -> Vec<&str> {
    src.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|w| w.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_'))
        .collect()
}

/// Empty-source blocks are folded into the previous block's asm; a leading
/// one is folded into the next block instead.
pub fn merge_blocks(blocks: &[Block]) -> Vec<Block> {
    let mut out: Vec<Block> = Vec::new();
    let mut carry: Vec<String> = Vec::new();
    for b in blocks {
        if b.source_lines.is_empty() {
            match out.last_mut() {
                Some(prev) => prev.asm_lines.extend(b.asm_lines.iter().cloned()),
                None => carry.extend(b.asm_lines.iter().cloned()),
            }
            continue;
        }
        let mut asm_lines = std::mem::take(&mut carry);
        asm_lines.extend(b.asm_lines.iter().cloned());
        out.push(Block {
            source_lines: b.source_lines.clone(),
            asm_lines,
        });
    }
    if !carry.is_empty() {
        out.push(Block {
            source_lines: Vec::new(),
            asm_lines: carry,
        });
    }
    out
}

pub fn serialize_step_by_step(seq: &AlignedSequence, full_source: &str) -> Result<String, FaeError> {
    if seq.blocks.is_empty() {
        return Err(FaeError::EmptySequence);
    }
    let mut out = String::new();
    for block in merge_blocks(&seq.blocks) {
        for l in &block.asm_lines {
            out.push_str(l);
            out.push('\n');
        }
        for l in &block.source_lines {
            out.push(';');
            out.push_str(l);
            out.push('\n');
        }
    }
    out.push('\n');
    out.push_str(full_source);
    Ok(out)
}

/// Inverse of [`serialize_step_by_step`]: the merged blocks and the
/// trailing complete source.
pub fn parse_step_by_step(text: &str) -> Option<(Vec<Block>, &str)> {
    let split = text.find("\n\n")?;
    let (steps, full_source) = (&text[..split], &text[split + 2..]);
    let mut blocks: Vec<Block> = Vec::new();
    for line in steps.lines() {
        if let Some(src) = line.strip_prefix(';') {
            blocks.last_mut()?.source_lines.push(src.to_string());
        } else {
            if line.is_empty() {
                return None;
            }
            match blocks.last_mut() {
                Some(b) if b.source_lines.is_empty() => b.asm_lines.push(line.to_string()),
                _ => blocks.push(Block {
                    source_lines: Vec::new(),
                    asm_lines: vec![line.to_string()],
                }),
            }
        }
    }
    if blocks.is_empty() {
        return None;
    }
    Some((blocks, full_source))
}

enum Job {
    Done([TrainingExample; 2]),
    Skipped(SkipRecord),
}

/// Builds both example kinds for every (function, config) pair, in corpus
/// order then config order. Per-sample failures become skip records; a
/// missing tool aborts.
pub fn synthesize(
    corpus: &[SourceFunction],
    compilers: &[CompilerConfig],
    toolchain: &Toolchain,
    scratch: &Path,
) -> Result<Synthesis, FaeError> {
    if let Some(cfg) = compilers.iter().find(|c| !c.debug_info) {
        return Err(FaeError::DebugInfoRequired(format!("{} {}", cfg.compiler_id, cfg.opt_level)));
    }
    let jobs: Vec<(&SourceFunction, &CompilerConfig)> = corpus
        .iter()
        .flat_map(|f| compilers.iter().map(move |c| (f, c)))
        .collect();
    let results: Vec<Result<Job, ToolchainError>> = jobs
        .par_iter()
        .map(|(f, c)| synthesize_one(f, c, toolchain, scratch))
        .collect();

    let mut out = Synthesis::default();
    for r in results {
        match r? {
            Job::Done(pair) => out.examples.extend(pair),
            Job::Skipped(s) => out.skips.push(s),
        }
    }
    Ok(out)
}

fn synthesize_one(
    func: &SourceFunction,
    cfg: &CompilerConfig,
    toolchain: &Toolchain,
    scratch: &Path,
) -> Result<Job, ToolchainError> {
    let skip = |reason: String| {
        Ok(Job::Skipped(SkipRecord {
            sample_id: func.id.clone(),
            level: cfg.opt_level,
            reason,
        }))
    };
    let dir = tempfile::Builder::new().prefix("fae-").tempdir_in(scratch)?;
    let built = match toolchain.compile_function(func, cfg, OutputKind::SharedLibrary, dir.path()) {
        Ok(b) => b,
        Err(e @ ToolchainError::ToolNotFound(_)) => return Err(e),
        Err(e) => return skip(e.to_string()),
    };
    let Some(artifact) = built.artifact_path.filter(|_| built.success) else {
        let first = built.diagnostics.lines().find(|l| l.contains("error")).unwrap_or("");
        return skip(format!("compile failed: {}", first.trim()));
    };
    let raw = match toolchain.disassemble(&artifact, true) {
        Ok(r) => r,
        Err(e @ ToolchainError::ToolNotFound(_)) => return Err(e),
        Err(e) => return skip(e.to_string()),
    };
    let listing = match disasm::extract_function(&raw, &func.entry_name) {
        Ok(l) => l.stamped(cfg),
        Err(e) => return skip(e.to_string()),
    };
    let seq = match disasm::parse_interleaved(&raw, &func.entry_name) {
        Ok(s) => s,
        Err(e) => return skip(e.to_string()),
    };
    let Ok(prompt) = prompt::render_vanilla(&listing.text, TemplateFamily::DecompileStyle) else {
        return skip("empty assembly".to_string());
    };
    let Ok(steps) = serialize_step_by_step(&seq, &func.body) else {
        return skip("no aligned blocks".to_string());
    };
    let example = |kind, completion| TrainingExample {
        kind,
        sample_id: func.id.clone(),
        opt_level: cfg.opt_level,
        prompt: prompt.clone(),
        completion,
    };
    Ok(Job::Done([
        example(TrainingKind::EndToEnd, func.body.clone()),
        example(TrainingKind::StepByStep, steps),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(src: &[&str], asm: &[&str]) -> Block {
        Block {
            source_lines: src.iter().map(|s| s.to_string()).collect(),
            asm_lines: asm.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn seq(blocks: Vec<Block>) -> AlignedSequence {
        AlignedSequence {
            function_name: "f".into(),
            blocks,
            opt_level: None,
        }
    }

    const F0: &str = "int f0(int a)\n{\n  int b = a * 2;\n  if (b > 10)\n    return a+1;\n  return b;\n}\n";

    fn configs() -> Vec<CompilerConfig> {
        OptLevel::ALL
            .iter()
            .map(|&l| CompilerConfig::new("gcc", l).with_debug(true))
            .collect()
    }

    #[test]
    fn asm_precedes_its_source() {
        let out = serialize_step_by_step(&seq(vec![block(&["int f(){"], &["push %rbp"])]), "int f(){}\n").unwrap();
        assert_eq!(out, "push %rbp\n;int f(){\n\nint f(){}\n");
        assert!(out.find("push %rbp").unwrap() < out.find("int f(){").unwrap());
    }

    #[test]
    fn sourceless_blocks_are_merged() {
        let blocks = vec![
            block(&[], &["endbr64"]),
            block(&["{"], &["push %rbp"]),
            block(&[], &["pop %rbp", "ret"]),
        ];
        let merged = merge_blocks(&blocks);
        assert_eq!(merged, vec![block(&["{"], &["endbr64", "push %rbp", "pop %rbp", "ret"])]);
        let out = serialize_step_by_step(&seq(blocks), "src").unwrap();
        assert_eq!(out, "endbr64\npush %rbp\npop %rbp\nret\n;{\n\nsrc");
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(matches!(serialize_step_by_step(&seq(vec![]), "x"), Err(FaeError::EmptySequence)));
    }

    #[test]
    fn round_trip() {
        let blocks = vec![block(&["a", ""], &["x", "y"]), block(&["  b;"], &["z"])];
        let text = serialize_step_by_step(&seq(blocks.clone()), F0).unwrap();
        let (parsed, full) = parse_step_by_step(&text).unwrap();
        assert_eq!(parsed, blocks);
        assert_eq!(full, F0);
    }

    #[test]
    fn filter_caps_and_rejects() {
        let fs = vec![
            SourceFunction::bare("a", "int a(void){ return rand(); }", "a"),
            SourceFunction::bare("b", "int b(void){ return 1; }", "b"),
            SourceFunction::bare("c", "int c(void){ return 2; }", "c"),
            SourceFunction::bare("d", "int d(void){ return 3; }", "d"),
        ];
        let filter = CorpusFilter {
            max_samples: Some(2),
            reject_identifiers: vec!["rand".into()],
        };
        let (kept, rejected) = filter.apply(fs);
        assert_eq!(kept.iter().map(|f| f.id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        assert_eq!(rejected.len(), 1);
        // `operand` is not `rand`
        let f = SourceFunction::bare("e", "int e(int operand){ return operand; }", "e");
        assert!(filter.rejects(&f).is_none());
    }

    #[test]
    fn one_function_four_levels_gives_eight_examples() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = vec![SourceFunction::bare("f0", F0, "f0")];
        let out = synthesize(&corpus, &configs(), &Toolchain::default(), dir.path()).unwrap();
        assert_eq!(out.examples.len(), 8);
        assert!(out.skips.is_empty());
        let levels: Vec<OptLevel> = out.examples.iter().map(|e| e.opt_level).collect();
        assert_eq!(levels[0], OptLevel::O0);
        assert_eq!(levels[7], OptLevel::O3);
        for e in &out.examples {
            match e.kind {
                TrainingKind::EndToEnd => assert_eq!(e.completion, F0),
                TrainingKind::StepByStep => assert!(e.completion.ends_with(&format!("\n\n{F0}"))),
            }
            assert!(prompt::parse_vanilla(&e.prompt).is_some());
        }
    }

    #[test]
    fn return_follows_the_block_computing_it() {
        let dir = tempfile::tempdir().unwrap();
        let f = SourceFunction::bare("f0", F0, "f0");
        let cfg = CompilerConfig::new("gcc", OptLevel::O0).with_debug(true);
        let out = synthesize(std::slice::from_ref(&f), &[cfg.clone()], &Toolchain::default(), dir.path()).unwrap();
        let step = &out.examples[1].completion;

        let built = Toolchain::default()
            .compile_function(&f, &cfg, OutputKind::SharedLibrary, dir.path())
            .unwrap();
        let raw = Toolchain::default().disassemble(&built.artifact_path.unwrap(), true).unwrap();
        let seq = disasm::parse_interleaved(&raw, "f0").unwrap();
        let ret = seq
            .blocks
            .iter()
            .find(|b| b.source_lines.iter().any(|l| l.contains("return a+1;")))
            .unwrap();
        let asm = ret.asm_lines.join("\n");
        let (a, s) = (step.find(&asm).unwrap(), step.find(";    return a+1;").unwrap());
        assert_eq!(a + asm.len() + 1, s);
    }

    #[test]
    fn failing_level_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let src = "#ifdef BREAK_AT_O3\n#error broken\n#endif\nint g(int a)\n{\n  return a;\n}\n";
        let corpus = vec![SourceFunction::bare("g", src, "g")];
        let mut cfgs = configs();
        cfgs[3] = cfgs[3].clone().with_flag("-DBREAK_AT_O3");
        let out = synthesize(&corpus, &cfgs, &Toolchain::default(), dir.path()).unwrap();
        assert_eq!(out.examples.len(), 6);
        assert_eq!(out.skips.len(), 1);
        assert_eq!(out.skips[0].level, OptLevel::O3);
        assert!(out.skips[0].reason.starts_with("compile failed"), "{}", out.skips[0].reason);
    }

    #[test]
    fn debug_info_is_required() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = vec![CompilerConfig::new("gcc", OptLevel::O0)];
        let r = synthesize(&[], &cfg, &Toolchain::default(), dir.path());
        assert!(matches!(r, Err(FaeError::DebugInfoRequired(_))));
    }

    #[test]
    fn missing_compiler_aborts() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = vec![SourceFunction::bare("f0", F0, "f0")];
        let cfg = vec![CompilerConfig::new("no-such-cc-x", OptLevel::O0).with_debug(true)];
        let r = synthesize(&corpus, &cfg, &Toolchain::default(), dir.path());
        assert!(matches!(r, Err(FaeError::Toolchain(ToolchainError::ToolNotFound(_)))));
    }
}
