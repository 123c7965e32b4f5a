//! Self-constructed context decompilation.
//!
//! 1. decompile the target assembly;
//! 2. if the result compiles, recompile and disassemble it;
//! 3. pair that assembly with the generated source as a demonstration;
//! 4. decompile the original target again with the demonstration in front.
//!
//! A first-round result that does not compile is returned as final.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{self, BackendError, GenerationRequest, TextGenerator, DEFAULT_MAX_NEW_TOKENS};
use crate::disasm;
use crate::prompt::{
    self, ContextExample, OneShotCache, PromptError, PromptStrategy, Provenance, StrategyKind,
};
use crate::retrieval::AsmIndex;
use crate::toolchain::{CompilerConfig, OutputKind, Toolchain, ToolchainError};
use crate::types::{OptLevel, SourceFunction};

pub const STANDARD_PRELUDE: &str = "\
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <math.h>
#include <ctype.h>
#include <stdbool.h>
#include <stdint.h>
";

/// Functions the C runtime contributes to every shared library.
const RUNTIME_SYMBOLS: &[&str] = &[
    "_init",
    "_fini",
    "_start",
    "deregister_tm_clones",
    "register_tm_clones",
    "__do_global_dtors_aux",
    "frame_dummy",
];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Toolchain(#[from] ToolchainError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("retrieval strategy requested but no index is loaded")]
    NoRetrievalIndex,
    #[error("retrieval index returned no document")]
    EmptyRetrieval,
}

fn default_context_compiler() -> CompilerConfig {
    CompilerConfig::new("gcc", OptLevel::O0).with_flag("-lm")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompilationTask {
    pub sample_id: String,
    pub target_asm: String,
    pub opt_level: OptLevel,
    #[serde(default)]
    pub strategy: PromptStrategy,
    /// Compiler used to rebuild model output; its `opt_level` is replaced
    /// by the level policy.
    #[serde(default = "default_context_compiler")]
    pub context_compiler: CompilerConfig,
    #[serde(default)]
    pub context_opt_level_override: Option<OptLevel>,
    /// Function to extract from the rebuilt code; every defined function
    /// is used when absent or not found.
    #[serde(default)]
    pub entry_name: Option<String>,
}

impl DecompilationTask {
    pub fn new(sample_id: impl Into<String>, target_asm: impl Into<String>, opt_level: OptLevel) -> Self {
        DecompilationTask {
            sample_id: sample_id.into(),
            target_asm: target_asm.into(),
            opt_level,
            strategy: PromptStrategy::default(),
            context_compiler: default_context_compiler(),
            context_opt_level_override: None,
            entry_name: None,
        }
    }

    /// Level the self-constructed context is compiled at.
    pub fn context_level(&self) -> OptLevel {
        self.context_opt_level_override.unwrap_or(self.opt_level)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompilationRecord {
    pub sample_id: String,
    pub opt_level: OptLevel,
    pub strategy: PromptStrategy,
    pub initial_output: String,
    pub initial_compilable: bool,
    pub context: Option<ContextExample>,
    pub context_compiler_id: Option<String>,
    pub final_output: String,
    pub rounds: u32,
    pub diagnostics: String,
    /// Prompt sent in each round, in order.
    pub prompts: Vec<String>,
}

/// Prepends the standard C headers unless the code has its own includes.
pub fn wrap_translation_unit(decompiled: &str) -> String {
    let has_include = decompiled
        .lines()
        .any(|l| l.trim_start().strip_prefix('#').is_some_and(|r| r.trim_start().starts_with("include")));
    if has_include {
        decompiled.to_string()
    } else {
        format!("{STANDARD_PRELUDE}\n{decompiled}")
    }
}

/// Result of rebuilding model output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recompiled {
    /// Cleaned assembly of the rebuilt function(s), `None` when the code
    /// did not compile to at least one function.
    pub asm: Option<String>,
    pub diagnostics: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineOptions {
    /// Extra decompile rounds after the first; the method uses one.
    pub extra_rounds: u32,
    pub max_new_tokens: u32,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            extra_rounds: 1,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        }
    }
}

pub struct Pipeline {
    backend: Arc<dyn TextGenerator>,
    toolchain: Toolchain,
    one_shot: OneShotCache,
    index: Option<Arc<AsmIndex>>,
    options: PipelineOptions,
    scratch: Option<PathBuf>,
}

impl Pipeline {
    pub fn new(backend: Arc<dyn TextGenerator>, toolchain: Toolchain) -> Self {
        Pipeline {
            backend,
            toolchain,
            one_shot: OneShotCache::new(),
            index: None,
            options: PipelineOptions::default(),
            scratch: None,
        }
    }

    pub fn with_index(mut self, index: Arc<AsmIndex>) -> Self {
        self.index = Some(index);
        self
    }

    pub fn with_options(mut self, options: PipelineOptions) -> Self {
        self.options = options;
        self
    }

    /// Directory under which per-task scratch dirs are created.
    pub fn with_scratch_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.scratch = Some(dir.into());
        self
    }

    fn generate(&self, prompt: String, task: &DecompilationTask) -> Result<String, PipelineError> {
        let req = GenerationRequest::new(prompt)
            .for_sample(&task.sample_id)
            .with_max_new_tokens(self.options.max_new_tokens);
        Ok(backend::extract_code(&self.backend.generate(&req)?))
    }

    fn first_prompt(&self, task: &DecompilationTask) -> Result<String, PipelineError> {
        let family = task.strategy.template_family;
        let example = match task.strategy.kind {
            StrategyKind::Vanilla | StrategyKind::Sc2dec => None,
            StrategyKind::OneShot | StrategyKind::OneShotThenSc2dec => Some(self.one_shot.get(
                task.opt_level,
                &task.context_compiler,
                &self.toolchain,
            )?),
            StrategyKind::Retrieval => {
                let index = self.index.as_ref().ok_or(PipelineError::NoRetrievalIndex)?;
                let (doc_id, _) = index
                    .query(&task.target_asm, 1)
                    .into_iter()
                    .next()
                    .ok_or(PipelineError::EmptyRetrieval)?;
                let doc = index.document(&doc_id).ok_or(PipelineError::EmptyRetrieval)?;
                Some(ContextExample {
                    asm: doc.asm.clone(),
                    source: doc.source.clone(),
                    opt_level: task.opt_level,
                    provenance: Provenance::Retrieved,
                })
            }
        };
        Ok(match example {
            None => prompt::render_vanilla(&task.target_asm, family)?,
            Some(ex) => prompt::render_with_context(&ex, &task.target_asm, family)?,
        })
    }

    /// Compiles model output as a shared library and returns its cleaned
    /// assembly. Compile failures are verdicts.
    pub fn recompile(
        &self,
        code: &str,
        cfg: &CompilerConfig,
        entry_name: Option<&str>,
    ) -> Result<Recompiled, ToolchainError> {
        if code.trim().is_empty() {
            return Ok(Recompiled {
                asm: None,
                diagnostics: "empty output".to_string(),
            });
        }
        let mut builder = tempfile::Builder::new();
        builder.prefix("sc2dec-ctx-");
        let dir = match &self.scratch {
            Some(root) => builder.tempdir_in(root)?,
            None => builder.tempdir()?,
        };
        let unit = SourceFunction::bare("decompiled", wrap_translation_unit(code), entry_name.unwrap_or(""));
        let out = match self
            .toolchain
            .compile_function(&unit, cfg, OutputKind::SharedLibrary, dir.path())
        {
            Ok(out) => out,
            Err(ToolchainError::Timeout { tool, secs }) => {
                return Ok(Recompiled {
                    asm: None,
                    diagnostics: format!("{tool} timed out after {secs:.1}s"),
                })
            }
            Err(e) => return Err(e),
        };
        let artifact = match (out.success, &out.artifact_path) {
            (true, Some(p)) => p.clone(),
            _ => {
                return Ok(Recompiled {
                    asm: None,
                    diagnostics: out.diagnostics,
                })
            }
        };
        let raw = self.toolchain.disassemble(&artifact, false)?;
        let asm = listing_for(&raw, entry_name);
        Ok(Recompiled {
            diagnostics: if asm.is_none() {
                "compiled output defines no functions".to_string()
            } else {
                out.diagnostics
            },
            asm,
        })
    }

    pub fn run(&self, task: &DecompilationTask) -> Result<DecompilationRecord, PipelineError> {
        let family = task.strategy.template_family;
        let first = self.first_prompt(task)?;
        let initial_output = self.generate(first.clone(), task)?;
        let mut record = DecompilationRecord {
            sample_id: task.sample_id.clone(),
            opt_level: task.opt_level,
            strategy: task.strategy,
            initial_output: initial_output.clone(),
            initial_compilable: false,
            context: None,
            context_compiler_id: None,
            final_output: initial_output.clone(),
            rounds: 1,
            diagnostics: String::new(),
            prompts: vec![first],
        };
        if !task.strategy.kind.uses_self_context() {
            return Ok(record);
        }

        let cfg = task.context_compiler.at_level(task.context_level());
        let mut current = initial_output;
        for round in 0..self.options.extra_rounds {
            let rebuilt = self.recompile(&current, &cfg, task.entry_name.as_deref())?;
            record.diagnostics = rebuilt.diagnostics;
            let Some(asm) = rebuilt.asm else { break };
            if round == 0 {
                record.initial_compilable = true;
            }
            let context = ContextExample {
                asm,
                source: current.clone(),
                opt_level: cfg.opt_level,
                provenance: Provenance::SelfConstructed,
            };
            let again = prompt::render_with_context(&context, &task.target_asm, family)?;
            current = self.generate(again.clone(), task)?;
            record.prompts.push(again);
            record.context = Some(context);
            record.context_compiler_id = Some(cfg.compiler_id.clone());
            record.rounds += 1;
        }
        record.final_output = current;
        Ok(record)
    }
}

/// Cleaned listing of `entry_name` if present, otherwise of every function
/// the unit itself defines in `.text`, each introduced by its label.
fn listing_for(raw: &str, entry_name: Option<&str>) -> Option<String> {
    let functions = disasm::list_functions(raw);
    if let Some(name) = entry_name.filter(|n| functions.iter().any(|(f, _)| f == n)) {
        return disasm::extract_function(raw, name).ok().map(|l| l.text).filter(|t| !t.is_empty());
    }
    let own: Vec<&str> = functions
        .iter()
        .filter(|(name, section)| section == ".text" && !RUNTIME_SYMBOLS.contains(&name.as_str()))
        .map(|(name, _)| name.as_str())
        .collect();
    let parts: Vec<String> = own
        .iter()
        .filter_map(|name| disasm::extract_function(raw, name).ok())
        .filter(|l| !l.text.is_empty())
        .map(|l| {
            if own.len() == 1 {
                l.text
            } else {
                format!("{}:\n{}", l.function_name, l.text)
            }
        })
        .collect();
    (!parts.is_empty()).then(|| parts.join("\n\n"))
}
