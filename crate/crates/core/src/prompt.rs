//! Prompt construction for every decompilation strategy.

use std::collections::HashMap;
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::disasm;
use crate::toolchain::{CompilerConfig, OutputKind, Toolchain, ToolchainError};
use crate::types::{OptLevel, SourceFunction};

const CHAT_HEAD: &str = "What is the C source code of the assembly code below:\n```asm\n";
const CHAT_TAIL: &str = "\n```\n";
const DECOMPILE_HEAD: &str = "# This is the assembly code: \n";
const DECOMPILE_TAIL: &str = "\n\n# What is the source code?\n";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("assembly to decompile is empty")]
    EmptyAssembly,
    #[error("could not build the fixed one-shot example: {0}")]
    OneShot(String),
}

impl From<ToolchainError> for PromptError {
    fn from(e: ToolchainError) -> Self {
        PromptError::OneShot(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateFamily {
    /// General chat models.
    ChatStyle,
    /// Decompilation-tuned models.
    #[default]
    DecompileStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Vanilla,
    OneShot,
    Retrieval,
    #[default]
    Sc2dec,
    OneShotThenSc2dec,
}

impl StrategyKind {
    pub fn uses_self_context(self) -> bool {
        matches!(self, StrategyKind::Sc2dec | StrategyKind::OneShotThenSc2dec)
    }

    pub fn uses_one_shot(self) -> bool {
        matches!(self, StrategyKind::OneShot | StrategyKind::OneShotThenSc2dec)
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '+'], "_").as_str() {
            "vanilla" => Ok(StrategyKind::Vanilla),
            "one_shot" | "1_shot" | "oneshot" => Ok(StrategyKind::OneShot),
            "retrieval" | "bm25" => Ok(StrategyKind::Retrieval),
            "sc2dec" => Ok(StrategyKind::Sc2dec),
            "one_shot_then_sc2dec" | "one_shot_sc2dec" | "1_shot_sc2dec" => Ok(StrategyKind::OneShotThenSc2dec),
            _ => Err(format!("unknown strategy `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptStrategy {
    pub kind: StrategyKind,
    pub template_family: TemplateFamily,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FixedOneShot,
    Retrieved,
    SelfConstructed,
}

/// An (assembly, source) demonstration placed before the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextExample {
    pub asm: String,
    pub source: String,
    pub opt_level: OptLevel,
    pub provenance: Provenance,
}

/// Direct decompilation request for `asm`.
pub fn render_vanilla(asm: &str, family: TemplateFamily) -> Result<String, PromptError> {
    if asm.is_empty() {
        return Err(PromptError::EmptyAssembly);
    }
    let (head, tail) = match family {
        TemplateFamily::ChatStyle => (CHAT_HEAD, CHAT_TAIL),
        TemplateFamily::DecompileStyle => (DECOMPILE_HEAD, DECOMPILE_TAIL),
    };
    Ok(format!("{head}{asm}{tail}"))
}

/// Inverse of [`render_vanilla`]: recovers the family and assembly.
pub fn parse_vanilla(prompt: &str) -> Option<(TemplateFamily, &str)> {
    for (family, head, tail) in [
        (TemplateFamily::DecompileStyle, DECOMPILE_HEAD, DECOMPILE_TAIL),
        (TemplateFamily::ChatStyle, CHAT_HEAD, CHAT_TAIL),
    ] {
        if let Some(asm) = prompt.strip_prefix(head).and_then(|r| r.strip_suffix(tail)) {
            if !asm.is_empty() {
                return Some((family, asm));
            }
        }
    }
    None
}

/// The demonstration as a completed question/answer pair followed by the
/// target question. Assembly precedes its source, and the whole
/// demonstration precedes the target; one blank line separates them.
pub fn render_with_context(
    example: &ContextExample,
    target_asm: &str,
    family: TemplateFamily,
) -> Result<String, PromptError> {
    let target = render_vanilla(target_asm, family)?;
    let mut out = render_vanilla(&example.asm, family)?;
    match family {
        TemplateFamily::ChatStyle => {
            out.push_str("```c\n");
            out.push_str(&example.source);
            out.push_str("\n```\n");
        }
        TemplateFamily::DecompileStyle => {
            out.push_str(&example.source);
            out.push('\n');
        }
    }
    out.push('\n');
    out.push_str(&target);
    Ok(out)
}

/// Hand-written demonstration covering an if/else chain, a loop with an
/// early exit, and an early return.
pub const ONE_SHOT_ENTRY: &str = "count_matches";
pub const ONE_SHOT_SOURCE: &str = "\
int count_matches(const int *values, int length, int target)
{
    if (values == 0 || length <= 0) {
        return -1;
    }
    int count = 0;
    for (int i = 0; i < length; i++) {
        if (values[i] == target) {
            count++;
        } else if (values[i] > target * 2) {
            break;
        }
    }
    return count;
}";

/// Compiles the fixed demonstration at `opt_level` and pairs its cleaned
/// assembly with its source.
pub fn fixed_one_shot_example(
    opt_level: OptLevel,
    compiler: &CompilerConfig,
    toolchain: &Toolchain,
    workdir: &Path,
) -> Result<ContextExample, PromptError> {
    let cfg = compiler.at_level(opt_level);
    let func = SourceFunction::bare("one_shot", ONE_SHOT_SOURCE, ONE_SHOT_ENTRY);
    let out = toolchain.compile_function(&func, &cfg, OutputKind::SharedLibrary, workdir)?;
    let artifact = match (out.success, out.artifact_path) {
        (true, Some(p)) => p,
        _ => return Err(PromptError::OneShot(out.diagnostics)),
    };
    let raw = toolchain.disassemble(&artifact, false)?;
    let listing = disasm::extract_function(&raw, ONE_SHOT_ENTRY).map_err(|e| PromptError::OneShot(e.to_string()))?;
    Ok(ContextExample {
        asm: listing.text,
        source: ONE_SHOT_SOURCE.to_string(),
        opt_level,
        provenance: Provenance::FixedOneShot,
    })
}

/// Memoizes [`fixed_one_shot_example`] per (level, compiler).
#[derive(Debug, Default)]
pub struct OneShotCache {
    entries: RwLock<HashMap<(OptLevel, String), ContextExample>>,
}

impl OneShotCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(
        &self,
        opt_level: OptLevel,
        compiler: &CompilerConfig,
        toolchain: &Toolchain,
    ) -> Result<ContextExample, PromptError> {
        let key = (opt_level, compiler.compiler_id.clone());
        if let Some(hit) = self.entries.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(hit.clone());
        }
        let dir = tempfile::Builder::new()
            .prefix("sc2dec-oneshot-")
            .tempdir()
            .map_err(|e| PromptError::OneShot(e.to_string()))?;
        let example = fixed_one_shot_example(opt_level, compiler, toolchain, dir.path())?;
        self.entries
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .entry(key)
            .or_insert_with(|| example.clone());
        Ok(example)
    }
}
