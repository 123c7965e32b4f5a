//! Self-constructed context decompilation (sc²dec), fine-grained alignment
//! data synthesis, BM25 context retrieval and re-executability scoring over
//! gcc/objdump.

pub mod backend;
pub mod disasm;
pub mod eval;
pub mod fae;
pub mod fixtures;
pub mod mutate;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;
pub mod toolchain;
pub mod types;

pub use backend::{BackendError, BackendKind, GenerationRequest, TextGenerator};
pub use disasm::{AlignedSequence, AssemblyListing, Block, DisasmError};
pub use eval::{EvalError, EvalReport, EvalSample, Scorer};
pub use fae::{TrainingExample, TrainingKind};
pub use pipeline::{DecompilationRecord, DecompilationTask, Pipeline, PipelineError};
pub use prompt::{PromptStrategy, StrategyKind, TemplateFamily};
pub use retrieval::AsmIndex;
pub use toolchain::{CompilerConfig, OutputKind, Toolchain, ToolchainError};
pub use types::{OptLevel, SourceFunction};
