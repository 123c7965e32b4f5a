//! Declarative run configuration. Loaded from TOML, then overridden by
//! command-line flags; the effective result is echoed into the run dir.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sc2dec::backend::{BackendKind, DEFAULT_API_KEY_ENV, DEFAULT_MAX_NEW_TOKENS};
use sc2dec::fae::CorpusFilter;
use sc2dec::prompt::{PromptStrategy, StrategyKind, TemplateFamily};
use sc2dec::retrieval::{DEFAULT_B, DEFAULT_K1};
use sc2dec::toolchain::CompilerConfig;
use sc2dec::OptLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Null,
    Echo,
    Mutator,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSpec {
    pub kind: BackendChoice,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: String,
    pub seed: u64,
    pub max_new_tokens: u32,
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec {
            kind: BackendChoice::Null,
            endpoint: None,
            model: None,
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            seed: 0,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        }
    }
}

impl BackendSpec {
    /// `answers` maps sample ids to reference sources for the test
    /// backends.
    pub fn resolve(&self, answers: BTreeMap<String, String>, max_in_flight: usize) -> Result<BackendKind> {
        Ok(match self.kind {
            BackendChoice::Null => BackendKind::NullModel,
            BackendChoice::Echo => BackendKind::EchoOracle { answer_map: answers },
            BackendChoice::Mutator => BackendKind::Mutator {
                seed: self.seed,
                answer_map: answers,
            },
            BackendChoice::Remote => {
                let (Some(endpoint), Some(model)) = (&self.endpoint, &self.model) else {
                    bail!("the remote backend needs --endpoint and --model");
                };
                BackendKind::Remote {
                    endpoint_url: endpoint.clone(),
                    model_name: model.clone(),
                    api_key_env: self.api_key_env.clone(),
                    max_in_flight: max_in_flight.max(1),
                }
            }
        })
    }

    pub fn needs_answers(&self) -> bool {
        matches!(self.kind, BackendChoice::Echo | BackendChoice::Mutator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolchainSpec {
    /// Builds and scores the benchmark.
    pub compiler: String,
    /// Rebuilds model output for self-constructed context; defaults to
    /// `compiler`.
    pub context_compiler: Option<String>,
    pub extra_flags: Vec<String>,
    pub opt_levels: Vec<OptLevel>,
}

impl Default for ToolchainSpec {
    fn default() -> Self {
        ToolchainSpec {
            compiler: "gcc".to_string(),
            context_compiler: None,
            extra_flags: vec!["-lm".to_string()],
            opt_levels: OptLevel::ALL.to_vec(),
        }
    }
}

impl ToolchainSpec {
    pub fn config(&self, level: OptLevel) -> CompilerConfig {
        self.config_for(&self.compiler, level)
    }

    pub fn context_config(&self) -> CompilerConfig {
        self.config_for(self.context_compiler.as_deref().unwrap_or(&self.compiler), OptLevel::O0)
    }

    pub fn config_for(&self, compiler: &str, level: OptLevel) -> CompilerConfig {
        let mut cfg = CompilerConfig::new(compiler, level);
        cfg.extra_flags = self.extra_flags.clone();
        cfg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub benchmark: Option<PathBuf>,
    pub tasks: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub index: Option<PathBuf>,
    /// Parent of timestamped run directories.
    pub runs_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Spec {
    pub k1: f64,
    pub b: f64,
    pub top_k: usize,
}

impl Default for Bm25Spec {
    fn default() -> Self {
        Bm25Spec {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
            top_k: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixSpec {
    pub context_levels: Vec<OptLevel>,
    pub compilers: Vec<String>,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec {
            context_levels: OptLevel::ALL.to_vec(),
            compilers: vec!["gcc".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backend: BackendSpec,
    pub toolchain: ToolchainSpec,
    pub strategy: PromptStrategy,
    pub context_level_override: Option<OptLevel>,
    /// Seconds a test binary may run.
    pub timeout_s: f64,
    pub parallelism: usize,
    pub force: bool,
    pub paths: Paths,
    pub filter: CorpusFilter,
    pub bm25: Bm25Spec,
    pub matrix: MatrixSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: BackendSpec::default(),
            toolchain: ToolchainSpec::default(),
            strategy: PromptStrategy::default(),
            context_level_override: None,
            timeout_s: 10.0,
            parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
            force: false,
            paths: Paths::default(),
            filter: CorpusFilter::default(),
            bm25: Bm25Spec::default(),
            matrix: MatrixSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            bail!("parallelism must be positive");
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            bail!("timeout must be a positive number of seconds");
        }
        if self.toolchain.opt_levels.is_empty() {
            bail!("at least one optimization level is required");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

/// Parses `chat` / `decompile` style names.
pub fn parse_template(s: &str) -> std::result::Result<TemplateFamily, String> {
    match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
        "chat" | "chat_style" => Ok(TemplateFamily::ChatStyle),
        "decompile" | "decompile_style" => Ok(TemplateFamily::DecompileStyle),
        _ => Err(format!("unknown template family `{s}`")),
    }
}

pub fn parse_strategy(s: &str) -> std::result::Result<StrategyKind, String> {
    s.parse()
}
