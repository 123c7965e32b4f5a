//! Compiler, disassembler and test-binary invocation.
//!
//! Every call runs in a caller-supplied working directory with relative
//! file names, so the recorded command line depends only on the source
//! function and the [`CompilerConfig`], never on where the workdir lives.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::types::{OptLevel, SourceFunction};

/// Environment variable overriding the compile/disassemble timeout (seconds).
pub const TOOL_TIMEOUT_ENV: &str = "SC2DEC_TOOL_TIMEOUT_S";

pub const DEFAULT_COMPILE_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_RUN_TIMEOUT: Duration = Duration::from_secs(10);

const POLL_INTERVAL: Duration = Duration::from_millis(5);

#[derive(Debug, thiserror::Error)]
pub enum ToolchainError {
    #[error("tool `{0}` not found on PATH")]
    ToolNotFound(String),
    #[error("objdump failed on {path} ({status}): {stderr}")]
    DisassemblyFailed {
        path: PathBuf,
        status: String,
        stderr: String,
    },
    #[error("`{tool}` exceeded the {secs:.1}s wall-clock limit")]
    Timeout { tool: String, secs: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompilerConfig {
    pub compiler_id: String,
    pub opt_level: OptLevel,
    #[serde(default)]
    pub debug_info: bool,
    #[serde(default)]
    pub extra_flags: Vec<String>,
}

impl CompilerConfig {
    pub fn new(compiler_id: impl Into<String>, opt_level: OptLevel) -> Self {
        CompilerConfig {
            compiler_id: compiler_id.into(),
            opt_level,
            debug_info: false,
            extra_flags: Vec::new(),
        }
    }

    pub fn with_debug(mut self, debug_info: bool) -> Self {
        self.debug_info = debug_info;
        self
    }

    pub fn with_flag(mut self, flag: impl Into<String>) -> Self {
        self.extra_flags.push(flag.into());
        self
    }

    pub fn at_level(&self, opt_level: OptLevel) -> Self {
        CompilerConfig {
            opt_level,
            ..self.clone()
        }
    }

    /// Arguments after the compiler name. Order: opt, debug, kind, output,
    /// input, extras.
    pub fn args(&self, kind: OutputKind, output: &str, input: &str) -> Vec<String> {
        let mut args = vec![self.opt_level.flag()];
        if self.debug_info {
            args.push("-g".to_string());
        }
        match kind {
            OutputKind::SharedLibrary => {
                args.push("-shared".to_string());
                args.push("-fPIC".to_string());
            }
            OutputKind::Object => args.push("-c".to_string()),
            OutputKind::Executable => {}
        }
        args.push("-o".to_string());
        args.push(output.to_string());
        args.push(input.to_string());
        args.extend(self.extra_flags.iter().cloned());
        args
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    SharedLibrary,
    Object,
    Executable,
}

impl OutputKind {
    fn extension(self) -> &'static str {
        match self {
            OutputKind::SharedLibrary => "so",
            OutputKind::Object => "o",
            OutputKind::Executable => "out",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileOutcome {
    pub success: bool,
    pub artifact_path: Option<PathBuf>,
    pub diagnostics: String,
    pub command_line: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "code", rename_all = "snake_case")]
pub enum RunVerdict {
    Pass,
    Fail(i32),
    Timeout,
    Crash(i32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub verdict: RunVerdict,
    pub stdout: String,
    pub stderr: String,
}

/// Timeouts and tool names used for every subprocess call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Toolchain {
    pub compile_timeout: Duration,
    pub disassemble_timeout: Duration,
    pub objdump: String,
}

impl Default for Toolchain {
    fn default() -> Self {
        Toolchain {
            compile_timeout: DEFAULT_COMPILE_TIMEOUT,
            disassemble_timeout: DEFAULT_COMPILE_TIMEOUT,
            objdump: "objdump".to_string(),
        }
    }
}

impl Toolchain {
    /// Defaults, with [`TOOL_TIMEOUT_ENV`] applied when set to a positive number.
    pub fn from_env() -> Self {
        let mut tc = Toolchain::default();
        if let Some(secs) = std::env::var(TOOL_TIMEOUT_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s > 0.0)
        {
            tc.compile_timeout = Duration::from_secs_f64(secs);
            tc.disassemble_timeout = Duration::from_secs_f64(secs);
        }
        tc
    }

    /// Writes the function's translation unit into `workdir` and compiles it.
    ///
    /// A nonzero compiler exit is a verdict (`success = false`), not an error.
    pub fn compile_function(
        &self,
        func: &SourceFunction,
        cfg: &CompilerConfig,
        kind: OutputKind,
        workdir: &Path,
    ) -> Result<CompileOutcome, ToolchainError> {
        let stem = file_stem(&func.id);
        let src_name = format!("{stem}.c");
        let out_name = format!("{stem}.{}", kind.extension());
        std::fs::write(workdir.join(&src_name), func.translation_unit())?;
        let out_path = workdir.join(&out_name);
        if out_path.exists() {
            std::fs::remove_file(&out_path)?;
        }

        let args = cfg.args(kind, &out_name, &src_name);
        let command_line = render_command_line(&cfg.compiler_id, &args);
        let mut cmd = Command::new(&cfg.compiler_id);
        cmd.args(&args).current_dir(workdir);
        let captured = run_captured(cmd, &cfg.compiler_id, self.compile_timeout)?;
        let Some(status) = captured.status else {
            return Err(ToolchainError::Timeout {
                tool: cfg.compiler_id.clone(),
                secs: self.compile_timeout.as_secs_f64(),
            });
        };

        let success = status.success() && out_path.exists();
        if !success && out_path.exists() {
            let _ = std::fs::remove_file(&out_path);
        }
        Ok(CompileOutcome {
            success,
            artifact_path: success.then_some(out_path),
            diagnostics: captured.stderr,
            command_line,
        })
    }

    /// Runs objdump over `artifact`. With `with_source`, source lines are
    /// interleaved and prefixed with `;`.
    pub fn disassemble(&self, artifact: &Path, with_source: bool) -> Result<String, ToolchainError> {
        let args = disassemble_args(artifact, with_source);
        let mut cmd = Command::new(&self.objdump);
        cmd.args(&args);
        let captured = run_captured(cmd, &self.objdump, self.disassemble_timeout)?;
        let Some(status) = captured.status else {
            return Err(ToolchainError::Timeout {
                tool: self.objdump.clone(),
                secs: self.disassemble_timeout.as_secs_f64(),
            });
        };
        if !status.success() {
            return Err(ToolchainError::DisassemblyFailed {
                path: artifact.to_path_buf(),
                status: status.to_string(),
                stderr: captured.stderr,
            });
        }
        Ok(captured.stdout)
    }

    /// Executes a test binary inside its own directory. Every failure mode
    /// is reported as a verdict.
    pub fn run_executable(&self, artifact: &Path, timeout: Duration) -> RunOutcome {
        let mut cmd = Command::new(artifact);
        if let Some(dir) = artifact.parent().filter(|d| !d.as_os_str().is_empty()) {
            cmd.current_dir(dir);
        }
        let tool = artifact.display().to_string();
        match run_captured(cmd, &tool, timeout) {
            Ok(captured) => RunOutcome {
                verdict: match captured.status {
                    None => RunVerdict::Timeout,
                    Some(status) => verdict_from_status(status),
                },
                stdout: captured.stdout,
                stderr: captured.stderr,
            },
            Err(err) => RunOutcome {
                verdict: RunVerdict::Fail(-1),
                stdout: String::new(),
                stderr: err.to_string(),
            },
        }
    }
}

/// objdump arguments, exactly as passed to the process.
pub fn disassemble_args(artifact: &Path, with_source: bool) -> Vec<String> {
    let mut args = vec!["-d".to_string()];
    if with_source {
        args.push("-S".to_string());
        args.push("--source-comment=;".to_string());
    }
    args.push(artifact.display().to_string());
    args
}

fn render_command_line(program: &str, args: &[String]) -> String {
    let mut line = program.to_string();
    for a in args {
        line.push(' ');
        line.push_str(a);
    }
    line
}

/// Maps an arbitrary sample id onto a safe file stem.
pub fn file_stem(id: &str) -> String {
    let stem: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    if stem.is_empty() {
        "unit".to_string()
    } else {
        stem
    }
}

#[cfg(unix)]
fn verdict_from_status(status: ExitStatus) -> RunVerdict {
    use std::os::unix::process::ExitStatusExt;
    if let Some(sig) = status.signal() {
        return RunVerdict::Crash(sig);
    }
    match status.code() {
        Some(0) => RunVerdict::Pass,
        Some(code) => RunVerdict::Fail(code),
        None => RunVerdict::Fail(-1),
    }
}

#[cfg(not(unix))]
fn verdict_from_status(status: ExitStatus) -> RunVerdict {
    match status.code() {
        Some(0) => RunVerdict::Pass,
        Some(code) => RunVerdict::Fail(code),
        None => RunVerdict::Fail(-1),
    }
}

struct Captured {
    /// `None` when the wall-clock limit was hit and the child was killed.
    status: Option<ExitStatus>,
    stdout: String,
    stderr: String,
}

fn run_captured(mut cmd: Command, tool: &str, timeout: Duration) -> Result<Captured, ToolchainError> {
    cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped());
    let mut child = cmd.spawn().map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ToolchainError::ToolNotFound(tool.to_string()),
        _ => ToolchainError::Io(e),
    })?;

    let stdout = child.stdout.take().map(drain);
    let stderr = child.stderr.take().map(drain);

    let deadline = Instant::now() + timeout;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        thread::sleep(POLL_INTERVAL);
    };

    let join = |h: Option<thread::JoinHandle<Vec<u8>>>| {
        h.and_then(|h| h.join().ok())
            .map(|b| String::from_utf8_lossy(&b).into_owned())
            .unwrap_or_default()
    };
    Ok(Captured {
        status,
        stdout: join(stdout),
        stderr: join(stderr),
    })
}

fn drain<R: Read + Send + 'static>(mut r: R) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        buf
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f0() -> SourceFunction {
        SourceFunction::bare("f0", "int f0(int a){return a+1;}", "f0")
    }

    #[test]
    fn shared_library_command_line_is_exact() {
        let cfg = CompilerConfig::new("gcc", OptLevel::O0).with_debug(true).with_flag("-lm");
        let args = cfg.args(OutputKind::SharedLibrary, "f0.so", "f0.c");
        assert_eq!(
            render_command_line("gcc", &args),
            "gcc -O0 -g -shared -fPIC -o f0.so f0.c -lm"
        );
    }

    #[test]
    fn other_kinds_follow_fixed_flag_order() {
        let cfg = CompilerConfig::new("clang", OptLevel::O3);
        assert_eq!(
            cfg.args(OutputKind::Object, "a.o", "a.c"),
            ["-O3", "-c", "-o", "a.o", "a.c"]
        );
        assert_eq!(cfg.args(OutputKind::Executable, "a.out", "a.c"), ["-O3", "-o", "a.out", "a.c"]);
    }

    #[test]
    fn objdump_args_match_interleaving_contract() {
        let p = Path::new("lib.so");
        assert_eq!(disassemble_args(p, true), ["-d", "-S", "--source-comment=;", "lib.so"]);
        assert_eq!(disassemble_args(p, false), ["-d", "lib.so"]);
    }

    #[test]
    fn compile_is_deterministic_and_produces_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let tc = Toolchain::default();
        let cfg = CompilerConfig::new("gcc", OptLevel::O0).with_debug(true);
        let a = tc.compile_function(&f0(), &cfg, OutputKind::SharedLibrary, dir.path()).unwrap();
        let b = tc.compile_function(&f0(), &cfg, OutputKind::SharedLibrary, dir.path()).unwrap();
        assert!(a.success, "{}", a.diagnostics);
        assert!(a.artifact_path.as_ref().unwrap().exists());
        assert_eq!(a.command_line, b.command_line);
        assert_eq!(a.command_line, "gcc -O0 -g -shared -fPIC -o f0.so f0.c");
    }

    #[test]
    fn truncated_source_fails_with_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let tc = Toolchain::default();
        let bad = SourceFunction::bare("bad", "int f(){return", "f");
        let cfg = CompilerConfig::new("gcc", OptLevel::O0);
        let out = tc.compile_function(&bad, &cfg, OutputKind::SharedLibrary, dir.path()).unwrap();
        assert!(!out.success);
        assert!(out.artifact_path.is_none());
        assert!(!out.diagnostics.is_empty());
        assert!(!dir.path().join("bad.so").exists());
    }

    #[test]
    fn missing_compiler_is_tool_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CompilerConfig::new("definitely-not-a-compiler-xyz", OptLevel::O0);
        let err = Toolchain::default()
            .compile_function(&f0(), &cfg, OutputKind::Object, dir.path())
            .unwrap_err();
        assert!(matches!(err, ToolchainError::ToolNotFound(_)));
    }

    #[test]
    fn disassembling_missing_file_is_an_error() {
        let err = Toolchain::default()
            .disassemble(Path::new("/nonexistent/nothing.so"), true)
            .unwrap_err();
        assert!(matches!(
            err,
            ToolchainError::DisassemblyFailed { .. } | ToolchainError::ToolNotFound(_)
        ));
    }

    #[test]
    fn source_comments_only_with_debug_info() {
        let dir = tempfile::tempdir().unwrap();
        let tc = Toolchain::default();
        for debug in [true, false] {
            let cfg = CompilerConfig::new("gcc", OptLevel::O0).with_debug(debug);
            let out = tc.compile_function(&f0(), &cfg, OutputKind::SharedLibrary, dir.path()).unwrap();
            let text = tc.disassemble(out.artifact_path.as_ref().unwrap(), true).unwrap();
            let comment_lines = text.lines().filter(|l| l.starts_with(';')).count();
            assert_eq!(comment_lines > 0, debug, "debug={debug}");
        }
    }

    fn build_exe(dir: &Path, id: &str, body: &str) -> PathBuf {
        let f = SourceFunction {
            id: id.into(),
            prelude: "#include <stdlib.h>".into(),
            body: body.into(),
            entry_name: "main".into(),
        };
        let out = Toolchain::default()
            .compile_function(&f, &CompilerConfig::new("gcc", OptLevel::O0), OutputKind::Executable, dir)
            .unwrap();
        assert!(out.success, "{}", out.diagnostics);
        out.artifact_path.unwrap()
    }

    #[test]
    fn run_verdicts() {
        let dir = tempfile::tempdir().unwrap();
        let tc = Toolchain::default();
        let ok = build_exe(dir.path(), "ok", "int main(void){return 0;}");
        let fail = build_exe(dir.path(), "fail", "int main(void){return 3;}");
        let abrt = build_exe(dir.path(), "abrt", "int main(void){abort();}");
        let spin = build_exe(dir.path(), "spin", "int main(void){volatile int x=1; while(x){} return 0;}");
        assert_eq!(tc.run_executable(&ok, DEFAULT_RUN_TIMEOUT).verdict, RunVerdict::Pass);
        assert_eq!(tc.run_executable(&fail, DEFAULT_RUN_TIMEOUT).verdict, RunVerdict::Fail(3));
        assert_eq!(tc.run_executable(&abrt, DEFAULT_RUN_TIMEOUT).verdict, RunVerdict::Crash(6));
        assert_eq!(tc.run_executable(&spin, Duration::from_secs(1)).verdict, RunVerdict::Timeout);
    }

    #[test]
    fn file_stem_sanitizes() {
        assert_eq!(file_stem("a/b c.d"), "a_b_c_d");
        assert_eq!(file_stem(""), "unit");
    }
}
