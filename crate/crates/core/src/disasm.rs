//! Parsing of objdump text.
//!
//! Three views of the same output are supported: the raw region belonging
//! to one function, its cleaned listing (no addresses, no opcode bytes, no
//! padding), and the interleaved source/assembly block sequence produced
//! with `-S --source-comment=;`.

use serde::{Deserialize, Serialize};

use crate::toolchain::CompilerConfig;
use crate::types::OptLevel;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DisasmError {
    #[error("function `{0}` not found in disassembly")]
    FunctionNotFound(String),
    #[error("function `{0}` has no interleaved source lines (built without -g?)")]
    NoDebugInfo(String),
}

/// Cleaned assembly of a single function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyListing {
    pub function_name: String,
    pub opt_level: Option<OptLevel>,
    pub compiler_id: Option<String>,
    pub text: String,
    pub raw: String,
}

impl AssemblyListing {
    pub fn stamped(mut self, cfg: &CompilerConfig) -> Self {
        self.opt_level = Some(cfg.opt_level);
        self.compiler_id = Some(cfg.compiler_id.clone());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub source_lines: Vec<String>,
    pub asm_lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedSequence {
    pub function_name: String,
    pub blocks: Vec<Block>,
    pub opt_level: Option<OptLevel>,
}

impl AlignedSequence {
    /// All assembly lines in block order.
    pub fn asm_lines(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().flat_map(|b| b.asm_lines.iter().map(String::as_str))
    }
}

/// `0000000000001129 <name>:` -> `name`
fn parse_symbol_header(line: &str) -> Option<&str> {
    let line = line.trim_end();
    let (addr, rest) = line.split_once(' ')?;
    if addr.is_empty() || !addr.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    rest.strip_prefix('<')?.strip_suffix(">:")
}

fn is_section_header(line: &str) -> bool {
    line.starts_with("Disassembly of section ")
}

/// Lines of the named function's region, header excluded.
fn function_region<'a>(raw: &'a str, name: &str) -> Option<(&'a str, Vec<&'a str>)> {
    let mut lines = raw.lines();
    let header = lines.by_ref().find(|l| parse_symbol_header(l) == Some(name))?;
    let body = lines
        .take_while(|l| parse_symbol_header(l).is_none() && !is_section_header(l))
        .collect();
    Some((header, body))
}

/// Names of every function symbol in the dump, in order of appearance,
/// paired with the section they were found in.
pub fn list_functions(raw: &str) -> Vec<(String, String)> {
    let mut section = String::new();
    let mut out = Vec::new();
    for line in raw.lines() {
        if let Some(rest) = line.strip_prefix("Disassembly of section ") {
            section = rest.trim_end().trim_end_matches(':').to_string();
        } else if let Some(name) = parse_symbol_header(line) {
            out.push((name.to_string(), section.clone()));
        }
    }
    out
}

/// Cuts the named function out of `objdump -d` output and cleans it.
pub fn extract_function(raw: &str, name: &str) -> Result<AssemblyListing, DisasmError> {
    let (header, body) =
        function_region(raw, name).ok_or_else(|| DisasmError::FunctionNotFound(name.to_string()))?;
    let mut excerpt = String::from(header);
    for l in &body {
        excerpt.push('\n');
        excerpt.push_str(l);
    }
    let text = clean_lines(body.iter().copied());
    Ok(AssemblyListing {
        function_name: name.to_string(),
        opt_level: None,
        compiler_id: None,
        text,
        raw: excerpt,
    })
}

/// Normalizes an objdump function body into model-facing assembly.
///
/// Per line: the address and opcode-byte columns are removed, `#` comments
/// dropped, `ADDR <sym+0x..>` targets rewritten to `<sym>`, padding `nop`s
/// and byte-continuation lines removed, whitespace collapsed. Symbol headers
/// become `sym:` labels. Source comment lines (`;...`) are dropped.
pub fn clean_asm(raw_region: &str) -> String {
    clean_lines(raw_region.lines())
}

fn clean_lines<'a>(lines: impl Iterator<Item = &'a str>) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut pending_blank = false;
    for line in lines {
        match clean_line(line) {
            None => {}
            Some(l) if l.is_empty() => pending_blank = !out.is_empty(),
            Some(l) => {
                if pending_blank {
                    out.push(String::new());
                    pending_blank = false;
                }
                out.push(l);
            }
        }
    }
    out.join("\n")
}

/// Cleans one line. `None` means the line carries nothing (padding,
/// continuation bytes, source comment); `Some("")` is a blank separator.
pub fn clean_line(line: &str) -> Option<String> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Some(String::new());
    }
    if trimmed.starts_with(';') {
        return None;
    }
    let insn = match split_instruction_columns(line) {
        Some(Some(insn)) => insn,
        // address + bytes only: continuation of a long encoding
        Some(None) => return None,
        None => trimmed,
    };
    let insn = normalize_instruction(insn);
    if insn.is_empty()
        || insn.starts_with(';')
        || is_section_header(&insn)
        || insn.contains("file format ")
    {
        return None;
    }
    if let Some(name) = parse_symbol_header(&insn) {
        return Some(format!("{name}:"));
    }
    if !insn.contains(' ') && insn.ends_with(':') {
        return Some(insn);
    }
    if is_padding(&insn) {
        return None;
    }
    Some(insn)
}

/// For `  addr:\tbytes\tinsn` returns `Some(Some(insn))`, for a
/// continuation `  addr:\tbytes` returns `Some(None)`, otherwise `None`.
fn split_instruction_columns(line: &str) -> Option<Option<&str>> {
    let (addr, rest) = line.split_once('\t')?;
    let addr = addr.trim().strip_suffix(':')?;
    if addr.is_empty() || !addr.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    match rest.split_once('\t') {
        Some((_bytes, insn)) if !insn.trim().is_empty() => Some(Some(insn)),
        _ => Some(None),
    }
}

fn normalize_instruction(insn: &str) -> String {
    let insn = match insn.find('#') {
        Some(i) => &insn[..i],
        None => insn,
    };
    let mut out: Vec<String> = Vec::new();
    for tok in insn.split_whitespace() {
        if tok.starts_with('<') {
            // drop the absolute address printed before a symbolic target
            while out.len() > 1 && out.last().is_some_and(|t| t.bytes().all(|b| b.is_ascii_hexdigit())) {
                out.pop();
            }
        }
        out.push(strip_target_offset(tok));
    }
    out.join(" ")
}

/// `<sym+0x1f>` -> `<sym>`; anything else unchanged.
fn strip_target_offset(tok: &str) -> String {
    let Some(mut inner) = tok.strip_prefix('<').and_then(|t| t.strip_suffix('>')) else {
        return tok.to_string();
    };
    while let Some(i) = inner.rfind(['+', '-']) {
        if i > 0 && inner[i + 1..].starts_with("0x") {
            inner = &inner[..i];
        } else {
            break;
        }
    }
    format!("<{inner}>")
}

const INSN_PREFIXES: &[&str] = &[
    "data16", "data32", "addr32", "cs", "ds", "es", "fs", "gs", "ss", "rex", "rex.w", "rex.W",
];

fn is_padding(insn: &str) -> bool {
    let mut toks = insn.split_whitespace().skip_while(|t| INSN_PREFIXES.contains(t));
    match toks.next() {
        Some(m) if m.starts_with("nop") => true,
        Some("xchg") => toks.next() == Some("%ax,%ax"),
        _ => false,
    }
}

/// Splits the named function of an `objdump -d -S --source-comment=;` dump
/// into source/assembly blocks.
pub fn parse_interleaved(raw: &str, name: &str) -> Result<AlignedSequence, DisasmError> {
    let (_, body) =
        function_region(raw, name).ok_or_else(|| DisasmError::FunctionNotFound(name.to_string()))?;

    let mut saw_source = false;
    let mut blocks: Vec<Block> = Vec::new();
    let mut current: Option<Block> = None;
    for line in body {
        if let Some(src) = line.strip_prefix(';') {
            saw_source = true;
            match current.as_mut() {
                Some(b) if b.asm_lines.is_empty() => b.source_lines.push(src.to_string()),
                _ => {
                    if let Some(done) = current.take() {
                        blocks.push(done);
                    }
                    current = Some(Block {
                        source_lines: vec![src.to_string()],
                        asm_lines: Vec::new(),
                    });
                }
            }
        } else if let Some(insn) = clean_line(line).filter(|l| !l.is_empty()) {
            current
                .get_or_insert_with(|| Block {
                    source_lines: Vec::new(),
                    asm_lines: Vec::new(),
                })
                .asm_lines
                .push(insn);
        }
    }
    if let Some(done) = current.filter(|b| !b.asm_lines.is_empty()) {
        blocks.push(done);
    }
    if !saw_source {
        return Err(DisasmError::NoDebugInfo(name.to_string()));
    }
    Ok(AlignedSequence {
        function_name: name.to_string(),
        blocks,
        opt_level: None,
    })
}
