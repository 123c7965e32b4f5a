//! Domain types shared across the toolkit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Compiler optimization level. Only the four levels evaluated by the
/// benchmark are representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OptLevel {
    O0,
    O1,
    O2,
    O3,
}

impl OptLevel {
    pub const ALL: [OptLevel; 4] = [OptLevel::O0, OptLevel::O1, OptLevel::O2, OptLevel::O3];

    pub fn as_str(self) -> &'static str {
        match self {
            OptLevel::O0 => "O0",
            OptLevel::O1 => "O1",
            OptLevel::O2 => "O2",
            OptLevel::O3 => "O3",
        }
    }

    /// The compiler flag, e.g. `-O2`.
    pub fn flag(self) -> String {
        format!("-{}", self.as_str())
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for OptLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid optimization level `{0}` (expected one of O0, O1, O2, O3)")]
pub struct ParseOptLevelError(pub String);

impl FromStr for OptLevel {
    type Err = ParseOptLevelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let t = t.strip_prefix('-').unwrap_or(t);
        let t = t.strip_prefix(['O', 'o']).unwrap_or(t);
        match t {
            "0" => Ok(OptLevel::O0),
            "1" => Ok(OptLevel::O1),
            "2" => Ok(OptLevel::O2),
            "3" => Ok(OptLevel::O3),
            _ => Err(ParseOptLevelError(s.to_string())),
        }
    }
}

/// A compilable C function plus the prelude it needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFunction {
    pub id: String,
    #[serde(default)]
    pub prelude: String,
    pub body: String,
    pub entry_name: String,
}

impl SourceFunction {
    /// A function with no prelude, e.g. model output that is already a
    /// complete unit.
    pub fn bare(id: impl Into<String>, body: impl Into<String>, entry_name: impl Into<String>) -> Self {
        SourceFunction {
            id: id.into(),
            prelude: String::new(),
            body: body.into(),
            entry_name: entry_name.into(),
        }
    }

    /// The translation unit handed to the compiler.
    pub fn translation_unit(&self) -> String {
        if self.prelude.is_empty() {
            let mut s = self.body.clone();
            if !s.ends_with('\n') {
                s.push('\n');
            }
            s
        } else {
            let mut s = self.prelude.clone();
            if !s.ends_with('\n') {
                s.push('\n');
            }
            s.push_str(&self.body);
            if !s.ends_with('\n') {
                s.push('\n');
            }
            s
        }
    }
}
