//! Requirement documents and their paired C translation units.
//!
//! Document layout (line oriented):
//!
//! ```text
//! task: REG
//! lines_of_code: 120
//! block_count: 34
//!
//! [REQ REG-001]
//! category: FiniteStateControl
//! code: units/reg.c
//!     Free text body, indented, until the next header.
//! ```
//!
//! Lines starting with `#` at column 0 are comments.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csrc;

#[derive(Debug, Error)]
pub enum RequirementError {
    #[error("malformed requirement document at line {line}: {message}")]
    MalformedDocument { line: usize, message: String },
    #[error("duplicate requirement id `{0}`")]
    DuplicateId(String),
    #[error("unknown category `{category}` for requirement `{id}`")]
    UnknownCategory { id: String, category: String },
    #[error("requirement id `{id}` does not start with task prefix `{task}`")]
    IdPrefixMismatch { id: String, task: String },
    #[error("source unit {path} for `{id}` is missing or unreadable")]
    SourceMissing { id: String, path: PathBuf },
    #[error("token budget must be positive")]
    InvalidBudget,
    #[error("budget of {budget} tokens cannot hold the step function signature ({needed} tokens)")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    SignalProcessing,
    FiniteStateControl,
    Navigation,
    SystemIntegration,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::SignalProcessing,
        Category::FiniteStateControl,
        Category::Navigation,
        Category::SystemIntegration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::SignalProcessing => "SignalProcessing",
            Category::FiniteStateControl => "FiniteStateControl",
            Category::Navigation => "Navigation",
            Category::SystemIntegration => "SystemIntegration",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub id: String,
    pub category: Category,
    pub text: String,
    /// Path exactly as written in the document.
    pub code_ref: String,
    /// `code_ref` resolved against the document's directory.
    pub source_unit: PathBuf,
}

impl Requirement {
    pub fn read_source(&self) -> Result<String, RequirementError> {
        fs::read_to_string(&self.source_unit).map_err(|_| RequirementError::SourceMissing {
            id: self.id.clone(),
            path: self.source_unit.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeMetadata {
    pub lines_of_code: u32,
    pub block_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequirementSet {
    pub task: String,
    pub requirements: Vec<Requirement>,
    pub code_metadata: CodeMetadata,
}

impl RequirementSet {
    pub fn len(&self) -> usize {
        self.requirements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requirements.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Requirement> {
        self.requirements.iter().find(|r| r.id == id)
    }

    /// Confirms every requirement's source unit is readable.
    pub fn check_sources(&self) -> Result<(), RequirementError> {
        for req in &self.requirements {
            fs::File::open(&req.source_unit).map_err(|_| RequirementError::SourceMissing {
                id: req.id.clone(),
                path: req.source_unit.clone(),
            })?;
        }
        Ok(())
    }

    /// Serializes back to the document format.
    pub fn to_document(&self) -> String {
        let mut out = format!(
            "task: {}\nlines_of_code: {}\nblock_count: {}\n",
            self.task, self.code_metadata.lines_of_code, self.code_metadata.block_count
        );
        for req in &self.requirements {
            out.push_str(&format!(
                "\n[REQ {}]\ncategory: {}\ncode: {}\n",
                req.id, req.category, req.code_ref
            ));
            for line in req.text.lines() {
                if line.is_empty() {
                    out.push('\n');
                } else {
                    out.push_str("    ");
                    out.push_str(line);
                    out.push('\n');
                }
            }
        }
        out
    }
}

pub fn load_requirement_set(doc: &Path) -> Result<RequirementSet, RequirementError> {
    let text = fs::read_to_string(doc).map_err(|source| RequirementError::Io {
        path: doc.to_path_buf(),
        source,
    })?;
    let base = doc.parent().unwrap_or_else(|| Path::new("."));
    parse_requirement_set(&text, base)
}

struct Draft {
    id: String,
    header_line: usize,
    category: Option<(String, usize)>,
    code: Option<String>,
    body: Vec<String>,
}

/// Parses a requirement document; `base` resolves `code:` paths.
pub fn parse_requirement_set(text: &str, base: &Path) -> Result<RequirementSet, RequirementError> {
    let malformed = |line: usize, message: &str| RequirementError::MalformedDocument {
        line,
        message: message.to_string(),
    };

    let mut task: Option<String> = None;
    let mut meta = CodeMetadata::default();
    let mut drafts: Vec<Draft> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        if raw.starts_with('#') {
            continue;
        }
        let indented = raw.starts_with(' ') || raw.starts_with('\t');
        let line = raw.trim();

        if let Some(rest) = line.strip_prefix("[REQ ").filter(|_| !indented) {
            let id = rest
                .strip_suffix(']')
                .ok_or_else(|| malformed(lineno, "requirement header must end with `]`"))?
                .trim();
            if id.is_empty() {
                return Err(malformed(lineno, "empty requirement id"));
            }
            drafts.push(Draft {
                id: id.to_string(),
                header_line: lineno,
                category: None,
                code: None,
                body: Vec::new(),
            });
            continue;
        }

        match drafts.last_mut() {
            None => {
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line
                    .split_once(':')
                    .ok_or_else(|| malformed(lineno, "expected `key: value` before first [REQ]"))?;
                let value = value.trim();
                match key.trim() {
                    "task" => task = Some(value.to_string()),
                    "lines_of_code" => {
                        meta.lines_of_code = value
                            .parse()
                            .map_err(|_| malformed(lineno, "lines_of_code must be an integer"))?
                    }
                    "block_count" => {
                        meta.block_count = value
                            .parse()
                            .map_err(|_| malformed(lineno, "block_count must be an integer"))?
                    }
                    other => return Err(malformed(lineno, &format!("unknown key `{other}`"))),
                }
            }
            Some(draft) => {
                if indented {
                    draft.body.push(raw.to_string());
                    continue;
                }
                if line.is_empty() {
                    draft.body.push(String::new());
                    continue;
                }
                let (key, value) = line
                    .split_once(':')
                    .ok_or_else(|| malformed(lineno, "expected `category:` or `code:`"))?;
                let value = value.trim().to_string();
                match key.trim() {
                    "category" => draft.category = Some((value, lineno)),
                    "code" => draft.code = Some(value),
                    other => return Err(malformed(lineno, &format!("unknown field `{other}`"))),
                }
            }
        }
    }

    let task = task.ok_or_else(|| malformed(1, "missing `task:` line"))?;
    if drafts.is_empty() {
        return Err(malformed(text.lines().count().max(1), "document has no requirements"));
    }

    let mut seen = HashSet::new();
    let mut requirements = Vec::with_capacity(drafts.len());
    for d in drafts {
        if !seen.insert(d.id.clone()) {
            return Err(RequirementError::DuplicateId(d.id));
        }
        if !d.id.starts_with(&task) {
            return Err(RequirementError::IdPrefixMismatch { id: d.id, task });
        }
        let (cat_text, _) = d
            .category
            .ok_or_else(|| malformed(d.header_line, "missing `category:`"))?;
        let category = cat_text
            .parse::<Category>()
            .map_err(|_| RequirementError::UnknownCategory {
                id: d.id.clone(),
                category: cat_text.clone(),
            })?;
        let code_ref = d
            .code
            .ok_or_else(|| malformed(d.header_line, "missing `code:`"))?;
        let text = dedent(&d.body);
        if text.is_empty() {
            return Err(malformed(d.header_line, "requirement body is empty"));
        }
        requirements.push(Requirement {
            source_unit: base.join(&code_ref),
            id: d.id,
            category,
            text,
            code_ref,
        });
    }
    Ok(RequirementSet {
        task,
        requirements,
        code_metadata: meta,
    })
}

fn dedent(lines: &[String]) -> String {
    let indent = lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    let body: Vec<&str> = lines
        .iter()
        .map(|l| {
            if l.trim().is_empty() {
                ""
            } else {
                l[indent..].trim_end()
            }
        })
        .collect();
    let start = body.iter().position(|l| !l.is_empty()).unwrap_or(body.len());
    let end = body.iter().rposition(|l| !l.is_empty()).map_or(start, |e| e + 1);
    body[start..end].join("\n")
}

/// Token estimate used for context budgeting: one token per four characters.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub const DEFAULT_STEP_PATTERN: &str = "*_step";

/// Reads the requirement's unit and cuts it down to `budget` tokens.
pub fn slice_code_context(req: &Requirement, budget: usize) -> Result<String, RequirementError> {
    if budget == 0 {
        return Err(RequirementError::InvalidBudget);
    }
    let text = req.read_source()?;
    slice_text(&text, budget, DEFAULT_STEP_PATTERN)
}

/// Keeps the whole unit when it fits. Otherwise comments go first, then the
/// excerpt is rebuilt from file-scope items in priority order: step function
/// signature, declarations, step body, remaining functions.
pub fn slice_text(text: &str, budget: usize, step_pattern: &str) -> Result<String, RequirementError> {
    if budget == 0 {
        return Err(RequirementError::InvalidBudget);
    }
    if estimate_tokens(text) <= budget {
        return Ok(text.to_string());
    }
    let stripped = csrc::strip_comments(text);
    if estimate_tokens(&stripped) <= budget {
        return Ok(stripped);
    }

    let items = csrc::top_level_items(&stripped);
    let mut chosen: Vec<Option<String>> = vec![None; items.len()];
    let render = |chosen: &[Option<String>]| {
        let mut out = String::new();
        for piece in chosen.iter().flatten() {
            out.push_str(piece);
            out.push('\n');
        }
        out
    };
    let fits = |chosen: &[Option<String>]| estimate_tokens(&render(chosen)) <= budget;

    let step = items.iter().position(|it| {
        it.function()
            .is_some_and(|f| csrc::name_matches(step_pattern, &f.name))
    });
    if let Some(si) = step {
        let f = items[si].function().expect("step item is a function");
        let header = stripped[items[si].span.start..f.open_brace].trim_end();
        chosen[si] = Some(format!("{header} {{ /* ... */ }}"));
        if !fits(&chosen) {
            return Err(RequirementError::BudgetTooSmall {
                budget,
                needed: estimate_tokens(&render(&chosen)),
            });
        }
    }

    let try_add = |chosen: &mut Vec<Option<String>>, idx: usize| {
        let previous = chosen[idx].replace(items[idx].text(&stripped).to_string());
        if !fits(chosen) {
            chosen[idx] = previous;
        }
    };
    for idx in 0..items.len() {
        if items[idx].function().is_none() {
            try_add(&mut chosen, idx);
        }
    }
    if let Some(si) = step {
        try_add(&mut chosen, si);
    }
    for idx in 0..items.len() {
        if items[idx].function().is_some() && Some(idx) != step {
            try_add(&mut chosen, idx);
        }
    }
    Ok(render(&chosen))
}
