//! Requirement formalization: natural-language requirement plus code
//! context in, Hoare-style specification out.
//!
//! The LLM answers in a sectioned grammar (`PRE:`, `DEF:`, `POST:`, `WHY:`),
//! optionally wrapped in a Markdown code fence. Parsed triples are checked
//! against the code context before anything downstream sees them.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csrc;
use crate::llm::{Gateway, LlmError, PromptExchange, Stage};
use crate::prompts::{self, PromptTemplates};
use crate::requirements::Requirement;

#[derive(Debug, Error)]
pub enum FormalizeError {
    #[error("code context is empty")]
    EmptyContext,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("unparseable response: {0}")]
    UnparseableResponse(String),
    #[error("`{name}` is not an identifier of the code context{}", via.as_ref().map(|v| format!(" (mapped from `{v}`)")).unwrap_or_default())]
    UnmappedVariable { name: String, via: Option<String> },
    #[error("malformed review document: {0}")]
    MalformedReview(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Definition {
    pub name: String,
    pub meaning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableMapping {
    pub abstract_name: String,
    pub concrete_name: String,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoareTriple {
    pub requirement_id: String,
    pub precondition: String,
    pub definitions: Vec<Definition>,
    pub postcondition: String,
    pub rationale: String,
}

impl HoareTriple {
    /// Definitions whose meaning is a single code identifier path (with an
    /// optional parenthesised justification) are variable mappings.
    pub fn mappings(&self) -> Vec<VariableMapping> {
        self.definitions
            .iter()
            .filter_map(|d| {
                let meaning = d.meaning.trim();
                let (path, rest) = match meaning.find(char::is_whitespace) {
                    Some(i) => (&meaning[..i], meaning[i..].trim()),
                    None => (meaning, ""),
                };
                let justification = if rest.is_empty() {
                    ""
                } else {
                    rest.strip_prefix('(')?.strip_suffix(')')?.trim()
                };
                is_identifier_path(path).then(|| VariableMapping {
                    abstract_name: d.name.clone(),
                    concrete_name: path.to_string(),
                    justification: justification.to_string(),
                })
            })
            .collect()
    }

    /// The triple in the LLM response grammar; [`parse_response`] reads it
    /// back unchanged.
    pub fn to_grammar(&self) -> String {
        let mut out = String::new();
        writeln!(out, "PRE: {}", self.precondition).unwrap();
        for d in &self.definitions {
            writeln!(out, "DEF: {} = {}", d.name, d.meaning).unwrap();
        }
        writeln!(out, "POST: {}", self.postcondition).unwrap();
        if !self.rationale.is_empty() {
            writeln!(out, "WHY: {}", self.rationale).unwrap();
        }
        out
    }
}

/// `ident(.ident | [digits])*`, e.g. `rtDW.Delay1_DSTATE[2]`.
pub fn is_identifier_path(s: &str) -> bool {
    let b = s.as_bytes();
    if b.is_empty() || !csrc::is_ident_start(b[0]) {
        return false;
    }
    let mut i = 0;
    while i < b.len() {
        match b[i] {
            b'.' => {
                i += 1;
                if i >= b.len() || !csrc::is_ident_start(b[i]) {
                    return false;
                }
            }
            b'[' => {
                let close = match s[i..].find(']') {
                    Some(c) => i + c,
                    None => return false,
                };
                if close == i + 1 || !s[i + 1..close].bytes().all(|c| c.is_ascii_digit()) {
                    return false;
                }
                i = close + 1;
            }
            c if csrc::is_ident_char(c) => i += 1,
            _ => return false,
        }
    }
    true
}

pub fn build_exchange(
    req: &Requirement,
    code_context: &str,
    templates: &PromptTemplates,
) -> PromptExchange {
    let category = req.category.to_string();
    let user = prompts::fill(
        &templates.formalize_user,
        &[
            ("requirement_id", &req.id),
            ("category", &category),
            ("requirement_text", &req.text),
            ("code", code_context),
        ],
    );
    PromptExchange::new(Stage::Formalize, templates.formalize_system.clone(), user)
}

/// One LLM call, then parse and validate. No repair is attempted.
pub fn formalize(
    req: &Requirement,
    code_context: &str,
    gateway: &Gateway,
    templates: &PromptTemplates,
) -> Result<HoareTriple, FormalizeError> {
    if code_context.trim().is_empty() {
        return Err(FormalizeError::EmptyContext);
    }
    let exchange = gateway.complete(build_exchange(req, code_context, templates))?;
    let triple = parse_response(&req.id, &exchange.response_text)?;
    validate(&triple, code_context)?;
    Ok(triple)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Pre,
    Def,
    Post,
    Why,
}

fn section_header(line: &str) -> Option<(Section, &str)> {
    let trimmed = line.trim_start();
    for (tag, sec) in [
        ("PRE:", Section::Pre),
        ("DEF:", Section::Def),
        ("POST:", Section::Post),
        ("WHY:", Section::Why),
    ] {
        if let Some(rest) = trimmed.strip_prefix(tag) {
            return Some((sec, rest));
        }
    }
    None
}

/// Splits at the first `=` that is not part of `==`, `!=`, `<=` or `>=`.
fn split_definition(line: &str) -> Option<(&str, &str)> {
    let b = line.as_bytes();
    (0..b.len())
        .find(|&i| {
            b[i] == b'='
                && b.get(i + 1) != Some(&b'=')
                && !(i > 0 && matches!(b[i - 1], b'=' | b'!' | b'<' | b'>'))
        })
        .map(|i| (line[..i].trim(), line[i + 1..].trim()))
}

/// Parses an LLM response in the `PRE:/DEF:/POST:/WHY:` grammar.
pub fn parse_response(requirement_id: &str, text: &str) -> Result<HoareTriple, FormalizeError> {
    let bad = |m: &str| FormalizeError::UnparseableResponse(m.to_string());
    let mut pre: Option<Vec<String>> = None;
    let mut post: Option<Vec<String>> = None;
    let mut why: Option<Vec<String>> = None;
    let mut defs: Vec<String> = Vec::new();
    let mut current: Option<Section> = None;

    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            continue;
        }
        if let Some((sec, rest)) = section_header(line) {
            let slot = match sec {
                Section::Pre => Some(&mut pre),
                Section::Post => Some(&mut post),
                Section::Why => Some(&mut why),
                Section::Def => None,
            };
            if let Some(slot) = slot {
                if slot.is_some() {
                    return Err(bad(&format!("duplicate {sec:?} section")));
                }
                *slot = Some(Vec::new());
            }
            current = Some(sec);
            if !rest.trim().is_empty() {
                push_line(sec, rest.trim(), &mut pre, &mut post, &mut why, &mut defs);
            }
            continue;
        }
        if let Some(sec) = current {
            push_line(sec, line, &mut pre, &mut post, &mut why, &mut defs);
        }
    }

    let join = |v: Option<Vec<String>>| -> Option<String> {
        v.map(|lines| lines.join("\n").trim().to_string())
    };
    let precondition = join(pre)
        .ok_or_else(|| bad("missing PRE: section"))?;
    let postcondition = join(post)
        .ok_or_else(|| bad("missing POST: section"))?;
    if precondition.is_empty() {
        return Err(bad("PRE: section is empty"));
    }
    if postcondition.is_empty() {
        return Err(bad("POST: section is empty"));
    }
    let mut definitions = Vec::new();
    for line in defs.iter().map(|l| l.trim()).filter(|l| !l.is_empty()) {
        let (name, meaning) = split_definition(line)
            .ok_or_else(|| bad(&format!("DEF line `{line}` is not `name = meaning`")))?;
        if name.is_empty() || meaning.is_empty() {
            return Err(bad(&format!("DEF line `{line}` has an empty side")));
        }
        definitions.push(Definition {
            name: name.to_string(),
            meaning: meaning.to_string(),
        });
    }
    Ok(HoareTriple {
        requirement_id: requirement_id.to_string(),
        precondition,
        definitions,
        postcondition,
        rationale: join(why).unwrap_or_default(),
    })
}

fn push_line(
    sec: Section,
    line: &str,
    pre: &mut Option<Vec<String>>,
    post: &mut Option<Vec<String>>,
    why: &mut Option<Vec<String>>,
    defs: &mut Vec<String>,
) {
    let target = match sec {
        Section::Pre => pre.as_mut(),
        Section::Post => post.as_mut(),
        Section::Why => why.as_mut(),
        Section::Def => {
            defs.push(line.to_string());
            return;
        }
    };
    if let Some(v) = target {
        v.push(line.to_string());
    }
}

/// Checks mappings and pre/postcondition identifiers against the code.
///
/// A mapping's concrete identifiers must all occur in the code. Identifiers
/// in the pre- and postcondition must occur in the code, be a definition
/// name, or appear in a definition's meaning.
pub fn validate(triple: &HoareTriple, code_context: &str) -> Result<(), FormalizeError> {
    let code = csrc::identifiers(code_context);
    for m in triple.mappings() {
        for part in csrc::identifiers(&m.concrete_name) {
            if !code.contains(&part) {
                return Err(FormalizeError::UnmappedVariable {
                    name: m.concrete_name.clone(),
                    via: Some(m.abstract_name.clone()),
                });
            }
        }
    }
    let mut known: BTreeSet<String> = code;
    for d in &triple.definitions {
        known.extend(words(&d.name));
        known.extend(words(&d.meaning));
    }
    for cond in [&triple.precondition, &triple.postcondition] {
        for id in csrc::identifiers(cond) {
            if !csrc::is_keyword(&id) && !known.contains(&id) {
                return Err(FormalizeError::UnmappedVariable { name: id, via: None });
            }
        }
    }
    Ok(())
}

fn words(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
}

const NO_DEFINITIONS: &str = "_(no auxiliary definitions)_";
const NO_RATIONALE: &str = "_(no rationale given)_";
const INDENT: &str = "    ";

fn push_block(out: &mut String, text: &str) {
    for line in text.split('\n') {
        out.push_str(INDENT);
        out.push_str(line);
        out.push('\n');
    }
}

/// Deterministic review document: the requirement text followed by the
/// precondition, definitions, postcondition and rationale in fixed order.
/// Content lines are indented four spaces so they survive any text.
pub fn render_for_review(triple: &HoareTriple, requirement_text: &str) -> String {
    let mut out = format!("# Formal specification {}\n\n", triple.requirement_id);
    out.push_str("## Requirement\n\n");
    push_block(&mut out, requirement_text);
    out.push_str("\n## Precondition\n\n");
    push_block(&mut out, &triple.precondition);
    out.push_str("\n## Definitions\n\n");
    if triple.definitions.is_empty() {
        out.push_str(NO_DEFINITIONS);
        out.push('\n');
    } else {
        for d in &triple.definitions {
            out.push_str(INDENT);
            out.push_str(&d.name);
            out.push_str(" = ");
            out.push_str(&d.meaning);
            out.push('\n');
        }
    }
    out.push_str("\n## Postcondition\n\n");
    push_block(&mut out, &triple.postcondition);
    out.push_str("\n## Rationale\n\n");
    if triple.rationale.is_empty() {
        out.push_str(NO_RATIONALE);
        out.push('\n');
    } else {
        push_block(&mut out, &triple.rationale);
    }
    out
}

/// Reads a review document back into a triple.
pub fn parse_review(doc: &str) -> Result<HoareTriple, FormalizeError> {
    let bad = |m: &str| FormalizeError::MalformedReview(m.to_string());
    let mut lines = doc.lines();
    let title = lines.next().ok_or_else(|| bad("empty document"))?;
    let requirement_id = title
        .strip_prefix("# Formal specification ")
        .ok_or_else(|| bad("missing title"))?
        .to_string();

    let mut sections: Vec<(String, Vec<String>)> = Vec::new();
    for line in lines {
        if let Some(h) = line.strip_prefix("## ") {
            sections.push((h.to_string(), Vec::new()));
        } else if let Some(content) = line.strip_prefix(INDENT) {
            let (_, body) = sections.last_mut().ok_or_else(|| bad("content before first section"))?;
            body.push(content.to_string());
        }
    }
    let take = |name: &str| -> Result<Vec<String>, FormalizeError> {
        sections
            .iter()
            .find(|(h, _)| h == name)
            .map(|(_, b)| b.clone())
            .ok_or_else(|| bad(&format!("missing `{name}` section")))
    };
    let order: Vec<&str> = sections.iter().map(|(h, _)| h.as_str()).collect();
    if order != ["Requirement", "Precondition", "Definitions", "Postcondition", "Rationale"] {
        return Err(bad("sections out of order"));
    }
    let definitions = take("Definitions")?
        .into_iter()
        .map(|l| {
            let (name, meaning) = l
                .split_once(" = ")
                .ok_or_else(|| bad(&format!("definition `{l}` lacks ` = `")))?;
            Ok(Definition {
                name: name.to_string(),
                meaning: meaning.to_string(),
            })
        })
        .collect::<Result<Vec<_>, FormalizeError>>()?;
    Ok(HoareTriple {
        requirement_id,
        precondition: take("Precondition")?.join("\n"),
        definitions,
        postcondition: take("Postcondition")?.join("\n"),
        rationale: take("Rationale")?.join("\n"),
    })
}
