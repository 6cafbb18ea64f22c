//! Lightweight lexical view of C translation units.
//!
//! Benchmark units are machine generated and regular, so a comment/literal
//! aware scanner with brace matching is enough to find file-scope items,
//! function bodies and `return` sites. No preprocessing is performed.

use std::collections::BTreeSet;
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteClass {
    Code,
    Comment,
    Literal,
}

/// Classifies each byte of `text` as code, comment or string/char literal.
pub fn classify(text: &str) -> Vec<ByteClass> {
    let b = text.as_bytes();
    let n = b.len();
    let mut out = vec![ByteClass::Code; n];
    let mut i = 0;
    while i < n {
        match b[i] {
            b'/' if i + 1 < n && b[i + 1] == b'/' => {
                let mut j = i;
                while j < n && b[j] != b'\n' {
                    out[j] = ByteClass::Comment;
                    j += 1;
                }
                i = j;
            }
            b'/' if i + 1 < n && b[i + 1] == b'*' => {
                let mut j = i + 2;
                while j < n && !(b[j] == b'*' && j + 1 < n && b[j + 1] == b'/') {
                    j += 1;
                }
                let end = (j + 2).min(n);
                out[i..end].iter_mut().for_each(|c| *c = ByteClass::Comment);
                i = end;
            }
            q @ (b'"' | b'\'') => {
                let mut j = i + 1;
                while j < n && b[j] != q && b[j] != b'\n' {
                    if b[j] == b'\\' {
                        j += 1;
                    }
                    j += 1;
                }
                let end = (j + 1).min(n);
                out[i..end].iter_mut().for_each(|c| *c = ByteClass::Literal);
                i = end;
            }
            _ => i += 1,
        }
    }
    out
}

pub fn is_ident_start(c: u8) -> bool {
    c.is_ascii_alphabetic() || c == b'_'
}

pub fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_'
}

/// Byte ranges of identifier tokens in code regions (numbers, comments and
/// literals are skipped).
pub fn identifier_spans(text: &str) -> Vec<Range<usize>> {
    let classes = classify(text);
    identifier_spans_with(text, &classes)
}

fn identifier_spans_with(text: &str, classes: &[ByteClass]) -> Vec<Range<usize>> {
    let b = text.as_bytes();
    let n = b.len();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if classes[i] != ByteClass::Code {
            i += 1;
            continue;
        }
        let c = b[i];
        if is_ident_start(c) {
            let s = i;
            while i < n && classes[i] == ByteClass::Code && is_ident_char(b[i]) {
                i += 1;
            }
            spans.push(s..i);
        } else if c.is_ascii_digit() || (c == b'.' && i + 1 < n && b[i + 1].is_ascii_digit()) {
            // numeric literal, including exponents and suffixes
            while i < n {
                let d = b[i];
                if d.is_ascii_alphanumeric() || d == b'.' || d == b'_' {
                    i += 1;
                } else if (d == b'+' || d == b'-')
                    && matches!(b[i - 1], b'e' | b'E' | b'p' | b'P')
                {
                    i += 1;
                } else {
                    break;
                }
            }
        } else {
            i += 1;
        }
    }
    spans
}

/// Distinct identifiers appearing in code regions of `text`.
pub fn identifiers(text: &str) -> BTreeSet<String> {
    identifier_spans(text)
        .into_iter()
        .map(|r| text[r].to_string())
        .collect()
}

pub const C_KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else",
    "enum", "extern", "float", "for", "goto", "if", "inline", "int", "long", "register",
    "restrict", "return", "short", "signed", "sizeof", "static", "struct", "switch", "typedef",
    "union", "unsigned", "void", "volatile", "while", "_Bool", "bool", "true", "false", "NULL",
];

pub fn is_keyword(word: &str) -> bool {
    C_KEYWORDS.contains(&word)
}

/// Removes comments, keeping line structure for block comments that span
/// lines, then drops lines left blank by the removal.
pub fn strip_comments(text: &str) -> String {
    let classes = classify(text);
    let mut kept = String::with_capacity(text.len());
    for (i, ch) in text.char_indices() {
        if classes[i] != ByteClass::Comment || ch == '\n' {
            kept.push(ch);
        }
    }
    let mut out = String::with_capacity(kept.len());
    let mut prev_blank = false;
    for line in kept.lines() {
        let blank = line.trim().is_empty();
        if blank && prev_blank {
            continue;
        }
        let trimmed = line.trim_end();
        out.push_str(trimmed);
        out.push('\n');
        prev_blank = blank;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    /// Text preceding the name, e.g. `static void`.
    pub return_type: String,
    /// Text between the parentheses.
    pub params: String,
    pub name_span: Range<usize>,
    pub open_brace: usize,
    pub close_brace: usize,
    /// Offsets of `return` keywords inside the body.
    pub returns: Vec<usize>,
}

impl FunctionDef {
    pub fn returns_void(&self) -> bool {
        self.return_type
            .split_whitespace()
            .last()
            .is_some_and(|t| t == "void")
    }

    pub fn is_static(&self) -> bool {
        self.return_type.split_whitespace().any(|t| t == "static")
    }

    pub fn takes_no_args(&self) -> bool {
        let p = self.params.trim();
        p.is_empty() || p == "void"
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ItemKind {
    Preprocessor,
    Declaration,
    Function(FunctionDef),
}

/// A file-scope item. `span` excludes leading whitespace and comments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub kind: ItemKind,
    pub span: Range<usize>,
}

impl Item {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.span.clone()]
    }

    pub fn function(&self) -> Option<&FunctionDef> {
        match &self.kind {
            ItemKind::Function(f) => Some(f),
            _ => None,
        }
    }
}

/// Splits a translation unit into file-scope items.
pub fn top_level_items(text: &str) -> Vec<Item> {
    let classes = classify(text);
    let b = text.as_bytes();
    let n = b.len();
    let mut items = Vec::new();

    let mut start: Option<usize> = None;
    let mut depth = 0usize;
    let mut paren = 0usize;
    let mut body_open: Option<usize> = None;
    let mut last_sig: Option<u8> = None;
    let mut i = 0;
    while i < n {
        if classes[i] != ByteClass::Code {
            i += 1;
            continue;
        }
        let c = b[i];
        if start.is_none() {
            if c.is_ascii_whitespace() {
                i += 1;
                continue;
            }
            if c == b'#' {
                let mut j = i;
                while j < n {
                    if b[j] == b'\n' && !(j > 0 && b[j - 1] == b'\\') {
                        break;
                    }
                    j += 1;
                }
                items.push(Item {
                    kind: ItemKind::Preprocessor,
                    span: i..j,
                });
                i = j;
                continue;
            }
            start = Some(i);
            last_sig = None;
        }
        match c {
            b'(' => paren += 1,
            b')' => paren = paren.saturating_sub(1),
            b'{' => {
                if depth == 0 && paren == 0 && last_sig == Some(b')') {
                    body_open = Some(i);
                }
                depth += 1;
            }
            b'}' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    if let (Some(s), Some(open)) = (start, body_open) {
                        let kind = match function_def(text, &classes, s, open, i) {
                            Some(f) => ItemKind::Function(f),
                            None => ItemKind::Declaration,
                        };
                        items.push(Item { kind, span: s..i + 1 });
                        start = None;
                        body_open = None;
                    }
                }
            }
            b';' if depth == 0 && paren == 0 => {
                items.push(Item {
                    kind: ItemKind::Declaration,
                    span: start.unwrap_or(i)..i + 1,
                });
                start = None;
                body_open = None;
            }
            _ => {}
        }
        if !c.is_ascii_whitespace() {
            last_sig = Some(c);
        }
        i += 1;
    }
    if let Some(s) = start {
        let end = text.trim_end().len().max(s);
        items.push(Item {
            kind: ItemKind::Declaration,
            span: s..end,
        });
    }
    items
}

fn function_def(
    text: &str,
    classes: &[ByteClass],
    start: usize,
    open: usize,
    close: usize,
) -> Option<FunctionDef> {
    let b = text.as_bytes();
    // first top-level '(' of the header
    let lparen = (start..open).find(|&k| classes[k] == ByteClass::Code && b[k] == b'(')?;
    let mut depth = 0usize;
    let mut rparen = None;
    for k in lparen..open {
        if classes[k] != ByteClass::Code {
            continue;
        }
        match b[k] {
            b'(' => depth += 1,
            b')' => {
                depth -= 1;
                if depth == 0 {
                    rparen = Some(k);
                    break;
                }
            }
            _ => {}
        }
    }
    let rparen = rparen?;
    let mut e = lparen;
    while e > start && b[e - 1].is_ascii_whitespace() {
        e -= 1;
    }
    let mut s = e;
    while s > start && is_ident_char(b[s - 1]) {
        s -= 1;
    }
    if s == e || !is_ident_start(b[s]) {
        return None;
    }
    let spans = identifier_spans_with(text, classes);
    let returns = spans
        .iter()
        .filter(|r| r.start > open && r.end <= close && &text[(*r).clone()] == "return")
        .map(|r| r.start)
        .collect();
    Some(FunctionDef {
        name: text[s..e].to_string(),
        return_type: collapse_ws(&text[start..s]),
        params: collapse_ws(&text[lparen + 1..rparen]),
        name_span: s..e,
        open_brace: open,
        close_brace: close,
        returns,
    })
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Glob-lite match supporting a leading and/or trailing `*`.
pub fn name_matches(pattern: &str, name: &str) -> bool {
    match (pattern.strip_prefix('*'), pattern.strip_suffix('*')) {
        (Some(rest), _) if rest.ends_with('*') && rest.len() > 1 => {
            name.contains(&rest[..rest.len() - 1])
        }
        (Some(suffix), _) => name.ends_with(suffix),
        (None, Some(prefix)) => name.starts_with(prefix),
        (None, None) => name == pattern,
    }
}

/// Byte offsets at which each line starts.
pub fn line_starts(text: &str) -> Vec<usize> {
    std::iter::once(0)
        .chain(text.match_indices('\n').map(|(i, _)| i + 1))
        .filter(|&i| i < text.len() || i == 0)
        .collect()
}

/// Zero-based line index containing byte `offset`.
pub fn line_of(starts: &[usize], offset: usize) -> usize {
    match starts.binary_search(&offset) {
        Ok(i) => i,
        Err(i) => i - 1,
    }
}

/// Names declared by a file-scope declaration such as `real32_T a, b = 1.0F;`.
/// Returns `None` for typedefs, function prototypes and bare tag declarations.
pub fn declared_names(decl: &str) -> Option<Vec<String>> {
    let body = decl.trim().trim_end_matches(';').trim();
    let first = body.split_whitespace().next()?;
    if first == "typedef" {
        return None;
    }
    let stripped = strip_initializers(body);
    let classes = classify(&stripped);
    let b = stripped.as_bytes();
    // skip a leading aggregate body, e.g. `struct { int x; } s;`
    let mut brace = 0usize;
    let mut paren = 0usize;
    let mut parts: Vec<String> = Vec::new();
    let mut cur = String::new();
    for (k, &c) in b.iter().enumerate() {
        if classes[k] != ByteClass::Code {
            continue;
        }
        match c {
            b'{' => brace += 1,
            b'}' => {
                brace = brace.saturating_sub(1);
                if brace == 0 {
                    cur.clear();
                    continue;
                }
            }
            b'(' if brace == 0 => paren += 1,
            b')' if brace == 0 => paren = paren.saturating_sub(1),
            b',' if brace == 0 && paren == 0 => {
                parts.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        if brace == 0 {
            cur.push(c as char);
        }
    }
    parts.push(cur);
    let mut names = Vec::new();
    for part in parts {
        if part.contains('(') {
            // prototype
            return None;
        }
        let head = part.split('[').next().unwrap_or("");
        let words: Vec<&str> = identifier_spans(head)
            .into_iter()
            .map(|r| &head[r])
            .collect();
        let Some((&name, before)) = words.split_last() else {
            continue;
        };
        let tag_only = matches!(before.last(), Some(&"struct" | &"union" | &"enum"));
        if !is_keyword(name) && !tag_only {
            names.push(name.to_string());
        }
    }
    if names.is_empty() {
        return None;
    }
    Some(names)
}

/// Drops `= initializer` parts from a declaration, keeping declarators.
pub fn strip_initializers(decl: &str) -> String {
    let classes = classify(decl);
    let b = decl.as_bytes();
    let mut out = String::with_capacity(decl.len());
    let mut skipping = false;
    let mut depth = 0usize;
    for (k, &c) in b.iter().enumerate() {
        let code = classes[k] == ByteClass::Code;
        if skipping {
            if code {
                match c {
                    b'{' | b'(' | b'[' => depth += 1,
                    b'}' | b')' | b']' => depth = depth.saturating_sub(1),
                    b',' | b';' if depth == 0 => {
                        skipping = false;
                        out.push(c as char);
                    }
                    _ => {}
                }
            }
            continue;
        }
        if code && c == b'=' {
            skipping = true;
            depth = 0;
            while out.ends_with(' ') {
                out.pop();
            }
            continue;
        }
        out.push(c as char);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: &str = r#"#include <math.h>
/* model state */
typedef struct {
  float ia;
  float ib;
} ExtU;

ExtU rtU;
static int counter = 0; // comment with { brace
float out_val;

void model_step(void)
{
  const char *s = "}";
  if (rtU.ia > 0.0f) {
    out_val = rtU.ia;
    return;
  }
  out_val = rtU.ib;
}

int helper(int x) { return x + 1; }
"#;

    #[test]
    fn items_are_split_at_file_scope() {
        let items = top_level_items(UNIT);
        let kinds: Vec<&str> = items
            .iter()
            .map(|i| match &i.kind {
                ItemKind::Preprocessor => "pp",
                ItemKind::Declaration => "decl",
                ItemKind::Function(_) => "fn",
            })
            .collect();
        assert_eq!(kinds, ["pp", "decl", "decl", "decl", "decl", "fn", "fn"]);
        let step = items[5].function().unwrap();
        assert_eq!(step.name, "model_step");
        assert!(step.returns_void());
        assert!(step.takes_no_args());
        assert_eq!(step.returns.len(), 1);
        assert_eq!(&UNIT[step.close_brace..step.close_brace + 1], "}");
        let helper = items[6].function().unwrap();
        assert_eq!(helper.name, "helper");
        assert!(!helper.returns_void());
    }

    #[test]
    fn identifiers_skip_comments_literals_and_numbers() {
        let ids = identifiers("x = 1.5e+3f + y2; /* zz */ s = \"qq\"; // ww\n 0x1Fu");
        let v: Vec<_> = ids.into_iter().collect();
        assert_eq!(v, ["s", "x", "y2"]);
    }

    #[test]
    fn declared_names_cover_common_shapes() {
        assert_eq!(declared_names("float a, b = 1.0f;").unwrap(), ["a", "b"]);
        assert_eq!(declared_names("ExtU rtU;").unwrap(), ["rtU"]);
        assert_eq!(declared_names("static real_T buf[3] = {0};").unwrap(), ["buf"]);
        assert_eq!(declared_names("int *p;").unwrap(), ["p"]);
        assert!(declared_names("typedef float real32_T;").is_none());
        assert!(declared_names("void model_step(void);").is_none());
        assert!(declared_names("struct tag;").is_none());
    }

    #[test]
    fn comments_are_stripped() {
        let s = strip_comments("int a; /* x\n y */\n\n\n// z\nint b;\n");
        assert_eq!(s, "int a;\n\nint b;\n");
    }

    #[test]
    fn anchor_patterns() {
        assert!(name_matches("*_step", "REG_step"));
        assert!(!name_matches("*_step", "REG_step2"));
        assert!(name_matches("REG_*", "REG_step"));
        assert!(name_matches("*step*", "a_step_b"));
        assert!(name_matches("REG_step", "REG_step"));
        assert!(!name_matches("REG_step", "XREG_step"));
    }

    #[test]
    fn line_lookup() {
        let t = "a\nbb\nccc";
        let starts = line_starts(t);
        assert_eq!(starts, [0, 2, 5]);
        assert_eq!(line_of(&starts, 3), 1);
        assert_eq!(line_of(&starts, 5), 2);
    }
}
