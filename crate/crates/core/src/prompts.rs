//! Prompt templates for the two LLM stages.
//!
//! Templates are configuration: `{placeholder}` markers are substituted by
//! [`fill`], and every field can be overridden from a config file.

use serde::{Deserialize, Serialize};

pub const FORMALIZE_SYSTEM: &str = "\
You turn a natural-language requirement for generated embedded C code into a \
Hoare-style formal specification that a reviewer can check against the code.
Refer to program state only through identifiers that appear in the supplied code. \
Do not add assumptions that the requirement text does not state.
Answer with exactly these sections, each header at the start of its own line:
PRE: boolean condition over code variables under which the requirement applies (`true` if unconditional)
DEF: one `name = meaning` line per auxiliary quantity or requirement-to-code mapping; \
a mapping names a single code identifier as its meaning
POST: condition that must hold after one execution of the step function
WHY: one short paragraph explaining the mapping";

pub const FORMALIZE_USER: &str = "\
Requirement {requirement_id} ({category}):
{requirement_text}

Code:
```c
{code}
```";

pub const ASSERTIONS_SYSTEM: &str = "\
You write C verification code for a bounded model checker from a formal specification.
Every check is a single statement `SV_ASSERT(condition);`. State that must survive \
between calls (previous values, event counters) goes into static variables whose \
names start with `sv_`.
Answer with these sections, each header at the start of its own line, one C line per entry:
AUX: file-scope declarations of `sv_` variables (may be empty)
ENTRY: statements to run when the step function starts (may be empty)
ASSERT: `SV_ASSERT(...);` statements checked when the step function finishes
UPDATE: statements run after the assertions, e.g. recording previous values (may be empty)";

pub const ASSERTIONS_USER: &str = "\
Requirement {requirement_id}.
Formal specification:
{specification}

Step function: {step_function}

Code:
```c
{code}
```";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub formalize_system: String,
    pub formalize_user: String,
    pub assertions_system: String,
    pub assertions_user: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            formalize_system: FORMALIZE_SYSTEM.into(),
            formalize_user: FORMALIZE_USER.into(),
            assertions_system: ASSERTIONS_SYSTEM.into(),
            assertions_user: ASSERTIONS_USER.into(),
        }
    }
}

/// Substitutes `{key}` markers. Unknown markers are left as written.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| (v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
