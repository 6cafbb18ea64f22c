//! Bounded model checker driver: runs the external tool on an instrumented
//! unit, maps its output to a verdict and parses counterexample traces.

use std::collections::BTreeMap;
use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

pub const BMC_ENV: &str = "SPECVERIFY_BMC";

/// How long a killed process group may take to be reaped before the run is
/// abandoned.
pub const KILL_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum BmcError {
    #[error("verifier `{}` not found or not executable", .0.display())]
    ToolNotFound(PathBuf),
    #[error("verifier exited with {exit_code:?} without a recognizable verdict")]
    ToolCrashed {
        exit_code: Option<i32>,
        output: String,
    },
    #[error("invalid verifier config: {0}")]
    InvalidConfig(String),
    #[error("trace contains no state blocks")]
    NoStatesFound,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloatingPointMode {
    #[default]
    IeeeFloat,
    Rational,
}

impl FloatingPointMode {
    pub fn flag(self) -> &'static str {
        match self {
            Self::IeeeFloat => "--floatbv",
            Self::Rational => "--ir",
        }
    }
}

/// Regexes matched against the combined tool output, in precedence order
/// timeout, failure, success, bound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputPatterns {
    pub timeout: String,
    pub failed: String,
    pub successful: String,
    pub bound_hit: String,
}

impl Default for OutputPatterns {
    fn default() -> Self {
        Self {
            timeout: r"(?m)^(ERROR: )?Timed out".into(),
            failed: r"(?m)^VERIFICATION FAILED".into(),
            successful: r"(?m)^VERIFICATION SUCCESSFUL".into(),
            bound_hit: r"(?m)^VERIFICATION UNKNOWN|unwinding assertion".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BmcConfig {
    pub tool_path: PathBuf,
    pub unwind_bound: u32,
    pub timeout_secs: u64,
    pub extra_flags: Vec<String>,
    pub floating_point_mode: FloatingPointMode,
    pub patterns: OutputPatterns,
}

impl Default for BmcConfig {
    fn default() -> Self {
        Self {
            tool_path: PathBuf::from("esbmc"),
            unwind_bound: 10,
            timeout_secs: 900,
            extra_flags: Vec::new(),
            floating_point_mode: FloatingPointMode::IeeeFloat,
            patterns: OutputPatterns::default(),
        }
    }
}

impl BmcConfig {
    pub fn validate(&self) -> Result<(), BmcError> {
        if self.unwind_bound < 1 {
            return Err(BmcError::InvalidConfig("unwind_bound must be at least 1".into()));
        }
        if self.timeout_secs == 0 {
            return Err(BmcError::InvalidConfig("timeout must be positive".into()));
        }
        self.compiled_patterns().map(|_| ())
    }

    /// Applies `SPECVERIFY_BMC` when set.
    pub fn with_env_override(mut self) -> Self {
        if let Some(p) = std::env::var_os(BMC_ENV).filter(|p| !p.is_empty()) {
            self.tool_path = PathBuf::from(p);
        }
        self
    }

    pub fn args(&self, file: &Path) -> Vec<String> {
        let mut args = vec![
            file.display().to_string(),
            "--unwind".into(),
            self.unwind_bound.to_string(),
            "--timeout".into(),
            format!("{}s", self.timeout_secs),
            self.floating_point_mode.flag().into(),
        ];
        args.extend(self.extra_flags.iter().cloned());
        args
    }

    fn compiled_patterns(&self) -> Result<[Regex; 4], BmcError> {
        let p = &self.patterns;
        let mk = |s: &str| Regex::new(s).map_err(|e| BmcError::InvalidConfig(e.to_string()));
        Ok([mk(&p.timeout)?, mk(&p.failed)?, mk(&p.successful)?, mk(&p.bound_hit)?])
    }
}

/// Locates an executable, searching `PATH` for bare names.
pub fn resolve_tool(path: &Path) -> Result<PathBuf, BmcError> {
    let is_exec = |p: &Path| {
        use std::os::unix::fs::PermissionsExt;
        p.metadata()
            .map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
            .unwrap_or(false)
    };
    if path.components().count() > 1 || path.is_absolute() {
        return if is_exec(path) {
            Ok(path.to_path_buf())
        } else {
            Err(BmcError::ToolNotFound(path.to_path_buf()))
        };
    }
    std::env::var_os("PATH")
        .iter()
        .flat_map(std::env::split_paths)
        .map(|d| d.join(path))
        .find(|p| is_exec(p))
        .ok_or_else(|| BmcError::ToolNotFound(path.to_path_buf()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictStatus {
    Verified,
    Falsifiable,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictReason {
    Proved,
    CounterexampleFound,
    Timeout,
    BoundHit,
    ToolError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueKind {
    Bool,
    Int,
    Float32,
    Float64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedValue {
    pub kind: ValueKind,
    #[serde(with = "lossless_f64")]
    pub value: f64,
    /// Hex encoding of the IEEE bits, e.g. `0x67bfff1a`.
    pub bit_pattern: Option<String>,
}

impl TypedValue {
    pub fn bits(&self) -> Option<u64> {
        let hex = self.bit_pattern.as_deref()?.strip_prefix("0x")?;
        u64::from_str_radix(hex, 16).ok()
    }

    pub fn f32_value(&self) -> f32 {
        match (self.kind, self.bits()) {
            (ValueKind::Float32, Some(b)) => f32::from_bits(b as u32),
            _ => self.value as f32,
        }
    }

    /// True when the bit pattern (if any) decodes to `value` exactly.
    pub fn is_consistent(&self) -> bool {
        let same = |x: f64| x.to_bits() == self.value.to_bits() || (x.is_nan() && self.value.is_nan());
        match (self.kind, self.bits()) {
            (ValueKind::Float32, Some(b)) => same(f32::from_bits(b as u32) as f64),
            (ValueKind::Float64, Some(b)) => same(f64::from_bits(b)),
            _ => true,
        }
    }
}

mod lossless_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step_index: usize,
    pub assignments: BTreeMap<String, TypedValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub failed_assertion: String,
    pub steps: Vec<TraceStep>,
    pub raw_trace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub requirement_id: String,
    pub status: VerdictStatus,
    pub reason: VerdictReason,
    pub counterexample: Option<Counterexample>,
    #[serde(skip)]
    pub wall_time: Duration,
    /// Full tool output, persisted separately as the trace file.
    #[serde(skip)]
    pub raw_output: String,
}

impl Verdict {
    pub fn undetermined(requirement_id: &str, reason: VerdictReason, raw_output: String) -> Self {
        Self {
            requirement_id: requirement_id.to_string(),
            status: VerdictStatus::Undetermined,
            reason,
            counterexample: None,
            wall_time: Duration::ZERO,
            raw_output,
        }
    }
}

/// Captured result of one tool run.
#[derive(Debug, Clone)]
pub struct ToolRun {
    pub output: String,
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub wall_time: Duration,
}

/// Runs `program` in its own process group, killing the whole group when
/// `timeout` elapses.
pub fn run_with_timeout(mut cmd: Command, timeout: Duration) -> Result<ToolRun, std::io::Error> {
    cmd.stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let start = Instant::now();
    let mut child = cmd.spawn()?;
    let pid = child.id() as libc::pid_t;
    let reader = |mut r: Box<dyn Read + Send>| {
        std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = r.read_to_end(&mut buf);
            buf
        })
    };
    let out = reader(Box::new(child.stdout.take().expect("piped stdout")));
    let err = reader(Box::new(child.stderr.take().expect("piped stderr")));

    let mut timed_out = false;
    let status = loop {
        if let Some(s) = child.try_wait()? {
            break s;
        }
        if start.elapsed() >= timeout {
            timed_out = true;
            // SAFETY: signalling a process group we created.
            unsafe {
                libc::killpg(pid, libc::SIGKILL);
            }
            break child.wait()?;
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    let join = |h: std::thread::JoinHandle<Vec<u8>>| {
        let deadline = Instant::now() + KILL_GRACE;
        while !h.is_finished() && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(10));
        }
        if h.is_finished() {
            h.join().unwrap_or_default()
        } else {
            warn!("output pipe still open after kill grace period");
            Vec::new()
        }
    };
    let mut output = String::from_utf8_lossy(&join(out)).into_owned();
    let stderr = join(err);
    if !stderr.is_empty() {
        if !output.is_empty() && !output.ends_with('\n') {
            output.push('\n');
        }
        output.push_str(&String::from_utf8_lossy(&stderr));
    }
    Ok(ToolRun {
        output,
        exit_code: status.code().or_else(|| status.signal().map(|s| 128 + s)),
        timed_out,
        wall_time: start.elapsed(),
    })
}

/// Verifies the unit at `file` (its `sv_assert.h` must sit next to it).
pub fn run_verifier(requirement_id: &str, file: &Path, cfg: &BmcConfig) -> Result<Verdict, BmcError> {
    cfg.validate()?;
    let tool = resolve_tool(&cfg.tool_path)?;
    let mut cmd = Command::new(&tool);
    cmd.args(cfg.args(file));
    debug!(tool = %tool.display(), file = %file.display(), "running verifier");
    let run = run_with_timeout(cmd, Duration::from_secs(cfg.timeout_secs)).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound || e.kind() == std::io::ErrorKind::PermissionDenied {
            BmcError::ToolNotFound(tool.clone())
        } else {
            BmcError::Io(e)
        }
    })?;
    let mut verdict = normalize(requirement_id, &run, cfg)?;
    verdict.wall_time = run.wall_time;
    Ok(verdict)
}

/// Maps one captured run to a verdict.
pub fn normalize(requirement_id: &str, run: &ToolRun, cfg: &BmcConfig) -> Result<Verdict, BmcError> {
    let [timeout, failed, successful, bound] = cfg.compiled_patterns()?;
    let out = &run.output;
    let undetermined = |reason| Ok(Verdict::undetermined(requirement_id, reason, out.clone()));
    if run.timed_out || timeout.is_match(out) {
        return undetermined(VerdictReason::Timeout);
    }
    if failed.is_match(out) {
        return match parse_counterexample(out) {
            Ok(cex) if bound.is_match(&cex.failed_assertion) => undetermined(VerdictReason::BoundHit),
            Ok(cex) => Ok(Verdict {
                requirement_id: requirement_id.to_string(),
                status: VerdictStatus::Falsifiable,
                reason: VerdictReason::CounterexampleFound,
                counterexample: Some(cex),
                wall_time: Duration::ZERO,
                raw_output: out.clone(),
            }),
            Err(_) => undetermined(VerdictReason::ToolError),
        };
    }
    if successful.is_match(out) {
        return Ok(Verdict {
            requirement_id: requirement_id.to_string(),
            status: VerdictStatus::Verified,
            reason: VerdictReason::Proved,
            counterexample: None,
            wall_time: Duration::ZERO,
            raw_output: out.clone(),
        });
    }
    if bound.is_match(out) {
        return undetermined(VerdictReason::BoundHit);
    }
    if run.exit_code == Some(0) {
        return undetermined(VerdictReason::ToolError);
    }
    Err(BmcError::ToolCrashed {
        exit_code: run.exit_code,
        output: out.clone(),
    })
}

fn state_header() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^State \d+\b(?:.*\[step (\d+)\])?").unwrap())
}

fn assignment_line() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*([A-Za-z_$][\w.\[\]$#!:@]*)\s*=\s*(.*?)\s*(?:\(([01][01 ]*)\))?\s*$").unwrap()
    })
}

/// Parses a state-block trace.
///
/// A state starts with `State <n> ... [step <k>]`; states without a step tag
/// belong to the most recent step. Assignments read `name = value` with an
/// optional parenthesised 32 or 64 bit binary pattern; a `f` suffix marks
/// single precision. Lines that do not parse are skipped. When a name is
/// assigned twice within one step the first value is kept.
pub fn parse_counterexample(raw: &str) -> Result<Counterexample, BmcError> {
    let mut steps: BTreeMap<usize, BTreeMap<String, TypedValue>> = BTreeMap::new();
    let mut current: Option<usize> = None;
    let mut failed_assertion = String::new();
    let mut in_violation = false;
    let mut violation_lines: Vec<&str> = Vec::new();

    for line in raw.lines() {
        if let Some(c) = state_header().captures(line) {
            in_violation = false;
            let k = c
                .get(1)
                .and_then(|m| m.as_str().parse().ok())
                .or(current)
                .unwrap_or(0);
            steps.entry(k).or_default();
            current = Some(k);
            continue;
        }
        if line.trim_start().starts_with("Violated property:") {
            in_violation = true;
            current = None;
            continue;
        }
        if in_violation {
            if line.trim().is_empty() {
                if !violation_lines.is_empty() {
                    in_violation = false;
                }
            } else {
                violation_lines.push(line.trim());
            }
            continue;
        }
        let Some(k) = current else { continue };
        if line.trim().is_empty() || line.trim_start().starts_with("---") {
            continue;
        }
        if let Some(c) = assignment_line().captures(line) {
            let bits = c.get(3).map(|m| m.as_str());
            if let Some(v) = parse_value(&c[2], bits) {
                // first value within a step is the one chosen before the call
                steps.get_mut(&k).unwrap().entry(c[1].to_string()).or_insert(v);
            }
        }
    }
    if let Some(a) = violation_lines.iter().find_map(|l| l.strip_prefix("assertion ")) {
        failed_assertion = a.trim().to_string();
    } else if let Some(last) = violation_lines.last() {
        failed_assertion = last.to_string();
    }
    if steps.is_empty() {
        return Err(BmcError::NoStatesFound);
    }
    Ok(Counterexample {
        failed_assertion,
        steps: steps
            .into_values()
            .enumerate()
            .map(|(i, assignments)| TraceStep {
                step_index: i,
                assignments,
            })
            .collect(),
        raw_trace: raw.to_string(),
    })
}

/// Reads one trace value. Float bit patterns win over the decimal text.
pub fn parse_value(text: &str, bits: Option<&str>) -> Option<TypedValue> {
    let t = text.trim();
    let bits: Option<String> = bits.map(|b| b.chars().filter(|c| !c.is_whitespace()).collect());
    let bits = bits.filter(|b| b.len() == 32 || b.len() == 64);
    match t {
        "true" | "TRUE" => return Some(int_like(ValueKind::Bool, 1.0)),
        "false" | "FALSE" => return Some(int_like(ValueKind::Bool, 0.0)),
        _ => {}
    }
    if let Some(i) = parse_int(t) {
        return Some(int_like(ValueKind::Int, i as f64));
    }
    let (body, single) = match t.strip_suffix(['f', 'F']) {
        Some(b) if !b.ends_with(['x', 'X']) => (b, true),
        _ => (t, false),
    };
    let parsed: Option<f64> = match body.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        "nan" | "+nan" | "-nan" => Some(f64::NAN),
        s => s.parse::<f64>().ok(),
    };
    match bits.as_deref() {
        Some(b) if b.len() == 32 && (single || parsed.is_some()) => {
            let raw = u32::from_str_radix(b, 2).ok()?;
            Some(TypedValue {
                kind: ValueKind::Float32,
                value: f32::from_bits(raw) as f64,
                bit_pattern: Some(format!("{raw:#010x}")),
            })
        }
        Some(b) if b.len() == 64 && parsed.is_some() => {
            let raw = u64::from_str_radix(b, 2).ok()?;
            Some(TypedValue {
                kind: ValueKind::Float64,
                value: f64::from_bits(raw),
                bit_pattern: Some(format!("{raw:#018x}")),
            })
        }
        _ => {
            let v = parsed?;
            Some(if single {
                let f = v as f32;
                TypedValue {
                    kind: ValueKind::Float32,
                    value: f as f64,
                    bit_pattern: Some(format!("{:#010x}", f.to_bits())),
                }
            } else {
                TypedValue {
                    kind: ValueKind::Float64,
                    value: v,
                    bit_pattern: Some(format!("{:#018x}", v.to_bits())),
                }
            })
        }
    }
}

fn int_like(kind: ValueKind, value: f64) -> TypedValue {
    TypedValue {
        kind,
        value,
        bit_pattern: None,
    }
}

fn parse_int(t: &str) -> Option<i64> {
    let body = t.trim_end_matches(['u', 'U', 'l', 'L']);
    let (neg, digits) = match body.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, body.strip_prefix('+').unwrap_or(body)),
    };
    let v = if let Some(h) = digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        i64::from_str_radix(h, 16).ok()?
    } else if !digits.is_empty() && digits.bytes().all(|c| c.is_ascii_digit()) {
        digits.parse().ok()?
    } else {
        return None;
    };
    Some(if neg { -v } else { v })
}
