//! Reasoning-trace data model and JSONL ingestion.
//!
//! One JSON object per line. Token scores are stored on disk as natural-log
//! probabilities under `token_logprobs`; a plain `token_probs` array is also
//! accepted on input and converted on load. Keys the model does not know are
//! kept in `extra` maps and written back unchanged.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Smallest probability kept after clamping; keeps `p ln p` finite.
pub const MIN_PROB: f64 = 1e-300;

/// Tolerance on the sum of per-token alternative probabilities.
const TOPK_MASS_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub steps: Vec<Step>,
    #[serde(default, skip_serializing_if = "Annotations::is_empty")]
    pub meta: Annotations,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: i64,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    /// Per-token alternatives as `(token, logprob)` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk_logprobs: Option<Vec<Vec<(String, f64)>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_label: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Step {
    pub fn new(index: i64, text: impl Into<String>) -> Self {
        Step {
            index,
            text: text.into(),
            token_logprobs: None,
            topk_logprobs: None,
            error_label: None,
            extra: Map::new(),
        }
    }

    pub fn is_scored(&self) -> bool {
        self.token_logprobs.is_some()
    }

    /// Token probabilities `exp(logprob)`, if scored.
    pub fn token_probs(&self) -> Option<Vec<f64>> {
        self.token_logprobs
            .as_ref()
            .map(|lps| lps.iter().map(|lp| lp.exp()).collect())
    }

    /// Per-token alternative probabilities, if present.
    pub fn topk_probs(&self) -> Option<Vec<Vec<f64>>> {
        self.topk_logprobs.as_ref().map(|rows| {
            rows.iter()
                .map(|alts| alts.iter().map(|(_, lp)| lp.exp()).collect())
                .collect()
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningType {
    Deductive,
    Inductive,
    Abductive,
    #[default]
    None,
}

impl ReasoningType {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasoningType::Deductive => "deductive",
            ReasoningType::Inductive => "inductive",
            ReasoningType::Abductive => "abductive",
            ReasoningType::None => "none",
        }
    }

    fn is_none(&self) -> bool {
        *self == ReasoningType::None
    }
}

/// A cohort attribute value: either a number (trait score) or a label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CohortValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for CohortValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CohortValue::Number(x) => write!(f, "{x}"),
            CohortValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    #[serde(default, skip_serializing_if = "ReasoningType::is_none")]
    pub reasoning_type: ReasoningType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correctness: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cohort: BTreeMap<String, CohortValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Annotations {
    fn is_empty(&self) -> bool {
        self == &Annotations::default()
    }
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_scored(&self) -> bool {
        self.steps.iter().all(Step::is_scored)
    }

    /// Correctness of step at 0-based position `pos`, if annotated.
    pub fn step_correct(&self, pos: usize) -> Option<bool> {
        self.meta.correctness.as_ref().and_then(|c| c.get(pos).copied())
    }

    /// Looks up an annotation attribute by key. `reasoning_type` and `source`
    /// resolve to their dedicated fields; anything else is a cohort key.
    pub fn attribute(&self, key: &str) -> Option<CohortValue> {
        match key {
            "reasoning_type" => Some(CohortValue::Text(self.meta.reasoning_type.as_str().to_string())),
            "source" => self.meta.source.clone().map(CohortValue::Text),
            _ => self.meta.cohort.get(key).cloned(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaMode {
    Strict,
    Lenient,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub step: Option<i64>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(s) => write!(f, "{} (step {}): {}", self.field, s, self.rule),
            None => write!(f, "{}: {}", self.field, self.rule),
        }
    }
}

fn violation(field: &str, step: Option<i64>, rule: impl Into<String>) -> Violation {
    Violation {
        field: field.to_string(),
        step,
        rule: rule.into(),
    }
}

/// Checks every structural invariant of a trace. Returns an empty list iff
/// the trace is well formed.
pub fn validate_trace(trace: &Trace) -> Vec<Violation> {
    let mut out = Vec::new();
    if trace.id.is_empty() {
        out.push(violation("id", None, "empty id"));
    }
    if trace.steps.is_empty() {
        out.push(violation("steps", None, "empty steps array"));
    }
    let mut prev: i64 = 0;
    for step in &trace.steps {
        if step.index != prev + 1 {
            out.push(violation(
                "index",
                Some(step.index),
                format!("non-contiguous step index at {}", step.index),
            ));
        }
        prev = step.index;

        if let Some(lps) = &step.token_logprobs {
            if lps.is_empty() {
                out.push(violation("token_logprobs", Some(step.index), "empty token list"));
            }
            if lps.iter().any(|lp| !lp.is_finite() || *lp > 0.0) {
                out.push(violation(
                    "token_logprobs",
                    Some(step.index),
                    "probability out of range",
                ));
            }
        }
        if let Some(rows) = &step.topk_logprobs {
            if let Some(lps) = &step.token_logprobs {
                if rows.len() != lps.len() {
                    out.push(violation(
                        "topk_logprobs",
                        Some(step.index),
                        format!("{} alternative rows for {} tokens", rows.len(), lps.len()),
                    ));
                }
            }
            for (k, alts) in rows.iter().enumerate() {
                if alts.iter().any(|(_, lp)| !lp.is_finite() || *lp > 0.0) {
                    out.push(violation(
                        "topk_logprobs",
                        Some(step.index),
                        format!("token {k}: alternative probability out of range"),
                    ));
                    continue;
                }
                let mass: f64 = alts.iter().map(|(_, lp)| lp.exp()).sum();
                if mass > 1.0 + TOPK_MASS_TOL {
                    out.push(violation(
                        "topk_logprobs",
                        Some(step.index),
                        format!("token {k}: alternative mass {mass} exceeds 1"),
                    ));
                }
            }
        }
    }
    if let Some(c) = &trace.meta.correctness {
        if c.len() != trace.steps.len() {
            out.push(violation(
                "meta.correctness",
                None,
                format!("length {} does not match {} steps", c.len(), trace.steps.len()),
            ));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

/// Result of loading a corpus file.
#[derive(Clone, Debug, Default)]
pub struct LoadedCorpus {
    pub traces: Vec<Trace>,
    pub skipped: Vec<SkippedLine>,
    /// Total physical lines read (accepted + skipped).
    pub lines: usize,
    /// Probabilities raised to [`MIN_PROB`].
    pub clamped: usize,
}

/// Loads a JSONL corpus. In strict mode the first problem aborts; in lenient
/// mode offending lines (including blank ones) are skipped and reported.
pub fn load_corpus(path: &Path, mode: SchemaMode) -> Result<LoadedCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), mode).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Reader-based variant of [`load_corpus`].
pub fn read_corpus<R: BufRead>(reader: R, mode: SchemaMode) -> Result<LoadedCorpus> {
    let mut out = LoadedCorpus::default();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        out.lines += 1;
        if line.trim().is_empty() {
            out.skipped.push(SkippedLine {
                line: lineno,
                reason: "blank line".into(),
            });
            continue;
        }
        let parsed = parse_line(&line, lineno).and_then(|(trace, clamped)| {
            if let Some(&first) = seen.get(&trace.id) {
                return Err(Error::DuplicateId {
                    id: trace.id.clone(),
                    line: lineno,
                    first,
                });
            }
            Ok((trace, clamped))
        });
        match parsed {
            Ok((trace, clamped)) => {
                out.clamped += clamped;
                seen.insert(trace.id.clone(), lineno);
                out.traces.push(trace);
            }
            Err(e) => match mode {
                SchemaMode::Strict => return Err(e),
                SchemaMode::Lenient => {
                    log::warn!("skipping line {lineno}: {e}");
                    out.skipped.push(SkippedLine {
                        line: lineno,
                        reason: e.to_string(),
                    });
                }
            },
        }
    }
    Ok(out)
}

/// Parses one JSONL record, converting `token_probs` to log-probabilities and
/// clamping tiny probabilities. Returns the trace and the clamp count.
pub fn parse_line(line: &str, lineno: usize) -> Result<(Trace, usize)> {
    let mut value: Value = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
        line: lineno,
        message: e.to_string(),
    })?;
    let invalid = |message: String| Error::InvalidRecord { line: lineno, message };
    let obj = value
        .as_object_mut()
        .ok_or_else(|| invalid("record is not a JSON object".into()))?;
    let steps = obj
        .get_mut("steps")
        .and_then(Value::as_array_mut)
        .ok_or_else(|| invalid("missing steps array".into()))?;
    if steps.is_empty() {
        return Err(invalid("empty steps array".into()));
    }

    let mut clamped = 0;
    for step in steps.iter_mut() {
        let Some(step) = step.as_object_mut() else {
            return Err(invalid("step is not a JSON object".into()));
        };
        if let Some(probs) = step.remove("token_probs") {
            if step.contains_key("token_logprobs") {
                return Err(invalid("both token_probs and token_logprobs given".into()));
            }
            let probs: Vec<f64> = serde_json::from_value(probs).map_err(|e| invalid(format!("token_probs: {e}")))?;
            let mut lps = Vec::with_capacity(probs.len());
            for p in probs {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(invalid(format!("probability out of range: {p}")));
                }
                if p < MIN_PROB {
                    clamped += 1;
                }
                lps.push(p.max(MIN_PROB).ln());
            }
            step.insert("token_logprobs".into(), serde_json::to_value(lps)?);
        } else if let Some(lps) = step.get_mut("token_logprobs") {
            let mut vals: Vec<f64> =
                serde_json::from_value(lps.clone()).map_err(|e| invalid(format!("token_logprobs: {e}")))?;
            for lp in vals.iter_mut() {
                if lp.is_nan() || *lp > 0.0 {
                    return Err(invalid(format!("probability out of range: logprob {lp}")));
                }
                if *lp < MIN_PROB.ln() {
                    clamped += 1;
                    *lp = MIN_PROB.ln();
                }
            }
            *lps = serde_json::to_value(vals)?;
        }
    }
    if clamped > 0 {
        log::warn!("line {lineno}: {clamped} probabilities clamped to {MIN_PROB:e}");
    }

    let trace: Trace = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
    if let Some(v) = validate_trace(&trace).into_iter().next() {
        return Err(invalid(v.to_string()));
    }
    Ok((trace, clamped))
}

/// Writes traces as JSONL, one object per line.
pub fn write_corpus(path: &Path, traces: &[Trace]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus_to(&mut w, traces).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_corpus_to<W: Write>(w: &mut W, traces: &[Trace]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut *w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub total: usize,
    pub by_reasoning_type: BTreeMap<String, usize>,
    /// Per cohort key, counts of each observed value.
    pub by_cohort: BTreeMap<String, BTreeMap<String, usize>>,
    /// Step count -> number of traces.
    pub step_histogram: BTreeMap<usize, usize>,
    pub scored: usize,
}

pub fn corpus_summary(traces: &[Trace]) -> Result<CorpusSummary> {
    if traces.is_empty() {
        return Err(Error::Empty("corpus has no traces".into()));
    }
    let mut s = CorpusSummary {
        total: traces.len(),
        by_reasoning_type: BTreeMap::new(),
        by_cohort: BTreeMap::new(),
        step_histogram: BTreeMap::new(),
        scored: 0,
    };
    for t in traces {
        *s.by_reasoning_type
            .entry(t.meta.reasoning_type.as_str().to_string())
            .or_default() += 1;
        for (k, v) in &t.meta.cohort {
            *s.by_cohort
                .entry(k.clone())
                .or_default()
                .entry(v.to_string())
                .or_default() += 1;
        }
        *s.step_histogram.entry(t.steps.len()).or_default() += 1;
        if t.is_scored() {
            s.scored += 1;
        }
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterOp {
    Eq,
    Ne,
    Ge,
    Le,
    Gt,
    Lt,
}

/// A `key<op>value` predicate over trace annotations. Filters in a list are
/// combined conjunctively.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub key: String,
    pub op: FilterOp,
    pub value: String,
}

impl std::str::FromStr for Filter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // two-character operators first
        const OPS: [(&str, FilterOp); 6] = [
            (">=", FilterOp::Ge),
            ("<=", FilterOp::Le),
            ("!=", FilterOp::Ne),
            ("=", FilterOp::Eq),
            (">", FilterOp::Gt),
            ("<", FilterOp::Lt),
        ];
        for (tok, op) in OPS {
            if let Some(pos) = s.find(tok) {
                let key = s[..pos].trim();
                let value = s[pos + tok.len()..].trim();
                if key.is_empty() || value.is_empty() {
                    break;
                }
                if !matches!(op, FilterOp::Eq | FilterOp::Ne) && value.parse::<f64>().is_err() {
                    return Err(Error::invalid(format!("filter {s:?}: range bound is not numeric")));
                }
                return Ok(Filter {
                    key: key.to_string(),
                    op,
                    value: value.to_string(),
                });
            }
        }
        Err(Error::invalid(format!("filter {s:?}: expected key=value or key>=x")))
    }
}

impl Filter {
    pub fn matches(&self, trace: &Trace) -> bool {
        let Some(actual) = trace.attribute(&self.key) else {
            return false;
        };
        let num = |v: &CohortValue| match v {
            CohortValue::Number(x) => Some(*x),
            CohortValue::Text(s) => s.parse::<f64>().ok(),
        };
        match self.op {
            FilterOp::Eq | FilterOp::Ne => {
                let equal = match (num(&actual), self.value.parse::<f64>()) {
                    (Some(a), Ok(b)) => a == b,
                    _ => actual.to_string() == self.value,
                };
                equal == (self.op == FilterOp::Eq)
            }
            op => {
                let (Some(a), Ok(b)) = (num(&actual), self.value.parse::<f64>()) else {
                    return false;
                };
                match op {
                    FilterOp::Ge => a >= b,
                    FilterOp::Le => a <= b,
                    FilterOp::Gt => a > b,
                    FilterOp::Lt => a < b,
                    _ => unreachable!(),
                }
            }
        }
    }
}

pub fn matches_all(filters: &[Filter], trace: &Trace) -> bool {
    filters.iter().all(|f| f.matches(trace))
}
